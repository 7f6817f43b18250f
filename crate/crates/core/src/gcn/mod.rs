//! The learnable link predictor: graph convolutions over instance pivot
//! subgraphs, a per-node two-class head, hand-written backpropagation and a
//! momentum SGD trainer.

mod aggregate;
mod checkpoint;
mod model;
mod toy;
mod train;

pub use aggregate::{
    aggregate_attention, aggregate_mean, aggregate_mean_row, aggregate_weighted, Aggregation,
    AttentionMlp,
};
pub use checkpoint::{load_model, save_model};
pub use model::{
    batch_loss, batch_loss_and_grads, forward, gconv_forward, loss_and_grads, Aggregator,
    ConvLayer, ForwardPass, GcnConfig, GcnModel, GraphBatch, Prediction,
};
pub use toy::{toy2d_trace, write_trace_csv, ToyConfig, TraceRecord};
pub use train::{train, train_with_neighbors, write_loss_csv, Sgd, TrainConfig, TrainOutcome};
