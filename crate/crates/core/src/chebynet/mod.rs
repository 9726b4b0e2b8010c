//! Chebyshev spectral graph convolution and the GR-GCN network built on it,
//! with hand-written reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod chebyshev;
pub mod layers;
pub mod model;
pub mod train;

pub use adam::{AdamConfig, AdamState, LrSchedule, DEFAULT_LR};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointConfig, TensorRecord, CHECKPOINT_VERSION};
pub use chebyshev::{
    chebyshev_basis, graph_conv_backward, graph_conv_forward, ChebyLayerParams, ChebyMode, ChebyOperator, MixingSide,
};
pub use layers::{
    batch_norm, batch_norm_backward, cross_entropy_loss, dropout, pool_and_classify, pool_features, softmax,
    temporal_conv2d, temporal_conv2d_backward, BatchNormParams, LinearParams, Mode, RunningStats,
    TemporalConvParams, BN_EPS, BN_MOMENTUM,
};
pub use model::{forward_full, BasicLayer, ForwardTrace, GrGcn, GrGcnParams, NetworkConfig, NormBuffers, Sample};
pub use train::{argmax, predict_all, train, EpochStats, TrainConfig, TrainState};
