//! Mixture-density network: a small feed-forward network whose pose head
//! emits a Gaussian mixture over axis-angle poses, plus shape and category
//! heads, with an optional point-regression pose head as a baseline.

mod gmm;
mod network;
mod train;

pub use gmm::{
    gmm_log_pdf, gmm_pdf, gmm_sample, head_transform, mixture_head_len, pose_loss,
    variance_activation, GmmComponent, GmmParams, POSE_DIM,
};
pub use network::{
    forward, forward_features, forward_many, layer_layout, loss_gradient, mean_loss, preprocess,
    total_loss, HeadMode, LayerShape, NetworkConfig, NetworkWeights, PosePrediction,
    PredictionOutput, Target, TrainingSample,
};
pub use train::{train, train_with_progress, TrainOptions, TrainedModel};
