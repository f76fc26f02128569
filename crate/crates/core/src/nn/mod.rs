//! A minimal reverse-mode autodiff stack for 1D grouped convolutions over
//! histogram banks, and the distribution compressor built on it.

mod adam;
mod graph;
mod model;
pub mod ops;
mod tensor;
mod train;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use model::{
    count_params, round_q, DistNet, LayerSpec, NetOutputs, Param, QMode, Side, TransformConfig, INPUT_NLL_CLIP, Q_DOWNSCALE, Q_MAX,
    Q_MIN,
};
pub use ops::ConvGeom;
pub use tensor::Tensor;
pub use train::{lambda_q, LossComponents, Plateau, StepLog, TrainConfig, TrainExample, TrainSummary, Trainer, uniform_noise};
