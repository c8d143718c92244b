//! Synthetic detection world, a linear dense detector and its training loop.

pub mod detect;
pub mod features;
pub mod model;
pub mod train;
pub mod world;

pub use detect::{detect, evaluate_model, ground_truth, EvalConfig};
pub use features::{extract_features, feature_dim, scene_features, FeatureMatrix};
pub use model::{backward, forward, ForwardOutput, HeadGrads, ModelParams, ModelSpec, Segment};
pub use train::{
    batch_objective, prepare_scenes, scene_assignment, train, train_from, DistillLoss, IterRecord, LossBreakdown,
    PreparedScene, TrainConfig, TrainOutcome, TrainStrategy,
};
pub use world::{generate_dataset, generate_scene, generate_scenes, Scene, WorldConfig};
