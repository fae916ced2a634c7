//! Synthetic monocular depth experiment: a pinhole camera over a flat road,
//! procedurally rendered appearance features and a small dense detector.

pub mod camera;
pub mod dataset;
pub mod eval;
pub mod loss;
pub mod model;
pub mod scene;
pub mod train;

pub use camera::CameraModel;
pub use scene::{generate_scene, render, Box2D, ObjectClass, RenderedFrame, SceneConfig, SceneObject};
pub use model::{ModelShape, ToyModel, Variant};
pub use dataset::Dataset;
pub use train::{init_model, train_toy, TrainConfig, TrainOutcome};
pub use eval::{eval_toy, OraclePredictor, Predictor, ToyReport};
