//! Column attention and bottom-up cumulative scan kernels for monocular 3D
//! detection, with the tooling needed to check them: a reverse-mode tape with
//! finite-difference checking, a synthetic pinhole-camera scene generator and
//! toy detector, rotated-box IoU / AP evaluation and a complexity benchmark.
//!
//! Feature maps are `H×W×C` with row 0 at the **bottom** of the image.

pub mod bench;
pub mod cca;
pub mod error;
pub mod feature;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod metrics;
pub mod ops;
pub mod par;
pub mod params;
pub mod posenc;
pub mod rrcs;
pub mod tensor;
pub mod toy3d;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use graph::{DiffGraph, Gradients, Var};
pub use tensor::Tensor;
