//! Differentiable building blocks: tensors, a recording tape, the layers the
//! value networks are made of, RMSProp, and the tensor archive format.

pub mod archive;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use archive::Archive;
pub use layers::{Dense, GruCell, HyperLinear};
pub use optim::{RmsProp, RmsPropConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, ParamGrads, Tape, Var};
pub use tensor::Tensor;
pub use gradcheck::{check_gradients, GradCheck};
