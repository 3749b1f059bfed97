//! Small f64 tensor library with reverse-mode differentiation, the layers
//! needed by the super-resolution models, and the Adam optimizer.

mod backward;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
mod linalg;
pub mod ops;
pub mod optim;
pub mod params;
pub mod session;
pub mod srwt;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use init::ParamBuilder;
pub use ops::activation::{sigmoid, softplus};
pub use optim::Adam;
pub use params::{Param, ParamKind, ParamSet};
pub use session::{Mode, Session};
pub use tensor::Tensor;
