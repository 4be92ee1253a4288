//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors, with the operations needed by 3D shifted-window transformers and
//! convolutional decoders.

pub mod archive;
pub mod attention;
pub mod conv;
mod elementwise;
pub mod gradcheck;
pub mod linalg;
pub mod optim;
pub mod param;
mod reduce;
pub mod shape;
mod tensor;

pub use archive::{Archive, ArchiveError, NamedArray};
pub use attention::{attention, attention_probs, RelativeBias, WindowMask};
pub use conv::conv3d;
pub use elementwise::sigmoid;
pub use linalg::linear;
pub use optim::{Adam, Direction, ReduceOnPlateau};
pub use param::{join, named_params, param_count, zero_grads, Init, Module, Param};
pub use reduce::softmax_in_place;
pub use shape::{concat, PadMode};
pub use tensor::{is_grad_enabled, needs_grad, no_grad, GradFn, Tensor};
