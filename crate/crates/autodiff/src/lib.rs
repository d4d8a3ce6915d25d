//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Backward rules are expressed with the same primitives as the forward
//! pass, so calling [`backward`] with `create_graph = true` yields
//! gradients that can themselves be differentiated. That is what a
//! gradient penalty such as `||∇ₓ D(x)||²` needs.
//!
//! ```
//! use scarcegan_autodiff::{backward, Array, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Array::scalar(3.0));
//! let y = x.square().unwrap();
//! let g = backward(&y, &[&x], true).unwrap();
//! assert_eq!(g[0].item(), 6.0);
//!
//! // Second derivative through the recorded backward pass.
//! let gg = backward(&g[0], &[&x], false).unwrap();
//! assert_eq!(gg[0].item(), 2.0);
//! ```

mod array;
mod conv;
mod error;
mod ops;
mod spatial;
mod tape;

pub use array::{numel, Array};
pub use conv::ConvGeom;
pub use error::{AutodiffError, Result};
pub use ops::DEFAULT_LEAKY_SLOPE;
pub use spatial::{avgpool2x, upsample2x, MapBatch, SpatialMap};
pub use tape::{backward, Tape, Tensor};
