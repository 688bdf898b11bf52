//! Differentiation machinery: a reverse-mode tape over dense matrices,
//! Taylor jets for higher derivatives of network maps, and forward-mode duals.

pub mod dual;
pub mod jet;
pub mod real;
pub mod tape;

pub use dual::Dual;
pub use jet::{Jet, JetSpec, MultiIndex};
pub use real::{Mat, Real};
pub use tape::{Grads, Tape, Tensor, Var};
