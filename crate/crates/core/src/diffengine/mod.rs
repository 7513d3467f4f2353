//! Differentiation: forward-mode spatial jets for PDE residuals, a reverse-mode tape for
//! parameter gradients, and the adjoint of the quasi-linear renderer.

mod adjoint;
mod gradcheck;
mod jet;
mod tape;

pub use adjoint::{bos_loss_and_grad, grad_pixel, render_pixel_quasilinear, DifferentiableEta};
pub use gradcheck::{richardson, richardson2, run_gradcheck, CheckResult};
pub use jet::{spatial_jet, Jet, SpatialJet};
pub use tape::{grad_params, gradient, replay, reset_tape, tape_len, Var};
