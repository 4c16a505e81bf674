//! Numerical laboratory for observational overfitting in linear-quadratic control.
//!
//! * [`mat`]: seeded sampling, Lyapunov solves, pseudoinverse and norms.
//! * [`lqr`]: exact infinite-horizon LQR cost and policy gradient.
//! * [`obs`]: level families observing the state through `[W_c; W_theta]`.
//! * [`policy`]: layered linear policies and a gradient-descent trainer.
//! * [`one_step`]: closed-form one-step LQR theory and its Monte-Carlo check.
//! * [`measures`]: weight-counting terms, norm products and margin distributions.
//! * [`experiment`]: configuration, sweeps and record output behind the `obslab` binary.

pub mod error;
pub mod experiment;
pub mod lqr;
pub mod mat;
pub mod measures;
pub mod obs;
pub mod one_step;
pub mod policy;

pub use error::{Error, Result};
pub use mat::{Mat, SeededRng};
