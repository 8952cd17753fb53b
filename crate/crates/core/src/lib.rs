//! Monotone finite-volume schemes for nonlocal conservation laws
//!
//! ```text
//! u_t + ( f(s(x) u) nu(mu * nu_bar(u)) )_x = 0
//! ```
//!
//! with a coefficient `s` of bounded variation, a compactly supported kernel
//! `mu` and a Lax-Friedrichs or Godunov type numerical flux.

pub mod cli_io;
pub mod convolution;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod mesh;
pub mod model;
pub mod scheme;

pub use error::{Error, Result};
pub use mesh::{CellField, FaceField, Grid, NormKind};
pub use model::{FluxSpec, KernelSpec, ModelSpec, NuBarSpec, RoughCoefficient, VelocitySpec};
pub use scheme::{run, FluxKind, RunOptions, RunState, SchemeConfig};
