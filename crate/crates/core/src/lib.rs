//! Periodic roll waves of the viscous St. Venant equations.

pub mod bloch;
mod dop853_tableau;
pub mod error;
pub mod evans;
pub mod fourier;
mod linalg;
pub mod model;
pub mod ode;
pub mod simulate;
pub mod orbit;
pub mod whitham;

pub use error::{Error, Result};
pub use model::ModelParams;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/orbits.md")]
    mod orbits {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/whitham.md")]
    mod whitham {}
    #[doc = include_str!("../../../book/src/evans.md")]
    mod evans {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
