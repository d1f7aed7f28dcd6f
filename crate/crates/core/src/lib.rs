//! Motion-compensated image reconstruction (MCIR) for gated tomography.
//!
//! The forward model for gate `i` is `d_i = A D_i x + e_i`, where `A` is a
//! parallel-beam ray transform and `D_i` a linear warp carrying the reference
//! image to motion state `i`. The reference image is recovered by minimising
//! `alpha ||x||^2 + sum_i N^-1 ||A D_i x - d_i||^2`, either with deterministic
//! PDHG (all gates per iteration) or SPDHG (one random gate per iteration).
//!
//! Module map:
//! - [`linops`]: operator contract, composition, stacking, power iteration
//! - [`projector`]: ray transform and its matched backprojector
//! - [`motion`]: rigid and dilatation warps
//! - [`functionals`]: prox maps, conjugates, objective
//! - [`solvers`]: PDHG / SPDHG, step sizes, gate sampling, CG reference
//! - [`theory`]: linear-rate formulas and the dominance check
//! - [`simulate`]: phantoms, gated datasets, presets
//! - [`analysis`]: convergence records, rate fitting, image metrics
//! - [`io`]: raster, PGM, manifest and CSV formats
//! - [`pipeline`]: dataset plus target condition number to a solvable problem

pub mod analysis;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod linops;
pub mod motion;
pub mod pipeline;
pub mod projector;
pub mod simulate;
mod sparse;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};
pub use grid::{Grid, Image, Shape, Sinogram};
pub use linops::{LinearMap, Op};
