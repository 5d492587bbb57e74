//! Numerical toolkit for nonlocal (fractional) capillarity problems.
//!
//! Sets live either on a uniform cubical grid ([`GridSet`]) or as analytic
//! descriptions ([`Region`]). The fractional interaction between disjoint
//! sets, the capillarity and perimeter energies built from it, the
//! s-harmonic extension with its monotone boundary quantity, the
//! contact-angle law and a discrete energy minimizer are layered on top.

pub mod energies;
pub mod error;
pub mod extension;
pub mod geometry;
pub mod interaction;
pub mod kernel;
pub mod minimizer;
pub mod quad;
pub mod rays;
pub mod younglaw;

pub use error::{Error, Result};
pub use geometry::{GridSet, Region, Window};
pub use interaction::{InteractionResult, KernelParams, QuadratureConfig};
