//! Discrete-ordinate solver for the polarized radiative transfer equation in
//! plane-parallel particulate layers.

pub mod boundary;
pub mod brdf;
pub mod error;
pub mod geometry;
pub mod homogeneous;
pub mod material;
pub mod particular;
pub mod phase;
pub mod quadrature;
pub mod reconstruction;
pub mod solver;
pub mod stokes;

pub use error::{Error, NumericalError, Result, ValidationError};
pub use geometry::{cos_scattering_angle, Direction};
pub use material::{validate_material, BaseReflector, BeamSource, LayerSpec, MaterialSpec};
pub use quadrature::{build_double_gauss_quadrature, Quadrature};
pub use brdf::{compute_brdf, default_basis, directional_hemispherical_reflectance, BrdfRequest, BrdfTable};
pub use reconstruction::RadianceField;
pub use solver::{compute_radiance, solve_incidence, solve_vrte, Executor, HomogeneousState, RadianceRequest, StepTimings};
pub use stokes::{MuellerMatrix, StokesVector};
