//! Spectral laboratory for eigenvalue extremality of Kähler metrics in real
//! dimension two, with exact tools for toric Kähler–Einstein manifolds.
//!
//! * [`surface`]: spectral models of spheres and flat tori and the conformal
//!   factor `1 - Δφ` of a potential.
//! * [`spectral`]: generalized eigenproblem `S v = λ M_σ v` and eigenvalue
//!   clusters.
//! * [`variation`]: the operator `L`, the first-variation (Hadamard) Gram
//!   matrix and finite-difference eigenvalue derivatives.
//! * [`certificate`]: trace-one PSD certificates `Σ B_ab L(f_a, f_b) = 0`.
//! * [`einstein`]: Kähler–Einstein identities and the exact toric test.
//! * [`flow`]: max-min ascent of `λ_1` over potentials.
//! * [`product`]: spectra and certificates on products.
//! * [`io`]: JSON descriptors and CSV export.

pub mod certificate;
pub mod einstein;
pub mod error;
pub mod flow;
pub mod io;
pub mod product;
pub mod spectral;
pub mod spectrahedron;
pub mod surface;
pub mod variation;

pub use error::{Error, Result};
pub use surface::{ConformalFactor, KahlerPotential, SurfaceKind, SurfaceModel};
