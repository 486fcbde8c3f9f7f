//! Numerical laboratory for magnetic flows on negatively curved surfaces.
//!
//! A surface is presented as the upper half-plane with a conformal metric
//! `e^{2 rho} (dx^2 + dy^2)`, where `rho = -ln y` plus an optional compactly
//! supported perturbation, together with a scalar magnetic field `kappa`.
//! Unit-speed magnetic orbits solve `D c'/dt = kappa N(c')` with `N` the
//! quarter-turn rotation. Around this flow the crate builds, layer by layer:
//!
//! * chart geometry: curvature, rotation, parallel transport, distances
//!   ([`model`], [`chart`], [`field`], [`transport`]);
//! * the flow itself and Jacobi fields along it ([`flow`], [`ode`]);
//! * asymptotic structure: boundary data, stable Riccati solutions, decay
//!   profiles, Busemann functions ([`boundary`], [`riccati`], [`busemann`]);
//! * stable horocycles, transfer maps between asymptotic vectors, and the
//!   stable linearization with its derivative ([`horocycle`], [`transfer`],
//!   [`linearize`]);
//! * cyclic quotients, periodic orbits and their Lyapunov data
//!   ([`quotient`]);
//! * a deterministic verification suite covering the headline identities
//!   ([`verify`]).
//!
//! Batch helpers in [`batch`] run on a rayon pool when the `parallel`
//! feature (default) is enabled and fall back to sequential iteration
//! otherwise; numerical results are identical either way.

pub mod batch;
pub mod boundary;
pub mod busemann;
pub mod chart;
pub mod error;
pub mod field;
pub mod flow;
pub mod fmt;
pub mod geodesic;
pub mod horocycle;
pub mod linearize;
pub mod model;
pub mod ode;
pub mod quad;
pub mod quotient;
pub mod riccati;
pub mod rootfind;
pub mod transfer;
pub mod transport;
pub mod verify;

pub use chart::{ChartPoint, Mobius, TangentVector, UnitVector};
pub use error::Error;
pub use model::{ModelBounds, ModelSpec, SurfaceModel};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
