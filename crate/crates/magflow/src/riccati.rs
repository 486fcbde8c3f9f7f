//! Stable and unstable infinitesimal data along orbits: the Riccati
//! contraction ratios `u_±`, the decay profiles `y_±`, and the tangential
//! leaf components `w_±`.
//!
//! Everything comes from two seeded sweeps of the augmented system
//! `u' = -u² - q`, `ζ' = u`, `W' = κ - u·W` along a leaf-anchored spine: the
//! stable sweep runs backward from beyond the horizon (where exponential
//! attraction has washed out the seed), the unstable sweep runs forward from
//! before it.  `ζ` accumulates `∫u`, so `y = e^{ζ-ζ(0)}`; `W` solves the
//! linear equation whose fixed trajectory is the tangential component of the
//! leaf, contracted in the same direction as `u` itself.

use serde::{Deserialize, Serialize};

use crate::boundary::{endpoint_reanchor, Spine, SPINE_CHUNK};
use crate::chart::UnitVector;
use crate::error::Error;
use crate::model::SurfaceModel;
use crate::ode::{integrate, OdeOptions, Solution};
use crate::Result;

/// Pointwise stable/unstable data of one unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StabilityData {
    /// Stable contraction ratio (`y'/y` of the decaying orthogonal solution).
    pub u_minus: f64,
    /// Unstable expansion ratio.
    pub u_plus: f64,
    /// Tangential component of the stable leaf direction.
    pub w_minus: f64,
    /// Tangential component of the unstable leaf direction.
    pub w_plus: f64,
    /// Sweep horizon used beyond the requested span.
    pub horizon: f64,
    /// A-priori bound on seed washout, tail truncation, and sweep error.
    pub error_estimate: f64,
}

/// Dense stable/unstable profiles along the orbit of a base vector, valid on
/// the flow-time span `[0, t_span]`.
pub struct StabilityProfiles {
    t_span: f64,
    tail: f64,
    fwd: Spine,
    bwd: Spine,
    minus: Solution<3>,
    plus: Solution<3>,
    zeta0_minus: f64,
    zeta0_plus: f64,
    error_estimate: f64,
}

impl StabilityProfiles {
    /// Computes profiles for the orbit of `v` over `[0, t_span]` with target
    /// accuracy `tol`; `opts` controls the underlying flow integrations.
    pub fn compute(
        model: &SurfaceModel,
        v: &UnitVector,
        t_span: f64,
        tol: f64,
        opts: &OdeOptions,
    ) -> Result<Self> {
        Self::compute_seeded(model, v, t_span, tol, opts, None)
    }

    /// Same, with an explicit seed magnitude for both sweeps (the default is
    /// `q1`; by exponential attraction the result is seed-independent to
    /// `tol`, which the tests exercise with a `q0` seed).
    pub(crate) fn compute_seeded(
        model: &SurfaceModel,
        v: &UnitVector,
        t_span: f64,
        tol: f64,
        opts: &OdeOptions,
        seed: Option<f64>,
    ) -> Result<Self> {
        assert!(t_span >= 0.0 && t_span.is_finite());
        assert!(tol > 0.0);
        let b = *model.bounds();
        let t_r = b.riccati_horizon(tol);
        let t_w = if b.kappa_sup > 0.0 {
            (2.0 * b.kappa_sup / (b.q1 * tol)).ln().max(0.0) / b.q1
        } else {
            0.0
        };
        let tail = t_r.max(t_w);
        let hi = t_span + tail;

        let mut fwd = Spine::new(v, SPINE_CHUNK);
        fwd.ensure(model, hi, opts, &mut endpoint_reanchor(false, opts.clone()))?;
        let mut bwd = Spine::new(v, -SPINE_CHUNK);
        bwd.ensure(model, -tail, opts, &mut endpoint_reanchor(true, opts.clone()))?;

        let sweep_opts = OdeOptions {
            rtol: (tol * 1e-3).clamp(1e-13, 1e-11),
            atol: 1e-13,
            dense: true,
            ..*opts
        };
        let seed_mag = seed.unwrap_or(b.q1);
        let mut rhs = |t: f64, s: &[f64; 3]| -> Result<[f64; 3]> {
            let (q, k) = if t >= 0.0 {
                (fwd.q_at(model, t), fwd.kappa_at(model, t))
            } else {
                (bwd.q_at(model, t), bwd.kappa_at(model, t))
            };
            Ok([-s[0] * s[0] - q, s[0], k - s[0] * s[2]])
        };
        let minus = integrate(&mut rhs, hi, [-seed_mag, 0.0, 0.0], -tail, &sweep_opts)?;
        let plus = integrate(&mut rhs, -tail, [seed_mag, 0.0, 0.0], t_span, &sweep_opts)?;
        let zeta0_minus = minus.eval(0.0)[1];
        let zeta0_plus = plus.eval(0.0)[1];

        let error_estimate = (b.q0 - b.q1) * (-2.0 * b.q1 * tail).exp()
            + b.kappa_sup / b.q1 * (-b.q1 * tail).exp()
            + 100.0 * sweep_opts.rtol
            + 10.0 * (fwd.max_correction() + bwd.max_correction());

        let out = StabilityProfiles {
            t_span,
            tail,
            fwd,
            bwd,
            minus,
            plus,
            zeta0_minus,
            zeta0_plus,
            error_estimate,
        };
        out.validate(&b)?;
        Ok(out)
    }

    /// The computed ratios must sit inside the certified pinching band; a
    /// violation means the model bounds (or the sweep) cannot be trusted.
    fn validate(&self, b: &crate::model::ModelBounds) -> Result<()> {
        let slack = 1e-4 + 10.0 * self.error_estimate;
        for t in [0.0, 0.5 * self.t_span, self.t_span] {
            let um = self.u_minus(t);
            if !(-b.q0 - slack..=-b.q1 + slack).contains(&um) {
                return Err(Error::NoConvergence {
                    what: "stable ratio left the certified pinching band",
                    residual: um,
                });
            }
            let up = self.u_plus(t);
            if !(b.q1 - slack..=b.q0 + slack).contains(&up) {
                return Err(Error::NoConvergence {
                    what: "unstable ratio left the certified pinching band",
                    residual: up,
                });
            }
        }
        Ok(())
    }

    pub fn t_span(&self) -> f64 {
        self.t_span
    }

    /// Sweep horizon used beyond the span.
    pub fn horizon(&self) -> f64 {
        self.tail
    }

    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    /// Stable contraction ratio at flow time `t ∈ [0, t_span]`.
    pub fn u_minus(&self, t: f64) -> f64 {
        self.minus.eval(t)[0]
    }

    /// Unstable expansion ratio at flow time `t`.
    pub fn u_plus(&self, t: f64) -> f64 {
        self.plus.eval(t)[0]
    }

    /// `∫₀ᵗ u_-`, the log of the stable decay profile. Valid on the whole
    /// sweep range, settling tails included, so `t` may be negative.
    pub fn z_minus(&self, t: f64) -> f64 {
        self.minus.eval(t)[1] - self.zeta0_minus
    }

    /// `∫₀ᵗ u_+`.
    pub fn z_plus(&self, t: f64) -> f64 {
        self.plus.eval(t)[1] - self.zeta0_plus
    }

    /// Stable decay profile `y_-(t)`, normalized to `1` at `t = 0`.
    pub fn y_minus(&self, t: f64) -> f64 {
        self.z_minus(t).exp()
    }

    /// Unstable growth profile `y_+(t)`, normalized to `1` at `t = 0`.
    pub fn y_plus(&self, t: f64) -> f64 {
        self.z_plus(t).exp()
    }

    /// Tangential component of the stable leaf at flow time `t`.
    pub fn w_minus(&self, t: f64) -> f64 {
        self.minus.eval(t)[2]
    }

    /// Tangential component of the unstable leaf at flow time `t`.
    pub fn w_plus(&self, t: f64) -> f64 {
        self.plus.eval(t)[2]
    }

    /// Orbit state at flow time `t ∈ [-horizon, t_span + horizon]`.
    pub fn unit_at(&self, t: f64) -> UnitVector {
        if t >= 0.0 {
            self.fwd.unit_at(t)
        } else {
            self.bwd.unit_at(t)
        }
    }

    /// Field value along the orbit.
    pub fn kappa_at(&self, model: &SurfaceModel, t: f64) -> f64 {
        if t >= 0.0 {
            self.fwd.kappa_at(model, t)
        } else {
            self.bwd.kappa_at(model, t)
        }
    }

    /// Pointwise data at the base vector.
    pub fn data(&self) -> StabilityData {
        StabilityData {
            u_minus: self.u_minus(0.0),
            u_plus: self.u_plus(0.0),
            w_minus: self.w_minus(0.0),
            w_plus: self.w_plus(0.0),
            horizon: self.tail,
            error_estimate: self.error_estimate,
        }
    }
}

/// Stable/unstable data of a single unit vector to accuracy `tol`.
pub fn stable_riccati(
    model: &SurfaceModel,
    v: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<StabilityData> {
    StabilityProfiles::compute(model, v, 0.0, tol, opts).map(|p| p.data())
}
