//! The magnetic flow and its linearization.
//!
//! Unit tangent states are integrated in the chart coordinates
//! `(x, w, angle)` with `w = ln y`. The angle is the chart direction of the
//! velocity, so the state is exactly unit-speed by construction and no
//! renormalization is ever needed. The equations for the conformal factor
//! `e^{2 rho}`, `rho = -ln y + b` with compactly supported `b`, are
//!
//! ```text
//! x' = e^{w - b} cos(angle)
//! w' = e^{-b} sin(angle)
//! angle' = kappa - e^{-b} cos(angle) + e^{w - b} (-b_x sin(angle) + b_y cos(angle))
//! ```
//!
//! Orthogonal deviations evolve by the pair `xj' = kappa * yj`,
//! `yj'' = -q yj` with `q = K + kappa^2 - <N, grad kappa>`; the covariant
//! derivative of the deviation field `xj T + yj N` is `(yj' + kappa xj) N`.

use crate::chart::{wrap_angle, ChartPoint, UnitVector};
use crate::model::SurfaceModel;
use crate::ode::{integrate, OdeOptions, Solution};
use crate::Result;

/// Chart state `[x, w, angle]` of a unit vector, `w = ln y`.
pub type FlowState = [f64; 3];

pub fn state_of(v: &UnitVector) -> FlowState {
    [v.point.x, v.point.y.ln(), v.angle]
}

pub fn unit_of(s: &FlowState) -> UnitVector {
    UnitVector {
        point: ChartPoint::new(s[0], s[1].exp()),
        angle: wrap_angle(s[2]),
    }
}

/// Right-hand side of the magnetic flow at a chart state.
pub fn flow_rhs(model: &SurfaceModel, s: &FlowState) -> Result<FlowState> {
    rhs_with_field(model, s, true)
}

/// Right-hand side of the geodesic flow of the same metric (field off).
pub fn geodesic_rhs(model: &SurfaceModel, s: &FlowState) -> Result<FlowState> {
    rhs_with_field(model, s, false)
}

fn rhs_with_field(model: &SurfaceModel, s: &FlowState, with_kappa: bool) -> Result<FlowState> {
    let y = s[1].exp();
    if !y.is_finite() || y <= 0.0 {
        return Err(crate::Error::OutsideDomain { y });
    }
    let p = ChartPoint::new(s[0], y);
    let b = model.rho_pert_jet(p);
    let kappa = if with_kappa { model.kappa(p) } else { 0.0 };
    let (sin_a, cos_a) = s[2].sin_cos();
    let eb = (-b.v).exp();
    Ok([
        y * eb * cos_a,
        eb * sin_a,
        kappa - eb * cos_a + y * eb * (-b.dx * sin_a + b.dy * cos_a),
    ])
}

/// Advances a unit vector by flow time `t` (either sign).
pub fn flow_to(model: &SurfaceModel, v: &UnitVector, t: f64, opts: &OdeOptions) -> Result<UnitVector> {
    let sol = integrate(
        |_t, s: &FlowState| flow_rhs(model, s),
        0.0,
        state_of(v),
        t,
        &OdeOptions {
            dense: false,
            ..*opts
        },
    )?;
    Ok(unit_of(&sol.end()))
}

/// A flow orbit segment with a continuous extension, queryable at any
/// parameter inside its span.
#[derive(Debug, Clone)]
pub struct OrbitSegment {
    sol: Solution<3>,
}

impl OrbitSegment {
    /// Integrates the orbit of `v` over `[0, t]` (or `[t, 0]` if `t < 0`).
    pub fn compute(model: &SurfaceModel, v: &UnitVector, t: f64, opts: &OdeOptions) -> Result<Self> {
        let sol = integrate(
            |_t, s: &FlowState| flow_rhs(model, s),
            0.0,
            state_of(v),
            t,
            opts,
        )?;
        Ok(OrbitSegment { sol })
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn state_at(&self, t: f64) -> FlowState {
        self.sol.eval(t)
    }

    pub fn unit_at(&self, t: f64) -> UnitVector {
        unit_of(&self.state_at(t))
    }

    pub fn end(&self) -> UnitVector {
        unit_of(&self.sol.end())
    }

    /// Jacobi endomorphism along the orbit.
    pub fn q_at(&self, model: &SurfaceModel, t: f64) -> f64 {
        let s = self.state_at(t);
        model.q_at(ChartPoint::new(s[0], s[1].exp()), s[2])
    }

    /// Magnetic field along the orbit.
    pub fn kappa_at(&self, model: &SurfaceModel, t: f64) -> f64 {
        let s = self.state_at(t);
        model.kappa(ChartPoint::new(s[0], s[1].exp()))
    }

    pub fn accepted_times(&self) -> Vec<f64> {
        self.sol.nodes().iter().map(|n| n.t).collect()
    }
}

/// Joint state for the flow plus one orthogonal deviation:
/// `[x, w, angle, xj, yj, vj]` with `vj = yj'`.
pub type JacobiState = [f64; 6];

fn jacobi_rhs(model: &SurfaceModel, s: &JacobiState) -> Result<JacobiState> {
    let base = [s[0], s[1], s[2]];
    let d = flow_rhs(model, &base)?;
    let p = ChartPoint::new(s[0], s[1].exp());
    let kappa = model.kappa(p);
    let q = model.q_at(p, s[2]);
    Ok([d[0], d[1], d[2], kappa * s[4], s[5], -q * s[4]])
}

/// A deviation field along an orbit, in the moving frame `(T, N)`:
/// components `(xj, yj)` and derivative data.
#[derive(Debug, Clone)]
pub struct JacobiTrack {
    sol: Solution<6>,
}

impl JacobiTrack {
    /// Integrates the deviation with initial frame data
    /// `(xj, yj, yj')(0) = init` along the orbit of `v` up to time `t`.
    pub fn compute(
        model: &SurfaceModel,
        v: &UnitVector,
        init: [f64; 3],
        t: f64,
        opts: &OdeOptions,
    ) -> Result<Self> {
        let s0 = state_of(v);
        let joint = [s0[0], s0[1], s0[2], init[0], init[1], init[2]];
        let sol = integrate(
            |_t, s: &JacobiState| jacobi_rhs(model, s),
            0.0,
            joint,
            t,
            opts,
        )?;
        Ok(JacobiTrack { sol })
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    pub fn unit_at(&self, t: f64) -> UnitVector {
        let s = self.sol.eval(t);
        unit_of(&[s[0], s[1], s[2]])
    }

    /// `(xj, yj, yj')` at `t`.
    pub fn frame_at(&self, t: f64) -> [f64; 3] {
        let s = self.sol.eval(t);
        [s[3], s[4], s[5]]
    }

    /// Norm of the deviation field: `sqrt(xj^2 + yj^2)`.
    pub fn norm_at(&self, t: f64) -> f64 {
        let s = self.sol.eval(t);
        s[3].hypot(s[4])
    }

    /// Norm of its covariant derivative: `|yj' + kappa xj|`.
    pub fn deriv_norm_at(&self, model: &SurfaceModel, t: f64) -> f64 {
        let s = self.sol.eval(t);
        let kappa = model.kappa(ChartPoint::new(s[0], s[1].exp()));
        (s[5] + kappa * s[3]).abs()
    }
}

/// Wronskian of two orthogonal-deviation components: `y1 y2' - y1' y2`.
/// Constant along any orbit.
pub fn wronskian(y1: f64, dy1: f64, y2: f64, dy2: f64) -> f64 {
    y1 * dy2 - dy1 * y2
}
