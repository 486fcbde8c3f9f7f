//! Periodic orbits on cyclic quotients and their contraction data.
//!
//! A cyclic quotient is the half-plane modulo one hyperbolic isometry — here
//! always the dilation `z -> e^l z`, whose axis is the vertical line through
//! the origin and whose translation length is `l`.  Models live on the cover;
//! the constructor checks by sampling that both fields actually descend.  A
//! closed orbit of the flow downstairs is a flow segment upstairs whose
//! endpoint is the generator image of its start, found by shooting over the
//! signed distance from the axis, the crossing tilt, and the period.  The
//! contraction multiplier over a period, the per-length exponents it defines,
//! and the multiplier-scaling of the straightening transverse coordinate are
//! computed on top of that orbit.

use serde::{Deserialize, Serialize};

use crate::chart::{angle_diff, ChartPoint, Mobius, UnitVector};
use crate::error::Error;
use crate::field::{Bump, ScalarField};
use crate::flow::flow_to;
use crate::linearize::Linearizer;
use crate::model::{SurfaceModel, WorkingBox};
use crate::ode::OdeOptions;
use crate::riccati::StabilityProfiles;
use crate::Result;

/// Sampled invariance violation beyond this rejects a quotient model.
const INVARIANCE_TOL: f64 = 1e-10;
/// Iteration cap for the shooting Newton method.
const MAX_NEWTON: usize = 30;
/// Finite-difference step for the shooting Jacobian.
const SHOOT_FD: f64 = 1e-6;
/// Period-count cap when settling the contraction multiplier.
const MAX_PERIODS: usize = 10;

/// The half-plane modulo one dilation, carrying a descended model.
#[derive(Debug, Clone)]
pub struct CyclicQuotient {
    ell: f64,
    map: Mobius,
    model: SurfaceModel,
}

impl CyclicQuotient {
    /// Wraps a model over the dilation of translation length `ell`,
    /// validating by sampling that the metric perturbation and the field are
    /// invariant under the generator.
    pub fn new(model: SurfaceModel, ell: f64) -> Result<Self> {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::Config {
                msg: format!("translation length must be positive, got {ell}"),
            });
        }
        let map = Mobius::dilation(ell);
        let scale = ell.exp();
        let mut worst = 0.0f64;
        for i in 0..8 {
            for j in 0..7 {
                let r = ((i as f64 + 0.5) / 8.0 * ell).exp();
                let phi = -1.2 + 2.4 * j as f64 / 6.0;
                let p = ChartPoint::new(r * phi.sin(), r * phi.cos());
                let q = ChartPoint::new(scale * p.x, scale * p.y);
                let db = (model.rho_pert_field().value(q) - model.rho_pert_field().value(p)).abs();
                let dk = (model.kappa(q) - model.kappa(p)).abs();
                worst = worst.max(db).max(dk);
            }
        }
        if worst > INVARIANCE_TOL {
            return Err(Error::InvalidModel {
                msg: format!(
                    "fields are not invariant under the dilation: sampled violation {worst:.3e}"
                ),
            });
        }
        Ok(CyclicQuotient { ell, map, model })
    }

    /// Quotient with the unperturbed metric and a constant field.
    pub fn constant(kappa: f64, ell: f64) -> Result<Self> {
        Self::new(SurfaceModel::constant_kappa(kappa)?, ell)
    }

    /// Quotient with the unperturbed metric and a field given by a constant
    /// plus the dilation-periodization of one bump.
    pub fn periodized(
        base_kappa: f64,
        bump: Bump,
        ell: f64,
        chart_box: WorkingBox,
    ) -> Result<Self> {
        let kappa = ScalarField::Sum(vec![
            ScalarField::Constant(base_kappa),
            ScalarField::Periodized { inner: bump, ell },
        ]);
        Self::new(
            SurfaceModel::new(ScalarField::zero(), kappa, Some(chart_box))?,
            ell,
        )
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn model(&self) -> &SurfaceModel {
        &self.model
    }

    /// The generator as a chart isometry.
    pub fn map(&self) -> &Mobius {
        &self.map
    }

    /// Derivative action of the generator on unit vectors.
    pub fn translate_unit(&self, v: &UnitVector) -> UnitVector {
        self.map.push_unit(*v)
    }
}

/// A closed orbit of the quotient flow, as cover data.
///
/// The flow segment of length `period` from `v` ends at the generator image
/// of `v`; `offset` is the signed distance of the starting point from the
/// axis and `tilt` the crossing-angle deviation from the equidistant
/// direction at that offset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PeriodicOrbit {
    /// Starting vector on the section orthogonal to the axis.
    pub v: UnitVector,
    /// Flow time to close up through the generator.
    #[serde(rename = "T")]
    pub period: f64,
    /// Signed distance of the starting point from the axis.
    pub offset: f64,
    /// Crossing-angle deviation from the equidistant direction.
    pub tilt: f64,
    /// Backward-decay factor over one period.
    pub multiplier: f64,
    /// Per-length contraction exponent `ln(multiplier) / T`.
    pub lambda_minus: f64,
    /// Shooting residual at convergence.
    pub residual: f64,
}

impl PeriodicOrbit {
    /// Expansion exponent, the negative of the contraction exponent.
    pub fn lambda_plus(&self) -> f64 {
        -self.lambda_minus
    }
}

/// Unit vector crossing the section at signed axis-distance `d` with angle
/// deviation `alpha` from the equidistant direction.
///
/// The section is the geodesic orthogonal to the axis through (0, 1): the
/// unit semicircle.  The point at distance `d` is `(tanh d, sech d)` and the
/// equidistant direction there makes chart angle `pi/2 - arcsin(tanh d)`.
fn section_vector(d: f64, alpha: f64) -> UnitVector {
    let tanh_d = d.tanh();
    let phi = tanh_d.asin();
    UnitVector::new(
        tanh_d,
        1.0 / d.cosh(),
        std::f64::consts::FRAC_PI_2 - phi + alpha,
    )
}

/// Shooting residual: chart mismatch between the flowed section vector and
/// its generator image, with positions measured relative to the target
/// height so all three components are comparable.
fn shoot_residual(
    q: &CyclicQuotient,
    u: &[f64; 3],
    opts: &OdeOptions,
) -> Result<[f64; 3]> {
    let v = section_vector(u[0], u[1]);
    let end = flow_to(q.model(), &v, u[2], opts)?;
    let tgt = q.translate_unit(&v);
    let scale = 1.0 / tgt.point.y;
    Ok([
        scale * (end.point.x - tgt.point.x),
        scale * (end.point.y - tgt.point.y),
        angle_diff(end.angle, tgt.angle),
    ])
}

/// Solves a 3x3 linear system by elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut acc = b[col];
        for k in col + 1..3 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Finds the closed orbit of the quotient flow near the axis.
///
/// Newton iteration on the three-component closure residual over the signed
/// axis offset, the crossing tilt, and the period, seeded at the constant
/// field solution: offset `artanh(kappa)`, no tilt, period `l cosh(offset)`.
/// When the field has extra symmetry the tilt converges to zero and the
/// problem reduces to the two classical unknowns.
pub fn find_periodic_orbit(q: &CyclicQuotient, tol: f64, opts: &OdeOptions) -> Result<PeriodicOrbit> {
    let k_here = q.model().kappa(ChartPoint::new(0.0, 1.0));
    if !(k_here.abs() < 1.0) {
        return Err(Error::Precondition {
            msg: format!(
                "field strength {k_here:.4} at the marked point admits no nearby closed orbit \
                 (needs |kappa| < 1)"
            ),
        });
    }
    let d0 = k_here.clamp(-0.999, 0.999).atanh();
    let mut u = [d0, 0.0, q.ell() * d0.cosh()];
    let mut r = shoot_residual(q, &u, opts)?;
    let mut norm = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for _ in 0..MAX_NEWTON {
        if norm < tol {
            let (lambda_minus, _, multiplier) = period_contraction(q.model(), &section_vector(u[0], u[1]), u[2], tol, opts)?;
            return Ok(PeriodicOrbit {
                v: section_vector(u[0], u[1]),
                period: u[2],
                offset: u[0],
                tilt: u[1],
                multiplier,
                lambda_minus,
                residual: norm,
            });
        }
        let mut jac = [[0.0; 3]; 3];
        for col in 0..3 {
            let mut up = u;
            up[col] += SHOOT_FD;
            let rp = shoot_residual(q, &up, opts)?;
            for row in 0..3 {
                jac[row][col] = (rp[row] - r[row]) / SHOOT_FD;
            }
        }
        let step = solve3(jac, r).ok_or(Error::NoConvergence {
            what: "periodic orbit shooting (singular Jacobian)",
            residual: norm,
        })?;
        for k in 0..3 {
            u[k] -= step[k];
        }
        r = shoot_residual(q, &u, opts)?;
        norm = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    }
    Err(Error::NoConvergence {
        what: "periodic orbit shooting",
        residual: norm,
    })
}

/// Contraction data of a closed orbit: per-length exponents and the decay
/// factor over one period.
///
/// The backward stability sweep is run over a growing number of periods
/// until the one-period decay factor settles to the requested tolerance, so
/// the returned value is the genuinely periodic solution.
pub fn periodic_lyapunov(
    model: &SurfaceModel,
    orbit: &PeriodicOrbit,
    tol: f64,
    opts: &OdeOptions,
) -> Result<(f64, f64, f64)> {
    period_contraction(model, &orbit.v, orbit.period, tol, opts)
}

fn period_contraction(
    model: &SurfaceModel,
    v: &UnitVector,
    period: f64,
    tol: f64,
    opts: &OdeOptions,
) -> Result<(f64, f64, f64)> {
    let ptol = (0.1 * tol).clamp(1e-12, 1e-8);
    let mut prev: Option<f64> = None;
    let mut last_delta = f64::INFINITY;
    for m in 2..=MAX_PERIODS {
        let profile = StabilityProfiles::compute(model, v, m as f64 * period, ptol, opts)?;
        let y_t = profile.z_minus(period).exp();
        if let Some(p) = prev {
            last_delta = (y_t - p).abs() / y_t.max(f64::MIN_POSITIVE);
            if last_delta < tol.max(1e-14) {
                let lambda_minus = y_t.ln() / period;
                return Ok((lambda_minus, -lambda_minus, y_t));
            }
        }
        prev = Some(y_t);
    }
    Err(Error::NoCauchy {
        what: "periodic contraction multiplier",
        horizon: MAX_PERIODS as f64 * period,
        last_delta,
    })
}

/// Residuals of the multiplier-scaling of the straightening transverse
/// coordinate across one period.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScalingCheck {
    /// Sample points on the level curve through the orbit vector.
    pub points: Vec<ChartPoint>,
    /// Transverse coordinate measured from the period-advanced vector.
    pub advanced: Vec<f64>,
    /// Multiplier times the transverse coordinate measured from the orbit
    /// vector.
    pub scaled: Vec<f64>,
    /// Absolute residuals between the two columns.
    pub residuals: Vec<f64>,
    /// Largest absolute residual.
    pub sup_residual: f64,
    /// Largest residual relative to the transverse magnitude (with a small
    /// floor so the base point contributes its absolute defect).
    pub sup_relative: f64,
}

/// Checks that the transverse coordinate measured from the period-advanced
/// base equals the one-period decay factor times the coordinate measured
/// from the orbit vector, on points of the level curve through the orbit.
pub fn scaling_identity_check(
    model: &SurfaceModel,
    orbit: &PeriodicOrbit,
    samples: usize,
    tol: f64,
    opts: &OdeOptions,
) -> Result<ScalingCheck> {
    let n = samples.max(2);
    let advanced_base = flow_to(model, &orbit.v, orbit.period, opts)?;
    let lin_v = Linearizer::new(model, &orbit.v, 1.0, tol, opts)?;
    let span = 0.85;
    let points: Vec<ChartPoint> = (0..n)
        .map(|i| {
            let s = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            lin_v.curve().point(s)
        })
        .collect();
    let lin_w = Linearizer::covering(model, &advanced_base, &points, tol, opts)?;
    let mut advanced = Vec::with_capacity(n);
    let mut scaled = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut sup_residual = 0.0f64;
    let mut sup_relative = 0.0f64;
    for &p in &points {
        let lhs = lin_w.sample(p)?.transverse;
        let rhs = orbit.multiplier * lin_v.sample(p)?.transverse;
        let res = (lhs - rhs).abs();
        sup_residual = sup_residual.max(res);
        sup_relative = sup_relative.max(res / rhs.abs().max(1e-3));
        advanced.push(lhs);
        scaled.push(rhs);
        residuals.push(res);
    }
    Ok(ScalingCheck {
        points,
        advanced,
        scaled,
        residuals,
        sup_residual,
        sup_relative,
    })
}

/// Finite-horizon forward contraction exponents of two vectors of one
/// forward class: `-(1/T) ln` of each backward decay at the horizon.
///
/// The two values agree up to the horizon error `|ln| of the decay ratio
/// over the horizon`, which vanishes as the horizon grows.
pub fn forward_exponents(
    model: &SurfaceModel,
    v: &UnitVector,
    vp: &UnitVector,
    horizon: f64,
    tol: f64,
    opts: &OdeOptions,
) -> Result<(f64, f64)> {
    crate::transfer::require_class_member(model, v, vp, opts)?;
    let ptol = (0.1 * tol).clamp(1e-11, 1e-7);
    let pa = StabilityProfiles::compute(model, v, horizon, ptol, opts)?;
    let pb = StabilityProfiles::compute(model, vp, horizon, ptol, opts)?;
    Ok((
        -pa.z_minus(horizon) / horizon,
        -pb.z_minus(horizon) / horizon,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::asymptotic_vector;
    use crate::model::test_perturbed_model;
    use crate::transfer::stable_transfer;

    fn defaults() -> OdeOptions {
        OdeOptions::default()
    }

    fn perturbed_quotient() -> CyclicQuotient {
        let bump = Bump::new(0.05, 0.75, 1.25, 0.6).unwrap();
        let chart_box = WorkingBox {
            x0: -15.0,
            x1: 15.0,
            y0: 0.05,
            y1: 15.0,
        };
        CyclicQuotient::periodized(0.6, bump, 2.0, chart_box).unwrap()
    }

    #[test]
    fn axis_is_the_closed_orbit_when_the_field_is_off() {
        let q = CyclicQuotient::constant(0.0, 2.0).unwrap();
        let orbit = find_periodic_orbit(&q, 1e-10, &defaults()).unwrap();
        assert!(orbit.offset.abs() < 1e-9, "offset {}", orbit.offset);
        assert!(orbit.tilt.abs() < 1e-9);
        assert!((orbit.period - 2.0).abs() < 1e-9);
        assert!((orbit.lambda_minus + 1.0).abs() < 1e-8);
        assert!((orbit.multiplier - (-2.0f64).exp()).abs() < 1e-8);
    }

    /// Constant field 0.6: the orbit is the equidistant at artanh(0.6) =
    /// ln 2, crossed without tilt, with period l cosh = 2.5; the contraction
    /// exponent is -sqrt(1 - 0.36) = -0.8 and the period decay e^{-2}.
    #[test]
    fn constant_field_orbit_is_the_equidistant_with_certified_data() {
        let q = CyclicQuotient::constant(0.6, 2.0).unwrap();
        let orbit = find_periodic_orbit(&q, 1e-10, &defaults()).unwrap();
        assert!((orbit.offset - 2.0f64.ln()).abs() < 1e-8, "offset {}", orbit.offset);
        assert!(orbit.tilt.abs() < 1e-8);
        assert!((orbit.period - 2.5).abs() < 1e-8);
        assert!((orbit.lambda_minus + 0.8).abs() < 1e-8);
        assert!((orbit.multiplier - (-2.0f64).exp()).abs() < 1e-7);
        assert!((orbit.lambda_minus - orbit.multiplier.ln() / orbit.period).abs() < 1e-8);
        let (lm, lp, y) = periodic_lyapunov(q.model(), &orbit, 1e-9, &defaults()).unwrap();
        assert!((lm + lp).abs() < 1e-12 && (y - orbit.multiplier).abs() < 1e-9);
    }

    #[test]
    fn multiplier_composes_over_periods() {
        let q = CyclicQuotient::constant(0.6, 2.0).unwrap();
        let orbit = find_periodic_orbit(&q, 1e-10, &defaults()).unwrap();
        let t = orbit.period;
        let profile =
            StabilityProfiles::compute(q.model(), &orbit.v, 5.0 * t, 1e-11, &defaults()).unwrap();
        let y1 = profile.z_minus(t).exp();
        for n in [2usize, 3] {
            let yn = profile.z_minus(n as f64 * t).exp();
            let rel = (yn - y1.powi(n as i32)).abs() / y1.powi(n as i32);
            assert!(rel < n as f64 * 1e-7, "n = {n}: relative defect {rel}");
        }
    }

    #[test]
    fn exponent_sits_inside_the_pinching_band() {
        for q in [
            CyclicQuotient::constant(0.0, 2.0).unwrap(),
            CyclicQuotient::constant(0.6, 2.0).unwrap(),
            perturbed_quotient(),
        ] {
            let orbit = find_periodic_orbit(&q, 1e-9, &defaults()).unwrap();
            let b = q.model().bounds();
            assert!(
                b.q1 <= -orbit.lambda_minus && -orbit.lambda_minus <= b.q0,
                "exponent {} outside [{}, {}]",
                -orbit.lambda_minus,
                b.q1,
                b.q0
            );
        }
    }

    #[test]
    fn non_invariant_fields_are_rejected() {
        let kappa = ScalarField::Sum(vec![
            ScalarField::Constant(0.6),
            ScalarField::Bump(Bump::new(0.05, 0.75, 1.25, 0.6).unwrap()),
        ]);
        let model = SurfaceModel::new(ScalarField::zero(), kappa, None).unwrap();
        let err = CyclicQuotient::new(model, 2.0).unwrap_err();
        assert!(matches!(err, Error::InvalidModel { .. }), "got {err:?}");
    }

    #[test]
    fn periodic_perturbation_moves_the_orbit_but_closes_it() {
        let q = perturbed_quotient();
        let orbit = find_periodic_orbit(&q, 1e-9, &defaults()).unwrap();
        assert!(orbit.residual < 1e-9);
        // The bump sits on the constant-field orbit, so the closed orbit
        // must move off the constant-model data.
        let moved = (orbit.offset - 2.0f64.ln()).abs() + orbit.tilt.abs()
            + (orbit.period - 2.5).abs();
        assert!(moved > 1e-4, "orbit did not react to the bump: {moved:.2e}");
        // Closure is genuine: flowing one more period lands on the second
        // generator image of the start.
        let twice = flow_to(q.model(), &orbit.v, 2.0 * orbit.period, &defaults());
        if let Ok(end) = twice {
            let tgt = q.translate_unit(&q.translate_unit(&orbit.v));
            let gap = end.point.chart_dist(&tgt.point) / tgt.point.y;
            assert!(gap < 1e-5, "second return missed by {gap:.2e}");
        }
    }

    #[test]
    #[ignore]
    fn dbg_ratio_probe() {
        let q = perturbed_quotient();
        let model = q.model();
        let opts = defaults();
        let orbit = find_periodic_orbit(&q, 1e-9, &opts).unwrap();
        let lin_v = crate::linearize::Linearizer::new(model, &orbit.v, 1.0, 1e-7, &opts).unwrap();
        let v0 = *lin_v.generator();
        let vs = lin_v.curve().vector_at(0.85);
        eprintln!("== fresh-call lx(H) at s=0.85 ==");
        for h in [6.0, 10.0, 14.0, 18.0, 22.0, 26.0, 30.0] {
            let pb = StabilityProfiles::compute(model, &v0, h, 1e-9, &opts).unwrap();
            let pn = StabilityProfiles::compute(model, &vs, h, 1e-9, &opts).unwrap();
            eprintln!("H={h:5.1} lx={:+.10e}", pn.z_minus(h) - pb.z_minus(h));
        }
        eprintln!("== within one t_span=30 profile pair ==");
        let pb = StabilityProfiles::compute(model, &v0, 30.0, 1e-9, &opts).unwrap();
        let pn = StabilityProfiles::compute(model, &vs, 30.0, 1e-9, &opts).unwrap();
        for i in 1..=15 {
            let h = 2.0 * i as f64;
            eprintln!("h={h:5.1} lx={:+.10e}", pn.z_minus(h) - pb.z_minus(h));
        }
        eprintln!("== orbit separation along the spines ==");
        for t in [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0] {
            let a = pb.unit_at(t);
            let b = pn.unit_at(t);
            eprintln!(
                "t={t:5.1} sep={:.3e} dangle={:+.3e}",
                a.point.chart_dist(&b.point),
                crate::chart::wrap_angle(b.angle - a.angle)
            );
        }
        eprintln!("== seed sensitivity at H=30, s=0.85 node ==");
        let q0 = model.bounds().q0;
        let pn2 =
            StabilityProfiles::compute_seeded(model, &vs, 30.0, 1e-9, &opts, Some(q0)).unwrap();
        let pb2 =
            StabilityProfiles::compute_seeded(model, &v0, 30.0, 1e-9, &opts, Some(q0)).unwrap();
        eprintln!(
            "default lx={:+.10e}  q0-seed lx={:+.10e}",
            pn.z_minus(30.0) - pb.z_minus(30.0),
            pn2.z_minus(30.0) - pb2.z_minus(30.0)
        );
    }

    #[test]
    fn scaling_identity_holds_on_the_constant_quotient() {
        let q = CyclicQuotient::constant(0.6, 2.0).unwrap();
        let orbit = find_periodic_orbit(&q, 1e-10, &defaults()).unwrap();
        let check = scaling_identity_check(q.model(), &orbit, 20, 1e-7, &defaults()).unwrap();
        assert!(
            check.sup_residual < 1e-5,
            "sup residual {:.3e}",
            check.sup_residual
        );
        assert!(check.sup_relative < 1e-4);
    }

    #[test]
    fn scaling_identity_holds_on_a_periodic_perturbation() {
        let q = perturbed_quotient();
        let orbit = find_periodic_orbit(&q, 1e-9, &defaults()).unwrap();
        let check = scaling_identity_check(q.model(), &orbit, 12, 1e-7, &defaults()).unwrap();
        if std::env::var_os("MAGFLOW_DEBUG_MATCH").is_some() {
            use crate::linearize::Linearizer;
            let model = q.model();
            let opts = defaults();
            let advanced = flow_to(model, &orbit.v, orbit.period, &opts).unwrap();
            let lin_v = Linearizer::new(model, &orbit.v, 1.0, 1e-7, &opts).unwrap();
            let lin_w =
                Linearizer::covering(model, &advanced, &check.points, 1e-7, &opts).unwrap();
            let fd = 1e-5;
            let mut prev: Option<(f64, f64)> = None;
            for (i, &p) in check.points.iter().enumerate() {
                let (r_v, s_v, _) = lin_v.debug_factorize(p).unwrap();
                let (r_w, s_w, d_w) = lin_w.debug_factorize(p).unwrap();
                let t_v = lin_v.transfer_integral(s_v);
                let t_w = lin_w.transfer_integral(s_w);
                let xv_spline = (lin_v.transfer_integral(s_v + fd)
                    - lin_v.transfer_integral(s_v - fd))
                    / (2.0 * fd);
                let xw_spline = (lin_w.transfer_integral(s_w + fd)
                    - lin_w.transfer_integral(s_w - fd))
                    / (2.0 * fd);
                let xv_direct = lin_v.transfer_at(p).unwrap().0;
                let vp = asymptotic_vector(model, p, &orbit.v, 1e-8, &opts).unwrap();
                let push_t = -r_w;
                let prof =
                    StabilityProfiles::compute(model, &vp, push_t + 12.0, 1e-10, &opts).unwrap();
                let decay = prof.z_minus(push_t).exp();
                let slope = prev.map(|(ps_v, ps_w)| (s_w - ps_w) / (s_v - ps_v));
                eprintln!(
                    "#{i:02} s_v={s_v:+.6} r_v={r_v:+.2e} t_v={t_v:+.8e} Xv={xv_spline:.8} \
                     Xv*={xv_direct:.8} | r_w={r_w:+.8} s_w={s_w:+.8e} t_w={t_w:+.8e} \
                     Xw={xw_spline:.8} d_w={d_w:.1e} | D_T={decay:.8e} slope={:?}",
                    slope.map(|s| format!("{s:.8e}")),
                );
                prev = Some((s_v, s_w));
            }
            let prof_v = StabilityProfiles::compute(
                model,
                &orbit.v,
                orbit.period + 12.0,
                1e-10,
                &opts,
            )
            .unwrap();
            eprintln!(
                "multiplier={:.12e} exp(z_minus(T)) at base={:.12e} T={:.12}",
                orbit.multiplier,
                prof_v.z_minus(orbit.period).exp(),
                orbit.period
            );
        }
        assert!(
            check.sup_residual < 1e-4,
            "sup residual {:.3e}",
            check.sup_residual
        );
    }

    #[test]
    fn forward_exponents_are_constant_along_each_class() {
        // Constant model: the backward decay rate is the same number
        // everywhere, so the finite-horizon exponents agree exactly.
        let model = SurfaceModel::constant_kappa(0.6).unwrap();
        let v = UnitVector::new(0.3, 1.4, 1.0);
        let vp = asymptotic_vector(&model, ChartPoint::new(0.9, 2.0), &v, 1e-9, &defaults()).unwrap();
        let (a, b) = forward_exponents(&model, &v, &vp, 12.0, 1e-8, &defaults()).unwrap();
        assert!((a - 0.8).abs() < 1e-8 && (b - 0.8).abs() < 1e-8);

        // Time shift along one orbit: the difference is the boundary effect
        // of the shifted window, at most 2 q0 |s| / T.
        let model = test_perturbed_model();
        let v = UnitVector::new(0.4, 1.9, 0.7);
        let s = 0.7;
        let shifted = flow_to(&model, &v, s, &defaults()).unwrap();
        let t = 20.0;
        let (a, b) = forward_exponents(&model, &v, &shifted, t, 1e-8, &defaults()).unwrap();
        let cap = 2.0 * model.bounds().q0 * s / t + 1e-6;
        assert!((a - b).abs() <= cap, "shift gap {} above {cap}", (a - b).abs());

        // General class member: the gap is the decay-ratio effect,
        // |ln X| / T, up to the stated slack.
        let vp = asymptotic_vector(&model, ChartPoint::new(1.1, 2.4), &v, 1e-9, &defaults()).unwrap();
        let x = stable_transfer(&model, &v, &vp, 1e-9, &defaults()).unwrap();
        let (a, b) = forward_exponents(&model, &v, &vp, t, 1e-8, &defaults()).unwrap();
        let cap = x.value.ln().abs() / t + 1e-6;
        assert!((a - b).abs() <= cap, "class gap {} above {cap}", (a - b).abs());
    }
}
