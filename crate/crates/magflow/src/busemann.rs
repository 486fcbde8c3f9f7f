//! Boundary horofunctions of orbit classes: the normalized limit of
//! `time − distance` along an orbit, its level sets being the stable
//! horocycles.
//!
//! Two independent pathways are provided.  The distance pathway follows the
//! defining limit directly: once the orbit has escaped to the far field its
//! continuation is a closed-form geodesic ray, and distances to points far
//! down that ray are computed by shooting a geodesic only through the compact
//! perturbed region and attaching an exact far tail.  The gradient pathway
//! integrates the known gradient field of the horofunction — the asymptotic
//! direction minus its stable tangential component times the normal — along a
//! chart path; it needs no far geodesy and so also covers models whose far
//! field keeps bending orbits (constant nonzero field) and models without
//! far constants at all (periodized fields).  Where both apply they
//! cross-validate each other.

use std::f64::consts::PI;

use crate::boundary::{
    asymptotic_vector, bracketed_root, chart_endpoint, escape_state, geodesic_segment_clear,
    is_clear,
};
use crate::chart::{ChartPoint, Mobius, UnitVector};
use crate::error::Error;
use crate::flow::{geodesic_rhs, state_of, unit_of};
use crate::model::SurfaceModel;
use crate::ode::{integrate, OdeOptions};
use crate::riccati::stable_riccati;
use crate::Result;

/// Increment of the truncation horizon between Cauchy samples.
const HORIZON_STEP: f64 = 1.5;
/// Maximum number of horizon increments before giving up.
const MAX_HORIZON_STEPS: usize = 40;
/// Chunk length for geodesic escape stepping through the perturbed region.
const GEO_CHUNK: f64 = 2.0;
/// Arc-length cap for geodesic escape.
const GEO_CAP: f64 = 64.0;

/// Exact hyperbolic chart distance in a cancellation-free form, stable for
/// both tiny separations and points very close to the boundary line.
fn hyp_dist(p: ChartPoint, q: ChartPoint) -> f64 {
    2.0 * ((p.x - q.x).hypot(p.y - q.y) / (2.0 * (p.y * q.y).sqrt())).asinh()
}

/// Horofunction of the forward class of `v`, normalized to `0` at the base
/// point of `v` and increasing along the flow direction.
///
/// Selects the distance pathway when the far field is geodesic (far `κ = 0`)
/// and the gradient pathway otherwise — the gradient ingredients (asymptotic
/// directions, stable slopes, the conformal factor) need no far constants,
/// so that pathway also covers periodized fields.
pub fn busemann(
    model: &SurfaceModel,
    v: &UnitVector,
    z: ChartPoint,
    tol: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    match (model.far_kappa(), model.far_log_factor()) {
        (Some(kf), Some(_)) if kf == 0.0 => busemann_distance(model, v, z, tol, opts),
        _ => busemann_gradient(model, v, z, tol, opts),
    }
}

/// Distance pathway: evaluates `lim (t − distance(z, orbit(t)))` with
/// Cauchy-difference stopping over a growing truncation horizon.  Requires a
/// geodesic far field (far `κ = 0`).
pub fn busemann_distance(
    model: &SurfaceModel,
    v: &UnitVector,
    z: ChartPoint,
    tol: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    model.check_point(z)?;
    model.check_point(v.point)?;
    if model.far_kappa() != Some(0.0) {
        return Err(Error::Precondition {
            msg: "the distance pathway needs a geodesic far field".to_string(),
        });
    }
    let scale = model
        .far_log_factor()
        .ok_or_else(|| Error::Precondition {
            msg: "the distance pathway needs a constant far metric".to_string(),
        })?
        .exp();

    // Past its escape time the orbit runs along a closed-form geodesic ray;
    // points down that ray are the truncation targets.
    let tight = OdeOptions {
        rtol: opts.rtol.min(1e-12),
        atol: opts.atol.min(1e-14),
        ..*opts
    };
    let (vesc, t_esc) = escape_state(model, v, false, &tight)?;
    let p0 = vesc.point;
    let fwd = chart_endpoint(p0.x, p0.y, vesc.angle, 0.0);
    let back = chart_endpoint(p0.x, p0.y, vesc.angle + PI, 0.0);
    let straighten = Mobius::axis_straightener(back, fwd)?;
    let unstraighten = straighten.inverse();
    let h0 = straighten.apply(p0).y;

    let disks = model.metric_support_disks();
    let mut warm: Option<f64> = None;
    let mut s = 0.0;
    let mut prev_value: Option<f64> = None;
    let mut prev_delta: Option<f64> = None;
    for _ in 0..MAX_HORIZON_STEPS {
        s += HORIZON_STEP;
        let target = unstraighten.apply(ChartPoint::new(0.0, h0 * (s / scale).exp()));
        let d = point_distance(model, z, target, &disks, scale, &tight, &mut warm)?;
        let value = t_esc + s - d;
        if let Some(pv) = prev_value {
            let delta = value - pv;
            if let Some(pd) = prev_delta {
                let ratio = (delta.abs() / pd.abs().max(1e-300)).clamp(0.02, 0.8);
                let tail = delta.abs() * ratio / (1.0 - ratio);
                if tail < 0.5 * tol && delta.abs() < tol {
                    return Ok(value);
                }
            }
            prev_delta = Some(delta);
        }
        prev_value = Some(value);
    }
    Err(Error::NoCauchy {
        what: "horofunction distance differences",
        horizon: t_esc + s,
        last_delta: prev_delta.unwrap_or(f64::NAN),
    })
}

/// Distance from `z` to a point whose connecting geodesic may run far beyond
/// the perturbed region.  Exact closed form when the connecting segment
/// clears the metric disks; otherwise a launch-angle shoot through the
/// perturbed region with an exact far tail.
fn point_distance(
    model: &SurfaceModel,
    z: ChartPoint,
    p: ChartPoint,
    disks: &[(ChartPoint, f64)],
    scale: f64,
    opts: &OdeOptions,
    warm: &mut Option<f64>,
) -> Result<f64> {
    if geodesic_segment_clear(z, p, disks) {
        return Ok(scale * hyp_dist(z, p));
    }

    let mut miss = |alpha: f64| -> Result<f64> {
        let (exit, _) = geodesic_escape(model, z, alpha, disks, opts)?;
        signed_miss(&exit, p)
    };

    // Launch-angle bracket around the unperturbed direction (or the previous
    // solution, which moves very little between successive targets).
    let center = warm.unwrap_or_else(|| {
        crate::geodesic::closed_form_log_map(z, p).direction.angle
    });
    let mut width = if warm.is_some() { 1e-4 } else { 0.05 };
    let (mut lo, mut hi, mut mlo, mut mhi);
    loop {
        lo = center - width;
        hi = center + width;
        mlo = miss(lo)?;
        mhi = miss(hi)?;
        if mlo.signum() != mhi.signum() {
            break;
        }
        width *= 3.0;
        if width > PI {
            return Err(Error::NoBracket {
                what: "geodesic launch angle",
                near: center,
            });
        }
    }
    let alpha = bracketed_root(&mut miss, lo, hi, mlo, mhi, 1e-13)?;
    *warm = Some(alpha);

    let (exit, length_in) = geodesic_escape(model, z, alpha, disks, opts)?;
    let e = exit.point;
    let m = Mobius::axis_straightener(
        chart_endpoint(e.x, e.y, exit.angle + PI, 0.0),
        chart_endpoint(e.x, e.y, exit.angle, 0.0),
    )?;
    let tail = scale * (m.apply(p).y / m.apply(e).y).ln();
    Ok((length_in + tail).abs())
}

/// Integrates the geodesic from `(z, alpha)` until its remaining trace is
/// certified clear of the metric disks; returns the exit state and the model
/// arc length spent.
fn geodesic_escape(
    model: &SurfaceModel,
    z: ChartPoint,
    alpha: f64,
    disks: &[(ChartPoint, f64)],
    opts: &OdeOptions,
) -> Result<(UnitVector, f64)> {
    let mut cur = UnitVector {
        point: z,
        angle: alpha,
    };
    let mut length = 0.0;
    loop {
        if is_clear(&cur, false, 0.0, disks) {
            return Ok((cur, length));
        }
        if length >= GEO_CAP {
            return Err(Error::NoConvergence {
                what: "geodesic escape from the perturbed region",
                residual: length,
            });
        }
        let sol = integrate(
            |_t, st| geodesic_rhs(model, st),
            0.0,
            state_of(&cur),
            GEO_CHUNK,
            &OdeOptions {
                dense: false,
                ..*opts
            },
        )?;
        cur = unit_of(&sol.end());
        length += GEO_CHUNK;
    }
}

/// Signed separation of `p` from the forward far continuation of an escaped
/// geodesic state: the side coordinate after straightening that geodesic to
/// the vertical axis (hyperbolic distance with a consistent left/right sign).
fn signed_miss(exit: &UnitVector, p: ChartPoint) -> Result<f64> {
    let e = exit.point;
    let m = Mobius::axis_straightener(
        chart_endpoint(e.x, e.y, exit.angle + PI, 0.0),
        chart_endpoint(e.x, e.y, exit.angle, 0.0),
    )?;
    let q = m.apply(p);
    Ok((q.x / q.y).asinh())
}

/// Gradient pathway: integrates the horofunction gradient — the asymptotic
/// direction at each point minus its stable tangential component times the
/// normal — along the straight chart segment from the base point of `v` to
/// `z`.  Also valid when the far field keeps bending orbits.
pub fn busemann_gradient(
    model: &SurfaceModel,
    v: &UnitVector,
    z: ChartPoint,
    tol: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    model.check_point(z)?;
    model.check_point(v.point)?;
    let a = v.point;
    let (dx, dy) = (z.x - a.x, z.y - a.y);
    if dx == 0.0 && dy == 0.0 {
        return Ok(0.0);
    }
    let sub_tol = (0.1 * tol).clamp(1e-12, 1e-8);
    let mut f = |sigma: f64| -> Result<f64> {
        let p = ChartPoint::new(a.x + sigma * dx, a.y + sigma * dy);
        let vp = asymptotic_vector(model, p, v, sub_tol, opts)?;
        let w = stable_riccati(model, &vp, sub_tol, opts)?.w_minus;
        let (sin_a, cos_a) = vp.angle.sin_cos();
        let e_rho = model.conformal_factor(p);
        Ok(e_rho * ((cos_a + w * sin_a) * dx + (sin_a - w * cos_a) * dy))
    };
    simpson_doubling(&mut f, tol)
}

/// Composite Simpson on `[0, 1]` with grid doubling, node reuse, and a
/// Richardson acceptance test.
fn simpson_doubling(f: &mut impl FnMut(f64) -> Result<f64>, tol: f64) -> Result<f64> {
    let mut n = 8usize;
    let mut vals = Vec::with_capacity(n + 1);
    for i in 0..=n {
        vals.push(f(i as f64 / n as f64)?);
    }
    let mut prev = simpson_sum(&vals);
    loop {
        let mut refined = Vec::with_capacity(2 * n + 1);
        for i in 0..n {
            refined.push(vals[i]);
            refined.push(f((2 * i + 1) as f64 / (2 * n) as f64)?);
        }
        refined.push(vals[n]);
        vals = refined;
        n *= 2;
        let cur = simpson_sum(&vals);
        let diff = (cur - prev) / 15.0;
        if diff.abs() < 0.5 * tol {
            return Ok(cur + diff);
        }
        if n >= 1024 {
            return Err(Error::NoConvergence {
                what: "horofunction gradient quadrature",
                residual: diff.abs(),
            });
        }
        prev = cur;
    }
}

fn simpson_sum(vals: &[f64]) -> f64 {
    let n = vals.len() - 1;
    debug_assert!(n >= 2 && n % 2 == 0);
    let h = 1.0 / n as f64;
    let mut acc = vals[0] + vals[n];
    for (i, val) in vals.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * val } else { 2.0 * val };
    }
    acc * h / 3.0
}
