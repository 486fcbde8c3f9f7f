//! Ideal endpoints on the circle at infinity, asymptotic-direction solving,
//! and leaf-anchored orbit spines for long-horizon work.
//!
//! On a model whose field perturbations are compactly supported, every orbit
//! eventually leaves the perturbed region for good; from there its chart trace
//! is a circular arc (or straight ray) of constant flat curvature, so its
//! ideal endpoint on the boundary line has a closed form.  The endpoint labels
//! the forward-asymptotic class of the orbit.  Solving the angle at a point
//! that reproduces a given endpoint yields the asymptotic vector through that
//! point, and re-solving it chunk by chunk along a long orbit (while the orbit
//! is still among the bumps) kills the transversally growing part of the
//! integration error, which keeps downstream quantities well conditioned over
//! horizons far beyond the naive error-growth limit.  Once the trace has
//! escaped, the fields are exactly at their far constants and plain
//! integration is enough, so anchoring stops by itself.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::chart::{wrap_angle, ChartPoint, UnitVector};
use crate::error::Error;
use crate::flow::{flow_to, OrbitSegment};
use crate::model::SurfaceModel;
use crate::ode::OdeOptions;
use crate::Result;

/// Chunk length for escape stepping through the perturbed region.
const ESCAPE_CHUNK: f64 = 0.5;
/// Flow-time cap for escape detection.
const ESCAPE_CAP: f64 = 60.0;
/// Default chunk length of anchored spines.
pub const SPINE_CHUNK: f64 = 2.0;
/// Angle tolerance used by spine re-anchoring solves.
pub const ANCHOR_ANGLE_TOL: f64 = 1e-12;

/// Flat curvature of far-field traces measured against the unperturbed
/// hyperbolic metric; errors when either field lacks a far constant (as on
/// periodized models, which have no boundary machinery).
fn far_flat_kappa(model: &SurfaceModel) -> Result<f64> {
    match (model.far_log_factor(), model.far_kappa()) {
        (Some(bf), Some(kf)) => Ok(bf.exp() * kf),
        _ => Err(Error::Precondition {
            msg: "model fields have no far constants; ideal endpoints are undefined".to_string(),
        }),
    }
}

/// Ideal endpoint of the forward constant-curvature trace from the chart
/// state `(x, y, angle)`.  `kappa_flat` is the trace curvature measured
/// against the unperturbed hyperbolic metric and must satisfy
/// `|kappa_flat| < 1`; `None` is the point at infinity.
///
/// The trace is the circle of flat curvature `(kappa_flat - cos angle)/y`
/// through the point; the formula below is its first boundary crossing in the
/// direction of travel, written per half-plane of the angle so that no
/// cancellation occurs.
pub fn chart_endpoint(x: f64, y: f64, angle: f64, kappa_flat: f64) -> Option<f64> {
    debug_assert!(kappa_flat.abs() < 1.0 && y > 0.0);
    let (s, c) = angle.sin_cos();
    let root = (1.0 - kappa_flat * kappa_flat).max(0.0).sqrt();
    if s < 0.0 {
        // Descending: (s + root)/(kappa - c) rewritten cancellation-free.
        Some(x + y * (kappa_flat + c) / (root - s))
    } else {
        let den = kappa_flat - c;
        if den.abs() <= 1e-14 * (1.0 + kappa_flat.abs()) {
            None // straight chart ray, climbing
        } else {
            Some(x - y * (s + root) / den)
        }
    }
}

/// Compactified coordinate on the circle at infinity: `2·atan(endpoint)`,
/// with the point at infinity at `π`.  Differences of compactified
/// coordinates are compared modulo `2π`.
pub fn compactify(endpoint: Option<f64>) -> f64 {
    match endpoint {
        Some(xi) => 2.0 * xi.atan(),
        None => PI,
    }
}

/// Chart trace of an orbit through the far region: a boundary-bound circular
/// arc or a straight ray/segment.
pub(crate) enum FarTrace {
    /// `p + s·d` for `s ∈ [0, s_max]` (`s_max` may be infinite).
    Ray {
        px: f64,
        py: f64,
        dx: f64,
        dy: f64,
        s_max: f64,
    },
    /// Circle of center `(ox, oy)`, radius `r`, traversed from position angle
    /// `theta0` in rotation sense `dir` (`±1`), over `sweep ∈ [0, 2π)` until
    /// the first boundary crossing.
    Arc {
        ox: f64,
        oy: f64,
        r: f64,
        theta0: f64,
        sweep: f64,
        dir: f64,
    },
}

fn mod_tau(a: f64) -> f64 {
    let m = a % TAU;
    if m < 0.0 {
        m + TAU
    } else {
        m
    }
}

pub(crate) fn far_trace(x: f64, y: f64, angle: f64, kappa_flat: f64) -> FarTrace {
    let (s, c) = angle.sin_cos();
    let den = kappa_flat - c;
    if den.abs() <= 1e-12 {
        let s_max = if s < 0.0 { -y / s } else { f64::INFINITY };
        FarTrace::Ray {
            px: x,
            py: y,
            dx: c,
            dy: s,
            s_max,
        }
    } else {
        let inv = y / den; // signed radius 1/k_e
        let ox = x - s * inv;
        let oy = y + c * inv;
        let r = inv.abs();
        let dir = den.signum();
        let theta0 = (y - oy).atan2(x - ox);
        // Boundary crossings sit at sin θ = −oy/r; the first one reached
        // moving with `dir` is the arcsine branch below.
        let ta = (-oy / r).clamp(-1.0, 1.0).asin();
        let te = if dir > 0.0 { PI - ta } else { ta };
        FarTrace::Arc {
            ox,
            oy,
            r,
            theta0,
            sweep: mod_tau(dir * (te - theta0)),
            dir,
        }
    }
}

/// Whether the trace avoids every disk.  Exact for arcs (angular-interval
/// overlap), exact for rays; the start point is assumed outside all disks.
pub(crate) fn trace_clear(trace: &FarTrace, disks: &[(ChartPoint, f64)]) -> bool {
    for &(d, rd) in disks {
        match *trace {
            FarTrace::Ray {
                px,
                py,
                dx,
                dy,
                s_max,
            } => {
                let wx = d.x - px;
                let wy = d.y - py;
                let t = (wx * dx + wy * dy).clamp(0.0, s_max);
                let ex = wx - t * dx;
                let ey = wy - t * dy;
                if ex * ex + ey * ey <= rd * rd {
                    return false;
                }
            }
            FarTrace::Arc {
                ox,
                oy,
                r,
                theta0,
                sweep,
                dir,
            } => {
                let wx = d.x - ox;
                let wy = d.y - oy;
                let dist = wx.hypot(wy);
                if dist <= 1e-12 {
                    if r <= rd {
                        return false;
                    }
                    continue;
                }
                let cos_half = (r * r + dist * dist - rd * rd) / (2.0 * r * dist);
                if cos_half > 1.0 {
                    continue; // circle misses the disk entirely
                }
                if cos_half < -1.0 {
                    return false; // whole circle inside the disk
                }
                let half = cos_half.acos();
                let thc = wy.atan2(wx);
                // Directed positions (along travel) of the entry/exit of the
                // disk-crossing angular interval.
                let entry = mod_tau(dir * (thc - theta0) - half);
                let exit = mod_tau(dir * (thc - theta0) + half);
                if entry > exit || entry <= sweep {
                    return false;
                }
            }
        }
    }
    true
}

/// Whether the state is outside every support disk and its remaining trace
/// (in the requested direction) stays clear of them, so that the closed-form
/// far-field endpoint is exact from here on.
pub(crate) fn is_clear(v: &UnitVector, backward: bool, kappa_flat: f64, disks: &[(ChartPoint, f64)]) -> bool {
    if disks.is_empty() {
        return true;
    }
    let p = v.point;
    for &(d, rd) in disks {
        let dx = p.x - d.x;
        let dy = p.y - d.y;
        if dx * dx + dy * dy <= rd * rd {
            return false;
        }
    }
    let (angle, k) = if backward {
        (v.angle + PI, -kappa_flat)
    } else {
        (v.angle, kappa_flat)
    };
    trace_clear(&far_trace(p.x, p.y, angle, k), disks)
}

/// Whether the closed-form hyperbolic geodesic segment between two chart
/// points avoids every disk (endpoints included).  Exact: the segment is a
/// vertical chord or a circular arc centered on the boundary line.
pub(crate) fn geodesic_segment_clear(
    a: ChartPoint,
    b: ChartPoint,
    disks: &[(ChartPoint, f64)],
) -> bool {
    if disks.is_empty() {
        return true;
    }
    for &(d, rd) in disks {
        for p in [a, b] {
            let dx = p.x - d.x;
            let dy = p.y - d.y;
            if dx * dx + dy * dy <= rd * rd {
                return false;
            }
        }
    }
    let scale = 1e-13 * (a.x.abs() + b.x.abs() + a.y + b.y);
    let trace = if (a.x - b.x).abs() <= scale {
        FarTrace::Ray {
            px: a.x,
            py: a.y.min(b.y),
            dx: 0.0,
            dy: 1.0,
            s_max: (a.y - b.y).abs(),
        }
    } else {
        let c = (b.x * b.x + b.y * b.y - a.x * a.x - a.y * a.y) / (2.0 * (b.x - a.x));
        let r = (a.x - c).hypot(a.y);
        let ta = a.y.atan2(a.x - c);
        let tb = b.y.atan2(b.x - c);
        FarTrace::Arc {
            ox: c,
            oy: 0.0,
            r,
            theta0: ta,
            sweep: (tb - ta).abs(),
            dir: (tb - ta).signum(),
        }
    };
    trace_clear(&trace, disks)
}

/// Integrates the flow (in the requested direction) until the state certifies
/// clear of the perturbed region; returns the state and the unsigned time
/// spent.  Instant on models without support disks.
pub(crate) fn escape_state(
    model: &SurfaceModel,
    v: &UnitVector,
    backward: bool,
    opts: &OdeOptions,
) -> Result<(UnitVector, f64)> {
    let kf = far_flat_kappa(model)?;
    let disks = model.support_disks();
    let mut cur = *v;
    let mut t = 0.0;
    loop {
        if is_clear(&cur, backward, kf, &disks) {
            return Ok((cur, t));
        }
        if t >= ESCAPE_CAP {
            return Err(Error::NoConvergence {
                what: "escape to the far field",
                residual: t,
            });
        }
        let dt = if backward { -ESCAPE_CHUNK } else { ESCAPE_CHUNK };
        cur = flow_to(model, &cur, dt, opts)?;
        t += ESCAPE_CHUNK;
    }
}

fn endpoint_coordinate(
    model: &SurfaceModel,
    v: &UnitVector,
    backward: bool,
    opts: &OdeOptions,
) -> Result<f64> {
    let kf = far_flat_kappa(model)?;
    let (s, _) = escape_state(model, v, backward, opts)?;
    let (angle, k) = if backward {
        (s.angle + PI, -kf)
    } else {
        (s.angle, kf)
    };
    Ok(compactify(chart_endpoint(s.point.x, s.point.y, angle, k)))
}

/// Compactified ideal endpoint of the forward orbit of `v`.
pub fn forward_endpoint(model: &SurfaceModel, v: &UnitVector, opts: &OdeOptions) -> Result<f64> {
    endpoint_coordinate(model, v, false, opts)
}

/// Compactified ideal endpoint of the backward orbit of `v`.
pub fn backward_endpoint(model: &SurfaceModel, v: &UnitVector, opts: &OdeOptions) -> Result<f64> {
    endpoint_coordinate(model, v, true, opts)
}

/// Hybrid false-position/bisection on a bracketed root of `h`; the forced
/// bisection every other step guarantees convergence while the secant steps
/// keep the typical evaluation count low.
pub(crate) fn bracketed_root(
    h: &mut impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    mut ha: f64,
    mut hb: f64,
    tol_x: f64,
) -> Result<f64> {
    debug_assert!(ha.signum() != hb.signum());
    for it in 0..120 {
        if (b - a).abs() <= tol_x || ha == 0.0 || hb == 0.0 {
            break;
        }
        let den = hb - ha;
        let mut m = if den.abs() > 1e-300 {
            (a * hb - b * ha) / den
        } else {
            0.5 * (a + b)
        };
        if it % 2 == 1 || !m.is_finite() || m <= a.min(b) || m >= a.max(b) {
            m = 0.5 * (a + b);
        }
        let hm = h(m)?;
        if hm.abs() < 1e-15 {
            return Ok(m);
        }
        if hm.signum() == ha.signum() {
            a = m;
            ha = hm;
        } else {
            b = m;
            hb = hm;
        }
    }
    Ok(if ha.abs() <= hb.abs() { a } else { b })
}

/// Solves for the angle at `p` whose orbit (in the requested direction) has
/// the given compactified endpoint.  With a `(center, halfwidth)` guess an
/// expanding local bracket is tried first; otherwise, or on failure, a global
/// scan of the angle circle locates the single monotone crossing.
pub(crate) fn solve_endpoint_angle(
    model: &SurfaceModel,
    p: ChartPoint,
    target: f64,
    backward: bool,
    guess: Option<(f64, f64)>,
    tol_angle: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let mut h = |phi: f64| -> Result<f64> {
        let u = endpoint_coordinate(model, &UnitVector { point: p, angle: phi }, backward, opts)?;
        Ok(wrap_angle(u - target))
    };
    if let Some((phi0, w0)) = guess {
        let mut w = w0.clamp(1e-9, 0.1);
        loop {
            let (a, b) = (phi0 - w, phi0 + w);
            let ha = h(a)?;
            let hb = h(b)?;
            if ha.signum() != hb.signum() && ha.abs() < FRAC_PI_2 && hb.abs() < FRAC_PI_2 {
                return bracketed_root(&mut h, a, b, ha, hb, tol_angle);
            }
            w *= 4.0;
            if w > 0.45 {
                break;
            }
        }
    }
    // Global scan: the endpoint is a degree-one monotone circle map of the
    // angle, so exactly one adjacent pair brackets the target away from the
    // antipodal wrap (which the |h| < π filter rejects).
    let n = 64usize;
    let base = guess.map_or(0.0, |(phi0, _)| phi0);
    let angles: Vec<f64> = (0..n).map(|i| base - PI + TAU * i as f64 / n as f64).collect();
    let mut values = Vec::with_capacity(n);
    for &phi in &angles {
        values.push(h(phi)?);
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut nearest = f64::INFINITY;
    for i in 0..n {
        let j = (i + 1) % n;
        let (ha, hb) = (values[i], values[j]);
        nearest = nearest.min(ha.abs());
        if ha.signum() != hb.signum() && ha.abs() + hb.abs() < PI {
            let key = ha.abs().min(hb.abs());
            if best.is_none_or(|(ka, kb, _, _): (f64, f64, f64, f64)| key < ka.abs().min(kb.abs()))
            {
                let b = if j == 0 { angles[i] + TAU / n as f64 } else { angles[j] };
                best = Some((ha, hb, angles[i], b));
            }
        }
    }
    match best {
        Some((ha, hb, a, b)) => bracketed_root(&mut h, a, b, ha, hb, tol_angle),
        None => Err(Error::NoBracket {
            what: "asymptotic angle",
            near: nearest,
        }),
    }
}

/// Unit vector at `p` whose forward orbit has the compactified ideal endpoint
/// `target`; `guess` is an optional `(angle, halfwidth)` warm start.
pub fn vector_to_endpoint(
    model: &SurfaceModel,
    p: ChartPoint,
    target: f64,
    guess: Option<(f64, f64)>,
    tol: f64,
    opts: &OdeOptions,
) -> Result<UnitVector> {
    model.check_point(p)?;
    let tol_angle = (tol * 1e-3).clamp(1e-13, 1e-7);
    let phi = solve_endpoint_angle(model, p, target, false, guess, tol_angle, opts)?;
    Ok(UnitVector {
        point: p,
        angle: wrap_angle(phi),
    })
}

/// Unit vector at `p` forward-asymptotic to the orbit of `v` (same ideal
/// endpoint), found by monotone bisection over the angle at `p`.
///
/// With a constant far zone the solve compares compactified ideal endpoints;
/// without one (periodized fields) it matches the orbit of `v` directly at a
/// growing truncation horizon.
pub fn asymptotic_vector(
    model: &SurfaceModel,
    p: ChartPoint,
    v: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<UnitVector> {
    if model.far_kappa().is_some() && model.far_log_factor().is_some() {
        let target = forward_endpoint(model, v, opts)?;
        vector_to_endpoint(model, p, target, None, tol, opts)
    } else {
        matched_asymptotic_vector(model, p, v, tol, opts)
    }
}

/// Starting truncation horizon of far-free asymptotic matching.
const MATCH_HORIZON: f64 = 8.0;
/// Backward extension of the reference wall behind the class vector.
const MATCH_BACK: f64 = 8.0;
/// Flow-time sampling resolution of the reference wall.
const MATCH_RES: f64 = 0.25;
/// Horizon quantum for far-free matching; horizons only grow by whole quanta
/// so the bracket ends need refreshing only every few halvings.
const MATCH_STEP: f64 = 1.5;
/// Horizon cap for far-free matching.
const MATCH_CAP: f64 = 80.0;
/// Number of full-circle scan angles used to bracket the matching angle.
const MATCH_SCAN: usize = 24;

struct ScopeGuardLite<F: FnMut()>(F);
impl<F: FnMut()> Drop for ScopeGuardLite<F> {
    fn drop(&mut self) {
        (self.0)();
    }
}
fn scopeguard_lite<F: FnMut()>(f: F) -> ScopeGuardLite<F> {
    ScopeGuardLite(f)
}

/// Far-free fallback for [`asymptotic_vector`]: bisection on the launch angle
/// at `p` against the side of the reference orbit on which the candidate
/// orbit peels off, at a truncation horizon that grows as the bracket
/// narrows.
///
/// The side is measured against the oriented reference orbit as a curve (a
/// wall of samples from `MATCH_BACK` behind the class vector up to the
/// current horizon): the candidate's endpoint is classified by the local
/// frame of the nearest wall sample.  Peeling happens while the candidate is
/// still near the wall, in the linear regime, and the side persists once it
/// has peeled — which keeps brackets stable under horizon growth, unlike any
/// side measured at the moving reference endpoint alone.  A mismatched
/// candidate separates from the wall at the certified rate while the matched
/// orbit converges to it, so each halving of the bracket needs only a fixed
/// extra stretch of horizon, and the same schedule keeps the crossing-point
/// bias proportional to the current width, hence below the angle tolerance.
fn matched_asymptotic_vector(
    model: &SurfaceModel,
    p: ChartPoint,
    v: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<UnitVector> {
    static CALLS: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    static MICROS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let _guard = if std::env::var_os("MAGFLOW_DEBUG_MATCH").is_some() {
        let start = std::time::Instant::now();
        Some(scopeguard_lite(move || {
            let n = CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            let us = MICROS.fetch_add(
                start.elapsed().as_micros() as u64,
                std::sync::atomic::Ordering::Relaxed,
            ) + start.elapsed().as_micros() as u64;
            if n % 25 == 0 {
                eprintln!("match calls={n} total={:.1}s", us as f64 / 1e6);
            }
        }))
    } else {
        None
    };
    model.check_point(p)?;
    model.check_point(v.point)?;
    let tol_angle = (tol * 1e-3).clamp(1e-13, 1e-7);
    let q1 = model.bounds().q1;
    let run = OdeOptions {
        dense: false,
        ..*opts
    };

    // Reference wall: orbit samples every MATCH_RES of flow time, oriented by
    // the flow, spanning [-MATCH_BACK, horizon] around the class vector.
    let back_len = (MATCH_BACK / MATCH_RES).round() as usize;
    let mut wall = Vec::with_capacity(back_len + 1);
    let mut cur = *v;
    for _ in 0..back_len {
        cur = flow_to(model, &cur, -MATCH_RES, &run)?;
        wall.push(cur);
    }
    wall.reverse();
    wall.push(*v);
    let mut wall_top = 0.0;
    let extend_wall = |wall: &mut Vec<UnitVector>, wall_top: &mut f64, t: f64| -> Result<()> {
        while *wall_top < t - 0.5 * MATCH_RES {
            let next = flow_to(model, wall.last().unwrap(), MATCH_RES, &run)?;
            wall.push(next);
            *wall_top += MATCH_RES;
        }
        Ok(())
    };
    extend_wall(&mut wall, &mut wall_top, MATCH_HORIZON)?;

    // Side of the wall on which the candidate orbit from `(p, alpha)` ends
    // after `horizon` of flow time (left positive, by the nearest wall
    // sample's frame; the chart cross product suffices for the sign since
    // the metric is conformal), plus the distance to the wall's tip.
    let probe = |wall: &[UnitVector], horizon: f64, alpha: f64| -> Result<(f64, f64)> {
        let u = flow_to(
            model,
            &UnitVector {
                point: p,
                angle: alpha,
            },
            horizon,
            &run,
        )?;
        let mut nearest = 0usize;
        let mut best = f64::INFINITY;
        for (i, r) in wall.iter().enumerate() {
            let d = SurfaceModel::closed_form_distance(u.point, r.point);
            if d < best {
                best = d;
                nearest = i;
            }
        }
        let r = &wall[nearest];
        let (sin_a, cos_a) = r.angle.sin_cos();
        let side = cos_a * (u.point.y - r.point.y) - sin_a * (u.point.x - r.point.x);
        let tip = SurfaceModel::closed_form_distance(u.point, wall.last().unwrap().point);
        Ok((side, tip))
    };

    // Full-circle scan around the geodesic sight line to the wall tip.
    // Among the adjacent sign changes the matching one is recognized by its
    // orbit ending near the tip; the spurious crossing (candidates heading
    // backward) ends far from it.
    let center = crate::geodesic::closed_form_log_map(p, wall.last().unwrap().point)
        .direction
        .angle;
    let mut scan = Vec::with_capacity(MATCH_SCAN);
    for i in 0..MATCH_SCAN {
        let alpha = center - PI + TAU * i as f64 / MATCH_SCAN as f64;
        scan.push((alpha, probe(&wall, MATCH_HORIZON, alpha)?));
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..MATCH_SCAN {
        let j = (i + 1) % MATCH_SCAN;
        let (a, (sa, da)) = scan[i];
        let (b, (sb, db)) = scan[j];
        if sa.signum() != sb.signum() {
            let key = da.min(db);
            let b = if j == 0 { a + TAU / MATCH_SCAN as f64 } else { b };
            if best.is_none_or(|(k, _, _, _): (f64, f64, f64, f64)| key < k) {
                best = Some((key, a, b, sa));
            }
        }
    }
    let (_, mut lo, mut hi, mut side_lo) = best.ok_or(Error::NoBracket {
        what: "asymptotic matching angle",
        near: center,
    })?;

    let w0 = hi - lo;
    let mut horizon = MATCH_HORIZON;
    while hi - lo > tol_angle {
        let need = MATCH_HORIZON + (w0 / (hi - lo)).ln() / (2.0 * q1) + 2.0 * MATCH_STEP;
        let need = ((need / MATCH_STEP).ceil() * MATCH_STEP).min(MATCH_CAP);
        if need > horizon {
            horizon = need;
            extend_wall(&mut wall, &mut wall_top, horizon)?;
            // Raising the horizon shrinks the bias of the side-crossing
            // point, which can move it just outside a very narrow bracket;
            // it stays within a few widths of it, so re-widen until
            // re-caught.
            let (mut sl, _) = probe(&wall, horizon, lo)?;
            let (mut sh, _) = probe(&wall, horizon, hi)?;
            while sl.signum() == sh.signum() {
                let grow = 2.0 * (hi - lo);
                if grow > 4.0 * w0 {
                    return Err(Error::NoBracket {
                        what: "asymptotic matching angle",
                        near: 0.5 * (lo + hi),
                    });
                }
                let c = 0.5 * (lo + hi);
                lo = c - 0.5 * grow;
                hi = c + 0.5 * grow;
                (sl, _) = probe(&wall, horizon, lo)?;
                (sh, _) = probe(&wall, horizon, hi)?;
            }
            side_lo = sl;
        }
        let mid = 0.5 * (lo + hi);
        let (sm, _) = probe(&wall, horizon, mid)?;
        if sm.signum() == side_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(UnitVector {
        point: p,
        angle: wrap_angle(0.5 * (lo + hi)),
    })
}

/// An orbit advanced in fixed flow-time chunks, with a caller-supplied
/// re-anchoring step applied at every chunk boundary.  `delta` may be
/// negative for backward spines; query times then carry the same sign.
pub struct Spine {
    delta: f64,
    starts: Vec<UnitVector>,
    chunks: Vec<OrbitSegment>,
    max_correction: f64,
    primed: bool,
}

impl Spine {
    pub fn new(v: &UnitVector, delta: f64) -> Self {
        assert!(delta != 0.0 && delta.is_finite());
        Spine {
            delta,
            starts: vec![*v],
            chunks: Vec::new(),
            max_correction: 0.0,
            primed: false,
        }
    }

    /// Signed flow time covered so far.
    pub fn covered(&self) -> f64 {
        self.chunks.len() as f64 * self.delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn start(&self) -> &UnitVector {
        &self.starts[0]
    }

    /// Largest angle correction applied by re-anchoring so far; a large value
    /// signals integration drift the anchoring had to absorb.
    pub fn max_correction(&self) -> f64 {
        self.max_correction
    }

    /// Extends the spine until it covers flow time `t` (sign matching
    /// `delta`).  The re-anchorer sees the initial state once before the
    /// first chunk (so it can fix its leaf label) and then every chunk end;
    /// returning `None` leaves the state untouched.
    pub fn ensure<R>(
        &mut self,
        model: &SurfaceModel,
        t: f64,
        opts: &OdeOptions,
        reanchor: &mut R,
    ) -> Result<()>
    where
        R: FnMut(&SurfaceModel, &UnitVector) -> Result<Option<UnitVector>>,
    {
        debug_assert!(t * self.delta >= 0.0);
        if !self.primed {
            self.primed = true;
            if let Some(c) = reanchor(model, &self.starts[0])? {
                self.note_correction(self.starts[0].angle, c.angle);
                self.starts[0] = c;
            }
        }
        while self.covered().abs() + 1e-9 < t.abs() {
            let from = *self.starts.last().expect("spine always has a start");
            let chunk = OrbitSegment::compute(model, &from, self.delta, opts)?;
            let end = chunk.end();
            self.chunks.push(chunk);
            let next = match reanchor(model, &end)? {
                Some(c) => {
                    self.note_correction(end.angle, c.angle);
                    c
                }
                None => end,
            };
            self.starts.push(next);
        }
        Ok(())
    }

    fn note_correction(&mut self, before: f64, after: f64) {
        self.max_correction = self.max_correction.max(wrap_angle(after - before).abs());
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        assert!(!self.chunks.is_empty(), "spine not extended yet");
        let ratio = t / self.delta;
        debug_assert!(ratio >= -1e-6 && ratio <= self.chunks.len() as f64 + 1e-6);
        let k = (ratio.floor() as isize).clamp(0, self.chunks.len() as isize - 1) as usize;
        (k, t - k as f64 * self.delta)
    }

    /// State at flow time `t` within the covered span.
    pub fn unit_at(&self, t: f64) -> UnitVector {
        let (k, local) = self.locate(t);
        self.chunks[k].unit_at(local)
    }

    /// Jacobi endomorphism along the spine.
    pub fn q_at(&self, model: &SurfaceModel, t: f64) -> f64 {
        let (k, local) = self.locate(t);
        self.chunks[k].q_at(model, local)
    }

    /// Field value along the spine.
    pub fn kappa_at(&self, model: &SurfaceModel, t: f64) -> f64 {
        model.kappa(self.unit_at(t).point)
    }
}

/// Re-anchoring policy for spines on far-field models: while the state's
/// remaining trace still meets the perturbed region, re-solve the angle so
/// every chunk start returns to the leaf of the initial state; once clear,
/// the fields are exactly constant ahead and anchoring shuts off for good.
pub fn endpoint_reanchor(
    backward: bool,
    opts: OdeOptions,
) -> impl FnMut(&SurfaceModel, &UnitVector) -> Result<Option<UnitVector>> {
    let mut target: Option<f64> = None;
    let mut done = false;
    let mut width = 1e-7_f64;
    move |model, v| {
        if done {
            return Ok(None);
        }
        let disks = model.support_disks();
        if disks.is_empty() {
            done = true;
            return Ok(None);
        }
        let kf = far_flat_kappa(model)?;
        if is_clear(v, backward, kf, &disks) {
            done = true;
            return Ok(None);
        }
        let u = match target {
            Some(u) => u,
            None => {
                target = Some(endpoint_coordinate(model, v, backward, &opts)?);
                return Ok(None);
            }
        };
        let phi = solve_endpoint_angle(
            model,
            v.point,
            u,
            backward,
            Some((v.angle, width)),
            ANCHOR_ANGLE_TOL,
            &opts,
        )?;
        let corr = wrap_angle(phi - v.angle).abs();
        width = (8.0 * corr).clamp(1e-8, 1e-3);
        Ok(Some(UnitVector {
            point: v.point,
            angle: wrap_angle(phi),
        }))
    }
}

/// A re-anchorer that never corrects (plain chunked integration).
pub fn no_reanchor() -> impl FnMut(&SurfaceModel, &UnitVector) -> Result<Option<UnitVector>> {
    |_, _| Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_perturbed_model;
    use proptest::prelude::*;

    fn fixture() -> SurfaceModel {
        test_perturbed_model()
    }

    #[test]
    fn chart_endpoint_matches_line_and_circle_oracles() {
        // Geodesic (flat curvature of the trace = -cos angle / y): through
        // (0.3, 1.2) the right-heading semicircle has center (0.3, 0) and
        // radius 1.2, so the forward crossings are x ± y.
        let e = chart_endpoint(0.3, 1.2, 0.0, 0.0).unwrap();
        assert!((e - 1.5).abs() < 1e-14);
        let e = chart_endpoint(0.3, 1.2, PI, 0.0).unwrap();
        assert!((e + 0.9).abs() < 1e-14);
        // Straight down lands at the foot point; straight up escapes.
        let e = chart_endpoint(0.3, 1.2, -FRAC_PI_2, 0.0).unwrap();
        assert!((e - 0.3).abs() < 1e-14);
        assert!(chart_endpoint(0.3, 1.2, FRAC_PI_2, 0.0).is_none());

        // Unit-field-style arc, curvature 0.6, from (0, 1) heading up: the
        // trace circle has flat curvature (0.6 - 0)/1, center (-5/3, 1),
        // radius 5/3, boundary crossings -5/3 ± 4/3 = {-3, -1/3}; rotating
        // counterclockwise from position angle 0 the first crossing is -3.
        let e = chart_endpoint(0.0, 1.0, FRAC_PI_2, 0.6).unwrap();
        assert!((e + 3.0).abs() < 1e-12);

        // Straight descending trace at cos angle = kappa: the chart line
        // (x + 0.6 t, y - 0.8 t) meets y = 0 at t = y/0.8.
        let beta = (0.6f64).acos();
        let e = chart_endpoint(0.3, 1.2, -beta, 0.6).unwrap();
        assert!((e - (0.3 + 0.75 * 1.2)).abs() < 1e-12);
        // The same angle climbing is the straight escape ray.
        assert!(chart_endpoint(0.3, 1.2, beta, 0.6).is_none());
    }

    #[test]
    fn compactify_is_continuous_through_infinity() {
        assert_eq!(compactify(None), PI);
        assert_eq!(compactify(Some(0.0)), 0.0);
        let near_plus = compactify(Some(1e15));
        let near_minus = compactify(Some(-1e15));
        assert!(wrap_angle(near_plus - PI).abs() < 1e-14);
        assert!(wrap_angle(near_minus - PI).abs() < 1e-14);
    }

    #[test]
    fn constant_model_endpoints_match_the_arc_oracle() {
        // Same circle as in the chart-level oracle: forward crossing -3,
        // backward crossing -1/3.  No support disks, so both endpoints come
        // from the closed form with no integration at all.
        let model = SurfaceModel::constant_kappa(0.6).unwrap();
        let v = UnitVector::new(0.0, 1.0, FRAC_PI_2);
        let opts = OdeOptions::default();
        let fwd = forward_endpoint(&model, &v, &opts).unwrap();
        let bwd = backward_endpoint(&model, &v, &opts).unwrap();
        assert!(wrap_angle(fwd - compactify(Some(-3.0))).abs() < 1e-13);
        assert!(wrap_angle(bwd - compactify(Some(-1.0 / 3.0))).abs() < 1e-13);
    }

    #[test]
    fn hyperbolic_vertical_endpoints() {
        let model = SurfaceModel::hyperbolic();
        let v = UnitVector::new(0.7, 2.0, FRAC_PI_2);
        let opts = OdeOptions::default();
        let fwd = forward_endpoint(&model, &v, &opts).unwrap();
        let bwd = backward_endpoint(&model, &v, &opts).unwrap();
        assert!(wrap_angle(fwd - PI).abs() < 1e-13);
        assert!(wrap_angle(bwd - compactify(Some(0.7))).abs() < 1e-13);
    }

    #[test]
    fn forward_endpoint_is_flow_invariant_across_the_bumps() {
        let model = fixture();
        let opts = OdeOptions::default();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let u0 = forward_endpoint(&model, &v, &opts).unwrap();
        for &t in &[1.0, 2.5, 6.0, 12.0] {
            let w = flow_to(&model, &v, t, &opts).unwrap();
            let ut = forward_endpoint(&model, &w, &opts).unwrap();
            assert!(
                wrap_angle(ut - u0).abs() < 2e-8,
                "endpoint drifted by {:.3e} at t = {}",
                wrap_angle(ut - u0).abs(),
                t
            );
        }
    }

    #[test]
    fn asymptotic_vector_to_infinity_is_vertical_on_hyperbolic() {
        let model = SurfaceModel::hyperbolic();
        let opts = OdeOptions::default();
        let v = UnitVector::new(0.0, 1.0, FRAC_PI_2);
        let p = ChartPoint::new(3.0, 0.7);
        let va = asymptotic_vector(&model, p, &v, 1e-8, &opts).unwrap();
        assert!(wrap_angle(va.angle - FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn asymptotic_vector_is_the_flow_direction_on_the_same_orbit() {
        let model = fixture();
        let opts = OdeOptions::default();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let w = flow_to(&model, &v, 3.0, &opts).unwrap();
        let va = asymptotic_vector(&model, w.point, &v, 1e-8, &opts).unwrap();
        assert!(
            wrap_angle(va.angle - w.angle).abs() < 1e-6,
            "asymptotic angle differs from flow direction by {:.3e}",
            wrap_angle(va.angle - w.angle).abs()
        );
    }

    /// Distance from a point to the reference orbit curve, by dense scan plus
    /// one parabolic refinement around the best parameter.
    fn dist_to_orbit(orbit: &OrbitSegment, p: ChartPoint, around: f64) -> f64 {
        let d_at = |s: f64| SurfaceModel::closed_form_distance(orbit.unit_at(s).point, p);
        let (lo, hi) = ((around - 2.0).max(0.0), (around + 2.0).min(orbit.t_end()));
        let n = 200;
        let mut best = (lo, f64::INFINITY);
        for i in 0..=n {
            let s = lo + (hi - lo) * i as f64 / n as f64;
            let d = d_at(s);
            if d < best.1 {
                best = (s, d);
            }
        }
        let h = (hi - lo) / n as f64;
        let (dm, d0, dp) = (d_at(best.0 - h), best.1, d_at(best.0 + h));
        let den = dm - 2.0 * d0 + dp;
        if den > 0.0 {
            let s = best.0 + 0.5 * h * (dm - dp) / den;
            d_at(s).min(d0)
        } else {
            d0
        }
    }

    #[test]
    fn asymptotic_orbits_contract_at_the_stable_rate() {
        // Constant field 0.6 over curvature -1: a vector on the asymptotic
        // leaf approaches the reference orbit (as a curve; points at equal
        // times keep a fixed parameter offset) like e^{-λt}, λ = √(1 - 0.6²).
        let model = SurfaceModel::constant_kappa(0.6).unwrap();
        let opts = OdeOptions::default();
        let v = UnitVector::new(0.0, 1.0, 0.9);
        let p = ChartPoint::new(1.3, 0.8);
        let va = asymptotic_vector(&model, p, &v, 1e-10, &opts).unwrap();
        let orbit = OrbitSegment::compute(&model, &v, 9.0, &opts).unwrap();
        let mut d = Vec::new();
        for &t in &[2.0, 4.0, 6.0] {
            let b = flow_to(&model, &va, t, &opts).unwrap();
            d.push(dist_to_orbit(&orbit, b.point, t));
        }
        let expected = (-1.6f64).exp();
        let r1 = d[1] / d[0];
        let r2 = d[2] / d[1];
        assert!((r1 / expected - 1.0).abs() < 0.2, "ratio {} vs {}", r1, expected);
        assert!((r2 / expected - 1.0).abs() < 0.1, "ratio {} vs {}", r2, expected);
    }

    #[test]
    fn anchored_spine_stays_on_the_leaf() {
        let model = fixture();
        let opts = OdeOptions::default();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let target = forward_endpoint(&model, &v, &opts).unwrap();
        let mut spine = Spine::new(&v, SPINE_CHUNK);
        let mut anchor = endpoint_reanchor(false, opts.clone());
        spine.ensure(&model, 16.0, &opts, &mut anchor).unwrap();
        assert!(spine.covered() >= 16.0);
        // Corrections absorb only integration drift, so they stay tiny.
        assert!(
            spine.max_correction() < 1e-5,
            "max correction {:.3e}",
            spine.max_correction()
        );
        // The far tail still has the original ideal endpoint.
        let tail = spine.unit_at(16.0);
        let ut = forward_endpoint(&model, &tail, &opts).unwrap();
        assert!(wrap_angle(ut - target).abs() < 1e-7);
        // Sampled q agrees with a direct evaluation at the sampled state.
        let s = spine.unit_at(3.7);
        let direct = model.q_at(s.point, s.angle);
        assert!((spine.q_at(&model, 3.7) - direct).abs() < 1e-12);
    }

    #[test]
    fn backward_spine_runs_and_covers() {
        let model = fixture();
        let opts = OdeOptions::default();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let mut spine = Spine::new(&v, -SPINE_CHUNK);
        let mut anchor = endpoint_reanchor(true, opts.clone());
        spine.ensure(&model, -8.0, &opts, &mut anchor).unwrap();
        assert!(spine.covered() <= -8.0);
        assert!(spine.max_correction() < 1e-5);
        // Spine states agree with direct flow at moderate range.
        let direct = flow_to(&model, &v, -3.0, &opts).unwrap();
        let s = spine.unit_at(-3.0);
        assert!((s.point.x - direct.point.x).abs() < 1e-6);
        assert!((s.point.y - direct.point.y).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]
        #[test]
        fn endpoint_invariance_random(
            x in -1.0f64..5.0,
            y in 0.6f64..3.0,
            angle in -3.1f64..3.1,
            t in 0.5f64..3.0,
        ) {
            let model = fixture();
            let opts = OdeOptions::default();
            let v = UnitVector::new(x, y, angle);
            let u0 = forward_endpoint(&model, &v, &opts).unwrap();
            let w = flow_to(&model, &v, t, &opts).unwrap();
            let ut = forward_endpoint(&model, &w, &opts).unwrap();
            prop_assert!(wrap_angle(ut - u0).abs() < 1e-6);
        }
    }
}
