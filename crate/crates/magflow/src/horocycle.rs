//! Stable horocycles: level curves of the horofunction of an orbit class,
//! traced together with the asymptotic direction field along them, their
//! geodesic curvature, and the stable push of chart points along the class.
//!
//! The curve through the base point of `v` is integrated from
//! `c' = w_-·v_s + N(v_s)`, where `v_s` is the asymptotic vector of the class
//! at `c(s)` and `w_-` its stable tangential component; `v_s` itself evolves
//! by its known covariant rate `(u_- + κ w_-)·N(v_s)` and is re-projected
//! onto the class at regular intervals so direction drift cannot accumulate.
//! The parametrization pairs to 1 against the normal by construction.

use crate::boundary::asymptotic_vector;
use crate::chart::{angle_diff, ChartPoint, TangentVector, UnitVector};
use crate::error::Error;
use crate::flow::flow_to;
use crate::model::SurfaceModel;
use crate::ode::OdeOptions;
use crate::quad::CubicHermite;
use crate::riccati::stable_riccati;
use crate::Result;

/// Target parameter step of the trace grid (the actual step divides the
/// requested half-span exactly).
const TRACE_STEP: f64 = 0.02;
/// Steps between re-projections of the direction field onto the class.
const REPROJECT_EVERY: usize = 25;
/// Direction drift at a re-projection beyond which the trace is rejected.
const DRIFT_CAP: f64 = 0.02;
/// Half-width of the centered difference applied to the cached tangential
/// component when cross-checking the curvature identity.
const IDENTITY_DIFF_H: f64 = 1e-3;
/// Cross-check defect above which a node is flagged.
const DEFECT_FLAG: f64 = 1e-3;

/// One grid node of a traced horocycle.
#[derive(Debug, Clone, Copy)]
pub struct HorocycleNode {
    /// Curve parameter.
    pub s: f64,
    /// Asymptotic vector of the class at the node (base point on the curve).
    pub v: UnitVector,
    /// Stable contraction ratio at the node vector.
    pub u_minus: f64,
    /// Stable tangential component at the node vector.
    pub w_minus: f64,
    /// Geodesic curvature of the curve at the node.
    pub kappa_minus: f64,
    /// Disagreement between the two curvature evaluations at the node.
    pub curvature_defect: f64,
}

/// A traced stable horocycle over `s ∈ [-S, S]` on a uniform grid.
pub struct HorocycleCurve {
    generator: UnitVector,
    step: f64,
    nodes: Vec<HorocycleNode>,
    max_drift: f64,
    spline_x: CubicHermite,
    spline_y: CubicHermite,
    spline_angle: CubicHermite,
    spline_w: CubicHermite,
    spline_kappa: CubicHermite,
}

impl HorocycleCurve {
    pub fn generator(&self) -> &UnitVector {
        &self.generator
    }

    /// Uniform grid step actually used.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Traced half-span: nodes cover `[-s_max, s_max]`.
    pub fn s_max(&self) -> f64 {
        self.nodes.last().map(|n| n.s).unwrap_or(0.0)
    }

    /// Grid nodes in ascending parameter order.
    pub fn nodes(&self) -> &[HorocycleNode] {
        &self.nodes
    }

    /// Largest direction correction applied at any re-projection.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    /// Largest curvature cross-check defect over the nodes.
    pub fn max_curvature_defect(&self) -> f64 {
        self.nodes
            .iter()
            .fold(0.0, |m, n| m.max(n.curvature_defect))
    }

    /// Curve point at parameter `s` (cubic interpolation between nodes).
    pub fn point(&self, s: f64) -> ChartPoint {
        ChartPoint::new(self.spline_x.eval(s), self.spline_y.eval(s))
    }

    /// Asymptotic vector of the class at parameter `s`.
    pub fn vector_at(&self, s: f64) -> UnitVector {
        UnitVector {
            point: self.point(s),
            angle: crate::chart::wrap_angle(self.spline_angle.eval(s)),
        }
    }

    /// Stable tangential component at parameter `s`.
    pub fn w_minus_at(&self, s: f64) -> f64 {
        self.spline_w.eval(s)
    }

    /// Chart components of the curve velocity `c'(s) = w_-·v_s + N(v_s)`.
    pub fn velocity(&self, model: &SurfaceModel, s: f64) -> TangentVector {
        let v = self.vector_at(s);
        let w = self.w_minus_at(s);
        velocity_of(model, &v, w)
    }
}

fn velocity_of(model: &SurfaceModel, v: &UnitVector, w: f64) -> TangentVector {
    let inv = 1.0 / model.conformal_factor(v.point);
    let (sin_a, cos_a) = v.angle.sin_cos();
    TangentVector::new(
        v.point,
        inv * (w * cos_a - sin_a),
        inv * (w * sin_a + cos_a),
    )
}

/// Geodesic curvature of the traced curve at parameter `s` (cubic
/// interpolation of the per-node values).
pub fn horocycle_curvature(curve: &HorocycleCurve, s: f64) -> f64 {
    curve.spline_kappa.eval(s)
}

/// Pushes a chart point along the stable class of `v` by flow time `t`: the
/// asymptotic vector at the point is flowed and projected back to the chart.
pub fn stable_push(
    model: &SurfaceModel,
    v: &UnitVector,
    p: ChartPoint,
    t: f64,
    tol: f64,
    opts: &OdeOptions,
) -> Result<ChartPoint> {
    let vp = asymptotic_vector(model, p, v, tol, opts)?;
    Ok(flow_to(model, &vp, t, opts)?.point)
}

/// Traces the stable horocycle through the base point of `v` over
/// `s ∈ [-s_max, s_max]`.
pub fn trace_horocycle(
    model: &SurfaceModel,
    v: &UnitVector,
    s_max: f64,
    tol: f64,
    opts: &OdeOptions,
) -> Result<HorocycleCurve> {
    assert!(s_max > 0.0 && s_max.is_finite());
    model.check_point(v.point)?;
    let n = (s_max / TRACE_STEP).ceil().max(2.0) as usize;
    let h = s_max / n as f64;
    let data_tol = (0.1 * tol).clamp(1e-9, 1e-7);

    // The generator direction is itself re-projected once so the traced curve
    // starts exactly on the class even if `v` carries a slightly off angle.
    let v0 = asymptotic_vector(model, v.point, v, data_tol, opts)?;

    let mut max_drift = 0.0f64;
    let forward = trace_side(model, &v0, v, h, n, 1.0, data_tol, opts, &mut max_drift)?;
    let backward = trace_side(model, &v0, v, h, n, -1.0, data_tol, opts, &mut max_drift)?;

    // Assemble ascending nodes: reversed backward side, then the forward side
    // (which contributes the shared s = 0 node).
    let mut raw: Vec<RawNode> = backward.into_iter().skip(1).rev().collect();
    raw.extend(forward);

    let nodes = finish_nodes(model, &raw, h);
    let xs: Vec<f64> = raw.iter().map(|r| r.s).collect();
    let spline_x = CubicHermite::new(xs.clone(), raw.iter().map(|r| r.x).collect());
    let spline_y = CubicHermite::new(xs.clone(), raw.iter().map(|r| r.y).collect());
    let spline_angle = CubicHermite::new(xs.clone(), raw.iter().map(|r| r.angle).collect());
    let spline_w = CubicHermite::new(xs.clone(), raw.iter().map(|r| r.w).collect());
    let spline_kappa =
        CubicHermite::new(xs, nodes.iter().map(|nd| nd.kappa_minus).collect());

    Ok(HorocycleCurve {
        generator: v0,
        step: h,
        nodes,
        max_drift,
        spline_x,
        spline_y,
        spline_angle,
        spline_w,
        spline_kappa,
    })
}

/// Raw trace state at a node: position, continuous (unwrapped) direction
/// angle, and the stable data evaluated there.
struct RawNode {
    s: f64,
    x: f64,
    y: f64,
    angle: f64,
    u: f64,
    w: f64,
}

/// Derivative of the trace state `[x, y, angle]` at a state, together with
/// the stable data used to form it.
fn trace_rhs(
    model: &SurfaceModel,
    st: &[f64; 3],
    data_tol: f64,
    opts: &OdeOptions,
) -> Result<([f64; 3], f64, f64)> {
    let vp = UnitVector::new(st[0], st[1], crate::chart::wrap_angle(st[2]));
    let d = stable_riccati(model, &vp, data_tol, opts)?;
    let vel = velocity_of(model, &vp, d.w_minus);
    let rate = d.u_minus + model.kappa(vp.point) * d.w_minus
        - model.connection_form(vp.point, vel.dx, vel.dy);
    Ok(([vel.dx, vel.dy, rate], d.u_minus, d.w_minus))
}

#[allow(clippy::too_many_arguments)]
fn trace_side(
    model: &SurfaceModel,
    v0: &UnitVector,
    class: &UnitVector,
    h: f64,
    n: usize,
    dir: f64,
    data_tol: f64,
    opts: &OdeOptions,
    max_drift: &mut f64,
) -> Result<Vec<RawNode>> {
    let mut st = [v0.point.x, v0.point.y, v0.angle];
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let s = dir * h * i as f64;
        let (k1, u, w) = trace_rhs(model, &st, data_tol, opts)?;
        out.push(RawNode {
            s,
            x: st[0],
            y: st[1],
            angle: st[2],
            u,
            w,
        });
        if i == n {
            break;
        }
        let hh = dir * h;
        let at = |b: &[f64; 3], k: &[f64; 3], c: f64| {
            [b[0] + c * hh * k[0], b[1] + c * hh * k[1], b[2] + c * hh * k[2]]
        };
        let (k2, _, _) = trace_rhs(model, &at(&st, &k1, 0.5), data_tol, opts)?;
        let (k3, _, _) = trace_rhs(model, &at(&st, &k2, 0.5), data_tol, opts)?;
        let (k4, _, _) = trace_rhs(model, &at(&st, &k3, 1.0), data_tol, opts)?;
        for j in 0..3 {
            st[j] += hh / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if (i + 1) % REPROJECT_EVERY == 0 || i + 1 == n {
            let p = ChartPoint::new(st[0], st[1]);
            let va = asymptotic_vector(model, p, class, data_tol, opts)?;
            let drift = angle_diff(va.angle, crate::chart::wrap_angle(st[2]));
            if drift.abs() > DRIFT_CAP {
                return Err(Error::NoConvergence {
                    what: "horocycle direction drift at re-projection",
                    residual: drift,
                });
            }
            *max_drift = max_drift.max(drift.abs());
            st[2] += drift;
        }
    }
    Ok(out)
}

/// Finishes raw nodes into public ones: geodesic curvature by the covariant
/// determinant formula (derivatives by five-point stencils on the uniform
/// grid), cross-checked against the tangential-data identity.
fn finish_nodes(model: &SurfaceModel, raw: &[RawNode], h: f64) -> Vec<HorocycleNode> {
    let m = raw.len();
    let vel: Vec<(f64, f64)> = raw
        .iter()
        .map(|r| {
            let v = UnitVector::new(r.x, r.y, r.angle);
            let t = velocity_of(model, &v, r.w);
            (t.dx, t.dy)
        })
        .collect();
    let dvx = stencil_derivatives(&vel.iter().map(|t| t.0).collect::<Vec<_>>(), h);
    let dvy = stencil_derivatives(&vel.iter().map(|t| t.1).collect::<Vec<_>>(), h);

    let xs: Vec<f64> = raw.iter().map(|r| r.s).collect();
    let w_spline = CubicHermite::new(xs, raw.iter().map(|r| r.w).collect());

    let mut out = Vec::with_capacity(m);
    for (i, r) in raw.iter().enumerate() {
        let p = ChartPoint::new(r.x, r.y);
        let (cx, cy) = vel[i];
        let j = model.log_factor_jet(p);
        // Covariant derivative of the velocity along the curve: the flat
        // derivative plus the conformal Christoffel terms.
        let ax = dvx[i] + j.dx * (cx * cx - cy * cy) + 2.0 * j.dy * cx * cy;
        let ay = dvy[i] - j.dy * (cx * cx - cy * cy) + 2.0 * j.dx * cx * cy;
        let flat_norm = cx.hypot(cy);
        let kappa_det = (cx * ay - cy * ax) * (-j.v).exp() / flat_norm.powi(3);

        let dw = (w_spline.eval(r.s + IDENTITY_DIFF_H) - w_spline.eval(r.s - IDENTITY_DIFF_H))
            / (2.0 * IDENTITY_DIFF_H);
        let one_w2 = 1.0 + r.w * r.w;
        let kappa_id =
            (one_w2 * (r.u + model.kappa(p) * r.w) - dw) / one_w2.powf(1.5);
        out.push(HorocycleNode {
            s: r.s,
            v: UnitVector::new(r.x, r.y, crate::chart::wrap_angle(r.angle)),
            u_minus: r.u,
            w_minus: r.w,
            kappa_minus: kappa_det,
            curvature_defect: (kappa_det - kappa_id).abs(),
        });
    }
    out
}

/// Whether any node's curvature cross-check defect exceeds the flag level.
pub fn flagged_nodes(curve: &HorocycleCurve) -> Vec<usize> {
    curve
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.curvature_defect > DEFECT_FLAG)
        .map(|(i, _)| i)
        .collect()
}

/// Five-point (fourth-order) first derivatives on a uniform grid, with
/// one-sided stencils at the boundary; falls back to three-point stencils
/// when fewer than five samples exist.
pub(crate) fn stencil_derivatives(ys: &[f64], h: f64) -> Vec<f64> {
    let n = ys.len();
    let mut out = vec![0.0; n];
    if n < 5 {
        for i in 0..n {
            out[i] = if i == 0 {
                (ys[1] - ys[0]) / h
            } else if i == n - 1 {
                (ys[n - 1] - ys[n - 2]) / h
            } else {
                (ys[i + 1] - ys[i - 1]) / (2.0 * h)
            };
        }
        return out;
    }
    for i in 0..n {
        out[i] = if i >= 2 && i + 2 < n {
            (ys[i - 2] - 8.0 * ys[i - 1] + 8.0 * ys[i + 1] - ys[i + 2]) / (12.0 * h)
        } else {
            // One-sided fourth-order stencil on the outermost five samples,
            // mirrored at the right edge; `base` picks the coefficient row.
            let (sgn, base) = if i < 2 { (1.0, i) } else { (-1.0, n - 1 - i) };
            let g = |k: usize| if sgn > 0.0 { ys[k] } else { ys[n - 1 - k] };
            let d = match base {
                0 => -25.0 / 12.0 * g(0) + 4.0 * g(1) - 3.0 * g(2) + 4.0 / 3.0 * g(3)
                    - 0.25 * g(4),
                _ => -0.25 * g(0) - 5.0 / 6.0 * g(1) + 1.5 * g(2) - 0.5 * g(3)
                    + 1.0 / 12.0 * g(4),
            };
            sgn * d / h
        };
    }
    out
}
