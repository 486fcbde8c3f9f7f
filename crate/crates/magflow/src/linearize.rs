//! The straightening map of a forward-asymptotic class: every chart point is
//! written as "flow for time `r` from the level curve, at curve parameter
//! `s`", and mapped to `r·v + e(s)·N(v)` in the orthonormal frame at the base
//! foot, where `e(s)` accumulates the transfer ratio along the level curve.
//! Companion operations give the map's derivative (a frame-diagonal transfer
//! map, cross-checked by finite differences), its flow equivariance residual,
//! and a sup-residual comparator between two models linked by a chart map.

use serde::{Deserialize, Serialize};

use crate::boundary::{asymptotic_vector, bracketed_root};
use crate::busemann::busemann;
use crate::chart::{ChartPoint, UnitVector};
use crate::error::Error;
use crate::flow::flow_to;
use crate::horocycle::{stable_push, trace_horocycle, HorocycleCurve};
use crate::model::SurfaceModel;
use crate::ode::OdeOptions;
use crate::quad::CubicHermite;
use crate::riccati::StabilityProfiles;
use crate::Result;

/// Spacing of the transfer-ratio samples along the level curve.
const RATIO_SAMPLE_STEP: f64 = 0.1;
/// Cauchy-test spacing and growth schedule of the shared ratio horizon.
const HORIZON_DT: f64 = 2.0;
const HORIZON_GROW: f64 = 8.0;
const HORIZON_CAP: f64 = 44.0;
/// Initial half-span of the traced level curve and its growth cap.
const SPAN_START: f64 = 2.0;
const SPAN_CAP: f64 = 16.0;
/// Chart step of the finite-difference derivative cross-check.
const FD_STEP: f64 = 1e-4;
/// Relative finite-difference disagreement that flags a derivative.
const FD_FLAG: f64 = 1e-3;
/// Marker of a projection falling outside the traced curve span.
const SPAN_MISS: &str = "level-curve coordinate of the projected point";
/// Search cap for the implicit level-value solve on far-free models.
const LEVEL_RANGE: f64 = 24.0;

/// The image of one chart point under the straightening map, in the
/// orthonormal frame (class vector, its normal) at the base foot.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinearizationSample {
    /// Source point.
    pub p: ChartPoint,
    /// Coordinate along the class vector: the horofunction value.
    pub longitudinal: f64,
    /// Coordinate along the normal: the accumulated transfer integral.
    pub transverse: f64,
    pub error_estimate: f64,
}

/// Derivative of the straightening map at a point: diagonal in the frames
/// (class vector, normal) at the two feet.
///
/// The transverse eigenvalue is the transfer ratio to the level-zero curve
/// point below `p`, rescaled by the backward decay from that curve up to
/// `p`'s level. On the level-zero curve itself the rescaling is 1 and the
/// eigenvalue reduces to the plain transfer ratio `transfer`; away from it
/// the two differ by exactly that decay factor (visible already in the
/// unperturbed plane, where the eigenvalue is `y` while the ratio is 1).
#[derive(Debug, Clone, Copy)]
pub struct DerivativeSample {
    /// The true derivative in frames: identity on the longitudinal
    /// component, the rescaled ratio on the transverse one.
    pub frame_map: [[f64; 2]; 2],
    /// The transfer ratio from the base vector to the class vector at the
    /// sample point.
    pub transfer: f64,
    /// Relative disagreement of the finite-difference cross-check against
    /// `frame_map`.
    pub fd_defect: f64,
    /// Set when the cross-check exceeded its agreement threshold.
    pub flagged: bool,
}

impl DerivativeSample {
    pub fn determinant(&self) -> f64 {
        self.frame_map[1][1]
    }
}

/// Rectangular evaluation grid `x0..x1 × y0..y1`, row-major.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSpec {
    pub x0: f64,
    pub x1: f64,
    pub nx: usize,
    pub y0: f64,
    pub y1: f64,
    pub ny: usize,
}

impl GridSpec {
    /// Parses `"x0:x1:nx,y0:y1:ny"`.
    pub fn parse(text: &str) -> Result<GridSpec> {
        let bad = || Error::Config {
            msg: format!("grid must be x0:x1:nx,y0:y1:ny, got {text:?}"),
        };
        let (xs, ys) = text.split_once(',').ok_or_else(bad)?;
        let axis = |part: &str| -> Result<(f64, f64, usize)> {
            let mut it = part.split(':');
            let lo: f64 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let hi: f64 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let n: usize = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if it.next().is_some() || n < 2 || !(lo < hi) {
                return Err(bad());
            }
            Ok((lo, hi, n))
        };
        let (x0, x1, nx) = axis(xs)?;
        let (y0, y1, ny) = axis(ys)?;
        Ok(GridSpec { x0, x1, nx, y0, y1, ny })
    }

    /// All grid points, row-major from `(x0, y0)`.
    pub fn points(&self) -> Vec<ChartPoint> {
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            let t = j as f64 / (self.ny - 1) as f64;
            let y = self.y0 + t * (self.y1 - self.y0);
            for i in 0..self.nx {
                let s = i as f64 / (self.nx - 1) as f64;
                out.push(ChartPoint::new(self.x0 + s * (self.x1 - self.x0), y));
            }
        }
        out
    }

    /// The four corner points.
    pub fn corners(&self) -> [ChartPoint; 4] {
        [
            ChartPoint::new(self.x0, self.y0),
            ChartPoint::new(self.x1, self.y0),
            ChartPoint::new(self.x0, self.y1),
            ChartPoint::new(self.x1, self.y1),
        ]
    }
}

/// Result of comparing two straightening maps over a grid through a chart
/// map between the models.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchReport {
    pub grid: GridSpec,
    pub sup_residual: f64,
    pub argmax_point: ChartPoint,
}

/// Shared context for straightening one class: the traced level curve, the
/// backward profile of the base vector, and the transfer-ratio integral
/// along the curve, all reusable across sample points.
pub struct Linearizer<'m> {
    model: &'m SurfaceModel,
    v: UnitVector,
    tol: f64,
    ttol: f64,
    ptol: f64,
    opts: OdeOptions,
    horizon: f64,
    curve: HorocycleCurve,
    profile_v: StabilityProfiles,
    x_spline: CubicHermite,
    prefix0: f64,
}

impl<'m> Linearizer<'m> {
    /// Builds the context with a level curve of half-span `s_span`.
    pub fn new(
        model: &'m SurfaceModel,
        v: &UnitVector,
        s_span: f64,
        tol: f64,
        opts: &OdeOptions,
    ) -> Result<Self> {
        let ttol = (0.1 * tol).clamp(1e-9, 1e-6);
        let ptol = (0.1 * ttol).clamp(1e-11, 1e-7);
        let curve = trace_horocycle(model, v, s_span, tol, opts)?;
        let v0 = *curve.generator();

        let stride = (RATIO_SAMPLE_STEP / curve.step()).round().max(1.0) as usize;
        let n_nodes = curve.nodes().len();
        let mut idx: Vec<usize> = (0..n_nodes).step_by(stride).collect();
        if *idx.last().unwrap() != n_nodes - 1 {
            idx.push(n_nodes - 1);
        }

        if crate::transfer::needs_telescoping(model) {
            // No far constants, so long forward spines cannot be re-anchored
            // onto the class and a shared ratio horizon drifts into noise;
            // telescope each node ratio down the leaf instead.  One leg of
            // unstable-direction drift caps the achievable accuracy, hence
            // the floor on the acceptance band.
            let rtol_ratio = ttol.max(RATIO_FLOOR);
            let mut xs = Vec::with_capacity(idx.len());
            let mut ratios = Vec::with_capacity(idx.len());
            let mut band = 0.0f64;
            let mut length = 0.0f64;
            for &i in &idx {
                let node = curve.nodes()[i];
                let r = crate::transfer::leafwise_log_ratios(
                    model,
                    &v0,
                    &node.v,
                    rtol_ratio,
                    opts,
                )?;
                band = band.max(r.band);
                length = length.max(r.length);
                xs.push(node.s);
                ratios.push(r.ln_minus.exp());
            }
            if band > rtol_ratio {
                return Err(Error::NoCauchy {
                    what: "transfer ratios along the level curve",
                    horizon: length,
                    last_delta: band,
                });
            }
            let profile_v = StabilityProfiles::compute(model, &v0, 0.0, ptol, opts)?;
            let x_spline = CubicHermite::new(xs, ratios);
            let prefix0 = x_spline.prefix_integral(0.0);
            return Ok(Linearizer {
                model,
                v: v0,
                tol,
                ttol,
                ptol,
                opts: opts.clone(),
                horizon: length,
                curve,
                profile_v,
                x_spline,
                prefix0,
            });
        }

        let q1 = model.bounds().q1;
        let shrink = 1.0 - (-q1 * HORIZON_DT).exp();
        let mut horizon = (ttol.recip().ln() / q1).clamp(8.0, 30.0);
        loop {
            let profile_v = StabilityProfiles::compute(model, &v0, horizon, ptol, opts)?;
            let nodes = curve.nodes();
            let mut xs = Vec::with_capacity(idx.len());
            let mut ratios = Vec::with_capacity(idx.len());
            let mut band = 0.0f64;
            for &i in &idx {
                let pf = StabilityProfiles::compute(model, &nodes[i].v, horizon, ptol, opts)?;
                let lx = pf.z_minus(horizon) - profile_v.z_minus(horizon);
                let lx_prev = pf.z_minus(horizon - HORIZON_DT)
                    - profile_v.z_minus(horizon - HORIZON_DT);
                band = band.max((lx - lx_prev).abs() / shrink + pf.error_estimate());
                xs.push(nodes[i].s);
                ratios.push(lx.exp());
            }
            band += profile_v.error_estimate();
            if band <= ttol {
                let x_spline = CubicHermite::new(xs, ratios);
                let prefix0 = x_spline.prefix_integral(0.0);
                return Ok(Linearizer {
                    model,
                    v: v0,
                    tol,
                    ttol,
                    ptol,
                    opts: opts.clone(),
                    horizon,
                    curve,
                    profile_v,
                    x_spline,
                    prefix0,
                });
            }
            if horizon >= HORIZON_CAP {
                return Err(Error::NoCauchy {
                    what: "transfer ratios along the level curve",
                    horizon,
                    last_delta: band,
                });
            }
            horizon = (horizon + HORIZON_GROW).min(HORIZON_CAP);
        }
    }

    /// Builds a context whose curve span covers every target point, growing
    /// the span geometrically until each target projects inside it.
    pub fn covering(
        model: &'m SurfaceModel,
        v: &UnitVector,
        targets: &[ChartPoint],
        tol: f64,
        opts: &OdeOptions,
    ) -> Result<Self> {
        let mut span = SPAN_START;
        loop {
            let lin = Linearizer::new(model, v, span, tol, opts)?;
            let mut uncovered = None;
            for &p in targets {
                match lin.sample(p) {
                    Ok(_) => {}
                    Err(Error::NoBracket { what, .. })
                        if what == SPAN_MISS && span < SPAN_CAP =>
                    {
                        uncovered = Some(p);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            match uncovered {
                None => return Ok(lin),
                Some(_) => span = (span * 2.0).min(SPAN_CAP),
            }
        }
    }

    pub fn generator(&self) -> &UnitVector {
        &self.v
    }

    pub fn curve(&self) -> &HorocycleCurve {
        &self.curve
    }

    /// Accumulated transfer integral `∫₀ˢ X` along the level curve.
    pub fn transfer_integral(&self, s: f64) -> f64 {
        self.x_spline.prefix_integral(s) - self.prefix0
    }

    /// Curve parameter of the orthogonal projection of `q` onto the level
    /// curve; errors with the span-miss marker when the projection falls
    /// outside the traced span.
    fn project(&self, q: ChartPoint) -> Result<f64> {
        let nodes = self.curve.nodes();
        let (mut best, mut best_d2) = (0usize, f64::INFINITY);
        for (i, n) in nodes.iter().enumerate() {
            let d2 = (n.v.point.x - q.x).powi(2) + (n.v.point.y - q.y).powi(2);
            if d2 < best_d2 {
                best = i;
                best_d2 = d2;
            }
        }
        if best == 0 || best == nodes.len() - 1 {
            return Err(Error::NoBracket {
                what: SPAN_MISS,
                near: nodes[best].s,
            });
        }
        let mut h = |s: f64| -> Result<f64> {
            let c = self.curve.point(s);
            let t = self.curve.velocity(self.model, s);
            Ok((c.x - q.x) * t.dx + (c.y - q.y) * t.dy)
        };
        let (a, b) = (nodes[best - 1].s, nodes[best + 1].s);
        let (ha, hb) = (h(a)?, h(b)?);
        if ha == 0.0 {
            Ok(a)
        } else if hb == 0.0 {
            Ok(b)
        } else if ha.signum() == hb.signum() {
            // The projection sits numerically on a node; keep the closer end.
            Ok(if ha.abs() < hb.abs() { a } else { b })
        } else {
            bracketed_root(&mut h, a, b, ha, hb, 1e-13)
        }
    }

    /// Locates the level-curve parameter of a point that lies on the curve,
    /// returning it with the residual chart distance.
    fn locate(&self, q: ChartPoint) -> Result<(f64, f64)> {
        let s = self.project(q)?;
        Ok((s, self.curve.point(s).chart_dist(&q)))
    }

    /// Splits a point into its level value `r` and level-zero curve
    /// parameter `s`, with the chart residual of the curve projection.
    fn factorize(&self, p: ChartPoint) -> Result<(f64, f64, f64)> {
        let btol = (0.1 * self.tol).clamp(1e-9, 1e-7);
        if self.model.far_kappa().is_some() && self.model.far_log_factor().is_some() {
            let r = busemann(self.model, &self.v, p, btol, &self.opts)?;
            let q = stable_push(self.model, &self.v, p, -r, btol, &self.opts)?;
            let (s, defect) = self.locate(q)?;
            return Ok((r, s, self.model.conformal_factor(q) * defect));
        }
        // Without far constants the horofunction evaluation is expensive, so
        // use its defining property directly: the level value is the unique
        // flow time `r` for which pushing `p` along the class by `-r` lands
        // on the level-zero curve (the level grows at unit rate along
        // orbits, so the signed miss has exactly one root).  One asymptotic
        // solve serves every trial `r`.
        let vp = asymptotic_vector(self.model, p, &self.v, btol, &self.opts)?;
        let run = OdeOptions {
            dense: false,
            ..self.opts
        };
        let push = |r: f64| -> Result<ChartPoint> {
            if r == 0.0 {
                Ok(p)
            } else {
                Ok(flow_to(self.model, &vp, -r, &run)?.point)
            }
        };
        let mut miss = |r: f64| -> Result<f64> {
            let q = push(r)?;
            let s = self.project(q)?;
            let c = self.curve.point(s);
            let t = self.curve.velocity(self.model, s);
            Ok(((q.x - c.x) * -t.dy + (q.y - c.y) * t.dx) / t.dx.hypot(t.dy))
        };
        let m0 = miss(0.0)?;
        let r = if m0 == 0.0 {
            0.0
        } else {
            // The root's side is not known in advance; expand both ways.
            let mut step = 0.25;
            let (rl, rh, ml, mh) = loop {
                let mp = miss(step)?;
                if mp.signum() != m0.signum() {
                    break (0.0, step, m0, mp);
                }
                let mn = miss(-step)?;
                if mn.signum() != m0.signum() {
                    break (-step, 0.0, mn, m0);
                }
                step *= 2.0;
                if step > LEVEL_RANGE {
                    return Err(Error::NoBracket {
                        what: "level value of the sample point",
                        near: m0,
                    });
                }
            };
            bracketed_root(&mut miss, rl, rh, ml, mh, 1e-11)?
        };
        let q = push(r)?;
        let (s, defect) = self.locate(q)?;
        Ok((r, s, self.model.conformal_factor(q) * defect))
    }

    #[cfg(test)]
    pub(crate) fn debug_factorize(&self, p: ChartPoint) -> Result<(f64, f64, f64)> {
        self.factorize(p)
    }

    /// Straightens one chart point.
    pub fn sample(&self, p: ChartPoint) -> Result<LinearizationSample> {
        let btol = (0.1 * self.tol).clamp(1e-9, 1e-7);
        let (r, s, defect) = self.factorize(p)?;
        let e = self.transfer_integral(s);
        let error_estimate = btol + defect + self.ttol * s.abs() + 1e-7 * (1.0 + s.abs());
        Ok(LinearizationSample {
            p,
            longitudinal: r,
            transverse: e,
            error_estimate,
        })
    }

    /// Transfer ratio from the base vector to the class vector at `p`,
    /// evaluated at the shared horizon.
    pub fn transfer_at(&self, p: ChartPoint) -> Result<(f64, UnitVector)> {
        let vtol = (0.1 * self.ttol).clamp(1e-12, 1e-8);
        let vp = asymptotic_vector(self.model, p, &self.v, vtol, &self.opts)?;
        let pf = StabilityProfiles::compute(self.model, &vp, self.horizon, self.ptol, &self.opts)?;
        let lx = pf.z_minus(self.horizon) - self.profile_v.z_minus(self.horizon);
        let lx_prev = pf.z_minus(self.horizon - HORIZON_DT)
            - self.profile_v.z_minus(self.horizon - HORIZON_DT);
        let q1 = self.model.bounds().q1;
        let band = (lx - lx_prev).abs() / (1.0 - (-q1 * HORIZON_DT).exp());
        if band > 10.0 * self.ttol {
            return Err(Error::NoCauchy {
                what: "transfer ratio at the sample point",
                horizon: self.horizon,
                last_delta: band,
            });
        }
        Ok((lx.exp(), vp))
    }

    /// Derivative of the straightening map at `p`: frame-diagonal, with the
    /// transverse eigenvalue formed from the level-curve transfer ratio and
    /// the backward decay up to `p`'s level, cross-checked against central
    /// finite differences of `sample` in chart coordinates.
    pub fn derivative(&self, p: ChartPoint) -> Result<DerivativeSample> {
        let (x, vp) = self.transfer_at(p)?;
        let (r, s, _) = self.factorize(p)?;
        let v_s = self.curve.vector_at(s);
        let decay = StabilityProfiles::compute(
            self.model,
            &v_s,
            r.max(0.0),
            self.ptol,
            &self.opts,
        )?
        .y_minus(r);
        let g = self.x_spline.eval(s) / decay;
        let h = FD_STEP;
        let sx_p = self.sample(ChartPoint::new(p.x + h, p.y))?;
        let sx_m = self.sample(ChartPoint::new(p.x - h, p.y))?;
        let sy_p = self.sample(ChartPoint::new(p.x, p.y + h))?;
        let sy_m = self.sample(ChartPoint::new(p.x, p.y - h))?;
        let m_fd = [
            [
                (sx_p.longitudinal - sx_m.longitudinal) / (2.0 * h),
                (sy_p.longitudinal - sy_m.longitudinal) / (2.0 * h),
            ],
            [
                (sx_p.transverse - sx_m.transverse) / (2.0 * h),
                (sy_p.transverse - sy_m.transverse) / (2.0 * h),
            ],
        ];
        // Chart displacements decompose in the frame at `p` through the
        // conformal factor and the class angle; the map is then diagonal.
        let e_rho = self.model.conformal_factor(p);
        let (sin_a, cos_a) = vp.angle.sin_cos();
        let m_pred = [
            [e_rho * cos_a, e_rho * sin_a],
            [g * e_rho * -sin_a, g * e_rho * cos_a],
        ];
        let mut scale = 0.0f64;
        let mut diff = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                scale = scale.max(m_pred[i][j].abs());
                diff = diff.max((m_fd[i][j] - m_pred[i][j]).abs());
            }
        }
        let fd_defect = diff / scale;
        Ok(DerivativeSample {
            frame_map: [[1.0, 0.0], [0.0, g]],
            transfer: x,
            fd_defect,
            flagged: fd_defect > FD_FLAG,
        })
    }
}

/// One-shot straightening of a single point (builds a covering context).
pub fn linearize(
    model: &SurfaceModel,
    v: &UnitVector,
    p: ChartPoint,
    tol: f64,
    opts: &OdeOptions,
) -> Result<LinearizationSample> {
    Linearizer::covering(model, v, &[p], tol, opts)?.sample(p)
}

/// Residual of the flow-equivariance identity: the straightening at the
/// flowed base vector against the longitudinal shift and backward-decay
/// rescaling of the straightening at the base vector, both sides computed
/// independently.
pub fn linearization_equivariance(
    model: &SurfaceModel,
    v: &UnitVector,
    p: ChartPoint,
    t: f64,
    tol: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let s_base = linearize(model, v, p, tol, opts)?;
    let vt = flow_to(model, v, t, opts)?;
    let s_flow = linearize(model, &vt, p, tol, opts)?;
    let ptol = (0.01 * tol).clamp(1e-11, 1e-7);
    let profile = StabilityProfiles::compute(model, v, t.max(0.0), ptol, opts)?;
    let y = profile.y_minus(t);
    let d_long = s_flow.longitudinal - (s_base.longitudinal - t);
    let d_trans = s_flow.transverse - y * s_base.transverse;
    Ok(d_long.hypot(d_trans))
}

/// Sup-residual of `‖E²(f(p)) − E¹(p)‖` over a grid, the two target frames
/// identified; measures whether `f` intertwines the two straightenings.
pub fn linearization_match(
    model1: &SurfaceModel,
    v1: &UnitVector,
    model2: &SurfaceModel,
    v2: &UnitVector,
    f: impl Fn(ChartPoint) -> ChartPoint + Sync,
    grid: &GridSpec,
    tol: f64,
    opts: &OdeOptions,
) -> Result<MatchReport> {
    let corners1 = grid.corners();
    let corners2 = corners1.map(&f);
    let lin1 = Linearizer::covering(model1, v1, &corners1, tol, opts)?;
    let lin2 = Linearizer::covering(model2, v2, &corners2, tol, opts)?;
    let points = grid.points();
    let residuals = crate::batch::map(&points, |&p| -> Result<f64> {
        let a = lin1.sample(p)?;
        let b = lin2.sample(f(p))?;
        Ok((b.longitudinal - a.longitudinal).hypot(b.transverse - a.transverse))
    });
    let mut sup = -1.0;
    let mut argmax = points[0];
    for (p, r) in points.iter().zip(residuals) {
        let r = r?;
        if r > sup {
            sup = r;
            argmax = *p;
        }
    }
    Ok(MatchReport {
        grid: *grid,
        sup_residual: sup,
        argmax_point: argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Mobius;
    use crate::field::ScalarField;
    use crate::model::test_perturbed_model;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn base_orbit_straightens_to_the_time_axis() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let lin = Linearizer::new(&model, &v, 2.0, 1e-6, &opts).unwrap();
        for t in [-1.0, 0.0, 0.7, 2.0] {
            let p = flow_to(&model, &v, t, &opts).unwrap().point;
            let s = lin.sample(p).unwrap();
            assert!((s.longitudinal - t).abs() < 1e-5, "long {} at t {t}", s.longitudinal);
            assert!(s.transverse.abs() < 1e-5, "trans {} at t {t}", s.transverse);
        }
    }

    #[test]
    fn half_plane_coordinates_are_the_closed_form() {
        // Unperturbed plane, vertical class at (0, 1): the longitudinal
        // coordinate is ln y and the transverse one is -x, since the level
        // curve runs toward -x with unit speed (the normal is the +90°
        // rotation of the vertical).
        let model = SurfaceModel::hyperbolic();
        let v = UnitVector::new(0.0, 1.0, FRAC_PI_2);
        let opts = OdeOptions::default();
        let lin = Linearizer::new(&model, &v, 2.0, 1e-7, &opts).unwrap();
        for (a, y) in [(0.8, 1.7), (-0.4, 0.6), (1.3, 1.0)] {
            let s = lin.sample(ChartPoint::new(a, y)).unwrap();
            assert!((s.longitudinal - y.ln()).abs() < 1e-6, "long {}", s.longitudinal);
            assert!((s.transverse + a).abs() < 1e-6, "trans {} vs {}", s.transverse, -a);
        }
    }

    #[test]
    fn constant_field_level_curve_is_arc_length_straight() {
        // Unit transfer ratio: points of the level curve map to their own
        // curve parameter on the transverse axis.
        let model = SurfaceModel::constant_kappa(0.6).unwrap();
        let v = UnitVector::new(0.4, 2.2, 1.1);
        let opts = OdeOptions::default();
        let lin = Linearizer::new(&model, &v, 1.2, 1e-6, &opts).unwrap();
        for s in [-0.5, 0.3, 0.9] {
            let p = lin.curve().point(s);
            let out = lin.sample(p).unwrap();
            assert!(out.longitudinal.abs() < 1e-5, "long {}", out.longitudinal);
            assert!((out.transverse - s).abs() < 1e-5, "trans {} vs {s}", out.transverse);
        }
    }

    #[test]
    fn pushed_points_shift_only_longitudinally() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let lin = Linearizer::new(&model, &v, 2.0, 1e-6, &opts).unwrap();
        let z = ChartPoint::new(0.9, 1.6);
        let base = lin.sample(z).unwrap();
        for t in [-1.5, 0.8] {
            let pushed = stable_push(&model, &v, z, t, 1e-9, &opts).unwrap();
            let s = lin.sample(pushed).unwrap();
            assert!(
                (s.longitudinal - (base.longitudinal + t)).abs() < 1e-5,
                "long shift defect {}",
                (s.longitudinal - (base.longitudinal + t)).abs()
            );
            assert!(
                (s.transverse - base.transverse).abs() < 1e-5,
                "trans moved by {}",
                (s.transverse - base.transverse).abs()
            );
        }
    }

    #[test]
    fn equivariance_residuals_stay_small() {
        let opts = OdeOptions::default();
        // Identity at t = 0.
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let p = ChartPoint::new(1.2, 1.4);
        let r0 = linearization_equivariance(&model, &v, p, 0.0, 1e-6, &opts).unwrap();
        assert!(r0 < 1e-10, "t = 0 residual {r0}");
        // Constant model at t = 1.
        let cm = SurfaceModel::constant_kappa(0.6).unwrap();
        let cv = UnitVector::new(0.4, 2.2, 1.1);
        let rc = linearization_equivariance(&cm, &cv, ChartPoint::new(1.0, 2.0), 1.0, 1e-6, &opts)
            .unwrap();
        assert!(rc < 1e-5, "constant-model residual {rc}");
        // Perturbed model across several times.
        for t in [0.5, 1.0, 2.0] {
            let r = linearization_equivariance(&model, &v, p, t, 1e-6, &opts).unwrap();
            assert!(r < 1e-4, "residual {r} at t = {t}");
        }
    }

    #[test]
    fn derivative_is_the_frame_transfer_map() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let lin = Linearizer::new(&model, &v, 3.0, 1e-6, &opts).unwrap();
        // At the base foot the ratio is 1 and the map is the identity.
        let at_base = lin.derivative(v.point).unwrap();
        assert!((at_base.transfer - 1.0).abs() < 1e-6);
        assert!((at_base.determinant() - 1.0).abs() < 1e-5);
        // Away from the level curve: positive determinant, finite
        // differences agree with the decay-corrected eigenvalue.
        let d = lin.derivative(ChartPoint::new(1.1, 1.7)).unwrap();
        assert!(d.determinant() > 0.0);
        assert!(!d.flagged, "finite-difference defect {}", d.fd_defect);
        // On the level curve the eigenvalue reduces to the transfer ratio.
        let p_leaf = lin.curve().point(0.8);
        let d_leaf = lin.derivative(p_leaf).unwrap();
        assert!(
            (d_leaf.determinant() - d_leaf.transfer).abs() < 1e-5,
            "on-leaf eigenvalue {} vs ratio {}",
            d_leaf.determinant(),
            d_leaf.transfer
        );
        assert!(!d_leaf.flagged, "on-leaf defect {}", d_leaf.fd_defect);
    }

    #[test]
    fn half_plane_derivative_eigenvalue_is_the_height() {
        // Closed form in the unperturbed plane: the map is (x, y) ->
        // (ln y, -x), whose frame-diagonal form has transverse eigenvalue y,
        // while the transfer ratio is identically 1.
        let model = SurfaceModel::hyperbolic();
        let v = UnitVector::new(0.0, 1.0, FRAC_PI_2);
        let opts = OdeOptions::default();
        let lin = Linearizer::new(&model, &v, 3.0, 1e-7, &opts).unwrap();
        for (x, y) in [(0.5, 1.6), (-0.9, 0.7)] {
            let d = lin.derivative(ChartPoint::new(x, y)).unwrap();
            assert!(
                (d.determinant() - y).abs() < 1e-4,
                "eigenvalue {} vs height {y}",
                d.determinant()
            );
            assert!((d.transfer - 1.0).abs() < 1e-6);
            assert!(!d.flagged, "defect {}", d.fd_defect);
        }
    }

    #[test]
    fn matching_a_model_with_itself_is_exact() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let grid = GridSpec { x0: -0.2, x1: 0.8, nx: 3, y0: 0.9, y1: 1.5, ny: 3 };
        let report =
            linearization_match(&model, &v, &model, &v, |p| p, &grid, 1e-6, &opts).unwrap();
        assert!(report.sup_residual < 1e-6, "sup {}", report.sup_residual);
    }

    #[test]
    fn matching_through_an_isometry_pullback() {
        // The second model's fields are the first's composed with a Mobius
        // isometry; the inverse map must intertwine the straightenings.
        let model1 = test_perturbed_model();
        let m = Mobius::dilation(0.3);
        let pull = |f: &ScalarField| ScalarField::MobiusPullback {
            map: m,
            inner: Box::new(f.clone()),
        };
        let model2 = SurfaceModel::new(
            pull(model1.rho_pert_field()),
            pull(model1.kappa_field()),
            None,
        )
        .unwrap();
        let v1 = UnitVector::new(0.3, 1.1, 0.4);
        let inv = m.inverse();
        let v2 = inv.push_unit(v1);
        let opts = OdeOptions::default();
        let grid = GridSpec { x0: 0.0, x1: 0.7, nx: 3, y0: 1.0, y1: 1.4, ny: 3 };
        let report = linearization_match(
            &model1,
            &v1,
            &model2,
            &v2,
            |p| inv.apply(p),
            &grid,
            1e-6,
            &opts,
        )
        .unwrap();
        assert!(report.sup_residual < 1e-5, "sup {}", report.sup_residual);
    }

    #[test]
    fn distinct_field_strengths_resist_matching() {
        // Negative control: straightenings of different constant fields are
        // genuinely different foliations; the identity map cannot match
        // them. The residual level is measured, not asserted a priori.
        let model1 = SurfaceModel::hyperbolic();
        let model2 = SurfaceModel::constant_kappa(0.1).unwrap();
        let v = UnitVector::new(0.0, 1.0, FRAC_PI_2);
        let opts = OdeOptions::default();
        let grid = GridSpec { x0: -0.5, x1: 0.5, nx: 3, y0: 0.8, y1: 1.6, ny: 3 };
        let report =
            linearization_match(&model1, &v, &model2, &v, |p| p, &grid, 1e-6, &opts).unwrap();
        assert!(
            report.sup_residual > 1e-2,
            "control residual unexpectedly small: {}",
            report.sup_residual
        );
    }

    #[test]
    fn grid_spec_parses_and_enumerates() {
        let g = GridSpec::parse("-1:1:3,0.5:1.5:2").unwrap();
        assert_eq!((g.nx, g.ny), (3, 2));
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert!((pts[0].x + 1.0).abs() < 1e-15 && (pts[0].y - 0.5).abs() < 1e-15);
        assert!((pts[5].x - 1.0).abs() < 1e-15 && (pts[5].y - 1.5).abs() < 1e-15);
        assert!(GridSpec::parse("0:1:3").is_err());
        assert!(GridSpec::parse("1:0:3,0:1:2").is_err());
        assert!(GridSpec::parse("0:1:1,0:1:2").is_err());
    }
}
