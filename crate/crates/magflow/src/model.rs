//! Surface models: conformal half-plane metrics with a magnetic field.
//!
//! A model is `e^{2 rho} (dx^2 + dy^2)` on `y > 0` with
//! `rho = -ln y + perturbation` and a scalar magnetic field `kappa`. The
//! perturbation and the deviation of `kappa` from its far value are compactly
//! supported, so certified global bounds follow from dense sampling over the
//! working box combined with the exact far-field values.

use crate::chart::{ChartPoint, TangentVector, UnitVector};
use crate::error::Error;
use crate::field::{Bump, Jet2, ScalarField};
use crate::Result;
use serde::{Deserialize, Serialize};

/// Axis-aligned chart rectangle used for bound certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkingBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl WorkingBox {
    pub fn contains(&self, p: ChartPoint) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Certified curvature/pinching constants and supremum norms.
///
/// Estimated by dense sampling over the working box (inflated by 10%) with a
/// 10% outward margin on every bound, then combined with exact far-field
/// values; `-k0^2 <= K <= -k1^2` and `-q0^2 <= q <= -q1^2` hold globally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub k0: f64,
    pub k1: f64,
    pub q0: f64,
    pub q1: f64,
    /// Supremum of |kappa| (margined).
    pub kappa_sup: f64,
    /// Supremum of the metric norm of grad kappa (margined).
    pub grad_kappa_sup: f64,
    /// Stable Jacobi comparison constant `1 + (|k| + |k|^2)/q1 + q0`.
    pub c1: f64,
}

impl ModelBounds {
    /// Horizon after which the stable Riccati solution forgets its seed to
    /// within `tol`: `ln(1/tol) / (2 q1) + 5 / q1`.
    pub fn riccati_horizon(&self, tol: f64) -> f64 {
        (1.0 / tol).ln() / (2.0 * self.q1) + 5.0 / self.q1
    }
}

/// How the magnetic field is specified in a model file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KappaSpec {
    Constant(f64),
    Bump { amp: f64, cx: f64, cy: f64, radius: f64 },
}

/// Parsed model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub epsilon: f64,
    pub bump_center: Option<(f64, f64)>,
    pub bump_radius: Option<f64>,
    pub kappa: KappaSpec,
    pub chart_box: Option<(f64, f64, f64, f64)>,
}

impl ModelSpec {
    /// Parses the plain key/value model format.
    ///
    /// Recognized keys: `chart` (must be `halfplane`), `epsilon`,
    /// `bump_center = x, y`, `bump_radius`, `kappa = constant:<v>` or
    /// `kappa = bump:<amp>,<cx>,<cy>,<radius>`, and an optional
    /// `box = x0, x1, y0, y1`. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut epsilon = 0.0;
        let mut bump_center = None;
        let mut bump_radius = None;
        let mut kappa = None;
        let mut chart_box = None;
        let mut chart_seen = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                msg: format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |msg: String| Error::Config {
                msg: format!("line {}: {msg}", lineno + 1),
            };
            match key {
                "chart" => {
                    if value != "halfplane" {
                        return Err(bad(format!("unsupported chart `{value}`")));
                    }
                    chart_seen = true;
                }
                "epsilon" => {
                    epsilon = parse_f64(value).map_err(|e| bad(e))?;
                }
                "bump_center" => {
                    let v = parse_f64_list(value, 2).map_err(|e| bad(e))?;
                    bump_center = Some((v[0], v[1]));
                }
                "bump_radius" => {
                    bump_radius = Some(parse_f64(value).map_err(|e| bad(e))?);
                }
                "kappa" => {
                    kappa = Some(parse_kappa(value).map_err(|e| bad(e))?);
                }
                "box" => {
                    let v = parse_f64_list(value, 4).map_err(|e| bad(e))?;
                    chart_box = Some((v[0], v[1], v[2], v[3]));
                }
                other => {
                    return Err(bad(format!("unknown key `{other}`")));
                }
            }
        }
        if !chart_seen {
            return Err(Error::Config {
                msg: "missing `chart = halfplane`".into(),
            });
        }
        let kappa = kappa.ok_or_else(|| Error::Config {
            msg: "missing `kappa = ...`".into(),
        })?;
        if epsilon != 0.0 && (bump_center.is_none() || bump_radius.is_none()) {
            return Err(Error::Config {
                msg: "epsilon != 0 requires bump_center and bump_radius".into(),
            });
        }
        Ok(Self {
            epsilon,
            bump_center,
            bump_radius,
            kappa,
            chart_box,
        })
    }

    /// Builds and validates the model this spec describes.
    pub fn build(&self) -> Result<SurfaceModel> {
        let rho_pert = if self.epsilon != 0.0 {
            let (cx, cy) = self.bump_center.unwrap();
            ScalarField::Bump(Bump::new(self.epsilon, cx, cy, self.bump_radius.unwrap())?)
        } else {
            ScalarField::zero()
        };
        let kappa = match self.kappa {
            KappaSpec::Constant(v) => ScalarField::Constant(v),
            KappaSpec::Bump {
                amp,
                cx,
                cy,
                radius,
            } => ScalarField::Bump(Bump::new(amp, cx, cy, radius)?),
        };
        let chart_box = self.chart_box.map(|(x0, x1, y0, y1)| WorkingBox { x0, x1, y0, y1 });
        SurfaceModel::new(rho_pert, kappa, chart_box)
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("expected a number, got `{s}`"))
}

fn parse_f64_list(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let vals: std::result::Result<Vec<f64>, String> =
        s.split(',').map(|t| parse_f64(t)).collect();
    let vals = vals?;
    if vals.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", vals.len()));
    }
    Ok(vals)
}

fn parse_kappa(s: &str) -> std::result::Result<KappaSpec, String> {
    if let Some(v) = s.strip_prefix("constant:") {
        return Ok(KappaSpec::Constant(parse_f64(v)?));
    }
    if let Some(v) = s.strip_prefix("bump:") {
        let p = parse_f64_list(v, 4)?;
        return Ok(KappaSpec::Bump {
            amp: p[0],
            cx: p[1],
            cy: p[2],
            radius: p[3],
        });
    }
    Err(format!(
        "kappa must be `constant:<value>` or `bump:<amp>,<cx>,<cy>,<radius>`, got `{s}`"
    ))
}

/// A validated surface model.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    rho_pert: ScalarField,
    kappa: ScalarField,
    chart_box: WorkingBox,
    bounds: ModelBounds,
    summary: String,
}

impl SurfaceModel {
    /// Builds a model from a log-factor perturbation and a magnetic field,
    /// certifying curvature and pinching bounds. `chart_box` defaults to a
    /// rectangle covering all bump supports with margin.
    pub fn new(
        rho_pert: ScalarField,
        kappa: ScalarField,
        chart_box: Option<WorkingBox>,
    ) -> Result<SurfaceModel> {
        let chart_box = chart_box.unwrap_or_else(|| default_box(&rho_pert, &kappa));
        let summary = format!("{rho_pert:?} | kappa {kappa:?}");
        let mut model = SurfaceModel {
            rho_pert,
            kappa,
            chart_box,
            bounds: ModelBounds {
                k0: 0.0,
                k1: 0.0,
                q0: 0.0,
                q1: 0.0,
                kappa_sup: 0.0,
                grad_kappa_sup: 0.0,
                c1: 0.0,
            },
            summary,
        };
        model.bounds = model.certify_bounds()?;
        Ok(model)
    }

    /// The unperturbed hyperbolic plane with zero magnetic field.
    pub fn hyperbolic() -> SurfaceModel {
        SurfaceModel::new(ScalarField::zero(), ScalarField::zero(), None)
            .expect("hyperbolic model is always valid")
    }

    /// Unperturbed metric with a constant magnetic field `|k| < 1`.
    pub fn constant_kappa(k: f64) -> Result<SurfaceModel> {
        SurfaceModel::new(ScalarField::zero(), ScalarField::Constant(k), None)
    }

    pub fn bounds(&self) -> &ModelBounds {
        &self.bounds
    }

    pub fn chart_box(&self) -> &WorkingBox {
        &self.chart_box
    }

    pub fn kappa_field(&self) -> &ScalarField {
        &self.kappa
    }

    pub fn rho_pert_field(&self) -> &ScalarField {
        &self.rho_pert
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    /// Errors unless `p` lies in the chart (`y > 0`).
    pub fn check_point(&self, p: ChartPoint) -> Result<()> {
        if p.y > 0.0 && p.y.is_finite() && p.x.is_finite() {
            Ok(())
        } else {
            Err(Error::OutsideDomain { y: p.y })
        }
    }

    /// Jet of the log-factor perturbation alone (without the `-ln y` part).
    #[inline]
    pub fn rho_pert_jet(&self, p: ChartPoint) -> Jet2 {
        self.rho_pert.jet(p)
    }

    /// Full jet of the log conformal factor `rho = -ln y + perturbation`.
    pub fn log_factor_jet(&self, p: ChartPoint) -> Jet2 {
        log_factor_jet_of(&self.rho_pert, p)
    }

    /// `e^{rho}`: lengths scale by this factor at `p`.
    #[inline]
    pub fn conformal_factor(&self, p: ChartPoint) -> f64 {
        (self.rho_pert.value(p) - p.y.ln()).exp()
    }

    /// Gauss curvature `K = -e^{-2 rho} (flat Laplacian of rho)`.
    pub fn gauss_curvature(&self, p: ChartPoint) -> f64 {
        curvature_of(&self.rho_pert, p)
    }

    /// Magnetic field value.
    #[inline]
    pub fn kappa(&self, p: ChartPoint) -> f64 {
        self.kappa.value(p)
    }

    /// Magnetic field value outside every bump support, when defined.
    pub fn far_kappa(&self) -> Option<f64> {
        self.kappa.far_constant()
    }

    /// Log-factor perturbation value outside every bump support, when defined.
    pub fn far_log_factor(&self) -> Option<f64> {
        self.rho_pert.far_constant()
    }

    /// Whether the metric is exactly hyperbolic (no log-factor perturbation).
    pub fn is_metric_unperturbed(&self) -> bool {
        self.rho_pert.is_constant() && self.rho_pert.value(ChartPoint::new(0.0, 1.0)) == 0.0
    }

    /// Disks outside which both fields take their far values.
    pub fn support_disks(&self) -> Vec<(ChartPoint, f64)> {
        let mut d = self.rho_pert.support_disks();
        d.extend(self.kappa.support_disks());
        d
    }

    /// Disks outside which the metric alone is exactly its far form; the
    /// magnetic field does not bend geodesics, so geodesic computations need
    /// clearance only from these.
    pub fn metric_support_disks(&self) -> Vec<(ChartPoint, f64)> {
        self.rho_pert.support_disks()
    }

    /// Metric inner product of chart-component vectors at the same point.
    #[inline]
    pub fn inner(&self, a: &TangentVector, b: &TangentVector) -> f64 {
        let s = self.conformal_factor(a.point);
        s * s * (a.dx * b.dx + a.dy * b.dy)
    }

    /// Metric norm.
    #[inline]
    pub fn norm(&self, a: &TangentVector) -> f64 {
        self.conformal_factor(a.point) * a.dx.hypot(a.dy)
    }

    /// Quarter-turn rotation: flat rotation of chart components, which is a
    /// metric isometry of the tangent plane in a conformal chart.
    #[inline]
    pub fn rotate90(&self, a: &TangentVector) -> TangentVector {
        TangentVector::new(a.point, -a.dy, a.dx)
    }

    /// Chart components of a unit vector: `e^{-rho} (cos angle, sin angle)`.
    pub fn embed_unit(&self, v: &UnitVector) -> TangentVector {
        let s = 1.0 / self.conformal_factor(v.point);
        TangentVector::new(v.point, s * v.angle.cos(), s * v.angle.sin())
    }

    /// The rotated unit vector `N(v)`, as a unit vector (angle + pi/2).
    pub fn normal_unit(&self, v: &UnitVector) -> UnitVector {
        UnitVector {
            point: v.point,
            angle: crate::chart::wrap_angle(v.angle + std::f64::consts::FRAC_PI_2),
        }
    }

    /// Connection rotation form on a chart velocity `(wx, wy)`:
    /// the covariant angular rate of a field along a curve is
    /// `d(angle)/ds + omega(c')` with `omega(w) = rho_x w_y - rho_y w_x`.
    #[inline]
    pub fn connection_form(&self, p: ChartPoint, wx: f64, wy: f64) -> f64 {
        let j = self.log_factor_jet(p);
        j.dx * wy - j.dy * wx
    }

    /// Jacobi endomorphism `q(v) = K + kappa^2 - <N(v), grad kappa>` at a
    /// point and direction angle.
    pub fn q_at(&self, p: ChartPoint, angle: f64) -> f64 {
        let k = self.gauss_curvature(p);
        let kap = self.kappa.jet(p);
        let inv_scale = 1.0 / self.conformal_factor(p);
        let dn = inv_scale * (-kap.dx * angle.sin() + kap.dy * angle.cos());
        k + kap.v * kap.v - dn
    }

    /// Range of `q(v)` over all directions at `p` (the gradient term is
    /// extremized analytically).
    pub fn q_range_at(&self, p: ChartPoint) -> (f64, f64) {
        let k = self.gauss_curvature(p);
        let kap = self.kappa.jet(p);
        let g = kap.dx.hypot(kap.dy) / self.conformal_factor(p);
        let base = k + kap.v * kap.v;
        (base - g, base + g)
    }

    /// Exact chart distance of the unperturbed hyperbolic metric.
    pub fn closed_form_distance(p: ChartPoint, q: ChartPoint) -> f64 {
        let dx = p.x - q.x;
        let dy = p.y - q.y;
        let c = 1.0 + (dx * dx + dy * dy) / (2.0 * p.y * q.y);
        c.acosh()
    }

    /// Dense sampling over the (inflated) working box, combined with exact
    /// far-field values, with a 10% outward margin on all bounds.
    fn certify_bounds(&self) -> Result<ModelBounds> {
        const N: usize = 161;
        let b = self.chart_box;
        // Inflate the sampled rectangle by 10% per side (clamped inside y > 0).
        let (wx, wy) = (b.x1 - b.x0, b.y1 - b.y0);
        let x0 = b.x0 - 0.1 * wx;
        let x1 = b.x1 + 0.1 * wx;
        let y0 = (b.y0 - 0.1 * wy).max(0.25 * b.y0).max(1e-3);
        let y1 = b.y1 + 0.1 * wy;

        let mut neg_k_min = f64::INFINITY;
        let mut neg_k_max = f64::NEG_INFINITY;
        let mut neg_q_min = f64::INFINITY;
        let mut neg_q_max = f64::NEG_INFINITY;
        let mut kappa_max: f64 = 0.0;
        let mut grad_kappa_max: f64 = 0.0;
        let mut update = |k: f64, qlo: f64, qhi: f64, kap: f64, g: f64| {
            neg_k_min = neg_k_min.min(-k);
            neg_k_max = neg_k_max.max(-k);
            neg_q_min = neg_q_min.min(-qhi);
            neg_q_max = neg_q_max.max(-qlo);
            kappa_max = kappa_max.max(kap.abs());
            grad_kappa_max = grad_kappa_max.max(g);
        };

        for i in 0..N {
            for j in 0..N {
                let p = ChartPoint::new(
                    x0 + (x1 - x0) * i as f64 / (N - 1) as f64,
                    y0 + (y1 - y0) * j as f64 / (N - 1) as f64,
                );
                let k = self.gauss_curvature(p);
                let (qlo, qhi) = self.q_range_at(p);
                let kap = self.kappa.jet(p);
                let g = kap.dx.hypot(kap.dy) / self.conformal_factor(p);
                update(k, qlo, qhi, kap.v, g);
            }
        }
        // Far field: constant curvature -e^{-2 rf} with constant kappa. Only
        // valid when both fields settle to constants far out; periodized
        // fields on quotients do not, and there the box is chosen to cover a
        // fundamental domain so grid sampling alone is global.
        if let (Some(kf), Some(rf)) = (self.kappa.far_constant(), self.rho_pert.far_constant()) {
            let kfar = -(-2.0 * rf).exp();
            update(kfar, kfar + kf * kf, kfar + kf * kf, kf, 0.0);
        }

        if !(neg_k_min > 0.0) {
            return Err(Error::InvalidModel {
                msg: format!("curvature is not negative: max K = {:.6}", -neg_k_min),
            });
        }
        if !(neg_q_min > 0.0) {
            return Err(Error::InvalidModel {
                msg: format!(
                    "Jacobi endomorphism is not pinched below zero: max q = {:.6}",
                    -neg_q_min
                ),
            });
        }
        let q0 = (1.1 * neg_q_max).sqrt();
        let q1 = (neg_q_min / 1.1).sqrt();
        let kappa_sup = 1.1 * kappa_max;
        let c1 = 1.0 + (kappa_sup + kappa_sup * kappa_sup) / q1 + q0;
        Ok(ModelBounds {
            k0: (1.1 * neg_k_max).sqrt(),
            k1: (neg_k_min / 1.1).sqrt(),
            q0,
            q1,
            kappa_sup,
            grad_kappa_sup: 1.1 * grad_kappa_max,
            c1,
        })
    }
}

/// Jet of `rho = -ln y + pert` for an arbitrary perturbation field, without
/// constructing a validated model (used by construction itself and by
/// oracle tests on fields that need not satisfy the curvature constraints).
pub fn log_factor_jet_of(pert: &ScalarField, p: ChartPoint) -> Jet2 {
    let mut j = pert.jet(p);
    j.v -= p.y.ln();
    j.dy -= 1.0 / p.y;
    j.dyy += 1.0 / (p.y * p.y);
    j
}

/// Gauss curvature of the metric `e^{2 rho} (dx^2 + dy^2)` for an arbitrary
/// log-factor perturbation.
pub fn curvature_of(pert: &ScalarField, p: ChartPoint) -> f64 {
    let j = log_factor_jet_of(pert, p);
    -(-2.0 * j.v).exp() * (j.dxx + j.dyy)
}

/// Default working box: covers all bump supports with margin, within a
/// standard window.
fn default_box(rho_pert: &ScalarField, kappa: &ScalarField) -> WorkingBox {
    let mut b = WorkingBox {
        x0: -4.0,
        x1: 4.0,
        y0: 0.1,
        y1: 6.0,
    };
    let disks: Vec<_> = rho_pert
        .support_disks()
        .into_iter()
        .chain(kappa.support_disks())
        .collect();
    for (c, r) in disks {
        b.x0 = b.x0.min(c.x - r - 0.5);
        b.x1 = b.x1.max(c.x + r + 0.5);
        b.y0 = b.y0.min((c.y - r - 0.2).max(0.02));
        b.y1 = b.y1.max(c.y + r + 0.5);
    }
    b
}

/// Shared fixture: the standard perturbed model used across the crate's
/// tests. The metric carries a dip of amplitude 0.05 (a positive bump of
/// that size cannot keep the curvature negative — its central Laplacian
/// overwhelms 1/y^2 — while the dip's harmful ring carries a small profile
/// factor); the magnetic bump of amplitude 0.3 sits support-disjoint from
/// the dip so its gradient term cannot push `q` past zero inside the
/// weakened-curvature ring.
#[cfg(test)]
pub(crate) fn test_perturbed_model() -> SurfaceModel {
    SurfaceModel::new(
        ScalarField::Bump(Bump::new(-0.05, 0.0, 2.2, 2.0).unwrap()),
        ScalarField::Bump(Bump::new(0.3, 4.1, 2.2, 2.0).unwrap()),
        None,
    )
    .unwrap()
}
