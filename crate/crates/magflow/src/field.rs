//! Scalar fields on the chart with analytic jets up to second order.
//!
//! Fields are built from constants and compactly supported polynomial bumps,
//! closed under sums, Mobius pullbacks (for isometry matching) and
//! periodization over a dilation (for cyclic quotients). All derivatives are
//! exact chain-rule evaluations; no numerical differentiation happens here.

use crate::chart::{ChartPoint, Mobius};
use serde::{Deserialize, Serialize};

/// Value and flat chart derivatives up to second order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            ..Default::default()
        }
    }

    fn add_assign(&mut self, o: &Jet2) {
        self.v += o.v;
        self.dx += o.dx;
        self.dy += o.dy;
        self.dxx += o.dxx;
        self.dxy += o.dxy;
        self.dyy += o.dyy;
    }
}

/// A radial polynomial bump `amp * (1 - u)^4` with `u = |p - center|^2 / radius^2`,
/// supported on the disk of the given radius and C^3 across its boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amp: f64,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Bump {
    pub fn new(amp: f64, cx: f64, cy: f64, radius: f64) -> Result<Self, crate::Error> {
        if !(radius > 0.0) {
            return Err(crate::Error::Config {
                msg: format!("bump radius must be positive, got {radius}"),
            });
        }
        if cy - radius <= 0.0 {
            return Err(crate::Error::Config {
                msg: format!(
                    "bump support must sit strictly inside the chart: cy - radius = {}",
                    cy - radius
                ),
            });
        }
        Ok(Self {
            amp,
            cx,
            cy,
            radius,
        })
    }

    fn jet(&self, p: ChartPoint) -> Jet2 {
        let r2 = self.radius * self.radius;
        let px = p.x - self.cx;
        let py = p.y - self.cy;
        let u = (px * px + py * py) / r2;
        if u >= 1.0 {
            return Jet2::default();
        }
        let s = 1.0 - u;
        let f = s * s * s * s;
        let fp = -4.0 * s * s * s;
        let fpp = 12.0 * s * s;
        let ux = 2.0 * px / r2;
        let uy = 2.0 * py / r2;
        let uxx = 2.0 / r2;
        Jet2 {
            v: self.amp * f,
            dx: self.amp * fp * ux,
            dy: self.amp * fp * uy,
            dxx: self.amp * (fpp * ux * ux + fp * uxx),
            dxy: self.amp * fpp * ux * uy,
            dyy: self.amp * (fpp * uy * uy + fp * uxx),
        }
    }

    fn support(&self) -> (ChartPoint, f64) {
        (ChartPoint::new(self.cx, self.cy), self.radius)
    }
}

/// A scalar field with exact second-order jets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarField {
    Constant(f64),
    Bump(Bump),
    Sum(Vec<ScalarField>),
    /// `inner` composed with the Mobius map: `p -> inner(map(p))`.
    MobiusPullback {
        map: Mobius,
        inner: Box<ScalarField>,
    },
    /// Sum of `inner` pulled back by all powers of the dilation `z -> e^l z`.
    ///
    /// The bump support must avoid the origin (`|center| > radius`), so each
    /// point meets only finitely many translates and the sum is exact.
    Periodized {
        inner: Bump,
        ell: f64,
    },
}

impl ScalarField {
    pub fn zero() -> Self {
        ScalarField::Constant(0.0)
    }

    /// Value and flat derivatives at a chart point.
    pub fn jet(&self, p: ChartPoint) -> Jet2 {
        match self {
            ScalarField::Constant(c) => Jet2::constant(*c),
            ScalarField::Bump(b) => b.jet(p),
            ScalarField::Sum(terms) => {
                let mut acc = Jet2::default();
                for t in terms {
                    acc.add_assign(&t.jet(p));
                }
                acc
            }
            ScalarField::MobiusPullback { map, inner } => pullback_jet(map, inner, p),
            ScalarField::Periodized { inner, ell } => periodized_jet(inner, *ell, p),
        }
    }

    /// Field value only.
    #[inline]
    pub fn value(&self, p: ChartPoint) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            _ => self.jet(p).v,
        }
    }

    /// The constant value attained outside a compact set, if the field is
    /// eventually constant. Periodized fields have translates accumulating at
    /// the origin and at infinity, hence no far constant.
    pub fn far_constant(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(*c),
            ScalarField::Bump(_) => Some(0.0),
            ScalarField::Sum(terms) => terms.iter().map(|t| t.far_constant()).sum(),
            ScalarField::MobiusPullback { inner, .. } => inner.far_constant(),
            ScalarField::Periodized { .. } => None,
        }
    }

    /// Disks containing the support of `self - far_constant`.
    pub fn support_disks(&self) -> Vec<(ChartPoint, f64)> {
        match self {
            ScalarField::Constant(_) => Vec::new(),
            ScalarField::Bump(b) => vec![b.support()],
            ScalarField::Sum(terms) => terms.iter().flat_map(|t| t.support_disks()).collect(),
            ScalarField::MobiusPullback { map, inner } => {
                let inv = map.inverse();
                inner
                    .support_disks()
                    .iter()
                    .map(|&(c, r)| mobius_image_disk(&inv, c, r))
                    .collect()
            }
            // Unbounded family; quotient code never relies on escape geometry.
            ScalarField::Periodized { .. } => Vec::new(),
        }
    }

    /// Whether the field is constant (no spatial variation anywhere).
    pub fn is_constant(&self) -> bool {
        match self {
            ScalarField::Constant(_) => true,
            ScalarField::Sum(terms) => terms.iter().all(|t| t.is_constant()),
            _ => false,
        }
    }
}

/// Chain rule through a Mobius map using its complex derivatives.
fn pullback_jet(map: &Mobius, inner: &ScalarField, p: ChartPoint) -> Jet2 {
    let q = map.apply(p);
    let g = inner.jet(q);
    // f'(z) = 1 / (c z + d)^2 and f''(z) = -2 c / (c z + d)^3 for det 1.
    let (wr, wi) = (map.c * p.x + map.d, map.c * p.y);
    let w2 = (wr * wr - wi * wi, 2.0 * wr * wi);
    let n2 = w2.0 * w2.0 + w2.1 * w2.1;
    let fp = (w2.0 / n2, -w2.1 / n2); // 1 / w^2
    let w3 = (w2.0 * wr - w2.1 * wi, w2.0 * wi + w2.1 * wr);
    let n3 = w3.0 * w3.0 + w3.1 * w3.1;
    let fpp = (-2.0 * map.c * w3.0 / n3, 2.0 * map.c * w3.1 / n3); // -2c / w^3
    // Cauchy-Riemann: with f = u + i v, u_x = Re f', u_y = -Im f', etc.
    let (ux, uy, vx, vy) = (fp.0, -fp.1, fp.1, fp.0);
    let (uxx, uxy, uyy) = (fpp.0, -fpp.1, -fpp.0);
    let (vxx, vxy, vyy) = (fpp.1, fpp.0, -fpp.1);
    Jet2 {
        v: g.v,
        dx: g.dx * ux + g.dy * vx,
        dy: g.dx * uy + g.dy * vy,
        dxx: g.dxx * ux * ux + 2.0 * g.dxy * ux * vx + g.dyy * vx * vx + g.dx * uxx + g.dy * vxx,
        dxy: g.dxx * ux * uy
            + g.dxy * (ux * vy + uy * vx)
            + g.dyy * vx * vy
            + g.dx * uxy
            + g.dy * vxy,
        dyy: g.dxx * uy * uy + 2.0 * g.dxy * uy * vy + g.dyy * vy * vy + g.dx * uyy + g.dy * vyy,
    }
}

/// Sums the finitely many dilation translates whose support contains `p`.
fn periodized_jet(inner: &Bump, ell: f64, p: ChartPoint) -> Jet2 {
    let rc = inner.cx.hypot(inner.cy);
    let rp = p.x.hypot(p.y);
    if rp <= 0.0 {
        return Jet2::default();
    }
    // Translate n is supported where |p| in [e^{n l} (rc - r), e^{n l} (rc + r)].
    let lo = ((rp / (rc + inner.radius)).ln() / ell).floor() as i64 - 1;
    let hi = ((rp / (rc - inner.radius)).ln() / ell).ceil() as i64 + 1;
    let mut acc = Jet2::default();
    for n in lo..=hi {
        let s = (-(n as f64) * ell).exp();
        let q = ChartPoint::new(s * p.x, s * p.y);
        let g = inner.jet(q);
        if g.v != 0.0 || g.dx != 0.0 || g.dy != 0.0 {
            acc.add_assign(&Jet2 {
                v: g.v,
                dx: s * g.dx,
                dy: s * g.dy,
                dxx: s * s * g.dxx,
                dxy: s * s * g.dxy,
                dyy: s * s * g.dyy,
            });
        }
    }
    acc
}

/// Image of a disk under a Mobius map, via the circumcircle of three mapped
/// boundary points. Valid when the map's pole lies outside the disk, which
/// holds here because poles are real and bump disks sit inside `y > 0`.
fn mobius_image_disk(map: &Mobius, c: ChartPoint, r: f64) -> (ChartPoint, f64) {
    let pts = [
        map.apply(ChartPoint::new(c.x + r, c.y)),
        map.apply(ChartPoint::new(c.x - r, c.y)),
        map.apply(ChartPoint::new(c.x, c.y + r)),
    ];
    let (p1, p2, p3) = (pts[0], pts[1], pts[2]);
    let d = 2.0 * (p1.x * (p2.y - p3.y) + p2.x * (p3.y - p1.y) + p3.x * (p1.y - p2.y));
    let s1 = p1.x * p1.x + p1.y * p1.y;
    let s2 = p2.x * p2.x + p2.y * p2.y;
    let s3 = p3.x * p3.x + p3.y * p3.y;
    let ux = (s1 * (p2.y - p3.y) + s2 * (p3.y - p1.y) + s3 * (p1.y - p2.y)) / d;
    let uy = (s1 * (p3.x - p2.x) + s2 * (p1.x - p3.x) + s3 * (p2.x - p1.x)) / d;
    let center = ChartPoint::new(ux, uy);
    (center, center.chart_dist(&p1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Centered finite differences of the field value, used as the oracle for
    /// every analytic jet.
    fn fd_jet(f: &ScalarField, p: ChartPoint, h: f64) -> Jet2 {
        let v = |dx: f64, dy: f64| f.value(ChartPoint::new(p.x + dx, p.y + dy));
        Jet2 {
            v: v(0.0, 0.0),
            dx: (v(h, 0.0) - v(-h, 0.0)) / (2.0 * h),
            dy: (v(0.0, h) - v(0.0, -h)) / (2.0 * h),
            dxx: (v(h, 0.0) - 2.0 * v(0.0, 0.0) + v(-h, 0.0)) / (h * h),
            dxy: (v(h, h) - v(h, -h) - v(-h, h) + v(-h, -h)) / (4.0 * h * h),
            dyy: (v(0.0, h) - 2.0 * v(0.0, 0.0) + v(0.0, -h)) / (h * h),
        }
    }

    fn assert_jet_close(a: &Jet2, b: &Jet2, tol1: f64, tol2: f64) {
        assert_abs_diff_eq!(a.v, b.v, epsilon = 1e-12);
        assert_abs_diff_eq!(a.dx, b.dx, epsilon = tol1);
        assert_abs_diff_eq!(a.dy, b.dy, epsilon = tol1);
        assert_abs_diff_eq!(a.dxx, b.dxx, epsilon = tol2);
        assert_abs_diff_eq!(a.dxy, b.dxy, epsilon = tol2);
        assert_abs_diff_eq!(a.dyy, b.dyy, epsilon = tol2);
    }

    #[test]
    fn bump_jet_matches_finite_differences() {
        let f = ScalarField::Bump(Bump::new(0.3, 0.2, 1.5, 1.0).unwrap());
        for &(x, y) in &[(0.2, 1.5), (0.5, 1.2), (-0.3, 1.9), (0.9, 1.4)] {
            let p = ChartPoint::new(x, y);
            assert_jet_close(&f.jet(p), &fd_jet(&f, p, 1e-5), 1e-8, 1e-5);
        }
    }

    #[test]
    fn bump_vanishes_smoothly_at_support_boundary() {
        let f = ScalarField::Bump(Bump::new(1.0, 0.0, 2.0, 0.5).unwrap());
        let edge = f.jet(ChartPoint::new(0.5, 2.0));
        assert_eq!(edge.v, 0.0);
        assert_eq!(edge.dx, 0.0);
        let outside = f.jet(ChartPoint::new(2.0, 2.0));
        assert_eq!(outside.v, 0.0);
    }

    #[test]
    fn mobius_pullback_jet_matches_finite_differences() {
        let map = Mobius::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let f = ScalarField::MobiusPullback {
            map,
            inner: Box::new(ScalarField::Bump(Bump::new(0.4, 0.5, 1.0, 0.8).unwrap())),
        };
        for &(x, y) in &[(-0.3, 0.8), (0.0, 1.0), (0.4, 0.5), (-0.6, 1.4)] {
            let p = ChartPoint::new(x, y);
            assert_jet_close(&f.jet(p), &fd_jet(&f, p, 1e-5), 1e-7, 1e-4);
        }
    }

    #[test]
    fn periodized_jet_matches_finite_differences_and_is_invariant() {
        let ell = 1.3;
        let f = ScalarField::Periodized {
            inner: Bump::new(0.2, 0.3, 1.1, 0.6).unwrap(),
            ell,
        };
        for &(x, y) in &[(0.3, 1.1), (0.8, 3.9), (0.1, 0.32), (1.2, 4.0)] {
            let p = ChartPoint::new(x, y);
            assert_jet_close(&f.jet(p), &fd_jet(&f, p, 1e-6), 1e-6, 1e-3);
            // Generator invariance: value repeats under the dilation exactly.
            let s = ell.exp();
            let q = ChartPoint::new(s * x, s * y);
            assert_abs_diff_eq!(f.value(p), f.value(q), epsilon = 1e-13);
        }
    }

    #[test]
    fn mobius_image_disk_contains_mapped_support() {
        let map = Mobius::new(1.0, 0.4, 0.3, 1.12).unwrap();
        let f = ScalarField::MobiusPullback {
            map,
            inner: Box::new(ScalarField::Bump(Bump::new(1.0, 0.2, 1.4, 0.7).unwrap())),
        };
        let disks = f.support_disks();
        assert_eq!(disks.len(), 1);
        let (c, r) = disks[0];
        // Any point where the pullback is nonzero must lie inside the disk.
        for i in 0..200 {
            for j in 0..200 {
                let p = ChartPoint::new(-4.0 + 0.04 * i as f64, 0.02 + 0.025 * j as f64);
                if f.value(p).abs() > 0.0 {
                    assert!(p.chart_dist(&c) <= r * (1.0 + 1e-9));
                }
            }
        }
    }

    #[test]
    fn sum_far_constant_accumulates() {
        let f = ScalarField::Sum(vec![
            ScalarField::Constant(0.6),
            ScalarField::Bump(Bump::new(0.1, 0.0, 2.0, 0.5).unwrap()),
        ]);
        assert_eq!(f.far_constant(), Some(0.6));
        assert_eq!(f.value(ChartPoint::new(50.0, 1.0)), 0.6);
    }
}
