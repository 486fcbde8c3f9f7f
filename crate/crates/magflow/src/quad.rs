//! Quadrature built on the adaptive integrator, and cubic Hermite
//! interpolation of sampled data with exact prefix integrals.

use crate::ode::{integrate, OdeOptions, Solution};
use crate::Result;

/// Definite integral of a smooth function by adaptive integration of
/// `z' = g(t)`.
pub fn integral<G>(g: G, a: f64, b: f64, tol: f64) -> Result<f64>
where
    G: Fn(f64) -> Result<f64>,
{
    Ok(cumulative(g, a, b, tol)?.end()[0])
}

/// Cumulative integral `t -> int_a^t g`, evaluable anywhere in `[a, b]`
/// through the solution's continuous extension.
pub fn cumulative<G>(g: G, a: f64, b: f64, tol: f64) -> Result<Solution<1>>
where
    G: Fn(f64) -> Result<f64>,
{
    integrate(
        |t, _y: &[f64; 1]| Ok([g(t)?]),
        a,
        [0.0],
        b,
        &OdeOptions {
            rtol: tol,
            atol: tol * 1e-3,
            ..OdeOptions::default()
        },
    )
}

/// Cubic Hermite interpolant through samples `(x_i, y_i)` with slopes
/// estimated by three-point finite differences. Strictly increasing `x`
/// required. Supports evaluation and exact prefix integration.
#[derive(Debug, Clone)]
pub struct CubicHermite {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
    /// Prefix integrals at the knots.
    prefix: Vec<f64>,
}

impl CubicHermite {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len());
        assert!(xs.windows(2).all(|w| w[1] > w[0]), "knots must increase");
        let n = xs.len();
        let mut ms = vec![0.0; n];
        for i in 0..n {
            ms[i] = if i == 0 {
                three_point_slope(xs[0], ys[0], xs[1], ys[1], xs[2.min(n - 1)], ys[2.min(n - 1)])
            } else if i == n - 1 {
                three_point_slope(
                    xs[n - 1],
                    ys[n - 1],
                    xs[n - 2],
                    ys[n - 2],
                    xs[n - 3.min(n - 1)],
                    ys[n - 3.min(n - 1)],
                )
            } else {
                // Central slope of the parabola through the three neighbors.
                three_point_slope(xs[i], ys[i], xs[i - 1], ys[i - 1], xs[i + 1], ys[i + 1])
            };
        }
        let mut prefix = vec![0.0; n];
        for i in 1..n {
            prefix[i] = prefix[i - 1]
                + segment_integral(
                    xs[i] - xs[i - 1],
                    ys[i - 1],
                    ms[i - 1],
                    ys[i],
                    ms[i],
                );
        }
        CubicHermite { xs, ys, ms, prefix }
    }

    pub fn span(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    fn segment(&self, x: f64) -> usize {
        self.xs.partition_point(|&k| k < x).clamp(1, self.xs.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ms[i] + h01 * self.ys[i + 1] + h11 * h * self.ms[i + 1]
    }

    /// Exact integral of the interpolant from the first knot to `x`.
    pub fn prefix_integral(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        self.prefix[i]
            + partial_segment_integral(h, t, self.ys[i], self.ms[i], self.ys[i + 1], self.ms[i + 1])
    }
}

fn three_point_slope(x0: f64, y0: f64, xa: f64, ya: f64, xb: f64, yb: f64) -> f64 {
    // Derivative at x0 of the parabola through the three points.
    let (da, db) = (xa - x0, xb - x0);
    if da == db || da == 0.0 || db == 0.0 {
        // Degenerate sample (coincident knots): fall back to a secant.
        let (dx, dy) = if db != 0.0 { (db, yb - y0) } else { (da, ya - y0) };
        return dy / dx;
    }
    let sa = (ya - y0) / da;
    let sb = (yb - y0) / db;
    (sa * db - sb * da) / (db - da)
}

/// Integral over a full Hermite segment of width `h`.
fn segment_integral(h: f64, y0: f64, m0: f64, y1: f64, m1: f64) -> f64 {
    h * (0.5 * (y0 + y1) + h * (m0 - m1) / 12.0)
}

/// Integral over the initial fraction `t` of a Hermite segment.
fn partial_segment_integral(h: f64, t: f64, y0: f64, m0: f64, y1: f64, m1: f64) -> f64 {
    let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
    // Antiderivatives of the Hermite basis on [0, 1].
    let ih00 = 0.5 * t4 - t3 + t;
    let ih10 = 0.25 * t4 - 2.0 * t3 / 3.0 + 0.5 * t2;
    let ih01 = -0.5 * t4 + t3;
    let ih11 = 0.25 * t4 - t3 / 3.0;
    h * (ih00 * y0 + ih10 * h * m0 + ih01 * y1 + ih11 * h * m1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integral_of_cosine() {
        let v = integral(|t| Ok(t.cos()), 0.0, 2.0, 1e-12).unwrap();
        assert_abs_diff_eq!(v, 2.0_f64.sin(), epsilon = 1e-11);
    }

    #[test]
    fn cumulative_matches_antiderivative() {
        let c = cumulative(|t| Ok((-t).exp()), 0.0, 5.0, 1e-12).unwrap();
        for i in 0..=50 {
            let t = 0.1 * i as f64;
            assert_abs_diff_eq!(c.eval(t)[0], 1.0 - (-t).exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn hermite_tracks_cubics_closely() {
        // y = t^3 - 2 t: Hermite data from exact slopes of the parabola
        // through neighbors is not exact for cubics, so use a dense grid and
        // a modest tolerance.
        let xs: Vec<f64> = (0..=40).map(|i| 0.05 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| t * t * t - 2.0 * t).collect();
        let h = CubicHermite::new(xs, ys);
        for i in 0..=100 {
            let t = 0.02 * i as f64;
            assert_abs_diff_eq!(h.eval(t), t * t * t - 2.0 * t, epsilon = 1e-4);
        }
        // Prefix integral of t^3 - 2t is t^4/4 - t^2.
        let t = 1.7;
        assert_abs_diff_eq!(h.prefix_integral(t), t.powi(4) / 4.0 - t * t, epsilon = 1e-4);
    }

    #[test]
    fn hermite_quadratics_are_exact() {
        // Parabola slopes are exact for the three-point rule, and Hermite
        // cubics reproduce quadratics identically.
        let xs: Vec<f64> = (0..=10).map(|i| 0.3 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| 1.0 + t - 0.5 * t * t).collect();
        let h = CubicHermite::new(xs, ys);
        for i in 0..=60 {
            let t = 0.05 * i as f64;
            assert_abs_diff_eq!(h.eval(t), 1.0 + t - 0.5 * t * t, epsilon = 1e-12);
        }
        let t = 2.3;
        assert_abs_diff_eq!(
            h.prefix_integral(t),
            t + 0.5 * t * t - t * t * t / 6.0,
            epsilon = 1e-12
        );
    }
}
