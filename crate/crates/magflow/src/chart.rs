//! Upper half-plane chart primitives: points, tangent vectors, Mobius maps.

use serde::{Deserialize, Serialize};

/// A point of the upper half-plane chart, `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub x: f64,
    pub y: f64,
}

impl ChartPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Euclidean distance between chart positions (not the metric distance).
    #[inline]
    pub fn chart_dist(&self, other: &ChartPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A unit tangent vector, stored as a base point and a chart angle.
///
/// The represented velocity is `e^{-rho} (cos angle, sin angle)` in chart
/// components, which has metric norm exactly 1 by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector {
    pub point: ChartPoint,
    pub angle: f64,
}

impl UnitVector {
    pub fn new(x: f64, y: f64, angle: f64) -> Self {
        Self {
            point: ChartPoint::new(x, y),
            angle,
        }
    }

    /// The oppositely oriented vector at the same point.
    pub fn reversed(&self) -> Self {
        Self {
            point: self.point,
            angle: wrap_angle(self.angle + std::f64::consts::PI),
        }
    }
}

/// A tangent vector with explicit chart components at a base point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub point: ChartPoint,
    pub dx: f64,
    pub dy: f64,
}

impl TangentVector {
    pub fn new(point: ChartPoint, dx: f64, dy: f64) -> Self {
        Self { point, dx, dy }
    }

    /// Chart-component sum with another vector at the same base point.
    pub fn add(&self, other: &TangentVector) -> TangentVector {
        TangentVector::new(self.point, self.dx + other.dx, self.dy + other.dy)
    }

    /// Chart-component scaling.
    pub fn scale(&self, c: f64) -> TangentVector {
        TangentVector::new(self.point, c * self.dx, c * self.dy)
    }
}

/// Wraps an angle to `(-pi, pi]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * std::f64::consts::PI);
    if r <= -std::f64::consts::PI {
        r += 2.0 * std::f64::consts::PI;
    } else if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    r
}

/// Signed difference `a - b` wrapped to `(-pi, pi]`.
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// A real Mobius transformation `z -> (a z + b) / (c z + d)` with positive
/// determinant, acting as an orientation-preserving isometry of the
/// unperturbed half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mobius {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mobius {
    /// Builds a map after normalizing the determinant to 1.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, crate::Error> {
        let det = a * d - b * c;
        if !(det > 0.0) || !det.is_finite() {
            return Err(crate::Error::Config {
                msg: format!("mobius determinant must be positive and finite, got {det}"),
            });
        }
        let s = det.sqrt();
        Ok(Self {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
        })
    }

    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    /// The dilation `z -> e^l z` (hyperbolic translation of length `l` along
    /// the vertical axis).
    pub fn dilation(l: f64) -> Self {
        Self {
            a: (0.5 * l).exp(),
            b: 0.0,
            c: 0.0,
            d: (-0.5 * l).exp(),
        }
    }

    /// The isometry sending the geodesic with the given boundary endpoints
    /// (`None` is the point at infinity) to the vertical axis: `back` maps to
    /// `0` and `fwd` to `∞`, so the geodesic becomes the upward axis.
    pub fn axis_straightener(back: Option<f64>, fwd: Option<f64>) -> Result<Self, crate::Error> {
        match (back, fwd) {
            (Some(a), Some(b)) => {
                let s = (a - b).signum();
                Mobius::new(s, -s * a, 1.0, -b)
            }
            (None, Some(b)) => Mobius::new(0.0, -1.0, 1.0, -b),
            (Some(a), None) => Mobius::new(1.0, -a, 0.0, 1.0),
            (None, None) => Err(crate::Error::Config {
                msg: "a geodesic cannot have both endpoints at infinity".to_string(),
            }),
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    pub fn apply(&self, p: ChartPoint) -> ChartPoint {
        // (a z + b)(conj(c z + d)) / |c z + d|^2 with z = x + i y.
        let (x, y) = (p.x, p.y);
        let re_n = self.a * x + self.b;
        let im_n = self.a * y;
        let re_d = self.c * x + self.d;
        let im_d = self.c * y;
        let den = re_d * re_d + im_d * im_d;
        ChartPoint::new(
            (re_n * re_d + im_n * im_d) / den,
            (im_n * re_d - re_n * im_d) / den,
        )
    }

    /// Complex derivative at `p`: returns `(|f'|, arg f')`.
    ///
    /// For determinant 1, `f'(z) = 1 / (c z + d)^2`.
    pub fn derivative(&self, p: ChartPoint) -> (f64, f64) {
        let re_d = self.c * p.x + self.d;
        let im_d = self.c * p.y;
        let den = re_d * re_d + im_d * im_d;
        let modulus = 1.0 / den;
        let arg = -2.0 * im_d.atan2(re_d);
        (modulus, arg)
    }

    /// Pushes a unit vector forward: base point maps through the chart map
    /// and the angle rotates by `arg f'`.
    pub fn push_unit(&self, v: UnitVector) -> UnitVector {
        let (_, arg) = self.derivative(v.point);
        UnitVector {
            point: self.apply(v.point),
            angle: wrap_angle(v.angle + arg),
        }
    }
}
