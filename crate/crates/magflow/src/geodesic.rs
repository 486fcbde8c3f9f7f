//! Geodesic distance and log map.
//!
//! On an unperturbed metric both come in closed form. On perturbed metrics
//! a two-unknown Newton shot (initial angle and length of a geodesic of the
//! same metric with the magnetic field off) matches the endpoint; residuals
//! are measured in local metric units so conditioning does not degrade with
//! the target's chart height. Shots are intended for moderate separations
//! (exponential sensitivity of the endpoint map caps the practical length).

use crate::chart::{ChartPoint, UnitVector};
use crate::flow::{geodesic_rhs, state_of, FlowState};
use crate::model::SurfaceModel;
use crate::ode::{integrate, OdeOptions};
use crate::rootfind::{newton, NewtonOptions};
use crate::Result;

/// Direction at the base point and length of the geodesic reaching a target.
#[derive(Debug, Clone, Copy)]
pub struct LogMap {
    pub direction: UnitVector,
    pub length: f64,
}

/// Exact log map of the unperturbed hyperbolic metric.
pub fn closed_form_log_map(p: ChartPoint, q: ChartPoint) -> LogMap {
    let length = SurfaceModel::closed_form_distance(p, q);
    let scale = 1e-14 * (p.x.abs() + q.x.abs() + p.y + q.y);
    let angle = if (p.x - q.x).abs() <= scale {
        if q.y >= p.y {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        }
    } else {
        // Geodesic circle centered on the boundary axis.
        let c = (q.x * q.x + q.y * q.y - p.x * p.x - p.y * p.y) / (2.0 * (q.x - p.x));
        let theta_p = p.y.atan2(p.x - c);
        let theta_q = q.y.atan2(q.x - c);
        let s = (theta_q - theta_p).signum();
        (s * theta_p.cos()).atan2(-s * theta_p.sin())
    };
    LogMap {
        direction: UnitVector { point: p, angle },
        length,
    }
}

/// Log map on an arbitrary model: closed form when the metric is
/// unperturbed, otherwise a Newton shot seeded by it.
pub fn log_map(model: &SurfaceModel, p: ChartPoint, q: ChartPoint, tol: f64) -> Result<LogMap> {
    model.check_point(p)?;
    model.check_point(q)?;
    if model.is_metric_unperturbed() {
        return Ok(closed_form_log_map(p, q));
    }
    shot_log_map(model, p, q, tol)
}

/// Geodesic distance between chart points.
pub fn distance(model: &SurfaceModel, p: ChartPoint, q: ChartPoint, tol: f64) -> Result<f64> {
    Ok(log_map(model, p, q, tol)?.length)
}

/// Newton shot on (angle, length). Exposed to tests so the shot can be
/// validated against the closed form on unperturbed metrics.
pub(crate) fn shot_log_map(
    model: &SurfaceModel,
    p: ChartPoint,
    q: ChartPoint,
    tol: f64,
) -> Result<LogMap> {
    let seed = closed_form_log_map(p, q);
    if seed.length < 1e-12 {
        return Ok(seed);
    }
    let ode = OdeOptions {
        rtol: 1e-12,
        atol: 1e-14,
        dense: false,
        ..OdeOptions::default()
    };
    let target_w = q.y.ln();
    let shoot = |angle: f64, len: f64| -> Result<FlowState> {
        let start = state_of(&UnitVector {
            point: p,
            angle,
        });
        let sol = integrate(
            |_t, s: &FlowState| geodesic_rhs(model, s),
            0.0,
            start,
            len,
            &ode,
        )?;
        Ok(sol.end())
    };
    let sol = newton(
        |u: &[f64; 2]| {
            let end = shoot(u[0], u[1])?;
            // Residual in local metric units at the target.
            Ok([(end[0] - q.x) / q.y, end[1] - target_w])
        },
        [seed.direction.angle, seed.length],
        &NewtonOptions {
            fd_h: 1e-7,
            tol: tol.max(1e-11),
            max_iter: 30,
        },
        "geodesic shot",
    )?;
    Ok(LogMap {
        direction: UnitVector {
            point: p,
            angle: crate::chart::wrap_angle(sol[0]),
        },
        length: sol[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_perturbed_model;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_vertical_and_arc() {
        let up = closed_form_log_map(ChartPoint::new(0.0, 1.0), ChartPoint::new(0.0, 2.0));
        assert_abs_diff_eq!(up.direction.angle, std::f64::consts::FRAC_PI_2, epsilon = 1e-14);
        assert_abs_diff_eq!(up.length, 2.0_f64.ln(), epsilon = 1e-14);

        // Symmetric arc on the circle of radius sqrt(2) about the origin:
        // leaves (-1, 1) at 45 degrees, length arccosh(3).
        let arc = closed_form_log_map(ChartPoint::new(-1.0, 1.0), ChartPoint::new(1.0, 1.0));
        assert_abs_diff_eq!(arc.direction.angle, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(arc.length, 3.0_f64.acosh(), epsilon = 1e-12);
    }

    #[test]
    fn closed_form_direction_integrates_to_target() {
        let m = SurfaceModel::hyperbolic();
        let p = ChartPoint::new(0.4, 0.9);
        let q = ChartPoint::new(-1.3, 2.1);
        let lm = closed_form_log_map(p, q);
        let ode = OdeOptions::default();
        let sol = integrate(
            |_t, s: &FlowState| geodesic_rhs(&m, s),
            0.0,
            state_of(&lm.direction),
            lm.length,
            &ode,
        )
        .unwrap();
        let end = sol.end();
        assert_abs_diff_eq!(end[0], q.x, epsilon = 1e-9);
        assert_abs_diff_eq!(end[1].exp(), q.y, epsilon = 1e-9);
    }

    #[test]
    fn shot_reproduces_closed_form_on_unperturbed_metric() {
        // The spec for `distance` on perturbed models, checked at zero
        // amplitude: the shot must match the closed form to 1e-6.
        let m = SurfaceModel::hyperbolic();
        let p = ChartPoint::new(-0.7, 1.3);
        let q = ChartPoint::new(1.9, 0.6);
        let shot = shot_log_map(&m, p, q, 1e-9).unwrap();
        let exact = closed_form_log_map(p, q);
        assert_abs_diff_eq!(shot.length, exact.length, epsilon = 1e-6);
        assert_abs_diff_eq!(shot.direction.angle, exact.direction.angle, epsilon = 1e-6);
    }

    #[test]
    fn perturbed_distance_is_symmetric_and_feels_the_dip() {
        let m = test_perturbed_model();
        let p = ChartPoint::new(-1.5, 2.2);
        let q = ChartPoint::new(1.5, 2.2);
        let d_pq = distance(&m, p, q, 1e-9).unwrap();
        let d_qp = distance(&m, q, p, 1e-9).unwrap();
        assert_abs_diff_eq!(d_pq, d_qp, epsilon = 1e-8);
        // The path crosses the metric dip, so it is strictly shorter than
        // the unperturbed distance.
        let d0 = SurfaceModel::closed_form_distance(p, q);
        assert!(d_pq < d0 - 1e-4, "d = {d_pq}, unperturbed {d0}");
    }

    #[test]
    fn triangle_inequality_on_perturbed_model() {
        let m = test_perturbed_model();
        let a = ChartPoint::new(-1.0, 1.5);
        let b = ChartPoint::new(0.5, 2.5);
        let c = ChartPoint::new(1.2, 1.1);
        let ab = distance(&m, a, b, 1e-9).unwrap();
        let bc = distance(&m, b, c, 1e-9).unwrap();
        let ac = distance(&m, a, c, 1e-9).unwrap();
        assert!(ac <= ab + bc + 1e-9);
        assert!(ab <= ac + bc + 1e-9);
    }
}
