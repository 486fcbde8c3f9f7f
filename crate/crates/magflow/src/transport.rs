//! Frame transport along pushed level curves.
//!
//! Pushing every point of a traced level curve by the same flow time yields a
//! family of curves that contract at the certified pinching rate.  The
//! transport studied here is the orientation-preserving isometry that carries
//! the tangent plane at the pushed curve point over parameter `s` onto the
//! tangent plane at the pushed base point, sending the flow frame (flow
//! direction and its left normal) at the source exactly onto the flow frame
//! at the target.  It factors as Levi-Civita parallel transport along the
//! pushed curve composed with a closing rotation; the closing angle and its
//! decay in the push time are the quantitative handles used by the
//! straightening analysis.
//!
//! In chart components every orientation-preserving isometry between tangent
//! planes of a conformal metric is a rotation combined with the ratio of the
//! conformal factors at the two endpoints, so the whole map is recorded as
//! angles plus one log-scale.

use crate::chart::{angle_diff, ChartPoint, TangentVector, UnitVector};
use crate::flow::{flow_to, OrbitSegment};
use crate::horocycle::HorocycleCurve;
use crate::model::SurfaceModel;
use crate::ode::OdeOptions;
use crate::quad::CubicHermite;
use crate::Result;

/// Target parameter step when sampling a pushed curve for the transport
/// quadrature (matches the level-curve trace grid).
const CURVE_STEP: f64 = 0.02;
/// Target time step when sampling an orbit for the transport quadrature.
const ORBIT_STEP: f64 = 0.02;

/// The frame-carrying isometry between two points of a pushed level curve.
///
/// Maps the tangent plane at the pushed curve point over parameter `s` onto
/// the tangent plane at the pushed base point.  By construction the flow
/// frame at the source goes exactly onto the flow frame at the target; the
/// parallel-transport factor and the closing rotation are kept separate so
/// the closing angle can be examined on its own.
#[derive(Debug, Clone, Copy)]
pub struct HorocyclicTransport {
    s: f64,
    t: f64,
    source: UnitVector,
    target: UnitVector,
    tau_angle: f64,
    zeta: f64,
    log_scale: f64,
}

impl HorocyclicTransport {
    /// Curve parameter of the source point.
    pub fn s(&self) -> f64 {
        self.s
    }

    /// Push time applied to the curve before transporting.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Pushed flow vector at the source (its point carries the source plane).
    pub fn source(&self) -> &UnitVector {
        &self.source
    }

    /// Pushed flow vector at the target (its point carries the target plane).
    pub fn target(&self) -> &UnitVector {
        &self.target
    }

    /// Chart rotation angle of the parallel-transport factor alone.
    pub fn tau_angle(&self) -> f64 {
        self.tau_angle
    }

    /// Closing rotation aligning the transported flow frame with the frame
    /// at the target; zero exactly when parallel transport already closes.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Total chart rotation angle of the isometry.
    pub fn angle(&self) -> f64 {
        self.tau_angle + self.zeta
    }

    /// Applies the isometry to chart components of a tangent vector sitting
    /// at the source point; the result sits at the target point.
    pub fn apply(&self, w: &TangentVector) -> TangentVector {
        let scale = self.log_scale.exp();
        let (sin_b, cos_b) = self.angle().sin_cos();
        TangentVector::new(
            self.target.point,
            scale * (cos_b * w.dx - sin_b * w.dy),
            scale * (sin_b * w.dx + cos_b * w.dy),
        )
    }
}

/// Chart angles of the pushed direction family, made continuous in the grid
/// index (flowed endpoints come back wrapped).
fn unwrap_sequence(raw: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for a in raw {
        let next = match out.last() {
            Some(&prev) => prev + angle_diff(a, prev),
            None => a,
        };
        out.push(next);
    }
    out
}

/// Log of the conformal factor at a chart point.
fn log_factor(model: &SurfaceModel, p: ChartPoint) -> f64 {
    model.conformal_factor(p).ln()
}

/// Transport along the level curve of `curve` pushed by flow time `t`, from
/// the point over parameter `s` to the point over the base.
///
/// Every grid vector of the curve between the base and `s` is advanced by
/// `t`; the parallel-transport rotation is the line integral of the
/// connection form along the resulting curve, and the closing rotation is
/// whatever remains to carry the pushed direction at `s` onto the pushed
/// direction at the base.
pub fn horocyclic_transport(
    model: &SurfaceModel,
    curve: &HorocycleCurve,
    s: f64,
    t: f64,
    opts: &OdeOptions,
) -> Result<HorocyclicTransport> {
    let flow_opts = OdeOptions {
        dense: false,
        ..*opts
    };
    if s.abs() < 1e-12 {
        let base = flow_to(model, &curve.vector_at(0.0), t, &flow_opts)?;
        return Ok(HorocyclicTransport {
            s,
            t,
            source: base,
            target: base,
            tau_angle: 0.0,
            zeta: 0.0,
            log_scale: 0.0,
        });
    }

    // Uniform parameter grid from the base to `s` (index 0 at the base).
    let n = ((s.abs() / CURVE_STEP).ceil() as usize).max(2);
    let h = s / n as f64;
    let sigmas: Vec<f64> = (0..=n).map(|j| j as f64 * h).collect();

    // The direction family along the curve, continuous in the parameter so
    // the pushed family stays comparable without wrapping artifacts.
    let start_angles = unwrap_sequence(sigmas.iter().map(|&sg| curve.vector_at(sg).angle));
    let starts: Vec<UnitVector> = sigmas
        .iter()
        .zip(&start_angles)
        .map(|(&sg, &a)| UnitVector {
            point: curve.point(sg),
            angle: a,
        })
        .collect();
    let pushed: Vec<UnitVector> = crate::batch::map(&starts, |v| flow_to(model, v, t, &flow_opts))
        .into_iter()
        .collect::<Result<_>>()?;
    let angles = unwrap_sequence(pushed.iter().map(|v| v.angle));

    // Line integral of the connection form along the pushed curve: ascending
    // arrays for the spline, velocities by high-order differencing.
    let (sig_asc, pts_asc): (Vec<f64>, Vec<ChartPoint>) = if s > 0.0 {
        (sigmas.clone(), pushed.iter().map(|v| v.point).collect())
    } else {
        (
            sigmas.iter().rev().copied().collect(),
            pushed.iter().rev().map(|v| v.point).collect(),
        )
    };
    let xs: Vec<f64> = pts_asc.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = pts_asc.iter().map(|p| p.y).collect();
    let dxs = crate::horocycle::stencil_derivatives(&xs, h.abs());
    let dys = crate::horocycle::stencil_derivatives(&ys, h.abs());
    let integrand: Vec<f64> = pts_asc
        .iter()
        .zip(dxs.iter().zip(&dys))
        .map(|(&p, (&dx, &dy))| -model.connection_form(p, dx, dy))
        .collect();
    let prefix = CubicHermite::new(sig_asc, integrand);
    // Transport from the source parameter to the base adds the oriented
    // integral of the form over that stretch to a vector's chart angle.
    let tau_angle = prefix.prefix_integral(0.0) - prefix.prefix_integral(s);

    let zeta = angles[0] - angles[n] - tau_angle;
    let source = pushed[n];
    let target = pushed[0];
    let log_scale = log_factor(model, source.point) - log_factor(model, target.point);
    Ok(HorocyclicTransport {
        s,
        t,
        source,
        target,
        tau_angle,
        zeta,
        log_scale,
    })
}

/// Chart rotation angle picked up by a parallel frame carried along the
/// orbit of `v` from flow time `t0` to `t1`.
pub fn orbit_transport_angle(
    model: &SurfaceModel,
    v: &UnitVector,
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(0.0);
    }
    let start = flow_to(
        model,
        v,
        t0,
        &OdeOptions {
            dense: false,
            ..*opts
        },
    )?;
    let seg = OrbitSegment::compute(
        model,
        &start,
        span,
        &OdeOptions {
            dense: true,
            ..*opts
        },
    )?;
    let n = ((span.abs() / ORBIT_STEP).ceil() as usize).max(4);
    let lo = span.min(0.0);
    let step = span.abs() / n as f64;
    let ts: Vec<f64> = (0..=n).map(|j| lo + j as f64 * step).collect();
    let integrand: Vec<f64> = ts
        .iter()
        .map(|&tau| {
            let st = seg.state_at(tau);
            let p = ChartPoint::new(st[0], st[1].exp());
            let inv = 1.0 / model.conformal_factor(p);
            let (sin_a, cos_a) = st[2].sin_cos();
            -model.connection_form(p, inv * cos_a, inv * sin_a)
        })
        .collect();
    let hi = lo + span.abs();
    let total = CubicHermite::new(ts, integrand).prefix_integral(hi);
    Ok(if span > 0.0 { total } else { -total })
}

/// Angular discrepancy between the transports of the same curve stretch at
/// two push times, after carrying both ends along their orbits so the maps
/// become comparable.
///
/// The conformal scales of the two maps agree exactly under this
/// identification, so the operator distance is purely angular:
/// `2 |sin(delta / 2)|` for the angle mismatch `delta`.
pub fn transport_discrepancy(
    model: &SurfaceModel,
    curve: &HorocycleCurve,
    s: f64,
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let chi0 = horocyclic_transport(model, curve, s, t0, opts)?;
    let chi1 = horocyclic_transport(model, curve, s, t1, opts)?;
    let along_source = orbit_transport_angle(model, &curve.vector_at(s), t0, t1, opts)?;
    let along_target = orbit_transport_angle(model, &curve.vector_at(0.0), t0, t1, opts)?;
    let delta = (chi1.angle() - chi0.angle()) + (along_source - along_target);
    Ok(2.0 * (0.5 * delta).sin().abs())
}
