//! Transfer ratios between orbits of one forward-asymptotic class: the limit
//! of backward contraction ratios along two orbits that approach each other,
//! its extension to a frame map between the tangent planes at the two feet,
//! and the companion unstable ratio recovered from the contraction gap.
//!
//! The stable ratio is evaluated as `exp(z'(T) - z(T))` where `z` is the
//! log-integral of the backward contraction rate along each orbit; the
//! difference settles geometrically, so the horizon `T` is grown until a
//! Cauchy band derived from the certified pinching rate drops below the
//! requested tolerance.
//!
//! That single shared horizon is only usable when the long forward orbits
//! stay glued to their class, which the spines guarantee by re-anchoring on
//! the far constants.  Models without far constants (periodized fields) get
//! no such anchor: integration drift is amplified along the unstable
//! direction, and past the shadowing time the two computed orbits decorrelate
//! and the shared-horizon difference is noise.  For those models the ratio is
//! telescoped down the leaf instead: the cocycle identity
//! `ln X(b|a) = [z_b(L) - z_a(L)] + ln X(ψ_L b | ψ_L a)` is applied in legs
//! short enough to stay inside the shadowing window, and the tail is cut once
//! the advanced pair is so close that the certified pinching bounds make the
//! remaining integral negligible.

use serde::{Deserialize, Serialize};

use crate::boundary::asymptotic_vector;
use crate::chart::{angle_diff, TangentVector, UnitVector};
use crate::error::Error;
use crate::model::SurfaceModel;
use crate::ode::OdeOptions;
use crate::riccati::StabilityProfiles;
use crate::Result;

/// Spacing of the Cauchy test for the horizon loop.
const HORIZON_DT: f64 = 2.0;
/// Horizon growth per retry and its hard cap.
const HORIZON_GROW: f64 = 8.0;
const HORIZON_CAP: f64 = 60.0;
/// Flow time of one telescoping leg on models without far constants: short
/// enough that a pair of leaf orbits still shadows its true counterpart.
const LEG_LEN: f64 = 10.0;
/// Leg budget; the pair must come together within this many legs.
const LEG_CAP: usize = 8;
/// Angular residual above which a vector is rejected as not belonging to the
/// forward-asymptotic class of the reference vector.
const CLASS_RESIDUAL_CAP: f64 = 1e-6;

/// A computed transfer ratio with its provenance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransferValue {
    /// The dimensionless ratio itself (always positive).
    pub value: f64,
    /// Horizon actually used for the defining limit.
    pub horizon: f64,
    /// Cauchy band of the truncation plus the underlying sweep errors.
    pub error_estimate: f64,
    /// Set when an independent cross-check disagreed beyond the combined
    /// error bands (the value is still the defining formula's).
    pub flagged: bool,
}

/// Rejects `vp` unless it is forward-asymptotic to `v`, measured by the
/// angular residual against the asymptotic vector of the class at its foot.
pub(crate) fn require_class_member(
    model: &SurfaceModel,
    v: &UnitVector,
    vp: &UnitVector,
    opts: &OdeOptions,
) -> Result<()> {
    let va = asymptotic_vector(model, vp.point, v, 1e-9, opts)?;
    let residual = angle_diff(va.angle, vp.angle).abs();
    if residual > CLASS_RESIDUAL_CAP {
        return Err(Error::Precondition {
            msg: format!(
                "vector is not forward-asymptotic to the reference: \
                 angular residual {residual:.3e} at its foot"
            ),
        });
    }
    Ok(())
}

/// Backward-sweep profiles for `a` and `b` at a shared horizon grown until
/// the stable log-ratio `z_b - z_a` satisfies the Cauchy criterion at `tol`.
fn paired_profiles(
    model: &SurfaceModel,
    a: &UnitVector,
    b: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<(StabilityProfiles, StabilityProfiles, f64, f64)> {
    let q1 = model.bounds().q1;
    let ptol = (0.1 * tol).clamp(1e-11, 1e-7);
    let shrink = 1.0 - (-q1 * HORIZON_DT).exp();
    let mut t = (tol.recip().ln() / q1).clamp(8.0, 30.0);
    loop {
        let pa = StabilityProfiles::compute(model, a, t, ptol, opts)?;
        let pb = StabilityProfiles::compute(model, b, t, ptol, opts)?;
        let ln_x = |s: f64| pb.z_minus(s) - pa.z_minus(s);
        let delta = ln_x(t) - ln_x(t - HORIZON_DT);
        let band =
            delta.abs() / shrink + pa.error_estimate() + pb.error_estimate();
        if band <= tol {
            return Ok((pa, pb, t, band));
        }
        if t >= HORIZON_CAP {
            return Err(Error::NoCauchy {
                what: "transfer ratio horizon",
                horizon: t,
                last_delta: delta,
            });
        }
        t = (t + HORIZON_GROW).min(HORIZON_CAP);
    }
}

/// Both leafwise log-ratios of a class pair, telescoped in shadowing-length
/// legs (the pathway for models without far constants).
pub(crate) struct LeafRatios {
    /// `lim [z_-^b(T) - z_-^a(T)]`, the log of the stable transfer ratio.
    pub ln_minus: f64,
    /// `lim [z_+^b(T) - z_+^a(T)]`, the log of the forward-expansion ratio.
    pub ln_plus: f64,
    /// Total flow time covered by the legs.
    pub length: f64,
    /// Accumulated sweep errors plus the certified bound on the cut tail.
    pub band: f64,
}

/// Bundle separation used to bound the telescoping tail: the unperturbed
/// chart distance of the feet (exact for periodized models, whose metric is
/// unperturbed) plus the frame angle gap.
fn pair_separation(a: &UnitVector, b: &UnitVector) -> f64 {
    SurfaceModel::closed_form_distance(a.point, b.point) + angle_diff(a.angle, b.angle).abs()
}

/// Telescopes `ln X(b0 | a0)` down the leaf: each leg accumulates the
/// profile difference over `LEG_LEN` and advances both orbits; the tail is
/// cut when the certified pinching bound `(q0 - q1)/q1 · separation` on the
/// remaining integral drops under the tolerance.  Accuracy rests on legs
/// short enough that integration drift (unstable-direction amplification of
/// local error) stays far below the pair separation, which fails for long
/// shared horizons on exactly these models.
pub(crate) fn leafwise_log_ratios(
    model: &SurfaceModel,
    a0: &UnitVector,
    b0: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<LeafRatios> {
    let bounds = model.bounds();
    let coeff = (bounds.q0 - bounds.q1) / bounds.q1;
    let ptol = (0.1 * tol).clamp(1e-11, 1e-7);
    let mut a = *a0;
    let mut b = *b0;
    let (mut ln_minus, mut ln_plus) = (0.0f64, 0.0f64);
    let (mut length, mut band) = (0.0f64, 0.0f64);
    let mut tail = coeff * pair_separation(&a, &b);
    for _ in 0..LEG_CAP {
        if tail <= 0.3 * tol {
            return Ok(LeafRatios {
                ln_minus,
                ln_plus,
                length,
                band: band + tail,
            });
        }
        let pa = StabilityProfiles::compute(model, &a, LEG_LEN, ptol, opts)?;
        let pb = StabilityProfiles::compute(model, &b, LEG_LEN, ptol, opts)?;
        ln_minus += pb.z_minus(LEG_LEN) - pa.z_minus(LEG_LEN);
        ln_plus += pb.z_plus(LEG_LEN) - pa.z_plus(LEG_LEN);
        band += pa.error_estimate() + pb.error_estimate() + 50.0 * opts.rtol;
        a = pa.unit_at(LEG_LEN);
        b = pb.unit_at(LEG_LEN);
        length += LEG_LEN;
        tail = coeff * pair_separation(&a, &b);
    }
    Err(Error::NoCauchy {
        what: "leafwise transfer telescoping",
        horizon: length,
        last_delta: tail,
    })
}

/// Whether the model lacks far constants, so class ratios must telescope.
pub(crate) fn needs_telescoping(model: &SurfaceModel) -> bool {
    model.far_kappa().is_none() || model.far_log_factor().is_none()
}

/// Stable transfer `X(v, v')`: the limit of backward contraction ratios
/// `y_-(v',t)/y_-(v,t)` over the shared horizon.
pub fn stable_transfer(
    model: &SurfaceModel,
    v: &UnitVector,
    vp: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<TransferValue> {
    if v.point.x == vp.point.x && v.point.y == vp.point.y && v.angle == vp.angle {
        return Ok(TransferValue {
            value: 1.0,
            horizon: 0.0,
            error_estimate: 0.0,
            flagged: false,
        });
    }
    require_class_member(model, v, vp, opts)?;
    if needs_telescoping(model) {
        let r = leafwise_log_ratios(model, v, vp, tol, opts)?;
        return Ok(TransferValue {
            value: r.ln_minus.exp(),
            horizon: r.length,
            error_estimate: r.band,
            flagged: false,
        });
    }
    let (pv, pw, t, band) = paired_profiles(model, v, vp, tol, opts)?;
    Ok(TransferValue {
        value: (pw.z_minus(t) - pv.z_minus(t)).exp(),
        horizon: t,
        error_estimate: band,
        flagged: false,
    })
}

/// Extended stable transfer: maps a tangent vector at the foot of `v'` to
/// one at the foot of `v` by scaling the transverse component with
/// `X(v, v')` and carrying the longitudinal component across unchanged.
pub fn extended_stable_transfer(
    model: &SurfaceModel,
    v: &UnitVector,
    vp: &UnitVector,
    xi: &TangentVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<TangentVector> {
    let x = stable_transfer(model, v, vp, tol, opts)?.value;
    let long = model.inner(xi, &model.embed_unit(vp));
    let trans = model.inner(xi, &model.embed_unit(&model.normal_unit(vp)));
    let e_v = model.embed_unit(v);
    let e_n = model.embed_unit(&model.normal_unit(v));
    Ok(e_v.scale(long).add(&e_n.scale(x * trans)))
}

/// Unstable transfer `X̲(v, v')`, recovered from the contraction-gap ratio
/// times the reversed stable transfer, cross-checked against the direct
/// ratio of forward expansions at the same horizon.
pub fn unstable_transfer(
    model: &SurfaceModel,
    v: &UnitVector,
    vp: &UnitVector,
    tol: f64,
    opts: &OdeOptions,
) -> Result<TransferValue> {
    if v.point.x == vp.point.x && v.point.y == vp.point.y && v.angle == vp.angle {
        return Ok(TransferValue {
            value: 1.0,
            horizon: 0.0,
            error_estimate: 0.0,
            flagged: false,
        });
    }
    require_class_member(model, v, vp, opts)?;
    if needs_telescoping(model) {
        let r = leafwise_log_ratios(model, v, vp, tol, opts)?;
        let ptol = (0.1 * tol).clamp(1e-11, 1e-7);
        let pv = StabilityProfiles::compute(model, v, 0.0, ptol, opts)?;
        let pw = StabilityProfiles::compute(model, vp, 0.0, ptol, opts)?;
        let gap_v = pv.u_plus(0.0) - pv.u_minus(0.0);
        let gap_w = pw.u_plus(0.0) - pw.u_minus(0.0);
        let value = gap_w / gap_v * (-r.ln_minus).exp();
        // Independent pathway: the telescoped forward-expansion ratio.
        let direct = r.ln_plus.exp();
        let defect = (value - direct).abs() / value.max(direct);
        let allowance = 10.0 * (r.band + tol);
        return Ok(TransferValue {
            value,
            horizon: r.length,
            error_estimate: r.band + defect,
            flagged: defect > allowance,
        });
    }
    // Profiles in the reversed order: the formula uses X(v', v).
    let (pw, pv, t, band) = paired_profiles(model, vp, v, tol, opts)?;
    let gap_v = pv.u_plus(0.0) - pv.u_minus(0.0);
    let gap_w = pw.u_plus(0.0) - pw.u_minus(0.0);
    let x_rev = (pv.z_minus(t) - pw.z_minus(t)).exp();
    let value = gap_w / gap_v * x_rev;
    // Independent pathway: the forward expansions of the two sweeps.
    let direct = (pw.z_plus(t) - pv.z_plus(t)).exp();
    let q1 = model.bounds().q1;
    let allowance = 10.0 * ((-q1 * t).exp() + band + tol);
    let defect = (value - direct).abs() / value.max(direct);
    let err = band + defect;
    Ok(TransferValue {
        value,
        horizon: t,
        error_estimate: err,
        flagged: defect > allowance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ChartPoint;
    use crate::model::test_perturbed_model;

    fn member(model: &SurfaceModel, v: &UnitVector, x: f64, y: f64) -> UnitVector {
        asymptotic_vector(model, ChartPoint::new(x, y), v, 1e-10, &OdeOptions::default())
            .unwrap()
    }

    #[test]
    fn identical_vectors_transfer_to_one_exactly() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let x = stable_transfer(&model, &v, &v, 1e-8, &OdeOptions::default()).unwrap();
        assert_eq!(x.value, 1.0);
        assert_eq!(x.error_estimate, 0.0);
        let u = unstable_transfer(&model, &v, &v, 1e-8, &OdeOptions::default()).unwrap();
        assert_eq!(u.value, 1.0);
    }

    #[test]
    fn constant_field_transfers_are_unity() {
        // Constant contraction rate: the backward decay is footpoint-free,
        // so every ratio in the class is 1.
        let model = SurfaceModel::constant_kappa(0.6).unwrap();
        let v = UnitVector::new(0.4, 2.2, 1.1);
        let opts = OdeOptions::default();
        for (x, y) in [(1.4, 2.0), (-0.6, 1.1), (2.0, 3.4)] {
            let vp = member(&model, &v, x, y);
            let s = stable_transfer(&model, &v, &vp, 1e-7, &opts).unwrap();
            assert!((s.value - 1.0).abs() < 1e-6, "X = {}", s.value);
            let u = unstable_transfer(&model, &v, &vp, 1e-7, &opts).unwrap();
            assert!((u.value - 1.0).abs() < 1e-6, "unstable = {}", u.value);
            assert!(!u.flagged);
        }
    }

    #[test]
    fn reciprocity_holds_on_the_perturbed_model() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        for (x, y) in [(1.5, 0.9), (-0.8, 1.6), (0.9, 2.4)] {
            let vp = member(&model, &v, x, y);
            let ab = stable_transfer(&model, &v, &vp, 1e-8, &opts).unwrap();
            let ba = stable_transfer(&model, &vp, &v, 1e-8, &opts).unwrap();
            let r = ab.value * ba.value;
            assert!((r - 1.0).abs() < 1e-6, "reciprocity defect {}", (r - 1.0).abs());
            assert!((ab.value - 1.0).abs() > 1e-4, "perturbation should bite");
        }
    }

    #[test]
    fn transfer_is_a_cocycle_along_the_class() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let v1 = member(&model, &v, 1.2, 1.5);
        let v2 = member(&model, &v, -0.9, 0.8);
        let whole = stable_transfer(&model, &v, &v2, 1e-8, &opts).unwrap();
        let first = stable_transfer(&model, &v, &v1, 1e-8, &opts).unwrap();
        let second = stable_transfer(&model, &v1, &v2, 1e-8, &opts).unwrap();
        let defect = (whole.value - first.value * second.value).abs();
        assert!(defect < 1e-5, "cocycle defect {defect}");
    }

    #[test]
    fn longer_horizons_shrink_the_error_estimate() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let vp = member(&model, &v, 1.5, 0.9);
        let loose = stable_transfer(&model, &v, &vp, 1e-4, &opts).unwrap();
        let tight = stable_transfer(&model, &v, &vp, 1e-9, &opts).unwrap();
        assert!(tight.horizon > loose.horizon);
        assert!(tight.error_estimate < loose.error_estimate);
        assert!(
            (loose.value - tight.value).abs() <= loose.error_estimate.max(1e-9) * 1.5,
            "horizon doubling moved the value beyond its band: {} vs {}",
            loose.value,
            tight.value
        );
    }

    #[test]
    fn extended_transfer_acts_by_frames() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let vp = member(&model, &v, 1.5, 0.9);
        let x = stable_transfer(&model, &v, &vp, 1e-8, &opts).unwrap().value;

        // The longitudinal unit maps to the longitudinal unit.
        let img = extended_stable_transfer(
            &model, &v, &vp, &model.embed_unit(&vp), 1e-8, &opts,
        )
        .unwrap();
        let e_v = model.embed_unit(&v);
        assert!((img.dx - e_v.dx).abs() < 1e-8 && (img.dy - e_v.dy).abs() < 1e-8);

        // The normal unit maps to X times the normal unit.
        let img_n = extended_stable_transfer(
            &model, &v, &vp, &model.embed_unit(&model.normal_unit(&vp)), 1e-8, &opts,
        )
        .unwrap();
        let e_n = model.embed_unit(&model.normal_unit(&v));
        assert!(
            (img_n.dx - x * e_n.dx).abs() < 1e-8 && (img_n.dy - x * e_n.dy).abs() < 1e-8
        );

        // Linearity in the argument.
        let xi = model.embed_unit(&vp).scale(0.7).add(
            &model.embed_unit(&model.normal_unit(&vp)).scale(-1.3),
        );
        let lhs = extended_stable_transfer(&model, &v, &vp, &xi, 1e-8, &opts).unwrap();
        let rhs = img.scale(0.7).add(&img_n.scale(-1.3));
        assert!((lhs.dx - rhs.dx).abs() < 1e-10 && (lhs.dy - rhs.dy).abs() < 1e-10);
    }

    #[test]
    fn unstable_formula_agrees_with_the_direct_ratio() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let opts = OdeOptions::default();
        let vp = member(&model, &v, -0.8, 1.6);
        let u = unstable_transfer(&model, &v, &vp, 1e-7, &opts).unwrap();
        assert!(u.value > 0.0);
        assert!(!u.flagged, "cross-check flagged: error {}", u.error_estimate);
    }

    #[test]
    fn foreign_vectors_are_rejected() {
        let model = test_perturbed_model();
        let v = UnitVector::new(0.3, 1.1, 0.4);
        let stranger = UnitVector::new(1.5, 0.9, -2.0);
        let err = stable_transfer(&model, &v, &stranger, 1e-8, &OdeOptions::default());
        assert!(matches!(err, Err(Error::Precondition { .. })));
    }
}
