//! Adaptive Dormand-Prince 5(4) integration with dense output.
//!
//! One integrator serves every flow in the crate: it supports signed time
//! (backward runs pass `t1 < t0`), per-component error scaling
//! `atol + rtol * |y|`, an optional step cap, and the standard order-four
//! continuous extension so solutions can be evaluated between accepted steps
//! without degrading accuracy.

use crate::error::Error;
use crate::Result;

/// Integration controls. `rtol`/`atol` follow the usual scaled-norm
/// convention; `h_max` caps the step magnitude; `dense` keeps interpolation
/// coefficients for [`Solution::eval`].
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub dense: bool,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-13,
            h_max: f64::INFINITY,
            dense: true,
            max_steps: 1_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        OdeOptions {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

/// Dense-output record for one accepted step `[t, t + h]`.
#[derive(Debug, Clone)]
struct DenseSpan<const N: usize> {
    t: f64,
    h: f64,
    rcont: [[f64; N]; 5],
}

/// An accepted node of the integration.
#[derive(Debug, Clone, Copy)]
pub struct Node<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
}

/// Result of an integration: endpoint, accepted nodes, and (when requested)
/// a continuous extension over the whole span.
#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    nodes: Vec<Node<N>>,
    spans: Vec<DenseSpan<N>>,
    pub n_steps: usize,
    pub n_rejected: usize,
    pub n_evals: usize,
}

impl<const N: usize> Solution<N> {
    pub fn t0(&self) -> f64 {
        self.nodes.first().unwrap().t
    }

    pub fn t_end(&self) -> f64 {
        self.nodes.last().unwrap().t
    }

    pub fn end(&self) -> [f64; N] {
        self.nodes.last().unwrap().y
    }

    pub fn nodes(&self) -> &[Node<N>] {
        &self.nodes
    }

    /// Evaluates the continuous extension at `t` (must lie within the span,
    /// up to a small tolerance; endpoints are clamped).
    ///
    /// Panics if the solution was integrated with `dense: false`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        assert!(!self.spans.is_empty(), "solution has no dense output");
        let forward = self.t_end() >= self.t0();
        let slack = 1e-9 * (1.0 + self.t_end().abs().max(self.t0().abs()));
        let (lo, hi) = if forward {
            (self.t0(), self.t_end())
        } else {
            (self.t_end(), self.t0())
        };
        assert!(
            t >= lo - slack && t <= hi + slack,
            "eval at t = {t} outside integration span [{lo}, {hi}]"
        );
        let t = t.clamp(lo, hi);
        // Binary search for the span containing t.
        let idx = if forward {
            self.spans.partition_point(|s| s.t + s.h < t)
        } else {
            self.spans.partition_point(|s| s.t + s.h > t)
        }
        .min(self.spans.len() - 1);
        let s = &self.spans[idx];
        let theta = (t - s.t) / s.h;
        let th1 = 1.0 - theta;
        let mut out = [0.0; N];
        for j in 0..N {
            let r = [
                s.rcont[0][j],
                s.rcont[1][j],
                s.rcont[2][j],
                s.rcont[3][j],
                s.rcont[4][j],
            ];
            out[j] = r[0] + theta * (r[1] + th1 * (r[2] + theta * (r[3] + th1 * r[4])));
        }
        out
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
/// Dense-output weights for the fifth-stage interpolation polynomial.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// The right-hand side may fail (e.g. when the state leaves the chart);
/// the error aborts the integration and is passed through.
pub fn integrate<F, const N: usize>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: &OdeOptions,
) -> Result<Solution<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let mut sol = Solution {
        nodes: vec![Node { t: t0, y: y0 }],
        spans: Vec::new(),
        n_steps: 0,
        n_rejected: 0,
        n_evals: 0,
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y)?;
    sol.n_evals += 1;

    // Initial step size: standard two-probe heuristic.
    let sc = |yv: &[f64; N]| {
        let mut s = [0.0; N];
        for j in 0..N {
            s[j] = opts.atol + opts.rtol * yv[j].abs();
        }
        s
    };
    let scaled_norm = |v: &[f64; N], s: &[f64; N]| {
        let mut acc = 0.0;
        for j in 0..N {
            let r = v[j] / s[j];
            acc += r * r;
        }
        (acc / N as f64).sqrt()
    };
    let s0 = sc(&y);
    let d0 = scaled_norm(&y, &s0);
    let d1 = scaled_norm(&k1, &s0);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h = h.min(span).min(opts.h_max);
    {
        let mut yp = [0.0; N];
        for j in 0..N {
            yp[j] = y[j] + dir * h * k1[j];
        }
        let f1 = f(t + dir * h, &yp)?;
        sol.n_evals += 1;
        let mut diff = [0.0; N];
        for j in 0..N {
            diff[j] = f1[j] - k1[j];
        }
        let d2 = scaled_norm(&diff, &s0) / h;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        h = h1.min(100.0 * h).min(span).min(opts.h_max);
    }

    let mut rejected_last = false;
    loop {
        if sol.n_steps + sol.n_rejected >= opts.max_steps {
            return Err(Error::NoConvergence {
                what: "ode step budget",
                residual: (t1 - t).abs(),
            });
        }
        let remaining = (t1 - t).abs();
        if remaining <= 1e-14 * (1.0 + t.abs()) {
            break;
        }
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(Error::StepUnderflow { t, h });
        }
        let hs = dir * h;

        // Seven stages (FSAL: k7 doubles as next k1 on acceptance).
        let stage = |y: &[f64; N], ks: &[&[f64; N]], a: &[f64]| {
            let mut out = *y;
            for (i, k) in ks.iter().enumerate() {
                for j in 0..N {
                    out[j] += hs * a[i] * k[j];
                }
            }
            out
        };
        let k2 = f(t + C[1] * hs, &stage(&y, &[&k1], &A2))?;
        let k3 = f(t + C[2] * hs, &stage(&y, &[&k1, &k2], &A3))?;
        let k4 = f(t + C[3] * hs, &stage(&y, &[&k1, &k2, &k3], &A4))?;
        let k5 = f(t + C[4] * hs, &stage(&y, &[&k1, &k2, &k3, &k4], &A5))?;
        let k6 = f(t + C[5] * hs, &stage(&y, &[&k1, &k2, &k3, &k4, &k5], &A6))?;
        let y1 = stage(&y, &[&k1, &k2, &k3, &k4, &k5, &k6], &A7);
        let k7 = f(t + hs, &y1)?;
        sol.n_evals += 6;

        // Scaled error estimate.
        let ks = [&k1, &k2, &k3, &k4, &k5, &k6, &k7];
        let mut err_v = [0.0; N];
        for (i, k) in ks.iter().enumerate() {
            for j in 0..N {
                err_v[j] += hs * E[i] * k[j];
            }
        }
        let mut s = [0.0; N];
        for j in 0..N {
            s[j] = opts.atol + opts.rtol * y[j].abs().max(y1[j].abs());
        }
        let err = scaled_norm(&err_v, &s);

        if err <= 1.0 {
            if opts.dense {
                let mut rcont = [[0.0; N]; 5];
                for j in 0..N {
                    let dy = y1[j] - y[j];
                    let bspl = hs * k1[j] - dy;
                    rcont[0][j] = y[j];
                    rcont[1][j] = dy;
                    rcont[2][j] = bspl;
                    rcont[3][j] = dy - hs * k7[j] - bspl;
                    let mut d5 = 0.0;
                    for (i, k) in ks.iter().enumerate() {
                        d5 += D[i] * k[j];
                    }
                    rcont[4][j] = hs * d5;
                }
                sol.spans.push(DenseSpan { t, h: hs, rcont });
            }
            t = if last { t1 } else { t + hs };
            y = y1;
            k1 = k7;
            sol.nodes.push(Node { t, y });
            sol.n_steps += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, if rejected_last { 1.0 } else { 5.0 });
            h = (h * fac).min(opts.h_max);
            rejected_last = false;
        } else {
            sol.n_rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
            rejected_last = true;
        }
    }
    Ok(sol)
}
