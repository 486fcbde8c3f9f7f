//! Scalar bracketing and small dense Newton solves.

use crate::error::Error;
use crate::Result;

/// Bisection on a bracketed sign change. `f(lo)` and `f(hi)` must have
/// opposite signs (a zero endpoint is returned immediately).
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, tol_x: f64, what: &'static str) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoBracket {
            what,
            near: 0.5 * (lo + hi),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= tol_x {
            return Ok(mid);
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Controls for [`newton`].
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Finite-difference step for the Jacobian.
    pub fd_h: f64,
    /// Convergence threshold on the residual sup-norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            fd_h: 1e-6,
            tol: 1e-10,
            max_iter: 25,
        }
    }
}

/// Damped Newton iteration on `N` unknowns with a forward-difference
/// Jacobian. Converges when the residual sup-norm drops below `tol`.
pub fn newton<F, const N: usize>(
    mut f: F,
    x0: [f64; N],
    opts: &NewtonOptions,
    what: &'static str,
) -> Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N]>,
{
    let mut x = x0;
    let mut r = f(&x)?;
    let mut rn = sup_norm(&r);
    for _ in 0..opts.max_iter {
        if rn <= opts.tol {
            return Ok(x);
        }
        // Forward-difference Jacobian, column by column.
        let mut jac = [[0.0; N]; N];
        for c in 0..N {
            let mut xp = x;
            let h = opts.fd_h * (1.0 + x[c].abs());
            xp[c] += h;
            let rp = f(&xp)?;
            for rix in 0..N {
                jac[rix][c] = (rp[rix] - r[rix]) / h;
            }
        }
        let mut rhs = r;
        for v in rhs.iter_mut() {
            *v = -*v;
        }
        let step = solve(jac, rhs).ok_or(Error::NoConvergence {
            what,
            residual: rn,
        })?;
        // Backtracking: halve until the residual decreases (or give up the
        // damping after a few tries and take the full step).
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let mut xn = x;
            for i in 0..N {
                xn[i] += lambda * step[i];
            }
            match f(&xn) {
                Ok(rn_vec) => {
                    let nn = sup_norm(&rn_vec);
                    if nn < rn || lambda <= 1.0 / 64.0 {
                        x = xn;
                        r = rn_vec;
                        rn = nn;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence { what, residual: rn });
        }
    }
    if rn <= opts.tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence { what, residual: rn })
    }
}

fn sup_norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Gaussian elimination with partial pivoting for the tiny systems Newton
/// produces. Returns `None` on a (numerically) singular matrix.
fn solve<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..N {
            let m = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = [0.0; N];
    for col in (0..N).rev() {
        let mut s = b[col];
        for k in (col + 1)..N {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bisect_finds_sqrt_two() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-13, "sqrt").unwrap();
        assert_abs_diff_eq!(r, 2.0_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bisect_rejects_missing_bracket() {
        assert!(bisect(|x| Ok(x * x + 1.0), 0.0, 1.0, 1e-10, "none").is_err());
    }

    #[test]
    fn newton_solves_a_coupled_pair() {
        // x^2 + y^2 = 4, y = e^x - 1 near (1.0, 1.5).
        let sol = newton(
            |v: &[f64; 2]| Ok([v[0] * v[0] + v[1] * v[1] - 4.0, v[1] - v[0].exp() + 1.0]),
            [1.0, 1.5],
            &NewtonOptions::default(),
            "pair",
        )
        .unwrap();
        assert_abs_diff_eq!(sol[0] * sol[0] + sol[1] * sol[1], 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol[1], sol[0].exp() - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn newton_three_unknowns() {
        // Intersection of a sphere, a plane, and a quadric, regular at the
        // root (1, 1, 1).
        let sol = newton(
            |v: &[f64; 3]| {
                Ok([
                    v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0,
                    v[0] + 2.0 * v[1] + 3.0 * v[2] - 6.0,
                    v[0] * v[1] - v[2],
                ])
            },
            [1.2, 0.8, 1.1],
            &NewtonOptions::default(),
            "triple",
        )
        .unwrap();
        for c in sol {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-8);
        }
    }
}
