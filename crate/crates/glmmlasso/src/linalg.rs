//! Small dense linear algebra kernels: Cholesky factorization, triangular
//! solves and a bounded scalar minimizer (Brent). Problem sizes here are
//! moderate (q up to a few hundred), so hand-rolled dense kernels are enough.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// In-place lower Cholesky factorization. The strict upper triangle is left
/// untouched and must be ignored by callers.
pub fn cholesky_in_place(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::numerical(format!(
                "Cholesky pivot {d:.3e} at index {j}; matrix not positive definite"
            )));
        }
        let dj = d.sqrt();
        a[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / dj;
        }
    }
    Ok(())
}

/// Solve L L^T x = b given the lower factor.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    // forward
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    // backward
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// log |L L^T| from the lower factor.
pub fn cholesky_logdet(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0
}

const GOLDEN: f64 = 0.381_966_011_250_105;

/// Brent's method for minimizing a univariate function on [a, b].
/// Returns (argmin, min value). `tol` is an absolute tolerance on x.
pub fn brent_minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // parabolic interpolation through (v, w, x)
            let r = (x - w) * (fx - fv);
            let q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            let mut q2 = 2.0 * (q - r);
            if q2 > 0.0 {
                p = -p;
            }
            q2 = q2.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q2 * e_old).abs() && p > q2 * (a - x) && p < q2 * (b - x) {
                d = p / q2;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_small() {
        let mut a = array![[4.0, 2.0], [2.0, 3.0]];
        cholesky_in_place(&mut a).unwrap();
        assert_abs_diff_eq!(a[[0, 0]], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[[1, 0]], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[[1, 1]], 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(cholesky_logdet(&a), (8f64).ln(), epsilon = 1e-12);
        let x = cholesky_solve(&a, &array![8.0, 7.0]);
        // [4 2; 2 3] x = [8, 7] -> x = [1.25, 1.5]
        assert_abs_diff_eq!(x[0], 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_in_place(&mut a).is_err());
    }

    #[test]
    fn brent_finds_quadratic_minimum() {
        let (x, fx) = brent_minimize(|x| (x - 0.7) * (x - 0.7) + 3.0, 0.0, 5.0, 1e-9, 200);
        assert_abs_diff_eq!(x, 0.7, epsilon = 1e-7);
        assert_abs_diff_eq!(fx, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn brent_boundary_minimum() {
        let (x, _) = brent_minimize(|x| x, 0.0, 2.0, 1e-9, 200);
        assert!(x < 1e-6);
    }
}
