//! Dense symmetric solvers used by the least-squares learners and the
//! linear-basis representer fits. Systems here are small (at most a few
//! hundred unknowns) so straightforward O(p^3) routines are adequate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Option<Array2<T>> {
    let p = a.nrows();
    debug_assert_eq!(p, a.ncols());
    let mut l = Array2::<T>::zeros((p, p));
    for j in 0..p {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..p {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve<T: Scalar>(l: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let p = l.nrows();
    let mut y = Array1::<T>::zeros(p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<T>::zeros(p);
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves a symmetric positive (semi-)definite system, adding a growing
/// diagonal jitter when the plain factorization fails.
pub fn solve_spd_jittered<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> Option<Array1<T>> {
    if let Some(l) = cholesky(a) {
        return Some(cholesky_solve(l.view(), b));
    }
    let p = a.nrows().max(1);
    let scale = (a.diag().iter().copied().sum::<T>() / T::of_usize(p)).abs() + T::one();
    let mut jitter = scale * T::of(1e-10);
    for _ in 0..8 {
        let mut aj = a.to_owned();
        for i in 0..a.nrows() {
            aj[[i, i]] += jitter;
        }
        if let Some(l) = cholesky(aj.view()) {
            return Some(cholesky_solve(l.view(), b));
        }
        jitter *= T::of(100.0);
    }
    None
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: ArrayView2<T>) -> Vec<T> {
    let p = a.nrows();
    let mut m = a.to_owned();
    let tol = T::epsilon() * T::of(0.5);
    for _sweep in 0..64 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..p {
            for j in 0..p {
                let v = m[[i, j]] * m[[i, j]];
                total += v;
                if i != j {
                    off += v;
                }
            }
        }
        if off <= tol * tol * total || off == T::zero() {
            break;
        }
        for q in 1..p {
            for r in 0..q {
                let apq = m[[r, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[r, r]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mkr = m[[k, r]];
                    let mkq = m[[k, q]];
                    m[[k, r]] = c * mkr - s * mkq;
                    m[[k, q]] = s * mkr + c * mkq;
                }
                for k in 0..p {
                    let mrk = m[[r, k]];
                    let mqk = m[[q, k]];
                    m[[r, k]] = c * mrk - s * mqk;
                    m[[q, k]] = s * mrk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..p).map(|i| m[[i, i]]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// 2-norm condition number of a symmetric matrix; infinite when singular
/// or indefinite.
pub fn condition_number<T: Scalar>(a: ArrayView2<T>) -> f64 {
    let ev = symmetric_eigenvalues(a);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > T::zero() => (hi / lo).as_f64(),
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Condition number of a symmetric positive-definite matrix given its
/// Cholesky factor. Small systems use the exact Jacobi spectrum; larger ones
/// estimate the extreme eigenvalues by power and inverse iteration.
pub fn spd_condition<T: Scalar>(a: ArrayView2<T>, chol: ArrayView2<T>) -> f64 {
    let p = a.nrows();
    if p <= 48 {
        return condition_number(a);
    }
    let start = Array1::from_shape_fn(p, |i| T::one() + T::of(0.01) * T::of_usize(i % 7));
    let normalize = |v: &mut Array1<T>| {
        let nrm = v.dot(v).sqrt();
        if nrm > T::zero() {
            v.mapv_inplace(|x| x / nrm);
        }
    };
    let mut v = start.clone();
    normalize(&mut v);
    let mut lmax = T::zero();
    for _ in 0..200 {
        let mut w = a.dot(&v);
        let est = v.dot(&w);
        normalize(&mut w);
        v = w;
        if (est - lmax).abs() <= T::of(1e-10) * est.abs() {
            lmax = est;
            break;
        }
        lmax = est;
    }
    let mut u = start;
    normalize(&mut u);
    let mut inv_max = T::zero();
    for _ in 0..200 {
        let mut w = cholesky_solve(chol, u.view());
        let est = u.dot(&w);
        normalize(&mut w);
        u = w;
        if (est - inv_max).abs() <= T::of(1e-10) * est.abs() {
            inv_max = est;
            break;
        }
        inv_max = est;
    }
    if !(inv_max > T::zero()) || !inv_max.is_finite() {
        return f64::INFINITY;
    }
    (lmax * inv_max).as_f64()
}

/// `(1/n) XᵀX`.
pub fn scaled_gram<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let n = T::of_usize(x.nrows().max(1));
    x.t().dot(&x) / n
}

/// Column means and standard deviations (population, `1/n`).
pub fn column_moments<T: Scalar>(x: ArrayView2<T>) -> (Array1<T>, Array1<T>) {
    let n = x.nrows();
    if n == 0 {
        return (Array1::zeros(x.ncols()), Array1::ones(x.ncols()));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let mut sd = Array1::<T>::zeros(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let mu = mean[j];
        let v: T = col.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / T::of_usize(n);
        sd[j] = v.sqrt();
    }
    (mean, sd)
}
