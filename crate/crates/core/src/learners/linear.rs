//! Least-squares, ridge and logistic regression on standardized features.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::LearnerError;
use crate::linalg::{column_moments, solve_spd_jittered};
use crate::scalar::Scalar;

/// Column standardization learned on training rows. Constant columns are
/// mapped to zero so they drop out of every fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: ArrayView2<T>) -> Self {
        let (mean, sd) = column_moments(x);
        let tiny = T::of(1e-12);
        let scale = sd.mapv(|s| if s > tiny { T::one() / s } else { T::zero() });
        Self { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (mu, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - mu) * s);
        }
        out
    }

    pub fn transform_row(&self, row: ArrayView1<T>, out: &mut [T]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.mean[j]) * self.scale[j];
        }
    }
}

/// `y ≈ b0 + xᵀ b` with an optional ridge penalty on `b` (standardized scale).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub standardizer: Standardizer<T>,
    pub intercept: T,
    pub coef: Array1<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn fit(x: ArrayView2<T>, y: ArrayView1<T>, lambda: T) -> Result<Self, LearnerError> {
        let n = x.nrows();
        let st = Standardizer::fit(x);
        let xs = st.transform(x);
        let ybar = y.sum() / T::of_usize(n);
        let yc = y.mapv(|v| v - ybar);
        let nf = T::of_usize(n);
        let mut g = xs.t().dot(&xs) / nf;
        let b = xs.t().dot(&yc) / nf;
        let p = g.nrows();
        for j in 0..p {
            if st.scale[j] == T::zero() {
                g[[j, j]] = T::one();
            } else {
                g[[j, j]] += lambda;
            }
        }
        let coef = solve_spd_jittered(g.view(), b.view()).ok_or(LearnerError::SingularSystem)?;
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(LearnerError::SingularSystem);
        }
        Ok(Self {
            standardizer: st,
            intercept: ybar,
            coef,
        })
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Array1<T> {
        let xs = self.standardizer.transform(x);
        xs.dot(&self.coef).mapv(|v| v + self.intercept)
    }
}

/// Logistic regression fitted by iteratively reweighted least squares.
/// Targets may be fractional in `[0, 1]` (quasi-binomial).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub standardizer: Standardizer<T>,
    pub intercept: T,
    pub coef: Array1<T>,
}

const LOGISTIC_RIDGE: f64 = 1e-4;
const LOGISTIC_MAX_ITER: usize = 50;

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> LogisticModel<T> {
    pub fn fit(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<Self, LearnerError> {
        let n = x.nrows();
        let st = Standardizer::fit(x);
        let xs = st.transform(x);
        let p = xs.ncols();
        // design with leading intercept column
        let mut d = Array2::<T>::ones((n, p + 1));
        d.slice_mut(ndarray::s![.., 1..]).assign(&xs);
        let ybar = (y.sum() / T::of_usize(n)).max(T::of(1e-6)).min(T::of(1.0 - 1e-6));
        let mut beta = Array1::<T>::zeros(p + 1);
        beta[0] = (ybar / (T::one() - ybar)).ln();
        let nf = T::of_usize(n);
        let ridge = T::of(LOGISTIC_RIDGE);
        let mut prev_dev = T::infinity();
        for _ in 0..LOGISTIC_MAX_ITER {
            let eta = d.dot(&beta);
            let mu = eta.mapv(sigmoid);
            let wts = mu.mapv(|m| (m * (T::one() - m)).max(T::of(1e-10)));
            let mut h = Array2::<T>::zeros((p + 1, p + 1));
            let mut grad = Array1::<T>::zeros(p + 1);
            for i in 0..n {
                let r = y[i] - mu[i];
                let row = d.row(i);
                for a in 0..=p {
                    grad[a] += row[a] * r;
                    let wa = wts[i] * row[a];
                    for b in 0..=a {
                        h[[a, b]] += wa * row[b];
                    }
                }
            }
            for a in 0..=p {
                for b in 0..a {
                    h[[b, a]] = h[[a, b]];
                }
            }
            h.mapv_inplace(|v| v / nf);
            grad.mapv_inplace(|v| v / nf);
            for a in 1..=p {
                if st.scale[a - 1] == T::zero() {
                    h[[a, a]] = T::one();
                } else {
                    h[[a, a]] += ridge;
                    grad[a] -= ridge * beta[a];
                }
            }
            let step = solve_spd_jittered(h.view(), grad.view()).ok_or(LearnerError::SingularSystem)?;
            beta += &step;
            let eta = d.dot(&beta);
            let dev: T = eta
                .iter()
                .zip(y.iter())
                .map(|(&e, &t)| {
                    let m = sigmoid(e).max(T::of(1e-12)).min(T::of(1.0 - 1e-12));
                    -(t * m.ln() + (T::one() - t) * (T::one() - m).ln())
                })
                .sum::<T>()
                / nf;
            if !dev.is_finite() {
                return Err(LearnerError::SingularSystem);
            }
            if (prev_dev - dev).abs() < T::of(1e-10) * (dev.abs() + T::one()) {
                break;
            }
            prev_dev = dev;
        }
        Ok(Self {
            standardizer: st,
            intercept: beta[0],
            coef: beta.slice(ndarray::s![1..]).to_owned(),
        })
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Array1<T> {
        let xs = self.standardizer.transform(x);
        xs.dot(&self.coef).mapv(|v| sigmoid(v + self.intercept))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_line_is_recovered() {
        let x = array![[0.0_f64], [1.0], [2.0], [4.0]];
        let y = array![1.0, 3.0, 5.0, 9.0];
        let m = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        let p = m.predict(array![[3.0]].view());
        assert!((p[0] - 7.0).abs() < 1e-8);
    }

    #[test]
    fn constant_columns_are_ignored() {
        let x = array![[0.0_f64, 5.0], [1.0, 5.0], [2.0, 5.0]];
        let y = array![1.0, 2.0, 3.0];
        let m = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        assert!((m.predict(array![[10.0, 7.0]].view())[0] - 11.0).abs() < 1e-8);
    }

    #[test]
    fn ridge_shrinks() {
        let x = array![[0.0_f64], [1.0], [2.0], [3.0]];
        let y = array![0.0, 1.0, 2.0, 3.0];
        let a = LinearModel::fit(x.view(), y.view(), 0.0).unwrap();
        let b = LinearModel::fit(x.view(), y.view(), 10.0).unwrap();
        assert!(b.coef[0].abs() < a.coef[0].abs());
    }

    #[test]
    fn logistic_separates_and_stays_in_range() {
        let x = array![[-2.0_f64], [-1.0], [-0.5], [0.5], [1.0], [2.0], [0.2], [-0.2]];
        let y = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let m = LogisticModel::fit(x.view(), y.view()).unwrap();
        let p = m.predict(x.view());
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(p[5] > p[0]);
    }

    #[test]
    fn logistic_matches_saturated_proportions() {
        // one binary covariate: MLE equals the group proportions
        let x = array![[0.0_f64], [0.0], [0.0], [0.0], [1.0], [1.0], [1.0], [1.0]];
        let y = array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
        let m = LogisticModel::fit(x.view(), y.view()).unwrap();
        let p = m.predict(array![[0.0], [1.0]].view());
        assert!((p[0] - 0.25).abs() < 1e-3);
        assert!((p[1] - 0.75).abs() < 1e-3);
    }
}
