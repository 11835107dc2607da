//! k-nearest-neighbour regression in standardized Euclidean distance.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::linear::Standardizer;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel<T> {
    pub k: usize,
    pub standardizer: Standardizer<T>,
    pub x: Array2<T>,
    pub y: Array1<T>,
}

impl<T: Scalar> KnnModel<T> {
    pub fn fit(x: ArrayView2<T>, y: ArrayView1<T>, k: usize) -> Self {
        let standardizer = Standardizer::fit(x);
        let xs = standardizer.transform(x);
        Self {
            k: k.clamp(1, y.len().max(1)),
            standardizer,
            x: xs,
            y: y.to_owned(),
        }
    }

    /// Average of the `k` closest training targets; distance ties are broken
    /// by training-row order.
    pub fn predict(&self, x: ArrayView2<T>) -> Array1<T> {
        let xs = self.standardizer.transform(x);
        let n = self.x.nrows();
        let mut out = Array1::<T>::zeros(xs.nrows());
        let mut dist: Vec<(T, usize)> = Vec::with_capacity(n);
        for (r, row) in xs.rows().into_iter().enumerate() {
            dist.clear();
            for (i, tr) in self.x.rows().into_iter().enumerate() {
                let d: T = row
                    .iter()
                    .zip(tr.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                dist.push((d, i));
            }
            let cmp = |a: &(T, usize), b: &(T, usize)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            };
            if self.k < n {
                dist.select_nth_unstable_by(self.k - 1, cmp);
            }
            let s: T = dist[..self.k].iter().map(|&(_, i)| self.y[i]).sum();
            out[r] = s / T::of_usize(self.k);
        }
        out
    }
}
