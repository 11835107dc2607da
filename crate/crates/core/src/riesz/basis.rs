//! Polynomial feature maps with treatment-level interactions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::distinct_sorted;
use crate::learners::linear::Standardizer;
use crate::scalar::Scalar;

/// Treatments with at most this many distinct training values get one
/// indicator block per level; otherwise A enters the polynomial directly.
pub const MAX_TREATMENT_LEVELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    /// Maximum total degree of the monomials.
    pub degree: usize,
    /// Only products of distinct variables (no powers). With binary inputs
    /// and `degree` equal to the number of variables this is saturated.
    #[serde(default)]
    pub interactions_only: bool,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 2,
            interactions_only: false,
        }
    }
}

/// All exponent vectors over `p` variables with total degree at most `d`,
/// in graded order starting with the constant.
pub fn monomial_exponents(p: usize, d: usize, interactions_only: bool) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; p]];
    let mut frontier = vec![(vec![0u8; p], 0usize)];
    for _ in 0..d {
        let mut next = Vec::new();
        for (e, start) in &frontier {
            for j in *start..p {
                if interactions_only && e[j] > 0 {
                    continue;
                }
                let mut e2 = e.clone();
                e2[j] += 1;
                let s2 = if interactions_only { j + 1 } else { j };
                next.push((e2.clone(), s2));
                out.push(e2);
            }
        }
        frontier = next;
    }
    out
}

/// A feature map fitted to training rows: treatment levels, variable
/// standardization and the retained monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMap<T> {
    /// Treatment levels for indicator blocks; `None` means A is treated as
    /// a continuous variable inside the polynomial.
    pub levels: Option<Vec<T>>,
    pub standardizer: Standardizer<T>,
    /// Indices of non-constant input columns used in the monomials.
    pub active: Vec<usize>,
    pub exponents: Vec<Vec<u8>>,
}

impl<T: Scalar> BasisMap<T> {
    /// `a` is the treatment column, `v` the remaining conditioning
    /// variables, both on training rows.
    pub fn fit(spec: &BasisSpec, a: ArrayView1<T>, v: ArrayView2<T>) -> Self {
        let lv = distinct_sorted(a.iter().copied());
        let discrete = lv.len() <= MAX_TREATMENT_LEVELS;
        let inputs = if discrete { v.to_owned() } else { with_treatment(a, v) };
        let standardizer = Standardizer::fit(inputs.view());
        let active: Vec<usize> = (0..inputs.ncols())
            .filter(|&j| standardizer.scale[j] != T::zero())
            .collect();
        let exponents = monomial_exponents(active.len(), spec.degree, spec.interactions_only);
        Self {
            levels: discrete.then_some(lv),
            standardizer,
            active,
            exponents,
        }
    }

    /// Columns per treatment-level block (all columns without levels).
    pub fn block_width(&self) -> usize {
        self.exponents.len()
    }

    pub fn dim(&self) -> usize {
        self.exponents.len() * self.levels.as_ref().map_or(1, Vec::len)
    }

    /// Feature rows for the given inputs. Rows whose treatment matches no
    /// training level get an all-zero row; their count is returned too.
    pub fn features(&self, a: ArrayView1<T>, v: ArrayView2<T>) -> (Array2<T>, usize) {
        let n = a.len();
        let inputs = if self.levels.is_some() {
            v.to_owned()
        } else {
            with_treatment(a, v)
        };
        let z = self.standardizer.transform(inputs.view());
        let m = self.exponents.len();
        let mut out = Array2::<T>::zeros((n, self.dim()));
        let mut unmatched = 0;
        let mut mono = vec![T::one(); m];
        for i in 0..n {
            for (k, e) in self.exponents.iter().enumerate() {
                let mut val = T::one();
                for (pos, &j) in self.active.iter().enumerate() {
                    for _ in 0..e[pos] {
                        val *= z[[i, j]];
                    }
                }
                mono[k] = val;
            }
            let block = match &self.levels {
                None => Some(0),
                Some(levels) => levels.iter().position(|&l| l == a[i]),
            };
            match block {
                Some(b) => {
                    for k in 0..m {
                        out[[i, b * m + k]] = mono[k];
                    }
                }
                None => unmatched += 1,
            }
        }
        (out, unmatched)
    }
}

fn with_treatment<T: Scalar>(a: ArrayView1<T>, v: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::<T>::zeros((a.len(), v.ncols() + 1));
    out.column_mut(0).assign(&a);
    out.slice_mut(ndarray::s![.., 1..]).assign(&v);
    out
}

/// Inner product of each feature row with `coef`.
pub fn linear_predict<T: Scalar>(phi: ArrayView2<T>, coef: &Array1<T>) -> Array1<T> {
    phi.dot(coef)
}
