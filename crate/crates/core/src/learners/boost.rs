//! Gradient-boosted shallow trees (depth 1 or 2) with exact greedy splits
//! over presorted feature orders. Squared loss for continuous targets,
//! logistic loss with Newton leaf values for binary targets.

use ndarray::{Array1, ArrayView1, ArrayView2};

use super::linear::sigmoid;
use super::{LearnerError, TargetType};
use crate::scalar::Scalar;

pub const MIN_LEAF: usize = 5;
const LEAF_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Node<T> {
    Leaf(T),
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    fn eval(&self, row: ArrayView1<T>) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostModel<T> {
    pub base: T,
    pub trees: Vec<Tree<T>>,
    pub target: TargetType,
}

struct Grower<'a, T> {
    x: ArrayView2<'a, T>,
    order: &'a [Vec<usize>],
    g: &'a [T],
    h: &'a [T],
    node_of: Vec<usize>,
    nodes: Vec<Node<T>>,
    max_depth: usize,
    rate: T,
}

struct BestSplit<T> {
    gain: T,
    feature: usize,
    threshold: T,
}

impl<T: Scalar> Grower<'_, T> {
    fn stats(&self, node: usize) -> (T, T, usize) {
        let mut gs = T::zero();
        let mut hs = T::zero();
        let mut c = 0;
        for i in 0..self.g.len() {
            if self.node_of[i] == node {
                gs += self.g[i];
                hs += self.h[i];
                c += 1;
            }
        }
        (gs, hs, c)
    }

    fn best_split(&self, node: usize, gs: T, hs: T, count: usize) -> Option<BestSplit<T>> {
        if count < 2 * MIN_LEAF {
            return None;
        }
        let eps = T::of(1e-12);
        let parent = gs * gs / (hs + eps);
        let mut best: Option<BestSplit<T>> = None;
        for (j, ord) in self.order.iter().enumerate() {
            let mut gl = T::zero();
            let mut hl = T::zero();
            let mut cl = 0usize;
            let mut last: Option<T> = None;
            for &i in ord {
                if self.node_of[i] != node {
                    continue;
                }
                let v = self.x[[i, j]];
                if let Some(lv) = last {
                    if v > lv && cl >= MIN_LEAF && count - cl >= MIN_LEAF {
                        let gr = gs - gl;
                        let hr = hs - hl;
                        let gain = gl * gl / (hl + eps) + gr * gr / (hr + eps) - parent;
                        if best.as_ref().map_or(true, |b| gain > b.gain) {
                            best = Some(BestSplit {
                                gain,
                                feature: j,
                                threshold: (lv + v) / T::of(2.0),
                            });
                        }
                    }
                }
                gl += self.g[i];
                hl += self.h[i];
                cl += 1;
                last = Some(v);
            }
        }
        best.filter(|b| b.gain > T::of(1e-12))
    }

    fn leaf_value(&self, gs: T, hs: T) -> T {
        let raw = gs / (hs + T::of(1e-6));
        let c = T::of(LEAF_CLAMP);
        self.rate * raw.max(-c).min(c)
    }

    fn grow(&mut self, node: usize, depth: usize) {
        let (gs, hs, count) = self.stats(node);
        let split = if depth < self.max_depth {
            self.best_split(node, gs, hs, count)
        } else {
            None
        };
        match split {
            None => self.nodes[node] = Node::Leaf(self.leaf_value(gs, hs)),
            Some(s) => {
                let left = self.nodes.len();
                let right = left + 1;
                self.nodes.push(Node::Leaf(T::zero()));
                self.nodes.push(Node::Leaf(T::zero()));
                for i in 0..self.node_of.len() {
                    if self.node_of[i] == node {
                        self.node_of[i] = if self.x[[i, s.feature]] <= s.threshold {
                            left
                        } else {
                            right
                        };
                    }
                }
                self.nodes[node] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                self.grow(left, depth + 1);
                self.grow(right, depth + 1);
            }
        }
    }
}

impl<T: Scalar> BoostModel<T> {
    pub fn fit(
        x: ArrayView2<T>,
        y: ArrayView1<T>,
        trees: usize,
        depth: usize,
        rate: f64,
        target: TargetType,
    ) -> Result<Self, LearnerError> {
        if !(1..=2).contains(&depth) {
            return Err(LearnerError::BadSpec(format!("boosted tree depth {depth} not in 1..=2")));
        }
        let n = x.nrows();
        let order: Vec<Vec<usize>> = (0..x.ncols())
            .map(|j| {
                let mut o: Vec<usize> = (0..n).collect();
                o.sort_by(|&a, &b| {
                    x[[a, j]]
                        .partial_cmp(&x[[b, j]])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                o
            })
            .collect();
        let ybar = y.sum() / T::of_usize(n.max(1));
        let base = match target {
            TargetType::Continuous => ybar,
            TargetType::Binary => {
                let p = ybar.max(T::of(1e-6)).min(T::of(1.0 - 1e-6));
                (p / (T::one() - p)).ln()
            }
        };
        let mut f = vec![base; n];
        let mut g = vec![T::zero(); n];
        let mut h = vec![T::one(); n];
        let mut out = Vec::with_capacity(trees);
        for _ in 0..trees {
            for i in 0..n {
                match target {
                    TargetType::Continuous => g[i] = y[i] - f[i],
                    TargetType::Binary => {
                        let p = sigmoid(f[i]);
                        g[i] = y[i] - p;
                        h[i] = (p * (T::one() - p)).max(T::of(1e-6));
                    }
                }
            }
            let mut grower = Grower {
                x,
                order: &order,
                g: &g,
                h: &h,
                node_of: vec![0; n],
                nodes: vec![Node::Leaf(T::zero())],
                max_depth: depth,
                rate: T::of(rate),
            };
            grower.grow(0, 0);
            let tree = Tree {
                nodes: grower.nodes,
            };
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += tree.eval(x.row(i));
            }
            out.push(tree);
        }
        Ok(Self {
            base,
            trees: out,
            target,
        })
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Array1<T> {
        Array1::from_iter(x.rows().into_iter().map(|row| {
            let raw = self.trees.iter().fold(self.base, |acc, t| acc + t.eval(row));
            match self.target {
                TargetType::Continuous => raw,
                TargetType::Binary => sigmoid(raw),
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn step_function_is_learned() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let y = x.column(0).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let m = BoostModel::fit(x.view(), y.view(), 200, 2, 0.1, TargetType::Continuous).unwrap();
        let p = m.predict(x.view());
        let mse = (&p - &y).mapv(|e| e * e).mean().unwrap();
        assert!(mse < 0.05, "mse {mse}");
    }

    #[test]
    fn binary_predictions_are_probabilities() {
        let n = 60;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * (j + 3)) % 11) as f64);
        let y = Array1::from_shape_fn(n, |i| if x[[i, 0]] > 5.0 { 1.0 } else { 0.0 });
        let m = BoostModel::fit(x.view(), y.view(), 50, 2, 0.1, TargetType::Binary).unwrap();
        assert!(m.predict(x.view()).iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn leaves_respect_minimum_size() {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| i as f64);
        let y = Array1::from_shape_fn(12, |i| if i == 0 { 10.0 } else { 0.0 });
        let m = BoostModel::fit(x.view(), y.view(), 1, 1, 1.0, TargetType::Continuous).unwrap();
        match &m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert!(*threshold >= 4.5 && *threshold <= 6.5),
            Node::Leaf(_) => panic!("expected a split"),
        }
    }
}
