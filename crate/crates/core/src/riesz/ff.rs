//! Single-hidden-layer softplus network trained on the representer loss
//! with mini-batch Adam.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::RieszError;
use crate::learners::linear::Standardizer;
use crate::scalar::Scalar;

pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logistic<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub standardizer: Standardizer<T>,
    /// hidden × input
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array1<T>,
    pub b2: T,
}

struct Grads<T> {
    w1: Array2<T>,
    b1: Array1<T>,
    w2: Array1<T>,
    b2: T,
}

impl<T: Scalar> Grads<T> {
    fn zeros(h: usize, d: usize) -> Self {
        Self {
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            w2: Array1::zeros(h),
            b2: T::zero(),
        }
    }
}

impl<T: Scalar> Network<T> {
    fn init(standardizer: Standardizer<T>, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / d.max(1) as f64).sqrt()).expect("valid sd");
        Self {
            standardizer,
            w1: Array2::from_shape_fn((hidden, d), |_| T::of(normal.sample(rng))),
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: T::zero(),
        }
    }

    /// Output on rows that are already standardized.
    fn forward_row(&self, x: ArrayView1<T>, hidden: &mut [T], pre: &mut [T]) -> T {
        let mut out = self.b2;
        for k in 0..self.w1.nrows() {
            let z = self.w1.row(k).dot(&x) + self.b1[k];
            pre[k] = z;
            hidden[k] = softplus(z);
            out += self.w2[k] * hidden[k];
        }
        out
    }

    fn backward_row(&self, x: ArrayView1<T>, hidden: &[T], pre: &[T], dout: T, g: &mut Grads<T>) {
        g.b2 += dout;
        for k in 0..self.w1.nrows() {
            g.w2[k] += dout * hidden[k];
            let dz = dout * self.w2[k] * logistic(pre[k]);
            g.b1[k] += dz;
            for j in 0..x.len() {
                g.w1[[k, j]] += dz * x[j];
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Array1<T> {
        let xs = self.standardizer.transform(x);
        let h = self.w1.nrows();
        let mut hid = vec![T::zero(); h];
        let mut pre = vec![T::zero(); h];
        Array1::from_iter(xs.rows().into_iter().map(|r| self.forward_row(r, &mut hid, &mut pre)))
    }
}

struct Adam<T> {
    m: Grads<T>,
    v: Grads<T>,
    t: i32,
    lr: T,
}

impl<T: Scalar> Adam<T> {
    fn step(&mut self, net: &mut Network<T>, g: &Grads<T>) {
        let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
        self.t += 1;
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = self.lr;
        let upd = |p: &mut T, m: &mut T, v: &mut T, gr: T| {
            *m = b1 * *m + (T::one() - b1) * gr;
            *v = b2 * *v + (T::one() - b2) * gr * gr;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for ((p, m), (v, gr)) in net
            .w1
            .iter_mut()
            .zip(self.m.w1.iter_mut())
            .zip(self.v.w1.iter_mut().zip(g.w1.iter()))
        {
            upd(p, m, v, *gr);
        }
        for ((p, m), (v, gr)) in net
            .b1
            .iter_mut()
            .zip(self.m.b1.iter_mut())
            .zip(self.v.b1.iter_mut().zip(g.b1.iter()))
        {
            upd(p, m, v, *gr);
        }
        for ((p, m), (v, gr)) in net
            .w2
            .iter_mut()
            .zip(self.m.w2.iter_mut())
            .zip(self.v.w2.iter_mut().zip(g.w2.iter()))
        {
            upd(p, m, v, *gr);
        }
        upd(&mut net.b2, &mut self.m.b2, &mut self.v.b2, g.b2);
    }
}

pub struct FfSettings {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

/// Mean representer loss of the network on standardized inputs.
fn full_loss<T: Scalar>(net: &Network<T>, xs: &Array2<T>, sxs: &Array2<T>, w: &[T]) -> T {
    let h = net.w1.nrows();
    let mut hid = vec![T::zero(); h];
    let mut pre = vec![T::zero(); h];
    let n = xs.nrows();
    let mut total = T::zero();
    for i in 0..n {
        let a = net.forward_row(xs.row(i), &mut hid, &mut pre);
        let s = net.forward_row(sxs.row(i), &mut hid, &mut pre);
        total += a * a - T::of(2.0) * w[i] * s;
    }
    total / T::of_usize(n.max(1))
}

/// Trains the network on observed inputs `x`, shifted inputs `sx` and outer
/// weights `w`. Returns the parameters with the lowest epoch-end loss and
/// the per-epoch loss trace.
pub fn train<T: Scalar>(
    x: ArrayView2<T>,
    sx: ArrayView2<T>,
    w: &[T],
    settings: &FfSettings,
    seed: u64,
) -> Result<(Network<T>, Vec<f64>), RieszError> {
    let n = x.nrows();
    let d = x.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.transform(x);
    let sxs = standardizer.transform(sx);
    let mut net = Network::init(standardizer, d, settings.hidden, &mut rng);
    let mut adam = Adam {
        m: Grads::zeros(settings.hidden, d),
        v: Grads::zeros(settings.hidden, d),
        t: 0,
        lr: T::of(settings.lr),
    };
    let batch = settings.batch.clamp(1, n.max(1));
    let mut order: Vec<usize> = (0..n).collect();
    let mut hid = vec![T::zero(); settings.hidden];
    let mut pre = vec![T::zero(); settings.hidden];
    let mut trace = Vec::with_capacity(settings.epochs);
    let mut best = (f64::INFINITY, net.clone());
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut g = Grads::zeros(settings.hidden, d);
            let scale = T::of(2.0) / T::of_usize(chunk.len());
            for &i in chunk {
                let a = net.forward_row(xs.row(i), &mut hid, &mut pre);
                net.backward_row(xs.row(i), &hid, &pre, scale * a, &mut g);
                net.forward_row(sxs.row(i), &mut hid, &mut pre);
                net.backward_row(sxs.row(i), &hid, &pre, -scale * w[i], &mut g);
            }
            adam.step(&mut net, &g);
        }
        let loss = full_loss(&net, &xs, &sxs, w).as_f64();
        if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
            return Err(RieszError::DivergedLoss { epoch: epoch + 1, loss });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, net.clone());
        }
    }
    Ok((best.1, trace))
}
