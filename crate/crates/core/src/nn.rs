//! Minimal dense-network toolkit over flat `f64` parameter vectors: named
//! blocks, matrix-vector kernels, a GRU cell with manual backprop, masked
//! softmax and Adam.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// A row-major matrix (or vector when `cols == 1`) inside a flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.off..self.off + self.len()
    }

    pub fn of<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.range()]
    }

    pub fn of_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.range()]
    }

    /// Row `r` of the matrix.
    pub fn row<'a>(&self, buf: &'a [f64], r: usize) -> &'a [f64] {
        let s = self.off + r * self.cols;
        &buf[s..s + self.cols]
    }

    pub fn row_mut<'a>(&self, buf: &'a mut [f64], r: usize) -> &'a mut [f64] {
        let s = self.off + r * self.cols;
        &mut buf[s..s + self.cols]
    }
}

/// Hands out consecutive blocks.
#[derive(Default)]
pub struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn block(&mut self, rows: usize, cols: usize) -> Block {
        let b = Block {
            off: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        b
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out += W[:, c0..c0+x.len()] · x`.
pub fn matvec_add(buf: &[f64], w: Block, c0: usize, x: &[f64], out: &mut [f64]) {
    debug_assert!(c0 + x.len() <= w.cols && out.len() == w.rows);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.row(buf, r)[c0..c0 + x.len()];
        *o += dot(row, x);
    }
}

/// `out += W[:, c0..c0+out.len()]ᵀ · g`.
pub fn matvec_t_add(buf: &[f64], w: Block, c0: usize, g: &[f64], out: &mut [f64]) {
    debug_assert!(c0 + out.len() <= w.cols && g.len() == w.rows);
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(gr, &w.row(buf, r)[c0..c0 + out.len()], out);
        }
    }
}

/// `dW[:, c0..c0+x.len()] += g ⊗ x`.
pub fn outer_add(grad: &mut [f64], w: Block, c0: usize, g: &[f64], x: &[f64]) {
    debug_assert!(c0 + x.len() <= w.cols && g.len() == w.rows);
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(gr, x, &mut w.row_mut(grad, r)[c0..c0 + x.len()]);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-softmax over the entries whose additive mask is finite. Masked
/// entries come back as `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[f64]) -> Vec<f64> {
    let m = logits
        .iter()
        .zip(mask)
        .filter(|(_, k)| k.is_finite())
        .map(|(l, k)| l + k)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits
        .iter()
        .zip(mask)
        .filter(|(_, k)| k.is_finite())
        .map(|(l, k)| (l + k - m).exp())
        .sum::<f64>()
        .ln();
    logits
        .iter()
        .zip(mask)
        .map(|(l, k)| if k.is_finite() { l + k - lse } else { f64::NEG_INFINITY })
        .collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Gated recurrent unit with the gate order (reset, update, new):
///
/// ```text
/// r = σ(gi_r + W_hr h + b_hr)
/// u = σ(gi_u + W_hu h + b_hu)
/// n = tanh(gi_n + r ⊙ (W_hn h + b_hn))
/// h' = (1 - u) ⊙ n + u ⊙ h
/// ```
///
/// `gi` is the input projection `W_ih x + b_ih`, which callers compute
/// themselves so constant or table-driven inputs can be reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gru {
    pub hidden: usize,
    pub w_ih: Block,
    pub b_ih: Block,
    pub w_hh: Block,
    pub b_hh: Block,
}

#[derive(Clone, Debug, Default)]
pub struct GruCache {
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub n: Vec<f64>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    pub hn: Vec<f64>,
    pub h: Vec<f64>,
}

impl Gru {
    pub fn new(lb: &mut LayoutBuilder, input: usize, hidden: usize) -> Gru {
        Gru {
            hidden,
            w_ih: lb.block(3 * hidden, input),
            b_ih: lb.block(3 * hidden, 1),
            w_hh: lb.block(3 * hidden, hidden),
            b_hh: lb.block(3 * hidden, 1),
        }
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols
    }

    pub fn init(&self, params: &mut [f64], rng: &mut Rng) {
        let k = 1.0 / (self.hidden as f64).sqrt();
        for b in [self.w_ih, self.b_ih, self.w_hh, self.b_hh] {
            uniform(b.of_mut(params), k, rng);
        }
    }

    pub fn step(&self, params: &[f64], gi: &[f64], h: &[f64]) -> GruCache {
        let hs = self.hidden;
        let mut gh = self.b_hh.of(params).to_vec();
        matvec_add(params, self.w_hh, 0, h, &mut gh);
        let mut c = GruCache {
            h_prev: h.to_vec(),
            r: vec![0.0; hs],
            u: vec![0.0; hs],
            n: vec![0.0; hs],
            hn: gh[2 * hs..].to_vec(),
            h: vec![0.0; hs],
        };
        for i in 0..hs {
            c.r[i] = sigmoid(gi[i] + gh[i]);
            c.u[i] = sigmoid(gi[hs + i] + gh[hs + i]);
            c.n[i] = (gi[2 * hs + i] + c.r[i] * c.hn[i]).tanh();
            c.h[i] = (1.0 - c.u[i]) * c.n[i] + c.u[i] * h[i];
        }
        c
    }

    /// Hidden state only, for inference.
    pub fn step_fast(&self, params: &[f64], gi: &[f64], h: &mut [f64], scratch: &mut Vec<f64>) {
        let hs = self.hidden;
        scratch.clear();
        scratch.extend_from_slice(self.b_hh.of(params));
        matvec_add(params, self.w_hh, 0, h, scratch);
        for i in 0..hs {
            let r = sigmoid(gi[i] + scratch[i]);
            let u = sigmoid(gi[hs + i] + scratch[hs + i]);
            let n = (gi[2 * hs + i] + r * scratch[2 * hs + i]).tanh();
            h[i] = (1.0 - u) * n + u * h[i];
        }
    }

    /// Backpropagates `dh` through one step. Accumulates hidden-side weight
    /// gradients into `grad`, writes the gradient w.r.t. `gi` into `d_gi`
    /// and adds the gradient w.r.t. the previous hidden state to `dh_prev`.
    pub fn backward(
        &self,
        params: &[f64],
        grad: &mut [f64],
        c: &GruCache,
        dh: &[f64],
        d_gi: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let hs = self.hidden;
        let mut d_gh = vec![0.0; 3 * hs];
        for i in 0..hs {
            let (r, u, n) = (c.r[i], c.u[i], c.n[i]);
            let dn = dh[i] * (1.0 - u) * (1.0 - n * n);
            let du = dh[i] * (c.h_prev[i] - n) * u * (1.0 - u);
            let dr = dn * c.hn[i] * r * (1.0 - r);
            d_gi[i] = dr;
            d_gi[hs + i] = du;
            d_gi[2 * hs + i] = dn;
            d_gh[i] = dr;
            d_gh[hs + i] = du;
            d_gh[2 * hs + i] = dn * r;
            dh_prev[i] += dh[i] * u;
        }
        outer_add(grad, self.w_hh, 0, &d_gh, &c.h_prev);
        axpy(1.0, &d_gh, self.b_hh.of_mut(grad));
        matvec_t_add(params, self.w_hh, 0, &d_gh, dh_prev);
    }
}

pub fn uniform(xs: &mut [f64], k: f64, rng: &mut Rng) {
    for x in xs {
        *x = rng.random_range(-k..=k);
    }
}

pub fn normal(xs: &mut [f64], std: f64, rng: &mut Rng) {
    for x in xs {
        let e: f64 = StandardNormal.sample(rng);
        *x = std * e;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Adam {
        Adam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = dot(grad, grad).sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn masked_softmax_normalizes_over_legal_entries() {
        let lp = masked_log_softmax(&[1.0, 2.0, 3.0], &[0.0, f64::NEG_INFINITY, 0.0]);
        assert_eq!(lp[1], f64::NEG_INFINITY);
        let z: f64 = lp.iter().filter(|x| x.is_finite()).map(|x| x.exp()).sum();
        assert!((z - 1.0).abs() < 1e-12);
        assert!((lp[2] - lp[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_n() {
        let lp = log_softmax(&[0.3; 5]);
        assert!((lp[0] + 5f64.ln()).abs() < 1e-12);
    }

    fn gru_loss(g: &Gru, p: &[f64], gis: &[Vec<f64>], h0: &[f64], w: &[f64]) -> f64 {
        let mut h = h0.to_vec();
        for gi in gis {
            h = g.step(p, gi, &h).h;
        }
        dot(&h, w)
    }

    #[test]
    fn gru_backward_matches_finite_differences() {
        let mut lb = LayoutBuilder::default();
        let g = Gru::new(&mut lb, 2, 3);
        let mut rng = seeded(4);
        let mut p = vec![0.0; lb.total()];
        normal(&mut p, 0.7, &mut rng);
        let gis: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut v = vec![0.0; 9];
                normal(&mut v, 1.0, &mut rng);
                v
            })
            .collect();
        let h0 = vec![0.1, -0.4, 0.3];
        let w = vec![0.5, -1.0, 2.0];

        let mut caches = Vec::new();
        let mut h = h0.clone();
        for gi in &gis {
            let c = g.step(&p, gi, &h);
            h = c.h.clone();
            caches.push(c);
        }
        let mut grad = vec![0.0; p.len()];
        let mut dh = w.clone();
        let mut d_gis = vec![vec![0.0; 9]; gis.len()];
        for (t, c) in caches.iter().enumerate().rev() {
            let mut dh_prev = vec![0.0; 3];
            g.backward(&p, &mut grad, c, &dh, &mut d_gis[t], &mut dh_prev);
            dh = dh_prev;
        }
        let eps = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            a[i] += eps;
            let mut b = p.clone();
            b[i] -= eps;
            let fd = (gru_loss(&g, &a, &gis, &h0, &w) - gru_loss(&g, &b, &gis, &h0, &w)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
        for k in 0..9 {
            let mut gp = gis.clone();
            gp[1][k] += eps;
            let mut gm = gis.clone();
            gm[1][k] -= eps;
            let fd = (gru_loss(&g, &p, &gp, &h0, &w) - gru_loss(&g, &p, &gm, &h0, &w)) / (2.0 * eps);
            assert!((fd - d_gis[1][k]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn adam_moves_against_the_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), 2);
        opt.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-9 && (p[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((dot(&g, &g).sqrt() - 1.0).abs() < 1e-12);
    }
}
