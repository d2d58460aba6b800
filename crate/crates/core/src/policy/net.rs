//! Two-hidden-layer tanh network with a forward head, a backward head and `log_z`.
//!
//! Parameters live in one flat vector so the optimizer and gradient checks can
//! treat them uniformly. Layout (row-major weights):
//!
//! ```text
//! w1[W x D] b1[W] w2[W x W] b2[W] wf[F x W] bf[F] wb[B x W] bb[B] log_z
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub forward_out: usize,
    pub backward_out: usize,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wf: usize,
    bf: usize,
    wb: usize,
    bb: usize,
    log_z: usize,
    len: usize,
}

impl NetShape {
    fn offsets(&self) -> Offsets {
        let (d, w, f, b) = (self.input, self.hidden, self.forward_out, self.backward_out);
        let w1 = 0;
        let b1 = w1 + w * d;
        let w2 = b1 + w;
        let b2 = w2 + w * w;
        let wf = b2 + w;
        let bf = wf + f * w;
        let wb = bf + f;
        let bb = wb + b * w;
        let log_z = bb + b;
        Offsets { w1, b1, w2, b2, wf, bf, wb, bb, log_z, len: log_z + 1 }
    }

    pub fn param_count(&self) -> usize {
        self.offsets().len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    shape: NetShape,
    params: Vec<f64>,
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub forward_logits: Vec<f64>,
    pub backward_logits: Vec<f64>,
}

impl PolicyNet {
    /// Xavier-uniform hidden layers, zero output heads and `log_z = 0`.
    pub fn new<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let o = shape.offsets();
        let mut params = vec![0.0; o.len];
        let mut fill = |start: usize, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[start..start + fan_in * fan_out] {
                *p = rng.gen_range(-a..a);
            }
        };
        fill(o.w1, shape.input, shape.hidden);
        fill(o.w2, shape.hidden, shape.hidden);
        Self { shape, params }
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Option<Self> {
        (params.len() == shape.param_count() && params.iter().all(|p| p.is_finite()))
            .then_some(Self { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn log_z(&self) -> f64 {
        self.params[self.shape.offsets().log_z]
    }

    pub fn set_log_z(&mut self, v: f64) {
        let i = self.log_z_index();
        self.params[i] = v;
    }

    pub fn log_z_index(&self) -> usize {
        self.shape.offsets().log_z
    }

    /// Mutable views of the output heads `(wf, bf, wb, bb)`.
    pub fn heads_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let o = self.shape.offsets();
        let (_, rest) = self.params.split_at_mut(o.wf);
        let (wf, rest) = rest.split_at_mut(o.bf - o.wf);
        let (bf, rest) = rest.split_at_mut(o.wb - o.bf);
        let (wb, rest) = rest.split_at_mut(o.bb - o.wb);
        let (bb, _) = rest.split_at_mut(o.log_z - o.bb);
        (wf, bf, wb, bb)
    }

    pub fn forward(&self, input: &[f64]) -> Activations {
        let s = self.shape;
        let o = s.offsets();
        debug_assert_eq!(input.len(), s.input);
        let p = &self.params;
        let h1 = dense(&p[o.w1..o.b1], &p[o.b1..o.w2], input, true);
        let h2 = dense(&p[o.w2..o.b2], &p[o.b2..o.wf], &h1, true);
        let forward_logits = dense(&p[o.wf..o.bf], &p[o.bf..o.wb], &h2, false);
        let backward_logits = dense(&p[o.wb..o.bb], &p[o.bb..o.log_z], &h2, false);
        Activations { input: input.to_vec(), h1, h2, forward_logits, backward_logits }
    }

    /// Accumulates into `grad` the parameter gradient given output-logit gradients
    /// of one forward pass. `log_z` is untouched.
    pub fn backward(&self, act: &Activations, d_forward: &[f64], d_backward: &[f64], grad: &mut [f64]) {
        let s = self.shape;
        let o = s.offsets();
        let p = &self.params;
        let w = s.hidden;

        let mut d_h2 = vec![0.0; w];
        outer_acc(&mut grad[o.wf..o.bf], d_forward, &act.h2);
        add(&mut grad[o.bf..o.wb], d_forward);
        transpose_mul_acc(&p[o.wf..o.bf], d_forward, &mut d_h2);
        outer_acc(&mut grad[o.wb..o.bb], d_backward, &act.h2);
        add(&mut grad[o.bb..o.log_z], d_backward);
        transpose_mul_acc(&p[o.wb..o.bb], d_backward, &mut d_h2);

        let d_z2: Vec<f64> = d_h2.iter().zip(&act.h2).map(|(g, h)| g * (1.0 - h * h)).collect();
        outer_acc(&mut grad[o.w2..o.b2], &d_z2, &act.h1);
        add(&mut grad[o.b2..o.wf], &d_z2);
        let mut d_h1 = vec![0.0; w];
        transpose_mul_acc(&p[o.w2..o.b2], &d_z2, &mut d_h1);

        let d_z1: Vec<f64> = d_h1.iter().zip(&act.h1).map(|(g, h)| g * (1.0 - h * h)).collect();
        outer_acc(&mut grad[o.w1..o.b1], &d_z1, &act.input);
        add(&mut grad[o.b1..o.w2], &d_z1);
    }
}

fn dense(weights: &[f64], bias: &[f64], x: &[f64], activate: bool) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(i, b)| {
            let row = &weights[i * n_in..(i + 1) * n_in];
            let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            if activate { z.tanh() } else { z }
        })
        .collect()
}

fn outer_acc(grad: &mut [f64], d_out: &[f64], x: &[f64]) {
    let n_in = x.len();
    for (i, g) in d_out.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        for (dst, v) in grad[i * n_in..(i + 1) * n_in].iter_mut().zip(x) {
            *dst += g * v;
        }
    }
}

fn transpose_mul_acc(weights: &[f64], d_out: &[f64], d_in: &mut [f64]) {
    let n_in = d_in.len();
    for (i, g) in d_out.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        for (dst, w) in d_in.iter_mut().zip(&weights[i * n_in..(i + 1) * n_in]) {
            *dst += g * w;
        }
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Softmax restricted to `valid` slots of `logits`; returns probabilities for
/// those slots in the given order.
pub fn masked_softmax(logits: &[f64], valid: &[usize]) -> Vec<f64> {
    if valid.is_empty() {
        return Vec::new();
    }
    let max = valid.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = valid.iter().map(|&i| (logits[i] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_heads_give_zero_logits() {
        let shape = NetShape { input: 2, hidden: 8, forward_out: 3, backward_out: 2 };
        let net = PolicyNet::new(shape, &mut ChaCha8Rng::seed_from_u64(1));
        let act = net.forward(&[0.3, 0.9]);
        assert!(act.forward_logits.iter().chain(&act.backward_logits).all(|&l| l == 0.0));
        assert_eq!(net.params().len(), 2 * 8 + 8 + 64 + 8 + 24 + 3 + 16 + 2 + 1);
    }

    #[test]
    fn masked_softmax_sums_to_one() {
        let p = masked_softmax(&[1000.0, -3.0, 2.5], &[0, 2]);
        assert_eq!(p.len(), 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(masked_softmax(&[0.0, 0.0, 0.0], &[1]), vec![1.0]);
        assert!(masked_softmax(&[0.0], &[]).is_empty());
    }
}
