//! Fixed-window feedforward next-token model.
//!
//! The input at position `t` is the concatenation of the embeddings of the
//! `window` previous tokens (zero-padded before the sequence start) and a
//! conditioning vector, the mean embedding of the input-concept tokens of the
//! prompt. One tanh hidden layer feeds a softmax over the vocabulary.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub window: usize,
}

impl Shape {
    pub fn input_width(&self) -> usize {
        (self.window + 1) * self.dim
    }
}

/// All trainable weights. Matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub shape: Shape,
    /// vocab × dim
    pub emb: Vec<f64>,
    /// hidden × input_width
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// vocab × hidden
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            emb: vec![0.0; shape.vocab * shape.dim],
            w1: vec![0.0; shape.hidden * shape.input_width()],
            b1: vec![0.0; shape.hidden],
            w2: vec![0.0; shape.vocab * shape.hidden],
            b2: vec![0.0; shape.vocab],
        }
    }

    /// Uniform random initialization scaled by fan-in.
    pub fn init(shape: Shape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        let mut fill = |v: &mut [f64], scale: f64| {
            for x in v.iter_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        };
        fill(&mut p.emb, 0.5);
        fill(&mut p.w1, (3.0 / shape.input_width() as f64).sqrt());
        fill(&mut p.w2, (3.0 / shape.hidden as f64).sqrt());
        p
    }

    /// Random hidden weights with a zero output layer: every next-token
    /// distribution is uniform.
    pub fn uniform_output(shape: Shape, seed: u64) -> Self {
        let mut p = Self::init(shape, seed);
        p.w2.iter_mut().for_each(|x| *x = 0.0);
        p.b2.iter_mut().for_each(|x| *x = 0.0);
        p
    }

    pub fn len(&self) -> usize {
        self.emb.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.emb, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.emb, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Flat view across all blocks, in declaration order.
    pub fn get(&self, mut i: usize) -> f64 {
        for b in self.blocks() {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, value: f64) {
        for b in self.blocks_mut() {
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn emb_row(&self, token: u32) -> &[f64] {
        let d = self.shape.dim;
        &self.emb[token as usize * d..(token as usize + 1) * d]
    }
}

/// A token sequence with the span whose embeddings form the conditioning vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub tokens: Vec<u32>,
    pub cond: Range<usize>,
}

pub fn cond_vector(p: &Params, tokens: &[u32], cond: &Range<usize>) -> Vec<f64> {
    let d = p.shape.dim;
    let mut c = vec![0.0; d];
    let span = &tokens[cond.clone()];
    if span.is_empty() {
        return c;
    }
    for &t in span {
        for (acc, x) in c.iter_mut().zip(p.emb_row(t)) {
            *acc += x;
        }
    }
    let inv = 1.0 / span.len() as f64;
    c.iter_mut().for_each(|x| *x *= inv);
    c
}

/// Input vector for predicting the token at position `t` (history `tokens[..t]`).
pub fn step_input(p: &Params, history: &[u32], cond: &[f64]) -> Vec<f64> {
    let Shape { dim: d, window: h, .. } = p.shape;
    let mut input = vec![0.0; (h + 1) * d];
    let t = history.len();
    for slot in 0..h {
        // slot 0 is the oldest position in the window
        if let Some(pos) = (t + slot).checked_sub(h) {
            input[slot * d..(slot + 1) * d].copy_from_slice(p.emb_row(history[pos]));
        }
    }
    input[h * d..].copy_from_slice(cond);
    input
}

pub struct StepOutput {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn forward_step(p: &Params, input: &[f64]) -> StepOutput {
    let Shape { vocab: v, hidden: hdim, .. } = p.shape;
    let w = input.len();
    let mut hidden = p.b1.clone();
    for (j, hj) in hidden.iter_mut().enumerate() {
        let row = &p.w1[j * w..(j + 1) * w];
        *hj = (*hj + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()).tanh();
    }
    let mut logits = p.b2.clone();
    for (k, lk) in logits.iter_mut().enumerate().take(v) {
        let row = &p.w2[k * hdim..(k + 1) * hdim];
        *lk += row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
    }
    StepOutput { hidden, logits }
}

/// In-place log-softmax.
pub fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter_mut().for_each(|x| *x -= lse);
}

/// Next-token log-probabilities after `history`.
pub fn next_logprobs(p: &Params, history: &[u32], cond: &[f64]) -> Vec<f64> {
    let input = step_input(p, history, cond);
    let mut out = forward_step(p, &input).logits;
    log_softmax(&mut out);
    out
}

/// Sum of next-token log-probabilities over positions 1..len.
pub fn sequence_logprob(p: &Params, seq: &Encoded) -> f64 {
    let cond = cond_vector(p, &seq.tokens, &seq.cond);
    (1..seq.tokens.len())
        .map(|t| next_logprobs(p, &seq.tokens[..t], &cond)[seq.tokens[t] as usize])
        .sum()
}

/// Adds the gradient of the negative log-likelihood of `seq` to `grad` and
/// returns that negative log-likelihood.
pub fn accumulate_gradient(p: &Params, seq: &Encoded, grad: &mut Params) -> f64 {
    let Shape {
        vocab: v,
        dim: d,
        hidden: hdim,
        window: h,
    } = p.shape;
    let w = p.shape.input_width();
    let tokens = &seq.tokens;
    let cond = cond_vector(p, tokens, &seq.cond);
    let mut dcond = vec![0.0; d];
    let mut nll = 0.0;
    let mut dhidden = vec![0.0; hdim];
    let mut dinput = vec![0.0; w];
    for t in 1..tokens.len() {
        let input = step_input(p, &tokens[..t], &cond);
        let StepOutput { hidden, mut logits } = forward_step(p, &input);
        log_softmax(&mut logits);
        let target = tokens[t] as usize;
        nll -= logits[target];

        // dL/dlogits = softmax - onehot
        dhidden.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..v {
            let g = logits[k].exp() - if k == target { 1.0 } else { 0.0 };
            grad.b2[k] += g;
            let row = k * hdim;
            for j in 0..hdim {
                grad.w2[row + j] += g * hidden[j];
                dhidden[j] += g * p.w2[row + j];
            }
        }
        dinput.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..hdim {
            let g = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
            grad.b1[j] += g;
            let row = j * w;
            for i in 0..w {
                grad.w1[row + i] += g * input[i];
                dinput[i] += g * p.w1[row + i];
            }
        }
        for slot in 0..h {
            if let Some(pos) = (t + slot).checked_sub(h) {
                let tok = tokens[pos] as usize;
                for i in 0..d {
                    grad.emb[tok * d + i] += dinput[slot * d + i];
                }
            }
        }
        for i in 0..d {
            dcond[i] += dinput[h * d + i];
        }
    }
    let span = &tokens[seq.cond.clone()];
    if !span.is_empty() {
        let inv = 1.0 / span.len() as f64;
        for &tok in span {
            for i in 0..d {
                grad.emb[tok as usize * d + i] += dcond[i] * inv;
            }
        }
    }
    nll
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> Shape {
        Shape {
            vocab: 7,
            dim: 3,
            hidden: 4,
            window: 2,
        }
    }

    fn seq() -> Encoded {
        Encoded {
            tokens: vec![0, 3, 4, 5, 3, 6, 1],
            cond: 1..2,
        }
    }

    #[test]
    fn uniform_output_gives_uniform_logprob() {
        let p = Params::uniform_output(shape(), 3);
        let s = seq();
        let expected = -((s.tokens.len() - 1) as f64) * (7f64).ln();
        assert!((sequence_logprob(&p, &s) - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_returns_matching_nll() {
        let p = Params::init(shape(), 5);
        let mut g = Params::zeros(shape());
        let nll = accumulate_gradient(&p, &seq(), &mut g);
        assert!((nll + sequence_logprob(&p, &seq())).abs() < 1e-10);
        assert!(g.norm() > 0.0);
    }

    #[test]
    fn flat_indexing_covers_all_blocks() {
        let mut p = Params::zeros(shape());
        let n = p.len();
        p.set(n - 1, 2.5);
        assert_eq!(p.b2[6], 2.5);
        p.set(0, 1.0);
        assert_eq!(p.emb[0], 1.0);
        assert_eq!(p.get(n - 1), 2.5);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut l = vec![1.0, 2.0, 3.0, -1000.0];
        log_softmax(&mut l);
        let total: f64 = l.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
