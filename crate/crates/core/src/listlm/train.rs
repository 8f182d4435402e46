use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{accumulate_gradient, sequence_logprob, Encoded, Params};
use crate::error::{Error, Result};

/// Sequences per gradient work unit. Fixed so the summation order, and hence
/// the trained weights, do not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub window: usize,
    pub lr: f64,
    /// Epochs of the ordered (or only) phase.
    pub epochs: usize,
    /// Epochs of the unordered phase in two-step training.
    pub unordered_epochs: usize,
    pub batch_size: usize,
    /// Learning rate stays constant for this fraction of the epochs, then
    /// decays linearly to a tenth.
    pub constant_fraction: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub permutations: usize,
    pub beam: usize,
    pub max_decode_len: usize,
    /// nDCG cut-off used for checkpoint selection on the dev split.
    pub select_ndcg_m: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            hidden: 96,
            window: 6,
            lr: 0.1,
            epochs: 12,
            unordered_epochs: 6,
            batch_size: 16,
            constant_fraction: 0.5,
            clip_norm: 5.0,
            seed: 0,
            permutations: 10,
            beam: 5,
            max_decode_len: 64,
            select_ndcg_m: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("window", self.window),
            ("batch_size", self.batch_size),
            ("permutations", self.permutations),
            ("beam", self.beam),
            ("max_decode_len", self.max_decode_len),
            ("select_ndcg_m", self.select_ndcg_m),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("lr and clip_norm must be positive"));
        }
        if !(0.0..=1.0).contains(&self.constant_fraction) {
            return Err(Error::invalid("constant_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        let constant = (self.constant_fraction * epochs as f64).ceil() as usize;
        if epoch < constant || epochs <= constant {
            return self.lr;
        }
        let progress = (epoch - constant) as f64 / (epochs - constant) as f64;
        self.lr * (1.0 - 0.9 * progress)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub mean_nll: f64,
    pub selection_score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PhaseOutcome {
    pub params: Params,
    pub history: Vec<EpochStat>,
    /// Epoch whose parameters were kept (the last one without a selector).
    pub best_epoch: usize,
}

/// Summed gradient of the negative log-likelihood over `batch`.
pub fn batch_gradient(params: &Params, batch: &[&Encoded]) -> (Params, f64) {
    let parts: Vec<(Params, f64)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Params::zeros(params.shape);
            let mut nll = 0.0;
            for seq in chunk {
                nll += accumulate_gradient(params, seq, &mut g);
            }
            (g, nll)
        })
        .collect();
    let mut total = Params::zeros(params.shape);
    let mut nll = 0.0;
    for (g, n) in parts {
        total.add_scaled(&g, 1.0);
        nll += n;
    }
    (total, nll)
}

/// Mini-batch gradient ascent on the summed sequence log-likelihood.
/// With a selector, the parameters of the best-scoring epoch are returned.
pub fn train_phase(
    mut params: Params,
    corpus: &[Encoded],
    config: &TrainConfig,
    epochs: usize,
    phase_seed: u64,
    selector: Option<&(dyn Fn(&Params) -> Result<f64> + Sync)>,
) -> Result<PhaseOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("empty training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, usize, Params)> = None;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let lr = config.lr_at(epoch - 1, epochs);
        let mut total_nll = 0.0;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Encoded> = batch_idx.iter().map(|&i| &corpus[i]).collect();
            let (mut grad, nll) = batch_gradient(&params, &batch);
            if !nll.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("non-finite loss {nll} at lr {lr}"),
                });
            }
            total_nll += nll;
            grad.scale(1.0 / batch.len() as f64);
            let norm = grad.norm();
            if norm > config.clip_norm {
                grad.scale(config.clip_norm / norm);
            }
            params.add_scaled(&grad, -lr);
        }
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
        let selection_score = selector.map(|f| f(&params)).transpose()?;
        history.push(EpochStat {
            epoch,
            mean_nll: total_nll / corpus.len() as f64,
            selection_score,
        });
        match selection_score {
            Some(score) => {
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, epoch, params.clone()));
                }
            }
            None => best = Some((f64::NAN, epoch, params.clone())),
        }
    }
    let (_, best_epoch, params) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, params),
    };
    Ok(PhaseOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Mean sequence log-likelihood over a corpus.
pub fn corpus_logprob(params: &Params, corpus: &[Encoded]) -> f64 {
    let parts: Vec<f64> = corpus.par_iter().map(|s| sequence_logprob(params, s)).collect();
    let total: f64 = parts.iter().sum();
    total / corpus.len().max(1) as f64
}
