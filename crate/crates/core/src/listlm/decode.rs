//! Greedy and beam decoding over a frozen [`Params`].

use super::network::{cond_vector, next_logprobs, Params};
use super::vocab::{Vocab, EOS_ID, SOS_ID, UNK_ID};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens only (the prompt is not included).
    pub tokens: Vec<u32>,
    pub logprob: f64,
    /// True when the hypothesis did not reach `[EOS]` within the length limit.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Refuse to close a list slot whose tokens repeat an earlier slot.
    pub no_repeat_concept: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            max_len: 64,
            no_repeat_concept: false,
        }
    }
}

/// Next-token log-probabilities with `[SOS]` and `[UNK]` removed and the
/// remainder renormalized.
pub fn masked_logprobs(p: &Params, history: &[u32], cond: &[f64]) -> Vec<f64> {
    let mut lp = next_logprobs(p, history, cond);
    lp[SOS_ID as usize] = f64::NEG_INFINITY;
    lp[UNK_ID as usize] = f64::NEG_INFINITY;
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + lp.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lp.iter_mut().for_each(|x| *x -= lse);
    lp
}

/// True when emitting `next` would close a slot identical to an earlier one.
pub(crate) fn closes_repeat(vocab: &Vocab, history: &[u32], next: u32) -> bool {
    if next != EOS_ID && vocab.marker(next).is_none() {
        return false;
    }
    let mut segments: Vec<&[u32]> = Vec::new();
    let mut start = None;
    for (i, &t) in history.iter().enumerate() {
        if vocab.marker(t).is_some() {
            if let Some(s) = start {
                segments.push(&history[s..i]);
            }
            start = Some(i + 1);
        }
    }
    let Some(s) = start else {
        return false;
    };
    let current = &history[s..];
    !current.is_empty() && segments.contains(&current)
}

pub struct Decoder<'a> {
    pub params: &'a Params,
    pub vocab: &'a Vocab,
    pub config: DecodeConfig,
}

impl Decoder<'_> {
    fn step(&self, prompt: &[u32], generated: &[u32], cond: &[f64]) -> Vec<f64> {
        let mut history = Vec::with_capacity(prompt.len() + generated.len());
        history.extend_from_slice(prompt);
        history.extend_from_slice(generated);
        let mut lp = masked_logprobs(self.params, &history, cond);
        if self.config.no_repeat_concept {
            for (tok, l) in lp.iter_mut().enumerate() {
                if l.is_finite() && closes_repeat(self.vocab, &history, tok as u32) {
                    *l = f64::NEG_INFINITY;
                }
            }
        }
        lp
    }

    pub fn greedy(&self, prompt: &[u32], cond_span: std::ops::Range<usize>) -> Hypothesis {
        let cond = cond_vector(self.params, prompt, &cond_span);
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            truncated: true,
        };
        for _ in 0..self.config.max_len {
            let lp = self.step(prompt, &hyp.tokens, &cond);
            let mut best = 0;
            for (i, &l) in lp.iter().enumerate() {
                if l > lp[best] {
                    best = i;
                }
            }
            if !lp[best].is_finite() {
                break;
            }
            hyp.tokens.push(best as u32);
            hyp.logprob += lp[best];
            if best as u32 == EOS_ID {
                hyp.truncated = false;
                break;
            }
        }
        hyp
    }

    /// Beam search without length normalization. A hypothesis is complete
    /// when it emits `[EOS]`; search stops once no live hypothesis can beat
    /// the best complete one. Ties go to the lower token id.
    pub fn beam(&self, prompt: &[u32], cond_span: std::ops::Range<usize>) -> Hypothesis {
        let width = self.config.beam.max(1);
        let cond = cond_vector(self.params, prompt, &cond_span);
        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            truncated: true,
        }];
        let mut best_complete: Option<Hypothesis> = None;
        for _ in 0..self.config.max_len {
            let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
            for (hi, hyp) in live.iter().enumerate() {
                let lp = self.step(prompt, &hyp.tokens, &cond);
                for (tok, &l) in lp.iter().enumerate() {
                    if l.is_finite() {
                        candidates.push((hyp.logprob + l, hi, tok as u32));
                    }
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
            let mut next = Vec::with_capacity(width);
            for (rank, &(score, hi, tok)) in candidates.iter().enumerate() {
                if next.len() == width {
                    break;
                }
                let mut tokens = live[hi].tokens.clone();
                tokens.push(tok);
                if tok == EOS_ID {
                    if rank < width && best_complete.as_ref().is_none_or(|b| score > b.logprob) {
                        best_complete = Some(Hypothesis {
                            tokens,
                            logprob: score,
                            truncated: false,
                        });
                    }
                } else {
                    next.push(Hypothesis {
                        tokens,
                        logprob: score,
                        truncated: true,
                    });
                }
            }
            live = next;
            let best_live = live.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            if live.is_empty() || best_complete.as_ref().is_some_and(|b| best_live <= b.logprob) {
                break;
            }
        }
        if let Some(done) = best_complete {
            return done;
        }
        live.into_iter()
            .reduce(|a, b| if b.logprob > a.logprob { b } else { a })
            .unwrap_or(Hypothesis {
                tokens: Vec::new(),
                logprob: 0.0,
                truncated: true,
            })
    }
}
