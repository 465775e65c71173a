//! Caption generation: greedy decoding, beam search and sequence rescoring.
//!
//! Decoding never emits `<pad>`, `<sos>` or `<unk>`: their logits are set to
//! `-inf` before the log-softmax, so the remaining tokens renormalize.
//! `max_len` counts decoding steps, including the one that emits `<eos>`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::attention::AnnotationSet;
use crate::data::{TokenId, EOS, PAD, SOS, UNK};
use crate::error::{contract, Result};
use crate::model::{advance, decoder_inputs, image_step, teacher_forced_logits, DecodeState, Dropout, Model, ModelParams, SceneVars};
use crate::params::TensorTree;
use crate::tape::{log_softmax_values, Tape, Var};

/// Tokens the decoder may never produce.
pub const MASKED: [TokenId; 3] = [PAD, SOS, UNK];

/// Log-probabilities with [`MASKED`] tokens removed from the support.
pub fn masked_log_softmax(logits: &[f64]) -> Vec<f64> {
    let allowed: Vec<usize> = (0..logits.len()).filter(|&i| !MASKED.contains(&(i as TokenId))).collect();
    let sub: Vec<f64> = allowed.iter().map(|&i| logits[i]).collect();
    let lp = log_softmax_values(&sub);
    let mut out = vec![f64::NEG_INFINITY; logits.len()];
    for (&i, v) in allowed.iter().zip(lp) {
        out[i] = v;
    }
    out
}

/// A decoded caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted words, without `<eos>`.
    pub tokens: Vec<TokenId>,
    /// Sum of per-step log-probabilities, including the `<eos>` step if any.
    pub log_prob: f64,
    /// Whether `<eos>` was emitted (otherwise `max_len` cut it off).
    pub finished: bool,
}

impl Hypothesis {
    /// Number of decoding steps taken.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }
}

/// Greedy output plus the alignment weights of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub hypothesis: Hypothesis,
    /// One row of `K` weights per decoding step.
    pub alphas: Vec<Vec<f64>>,
}

/// Incremental decoding over one shared tape.
struct Session<'m> {
    tape: Tape,
    params: ModelParams<Var>,
    scene: SceneVars,
    model: &'m Model,
    dropout: Dropout,
}

impl<'m> Session<'m> {
    fn start(model: &'m Model, annotations: &AnnotationSet, attrs: &[f64]) -> Result<(Self, DecodeState)> {
        if model.config.vocab_size <= EOS as usize {
            return Err(contract("vocabulary too small to decode"));
        }
        let mut tape = Tape::new();
        let params = model.params.register_frozen(&mut tape);
        let scene = SceneVars::record(&mut tape, annotations, attrs)?;
        let mut dropout = Dropout::disabled();
        let (state, _) = image_step(&mut tape, &scene, &params, &model.config, &mut dropout)?;
        Ok((
            Session {
                tape,
                params,
                scene,
                model,
                dropout,
            },
            state,
        ))
    }

    /// Feeds `word`; returns masked log-probabilities, alignment weights and the next state.
    fn step(&mut self, word: TokenId, state: &DecodeState) -> Result<(Vec<f64>, Vec<f64>, DecodeState)> {
        let (out, next) = advance(
            &mut self.tape,
            word,
            state,
            &self.scene,
            &self.params,
            &self.model.config,
            &mut self.dropout,
        )?;
        let lp = masked_log_softmax(self.tape.value(out.logits));
        Ok((lp, self.tape.value(out.alpha).to_vec(), next))
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Picks the most likely word at every step until `<eos>` or `max_len` steps.
pub fn greedy_decode(model: &Model, annotations: &AnnotationSet, attrs: &[f64], max_len: usize) -> Result<Decoded> {
    let (mut s, mut state) = Session::start(model, annotations, attrs)?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    let mut alphas = Vec::new();
    let mut word = SOS;
    for _ in 0..max_len {
        let (lp, alpha, next) = s.step(word, &state)?;
        alphas.push(alpha);
        let best = argmax(&lp);
        hyp.log_prob += lp[best];
        if best as TokenId == EOS {
            hyp.finished = true;
            break;
        }
        word = best as TokenId;
        hyp.tokens.push(word);
        state = next;
    }
    Ok(Decoded { hypothesis: hyp, alphas })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamOptions {
    pub width: usize,
    pub max_len: usize,
    /// Rank by log-probability per step instead of the raw sum.
    pub length_normalize: bool,
}

impl BeamOptions {
    pub fn new(width: usize, max_len: usize) -> Self {
        BeamOptions {
            width,
            max_len,
            length_normalize: false,
        }
    }

    fn rank_score(&self, h: &Hypothesis) -> f64 {
        if self.length_normalize && h.steps() > 0 {
            h.log_prob / h.steps() as f64
        } else {
            h.log_prob
        }
    }

    /// Higher score first; equal scores go to the lexicographically smaller
    /// token sequence (so the lower token id wins).
    fn order(&self, a: &Hypothesis, b: &Hypothesis) -> Ordering {
        self.rank_score(b)
            .partial_cmp(&self.rank_score(a))
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
            .then_with(|| a.finished.cmp(&b.finished))
    }
}

struct Beam {
    hyp: Hypothesis,
    state: Option<DecodeState>,
}

/// Length-capped beam search; returns up to `width` hypotheses, best first.
///
/// Finished hypotheses keep competing for the `width` slots, and the search
/// ends when every kept hypothesis has emitted `<eos>` or `max_len` steps
/// have run. Unfinished survivors at the cap are returned as they are.
pub fn beam_search(
    model: &Model,
    annotations: &AnnotationSet,
    attrs: &[f64],
    opts: &BeamOptions,
) -> Result<Vec<Hypothesis>> {
    if opts.width == 0 {
        return Err(contract("beam width must be at least 1"));
    }
    let (mut s, start) = Session::start(model, annotations, attrs)?;
    let mut beams = vec![Beam {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: Some(start),
    }];
    for _ in 0..opts.max_len {
        if beams.iter().all(|b| b.hyp.finished) {
            break;
        }
        let mut pool: Vec<Beam> = Vec::new();
        for beam in beams {
            let Some(state) = beam.state.filter(|_| !beam.hyp.finished) else {
                pool.push(beam);
                continue;
            };
            let word = beam.hyp.tokens.last().copied().unwrap_or(SOS);
            let (lp, _, next) = s.step(word, &state)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let tok = tok as TokenId;
                let mut hyp = Hypothesis {
                    tokens: beam.hyp.tokens.clone(),
                    log_prob: beam.hyp.log_prob + l,
                    finished: tok == EOS,
                };
                if !hyp.finished {
                    hyp.tokens.push(tok);
                }
                pool.push(Beam {
                    hyp,
                    state: Some(next),
                });
            }
        }
        pool.sort_by(|a, b| opts.order(&a.hyp, &b.hyp));
        pool.truncate(opts.width);
        beams = pool;
    }
    let mut out: Vec<Hypothesis> = beams.into_iter().map(|b| b.hyp).collect();
    out.sort_by(|a, b| opts.order(a, b));
    Ok(out)
}

/// Log-probability of `tokens` (followed by `<eos>` when `finished`) under
/// teacher forcing, with the decoder's masking.
pub fn sequence_log_prob(
    model: &Model,
    annotations: &AnnotationSet,
    attrs: &[f64],
    tokens: &[TokenId],
    finished: bool,
) -> Result<f64> {
    let mut targets = tokens.to_vec();
    if finished {
        targets.push(EOS);
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut inputs = decoder_inputs(tokens);
    inputs.truncate(targets.len());
    let mut tape = Tape::new();
    let params = model.params.register_frozen(&mut tape);
    let scene = SceneVars::record(&mut tape, annotations, attrs)?;
    let logits = teacher_forced_logits(&mut tape, &scene, &inputs, &params, &model.config, &mut Dropout::disabled())?;
    let mut total = 0.0;
    for (l, &t) in logits.iter().zip(&targets) {
        let lp = masked_log_softmax(tape.value(*l));
        let v = *lp
            .get(t as usize)
            .ok_or_else(|| contract(format!("token {t} outside vocabulary")))?;
        total += v;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params_in, ModelConfig, Variant};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(vocab: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            regions: 3,
            feature_dim: 4,
            hidden_dim: 6,
            guide_dim: 4,
            word_dim: 5,
            attr_dim: 3,
            input_dim: 5,
            guide_input_dim: 4,
            vocab_size: vocab,
            variant,
            candidate_tanh: false,
            dropout_rate: 0.0,
            max_decode_len: 4,
        }
    }

    fn instance(seed: u64, vocab: usize) -> (Model, AnnotationSet, Vec<f64>) {
        let cfg = tiny(vocab, Variant::ALL[seed as usize % 3]);
        let model = Model::from_params(cfg.clone(), init_params_in(&cfg, seed, 1.5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a = (0..cfg.regions * cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let attrs = (0..cfg.attr_dim).map(|_| rng.random_range(0.0..1.0)).collect();
        (model, AnnotationSet::new(Tensor::matrix(cfg.regions, cfg.feature_dim, a).unwrap()).unwrap(), attrs)
    }

    #[test]
    fn masked_tokens_have_no_mass() {
        let lp = masked_log_softmax(&[5.0, 5.0, 0.0, 5.0, 0.0]);
        assert_eq!(lp[0], f64::NEG_INFINITY);
        assert_eq!(lp[1], f64::NEG_INFINITY);
        assert_eq!(lp[3], f64::NEG_INFINITY);
        assert!((lp[2] - libm::log(0.5)).abs() < 1e-15);
    }

    #[test]
    fn greedy_respects_length_cap_and_is_deterministic() {
        let (m, a, at) = instance(1, 6);
        for max_len in 0..4 {
            let d = greedy_decode(&m, &a, &at, max_len).unwrap();
            assert!(d.hypothesis.steps() <= max_len);
            assert_eq!(d.alphas.len(), d.hypothesis.steps());
            assert_eq!(d, greedy_decode(&m, &a, &at, max_len).unwrap());
        }
    }

    #[test]
    fn width_one_matches_greedy() {
        for seed in 0..20 {
            let (m, a, at) = instance(seed, 6);
            let g = greedy_decode(&m, &a, &at, 4).unwrap().hypothesis;
            let b = beam_search(&m, &a, &at, &BeamOptions::new(1, 4)).unwrap();
            assert_eq!(b.len(), 1);
            assert_eq!(b[0].tokens, g.tokens);
            assert_eq!(b[0].finished, g.finished);
            assert!((b[0].log_prob - g.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_scores_match_rescoring() {
        for seed in 0..10 {
            let (m, a, at) = instance(seed, 6);
            for h in beam_search(&m, &a, &at, &BeamOptions::new(3, 4)).unwrap() {
                let r = sequence_log_prob(&m, &a, &at, &h.tokens, h.finished).unwrap();
                assert!((r - h.log_prob).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beams_are_sorted_and_distinct() {
        let (m, a, at) = instance(4, 6);
        let hs = beam_search(&m, &a, &at, &BeamOptions::new(5, 4)).unwrap();
        assert_eq!(hs.len(), 5);
        for w in hs.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
            assert!(w[0].tokens != w[1].tokens || w[0].finished != w[1].finished);
        }
    }

    #[test]
    fn zero_width_is_rejected() {
        let (m, a, at) = instance(0, 6);
        assert!(beam_search(&m, &a, &at, &BeamOptions::new(0, 4)).is_err());
    }
}
