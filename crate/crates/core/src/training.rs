//! Maximum-likelihood training and the finite-difference gradient check.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::AnnotationSet;
use crate::data::{SceneRecord, TokenId, Vocabulary, PAD};
use crate::error::{contract, Error, Result};
use crate::model::{forward_sequence, init_params_in, Dropout, Model, ModelConfig, ModelParams, SceneVars, Variant};
use crate::params::{ParamTree, TensorTree};
use crate::tape::{Fault, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(contract(format!("unknown optimizer {other:?}, expected sgd or adam"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub dropout_rate: f64,
    /// Stop after this many updates, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 16,
            epochs: 10,
            optimizer: Optimizer::Sgd,
            grad_clip_norm: 5.0,
            seed: 0,
            dropout_rate: 0.3,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(contract(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(contract("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(contract(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm < 0.0 {
            return Err(contract("grad_clip_norm must be non-negative"));
        }
        Ok(())
    }
}

/// One image with one caption, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub annotations: AnnotationSet,
    pub attributes: Vec<f64>,
    /// Word ids without `<sos>`/`<eos>`. Trailing `<pad>` ids are ignored.
    pub caption: Vec<TokenId>,
}

impl TrainExample {
    /// Pairs the record's features with caption number `caption`.
    pub fn from_record(record: &SceneRecord, vocab: &Vocabulary, caption: usize) -> Result<Self> {
        let text = record
            .captions
            .get(caption)
            .ok_or_else(|| contract(format!("record {} has no caption {caption}", record.id)))?;
        Ok(TrainExample {
            annotations: record.annotation_set()?,
            attributes: record.attributes.clone(),
            caption: vocab.encode(&crate::data::preprocess(text)),
        })
    }

    /// One example per (record, caption) pair.
    pub fn all_from_records(records: &[SceneRecord], vocab: &Vocabulary) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for r in records {
            for i in 0..r.captions.len() {
                out.push(Self::from_record(r, vocab, i)?);
            }
        }
        Ok(out)
    }

    /// Caption with trailing padding removed.
    pub fn words(&self) -> &[TokenId] {
        let end = self.caption.iter().rposition(|&w| w != PAD).map_or(0, |i| i + 1);
        &self.caption[..end]
    }
}

/// Sum of `-log p(target)` over non-pad targets, and the number of such targets.
pub fn nll_sum(tape: &mut Tape, logits: &[Var], targets: &[TokenId]) -> Result<Option<(Var, usize)>> {
    if logits.len() != targets.len() {
        return Err(contract(format!("{} logit vectors for {} targets", logits.len(), targets.len())));
    }
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (&l, &t) in logits.iter().zip(targets) {
        if t == PAD {
            continue;
        }
        let ce = tape.cross_entropy(l, t as usize)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
        count += 1;
    }
    Ok(total.map(|v| (v, count)))
}

/// Mean negative log-likelihood per non-pad target.
pub fn nll_loss(tape: &mut Tape, logits: &[Var], targets: &[TokenId]) -> Result<Var> {
    let (sum, n) = nll_sum(tape, logits, targets)?.ok_or_else(|| contract("no non-pad targets"))?;
    tape.scale(sum, 1.0 / n as f64)
}

/// Records the token-summed loss of `batch` on `tape`. Padding after a
/// caption never reaches the model since decoding is causal.
fn batch_nll(
    tape: &mut Tape,
    batch: &[&TrainExample],
    params: &ModelParams<Var>,
    model: &Model,
    dropout: &mut Dropout,
) -> Result<(Var, usize)> {
    let mut total: Option<Var> = None;
    let mut count = 0;
    for ex in batch {
        let words = ex.words();
        if words.contains(&PAD) {
            return Err(contract("padding inside a caption"));
        }
        let scene = SceneVars::record(tape, &ex.annotations, &ex.attributes)?;
        let logits = forward_sequence(tape, &scene, words, params, &model.config, dropout)?;
        let targets = crate::model::decoder_targets(words);
        if let Some((s, n)) = nll_sum(tape, &logits, &targets)? {
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
            count += n;
        }
    }
    let total = total.ok_or_else(|| contract("empty batch"))?;
    Ok((total, count))
}

/// Mean token NLL of `model` over `data`, dropout off.
pub fn mean_nll(model: &Model, data: &[TrainExample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for ex in data {
        let mut tape = Tape::new();
        let params = model.params.register_frozen(&mut tape);
        let (s, n) = batch_nll(&mut tape, &[ex], &params, model, &mut Dropout::disabled())?;
        sum += tape.scalar(s);
        count += n;
    }
    if count == 0 {
        return Err(contract("no examples"));
    }
    Ok(sum / count as f64)
}

/// Progress reported by [`train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step { epoch: usize, step: usize, loss: f64 },
    EpochEnd { epoch: usize, mean_loss: f64, model: &'a Model },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Token-weighted mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(params: &mut ModelParams, cfg: &TrainConfig, adam: &mut Option<AdamState>) {
    let norm = params.grad_norm();
    let clip = if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    };
    let lr = cfg.learning_rate;
    let mut idx = 0;
    params.visit_mut("", &mut |_, t| {
        let Some(g) = t.grad.take() else {
            idx += 1;
            return;
        };
        match adam {
            None => {
                for (p, g) in t.data_mut().iter_mut().zip(&g) {
                    *p -= lr * clip * g;
                }
            }
            Some(st) => {
                let (m, v) = (&mut st.m[idx], &mut st.v[idx]);
                let bc1 = 1.0 - libm::pow(ADAM_BETA1, f64::from(st.t));
                let bc2 = 1.0 - libm::pow(ADAM_BETA2, f64::from(st.t));
                for (j, p) in t.data_mut().iter_mut().enumerate() {
                    let gj = clip * g[j];
                    m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                    v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                    *p -= lr * (m[j] / bc1) / (libm::sqrt(v[j] / bc2) + ADAM_EPS);
                }
            }
        }
        idx += 1;
    });
}

/// Minibatch training with per-epoch reshuffling.
///
/// Everything random (shuffles, dropout masks) derives from `cfg.seed`, so
/// two runs with equal inputs produce equal parameters and logs. The
/// callback sees every step and every epoch end; its error aborts training.
pub fn train<E: From<Error>>(
    model: &mut Model,
    data: &[TrainExample],
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<(), E>,
) -> Result<TrainReport, E> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(contract("training set is empty").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout = Dropout::new(cfg.dropout_rate, cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| {
        let zeros: Vec<Vec<f64>> = model.params.named().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    });
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        steps: 0,
    };
    for epoch in 1..=cfg.epochs {
        if cfg.max_steps.is_some_and(|m| report.steps >= m) {
            break;
        }
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
            let diverged = |cause: String| Error::Diverged {
                epoch,
                batch: b,
                cause,
            };
            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape);
            let (total, n) = batch_nll(&mut tape, &batch, &vars, model, &mut dropout).map_err(|e| match e {
                Error::NonFinite { .. } => diverged(e.to_string()),
                other => other,
            })?;
            let loss = tape.scale(total, 1.0 / n as f64).map_err(|e| diverged(e.to_string()))?;
            let value = tape.scalar(loss);
            tape.backward(loss).map_err(|e| diverged(e.to_string()))?;
            model.params.zero_grad();
            model.params.absorb_grads(&tape, &vars)?;
            if let Some(st) = &mut adam {
                st.t += 1;
            }
            apply_update(&mut model.params, cfg, &mut adam);
            if model.params.named().iter().any(|(_, t)| t.data().iter().any(|x| !x.is_finite())) {
                return Err(diverged("parameters became non-finite".to_string()).into());
            }
            report.steps += 1;
            sum += value * n as f64;
            count += n;
            on_event(TrainEvent::Step {
                epoch,
                step: report.steps,
                loss: value,
            })?;
        }
        if count > 0 {
            let mean = sum / count as f64;
            report.epoch_losses.push(mean);
            on_event(TrainEvent::EpochEnd {
                epoch,
                mean_loss: mean,
                model,
            })?;
        }
    }
    Ok(report)
}

/// Gradient agreement within one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    /// `max_j |a_j - n_j|`.
    pub max_abs_err: f64,
    /// `max_j max(|a_j|, |n_j|)`.
    pub grad_scale: f64,
    /// Largest entrywise `|a - n| / max(|a|, |n|)`, informational only: it
    /// is dominated by rounding noise wherever a true gradient is near zero.
    pub max_entry_rel_err: f64,
}

impl BlockCheck {
    /// Normwise relative error `max|a - n| / max(|a|, |n|)` over the block.
    pub fn rel_err(&self) -> f64 {
        if self.grad_scale == 0.0 {
            self.max_abs_err
        } else {
            self.max_abs_err / self.grad_scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(BlockCheck::rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Weight range of [`grad_check_instance`]. Larger than the training
/// initialization so that gradients sit well above finite-difference
/// rounding noise.
pub const GRAD_CHECK_INIT_RANGE: f64 = 1.0;

/// The small configuration used for gradient checks.
pub fn grad_check_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        regions: 4,
        feature_dim: 6,
        hidden_dim: 8,
        guide_dim: 5,
        word_dim: 7,
        attr_dim: 5,
        input_dim: 8,
        guide_input_dim: 5,
        vocab_size: 12,
        variant,
        candidate_tanh: false,
        dropout_rate: 0.0,
        max_decode_len: 5,
    }
}

/// A random model and a random three-word example for [`grad_check`].
pub fn grad_check_instance(variant: Variant, seed: u64) -> Result<(Model, TrainExample)> {
    let cfg = grad_check_config(variant);
    let model = Model::from_params(cfg.clone(), init_params_in(&cfg, seed, GRAD_CHECK_INIT_RANGE)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let a: Vec<f64> = (0..cfg.regions * cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ex = TrainExample {
        annotations: AnnotationSet::new(crate::tensor::Tensor::matrix(cfg.regions, cfg.feature_dim, a)?)?,
        attributes: (0..cfg.attr_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
        caption: (0..3).map(|_| rng.random_range(4..cfg.vocab_size as TokenId)).collect(),
    };
    Ok((model, ex))
}

fn example_loss(model: &Model, ex: &TrainExample) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.params.register_frozen(&mut tape);
    let (s, n) = batch_nll(&mut tape, &[ex], &vars, model, &mut Dropout::disabled())?;
    Ok(tape.scalar(s) / n as f64)
}

fn analytic_grads(model: &Model, ex: &TrainExample, fault: Option<Fault>) -> Result<ModelParams> {
    let mut tape = Tape::new();
    if let Some(f) = fault {
        tape.inject_fault(f);
    }
    let vars = model.params.register(&mut tape);
    let (s, n) = batch_nll(&mut tape, &[ex], &vars, model, &mut Dropout::disabled())?;
    let loss = tape.scale(s, 1.0 / n as f64)?;
    tape.backward(loss)?;
    let mut out = model.params.clone();
    out.zero_grad();
    out.absorb_grads(&tape, &vars)?;
    Ok(out)
}

pub(crate) fn grad_check_with(
    model: &Model,
    ex: &TrainExample,
    epsilon: f64,
    fault: Option<Fault>,
) -> Result<GradCheckReport> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(contract("epsilon must be positive"));
    }
    let analytic = analytic_grads(model, ex, fault)?;
    let grads: BTreeMap<String, Vec<f64>> = analytic
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.grad.clone().unwrap_or_else(|| vec![0.0; t.numel()])))
        .collect();
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(names.len());
    for name in names {
        let block_grads = &grads[&name];
        let len = block_grads.len();
        let mut block = BlockCheck {
            name: name.clone(),
            entries: len,
            max_abs_err: 0.0,
            grad_scale: 0.0,
            max_entry_rel_err: 0.0,
        };
        for (j, &a) in block_grads.iter().enumerate() {
            let original = entry(&mut probe.params, &name, j, None);
            entry(&mut probe.params, &name, j, Some(original + epsilon));
            let plus = example_loss(&probe, ex)?;
            entry(&mut probe.params, &name, j, Some(original - epsilon));
            let minus = example_loss(&probe, ex)?;
            entry(&mut probe.params, &name, j, Some(original));
            let numeric = (plus - minus) / (2.0 * epsilon);
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            block.max_abs_err = block.max_abs_err.max(diff);
            block.grad_scale = block.grad_scale.max(scale);
            if scale > 0.0 {
                block.max_entry_rel_err = block.max_entry_rel_err.max(diff / scale);
            }
        }
        blocks.push(block);
    }
    Ok(GradCheckReport { blocks })
}

/// Reads entry `j` of block `name`, optionally overwriting it first.
fn entry(params: &mut ModelParams, name: &str, j: usize, set: Option<f64>) -> f64 {
    let mut out = 0.0;
    params.visit_mut("", &mut |n, t| {
        if n == name {
            if let Some(v) = set {
                t.data_mut()[j] = v;
            }
            out = t.data()[j];
        }
    });
    out
}

/// Compares backprop gradients of the mean token NLL on `ex` with central
/// differences, entry by entry, for every parameter block.
pub fn grad_check(model: &Model, ex: &TrainExample, epsilon: f64) -> Result<GradCheckReport> {
    grad_check_with(model, ex, epsilon, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn example(cfg: &ModelConfig, seed: u64, len: usize) -> TrainExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..cfg.regions * cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        TrainExample {
            annotations: AnnotationSet::new(Tensor::matrix(cfg.regions, cfg.feature_dim, a).unwrap()).unwrap(),
            attributes: (0..cfg.attr_dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            caption: (0..len).map(|_| rng.random_range(4..cfg.vocab_size as TokenId)).collect(),
        }
    }

    #[test]
    fn nll_of_perfect_and_uniform_predictions() {
        let mut tape = Tape::new();
        let sure = tape.constant_vector(vec![0.0, 800.0, 0.0]).unwrap();
        let loss = nll_loss(&mut tape, &[sure, sure], &[1, 1]).unwrap();
        assert!(tape.scalar(loss) < 1e-300);
        let flat = tape.constant_vector(vec![0.3; 7]).unwrap();
        let loss = nll_loss(&mut tape, &[flat, flat, flat], &[4, 5, 6]).unwrap();
        assert!((tape.scalar(loss) - libm::log(7.0)).abs() < 1e-9);
    }

    #[test]
    fn nll_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let targets = [4, 0, 2];
        let logits: Vec<Var> = rows.iter().map(|r| tape.constant_vector(r.clone()).unwrap()).collect();
        let loss = nll_loss(&mut tape, &logits, &targets).unwrap();
        // Padding at position 1 is skipped.
        let mut expect = 0.0;
        for (r, &t) in rows.iter().zip(&targets) {
            if t == PAD {
                continue;
            }
            let z: f64 = r.iter().map(|x| libm::exp(*x)).sum();
            expect -= libm::log(libm::exp(r[t as usize]) / z);
        }
        assert!((tape.scalar(loss) - expect / 2.0).abs() < 1e-12);
    }

    #[test]
    fn nll_length_mismatch() {
        let mut tape = Tape::new();
        let l = tape.constant_vector(vec![0.0; 3]).unwrap();
        assert!(matches!(nll_loss(&mut tape, &[l], &[1, 2]), Err(Error::Contract(_))));
        assert!(nll_loss(&mut tape, &[l], &[PAD]).is_err());
    }

    #[test]
    fn trailing_padding_leaves_loss_unchanged() {
        let cfg = grad_check_config(Variant::Sgn);
        let model = Model::new(cfg.clone(), 3).unwrap();
        let ex = example(&cfg, 1, 3);
        let mut padded = ex.clone();
        padded.caption.extend([PAD, PAD, PAD]);
        assert_eq!(mean_nll(&model, &[ex]).unwrap(), mean_nll(&model, &[padded]).unwrap());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cfg = grad_check_config(Variant::Att);
        let mut model = Model::new(cfg.clone(), 3).unwrap();
        let before = model.params.clone();
        let data = vec![example(&cfg, 1, 3), example(&cfg, 2, 2)];
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 1,
            ..TrainConfig::default()
        };
        train::<Error>(&mut model, &data, &tc, |_| Ok(())).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let cfg = grad_check_config(Variant::Sgn);
        let data: Vec<_> = (0..4).map(|s| example(&cfg, s, 3)).collect();
        let tc = TrainConfig {
            learning_rate: 0.05,
            optimizer: Optimizer::Adam,
            epochs: 150,
            batch_size: 2,
            dropout_rate: 0.1,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = Model::new(cfg.clone(), 9).unwrap();
            let mut log = Vec::new();
            train::<Error>(&mut model, &data, &tc, |e| {
                if let TrainEvent::Step { loss, .. } = e {
                    log.push(loss);
                }
                Ok(())
            })
            .unwrap();
            (model, log)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(l1, l2);
        assert_eq!(m1.params, m2.params);
        let start = Model::new(cfg.clone(), 9).unwrap();
        assert!(mean_nll(&m1, &data).unwrap() < 0.5 * mean_nll(&start, &data).unwrap());
    }

    #[test]
    fn max_steps_caps_updates() {
        let cfg = grad_check_config(Variant::Plain);
        let mut model = Model::new(cfg.clone(), 3).unwrap();
        let data: Vec<_> = (0..5).map(|s| example(&cfg, s, 2)).collect();
        let tc = TrainConfig {
            epochs: 10,
            batch_size: 2,
            max_steps: Some(7),
            ..TrainConfig::default()
        };
        let r = train::<Error>(&mut model, &data, &tc, |_| Ok(())).unwrap();
        assert_eq!(r.steps, 7);
    }

    #[test]
    fn divergence_names_the_batch() {
        let cfg = grad_check_config(Variant::Plain);
        let mut model = Model::new(cfg.clone(), 3).unwrap();
        let data: Vec<_> = (0..3).map(|s| example(&cfg, s, 2)).collect();
        let tc = TrainConfig {
            learning_rate: 1e300,
            optimizer: Optimizer::Sgd,
            grad_clip_norm: 0.0,
            batch_size: 1,
            epochs: 3,
            dropout_rate: 0.0,
            ..TrainConfig::default()
        };
        match train::<Error>(&mut model, &data, &tc, |_| Ok(())) {
            Err(Error::Diverged { epoch, batch, .. }) => assert!(epoch >= 1 && batch < 3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn grad_check_passes_for_every_variant() {
        for v in Variant::ALL {
            let (model, ex) = grad_check_instance(v, 11).unwrap();
            let report = grad_check(&model, &ex, 1e-5).unwrap();
            assert!(report.passes(1e-5), "{v}: {:?}", report.blocks);
            assert_eq!(report.blocks.len(), model.params.named().len());
        }
    }

    #[test]
    fn grad_check_catches_a_broken_backward_rule() {
        let (model, ex) = grad_check_instance(Variant::Sgn, 11).unwrap();
        let report = grad_check_with(&model, &ex, 1e-5, Some(Fault::SigmoidDerivative)).unwrap();
        assert!(!report.passes(1e-5));
        assert!(report.max_rel_err() > 1e-2);
    }

    #[test]
    fn normwise_error() {
        let b = BlockCheck {
            name: "w".into(),
            entries: 2,
            max_abs_err: 1e-9,
            grad_scale: 1e-3,
            max_entry_rel_err: 0.5,
        };
        assert!((b.rel_err() - 1e-6).abs() < 1e-18);
        let zero = BlockCheck { grad_scale: 0.0, max_abs_err: 0.0, ..b };
        assert_eq!(zero.rel_err(), 0.0);
    }
}
