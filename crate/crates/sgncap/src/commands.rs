//! The work behind each subcommand, writing to any `Write`.

use std::io::Write;
use std::path::Path;

use sgncap_core::data::{generate_dataset, GenConfig};
use sgncap_core::inference::{beam_search, greedy_decode, BeamOptions};
use sgncap_core::metrics::EvalScores;
use sgncap_core::model::{Model, ModelConfig, Variant};
use sgncap_core::training::{grad_check, grad_check_instance, train as run_training, TrainConfig, TrainEvent, TrainExample, TrainReport};

use crate::checkpoint;
use crate::dataset;
use crate::error::{io_err, Error, Result};
use crate::evalio;
use crate::kv::{self, KvConfig, KvMap};

fn out_err(e: std::io::Error) -> Error {
    io_err("<output>")(e)
}

pub fn generate_data(out: &Path, settings: &KvMap) -> Result<GenConfig> {
    let gen: GenConfig = kv::from_map(settings)?;
    let ds = generate_dataset(&gen)?;
    dataset::write_dataset(out, &ds, &gen)?;
    Ok(gen)
}

/// Keys accepted by `train`.
pub fn train_keys() -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = ModelConfig::KEYS.iter().chain(TrainConfig::KEYS).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    keys
}

/// Model and training settings for the dataset in `data_dir`.
///
/// Region count, feature size, attribute size and vocabulary size come
/// from the data; giving them explicitly is allowed only if they agree.
pub fn train_configs(data: &dataset::Loaded, settings: &KvMap) -> Result<(ModelConfig, TrainConfig)> {
    kv::check_keys(settings, &train_keys())?;
    let first = data
        .records
        .first()
        .ok_or_else(|| Error::Config("training split is empty".into()))?;
    let derived = [
        ("regions", first.annotations.len()),
        ("feature_dim", first.annotations[0].len()),
        ("attr_dim", data.attributes.dim()),
        ("vocab_size", data.vocab.len()),
    ];
    let mut model = ModelConfig::default();
    let mut tc = TrainConfig::default();
    kv::apply(&mut model, settings)?;
    kv::apply(&mut tc, settings)?;
    for (key, value) in derived {
        if let Some(given) = settings.get(key) {
            if kv::value::<usize>(key, given)? != value {
                return Err(Error::Config(format!("{key}={given} but the dataset has {value}")));
            }
        }
        model.set(key, &value.to_string())?;
    }
    model.validate()?;
    tc.validate()?;
    Ok((model, tc))
}

/// Trains on every caption of the training split, logging each step and
/// checkpointing after each epoch.
pub fn train(data_dir: &Path, checkpoint_path: &Path, settings: &KvMap, log: &mut dyn Write) -> Result<TrainReport> {
    let data = dataset::load(data_dir, "train")?;
    let (config, tc) = train_configs(&data, settings)?;
    let examples = TrainExample::all_from_records(&data.records, &data.vocab)?;
    let mut model = Model::new(config, tc.seed)?;
    let report = run_training(&mut model, &examples, &tc, |event| -> Result<()> {
        match event {
            TrainEvent::Step { epoch, step, loss } => {
                writeln!(log, "epoch {epoch} step {step} loss {loss:.6}").map_err(out_err)?;
            }
            TrainEvent::EpochEnd { model, .. } => checkpoint::save(model, checkpoint_path)?,
        }
        Ok(())
    })?;
    Ok(report)
}

pub fn evaluate(candidates: &Path, references: &Path) -> Result<EvalScores> {
    let c = std::fs::read_to_string(candidates).map_err(io_err(candidates))?;
    let r = std::fs::read_to_string(references).map_err(io_err(references))?;
    let corpus = evalio::corpus(&c, &r, &references.display().to_string())?;
    Ok(EvalScores::compute(&corpus)?)
}

pub const EVAL_HEADER: &str = "BLEU@1,BLEU@2,BLEU@3,BLEU@4,ROUGE_L,CIDEr";

/// The six scores, ×100, as one CSV row.
pub fn eval_row(s: &EvalScores) -> String {
    let vals: Vec<String> = s
        .bleu
        .iter()
        .chain([&s.rouge_l, &s.cider])
        .map(|v| format!("{:.4}", v * 100.0))
        .collect();
    vals.join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionOptions {
    pub split: String,
    /// Beam width; `None` decodes greedily.
    pub beam: Option<usize>,
    pub length_normalize: bool,
    pub max_decode_len: Option<usize>,
}

/// Prints one caption per record of the split.
pub fn caption(checkpoint_path: &Path, data_dir: &Path, opts: &CaptionOptions, out: &mut dyn Write) -> Result<()> {
    let model = checkpoint::load(checkpoint_path)?;
    let data = dataset::load(data_dir, &opts.split)?;
    let max_len = opts.max_decode_len.unwrap_or(model.config.max_decode_len);
    for r in &data.records {
        let a = r.annotation_set()?;
        let tokens = match opts.beam {
            None => greedy_decode(&model, &a, &r.attributes, max_len)?.hypothesis.tokens,
            Some(width) => {
                let bo = BeamOptions {
                    width,
                    max_len,
                    length_normalize: opts.length_normalize,
                };
                beam_search(&model, &a, &r.attributes, &bo)?.swap_remove(0).tokens
            }
        };
        writeln!(out, "{}", data.vocab.detokenize(&tokens)).map_err(out_err)?;
    }
    Ok(())
}

pub const GRAD_CHECK_TOL: f64 = 1e-5;

/// Runs the gradient check on a random small instance; returns whether it passed.
pub fn gradcheck(variant: Variant, seed: u64, epsilon: f64, out: &mut dyn Write) -> Result<bool> {
    let (model, ex) = grad_check_instance(variant, seed)?;
    let report = grad_check(&model, &ex, epsilon)?;
    for b in &report.blocks {
        writeln!(out, "{:<24} entries {:>4} rel_err {:.3e}", b.name, b.entries, b.rel_err()).map_err(out_err)?;
    }
    let worst = report.max_rel_err();
    let pass = report.passes(GRAD_CHECK_TOL);
    if pass {
        writeln!(out, "PASS max_rel_err {worst:.3e} < {GRAD_CHECK_TOL:e}").map_err(out_err)?;
    } else {
        writeln!(out, "FAIL max_rel_err {worst:.3e} >= {GRAD_CHECK_TOL:e}").map_err(out_err)?;
    }
    Ok(pass)
}

/// Greedy-decodes record `index` and prints its alignment weights as CSV.
pub fn inspect_attention(
    checkpoint_path: &Path,
    data_dir: &Path,
    split: &str,
    index: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let model = checkpoint::load(checkpoint_path)?;
    let data = dataset::load(data_dir, split)?;
    let r = data.records.get(index).ok_or_else(|| {
        Error::Config(format!("index {index} out of range: {split} has {} records", data.records.len()))
    })?;
    let d = greedy_decode(&model, &r.annotation_set()?, &r.attributes, model.config.max_decode_len)?;
    let header: Vec<String> = (0..model.config.regions).map(|k| format!("k{k}")).collect();
    writeln!(out, "t,{}", header.join(",")).map_err(out_err)?;
    for (t, alpha) in d.alphas.iter().enumerate() {
        let row: Vec<String> = alpha.iter().map(|a| format!("{a:.6}")).collect();
        writeln!(out, "{t},{}", row.join(",")).map_err(out_err)?;
    }
    Ok(())
}
