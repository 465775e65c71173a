//! Dataset directory layout.
//!
//! ```text
//! train.jsonl val.jsonl test.jsonl   one SceneRecord per line
//! train.refs.txt ...                 references, "IMG <id>" blocks
//! vocab.txt                          one token per line, line number = id
//! attrs.txt                          attribute words, one per line
//! gen.cfg                            generator settings (key=value)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sgncap_core::data::{AttributeSpec, Dataset, GenConfig, SceneRecord, Vocabulary};

use crate::error::{io_err, parse_err, Error, Result};
use crate::kv::{self, KvConfig};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn records_to_jsonl(records: &[SceneRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(format!("record {}: {e}", r.id)))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn records_from_jsonl(text: &str, name: &str) -> Result<Vec<SceneRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: SceneRecord = serde_json::from_str(line).map_err(|e| parse_err(name, i + 1, e.to_string()))?;
        r.validate().map_err(|e| parse_err(name, i + 1, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

/// `IMG <id>` followed by each preprocessed reference caption.
pub fn references_text(records: &[SceneRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "IMG {}", r.id);
        for c in r.tokenized_captions() {
            let _ = writeln!(out, "{}", c.join(" "));
        }
    }
    out
}

pub fn write_dataset(dir: &Path, ds: &Dataset, gen: &GenConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (split, records) in SPLITS.iter().zip([&ds.train, &ds.val, &ds.test]) {
        write(dir.join(format!("{split}.jsonl")), &records_to_jsonl(records)?)?;
        write(dir.join(format!("{split}.refs.txt")), &references_text(records))?;
    }
    write(dir.join("vocab.txt"), &lines(ds.vocab.tokens()))?;
    write(dir.join("attrs.txt"), &lines(&ds.attributes.words))?;
    write(dir.join("gen.cfg"), &kv::render(&gen.to_pairs()))
}

fn lines(words: &[String]) -> String {
    words.iter().map(|w| format!("{w}\n")).collect()
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let tokens = read(path)?.lines().map(str::to_string).collect();
    Ok(Vocabulary::from_tokens(tokens)?)
}

pub fn read_attrs(path: &Path) -> Result<AttributeSpec> {
    let words = read(path)?.lines().map(str::to_string).collect();
    Ok(AttributeSpec { words })
}

pub fn read_split(dir: &Path, split: &str) -> Result<Vec<SceneRecord>> {
    let path = dir.join(format!("{split}.jsonl"));
    records_from_jsonl(&read(&path)?, &path.display().to_string())
}

/// Vocabulary, attribute list and one split of a dataset directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub vocab: Vocabulary,
    pub attributes: AttributeSpec,
    pub records: Vec<SceneRecord>,
}

pub fn load(dir: &Path, split: &str) -> Result<Loaded> {
    let loaded = Loaded {
        vocab: read_vocab(&dir.join("vocab.txt"))?,
        attributes: read_attrs(&dir.join("attrs.txt"))?,
        records: read_split(dir, split)?,
    };
    if let Some(r) = loaded.records.iter().find(|r| r.attributes.len() != loaded.attributes.dim()) {
        return Err(Error::Config(format!(
            "record {} has {} attributes, attrs.txt lists {}",
            r.id,
            r.attributes.len(),
            loaded.attributes.dim()
        )));
    }
    Ok(loaded)
}
