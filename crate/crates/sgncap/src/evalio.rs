//! Text inputs of `evaluate`.
//!
//! Candidates: one caption per line, in image order. References: for each
//! image a header line `IMG <id>` followed by one reference per line.

use sgncap_core::data::preprocess;
use sgncap_core::metrics::EvalItem;

use crate::error::{parse_err, Error, Result};

/// References grouped by image, in file order.
pub fn parse_references(text: &str, name: &str) -> Result<Vec<(String, Vec<Vec<String>>)>> {
    let mut out: Vec<(String, Vec<Vec<String>>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(id) = line.strip_prefix("IMG ") {
            if let Some((prev, refs)) = out.last() {
                if refs.is_empty() {
                    return Err(parse_err(name, i + 1, format!("image {prev} has no references")));
                }
            }
            out.push((id.trim().to_string(), Vec::new()));
        } else if line.trim().is_empty() {
            continue;
        } else {
            let (_, refs) = out
                .last_mut()
                .ok_or_else(|| parse_err(name, i + 1, "reference before the first IMG header"))?;
            refs.push(preprocess(line));
        }
    }
    match out.last() {
        Some((id, refs)) if refs.is_empty() => Err(parse_err(name, text.lines().count(), format!("image {id} has no references"))),
        _ => Ok(out),
    }
}

pub fn parse_candidates(text: &str) -> Vec<Vec<String>> {
    text.lines().map(preprocess).collect()
}

/// Pairs candidates with reference groups, which must be equally many.
pub fn corpus(candidates: &str, references: &str, ref_name: &str) -> Result<Vec<EvalItem>> {
    let cands = parse_candidates(candidates);
    let refs = parse_references(references, ref_name)?;
    if cands.len() != refs.len() {
        return Err(Error::Config(format!(
            "{} candidate lines but {} reference images",
            cands.len(),
            refs.len()
        )));
    }
    Ok(cands
        .into_iter()
        .zip(refs)
        .map(|(candidate, (_, references))| EvalItem { candidate, references })
        .collect())
}
