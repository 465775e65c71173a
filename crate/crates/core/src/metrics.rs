//! Corpus-level caption metrics: BLEU@1..4, ROUGE-L and CIDEr.
//!
//! All scores are on the unit scale; multiply by 100 for table-style numbers.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Result};

/// One image: a candidate caption and its references, already tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalItem {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

fn check(corpus: &[EvalItem]) -> Result<()> {
    if corpus.is_empty() {
        return Err(contract("evaluation corpus is empty"));
    }
    if corpus.iter().any(|it| it.references.is_empty()) {
        return Err(contract("every image needs at least one reference"));
    }
    Ok(())
}

/// Counts of every `n`-gram in `tokens`.
pub fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// BLEU@1 .. BLEU@`n_max` with clipped counts pooled over the corpus.
///
/// The reference length for the brevity penalty is, per image, the one
/// closest to the candidate length (the shorter on ties). A zero precision
/// at any order gives zero for that and all higher orders.
pub fn bleu(corpus: &[EvalItem], n_max: usize) -> Result<Vec<f64>> {
    check(corpus)?;
    if n_max == 0 {
        return Err(contract("n_max must be at least 1"));
    }
    let mut matched = vec![0usize; n_max];
    let mut total = vec![0usize; n_max];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for it in corpus {
        let c = it.candidate.len();
        c_len += c;
        r_len += it
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .unwrap_or(0);
        for n in 1..=n_max {
            let cand = ngram_counts(&it.candidate, n);
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in &it.references {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in cand {
                total[n - 1] += k;
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    let bp = if c_len == 0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        libm::exp(1.0 - r_len as f64 / c_len as f64)
    };
    let mut out = Vec::with_capacity(n_max);
    let mut log_sum = 0.0;
    let mut dead = bp == 0.0;
    for n in 0..n_max {
        if matched[n] == 0 || total[n] == 0 {
            dead = true;
        }
        if dead {
            out.push(0.0);
            continue;
        }
        log_sum += libm::log(matched[n] as f64 / total[n] as f64);
        out.push(bp * libm::exp(log_sum / (n + 1) as f64));
    }
    Ok(out)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure of one candidate against one reference.
pub fn rouge_l_pair(candidate: &[String], reference: &[String], beta: f64) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over images of the best [`rouge_l_pair`] against any reference.
pub fn rouge_l(corpus: &[EvalItem], beta: f64) -> Result<f64> {
    check(corpus)?;
    let sum: f64 = corpus
        .iter()
        .map(|it| {
            it.references
                .iter()
                .map(|r| rouge_l_pair(&it.candidate, r, beta))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(sum / corpus.len() as f64)
}

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiderOptions {
    pub n_max: usize,
    /// Gaussian length penalty width; `None` leaves it off.
    pub sigma: Option<f64>,
}

impl Default for CiderOptions {
    fn default() -> Self {
        CiderOptions { n_max: 4, sigma: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScore {
    /// Mean over orders and images.
    pub score: f64,
    /// Mean over images of the reference-averaged cosine, per order.
    pub per_n: Vec<f64>,
}

type TfIdf<'a> = BTreeMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &BTreeMap<&[String], usize>, log_images: f64) -> TfIdf<'a> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(g, k)| {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            (g, k as f64 / total as f64 * (log_images - libm::log(d)))
        })
        .collect()
}

fn cosine(a: &TfIdf<'_>, b: &TfIdf<'_>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    let na = libm::sqrt(a.values().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.values().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Plain CIDEr: tf-idf n-gram vectors, cosine averaged over references and
/// then over orders. Document frequency counts images whose reference set
/// contains the n-gram.
pub fn cider(corpus: &[EvalItem], opts: &CiderOptions) -> Result<CiderScore> {
    check(corpus)?;
    if opts.n_max == 0 {
        return Err(contract("n_max must be at least 1"));
    }
    let log_images = libm::log(corpus.len() as f64);
    let mut per_n = vec![0.0; opts.n_max];
    for n in 1..=opts.n_max {
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for it in corpus {
            let seen: BTreeSet<&[String]> = it.references.iter().flat_map(|r| r.windows(n)).collect();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let mut sum = 0.0;
        for it in corpus {
            let c = tfidf(&it.candidate, n, &df, log_images);
            let mut s = 0.0;
            for r in &it.references {
                let mut cos = cosine(&c, &tfidf(r, n, &df, log_images));
                if let Some(sigma) = opts.sigma {
                    let d = it.candidate.len() as f64 - r.len() as f64;
                    cos *= libm::exp(-d * d / (2.0 * sigma * sigma));
                }
                s += cos;
            }
            sum += s / it.references.len() as f64;
        }
        per_n[n - 1] = sum / corpus.len() as f64;
    }
    let score = per_n.iter().sum::<f64>() / opts.n_max as f64;
    Ok(CiderScore { score, per_n })
}

/// The six numbers of an evaluation run, all on the unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
}

impl EvalScores {
    pub fn compute(corpus: &[EvalItem]) -> Result<Self> {
        let b = bleu(corpus, 4)?;
        Ok(EvalScores {
            bleu: [b[0], b[1], b[2], b[3]],
            rouge_l: rouge_l(corpus, ROUGE_BETA)?,
            cider: cider(corpus, &CiderOptions::default())?.score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(ToString::to_string).collect()
    }

    fn item(c: &str, refs: &[&str]) -> EvalItem {
        EvalItem {
            candidate: t(c),
            references: refs.iter().map(|r| t(r)).collect(),
        }
    }

    #[test]
    fn bleu_hand_counted_example() {
        let b = bleu(&[item("the cat sat", &["the cat sat down"])], 3).unwrap();
        let expect = libm::exp(1.0 - 4.0 / 3.0);
        assert!((b[2] - expect).abs() < 1e-12);
        assert!((b[2] - 0.7165).abs() < 1e-4);
    }

    #[test]
    fn bleu_identity_and_empty_candidate() {
        let c = [item("a red circle left of a blue star", &["a red circle left of a blue star"])];
        assert!((bleu(&c, 4).unwrap()[3] - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&[item("", &["a b"])], 4).unwrap(), vec![0.0; 4]);
        assert!(bleu(&[], 4).is_err());
    }

    #[test]
    fn bleu_clips_repeated_words() {
        let b = bleu(&[item("the the the the", &["the cat"])], 1).unwrap();
        // p1 = 1/4, no brevity penalty.
        assert!((b[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&[item("a b c", &["a b c"])], ROUGE_BETA).unwrap(), 1.0);
        assert_eq!(rouge_l(&[item("a b c", &["d e"])], ROUGE_BETA).unwrap(), 0.0);
        assert_eq!(lcs_len(&t("a b c d"), &t("b d a c")), 2);
    }

    #[test]
    fn cider_identity_and_disjoint() {
        let corpus = [item("a red circle", &["a red circle"]), item("one blue star", &["one blue star"])];
        let s = cider(&corpus, &CiderOptions::default()).unwrap();
        for (n, v) in s.per_n.iter().enumerate().take(3) {
            assert!((v - 1.0).abs() < 1e-12, "order {}", n + 1);
        }
        // No 4-grams in three-word captions.
        assert_eq!(s.per_n[3], 0.0);
        let disjoint = [item("x y z", &["a red circle"]), item("p q r", &["one blue star"])];
        assert_eq!(cider(&disjoint, &CiderOptions::default()).unwrap().score, 0.0);
    }

    #[test]
    fn cider_length_penalty() {
        let corpus = [item("a b", &["a b c d"]), item("e f", &["e f"])];
        let plain = cider(&corpus, &CiderOptions { n_max: 1, sigma: None }).unwrap().score;
        let pen = cider(&corpus, &CiderOptions { n_max: 1, sigma: Some(6.0) }).unwrap().score;
        assert!(pen < plain);
    }
}
