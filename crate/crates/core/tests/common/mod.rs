//! Independent oracles and random-case checkers shared by the integration
//! suites. Each `*_case` returns `Err` with a description on the first
//! violated property.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgncap_core::attention::{attend, AnnotationSet, AttentionParams};
use sgncap_core::data::{preprocess, Vocabulary, EOS, UNK};
use sgncap_core::inference::{sequence_log_prob, MASKED};
use sgncap_core::metrics::EvalItem;
use sgncap_core::model::{
    advance, image_step, init_params_in, Dropout, Model, ModelConfig, SceneVars, Variant,
};
use sgncap_core::params::TensorTree;
use sgncap_core::recurrent::{lstm_d_step, lstm_g_step, Gates, LstmDGate, LstmDState, LstmGGate, LstmGState};
use sgncap_core::{Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, range: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-range..=range)).collect()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- attention

/// Simplex, convex hull, explicit context, permutation and translation checks.
pub fn attention_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let k = r.random_range(1..=8);
    let d = r.random_range(1..=6);
    let h = r.random_range(1..=6);
    let scale = [0.1, 1.0, 5.0][r.random_range(0..3)];
    let a = uniform(&mut r, k * d, 2.0);
    let w = uniform(&mut r, h * d, scale);
    let hv = uniform(&mut r, h, 1.0);

    let run = |a: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let av = tape.constant(&Tensor::matrix(k, d, a.to_vec()).unwrap());
        let w_a = tape.constant(&Tensor::matrix(h, d, w.clone()).unwrap());
        let hq = tape.constant_vector(hv.clone()).unwrap();
        let out = attend(&mut tape, av, hq, &AttentionParams { w_a }).unwrap();
        (tape.value(out.alpha).to_vec(), tape.value(out.context).to_vec())
    };

    let (alpha, ctx) = run(&a);
    let sum: f64 = alpha.iter().sum();
    if !close(sum, 1.0, 1e-12) || alpha.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(format!("seed {seed}: alpha {alpha:?} not on the simplex"));
    }
    for j in 0..d {
        let col = (0..k).map(|i| a[i * d + j]);
        let lo = col.clone().fold(f64::INFINITY, f64::min);
        let hi = col.fold(f64::NEG_INFINITY, f64::max);
        if ctx[j] < lo - 1e-12 || ctx[j] > hi + 1e-12 {
            return Err(format!("seed {seed}: context[{j}] = {} outside [{lo}, {hi}]", ctx[j]));
        }
        let direct: f64 = (0..k).map(|i| alpha[i] * a[i * d + j]).sum();
        if !close(direct, ctx[j], 1e-12) {
            return Err(format!("seed {seed}: context[{j}] {} != sum alpha a {direct}", ctx[j]));
        }
    }

    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(&mut r);
    let permuted: Vec<f64> = perm.iter().flat_map(|&i| a[i * d..(i + 1) * d].to_vec()).collect();
    let (alpha_p, ctx_p) = run(&permuted);
    for (i, &src) in perm.iter().enumerate() {
        if !close(alpha_p[i], alpha[src], 1e-12) {
            return Err(format!("seed {seed}: permuted alpha differs at {i}"));
        }
    }
    if ctx.iter().zip(&ctx_p).any(|(x, y)| !close(*x, *y, 1e-12)) {
        return Err(format!("seed {seed}: context changed under permutation"));
    }

    let u = uniform(&mut r, d, 1.0);
    let shifted: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + u[i % d]).collect();
    let (alpha_s, ctx_s) = run(&shifted);
    if alpha.iter().zip(&alpha_s).any(|(x, y)| !close(*x, *y, 1e-10)) {
        return Err(format!("seed {seed}: alpha changed under translation"));
    }
    if (0..d).any(|j| !close(ctx_s[j], ctx[j] + u[j], 1e-10)) {
        return Err(format!("seed {seed}: context did not translate"));
    }
    Ok(())
}

// ---------------------------------------------------------------- gates

fn d_gate(r: &mut ChaCha8Rng, h: usize, dx: usize, range: f64) -> LstmDGate<Tensor> {
    LstmDGate {
        w_xh: Tensor::matrix(h, dx, uniform(r, h * dx, range)).unwrap(),
        w_hh: Tensor::matrix(h, h, uniform(r, h * h, range)).unwrap(),
        w_th: Tensor::matrix(h, h, uniform(r, h * h, range)).unwrap(),
        b: Tensor::vector(uniform(r, h, range)).unwrap(),
    }
}

fn g_gate(r: &mut ChaCha8Rng, g: usize, dz: usize, range: f64) -> LstmGGate<Tensor> {
    LstmGGate {
        w_x: Tensor::matrix(g, dz, uniform(r, g * dz, range)).unwrap(),
        w_h: Tensor::matrix(g, g, uniform(r, g * g, range)).unwrap(),
        b: Tensor::vector(uniform(r, g, range)).unwrap(),
    }
}

fn check_cell(seed: u64, what: &str, h: &[f64], m: &[f64], m_prev: &[f64], nonneg: bool) -> Result<(), String> {
    for j in 0..h.len() {
        if !h[j].is_finite() || h[j].abs() >= 1.0 {
            return Err(format!("seed {seed}: {what} h[{j}] = {} outside (-1, 1)", h[j]));
        }
        if h[j].abs() > m[j].tanh().abs() + 1e-15 {
            return Err(format!("seed {seed}: {what} |h| exceeds |tanh(m)| at {j}"));
        }
        if m[j].abs() > m_prev[j].abs() + 1.0 + 1e-12 {
            return Err(format!("seed {seed}: {what} memory grew by more than 1 at {j}"));
        }
        if nonneg && m[j] < 0.0 {
            return Err(format!("seed {seed}: {what} sigmoid-candidate memory went negative"));
        }
    }
    Ok(())
}

/// Unrolls both cells on random weights and inputs and checks state ranges.
pub fn gate_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let h = r.random_range(1..=6);
    let dx = r.random_range(1..=5);
    let g = r.random_range(1..=5);
    let dz = r.random_range(1..=5);
    let range = [0.5, 1.0, 2.0][r.random_range(0..3)];
    let tanh_candidate = r.random_bool(0.5);
    let dp = Gates {
        input: d_gate(&mut r, h, dx, range),
        forget: d_gate(&mut r, h, dx, range),
        output: d_gate(&mut r, h, dx, range),
        candidate: d_gate(&mut r, h, dx, range),
    };
    let gp = Gates {
        input: g_gate(&mut r, g, dz, range),
        forget: g_gate(&mut r, g, dz, range),
        output: g_gate(&mut r, g, dz, range),
        candidate: g_gate(&mut r, g, dz, range),
    };
    let mut tape = Tape::new();
    let dv = dp.register_frozen(&mut tape);
    let gv = gp.register_frozen(&mut tape);
    let zh = tape.constant_vector(vec![0.0; h]).unwrap();
    let zg = tape.constant_vector(vec![0.0; g]).unwrap();
    let mut ds = LstmDState { h: zh, m: zh, h_tilde: zh };
    let mut gs = LstmGState { hidden: zg, memory: zg };
    for _ in 0..6 {
        let x = tape.constant_vector(uniform(&mut r, dx, 1.0)).unwrap();
        let (hn, mn) = lstm_d_step(&mut tape, x, &ds, &dv, tanh_candidate).unwrap();
        let m_prev = tape.value(ds.m).to_vec();
        check_cell(seed, "decoder", tape.value(hn), tape.value(mn), &m_prev, !tanh_candidate)?;
        let ht = tape.constant_vector(uniform(&mut r, h, 1.0).iter().map(|v| v.tanh()).collect()).unwrap();
        ds = LstmDState { h: hn, m: mn, h_tilde: ht };

        let z = tape.constant_vector(uniform(&mut r, dz, 1.0)).unwrap();
        let next = lstm_g_step(&mut tape, z, &gs, &gv).unwrap();
        let mem_prev = tape.value(gs.memory).to_vec();
        check_cell(seed, "guide", tape.value(next.hidden), tape.value(next.memory), &mem_prev, false)?;
        gs = next;
    }
    Ok(())
}

pub fn tiny_config(variant: Variant, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        regions: 3,
        feature_dim: 4,
        hidden_dim: 6,
        guide_dim: 4,
        word_dim: 5,
        attr_dim: 3,
        input_dim: 5,
        guide_input_dim: 4,
        vocab_size,
        variant,
        candidate_tanh: false,
        dropout_rate: 0.0,
        max_decode_len: 4,
    }
}

/// A model with weights in `U[-range, range]`, plus a random scene for it.
pub fn random_instance(cfg: &ModelConfig, seed: u64, range: f64) -> (Model, AnnotationSet, Vec<f64>) {
    let model = Model::from_params(cfg.clone(), init_params_in(cfg, seed, range).unwrap()).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let n = cfg.regions * cfg.feature_dim;
    let a = AnnotationSet::new(Tensor::matrix(cfg.regions, cfg.feature_dim, uniform(&mut r, n, 1.0)).unwrap()).unwrap();
    let attrs = (0..cfg.attr_dim).map(|_| r.random_range(0.0..1.0)).collect();
    (model, a, attrs)
}

/// Hidden, attention and guiding vectors of a full model stay inside (-1, 1).
pub fn model_state_case(seed: u64) -> Result<(), String> {
    let variant = Variant::ALL[(seed % 3) as usize];
    let mut cfg = tiny_config(variant, 9);
    cfg.candidate_tanh = seed.is_multiple_of(2);
    let (model, a, attrs) = random_instance(&cfg, seed, 2.0);
    let mut tape = Tape::new();
    let params = model.params.register_frozen(&mut tape);
    let scene = SceneVars::record(&mut tape, &a, &attrs).unwrap();
    let mut dropout = Dropout::disabled();
    let (mut state, _) = image_step(&mut tape, &scene, &params, &cfg, &mut dropout).unwrap();
    let mut r = rng(seed);
    for _ in 0..6 {
        let w = r.random_range(0..cfg.vocab_size) as u32;
        let (_, next) = advance(&mut tape, w, &state, &scene, &params, &cfg, &mut dropout).unwrap();
        let mut vectors = vec![("h", next.lstm_d.h), ("h_tilde", next.lstm_d.h_tilde)];
        if let Some(g) = next.guide {
            vectors.push(("G", g.hidden));
        }
        for (name, v) in vectors {
            if tape.value(v).iter().any(|x| !x.is_finite() || x.abs() >= 1.0) {
                return Err(format!("seed {seed}: {name} left (-1, 1): {:?}", tape.value(v)));
            }
        }
        state = next;
    }
    Ok(())
}

// ---------------------------------------------------------------- data

const CHAR_POOL: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', 'Z', '0', '7', '9', ' ', ' ', ' ', '\t', '\n', '\r', ',', '.', '!', '\'', '-', '_',
    '<', '>', 'é', 'ß', 'Ω', '日', '😀', '\u{a0}', '\u{2003}',
];

pub fn random_text(r: &mut ChaCha8Rng) -> String {
    let len = r.random_range(0..40);
    (0..len).map(|_| CHAR_POOL[r.random_range(0..CHAR_POOL.len())]).collect()
}

/// Preprocessing is idempotent and emits only non-empty `[a-z0-9]+` tokens.
pub fn preprocess_case(text: &str) -> Result<(), String> {
    let once = preprocess(text);
    let twice = preprocess(&once.join(" "));
    if once != twice {
        return Err(format!("{text:?}: {once:?} then {twice:?}"));
    }
    for t in &once {
        if t.is_empty() || !t.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()) {
            return Err(format!("{text:?}: bad token {t:?}"));
        }
    }
    Ok(())
}

pub fn random_corpus(r: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let alphabet = ["a", "b", "red", "blue", "x1", "of", "zz", "mm", "q"];
    let n = r.random_range(0..30);
    (0..n)
        .map(|_| {
            let len = r.random_range(0..8);
            (0..len).map(|_| alphabet[r.random_range(0..alphabet.len())].to_string()).collect()
        })
        .collect()
}

/// Vocabulary building is deterministic, order independent, and agrees
/// with a direct count: members are exactly the words with count at least
/// `min_count`, ordered by count then spelling.
pub fn vocab_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let corpus = random_corpus(&mut r);
    let min_count = r.random_range(1..=4);
    let v1 = Vocabulary::build(&corpus, min_count);
    let v2 = Vocabulary::build(&corpus, min_count);
    let mut shuffled = corpus.clone();
    shuffled.shuffle(&mut r);
    let v3 = Vocabulary::build(&shuffled, min_count);
    if v1 != v2 || v1 != v3 {
        return Err(format!("seed {seed}: vocabulary depends on run or caption order"));
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in corpus.iter().flatten() {
        *counts.entry(w).or_default() += 1;
    }
    let mut expected: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let reserved = ["<pad>", "<sos>", "<eos>", "<unk>"];
    let want: Vec<&str> = reserved.iter().copied().chain(expected.iter().map(|e| e.0)).collect();
    let got: Vec<&str> = v1.tokens().iter().map(String::as_str).collect();
    if got != want {
        return Err(format!("seed {seed}: tokens {got:?}, oracle {want:?}"));
    }
    for (i, &(w, c)) in expected.iter().enumerate() {
        let id = (i + reserved.len()) as u32;
        if v1.id(w) != Some(id) || v1.count(id) != c {
            return Err(format!("seed {seed}: {w} should be id {id} with count {c}"));
        }
    }

    let members: BTreeSet<&str> = expected.iter().map(|e| e.0).collect();
    for caption in &corpus {
        let ids = v1.encode(caption);
        let back = v1.decode(&ids);
        for ((w, id), b) in caption.iter().zip(&ids).zip(&back) {
            let ok = if members.contains(w.as_str()) { b == w } else { *id == UNK && b == "<unk>" };
            if !ok {
                return Err(format!("seed {seed}: {w} round-tripped to {b}"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- metrics

/// LCS length by enumerating every subsequence of `a`.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let is_subseq = |s: &[&String]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

pub fn rouge_oracle(candidate: &[String], reference: &[String], beta: f64) -> f64 {
    let l = brute_lcs(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let rec = l / reference.len() as f64;
    (1.0 + beta * beta) * p * rec / (rec + beta * beta * p)
}

pub fn random_sentence(r: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<String> {
    let alphabet = ["a", "b", "c", "d", "e"];
    let len = r.random_range(min..=max);
    (0..len).map(|_| alphabet[r.random_range(0..alphabet.len())].to_string()).collect()
}

/// Plain CIDEr written out term by term with string keys.
pub fn cider_oracle(corpus: &[EvalItem], n_max: usize) -> Vec<f64> {
    let images = corpus.len() as f64;
    let grams = |s: &[String], n: usize| -> HashMap<String, f64> {
        let mut m = HashMap::new();
        if s.len() >= n {
            for i in 0..=s.len() - n {
                *m.entry(s[i..i + n].join(" ")).or_insert(0.0) += 1.0;
            }
        }
        m
    };
    (1..=n_max)
        .map(|n| {
            let mut df: HashMap<String, f64> = HashMap::new();
            for it in corpus {
                let mut seen = BTreeSet::new();
                for r in &it.references {
                    seen.extend(grams(r, n).into_keys());
                }
                for g in seen {
                    *df.entry(g).or_insert(0.0) += 1.0;
                }
            }
            let vector = |s: &[String]| -> HashMap<String, f64> {
                let g = grams(s, n);
                let total: f64 = g.values().sum();
                g.into_iter()
                    .map(|(k, c)| {
                        let idf = images.ln() - df.get(&k).copied().unwrap_or(0.0).max(1.0).ln();
                        (k, c / total * idf)
                    })
                    .collect()
            };
            let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let mut total = 0.0;
            for it in corpus {
                let c = vector(&it.candidate);
                let mut acc = 0.0;
                for r in &it.references {
                    let rv = vector(r);
                    let dot: f64 = c.iter().map(|(k, x)| x * rv.get(k).copied().unwrap_or(0.0)).sum();
                    let den = norm(&c) * norm(&rv);
                    acc += if den == 0.0 { 0.0 } else { dot / den };
                }
                total += acc / it.references.len() as f64;
            }
            total / images
        })
        .collect()
}

pub fn toy_cider_corpus() -> Vec<EvalItem> {
    let item = |c: &str, refs: &[&str]| EvalItem {
        candidate: words(c),
        references: refs.iter().map(|r| words(r)).collect(),
    };
    vec![
        item("a red circle", &["a red circle", "one red circle"]),
        item("a blue square left of a red star", &["a blue square left of a red star", "a red star right of a blue square"]),
        item("a green star", &["one green triangle", "a green triangle"]),
    ]
}

// ---------------------------------------------------------------- decoding

/// Exhaustive search over every hypothesis the decoder can emit within
/// `max_len` steps: finished sequences ending in `<eos>` and unfinished
/// sequences of exactly `max_len` words.
pub fn brute_force_best(model: &Model, a: &AnnotationSet, attrs: &[f64], max_len: usize) -> (Vec<u32>, bool, f64) {
    let words: Vec<u32> = (0..model.config.vocab_size as u32)
        .filter(|t| !MASKED.contains(t) && *t != EOS)
        .collect();
    let mut best: Option<(Vec<u32>, bool, f64)> = None;
    let mut prefixes: Vec<Vec<u32>> = vec![vec![]];
    for len in 0..=max_len {
        for p in &prefixes {
            let candidates: Vec<bool> = if len < max_len { vec![true] } else { vec![false] };
            for finished in candidates {
                let lp = sequence_log_prob(model, a, attrs, p, finished).unwrap();
                if best.as_ref().is_none_or(|b| lp > b.2) {
                    best = Some((p.clone(), finished, lp));
                }
            }
        }
        prefixes = prefixes
            .iter()
            .flat_map(|p| words.iter().map(move |&w| [p.as_slice(), &[w]].concat()))
            .collect();
    }
    best.unwrap()
}
