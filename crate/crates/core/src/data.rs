//! Caption preprocessing, vocabulary, attribute vectors and the synthetic
//! grid-scene dataset.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::AnnotationSet;
use crate::error::{contract, Result};
use crate::tensor::Tensor;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const SOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Lowercases, keeps only `[a-z0-9 ]`, and splits on spaces.
///
/// Whitespace of any kind counts as a separator before filtering.
pub fn preprocess(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_whitespace() { ' ' } else { c })
        .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == ' ')
        .collect();
    cleaned.split(' ').filter(|w| !w.is_empty()).map(ToString::to_string).collect()
}

/// Token ↔ id bijection with the reserved tokens at ids 0..4.
///
/// Regular tokens are ordered by descending training count, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
    counts: Vec<usize>,
}

impl Vocabulary {
    /// Keeps every token seen at least `min_count` times.
    pub fn build<S: AsRef<str>>(captions: &[Vec<S>], min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for cap in captions {
            for w in cap {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !RESERVED.contains(w))
            .collect();
        // BTreeMap iteration is lexicographic, and the sort is stable.
        kept.sort_by_key(|&(_, c)| core::cmp::Reverse(c));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut all_counts = vec![0; RESERVED.len()];
        for (w, c) in kept {
            tokens.push(w.to_string());
            all_counts.push(c);
        }
        Self::assemble(tokens, all_counts)
    }

    /// Rebuilds a vocabulary from its token list (counts unknown, reported as 0).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(contract(format!("vocabulary must start with {RESERVED:?}")));
        }
        let n = tokens.len();
        let v = Self::assemble(tokens, vec![0; n]);
        if v.index.len() != n {
            return Err(contract("vocabulary contains duplicate tokens"));
        }
        Ok(v)
    }

    fn assemble(tokens: Vec<String>, counts: Vec<usize>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Vocabulary { tokens, index, counts }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens that are not reserved, in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: TokenId) -> usize {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    /// Maps tokens to ids; out-of-vocabulary tokens become `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }

    /// Space-joined words, stopping at `<eos>` and skipping `<pad>`/`<sos>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let words: Vec<String> = self.decode(
            &ids.iter()
                .copied()
                .take_while(|&i| i != EOS)
                .filter(|&i| i != PAD && i != SOS)
                .collect::<Vec<_>>(),
        );
        words.join(" ")
    }
}

/// The attribute word list: the most frequent training words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpec {
    pub words: Vec<String>,
}

impl AttributeSpec {
    /// Takes the `dim` most frequent words of `vocab`.
    pub fn from_vocab(vocab: &Vocabulary, dim: usize) -> Result<Self> {
        let words = vocab.words();
        if dim > words.len() {
            return Err(contract(format!(
                "attribute dimension {dim} exceeds the {} vocabulary words",
                words.len()
            )));
        }
        Ok(AttributeSpec {
            words: words[..dim].to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.words.len()
    }

    /// Indicator of attribute words present in `captions`, normalized to sum 1
    /// (all zeros when none appear).
    pub fn vector<S: AsRef<str>>(&self, captions: &[Vec<S>]) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .words
            .iter()
            .map(|w| {
                let hit = captions.iter().flatten().any(|t| t.as_ref() == w);
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
        }
        v
    }
}

/// Builds the attribute list from `vocab` and one vector per caption set.
pub fn build_attributes<S: AsRef<str>>(
    vocab: &Vocabulary,
    records: &[Vec<Vec<S>>],
    dim: usize,
) -> Result<(AttributeSpec, Vec<Vec<f64>>)> {
    let spec = AttributeSpec::from_vocab(vocab, dim)?;
    let vectors = records.iter().map(|caps| spec.vector(caps)).collect();
    Ok((spec, vectors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Star,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Star];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Star => "star",
        }
    }
}

impl Color {
    pub const ALL: [Color; 5] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Purple];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    /// How `a` sits relative to `b`: horizontal when the columns differ,
    /// vertical otherwise.
    pub fn between(a: &SceneObject, b: &SceneObject) -> Relation {
        if a.col != b.col {
            if a.col < b.col {
                Relation::LeftOf
            } else {
                Relation::RightOf
            }
        } else if a.row < b.row {
            Relation::Above
        } else {
            Relation::Below
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneObject {
    pub row: usize,
    pub col: usize,
    pub shape: Shape,
    pub color: Color,
}

impl SceneObject {
    fn noun_phrase(&self) -> String {
        format!("a {} {}", self.color.word(), self.shape.word())
    }
}

/// A grid with up to a few objects, one per cell.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    pub rows: usize,
    pub cols: usize,
    /// Sorted by cell index (row-major).
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn object_at(&self, cell: usize) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.row * self.cols + o.col == cell)
    }

    /// Two template captions: the second mirrors the first.
    pub fn captions(&self) -> Vec<String> {
        match self.objects.as_slice() {
            [] => vec![String::from("nothing"), String::from("nothing")],
            [only] => vec![
                only.noun_phrase(),
                format!("one {} {}", only.color.word(), only.shape.word()),
            ],
            [a, b, ..] => {
                let rel = Relation::between(a, b);
                vec![
                    format!("{} {} {}", a.noun_phrase(), rel.phrase(), b.noun_phrase()),
                    format!("{} {} {}", b.noun_phrase(), rel.inverse().phrase(), a.noun_phrase()),
                ]
            }
        }
    }
}

/// One image: scene, region features, attribute vector and captions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneRecord {
    pub id: String,
    pub scene: Scene,
    /// `K×D`, one row per grid cell.
    pub annotations: Vec<Vec<f64>>,
    pub attributes: Vec<f64>,
    pub captions: Vec<String>,
}

impl SceneRecord {
    pub fn validate(&self) -> Result<()> {
        if self.captions.is_empty() {
            return Err(contract(format!("record {}: no captions", self.id)));
        }
        if self.annotations.len() != self.scene.cells() {
            return Err(contract(format!(
                "record {}: {} annotation rows for {} cells",
                self.id,
                self.annotations.len(),
                self.scene.cells()
            )));
        }
        self.annotation_set().map(|_| ())
    }

    pub fn annotation_set(&self) -> Result<AnnotationSet> {
        AnnotationSet::new(Tensor::from_rows(&self.annotations)?)
    }

    pub fn tokenized_captions(&self) -> Vec<Vec<String>> {
        self.captions.iter().map(|c| preprocess(c)).collect()
    }
}

/// Knobs for [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub rows: usize,
    pub cols: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub max_objects: usize,
    pub attr_dim: usize,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_train: 1600,
            n_val: 200,
            n_test: 200,
            rows: 4,
            cols: 4,
            feature_dim: 16,
            noise_std: 0.05,
            max_objects: 3,
            attr_dim: 14,
            min_count: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SceneRecord>,
    pub val: Vec<SceneRecord>,
    pub test: Vec<SceneRecord>,
    pub vocab: Vocabulary,
    pub attributes: AttributeSpec,
}

fn random_scene(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> Scene {
    let cells = cfg.rows * cfg.cols;
    let n = rng.random_range(1..=cfg.max_objects.min(cells));
    let mut picked = sample(rng, cells, n).into_vec();
    picked.sort_unstable();
    let objects = picked
        .into_iter()
        .map(|cell| SceneObject {
            row: cell / cfg.cols,
            col: cell % cfg.cols,
            shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
            color: Color::ALL[rng.random_range(0..Color::ALL.len())],
        })
        .collect();
    Scene {
        rows: cfg.rows,
        cols: cfg.cols,
        objects,
    }
}

/// Generates train/val/test splits of random grid scenes.
///
/// Each region feature is a fixed per-(shape, color) vector plus gaussian
/// noise, or pure noise for an empty cell. Vocabulary and attribute words
/// come from the training captions only.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    if cfg.n_train == 0 || cfg.n_val == 0 || cfg.n_test == 0 {
        return Err(contract("every split needs at least one record"));
    }
    if cfg.rows == 0 || cfg.cols == 0 || cfg.feature_dim == 0 || cfg.max_objects == 0 {
        return Err(contract("grid, feature size and object count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let table: Vec<Vec<f64>> = (0..Shape::ALL.len() * Color::ALL.len())
        .map(|_| (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut make_split = |prefix: &str, n: usize| -> Vec<SceneRecord> {
        (0..n)
            .map(|i| {
                let scene = random_scene(&mut rng, cfg);
                let annotations = (0..scene.cells())
                    .map(|cell| {
                        let base = scene.object_at(cell).map(|o| {
                            let si = Shape::ALL.iter().position(|s| *s == o.shape).unwrap_or(0);
                            let ci = Color::ALL.iter().position(|c| *c == o.color).unwrap_or(0);
                            &table[si * Color::ALL.len() + ci]
                        });
                        (0..cfg.feature_dim)
                            .map(|d| {
                                let noise: f64 = StandardNormal.sample(&mut rng);
                                base.map_or(0.0, |b| b[d]) + cfg.noise_std * noise
                            })
                            .collect()
                    })
                    .collect();
                let captions = scene.captions();
                SceneRecord {
                    id: format!("{prefix}-{i:05}"),
                    scene,
                    annotations,
                    attributes: Vec::new(),
                    captions,
                }
            })
            .collect()
    };
    let mut train = make_split("train", cfg.n_train);
    let mut val = make_split("val", cfg.n_val);
    let mut test = make_split("test", cfg.n_test);

    let train_caps: Vec<Vec<String>> = train.iter().flat_map(SceneRecord::tokenized_captions).collect();
    let vocab = Vocabulary::build(&train_caps, cfg.min_count);
    let attributes = AttributeSpec::from_vocab(&vocab, cfg.attr_dim)?;
    for rec in train.iter_mut().chain(&mut val).chain(&mut test) {
        rec.attributes = attributes.vector(&rec.tokenized_captions());
    }
    Ok(Dataset {
        train,
        val,
        test,
        vocab,
        attributes,
    })
}
