//! The full captioning model: image step, guiding step, decoding step and
//! teacher-forced unrolling for the three variants.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend, AnnotationSet, AttentionParams};
use crate::data::{TokenId, EOS, SOS};
use crate::error::{contract, Error, Result};
use crate::params::{join, ParamTree};
use crate::recurrent::{lstm_d_step, lstm_g_step, Gates, LstmDGate, LstmDParams, LstmDState, LstmGGate, LstmGParams, LstmGState};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.1;

/// Which guiding signal feeds the decoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Variant {
    /// Guiding LSTM output `G^t` (the full model).
    Sgn,
    /// The attribute vector in place of `G^t`.
    Att,
    /// Attention only; no guiding term.
    Plain,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sgn, Variant::Att, Variant::Plain];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sgn => "sgn",
            Variant::Att => "att",
            Variant::Plain => "plain",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgn" => Ok(Variant::Sgn),
            "att" => Ok(Variant::Att),
            "plain" => Ok(Variant::Plain),
            other => Err(contract(format!("unknown variant {other:?}; expected sgn, att or plain"))),
        }
    }
}

/// Model dimensions and switches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of annotation regions `K`.
    pub regions: usize,
    /// Annotation feature size `D`.
    pub feature_dim: usize,
    /// Decoder hidden size `H`.
    pub hidden_dim: usize,
    /// Guiding LSTM hidden size `D_g`.
    pub guide_dim: usize,
    /// Word embedding size `D_w`.
    pub word_dim: usize,
    /// Attribute vector size `D_a`.
    pub attr_dim: usize,
    /// Decoder input size `D_x`.
    pub input_dim: usize,
    /// Guiding LSTM input size (rows of `W_z`).
    pub guide_input_dim: usize,
    pub vocab_size: usize,
    pub variant: Variant,
    /// Use tanh instead of sigmoid for the decoder's candidate gate.
    pub candidate_tanh: bool,
    pub dropout_rate: f64,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            regions: 16,
            feature_dim: 16,
            hidden_dim: 64,
            guide_dim: 32,
            word_dim: 32,
            attr_dim: 14,
            input_dim: 64,
            guide_input_dim: 32,
            vocab_size: 24,
            variant: Variant::Sgn,
            candidate_tanh: false,
            dropout_rate: 0.3,
            max_decode_len: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("regions", self.regions),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("guide_dim", self.guide_dim),
            ("word_dim", self.word_dim),
            ("attr_dim", self.attr_dim),
            ("input_dim", self.input_dim),
            ("guide_input_dim", self.guide_input_dim),
            ("vocab_size", self.vocab_size),
            ("max_decode_len", self.max_decode_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(contract(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(contract(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Shape of every parameter block this configuration allocates.
    pub fn param_shapes(&self) -> ModelParams<Vec<usize>> {
        let (h, dx, dg, dz, da) = (self.hidden_dim, self.input_dim, self.guide_dim, self.guide_input_dim, self.attr_dim);
        let sgn = self.variant == Variant::Sgn;
        ModelParams {
            embedding: vec![self.vocab_size, self.word_dim],
            w_ax: vec![dx, da],
            w_wx: vec![dx, self.word_dim],
            w_gx: match self.variant {
                Variant::Sgn => Some(vec![dx, dg]),
                Variant::Att => Some(vec![dx, da]),
                Variant::Plain => None,
            },
            w_z: sgn.then(|| vec![dz, h + da]),
            w_c: vec![h, self.feature_dim + h],
            w_s: vec![self.vocab_size, h],
            attention: AttentionParams { w_a: vec![h, self.feature_dim] },
            lstm_d: Gates::build::<()>(|_| {
                Ok(LstmDGate {
                    w_xh: vec![h, dx],
                    w_hh: vec![h, h],
                    w_th: vec![h, h],
                    b: vec![h],
                })
            })
            .expect("infallible"),
            lstm_g: sgn.then(|| {
                Gates::build::<()>(|_| {
                    Ok(LstmGGate {
                        w_x: vec![dg, dz],
                        w_h: vec![dg, dg],
                        b: vec![dg],
                    })
                })
                .expect("infallible")
            }),
        }
    }
}

/// Every weight of the model. Blocks absent from a variant are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    /// `vocab_size×D_w` word representations.
    pub embedding: T,
    /// `D_x×D_a`, projects attributes into the first decoder input.
    pub w_ax: T,
    /// `D_x×D_w`
    pub w_wx: T,
    /// `D_x×D_g` (guiding vector) or `D_x×D_a` (attributes).
    pub w_gx: Option<T>,
    /// Guiding-input projection of `[h; A]`.
    pub w_z: Option<T>,
    /// `H×(D+H)`, attention-vector projection of `[c; h]`.
    pub w_c: T,
    /// `vocab_size×H` output projection.
    pub w_s: T,
    pub attention: AttentionParams<T>,
    pub lstm_d: LstmDParams<T>,
    pub lstm_g: Option<LstmGParams<T>>,
}

impl<T> ParamTree<T> for ModelParams<T> {
    type Mapped<U> = ModelParams<U>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "embedding"), &self.embedding);
        f(join(prefix, "w_ax"), &self.w_ax);
        f(join(prefix, "w_wx"), &self.w_wx);
        if let Some(w) = &self.w_gx {
            f(join(prefix, "w_gx"), w);
        }
        if let Some(w) = &self.w_z {
            f(join(prefix, "w_z"), w);
        }
        f(join(prefix, "w_c"), &self.w_c);
        f(join(prefix, "w_s"), &self.w_s);
        self.attention.visit(&join(prefix, "attention"), f);
        self.lstm_d.visit(&join(prefix, "lstm_d"), f);
        if let Some(g) = &self.lstm_g {
            g.visit(&join(prefix, "lstm_g"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        f(join(prefix, "embedding"), &mut self.embedding);
        f(join(prefix, "w_ax"), &mut self.w_ax);
        f(join(prefix, "w_wx"), &mut self.w_wx);
        if let Some(w) = &mut self.w_gx {
            f(join(prefix, "w_gx"), w);
        }
        if let Some(w) = &mut self.w_z {
            f(join(prefix, "w_z"), w);
        }
        f(join(prefix, "w_c"), &mut self.w_c);
        f(join(prefix, "w_s"), &mut self.w_s);
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.lstm_d.visit_mut(&join(prefix, "lstm_d"), f);
        if let Some(g) = &mut self.lstm_g {
            g.visit_mut(&join(prefix, "lstm_g"), f);
        }
    }

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(String, &T) -> U) -> ModelParams<U> {
        ModelParams {
            embedding: f(join(prefix, "embedding"), &self.embedding),
            w_ax: f(join(prefix, "w_ax"), &self.w_ax),
            w_wx: f(join(prefix, "w_wx"), &self.w_wx),
            w_gx: self.w_gx.as_ref().map(|w| f(join(prefix, "w_gx"), w)),
            w_z: self.w_z.as_ref().map(|w| f(join(prefix, "w_z"), w)),
            w_c: f(join(prefix, "w_c"), &self.w_c),
            w_s: f(join(prefix, "w_s"), &self.w_s),
            attention: self.attention.map(&join(prefix, "attention"), f),
            lstm_d: self.lstm_d.map(&join(prefix, "lstm_d"), f),
            lstm_g: self.lstm_g.as_ref().map(|g| g.map(&join(prefix, "lstm_g"), f)),
        }
    }
}

/// Draws every parameter i.i.d. from `U[-0.1, 0.1]`, in manifest order.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    init_params_in(config, seed, INIT_RANGE)
}

/// Like [`init_params`] but from `U[-range, range]`.
pub fn init_params_in(config: &ModelConfig, seed: u64, range: f64) -> Result<ModelParams> {
    config.validate()?;
    if !(range > 0.0 && range.is_finite()) {
        return Err(contract(format!("init range {range} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-range, range).expect("valid range");
    Ok(config.param_shapes().map("", &mut |_, shape| {
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut rng)).collect();
        Tensor::new(shape.clone(), data).expect("shape and data agree")
    }))
}

/// A configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Pairs `params` with `config` after checking every block's shape.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes().named().into_iter().map(|(n, s)| (n, s.clone())).collect::<Vec<_>>();
        let actual = params.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect::<Vec<_>>();
        if expected != actual {
            return Err(contract("parameter blocks do not match the configuration"));
        }
        Ok(Model { config, params })
    }
}

/// Inverted dropout on cell outputs, active only while training.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, seed: u64) -> Self {
        if rate > 0.0 {
            Dropout {
                rate,
                rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            }
        } else {
            Dropout::disabled()
        }
    }

    pub fn apply(&mut self, tape: &mut Tape, v: Var) -> Result<Var> {
        let Some(rng) = &mut self.rng else { return Ok(v) };
        let keep = 1.0 - self.rate;
        let n = tape.value(v).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant_vector(mask)?;
        tape.hadamard(v, mask)
    }
}

/// The per-image inputs recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SceneVars {
    /// `K×D` annotations.
    pub annotations: Var,
    /// Attribute vector, length `D_a`.
    pub attrs: Var,
}

impl SceneVars {
    pub fn record(tape: &mut Tape, annotations: &AnnotationSet, attrs: &[f64]) -> Result<Self> {
        Ok(SceneVars {
            annotations: tape.constant(annotations.tensor()),
            attrs: tape.constant_vector(attrs.to_vec())?,
        })
    }
}

/// State carried between decoding steps.
#[derive(Debug, Clone, Copy)]
pub struct DecodeState {
    pub lstm_d: LstmDState,
    pub guide: Option<LstmGState>,
    /// Decoder output of the image step, the guiding input at `t = 0`.
    pub h_minus1: Var,
    /// Index of the next decoding step.
    pub t: usize,
}

/// Output of one decoding step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// Unnormalized scores over the vocabulary.
    pub logits: Var,
    /// Alignment weights over the regions.
    pub alpha: Var,
    pub state: LstmDState,
}

fn check_dims(tape: &Tape, scene: &SceneVars, config: &ModelConfig) -> Result<()> {
    let a = tape.shape(scene.annotations);
    if a != [config.regions, config.feature_dim] {
        return Err(crate::error::shape_err(
            "scene",
            format!("annotations {a:?}, model expects [{}, {}]", config.regions, config.feature_dim),
        ));
    }
    let at = tape.shape(scene.attrs);
    if at != [config.attr_dim] {
        return Err(crate::error::shape_err(
            "scene",
            format!("attributes {at:?}, model expects [{}]", config.attr_dim),
        ));
    }
    Ok(())
}

/// Attention vector `tanh(W_c [c; h])` and the alignment weights.
fn attention_vector(tape: &mut Tape, scene: &SceneVars, h: Var, params: &ModelParams<Var>) -> Result<(Var, Var)> {
    let att = attend(tape, scene.annotations, h, &params.attention)?;
    let ch = tape.concat(att.context, h)?;
    let proj = tape.matmul(params.w_c, ch)?;
    Ok((tape.tanh(proj)?, att.alpha))
}

/// Runs the decoder once on `W_ax·A` from the zero state.
///
/// Returns the state for `t = 0` and the (possibly dropped-out) decoder
/// output `h^{-1}`.
pub fn image_step(
    tape: &mut Tape,
    scene: &SceneVars,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<(DecodeState, Var)> {
    check_dims(tape, scene, config)?;
    let zero_h = tape.constant_vector(vec![0.0; config.hidden_dim])?;
    let start = LstmDState {
        h: zero_h,
        m: zero_h,
        h_tilde: zero_h,
    };
    let x = tape.matmul(params.w_ax, scene.attrs)?;
    let (h, m) = lstm_d_step(tape, x, &start, &params.lstm_d, config.candidate_tanh)?;
    let h_out = dropout.apply(tape, h)?;
    let (h_tilde, _) = attention_vector(tape, scene, h_out, params)?;
    let guide = match config.variant {
        Variant::Sgn => {
            let zero_g = tape.constant_vector(vec![0.0; config.guide_dim])?;
            Some(LstmGState {
                hidden: zero_g,
                memory: zero_g,
            })
        }
        _ => None,
    };
    let state = DecodeState {
        lstm_d: LstmDState { h, m, h_tilde },
        guide,
        h_minus1: h_out,
        t: 0,
    };
    Ok((state, h_out))
}

/// Advances the guiding LSTM on `z = W_z [source; A]`.
///
/// `source` is `h^{-1}` at `t = 0` and the previous attention vector after
/// that. Returns the guiding vector (after dropout) and the new cell state.
pub fn guider_step(
    tape: &mut Tape,
    source: Var,
    attrs: Var,
    state: &LstmGState,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<(Var, LstmGState)> {
    let (Variant::Sgn, Some(w_z), Some(lstm_g)) = (config.variant, params.w_z, &params.lstm_g) else {
        return Err(contract(format!("guider_step needs the sgn variant, model is {}", config.variant)));
    };
    let input = tape.concat(source, attrs)?;
    let z = tape.matmul(w_z, input)?;
    let next = lstm_g_step(tape, z, state, lstm_g)?;
    let g = dropout.apply(tape, next.hidden)?;
    Ok((g, next))
}

/// One decoder step on `word`, given the guiding vector (SGN only).
#[allow(clippy::too_many_arguments)]
pub fn decode_step(
    tape: &mut Tape,
    word: TokenId,
    guide: Option<Var>,
    state: &LstmDState,
    scene: &SceneVars,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<StepOutput> {
    if word as usize >= config.vocab_size {
        return Err(contract(format!("word id {word} outside vocabulary of {}", config.vocab_size)));
    }
    let emb = tape.row(params.embedding, word as usize)?;
    let mut x = tape.matmul(params.w_wx, emb)?;
    let extra = match (config.variant, guide) {
        (Variant::Sgn, Some(g)) => Some(g),
        (Variant::Sgn, None) => return Err(contract("sgn decode step needs a guiding vector")),
        (Variant::Att, _) => Some(scene.attrs),
        (Variant::Plain, _) => None,
    };
    if let Some(v) = extra {
        let w_gx = params.w_gx.ok_or_else(|| contract("model has no w_gx block"))?;
        let proj = tape.matmul(w_gx, v)?;
        x = tape.add(x, proj)?;
    }
    let (h, m) = lstm_d_step(tape, x, state, &params.lstm_d, config.candidate_tanh)?;
    let h_out = dropout.apply(tape, h)?;
    let (h_tilde, alpha) = attention_vector(tape, scene, h_out, params)?;
    let logits = tape.matmul(params.w_s, h_tilde)?;
    Ok(StepOutput {
        logits,
        alpha,
        state: LstmDState { h, m, h_tilde },
    })
}

/// Guiding step (SGN) followed by the decoder step for input `word`.
pub fn advance(
    tape: &mut Tape,
    word: TokenId,
    state: &DecodeState,
    scene: &SceneVars,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<(StepOutput, DecodeState)> {
    let (g, guide) = match &state.guide {
        Some(gs) => {
            let source = if state.t == 0 { state.h_minus1 } else { state.lstm_d.h_tilde };
            let (g, next) = guider_step(tape, source, scene.attrs, gs, params, config, dropout)?;
            (Some(g), Some(next))
        }
        None => (None, None),
    };
    let out = decode_step(tape, word, g, &state.lstm_d, scene, params, config, dropout)?;
    let next = DecodeState {
        lstm_d: out.state,
        guide,
        h_minus1: state.h_minus1,
        t: state.t + 1,
    };
    Ok((out, next))
}

/// Logits after feeding each of `inputs` in turn, starting from the image step.
pub fn teacher_forced_logits(
    tape: &mut Tape,
    scene: &SceneVars,
    inputs: &[TokenId],
    params: &ModelParams<Var>,
    config: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<Vec<Var>> {
    let (mut state, _) = image_step(tape, scene, params, config, dropout)?;
    let mut logits = Vec::with_capacity(inputs.len());
    for &w in inputs {
        let (out, next) = advance(tape, w, &state, scene, params, config, dropout)?;
        logits.push(out.logits);
        state = next;
    }
    Ok(logits)
}

/// Decoder inputs `⟨sos⟩ w_1 … w_N` for a caption `w_1 … w_N`.
pub fn decoder_inputs(caption: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(caption.len() + 1);
    v.push(SOS);
    v.extend_from_slice(caption);
    v
}

/// Targets `w_1 … w_N ⟨eos⟩` for a caption `w_1 … w_N`.
pub fn decoder_targets(caption: &[TokenId]) -> Vec<TokenId> {
    let mut v = caption.to_vec();
    v.push(EOS);
    v
}

/// Teacher-forced unroll over a caption; one logit vector per target.
pub fn forward_sequence(
    tape: &mut Tape,
    scene: &SceneVars,
    caption: &[TokenId],
    params: &ModelParams<Var>,
    config: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<Vec<Var>> {
    if caption.is_empty() {
        return Err(contract("caption must contain at least one word"));
    }
    teacher_forced_logits(tape, scene, &decoder_inputs(caption), params, config, dropout)
}
