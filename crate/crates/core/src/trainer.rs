//! A fixed-window neural language model small enough to train on a CPU in
//! milliseconds, with hand-derived gradients for the plain and the
//! token-weighted negative log-likelihood.
//!
//! Architecture: the embeddings of the previous `context_window` tokens
//! (oldest first, padded with BOS) are concatenated and fed through one
//! linear layer and a softmax over every vocabulary entry except BOS.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::TrainingExample;
use crate::tokenize::{tokenize_model, BOS, EOS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("{weights} weights for {tokens} answer tokens")]
    LengthMismatch { tokens: usize, weights: usize },
    #[error("example has no answer tokens")]
    EmptyAnswer,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {0}")]
    NonFinite(usize),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Nll,
    Focused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    has_eos: bool,
}

impl Vocabulary {
    /// BOS is always id 0; EOS, when present, is id 1; the remaining pieces
    /// follow in sorted order.
    pub fn new<I: IntoIterator<Item = String>>(pieces: I, with_eos: bool) -> Self {
        let sorted: BTreeSet<String> = pieces
            .into_iter()
            .filter(|p| p != BOS && p != EOS)
            .collect();
        let mut tokens = vec![BOS.to_string()];
        if with_eos {
            tokens.push(EOS.to_string());
        }
        tokens.extend(sorted);
        Self::from_tokens(tokens, with_eos)
    }

    fn from_tokens(tokens: Vec<String>, has_eos: bool) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index, has_eos }
    }

    /// Every token of every prompt and answer, plus BOS/EOS.
    pub fn from_examples(examples: &[TrainingExample]) -> Self {
        let mut pieces = BTreeSet::new();
        for ex in examples {
            pieces.extend(ex.prompt_tokens());
            pieces.extend(ex.answer_tokens());
        }
        Self::new(pieces, true)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of output classes (everything but BOS).
    pub fn output_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Result<usize, TrainError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| TrainError::OutOfVocabulary(token.to_string()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub vocab: Vocabulary,
    pub context_window: usize,
    pub embed_dim: usize,
    /// `vocab.len() x embed_dim`, row-major.
    pub embed: Vec<f64>,
    /// `(context_window * embed_dim) x output_size`, row-major.
    pub out_w: Vec<f64>,
    /// `output_size`.
    pub out_b: Vec<f64>,
    pub seed: u64,
}

/// Parameter-shaped gradient arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &ToyLm) -> Self {
        Gradients {
            embed: vec![0.0; m.embed.len()],
            out_w: vec![0.0; m.out_w.len()],
            out_b: vec![0.0; m.out_b.len()],
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self
            .embed
            .iter_mut()
            .chain(self.out_w.iter_mut())
            .chain(self.out_b.iter_mut())
            .zip(other.embed.iter().chain(&other.out_w).chain(&other.out_b))
        {
            *a += scale * b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.embed.iter().chain(&self.out_w).chain(&self.out_b)
    }
}

/// An example mapped to ids: the full token stream and the weights of the
/// answer positions, which are the last `weights.len()` stream entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub stream: Vec<usize>,
    pub weights: Vec<f64>,
}

impl EncodedExample {
    fn answer_start(&self) -> usize {
        self.stream.len() - self.weights.len()
    }
}

impl ToyLm {
    pub fn new(vocab: Vocabulary, context_window: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let o = vocab.output_size();
        let embed = (0..v * embed_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let out_w = (0..context_window * embed_dim * o)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        ToyLm {
            vocab,
            context_window,
            embed_dim,
            embed,
            out_w,
            out_b: vec![0.0; o],
            seed,
        }
    }

    /// A model whose output layer is all zeros, so every prediction is
    /// uniform.
    pub fn uniform(vocab: Vocabulary, context_window: usize, embed_dim: usize) -> Self {
        let mut m = Self::new(vocab, context_window, embed_dim, 0);
        m.out_w.iter_mut().for_each(|w| *w = 0.0);
        m
    }

    pub fn parameter_count(&self) -> usize {
        self.embed.len() + self.out_w.len() + self.out_b.len()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embed
            .iter_mut()
            .chain(self.out_w.iter_mut())
            .chain(self.out_b.iter_mut())
    }

    pub fn encode(&self, example: &TrainingExample) -> Result<EncodedExample, TrainError> {
        let answer = example.answer_tokens();
        if answer.is_empty() {
            return Err(TrainError::EmptyAnswer);
        }
        if answer.len() != example.weights.len() {
            return Err(TrainError::LengthMismatch {
                tokens: answer.len(),
                weights: example.weights.len(),
            });
        }
        let mut stream = Vec::new();
        for t in example.prompt_tokens().iter().chain(&answer) {
            stream.push(self.vocab.id(t)?);
        }
        Ok(EncodedExample {
            stream,
            weights: example.weights.clone(),
        })
    }

    fn context(&self, stream: &[usize], t: usize) -> Vec<usize> {
        (0..self.context_window)
            .map(|k| {
                let back = self.context_window - k;
                if t >= back {
                    stream[t - back]
                } else {
                    0
                }
            })
            .collect()
    }

    fn features(&self, ctx: &[usize]) -> Vec<f64> {
        let d = self.embed_dim;
        ctx.iter().flat_map(|&id| self.embed[id * d..(id + 1) * d].iter().copied()).collect()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let o = self.vocab.output_size();
        let mut z = self.out_b.clone();
        for (r, xr) in x.iter().enumerate() {
            let row = &self.out_w[r * o..(r + 1) * o];
            for (zj, wj) in z.iter_mut().zip(row) {
                *zj += xr * wj;
            }
        }
        z
    }

    /// Next-token distribution over output classes (vocabulary id - 1).
    pub fn next_distribution(&self, context: &[usize]) -> Vec<f64> {
        softmax(&self.logits(&self.features(context)))
    }

    /// Per answer position: the negative log-probability of the target.
    pub fn token_nll(&self, ex: &EncodedExample) -> Vec<f64> {
        (ex.answer_start()..ex.stream.len())
            .map(|t| {
                let z = self.logits(&self.features(&self.context(&ex.stream, t)));
                log_sum_exp(&z) - z[ex.stream[t] - 1]
            })
            .collect()
    }

    fn weighted_loss(&self, ex: &EncodedExample, weights: Option<&[f64]>) -> f64 {
        let nll = self.token_nll(ex);
        let n = nll.len() as f64;
        match weights {
            None => nll.iter().sum::<f64>() / n,
            Some(w) => nll.iter().zip(w).map(|(l, w)| w * l).sum::<f64>() / n,
        }
    }

    pub fn loss(&self, ex: &EncodedExample, mode: LossMode) -> f64 {
        match mode {
            LossMode::Nll => self.weighted_loss(ex, None),
            LossMode::Focused => self.weighted_loss(ex, Some(&ex.weights)),
        }
    }

    /// Analytic gradient of [`Self::loss`] with respect to every parameter.
    pub fn gradients_encoded(&self, ex: &EncodedExample, mode: LossMode) -> Gradients {
        let mut g = Gradients::zeros_like(self);
        let o = self.vocab.output_size();
        let d = self.embed_dim;
        let n = ex.weights.len() as f64;
        for (pos, t) in (ex.answer_start()..ex.stream.len()).enumerate() {
            let coef = match mode {
                LossMode::Nll => 1.0,
                LossMode::Focused => ex.weights[pos],
            } / n;
            if coef == 0.0 {
                continue;
            }
            let ctx = self.context(&ex.stream, t);
            let x = self.features(&ctx);
            let mut dz = softmax(&self.logits(&x));
            dz[ex.stream[t] - 1] -= 1.0;
            dz.iter_mut().for_each(|v| *v *= coef);

            for (j, dzj) in dz.iter().enumerate() {
                g.out_b[j] += dzj;
            }
            for (r, xr) in x.iter().enumerate() {
                let row = &self.out_w[r * o..(r + 1) * o];
                let grow = &mut g.out_w[r * o..(r + 1) * o];
                let mut dx = 0.0;
                for j in 0..o {
                    grow[j] += xr * dz[j];
                    dx += row[j] * dz[j];
                }
                let (k, i) = (r / d, r % d);
                g.embed[ctx[k] * d + i] += dx;
            }
        }
        g
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            vocabulary: self.vocab.tokens.clone(),
            has_eos: self.vocab.has_eos,
            context_window: self.context_window,
            embed_dim: self.embed_dim,
            seed: self.seed,
            shapes: CheckpointShapes {
                embed: [self.vocab.len(), self.embed_dim],
                out_w: [self.context_window * self.embed_dim, self.vocab.output_size()],
                out_b: [self.vocab.output_size()],
            },
            embed: self.embed.clone(),
            out_w: self.out_w.clone(),
            out_b: self.out_b.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self, TrainError> {
        let vocab = Vocabulary::from_tokens(c.vocabulary, c.has_eos);
        if vocab.tokens.first().map(String::as_str) != Some(BOS) {
            return Err(TrainError::Checkpoint("vocabulary must start with BOS".into()));
        }
        let o = vocab.output_size();
        let ok = c.embed.len() == vocab.len() * c.embed_dim
            && c.out_w.len() == c.context_window * c.embed_dim * o
            && c.out_b.len() == o;
        if !ok {
            return Err(TrainError::Checkpoint("parameter arrays do not match shapes".into()));
        }
        Ok(ToyLm {
            vocab,
            context_window: c.context_window,
            embed_dim: c.embed_dim,
            embed: c.embed,
            out_w: c.out_w,
            out_b: c.out_b,
            seed: c.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointShapes {
    pub embed: [usize; 2],
    pub out_w: [usize; 2],
    pub out_b: [usize; 1],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub vocabulary: Vec<String>,
    pub has_eos: bool,
    pub context_window: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub shapes: CheckpointShapes,
    pub embed: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn nll_loss(model: &ToyLm, example: &TrainingExample) -> Result<f64, TrainError> {
    Ok(model.loss(&model.encode(example)?, LossMode::Nll))
}

pub fn focused_loss(model: &ToyLm, example: &TrainingExample) -> Result<f64, TrainError> {
    Ok(model.loss(&model.encode(example)?, LossMode::Focused))
}

pub fn gradients(model: &ToyLm, example: &TrainingExample, mode: LossMode) -> Result<Gradients, TrainError> {
    Ok(model.gradients_encoded(&model.encode(example)?, mode))
}

fn default_lr() -> f64 {
    0.05
}
fn default_steps() -> usize {
    200
}
fn default_eos_weight() -> f64 {
    crate::pipeline::DEFAULT_EOS_WEIGHT
}
fn default_window() -> usize {
    2
}
fn default_dim() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_eos_weight")]
    pub eos_weight: f64,
    pub loss_mode: LossMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub context_window: usize,
    #[serde(default = "default_dim")]
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            steps: default_steps(),
            eos_weight: default_eos_weight(),
            loss_mode: LossMode::Focused,
            seed: 0,
            context_window: default_window(),
            embed_dim: default_dim(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.eos_weight > 0.0 && self.eos_weight <= 1.0) {
            return Err(TrainError::Config(format!("eos_weight must lie in (0, 1], got {}", self.eos_weight)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.context_window == 0 || self.embed_dim == 0 {
            return Err(TrainError::Config("context_window and embed_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Full-batch gradient descent. Returns the mean training loss recorded
/// before each update. Examples whose last answer token is EOS get that
/// position's weight replaced by `config.eos_weight`.
pub fn train(model: &mut ToyLm, dataset: &[TrainingExample], config: &TrainConfig) -> Result<Vec<f64>, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let eos = model.vocab.has_eos.then(|| model.vocab.id(EOS)).transpose()?;
    let encoded = dataset
        .iter()
        .map(|ex| {
            let mut e = model.encode(ex)?;
            if let (Some(eos), Some(last)) = (eos, e.stream.last()) {
                if *last == eos {
                    *e.weights.last_mut().unwrap() = config.eos_weight;
                }
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    train_encoded(model, &encoded, config)
}

pub fn train_encoded(model: &mut ToyLm, encoded: &[EncodedExample], config: &TrainConfig) -> Result<Vec<f64>, TrainError> {
    let mut trace = Vec::with_capacity(config.steps);
    let scale = 1.0 / encoded.len() as f64;
    for step in 0..config.steps {
        let mut grad = Gradients::zeros_like(model);
        let mut loss = 0.0;
        for ex in encoded {
            loss += model.loss(ex, config.loss_mode) * scale;
            grad.add_scaled(&model.gradients_encoded(ex, config.loss_mode), scale);
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(step));
        }
        trace.push(loss);
        for (p, g) in model.params_mut().zip(grad.iter()) {
            *p -= config.learning_rate * g;
        }
    }
    Ok(trace)
}

pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// Builds the training-side view of a plain (prompt, answer) pair with
/// explicit answer tokens and weights. Mostly useful for synthetic data.
pub fn example_from_tokens(prompt: &str, answer: &[&str], weights: &[f64]) -> TrainingExample {
    use crate::tokenize::{Token, Tokenization};
    TrainingExample {
        instance_id: String::new(),
        prompt: prompt.to_string(),
        answer: answer.concat(),
        model_tokens: Tokenization {
            tokens: answer
                .iter()
                .map(|t| if *t == EOS { Token::special(*t) } else { Token::text(*t) })
                .collect(),
            source_text: answer.concat(),
        },
        weights: weights.to_vec(),
        origin: crate::pipeline::Origin::Seed,
    }
}

/// Model-side tokens of a prompt.
pub fn prompt_tokens(prompt: &str) -> Vec<String> {
    tokenize_model(prompt).tokens.into_iter().map(|t| t.surface).collect()
}
