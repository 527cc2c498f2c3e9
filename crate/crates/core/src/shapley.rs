//! Token attribution for consistency scores.
//!
//! Each claim token is a player; a coalition's value is the consistency
//! score of the claim rebuilt from just those tokens (in original order)
//! against fixed evidence. The empty coalition is worth 0.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CitedAnswer, Passage};
use crate::fcm::{evidence_for, ScoreError, Scorer};
use crate::seed::derive_seed;
use crate::tokenize::{detokenize_scorer, tokenize_scorer, Token, Tokenization};

pub const DEFAULT_EXACT_LIMIT: usize = 12;
pub const DEFAULT_MC_SAMPLES: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapleyError {
    #[error("{n} tokens exceed the exact limit of {limit}; use permutation sampling")]
    TooManyTokens { n: usize, limit: usize },
    #[error("claim has no tokens")]
    NoTokens,
    #[error("permutation sampling needs at least one sample")]
    ZeroSamples,
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: Box<ShapleyError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyResult {
    pub values: Vec<f64>,
    /// Value of the empty coalition.
    pub base: f64,
    /// Value of the grand coalition.
    pub full: f64,
    pub method: Method,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Exact Shapley values for `n` players given every coalition's value,
/// indexed by bitmask (`values[0]` is the empty coalition).
///
/// Marginals are accumulated over masks in ascending order.
pub fn exact_from_table(n: usize, values: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), 1 << n);
    let n_fact = factorial(n) as f64;
    let weight: Vec<f64> = (0..n)
        .map(|s| (factorial(s) * factorial(n - s - 1)) as f64 / n_fact)
        .collect();
    (0..n)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = 0.0;
            for mask in 0..values.len() {
                if mask & bit == 0 {
                    let s = mask.count_ones() as usize;
                    acc += weight[s] * (values[mask | bit] - values[mask]);
                }
            }
            acc
        })
        .collect()
}

/// Permutation-sampling estimate: averages each player's marginal
/// contribution over `samples` uniformly random orderings.
///
/// `value` receives the prefix coalitions of every sampled ordering at once
/// (`samples * n` masks, ordering by ordering) and returns their values.
pub fn permutation_estimate<F>(n: usize, samples: usize, seed: u64, value: F) -> Result<Vec<f64>, ShapleyError>
where
    F: FnOnce(&[usize]) -> Result<Vec<f64>, ShapleyError>,
{
    if samples == 0 {
        return Err(ShapleyError::ZeroSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut orders = Vec::with_capacity(samples * n);
    let mut masks = Vec::with_capacity(samples * n);
    for _ in 0..samples {
        order.shuffle(&mut rng);
        let mut mask = 0usize;
        for &p in &order {
            mask |= 1 << p;
            masks.push(mask);
        }
        orders.extend_from_slice(&order);
    }
    let vals = value(&masks)?;
    let mut totals = vec![0.0; n];
    for (ord, v) in orders.chunks(n.max(1)).zip(vals.chunks(n.max(1))) {
        let mut prev = 0.0;
        for (&p, &x) in ord.iter().zip(v) {
            totals[p] += x - prev;
            prev = x;
        }
    }
    Ok(totals.into_iter().map(|t| t / samples as f64).collect())
}

fn players(claim: &Tokenization) -> Vec<&Token> {
    claim
        .tokens
        .iter()
        .filter(|t| !t.is_citation_marker && !t.is_special)
        .collect()
}

fn coalition_text(players: &[&Token], mask: usize) -> String {
    detokenize_scorer(
        players
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, t)| *t),
    )
}

/// Scores the listed coalitions in one batch. Coalitions whose text is
/// empty are worth 0 without consulting the scorer.
fn coalition_values(
    players: &[&Token],
    masks: &[usize],
    evidence: &str,
    scorer: &dyn Scorer,
) -> Result<Vec<f64>, ShapleyError> {
    let texts: Vec<String> = masks.iter().map(|&m| coalition_text(players, m)).collect();
    let mut out = vec![0.0; masks.len()];
    let mut pairs = Vec::new();
    let mut slots = Vec::new();
    for (i, t) in texts.into_iter().enumerate() {
        if !t.trim().is_empty() {
            pairs.push((t, evidence.to_string()));
            slots.push(i);
        }
    }
    for (s, i) in scorer.score_batch(&pairs)?.into_iter().zip(slots) {
        out[i] = s.value();
    }
    Ok(out)
}

pub fn shapley_exact(
    claim: &Tokenization,
    evidence: &str,
    scorer: &dyn Scorer,
    exact_limit: usize,
) -> Result<ShapleyResult, ShapleyError> {
    let players = players(claim);
    let n = players.len();
    if n == 0 {
        return Err(ShapleyError::NoTokens);
    }
    if n > exact_limit || n >= usize::BITS as usize {
        return Err(ShapleyError::TooManyTokens { n, limit: exact_limit });
    }
    let masks: Vec<usize> = (0..1usize << n).collect();
    let table = coalition_values(&players, &masks, evidence, scorer)?;
    Ok(ShapleyResult {
        values: exact_from_table(n, &table),
        base: table[0],
        full: table[(1 << n) - 1],
        method: Method::Exact,
        samples: None,
        seed: None,
    })
}

pub fn shapley_mc(
    claim: &Tokenization,
    evidence: &str,
    scorer: &dyn Scorer,
    samples: usize,
    seed: u64,
) -> Result<ShapleyResult, ShapleyError> {
    let players = players(claim);
    let n = players.len();
    if n == 0 {
        return Err(ShapleyError::NoTokens);
    }
    if n >= usize::BITS as usize {
        return Err(ShapleyError::TooManyTokens {
            n,
            limit: usize::BITS as usize - 1,
        });
    }
    let values = permutation_estimate(n, samples, seed, |masks| {
        let mut unique = masks.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let vals = coalition_values(&players, &unique, evidence, scorer)?;
        let memo: HashMap<usize, f64> = unique.into_iter().zip(vals).collect();
        Ok(masks.iter().map(|m| memo[m]).collect())
    })?;
    let full = coalition_values(&players, &[(1usize << n) - 1], evidence, scorer)?[0];
    Ok(ShapleyResult {
        values,
        base: 0.0,
        full,
        method: Method::MonteCarlo,
        samples: Some(samples),
        seed: Some(seed),
    })
}

/// Min-max normalization to `[0, 1]`; a constant input maps to all ones.
pub fn normalize_sentence(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![1.0; values.len()];
    }
    values.iter().map(|u| (u - min) / (max - min)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    #[serde(default = "default_exact_limit")]
    pub exact_limit: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

fn default_exact_limit() -> usize {
    DEFAULT_EXACT_LIMIT
}
fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            exact_limit: DEFAULT_EXACT_LIMIT,
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceWeights {
    pub tokens: Vec<String>,
    pub values: Vec<f64>,
    pub normalized: Vec<f64>,
    pub method: Method,
    #[serde(skip)]
    pub citations: Vec<usize>,
    #[serde(skip)]
    pub scorer_tokens: Vec<Token>,
}

/// Relevance weights for one answer, sentence by sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerWeights {
    pub sentences: Vec<SentenceWeights>,
}

impl AnswerWeights {
    /// Sentence-wise concatenation of normalized token weights, each
    /// sentence followed by a weight of 1 per citation it carries.
    pub fn flattened(&self) -> Vec<f64> {
        self.sentences
            .iter()
            .flat_map(|s| s.normalized.iter().copied().chain(s.citations.iter().map(|_| 1.0)))
            .collect()
    }

    /// The scorer tokenization of the whole answer (citations excluded).
    pub fn scorer_tokenization(&self) -> Tokenization {
        let tokens: Vec<Token> = self.sentences.iter().flat_map(|s| s.scorer_tokens.clone()).collect();
        let source_text = tokens.iter().map(|t| t.surface.as_str()).collect();
        Tokenization { tokens, source_text }
    }

    /// Normalized weights aligned with [`Self::scorer_tokenization`].
    pub fn token_weights(&self) -> Vec<f64> {
        self.sentences.iter().flat_map(|s| s.normalized.iter().copied()).collect()
    }
}

/// Computes per-sentence attribution and normalization for a cited answer.
///
/// Sentences run in parallel; results are assembled by sentence index.
/// Sentences longer than `exact_limit` tokens fall back to permutation
/// sampling seeded from `(master_seed, instance_id, sentence index)`.
pub fn answer_weights(
    answer: &CitedAnswer,
    passages: &[Passage],
    scorer: &dyn Scorer,
    config: &AttributionConfig,
    master_seed: u64,
    instance_id: &str,
) -> Result<AnswerWeights, ShapleyError> {
    let sentences = answer
        .sentences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let toks = tokenize_scorer(&s.text_without_citations);
            let evidence = evidence_for(passages, &s.citations);
            let wrap = |e: ShapleyError| ShapleyError::Sentence {
                index,
                source: Box::new(e),
            };
            let result = if players(&toks).len() <= config.exact_limit {
                shapley_exact(&toks, &evidence, scorer, config.exact_limit)
            } else {
                let seed = derive_seed(master_seed, &[instance_id.as_bytes(), &(index as u64).to_le_bytes()]);
                shapley_mc(&toks, &evidence, scorer, config.mc_samples, seed)
            }
            .map_err(wrap)?;
            Ok(SentenceWeights {
                tokens: toks.tokens.iter().map(|t| t.surface.clone()).collect(),
                normalized: normalize_sentence(&result.values),
                values: result.values,
                method: result.method,
                citations: s.citations.iter().copied().collect(),
                scorer_tokens: toks.tokens,
            })
        })
        .collect::<Result<Vec<_>, ShapleyError>>()?;
    Ok(AnswerWeights { sentences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcm::{ConsistencyScore, LexicalScorer};

    /// Scores by looking the claim up in a fixed table.
    struct TableScorer(HashMap<String, f64>);

    impl Scorer for TableScorer {
        fn score(&self, claim: &str, _evidence: &str) -> Result<ConsistencyScore, ScoreError> {
            Ok(ConsistencyScore::new(*self.0.get(claim).unwrap_or(&0.0)).unwrap())
        }
    }

    fn toks(surfaces: &[&str]) -> Tokenization {
        Tokenization {
            tokens: surfaces.iter().map(|s| Token::text(*s)).collect(),
            source_text: surfaces.concat(),
        }
    }

    fn symmetric() -> (Tokenization, TableScorer) {
        let table = [("a", 0.5), ("b", 0.5), ("a b", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        (toks(&["a", " b"]), TableScorer(table))
    }

    #[test]
    fn symmetric_players_split_evenly() {
        let (t, s) = symmetric();
        let r = shapley_exact(&t, "ev", &s, 12).unwrap();
        assert_eq!(r.values, vec![0.5, 0.5]);
        assert_eq!(r.full, 1.0);
        assert_eq!(r.base, 0.0);
    }

    #[test]
    fn single_player_gets_everything() {
        let s = TableScorer([("x".to_string(), 0.8)].into_iter().collect());
        let r = shapley_exact(&toks(&["x"]), "ev", &s, 12).unwrap();
        assert_eq!(r.values, vec![0.8]);
    }

    #[test]
    fn exact_refuses_large_claims() {
        let many: Vec<String> = (0..13).map(|i| format!(" w{i}")).collect();
        let refs: Vec<&str> = many.iter().map(String::as_str).collect();
        assert_eq!(
            shapley_exact(&toks(&refs), "e", &LexicalScorer, 12),
            Err(ShapleyError::TooManyTokens { n: 13, limit: 12 })
        );
    }

    #[test]
    fn mc_symmetric_close_to_half() {
        let (t, s) = symmetric();
        for seed in 0..5 {
            let r = shapley_mc(&t, "ev", &s, 200, seed).unwrap();
            assert!(r.values.iter().all(|v| (v - 0.5).abs() < 0.1));
        }
    }

    #[test]
    fn mc_single_sample_is_one_walk() {
        // v(a)=0.2, v(b)=0.7, v(ab)=1: one ordering yields either
        // [0.2, 0.8] or [0.3, 0.7].
        let table = [("a", 0.2), ("b", 0.7), ("a b", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let s = TableScorer(table);
        for seed in 0..10 {
            let r = shapley_mc(&toks(&["a", " b"]), "ev", &s, 1, seed).unwrap();
            let ok = |x: f64, y: f64| (r.values[0] - x).abs() < 1e-12 && (r.values[1] - y).abs() < 1e-12;
            assert!(ok(0.2, 0.8) || ok(0.3, 0.7), "{:?}", r.values);
        }
    }

    #[test]
    fn mc_is_deterministic() {
        let t = tokenize_scorer("Paris is the capital of France");
        let a = shapley_mc(&t, "Paris France", &LexicalScorer, 50, 9).unwrap();
        let b = shapley_mc(&t, "Paris France", &LexicalScorer, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(shapley_mc(&t, "x", &LexicalScorer, 0, 9), Err(ShapleyError::ZeroSamples));
    }

    #[test]
    fn normalization() {
        let n = normalize_sentence(&[0.1, 0.4, 0.3]);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[1], 1.0);
        assert!((n[2] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(normalize_sentence(&[0.5, 0.5]), vec![1.0, 1.0]);
        assert_eq!(normalize_sentence(&[0.2]), vec![1.0]);
    }

    #[test]
    fn uncited_sentence_is_all_ones() {
        let a = crate::corpus::parse_answer("The sky is blue.", &Default::default()).unwrap().answer;
        let w = answer_weights(&a, &[], &LexicalScorer, &AttributionConfig::default(), 0, "x").unwrap();
        assert!(w.sentences[0].values.iter().all(|v| *v == 0.0));
        assert!(w.flattened().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn flattened_layout() {
        let passages = vec![Passage {
            index: 1,
            title: "Sky".into(),
            text: "The sky is blue.".into(),
            retrieval_score: 1.0,
        }];
        let a = crate::corpus::parse_answer("The sky is blue [1]. Grass is green.", &[1].into_iter().collect())
            .unwrap()
            .answer;
        let w = answer_weights(&a, &passages, &LexicalScorer, &AttributionConfig::default(), 0, "x").unwrap();
        let n0 = w.sentences[0].tokens.len();
        let n1 = w.sentences[1].tokens.len();
        let flat = w.flattened();
        assert_eq!(flat.len(), n0 + n1 + 1);
        assert_eq!(flat[n0], 1.0);
        assert_eq!(w.token_weights().len(), w.scorer_tokenization().len());
    }

    #[test]
    fn long_sentences_use_sampling() {
        let text = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen.";
        let a = crate::corpus::parse_answer(text, &Default::default()).unwrap().answer;
        let cfg = AttributionConfig {
            exact_limit: 12,
            mc_samples: 20,
        };
        let w = answer_weights(&a, &[], &LexicalScorer, &cfg, 3, "id").unwrap();
        assert_eq!(w.sentences[0].method, Method::MonteCarlo);
    }
}
