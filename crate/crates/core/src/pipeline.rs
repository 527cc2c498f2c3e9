//! The generate-filter-reweight loop.
//!
//! Candidate answers are ingested from JSONL (one batch per iteration, the
//! last batch reused once they run out). Each iteration expands candidates
//! with resampled citations, gates them at a dynamic threshold, computes
//! token weights for the survivors and accumulates training examples until
//! the acceptance ratio drops or the iteration cap is hit.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_spans, map_weights, AlignError};
use crate::corpus::{
    marker_len, parse_answer, to_jsonl, CandidateRecord, CitedAnswer, CorpusError, Instance, Passage,
};
use crate::fcm::{ScoreError, Scorer, ScorerConfig};
use crate::gate::{dynamic_threshold, quality_gate, GateError, GateMetrics, ThetaSchedule};
use crate::seed::derive_seed;
use crate::shapley::{answer_weights, AttributionConfig, ShapleyError};
use crate::tokenize::{tokenize_model, Token, Tokenization, EOS};

pub const DEFAULT_EOS_WEIGHT: f64 = 0.02;
pub const DEFAULT_MAX_ITERATIONS: usize = 8;
pub const DEFAULT_MIN_VIABLE: usize = 3;
pub const DEFAULT_MAX_INSTANCES: usize = 1000;
pub const DEFAULT_FEW_SHOT: usize = 4;
pub const REPLACEMENTS_PER_CANDIDATE: usize = 2;

const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("instance {instance}: {source}")]
    Gate {
        instance: String,
        #[source]
        source: GateError,
    },
    #[error("instance {instance}: {source}")]
    Weights {
        instance: String,
        #[source]
        source: ShapleyError,
    },
    #[error("instance {instance}: {source}")]
    Align {
        instance: String,
        #[source]
        source: AlignError,
    },
    #[error("candidate refers to unknown instance {0:?}")]
    UnknownInstance(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid loop config: {0}")]
    Config(String),
    #[error("nothing to do: {0}")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Ingested,
    CitationReplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub instance_id: String,
    pub answer: CitedAnswer,
    pub metrics: GateMetrics,
    pub origin: Origin,
}

/// Model tokens of an answer (ending in EOS) with one loss weight each.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub instance_id: String,
    pub prompt: String,
    pub answer: String,
    pub model_tokens: Tokenization,
    pub weights: Vec<f64>,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub instance_id: String,
    pub prompt: String,
    pub answer: String,
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
    pub origin: Origin,
}

impl TrainingExample {
    pub fn answer_tokens(&self) -> Vec<String> {
        self.model_tokens.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn prompt_tokens(&self) -> Vec<String> {
        crate::trainer::prompt_tokens(&self.prompt)
    }

    pub fn to_record(&self) -> TrainingRecord {
        TrainingRecord {
            instance_id: self.instance_id.clone(),
            prompt: self.prompt.clone(),
            answer: self.answer.clone(),
            tokens: self.answer_tokens(),
            weights: self.weights.clone(),
            origin: self.origin,
        }
    }

    pub fn from_record(r: TrainingRecord) -> Self {
        let tokens = r
            .tokens
            .iter()
            .map(|s| {
                let bare = s.trim_start_matches(crate::tokenize::SPACE_MARKER);
                if s == EOS {
                    Token::special(s.clone())
                } else if marker_len(bare) == Some(bare.len()) {
                    Token::citation(s.clone())
                } else {
                    Token::text(s.clone())
                }
            })
            .collect();
        TrainingExample {
            instance_id: r.instance_id,
            prompt: r.prompt,
            model_tokens: Tokenization {
                tokens,
                source_text: r.answer.clone(),
            },
            answer: r.answer,
            weights: r.weights,
            origin: r.origin,
        }
    }
}

pub fn parse_training_line(text: &str, line: usize) -> Result<TrainingExample, CorpusError> {
    let r: TrainingRecord = serde_json::from_str(text).map_err(|e| CorpusError::Json {
        line,
        message: e.to_string(),
    })?;
    if r.tokens.len() != r.weights.len() {
        return Err(CorpusError::Invalid {
            line,
            message: format!("{} tokens but {} weights", r.tokens.len(), r.weights.len()),
        });
    }
    Ok(TrainingExample::from_record(r))
}

pub fn load_training_set(path: &Path) -> Result<Vec<TrainingExample>, LoopError> {
    let text = fs::read_to_string(path).map_err(|source| LoopError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_training_line(l, i + 1).map_err(LoopError::from))
        .collect()
}

/// Loop settings. The shipped defaults live in `configs/default.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub master_seed: u64,
    pub theta: ThetaSchedule,
    pub min_viable_size: usize,
    pub max_iterations: usize,
    pub max_instances: usize,
    pub few_shot_size: usize,
    pub eos_weight: f64,
    pub attribution: AttributionConfig,
    pub scorer: ScorerConfig,
    /// Threshold for fact coverage; defaults to the scorer's binarization
    /// threshold.
    #[serde(default)]
    pub fact_threshold: Option<f64>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig::shipped()
    }
}

impl LoopConfig {
    pub fn shipped() -> Self {
        serde_json::from_str(DEFAULT_CONFIG).expect("shipped config parses")
    }

    pub fn shipped_json() -> &'static str {
        DEFAULT_CONFIG
    }

    pub fn from_json(text: &str) -> Result<Self, LoopError> {
        let c: LoopConfig = serde_json::from_str(text).map_err(|e| LoopError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn fact_threshold(&self) -> f64 {
        self.fact_threshold.unwrap_or(self.scorer.binarize_threshold)
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let t = &self.theta;
        if !(t.start > 0.0 && t.start < 1.0 && t.step > 0.0 && t.floor > 0.0 && t.floor <= t.start) {
            return Err(LoopError::Config(format!("bad theta schedule {t:?}")));
        }
        if self.min_viable_size == 0 {
            return Err(LoopError::Config("min_viable_size must be at least 1".into()));
        }
        if !(self.eos_weight > 0.0 && self.eos_weight <= 1.0) {
            return Err(LoopError::Config("eos_weight must lie in (0, 1]".into()));
        }
        if self.attribution.mc_samples == 0 {
            return Err(LoopError::Config("mc_samples must be positive".into()));
        }
        self.scorer.validate()?;
        Ok(())
    }
}

/// Samples `k` distinct passage indices, each draw proportional to the
/// remaining retrieval scores (uniform if they are all zero).
fn sample_citations(passages: &[Passage], k: usize, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut pool: Vec<(usize, f64)> = passages.iter().map(|p| (p.index, p.retrieval_score)).collect();
    let mut out = BTreeSet::new();
    for _ in 0..k {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            pool.iter()
                .position(|(_, w)| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or_else(|| pool.iter().rposition(|(_, w)| *w > 0.0).unwrap())
        } else {
            rng.gen_range(0..pool.len())
        };
        out.insert(pool.remove(pick).0);
    }
    out
}

/// Produces two variants of `candidate` whose citation sets are resampled
/// by retrieval score, keeping each set's size.
pub fn diversify_citations(
    candidate: &CitedAnswer,
    passages: &[Passage],
    seed: u64,
) -> Result<Vec<CitedAnswer>, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..REPLACEMENTS_PER_CANDIDATE)
        .map(|_| {
            let parts: Vec<(String, BTreeSet<usize>)> = candidate
                .sentences
                .iter()
                .map(|s| {
                    let k = s.citations.len();
                    let cites = if k == 0 {
                        BTreeSet::new()
                    } else if k > passages.len() {
                        log::warn!("sentence cites {k} passages but only {} exist; kept as is", passages.len());
                        s.citations.clone()
                    } else {
                        sample_citations(passages, k, &mut rng)
                    };
                    (s.text_without_citations.clone(), cites)
                })
                .collect();
            CitedAnswer::from_parts(&parts)
        })
        .collect()
}

/// Renders the generation prompt for an instance: question followed by the
/// numbered passages.
pub fn build_prompt(instance: &Instance) -> String {
    let mut out = format!("Question: {}\n", instance.question);
    for p in &instance.passages {
        out.push_str(&format!("Document [{}] (Title: {}): {}\n", p.index, p.title, p.text));
    }
    out.push_str("Answer:");
    out
}

/// Computes relevance weights for an answer and transfers them onto the
/// model tokenization, appending EOS with `eos_weight`.
pub fn build_example(
    instance: &Instance,
    answer: &CitedAnswer,
    scorer: &dyn Scorer,
    config: &LoopConfig,
    origin: Origin,
) -> Result<TrainingExample, LoopError> {
    let weights = answer_weights(
        answer,
        &instance.passages,
        scorer,
        &config.attribution,
        config.master_seed,
        &instance.id,
    )
    .map_err(|source| LoopError::Weights {
        instance: instance.id.clone(),
        source,
    })?;
    let scorer_toks = weights.scorer_tokenization();
    let mut model_toks = tokenize_model(&answer.full_text);
    let align_err = |source| LoopError::Align {
        instance: instance.id.clone(),
        source,
    };
    let alignment = align_spans(&scorer_toks, &model_toks).map_err(align_err)?;
    let mut w = map_weights(&weights.token_weights(), &alignment, &scorer_toks, &model_toks).map_err(align_err)?;
    model_toks.tokens.push(Token::special(EOS));
    w.push(config.eos_weight);
    Ok(TrainingExample {
        instance_id: instance.id.clone(),
        prompt: build_prompt(instance),
        answer: answer.full_text.clone(),
        model_tokens: model_toks,
        weights: w,
        origin,
    })
}

/// The few-shot seed set: the first `few_shot_size` instances carrying a
/// gold answer, with their own weights.
pub fn seed_examples(
    instances: &[Instance],
    scorer: &dyn Scorer,
    config: &LoopConfig,
) -> Result<Vec<TrainingExample>, LoopError> {
    instances
        .iter()
        .filter(|i| i.gold_answer.is_some())
        .take(config.few_shot_size)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|inst| {
            let gold = inst.gold_answer.as_deref().unwrap();
            let answer = parse_answer(gold, &inst.valid_indices())?.answer;
            build_example(inst, &answer, scorer, config, Origin::Seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub instance_id: String,
    pub answer: CitedAnswer,
}

/// Resolves candidate records against their instances. Records whose answer
/// has no sentences are skipped with a warning.
pub fn resolve_candidates(
    records: &[CandidateRecord],
    instances: &HashMap<String, Instance>,
) -> Result<Vec<Candidate>, LoopError> {
    let mut out = Vec::new();
    for r in records {
        let inst = instances
            .get(&r.instance_id)
            .ok_or_else(|| LoopError::UnknownInstance(r.instance_id.clone()))?;
        match parse_answer(&r.answer, &inst.valid_indices()) {
            Ok(p) => out.push(Candidate {
                instance_id: r.instance_id.clone(),
                answer: p.answer,
            }),
            Err(e) => log::warn!("skipping candidate for {}: {e}", r.instance_id),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub filtered: usize,
    pub candidates: usize,
    pub theta: f64,
}

impl IterationRecord {
    pub fn ratio(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.filtered as f64 / self.candidates as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    pub k: usize,
    pub history: Vec<IterationRecord>,
    pub accepted: Vec<ScoredCandidate>,
    pub examples: Vec<TrainingExample>,
    pub max_iterations: usize,
}

impl IterationState {
    pub fn new(max_iterations: usize) -> Self {
        IterationState {
            k: 0,
            history: Vec::new(),
            accepted: Vec::new(),
            examples: Vec::new(),
            max_iterations,
        }
    }
}

/// Stop once the cap is reached or the accepted fraction fell between the
/// last two iterations.
pub fn should_stop(state: &IterationState) -> bool {
    should_stop_history(&state.history, state.max_iterations)
}

pub fn should_stop_history(history: &[IterationRecord], max_iterations: usize) -> bool {
    let k = history.len();
    if k >= max_iterations {
        return true;
    }
    k >= 2 && history[k - 1].ratio() < history[k - 2].ratio()
}

/// One expanded candidate before gating.
struct Expanded<'a> {
    instance: &'a Instance,
    answer: CitedAnswer,
    origin: Origin,
}

pub fn run_iteration(
    mut state: IterationState,
    candidates: &[Candidate],
    instances: &HashMap<String, Instance>,
    scorer: &dyn Scorer,
    config: &LoopConfig,
) -> Result<IterationState, LoopError> {
    if candidates.is_empty() {
        return Err(LoopError::Empty("no candidates for this iteration"));
    }
    // Cap the number of distinct questions per iteration.
    let mut allowed = HashSet::new();
    for c in candidates {
        if allowed.len() < config.max_instances {
            allowed.insert(c.instance_id.as_str());
        }
    }
    let k_bytes = (state.k as u64).to_le_bytes();
    let mut expanded = Vec::new();
    for c in candidates.iter().filter(|c| allowed.contains(c.instance_id.as_str())) {
        let instance = instances
            .get(&c.instance_id)
            .ok_or_else(|| LoopError::UnknownInstance(c.instance_id.clone()))?;
        expanded.push(Expanded {
            instance,
            answer: c.answer.clone(),
            origin: Origin::Ingested,
        });
        if c.answer.citation_count() == 0 {
            continue;
        }
        let seed = derive_seed(
            config.master_seed,
            &[b"diversify", &k_bytes, c.instance_id.as_bytes(), c.answer.full_text.as_bytes()],
        );
        for v in diversify_citations(&c.answer, &instance.passages, seed)? {
            expanded.push(Expanded {
                instance,
                answer: v,
                origin: Origin::CitationReplacement,
            });
        }
    }

    let fact_threshold = config.fact_threshold();
    let probe = config.theta.start;
    let metrics: Vec<GateMetrics> = expanded
        .par_iter()
        .map(|e| {
            quality_gate(&e.answer, e.instance.facts(), &e.instance.passages, scorer, probe, fact_threshold).map_err(
                |source| LoopError::Gate {
                    instance: e.instance.id.clone(),
                    source,
                },
            )
        })
        .collect::<Result<_, _>>()?;

    let outcome = dynamic_threshold(&metrics, &config.theta, config.min_viable_size);
    if outcome.passing.is_empty() {
        log::warn!("iteration {}: no candidate passed the gate", state.k);
    }
    let mut seen: HashSet<(String, String)> = state
        .accepted
        .iter()
        .map(|a| (a.instance_id.clone(), a.answer.full_text.clone()))
        .collect();
    let fresh: Vec<usize> = outcome
        .passing
        .iter()
        .copied()
        .filter(|&i| seen.insert((expanded[i].instance.id.clone(), expanded[i].answer.full_text.clone())))
        .collect();
    let examples: Vec<TrainingExample> = fresh
        .par_iter()
        .map(|&i| {
            let e = &expanded[i];
            build_example(e.instance, &e.answer, scorer, config, e.origin)
        })
        .collect::<Result<_, _>>()?;
    for (&i, ex) in fresh.iter().zip(examples) {
        let e = &expanded[i];
        state.accepted.push(ScoredCandidate {
            instance_id: e.instance.id.clone(),
            answer: e.answer.clone(),
            metrics: metrics[i].at_theta(outcome.theta),
            origin: e.origin,
        });
        state.examples.push(ex);
    }
    state.history.push(IterationRecord {
        filtered: outcome.passing.len(),
        candidates: expanded.len(),
        theta: outcome.theta,
    });
    state.k += 1;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub state: IterationState,
    pub seed_examples: Vec<TrainingExample>,
}

impl LoopOutcome {
    /// Seed examples plus every accepted example, in emission order.
    pub fn training_set(&self) -> Vec<TrainingExample> {
        order_training_set(self.seed_examples.iter().chain(&self.state.examples).cloned().collect())
    }
}

/// Runs iterations until [`should_stop`]. Iteration `k` consumes
/// `batches[k]`, or the last batch once `k` runs past the end.
pub fn run_loop(
    instances: &[Instance],
    batches: &[Vec<CandidateRecord>],
    few_shot: &[Instance],
    scorer: &dyn Scorer,
    config: &LoopConfig,
) -> Result<LoopOutcome, LoopError> {
    config.validate()?;
    if batches.is_empty() {
        return Err(LoopError::Empty("no candidate batches"));
    }
    let by_id: HashMap<String, Instance> = instances.iter().map(|i| (i.id.clone(), i.clone())).collect();
    let resolved = batches
        .iter()
        .map(|b| resolve_candidates(b, &by_id))
        .collect::<Result<Vec<_>, _>>()?;
    let seed_examples = seed_examples(few_shot, scorer, config)?;
    let mut state = IterationState::new(config.max_iterations);
    while !should_stop(&state) {
        let batch = &resolved[state.k.min(resolved.len() - 1)];
        state = run_iteration(state, batch, &by_id, scorer, config)?;
        let last = state.history.last().unwrap();
        log::info!(
            "iteration {}: {}/{} accepted at theta {}",
            state.k - 1,
            last.filtered,
            last.candidates,
            last.theta
        );
    }
    Ok(LoopOutcome { state, seed_examples })
}

/// Stable sort by (instance id, origin); ties keep their input order.
pub fn order_training_set(mut examples: Vec<TrainingExample>) -> Vec<TrainingExample> {
    examples.sort_by(|a, b| (&a.instance_id, a.origin).cmp(&(&b.instance_id, b.origin)));
    examples
}

pub fn training_set_jsonl(examples: &[TrainingExample]) -> String {
    let records: Vec<TrainingRecord> = examples.iter().map(TrainingExample::to_record).collect();
    to_jsonl(&records)
}

/// Writes the union of seed and accepted examples as JSONL.
pub fn emit_training_set(
    accepted: &[TrainingExample],
    seed: &[TrainingExample],
    path: &Path,
) -> Result<usize, LoopError> {
    if accepted.is_empty() && seed.is_empty() {
        return Err(LoopError::Empty("no seed or accepted examples to emit"));
    }
    let all = order_training_set(seed.iter().chain(accepted).cloned().collect());
    fs::write(path, training_set_jsonl(&all)).map_err(|source| LoopError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(all.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcm::LexicalScorer;

    fn passages(scores: &[f64]) -> Vec<Passage> {
        scores
            .iter()
            .enumerate()
            .map(|(i, s)| Passage {
                index: i + 1,
                title: format!("P{}", i + 1),
                text: format!("text {}", i + 1),
                retrieval_score: *s,
            })
            .collect()
    }

    fn hist(pairs: &[(usize, usize)]) -> Vec<IterationRecord> {
        pairs
            .iter()
            .map(|&(f, c)| IterationRecord {
                filtered: f,
                candidates: c,
                theta: 0.9,
            })
            .collect()
    }

    #[test]
    fn shipped_config_constants() {
        let c = LoopConfig::shipped();
        assert_eq!(c.theta, ThetaSchedule { start: 0.9, step: 0.1, floor: 0.1 });
        assert_eq!(c.min_viable_size, DEFAULT_MIN_VIABLE);
        assert_eq!(c.max_iterations, DEFAULT_MAX_ITERATIONS);
        assert_eq!(c.max_instances, DEFAULT_MAX_INSTANCES);
        assert_eq!(c.few_shot_size, DEFAULT_FEW_SHOT);
        assert_eq!(c.eos_weight, DEFAULT_EOS_WEIGHT);
        assert_eq!(c.attribution.exact_limit, 12);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn stopping_rule() {
        assert!(should_stop_history(&hist(&[(10, 100), (8, 100)]), 8));
        assert!(!should_stop_history(&hist(&[(10, 100), (12, 100)]), 8));
        assert!(!should_stop_history(&hist(&[(10, 100)]), 8));
        assert!(should_stop_history(&hist(&[(1, 10); 8]), 8));
        // An empty iteration has ratio 0 and forces a stop.
        assert!(should_stop_history(&hist(&[(1, 10), (0, 0)]), 8));
    }

    #[test]
    fn single_passage_variants_equal_original() {
        let ps = passages(&[1.0]);
        let a = parse_answer("Claim [1].", &[1].into_iter().collect()).unwrap().answer;
        let v = diversify_citations(&a, &ps, 3).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.render_canonical() == a.render_canonical()));
    }

    #[test]
    fn variants_keep_cardinality_and_are_seeded() {
        let ps = passages(&[1.0, 2.0, 3.0, 0.5]);
        let a = parse_answer("One [1][2]. Two. Three [4].", &(1..=4).collect()).unwrap().answer;
        let v1 = diversify_citations(&a, &ps, 42).unwrap();
        let v2 = diversify_citations(&a, &ps, 42).unwrap();
        assert_eq!(v1, v2);
        for v in &v1 {
            let sizes: Vec<usize> = v.sentences.iter().map(|s| s.citations.len()).collect();
            assert_eq!(sizes, vec![2, 0, 1]);
        }
    }

    #[test]
    fn oversized_citation_set_is_kept() {
        let ps = passages(&[1.0]);
        let a = parse_answer("Claim [1][2].", &[1, 2].into_iter().collect()).unwrap().answer;
        let v = diversify_citations(&a, &ps, 0).unwrap();
        assert_eq!(v[0].sentences[0].citations, [1, 2].into_iter().collect());
    }

    #[test]
    fn zero_scores_sample_uniformly() {
        let ps = passages(&[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_citations(&ps, 2, &mut rng);
        assert_eq!(s, [1, 2].into_iter().collect());
    }

    #[test]
    fn record_round_trip() {
        let inst = Instance {
            id: "q".into(),
            question: "Where is Paris?".into(),
            passages: vec![Passage {
                index: 1,
                title: "Paris".into(),
                text: "Paris is in France.".into(),
                retrieval_score: 1.0,
            }],
            facts: None,
            gold_answer: None,
        };
        let a = parse_answer("Paris is in France [1].", &inst.valid_indices()).unwrap().answer;
        let ex = build_example(&inst, &a, &LexicalScorer, &LoopConfig::shipped(), Origin::Ingested).unwrap();
        assert_eq!(ex.weights.len(), ex.model_tokens.len());
        assert_eq!(*ex.weights.last().unwrap(), DEFAULT_EOS_WEIGHT);
        let cite = ex.model_tokens.tokens.iter().position(|t| t.is_citation_marker).unwrap();
        assert_eq!(ex.weights[cite], 1.0);
        let back = TrainingExample::from_record(ex.to_record());
        assert_eq!(back, ex);
    }

    #[test]
    fn emit_requires_something() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_training_set(&[], &[], &dir.path().join("x.jsonl")),
            Err(LoopError::Empty(_))
        ));
    }
}
