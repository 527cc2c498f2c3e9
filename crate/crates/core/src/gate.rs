//! Citation and correctness metrics, the pass/fail quality gate and the
//! dynamic threshold schedule.
//!
//! `phi(s, C)` below is the consistency score of sentence `s` against the
//! passages in `C` joined in index order; over an empty `C` it is 0.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CitedAnswer, Passage};
use crate::fcm::{all_evidence, binarize, evidence_for, ConsistencyScore, ScoreError, Scorer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("sentence {index}: {source}")]
    Sentence {
        index: usize,
        #[source]
        source: ScoreError,
    },
    #[error("fact scoring: {0}")]
    Facts(#[source] ScoreError),
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
}

/// One phi evaluation request: sentence index plus the citation subset.
struct Request {
    sentence: usize,
    cited: BTreeSet<usize>,
}

/// Batch-evaluates phi for many (sentence, citation subset) requests.
fn phi_many(
    answer: &CitedAnswer,
    passages: &[Passage],
    scorer: &dyn Scorer,
    requests: &[Request],
) -> Result<Vec<f64>, GateError> {
    let mut out = vec![0.0; requests.len()];
    let mut pairs = Vec::new();
    let mut slots = Vec::new();
    for (k, r) in requests.iter().enumerate() {
        if r.cited.is_empty() {
            continue;
        }
        pairs.push((
            answer.sentences[r.sentence].text_without_citations.clone(),
            evidence_for(passages, &r.cited),
        ));
        slots.push(k);
    }
    let scores = scorer.score_batch(&pairs).map_err(|source| GateError::Sentence {
        // Batches cover many sentences; report the first one in the batch.
        index: slots.first().map_or(0, |&k| requests[k].sentence),
        source,
    })?;
    for (s, k) in scores.into_iter().zip(slots) {
        out[k] = s.value();
    }
    Ok(out)
}

fn without(set: &BTreeSet<usize>, c: usize) -> BTreeSet<usize> {
    set.iter().copied().filter(|&x| x != c).collect()
}

/// Mean over sentences of phi(s_i, C_i); uncited sentences contribute 0.
pub fn citation_recall(answer: &CitedAnswer, passages: &[Passage], scorer: &dyn Scorer) -> Result<f64, GateError> {
    let reqs: Vec<Request> = answer
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| Request {
            sentence: i,
            cited: s.citations.clone(),
        })
        .collect();
    let phi = phi_many(answer, passages, scorer, &reqs)?;
    Ok(phi.iter().sum::<f64>() / answer.sentences.len().max(1) as f64)
}

/// For each citation of each sentence: phi(s, {c}) and phi(s, C \ {c}).
fn per_citation_scores(
    answer: &CitedAnswer,
    passages: &[Passage],
    scorer: &dyn Scorer,
) -> Result<Vec<Vec<(f64, f64)>>, GateError> {
    let mut reqs = Vec::new();
    for (i, s) in answer.sentences.iter().enumerate() {
        for &c in &s.citations {
            reqs.push(Request {
                sentence: i,
                cited: [c].into_iter().collect(),
            });
            reqs.push(Request {
                sentence: i,
                cited: without(&s.citations, c),
            });
        }
    }
    let phi = phi_many(answer, passages, scorer, &reqs)?;
    let mut it = phi.chunks(2).map(|p| (p[0], p[1]));
    Ok(answer
        .sentences
        .iter()
        .map(|s| s.citations.iter().map(|_| it.next().unwrap()).collect())
        .collect())
}

/// Mean over cited sentences of the mean over their citations of
/// `max(phi(s, {c}), 1 - phi(s, C \ {c}))`. An answer without any
/// citation scores 0.
pub fn citation_precision(answer: &CitedAnswer, passages: &[Passage], scorer: &dyn Scorer) -> Result<f64, GateError> {
    if answer.citation_count() == 0 {
        log::warn!("answer has no citations; citation precision is 0");
        return Ok(0.0);
    }
    let per = per_citation_scores(answer, passages, scorer)?;
    let cited: Vec<f64> = per
        .iter()
        .filter(|terms| !terms.is_empty())
        .map(|terms| terms.iter().map(|(alone, rest)| alone.max(1.0 - rest)).sum::<f64>() / terms.len() as f64)
        .collect();
    Ok(cited.iter().sum::<f64>() / cited.len() as f64)
}

/// Fraction of sentences that cite something and are supported by their
/// citations taken jointly.
pub fn citation_recall_binary(
    answer: &CitedAnswer,
    passages: &[Passage],
    scorer: &dyn Scorer,
    threshold: f64,
) -> Result<f64, GateError> {
    let reqs: Vec<Request> = answer
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| Request {
            sentence: i,
            cited: s.citations.clone(),
        })
        .collect();
    let phi = phi_many(answer, passages, scorer, &reqs)?;
    let hits = answer
        .sentences
        .iter()
        .zip(&phi)
        .filter(|(s, &p)| !s.citations.is_empty() && bin(p, threshold) == 1)
        .count();
    Ok(hits as f64 / answer.sentences.len().max(1) as f64)
}

/// Fraction of citations that are not irrelevant. A citation is irrelevant
/// when it does not support the sentence alone while the remaining
/// citations still do.
pub fn citation_precision_binary(
    answer: &CitedAnswer,
    passages: &[Passage],
    scorer: &dyn Scorer,
    threshold: f64,
) -> Result<f64, GateError> {
    let total = answer.citation_count();
    if total == 0 {
        log::warn!("answer has no citations; binary citation precision is 0");
        return Ok(0.0);
    }
    let per = per_citation_scores(answer, passages, scorer)?;
    let relevant = per
        .iter()
        .flatten()
        .filter(|(alone, rest)| !(bin(*alone, threshold) == 0 && bin(*rest, threshold) == 1))
        .count();
    Ok(relevant as f64 / total as f64)
}

fn bin(v: f64, threshold: f64) -> u8 {
    binarize(ConsistencyScore::new(v).expect("scores lie in [0, 1]"), threshold)
}

fn fact_hits(facts: &[String], evidence: &str, scorer: &dyn Scorer, threshold: f64) -> Result<Vec<bool>, GateError> {
    let pairs: Vec<(String, String)> = facts.iter().map(|f| (f.clone(), evidence.to_string())).collect();
    Ok(scorer
        .score_batch(&pairs)
        .map_err(GateError::Facts)?
        .into_iter()
        .map(|s| binarize(s, threshold) == 1)
        .collect())
}

/// Fraction of facts supported by the answer text. No facts means
/// vacuous coverage (1.0).
pub fn correctness(answer: &CitedAnswer, facts: &[String], scorer: &dyn Scorer, fact_threshold: f64) -> Result<f64, GateError> {
    if facts.is_empty() {
        log::warn!("no facts given; correctness is vacuously 1");
        return Ok(1.0);
    }
    let hits = fact_hits(facts, &answer.text_without_citations(), scorer, fact_threshold)?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / facts.len() as f64)
}

/// Like [`correctness`], but a fact only counts if the retrieved passages
/// support it as well.
pub fn grounded_correctness(
    answer: &CitedAnswer,
    facts: &[String],
    passages: &[Passage],
    scorer: &dyn Scorer,
    fact_threshold: f64,
) -> Result<f64, GateError> {
    if facts.is_empty() {
        log::warn!("no facts given; grounded correctness is vacuously 1");
        return Ok(1.0);
    }
    let in_answer = fact_hits(facts, &answer.text_without_citations(), scorer, fact_threshold)?;
    let in_passages = fact_hits(facts, &all_evidence(passages), scorer, fact_threshold)?;
    let both = in_answer.iter().zip(&in_passages).filter(|(a, p)| **a && **p).count();
    Ok(both as f64 / facts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub citation_recall: f64,
    pub citation_precision: f64,
    pub correctness: f64,
    pub grounded_correctness: f64,
    pub passed: bool,
    pub theta_used: f64,
}

impl GateMetrics {
    /// Whether all three gated metrics strictly exceed `theta`.
    pub fn passes(&self, theta: f64) -> bool {
        self.citation_recall > theta && self.citation_precision > theta && self.correctness > theta
    }

    pub fn at_theta(&self, theta: f64) -> GateMetrics {
        GateMetrics {
            passed: self.passes(theta),
            theta_used: theta,
            ..self.clone()
        }
    }
}

pub fn quality_gate(
    answer: &CitedAnswer,
    facts: &[String],
    passages: &[Passage],
    scorer: &dyn Scorer,
    theta: f64,
    fact_threshold: f64,
) -> Result<GateMetrics, GateError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(GateError::Threshold(theta));
    }
    let m = GateMetrics {
        citation_recall: citation_recall(answer, passages, scorer)?,
        citation_precision: citation_precision(answer, passages, scorer)?,
        correctness: correctness(answer, facts, scorer, fact_threshold)?,
        grounded_correctness: grounded_correctness(answer, facts, passages, scorer, fact_threshold)?,
        passed: false,
        theta_used: theta,
    };
    Ok(m.at_theta(theta))
}

/// Descending threshold schedule: `start`, `start - step`, ... down to
/// `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSchedule {
    pub start: f64,
    pub step: f64,
    pub floor: f64,
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        ThetaSchedule {
            start: 0.9,
            step: 0.1,
            floor: 0.1,
        }
    }
}

impl ThetaSchedule {
    /// Thresholds in the order they are tried. Values are rounded to nine
    /// decimals so repeated subtraction does not drift (0.9 - 0.1 is 0.8).
    pub fn thresholds(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut k = 0u32;
        loop {
            let t = ((self.start - f64::from(k) * self.step) * 1e9).round() / 1e9;
            if t < self.floor - 1e-12 || t <= 0.0 {
                break;
            }
            out.push(t);
            k += 1;
            if self.step <= 0.0 {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub theta: f64,
    /// Indices into the candidate list, ascending.
    pub passing: Vec<usize>,
    /// True when even the last threshold admits fewer than `min_size`.
    pub undersized: bool,
}

/// Lowers the threshold along `schedule` until at least `min_size`
/// candidates pass.
pub fn dynamic_threshold(metrics: &[GateMetrics], schedule: &ThetaSchedule, min_size: usize) -> ThresholdOutcome {
    let thresholds = schedule.thresholds();
    let mut last = ThresholdOutcome {
        theta: schedule.floor,
        passing: Vec::new(),
        undersized: true,
    };
    for theta in thresholds {
        let passing: Vec<usize> = metrics
            .iter()
            .enumerate()
            .filter(|(_, m)| m.passes(theta))
            .map(|(i, _)| i)
            .collect();
        if passing.len() >= min_size {
            return ThresholdOutcome {
                theta,
                passing,
                undersized: false,
            };
        }
        last = ThresholdOutcome {
            theta,
            passing,
            undersized: true,
        };
    }
    log::warn!(
        "only {} candidates pass at the lowest threshold {}; wanted {min_size}",
        last.passing.len(),
        last.theta
    );
    last
}

/// Evaluation metrics for one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub citation_recall: f64,
    pub citation_precision: f64,
    pub citation_recall_binary: f64,
    pub citation_precision_binary: f64,
    pub citation_f1: f64,
    pub correctness: f64,
    pub grounded_correctness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: Vec<EvalRecord>,
    pub aggregate: EvalAggregate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalAggregate {
    pub count: usize,
    pub citation_recall: f64,
    pub citation_precision: f64,
    pub citation_recall_binary: f64,
    pub citation_precision_binary: f64,
    pub citation_f1: f64,
    pub correctness: f64,
    pub grounded_correctness: f64,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn evaluate_answer(
    instance_id: &str,
    answer: &CitedAnswer,
    facts: &[String],
    passages: &[Passage],
    scorer: &dyn Scorer,
    threshold: f64,
) -> Result<EvalRecord, GateError> {
    let rb = citation_recall_binary(answer, passages, scorer, threshold)?;
    let pb = citation_precision_binary(answer, passages, scorer, threshold)?;
    Ok(EvalRecord {
        instance_id: instance_id.to_string(),
        citation_recall: citation_recall(answer, passages, scorer)?,
        citation_precision: citation_precision(answer, passages, scorer)?,
        citation_recall_binary: rb,
        citation_precision_binary: pb,
        citation_f1: harmonic_mean(rb, pb),
        correctness: correctness(answer, facts, scorer, threshold)?,
        grounded_correctness: grounded_correctness(answer, facts, passages, scorer, threshold)?,
    })
}

impl EvalReport {
    pub fn from_records(instances: Vec<EvalRecord>) -> Self {
        let n = instances.len();
        let mean = |f: fn(&EvalRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                instances.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let aggregate = EvalAggregate {
            count: n,
            citation_recall: mean(|r| r.citation_recall),
            citation_precision: mean(|r| r.citation_precision),
            citation_recall_binary: mean(|r| r.citation_recall_binary),
            citation_precision_binary: mean(|r| r.citation_precision_binary),
            citation_f1: mean(|r| r.citation_f1),
            correctness: mean(|r| r.correctness),
            grounded_correctness: mean(|r| r.grounded_correctness),
        };
        EvalReport { instances, aggregate }
    }
}
