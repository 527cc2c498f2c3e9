//! Factual-consistency scorers.
//!
//! A [`Scorer`] maps a (claim, evidence) pair to a value in `[0, 1]`. The
//! built-in [`LexicalScorer`] is a deterministic content-word overlap
//! measure; [`RemoteScorer`] talks to a scoring service over HTTP; and
//! [`CachedScorer`] memoizes either one.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("claim is empty")]
    EmptyClaim,
    #[error("scoring service unavailable: {0}")]
    Retryable(String),
    #[error("scoring protocol error: {0}")]
    Protocol(String),
    #[error("invalid scorer configuration: {0}")]
    Config(String),
}

impl ScoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Retryable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConsistencyScore(f64);

impl ConsistencyScore {
    pub const ZERO: ConsistencyScore = ConsistencyScore(0.0);

    /// Returns `None` unless `value` lies in `[0, 1]`.
    pub fn new(value: f64) -> Option<Self> {
        (0.0..=1.0).contains(&value).then_some(ConsistencyScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// 1 iff `score >= threshold`; ties count as consistent.
pub fn binarize(score: ConsistencyScore, threshold: f64) -> u8 {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    u8::from(score.0 >= threshold)
}

pub trait Scorer: Send + Sync {
    fn score(&self, claim: &str, evidence: &str) -> Result<ConsistencyScore, ScoreError>;

    /// Scores many pairs; output order follows input order.
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        pairs.iter().map(|(c, e)| self.score(c, e)).collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn score(&self, claim: &str, evidence: &str) -> Result<ConsistencyScore, ScoreError> {
        (**self).score(claim, evidence)
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        (**self).score_batch(pairs)
    }
}

/// Shared precondition and base case for every scorer: the claim must be
/// nonempty, and empty evidence supports nothing.
fn base_case(claim: &str, evidence: &str) -> Result<Option<ConsistencyScore>, ScoreError> {
    if claim.trim().is_empty() {
        return Err(ScoreError::EmptyClaim);
    }
    Ok(evidence.trim().is_empty().then_some(ConsistencyScore::ZERO))
}

/// Joins the given passages, in ascending index order, into one evidence
/// string (title, then text). Unknown indices are ignored.
pub fn evidence_for(passages: &[Passage], indices: &BTreeSet<usize>) -> String {
    indices
        .iter()
        .filter_map(|k| passages.iter().find(|p| p.index == *k))
        .map(|p| format!("{}\n{}", p.title, p.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn all_evidence(passages: &[Passage]) -> String {
    let all: BTreeSet<usize> = passages.iter().map(|p| p.index).collect();
    evidence_for(passages, &all)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "because",
    "been", "before", "being", "between", "both", "but", "by", "can", "could", "did", "do", "does",
    "during", "each", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if",
    "in", "into", "is", "it", "its", "itself", "more", "most", "much", "no", "nor", "not", "of",
    "on", "once", "only", "or", "other", "our", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where",
    "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

pub fn content_words(text: &str) -> BTreeSet<String> {
    words(text).filter(|w| !STOPWORDS.contains(&w.as_str())).collect()
}

/// Fraction of the claim's content words (case-folded, stopwords removed)
/// that occur anywhere in the evidence. A claim without content words
/// scores 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl Scorer for LexicalScorer {
    fn score(&self, claim: &str, evidence: &str) -> Result<ConsistencyScore, ScoreError> {
        if let Some(s) = base_case(claim, evidence)? {
            return Ok(s);
        }
        Ok(overlap(claim, &words(evidence).collect()))
    }

    /// Builds each distinct evidence vocabulary once per batch.
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        let mut vocab: HashMap<&str, HashSet<String>> = HashMap::new();
        pairs
            .iter()
            .map(|(claim, evidence)| {
                if let Some(s) = base_case(claim, evidence)? {
                    return Ok(s);
                }
                let have = vocab
                    .entry(evidence.as_str())
                    .or_insert_with(|| words(evidence).collect());
                Ok(overlap(claim, have))
            })
            .collect()
    }
}

fn overlap(claim: &str, have: &HashSet<String>) -> ConsistencyScore {
    let wanted = content_words(claim);
    if wanted.is_empty() {
        return ConsistencyScore::ZERO;
    }
    let hits = wanted.iter().filter(|w| have.contains(*w)).count();
    ConsistencyScore(hits as f64 / wanted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Lexical,
    Remote,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_true() -> bool {
    true
}
fn default_in_flight() -> usize {
    4
}
fn default_max_batch() -> usize {
    64
}
fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_threshold")]
    pub binarize_threshold: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_true")]
    pub cache_enabled: bool,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::Lexical,
            endpoint: None,
            binarize_threshold: default_threshold(),
            timeout_ms: default_timeout_ms(),
            cache_enabled: true,
            max_in_flight: default_in_flight(),
            max_batch: default_max_batch(),
            retries: default_retries(),
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(ScoreError::Config(format!(
                "binarize_threshold must lie in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        match (self.kind, &self.endpoint) {
            (ScorerKind::Remote, None) => Err(ScoreError::Config("remote scorer needs an endpoint".into())),
            (ScorerKind::Lexical, Some(_)) => {
                Err(ScoreError::Config("endpoint is only valid for the remote scorer".into()))
            }
            _ if self.max_in_flight == 0 || self.max_batch == 0 => {
                Err(ScoreError::Config("max_in_flight and max_batch must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Builds the configured scorer, wrapped in a cache when enabled.
    pub fn build(&self) -> Result<Arc<dyn Scorer>, ScoreError> {
        self.validate()?;
        let inner: Arc<dyn Scorer> = match self.kind {
            ScorerKind::Lexical => Arc::new(LexicalScorer),
            ScorerKind::Remote => Arc::new(RemoteScorer::new(self)?),
        };
        Ok(if self.cache_enabled {
            Arc::new(CachedScorer::new(inner))
        } else {
            inner
        })
    }
}

/// Memoizes scores by (claim, evidence). Entries are inserted whole after
/// the inner scorer returns, so readers never see partial results.
pub struct CachedScorer<S> {
    inner: S,
    cache: RwLock<HashMap<(String, String), ConsistencyScore>>,
}

impl<S: Scorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        CachedScorer {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, claim: &str, evidence: &str) -> Option<ConsistencyScore> {
        // Borrowed tuple lookup is not expressible with a (String, String)
        // key, so allocate the probe.
        self.cache
            .read()
            .unwrap()
            .get(&(claim.to_string(), evidence.to_string()))
            .copied()
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn score(&self, claim: &str, evidence: &str) -> Result<ConsistencyScore, ScoreError> {
        if let Some(s) = self.lookup(claim, evidence) {
            return Ok(s);
        }
        let s = self.inner.score(claim, evidence)?;
        self.cache
            .write()
            .unwrap()
            .insert((claim.to_string(), evidence.to_string()), s);
        Ok(s)
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        let mut missing: Vec<(String, String)> = Vec::new();
        {
            let cache = self.cache.read().unwrap();
            let mut seen = HashSet::new();
            for p in pairs {
                if !cache.contains_key(p) && seen.insert(p) {
                    missing.push(p.clone());
                }
            }
        }
        if !missing.is_empty() {
            let scores = self.inner.score_batch(&missing)?;
            let mut cache = self.cache.write().unwrap();
            for (p, s) in missing.into_iter().zip(scores) {
                cache.insert(p, s);
            }
        }
        let cache = self.cache.read().unwrap();
        Ok(pairs.iter().map(|p| cache[p]).collect())
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cond.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Serialize)]
pub struct WirePair<'a> {
    pub claim: &'a str,
    pub evidence: &'a str,
}

#[derive(Serialize)]
pub struct WireRequest<'a> {
    pub pairs: Vec<WirePair<'a>>,
}

#[derive(Deserialize)]
struct WireResponse {
    scores: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct WireError {
    error: String,
}

/// Validates a `/score` response body against the request size.
pub fn decode_response(body: &str, expected: usize) -> Result<Vec<ConsistencyScore>, ScoreError> {
    let resp: WireResponse =
        serde_json::from_str(body).map_err(|e| ScoreError::Protocol(format!("bad response body: {e}")))?;
    if resp.scores.len() != expected {
        return Err(ScoreError::Protocol(format!(
            "expected {expected} scores, got {}",
            resp.scores.len()
        )));
    }
    resp.scores
        .iter()
        .map(|v| {
            v.as_f64()
                .and_then(ConsistencyScore::new)
                .ok_or_else(|| ScoreError::Protocol(format!("score {v} is not a number in [0, 1]")))
        })
        .collect()
}

/// Client for the `/score` batch protocol.
pub struct RemoteScorer {
    url: String,
    agent: ureq::Agent,
    slots: Slots,
    max_batch: usize,
    retries: u32,
}

impl RemoteScorer {
    pub fn new(config: &ScorerConfig) -> Result<Self, ScoreError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| ScoreError::Config("remote scorer needs an endpoint".into()))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Ok(RemoteScorer {
            url: format!("{}/score", endpoint.trim_end_matches('/')),
            agent,
            slots: Slots {
                free: Mutex::new(config.max_in_flight.max(1)),
                cond: Condvar::new(),
            },
            max_batch: config.max_batch.max(1),
            retries: config.retries,
        })
    }

    fn post(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        let body = WireRequest {
            pairs: pairs
                .iter()
                .map(|(c, e)| WirePair { claim: c, evidence: e })
                .collect(),
        };
        let _slot = self.slots.acquire();
        match self.agent.post(&self.url).send_json(&body) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| ScoreError::Retryable(format!("reading response: {e}")))?;
                decode_response(&text, pairs.len())
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = serde_json::from_str::<WireError>(&text)
                    .map(|e| e.error)
                    .unwrap_or(text);
                if code >= 500 {
                    Err(ScoreError::Retryable(format!("HTTP {code}: {msg}")))
                } else {
                    Err(ScoreError::Protocol(format!("HTTP {code}: {msg}")))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(ScoreError::Retryable(t.to_string())),
        }
    }

    fn post_with_retries(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        let mut attempt = 0;
        loop {
            match self.post(pairs) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("retrying scoring batch (attempt {attempt}): {e}");
                    std::thread::sleep(Duration::from_millis(50 << attempt));
                }
                other => return other,
            }
        }
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, claim: &str, evidence: &str) -> Result<ConsistencyScore, ScoreError> {
        Ok(self.score_batch(&[(claim.to_string(), evidence.to_string())])?[0])
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<ConsistencyScore>, ScoreError> {
        let mut out = vec![ConsistencyScore::ZERO; pairs.len()];
        let mut to_send = Vec::new();
        let mut positions = Vec::new();
        for (i, (c, e)) in pairs.iter().enumerate() {
            match base_case(c, e)? {
                Some(s) => out[i] = s,
                None => {
                    to_send.push((c.clone(), e.clone()));
                    positions.push(i);
                }
            }
        }
        for (chunk, pos) in to_send.chunks(self.max_batch).zip(positions.chunks(self.max_batch)) {
            for (s, &i) in self.post_with_retries(chunk)?.into_iter().zip(pos) {
                out[i] = s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lexical_overlap() {
        let s = LexicalScorer
            .score("Paris is the capital of France.", "Paris lies in France.")
            .unwrap();
        assert!((s.value() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(LexicalScorer.score("anything here", "").unwrap().value(), 0.0);
        let full = LexicalScorer
            .score("Paris capital", "The capital is Paris.")
            .unwrap();
        assert_eq!(full.value(), 1.0);
        assert_eq!(LexicalScorer.score("the of", "the of").unwrap().value(), 0.0);
        assert_eq!(LexicalScorer.score("  ", "x"), Err(ScoreError::EmptyClaim));
    }

    #[test]
    fn binarize_ties_pass() {
        let s = |v| ConsistencyScore::new(v).unwrap();
        assert_eq!(binarize(s(0.9), 0.5), 1);
        assert_eq!(binarize(s(0.5), 0.5), 1);
        assert_eq!(binarize(s(0.49), 0.5), 0);
    }

    #[test]
    fn score_range_is_enforced() {
        assert!(ConsistencyScore::new(1.5).is_none());
        assert!(ConsistencyScore::new(f64::NAN).is_none());
        assert!(decode_response(r#"{"scores":[0.2, 1.2]}"#, 2).is_err());
        assert!(decode_response(r#"{"scores":[0.2]}"#, 2).is_err());
        assert!(decode_response("not json", 1).is_err());
        assert_eq!(decode_response(r#"{"scores":[0, 1]}"#, 2).unwrap()[1].value(), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = ScorerConfig::default();
        assert!(c.validate().is_ok());
        c.kind = ScorerKind::Remote;
        assert!(c.validate().is_err());
        c.endpoint = Some("http://127.0.0.1:1".into());
        assert!(c.validate().is_ok());
        c.binarize_threshold = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn evidence_is_index_ordered() {
        let p = |i, t: &str| Passage {
            index: i,
            title: format!("T{i}"),
            text: t.into(),
            retrieval_score: 1.0,
        };
        let ps = vec![p(1, "one"), p(2, "two"), p(3, "three")];
        let ev = evidence_for(&ps, &[3, 1].into_iter().collect());
        assert_eq!(ev, "T1\none\n\nT3\nthree");
        assert_eq!(evidence_for(&ps, &BTreeSet::new()), "");
    }

    #[test]
    fn cache_counts_entries() {
        let c = CachedScorer::new(LexicalScorer);
        let pairs = vec![("a b".to_string(), "a".to_string()); 3];
        c.score_batch(&pairs).unwrap();
        assert_eq!(c.len(), 1);
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval(claim in "\\PC{1,40}", evidence in "\\PC{0,60}") {
            if let Ok(s) = LexicalScorer.score(&claim, &evidence) {
                prop_assert!((0.0..=1.0).contains(&s.value()));
            }
        }

        #[test]
        fn adding_claim_to_evidence_never_hurts(claim in "[a-z ]{1,30}", evidence in "[a-z ]{0,40}") {
            prop_assume!(!claim.trim().is_empty());
            let before = LexicalScorer.score(&claim, &evidence).unwrap();
            let after = LexicalScorer.score(&claim, &format!("{evidence} {claim}")).unwrap();
            prop_assert!(after >= before);
        }

        #[test]
        fn cache_is_transparent(claims in proptest::collection::vec("[a-c ]{1,8}", 1..8), evidence in "[a-c ]{0,10}") {
            let cached = CachedScorer::new(LexicalScorer);
            let pairs: Vec<_> = claims.iter()
                .filter(|c| !c.trim().is_empty())
                .map(|c| (c.clone(), evidence.clone()))
                .collect();
            let a = cached.score_batch(&pairs).unwrap();
            let b = LexicalScorer.score_batch(&pairs).unwrap();
            let again = cached.score_batch(&pairs).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a, again);
        }
    }
}
