#![allow(dead_code)]

use std::path::PathBuf;

use citefocus::corpus::{load_candidates, load_instances, CandidateRecord, Instance};
use citefocus::fcm::{ConsistencyScore, ScoreError, Scorer};
use sha2::{Digest, Sha256};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn instances() -> Vec<Instance> {
    load_instances(&fixture("instances.jsonl")).unwrap()
}

pub fn candidates() -> Vec<CandidateRecord> {
    load_candidates(&fixture("candidates.jsonl")).unwrap()
}

/// Pseudo-random but fixed scores in multiples of 1/8, keyed on the pair.
pub struct HashScorer {
    pub salt: u64,
}

impl Scorer for HashScorer {
    fn score(&self, claim: &str, evidence: &str) -> Result<ConsistencyScore, ScoreError> {
        if claim.trim().is_empty() {
            return Err(ScoreError::EmptyClaim);
        }
        if evidence.trim().is_empty() {
            return Ok(ConsistencyScore::ZERO);
        }
        let mut h = Sha256::new();
        h.update(self.salt.to_le_bytes());
        h.update(claim.as_bytes());
        h.update([0]);
        h.update(evidence.as_bytes());
        let byte = h.finalize()[0];
        Ok(ConsistencyScore::new(f64::from(byte % 9) / 8.0).unwrap())
    }
}
