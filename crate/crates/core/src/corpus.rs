//! Instances, cited answers and the JSONL formats they travel in.
//!
//! Answers are plain text with inline `[k]` markers pointing at 1-based
//! passage indices. [`parse_answer`] splits such text into sentences and
//! collects each sentence's citation set.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: missing required field \"{field}\"")]
    MissingField { line: usize, field: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("answer contains no sentences")]
    NoSentences,
    #[error("answer text is empty")]
    EmptyAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    /// 1-based position in the owning instance.
    pub index: usize,
    pub title: String,
    pub text: String,
    pub retrieval_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub question: String,
    pub passages: Vec<Passage>,
    pub facts: Option<Vec<String>>,
    pub gold_answer: Option<String>,
}

impl Instance {
    pub fn valid_indices(&self) -> BTreeSet<usize> {
        self.passages.iter().map(|p| p.index).collect()
    }

    pub fn facts(&self) -> &[String] {
        self.facts.as_deref().unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text_without_citations: String,
    pub citations: BTreeSet<usize>,
    /// Byte range into [`CitedAnswer::full_text`].
    pub raw_span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitedAnswer {
    pub sentences: Vec<Sentence>,
    pub full_text: String,
}

impl CitedAnswer {
    /// The answer with every citation marker removed, sentences joined by a
    /// single space.
    pub fn text_without_citations(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text_without_citations.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn citation_count(&self) -> usize {
        self.sentences.iter().map(|s| s.citations.len()).sum()
    }

    /// Re-renders the answer with markers in canonical position: ascending,
    /// directly before the sentence's terminal punctuation.
    pub fn render_canonical(&self) -> String {
        self.sentences
            .iter()
            .map(render_sentence)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Builds an answer from sentence texts and citation sets by rendering
    /// and re-parsing, so spans always refer to the rendered text.
    pub fn from_parts(parts: &[(String, BTreeSet<usize>)]) -> Result<Self, CorpusError> {
        let text = parts
            .iter()
            .map(|(t, c)| {
                render_sentence(&Sentence {
                    text_without_citations: t.clone(),
                    citations: c.clone(),
                    raw_span: 0..0,
                })
            })
            .collect::<Vec<_>>()
            .join(" ");
        let valid: BTreeSet<usize> = parts.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        Ok(parse_answer(&text, &valid)?.answer)
    }
}

fn render_sentence(s: &Sentence) -> String {
    let markers: String = s.citations.iter().map(|k| format!("[{k}]")).collect();
    if markers.is_empty() {
        return s.text_without_citations.clone();
    }
    let text = s.text_without_citations.as_str();
    let body_end = text.trim_end_matches(is_terminal).len();
    let (body, punct) = text.split_at(body_end);
    if body.is_empty() {
        // Punctuation-only sentence; keep markers after it so they still
        // attach backwards.
        format!("{punct} {markers}")
    } else {
        format!("{body} {markers}{punct}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    InvalidCitation { sentence: usize, index: String },
    DroppedSentence { span: Range<usize> },
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::InvalidCitation { sentence, index } => {
                write!(f, "sentence {sentence}: citation [{index}] names no passage")
            }
            ParseWarning::DroppedSentence { span } => {
                write!(f, "bytes {}..{}: sentence empty after stripping citations", span.start, span.end)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub answer: CitedAnswer,
    pub warnings: Vec<ParseWarning>,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | ')')
}

/// Matches a `[digits]` marker at the start of `s`, returning its byte length.
pub(crate) fn marker_len(s: &str) -> Option<usize> {
    let rest = s.strip_prefix('[')?;
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b']') {
        return None;
    }
    Some(digits + 2)
}

/// Finds the end of each sentence: a run of terminal punctuation, then any
/// citation markers (optionally separated by whitespace) and closing quotes,
/// followed by whitespace or end of text.
fn sentence_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().unwrap();
        if !is_terminal(c) {
            i += c.len_utf8();
            continue;
        }
        let mut j = i + text[i..].len() - text[i..].trim_start_matches(is_terminal).len();
        loop {
            let rest = &text[j..];
            let ws = rest.len() - rest.trim_start().len();
            if let Some(n) = marker_len(&rest[ws..]) {
                j += ws + n;
                continue;
            }
            match rest.chars().next() {
                Some(q) if is_closing_quote(q) => j += q.len_utf8(),
                _ => break,
            }
        }
        let at_boundary = text[j..].chars().next().map_or(true, char::is_whitespace);
        if at_boundary {
            ends.push(j);
        }
        i = j.max(i + 1);
    }
    if ends.last() != Some(&text.len()) {
        ends.push(text.len());
    }
    ends
}

/// Splits `full_text` into cited sentences.
///
/// Markers naming an index outside `valid_indices` are dropped with a
/// warning. Segments that are empty once markers are removed are merged
/// into a neighbouring sentence so spans keep partitioning the text.
pub fn parse_answer(
    full_text: &str,
    valid_indices: &BTreeSet<usize>,
) -> Result<ParsedAnswer, CorpusError> {
    if full_text.is_empty() {
        return Err(CorpusError::EmptyAnswer);
    }
    let mut warnings = Vec::new();
    let mut segments: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    for end in sentence_ends(full_text) {
        if end > start {
            segments.push(start..end);
            start = end;
        }
    }

    // Merge segments that strip to nothing into the previous sentence, or
    // into the next one when there is no previous sentence.
    let mut merged: Vec<Range<usize>> = Vec::new();
    let mut pending_prefix: Option<usize> = None;
    for seg in segments {
        let stripped = strip_citations(&full_text[seg.clone()]);
        if stripped.is_empty() {
            if !full_text[seg.clone()].trim().is_empty() {
                warnings.push(ParseWarning::DroppedSentence { span: seg.clone() });
            }
            match merged.last_mut() {
                Some(prev) => prev.end = seg.end,
                None => {
                    pending_prefix.get_or_insert(seg.start);
                }
            }
            continue;
        }
        let begin = pending_prefix.take().unwrap_or(seg.start);
        merged.push(begin..seg.end);
    }
    if merged.is_empty() {
        return Err(CorpusError::NoSentences);
    }

    let sentences = merged
        .into_iter()
        .enumerate()
        .map(|(si, span)| {
            let raw = &full_text[span.clone()];
            let mut citations = BTreeSet::new();
            for marker in find_markers(raw) {
                let digits = &marker[1..marker.len() - 1];
                match digits.parse::<usize>() {
                    Ok(k) if valid_indices.contains(&k) => {
                        citations.insert(k);
                    }
                    _ => warnings.push(ParseWarning::InvalidCitation {
                        sentence: si,
                        index: digits.to_string(),
                    }),
                }
            }
            Sentence {
                text_without_citations: strip_citations(raw),
                citations,
                raw_span: span,
            }
        })
        .collect();

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ParsedAnswer {
        answer: CitedAnswer {
            sentences,
            full_text: full_text.to_string(),
        },
        warnings,
    })
}

fn find_markers(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        if let Some(n) = marker_len(&text[i..]) {
            out.push(&text[i..i + n]);
            i += n;
        } else {
            i += text[i..].chars().next().unwrap().len_utf8();
        }
    }
    out
}

/// Removes every `[k]` marker together with the whitespace before it, then
/// collapses remaining whitespace runs to single spaces, drops spaces in
/// front of terminal punctuation and trims the ends.
pub fn strip_citations(text: &str) -> String {
    let mut kept = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        if let Some(n) = marker_len(&text[i..]) {
            let trimmed = kept.trim_end().len();
            kept.truncate(trimmed);
            i += n;
        } else {
            let c = text[i..].chars().next().unwrap();
            kept.push(c);
            i += c.len_utf8();
        }
    }
    let collapsed = kept.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = String::with_capacity(collapsed.len());
    for c in collapsed.chars() {
        if is_terminal(c) && out.ends_with(' ') {
            out.pop();
        }
        out.push(c);
    }
    out
}

#[derive(Deserialize)]
struct RawPassage {
    title: Option<String>,
    text: Option<String>,
    retrieval_score: Option<f64>,
}

#[derive(Deserialize)]
struct RawInstance {
    id: Option<String>,
    question: Option<String>,
    passages: Option<Vec<RawPassage>>,
    facts: Option<Vec<String>>,
    gold_answer: Option<String>,
}

fn require<T>(v: Option<T>, line: usize, field: &str) -> Result<T, CorpusError> {
    v.ok_or_else(|| CorpusError::MissingField {
        line,
        field: field.to_string(),
    })
}

/// Parses one instance line. `line` is 1-based and only used in errors.
pub fn parse_instance_line(text: &str, line: usize) -> Result<Instance, CorpusError> {
    let raw: RawInstance = serde_json::from_str(text).map_err(|e| CorpusError::Json {
        line,
        message: e.to_string(),
    })?;
    let id = require(raw.id, line, "id")?;
    let question = require(raw.question, line, "question")?;
    let raw_passages = require(raw.passages, line, "passages")?;
    if raw_passages.is_empty() {
        return Err(CorpusError::Invalid {
            line,
            message: "\"passages\" is empty".into(),
        });
    }
    let mut passages = Vec::with_capacity(raw_passages.len());
    for (i, p) in raw_passages.into_iter().enumerate() {
        let text = require(p.text, line, "passages.text")?;
        let retrieval_score = require(p.retrieval_score, line, "passages.retrieval_score")?;
        if text.trim().is_empty() {
            return Err(CorpusError::Invalid {
                line,
                message: format!("passage {} has empty text", i + 1),
            });
        }
        if !(retrieval_score >= 0.0 && retrieval_score.is_finite()) {
            return Err(CorpusError::Invalid {
                line,
                message: format!("passage {} has a negative or non-finite retrieval_score", i + 1),
            });
        }
        passages.push(Passage {
            index: i + 1,
            title: require(p.title, line, "passages.title")?,
            text,
            retrieval_score,
        });
    }
    Ok(Instance {
        id,
        question,
        passages,
        facts: raw.facts,
        gold_answer: raw.gold_answer,
    })
}

pub fn parse_instances(content: &str) -> Result<Vec<Instance>, CorpusError> {
    jsonl_lines(content)
        .map(|(line, text)| parse_instance_line(text, line))
        .collect()
}

/// Reads an instance JSONL file. Blank lines are skipped; line numbers in
/// errors count them.
pub fn load_instances(path: &Path) -> Result<Vec<Instance>, CorpusError> {
    parse_instances(&read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub instance_id: String,
    pub answer: String,
}

pub fn parse_candidate_line(text: &str, line: usize) -> Result<CandidateRecord, CorpusError> {
    #[derive(Deserialize)]
    struct Raw {
        instance_id: Option<String>,
        answer: Option<String>,
    }
    let raw: Raw = serde_json::from_str(text).map_err(|e| CorpusError::Json {
        line,
        message: e.to_string(),
    })?;
    Ok(CandidateRecord {
        instance_id: require(raw.instance_id, line, "instance_id")?,
        answer: require(raw.answer, line, "answer")?,
    })
}

pub fn parse_candidates(content: &str) -> Result<Vec<CandidateRecord>, CorpusError> {
    jsonl_lines(content)
        .map(|(line, text)| parse_candidate_line(text, line))
        .collect()
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateRecord>, CorpusError> {
    parse_candidates(&read(path)?)
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn jsonl_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Writes `items` as JSONL, one compact object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn two_sentences_with_citations() {
        let p = parse_answer("A is B [1]. C is D [2][3].", &set(&[1, 2, 3])).unwrap();
        let s = &p.answer.sentences;
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].citations, set(&[1]));
        assert_eq!(s[1].citations, set(&[2, 3]));
        assert_eq!(s[0].text_without_citations, "A is B.");
        assert_eq!(s[1].text_without_citations, "C is D.");
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn no_markers() {
        let p = parse_answer("Hello.", &set(&[1])).unwrap();
        assert_eq!(p.answer.sentences.len(), 1);
        assert!(p.answer.sentences[0].citations.is_empty());
    }

    #[test]
    fn invalid_marker_warns() {
        let p = parse_answer("X [9].", &set(&[1, 2, 3])).unwrap();
        assert_eq!(p.answer.sentences.len(), 1);
        assert!(p.answer.sentences[0].citations.is_empty());
        assert_eq!(p.warnings.len(), 1);
        assert!(matches!(p.warnings[0], ParseWarning::InvalidCitation { .. }));
    }

    #[test]
    fn markers_after_punctuation_attach_backwards() {
        let p = parse_answer("First claim. [2] Second claim [1].", &set(&[1, 2])).unwrap();
        let s = &p.answer.sentences;
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].citations, set(&[2]));
        assert_eq!(s[1].citations, set(&[1]));
    }

    #[test]
    fn decimals_do_not_split() {
        let p = parse_answer("It rained 3.5 m in 1861 [1].", &set(&[1])).unwrap();
        assert_eq!(p.answer.sentences.len(), 1);
    }

    #[test]
    fn closing_quote_attaches() {
        let p = parse_answer("He said \"go.\" Then left.", &set(&[])).unwrap();
        assert_eq!(p.answer.sentences.len(), 2);
        assert_eq!(p.answer.sentences[0].text_without_citations, "He said \"go.\"");
    }

    #[test]
    fn marker_only_tail_is_merged() {
        let p = parse_answer("Claim. [1]x", &set(&[1])).unwrap();
        assert_eq!(p.answer.sentences.len(), 1);
        assert_eq!(p.answer.sentences[0].citations, set(&[1]));
        let p = parse_answer("[1]", &set(&[1]));
        assert!(matches!(p, Err(CorpusError::NoSentences)));
        let p = parse_answer("Claim one. [1][2]?", &set(&[1, 2])).unwrap();
        let spans: Vec<_> = p.answer.sentences.iter().map(|s| s.raw_span.clone()).collect();
        assert_eq!(spans.last().unwrap().end, p.answer.full_text.len());
    }

    #[test]
    fn empty_and_whitespace_fail() {
        assert!(matches!(parse_answer("", &set(&[])), Err(CorpusError::EmptyAnswer)));
        assert!(matches!(parse_answer("   ", &set(&[])), Err(CorpusError::NoSentences)));
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_citations("B was C [1][2]."), "B was C.");
        assert_eq!(strip_citations("no markers"), "no markers");
        assert_eq!(strip_citations("A [1] B [2] C"), "A B C");
        assert_eq!(strip_citations("[x] stays"), "[x] stays");
    }

    #[test]
    fn canonical_rendering() {
        let p = parse_answer("A is B. [2][1] C!", &set(&[1, 2])).unwrap();
        assert_eq!(p.answer.render_canonical(), "A is B [1][2]. C!");
    }

    #[test]
    fn instance_lines() {
        let good = r#"{"id":"q1","question":"Where?","passages":[{"title":"T","text":"body","retrieval_score":1.5}]}"#;
        let inst = parse_instance_line(good, 1).unwrap();
        assert_eq!(inst.passages[0].index, 1);
        assert!(inst.facts.is_none());

        let missing = r#"{"id":"q1","question":"Where?"}"#;
        match parse_instance_line(missing, 1) {
            Err(CorpusError::MissingField { line: 1, field }) => assert_eq!(field, "passages"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_instance_line("{nope", 3), Err(CorpusError::Json { line: 3, .. })));
        assert!(parse_instances("").unwrap().is_empty());
    }

    #[test]
    fn load_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        let line = |id: &str| {
            format!(r#"{{"id":"{id}","question":"q","passages":[{{"title":"t","text":"x","retrieval_score":1}}]}}"#)
        };
        fs::write(&path, format!("{}\n{}\n", line("b"), line("a"))).unwrap();
        let got = load_instances(&path).unwrap();
        assert_eq!(got.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["b", "a"]);
        assert!(matches!(
            load_instances(&dir.path().join("missing.jsonl")),
            Err(CorpusError::Io { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn answer_text() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                prop_oneof![
                    "[a-zA-Z]{1,6}",
                    Just(" ".to_string()),
                    Just(". ".to_string()),
                    Just("?".to_string()),
                    Just("\"".to_string()),
                    (0usize..6).prop_map(|k| format!("[{k}]")),
                    Just(" [1]".to_string()),
                ],
                1..24,
            )
            .prop_map(|v| v.concat())
        }

        proptest! {
            #[test]
            fn spans_partition_text(text in answer_text()) {
                if let Ok(p) = parse_answer(&text, &set(&[1, 2, 3])) {
                    let mut pos = 0;
                    for s in &p.answer.sentences {
                        prop_assert_eq!(s.raw_span.start, pos);
                        prop_assert!(!s.text_without_citations.is_empty());
                        pos = s.raw_span.end;
                    }
                    prop_assert_eq!(pos, text.len());
                }
            }

            #[test]
            fn canonical_render_reparses_identically(text in answer_text()) {
                let valid = set(&[1, 2, 3]);
                if let Ok(p) = parse_answer(&text, &valid) {
                    let rendered = p.answer.render_canonical();
                    let again = parse_answer(&rendered, &valid).unwrap();
                    let view = |a: &CitedAnswer| a.sentences.iter()
                        .map(|s| (s.text_without_citations.clone(), s.citations.clone()))
                        .collect::<Vec<_>>();
                    prop_assert_eq!(view(&p.answer), view(&again.answer));
                    prop_assert_eq!(again.answer.render_canonical(), rendered);
                }
            }

            #[test]
            fn strip_is_idempotent(text in "\\PC{0,40}") {
                let once = strip_citations(&text);
                prop_assert_eq!(strip_citations(&once), once.clone());
            }
        }
    }
}
