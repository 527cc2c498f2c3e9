//! Minimal-span alignment between scorer-side and model-side tokenizations,
//! and the weight transfer built on top of it.
//!
//! Both sides are compared with all whitespace and space markers removed.
//! Walking the two token streams with one pointer each, the side whose
//! consumed text is shorter advances; whenever both sides have consumed the
//! same amount of text a pair is closed. Every pair therefore ends at the
//! first point where the two streams agree again, which is the finest
//! possible alignment.

use std::ops::Range;

use thiserror::Error;

use crate::tokenize::{Token, Tokenization};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("token surfaces cannot be reconciled: scorer has {scorer_residual:?}, model has {model_residual:?}")]
    Mismatch {
        scorer_residual: String,
        model_residual: String,
    },
    #[error("expected {expected} scorer weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanAlignment {
    pub pairs: Vec<(Range<usize>, Range<usize>)>,
}

fn aligned(t: &Token) -> bool {
    !t.is_special && !t.is_citation_marker
}

struct Stream {
    /// (token index, normalized surface) for tokens taking part in alignment.
    items: Vec<(usize, String)>,
}

impl Stream {
    fn new(toks: &Tokenization) -> Self {
        Stream {
            items: toks
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| aligned(t))
                .map(|(i, t)| (i, t.normalized()))
                .collect(),
        }
    }

    fn text(&self) -> String {
        self.items.iter().map(|(_, s)| s.as_str()).collect()
    }
}

fn residual(text: &str, from: usize) -> String {
    text[from..].chars().take(32).collect()
}

pub fn align_spans(scorer: &Tokenization, model: &Tokenization) -> Result<SpanAlignment, AlignError> {
    let a = Stream::new(scorer);
    let b = Stream::new(model);

    let (ta, tb) = (a.text(), b.text());
    if ta != tb {
        // Report from the last point where both streams agreed.
        let common = ta
            .char_indices()
            .zip(tb.chars())
            .find(|((_, x), y)| x != y)
            .map_or(ta.len().min(tb.len()), |((i, _), _)| i);
        let boundary = boundary_before(&a, &b, common);
        return Err(AlignError::Mismatch {
            scorer_residual: residual(&ta, boundary),
            model_residual: residual(&tb, boundary),
        });
    }

    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut pos_a, mut pos_b) = (0usize, 0usize);
    let mut last = 0usize;
    let mut start_a: Option<usize> = None;
    let mut start_b: Option<usize> = None;
    let (mut end_a, mut end_b) = (0, 0);
    while i < a.items.len() || j < b.items.len() {
        let take_a = i < a.items.len() && (pos_a <= pos_b || j >= b.items.len());
        if take_a {
            let (idx, s) = &a.items[i];
            start_a.get_or_insert(*idx);
            end_a = idx + 1;
            pos_a += s.len();
            i += 1;
        } else {
            let (idx, s) = &b.items[j];
            start_b.get_or_insert(*idx);
            end_b = idx + 1;
            pos_b += s.len();
            j += 1;
        }
        if pos_a == pos_b && pos_a > last && start_a.is_some() && start_b.is_some() {
            pairs.push((start_a.take().unwrap()..end_a, start_b.take().unwrap()..end_b));
            last = pos_a;
        }
    }
    // Trailing tokens with empty normalized surfaces join the last pair.
    if let Some(p) = pairs.last_mut() {
        if start_a.is_some() {
            p.0.end = end_a;
        }
        if start_b.is_some() {
            p.1.end = end_b;
        }
    }
    Ok(SpanAlignment { pairs })
}

/// Largest text offset `<= limit` at which both streams sit on a token
/// boundary.
fn boundary_before(a: &Stream, b: &Stream, limit: usize) -> usize {
    let offsets = |s: &Stream| {
        let mut acc = 0;
        let mut v = vec![0];
        for (_, t) in &s.items {
            acc += t.len();
            v.push(acc);
        }
        v
    };
    let ob = offsets(b);
    offsets(a)
        .into_iter()
        .filter(|o| *o <= limit && ob.binary_search(o).is_ok())
        .max()
        .unwrap_or(0)
}

/// Transfers scorer-token weights onto model tokens.
///
/// Every aligned model token gets the arithmetic mean of the weights of the
/// scorer tokens in its pair. Citation markers get 1. Special tokens and
/// tokens outside every pair get 0; callers assign EOS weights themselves.
pub fn map_weights(
    scorer_weights: &[f64],
    alignment: &SpanAlignment,
    scorer: &Tokenization,
    model: &Tokenization,
) -> Result<Vec<f64>, AlignError> {
    if scorer_weights.len() != scorer.len() {
        return Err(AlignError::LengthMismatch {
            expected: scorer.len(),
            got: scorer_weights.len(),
        });
    }
    let mut out: Vec<f64> = model
        .tokens
        .iter()
        .map(|t| if t.is_citation_marker { 1.0 } else { 0.0 })
        .collect();
    for (sa, sb) in &alignment.pairs {
        let vals: Vec<f64> = sa
            .clone()
            .filter(|&k| aligned(&scorer.tokens[k]))
            .map(|k| scorer_weights[k])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        for k in sb.clone().filter(|&k| aligned(&model.tokens[k])) {
            out[k] = mean;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{tokenize_model, tokenize_scorer, SPACE_MARKER};

    fn toks(surfaces: &[&str]) -> Tokenization {
        Tokenization {
            tokens: surfaces
                .iter()
                .map(|s| {
                    let bare = s.trim_start_matches(SPACE_MARKER);
                    if bare.starts_with('[') && bare.ends_with(']') && bare.len() > 2 {
                        Token::citation(*s)
                    } else {
                        Token::text(*s)
                    }
                })
                .collect(),
            source_text: String::new(),
        }
    }

    #[test]
    fn mawsynram_spans() {
        let al = align_spans(&toks(&["Maw", "syn", "ram"]), &toks(&["M", "aws", "yn", "ram"])).unwrap();
        assert_eq!(al.pairs, vec![(0..2, 0..3), (2..3, 3..4)]);
    }

    #[test]
    fn identity_is_one_to_one() {
        let t = toks(&["a", " b"]);
        let al = align_spans(&t, &t).unwrap();
        assert_eq!(al.pairs, vec![(0..1, 0..1), (1..2, 1..2)]);
    }

    #[test]
    fn crossing_boundaries_merge() {
        let al = align_spans(&toks(&["ab", "c"]), &toks(&["a", "bc"])).unwrap();
        assert_eq!(al.pairs, vec![(0..2, 0..2)]);
    }

    #[test]
    fn citations_are_skipped() {
        let s = toks(&["A", " is", " B", "."]);
        let m = toks(&["A", "\u{2581}is", "\u{2581}B", "\u{2581}[1]", "."]);
        let al = align_spans(&s, &m).unwrap();
        assert_eq!(al.pairs.len(), 4);
        assert_eq!(al.pairs[3], (3..4, 4..5));
        let w = map_weights(&[0.1, 0.2, 0.3, 0.4], &al, &s, &m).unwrap();
        assert_eq!(w, vec![0.1, 0.2, 0.3, 1.0, 0.4]);
    }

    #[test]
    fn mismatch_reports_residuals() {
        let err = align_spans(&toks(&["ab", "cd"]), &toks(&["ab", "ce"])).unwrap_err();
        assert_eq!(
            err,
            AlignError::Mismatch {
                scorer_residual: "cd".into(),
                model_residual: "ce".into()
            }
        );
    }

    #[test]
    fn weight_averaging() {
        let s = toks(&["Maw", "syn", "ram"]);
        let m = toks(&["Mawsyn", "ram"]);
        let al = align_spans(&s, &m).unwrap();
        let w = map_weights(&[0.2, 0.4, 0.9], &al, &s, &m).unwrap();
        assert!((w[0] - 0.3).abs() < 1e-15);
        assert_eq!(w[1], 0.9);

        // One word on the scorer side, three pieces on the model side.
        let s = toks(&["Mawsynram"]);
        let m = toks(&["M", "aws", "ynram"]);
        let al = align_spans(&s, &m).unwrap();
        assert_eq!(map_weights(&[0.7], &al, &s, &m).unwrap(), vec![0.7; 3]);
    }

    #[test]
    fn king_shares_weight() {
        let s = toks(&[" King"]);
        let m = toks(&["\u{2581}K", "ing"]);
        let al = align_spans(&s, &m).unwrap();
        assert_eq!(map_weights(&[0.6], &al, &s, &m).unwrap(), vec![0.6, 0.6]);
    }

    #[test]
    fn identity_weights() {
        let t = toks(&["x", " y"]);
        let al = align_spans(&t, &t).unwrap();
        assert_eq!(map_weights(&[0.2, 0.8], &al, &t, &t).unwrap(), vec![0.2, 0.8]);
        assert!(matches!(
            map_weights(&[0.2], &al, &t, &t),
            Err(AlignError::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn real_tokenizers_align() {
        let text = "Mawsynram in Meghalaya receives the highest rainfall in India [1].";
        let s = tokenize_scorer(&crate::corpus::strip_citations(text));
        let m = tokenize_model(text);
        let al = align_spans(&s, &m).unwrap();
        let covered_s: usize = al.pairs.iter().map(|p| p.0.len()).sum();
        assert_eq!(covered_s, s.len());
        assert!(al.pairs.iter().any(|p| p.0.len() != p.1.len()));
    }
}
