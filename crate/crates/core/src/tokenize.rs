//! Two toy greedy longest-match subword tokenizers with different space
//! conventions.
//!
//! The scorer-style tokenizer folds a preceding space into the token itself
//! (`" capital"`), the model-style tokenizer marks it with `▁` (`"▁capital"`)
//! and keeps `[k]` citation markers as single tokens. Each uses its own piece
//! table, so the same text usually splits differently on the two sides.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::corpus::marker_len;

/// Space marker used by the model-style tokenizer.
pub const SPACE_MARKER: char = '\u{2581}';
/// Space symbol used in scorer piece files in place of a leading space.
pub const SCORER_SPACE_SYMBOL: char = '\u{120}';

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const SCORER_PIECES: &str = include_str!("../data/scorer_pieces.txt");
const MODEL_PIECES: &str = include_str!("../data/model_pieces.txt");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub is_special: bool,
    pub is_citation_marker: bool,
}

impl Token {
    pub fn text(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            is_special: false,
            is_citation_marker: false,
        }
    }

    pub fn citation(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            is_special: false,
            is_citation_marker: true,
        }
    }

    pub fn special(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            is_special: true,
            is_citation_marker: false,
        }
    }

    /// Surface with all whitespace and space markers removed.
    pub fn normalized(&self) -> String {
        normalize_surface(&self.surface)
    }
}

pub fn normalize_surface(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != SPACE_MARKER)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenization {
    pub tokens: Vec<Token>,
    pub source_text: String,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    /// Concatenates non-special surfaces with space markers turned back into
    /// spaces, collapsing whitespace runs.
    pub fn reconstruct(&self) -> String {
        let joined: String = self
            .tokens
            .iter()
            .filter(|t| !t.is_special)
            .flat_map(|t| t.surface.chars())
            .map(|c| if c == SPACE_MARKER { ' ' } else { c })
            .collect();
        joined.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// A fixed piece vocabulary for greedy longest-match segmentation.
#[derive(Debug, Clone)]
pub struct MergeTable {
    pieces: Vec<String>,
    lookup: HashSet<String>,
    max_chars: usize,
}

impl MergeTable {
    /// Parses a piece file: one piece per line, priority = line order.
    /// `space_symbol` occurrences are read as the given space replacement.
    /// Blank lines and pieces that are pure whitespace or markers are
    /// ignored, as are repeated pieces.
    pub fn parse(text: &str, space_symbol: Option<(char, char)>) -> Self {
        let mut pieces = Vec::new();
        let mut lookup = HashSet::new();
        for line in text.lines() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            let piece: String = match space_symbol {
                Some((from, to)) => line.chars().map(|c| if c == from { to } else { c }).collect(),
                None => line.to_string(),
            };
            if normalize_surface(&piece).is_empty() || lookup.contains(&piece) {
                continue;
            }
            lookup.insert(piece.clone());
            pieces.push(piece);
        }
        let max_chars = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        MergeTable {
            pieces,
            lookup,
            max_chars,
        }
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.lookup.contains(piece)
    }

    /// Segments `word` greedily, always taking the longest known prefix.
    /// Unknown characters become single-character pieces; a leading space
    /// (or space marker) stays glued to the first character.
    fn segment(&self, word: &str, out: &mut Vec<Token>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut i = 0;
        while i < chars.len() {
            let start = chars[i].0;
            let longest = (1..=self.max_chars.min(chars.len() - i)).rev().find_map(|n| {
                let end = chars.get(i + n).map_or(word.len(), |c| c.0);
                self.lookup.contains(&word[start..end]).then_some(n)
            });
            let n = longest.unwrap_or_else(|| {
                let c = chars[i].1;
                if (c == ' ' || c == SPACE_MARKER) && i + 1 < chars.len() {
                    2
                } else {
                    1
                }
            });
            let end = chars.get(i + n).map_or(word.len(), |c| c.0);
            out.push(Token::text(&word[start..end]));
            i += n;
        }
    }
}

pub fn scorer_table() -> &'static MergeTable {
    static TABLE: OnceLock<MergeTable> = OnceLock::new();
    TABLE.get_or_init(|| MergeTable::parse(SCORER_PIECES, Some((SCORER_SPACE_SYMBOL, ' '))))
}

pub fn model_table() -> &'static MergeTable {
    static TABLE: OnceLock<MergeTable> = OnceLock::new();
    TABLE.get_or_init(|| MergeTable::parse(MODEL_PIECES, None))
}

/// Splits text into (preceded_by_space, chunk) pairs, where chunks are
/// maximal whitespace-free runs, optionally cut at citation markers.
fn chunks(text: &str, split_markers: bool) -> Vec<(bool, &str, bool)> {
    let mut out = Vec::new();
    let mut space = false;
    for (is_first, word) in text.split(char::is_whitespace).enumerate().map(|(i, w)| (i == 0, w)) {
        if !is_first {
            space = true;
        }
        if word.is_empty() {
            continue;
        }
        if !split_markers {
            out.push((space, word, false));
            space = false;
            continue;
        }
        let mut rest = word;
        let mut plain_start = 0;
        let mut i = 0;
        while i < rest.len() {
            if let Some(n) = marker_len(&rest[i..]) {
                if i > plain_start {
                    out.push((space, &rest[plain_start..i], false));
                    space = false;
                }
                out.push((space, &rest[i..i + n], true));
                space = false;
                rest = &rest[i + n..];
                i = 0;
                plain_start = 0;
            } else {
                i += rest[i..].chars().next().unwrap().len_utf8();
            }
        }
        if plain_start < rest.len() {
            out.push((space, &rest[plain_start..], false));
        }
        space = false;
    }
    out
}

pub fn tokenize_scorer_with(table: &MergeTable, text: &str) -> Tokenization {
    let mut tokens = Vec::new();
    for (space, chunk, _) in chunks(text, false) {
        let word = if space { format!(" {chunk}") } else { chunk.to_string() };
        table.segment(&word, &mut tokens);
    }
    Tokenization {
        tokens,
        source_text: text.to_string(),
    }
}

pub fn tokenize_model_with(table: &MergeTable, text: &str) -> Tokenization {
    let mut tokens = Vec::new();
    for (space, chunk, is_marker) in chunks(text, true) {
        let word = if space {
            format!("{SPACE_MARKER}{chunk}")
        } else {
            chunk.to_string()
        };
        if is_marker {
            tokens.push(Token::citation(word));
        } else {
            table.segment(&word, &mut tokens);
        }
    }
    Tokenization {
        tokens,
        source_text: text.to_string(),
    }
}

/// Scorer-style tokenization with the built-in piece table.
pub fn tokenize_scorer(text: &str) -> Tokenization {
    tokenize_scorer_with(scorer_table(), text)
}

/// Model-style tokenization with the built-in piece table.
pub fn tokenize_model(text: &str) -> Tokenization {
    tokenize_model_with(model_table(), text)
}

/// Joins scorer-style surfaces back into text; used to build coalition
/// claims from token subsets.
pub fn detokenize_scorer<'a>(tokens: impl IntoIterator<Item = &'a Token>) -> String {
    let joined: String = tokens.into_iter().map(|t| t.surface.as_str()).collect();
    joined.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scorer_splits_mawsynram() {
        assert_eq!(tokenize_scorer("Mawsynram").surfaces(), ["Maw", "syn", "ram"]);
    }

    #[test]
    fn model_splits_mawsynram() {
        assert_eq!(tokenize_model("Mawsynram").surfaces(), ["M", "aws", "yn", "ram"]);
    }

    #[test]
    fn empty_text() {
        assert!(tokenize_scorer("").is_empty());
        assert!(tokenize_model("").is_empty());
    }

    #[test]
    fn space_conventions() {
        let s = tokenize_scorer("a a");
        assert_eq!(s.len(), 2);
        assert_eq!(s.reconstruct(), "a a");
        assert!(s.tokens[1].surface.starts_with(' '));
        let m = tokenize_model("a a");
        assert!(m.tokens[1].surface.starts_with(SPACE_MARKER));
    }

    #[test]
    fn citation_markers_are_atomic_in_model() {
        let m = tokenize_model("x [1]");
        assert_eq!(m.len(), 2);
        assert!(m.tokens[1].is_citation_marker);
        assert_eq!(m.tokens[1].surface, "\u{2581}[1]");

        let m = tokenize_model("D[2][3].");
        let flags: Vec<_> = m.tokens.iter().map(|t| t.is_citation_marker).collect();
        assert_eq!(flags, [false, true, true, false]);

        let s = tokenize_scorer("x [1]");
        assert!(s.tokens.iter().all(|t| !t.is_citation_marker));
    }

    #[test]
    fn unknown_characters_fall_back() {
        let s = tokenize_scorer("\u{3042}\u{3044}");
        assert_eq!(s.surfaces(), ["\u{3042}", "\u{3044}"]);
        let m = tokenize_model("q \u{3042}");
        assert_eq!(m.tokens.last().unwrap().surface, "\u{2581}\u{3042}");
    }

    #[test]
    fn table_parsing() {
        let t = MergeTable::parse("ab\n\n\u{120}\nab\n\u{120}cd\r\n", Some(('\u{120}', ' ')));
        assert_eq!(t.pieces(), ["ab", " cd"]);
    }

    #[test]
    fn tables_disagree_somewhere() {
        let text = include_str!("../fixtures/instances.jsonl");
        let differs = text.lines().any(|l| {
            let s = tokenize_scorer(l).surfaces().iter().map(|s| normalize_surface(s)).collect::<Vec<_>>();
            let m = tokenize_model(l).surfaces().iter().map(|s| normalize_surface(s)).collect::<Vec<_>>();
            s != m
        });
        assert!(differs);
    }

    proptest! {
        #[test]
        fn reconstruction(text in "[ -~\u{e9}\u{fc}\u{3042}]{0,60}") {
            let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
            prop_assert_eq!(tokenize_scorer(&text).reconstruct(), norm.clone());
            prop_assert_eq!(tokenize_model(&text).reconstruct(), norm);
        }

        #[test]
        fn deterministic(text in "\\PC{0,40}") {
            prop_assert_eq!(tokenize_scorer(&text), tokenize_scorer(&text));
            prop_assert_eq!(tokenize_model(&text), tokenize_model(&text));
        }

        #[test]
        fn nonempty_surfaces(text in "\\PC{0,40}") {
            prop_assert!(tokenize_scorer(&text).tokens.iter().all(|t| !t.surface.is_empty()));
            prop_assert!(tokenize_model(&text).tokens.iter().all(|t| !t.surface.is_empty()));
        }
    }
}
