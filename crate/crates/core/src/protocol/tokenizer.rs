//! Deterministic whitespace-and-punctuation tokenizer.
//!
//! A token is either a maximal run of alphanumeric characters or a single
//! non-whitespace, non-alphanumeric character. Whitespace separates tokens
//! and is never itself a token. Ids come from a fixed vocabulary; id 0 is
//! reserved for unknown pieces.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::ops::Range;

pub type TokenId = u32;

/// Id assigned to every piece outside the vocabulary.
pub const UNK_ID: TokenId = 0;

/// Surface form emitted for [`UNK_ID`] by [`Tokenizer::detokenize`]. It is
/// a single punctuation-class character that is never admitted into a
/// vocabulary, so it tokenizes back to [`UNK_ID`].
pub const UNK_SURFACE: &str = "\u{FFFD}";

/// Byte range of one token inside the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub start: usize,
    pub end: usize,
}

impl Piece {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Splits `text` into token byte ranges. Independent of any vocabulary.
pub fn pieces(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(Piece { start: s, end: i });
        }
        if !c.is_whitespace() {
            out.push(Piece {
                start: i,
                end: i + c.len_utf8(),
            });
        }
    }
    if let Some(s) = word_start {
        out.push(Piece {
            start: s,
            end: text.len(),
        });
    }
    out
}

/// Number of tokens in `text`.
pub fn count(text: &str) -> usize {
    pieces(text).len()
}

/// Index of the first token whose start offset is at or after `byte`.
///
/// Used to map a byte boundary in a text to a token boundary.
pub fn token_boundary(pieces: &[Piece], byte: usize) -> usize {
    pieces.partition_point(|p| p.start < byte)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Tokenizer {
    /// Builds a tokenizer whose vocabulary is every piece occurring in
    /// `texts`. Ids are assigned in lexicographic order starting at 1.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut set = BTreeSet::new();
        for t in texts {
            for p in pieces(t) {
                set.insert(&t[p.range()]);
            }
        }
        Self::from_vocab(set)
    }

    /// Builds a tokenizer from an explicit vocabulary. Duplicates and the
    /// unknown surface form are ignored; order is normalized.
    pub fn from_vocab<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| w != UNK_SURFACE && is_single_piece(w))
            .collect();
        let mut vocab = Vec::with_capacity(set.len() + 1);
        vocab.push(UNK_SURFACE.to_string());
        vocab.extend(set);
        let ids = vocab
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Self { vocab, ids }
    }

    /// Vocabulary size including the unknown id.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, piece: &str) -> TokenId {
        self.ids.get(piece).copied().unwrap_or(UNK_ID)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        pieces(text)
            .into_iter()
            .map(|p| self.id(&text[p.range()]))
            .collect()
    }

    /// Joins token surfaces with single spaces.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let surface = self
                .vocab
                .get(id as usize)
                .map(String::as_str)
                .unwrap_or(UNK_SURFACE);
            out.push_str(surface);
        }
        out
    }
}

fn is_single_piece(w: &str) -> bool {
    let p = pieces(w);
    p.len() == 1 && p[0].start == 0 && p[0].end == w.len()
}
