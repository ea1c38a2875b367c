//! Synthetic corpora with checkable validity oracles.
//!
//! Everything here is a pure function of its inputs and seed: corpus
//! generation, tokenization, corruption, and the token-to-group padding
//! scheme that aligns token constraints with latent positions.

mod corrupt;
mod grammar;

pub use corrupt::{corrupt, Amount, CorruptionKind, CorruptionSpec};
pub use grammar::Grammar;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::mask::BoundaryMask;
use crate::rng::Rng;

/// Reserved id for the padding symbol.
pub const PAD: usize = 0;
/// Reserved id for the condition-null marker.
pub const COND_NULL: usize = 1;

const PAD_SYMBOL: &str = "<pad>";
const NULL_SYMBOL: &str = "<null>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("character {0:?} is not in the vocabulary")]
    UnknownCharacter(char),
    #[error("max_len {max_len} too small to emit any valid {grammar:?} string")]
    Generation { grammar: Grammar, max_len: usize },
    #[error("corruption count {count} exceeds sequence length {len}")]
    CountExceedsLength { count: usize, len: usize },
    #[error("{0}")]
    Contract(String),
    #[error("vocabulary file is malformed: {0}")]
    VocabFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sequence of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Length without trailing padding.
    pub fn content_len(&self) -> usize {
        let mut n = self.ids.len();
        while n > 0 && self.ids[n - 1] == PAD {
            n -= 1;
        }
        n
    }

    /// Copy with every PAD removed.
    pub fn strip_pad(&self) -> TokenSequence {
        TokenSequence::new(self.ids.iter().copied().filter(|&id| id != PAD).collect())
    }
}

/// Dense symbol table. Ids 0 and 1 are reserved for PAD and the
/// condition-null marker; the remaining ids are single characters.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    symbols: Vec<String>,
    by_char: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: &[char]) -> Self {
        let mut symbols = vec![PAD_SYMBOL.to_string(), NULL_SYMBOL.to_string()];
        let mut by_char = HashMap::new();
        for &c in chars {
            if by_char.contains_key(&c) {
                continue;
            }
            by_char.insert(c, symbols.len());
            symbols.push(c.to_string());
        }
        Vocabulary { symbols, by_char }
    }

    pub fn for_grammar(grammar: Grammar) -> Self {
        Vocabulary::from_chars(&grammar.charset())
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.by_char.get(&c).copied()
    }

    /// Ids usable as text (everything except the two reserved symbols).
    pub fn text_ids(&self) -> std::ops::Range<usize> {
        2..self.size()
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, CorpusError> {
        let mut ids = Vec::with_capacity(text.len());
        for c in text.chars() {
            match self.by_char.get(&c) {
                Some(&id) => ids.push(id),
                None => return Err(CorpusError::UnknownCharacter(c)),
            }
        }
        Ok(TokenSequence::new(ids))
    }

    /// Renders ids back to text. Padding (and the condition-null marker)
    /// never appears in output text and is dropped.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for &id in &seq.ids {
            if id == PAD || id == COND_NULL {
                continue;
            }
            out.push_str(&self.symbols[id]);
        }
        out
    }

    /// One symbol per line, line index = id.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut text = String::new();
        for s in &self.symbols {
            text.push_str(s);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines: Vec<&str> = text.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        if lines.len() < 2 || lines[0] != PAD_SYMBOL || lines[1] != NULL_SYMBOL {
            return Err(CorpusError::VocabFile(format!(
                "first two lines must be {PAD_SYMBOL} and {NULL_SYMBOL}"
            )));
        }
        let mut symbols = vec![PAD_SYMBOL.to_string(), NULL_SYMBOL.to_string()];
        let mut by_char = HashMap::new();
        for line in &lines[2..] {
            let mut chars = line.chars();
            let c = chars
                .next()
                .ok_or_else(|| CorpusError::VocabFile("empty symbol line".into()))?;
            if chars.next().is_some() {
                return Err(CorpusError::VocabFile(format!(
                    "symbol {line:?} is not a single character"
                )));
            }
            by_char.insert(c, symbols.len());
            symbols.push(c.to_string());
        }
        Ok(Vocabulary { symbols, by_char })
    }
}

/// Generates `n` grammar-valid sequences, each at most `max_len` tokens.
/// Pure function of `(grammar, n, max_len, seed)`.
pub fn generate_corpus(
    grammar: Grammar,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<(Vocabulary, Vec<TokenSequence>), CorpusError> {
    if max_len < 4 {
        return Err(CorpusError::Contract(format!(
            "max_len must be at least 4, got {max_len}"
        )));
    }
    if grammar.min_len() > max_len {
        return Err(CorpusError::Generation { grammar, max_len });
    }
    let vocab = Vocabulary::for_grammar(grammar);
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let text = grammar.generate(max_len, &mut rng);
        debug_assert!(grammar.is_valid(&text), "generator emitted {text:?}");
        out.push(vocab.tokenize(&text)?);
    }
    Ok((vocab, out))
}

/// Splits a constrained sequence into groups of `r` and pads inside groups.
///
/// The sequence is cut at every boundary between constrained and free runs;
/// each run is padded up to a multiple of `r` so constrained tokens never
/// share a group with free slots. Groups born from a constrained run map to
/// context latent positions, fully free groups to free latent positions.
pub fn group_and_pad(
    tokens: &TokenSequence,
    constraint: &BoundaryMask,
    r: usize,
) -> (TokenSequence, BoundaryMask) {
    assert!(r >= 1, "grouping factor must be at least 1");
    assert_eq!(
        tokens.len(),
        constraint.len(),
        "constraint mask must cover the sequence"
    );
    let mut grouped = Vec::new();
    let mut latent = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let status = constraint.is_constrained(i);
        let mut j = i;
        while j < tokens.len() && constraint.is_constrained(j) == status {
            j += 1;
        }
        let run = &tokens.ids[i..j];
        let padded_len = run.len().div_ceil(r) * r;
        grouped.extend_from_slice(run);
        grouped.extend(std::iter::repeat(PAD).take(padded_len - run.len()));
        latent.extend(std::iter::repeat(status).take(padded_len / r));
        i = j;
    }
    (TokenSequence::new(grouped), BoundaryMask::new(latent))
}

/// The encoder input used for constrained generation: tokens grouped by
/// [`group_and_pad`], with every fully free group blanked to PAD so that
/// only the constraint pattern (and nothing of any reference content) is
/// encoded. Returns the blanked grouped tokens, the unblanked grouped
/// tokens, and the latent constraint mask.
pub fn constraint_encode_input(
    tokens: &TokenSequence,
    constraint: &BoundaryMask,
    r: usize,
) -> (TokenSequence, TokenSequence, BoundaryMask) {
    let (grouped, latent) = group_and_pad(tokens, constraint, r);
    let mut blanked = grouped.clone();
    for g in 0..latent.len() {
        if !latent.is_constrained(g) {
            for pos in g * r..(g + 1) * r {
                blanked.ids[pos] = PAD;
            }
        }
    }
    (blanked, grouped, latent)
}

/// Pads a sequence with trailing PAD up to `target_len` (no constraints).
pub fn pad_to(tokens: &TokenSequence, target_len: usize) -> TokenSequence {
    assert!(tokens.len() <= target_len);
    let mut ids = tokens.ids.clone();
    ids.resize(target_len, PAD);
    TokenSequence::new(ids)
}

/// Writes one sequence per line as UTF-8 text.
pub fn save_corpus(
    vocab: &Vocabulary,
    seqs: &[TokenSequence],
    path: &Path,
) -> Result<(), CorpusError> {
    let mut text = String::new();
    for seq in seqs {
        text.push_str(&vocab.detokenize(seq));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_corpus(vocab: &Vocabulary, path: &Path) -> Result<Vec<TokenSequence>, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    text.lines().map(|line| vocab.tokenize(line)).collect()
}

#[cfg(test)]
mod tests;
