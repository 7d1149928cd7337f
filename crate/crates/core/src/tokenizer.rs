//! Byte-pair-encoding tokenizer: base vocabulary over an alphabet, merge
//! training on a corpus, tokenization/detokenization, and the one-hot
//! encoding of token sequences.
//!
//! The vocabulary is an ordered list of symbols; a token id is the symbol's
//! position, which also defines the one-hot encoding (token `k` maps to
//! standard basis vector `k`). Ids are laid out as: the two special symbols
//! first (`<eow>` = 0, `<eoa>` = 1), then one base symbol per alphabet
//! character in code-point order, then merged symbols in merge order.
//!
//! Words are runs of non-whitespace characters; every word is followed by
//! one end-of-word symbol and merges never cross word or artefact
//! boundaries. Training keeps pair counts incrementally up to date while it
//! rewrites the symbol stream; ties between equally frequent pairs go to
//! the pair whose first occurrence in the current stream is earliest.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Index into the vocabulary; doubles as the one-hot basis index.
pub type TokenId = usize;

/// Token id of the end-of-word symbol.
pub const END_OF_WORD: TokenId = 0;
/// Token id of the end-of-artefact symbol.
pub const END_OF_ARTEFACT: TokenId = 1;

/// Rendering of the end-of-artefact symbol in detokenized output.
pub const DEFAULT_ARTEFACT_SEPARATOR: &str = "★";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecialSymbol {
    EndOfWord,
    EndOfArtefact,
}

/// An element of the vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Symbol {
    /// One alphabet character (its UTF-8 encoding is the byte string the
    /// symbol stands for).
    Base(char),
    Special(SpecialSymbol),
    /// Concatenation of two earlier symbols.
    Merged { left: TokenId, right: TokenId },
}

/// Records that `left` followed by `right` merges into `result`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergeRule {
    pub left: TokenId,
    pub right: TokenId,
    pub result: TokenId,
    /// 1-based position in the merge sequence.
    pub ordinal: usize,
}

/// A trained byte-pair encoding: alphabet, symbol table and merge rules.
#[derive(Clone, Debug, PartialEq)]
pub struct BpeModel {
    alphabet: BTreeSet<char>,
    symbols: Vec<Symbol>,
    merges: Vec<MergeRule>,
    char_ids: HashMap<char, TokenId>,
}

fn is_special(id: TokenId) -> bool {
    id == END_OF_WORD || id == END_OF_ARTEFACT
}

impl BpeModel {
    /// Base model: the two specials plus one symbol per alphabet character,
    /// no merges.
    pub fn base(alphabet: BTreeSet<char>) -> Result<Self> {
        if let Some(ws) = alphabet.iter().find(|c| c.is_whitespace()) {
            return Err(Error::Config(format!(
                "alphabet must not contain whitespace, found {ws:?}"
            )));
        }
        let mut symbols = vec![
            Symbol::Special(SpecialSymbol::EndOfWord),
            Symbol::Special(SpecialSymbol::EndOfArtefact),
        ];
        let mut char_ids = HashMap::new();
        for &ch in &alphabet {
            char_ids.insert(ch, symbols.len());
            symbols.push(Symbol::Base(ch));
        }
        Ok(BpeModel {
            alphabet,
            symbols,
            merges: Vec::new(),
            char_ids,
        })
    }

    /// Trains merges on `corpus` until the vocabulary reaches `n_vocab`
    /// symbols or no mergeable adjacent pair remains.
    ///
    /// The corpus is treated as one stream: artefacts in order, separated by
    /// the end-of-artefact symbol, each word followed by the end-of-word
    /// symbol. Pairs containing a special symbol are never merged. Each
    /// accepted merge grows the vocabulary by exactly one symbol; if the
    /// pairs run out early the model simply reports a smaller vocabulary.
    pub fn train(corpus: &[String], alphabet: &BTreeSet<char>, n_vocab: usize) -> Result<Self> {
        let mut model = BpeModel::base(alphabet.clone())?;
        if n_vocab < model.base_size() {
            return Err(Error::Config(format!(
                "n_vocab {} is smaller than the base vocabulary ({})",
                n_vocab,
                model.base_size()
            )));
        }

        let mut stream: Vec<TokenId> = Vec::new();
        for (artefact_index, artefact) in corpus.iter().enumerate() {
            if artefact_index > 0 {
                stream.push(END_OF_ARTEFACT);
            }
            for word in artefact.split_whitespace() {
                for ch in word.chars() {
                    let id = model.char_ids.get(&ch).copied().ok_or_else(|| {
                        Error::Ingest(format!(
                            "character {ch:?} in artefact {artefact_index} is not in the alphabet"
                        ))
                    })?;
                    stream.push(id);
                }
                stream.push(END_OF_WORD);
            }
        }

        let mut counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
        for pair in stream.windows(2) {
            if !is_special(pair[0]) && !is_special(pair[1]) {
                *counts.entry((pair[0], pair[1])).or_insert(0) += 1;
            }
        }

        while model.symbols.len() < n_vocab {
            let Some(&max_count) = counts.values().max() else {
                break; // no mergeable pair left; vocabulary stays smaller
            };
            let candidates: HashSet<(TokenId, TokenId)> = counts
                .iter()
                .filter(|&(_, &c)| c == max_count)
                .map(|(&p, _)| p)
                .collect();
            let (left, right) = if candidates.len() == 1 {
                *candidates.iter().next().unwrap()
            } else {
                // earliest first occurrence in the current stream wins
                stream
                    .windows(2)
                    .map(|w| (w[0], w[1]))
                    .find(|p| candidates.contains(p))
                    .expect("counted pair must occur in the stream")
            };

            let new_id = model.symbols.len();
            merge_in_stream(&mut stream, &mut counts, left, right, new_id);
            model.symbols.push(Symbol::Merged { left, right });
            model.merges.push(MergeRule {
                left,
                right,
                result: new_id,
                ordinal: model.merges.len() + 1,
            });
            debug_assert_eq!(model.symbols.len(), new_id + 1);
        }

        Ok(model)
    }

    /// Rebuilds a model from an alphabet and ordered merge pairs, as stored
    /// in a vocabulary file. Merge ids must reference earlier symbols and
    /// must not be special.
    pub fn from_parts(alphabet: BTreeSet<char>, merge_pairs: &[(TokenId, TokenId)]) -> Result<Self> {
        let mut model = BpeModel::base(alphabet)?;
        for (index, &(left, right)) in merge_pairs.iter().enumerate() {
            let result = model.symbols.len();
            if left >= result || right >= result {
                return Err(Error::Config(format!(
                    "merge {index} references id {} but only {result} symbols exist",
                    left.max(right)
                )));
            }
            if is_special(left) || is_special(right) {
                return Err(Error::Config(format!(
                    "merge {index} contains a special symbol"
                )));
            }
            model.symbols.push(Symbol::Merged { left, right });
            model.merges.push(MergeRule {
                left,
                right,
                result,
                ordinal: index + 1,
            });
        }
        Ok(model)
    }

    pub fn n_vocab(&self) -> usize {
        self.symbols.len()
    }

    /// Number of symbols before any merges (specials + alphabet).
    pub fn base_size(&self) -> usize {
        2 + self.alphabet.len()
    }

    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn contains_char(&self, ch: char) -> bool {
        self.char_ids.contains_key(&ch)
    }

    /// Splits text into words on whitespace, maps each word to base symbols
    /// followed by the end-of-word symbol, then applies every merge rule in
    /// ordinal order, each exhaustively left to right.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut word: Vec<TokenId> = Vec::new();
        for (position, ch) in text.chars().enumerate() {
            if ch.is_whitespace() {
                self.flush_word(&mut word, &mut out);
            } else {
                let id = self
                    .char_ids
                    .get(&ch)
                    .copied()
                    .ok_or(Error::UnknownCharacter { ch, position })?;
                word.push(id);
            }
        }
        self.flush_word(&mut word, &mut out);
        Ok(out)
    }

    fn flush_word(&self, word: &mut Vec<TokenId>, out: &mut Vec<TokenId>) {
        if word.is_empty() {
            return;
        }
        for rule in &self.merges {
            replace_pair(word, rule.left, rule.right, rule.result);
        }
        out.append(word);
        out.push(END_OF_WORD);
    }

    /// Inverse of [`tokenize`](Self::tokenize) up to whitespace
    /// normalization: merged symbols expand to their characters, words are
    /// joined by single spaces and the end-of-artefact symbol renders as
    /// `★`.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.detokenize_with_separator(tokens, DEFAULT_ARTEFACT_SEPARATOR)
    }

    pub fn detokenize_with_separator(&self, tokens: &[TokenId], separator: &str) -> Result<String> {
        enum Piece {
            Word(String),
            ArtefactBoundary,
        }

        let mut pieces: Vec<Piece> = Vec::new();
        let mut word = String::new();
        for &id in tokens {
            match self.symbol_checked(id)? {
                Symbol::Special(SpecialSymbol::EndOfWord) => {
                    pieces.push(Piece::Word(std::mem::take(&mut word)));
                }
                Symbol::Special(SpecialSymbol::EndOfArtefact) => {
                    if !word.is_empty() {
                        pieces.push(Piece::Word(std::mem::take(&mut word)));
                    }
                    pieces.push(Piece::ArtefactBoundary);
                }
                _ => self.expand_chars(id, &mut word),
            }
        }
        if !word.is_empty() {
            pieces.push(Piece::Word(word));
        }

        let mut out = String::new();
        let mut prev_was_word = false;
        for piece in pieces {
            match piece {
                Piece::Word(w) => {
                    if prev_was_word {
                        out.push(' ');
                    }
                    out.push_str(&w);
                    prev_was_word = true;
                }
                Piece::ArtefactBoundary => {
                    out.push_str(separator);
                    prev_was_word = false;
                }
            }
        }
        Ok(out)
    }

    /// Human-readable form of a single token (`<eow>`/`<eoa>` for the
    /// specials, the expanded character string otherwise).
    pub fn token_string(&self, id: TokenId) -> Result<String> {
        match self.symbol_checked(id)? {
            Symbol::Special(SpecialSymbol::EndOfWord) => Ok("<eow>".to_string()),
            Symbol::Special(SpecialSymbol::EndOfArtefact) => Ok("<eoa>".to_string()),
            _ => {
                let mut s = String::new();
                self.expand_chars(id, &mut s);
                Ok(s)
            }
        }
    }

    fn symbol_checked(&self, id: TokenId) -> Result<&Symbol> {
        self.symbols.get(id).ok_or(Error::TokenRange {
            id,
            n_vocab: self.symbols.len(),
        })
    }

    fn expand_chars(&self, id: TokenId, out: &mut String) {
        match &self.symbols[id] {
            Symbol::Base(ch) => out.push(*ch),
            Symbol::Merged { left, right } => {
                self.expand_chars(*left, out);
                self.expand_chars(*right, out);
            }
            Symbol::Special(_) => unreachable!("specials are handled by the caller"),
        }
    }
}

/// One exhaustive left-to-right replacement pass of `(left, right)` by
/// `result` over a symbol sequence.
fn replace_pair(seq: &mut Vec<TokenId>, left: TokenId, right: TokenId, result: TokenId) {
    let len = seq.len();
    let mut w = 0;
    let mut r = 0;
    while r < len {
        if r + 1 < len && seq[r] == left && seq[r + 1] == right {
            seq[w] = result;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

/// Rewrites one merge into the training stream while keeping the adjacent
/// pair counts exact. The left neighbor is read from the already-rewritten
/// prefix and the right neighbor from the untouched suffix, so a chain of
/// adjacent merges settles to the correct final counts.
fn merge_in_stream(
    stream: &mut Vec<TokenId>,
    counts: &mut HashMap<(TokenId, TokenId), usize>,
    left: TokenId,
    right: TokenId,
    new_id: TokenId,
) {
    fn dec(counts: &mut HashMap<(TokenId, TokenId), usize>, pair: (TokenId, TokenId)) {
        let c = counts.get_mut(&pair).expect("pair count underflow");
        *c -= 1;
        if *c == 0 {
            counts.remove(&pair);
        }
    }

    let len = stream.len();
    let mut w = 0;
    let mut r = 0;
    while r < len {
        if r + 1 < len && stream[r] == left && stream[r + 1] == right {
            dec(counts, (left, right));
            if w > 0 {
                let l = stream[w - 1];
                if !is_special(l) {
                    dec(counts, (l, left));
                    *counts.entry((l, new_id)).or_insert(0) += 1;
                }
            }
            if r + 2 < len {
                let rt = stream[r + 2];
                if !is_special(rt) {
                    dec(counts, (right, rt));
                    *counts.entry((new_id, rt)).or_insert(0) += 1;
                }
            }
            stream[w] = new_id;
            r += 2;
        } else {
            stream[w] = stream[r];
            r += 1;
        }
        w += 1;
    }
    stream.truncate(w);
}

/// A context realized as one-hot rows: row `i` is the standard basis vector
/// of the `i`-th token. Stored as ids; [`to_matrix`](Self::to_matrix)
/// produces the dense form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMatrix {
    ids: Vec<TokenId>,
    width: usize,
}

impl TokenMatrix {
    pub fn from_ids(ids: &[TokenId], n_vocab: usize, n_ctx: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Shape("token matrix needs at least one token".into()));
        }
        if ids.len() > n_ctx {
            return Err(Error::Shape(format!(
                "context of {} tokens exceeds the window n_ctx = {n_ctx}",
                ids.len()
            )));
        }
        for &id in ids {
            if id >= n_vocab {
                return Err(Error::TokenRange { id, n_vocab });
            }
        }
        Ok(TokenMatrix {
            ids: ids.to_vec(),
            width: n_vocab,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// Dense one-hot matrix of shape `n x n_vocab`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.ids.len(), self.width, |i, j| {
            if self.ids[i] == j {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// One-hot encodes a token sequence against the model's vocabulary.
pub fn encode_matrix(model: &BpeModel, tokens: &[TokenId], n_ctx: usize) -> Result<TokenMatrix> {
    TokenMatrix::from_ids(tokens, model.n_vocab(), n_ctx)
}
