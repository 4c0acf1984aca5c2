//! Token vocabulary and segmentation.
//!
//! Role markers, the value separator, and the answer terminator are atomic:
//! they always segment as single tokens no matter where they occur. The rest
//! of the text is split per Unicode character or per whitespace-delimited
//! word depending on the mode.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::fnv1a;

/// Index into a [`Vocab`]'s token table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    /// One token per Unicode character (whitespace included).
    Character,
    /// Whitespace-delimited words; whitespace itself is dropped.
    Whitespace,
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("token not in vocabulary: {0:?}")]
    UnknownToken(String),
}

pub const UNKNOWN_TOKEN: &str = "[UNK]";

/// Immutable token table. Ids are dense; atoms come first, then `[UNK]`,
/// then every remaining token in first-seen corpus order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    terminator: TokenId,
    unknown: TokenId,
    mode: TokenizeMode,
    /// Atomic strings in longest-first match order.
    atoms: Vec<String>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.terminator == other.terminator
            && self.mode == other.mode
            && self.atoms == other.atoms
    }
}

impl Vocab {
    /// Build a vocabulary over `texts`. `terminator` and every string in
    /// `atoms` become atomic tokens; `[UNK]` is always present.
    pub fn build<'a>(
        mode: TokenizeMode,
        atoms: &[&str],
        terminator: &str,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Vocab {
        let mut atom_list: Vec<String> = Vec::new();
        for a in std::iter::once(terminator).chain(atoms.iter().copied()) {
            if !a.is_empty() && !atom_list.iter().any(|x| x == a) {
                atom_list.push(a.to_string());
            }
        }
        let mut tokens: Vec<String> = atom_list.clone();
        if !tokens.iter().any(|t| t == UNKNOWN_TOKEN) {
            tokens.push(UNKNOWN_TOKEN.to_string());
        }

        let mut match_order = atom_list.clone();
        match_order.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));

        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TokenId(i as u32)))
            .collect();
        for text in texts {
            for piece in segment_text(text, mode, &match_order) {
                if !index.contains_key(&piece) {
                    index.insert(piece.clone(), TokenId(tokens.len() as u32));
                    tokens.push(piece);
                }
            }
        }

        let terminator_id = index[terminator];
        let unknown_id = index[UNKNOWN_TOKEN];
        Vocab {
            tokens,
            index,
            terminator: terminator_id,
            unknown: unknown_id,
            mode,
            atoms: match_order,
        }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TokenId(i as u32)))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mode(&self) -> TokenizeMode {
        self.mode
    }

    pub fn terminator(&self) -> TokenId {
        self.terminator
    }

    pub fn unknown(&self) -> TokenId {
        self.unknown
    }

    pub fn token_str(&self, id: TokenId) -> &str {
        &self.tokens[id.idx()]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn is_atom(&self, id: TokenId) -> bool {
        let s = self.token_str(id);
        self.atoms.iter().any(|a| a == s)
    }

    /// Split `text` into token strings without consulting the table.
    pub fn segment(&self, text: &str) -> Vec<String> {
        segment_text(text, self.mode, &self.atoms)
    }

    /// Tokenize, mapping out-of-vocabulary pieces to `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.segment(text)
            .into_iter()
            .map(|p| self.index.get(&p).copied().unwrap_or(self.unknown))
            .collect()
    }

    /// Tokenize, failing on the first out-of-vocabulary piece.
    pub fn tokenize_strict(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        self.segment(text)
            .into_iter()
            .map(|p| {
                self.index
                    .get(&p)
                    .copied()
                    .ok_or(VocabError::UnknownToken(p))
            })
            .collect()
    }

    /// Reassemble a value from its tokens: concatenation in character mode,
    /// space-joined in whitespace mode.
    pub fn detokenize_value(&self, tokens: &[TokenId]) -> String {
        let parts: Vec<&str> = tokens.iter().map(|t| self.token_str(*t)).collect();
        match self.mode {
            TokenizeMode::Character => parts.concat(),
            TokenizeMode::Whitespace => parts.join(" "),
        }
    }

    /// Stable fingerprint used by the external generator protocol.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        for t in &self.tokens {
            buf.extend_from_slice(t.as_bytes());
            buf.push(0x1f);
        }
        buf.extend_from_slice(match self.mode {
            TokenizeMode::Character => b"char",
            TokenizeMode::Whitespace => b"ws  ",
        });
        format!("{:016x}", fnv1a(&buf))
    }
}

fn segment_text(text: &str, mode: TokenizeMode, atoms_longest_first: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    'outer: while !rest.is_empty() {
        for atom in atoms_longest_first {
            if rest.starts_with(atom.as_str()) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(atom.clone());
                rest = &rest[atom.len()..];
                continue 'outer;
            }
        }
        let ch = rest.chars().next().unwrap();
        match mode {
            TokenizeMode::Character => out.push(ch.to_string()),
            TokenizeMode::Whitespace => {
                if ch.is_whitespace() {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                } else {
                    word.push(ch);
                }
            }
        }
        rest = &rest[ch.len_utf8()..];
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}
