//! Symbols and context strings.
//!
//! A context string is a finite word over the alphabet `{0, 1, ..., |A|-1}`,
//! stored **oldest symbol first**: the last element of the backing vector is
//! the most recently emitted symbol.  With that orientation, "`v` is a
//! context of the history `u`" means `v` equals the final `|v|` symbols of
//! `u`, i.e. `v` is a suffix of `u`.  All tree and model code in this crate
//! relies on that convention.
//!
//! Strings serialize as plain digit strings (`"011"`), which keeps model
//! files readable; that representation restricts the alphabet size to at
//! most 10, which is far beyond anything the estimation machinery can
//! digest anyway.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest alphabet size that the digit-string encoding supports.
pub const MAX_ALPHABET: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StringError {
    #[error("alphabet size must be between 2 and {MAX_ALPHABET}, got {0}")]
    BadAlphabet(usize),
    #[error("symbol {symbol} out of range for alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: u8, alphabet: usize },
    #[error("invalid context string character {0:?} (expected a digit)")]
    BadCharacter(char),
}

/// A finite output/input alphabet `{0, ..., size-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub fn new(size: usize) -> Result<Self, StringError> {
        if !(2..=MAX_ALPHABET).contains(&size) {
            return Err(StringError::BadAlphabet(size));
        }
        Ok(Alphabet { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Iterate over all symbols in ascending order.
    pub fn symbols(&self) -> impl Iterator<Item = u8> {
        0..self.size as u8
    }

    pub fn contains(&self, symbol: u8) -> bool {
        (symbol as usize) < self.size
    }

    /// `size^exp` with an overflow check, used for Kraft sums and for sizing
    /// complete-tree state spaces.
    pub fn pow_checked(&self, exp: u32) -> Option<u128> {
        (self.size as u128).checked_pow(exp)
    }
}

/// A word over an alphabet, oldest symbol first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ContextString(Vec<u8>);

impl ContextString {
    pub fn new(symbols: Vec<u8>, alphabet: Alphabet) -> Result<Self, StringError> {
        for &s in &symbols {
            if !alphabet.contains(s) {
                return Err(StringError::SymbolOutOfRange {
                    symbol: s,
                    alphabet: alphabet.size(),
                });
            }
        }
        Ok(ContextString(symbols))
    }

    /// Construct without range validation; callers must have checked symbols.
    pub fn from_raw(symbols: Vec<u8>) -> Self {
        ContextString(symbols)
    }

    pub fn empty() -> Self {
        ContextString(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    /// The most recent symbol, if any.
    pub fn last(&self) -> Option<u8> {
        self.0.last().copied()
    }

    /// True iff `self` equals the most recent `self.len()` symbols of
    /// `history` (i.e. `self` is a suffix of `history`).
    pub fn is_suffix_of(&self, history: &[u8]) -> bool {
        let n = self.0.len();
        history.len() >= n && history[history.len() - n..] == self.0[..]
    }

    /// The final `k` symbols, as a new string.  Panics if `k > len`.
    pub fn suffix(&self, k: usize) -> ContextString {
        ContextString(self.0[self.0.len() - k..].to_vec())
    }

    /// Append a newly emitted symbol (it becomes the most recent one).
    pub fn push(&mut self, symbol: u8) {
        self.0.push(symbol);
    }

    /// `self` followed by `symbol`, as a new string.
    pub fn extended(&self, symbol: u8) -> ContextString {
        let mut v = self.0.clone();
        v.push(symbol);
        ContextString(v)
    }

    /// Decode an index in `0..size^k` into the string of length `k` it
    /// represents.  The oldest symbol occupies the most significant digit,
    /// so that `index_of` and `decode` are inverse to each other and the
    /// per-step update `idx -> (idx * size + b) % size^k` performs the
    /// sliding-window shift.
    pub fn decode(mut index: usize, k: usize, alphabet: Alphabet) -> ContextString {
        let size = alphabet.size();
        let mut v = vec![0u8; k];
        for slot in v.iter_mut().rev() {
            *slot = (index % size) as u8;
            index /= size;
        }
        ContextString(v)
    }

    /// Inverse of [`ContextString::decode`] for strings of the given length.
    pub fn index(&self, alphabet: Alphabet) -> usize {
        let size = alphabet.size();
        self.0.iter().fold(0usize, |acc, &s| acc * size + s as usize)
    }
}

impl fmt::Display for ContextString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            write!(f, "{}", s)?;
        }
        Ok(())
    }
}

impl FromStr for ContextString {
    type Err = StringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut v = Vec::with_capacity(s.len());
        for c in s.chars() {
            let d = c.to_digit(10).ok_or(StringError::BadCharacter(c))? as u8;
            v.push(d);
        }
        Ok(ContextString(v))
    }
}

impl Serialize for ContextString {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContextString {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
