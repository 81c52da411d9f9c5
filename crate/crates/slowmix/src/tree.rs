//! Full context trees.
//!
//! A context tree over an alphabet `A` is a finite set `T` of strings that is
//! suffix-free (no leaf is a suffix of another) and satisfies the Kraft
//! equality `sum_{s in T} |A|^{-|s|} = 1`.  Those two conditions together are
//! equivalent to `T` being the leaf set of a full |A|-ary tree: every
//! semi-infinite history has exactly one leaf among its suffixes, so the
//! leaves serve as the states of a finite-memory process.
//!
//! Lookup walks a trie from the most recent symbol of the history backwards
//! in time until a leaf is reached, mirroring how a context is read off a
//! past sequence.

use crate::strings::{Alphabet, ContextString, StringError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error(transparent)]
    String(#[from] StringError),
    #[error("leaf set must be nonempty")]
    EmptyLeafSet,
    #[error("duplicate leaf {0}")]
    DuplicateLeaf(ContextString),
    #[error("leaf {shorter} is a suffix of leaf {longer}")]
    SuffixClash {
        shorter: ContextString,
        longer: ContextString,
    },
    #[error("Kraft sum of leaf depths is {got}/{want} of unity; leaves do not form a full tree")]
    KraftViolation { got: u128, want: u128 },
    #[error("tree depth {0} too large to enumerate complete contexts")]
    DepthTooLarge(usize),
    #[error("history of length {got} is too short to determine a context (need {need})")]
    HistoryTooShort { got: usize, need: usize },
}

#[derive(Debug, Clone, Copy)]
struct TrieNode {
    /// Child per symbol, indexed by the *next older* symbol of the history.
    children: [Option<u32>; crate::strings::MAX_ALPHABET],
    /// Index into `leaves` if this node is a leaf.
    leaf: Option<u32>,
}

impl TrieNode {
    fn new() -> Self {
        TrieNode {
            children: [None; crate::strings::MAX_ALPHABET],
            leaf: None,
        }
    }
}

/// A validated full context tree: the state space of a tree model.
#[derive(Debug, Clone)]
pub struct ContextTree {
    alphabet: Alphabet,
    /// Leaves in canonical (sorted) order; indices into this vector are the
    /// state ids used throughout the crate.
    leaves: Vec<ContextString>,
    depth: usize,
    trie: Vec<TrieNode>,
}

impl ContextTree {
    /// Validate a leaf set: nonempty, suffix-free, Kraft equality.
    ///
    /// The Kraft sum is evaluated in exact integer arithmetic
    /// (`sum |A|^(depth - |s|)` against `|A|^depth`), so the check cannot be
    /// fooled by floating-point rounding.
    pub fn validate(alphabet: Alphabet, mut leaves: Vec<ContextString>) -> Result<Self, TreeError> {
        if leaves.is_empty() {
            return Err(TreeError::EmptyLeafSet);
        }
        for leaf in &leaves {
            for &s in leaf.symbols() {
                if !alphabet.contains(s) {
                    return Err(StringError::SymbolOutOfRange {
                        symbol: s,
                        alphabet: alphabet.size(),
                    }
                    .into());
                }
            }
        }
        leaves.sort();
        for pair in leaves.windows(2) {
            if pair[0] == pair[1] {
                return Err(TreeError::DuplicateLeaf(pair[0].clone()));
            }
        }

        let depth = leaves.iter().map(ContextString::len).max().unwrap();
        if alphabet.pow_checked(depth as u32).is_none() {
            return Err(TreeError::DepthTooLarge(depth));
        }

        // Suffix-freeness: build the trie, failing if an insertion passes
        // through an existing leaf or ends on an internal node.
        let mut trie = vec![TrieNode::new()];
        for (id, leaf) in leaves.iter().enumerate() {
            let mut node = 0usize;
            // Walk from the most recent symbol backwards.
            for (pos, &sym) in leaf.symbols().iter().rev().enumerate() {
                if let Some(other) = trie[node].leaf {
                    return Err(TreeError::SuffixClash {
                        shorter: leaves[other as usize].clone(),
                        longer: leaf.clone(),
                    });
                }
                let next = match trie[node].children[sym as usize] {
                    Some(c) => c as usize,
                    None => {
                        let c = trie.len();
                        trie.push(TrieNode::new());
                        trie[node].children[sym as usize] = Some(c as u32);
                        c
                    }
                };
                node = next;
                let _ = pos;
            }
            if trie[node].leaf.is_some() || trie[node].children.iter().any(Option::is_some) {
                // Either a duplicate (caught above) or this leaf is a suffix
                // of a previously inserted longer leaf.
                let longer = leaves
                    .iter()
                    .find(|other| other.len() > leaf.len() && leaf.is_suffix_of(other.symbols()))
                    .cloned()
                    .unwrap_or_else(|| leaf.clone());
                return Err(TreeError::SuffixClash {
                    shorter: leaf.clone(),
                    longer,
                });
            }
            trie[node].leaf = Some(id as u32);
        }

        // Kraft equality in exact integer arithmetic.
        let want = alphabet.pow_checked(depth as u32).unwrap();
        let mut got: u128 = 0;
        for leaf in &leaves {
            let term = alphabet
                .pow_checked((depth - leaf.len()) as u32)
                .ok_or(TreeError::DepthTooLarge(depth))?;
            got = got
                .checked_add(term)
                .ok_or(TreeError::DepthTooLarge(depth))?;
        }
        if got != want {
            return Err(TreeError::KraftViolation { got, want });
        }

        Ok(ContextTree {
            alphabet,
            leaves,
            depth,
            trie,
        })
    }

    /// The complete tree `A^k` whose leaves are all strings of length `k`.
    pub fn complete(alphabet: Alphabet, k: usize) -> Result<Self, TreeError> {
        let n = alphabet
            .pow_checked(k as u32)
            .filter(|&n| n <= (1u128 << 26))
            .ok_or(TreeError::DepthTooLarge(k))? as usize;
        let leaves = (0..n)
            .map(|i| ContextString::decode(i, k, alphabet))
            .collect();
        ContextTree::validate(alphabet, leaves)
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// Maximal leaf depth `kappa(T)` (the memory of the process).
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaves(&self) -> &[ContextString] {
        &self.leaves
    }

    pub fn leaf(&self, id: usize) -> &ContextString {
        &self.leaves[id]
    }

    pub fn leaf_id(&self, s: &ContextString) -> Option<usize> {
        self.leaves.binary_search(s).ok()
    }

    /// True iff every leaf has length exactly `depth` (tree is `A^depth`).
    pub fn is_complete(&self) -> bool {
        self.leaves.iter().all(|l| l.len() == self.depth)
    }

    /// The context map: find the unique leaf that is a suffix of `history`.
    ///
    /// Any history of length at least `kappa(T)` has exactly one matching
    /// leaf; shorter histories may still determine one (when they already
    /// reach a shallow leaf), otherwise the history is too short.
    pub fn context_of(&self, history: &[u8]) -> Result<usize, TreeError> {
        let mut node = 0usize;
        if let Some(id) = self.trie[node].leaf {
            return Ok(id as usize); // single-leaf tree {empty string}
        }
        for &sym in history.iter().rev() {
            debug_assert!(self.alphabet.contains(sym));
            match self.trie[node].children[sym as usize] {
                Some(c) => node = c as usize,
                // Valid trees have all internal children present; missing
                // children can only mean an out-of-range symbol.
                None => {
                    return Err(StringError::SymbolOutOfRange {
                        symbol: sym,
                        alphabet: self.alphabet.size(),
                    }
                    .into())
                }
            }
            if let Some(id) = self.trie[node].leaf {
                return Ok(id as usize);
            }
        }
        Err(TreeError::HistoryTooShort {
            got: history.len(),
            need: self.depth,
        })
    }

    /// Leaf ids of the subtree rooted at `w`: all leaves having `w` as a
    /// suffix.  Empty when `w` is not a node of the tree.
    pub fn subtree_leaves(&self, w: &ContextString) -> Vec<usize> {
        self.leaves
            .iter()
            .enumerate()
            .filter(|(_, leaf)| w.is_suffix_of(leaf.symbols()))
            .map(|(id, _)| id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(alpha: usize, leaves: &[&str]) -> Result<ContextTree, TreeError> {
        let a = Alphabet::new(alpha).unwrap();
        ContextTree::validate(a, leaves.iter().map(|s| s.parse().unwrap()).collect())
    }

    #[test]
    fn accepts_unbalanced_full_tree() {
        let t = tree(2, &["11", "01", "0"]).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(t.num_leaves(), 3);
        assert!(!t.is_complete());
    }

    #[test]
    fn rejects_suffix_clash_and_kraft_violation() {
        // "0" is a suffix of "00": clash (and the set also fails Kraft).
        let err = tree(2, &["0", "00", "1"]).unwrap_err();
        assert!(matches!(err, TreeError::SuffixClash { .. }), "{err:?}");

        // Suffix-free but Kraft sum < 1.
        let err = tree(2, &["11", "0"]).unwrap_err();
        assert!(matches!(err, TreeError::KraftViolation { .. }), "{err:?}");

        let err = tree(2, &[]).unwrap_err();
        assert_eq!(err, TreeError::EmptyLeafSet);
    }

    #[test]
    fn context_lookup_matches_most_recent_symbols() {
        let t = tree(2, &["11", "01", "0"]).unwrap();
        let id = |s: &str| t.leaf_id(&s.parse().unwrap()).unwrap();
        // History ...1101 ends in 01.
        assert_eq!(t.context_of(&[1, 1, 0, 1]).unwrap(), id("01"));
        // History ...10 ends in 0, which is already a leaf.
        assert_eq!(t.context_of(&[1, 0]).unwrap(), id("0"));
        assert_eq!(t.context_of(&[0]).unwrap(), id("0"));
        // A single trailing 1 does not determine a leaf.
        assert_eq!(
            t.context_of(&[1]).unwrap_err(),
            TreeError::HistoryTooShort { got: 1, need: 2 }
        );
    }

    #[test]
    fn complete_tree_and_subtrees() {
        let a = Alphabet::new(2).unwrap();
        let t = ContextTree::complete(a, 2).unwrap();
        assert!(t.is_complete());
        assert_eq!(t.num_leaves(), 4);
        let sub = t.subtree_leaves(&"1".parse().unwrap());
        let names: Vec<String> = sub.iter().map(|&i| t.leaf(i).to_string()).collect();
        assert_eq!(names, vec!["01", "11"]);
    }

    #[test]
    fn single_leaf_memoryless_tree() {
        let a = Alphabet::new(2).unwrap();
        let t = ContextTree::validate(a, vec![ContextString::empty()]).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.context_of(&[]).unwrap(), 0);
        assert_eq!(t.context_of(&[1, 0]).unwrap(), 0);
    }

    #[test]
    fn ternary_complete_tree() {
        let t = tree(3, &["00", "10", "20", "1", "2"]).unwrap();
        assert_eq!(t.depth(), 2);
        assert_eq!(
            t.context_of(&[2, 0]).unwrap(),
            t.leaf_id(&"20".parse().unwrap()).unwrap()
        );
    }
}
