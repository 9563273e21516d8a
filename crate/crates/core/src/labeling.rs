//! Conversions between compressed sentences and per-leaf keep masks.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::ptb::{Compression, CorpusRecord, ParseError, ParseTree};
use crate::tree::NodeId;

/// One keep/delete bit per leaf, left to right.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeepMask(Vec<bool>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelingError {
    #[error("compressed token {token:?} at position {position} has no match in the source")]
    NotASubsequence { position: usize, token: String },
    #[error("mask has {found} entries but the tree has {expected} leaves")]
    MaskLengthMismatch { expected: usize, found: usize },
    #[error("mask entries must be 0 or 1, found {0}")]
    InvalidBit(u8),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl KeepMask {
    pub fn new(bits: Vec<bool>) -> Self {
        KeepMask(bits)
    }

    pub fn all(len: usize, keep: bool) -> Self {
        KeepMask(vec![keep; len])
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self, LabelingError> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(LabelingError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(KeepMask)
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// The legal but suspicious "delete everything" target.
    pub fn deletes_everything(&self) -> bool {
        !self.0.is_empty() && self.kept() == 0
    }

    fn check(&self, t: &ParseTree) -> Result<(), LabelingError> {
        let expected = t.leaf_count();
        if self.len() != expected {
            return Err(LabelingError::MaskLengthMismatch {
                expected,
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for KeepMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Leftmost-greedy alignment of a compressed sentence onto its source.
pub fn align_compression<S: AsRef<str>, T: AsRef<str>>(
    source: &[S],
    compressed: &[T],
) -> Result<KeepMask, LabelingError> {
    let mut bits = vec![false; source.len()];
    let mut next = 0;
    for (position, token) in compressed.iter().enumerate() {
        let token = token.as_ref();
        match source[next..].iter().position(|s| s.as_ref() == token) {
            Some(offset) => {
                bits[next + offset] = true;
                next += offset + 1;
            }
            None => {
                return Err(LabelingError::NotASubsequence {
                    position,
                    token: token.to_string(),
                })
            }
        }
    }
    Ok(KeepMask(bits))
}

/// Deletes the masked-out leaves, then every internal node left childless,
/// cascading upward. The root always survives.
pub fn apply_mask(t: &ParseTree, m: &KeepMask) -> Result<ParseTree, LabelingError> {
    Ok(ParseTree::new(removal_plan(t, m)?.0))
}

/// Like [`apply_mask`], also returning the map from new node ids to ids in
/// `t`.
pub fn apply_mask_with_provenance(
    t: &ParseTree,
    m: &KeepMask,
) -> Result<(ParseTree, Vec<NodeId>), LabelingError> {
    let (tree, provenance) = removal_plan(t, m)?;
    Ok((ParseTree::new(tree), provenance))
}

/// Maximal subtrees whose leaves are all deleted, excluding the root.
pub fn deleted_subtree_roots(t: &ParseTree, m: &KeepMask) -> Result<HashSet<NodeId>, LabelingError> {
    m.check(t)?;
    let tree = t.tree();
    let mut survives = vec![false; tree.len()];
    for (leaf, keep) in t.leaves().into_iter().zip(m.iter()) {
        survives[leaf.index()] = keep;
    }
    for u in tree.topdown_order().into_iter().rev() {
        if !tree.is_leaf(u) {
            survives[u.index()] = tree.children(u).iter().any(|c| survives[c.index()]);
        }
    }
    let root = tree.root();
    Ok(tree
        .node_ids()
        .filter(|&u| u != root && !survives[u.index()])
        .filter(|&u| tree.parent(u).is_some_and(|p| p == root || survives[p.index()]))
        .collect())
}

fn removal_plan(
    t: &ParseTree,
    m: &KeepMask,
) -> Result<(crate::tree::Tree<String>, Vec<NodeId>), LabelingError> {
    let remove = deleted_subtree_roots(t, m)?;
    if m.deletes_everything() {
        log::warn!("mask deletes every leaf; result is the bare root");
    }
    Ok(t.tree()
        .prune_subtrees(&remove)
        .expect("root is never in the removal set"))
}

pub fn mask_to_sentence(t: &ParseTree, m: &KeepMask) -> Result<Vec<String>, LabelingError> {
    m.check(t)?;
    Ok(t.tokens()
        .into_iter()
        .zip(m.iter())
        .filter_map(|(tok, keep)| keep.then_some(tok))
        .collect())
}

/// A parsed tree together with its target mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionExample {
    pub id: String,
    pub tree: ParseTree,
    pub mask: KeepMask,
    pub annotator: Option<u8>,
}

impl CompressionExample {
    pub fn from_record(record: &CorpusRecord) -> Result<Self, LabelingError> {
        let tree = record.parse_tree()?;
        let mask = match &record.compression {
            Compression::Mask(m) => {
                m.check(&tree)?;
                m.clone()
            }
            Compression::Tokens(tokens) => align_compression(&tree.tokens(), tokens)?,
        };
        Ok(CompressionExample {
            id: record.id.clone(),
            tree,
            mask,
            annotator: record.annotator,
        })
    }

    pub fn gold_tokens(&self) -> Vec<String> {
        mask_to_sentence(&self.tree, &self.mask).expect("mask validated on construction")
    }

    pub fn to_record(&self) -> CorpusRecord {
        CorpusRecord {
            id: self.id.clone(),
            tree: self.tree.to_bracketed(),
            compression: Compression::Mask(self.mask.clone()),
            annotator: self.annotator,
        }
    }
}
