//! Penn-treebank style bracketed trees and the JSON-lines corpus format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::KeepMask;
use crate::tree::{NodeId, Tree, TreeBuilder, TreeError};

/// A constituency tree: internal nodes carry category symbols, leaves carry
/// word tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseTree(Tree<String>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty input")]
    EmptyInput,
    #[error("unbalanced parentheses at byte {0}")]
    UnbalancedParens(usize),
    #[error("empty node at byte {0}")]
    EmptyNode(usize),
    #[error("trailing input at byte {0}")]
    TrailingGarbage(usize),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

impl ParseTree {
    pub fn new(tree: Tree<String>) -> Self {
        ParseTree(tree)
    }

    pub fn tree(&self) -> &Tree<String> {
        &self.0
    }

    pub fn into_tree(self) -> Tree<String> {
        self.0
    }

    /// True for a bare token with no brackets.
    pub fn is_degenerate(&self) -> bool {
        self.0.len() == 1
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.0.leaves_in_order()
    }

    pub fn leaf_count(&self) -> usize {
        self.0.node_ids().filter(|&u| self.0.is_leaf(u)).count()
    }

    pub fn tokens(&self) -> Vec<String> {
        self.leaves().into_iter().map(|u| self.0.label(u).clone()).collect()
    }

    /// Category symbols of internal nodes, in top-down order.
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.0
            .topdown_order()
            .into_iter()
            .filter(|&u| !self.0.is_leaf(u))
            .map(|u| self.0.label(u).as_str())
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse_bracketed(text)
    }

    pub fn to_bracketed(&self) -> String {
        serialize_bracketed(self)
    }
}

impl std::fmt::Display for ParseTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&serialize_bracketed(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token::Atom(s, &text[s..i]));
            }
            match ch {
                '(' => out.push(Token::Open(i)),
                ')' => out.push(Token::Close(i)),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token::Atom(s, &text[s..]));
    }
    out
}

/// Parses `(TAG child child ...)`. A bare token is a one-node tree. An
/// unlabeled bracket around a single child, as in `( (S ...) )`, is dropped.
pub fn parse_bracketed(text: &str) -> Result<ParseTree, ParseError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    if let Token::Atom(_, word) = tokens[0] {
        if tokens.len() > 1 {
            return Err(ParseError::TrailingGarbage(position(&tokens[1])));
        }
        return Ok(ParseTree(Tree::leaf(word.to_string())));
    }
    let mut pos = 0;
    let mut builder = TreeBuilder::new();
    parse_node(&tokens, &mut pos, &mut builder, None, text.len())?;
    if pos < tokens.len() {
        return Err(match tokens[pos] {
            Token::Close(at) => ParseError::UnbalancedParens(at),
            ref t => ParseError::TrailingGarbage(position(t)),
        });
    }
    Ok(ParseTree(builder.finish()?))
}

fn position(t: &Token<'_>) -> usize {
    match *t {
        Token::Open(p) | Token::Close(p) | Token::Atom(p, _) => p,
    }
}

/// Parses one bracketed node starting at `tokens[*pos]`, which must be `(`.
fn parse_node(
    tokens: &[Token<'_>],
    pos: &mut usize,
    builder: &mut TreeBuilder<String>,
    parent: Option<NodeId>,
    end: usize,
) -> Result<(), ParseError> {
    let open_at = match tokens.get(*pos) {
        Some(Token::Open(p)) => *p,
        Some(t) => return Err(ParseError::EmptyNode(position(t))),
        None => return Err(ParseError::UnbalancedParens(end)),
    };
    *pos += 1;
    let label = match tokens.get(*pos) {
        Some(Token::Atom(_, label)) => {
            *pos += 1;
            Some(*label)
        }
        Some(Token::Open(_)) => None,
        Some(Token::Close(_)) => return Err(ParseError::EmptyNode(open_at)),
        None => return Err(ParseError::UnbalancedParens(end)),
    };
    let Some(label) = label else {
        // Unlabeled wrapper: exactly one bracketed child, then `)`.
        parse_node(tokens, pos, builder, parent, end)?;
        return match tokens.get(*pos) {
            Some(Token::Close(_)) => {
                *pos += 1;
                Ok(())
            }
            Some(t) => Err(ParseError::EmptyNode(position(t))),
            None => Err(ParseError::UnbalancedParens(end)),
        };
    };
    let id = builder.add(label.to_string(), parent);
    let mut children = 0;
    loop {
        match tokens.get(*pos) {
            Some(Token::Close(_)) => {
                *pos += 1;
                break;
            }
            Some(Token::Atom(_, word)) => {
                builder.add(word.to_string(), Some(id));
                *pos += 1;
                children += 1;
            }
            Some(Token::Open(_)) => {
                parse_node(tokens, pos, builder, Some(id), end)?;
                children += 1;
            }
            None => return Err(ParseError::UnbalancedParens(end)),
        }
    }
    if children == 0 {
        return Err(ParseError::EmptyNode(open_at));
    }
    Ok(())
}

fn escape(label: &str) -> String {
    label.replace('(', "-LRB-").replace(')', "-RRB-")
}

/// Canonical single-space bracketed form.
pub fn serialize_bracketed(t: &ParseTree) -> String {
    fn write(tree: &Tree<String>, u: NodeId, out: &mut String) {
        if tree.is_leaf(u) {
            out.push_str(&escape(tree.label(u)));
            return;
        }
        out.push('(');
        out.push_str(&escape(tree.label(u)));
        for &c in tree.children(u) {
            out.push(' ');
            write(tree, c, out);
        }
        out.push(')');
    }
    let mut out = String::new();
    write(&t.0, t.0.root(), &mut out);
    out
}

/// How a record states its target compression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compression {
    Tokens(Vec<String>),
    Mask(KeepMask),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub id: String,
    pub tree: String,
    pub compression: Compression,
    pub annotator: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    tree: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compressed_tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keep_mask: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotator: Option<u8>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: keep_mask has {found} entries but the tree has {expected} leaves")]
    MaskLengthMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
}

impl CorpusRecord {
    pub fn parse_tree(&self) -> Result<ParseTree, ParseError> {
        parse_bracketed(&self.tree)
    }

    /// Decodes one JSON line; `line` is 1-based and only used for errors.
    pub fn from_json_line(text: &str, line: usize) -> Result<Self, CorpusError> {
        let malformed = |message: String| CorpusError::MalformedRecord { line, message };
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let tree = parse_bracketed(&raw.tree).map_err(|e| malformed(format!("tree: {e}")))?;
        let compression = match (raw.compressed_tokens, raw.keep_mask) {
            (Some(tokens), None) => Compression::Tokens(tokens),
            (None, Some(bits)) => {
                let mask = KeepMask::from_bits(&bits)
                    .map_err(|_| malformed("keep_mask entries must be 0 or 1".into()))?;
                if mask.len() != tree.leaf_count() {
                    return Err(CorpusError::MaskLengthMismatch {
                        line,
                        expected: tree.leaf_count(),
                        found: mask.len(),
                    });
                }
                Compression::Mask(mask)
            }
            _ => {
                return Err(malformed(
                    "exactly one of compressed_tokens or keep_mask is required".into(),
                ))
            }
        };
        Ok(CorpusRecord {
            id: raw.id,
            tree: raw.tree,
            compression,
            annotator: raw.annotator,
        })
    }

    pub fn to_json_line(&self) -> String {
        let (compressed_tokens, keep_mask) = match &self.compression {
            Compression::Tokens(t) => (Some(t.clone()), None),
            Compression::Mask(m) => (None, Some(m.to_bits())),
        };
        let raw = RawRecord {
            id: self.id.clone(),
            tree: self.tree.clone(),
            compressed_tokens,
            keep_mask,
            annotator: self.annotator,
        };
        serde_json::to_string(&raw).expect("record serializes")
    }
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>, CorpusError> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(CorpusRecord::from_json_line(&line, i + 1)?);
    }
    Ok(records)
}

pub fn write_corpus(records: &[CorpusRecord], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        writeln!(w, "{}", r.to_json_line()).map_err(io)?;
    }
    w.flush().map_err(io)
}
