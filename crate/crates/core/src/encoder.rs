//! Node input vectors: one-hot categories for internal nodes, word
//! embeddings for leaves, both zero-padded to a shared width.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ptb::ParseTree;
use crate::tree::NodeId;

pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} components, found {found}")]
    InconsistentDimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("category {0:?} is not in the vocabulary")]
    UnknownTag(String),
    #[error("embedding dimension must be at least 1")]
    ZeroDimension,
}

/// Words and category symbols with dense, stable indices. Word index 0 is
/// reserved for [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyParts", into = "VocabularyParts")]
pub struct Vocabulary {
    words: Vec<String>,
    tags: Vec<String>,
    word_index: HashMap<String, usize>,
    tag_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyParts {
    words: Vec<String>,
    tags: Vec<String>,
}

impl From<VocabularyParts> for Vocabulary {
    fn from(p: VocabularyParts) -> Self {
        Vocabulary::from_parts(p.words, p.tags)
    }
}

impl From<Vocabulary> for VocabularyParts {
    fn from(v: Vocabulary) -> Self {
        VocabularyParts {
            words: v.words,
            tags: v.tags,
        }
    }
}

impl Vocabulary {
    /// Words come from leaves, tags from internal nodes; both sorted.
    pub fn build<'a>(trees: impl IntoIterator<Item = &'a ParseTree>) -> Result<Self, EncoderError> {
        let mut words = BTreeSet::new();
        let mut tags = BTreeSet::new();
        let mut seen = 0usize;
        for t in trees {
            seen += 1;
            let tree = t.tree();
            for u in tree.node_ids() {
                let label = tree.label(u);
                if tree.is_leaf(u) {
                    if label != UNK {
                        words.insert(label.clone());
                    }
                } else {
                    tags.insert(label.clone());
                }
            }
        }
        if seen == 0 {
            return Err(EncoderError::EmptyCorpus);
        }
        Ok(Self::from_parts(
            std::iter::once(UNK.to_string()).chain(words).collect(),
            tags.into_iter().collect(),
        ))
    }

    /// `words[0]` must be [`UNK`].
    pub fn from_parts(words: Vec<String>, tags: Vec<String>) -> Self {
        debug_assert_eq!(words.first().map(String::as_str), Some(UNK));
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let tag_index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            words,
            tags,
            word_index,
            tag_index,
        }
    }

    /// Index of `word`, or of [`UNK`] for out-of-vocabulary words.
    pub fn word_id(&self, word: &str) -> usize {
        self.word_index.get(word).copied().unwrap_or(0)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        word != UNK && self.word_index.contains_key(word)
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.tag_index.get(tag).copied()
    }

    /// All word entries, [`UNK`] first.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Number of real words, not counting [`UNK`].
    pub fn word_count(&self) -> usize {
        self.words.len() - 1
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    /// Hex SHA-256 over tags and words in index order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tags {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One row per vocabulary word, all of the same dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dimension: usize,
    rows: Vec<Vec<f64>>,
}

/// How many vocabulary words an embedding file actually covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    pub found: usize,
    pub total: usize,
}

impl EmbeddingTable {
    pub fn new(dimension: usize, rows: Vec<Vec<f64>>) -> Result<Self, EncoderError> {
        if dimension == 0 {
            return Err(EncoderError::ZeroDimension);
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dimension {
                return Err(EncoderError::InconsistentDimension {
                    line: i + 1,
                    expected: dimension,
                    found: r.len(),
                });
            }
        }
        Ok(EmbeddingTable { dimension, rows })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Vector of word index `id`; row 0 is the all-zero UNK vector.
    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Reads the plain-text `word v1 ... vd` format, keeping vocabulary words
/// only. A leading `count dim` header line is skipped.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
) -> Result<(EmbeddingTable, Coverage), EncoderError> {
    let path = path.as_ref();
    let io = |source| EncoderError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut dimension = None;
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        let d = fields.len() - 1;
        if d == 0 {
            return Err(EncoderError::Malformed {
                line: i + 1,
                message: "word without components".into(),
            });
        }
        match dimension {
            None => dimension = Some(d),
            Some(expected) if expected != d => {
                return Err(EncoderError::InconsistentDimension {
                    line: i + 1,
                    expected,
                    found: d,
                })
            }
            Some(_) => {}
        }
        if !vocab.contains_word(fields[0]) {
            continue;
        }
        let v = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EncoderError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        found.entry(vocab.word_id(fields[0])).or_insert(v);
    }
    let dimension = dimension.ok_or(EncoderError::ZeroDimension)?;
    let coverage = Coverage {
        found: found.len(),
        total: vocab.word_count(),
    };
    if coverage.found < coverage.total {
        log::warn!(
            "embeddings cover {}/{} vocabulary words; the rest map to the UNK vector",
            coverage.found,
            coverage.total
        );
    }
    let rows = (0..vocab.words().len())
        .map(|id| found.remove(&id).unwrap_or_else(|| vec![0.0; dimension]))
        .collect();
    Ok((EmbeddingTable { dimension, rows }, coverage))
}

/// Deterministic per (word, seed) vectors with entries in [-0.1, 0.1].
pub fn random_embeddings(
    vocab: &Vocabulary,
    dimension: usize,
    seed: u64,
) -> Result<EmbeddingTable, EncoderError> {
    if dimension == 0 {
        return Err(EncoderError::ZeroDimension);
    }
    let rows = vocab
        .words()
        .iter()
        .enumerate()
        .map(|(id, word)| {
            if id == 0 {
                return vec![0.0; dimension];
            }
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(word.as_bytes());
            let digest = h.finalize();
            let mut key = [0u8; 32];
            key.copy_from_slice(&digest);
            let mut rng = ChaCha8Rng::from_seed(key);
            (0..dimension).map(|_| rng.gen_range(-0.1..=0.1)).collect()
        })
        .collect();
    Ok(EmbeddingTable { dimension, rows })
}

/// Vocabulary plus embeddings, producing the input vector of every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    vocab: Vocabulary,
    table: EmbeddingTable,
}

impl Encoder {
    pub fn new(vocab: Vocabulary, table: EmbeddingTable) -> Self {
        assert_eq!(
            vocab.words().len(),
            table.len(),
            "embedding table must have one row per vocabulary word"
        );
        Encoder { vocab, table }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    /// Shared input width: the larger of the tag count and the embedding
    /// dimension.
    pub fn input_dim(&self) -> usize {
        self.vocab.tag_count().max(self.table.dimension())
    }

    pub fn embedding_dim(&self) -> usize {
        self.table.dimension()
    }

    pub fn encode_node(&self, t: &ParseTree, u: NodeId) -> Result<Vec<f64>, EncoderError> {
        let tree = t.tree();
        let mut x = vec![0.0; self.input_dim()];
        let label = tree.label(u);
        if tree.is_leaf(u) {
            let row = self.table.row(self.vocab.word_id(label));
            x[..row.len()].copy_from_slice(row);
        } else {
            let id = self
                .vocab
                .tag_id(label)
                .ok_or_else(|| EncoderError::UnknownTag(label.clone()))?;
            x[id] = 1.0;
        }
        Ok(x)
    }

    /// Input vectors for every node, indexed by node id.
    pub fn encode_tree(&self, t: &ParseTree) -> Result<Vec<Vec<f64>>, EncoderError> {
        t.tree().node_ids().map(|u| self.encode_node(t, u)).collect()
    }

    /// Embedding of a word, UNK (all zeros) when absent.
    pub fn word_vector(&self, word: &str) -> &[f64] {
        self.table.row(self.vocab.word_id(word))
    }
}
