//! Seeded synthetic corpora for smoke runs and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labeling::{CompressionExample, KeepMask};
use crate::ptb::ParseTree;
use crate::tree::{NodeId, TreeBuilder};

const PHRASES: [&str; 5] = ["NP", "VP", "PP", "ADJP", "ADVP"];
const PRETERMINALS: [(&str, &[&str]); 7] = [
    ("DT", &["the", "a", "this", "every"]),
    ("NN", &["dog", "city", "report", "river", "plan", "song"]),
    ("VB", &["runs", "sees", "builds", "likes", "finds"]),
    ("JJ", &["red", "quiet", "large", "early"]),
    ("RB", &["very", "often", "quickly"]),
    ("IN", &["with", "near", "under", "after"]),
    ("PRP", &["you", "she", "they", "it"]),
];

/// Random labeled tree: every non-root node above `max_depth` is internal
/// with probability 0.55, out-degree in `1..=max_degree`. Internal
/// labels come from `tags`, leaf labels from `words`. The root is always
/// internal unless `max_depth` is 0.
pub fn random_tree(
    rng: &mut impl Rng,
    max_depth: usize,
    max_degree: usize,
    tags: &[&str],
    words: &[&str],
) -> ParseTree {
    let mut b = TreeBuilder::new();
    fn grow(
        b: &mut TreeBuilder<String>,
        rng: &mut impl Rng,
        parent: Option<NodeId>,
        depth: usize,
        max_depth: usize,
        max_degree: usize,
        tags: &[&str],
        words: &[&str],
    ) {
        let internal = depth < max_depth && (depth == 0 || rng.gen_bool(0.55));
        if !internal {
            b.add(words.choose(rng).expect("words").to_string(), parent);
            return;
        }
        let id = b.add(tags.choose(rng).expect("tags").to_string(), parent);
        for _ in 0..rng.gen_range(1..=max_degree) {
            grow(b, rng, Some(id), depth + 1, max_depth, max_degree, tags, words);
        }
    }
    grow(&mut b, rng, None, 0, max_depth, max_degree, tags, words);
    ParseTree::new(b.finish().expect("grown trees are valid"))
}

/// Random tree with at most `max_nodes` nodes, retrying until it fits.
pub fn random_small_tree(
    rng: &mut impl Rng,
    max_nodes: usize,
    tags: &[&str],
    words: &[&str],
) -> ParseTree {
    loop {
        let depth = rng.gen_range(0..=4);
        let t = random_tree(rng, depth, 3, tags, words);
        if t.tree().len() <= max_nodes {
            return t;
        }
    }
}

/// Parse-like sentences: ROOT → S → phrases → preterminal → word, with
/// nesting up to depth 5. A leaf is deleted when its preterminal is DT or RB
/// or when any ancestor is a PP or ADVP; otherwise it is kept.
pub fn rule_corpus(n: usize, seed: u64) -> Vec<CompressionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut b = TreeBuilder::new();
            let root = b.add("ROOT".to_string(), None);
            let s = b.add("S".to_string(), Some(root));
            for _ in 0..rng.gen_range(2..=3) {
                phrase(&mut b, &mut rng, s, 2);
            }
            let tree = ParseTree::new(b.finish().expect("valid"));
            let mask = rule_mask(&tree);
            CompressionExample {
                id: format!("rule-{i}"),
                tree,
                mask,
                annotator: None,
            }
        })
        .collect()
}

fn phrase(b: &mut TreeBuilder<String>, rng: &mut ChaCha8Rng, parent: NodeId, depth: usize) {
    let id = b.add(PHRASES.choose(rng).expect("phrases").to_string(), Some(parent));
    for _ in 0..rng.gen_range(1..=3) {
        // depth counts edges from ROOT; words of a phrase at depth d sit at
        // d + 2, which must stay ≤ 5.
        if depth + 1 < 4 && rng.gen_bool(0.3) {
            phrase(b, rng, id, depth + 1);
        } else {
            let (tag, words) = PRETERMINALS.choose(rng).expect("tags");
            let pt = b.add(tag.to_string(), Some(id));
            b.add(words.choose(rng).expect("words").to_string(), Some(pt));
        }
    }
}

fn rule_mask(t: &ParseTree) -> KeepMask {
    let tree = t.tree();
    KeepMask::new(
        t.leaves()
            .into_iter()
            .map(|leaf| {
                let pre = tree.parent(leaf).expect("leaf under preterminal");
                if matches!(tree.label(pre).as_str(), "DT" | "RB") {
                    return false;
                }
                let mut u = tree.parent(pre);
                while let Some(a) = u {
                    if matches!(tree.label(a).as_str(), "PP" | "ADVP") {
                        return false;
                    }
                    u = tree.parent(a);
                }
                true
            })
            .collect(),
    )
}

/// The word whose label depends only on where it sits in the tree.
pub const AMBIGUOUS_WORD: &str = "you";

/// Sentences with two occurrences of [`AMBIGUOUS_WORD`] under the same
/// preterminal: one as subject (kept) and one inside a PP (deleted). Every
/// other word is kept unless it is inside a PP. A per-word constant
/// predictor is therefore right on exactly half of the ambiguous leaves.
pub fn context_corpus(n: usize, seed: u64) -> Vec<CompressionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verbs = ["runs", "sees", "builds", "likes", "finds"];
    let nouns = ["dog", "city", "report", "river", "plan", "song"];
    let preps = ["with", "near", "under", "after"];
    (0..n)
        .map(|i| {
            let mut text = String::from("(ROOT (S (NP (PRP you)) (VP ");
            text.push_str(&format!("(VB {})", verbs.choose(&mut rng).unwrap()));
            let pp = format!("(PP (IN {}) (NP (PRP you)))", preps.choose(&mut rng).unwrap());
            let obj = format!("(NP (NN {}))", nouns.choose(&mut rng).unwrap());
            let mut parts = vec![pp, obj];
            if rng.gen_bool(0.5) {
                parts.push(format!(
                    "(PP (IN {}) (NP (NN {})))",
                    preps.choose(&mut rng).unwrap(),
                    nouns.choose(&mut rng).unwrap()
                ));
            }
            parts.shuffle(&mut rng);
            for p in parts {
                text.push(' ');
                text.push_str(&p);
            }
            text.push_str(")))");
            let tree = ParseTree::parse(&text).expect("generated tree parses");
            let mask = in_pp_mask(&tree);
            CompressionExample {
                id: format!("ctx-{i}"),
                tree,
                mask,
                annotator: None,
            }
        })
        .collect()
}

fn in_pp_mask(t: &ParseTree) -> KeepMask {
    let tree = t.tree();
    KeepMask::new(
        t.leaves()
            .into_iter()
            .map(|leaf| {
                let mut u = tree.parent(leaf);
                while let Some(a) = u {
                    if tree.label(a) == "PP" {
                        return false;
                    }
                    u = tree.parent(a);
                }
                true
            })
            .collect(),
    )
}
