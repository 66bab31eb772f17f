//! Treebank input: CoNLL-U and bracketed trees, dependency-to-constituency
//! conversion, vocabularies, and depth statistics.

mod conllu;
mod corpus;
mod ptb;
mod stats;
mod tree;
mod vocab;

pub use conllu::{dep_to_constituency, parse_conllu, ConlluDocument, DependencyTree, Rejected};
pub use corpus::{read_jsonl, read_vocab, write_jsonl, Corpus, Sentence, Split};
pub use ptb::{parse_ptb_brackets, BracketedTree};
pub use stats::{tree_stats, TreeStats};
pub use tree::{binarize_left, enumerate_trees, left_branching, random_tree, right_branching, BinaryTree, Tree};
pub use vocab::{unk_class, Vocab, EOS, UNK_CLASSES};

#[derive(Debug, thiserror::Error)]
pub enum TreebankError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("bracket error at offset {offset}: {message}")]
    Brackets { offset: usize, message: String },
    #[error("non-projective dependency tree")]
    NonProjective,
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod proptests;
