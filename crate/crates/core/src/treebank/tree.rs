use std::fmt;

use serde::{Deserialize, Serialize};

use super::TreebankError;

/// Unlabeled constituency tree over 0-based token positions.
///
/// Serializes as nested JSON arrays of leaf indices, e.g. `[[0,1],2]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tree {
    Leaf(usize),
    Node(Vec<Tree>),
}

impl Tree {
    pub fn leaf(i: usize) -> Self {
        Tree::Leaf(i)
    }

    pub fn node(children: Vec<Tree>) -> Self {
        Tree::Node(children)
    }

    /// First and last token covered (inclusive).
    pub fn span(&self) -> (usize, usize) {
        match self {
            Tree::Leaf(i) => (*i, *i),
            Tree::Node(ch) => (ch[0].span().0, ch[ch.len() - 1].span().1),
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node(ch) => ch.iter().map(Tree::num_leaves).sum(),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            Tree::Leaf(i) => out.push(*i),
            Tree::Node(ch) => ch.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node(ch) => 1 + ch.iter().map(Tree::depth).max().unwrap_or(0),
        }
    }

    pub fn is_binary(&self) -> bool {
        match self {
            Tree::Leaf(_) => true,
            Tree::Node(ch) => ch.len() == 2 && ch.iter().all(Tree::is_binary),
        }
    }

    /// Spans of all internal nodes, in pre-order.
    pub fn internal_spans(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.collect_spans(&mut out);
        out
    }

    fn collect_spans(&self, out: &mut Vec<(usize, usize)>) {
        if let Tree::Node(ch) = self {
            out.push(self.span());
            ch.iter().for_each(|c| c.collect_spans(out));
        }
    }

    /// Checks that internal nodes have at least two children and that the
    /// leaves enumerate `0..n` in order, which makes every span contiguous
    /// and the children of each node tile it.
    pub fn validate(&self) -> Result<(), TreebankError> {
        fn arity_ok(t: &Tree) -> bool {
            match t {
                Tree::Leaf(_) => true,
                Tree::Node(ch) => ch.len() >= 2 && ch.iter().all(arity_ok),
            }
        }
        if !arity_ok(self) {
            return Err(TreebankError::InvalidTree("internal node with fewer than two children".into()));
        }
        let leaves = self.leaves();
        if leaves.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(TreebankError::InvalidTree(format!("leaves {leaves:?} are not 0..n in order")));
        }
        Ok(())
    }

    /// Returns a copy whose leaves are renumbered `0..n` left to right.
    pub fn renumbered(&self) -> Tree {
        fn go(t: &Tree, next: &mut usize) -> Tree {
            match t {
                Tree::Leaf(_) => {
                    *next += 1;
                    Tree::Leaf(*next - 1)
                }
                Tree::Node(ch) => Tree::Node(ch.iter().map(|c| go(c, next)).collect()),
            }
        }
        go(self, &mut 0)
    }

    /// Renders with the given leaf words, e.g. `(X (X the dog) barked)`.
    pub fn to_brackets(&self, words: &[String]) -> String {
        let mut s = String::new();
        self.write_brackets(words, &mut s);
        s
    }

    fn write_brackets(&self, words: &[String], out: &mut String) {
        match self {
            Tree::Leaf(i) => out.push_str(&escape_word(words.get(*i).map(String::as_str).unwrap_or("?"))),
            Tree::Node(ch) => {
                out.push_str("(X");
                for c in ch {
                    out.push(' ');
                    c.write_brackets(words, out);
                }
                out.push(')');
            }
        }
    }
}

fn escape_word(w: &str) -> String {
    w.replace('(', "-LRB-").replace(')', "-RRB-")
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf(i) => write!(f, "{i}"),
            Tree::Node(ch) => {
                write!(f, "(")?;
                for (k, c) in ch.iter().enumerate() {
                    if k > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A [`Tree`] in which every internal node has exactly two children.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Tree", into = "Tree")]
pub struct BinaryTree(Tree);

impl BinaryTree {
    pub fn as_tree(&self) -> &Tree {
        &self.0
    }

    pub fn into_tree(self) -> Tree {
        self.0
    }

    /// Builds `(a b)`.
    pub fn join(a: BinaryTree, b: BinaryTree) -> BinaryTree {
        BinaryTree(Tree::Node(vec![a.0, b.0]))
    }

    pub fn leaf(i: usize) -> BinaryTree {
        BinaryTree(Tree::Leaf(i))
    }
}

impl TryFrom<Tree> for BinaryTree {
    type Error = TreebankError;

    fn try_from(t: Tree) -> Result<Self, Self::Error> {
        if t.is_binary() {
            Ok(BinaryTree(t))
        } else {
            Err(TreebankError::InvalidTree("not binary".into()))
        }
    }
}

impl From<BinaryTree> for Tree {
    fn from(b: BinaryTree) -> Tree {
        b.0
    }
}

impl std::ops::Deref for BinaryTree {
    type Target = Tree;

    fn deref(&self) -> &Tree {
        &self.0
    }
}

impl fmt::Display for BinaryTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Left binarization: `(c1 c2 ... ck)` becomes `(((c1 c2) c3) ... ck)`.
pub fn binarize_left(t: &Tree) -> BinaryTree {
    fn go(t: &Tree) -> Tree {
        match t {
            Tree::Leaf(i) => Tree::Leaf(*i),
            Tree::Node(ch) => {
                let mut it = ch.iter().map(go);
                let first = it.next().expect("nonempty node");
                it.fold(first, |acc, c| Tree::Node(vec![acc, c]))
            }
        }
    }
    BinaryTree(go(t))
}

/// Fully left-branching binary tree over `n` leaves.
pub fn left_branching(n: usize) -> BinaryTree {
    assert!(n >= 1);
    (1..n).fold(BinaryTree::leaf(0), |acc, i| BinaryTree::join(acc, BinaryTree::leaf(i)))
}

/// Fully right-branching binary tree over `n` leaves.
pub fn right_branching(n: usize) -> BinaryTree {
    assert!(n >= 1);
    (0..n - 1).rev().fold(BinaryTree::leaf(n - 1), |acc, i| BinaryTree::join(BinaryTree::leaf(i), acc))
}

/// Every tree over `n` leaves whose internal nodes have at least two
/// children, in a fixed order.
pub fn enumerate_trees(n: usize) -> Vec<Tree> {
    fn span(l: usize, r: usize) -> Vec<Tree> {
        if l == r {
            return vec![Tree::Leaf(l)];
        }
        let mut out = Vec::new();
        // Choose the first child's span, then the rest as a sequence of >= 1 children.
        for k in l..r {
            for first in span(l, k) {
                for rest in seqs(k + 1, r) {
                    let mut ch = vec![first.clone()];
                    ch.extend(rest);
                    out.push(Tree::Node(ch));
                }
            }
        }
        out
    }
    /// Nonempty sequences of sibling subtrees tiling `l..=r`.
    fn seqs(l: usize, r: usize) -> Vec<Vec<Tree>> {
        let mut out: Vec<Vec<Tree>> = span(l, r).into_iter().map(|t| vec![t]).collect();
        for k in l..r {
            for first in span(l, k) {
                for rest in seqs(k + 1, r) {
                    let mut ch = vec![first.clone()];
                    ch.extend(rest);
                    out.push(ch);
                }
            }
        }
        out
    }
    assert!(n >= 1);
    span(0, n - 1)
}

/// Random tree over `n` leaves: each split draws 2..=`max_arity` children.
pub fn random_tree<R: rand::Rng>(n: usize, max_arity: usize, rng: &mut R) -> Tree {
    fn go<R: rand::Rng>(l: usize, r: usize, max_arity: usize, rng: &mut R) -> Tree {
        if l == r {
            return Tree::Leaf(l);
        }
        let width = r - l + 1;
        let k = rng.gen_range(2..=max_arity.max(2).min(width));
        let mut cuts: Vec<usize> = rand::seq::index::sample(rng, width - 1, k - 1).into_vec();
        cuts.sort_unstable();
        let mut start = l;
        let mut ch = Vec::with_capacity(k);
        for c in cuts.into_iter().chain(std::iter::once(width - 1)) {
            ch.push(go(start, l + c, max_arity, rng));
            start = l + c + 1;
        }
        Tree::Node(ch)
    }
    assert!(n >= 1);
    go(0, n - 1, max_arity, rng)
}
