//! Structure supervision for the memory grid and symbolic decoding.
//!
//! Slots are numbered `1..=N` with `N` the topmost. A label or decision for
//! token `t` is the candidate slot the token is written into; the memory
//! split point for that step is one slot above it. Token positions are
//! 0-based.

use serde::{Deserialize, Serialize};

use crate::treebank::{left_branching, BinaryTree, Tree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("first_sibling is undefined for the first token")]
    FirstToken,
    #[error("token {0} is outside the tree")]
    OutOfRange(usize),
    #[error("insufficient slots: label for position {position} would fall below slot 1")]
    InsufficientSlots { position: usize },
    #[error("illegal decision at step {step}: {reason}")]
    IllegalDecision { step: usize, reason: String },
    #[error("need at least 2 slots, got {0}")]
    TooFewSlots(usize),
}

/// Which labels a training run supervises with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    Dynamic,
    Static,
    #[serde(rename = "leftbranch")]
    LeftBranch,
}

impl std::str::FromStr for OracleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(OracleMode::Dynamic),
            "static" => Ok(OracleMode::Static),
            "leftbranch" => Ok(OracleMode::LeftBranch),
            other => Err(format!("unknown oracle mode {other:?}")),
        }
    }
}

impl OracleMode {
    pub fn name(self) -> &'static str {
        match self {
            OracleMode::Dynamic => "dynamic",
            OracleMode::Static => "static",
            OracleMode::LeftBranch => "leftbranch",
        }
    }
}

/// Labels for tokens `0..T` followed by the label of the virtual
/// end-of-sentence position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTrace(pub Vec<usize>);

impl LabelTrace {
    pub fn token_labels(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }

    pub fn eos_label(&self) -> usize {
        *self.0.last().unwrap()
    }

    pub fn all(&self) -> &[usize] {
        &self.0
    }
}

/// One line of the label dump written by the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDump {
    pub sentence_id: usize,
    pub xi: Vec<usize>,
    pub mode: OracleMode,
}

/// Position of the first token of the smallest constituent that contains
/// token `i` at a non-initial position.
pub fn first_sibling(tree: &Tree, i: usize) -> Result<usize, OracleError> {
    if i == 0 {
        return Err(OracleError::FirstToken);
    }
    let (lo, hi) = tree.span();
    if i < lo || i > hi {
        return Err(OracleError::OutOfRange(i));
    }
    let mut node = tree;
    loop {
        let Tree::Node(children) = node else { unreachable!("a leaf cannot contain i non-initially") };
        let child = children
            .iter()
            .find(|c| {
                let (a, b) = c.span();
                a <= i && i <= b
            })
            .expect("children tile the parent");
        match child {
            Tree::Node(_) if child.span().0 < i => node = child,
            _ => return Ok(node.span().0),
        }
    }
}

/// Checks the decision-trace invariants: first decision is `N`, every
/// decision is in `1..=N`, and no decision drops more than one slot below
/// its predecessor.
pub fn validate_decisions(decisions: &[usize], n_slots: usize) -> Result<(), OracleError> {
    for (t, &d) in decisions.iter().enumerate() {
        if d < 1 || d > n_slots {
            return Err(OracleError::IllegalDecision { step: t, reason: format!("slot {d} outside 1..={n_slots}") });
        }
        if t == 0 && d != n_slots {
            return Err(OracleError::IllegalDecision { step: 0, reason: format!("first token must use slot {n_slots}") });
        }
        if t > 0 && d + 1 < decisions[t - 1] {
            return Err(OracleError::IllegalDecision {
                step: t,
                reason: format!("slot {d} is below the occupancy mask (previous {})", decisions[t - 1]),
            });
        }
    }
    Ok(())
}

/// Online label generator: feed the model's decisions one at a time and
/// read back the best reachable label for the next position.
///
/// Construction runs the teacher-forced pass, so a tree too deep for the
/// grid fails up front. Afterwards a label can only fall below slot 1
/// because of the model's own misplacements; it is clamped to slot 1, the
/// lowest reachable write.
#[derive(Debug, Clone)]
pub struct DynamicOracle {
    first_sib: Vec<usize>,
    n_slots: usize,
    labels: Vec<usize>,
    clamped: usize,
}

impl DynamicOracle {
    pub fn new(tree: &Tree, n_slots: usize) -> Result<Self, OracleError> {
        let mut oracle = Self::unchecked(tree, n_slots)?;
        let t = oracle.num_tokens();
        let mut taken = Vec::with_capacity(t);
        for _ in 0..=t {
            let l = oracle.raw_label(&taken)?;
            oracle.labels.push(l);
            taken.push(l);
        }
        oracle.labels.clear();
        Ok(oracle)
    }

    fn unchecked(tree: &Tree, n_slots: usize) -> Result<Self, OracleError> {
        if n_slots < 2 {
            return Err(OracleError::TooFewSlots(n_slots));
        }
        let t = tree.num_leaves();
        let first_sib = (1..t).map(|i| first_sibling(tree, i)).collect::<Result<Vec<_>, _>>()?;
        Ok(DynamicOracle { first_sib, n_slots, labels: Vec::with_capacity(t + 1), clamped: 0 })
    }

    pub fn num_tokens(&self) -> usize {
        self.first_sib.len() + 1
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// How many labels were clamped up to slot 1.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    fn raw_label(&self, decisions: &[usize]) -> Result<usize, OracleError> {
        let i = self.labels.len();
        assert_eq!(decisions.len(), i, "decisions must cover exactly the previous positions");
        if i == 0 {
            return Ok(self.n_slots);
        }
        // Position T is end of sentence, which closes the root clause.
        let j = if i == self.num_tokens() { 0 } else { self.first_sib[i - 1] };
        let mu = if j + 1 == i {
            decisions[j] as isize - 1
        } else {
            *decisions[j + 1..i].iter().max().unwrap() as isize
        };
        let l = (self.labels[j] as isize - 1).max(mu);
        if l < 1 {
            return Err(OracleError::InsufficientSlots { position: i });
        }
        Ok(l as usize)
    }

    /// Label for position `decisions.len()` given the decisions actually
    /// taken at every earlier position.
    pub fn next_label(&mut self, decisions: &[usize]) -> usize {
        let label = match self.raw_label(decisions) {
            Ok(l) => l,
            Err(_) => {
                self.clamped += 1;
                1
            }
        };
        self.labels.push(label);
        label
    }
}

/// Labels for a full decision sequence (`T` decisions, `T + 1` labels).
pub fn dynamic_labels(tree: &Tree, decisions: &[usize], n_slots: usize) -> Result<LabelTrace, OracleError> {
    validate_decisions(decisions, n_slots)?;
    let mut oracle = DynamicOracle::new(tree, n_slots)?;
    if decisions.len() != oracle.num_tokens() {
        return Err(OracleError::IllegalDecision {
            step: decisions.len(),
            reason: format!("{} decisions for {} tokens", decisions.len(), oracle.num_tokens()),
        });
    }
    for i in 0..=decisions.len() {
        oracle.next_label(&decisions[..i]);
    }
    Ok(LabelTrace(oracle.labels))
}

/// Teacher-forced labels: every decision equals its own label.
pub fn static_labels(tree: &Tree, n_slots: usize) -> Result<LabelTrace, OracleError> {
    let mut oracle = DynamicOracle::unchecked(tree, n_slots)?;
    let t = oracle.num_tokens();
    let mut taken = Vec::with_capacity(t + 1);
    for _ in 0..=t {
        let l = oracle.raw_label(&taken)?;
        oracle.labels.push(l);
        taken.push(l);
    }
    Ok(LabelTrace(oracle.labels))
}

/// Static labels of the fully left-branching tree over `len` tokens.
pub fn left_branching_labels(len: usize, n_slots: usize) -> Result<LabelTrace, OracleError> {
    static_labels(left_branching(len).as_tree(), n_slots)
}

/// Symbolic memory grid: the same transition as the network, with subtrees
/// in place of vectors.
#[derive(Debug, Clone)]
pub struct SymbolicGrid {
    n_slots: usize,
    memory: Vec<Option<BinaryTree>>,
    candidates: Vec<Option<BinaryTree>>,
    prev: Option<usize>,
    step: usize,
}

impl SymbolicGrid {
    pub fn new(n_slots: usize) -> Self {
        SymbolicGrid { n_slots, memory: vec![None; n_slots], candidates: vec![None; n_slots], prev: None, step: 0 }
    }

    /// Whether writing the next token into `slot` is allowed.
    pub fn check(&self, slot: usize) -> Result<(), OracleError> {
        check_transition(self.prev, slot, self.n_slots, self.step)
    }

    /// Writes token `self.step` into candidate `slot` and composes upward.
    pub fn push(&mut self, slot: usize) -> Result<(), OracleError> {
        self.check(slot)?;
        let n = self.n_slots;
        let split = (slot + 1).min(n);
        for s in 1..=split {
            self.memory[s - 1] = self.candidates[s - 1].clone();
        }
        let mut cand = vec![None; n];
        cand[slot - 1] = Some(BinaryTree::leaf(self.step));
        for s in slot + 1..=n {
            let left = self.memory[s - 1].clone().expect("memory above the split is occupied");
            let right = cand[s - 2].clone().expect("composed from below");
            cand[s - 1] = Some(BinaryTree::join(left, right));
        }
        self.candidates = cand;
        self.prev = Some(slot);
        self.step += 1;
        Ok(())
    }

    pub fn top(&self) -> Option<&BinaryTree> {
        self.candidates[self.n_slots - 1].as_ref()
    }

    pub fn candidate(&self, slot: usize) -> Option<&BinaryTree> {
        self.candidates[slot - 1].as_ref()
    }

    pub fn memory(&self, slot: usize) -> Option<&BinaryTree> {
        self.memory[slot - 1].as_ref()
    }
}

/// Legality of writing the token at `step` into `slot`, given the slot used
/// by the previous token. After the first token, the chosen split point
/// (`slot + 1`) must be an occupied candidate, so `slot` lies in
/// `prev - 1 ..= N - 1`.
pub fn check_transition(prev: Option<usize>, slot: usize, n_slots: usize, step: usize) -> Result<(), OracleError> {
    let bad = |reason: String| Err(OracleError::IllegalDecision { step, reason });
    match prev {
        None if slot != n_slots => bad(format!("first token must use slot {n_slots}, got {slot}")),
        None => Ok(()),
        Some(_) if slot < 1 || slot >= n_slots => bad(format!("slot {slot} outside 1..={}", n_slots - 1)),
        Some(p) if slot + 1 < p => bad(format!("slot {slot} is below the occupancy mask (previous {p})")),
        Some(_) => Ok(()),
    }
}

/// Slots the next token may be written into.
pub fn legal_slots(prev: Option<usize>, n_slots: usize) -> std::ops::RangeInclusive<usize> {
    match prev {
        None => n_slots..=n_slots,
        Some(p) => p.saturating_sub(1).max(1)..=n_slots - 1,
    }
}

/// Rebuilds the binary tree implied by a decision sequence over `len` tokens.
pub fn decode_tree(decisions: &[usize], len: usize, n_slots: usize) -> Result<BinaryTree, OracleError> {
    if decisions.len() != len || len == 0 {
        return Err(OracleError::IllegalDecision {
            step: decisions.len().min(len),
            reason: format!("{} decisions for {len} tokens", decisions.len()),
        });
    }
    let mut grid = SymbolicGrid::new(n_slots);
    for &d in decisions {
        grid.push(d)?;
    }
    Ok(grid.top().cloned().expect("top slot is always occupied"))
}


#[cfg(test)]
mod proptests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::treebank::{binarize_left, random_tree};

    proptest! {
        #[test]
        fn rollout_labels_are_legal(seed in any::<u64>(), len in 1usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree(len, 4, &mut rng);
            let n_slots = binarize_left(&tree).depth() + 2;
            let mut oracle = DynamicOracle::new(&tree, n_slots).unwrap();
            let mut grid = SymbolicGrid::new(n_slots);
            let mut taken: Vec<usize> = Vec::new();
            for _ in 0..=len {
                let label = oracle.next_label(&taken);
                prop_assert!((1..=n_slots).contains(&label));
                if let Some(&p) = taken.last() {
                    prop_assert!(label + 1 >= p);
                }
                if taken.len() == len {
                    break;
                }
                let d = rng.gen_range(legal_slots(taken.last().copied(), n_slots));
                grid.push(d).unwrap();
                taken.push(d);
            }
            prop_assert_eq!(grid.top().unwrap(), &decode_tree(&taken, len, n_slots).unwrap());
        }

        #[test]
        fn teacher_forcing_matches_static(seed in any::<u64>(), len in 1usize..=15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree(len, 5, &mut rng);
            let n_slots = (binarize_left(&tree).depth() + 1).max(2);
            let s = static_labels(&tree, n_slots).unwrap();
            prop_assert_eq!(dynamic_labels(&tree, s.token_labels(), n_slots).unwrap(), s.clone());
            prop_assert_eq!(decode_tree(s.token_labels(), len, n_slots).unwrap(), binarize_left(&tree));
        }
    }
}
