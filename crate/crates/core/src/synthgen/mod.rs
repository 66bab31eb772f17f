//! Probabilistic grammars with known gold trees: sampling, exact sentence
//! probabilities, and templated agreement minimal pairs.

mod grammars;
mod inside;
mod sample;
mod suite;

pub use grammars::{agreement_grammar, bundled, center_embedding_grammar, BUNDLED};
pub use inside::{true_perplexity, true_sentence_logprob, Cnf, TruePerplexity};
pub use sample::{sample_corpus, sample_derivation};
pub use suite::agreement_suite;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("grammar: {0}")]
    Grammar(String),
    #[error("only {accepted} of {attempts} samples fit the length limit; raise max_len or shorten the grammar")]
    LowAcceptance { accepted: usize, attempts: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sym {
    N(usize),
    T(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub lhs: usize,
    pub rhs: Vec<Sym>,
    pub prob: f64,
}

/// Rule as written in a grammar file; symbols that never appear on a
/// left-hand side are terminals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub lhs: String,
    pub rhs: Vec<String>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub start: String,
    pub rules: Vec<RuleSpec>,
}

/// A validated, proper, epsilon-free PCFG.
#[derive(Debug, Clone, PartialEq)]
pub struct Pcfg {
    pub nonterminals: Vec<String>,
    pub terminals: Vec<String>,
    pub rules: Vec<Rule>,
    pub start: usize,
    by_lhs: Vec<Vec<usize>>,
}

impl Pcfg {
    pub fn from_spec(spec: &GrammarSpec) -> Result<Pcfg, SynthError> {
        let mut nonterminals: Vec<String> = Vec::new();
        let mut nt_index = BTreeMap::new();
        for r in &spec.rules {
            if !nt_index.contains_key(&r.lhs) {
                nt_index.insert(r.lhs.clone(), nonterminals.len());
                nonterminals.push(r.lhs.clone());
            }
        }
        let mut terminals: Vec<String> = Vec::new();
        let mut t_index = BTreeMap::new();
        let mut rules = Vec::new();
        for r in &spec.rules {
            if r.rhs.is_empty() {
                return Err(SynthError::Grammar(format!("empty right-hand side for {}", r.lhs)));
            }
            let rhs = r
                .rhs
                .iter()
                .map(|s| match nt_index.get(s) {
                    Some(&i) => Sym::N(i),
                    None => Sym::T(*t_index.entry(s.clone()).or_insert_with(|| {
                        terminals.push(s.clone());
                        terminals.len() - 1
                    })),
                })
                .collect();
            rules.push(Rule { lhs: nt_index[&r.lhs], rhs, prob: r.prob });
        }
        let start = *nt_index
            .get(&spec.start)
            .ok_or_else(|| SynthError::Grammar(format!("start symbol {} has no rules", spec.start)))?;
        Pcfg::new(nonterminals, terminals, rules, start)
    }

    pub fn new(nonterminals: Vec<String>, terminals: Vec<String>, rules: Vec<Rule>, start: usize) -> Result<Pcfg, SynthError> {
        let mut by_lhs = vec![Vec::new(); nonterminals.len()];
        for (k, r) in rules.iter().enumerate() {
            by_lhs[r.lhs].push(k);
        }
        let g = Pcfg { nonterminals, terminals, rules, start, by_lhs };
        g.validate()?;
        Ok(g)
    }

    pub fn to_spec(&self) -> GrammarSpec {
        GrammarSpec {
            start: self.nonterminals[self.start].clone(),
            rules: self
                .rules
                .iter()
                .map(|r| RuleSpec { lhs: self.nonterminals[r.lhs].clone(), rhs: r.rhs.iter().map(|&s| self.symbol(s).to_string()).collect(), prob: r.prob })
                .collect(),
        }
    }

    pub fn symbol(&self, s: Sym) -> &str {
        match s {
            Sym::N(i) => &self.nonterminals[i],
            Sym::T(i) => &self.terminals[i],
        }
    }

    pub fn rules_for(&self, lhs: usize) -> impl Iterator<Item = &Rule> {
        self.by_lhs[lhs].iter().map(move |&k| &self.rules[k])
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Grammar(m));
        if self.start >= self.nonterminals.len() {
            return bad("start symbol out of range".into());
        }
        for (a, name) in self.nonterminals.iter().enumerate() {
            if self.by_lhs[a].is_empty() {
                return bad(format!("{name} has no rules"));
            }
            let total: f64 = self.rules_for(a).map(|r| r.prob).sum();
            if (total - 1.0).abs() > 1e-12 {
                return bad(format!("rules for {name} sum to {total}"));
            }
        }
        for r in &self.rules {
            if r.rhs.is_empty() {
                return bad(format!("empty right-hand side for {}", self.nonterminals[r.lhs]));
            }
            if !(r.prob > 0.0 && r.prob <= 1.0) {
                return bad(format!("rule probability {} for {}", r.prob, self.nonterminals[r.lhs]));
            }
            for s in &r.rhs {
                let ok = match *s {
                    Sym::N(i) => i < self.nonterminals.len(),
                    Sym::T(i) => i < self.terminals.len(),
                };
                if !ok {
                    return bad("symbol index out of range".into());
                }
            }
        }
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return bad(format!("expected derivation size is infinite (spectral radius {rho:.6})"));
        }
        let reachable = self.reachable();
        if let Some(a) = (0..self.nonterminals.len()).find(|a| !reachable.contains(a)) {
            return bad(format!("{} is unreachable from the start symbol", self.nonterminals[a]));
        }
        Ok(())
    }

    fn reachable(&self) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([self.start]);
        let mut stack = vec![self.start];
        while let Some(a) = stack.pop() {
            for r in self.rules_for(a) {
                for s in &r.rhs {
                    if let Sym::N(b) = *s {
                        if seen.insert(b) {
                            stack.push(b);
                        }
                    }
                }
            }
        }
        seen
    }

    /// `M[a][b]`: expected number of `b` children in one expansion of `a`.
    pub fn expectation_matrix(&self) -> DMatrix<f64> {
        let n = self.nonterminals.len();
        let mut m = DMatrix::zeros(n, n);
        for r in &self.rules {
            for s in &r.rhs {
                if let Sym::N(b) = *s {
                    m[(r.lhs, b)] += r.prob;
                }
            }
        }
        m
    }

    pub fn spectral_radius(&self) -> f64 {
        self.expectation_matrix().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Expected sentence length from the start symbol (no length limit).
    pub fn expected_length(&self) -> f64 {
        let n = self.nonterminals.len();
        let m = self.expectation_matrix();
        let mut t = nalgebra::DVector::zeros(n);
        for r in &self.rules {
            t[r.lhs] += r.prob * r.rhs.iter().filter(|s| matches!(s, Sym::T(_))).count() as f64;
        }
        let a = DMatrix::identity(n, n) - m;
        let e = a.lu().solve(&t).expect("proper grammar has an invertible expectation system");
        e[self.start]
    }

    /// Probability that a derivation from the start symbol has exactly
    /// `len` words, for `len` in `0..=max_len`.
    pub fn length_distribution(&self, max_len: usize) -> Vec<f64> {
        let n = self.nonterminals.len();
        let closure = self.unit_closure();
        // p[a][l]: probability that `a` derives exactly `l` words.
        let mut p = vec![vec![0.0; max_len + 1]; n];
        for l in 1..=max_len {
            let mut b = nalgebra::DVector::zeros(n);
            for r in &self.rules {
                if let [Sym::N(_)] = r.rhs[..] {
                    continue;
                }
                b[r.lhs] += r.prob * self.rhs_length_prob(&r.rhs, l, &p);
            }
            let x = &closure * b;
            for a in 0..n {
                p[a][l] = x[a];
            }
        }
        p[self.start].clone()
    }

    /// Probability that `rhs` derives exactly `l` words, using lengths
    /// strictly below `l` for multi-symbol rules.
    fn rhs_length_prob(&self, rhs: &[Sym], l: usize, p: &[Vec<f64>]) -> f64 {
        let mut dist = vec![0.0; l + 1];
        dist[0] = 1.0;
        for s in rhs {
            let mut next = vec![0.0; l + 1];
            for (have, &w) in dist.iter().enumerate().filter(|(_, w)| **w > 0.0) {
                match *s {
                    Sym::T(_) => {
                        if have < l {
                            next[have + 1] += w;
                        }
                    }
                    Sym::N(b) => {
                        for add in 1..=l - have {
                            next[have + add] += w * p[b][add];
                        }
                    }
                }
            }
            dist = next;
        }
        dist[l]
    }

    /// `(I - U)^-1` for the unit-rule matrix `U[a][b] = P(a -> b)`.
    pub(crate) fn unit_closure(&self) -> DMatrix<f64> {
        let n = self.nonterminals.len();
        let mut u = DMatrix::zeros(n, n);
        for r in &self.rules {
            if let [Sym::N(b)] = r.rhs[..] {
                u[(r.lhs, b)] += r.prob;
            }
        }
        (DMatrix::identity(n, n) - u).try_inverse().expect("unit chains terminate in a proper grammar")
    }
}
