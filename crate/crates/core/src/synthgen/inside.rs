use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Pcfg, Sym};

/// Binary-branching form of a grammar for the inside algorithm. Terminals
/// inside long rules get preterminals, long rules become right-nested
/// chains of fresh symbols, and unit chains are folded into a closure
/// matrix applied after every chart cell.
#[derive(Debug, Clone)]
pub struct Cnf {
    n: usize,
    start: usize,
    /// `(a, b, c, p)` for `a -> b c`.
    binary: Vec<(usize, usize, usize, f64)>,
    /// Per terminal, `(a, p)` for `a -> w`.
    lexical: Vec<Vec<(usize, f64)>>,
    closure: DMatrix<f64>,
    terminal_index: HashMap<String, usize>,
}

impl Cnf {
    pub fn new(g: &Pcfg) -> Cnf {
        let base = g.nonterminals.len();
        let mut n = base;
        let mut binary = Vec::new();
        let mut lexical = vec![Vec::new(); g.terminals.len()];
        let mut preterminal: HashMap<usize, usize> = HashMap::new();
        let mut pre_rules = Vec::new();
        for r in &g.rules {
            match r.rhs[..] {
                [Sym::T(w)] => lexical[w].push((r.lhs, r.prob)),
                [Sym::N(_)] => {}
                _ => {
                    let syms: Vec<usize> = r
                        .rhs
                        .iter()
                        .map(|s| match *s {
                            Sym::N(b) => b,
                            Sym::T(w) => *preterminal.entry(w).or_insert_with(|| {
                                n += 1;
                                pre_rules.push((n - 1, w));
                                n - 1
                            }),
                        })
                        .collect();
                    let mut lhs = r.lhs;
                    let mut p = r.prob;
                    for k in 0..syms.len() - 2 {
                        let fresh = n;
                        n += 1;
                        binary.push((lhs, syms[k], fresh, p));
                        lhs = fresh;
                        p = 1.0;
                    }
                    binary.push((lhs, syms[syms.len() - 2], syms[syms.len() - 1], p));
                }
            }
        }
        for (a, w) in pre_rules {
            lexical[w].push((a, 1.0));
        }
        let base_closure = g.unit_closure();
        let mut closure = DMatrix::identity(n, n);
        closure.view_mut((0, 0), (base, base)).copy_from(&base_closure);
        let terminal_index = g.terminals.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Cnf { n, start: g.start, binary, lexical, closure, terminal_index }
    }

    /// Natural-log probability of the word sequence, `-inf` when the
    /// grammar cannot produce it.
    pub fn logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let len = words.len();
        if len == 0 {
            return f64::NEG_INFINITY;
        }
        let mut ids = Vec::with_capacity(len);
        for w in words {
            match self.terminal_index.get(w.as_ref()) {
                Some(&i) => ids.push(i),
                None => return f64::NEG_INFINITY,
            }
        }
        // chart[i][j]: inside vector of span i..=j.
        let mut chart: Vec<Vec<DVector<f64>>> = vec![vec![DVector::zeros(0); len]; len];
        for (i, &w) in ids.iter().enumerate() {
            let mut b = DVector::zeros(self.n);
            for &(a, p) in &self.lexical[w] {
                b[a] += p;
            }
            chart[i][i] = &self.closure * b;
        }
        for width in 2..=len {
            for i in 0..=len - width {
                let j = i + width - 1;
                let mut b = DVector::zeros(self.n);
                for &(a, l, r, p) in &self.binary {
                    let mut s = 0.0;
                    for k in i..j {
                        s += chart[i][k][l] * chart[k + 1][j][r];
                    }
                    b[a] += p * s;
                }
                chart[i][j] = &self.closure * b;
            }
        }
        chart[0][len - 1][self.start].ln()
    }
}

pub fn true_sentence_logprob<S: AsRef<str>>(g: &Pcfg, words: &[S]) -> f64 {
    Cnf::new(g).logprob(words)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePerplexity {
    /// Per-token perplexity of the unconditioned grammar (end of sentence
    /// counted as a token).
    pub ppl: f64,
    /// Same, for the grammar conditioned on the length limit used when
    /// sampling; this is the distribution the corpus actually follows.
    pub ppl_conditional: f64,
    pub n_tokens: usize,
    pub n_sentences: usize,
    pub unparseable: usize,
    /// Probability mass of sentences within the length limit.
    pub length_mass: f64,
}

/// True-model perplexity of `sentences` under `g`, optionally conditioned
/// on `max_len`.
pub fn true_perplexity<S: AsRef<str>>(g: &Pcfg, sentences: &[Vec<S>], max_len: Option<usize>) -> TruePerplexity {
    let cnf = Cnf::new(g);
    let mut total = 0.0;
    let mut n_tokens = 0;
    let mut unparseable = 0;
    for s in sentences {
        let lp = cnf.logprob(s);
        if lp == f64::NEG_INFINITY {
            unparseable += 1;
        }
        total += lp;
        n_tokens += s.len() + 1;
    }
    let length_mass = match max_len {
        Some(m) => g.length_distribution(m).iter().sum(),
        None => 1.0,
    };
    let nll = -total / n_tokens as f64;
    let nll_cond = -(total - sentences.len() as f64 * length_mass.ln()) / n_tokens as f64;
    TruePerplexity {
        ppl: nll.exp(),
        ppl_conditional: nll_cond.exp(),
        n_tokens,
        n_sentences: sentences.len(),
        unparseable,
        length_mass,
    }
}
