//! Perplexity, greedy parsing, bracket F1, and minimal-pair scoring.

mod f1;
mod sg;

pub use f1::{span_set, unlabeled_f1, F1Report};
pub use sg::{sg_score, SgItem, SgItemResult, SgReport, SgSuite, SgVariant};

use serde::{Deserialize, Serialize};

use crate::numkernel::{Graph, KernelError};
use crate::oracle::static_labels;
use crate::parallel::map_ordered;
use crate::som::{Noise, Policy, SomError, SomModel, Supervision};
use crate::treebank::{BinaryTree, Sentence};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("sentence {id}: {source}")]
    Sentence { id: usize, source: SomError },
    #[error("sentence {id}: {message}")]
    Data { id: usize, message: String },
    #[error("suite item {item}: {message}")]
    Suite { item: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EvalError {
    /// True when the failure is a numeric fault rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, EvalError::Sentence { source: SomError::Kernel(_), .. })
    }
}

/// Where parsing decisions come from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeSource {
    /// Greedy decisions from the model's own attention.
    Predicted,
    /// Decisions replaced with the static labels of the gold tree.
    Gold,
}

impl std::str::FromStr for TreeSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predicted" => Ok(TreeSource::Predicted),
            "gold" => Ok(TreeSource::Gold),
            other => Err(format!("unknown tree source {other:?}")),
        }
    }
}

/// Per-sentence evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEval {
    pub id: usize,
    pub n_tokens: usize,
    pub nll: f64,
    /// Summed structure loss (0 without labels).
    pub s_nll: f64,
    pub token_nll: Vec<f64>,
    pub decisions: Vec<usize>,
    pub tree: BinaryTree,
    pub p_total: usize,
    pub p_correct: usize,
    pub q_total: usize,
    pub q_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub ppl: f64,
    /// Prediction targets, end of sentence included.
    pub n_tokens: usize,
    pub n_sentences: usize,
    pub nll: f64,
    /// Structure loss per prediction target.
    pub s_loss: f64,
    pub p_acc: f64,
    pub q_acc: f64,
    pub trees: TreeSource,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Evaluates one sentence without dropout. Predicted mode scores structure
/// against dynamic labels of the model's own decisions when a gold tree is
/// available and fits the grid.
pub fn evaluate_sentence(
    model: &SomModel,
    id: usize,
    sentence: &Sentence,
    source: TreeSource,
) -> Result<SentenceEval, EvalError> {
    let n = model.config.n_slots;
    let mut g = Graph::new(&model.params);
    let wrap = |source: SomError| EvalError::Sentence { id, source };
    let (supervision, policy) = match source {
        TreeSource::Gold => {
            let tree = sentence
                .tree
                .as_ref()
                .ok_or_else(|| EvalError::Data { id, message: "gold-tree mode needs a tree".into() })?;
            let labels = static_labels(tree, n).map_err(|e| wrap(e.into()))?;
            (Supervision::Fixed(labels), Policy::Forced)
        }
        TreeSource::Predicted => match &sentence.tree {
            Some(tree) if static_labels(tree, n).is_ok() => (Supervision::Dynamic(tree), Policy::Greedy),
            _ => (Supervision::None, Policy::Greedy),
        },
    };
    let out = model
        .run_sentence(&mut g, &sentence.tokens, supervision, policy, None, &mut Noise::off(), None)
        .map_err(wrap)?;
    if let Some(f) = g.fault() {
        return Err(wrap(SomError::Kernel(KernelError::NonFinite(f.to_string()))));
    }
    Ok(SentenceEval {
        id,
        n_tokens: out.token_nll.len(),
        nll: out.lm_nll(),
        s_nll: out.s_loss.map_or(0.0, |v| g.scalar(v)),
        token_nll: out.token_nll.clone(),
        decisions: out.decisions.clone(),
        tree: out.tree.clone(),
        p_total: out.p_total,
        p_correct: out.p_correct,
        q_total: out.q_total,
        q_correct: out.q_correct,
    })
}

/// Evaluates every sentence (sharded over `workers`, merged in input order).
pub fn evaluate_corpus(
    model: &SomModel,
    sentences: &[Sentence],
    source: TreeSource,
    workers: usize,
) -> Result<Vec<SentenceEval>, EvalError> {
    map_ordered(sentences, workers, |i, s| evaluate_sentence(model, i, s, source)).into_iter().collect()
}

pub fn summarize(evals: &[SentenceEval], source: TreeSource) -> PplReport {
    let n_tokens: usize = evals.iter().map(|e| e.n_tokens).sum();
    let nll: f64 = evals.iter().map(|e| e.nll).sum();
    let sum = |f: fn(&SentenceEval) -> usize| evals.iter().map(f).sum::<usize>();
    PplReport {
        ppl: if n_tokens == 0 { f64::NAN } else { (nll / n_tokens as f64).exp() },
        n_tokens,
        n_sentences: evals.len(),
        nll,
        s_loss: if n_tokens == 0 { 0.0 } else { evals.iter().map(|e| e.s_nll).sum::<f64>() / n_tokens as f64 },
        p_acc: ratio(sum(|e| e.p_correct), sum(|e| e.p_total)),
        q_acc: ratio(sum(|e| e.q_correct), sum(|e| e.q_total)),
        trees: source,
    }
}

/// Per-token perplexity over `sentences` (end of sentence included).
pub fn perplexity(
    model: &SomModel,
    sentences: &[Sentence],
    source: TreeSource,
    workers: usize,
) -> Result<PplReport, EvalError> {
    Ok(summarize(&evaluate_corpus(model, sentences, source, workers)?, source))
}

/// Greedy left-to-right parse of a token sequence.
pub fn parse_greedy(model: &SomModel, tokens: &[usize]) -> Result<BinaryTree, SomError> {
    let mut g = Graph::new(&model.params);
    let out = model.run_sentence(&mut g, tokens, Supervision::None, Policy::Greedy, None, &mut Noise::off(), None)?;
    Ok(out.tree)
}

/// Writes per-sentence results as CSV.
pub fn write_sentence_csv<W: std::io::Write>(evals: &[SentenceEval], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "n_tokens", "nll", "ppl", "decisions", "tree"])?;
    for e in evals {
        let decisions: Vec<String> = e.decisions.iter().map(|d| d.to_string()).collect();
        w.write_record([
            e.id.to_string(),
            e.n_tokens.to_string(),
            format!("{:.6}", e.nll),
            format!("{:.6}", (e.nll / e.n_tokens as f64).exp()),
            decisions.join(" "),
            e.tree.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
