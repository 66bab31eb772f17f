use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::treebank::Tree;

/// Scored brackets of `tree`: inclusive token spans of internal nodes,
/// minus the whole-sentence span and single tokens.
pub fn span_set(tree: &Tree) -> BTreeSet<(usize, usize)> {
    let whole = tree.span();
    tree.internal_spans().into_iter().filter(|&(a, b)| b > a && (a, b) != whole).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    pub n_sentences: usize,
}

/// Micro-averaged unlabeled bracket scores. An empty bracket set on one side
/// counts as perfect precision (or recall), so trivial corpora score 1.
pub fn unlabeled_f1(predicted: &[Tree], gold: &[Tree]) -> Result<F1Report, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::Data {
            id: predicted.len().min(gold.len()),
            message: format!("{} predicted trees for {} gold trees", predicted.len(), gold.len()),
        });
    }
    let (mut matched, mut n_pred, mut n_gold) = (0, 0, 0);
    for (id, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.num_leaves() != g.num_leaves() {
            return Err(EvalError::Data {
                id,
                message: format!("predicted tree has {} leaves, gold has {}", p.num_leaves(), g.num_leaves()),
            });
        }
        let ps = span_set(p);
        let gs = span_set(g);
        matched += ps.intersection(&gs).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    let precision = if n_pred == 0 { 1.0 } else { matched as f64 / n_pred as f64 };
    let recall = if n_gold == 0 { 1.0 } else { matched as f64 / n_gold as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(F1Report { precision, recall, f1, matched, predicted: n_pred, gold: n_gold, n_sentences: predicted.len() })
}
