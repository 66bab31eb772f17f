use serde::{Deserialize, Serialize};

use super::{Tree, TreebankError};

/// Depth statistics over a treebank; depth counts edges from the root to
/// the deepest leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub max: usize,
    /// Lower median.
    pub median: usize,
    /// Rounded to one decimal.
    pub mean: f64,
}

pub fn tree_stats<'a, I>(trees: I) -> Result<TreeStats, TreebankError>
where
    I: IntoIterator<Item = &'a Tree>,
{
    let mut depths: Vec<usize> = trees.into_iter().map(Tree::depth).collect();
    if depths.is_empty() {
        return Err(TreebankError::InvalidTree("no trees to summarize".into()));
    }
    depths.sort_unstable();
    let mean = depths.iter().sum::<usize>() as f64 / depths.len() as f64;
    Ok(TreeStats {
        max: *depths.last().unwrap(),
        median: depths[(depths.len() - 1) / 2],
        mean: (mean * 10.0).round() / 10.0,
    })
}
