use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::numkernel::Graph;
use crate::parallel::map_ordered;
use crate::som::{Noise, Policy, SomError, SomModel, Supervision};
use crate::treebank::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgVariant {
    pub tokens: Vec<String>,
    /// Critical region `[start, end)` in token positions.
    pub region: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgItem {
    pub id: String,
    pub variants: Vec<SgVariant>,
    pub grammatical_index: usize,
    /// Optional grouping key for the report (e.g. number of distractors).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgSuite {
    pub items: Vec<SgItem>,
}

impl SgItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let fail = |message: String| Err(EvalError::Suite { item: self.id.clone(), message });
        if self.variants.len() < 2 {
            return fail(format!("{} variants, need at least 2", self.variants.len()));
        }
        if self.grammatical_index >= self.variants.len() {
            return fail(format!("grammatical_index {} out of range", self.grammatical_index));
        }
        for (k, v) in self.variants.iter().enumerate() {
            let [s, e] = v.region;
            if v.tokens.is_empty() {
                return fail(format!("variant {k} is empty"));
            }
            if s >= e || e > v.tokens.len() {
                return fail(format!("variant {k}: region [{s}, {e}) is not a span of {} tokens", v.tokens.len()));
            }
        }
        let first = &self.variants[0];
        let prefix = &first.tokens[..first.region[0]];
        let suffix = &first.tokens[first.region[1]..];
        for (k, v) in self.variants.iter().enumerate().skip(1) {
            if &v.tokens[..v.region[0]] != prefix || &v.tokens[v.region[1]..] != suffix {
                return fail(format!("variant {k} differs from variant 0 outside its region"));
            }
        }
        Ok(())
    }
}

impl SgSuite {
    pub fn validate(&self) -> Result<(), EvalError> {
        self.items.iter().try_for_each(SgItem::validate)
    }

    pub fn from_json(text: &str) -> Result<SgSuite, EvalError> {
        let suite: SgSuite = serde_json::from_str(text)?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn read(path: &Path) -> Result<SgSuite, EvalError> {
        SgSuite::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgItemResult {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// Region log-probability of each variant.
    pub scores: Vec<f64>,
    /// Grammatical score minus the best ungrammatical score.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgReport {
    pub accuracy: f64,
    pub n_items: usize,
    pub n_passed: usize,
    pub by_condition: BTreeMap<String, f64>,
    pub items: Vec<SgItemResult>,
}

impl SgReport {
    pub fn from_scores(items: &[SgItem], scores: Vec<Vec<f64>>) -> SgReport {
        let results: Vec<SgItemResult> = items
            .iter()
            .zip(scores)
            .map(|(item, scores)| {
                let good = scores[item.grammatical_index];
                let best_bad = scores
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != item.grammatical_index)
                    .map(|(_, &s)| s)
                    .fold(f64::NEG_INFINITY, f64::max);
                let margin = good - best_bad;
                SgItemResult { id: item.id.clone(), condition: item.condition.clone(), scores, margin, passed: margin > 0.0 }
            })
            .collect();
        let n_passed = results.iter().filter(|r| r.passed).count();
        let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for r in &results {
            if let Some(c) = &r.condition {
                let e = groups.entry(c.clone()).or_default();
                e.0 += r.passed as usize;
                e.1 += 1;
            }
        }
        SgReport {
            accuracy: if results.is_empty() { 0.0 } else { n_passed as f64 / results.len() as f64 },
            n_items: results.len(),
            n_passed,
            by_condition: groups.into_iter().map(|(k, (p, n))| (k, p as f64 / n as f64)).collect(),
            items: results,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "condition", "margin", "passed", "scores"])?;
        for r in &self.items {
            let scores: Vec<String> = r.scores.iter().map(|s| format!("{s:.6}")).collect();
            w.write_record([
                r.id.as_str(),
                r.condition.as_deref().unwrap_or(""),
                &format!("{:.6}", r.margin),
                if r.passed { "1" } else { "0" },
                &scores.join(" "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn region_logprob(model: &SomModel, vocab: &Vocab, variant: &SgVariant) -> Result<f64, SomError> {
    let tokens = vocab.encode(&variant.tokens);
    let mut g = Graph::new(&model.params);
    let out = model
        .run_sentence(&mut g, &tokens, Supervision::None, Policy::Greedy, None, &mut Noise::off(), None)?;
    let [s, e] = variant.region;
    Ok(-out.token_nll[s..e].iter().sum::<f64>())
}

/// Scores every item: the grammatical variant must have strictly higher
/// summed region log-probability than every other variant.
pub fn sg_score(model: &SomModel, vocab: &Vocab, suite: &SgSuite, workers: usize) -> Result<SgReport, EvalError> {
    suite.validate()?;
    let scores: Result<Vec<Vec<f64>>, EvalError> = map_ordered(&suite.items, workers, |i, item| {
        item.variants
            .iter()
            .map(|v| region_logprob(model, vocab, v).map_err(|source| EvalError::Sentence { id: i, source }))
            .collect()
    })
    .into_iter()
    .collect();
    Ok(SgReport::from_scores(&suite.items, scores?))
}
