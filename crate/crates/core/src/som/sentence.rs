//! Runs the network over one sentence: decisions, losses, traces.

use super::network::{self, GraphState, Noise};
use super::{SomError, SomModel};
use crate::numkernel::{masked_argmax, masked_softmax, sample_categorical, Graph, RngStream, Var};
use crate::oracle::{DynamicOracle, LabelTrace};
use crate::treebank::{BinaryTree, Tree};

/// Where structure labels come from.
#[derive(Debug, Clone)]
pub enum Supervision<'a> {
    /// No labels: no structure loss, no accuracies.
    None,
    /// Labels recomputed online from the decisions actually taken.
    Dynamic(&'a Tree),
    /// Precomputed labels (static or left-branching).
    Fixed(LabelTrace),
}

/// How the write slot and the read slot are chosen at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Draw from the attention distributions.
    Sample,
    /// Take the most probable slot.
    Greedy,
    /// Follow the fixed labels exactly.
    Forced,
}

#[derive(Debug, Clone)]
pub struct SentenceOutput {
    /// Summed next-token negative log-likelihood (`T + 1` targets).
    pub lm_loss: Var,
    /// Summed structure loss, when there was supervision.
    pub s_loss: Option<Var>,
    pub token_nll: Vec<f64>,
    /// Write slot per token.
    pub decisions: Vec<usize>,
    /// Read slot of the prediction network per token.
    pub reads: Vec<usize>,
    /// Labels for positions `0..=T` (empty without supervision).
    pub labels: Vec<usize>,
    pub p_total: usize,
    pub p_correct: usize,
    pub q_total: usize,
    pub q_correct: usize,
    /// Dynamic labels clamped at slot 1 because of earlier mistakes.
    pub clamped: usize,
    pub tree: BinaryTree,
}

impl SentenceOutput {
    pub fn lm_nll(&self) -> f64 {
        self.token_nll.iter().sum()
    }
}

enum Labels {
    None,
    Dynamic(DynamicOracle),
    Fixed(Vec<usize>),
}

impl Labels {
    /// Label of position `t`, given the decisions taken before it.
    fn at(&mut self, t: usize, decisions: &[usize]) -> Option<usize> {
        match self {
            Labels::None => None,
            Labels::Dynamic(o) => {
                if o.labels().len() == t {
                    o.next_label(decisions);
                }
                Some(o.labels()[t])
            }
            Labels::Fixed(v) => Some(v[t]),
        }
    }
}

impl SomModel {
    /// Records one sentence on `g`. `decide` must be present for
    /// [`Policy::Sample`]; `emb_keep` holds the per-batch embedding-row
    /// dropout mask (`None` disables it).
    #[allow(clippy::too_many_arguments)]
    pub fn run_sentence(
        &self,
        g: &mut Graph<'_>,
        tokens: &[usize],
        supervision: Supervision<'_>,
        policy: Policy,
        decide: Option<&mut RngStream>,
        noise: &mut Noise,
        emb_keep: Option<&[bool]>,
    ) -> Result<SentenceOutput, SomError> {
        let cfg = &self.config;
        let ids = *self.ids();
        let n = cfg.n_slots;
        let len = tokens.len();
        if len == 0 {
            return Err(SomError::Config("empty sentence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&w| w >= cfg.vocab_size) {
            return Err(SomError::UnknownToken { id: bad, size: cfg.vocab_size });
        }
        let mut labels = match &supervision {
            Supervision::None => Labels::None,
            Supervision::Dynamic(tree) => {
                if tree.num_leaves() != len {
                    return Err(SomError::Config(format!("tree has {} leaves for {len} tokens", tree.num_leaves())));
                }
                Labels::Dynamic(DynamicOracle::new(tree, n)?)
            }
            Supervision::Fixed(trace) => {
                if trace.all().len() != len + 1 {
                    return Err(SomError::Config(format!("{} labels for {len} tokens", trace.all().len())));
                }
                Labels::Fixed(trace.all().to_vec())
            }
        };
        if policy == Policy::Forced && matches!(labels, Labels::None | Labels::Dynamic(_)) {
            return Err(SomError::Config("forced decisions need fixed labels".into()));
        }
        let mut decide = decide;
        if policy == Policy::Sample && decide.is_none() {
            return Err(SomError::Config("sampled decisions need a random stream".into()));
        }
        let emb_scale = if noise.active() && cfg.dropout.emb > 0.0 { 1.0 / (1.0 - cfg.dropout.emb) } else { 1.0 };

        let mut st = GraphState::new(n);
        let mut lm_terms = Vec::with_capacity(len + 1);
        let mut s_terms = Vec::new();
        let mut token_nll = Vec::with_capacity(len + 1);
        let mut decisions = Vec::with_capacity(len);
        let mut reads = Vec::with_capacity(len);
        let (mut p_total, mut p_correct, mut q_total, mut q_correct) = (0, 0, 0, 0);

        // First token from the learned start vector.
        let start = g.param(ids.start);
        let logits = network::output_logits(g, cfg, &ids, start, noise);
        let nll = g.cross_entropy(logits, tokens[0])?;
        token_nll.push(g.scalar(nll));
        lm_terms.push(nll);

        for t in 0..len {
            let x = g.gather(ids.emb, tokens[t]);
            let x = match emb_keep {
                Some(keep) if !keep[tokens[t]] => g.scale(x, 0.0),
                Some(_) if emb_scale != 1.0 => g.scale(x, emb_scale),
                _ => x,
            };
            let label = labels.at(t, &decisions);

            let theta = if t == 0 {
                n
            } else {
                let (scores, mask) = network::one_step_scores_noisy(g, cfg, &ids, &mut st, x, noise);
                let probs = masked_softmax(g.value(scores), &mask)?;
                if let Some(l) = label {
                    let loss = g.masked_cross_entropy(scores, &mask, l)?;
                    s_terms.push(loss);
                    p_total += 1;
                    if masked_argmax(&probs, &mask) == Some(l) {
                        p_correct += 1;
                    }
                }
                match policy {
                    Policy::Sample => sample_categorical(&probs, decide.as_deref_mut().unwrap())?,
                    Policy::Greedy => masked_argmax(&probs, &mask).expect("mask has a live slot"),
                    Policy::Forced => label.unwrap(),
                }
            };
            network::transition(g, cfg, &ids, &mut st, x, theta, noise)?;
            decisions.push(theta);

            let next_label = labels.at(t + 1, &decisions);
            let (scores, mask) = network::zero_step_scores_noisy(g, cfg, &ids, &mut st, noise);
            let probs = masked_softmax(g.value(scores), &mask)?;
            let target = next_label.map(|l| (l + 1).min(n) - 1);
            if let Some(k) = target {
                let loss = g.masked_cross_entropy(scores, &mask, k)?;
                s_terms.push(loss);
                q_total += 1;
                if masked_argmax(&probs, &mask) == Some(k) {
                    q_correct += 1;
                }
            }
            let k = match policy {
                Policy::Sample => sample_categorical(&probs, decide.as_deref_mut().unwrap())?,
                Policy::Greedy => masked_argmax(&probs, &mask).expect("mask has a live slot"),
                Policy::Forced => target.unwrap(),
            };
            let read = k + 1;
            reads.push(read);

            let h = network::summarize(g, cfg, &ids, &mut st, read, noise);
            let logits = network::output_logits(g, cfg, &ids, h, noise);
            let next = if t + 1 < len { tokens[t + 1] } else { 0 };
            let nll = g.cross_entropy(logits, next)?;
            token_nll.push(g.scalar(nll));
            lm_terms.push(nll);
        }

        let (labels, clamped) = match labels {
            Labels::None => (Vec::new(), 0),
            Labels::Dynamic(o) => (o.labels().to_vec(), o.clamped()),
            Labels::Fixed(v) => (v, 0),
        };
        let lm_loss = g.sum(&lm_terms);
        let s_loss = if s_terms.is_empty() { None } else { Some(g.sum(&s_terms)) };
        let tree = st.shadow.top().cloned().expect("top candidate is occupied");
        Ok(SentenceOutput {
            lm_loss,
            s_loss,
            token_nll,
            decisions,
            reads,
            labels,
            p_total,
            p_correct,
            q_total,
            q_correct,
            clamped,
            tree,
        })
    }

    /// `L_LM + λ_S L_S` for a recorded sentence.
    pub fn total_loss(&self, g: &mut Graph<'_>, out: &SentenceOutput) -> Var {
        match out.s_loss {
            Some(s) => {
                let s = g.scale(s, self.config.lambda_s);
                g.add(out.lm_loss, s)
            }
            None => out.lm_loss,
        }
    }
}
