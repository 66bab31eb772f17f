//! The syntactic ordered-memory network: memory-grid transition, one-step
//! and zero-step attention, the slot RNN that predicts the next token, and
//! the optional semantic/syntactic split of every hidden vector.

mod checkpoint;
mod network;
mod sentence;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry, FORMAT_VERSION};
pub use network::{GraphState, Noise};
pub use sentence::{Policy, SentenceOutput, Supervision};

use serde::{Deserialize, Serialize};

use crate::numkernel::{Array, Graph, KernelError, ParamId, ParamStore, RngStream, StreamKind};
use crate::oracle::{check_transition, OracleError, SymbolicGrid};
use crate::treebank::BinaryTree;

#[derive(Debug, thiserror::Error)]
pub enum SomError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint tensor {tensor}: {message}")]
    Tensor { tensor: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("token id {id} outside vocabulary of {size}")]
    UnknownToken { id: usize, size: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutRates {
    #[serde(default)]
    pub emb: f64,
    #[serde(default)]
    pub hidden: f64,
    #[serde(default)]
    pub out: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates { emb: 0.1, hidden: 0.1, out: 0.2 }
    }
}

impl DropoutRates {
    pub fn none() -> Self {
        DropoutRates { emb: 0.0, hidden: 0.0, out: 0.0 }
    }
}

fn default_true() -> bool {
    true
}

fn default_lambda() -> f64 {
    1.0
}

/// Network shape and regularization. `d_syn = 0` gives the plain
/// (entangled) model; otherwise every cell linear map is block-triangular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    #[serde(rename = "N")]
    pub n_slots: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "D_sem")]
    pub d_sem: usize,
    #[serde(rename = "D_syn")]
    pub d_syn: usize,
    #[serde(rename = "V", default)]
    pub vocab_size: usize,
    /// Width of the cell's inner ReLU layer; 0 means `D`.
    #[serde(default)]
    pub cell_hidden: usize,
    /// Width of both attention MLPs; 0 means `D`.
    #[serde(default)]
    pub attn_hidden: usize,
    #[serde(default)]
    pub dropout: DropoutRates,
    #[serde(default = "default_lambda")]
    pub lambda_s: f64,
    #[serde(default = "default_true")]
    pub tie_output: bool,
    /// When false, the top candidate slot stands in for the slot RNN.
    #[serde(default = "default_true")]
    pub prediction_network: bool,
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig {
            n_slots: 12,
            dim: 128,
            d_sem: 96,
            d_syn: 32,
            vocab_size: 0,
            cell_hidden: 0,
            attn_hidden: 0,
            dropout: DropoutRates::default(),
            lambda_s: 1.0,
            tie_output: true,
            prediction_network: true,
        }
    }
}

impl SomConfig {
    pub fn validate(&self) -> Result<(), SomError> {
        let bad = |m: String| Err(SomError::Config(m));
        if self.n_slots < 2 {
            return bad(format!("N must be at least 2, got {}", self.n_slots));
        }
        if self.d_sem + self.d_syn != self.dim {
            return bad(format!("D_sem + D_syn = {} but D = {}", self.d_sem + self.d_syn, self.dim));
        }
        if self.d_syn > 0 && (self.d_sem < 2 || self.d_syn < 2) {
            return bad("each segment needs at least 2 units for its layer norm".into());
        }
        if self.d_syn == 0 && self.dim < 2 {
            return bad("D must be at least 2".into());
        }
        if self.vocab_size < 1 {
            return bad("vocabulary size must be positive".into());
        }
        for (name, r) in [("emb", self.dropout.emb), ("hidden", self.dropout.hidden), ("out", self.dropout.out)] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("dropout.{name} = {r} outside [0, 1)"));
            }
        }
        if self.lambda_s < 0.0 || !self.lambda_s.is_finite() {
            return bad(format!("lambda_s = {}", self.lambda_s));
        }
        if self.d_syn > 0 && self.cell_width() < 2 {
            return bad("cell_hidden must be at least 2 to split into segments".into());
        }
        Ok(())
    }

    pub fn disentangled(&self) -> bool {
        self.d_syn > 0
    }

    pub fn cell_width(&self) -> usize {
        if self.cell_hidden == 0 {
            self.dim
        } else {
            self.cell_hidden
        }
    }

    pub fn attn_width(&self) -> usize {
        if self.attn_hidden == 0 {
            self.dim
        } else {
            self.attn_hidden
        }
    }

    /// Layer-norm segments of a slot vector.
    pub fn segments(&self) -> Vec<usize> {
        if self.disentangled() {
            vec![self.d_sem, self.d_syn]
        } else {
            vec![self.dim]
        }
    }

    /// Split of the cell's inner layer into (semantic, syntactic) units,
    /// proportional to the slot split.
    pub fn cell_split(&self) -> (usize, usize) {
        if !self.disentangled() {
            return (self.cell_width(), 0);
        }
        let syn = (self.cell_width() * self.d_syn / self.dim).max(1);
        (self.cell_width() - syn, syn)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CellIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub gain: ParamId,
    pub offset: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ids {
    pub emb: ParamId,
    pub start: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub comp: CellIds,
    pub pred: CellIds,
    pub one_wx: ParamId,
    pub one_wm: ParamId,
    pub one_b1: ParamId,
    pub one_w2: ParamId,
    pub zero_w1: ParamId,
    pub zero_b1: ParamId,
    pub zero_w2: ParamId,
    pub zero_b2: ParamId,
}

/// Parameter names with their shapes and, for block-triangular maps, the
/// structural-zero mask. This is the single source for initialization and
/// checkpoint validation.
pub(crate) fn layout(cfg: &SomConfig) -> Vec<(String, Vec<usize>, Option<Vec<bool>>)> {
    let d = cfg.dim;
    let v = cfg.vocab_size;
    let c = cfg.cell_width();
    let a = cfg.attn_width();
    let mut out: Vec<(String, Vec<usize>, Option<Vec<bool>>)> = vec![
        ("embedding".into(), vec![v, d], None),
        ("start".into(), vec![d], None),
    ];
    if !cfg.tie_output {
        out.push(("output.weight".into(), vec![v, d], None));
    }
    out.push(("output.bias".into(), vec![v], None));
    for prefix in ["cell", "predictor"] {
        let (m1, m2) = if cfg.disentangled() { (Some(w1_mask(cfg)), Some(w2_mask(cfg))) } else { (None, None) };
        out.push((format!("{prefix}.w1"), vec![c, 2 * d], m1));
        out.push((format!("{prefix}.b1"), vec![c], None));
        out.push((format!("{prefix}.w2"), vec![4 * d, c], m2));
        out.push((format!("{prefix}.b2"), vec![4 * d], None));
        out.push((format!("{prefix}.ln_gain"), vec![d], None));
        out.push((format!("{prefix}.ln_offset"), vec![d], None));
    }
    out.extend([
        ("attend.wx".into(), vec![a, d], None),
        ("attend.wm".into(), vec![a, d], None),
        ("attend.b1".into(), vec![a], None),
        ("attend.w2".into(), vec![1, a], None),
        ("lookahead.w1".into(), vec![a, d], None),
        ("lookahead.b1".into(), vec![a], None),
        ("lookahead.w2".into(), vec![1, a], None),
        ("lookahead.b2".into(), vec![1], None),
    ]);
    out
}

/// `W1` maps `[h_sem, h_syn, m_sem, m_syn]` to the inner layer; syntactic
/// inner units may not read semantic inputs.
fn w1_mask(cfg: &SomConfig) -> Vec<bool> {
    let (cs, _) = cfg.cell_split();
    let (d, ds) = (cfg.dim, cfg.d_sem);
    let cols = 2 * d;
    let mut mask = vec![false; cfg.cell_width() * cols];
    for r in cs..cfg.cell_width() {
        for col in 0..cols {
            if col % d < ds {
                mask[r * cols + col] = true;
            }
        }
    }
    mask
}

/// `W2` maps the inner layer to the four gate blocks `[f, i, c, u]`, each
/// laid out `[sem, syn]`; syntactic gate entries may not read semantic
/// inner units.
fn w2_mask(cfg: &SomConfig) -> Vec<bool> {
    let (cs, _) = cfg.cell_split();
    let cols = cfg.cell_width();
    let (d, ds) = (cfg.dim, cfg.d_sem);
    let mut mask = vec![false; 4 * d * cols];
    for r in 0..4 * d {
        if r % d >= ds {
            for col in 0..cs {
                mask[r * cols + col] = true;
            }
        }
    }
    mask
}

/// Model parameters plus the configuration they were built for.
#[derive(Debug, Clone)]
pub struct SomModel {
    pub config: SomConfig,
    pub params: ParamStore,
    ids: Ids,
}

impl SomModel {
    /// Fresh model with uniform fan-in initialization drawn from `seed`.
    pub fn new(config: SomConfig, seed: u64) -> Result<Self, SomError> {
        config.validate()?;
        let mut rng = RngStream::derive(seed, StreamKind::Init, &[]);
        let mut params = ParamStore::new();
        for (name, shape, mask) in layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("ln_gain") {
                vec![1.0; n]
            } else if name.ends_with("ln_offset") || name.ends_with("bias") || name.ends_with(".b2") {
                vec![0.0; n]
            } else if name == "embedding" || name == "start" {
                (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * 0.1).collect()
            } else {
                let fan_in = if shape.len() == 2 { shape[1] } else { config.dim };
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| (rng.uniform() * 2.0 - 1.0) * bound).collect()
            };
            let array = Array::new(shape, data)?;
            match mask {
                Some(m) => params.add_structured(&name, array, m)?,
                None => params.add(&name, array)?,
            };
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store, checking it against the layout.
    pub fn from_params(config: SomConfig, params: ParamStore) -> Result<Self, SomError> {
        config.validate()?;
        for (name, shape, _) in layout(&config) {
            let id = params
                .id(&name)
                .ok_or_else(|| SomError::Tensor { tensor: name.clone(), message: "missing".into() })?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(SomError::Tensor {
                    tensor: name,
                    message: format!("shape {:?}, expected {:?}", params.get(id).shape(), shape),
                });
            }
        }
        if let Some((name, k)) = params.structure_violation() {
            return Err(SomError::Tensor { tensor: name, message: format!("structural zero at {k} is nonzero") });
        }
        let ids = resolve_ids(&config, &params);
        Ok(SomModel { config, params, ids })
    }

    pub(crate) fn ids(&self) -> &Ids {
        &self.ids
    }

    /// Composition cell on plain vectors (no dropout).
    pub fn cell(&self, parent: &[f64], child: &[f64]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let h = g.input(parent.to_vec());
        let m = g.input(child.to_vec());
        let out = network::cell(&mut g, &self.config, &self.ids.comp, h, m, &mut Noise::off());
        g.value(out).to_vec()
    }

    /// The block-triangular map applied by the first cell layer to a single
    /// slot vector, restricted to its output rows: `y = W1[:, parent part] x`.
    /// Exposed to check the zero-block contract directly.
    pub fn disentangled_linear(&self, x: &[f64]) -> Result<Vec<f64>, SomError> {
        if !self.config.disentangled() {
            return Err(SomError::Config("disentangled_linear needs D_syn > 0".into()));
        }
        let w = self.params.get(self.ids.comp.w1);
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let d = self.config.dim;
        assert_eq!(x.len(), d);
        Ok((0..rows).map(|r| crate::numkernel::dot(&w.data()[r * cols..r * cols + d], x)).collect())
    }

    /// One transition on plain vectors.
    pub fn transition(&self, prev: &SomState, x: &[f64], theta: usize) -> Result<SomState, SomError> {
        let mut g = Graph::new(&self.params);
        let mut st = prev.to_graph(&mut g);
        let xv = g.input(x.to_vec());
        network::transition(&mut g, &self.config, &self.ids, &mut st, xv, theta, &mut Noise::off())?;
        Ok(SomState::from_graph(&g, &st, self.config.dim))
    }

    /// One-step attention of `x` over the candidates of `prev`; entry `k`
    /// is the probability of choosing candidate slot `k + 1`.
    pub fn one_step_attention(&self, x: &[f64], prev: &SomState) -> Result<Vec<f64>, SomError> {
        let mut g = Graph::new(&self.params);
        let mut st = prev.to_graph(&mut g);
        let xv = g.input(x.to_vec());
        let (scores, mask) = network::one_step_scores(&mut g, &self.config, &self.ids, &mut st, xv);
        let p = g.masked_softmax(scores, &mask)?;
        Ok(g.value(p).to_vec())
    }

    pub fn zero_step_attention(&self, state: &SomState) -> Result<Vec<f64>, SomError> {
        let mut g = Graph::new(&self.params);
        let mut st = state.to_graph(&mut g);
        let (scores, mask) = network::zero_step_scores(&mut g, &self.config, &self.ids, &mut st);
        let q = g.masked_softmax(scores, &mask)?;
        Ok(g.value(q).to_vec())
    }

    /// Summary vector and next-token distribution when reading the grid
    /// down to candidate slot `slot`.
    pub fn predict_next(&self, state: &SomState, slot: usize) -> Result<(Vec<f64>, Vec<f64>), SomError> {
        if slot < 1 || slot > self.config.n_slots || !state.cp[slot - 1] {
            return Err(SomError::Oracle(OracleError::IllegalDecision {
                step: state.t,
                reason: format!("prediction slot {slot} is not an occupied candidate"),
            }));
        }
        let mut g = Graph::new(&self.params);
        let mut st = state.to_graph(&mut g);
        let h = network::summarize(&mut g, &self.config, &self.ids, &mut st, slot, &mut Noise::off());
        let logits = network::output_logits(&mut g, &self.config, &self.ids, h, &mut Noise::off());
        let mask = vec![true; self.config.vocab_size];
        let dist = g.masked_softmax(logits, &mask)?;
        Ok((g.value(h).to_vec(), g.value(dist).to_vec()))
    }

    /// Embedding row of a token id.
    pub fn embed(&self, token: usize) -> Vec<f64> {
        self.params.get(self.ids.emb).row(token).to_vec()
    }
}

fn resolve_ids(cfg: &SomConfig, p: &ParamStore) -> Ids {
    let id = |n: &str| p.id(n).unwrap_or_else(|| panic!("layout checked: {n}"));
    let cell = |prefix: &str| CellIds {
        w1: id(&format!("{prefix}.w1")),
        b1: id(&format!("{prefix}.b1")),
        w2: id(&format!("{prefix}.w2")),
        b2: id(&format!("{prefix}.b2")),
        gain: id(&format!("{prefix}.ln_gain")),
        offset: id(&format!("{prefix}.ln_offset")),
    };
    Ids {
        emb: id("embedding"),
        start: id("start"),
        out_w: if cfg.tie_output { id("embedding") } else { id("output.weight") },
        out_b: id("output.bias"),
        comp: cell("cell"),
        pred: cell("predictor"),
        one_wx: id("attend.wx"),
        one_wm: id("attend.wm"),
        one_b1: id("attend.b1"),
        one_w2: id("attend.w2"),
        zero_w1: id("lookahead.w1"),
        zero_b1: id("lookahead.b1"),
        zero_w2: id("lookahead.w2"),
        zero_b2: id("lookahead.b2"),
    }
}

/// Grid state on plain vectors: memory and candidate rows (all-zero when
/// empty), the occupancy mask over candidate slots, and the step count.
#[derive(Debug, Clone)]
pub struct SomState {
    pub memory: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<f64>>,
    pub cp: Vec<bool>,
    pub t: usize,
    pub prev_slot: Option<usize>,
    pub shadow: SymbolicGrid,
}

impl SomState {
    pub fn initial(cfg: &SomConfig) -> Self {
        let n = cfg.n_slots;
        SomState {
            memory: vec![vec![0.0; cfg.dim]; n],
            candidates: vec![vec![0.0; cfg.dim]; n],
            cp: vec![false; n],
            t: 0,
            prev_slot: None,
            shadow: SymbolicGrid::new(n),
        }
    }

    /// Subtree held by candidate slot `slot` according to the symbolic shadow.
    pub fn candidate_tree(&self, slot: usize) -> Option<&BinaryTree> {
        self.shadow.candidate(slot)
    }

    /// Whether writing the next token into `slot` is legal.
    pub fn check(&self, slot: usize) -> Result<(), OracleError> {
        check_transition(self.prev_slot, slot, self.cp.len(), self.t)
    }

    fn to_graph(&self, g: &mut Graph<'_>) -> GraphState {
        let mut st = GraphState::new(self.cp.len());
        for s in 0..self.cp.len() {
            if self.t > 0 {
                st.memory[s] = Some(g.input(self.memory[s].clone()));
            }
            if self.cp[s] {
                st.cand[s] = Some(g.input(self.candidates[s].clone()));
            }
        }
        st.cp = self.cp.clone();
        st.t = self.t;
        st.prev = self.prev_slot;
        st.shadow = self.shadow.clone();
        st
    }

    fn from_graph(g: &Graph<'_>, st: &GraphState, dim: usize) -> Self {
        let row = |v: &Option<crate::numkernel::Var>| v.map_or_else(|| vec![0.0; dim], |v| g.value(v).to_vec());
        SomState {
            memory: st.memory.iter().map(row).collect(),
            candidates: st.cand.iter().map(row).collect(),
            cp: st.cp.clone(),
            t: st.t,
            prev_slot: st.prev,
            shadow: st.shadow.clone(),
        }
    }
}

#[cfg(test)]
mod tests;
