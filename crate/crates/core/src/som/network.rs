//! Graph-level building blocks shared by the value-level API and the
//! sentence driver.

use super::{CellIds, DropoutRates, Ids, SomConfig, SomError};
use crate::numkernel::{Graph, RngStream, Var};
use crate::oracle::{check_transition, SymbolicGrid};

/// Dropout source. With no stream attached every site is the identity.
#[derive(Debug, Clone)]
pub struct Noise {
    rates: DropoutRates,
    rng: Option<RngStream>,
}

impl Noise {
    pub fn off() -> Self {
        Noise { rates: DropoutRates::none(), rng: None }
    }

    pub fn new(rates: DropoutRates, rng: RngStream) -> Self {
        Noise { rates, rng: Some(rng) }
    }

    pub fn rates(&self) -> DropoutRates {
        self.rates
    }

    pub fn active(&self) -> bool {
        self.rng.is_some()
    }

    pub(crate) fn drop(&mut self, g: &mut Graph<'_>, v: Var, rate: f64) -> Var {
        let Some(rng) = self.rng.as_mut() else { return v };
        if rate == 0.0 {
            return v;
        }
        let keep_prob = 1.0 - rate;
        let keep: Vec<bool> = (0..g.value(v).len()).map(|_| rng.bernoulli(keep_prob)).collect();
        g.dropout(v, &keep, keep_prob)
    }

    pub(crate) fn hidden(&mut self, g: &mut Graph<'_>, v: Var) -> Var {
        let r = self.rates.hidden;
        self.drop(g, v, r)
    }

    pub(crate) fn output(&mut self, g: &mut Graph<'_>, v: Var) -> Var {
        let r = self.rates.out;
        self.drop(g, v, r)
    }
}

/// Grid state whose rows are graph nodes. `None` rows are exact zeros.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub memory: Vec<Option<Var>>,
    pub cand: Vec<Option<Var>>,
    /// Attention-side view of each candidate (semantic part detached).
    view: Vec<Option<Var>>,
    pub cp: Vec<bool>,
    pub t: usize,
    pub prev: Option<usize>,
    pub shadow: SymbolicGrid,
    zero: Option<Var>,
}

impl GraphState {
    pub fn new(n_slots: usize) -> Self {
        GraphState {
            memory: vec![None; n_slots],
            cand: vec![None; n_slots],
            view: vec![None; n_slots],
            cp: vec![false; n_slots],
            t: 0,
            prev: None,
            shadow: SymbolicGrid::new(n_slots),
            zero: None,
        }
    }

    fn zero(&mut self, g: &mut Graph<'_>, dim: usize) -> Var {
        *self.zero.get_or_insert_with(|| g.input(vec![0.0; dim]))
    }

    fn candidate_view(&mut self, g: &mut Graph<'_>, cfg: &SomConfig, k: usize) -> Var {
        if let Some(v) = self.view[k] {
            return v;
        }
        let c = self.cand[k].expect("view of an occupied candidate");
        let v = attention_view(g, cfg, c);
        self.view[k] = Some(v);
        v
    }
}

/// What the attention layers see of a slot vector. In the disentangled
/// model the semantic segment is detached, so the structure loss never
/// reaches it.
pub(crate) fn attention_view(g: &mut Graph<'_>, cfg: &SomConfig, v: Var) -> Var {
    if !cfg.disentangled() {
        return v;
    }
    let sem = g.slice(v, 0, cfg.d_sem);
    let sem = g.detach(sem);
    let syn = g.slice(v, cfg.d_sem, cfg.d_syn);
    g.concat(&[sem, syn])
}

/// `LN(σ(f)⊙h + σ(i)⊙m + σ(c)⊙u)` with `[f; i; c; u] = W2 ReLU(W1 [h; m] + b1) + b2`.
pub(crate) fn cell(g: &mut Graph<'_>, cfg: &SomConfig, c: &CellIds, h: Var, m: Var, noise: &mut Noise) -> Var {
    let d = cfg.dim;
    let inp = g.concat(&[h, m]);
    let inp = noise.hidden(g, inp);
    let a = g.affine(c.w1, Some(c.b1), inp);
    let a = g.relu(a);
    let a = noise.hidden(g, a);
    let z = g.affine(c.w2, Some(c.b2), a);
    let f = g.slice(z, 0, d);
    let i = g.slice(z, d, d);
    let cg = g.slice(z, 2 * d, d);
    let u = g.slice(z, 3 * d, d);
    let f = g.sigmoid(f);
    let i = g.sigmoid(i);
    let cg = g.sigmoid(cg);
    let a = g.mul(f, h);
    let b = g.mul(i, m);
    let e = g.mul(cg, u);
    let s = g.add(a, b);
    let s = g.add(s, e);
    let gain = g.param(c.gain);
    let offset = g.param(c.offset);
    g.layer_norm(s, gain, offset, &cfg.segments())
}

/// Writes `x` into candidate slot `theta` (1-based) and recomposes the
/// candidates above it.
pub(crate) fn transition(
    g: &mut Graph<'_>,
    cfg: &SomConfig,
    ids: &Ids,
    st: &mut GraphState,
    x: Var,
    theta: usize,
    noise: &mut Noise,
) -> Result<(), SomError> {
    let n = cfg.n_slots;
    check_transition(st.prev, theta, n, st.t)?;
    let split = (theta + 1).min(n);
    for s in 0..split {
        st.memory[s] = st.cand[s];
    }
    let mut cand = vec![None; n];
    cand[theta - 1] = Some(x);
    for s in theta..n {
        let parent = st.memory[s].expect("memory above the write slot is occupied");
        let child = cand[s - 1].expect("composed bottom-up");
        cand[s] = Some(cell(g, cfg, &ids.comp, parent, child, noise));
    }
    st.cand = cand;
    st.view = vec![None; n];
    st.cp = (1..=n).map(|s| s >= theta).collect();
    st.shadow.push(theta)?;
    st.prev = Some(theta);
    st.t += 1;
    Ok(())
}

/// One-step attention scores of `x` over the current candidates. Index `k`
/// stands for candidate slot `k + 1`, i.e. writing `x` into slot `k`, so
/// slot 1 is never selectable.
pub(crate) fn one_step_scores(
    g: &mut Graph<'_>,
    cfg: &SomConfig,
    ids: &Ids,
    st: &mut GraphState,
    x: Var,
) -> (Var, Vec<bool>) {
    one_step_scores_noisy(g, cfg, ids, st, x, &mut Noise::off())
}

pub(crate) fn one_step_scores_noisy(
    g: &mut Graph<'_>,
    cfg: &SomConfig,
    ids: &Ids,
    st: &mut GraphState,
    x: Var,
    noise: &mut Noise,
) -> (Var, Vec<bool>) {
    let n = cfg.n_slots;
    let scale = 1.0 / (n as f64).sqrt();
    let mask: Vec<bool> = (0..n).map(|k| k >= 1 && st.cp[k]).collect();
    let xv = attention_view(g, cfg, x);
    let xv = noise.hidden(g, xv);
    let xa = g.affine(ids.one_wx, Some(ids.one_b1), xv);
    let mut parts = Vec::new();
    for k in (0..n).filter(|&k| mask[k]) {
        let m = st.candidate_view(g, cfg, k);
        let m = noise.hidden(g, m);
        let ma = g.affine(ids.one_wm, None, m);
        let hsum = g.add(xa, ma);
        let hsum = g.relu(hsum);
        let hsum = noise.hidden(g, hsum);
        let s = g.affine(ids.one_w2, None, hsum);
        parts.push((k, g.scale(s, scale)));
    }
    (g.scatter(n, &parts), mask)
}

/// Zero-step look-ahead scores over the occupied candidates.
pub(crate) fn zero_step_scores(g: &mut Graph<'_>, cfg: &SomConfig, ids: &Ids, st: &mut GraphState) -> (Var, Vec<bool>) {
    zero_step_scores_noisy(g, cfg, ids, st, &mut Noise::off())
}

pub(crate) fn zero_step_scores_noisy(
    g: &mut Graph<'_>,
    cfg: &SomConfig,
    ids: &Ids,
    st: &mut GraphState,
    noise: &mut Noise,
) -> (Var, Vec<bool>) {
    let n = cfg.n_slots;
    let scale = 1.0 / (n as f64).sqrt();
    let mask = st.cp.clone();
    let mut parts = Vec::new();
    for k in (0..n).filter(|&k| mask[k]) {
        let m = st.candidate_view(g, cfg, k);
        let m = noise.hidden(g, m);
        let a = g.affine(ids.zero_w1, Some(ids.zero_b1), m);
        let a = g.relu(a);
        let a = noise.hidden(g, a);
        let s = g.affine(ids.zero_w2, Some(ids.zero_b2), a);
        parts.push((k, g.scale(s, scale)));
    }
    (g.scatter(n, &parts), mask)
}

/// Runs the slot RNN over `[M^N, …, M^{slot+1}, M̂^slot]`, or returns the
/// top candidate when the prediction network is disabled.
pub(crate) fn summarize(
    g: &mut Graph<'_>,
    cfg: &SomConfig,
    ids: &Ids,
    st: &mut GraphState,
    slot: usize,
    noise: &mut Noise,
) -> Var {
    let n = cfg.n_slots;
    if !cfg.prediction_network {
        return st.cand[n - 1].expect("top candidate is occupied");
    }
    let mut h = st.zero(g, cfg.dim);
    for s in (slot..n).rev() {
        let m = st.memory[s].expect("memory above the read slot is occupied");
        h = cell(g, cfg, &ids.pred, h, m, noise);
    }
    let c = st.cand[slot - 1].expect("read slot is an occupied candidate");
    cell(g, cfg, &ids.pred, h, c, noise)
}

pub(crate) fn output_logits(g: &mut Graph<'_>, _cfg: &SomConfig, ids: &Ids, h: Var, noise: &mut Noise) -> Var {
    let h = noise.output(g, h);
    g.affine(ids.out_w, Some(ids.out_b), h)
}
