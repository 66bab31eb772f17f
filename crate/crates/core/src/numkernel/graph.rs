use super::array::{axpy, dot};
use super::{Gradients, KernelError, ParamId, ParamStore, LAYER_NORM_EPS};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant (dropout masks).
    MulConst(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { table: ParamId, row: usize },
    LayerNorm { x: Var, gain: Var, offset: Var, segments: Vec<usize>, xhat: Vec<f64>, rstd: Vec<f64> },
    Scatter(Vec<(usize, Var)>),
    SumElems(Var),
    Sum(Vec<Var>),
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    MaskedCrossEntropy { x: Var, mask: Vec<bool>, target: usize, probs: Vec<f64> },
    Detach,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Tape of primitive applications over a borrowed [`ParamStore`].
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order. Values are computed eagerly.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    fault: Option<String>,
    /// Replayed outputs for detach nodes, in creation order.
    detach_replay: Option<(Vec<Vec<f64>>, usize)>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::with_capacity(1024), fault: None, detach_replay: None }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First non-finite value produced by any primitive, if one occurred.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        if self.fault.is_none() && value.iter().any(|x| !x.is_finite()) {
            self.fault = Some(format!("non-finite output of {} at node {}", op_name(&op), self.nodes.len()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, data: Vec<f64>) -> Var {
        self.push(data, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: Vec::new(), op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * s).collect();
        self.push(v, Op::Scale(a, s))
    }

    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        let v = self.value(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        self.push(v, Op::MulConst(a, c))
    }

    /// Inverted dropout: `keep` holds one flag per element; kept entries are
    /// divided by the keep probability.
    pub fn dropout(&mut self, a: Var, keep: &[bool], keep_prob: f64) -> Var {
        let scale = 1.0 / keep_prob;
        let c = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        self.mul_const(a, c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    /// `W x + b` for a rank-2 parameter `W`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wa = self.params.get(w);
        let (rows, cols) = (wa.shape()[0], wa.shape()[1]);
        let xv = self.value(x);
        assert_eq!(xv.len(), cols, "affine: input width {} vs {} columns", xv.len(), cols);
        let wd = wa.data();
        let mut out = match b {
            Some(b) => self.params.get(b).data().to_vec(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(&wd[r * cols..(r + 1) * cols], xv);
        }
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x)[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    /// Row lookup in a rank-2 table; the gradient scatter-adds into the row.
    pub fn gather(&mut self, table: ParamId, row: usize) -> Var {
        let v = self.params.get(table).row(row).to_vec();
        self.push(v, Op::Gather { table, row })
    }

    /// Layer normalization applied independently to consecutive segments of
    /// the given lengths (one segment = ordinary layer norm).
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, segments: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(segments.iter().sum::<usize>(), xv.len());
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = Vec::with_capacity(segments.len());
        let mut start = 0;
        for &len in segments {
            let seg = &xv[start..start + len];
            let r = normalize_into(seg, &mut xhat[start..start + len]);
            rstd.push(r);
            start += len;
        }
        let g = self.value(gain);
        let o = self.value(offset);
        let v = xhat.iter().zip(g).zip(o).map(|((h, g), o)| h * g + o).collect();
        self.push(v, Op::LayerNorm { x, gain, offset, segments: segments.to_vec(), xhat, rstd })
    }

    /// Builds a vector of length `len` whose entry `k` is the scalar node
    /// paired with it; unlisted entries are zero.
    pub fn scatter(&mut self, len: usize, parts: &[(usize, Var)]) -> Var {
        let mut v = vec![0.0; len];
        for &(k, s) in parts {
            v[k] = self.scalar(s);
        }
        self.push(v, Op::Scatter(parts.to_vec()))
    }

    pub fn sum_elems(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![s], Op::SumElems(x))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let s = xs.iter().map(|&x| self.scalar(x)).sum();
        self.push(vec![s], Op::Sum(xs.to_vec()))
    }

    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, KernelError> {
        let p = masked_softmax(self.value(x), mask)?;
        Ok(self.push(p, Op::MaskedSoftmax { x, mask: mask.to_vec() }))
    }

    /// Negative log of `masked_softmax(x, mask)[target]`.
    pub fn masked_cross_entropy(&mut self, x: Var, mask: &[bool], target: usize) -> Result<Var, KernelError> {
        if !mask.get(target).copied().unwrap_or(false) {
            return Err(KernelError::Contract(format!("target {target} outside mask")));
        }
        let xv = self.value(x);
        let (probs, log_z, max) = softmax_parts(xv, mask)?;
        let nll = log_z - (xv[target] - max);
        Ok(self.push(vec![nll], Op::MaskedCrossEntropy { x, mask: mask.to_vec(), target, probs }))
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, KernelError> {
        let mask = vec![true; self.value(logits).len()];
        self.masked_cross_entropy(logits, &mask, target)
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = match &mut self.detach_replay {
            Some((values, next)) => {
                *next += 1;
                values[*next - 1].clone()
            }
            None => self.value(x).to_vec(),
        };
        self.push(v, Op::Detach)
    }

    /// Outputs of every detach node, in creation order.
    pub fn detached_values(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().filter(|n| matches!(n.op, Op::Detach)).map(|n| n.value.clone()).collect()
    }

    /// Makes the k-th detach node output `values[k]` instead of its input.
    /// Replaying the values of a reference run turns detached inputs into
    /// true constants, which is what finite differences must hold fixed to
    /// agree with the blocked gradient.
    pub fn replay_detached(&mut self, values: Vec<Vec<f64>>) {
        self.detach_replay = Some((values, 0));
    }

    /// Reverse-mode gradients of a scalar node with respect to every
    /// parameter. Structural zeros of block-triangular parameters receive
    /// exactly zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients, KernelError> {
        if let Some(f) = &self.fault {
            return Err(KernelError::NonFinite(f.clone()));
        }
        if self.value(loss).len() != 1 {
            return Err(KernelError::Contract(format!(
                "backward needs a scalar loss, node has {} elements",
                self.value(loss).len()
            )));
        }
        let mut pgrad = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Detach => {}
                Op::Param(id) => axpy(1.0, &g, pgrad.get_mut(*id)),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g, self);
                    accumulate(&mut grads, *b, &g, self);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, *a, &ga, self);
                    accumulate(&mut grads, *b, &gb, self);
                }
                Op::Scale(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|g| g * s).collect();
                    accumulate(&mut grads, *a, &ga, self);
                }
                Op::MulConst(a, c) => {
                    let ga: Vec<f64> = g.iter().zip(c).map(|(g, c)| g * c).collect();
                    accumulate(&mut grads, *a, &ga, self);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> =
                        g.iter().zip(self.value(*a)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, &ga, self);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, *a, &ga, self);
                }
                Op::Affine { w, b, x } => {
                    let wa = self.params.get(*w);
                    let cols = wa.shape()[1];
                    let wd = wa.data();
                    let xv = self.value(*x);
                    let mut gx = vec![0.0; cols];
                    {
                        let gw = pgrad.get_mut(*w);
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            axpy(gr, &wd[r * cols..(r + 1) * cols], &mut gx);
                            axpy(gr, xv, &mut gw[r * cols..(r + 1) * cols]);
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, pgrad.get_mut(*b));
                    }
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut grads, *p, &g[start..start + n], self);
                        start += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let mut gx = vec![0.0; n];
                    gx[*start..*start + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::Gather { table, row } => {
                    let cols = self.params.get(*table).shape()[1];
                    axpy(1.0, &g, &mut pgrad.get_mut(*table)[row * cols..(row + 1) * cols]);
                }
                Op::LayerNorm { x, gain, offset, segments, xhat, rstd } => {
                    let gv = self.value(*gain);
                    let gg: Vec<f64> = g.iter().zip(xhat).map(|(g, h)| g * h).collect();
                    accumulate(&mut grads, *gain, &gg, self);
                    accumulate(&mut grads, *offset, &g, self);
                    let dxhat: Vec<f64> = g.iter().zip(gv).map(|(g, w)| g * w).collect();
                    let mut gx = vec![0.0; g.len()];
                    let mut start = 0;
                    for (&len, &r) in segments.iter().zip(rstd) {
                        let d = &dxhat[start..start + len];
                        let h = &xhat[start..start + len];
                        let n = len as f64;
                        let mean_d = d.iter().sum::<f64>() / n;
                        let mean_dh = dot(d, h) / n;
                        for k in 0..len {
                            gx[start + k] = r * (d[k] - mean_d - h[k] * mean_dh);
                        }
                        start += len;
                    }
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::Scatter(parts) => {
                    for &(k, s) in parts {
                        accumulate(&mut grads, s, &[g[k]], self);
                    }
                }
                Op::SumElems(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, &vec![g[0]; n], self);
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        accumulate(&mut grads, x, &g, self);
                    }
                }
                Op::MaskedSoftmax { x, mask } => {
                    let p = &node.value;
                    let inner = dot(&g, p);
                    let gx: Vec<f64> = p
                        .iter()
                        .zip(&g)
                        .zip(mask)
                        .map(|((p, g), &m)| if m { p * (g - inner) } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::MaskedCrossEntropy { x, mask, target, probs } => {
                    let mut gx: Vec<f64> =
                        probs.iter().zip(mask).map(|(p, &m)| if m { g[0] * p } else { 0.0 }).collect();
                    gx[*target] -= g[0];
                    accumulate(&mut grads, *x, &gx, self);
                }
            }
        }
        pgrad.apply_structure(self.params);
        Ok(pgrad)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], graph: &Graph<'_>) {
    // Gradients into detached subgraphs are dropped at the detach node itself;
    // constant inputs never need one.
    if matches!(graph.nodes[v.0].op, Op::Input) {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => axpy(1.0, g, acc),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MulConst(..) => "mul_const",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Affine { .. } => "affine",
        Op::Concat(_) => "concat",
        Op::Slice { .. } => "slice",
        Op::Gather { .. } => "gather",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Scatter(_) => "scatter",
        Op::SumElems(_) => "sum_elems",
        Op::Sum(_) => "sum",
        Op::MaskedSoftmax { .. } => "masked_softmax",
        Op::MaskedCrossEntropy { .. } => "masked_cross_entropy",
        Op::Detach => "detach",
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Writes the standardized segment into `out`, returns 1/sqrt(var + eps).
fn normalize_into(seg: &[f64], out: &mut [f64]) -> f64 {
    let n = seg.len() as f64;
    let mean = seg.iter().sum::<f64>() / n;
    let var = seg.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (o, x) in out.iter_mut().zip(seg) {
        *o = (x - mean) * r;
    }
    r
}

/// Returns (probabilities, log partition relative to max, max).
fn softmax_parts(x: &[f64], mask: &[bool]) -> Result<(Vec<f64>, f64, f64), KernelError> {
    if mask.len() != x.len() {
        return Err(KernelError::Shape(format!("mask length {} vs {}", mask.len(), x.len())));
    }
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(KernelError::EmptyMask);
    }
    let mut p: Vec<f64> = x.iter().zip(mask).map(|(v, &m)| if m { (v - max).exp() } else { 0.0 }).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok((p, z.ln(), max))
}

/// Softmax restricted to entries where `mask` is set; masked-out entries are
/// exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, KernelError> {
    softmax_parts(logits, mask).map(|(p, _, _)| p)
}

/// Layer normalization of a single vector (population variance, eps added).
pub fn layer_norm(x: &[f64], gain: &[f64], offset: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    normalize_into(x, &mut out);
    out.iter().zip(gain).zip(offset).map(|((h, g), o)| h * g + o).collect()
}
