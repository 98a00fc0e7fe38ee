//! Reverse-mode autodiff over an op tape.
//!
//! A [`Session`] borrows a [`ParameterSet`], records forward ops, and walks
//! them in reverse to accumulate gradients. Nodes are only ever built from
//! earlier nodes, so insertion order is a topological order.

use std::collections::BTreeMap;

use super::tensor::{ParameterSet, Tensor};
use super::NnError;

/// Handle to a node in a session's tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Per-path parameter gradients from one backward pass.
#[derive(Debug, Clone, Default)]
pub struct GradStore(BTreeMap<String, Vec<f64>>);

impl GradStore {
    pub fn get(&self, path: &str) -> Option<&[f64]> {
        self.0.get(path).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Add a gradient contribution for a path (element-wise on collision).
    pub fn accumulate(&mut self, path: &str, grad: &[f64]) {
        match self.0.get_mut(path) {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            None => {
                self.0.insert(path.to_string(), grad.to_vec());
            }
        }
    }
}

enum Op {
    Input,
    Param(String),
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    MaxPool1d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalMaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// Normalized temperature-scaled cross-entropy over paired rows
    /// (i, i+N). Caches the row-normalized embeddings and the softmax over
    /// each anchor's candidates.
    NtXent {
        z: NodeId,
        temperature: f64,
        normalized: Vec<f64>,
        probs: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records a forward computation against a parameter set.
pub struct Session<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// The forward value of a node. Parameter nodes read through to the
    /// parameter set.
    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match &node.op {
            Op::Param(path) => self
                .params
                .get(path)
                .expect("parameter disappeared during session"),
            _ => &node.value,
        }
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn data(&self, id: NodeId) -> &[f64] {
        self.value(id).data()
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, path: &str) -> Result<NodeId, NnError> {
        if !self.params.contains(path) {
            return Err(NnError::UnknownParameter(path.to_string()));
        }
        Ok(self.push(Op::Param(path.to_string()), Tensor::zeros(vec![0])))
    }

    /// Same-padded stride-1 cross-correlation plus bias.
    /// x: [batch, ch_in, len], w: [ch_out, ch_in, k], b: [ch_out].
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d expects x[b,c,l] w[o,c,k] b[o], got {xs:?} {ws:?} {bs:?}"
            )));
        }
        let (batch, ch_in, len) = (xs[0], xs[1], xs[2]);
        let (ch_out, w_in, k) = (ws[0], ws[1], ws[2]);
        if w_in != ch_in || bs[0] != ch_out {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d channel mismatch: x has {ch_in}, w expects {w_in}, bias {}",
                bs[0]
            )));
        }
        let out = conv1d_forward(
            self.data(x),
            self.data(w),
            self.data(b),
            batch,
            ch_in,
            len,
            ch_out,
            k,
        );
        let value = Tensor::new(vec![batch, ch_out, len], out)?;
        Ok(self.push(Op::Conv1d { x, w, b }, value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.shape(x).to_vec();
        let data = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(shape, data).expect("relu preserves shape");
        self.push(Op::Relu { x }, value)
    }

    /// Non-overlapping max pooling along time with floor semantics:
    /// [b, c, l] -> [b, c, l / pool].
    pub fn max_pool1d(&mut self, x: NodeId, pool: usize) -> Result<NodeId, NnError> {
        let xs = self.shape(x);
        if xs.len() != 3 || pool == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "max_pool1d expects x[b,c,l] and pool > 0, got {xs:?} pool {pool}"
            )));
        }
        let (batch, ch, len) = (xs[0], xs[1], xs[2]);
        let out_len = len / pool;
        if out_len == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "max_pool1d: length {len} shorter than pool {pool}"
            )));
        }
        let data = self.data(x);
        let mut out = vec![0.0; batch * ch * out_len];
        let mut argmax = vec![0usize; batch * ch * out_len];
        for bc in 0..batch * ch {
            let row = &data[bc * len..(bc + 1) * len];
            for j in 0..out_len {
                let start = j * pool;
                let mut best = start;
                for t in start + 1..start + pool {
                    if row[t] > row[best] {
                        best = t;
                    }
                }
                out[bc * out_len + j] = row[best];
                argmax[bc * out_len + j] = bc * len + best;
            }
        }
        let value = Tensor::new(vec![batch, ch, out_len], out)?;
        Ok(self.push(Op::MaxPool1d { x, argmax }, value))
    }

    /// Max over the whole time axis: [b, c, l] -> [b, c].
    pub fn global_max_pool(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(NnError::ShapeMismatch(format!(
                "global_max_pool expects x[b,c,l], got {xs:?}"
            )));
        }
        let (batch, ch, len) = (xs[0], xs[1], xs[2]);
        let data = self.data(x);
        let mut out = vec![0.0; batch * ch];
        let mut argmax = vec![0usize; batch * ch];
        for bc in 0..batch * ch {
            let row = &data[bc * len..(bc + 1) * len];
            let mut best = 0;
            for t in 1..len {
                if row[t] > row[best] {
                    best = t;
                }
            }
            out[bc] = row[best];
            argmax[bc] = bc * len + best;
        }
        let value = Tensor::new(vec![batch, ch], out)?;
        Ok(self.push(Op::GlobalMaxPool { x, argmax }, value))
    }

    /// Dense layer y = x wᵀ + b. x: [batch, d_in], w: [d_out, d_in].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
            return Err(NnError::ShapeMismatch(format!(
                "linear expects x[b,i] w[o,i] b[o], got {xs:?} {ws:?} {bs:?}"
            )));
        }
        let (batch, d_in, d_out) = (xs[0], xs[1], ws[0]);
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![0.0; batch * d_out];
        for bi in 0..batch {
            let xrow = &xd[bi * d_in..(bi + 1) * d_in];
            for o in 0..d_out {
                let wrow = &wd[o * d_in..(o + 1) * d_in];
                let mut acc = bd[o];
                for i in 0..d_in {
                    acc += xrow[i] * wrow[i];
                }
                out[bi * d_out + o] = acc;
            }
        }
        let value = Tensor::new(vec![batch, d_out], out)?;
        Ok(self.push(Op::Linear { x, w, b }, value))
    }

    /// NT-Xent loss over [2N, d] embeddings where rows i and N+i are the
    /// two views of pair i. Embeddings are L2-normalized internally.
    pub fn nt_xent(&mut self, z: NodeId, temperature: f64) -> Result<NodeId, NnError> {
        let zs = self.shape(z);
        if zs.len() != 2 || zs[0] < 2 || zs[0] % 2 != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "nt_xent expects [2N, d] with N >= 1, got {zs:?}"
            )));
        }
        let (rows, dim) = (zs[0], zs[1]);
        let (loss, normalized, probs) = nt_xent_forward(self.data(z), rows, dim, temperature)?;
        Ok(self.push(
            Op::NtXent {
                z,
                temperature,
                normalized,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Mean categorical cross-entropy of softmaxed logits against class
    /// indices.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId, NnError> {
        let ls = self.shape(logits);
        if ls.len() != 2 || ls[0] != targets.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cross entropy expects logits [b,c] with one target per row, got {ls:?} and {} targets",
                targets.len()
            )));
        }
        let (batch, classes) = (ls[0], ls[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(NnError::ShapeMismatch(format!(
                "target class {bad} out of range for {classes} classes"
            )));
        }
        let data = self.data(logits);
        let mut probs = vec![0.0; batch * classes];
        let mut loss = 0.0;
        for bi in 0..batch {
            let row = &data[bi * classes..(bi + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..classes {
                let e = (row[c] - max).exp();
                probs[bi * classes + c] = e;
                sum += e;
            }
            for c in 0..classes {
                probs[bi * classes + c] /= sum;
            }
            loss += sum.ln() + max - row[targets[bi]];
        }
        loss /= batch as f64;
        let targets = targets.to_vec();
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Backpropagate from a scalar node. Gradients for parameter nodes are
    /// collected into the returned store; input-node gradients stay
    /// readable via [`Self::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<GradStore, NnError> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::ShapeMismatch(
                "backward requires a scalar loss".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut store = GradStore::default();

        for idx in (0..self.nodes.len()).rev() {
            let Some(upstream) = grads[idx].clone() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(path) => store.accumulate(path, &upstream),
                Op::Conv1d { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xs = self.shape(x);
                    let ws = self.shape(w);
                    let (batch, ch_in, len) = (xs[0], xs[1], xs[2]);
                    let (ch_out, k) = (ws[0], ws[2]);
                    let (dx, dw, db) = conv1d_backward(
                        &upstream,
                        self.data(x),
                        self.data(w),
                        batch,
                        ch_in,
                        len,
                        ch_out,
                        k,
                    );
                    add_into(&mut grads, x, dx);
                    add_into(&mut grads, w, dw);
                    add_into(&mut grads, b, db);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let dx: Vec<f64> = self
                        .data(x)
                        .iter()
                        .zip(&upstream)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    add_into(&mut grads, x, dx);
                }
                Op::MaxPool1d { x, argmax } => {
                    let x = *x;
                    let mut dx = vec![0.0; self.value(x).numel()];
                    for (&src, &g) in argmax.iter().zip(&upstream) {
                        dx[src] += g;
                    }
                    add_into(&mut grads, x, dx);
                }
                Op::GlobalMaxPool { x, argmax } => {
                    let x = *x;
                    let mut dx = vec![0.0; self.value(x).numel()];
                    for (&src, &g) in argmax.iter().zip(&upstream) {
                        dx[src] += g;
                    }
                    add_into(&mut grads, x, dx);
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xs = self.shape(x);
                    let ws = self.shape(w);
                    let (batch, d_in, d_out) = (xs[0], xs[1], ws[0]);
                    let xd = self.data(x);
                    let wd = self.data(w);
                    let mut dx = vec![0.0; batch * d_in];
                    let mut dw = vec![0.0; d_out * d_in];
                    let mut db = vec![0.0; d_out];
                    for bi in 0..batch {
                        for o in 0..d_out {
                            let g = upstream[bi * d_out + o];
                            if g == 0.0 {
                                continue;
                            }
                            db[o] += g;
                            let wrow = &wd[o * d_in..(o + 1) * d_in];
                            let xrow = &xd[bi * d_in..(bi + 1) * d_in];
                            for i in 0..d_in {
                                dx[bi * d_in + i] += g * wrow[i];
                                dw[o * d_in + i] += g * xrow[i];
                            }
                        }
                    }
                    add_into(&mut grads, x, dx);
                    add_into(&mut grads, w, dw);
                    add_into(&mut grads, b, db);
                }
                Op::NtXent {
                    z,
                    temperature,
                    normalized,
                    probs,
                } => {
                    let z = *z;
                    let zs = self.shape(z);
                    let (rows, dim) = (zs[0], zs[1]);
                    let dz = nt_xent_backward(
                        self.data(z),
                        normalized,
                        probs,
                        rows,
                        dim,
                        *temperature,
                        upstream[0],
                    );
                    add_into(&mut grads, z, dz);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let logits = *logits;
                    let batch = targets.len();
                    let classes = probs.len() / batch;
                    let scale = upstream[0] / batch as f64;
                    let mut dl = probs.clone();
                    for (bi, &t) in targets.iter().enumerate() {
                        dl[bi * classes + t] -= 1.0;
                    }
                    for g in &mut dl {
                        *g *= scale;
                    }
                    add_into(&mut grads, logits, dl);
                }
            }
        }
        self.grads = grads;
        Ok(store)
    }

    /// Gradient of the last backward pass with respect to a node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], id: NodeId, grad: Vec<f64>) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g;
            }
        }
        slot @ None => *slot = Some(grad),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    ch_in: usize,
    len: usize,
    ch_out: usize,
    k: usize,
) -> Vec<f64> {
    let pad_left = (k - 1) / 2;
    let mut out = vec![0.0; batch * ch_out * len];
    for bi in 0..batch {
        for co in 0..ch_out {
            let orow = &mut out[(bi * ch_out + co) * len..(bi * ch_out + co + 1) * len];
            orow.fill(b[co]);
            for ci in 0..ch_in {
                let xrow = &x[(bi * ch_in + ci) * len..(bi * ch_in + ci + 1) * len];
                let wrow = &w[(co * ch_in + ci) * k..(co * ch_in + ci + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let shift = kk as isize - pad_left as isize;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = ((len as isize - shift).min(len as isize)).max(0) as usize;
                    for t in t0..t1 {
                        orow[t] += wv * xrow[(t as isize + shift) as usize];
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    dy: &[f64],
    x: &[f64],
    w: &[f64],
    batch: usize,
    ch_in: usize,
    len: usize,
    ch_out: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad_left = (k - 1) / 2;
    let mut dx = vec![0.0; batch * ch_in * len];
    let mut dw = vec![0.0; ch_out * ch_in * k];
    let mut db = vec![0.0; ch_out];

    for bi in 0..batch {
        for co in 0..ch_out {
            let dyrow = &dy[(bi * ch_out + co) * len..(bi * ch_out + co + 1) * len];
            db[co] += dyrow.iter().sum::<f64>();
            for ci in 0..ch_in {
                let xrow = &x[(bi * ch_in + ci) * len..(bi * ch_in + ci + 1) * len];
                let dxrow = &mut dx[(bi * ch_in + ci) * len..(bi * ch_in + ci + 1) * len];
                let wrow = &w[(co * ch_in + ci) * k..(co * ch_in + ci + 1) * k];
                let dwrow = &mut dw[(co * ch_in + ci) * k..(co * ch_in + ci + 1) * k];
                for kk in 0..k {
                    let shift = kk as isize - pad_left as isize;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = ((len as isize - shift).min(len as isize)).max(0) as usize;
                    // dw: correlate upstream with input.
                    let mut acc = 0.0;
                    for t in t0..t1 {
                        acc += dyrow[t] * xrow[(t as isize + shift) as usize];
                    }
                    dwrow[kk] += acc;
                    // dx: spread upstream through the kernel tap.
                    let wv = wrow[kk];
                    if wv != 0.0 {
                        for t in t0..t1 {
                            dxrow[(t as isize + shift) as usize] += wv * dyrow[t];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Forward NT-Xent: returns (loss, normalized rows, candidate softmax with
/// zeroed diagonal).
fn nt_xent_forward(
    z: &[f64],
    rows: usize,
    dim: usize,
    temperature: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), NnError> {
    let half = rows / 2;
    let mut normalized = vec![0.0; rows * dim];
    for r in 0..rows {
        let row = &z[r * dim..(r + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(NnError::DegenerateEmbedding { row: r, norm });
        }
        for d in 0..dim {
            normalized[r * dim + d] = row[d] / norm;
        }
    }

    // Similarity matrix s(i, j) = cos(z_i, z_j) / tau.
    let mut sim = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            if i == j {
                continue;
            }
            let mut dot = 0.0;
            for d in 0..dim {
                dot += normalized[i * dim + d] * normalized[j * dim + d];
            }
            sim[i * rows + j] = dot / temperature;
        }
    }

    let mut probs = vec![0.0; rows * rows];
    let mut loss = 0.0;
    for i in 0..rows {
        let positive = (i + half) % rows;
        let mut max = f64::NEG_INFINITY;
        for j in 0..rows {
            if j != i {
                max = max.max(sim[i * rows + j]);
            }
        }
        let mut sum = 0.0;
        for j in 0..rows {
            if j == i {
                continue;
            }
            let e = (sim[i * rows + j] - max).exp();
            probs[i * rows + j] = e;
            sum += e;
        }
        for j in 0..rows {
            probs[i * rows + j] /= sum;
        }
        // -log( exp(s_ip) / sum_{k != i} exp(s_ik) )
        loss += sum.ln() + max - sim[i * rows + positive];
    }
    loss /= rows as f64;
    Ok((loss, normalized, probs))
}

/// Gradient of the NT-Xent loss with respect to the raw embeddings.
fn nt_xent_backward(
    z: &[f64],
    normalized: &[f64],
    probs: &[f64],
    rows: usize,
    dim: usize,
    temperature: f64,
    upstream: f64,
) -> Vec<f64> {
    let half = rows / 2;
    // dL/dS with S the similarity matrix (diagonal excluded).
    let mut ds = vec![0.0; rows * rows];
    let scale = upstream / rows as f64;
    for i in 0..rows {
        let positive = (i + half) % rows;
        for j in 0..rows {
            if j == i {
                continue;
            }
            let mut g = probs[i * rows + j];
            if j == positive {
                g -= 1.0;
            }
            ds[i * rows + j] = g * scale;
        }
    }

    // dL/dn_a = (1/tau) * sum_j (ds[a][j] + ds[j][a]) * n_j
    let mut dn = vec![0.0; rows * dim];
    for a in 0..rows {
        for j in 0..rows {
            let coeff = (ds[a * rows + j] + ds[j * rows + a]) / temperature;
            if coeff == 0.0 {
                continue;
            }
            for d in 0..dim {
                dn[a * dim + d] += coeff * normalized[j * dim + d];
            }
        }
    }

    // Back through row normalization: dz = (dn - (dn.n) n) / ||z||.
    let mut dz = vec![0.0; rows * dim];
    for r in 0..rows {
        let zrow = &z[r * dim..(r + 1) * dim];
        let nrow = &normalized[r * dim..(r + 1) * dim];
        let gnrow = &dn[r * dim..(r + 1) * dim];
        let norm = zrow.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = gnrow.iter().zip(nrow).map(|(g, n)| g * n).sum();
        for d in 0..dim {
            dz[r * dim + d] = (gnrow[d] - dot * nrow[d]) / norm;
        }
    }
    dz
}

/// Loss-only NT-Xent evaluation (no tape).
pub(crate) fn nt_xent_value(z: &Tensor, temperature: f64) -> Result<f64, NnError> {
    let shape = z.shape();
    if shape.len() != 2 || shape[0] < 2 || shape[0] % 2 != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "nt_xent expects [2N, d] with N >= 1, got {shape:?}"
        )));
    }
    nt_xent_forward(z.data(), shape[0], shape[1], temperature).map(|(loss, _, _)| loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_params() -> ParameterSet {
        ParameterSet::new()
    }

    #[test]
    fn conv1d_with_unit_kernel_is_identity() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let x = sess.input(Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let w = sess.input(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let b = sess.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = sess.conv1d(x, w, b).unwrap();
        assert_eq!(sess.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn conv1d_centered_average_matches_hand_computation() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let x = sess.input(Tensor::new(vec![1, 1, 3], vec![1.0, 3.0, 5.0]).unwrap());
        // k = 3, pad_left = 1: out[t] = 0.5 x[t-1] + 0.5 x[t].
        let w = sess.input(Tensor::new(vec![1, 1, 3], vec![0.5, 0.5, 0.0]).unwrap());
        let b = sess.input(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = sess.conv1d(x, w, b).unwrap();
        assert_eq!(sess.value(y).data()[1], 2.0);
    }

    #[test]
    fn conv1d_broadcasts_bias_over_zero_input() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let x = sess.input(Tensor::zeros(vec![2, 1, 4]));
        let w = sess.input(Tensor::zeros(vec![3, 1, 3]));
        let b = sess.input(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = sess.conv1d(x, w, b).unwrap();
        let data = sess.value(y).data();
        for bi in 0..2 {
            for co in 0..3 {
                for t in 0..4 {
                    let v = data[(bi * 3 + co) * 4 + t];
                    assert_eq!(v, [0.1, 0.2, 0.3][co]);
                }
            }
        }
    }

    #[test]
    fn conv1d_rejects_shape_mismatch() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let x = sess.input(Tensor::zeros(vec![1, 2, 4]));
        let w = sess.input(Tensor::zeros(vec![3, 1, 3]));
        let b = sess.input(Tensor::zeros(vec![3]));
        assert!(matches!(
            sess.conv1d(x, w, b),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn nt_xent_single_pair_is_zero() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let z = sess.input(Tensor::new(vec![2, 3], vec![0.3, -0.1, 2.0, -1.0, 0.5, 0.7]).unwrap());
        let loss = sess.nt_xent(z, 0.1).unwrap();
        assert_eq!(sess.value(loss).item(), 0.0);
    }

    #[test]
    fn nt_xent_rejects_zero_rows() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let z = sess.input(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
        assert!(matches!(
            sess.nt_xent(z, 0.1),
            Err(NnError::DegenerateEmbedding { row: 0, .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_hand_value_and_grad() {
        let params = empty_params();
        let mut sess = Session::new(&params);
        let logits = sess.input(Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap());
        let loss = sess.softmax_cross_entropy(logits, &[0]).unwrap();
        // -log(e^1 / (e^1 + e^-1)) = ln(1 + e^-2)
        let expected = (1.0 + (-2.0f64).exp()).ln();
        assert!((sess.value(loss).item() - expected).abs() < 1e-12);
        sess.backward(loss).unwrap();
        let g = sess.grad(logits).unwrap();
        let p0 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((g[0] - (p0 - 1.0)).abs() < 1e-12);
        assert!((g[1] - (1.0 - p0)).abs() < 1e-12);
    }

    #[test]
    fn param_gradients_accumulate_across_uses() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        params.insert("b", Tensor::new(vec![1], vec![0.0]).unwrap());
        let mut sess = Session::new(&params);
        let x = sess.input(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let w = sess.param("w").unwrap();
        let b = sess.param("b").unwrap();
        let y1 = sess.linear(x, w, b).unwrap();
        let y2 = sess.linear(y1, w, b).unwrap(); // w used twice
        let loss = sess.softmax_cross_entropy(y2, &[0]).unwrap();
        let store = sess.backward(loss).unwrap();
        // Single class softmax -> loss identically 0, gradient 0; the point
        // is that both uses contribute without panicking.
        assert!(store.get("w").is_some());
    }
}
