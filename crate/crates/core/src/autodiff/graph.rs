use std::collections::BTreeMap;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients keyed by parameter identifier.
pub type GradMap = BTreeMap<String, Tensor>;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Dense { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize },
    Relu(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Reshape(NodeId),
    MeanPool(NodeId),
    Sum(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    Mse(NodeId, NodeId),
    BceWithLogits(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    grad: Option<Vec<f64>>,
}

/// Define-by-run tape. Every op executes immediately and records enough state
/// for the reverse sweep.
///
/// A graph is single-threaded; separate graphs share nothing and can run on
/// separate threads.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<NodeId> {
        value.ensure_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            param: None,
            grad: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records an input value.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf, "input")
    }

    /// Records a parameter leaf; its gradient is reported by [`Graph::param_grads`].
    pub fn param(&mut self, param: &Parameter) -> Result<NodeId> {
        let id = self.push(param.tensor.clone(), Op::Leaf, &param.name)?;
        self.nodes[id.0].param = Some(param.name.clone());
        self.params.push(id);
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass with respect to `id`, if reached.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// The node value with its gradient slot populated (zeros if unreached).
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        let mut t = node.value.clone();
        let g = node.grad.clone().unwrap_or_else(|| vec![0.0; t.len()]);
        t.set_grad(g).expect("gradient length matches value");
        t
    }

    /// Gradients for every registered parameter. Parameters the loss does not
    /// reach receive zeros.
    pub fn param_grads(&self) -> GradMap {
        let mut out = GradMap::new();
        for &id in &self.params {
            let node = &self.nodes[id.0];
            let name = node.param.clone().expect("param node carries a name");
            let data = node
                .grad
                .clone()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            let t = Tensor::new(node.value.shape().to_vec(), data).expect("same shape");
            match out.get_mut(&name) {
                // the same parameter registered twice: gradients add
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                None => {
                    out.insert(name, t);
                }
            }
        }
        out
    }

    /// Affine map `x · W + b` for `x: [B, in]`, `W: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 {
            return Err(Error::shape(
                "dense",
                format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (batch, n_in) = (xv.shape()[0], xv.shape()[1]);
        let n_out = wv.shape()[1];
        if wv.shape()[0] != n_in || bv.shape()[0] != n_out {
            return Err(Error::shape(
                "dense",
                format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = Vec::with_capacity(batch * n_out);
        for r in 0..batch {
            let row = &xd[r * n_in..(r + 1) * n_in];
            let mut acc = bd.to_vec();
            for (i, &xi) in row.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &wd[i * n_out..(i + 1) * n_out];
                for (a, &wij) in acc.iter_mut().zip(wrow) {
                    *a += xi * wij;
                }
            }
            out.extend(acc);
        }
        let value = Tensor::new(vec![batch, n_out], out)?;
        self.push(value, Op::Dense { x, w, b }, "dense")
    }

    /// Valid (unpadded) 2-D convolution over `x: [B, H, W, C]` with kernel
    /// `w: [KH, KW, C, O]` and bias `b: [O]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1 || stride == 0 {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "x {:?}, W {:?}, b {:?}, stride {stride}",
                    xv.shape(),
                    wv.shape(),
                    bv.shape()
                ),
            ));
        }
        let [batch, h, wd, c] = dims4(xv.shape());
        let [kh, kw, kc, o] = dims4(wv.shape());
        if kc != c || bv.shape()[0] != o || kh > h || kw > wd {
            return Err(Error::shape(
                "conv2d",
                format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (wd - kw) / stride + 1;
        let (xd, kd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; batch * oh * ow * o];
        for n in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ((n * oh + oy) * ow + ox) * o;
                    let acc = &mut out[base..base + o];
                    acc.copy_from_slice(bd);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let xi = ((n * h + oy * stride + ky) * wd + ox * stride + kx) * c;
                            let ki = (ky * kw + kx) * c * o;
                            for ci in 0..c {
                                let xval = xd[xi + ci];
                                let krow = &kd[ki + ci * o..ki + (ci + 1) * o];
                                for (a, &k) in acc.iter_mut().zip(krow) {
                                    *a += xval * k;
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, oh, ow, o], out)?;
        self.push(value, Op::Conv2d { x, w, b, stride }, "conv2d")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(value, Op::Relu(x), "relu")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a.tanh()).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(value, Op::Tanh(x), "tanh")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::Add(a, b), "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshape(shape)?;
        self.push(value, Op::Reshape(x), "reshape")
    }

    /// `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let shape = [v.rows(), v.row_len()];
        self.reshape(x, &shape)
    }

    /// Global spatial mean: `[B, H, W, C] -> [B, C]`.
    pub fn mean_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.rank() != 4 {
            return Err(Error::shape("mean_pool", format!("expected rank 4, got {:?}", v.shape())));
        }
        let [batch, h, w, c] = dims4(v.shape());
        let area = (h * w) as f64;
        let mut out = vec![0.0; batch * c];
        for n in 0..batch {
            let acc = &mut out[n * c..(n + 1) * c];
            for p in 0..h * w {
                let px = &v.data()[(n * h * w + p) * c..(n * h * w + p + 1) * c];
                for (a, &q) in acc.iter_mut().zip(px) {
                    *a += q;
                }
            }
            for a in acc.iter_mut() {
                *a /= area;
            }
        }
        let value = Tensor::new(vec![batch, c], out)?;
        self.push(value, Op::MeanPool(x), "mean_pool")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), "sum")
    }

    /// Mean over rows of `-log softmax(logits)[label]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {:?} for {} labels", lv.shape(), labels.len()),
            ));
        }
        let k = lv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let probs = softmax_rows(lv, 1.0).into_data();
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row(r);
            loss += log_sum_exp(row) - row[label];
        }
        loss /= labels.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    /// Mean squared elementwise difference.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (pv, tv) = (self.value(pred), self.value(target));
        same_shape("mse", pv, tv)?;
        let n = pv.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::Mse(pred, target), "mse")
    }

    /// Mean per-element binary cross-entropy between `sigmoid(logits)` and
    /// targets in `[0, 1]`, in the stable `softplus(z) - t·z` form.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        let (zv, tv) = (self.value(logits), self.value(target));
        same_shape("bce_with_logits", zv, tv)?;
        let n = zv.len() as f64;
        let loss = zv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / n;
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(logits, target),
            "bce_with_logits",
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.backward_seeded(&[(loss, vec![1.0])])
    }

    /// Reverse sweep from arbitrary upstream gradients. Seeds on the same node
    /// accumulate.
    pub fn backward_seeded(&mut self, seeds: &[(NodeId, Vec<f64>)]) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut start = 0;
        for (id, seed) in seeds {
            let len = self.nodes[id.0].value.len();
            if seed.len() != len {
                return Err(Error::shape(
                    "backward",
                    format!("seed length {} for value of length {len}", seed.len()),
                ));
            }
            accumulate(&mut self.nodes[id.0].grad, seed);
            start = start.max(id.0 + 1);
        }
        for i in (0..start).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(op_name(&self.nodes[i].op).into()));
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (batch, n_in) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let n_out = self.value(*w).shape()[1];
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut dx = vec![0.0; batch * n_in];
                let mut dw = vec![0.0; n_in * n_out];
                let mut db = vec![0.0; n_out];
                for r in 0..batch {
                    let gr = &g[r * n_out..(r + 1) * n_out];
                    for (d, &gv) in db.iter_mut().zip(gr) {
                        *d += gv;
                    }
                    for k in 0..n_in {
                        let wrow = &wd[k * n_out..(k + 1) * n_out];
                        dx[r * n_in + k] = wrow.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let xv = xd[r * n_in + k];
                        if xv != 0.0 {
                            for (d, &gv) in dw[k * n_out..(k + 1) * n_out].iter_mut().zip(gr) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*w, &dw);
                self.add_grad(*b, &db);
            }
            Op::Conv2d { x, w, b, stride } => {
                let [batch, h, wd, c] = dims4(self.value(*x).shape());
                let [kh, kw, _, o] = dims4(self.value(*w).shape());
                let [_, oh, ow, _] = dims4(self.nodes[i].value.shape());
                let xd = self.value(*x).data();
                let kd = self.value(*w).data();
                let s = *stride;
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut db = vec![0.0; o];
                for n in 0..batch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let base = ((n * oh + oy) * ow + ox) * o;
                            let gr = &g[base..base + o];
                            for (d, &gv) in db.iter_mut().zip(gr) {
                                *d += gv;
                            }
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let xi = ((n * h + oy * s + ky) * wd + ox * s + kx) * c;
                                    let ki = (ky * kw + kx) * c * o;
                                    for ci in 0..c {
                                        let krange = ki + ci * o..ki + (ci + 1) * o;
                                        let xval = xd[xi + ci];
                                        dx[xi + ci] += kd[krange.clone()]
                                            .iter()
                                            .zip(gr)
                                            .map(|(a, b)| a * b)
                                            .sum::<f64>();
                                        for (d, &gv) in dk[krange].iter_mut().zip(gr) {
                                            *d += xval * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*w, &dk);
                self.add_grad(*b, &db);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gv)| if a > 0.0 { gv } else { 0.0 })
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = self.nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * (1.0 - y * y))
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Add(a, b) => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = self.value(*b).data().iter().zip(g).map(|(p, q)| p * q).collect();
                let db: Vec<f64> = self.value(*a).data().iter().zip(g).map(|(p, q)| p * q).collect();
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::Reshape(x) => self.add_grad(*x, g),
            Op::MeanPool(x) => {
                let [batch, h, w, c] = dims4(self.value(*x).shape());
                let area = (h * w) as f64;
                let mut dx = vec![0.0; batch * h * w * c];
                for n in 0..batch {
                    let gr = &g[n * c..(n + 1) * c];
                    for p in 0..h * w {
                        let base = (n * h * w + p) * c;
                        for (d, &gv) in dx[base..base + c].iter_mut().zip(gr) {
                            *d = gv / area;
                        }
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).len()];
                self.add_grad(*x, &dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = self.value(*logits).shape()[1];
                let scale = g[0] / labels.len() as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &label) in labels.iter().enumerate() {
                    dx[r * k + label] -= scale;
                }
                self.add_grad(*logits, &dx);
            }
            Op::Mse(p, t) => {
                let n = self.value(*p).len() as f64;
                let dp: Vec<f64> = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(self.value(*t).data())
                    .map(|(a, b)| 2.0 * (a - b) / n * g[0])
                    .collect();
                let dt: Vec<f64> = dp.iter().map(|v| -v).collect();
                self.add_grad(*p, &dp);
                self.add_grad(*t, &dt);
            }
            Op::BceWithLogits(z, t) => {
                let n = self.value(*z).len() as f64;
                let zd = self.value(*z).data();
                let td = self.value(*t).data();
                let dz: Vec<f64> = zd
                    .iter()
                    .zip(td)
                    .map(|(&zv, &tv)| (sigmoid(zv) - tv) / n * g[0])
                    .collect();
                let dt: Vec<f64> = zd.iter().map(|&zv| -zv / n * g[0]).collect();
                self.add_grad(*z, &dz);
                self.add_grad(*t, &dt);
            }
        }
    }

    fn add_grad(&mut self, id: NodeId, g: &[f64]) {
        accumulate(&mut self.nodes[id.0].grad, g);
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Dense { .. } => "dense",
        Op::Conv2d { .. } => "conv2d",
        Op::Relu(_) => "relu",
        Op::Tanh(_) => "tanh",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Reshape(_) => "reshape",
        Op::MeanPool(_) => "mean_pool",
        Op::Sum(_) => "sum",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        Op::Mse(..) => "mse",
        Op::BceWithLogits(..) => "bce_with_logits",
    }
}

fn dims4(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise `softmax(logits / temperature)` of a `[B, K]` tensor.
pub fn softmax_rows(logits: &Tensor, temperature: f64) -> Tensor {
    let k = logits.row_len();
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..logits.rows() {
        let scaled: Vec<f64> = logits.row(r).iter().map(|v| v / temperature).collect();
        let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    Tensor::new(vec![logits.rows(), k], out).expect("same shape as logits")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_graph_passes_input_through() {
        let mut g = Graph::new();
        let x = g.input(t(&[2], &[1.0, 2.0])).unwrap();
        assert_eq!(g.value(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_with_identity_weights() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[3.0, 4.0])).unwrap();
        let w = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = g.input(t(&[2], &[0.0, 0.0])).unwrap();
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = Graph::new();
        let x = g.input(t(&[2], &[-1.0, 2.0])).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn dense_shape_mismatch_is_error() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let w = g.input(Tensor::zeros(&[2, 2])).unwrap();
        let b = g.input(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.dense(x, w, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_forward_is_error() {
        let mut g = Graph::new();
        let x = g.input(t(&[1], &[1e200])).unwrap();
        assert!(matches!(g.mul(x, x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let w = g
            .param(&Parameter::new("w", Tensor::scalar(3.0)))
            .unwrap();
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        assert_eq!(g.value(loss).item(), 9.0);
        g.backward(loss).unwrap();
        assert_eq!(g.param_grads()["w"].data(), &[6.0]);
    }

    #[test]
    fn relu_subgradient_is_zero_at_negative() {
        let mut g = Graph::new();
        let w = g
            .param(&Parameter::new("w", t(&[2], &[-1.0, 2.0])))
            .unwrap();
        let r = g.relu(w).unwrap();
        let loss = g.sum(r).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.param_grads()["w"].data(), &[0.0, 1.0]);
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param(&Parameter::new("a", Tensor::scalar(2.0))).unwrap();
        let _b = g.param(&Parameter::new("b", t(&[2], &[1.0, 1.0]))).unwrap();
        let loss = g.sum(a).unwrap();
        g.backward(loss).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads["a"].data(), &[1.0]);
        assert_eq!(grads["b"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        assert!(matches!(
            g.backward(NodeId(0)),
            Err(Error::BackwardBeforeForward)
        ));
        let x = g.input(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let cases: [(&[f64], usize, f64); 3] = [
            (&[1000.0, 0.0], 0, 0.0),
            (&[0.0, 0.0], 0, std::f64::consts::LN_2),
            // -ln(e^3 / (e^1 + e^2 + e^3))
            (&[1.0, 2.0, 3.0], 2, 0.40760596444438),
        ];
        for (logits, label, expected) in cases {
            let mut g = Graph::new();
            let z = g.input(t(&[1, logits.len()], logits)).unwrap();
            let loss = g.softmax_cross_entropy(z, &[label]).unwrap();
            assert!((g.value(loss).item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let z = g.input(t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert!(matches!(
            g.softmax_cross_entropy(z, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn mse_values() {
        let cases: [(&[f64], &[f64], f64); 3] = [
            (&[1.0, 2.0], &[1.0, 2.0], 0.0),
            (&[0.0, 0.0], &[1.0, 1.0], 1.0),
            (&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 14.0 / 3.0),
        ];
        for (p, q, expected) in cases {
            let mut g = Graph::new();
            let a = g.input(t(&[p.len()], p)).unwrap();
            let b = g.input(t(&[q.len()], q)).unwrap();
            let loss = g.mse(a, b).unwrap();
            assert!((g.value(loss).item() - expected).abs() < 1e-15);
        }
        let mut g = Graph::new();
        let a = g.input(t(&[2], &[0.0, 0.0])).unwrap();
        let b = g.input(t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        assert!(g.mse(a, b).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = t(&[2, 3], &[1.0, -4.0, 700.0, 0.5, 0.5, 0.5]);
        let p = softmax_rows(&z, 1.0);
        for r in 0..2 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_pool_is_per_channel_mean() {
        // 1 x 4 x 4 x 2 with channel 0 = index, channel 1 = constant 3
        let mut data = Vec::new();
        for p in 0..16 {
            data.push(p as f64);
            data.push(3.0);
        }
        let mut g = Graph::new();
        let x = g.input(t(&[1, 4, 4, 2], &data)).unwrap();
        let y = g.mean_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[7.5, 3.0]);
    }
}
