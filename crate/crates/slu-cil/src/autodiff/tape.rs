//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations append value slots to the tape in topological order; each
//! recorded operation carries a backward rule. `backward` replays the tape
//! in reverse once, accumulating gradients additively, and folds the result
//! into per-slot gradient buffers so repeated calls accumulate.
//!
//! Slots whose inputs carry no gradient requirement record nothing, so
//! inference over frozen parameters pays no bookkeeping.

use std::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;

use super::tensor::{mm, mm_nt, mm_tn, Tensor};

/// Handle to a value slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

struct OpRecord {
    out: usize,
    backward: BackwardFn,
}

/// (all forward values, d_out, gradient sink)
type BackwardFn = Box<dyn Fn(&[Tensor], &[f64], &mut GradSink)>;

pub(crate) struct GradSink<'a> {
    local: &'a mut Vec<Vec<f64>>,
    values: &'a [Tensor],
    active: &'a [bool],
}

impl GradSink<'_> {
    fn buf(&mut self, id: usize) -> &mut Vec<f64> {
        if self.local[id].is_empty() {
            self.local[id] = vec![0.0; self.values[id].numel()];
        }
        &mut self.local[id]
    }

    fn add_slice(&mut self, id: usize, c: &[f64]) {
        if !self.active[id] {
            return;
        }
        for (x, y) in self.buf(id).iter_mut().zip(c) {
            *x += y;
        }
    }

    fn add_at(&mut self, id: usize, idx: usize, v: f64) {
        if !self.active[id] {
            return;
        }
        self.buf(id)[idx] += v;
    }

    fn active(&self, id: usize) -> bool {
        self.active[id]
    }
}

#[derive(Default)]
struct TapeInner {
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<OpRecord>,
}

/// Records operations over tensors and replays them backward for gradients.
///
/// A tape and the vars on it are confined to one thread; fresh tapes are
/// cheap and one is created per training step or per decoded utterance.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of value slots on the tape.
    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded (differentiable) operations.
    pub fn recorded_ops(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.values.push(value);
        inner.requires_grad.push(requires_grad);
        inner.grads.push(None);
        Var(id)
    }

    /// A constant input: no gradient is tracked through it.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A trainable input: `grad` will hold d(loss)/d(param) after backward.
    pub fn param(&self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_result(
        &self,
        inner: &mut TapeInner,
        value: Tensor,
        inputs: &[usize],
        backward: BackwardFn,
    ) -> Var {
        let rg = inputs.iter().any(|&i| inner.requires_grad[i]);
        let id = inner.values.len();
        inner.values.push(value);
        inner.requires_grad.push(rg);
        inner.grads.push(None);
        if rg {
            inner.ops.push(OpRecord { out: id, backward });
        }
        Var(id)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.inner.borrow().values[v.0].clone()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().values[v.0].shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.inner.borrow().values[v.0].item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.inner.borrow().requires_grad[v.0]
    }

    /// Accumulated gradient of a slot, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let inner = self.inner.borrow();
        inner.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(inner.values[v.0].shape().to_vec(), g.clone()).unwrap())
    }

    pub fn clear_grads(&self) {
        for g in self.inner.borrow_mut().grads.iter_mut() {
            *g = None;
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// across calls: running backward twice doubles every gradient.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        let value = inner
            .values
            .get(loss.0)
            .ok_or_else(|| Error::Usage("backward target is not on this tape".into()))?;
        if !value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        if !inner.requires_grad[loss.0] {
            return Err(Error::Usage(
                "loss does not depend on any tensor that requires gradients".into(),
            ));
        }

        let n = inner.values.len();
        let mut local: Vec<Vec<f64>> = vec![Vec::new(); n];
        local[loss.0] = vec![1.0];

        for op in inner.ops.iter().rev() {
            if local[op.out].is_empty() {
                continue;
            }
            let dout = std::mem::take(&mut local[op.out]);
            {
                let mut sink = GradSink {
                    local: &mut local,
                    values: &inner.values,
                    active: &inner.requires_grad,
                };
                (op.backward)(&inner.values, &dout, &mut sink);
            }
            // restore so intermediate grads stay queryable
            local[op.out] = dout;
        }

        for (id, buf) in local.into_iter().enumerate() {
            if buf.is_empty() || !inner.requires_grad[id] {
                continue;
            }
            match &mut inner.grads[id] {
                Some(g) => {
                    for (x, y) in g.iter_mut().zip(&buf) {
                        *x += y;
                    }
                }
                slot => *slot = Some(buf),
            }
        }
        Ok(())
    }

    // ───────────────────────── operations ─────────────────────────

    /// C = A·B for 2-D tensors [m,k]·[k,n].
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let (sa, sb) = (
            inner.values[a.0].shape().to_vec(),
            inner.values[b.0].shape().to_vec(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!(
                "matmul expects [m,k]·[k,n], got {:?}·{:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = mm(inner.values[a.0].data(), inner.values[b.0].data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[a.0, b.0],
            Box::new(move |values, dout, sink| {
                if sink.active(a.0) {
                    let da = mm_nt(dout, values[b.0].data(), m, n, k);
                    sink.add_slice(a.0, &da);
                }
                if sink.active(b.0) {
                    let db = mm_tn(values[a.0].data(), dout, m, k, n);
                    sink.add_slice(b.0, &db);
                }
            }),
        ))
    }

    /// C = A·Bᵀ for [m,k]·[n,k] → [m,n]; used by attention scores.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let (sa, sb) = (
            inner.values[a.0].shape().to_vec(),
            inner.values[b.0].shape().to_vec(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape(format!(
                "matmul_nt expects [m,k]·[n,k], got {:?}·{:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let data = mm_nt(inner.values[a.0].data(), inner.values[b.0].data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[a.0, b.0],
            Box::new(move |values, dout, sink| {
                if sink.active(a.0) {
                    let da = mm(dout, values[b.0].data(), m, n, k);
                    sink.add_slice(a.0, &da);
                }
                if sink.active(b.0) {
                    let db = mm_tn(dout, values[a.0].data(), m, n, k);
                    sink.add_slice(b.0, &db);
                }
            }),
        ))
    }

    fn elementwise_check(inner: &TapeInner, a: Var, b: Var, op: &str) -> Result<()> {
        if inner.values[a.0].shape() != inner.values[b.0].shape() {
            return Err(Error::Shape(format!(
                "{} expects equal shapes, got {:?} vs {:?}",
                op,
                inner.values[a.0].shape(),
                inner.values[b.0].shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        Self::elementwise_check(&inner, a, b, "add")?;
        let data: Vec<f64> = inner.values[a.0]
            .iter()
            .zip(inner.values[b.0].iter())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(inner.values[a.0].shape().to_vec(), data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[a.0, b.0],
            Box::new(move |_, dout, sink| {
                sink.add_slice(a.0, dout);
                sink.add_slice(b.0, dout);
            }),
        ))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        Self::elementwise_check(&inner, a, b, "sub")?;
        let data: Vec<f64> = inner.values[a.0]
            .iter()
            .zip(inner.values[b.0].iter())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(inner.values[a.0].shape().to_vec(), data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[a.0, b.0],
            Box::new(move |_, dout, sink| {
                sink.add_slice(a.0, dout);
                if sink.active(b.0) {
                    let neg: Vec<f64> = dout.iter().map(|v| -v).collect();
                    sink.add_slice(b.0, &neg);
                }
            }),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        Self::elementwise_check(&inner, a, b, "mul")?;
        let data: Vec<f64> = inner.values[a.0]
            .iter()
            .zip(inner.values[b.0].iter())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(inner.values[a.0].shape().to_vec(), data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[a.0, b.0],
            Box::new(move |values, dout, sink| {
                if sink.active(a.0) {
                    let da: Vec<f64> = dout
                        .iter()
                        .zip(values[b.0].iter())
                        .map(|(d, y)| d * y)
                        .collect();
                    sink.add_slice(a.0, &da);
                }
                if sink.active(b.0) {
                    let db: Vec<f64> = dout
                        .iter()
                        .zip(values[a.0].iter())
                        .map(|(d, x)| d * x)
                        .collect();
                    sink.add_slice(b.0, &db);
                }
            }),
        ))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let mut inner = self.inner.borrow_mut();
        let data: Vec<f64> = inner.values[a.0].iter().map(|x| x * c).collect();
        let out = Tensor::new(inner.values[a.0].shape().to_vec(), data).unwrap();
        self.push_result(
            &mut inner,
            out,
            &[a.0],
            Box::new(move |_, dout, sink| {
                let da: Vec<f64> = dout.iter().map(|d| d * c).collect();
                sink.add_slice(a.0, &da);
            }),
        )
    }

    /// Broadcast-add a row vector [n] to every row of [m,n].
    pub fn add_row(&self, x: Var, b: Var) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let sx = inner.values[x.0].shape().to_vec();
        let sb = inner.values[b.0].shape().to_vec();
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Shape(format!(
                "add_row expects [m,n]+[n], got {:?}+{:?}",
                sx, sb
            )));
        }
        let (m, n) = (sx[0], sx[1]);
        let bv = inner.values[b.0].data().to_vec();
        let mut data = inner.values[x.0].data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bv[j];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0, b.0],
            Box::new(move |_, dout, sink| {
                sink.add_slice(x.0, dout);
                if sink.active(b.0) {
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += dout[i * n + j];
                        }
                    }
                    sink.add_slice(b.0, &db);
                }
            }),
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self, x: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let mut inner = self.inner.borrow_mut();
        let data: Vec<f64> = inner.values[x.0]
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()))
            .collect();
        let out = Tensor::new(inner.values[x.0].shape().to_vec(), data).unwrap();
        self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |values, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                let dx: Vec<f64> = values[x.0]
                    .iter()
                    .zip(dout)
                    .map(|(&v, d)| {
                        let t = (C * (v + A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * C * (1.0 + 3.0 * A * v * v);
                        d * (0.5 * (1.0 + t) + 0.5 * v * dt)
                    })
                    .collect();
                sink.add_slice(x.0, &dx);
            }),
        )
    }

    fn softmax_lanes(x: &Tensor, axis: usize, log: bool) -> Result<Vec<f64>> {
        if axis >= x.shape().len() {
            return Err(Error::Shape(format!(
                "softmax axis {} out of range for shape {:?}",
                axis,
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let (outer, len, inner_n) = lane_dims(x.shape(), axis);
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner_n {
                let at = |k: usize| (o * len + k) * inner_n + i;
                let mut mx = f64::NEG_INFINITY;
                for k in 0..len {
                    mx = mx.max(src[at(k)]);
                }
                let mut z = 0.0;
                for k in 0..len {
                    z += (src[at(k)] - mx).exp();
                }
                if log {
                    let lz = z.ln();
                    for k in 0..len {
                        out[at(k)] = src[at(k)] - mx - lz;
                    }
                } else {
                    for k in 0..len {
                        out[at(k)] = (src[at(k)] - mx).exp() / z;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Softmax along `axis`; rows sum to one, stabilized by max subtraction.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let shape = inner.values[x.0].shape().to_vec();
        let data = Self::softmax_lanes(&inner.values[x.0], axis, false)?;
        let out = Tensor::new(shape, data)?;
        let out_id = inner.values.len();
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |values, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                // ds_k = s_k (d_k − Σ_j d_j s_j) per lane
                let s = values[out_id].data();
                let (outer, len, inner_n) = lane_dims(values[x.0].shape(), axis);
                let mut dx = vec![0.0; dout.len()];
                for o in 0..outer {
                    for i in 0..inner_n {
                        let at = |k: usize| (o * len + k) * inner_n + i;
                        let mut dot = 0.0;
                        for k in 0..len {
                            dot += dout[at(k)] * s[at(k)];
                        }
                        for k in 0..len {
                            dx[at(k)] = s[at(k)] * (dout[at(k)] - dot);
                        }
                    }
                }
                sink.add_slice(x.0, &dx);
            }),
        ))
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let shape = inner.values[x.0].shape().to_vec();
        let data = Self::softmax_lanes(&inner.values[x.0], axis, true)?;
        let out = Tensor::new(shape.clone(), data)?;
        let out_id = inner.values.len();
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |values, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                // dx_k = d_k − exp(y_k) Σ_j d_j per lane
                let y = values[out_id].data();
                let (outer, len, inner_n) = lane_dims(values[x.0].shape(), axis);
                let mut dx = vec![0.0; dout.len()];
                for o in 0..outer {
                    for i in 0..inner_n {
                        let at = |k: usize| (o * len + k) * inner_n + i;
                        let mut sum = 0.0;
                        for k in 0..len {
                            sum += dout[at(k)];
                        }
                        for k in 0..len {
                            dx[at(k)] = dout[at(k)] - y[at(k)].exp() * sum;
                        }
                    }
                }
                sink.add_slice(x.0, &dx);
            }),
        ))
    }

    /// Layer normalization over the last axis, then affine transform.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {}", eps)));
        }
        let mut inner = self.inner.borrow_mut();
        let shape = inner.values[x.0].shape().to_vec();
        let n = *shape.last().ok_or_else(|| {
            Error::Shape("layer_norm input must have at least one axis".into())
        })?;
        if n < 2 {
            return Err(Error::Input(format!(
                "layer_norm axis length must be >= 2, got {}",
                n
            )));
        }
        if inner.values[gain.0].shape() != [n] || inner.values[bias.0].shape() != [n] {
            return Err(Error::Shape("layer_norm gain/bias must be [n] vectors".into()));
        }
        let rows = inner.values[x.0].numel() / n;
        let src = inner.values[x.0].data();
        let g = inner.values[gain.0].data();
        let b = inner.values[bias.0].data();
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                data[r * n + j] = g[j] * (row[j] - mu) * inv + b[j];
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0, gain.0, bias.0],
            Box::new(move |values, dout, sink| {
                let src = values[x.0].data();
                let g = values[gain.0].data();
                let rows = src.len() / n;
                let mut dx = vec![0.0; src.len()];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for r in 0..rows {
                    let row = &src[r * n..(r + 1) * n];
                    let dr = &dout[r * n..(r + 1) * n];
                    let mu = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mut mean_dy = 0.0;
                    let mut mean_dyy = 0.0;
                    for j in 0..n {
                        let y = (row[j] - mu) * inv;
                        let dy = dr[j] * g[j];
                        dg[j] += dr[j] * y;
                        db[j] += dr[j];
                        mean_dy += dy;
                        mean_dyy += dy * y;
                    }
                    mean_dy /= n as f64;
                    mean_dyy /= n as f64;
                    for j in 0..n {
                        let y = (row[j] - mu) * inv;
                        let dy = dr[j] * g[j];
                        dx[r * n + j] = inv * (dy - mean_dy - y * mean_dyy);
                    }
                }
                sink.add_slice(x.0, &dx);
                sink.add_slice(gain.0, &dg);
                sink.add_slice(bias.0, &db);
            }),
        ))
    }

    /// Gather rows of `table` [V,h] by token id; backward scatter-adds.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let st = inner.values[table.0].shape().to_vec();
        if st.len() != 2 {
            return Err(Error::Shape("embedding table must be 2-D".into()));
        }
        let (v, h) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Input(format!(
                "embedding id {} out of range for table with {} rows",
                bad, v
            )));
        }
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup needs at least one id".into()));
        }
        let src = inner.values[table.0].data();
        let mut data = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            data.extend_from_slice(&src[i * h..(i + 1) * h]);
        }
        let out = Tensor::new(vec![ids.len(), h], data)?;
        let ids_cap: Vec<usize> = ids.to_vec();
        Ok(self.push_result(
            &mut inner,
            out,
            &[table.0],
            Box::new(move |_, dout, sink| {
                if !sink.active(table.0) {
                    return;
                }
                for (r, &i) in ids_cap.iter().enumerate() {
                    for j in 0..h {
                        sink.add_at(table.0, i * h + j, dout[r * h + j]);
                    }
                }
            }),
        ))
    }

    /// Arithmetic mean along `axis`; output drops that axis.
    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let shape = inner.values[x.0].shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "mean axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        let (outer, len, inner_n) = lane_dims(&shape, axis);
        let src = inner.values[x.0].data();
        let mut data = vec![0.0; outer * inner_n];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner_n {
                    data[o * inner_n + i] += src[(o * len + k) * inner_n + i];
                }
            }
        }
        for v in data.iter_mut() {
            *v /= len as f64;
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |_, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                let mut dx = vec![0.0; outer * len * inner_n];
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner_n {
                            dx[(o * len + k) * inner_n + i] = dout[o * inner_n + i] * scale;
                        }
                    }
                }
                sink.add_slice(x.0, &dx);
            }),
        ))
    }

    /// Sum of all elements → scalar.
    pub fn sum_all(&self, x: Var) -> Var {
        let mut inner = self.inner.borrow_mut();
        let s: f64 = inner.values[x.0].iter().sum();
        let numel = inner.values[x.0].numel();
        let out = Tensor::scalar(s);
        self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |_, dout, sink| {
                let dx = vec![dout[0]; numel];
                sink.add_slice(x.0, &dx);
            }),
        )
    }

    /// Mean of all elements → scalar.
    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.inner.borrow().values[x.0].numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Stack 2-D blocks with equal column counts on top of each other.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat_rows needs at least one part".into()));
        }
        let mut inner = self.inner.borrow_mut();
        let n = inner.values[parts[0].0].shape()[1];
        let mut rows = 0;
        for p in parts {
            let s = inner.values[p.0].shape();
            if s.len() != 2 || s[1] != n {
                return Err(Error::Shape("concat_rows parts must be [*,n]".into()));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * n);
        for p in parts {
            data.extend_from_slice(inner.values[p.0].data());
        }
        let out = Tensor::new(vec![rows, n], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push_result(
            &mut inner,
            out,
            &ids.clone(),
            Box::new(move |values, dout, sink| {
                let mut offset = 0;
                for &id in &ids {
                    let sz = values[id].numel();
                    sink.add_slice(id, &dout[offset..offset + sz]);
                    offset += sz;
                }
            }),
        ))
    }

    /// Concatenate 2-D blocks with equal row counts side by side.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat_cols needs at least one part".into()));
        }
        let mut inner = self.inner.borrow_mut();
        let m = inner.values[parts[0].0].shape()[0];
        let mut cols = 0;
        for p in parts {
            let s = inner.values[p.0].shape();
            if s.len() != 2 || s[0] != m {
                return Err(Error::Shape("concat_cols parts must be [m,*]".into()));
            }
            cols += s[1];
        }
        let mut data = vec![0.0; m * cols];
        let mut offset = 0;
        for p in parts {
            let s = inner.values[p.0].shape().to_vec();
            let src = inner.values[p.0].data();
            for i in 0..m {
                data[i * cols + offset..i * cols + offset + s[1]]
                    .copy_from_slice(&src[i * s[1]..(i + 1) * s[1]]);
            }
            offset += s[1];
        }
        let out = Tensor::new(vec![m, cols], data)?;
        let meta: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| (p.0, inner.values[p.0].shape()[1]))
            .collect();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push_result(
            &mut inner,
            out,
            &ids,
            Box::new(move |_, dout, sink| {
                let mut offset = 0;
                for &(id, w) in &meta {
                    if sink.active(id) {
                        let mut d = vec![0.0; m * w];
                        for i in 0..m {
                            d[i * w..(i + 1) * w]
                                .copy_from_slice(&dout[i * cols + offset..i * cols + offset + w]);
                        }
                        sink.add_slice(id, &d);
                    }
                    offset += w;
                }
            }),
        ))
    }

    /// Take rows [start, start+len) of a 2-D tensor.
    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let s = inner.values[x.0].shape().to_vec();
        if s.len() != 2 || start + len > s[0] {
            return Err(Error::Shape(format!(
                "slice_rows [{}, {}) out of range for shape {:?}",
                start,
                start + len,
                s
            )));
        }
        let n = s[1];
        let src = inner.values[x.0].data();
        let data = src[start * n..(start + len) * n].to_vec();
        let out = Tensor::new(vec![len, n], data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |_, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                for (ofs, d) in dout.iter().enumerate() {
                    sink.add_at(x.0, start * n + ofs, *d);
                }
            }),
        ))
    }

    /// Take columns [start, start+len) of a 2-D tensor.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let s = inner.values[x.0].shape().to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::Shape(format!(
                "slice_cols [{}, {}) out of range for shape {:?}",
                start,
                start + len,
                s
            )));
        }
        let (m, n) = (s[0], s[1]);
        let src = inner.values[x.0].data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let out = Tensor::new(vec![m, len], data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |_, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                for i in 0..m {
                    for j in 0..len {
                        sink.add_at(x.0, i * n + start + j, dout[i * len + j]);
                    }
                }
            }),
        ))
    }

    /// out[i] = x[i, idx[i]] for a 2-D tensor; used to pick target log-probs.
    pub fn pick_per_row(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let mut inner = self.inner.borrow_mut();
        let s = inner.values[x.0].shape().to_vec();
        if s.len() != 2 || idx.len() != s[0] {
            return Err(Error::Shape(format!(
                "pick_per_row expects one index per row of {:?}, got {}",
                s,
                idx.len()
            )));
        }
        let (_, n) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Input(format!("pick index {} out of range (cols {})", bad, n)));
        }
        let src = inner.values[x.0].data();
        let data: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| src[i * n + j]).collect();
        let out = Tensor::vector(data);
        let idx_cap = idx.to_vec();
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |_, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                for (i, &j) in idx_cap.iter().enumerate() {
                    sink.add_at(x.0, i * n + j, dout[i]);
                }
            }),
        ))
    }

    /// Inverted-scale dropout with a mask drawn from the given seed.
    /// `rate` must be in [0,1); rate 0 is the identity.
    pub fn dropout(&self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0,1), got {}", rate)));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let mut inner = self.inner.borrow_mut();
        let keep = 1.0 - rate;
        let mut rng = rng_from(seed);
        let mask: Vec<f64> = (0..inner.values[x.0].numel())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data: Vec<f64> = inner.values[x.0]
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let out = Tensor::new(inner.values[x.0].shape().to_vec(), data)?;
        Ok(self.push_result(
            &mut inner,
            out,
            &[x.0],
            Box::new(move |_, dout, sink| {
                if !sink.active(x.0) {
                    return;
                }
                let dx: Vec<f64> = dout.iter().zip(&mask).map(|(d, m)| d * m).collect();
                sink.add_slice(x.0, &dx);
            }),
        ))
    }
}
