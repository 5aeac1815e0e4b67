use super::kernels::{col2im_3x3, gemm, im2col_3x3, permute_into};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Resolved geometry of a 3x3 convolution or pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// `out = floor((in + 2*padding - 3) / stride) + 1`, per spatial axis.
    pub fn for_input(shape: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, channels, height, width) = match *shape {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => {
                return Err(Error::Geometry(format!(
                    "3x3 window expects a C×H×W or N×C×H×W input, got {shape:?}"
                )))
            }
        };
        if stride == 0 {
            return Err(Error::Geometry("stride must be positive".into()));
        }
        let out = |side: usize| -> Result<usize> {
            let padded = side + 2 * padding;
            if padded < 3 {
                return Err(Error::Geometry(format!(
                    "spatial side {side} with padding {padding} is smaller than the 3x3 window"
                )));
            }
            Ok((padded - 3) / stride + 1)
        };
        Ok(ConvGeometry {
            batch,
            channels,
            height,
            width,
            out_height: out(height)?,
            out_width: out(width)?,
            stride,
            padding,
        })
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Relu { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeometry, out_channels: usize, cols: Vec<f64> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    MeanAxis { a: Var, axis: usize },
    Sum { a: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    /// Accumulated gradient; only populated on leaves created with `requires_grad`.
    grad: Option<Vec<f64>>,
}

/// Define-by-run computation graph. One graph belongs to one thread.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Registers a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.variable(value, false)
    }

    /// Registers a trainable leaf whose gradient is kept after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.variable(value, true)
    }

    pub fn variable(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a `requires_grad` leaf; `None` before any backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product. `a` may carry leading batch axes (`[..., k]`), which are
    /// flattened into rows; `b` must be `k x n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k;
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// Batched product `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T`
    /// when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mismatch = || Error::Shape {
            op: "batch_matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch());
        }
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    /// Elementwise sum; `b` broadcasts when its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(bd.len()) {
            chunk.iter_mut().zip(bd).for_each(|(o, v)| *o += v);
        }
        let value = Tensor::new(sa.to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op: "mul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(sa.to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        self.push(value, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| if *v < 0.0 { 0.0 } else { *v }).collect())
            .expect("same shape");
        self.push(value, Op::Relu { a }, &[a])
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let width = *t.shape().last().unwrap_or(&1);
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(width) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Softmax { a }, &[a])
    }

    /// `(x - mean) / sqrt(var + eps) * gamma + beta` over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        let d = *sx.last().ok_or_else(|| Error::Contract("layer_norm on a scalar".into()))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: sx.to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xs.len() / d;
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(sx.to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// 3x3 cross-correlation. `x` is `C×H×W` or `N×C×H×W`, `w` is
    /// `C_out×C×3×3`, `b` is `C_out`.
    pub fn conv2d_3x3(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::for_input(self.shape(x), stride, padding)?;
        let sw = self.shape(w);
        if sw.len() != 4 || sw[1] != geom.channels || sw[2] != 3 || sw[3] != 3 {
            return Err(Error::Shape {
                op: "conv2d_3x3",
                lhs: self.shape(x).to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let out_channels = sw[0];
        if self.shape(b) != [out_channels] {
            return Err(Error::Shape {
                op: "conv2d_3x3 bias",
                lhs: sw.to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let rows = geom.channels * 9;
        let positions = geom.out_plane();
        let mut cols = vec![0.0; geom.batch * rows * positions];
        let mut out = vec![0.0; geom.batch * out_channels * positions];
        let (xs, ws, bs) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for n in 0..geom.batch {
            let col = &mut cols[n * rows * positions..(n + 1) * rows * positions];
            im2col_3x3(
                &xs[n * geom.channels * geom.plane()..(n + 1) * geom.channels * geom.plane()],
                geom.channels,
                geom.height,
                geom.width,
                geom.out_height,
                geom.out_width,
                stride,
                padding,
                col,
            );
            let dst = &mut out[n * out_channels * positions..(n + 1) * out_channels * positions];
            for (co, plane) in dst.chunks_mut(positions).enumerate() {
                plane.fill(bs[co]);
            }
            gemm(out_channels, rows, positions, ws, false, col, false, dst, 1.0);
        }
        let shape = if self.shape(x).len() == 3 {
            vec![out_channels, geom.out_height, geom.out_width]
        } else {
            vec![geom.batch, out_channels, geom.out_height, geom.out_width]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                geom,
                out_channels,
                cols,
            },
            &[x, w, b],
        ))
    }

    /// 3x3 max pooling; padded positions never win. Ties go to the first
    /// element in row-major window order.
    pub fn maxpool2d_3x3(&mut self, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::for_input(self.shape(x), stride, padding)?;
        if padding > 1 {
            return Err(Error::Geometry(format!(
                "max-pool padding {padding} exceeds half the 3x3 window"
            )));
        }
        let xs = self.value(x).data();
        let planes = geom.batch * geom.channels;
        let mut out = Vec::with_capacity(planes * geom.out_plane());
        let mut argmax = Vec::with_capacity(out.capacity());
        for p in 0..planes {
            let base = p * geom.plane();
            for oy in 0..geom.out_height {
                for ox in 0..geom.out_width {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= geom.height as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= geom.width as isize {
                                continue;
                            }
                            let idx = base + iy as usize * geom.width + ix as usize;
                            if best_idx == usize::MAX || xs[idx] > best || (xs[idx].is_nan() && !best.is_nan()) {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let shape = if self.shape(x).len() == 3 {
            vec![geom.channels, geom.out_height, geom.out_width]
        } else {
            vec![geom.batch, geom.channels, geom.out_height, geom.out_width]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Contract(format!(
                "{perm:?} is not a permutation of the axes of {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut out = vec![0.0; self.value(a).len()];
        permute_into(self.value(a).data(), shape, perm, &mut out, false);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Permute { a, perm: perm.to_vec() }, &[a]))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::Contract(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xs = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xs[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::MeanAxis { a, axis }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(value, Op::Sum { a }, &[a])
    }

    /// Mean over the batch of `-weights[label] * log softmax(logits)[label]`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let shape = self.shape(logits);
        let [batch, classes] = *shape else {
            return Err(Error::Shape {
                op: "weighted_cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![labels.len()],
            });
        };
        if labels.len() != batch || weights.len() != classes {
            return Err(Error::Shape {
                op: "weighted_cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![labels.len(), weights.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += weights[label] * (lse - row[label]);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let value = Tensor::scalar(loss / batch as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a one-element `loss`. Gradients accumulate into the
    /// `requires_grad` leaves across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let slot = |grads: &mut [Option<Vec<f64>>], v: Var| -> bool {
            if !nodes[v.0].needs_grad {
                return false;
            }
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; nodes[v.0].value.len()]);
            }
            true
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves are handled by backward"),
            Op::MatMul { a, b } => {
                let sb = nodes[b.0].value.shape();
                let (k, n) = (sb[0], sb[1]);
                let m = nodes[a.0].value.len() / k;
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    gemm(m, n, k, g, false, val(*b), true, da, 1.0);
                }
                if slot(grads, *b) {
                    let db = grads[b.0].as_mut().unwrap();
                    gemm(k, m, n, val(*a), true, g, false, db, 1.0);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = nodes[a.0].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = nodes[i].value.shape()[2];
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &val(*b)[t * k * n..(t + 1) * k * n];
                        // dA = dC * B^T, where B^T is stored as B (n x k) when trans_b.
                        gemm(m, n, k, gt, false, bt, !trans_b, &mut da[t * m * k..(t + 1) * m * k], 1.0);
                    }
                }
                if slot(grads, *b) {
                    let db = grads[b.0].as_mut().unwrap();
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &val(*a)[t * m * k..(t + 1) * m * k];
                        let dst = &mut db[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            // dB (n x k) = dC^T * A
                            gemm(n, m, k, gt, true, at, false, dst, 1.0);
                        } else {
                            // dB (k x n) = A^T * dC
                            gemm(k, m, n, at, true, gt, false, dst, 1.0);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if slot(grads, *b) {
                    let db = grads[b.0].as_mut().unwrap();
                    let len = db.len();
                    for chunk in g.chunks(len) {
                        db.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Mul { a, b } => {
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(val(*b)) {
                        *d += gv * bv;
                    }
                }
                if slot(grads, *b) {
                    let db = grads[b.0].as_mut().unwrap();
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(val(*a)) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v * factor);
                }
            }
            Op::Relu { a } => {
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(val(*a)) {
                        if *x > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Softmax { a } => {
                if slot(grads, *a) {
                    let y = nodes[i].value.data();
                    let width = *nodes[i].value.shape().last().unwrap_or(&1);
                    let da = grads[a.0].as_mut().unwrap();
                    for ((drow, grow), yrow) in da.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..width {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = nodes[gamma.0].value.len();
                let gam = val(*gamma);
                if slot(grads, *x) {
                    let dx = grads[x.0].as_mut().unwrap();
                    let mut dxhat = vec![0.0; d];
                    for (r, &istd) in inv_std.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = grow[j] * gam[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh = dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[r * d + j] += istd * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                        }
                    }
                }
                if slot(grads, *gamma) {
                    let dg = grads[gamma.0].as_mut().unwrap();
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if slot(grads, *beta) {
                    let db = grads[beta.0].as_mut().unwrap();
                    for grow in g.chunks(d) {
                        db.iter_mut().zip(grow).for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                out_channels,
                cols,
            } => {
                let rows = geom.channels * 9;
                let positions = geom.out_plane();
                let per_out = out_channels * positions;
                if slot(grads, *b) {
                    let db = grads[b.0].as_mut().unwrap();
                    for gn in g.chunks(per_out) {
                        for (co, plane) in gn.chunks(positions).enumerate() {
                            db[co] += plane.iter().sum::<f64>();
                        }
                    }
                }
                if slot(grads, *w) {
                    let dw = grads[w.0].as_mut().unwrap();
                    for n in 0..geom.batch {
                        let gn = &g[n * per_out..(n + 1) * per_out];
                        let col = &cols[n * rows * positions..(n + 1) * rows * positions];
                        gemm(*out_channels, positions, rows, gn, false, col, true, dw, 1.0);
                    }
                }
                if slot(grads, *x) {
                    let dx = grads[x.0].as_mut().unwrap();
                    let mut dcol = vec![0.0; rows * positions];
                    let in_per = geom.channels * geom.plane();
                    for n in 0..geom.batch {
                        let gn = &g[n * per_out..(n + 1) * per_out];
                        gemm(rows, *out_channels, positions, val(*w), true, gn, false, &mut dcol, 0.0);
                        col2im_3x3(
                            &dcol,
                            geom.channels,
                            geom.height,
                            geom.width,
                            geom.out_height,
                            geom.out_width,
                            geom.stride,
                            geom.padding,
                            &mut dx[n * in_per..(n + 1) * in_per],
                        );
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if slot(grads, *x) {
                    let dx = grads[x.0].as_mut().unwrap();
                    for (gv, &idx) in g.iter().zip(argmax) {
                        dx[idx] += gv;
                    }
                }
            }
            Op::Reshape { a } => {
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    da.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Permute { a, perm } => {
                if slot(grads, *a) {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let out_shape = nodes[i].value.shape();
                    let da = grads[a.0].as_mut().unwrap();
                    permute_into(g, out_shape, &inverse, da, true);
                }
            }
            Op::MeanAxis { a, axis } => {
                if slot(grads, *a) {
                    let shape = nodes[a.0].value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let len = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let scale = 1.0 / len as f64;
                    let da = grads[a.0].as_mut().unwrap();
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            da[(o * len + l) * inner..(o * len + l + 1) * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, v)| *d += v * scale);
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if slot(grads, *a) {
                    let da = grads[a.0].as_mut().unwrap();
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                probs,
            } => {
                if slot(grads, *logits) {
                    let classes = weights.len();
                    let batch = labels.len() as f64;
                    let dl = grads[logits.0].as_mut().unwrap();
                    for (r, &label) in labels.iter().enumerate() {
                        let coef = g[0] * weights[label] / batch;
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            dl[r * classes + c] += coef * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
