use ndarray::{concatenate, s, Array2, ArrayD, Axis, Ix2, Ix3, IxDyn, Slice, Zip};

use crate::{Graph, Op, Tensor, Var};

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn last_axis(t: &Tensor) -> Axis {
    Axis(t.ndim() - 1)
}

fn as_matrix(t: &Tensor) -> Array2<f64> {
    let n = *t.shape().last().unwrap();
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((t.len() / n, n))
        .unwrap()
}

impl Graph {
    /// `[m,k] x [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self
            .value(a)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs must be 2-D");
        let bv = self
            .value(b)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs must be 2-D");
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dimensions");
        let y = av.dot(&bv).into_dyn();
        let rg = self.any_grad(&[a, b]);
        self.push(y, Op::MatMul(a, b), rg)
    }

    /// Adds `b: [n]` along the last axis of `x: [..., n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.ndim(), 1, "bias must be 1-D");
        assert_eq!(self.shape(x).last(), Some(&bv.len()), "bias width");
        let y = self.value(x) + bv;
        let rg = self.any_grad(&[x, b]);
        self.push(y, Op::AddBias(x, b), rg)
    }

    /// Dense layer over the last axis: `x: [..., in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let inner = *shape.last().unwrap();
        let rows = shape.iter().product::<usize>() / inner.max(1);
        let flat = self.reshape(x, &[rows, inner]);
        let y = self.matmul(flat, w);
        let y = self.add_bias(y, b);
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.shape(w)[1];
        self.reshape(y, &out_shape)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let y = self.value(a) + self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(y, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let y = self.value(a) * self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(y, Op::Mul(a, b), rg)
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        assert_eq!(self.shape(x), c.shape(), "mul_const shapes");
        let y = self.value(x) * &c;
        let rg = self.any_grad(&[x]);
        self.push(y, Op::MulConst(x, c), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let y = self.value(x) * s;
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Scale(x, s), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(f64::tanh);
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn relu6(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| v.clamp(0.0, 6.0));
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Relu6(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x);
        if v.shape() == shape {
            return x;
        }
        let y = v
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {:?} -> {shape:?}: {e}", v.shape()));
        let rg = self.any_grad(&[x]);
        self.push(y, Op::Reshape(x), rg)
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let axis = last_axis(self.value(parts[0]));
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let y = concatenate(axis, &views).expect("concat_last leading dimensions");
        let rg = self.any_grad(parts);
        self.push(y, Op::ConcatLast(parts.to_vec()), rg)
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let axis = last_axis(v);
        let y = v.slice_axis(axis, Slice::from(start..start + len)).to_owned();
        let rg = self.any_grad(&[x]);
        self.push(y, Op::SliceLast { x, start, len }, rg)
    }

    /// `x: [B,T,D]` -> `[B,D]` at step `t`.
    pub fn select_step(&mut self, x: Var, t: usize) -> Var {
        let y = self.value(x).index_axis(Axis(1), t).to_owned();
        let rg = self.any_grad(&[x]);
        self.push(y, Op::SelectStep { x, t }, rg)
    }

    /// `x: [N,C]` -> `[N,h,w,C]`.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Var {
        let v = self.value(x);
        let (n, c) = (v.shape()[0], v.shape()[1]);
        let y = v
            .view()
            .into_shape_with_order(IxDyn(&[n, 1, 1, c]))
            .unwrap()
            .broadcast(IxDyn(&[n, h, w, c]))
            .unwrap()
            .to_owned();
        let rg = self.any_grad(&[x]);
        self.push(y, Op::BroadcastSpatial(x), rg)
    }

    /// `x: [N,H,W,C]` -> `[N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = v.mean_axis(Axis(1)).unwrap().mean_axis(Axis(1)).unwrap();
        let rg = self.any_grad(&[x]);
        self.push(y, Op::GlobalAvgPool(x), rg)
    }

    /// `x: [N,H,W,C] * gate: [N,H,W,1]`, gate broadcast over channels.
    pub fn gate_channels(&mut self, x: Var, gate: Var) -> Var {
        let (xv, gv) = (self.value(x), self.value(gate));
        assert_eq!(&xv.shape()[..3], &gv.shape()[..3], "gate spatial shape");
        assert_eq!(gv.shape()[3], 1, "gate must have one channel");
        let y = xv * gv;
        let rg = self.any_grad(&[x, gate]);
        self.push(y, Op::GateChannels(x, gate), rg)
    }

    /// Scaled dot-product attention over the time axis, heads split from the
    /// last axis: `q,k,v: [B,T,heads*dk]` -> `[B,T,heads*dk]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let qs = self.shape(q).to_vec();
        assert_eq!(qs.len(), 3);
        assert_eq!(qs, self.shape(k));
        assert_eq!(qs, self.shape(v));
        let (b, t, d) = (qs[0], qs[1], qs[2]);
        assert_eq!(d % heads, 0, "attention width divisible by heads");
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let qv = self.value(q).view().into_dimensionality::<Ix3>().unwrap();
        let kv = self.value(k).view().into_dimensionality::<Ix3>().unwrap();
        let vv = self.value(v).view().into_dimensionality::<Ix3>().unwrap();
        let mut probs = ArrayD::<f64>::zeros(IxDyn(&[b, heads, t, t]));
        let mut out = ArrayD::<f64>::zeros(IxDyn(&[b, t, d]));
        for bi in 0..b {
            for h in 0..heads {
                let cols = s![bi, .., h * dk..(h + 1) * dk];
                let (qh, kh, vh) = (qv.slice(cols), kv.slice(cols), vv.slice(cols));
                let scores = qh.dot(&kh.t()) * scale;
                let p = softmax_rows(&scores);
                let o = p.dot(&vh);
                probs.slice_mut(s![bi, h, .., ..]).assign(&p);
                out.slice_mut(s![bi, .., h * dk..(h + 1) * dk]).assign(&o);
            }
        }
        let rg = self.any_grad(&[q, k, v]);
        self.push(out, Op::Attention { q, k, v, heads, probs }, rg)
    }

    /// Batch normalisation over rows of `x: [N,D]` using the batch statistics.
    /// Returns the output plus the batch mean and biased variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Tensor, Tensor) {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 2, "batch_norm input must be [N,D]");
        let mean = xv.mean_axis(Axis(0)).unwrap();
        let centered = xv - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = &centered * &inv_std;
        let y = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.any_grad(&[x, gamma, beta]);
        let node = self.push(
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        (node, mean, var)
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &Tensor, var: &Tensor, eps: f64) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 2, "batch_norm input must be [N,D]");
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (xv - mean) * &inv_std;
        let y = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.any_grad(&[x, gamma, beta]);
        self.push(
            y,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            },
            rg,
        )
    }

    /// Mean categorical cross-entropy of `softmax(logits)` against `targets`
    /// (rows of class probabilities). Produces a 0-d tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Array2<f64>) -> Var {
        let lv = self
            .value(logits)
            .view()
            .into_dimensionality::<Ix2>()
            .expect("logits must be [B,K]");
        assert_eq!(lv.shape(), targets.shape(), "targets shape");
        let probs = softmax_rows(&lv.to_owned());
        let b = lv.nrows() as f64;
        let mut loss = 0.0;
        for (lrow, trow) in lv.rows().into_iter().zip(targets.rows()) {
            let max = lrow.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = lrow.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for (l, t) in lrow.iter().zip(trow.iter()) {
                if *t != 0.0 {
                    loss -= t * (l - lse);
                }
            }
        }
        let y = ArrayD::from_elem(IxDyn(&[]), loss / b);
        let rg = self.any_grad(&[logits]);
        self.push(
            y,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.into_dyn(),
                probs: probs.into_dyn(),
            },
            rg,
        )
    }

    pub(crate) fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let gm = g.view().into_dimensionality::<Ix2>().unwrap();
                if self.requires_grad(*a) {
                    let bv = self.value(*b).view().into_dimensionality::<Ix2>().unwrap();
                    self.accumulate(grads, *a, gm.dot(&bv.t()).into_dyn());
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).view().into_dimensionality::<Ix2>().unwrap();
                    self.accumulate(grads, *b, av.t().dot(&gm).into_dyn());
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*b) {
                    let db = as_matrix(g).sum_axis(Axis(0)).into_dyn();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::MulConst(x, c) => self.accumulate(grads, *x, g * c),
            Op::Scale(x, s) => self.accumulate(grads, *x, g * *s),
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                self.accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                    if v <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Relu6(x) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                    if v <= 0.0 || v >= 6.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::Reshape(x) => {
                let d = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(self.value(*x).raw_dim())
                    .unwrap();
                self.accumulate(grads, *x, d);
            }
            Op::ConcatLast(parts) => {
                let axis = last_axis(g);
                let mut start = 0;
                for p in parts {
                    let len = *self.shape(*p).last().unwrap();
                    if self.requires_grad(*p) {
                        let d = g.slice_axis(axis, Slice::from(start..start + len)).to_owned();
                        self.accumulate(grads, *p, d);
                    }
                    start += len;
                }
            }
            Op::SliceLast { x, start, len } => {
                let xv = self.value(*x);
                let mut d = Tensor::zeros(xv.raw_dim());
                d.slice_axis_mut(last_axis(xv), Slice::from(*start..*start + *len))
                    .assign(g);
                self.accumulate(grads, *x, d);
            }
            Op::SelectStep { x, t } => {
                let mut d = Tensor::zeros(self.value(*x).raw_dim());
                d.index_axis_mut(Axis(1), *t).assign(g);
                self.accumulate(grads, *x, d);
            }
            Op::BroadcastSpatial(x) => {
                let d = g.sum_axis(Axis(1)).sum_axis(Axis(1));
                self.accumulate(grads, *x, d);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
                let scale = 1.0 / (h * w) as f64;
                let d = (g * scale)
                    .into_shape_with_order(IxDyn(&[n, 1, 1, c]))
                    .unwrap()
                    .broadcast(IxDyn(&[n, h, w, c]))
                    .unwrap()
                    .to_owned();
                self.accumulate(grads, *x, d);
            }
            Op::GateChannels(x, gate) => {
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, g * self.value(*gate));
                }
                if self.requires_grad(*gate) {
                    let d = (g * self.value(*x)).sum_axis(Axis(3)).insert_axis(Axis(3));
                    self.accumulate(grads, *gate, d);
                }
            }
            Op::Conv2d { .. } | Op::Depthwise { .. } => self.backprop_conv(&node.op, g, grads),
            Op::Attention { q, k, v, heads, probs } => self.backprop_attention(*q, *k, *v, *heads, probs, g, grads),
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = xhat.shape()[0] as f64;
                let gsum = g.sum_axis(Axis(0));
                let gxhat = (g * xhat).sum_axis(Axis(0));
                self.accumulate(grads, *beta, gsum.clone());
                self.accumulate(grads, *gamma, gxhat.clone());
                if self.requires_grad(*x) {
                    // dx = gamma * inv_std / N * (N g - sum g - xhat * sum(g xhat))
                    let coef = self.value(*gamma) * inv_std / n;
                    let d = (g * n - &gsum - xhat * &gxhat) * &coef;
                    self.accumulate(grads, *x, d);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                self.accumulate(grads, *beta, g.sum_axis(Axis(0)));
                self.accumulate(grads, *gamma, (g * xhat).sum_axis(Axis(0)));
                if self.requires_grad(*x) {
                    let d = g * &(self.value(*gamma) * inv_std);
                    self.accumulate(grads, *x, d);
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let b = probs.shape()[0] as f64;
                let scale = g.iter().next().copied().unwrap_or(1.0) / b;
                self.accumulate(grads, *logits, (probs - targets) * scale);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let s = self.shape(q);
        let (b, d) = (s[0], s[2]);
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let qv = self.value(q).view().into_dimensionality::<Ix3>().unwrap();
        let kv = self.value(k).view().into_dimensionality::<Ix3>().unwrap();
        let vv = self.value(v).view().into_dimensionality::<Ix3>().unwrap();
        let gv = g.view().into_dimensionality::<Ix3>().unwrap();
        let mut dq = ArrayD::<f64>::zeros(s);
        let mut dkey = ArrayD::<f64>::zeros(s);
        let mut dv = ArrayD::<f64>::zeros(s);
        for bi in 0..b {
            for h in 0..heads {
                let cols = s![bi, .., h * dk..(h + 1) * dk];
                let p = probs.slice(s![bi, h, .., ..]);
                let go = gv.slice(cols);
                dv.slice_mut(cols).assign(&p.t().dot(&go));
                let dp = go.dot(&vv.slice(cols).t());
                // softmax vjp per row: dS = P * (dP - rowsum(dP * P))
                let mut ds = &dp * &p;
                let rows = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
                ds = &ds - &(&p * &rows);
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                dkey.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
            }
        }
        self.accumulate(grads, q, dq);
        self.accumulate(grads, k, dkey);
        self.accumulate(grads, v, dv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let l = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]];
        let p = softmax_rows(&l);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((p[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
        let shifted = softmax_rows(&(&l + 7.5));
        assert!(p.iter().zip(shifted.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn uniform_logits_give_ln3_loss() {
        let mut g = Graph::new();
        let logits = g.variable(Tensor::zeros(IxDyn(&[2, 3])));
        let targets = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let loss = g.softmax_cross_entropy(logits, targets);
        assert!((g.value(loss).sum() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn reshape_to_same_shape_is_a_no_op() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(IxDyn(&[2, 3])));
        assert_eq!(g.reshape(x, &[2, 3]), x);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(IxDyn(&[1, 2])));
        let w = g.variable(Tensor::ones(IxDyn(&[2, 1])));
        let y = g.matmul(x, w);
        let l = g.reshape(y, &[]);
        let grads = g.backward(l);
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().as_slice().unwrap(), &[1.0, 1.0]);
    }
}
