use crate::error::{Result, TensorError};
use crate::kernels::{self, Conv3dGeometry};
use crate::tensor::{broadcast_shape, inverse_permutation, strides, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Conv3dGeometry,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    AvgPool {
        input: Var,
        window: Vec<usize>,
    },
    Sigmoid(Var),
    Relu(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Transpose {
        input: Var,
        perm: Vec<usize>,
    },
    Reshape(Var),
    Product(Vec<Var>),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Recording of one forward computation.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and [`Tape::backward`] can walk the list in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when no gradient reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    // ---------------------------------------------------------------- ops

    /// 3-D cross-correlation of `input [B,Cin,D,V,H]` with
    /// `weight [Cout,Cin,kD,kV,kH]` and optional `bias [Cout]`.
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let geom = Conv3dGeometry::new(self.shape(input), self.shape(weight), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv3d bias",
                    lhs: self.shape(weight).to_vec(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let out = kernels::conv3d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(geom.output_shape(), out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            rg,
            Op::Conv3d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// 2-D cross-correlation of `input [B,Cin,P,Q]` with
    /// `weight [Cout,Cin,kP,kQ]`, lowered onto [`Tape::conv3d`] with a unit
    /// depth axis.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: [usize; 2],
        padding: [usize; 2],
    ) -> Result<Var> {
        let (is, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if is.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d input",
                expected: 4,
                shape: is,
            });
        }
        if ws.len() != 4 {
            return Err(TensorError::Rank {
                op: "conv2d weight",
                expected: 4,
                shape: ws,
            });
        }
        if is[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d (input channels vs weight channels)",
                lhs: is,
                rhs: ws,
            });
        }
        let x = self.reshape(input, &[is[0], is[1], 1, is[2], is[3]])?;
        let w = self.reshape(weight, &[ws[0], ws[1], 1, ws[2], ws[3]])?;
        let y = self.conv3d(
            x,
            w,
            bias,
            [1, stride[0], stride[1]],
            [0, padding[0], padding[1]],
        )?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[1], ys[3], ys[4]])
    }

    /// Mean along `axis`, keeping it with extent 1.
    pub fn adaptive_avg_pool(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "adaptive_avg_pool",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let scale = n as f64;
        out.iter_mut().for_each(|v| *v /= scale);
        let mut oshape = shape;
        oshape[axis] = 1;
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::new(oshape, out)?, rg, Op::MeanAxis { input, axis }))
    }

    /// Non-overlapping average pooling over the trailing `window.len()` axes.
    /// Extents not divisible by the window are floored; the remainder is
    /// dropped.
    pub fn avg_pool(&mut self, input: Var, window: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let r = shape.len();
        if window.len() > r || window.contains(&0) {
            return Err(TensorError::Invalid {
                op: "avg_pool",
                msg: format!("window {window:?} does not fit shape {shape:?}"),
            });
        }
        let lead = r - window.len();
        let mut oshape = shape.clone();
        for (i, &w) in window.iter().enumerate() {
            oshape[lead + i] = shape[lead + i] / w;
            if oshape[lead + i] == 0 {
                return Err(TensorError::Invalid {
                    op: "avg_pool",
                    msg: format!("window {window:?} larger than trailing extents of {shape:?}"),
                });
            }
        }
        let x = self.value(input).data();
        let mut out = vec![0.0; oshape.iter().product()];
        pool_map(&shape, &oshape, window, |src, dst| out[dst] += x[src]);
        let scale = window.iter().product::<usize>() as f64;
        out.iter_mut().for_each(|v| *v /= scale);
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            rg,
            Op::AvgPool {
                input,
                window: window.to_vec(),
            },
        ))
    }

    /// Logistic sigmoid, clamped to the open interval (0, 1) so saturated
    /// inputs never produce exact 0 or 1.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Sigmoid(input))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Relu(input))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => {
                return Err(TensorError::Invalid {
                    op: "concat",
                    msg: "no inputs".into(),
                })
            }
        };
        if axis >= first.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut oshape = first.clone();
        oshape[axis] = total;
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut out = Vec::with_capacity(oshape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * n..(o + 1) * n]);
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Splits `input` along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, input: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "split",
                axis,
                rank: shape.len(),
            });
        }
        if sizes.iter().sum::<usize>() != shape[axis] || sizes.contains(&0) {
            return Err(TensorError::Invalid {
                op: "split",
                msg: format!("sizes {sizes:?} do not partition axis {axis} of {shape:?}"),
            });
        }
        let mut start = 0;
        let mut parts = Vec::with_capacity(sizes.len());
        for &len in sizes {
            parts.push(self.slice(input, axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            rg,
            Op::Slice { input, axis, start },
        ))
    }

    /// Materialized axis permutation.
    pub fn transpose(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(input).permute(perm)?;
        let rg = self.requires_grad(input);
        Ok(self.push(
            value,
            rg,
            Op::Transpose {
                input,
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::Reshape(input)))
    }

    /// Broadcast elementwise product of two same-rank tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.product(&[a, b])
    }

    /// Broadcast elementwise product of any number of same-rank tensors,
    /// recorded as a single node. A single input is returned unchanged.
    pub fn product(&mut self, inputs: &[Var]) -> Result<Var> {
        let (&first, rest) = inputs.split_first().ok_or(TensorError::Invalid {
            op: "product",
            msg: "no inputs".into(),
        })?;
        if rest.is_empty() {
            return Ok(first);
        }
        let mut oshape = self.shape(first).to_vec();
        for &v in rest {
            oshape =
                broadcast_shape(&oshape, self.shape(v)).ok_or_else(|| TensorError::ShapeMismatch {
                    op: "mul_broadcast",
                    lhs: oshape.clone(),
                    rhs: self.shape(v).to_vec(),
                })?;
        }
        let operand_strides: Vec<Vec<usize>> = inputs
            .iter()
            .map(|&v| broadcast_strides(self.shape(v), &oshape))
            .collect();
        let datas: Vec<&[f64]> = inputs.iter().map(|&v| self.value(v).data()).collect();
        let mut out = Vec::with_capacity(oshape.iter().product());
        for_each_broadcast(&oshape, &operand_strides, |offs| {
            let mut p = datas[0][offs[0]];
            for k in 1..datas.len() {
                p *= datas[k][offs[k]];
            }
            out.push(p);
        });
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(oshape, out)?,
            rg,
            Op::Product(inputs.to_vec()),
        ))
    }

    /// `input [B,N] · weightᵀ [N,M] + bias [M]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (is, ws) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if is.len() != 2 || ws.len() != 2 || is[1] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear (input [B,N] vs weight [M,N])",
                lhs: is,
                rhs: ws,
            });
        }
        let (b, n, m) = (is[0], is[1], ws[0]);
        let mut out = vec![0.0; b * m];
        if let Some(bias) = bias {
            let bs = self.shape(bias);
            if bs != [m] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear bias",
                    lhs: ws,
                    rhs: bs.to_vec(),
                });
            }
            let bv = self.value(bias).data();
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        kernels::matmul_a_bt_acc(
            b,
            m,
            n,
            self.value(input).data(),
            self.value(weight).data(),
            &mut out,
        );
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            Tensor::new(vec![b, m], out)?,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, computed with
    /// max-subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::Invalid {
                op: "softmax_cross_entropy",
                msg: format!("logits {shape:?} vs {} labels", labels.len()),
            });
        }
        let (b, c) = (shape[0], shape[1]);
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Label { label, classes: c });
        }
        let x = self.value(logits).data();
        let probs = self.value(logits).softmax_rows()?.into_data();
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            loss += z.ln() + max - row[label];
        }
        loss /= b as f64;
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Sum(input))
    }

    // ----------------------------------------------------------- backward

    /// Reverse-mode sweep from a scalar `loss`. Fails if called twice on the
    /// same tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                self.accumulate(v, g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    fn input_grads(&self, i: usize, grad: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let g = grad.data();
        let mk = |v: Var, data: Vec<f64>| {
            (
                v,
                Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape"),
            )
        };
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv3d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = [
                    self.requires_grad(*input),
                    self.requires_grad(*weight),
                    bias.is_some_and(|b| self.requires_grad(b)),
                ];
                let grads = kernels::conv3d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    want,
                );
                let mut out = Vec::new();
                if let Some(gi) = grads.input {
                    out.push(mk(*input, gi));
                }
                if let Some(gw) = grads.weight {
                    out.push(mk(*weight, gw));
                }
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    out.push(mk(*b, gb));
                }
                out
            }
            Op::MeanAxis { input, axis } => {
                let shape = self.shape(*input);
                let (outer, n, inner) = split_at_axis(shape, *axis);
                let scale = 1.0 / n as f64;
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let dst = &mut gi[(o * n + k) * inner..(o * n + k + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
                vec![mk(*input, gi)]
            }
            Op::AvgPool { input, window } => {
                let shape = self.shape(*input);
                let scale = 1.0 / window.iter().product::<usize>() as f64;
                let mut gi = vec![0.0; shape.iter().product()];
                pool_map(shape, node.value.shape(), window, |src, dst| {
                    gi[src] = g[dst] * scale
                });
                vec![mk(*input, gi)]
            }
            Op::Sigmoid(input) => {
                let gi = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                vec![mk(*input, gi)]
            }
            Op::Relu(input) => {
                let gi = self
                    .value(*input)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![mk(*input, gi)]
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_at_axis(node.value.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|&v| Vec::with_capacity(self.value(v).len()))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, &v) in inputs.iter().enumerate() {
                        let n = self.shape(v)[*axis] * inner;
                        parts[k].extend_from_slice(&g[pos..pos + n]);
                        pos += n;
                    }
                }
                inputs
                    .iter()
                    .zip(parts)
                    .filter(|(v, _)| self.requires_grad(**v))
                    .map(|(&v, d)| mk(v, d))
                    .collect()
            }
            Op::Slice { input, axis, start } => {
                let shape = self.shape(*input);
                let (outer, n, inner) = split_at_axis(shape, *axis);
                let len = node.value.shape()[*axis];
                let mut gi = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    gi[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![mk(*input, gi)]
            }
            Op::Transpose { input, perm } => {
                let gi = grad
                    .permute(&inverse_permutation(perm))
                    .expect("valid inverse permutation");
                vec![(*input, gi)]
            }
            Op::Reshape(input) => vec![mk(*input, g.to_vec())],
            Op::Product(inputs) => {
                let oshape = node.value.shape();
                let operand_strides: Vec<Vec<usize>> = inputs
                    .iter()
                    .map(|&v| broadcast_strides(self.shape(v), oshape))
                    .collect();
                let datas: Vec<&[f64]> = inputs.iter().map(|&v| self.value(v).data()).collect();
                let mut grads: Vec<Option<Vec<f64>>> = inputs
                    .iter()
                    .map(|&v| self.requires_grad(v).then(|| vec![0.0; self.value(v).len()]))
                    .collect();
                let mut flat = 0;
                for_each_broadcast(oshape, &operand_strides, |offs| {
                    let gv = g[flat];
                    flat += 1;
                    for (k, gk) in grads.iter_mut().enumerate() {
                        if let Some(gk) = gk {
                            let mut p = gv;
                            for (j, d) in datas.iter().enumerate() {
                                if j != k {
                                    p *= d[offs[j]];
                                }
                            }
                            gk[offs[k]] += p;
                        }
                    }
                });
                inputs
                    .iter()
                    .zip(grads)
                    .filter_map(|(&v, gk)| gk.map(|d| mk(v, d)))
                    .collect()
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (b, n) = (self.shape(*input)[0], self.shape(*input)[1]);
                let m = self.shape(*weight)[0];
                let mut out = Vec::new();
                if self.requires_grad(*input) {
                    let mut gi = vec![0.0; b * n];
                    kernels::matmul_acc(b, m, n, g, self.value(*weight).data(), &mut gi);
                    out.push(mk(*input, gi));
                }
                if self.requires_grad(*weight) {
                    let mut gw = vec![0.0; m * n];
                    kernels::matmul_at_b_acc(b, m, n, g, self.value(*input).data(), &mut gw);
                    out.push(mk(*weight, gw));
                }
                if let Some(bias) = bias.filter(|&bv| self.requires_grad(bv)) {
                    let mut gb = vec![0.0; m];
                    for row in g.chunks(m) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push(mk(bias, gb));
                }
                out
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                let mut gi = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    gi[i * c + label] -= 1.0;
                }
                gi.iter_mut().for_each(|v| *v *= scale);
                vec![mk(*logits, gi)]
            }
            Op::Sum(input) => {
                vec![(*input, Tensor::full(self.shape(*input), g[0]))]
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // largest double below 1.0
    const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// (product of extents before `axis`, extent at `axis`, product after).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Source strides of `shape` viewed at broadcast shape `out` (0 on
/// broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&n, &o), st)| if n == o { st } else { 0 })
        .collect()
}

/// Walks `shape` in row-major order, passing each operand's flat offset.
fn for_each_broadcast(shape: &[usize], operand_strides: &[Vec<usize>], mut f: impl FnMut(&[usize])) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut offs = vec![0usize; operand_strides.len()];
    for _ in 0..total {
        f(&offs);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            for (o, st) in offs.iter_mut().zip(operand_strides) {
                *o += st[ax];
            }
            if idx[ax] < shape[ax] {
                break;
            }
            for (o, st) in offs.iter_mut().zip(operand_strides) {
                *o -= st[ax] * shape[ax];
            }
            idx[ax] = 0;
        }
    }
}

/// Calls `f(input_offset, output_offset)` for every input element that falls
/// inside a pooling window.
fn pool_map(
    in_shape: &[usize],
    out_shape: &[usize],
    window: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let lead = in_shape.len() - window.len();
    let outer: usize = in_shape[..lead].iter().product();
    let in_tail = &in_shape[lead..];
    let out_tail = &out_shape[lead..];
    let in_block: usize = in_tail.iter().product();
    let out_block: usize = out_tail.iter().product();
    let in_st = strides(in_tail);
    let out_st = strides(out_tail);
    let w = window.len();
    let mut idx = vec![0usize; w];
    for o in 0..outer {
        idx.iter_mut().for_each(|i| *i = 0);
        for flat in 0..in_block {
            if flat > 0 {
                for ax in (0..w).rev() {
                    idx[ax] += 1;
                    if idx[ax] < in_tail[ax] {
                        break;
                    }
                    idx[ax] = 0;
                }
            }
            let mut dst = 0;
            let mut inside = true;
            for ax in 0..w {
                let q = idx[ax] / window[ax];
                if q >= out_tail[ax] {
                    inside = false;
                    break;
                }
                dst += q * out_st[ax];
            }
            if inside {
                debug_assert_eq!(flat, (0..w).map(|ax| idx[ax] * in_st[ax]).sum::<usize>());
                f(o * in_block + flat, o * out_block + dst);
            }
        }
    }
}
