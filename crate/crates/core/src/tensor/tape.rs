use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product for a custom node: maps the upstream gradient to
/// one gradient buffer per input (in input order).
pub type CustomBackward = Box<dyn Fn(&[f32]) -> Vec<Vec<f32>> + Send>;

enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, dims: ConvDims },
    Relu { input: Var },
    MaxPool { input: Var, argmax: Vec<u32> },
    Linear { x: Var, weight: Var, bias: Var },
    SoftmaxCe { logits: Var, label: usize, probs: Vec<f64> },
    Sum { input: Var },
    Reshape { input: Var },
    Concat { inputs: Vec<Var> },
    ScaleChannels { input: Var, weights: Vec<f32> },
    Custom { inputs: Vec<Var>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

/// Records differentiable operations in execution order.
///
/// Node order is a topological order, so the backward pass is a single
/// reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Adds a leaf. Gradients are tracked if the tensor's `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor.detached(), Op::Leaf, requires_grad)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.detached(), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Accumulated gradient of `var`, if any backward pass reached it.
    pub fn grad(&self, var: Var) -> Option<&[f32]> {
        self.nodes[var.0].grad.as_deref()
    }

    /// Gradient of `var`, zeros if no backward pass reached it.
    pub fn grad_or_zeros(&self, var: Var) -> Vec<f32> {
        self.grad(var)
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(var).numel()])
    }

    /// The node's value with its accumulated gradient attached.
    pub fn tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        let mut t = node.value.clone();
        t.set_requires_grad(node.requires_grad);
        t.set_grad(node.grad.clone());
        t
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 3x3 cross-correlation with zero padding 1 (output keeps the spatial size).
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (is, ks, bs) = (
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
        );
        if is.len() != 3 {
            return Err(Error::shape("conv2d", format!("input must be [c,h,w], got {is:?}")));
        }
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != is[0] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {ks:?} incompatible with input {is:?}; expected [c_out,{},3,3]", is[0]),
            ));
        }
        if bs != [ks[0]] {
            return Err(Error::shape("conv2d", format!("bias {bs:?} must be [{}]", ks[0])));
        }
        let dims = ConvDims {
            c_in: is[0],
            c_out: ks[0],
            h: is[1],
            w: is[2],
        };
        let out = kernels::conv3x3_forward(
            &dims,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::from_parts(vec![dims.c_out, dims.h, dims.w], out);
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, dims }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    /// 2x2 max pooling with stride 2. Ties route the gradient to the first
    /// maximum in row-major order.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 3 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
            return Err(Error::shape(
                "maxpool2d",
                format!("input must be [c,h,w] with even h and w, got {s:?}"),
            ));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (out, argmax) = kernels::maxpool2x2(c, h, w, x.data());
        let value = Tensor::from_parts(vec![c, h / 2, w / 2], out);
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// `weight · x + bias` for a flat `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::shape(
                "linear",
                format!("x {xs:?}, weight {ws:?}, bias {bs:?}; expected [m], [out,m], [out]"),
            ));
        }
        let (out_dim, m) = (ws[0], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let bv = self.value(bias).data();
        let out = (0..out_dim)
            .map(|o| {
                let row = &wv[o * m..(o + 1) * m];
                let acc: f64 = row.iter().zip(xv).map(|(&a, &b)| a as f64 * b as f64).sum();
                (acc + bv[o] as f64) as f32
            })
            .collect();
        let value = Tensor::from_parts(vec![out_dim], out);
        let rg = self.any_grad(&[x, weight, bias]);
        Ok(self.push(value, Op::Linear { x, weight, bias }, rg))
    }

    /// `-log softmax(logits)[label]`, evaluated with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.value(logits);
        if l.rank() != 1 || l.numel() < 2 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits must be [classes >= 2], got {:?}", l.shape()),
            ));
        }
        if label >= l.numel() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                l.numel()
            )));
        }
        let probs = softmax(l.data());
        let max = l.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max + l.data().iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        let loss = lse - l.data()[label] as f64;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::SoftmaxCe { logits, label, probs },
            rg,
        ))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(total as f32), Op::Sum { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).detached().reshape(shape)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    pub fn flatten(&mut self, input: Var) -> Var {
        let n = self.value(input).numel();
        self.reshape(input, &[n]).expect("flatten preserves numel")
    }

    /// Concatenates the flattened inputs into one vector, in argument order.
    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        let mut data = Vec::with_capacity(inputs.iter().map(|&v| self.value(v).numel()).sum());
        for &v in inputs {
            data.extend_from_slice(self.value(v).data());
        }
        let rg = self.any_grad(inputs);
        self.push(
            Tensor::vector(data),
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    /// Multiplies slice `c` along the leading axis by `weights[c]`. The
    /// weights are constants: no gradient flows into them.
    pub fn scale_channels(&mut self, input: Var, weights: &[f32]) -> Result<Var> {
        let x = self.value(input);
        if x.rank() == 0 || x.shape()[0] != weights.len() {
            return Err(Error::shape(
                "scale_channels",
                format!("{} weights for input {:?}", weights.len(), x.shape()),
            ));
        }
        let per = x.numel() / weights.len();
        let data = x
            .data()
            .chunks(per.max(1))
            .zip(weights)
            .flat_map(|(chunk, &w)| chunk.iter().map(move |&v| v * w))
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.any_grad(&[input]);
        Ok(self.push(
            value,
            Op::ScaleChannels {
                input,
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Appends a node computed outside the tape, with a caller-supplied
    /// vector-Jacobian product.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            value.detached(),
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            rg,
        )
    }

    /// Backpropagates from a scalar root. Gradients are added to whatever
    /// earlier passes accumulated.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got shape {:?}", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            for (var, g) in self.vjp(idx, &upstream) {
                add_into(&mut grads[var.0], g);
            }
            match &mut self.nodes[idx].grad {
                Some(acc) => acc.iter_mut().zip(&upstream).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(upstream),
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `idx` to those inputs that track gradients.
    fn vjp(&self, idx: usize, g: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, dims } => {
                if wants(*input) {
                    let gi = kernels::conv3x3_grad_input(dims, self.value(*kernel).data(), g);
                    out.push((*input, gi));
                }
                if wants(*kernel) || wants(*bias) {
                    let (gk, gb) = kernels::conv3x3_grad_params(dims, self.value(*input).data(), g);
                    if wants(*kernel) {
                        out.push((*kernel, gk));
                    }
                    if wants(*bias) {
                        out.push((*bias, gb));
                    }
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let gi = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                out.push((*input, gi));
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = vec![0.0; self.value(*input).numel()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    gi[a as usize] += gv;
                }
                out.push((*input, gi));
            }
            Op::Linear { x, weight, bias } => {
                let xv = self.value(*x).data();
                let wv = self.value(*weight).data();
                let m = xv.len();
                if wants(*x) {
                    let mut gx = vec![0.0f64; m];
                    for (o, &gv) in g.iter().enumerate() {
                        let row = &wv[o * m..(o + 1) * m];
                        gx.iter_mut().zip(row).for_each(|(a, &w)| *a += gv as f64 * w as f64);
                    }
                    out.push((*x, gx.into_iter().map(|v| v as f32).collect()));
                }
                if wants(*weight) {
                    let gw = g.iter().flat_map(|&gv| xv.iter().map(move |&xi| gv * xi)).collect();
                    out.push((*weight, gw));
                }
                if wants(*bias) {
                    out.push((*bias, g.to_vec()));
                }
            }
            Op::SoftmaxCe { logits, label, probs } => {
                let up = g[0] as f64;
                let gi = probs
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| ((p - if c == *label { 1.0 } else { 0.0 }) * up) as f32)
                    .collect();
                out.push((*logits, gi));
            }
            Op::Sum { input } => {
                out.push((*input, vec![g[0]; self.value(*input).numel()]));
            }
            Op::Reshape { input } => out.push((*input, g.to_vec())),
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.value(v).numel();
                    if wants(v) {
                        out.push((v, g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::ScaleChannels { input, weights } => {
                let per = g.len() / weights.len();
                let gi = g
                    .chunks(per.max(1))
                    .zip(weights)
                    .flat_map(|(chunk, &w)| chunk.iter().map(move |&v| v * w))
                    .collect();
                out.push((*input, gi));
            }
            Op::Custom { inputs, backward } => {
                for (v, gi) in inputs.iter().zip(backward(g)) {
                    if wants(*v) {
                        out.push((*v, gi));
                    }
                }
            }
        }
        out
    }
}

fn add_into(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Numerically stable softmax in `f64`.
pub(crate) fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
