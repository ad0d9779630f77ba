use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Rng;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv2d(Var, Var),
    ConvTranspose2d(Var, Var),
    BatchNorm { x: Var, eps: T },
    BatchNormEval { x: Var, mean: Vec<T>, var: Vec<T>, eps: T },
    FeatureMean(Var),
    FeatureStd { x: Var, eps: T },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    LogSoftmax(Var),
    Nll { logp: Var, targets: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Noise { x: Var, noise: Vec<T> },
    Reshape(Var),
    Rows { x: Var, start: usize, len: usize },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Conv2d(..) => "conv2d",
            Op::ConvTranspose2d(..) => "conv2d_transpose",
            Op::BatchNorm { .. } => "batchnorm",
            Op::BatchNormEval { .. } => "batchnorm_eval",
            Op::FeatureMean(..) => "feature_mean",
            Op::FeatureStd { .. } => "feature_std",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::SubRow(..) => "sub_row",
            Op::MulRow(..) => "mul_row",
            Op::DivRow(..) => "div_row",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Nll { .. } => "nll",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Noise { .. } => "gaussian_noise",
            Op::Reshape(..) => "reshape",
            Op::Rows { .. } => "rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Conv2d(a, b)
            | Op::ConvTranspose2d(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::SubRow(a, b)
            | Op::MulRow(a, b)
            | Op::DivRow(a, b) => vec![*a, *b],
            Op::BatchNorm { x, .. }
            | Op::BatchNormEval { x, .. }
            | Op::FeatureStd { x, .. }
            | Op::Noise { x, .. }
            | Op::Rows { x, .. }
            | Op::Nll { logp: x, .. } => vec![*x],
            Op::FeatureMean(x)
            | Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Exp(x)
            | Op::Square(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x) => vec![*x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Tape of executed operations for one forward pass.
///
/// Nodes are stored in execution order, which is a valid topological order;
/// [`Graph::backward`] walks them in reverse exactly once.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

fn dims_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf whose gradient is tracked.
    pub fn param(&mut self, value: &Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that is treated as a constant.
    pub fn constant(&mut self, value: &Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: &Tensor<T>, requires_grad: bool) -> Var {
        let mut value = Tensor::from_parts(value.shape().to_vec(), value.data().to_vec());
        value.requires_grad = requires_grad;
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Accumulated gradient of a node after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let value = self.eval(&op)?;
        let mut value = value;
        value.requires_grad = op.inputs().iter().any(|&i| self.requires_grad(i));
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dims_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn row_operand(&self, op: &str, x: Var, r: Var) -> Result<usize> {
        let f = self.value(x).features();
        if self.shape(r) != [f] {
            return Err(dims_err(op, self.shape(x), self.shape(r)));
        }
        Ok(f)
    }

    fn conv_geom(&self, input: &[usize], kernel: &[usize]) -> Result<ConvGeom> {
        if input.len() != 4 || kernel.len() != 4 || input[3] != kernel[2] {
            return Err(dims_err("conv2d", input, kernel));
        }
        if kernel[0] > input[1] || kernel[1] > input[2] {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {kernel:?} larger than input {input:?}"
            )));
        }
        Ok(ConvGeom {
            batch: input[0],
            h: input[1],
            w: input[2],
            c_in: input[3],
            kh: kernel[0],
            kw: kernel[1],
            c_out: kernel[3],
        })
    }

    fn transpose_geom(&self, x: &[usize], kernel: &[usize]) -> Result<ConvGeom> {
        if x.len() != 4 || kernel.len() != 4 || x[3] != kernel[3] {
            return Err(dims_err("conv2d_transpose", x, kernel));
        }
        Ok(ConvGeom {
            batch: x[0],
            h: x[1] + kernel[0] - 1,
            w: x[2] + kernel[1] - 1,
            c_in: kernel[2],
            kh: kernel[0],
            kw: kernel[1],
            c_out: kernel[3],
        })
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(x);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn zip_row(&self, x: Var, r: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (tx, tr) = (self.value(x), self.data(r));
        let fcount = tr.len();
        let mut data = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(fcount) {
            data.extend(row.iter().zip(tr).map(|(&a, &b)| f(a, b)));
        }
        Tensor::from_parts(tx.shape().to_vec(), data)
    }

    /// Forward evaluation of one op from the current values of its inputs.
    fn eval(&self, op: &Op<T>) -> Result<Tensor<T>> {
        let out = match op {
            Op::Leaf => return Err(Error::Graph("leaf nodes are not evaluated".into())),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(dims_err("matmul", sa, sb));
                }
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                Tensor::from_parts(vec![m, n], kernels::matmul(self.data(*a), self.data(*b), m, k, n))
            }
            Op::Conv2d(x, k) => {
                let g = self.conv_geom(self.shape(*x), self.shape(*k))?;
                Tensor::from_parts(
                    vec![g.batch, g.out_h(), g.out_w(), g.c_out],
                    kernels::conv2d(self.data(*x), self.data(*k), g),
                )
            }
            Op::ConvTranspose2d(x, k) => {
                let g = self.transpose_geom(self.shape(*x), self.shape(*k))?;
                Tensor::from_parts(
                    vec![g.batch, g.h, g.w, g.c_in],
                    kernels::conv2d_transpose(self.data(*x), self.data(*k), g),
                )
            }
            Op::BatchNorm { x, eps } => {
                let t = self.value(*x);
                if t.batch() < 2 {
                    return Err(Error::Precondition(
                        "batchnorm in train mode needs a batch of at least 2".into(),
                    ));
                }
                let (mean, var) = kernels::feature_moments(t.data(), t.features());
                Tensor::from_parts(t.shape().to_vec(), kernels::normalize(t.data(), &mean, &var, *eps))
            }
            Op::BatchNormEval { x, mean, var, eps } => {
                let t = self.value(*x);
                if t.features() != mean.len() {
                    return Err(Error::Dimension(format!(
                        "batchnorm_eval: {} running statistics for input {:?}",
                        mean.len(),
                        t.shape()
                    )));
                }
                Tensor::from_parts(t.shape().to_vec(), kernels::normalize(t.data(), mean, var, *eps))
            }
            Op::FeatureMean(x) => {
                let t = self.value(*x);
                let (mean, _) = kernels::feature_moments(t.data(), t.features());
                Tensor::from_parts(vec![t.features()], mean)
            }
            Op::FeatureStd { x, eps } => {
                let t = self.value(*x);
                let (_, var) = kernels::feature_moments(t.data(), t.features());
                Tensor::from_parts(vec![t.features()], var.into_iter().map(|v| (v + *eps).sqrt()).collect())
            }
            Op::Add(a, b) => {
                self.same_shape("add", *a, *b)?;
                self.zip(*a, *b, |x, y| x + y)
            }
            Op::Sub(a, b) => {
                self.same_shape("sub", *a, *b)?;
                self.zip(*a, *b, |x, y| x - y)
            }
            Op::Mul(a, b) => {
                self.same_shape("mul", *a, *b)?;
                self.zip(*a, *b, |x, y| x * y)
            }
            Op::AddRow(x, r) => {
                self.row_operand("add_row", *x, *r)?;
                self.zip_row(*x, *r, |a, b| a + b)
            }
            Op::SubRow(x, r) => {
                self.row_operand("sub_row", *x, *r)?;
                self.zip_row(*x, *r, |a, b| a - b)
            }
            Op::MulRow(x, r) => {
                self.row_operand("mul_row", *x, *r)?;
                self.zip_row(*x, *r, |a, b| a * b)
            }
            Op::DivRow(x, r) => {
                self.row_operand("div_row", *x, *r)?;
                self.zip_row(*x, *r, |a, b| a / b)
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.map(*x, |v| v * s)
            }
            Op::Relu(x) => self.map(*x, |v| if v > T::zero() { v } else { T::zero() }),
            Op::Sigmoid(x) => self.map(*x, sigmoid),
            Op::Exp(x) => self.map(*x, |v| v.exp()),
            Op::Square(x) => self.map(*x, |v| v * v),
            Op::LogSoftmax(x) => {
                let t = self.value(*x);
                let f = t.features();
                let mut data = Vec::with_capacity(t.numel());
                for row in t.data().chunks(f) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                    data.extend(row.iter().map(|&v| (v - max) - lse));
                }
                Tensor::from_parts(t.shape().to_vec(), data)
            }
            Op::Nll { logp, targets } => {
                let t = self.value(*logp);
                if t.shape().len() != 2 || targets.len() != t.batch() {
                    return Err(Error::Dimension(format!(
                        "nll: {} targets for log-probabilities {:?}",
                        targets.len(),
                        t.shape()
                    )));
                }
                if targets.is_empty() {
                    return Err(Error::Precondition("nll over an empty batch".into()));
                }
                let k = t.features();
                if let Some(&bad) = targets.iter().find(|&&c| c >= k) {
                    return Err(Error::Precondition(format!(
                        "target class {bad} out of range for {k} classes"
                    )));
                }
                let total: T = targets.iter().enumerate().map(|(i, &c)| t.data()[i * k + c]).sum();
                Tensor::scalar(-total / T::lit(targets.len() as f64))
            }
            Op::Sum(x) => Tensor::scalar(self.data(*x).iter().copied().sum()),
            Op::Mean(x) => {
                let d = self.data(*x);
                Tensor::scalar(d.iter().copied().sum::<T>() / T::lit(d.len() as f64))
            }
            Op::Noise { x, noise } => {
                let t = self.value(*x);
                if noise.len() != t.numel() {
                    return Err(Error::Dimension("noise length".into()));
                }
                let data = t.data().iter().zip(noise).map(|(&a, &n)| a + n).collect();
                Tensor::from_parts(t.shape().to_vec(), data)
            }
            Op::Reshape(x) => unreachable!("reshape is recorded directly: {x:?}"),
            Op::Rows { x, start, len } => {
                let t = self.value(*x);
                if *len == 0 || start + len > t.batch() {
                    return Err(Error::Dimension(format!(
                        "rows {start}..{} out of batch {}",
                        start + len,
                        t.batch()
                    )));
                }
                let row = t.numel() / t.batch();
                let mut shape = t.shape().to_vec();
                shape[0] = *len;
                Tensor::from_parts(shape, t.data()[start * row..(start + len) * row].to_vec())
            }
        };
        Ok(out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// Valid, stride-1 cross-correlation over NHWC input.
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        self.push(Op::Conv2d(input, kernel))
    }

    /// Full transposed convolution; `kernel` is laid out as for the forward
    /// convolution it mirrors, `[kh, kw, c_out_of_this_op, c_in_of_this_op]`.
    pub fn conv2d_transpose(&mut self, x: Var, kernel: Var) -> Result<Var> {
        self.push(Op::ConvTranspose2d(x, kernel))
    }

    /// Train-mode batch normalization over every axis but the last.
    pub fn batchnorm(&mut self, x: Var, eps: T) -> Result<Var> {
        self.push(Op::BatchNorm { x, eps })
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batchnorm_eval(&mut self, x: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        self.push(Op::BatchNormEval {
            x,
            mean: mean.to_vec(),
            var: var.to_vec(),
            eps,
        })
    }

    pub fn feature_mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::FeatureMean(x))
    }

    /// `sqrt(var + eps)` per trailing-axis feature, biased variance.
    pub fn feature_std(&mut self, x: Var, eps: T) -> Result<Var> {
        self.push(Op::FeatureStd { x, eps })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// `x + r` with `r` broadcast along the trailing axis.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.push(Op::AddRow(x, r))
    }

    pub fn sub_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.push(Op::SubRow(x, r))
    }

    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.push(Op::MulRow(x, r))
    }

    pub fn div_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.push(Op::DivRow(x, r))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        self.push(Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Square(x))
    }

    /// Row-wise log-softmax over the trailing axis (max-shifted).
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.push(Op::LogSoftmax(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let l = self.log_softmax(x)?;
        self.exp(l)
    }

    /// Mean negative log-likelihood of `targets` under row log-probabilities.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        self.push(Op::Nll {
            logp,
            targets: targets.to_vec(),
        })
    }

    /// Mean cross-entropy of raw logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.log_softmax(logits)?;
        self.nll(l, targets)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    /// Adds i.i.d. `N(0, std²)` noise. The noise is a constant for
    /// differentiation and `std == 0` returns `x` unchanged.
    pub fn gaussian_noise(&mut self, x: Var, std: f64, rng: &mut Rng) -> Result<Var> {
        if std.is_nan() || std < 0.0 || std.is_infinite() {
            return Err(Error::Config(format!("noise std must be >= 0, got {std}")));
        }
        if std == 0.0 {
            return Ok(x);
        }
        let noise = (0..self.value(x).numel()).map(|_| T::lit(std * rng.normal())).collect();
        self.push(Op::Noise { x, noise })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let mut value = value;
        value.requires_grad = self.requires_grad(x);
        self.nodes.push(Node {
            value,
            op: Op::Reshape(x),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Rows `start..start+len` of the leading (batch) axis.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Rows { x, start, len })
    }

    /// Clears every accumulated gradient so [`Graph::backward`] may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this graph; call zero_grad first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.value(loss).check_finite("loss")?;
        self.backward_done = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].value.grad.take() else {
                continue;
            };
            let contribs = self.input_grads(i, &g);
            self.nodes[i].value.grad = Some(g);
            for (input, contrib) in contribs {
                if !self.requires_grad(input) {
                    continue;
                }
                match &mut self.nodes[input.0].value.grad {
                    Some(slot) => {
                        for (s, c) in slot.iter_mut().zip(contrib) {
                            *s += c;
                        }
                    }
                    empty => *empty = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let rg = |v: Var| self.requires_grad(v);
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = vec![];
                if rg(*a) {
                    out.push((*a, kernels::matmul_nt(g, self.data(*b), m, k, n)));
                }
                if rg(*b) {
                    out.push((*b, kernels::matmul_tn(self.data(*a), g, m, k, n)));
                }
                out
            }
            Op::Conv2d(x, k) => {
                let geom = self.conv_geom(self.shape(*x), self.shape(*k)).unwrap();
                let mut out = vec![];
                if rg(*x) {
                    out.push((*x, kernels::conv2d_transpose(g, self.data(*k), geom)));
                }
                if rg(*k) {
                    out.push((*k, kernels::conv2d_kernel_grad(self.data(*x), g, geom)));
                }
                out
            }
            Op::ConvTranspose2d(x, k) => {
                let geom = self.transpose_geom(self.shape(*x), self.shape(*k)).unwrap();
                let mut out = vec![];
                if rg(*x) {
                    out.push((*x, kernels::conv2d(g, self.data(*k), geom)));
                }
                if rg(*k) {
                    out.push((*k, kernels::conv2d_kernel_grad(g, self.data(*x), geom)));
                }
                out
            }
            Op::BatchNorm { x, eps } => {
                let t = self.value(*x);
                let (_, var) = kernels::feature_moments(t.data(), t.features());
                vec![(*x, kernels::batchnorm_backward(y, g, &var, *eps))]
            }
            Op::BatchNormEval { x, var, eps, .. } => {
                let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + *eps).sqrt()).collect();
                vec![(*x, broadcast_mul(g, &inv))]
            }
            Op::FeatureMean(x) => {
                let t = self.value(*x);
                let n = T::lit((t.numel() / t.features()) as f64);
                let per: Vec<T> = g.iter().map(|&v| v / n).collect();
                vec![(*x, tile(&per, t.numel()))]
            }
            Op::FeatureStd { x, .. } => {
                let t = self.value(*x);
                let f = t.features();
                let n = T::lit((t.numel() / f) as f64);
                let (mean, _) = kernels::feature_moments(t.data(), f);
                let mut dx = Vec::with_capacity(t.numel());
                for row in t.data().chunks(f) {
                    for c in 0..f {
                        dx.push(g[c] * (row[c] - mean[c]) / (n * y[c]));
                    }
                }
                vec![(*x, dx)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&v| -v).collect())],
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                vec![
                    (*a, g.iter().zip(db).map(|(&gv, &bv)| gv * bv).collect()),
                    (*b, g.iter().zip(da).map(|(&gv, &av)| gv * av).collect()),
                ]
            }
            Op::AddRow(x, r) => vec![(*x, g.to_vec()), (*r, reduce_rows(g, self.data(*r).len()))],
            Op::SubRow(x, r) => {
                let dr = reduce_rows(g, self.data(*r).len()).into_iter().map(|v| -v).collect();
                vec![(*x, g.to_vec()), (*r, dr)]
            }
            Op::MulRow(x, r) => {
                let (xd, rd) = (self.data(*x), self.data(*r));
                let gx: Vec<T> = g.iter().zip(xd).map(|(&a, &b)| a * b).collect();
                vec![(*x, broadcast_mul(g, rd)), (*r, reduce_rows(&gx, rd.len()))]
            }
            Op::DivRow(x, r) => {
                let rd = self.data(*r);
                let inv: Vec<T> = rd.iter().map(|&v| T::one() / v).collect();
                // d(x/r)/dr = -y/r
                let gy: Vec<T> = g.iter().zip(y).map(|(&a, &b)| a * b).collect();
                let dr = reduce_rows(&gy, rd.len())
                    .into_iter()
                    .zip(&inv)
                    .map(|(s, &iv)| -s * iv)
                    .collect();
                vec![(*x, broadcast_mul(g, &inv)), (*r, dr)]
            }
            Op::Scale(x, s) => vec![(*x, g.iter().map(|&v| v * *s).collect())],
            Op::Relu(x) => vec![(
                *x,
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                    .collect(),
            )],
            Op::Sigmoid(x) => vec![(*x, g.iter().zip(y).map(|(&gv, &s)| gv * s * (T::one() - s)).collect())],
            Op::Exp(x) => vec![(*x, g.iter().zip(y).map(|(&gv, &e)| gv * e).collect())],
            Op::Square(x) => vec![(
                *x,
                g.iter()
                    .zip(self.data(*x))
                    .map(|(&gv, &xv)| T::lit(2.0) * xv * gv)
                    .collect(),
            )],
            Op::LogSoftmax(x) => {
                let f = node.value.features();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(f).zip(g.chunks(f)) {
                    let gs: T = gr.iter().copied().sum();
                    dx.extend(yr.iter().zip(gr).map(|(&l, &gv)| gv - l.exp() * gs));
                }
                vec![(*x, dx)]
            }
            Op::Nll { logp, targets } => {
                let t = self.value(*logp);
                let k = t.features();
                let scale = -g[0] / T::lit(targets.len() as f64);
                let mut dx = vec![T::zero(); t.numel()];
                for (i, &c) in targets.iter().enumerate() {
                    dx[i * k + c] += scale;
                }
                vec![(*logp, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / T::lit(n as f64); n])]
            }
            Op::Noise { x, .. } | Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Rows { x, start, .. } => {
                let t = self.value(*x);
                let row = t.numel() / t.batch();
                let mut dx = vec![T::zero(); t.numel()];
                dx[start * row..start * row + g.len()].copy_from_slice(g);
                vec![(*x, dx)]
            }
        }
    }

    /// Re-executes every recorded op on its recorded inputs and returns the
    /// index and name of the first node whose output differs bit-wise.
    pub fn replay_mismatch(&self) -> Option<(usize, &'static str)> {
        for (i, node) in self.nodes.iter().enumerate() {
            let fresh = match &node.op {
                Op::Leaf => continue,
                Op::Reshape(x) => self.value(*x).reshape(node.value.shape()),
                op => self.eval(op),
            };
            let same = fresh.is_ok_and(|t| {
                t.shape() == node.value.shape()
                    && t.data()
                        .iter()
                        .zip(node.value.data())
                        .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits))
            });
            if !same {
                return Some((i, node.op.name()));
            }
        }
        None
    }

    /// Checks that every node value is finite; names the offending op.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            n.value.check_finite(&format!("node {i} ({})", n.op.name()))?;
        }
        Ok(())
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn reduce_rows<T: Real>(x: &[T], f: usize) -> Vec<T> {
    let mut out = vec![T::zero(); f];
    for row in x.chunks(f) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn broadcast_mul<T: Real>(x: &[T], r: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(r.len()) {
        out.extend(row.iter().zip(r).map(|(&a, &b)| a * b));
    }
    out
}

fn tile<T: Real>(r: &[T], n: usize) -> Vec<T> {
    r.iter().copied().cycle().take(n).collect()
}
