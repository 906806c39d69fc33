//! Dynamic reverse-mode tape.
//!
//! A tape is rebuilt for every forward pass. Nodes are appended in evaluation
//! order, so reverse insertion order is a topological order of the graph and the
//! backward sweep is deterministic.

use std::borrow::Cow;
use std::collections::BTreeMap;

use super::kernels::{self, CorrGeom};
use super::{NumericsError, ParamGrads, ParamGroup, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding rule for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `k / 2` on each side for odd kernels; output extent `ceil(n / stride)`.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone)]
enum Op<'a, T: Clone> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: CorrGeom,
    },
    Deconv {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: CorrGeom,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Reshape(Var),
    Sum(Var),
    Dot(Var, Var),
    UnitNorm(Var),
    Reparam {
        mean: Var,
        log_var: Var,
        eps: Vec<T>,
    },
    ReconBce {
        pred: Var,
        target: Cow<'a, [T]>,
        gamma: T,
    },
    Kl {
        mean: Var,
        log_var: Var,
    },
    SqDist(Var, Var),
}

impl<T: Clone> Op<'_, T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv",
            Op::Deconv { .. } => "deconv",
            Op::Dense { .. } => "dense",
            Op::Elu(_) => "elu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::UnitNorm(_) => "unit_norm",
            Op::Reparam { .. } => "reparameterize",
            Op::ReconBce { .. } => "recon_bce",
            Op::Kl { .. } => "kl",
            Op::SqDist(..) => "sq_dist",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv {
                input, kernel, bias, ..
            }
            | Op::Deconv {
                input, kernel, bias, ..
            } => {
                vec![*input, *kernel, *bias]
            }
            Op::Dense { input, weight, bias } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Elu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::UnitNorm(a) => vec![*a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Dot(a, b) | Op::SqDist(a, b) => {
                vec![*a, *b]
            }
            Op::Reparam { mean, log_var, .. } | Op::Kl { mean, log_var } => vec![*mean, *log_var],
            Op::ReconBce { pred, .. } => vec![*pred],
        }
    }
}

struct Node<'a, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'a, [T]>,
    op: Op<'a, T>,
    tracked: bool,
}

/// Lower clamp applied to predictions before taking logarithms.
pub const PREDICTION_EPS: f64 = 1e-7;

/// Records a computation for one forward pass.
pub struct Tape<'a, T: Clone> {
    nodes: Vec<Node<'a, T>>,
    check_finite: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// Finite-value checks are on in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            first_non_finite: None,
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("recorded node is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// First node whose value contained NaN or ±Inf, if checks are enabled.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [T]>, op: Op<'a, T>, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let id = self.nodes.len();
        if self.check_finite && self.first_non_finite.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(id)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Records a leaf; gradients flow into it when `tracked`.
    pub fn leaf(
        &mut self,
        shape: Vec<usize>,
        values: impl Into<Cow<'a, [T]>>,
        tracked: bool,
    ) -> Result<Var, NumericsError> {
        let values = values.into();
        let n: usize = shape.iter().product();
        if n != values.len() || shape.contains(&0) {
            return Err(NumericsError::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        Ok(self.push(shape, values, Op::Leaf, tracked))
    }

    /// Untracked input data.
    pub fn constant(&mut self, shape: Vec<usize>, values: impl Into<Cow<'a, [T]>>) -> Result<Var, NumericsError> {
        self.leaf(shape, values, false)
    }

    /// Borrows a tensor as a leaf; tracked iff the tensor requires grad.
    pub fn tensor(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.values()),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Binds every parameter of a group as a tracked leaf.
    pub fn bind(&mut self, group: &'a ParamGroup<T>) -> BoundParams {
        let vars = group
            .iter()
            .map(|(id, t)| {
                let v = self.push(t.shape().to_vec(), Cow::Borrowed(t.values()), Op::Leaf, true);
                (id.to_string(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), Cow::Owned(n.value.to_vec()));
        self.push(shape, value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(NumericsError::shape(op, sa, sb));
        }
        Ok(())
    }

    fn conv_geom(
        &self,
        op: &'static str,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        spatial: usize,
        padding: Padding,
    ) -> Result<CorrGeom, NumericsError> {
        let xs = &self.nodes[input.0].shape;
        let ks = &self.nodes[kernel.0].shape;
        let bs = &self.nodes[bias.0].shape;
        if xs.len() != spatial + 1 || ks.len() != spatial + 2 {
            return Err(NumericsError::shape(op, xs, ks));
        }
        if ks[1] != xs[0] {
            return Err(NumericsError::shape(op, xs, ks));
        }
        if bs.as_slice() != [ks[0]] {
            return Err(NumericsError::shape(op, ks, bs));
        }
        if stride == 0 {
            return Err(NumericsError::InvalidArgument(format!("{op}: stride must be positive")));
        }
        let mut wide = [1usize; 3];
        let mut kern = [1usize; 3];
        let mut pad = [0usize; 3];
        let mut narrow = [1usize; 3];
        let off = 3 - spatial;
        for a in 0..spatial {
            let k = ks[2 + a];
            wide[off + a] = xs[1 + a];
            kern[off + a] = k;
            pad[off + a] = match padding {
                Padding::Same => {
                    if k.is_multiple_of(2) {
                        return Err(NumericsError::InvalidArgument(format!(
                            "{op}: same padding needs an odd kernel, got {ks:?}"
                        )));
                    }
                    k / 2
                }
                Padding::Valid => 0,
            };
            narrow[off + a] = CorrGeom::narrow_extent(wide[off + a], k, pad[off + a], stride)
                .ok_or_else(|| NumericsError::shape(op, xs, ks))?;
        }
        Ok(CorrGeom {
            wide_channels: xs[0],
            narrow_channels: ks[0],
            wide,
            narrow,
            kernel: kern,
            pad,
            stride,
        })
    }

    fn conv_impl(&mut self, input: Var, kernel: Var, bias: Var, geom: CorrGeom, out_shape: Vec<usize>) -> Var {
        let mut out = vec![T::zero(); geom.narrow_len()];
        let plane: usize = geom.narrow.iter().product();
        for (c, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.fill(self.nodes[bias.0].value[c]);
        }
        kernels::corr_forward(&geom, &self.nodes[input.0].value, &self.nodes[kernel.0].value, &mut out);
        let tracked = self.any_tracked(&[input, kernel, bias]);
        self.push(
            out_shape,
            Cow::Owned(out),
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            },
            tracked,
        )
    }

    /// 3D cross-correlation; input `[C_in, D, H, W]`, kernel `[C_out, C_in, k, k, k]` (odd k), same padding.
    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var, NumericsError> {
        let geom = self.conv_geom("conv3d", input, kernel, bias, stride, 3, Padding::Same)?;
        let mut shape = vec![geom.narrow_channels];
        shape.extend_from_slice(&geom.narrow);
        Ok(self.conv_impl(input, kernel, bias, geom, shape))
    }

    /// 2D cross-correlation; input `[C_in, H, W]`, kernel `[C_out, C_in, k, k]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var, NumericsError> {
        let geom = self.conv_geom("conv2d", input, kernel, bias, stride, 2, padding)?;
        let shape = vec![geom.narrow_channels, geom.narrow[1], geom.narrow[2]];
        Ok(self.conv_impl(input, kernel, bias, geom, shape))
    }

    /// Transposed 3D convolution, the adjoint of [`Tape::conv3d`] with the same kernel.
    ///
    /// Input `[C_in, D, H, W]`, kernel `[C_in, C_out, k, k, k]`, output `[C_out, D·s, H·s, W·s]`.
    pub fn deconv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var, NumericsError> {
        let xs = self.nodes[input.0].shape.clone();
        let ks = self.nodes[kernel.0].shape.clone();
        let bs = self.nodes[bias.0].shape.clone();
        if xs.len() != 4 || ks.len() != 5 || ks[0] != xs[0] {
            return Err(NumericsError::shape("deconv3d", &xs, &ks));
        }
        if bs != [ks[1]] {
            return Err(NumericsError::shape("deconv3d", &ks, &bs));
        }
        if stride == 0 {
            return Err(NumericsError::InvalidArgument(
                "deconv3d: stride must be positive".into(),
            ));
        }
        let mut kern = [0; 3];
        let mut pad = [0; 3];
        let mut wide = [0; 3];
        for a in 0..3 {
            let k = ks[2 + a];
            if k.is_multiple_of(2) {
                return Err(NumericsError::InvalidArgument(format!(
                    "deconv3d: same padding needs an odd kernel, got {ks:?}"
                )));
            }
            kern[a] = k;
            pad[a] = k / 2;
            wide[a] = xs[1 + a] * stride;
        }
        let geom = CorrGeom {
            wide_channels: ks[1],
            narrow_channels: ks[0],
            wide,
            narrow: [xs[1], xs[2], xs[3]],
            kernel: kern,
            pad,
            stride,
        };
        let mut out = vec![T::zero(); geom.wide_len()];
        let plane: usize = wide.iter().product();
        for (c, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.fill(self.nodes[bias.0].value[c]);
        }
        kernels::corr_adjoint(&geom, &self.nodes[input.0].value, &self.nodes[kernel.0].value, &mut out);
        let tracked = self.any_tracked(&[input, kernel, bias]);
        let shape = vec![ks[1], wide[0], wide[1], wide[2]];
        Ok(self.push(
            shape,
            Cow::Owned(out),
            Op::Deconv {
                input,
                kernel,
                bias,
                geom,
            },
            tracked,
        ))
    }

    /// `weight · input + bias`; input `[n_in]`, weight `[n_out, n_in]`, bias `[n_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, NumericsError> {
        let xs = &self.nodes[input.0].shape;
        let ws = &self.nodes[weight.0].shape;
        let n_in: usize = xs.iter().product();
        if xs.len() != 1 || ws.len() != 2 || ws[1] != n_in {
            return Err(NumericsError::shape("dense", xs, ws));
        }
        let n_out = ws[0];
        let mut out = match bias {
            Some(b) => {
                let bs = &self.nodes[b.0].shape;
                if bs.as_slice() != [n_out] {
                    return Err(NumericsError::shape("dense", ws, bs));
                }
                self.nodes[b.0].value.to_vec()
            }
            None => vec![T::zero(); n_out],
        };
        kernels::matvec(&self.nodes[weight.0].value, &self.nodes[input.0].value, &mut out);
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let tracked = self.any_tracked(&deps);
        Ok(self.push(vec![n_out], Cow::Owned(out), Op::Dense { input, weight, bias }, tracked))
    }

    fn unary(&mut self, x: Var, op: Op<'a, T>, f: impl Fn(T) -> T) -> Var {
        let n = &self.nodes[x.0];
        let out: Vec<T> = n.value.iter().map(|&v| f(v)).collect();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        self.push(shape, Cow::Owned(out), op, tracked)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), |v| if v > T::zero() { v } else { v.exp_m1() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), T::tanh)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<'a, T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, NumericsError> {
        self.same_shape(name, a, b)?;
        let out: Vec<T> = self.nodes[a.0]
            .value
            .iter()
            .zip(self.nodes[b.0].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(shape, Cow::Owned(out), op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let n = &self.nodes[x.0];
        if shape.iter().product::<usize>() != n.value.len() || shape.contains(&0) {
            return Err(NumericsError::shape("reshape", &n.shape, &shape));
        }
        let (value, tracked) = (Cow::Owned(n.value.to_vec()), n.tracked);
        Ok(self.push(shape, value, Op::Reshape(x), tracked))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var, NumericsError> {
        let n = self.nodes[x.0].value.len();
        self.reshape(x, vec![n])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let s = n.value.iter().copied().sum::<T>();
        let tracked = n.tracked;
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(x), tracked)
    }

    /// Inner product `⟨a, b⟩` as a scalar node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("dot", a, b)?;
        let s = kernels::dot(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(vec![1], Cow::Owned(vec![s]), Op::Dot(a, b), tracked))
    }

    /// `x / ‖x‖₂`.
    pub fn unit_norm(&mut self, x: Var) -> Result<Var, NumericsError> {
        let n = &self.nodes[x.0];
        let norm = kernels::dot(&n.value, &n.value).sqrt();
        if !(norm > T::zero()) {
            return Err(NumericsError::InvalidArgument("unit_norm of a zero vector".into()));
        }
        let out = n.value.iter().map(|&v| v / norm).collect::<Vec<_>>();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        Ok(self.push(shape, Cow::Owned(out), Op::UnitNorm(x), tracked))
    }

    /// `mean + exp(½·log_var) ∘ eps`; no gradient reaches `eps`.
    pub fn reparameterize(&mut self, mean: Var, log_var: Var, eps: Vec<T>) -> Result<Var, NumericsError> {
        self.same_shape("reparameterize", mean, log_var)?;
        if eps.len() != self.nodes[mean.0].value.len() {
            return Err(NumericsError::LengthMismatch {
                expected: self.nodes[mean.0].value.len(),
                actual: eps.len(),
            });
        }
        let half = T::of(0.5);
        let out: Vec<T> = self.nodes[mean.0]
            .value
            .iter()
            .zip(self.nodes[log_var.0].value.iter())
            .zip(&eps)
            .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
            .collect();
        let shape = self.nodes[mean.0].shape.clone();
        let tracked = self.any_tracked(&[mean, log_var]);
        Ok(self.push(shape, Cow::Owned(out), Op::Reparam { mean, log_var, eps }, tracked))
    }

    /// γ-weighted binary cross entropy summed over elements.
    ///
    /// Predictions are clamped to `[ε, 1 − ε]` before the logarithms; the
    /// gradient is evaluated at the clamped value and passed straight through.
    pub fn recon_bce(&mut self, pred: Var, target: impl Into<Cow<'a, [T]>>, gamma: T) -> Result<Var, NumericsError> {
        let target = target.into();
        let p = &self.nodes[pred.0];
        if p.value.len() != target.len() {
            return Err(NumericsError::LengthMismatch {
                expected: p.value.len(),
                actual: target.len(),
            });
        }
        let total = bce_sum(&p.value, &target, gamma);
        let tracked = p.tracked;
        Ok(self.push(
            vec![1],
            Cow::Owned(vec![total]),
            Op::ReconBce { pred, target, gamma },
            tracked,
        ))
    }

    /// `−½ Σ (1 + log_var − mean² − exp(log_var))`.
    pub fn kl_divergence(&mut self, mean: Var, log_var: Var) -> Result<Var, NumericsError> {
        self.same_shape("kl_divergence", mean, log_var)?;
        let v = kl_sum(&self.nodes[mean.0].value, &self.nodes[log_var.0].value);
        let tracked = self.any_tracked(&[mean, log_var]);
        Ok(self.push(vec![1], Cow::Owned(vec![v]), Op::Kl { mean, log_var }, tracked))
    }

    /// `‖a − b‖₂²`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("sq_dist", a, b)?;
        let v = self.nodes[a.0]
            .value
            .iter()
            .zip(self.nodes[b.0].value.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>();
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(vec![1], Cow::Owned(vec![v]), Op::SqDist(a, b), tracked))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, NumericsError> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(NumericsError::NonScalarOutput(out.shape.clone()));
        }
        if let Some((node, op)) = self.first_non_finite {
            if node <= output.0 {
                return Err(NumericsError::NonFinite {
                    context: format!("node {node} produced by {op}"),
                });
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        if !out.tracked {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for inp in node.op.inputs() {
                if inp.0 >= i {
                    return Err(NumericsError::Cycle { node: i });
                }
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    fn propagate(&self, node: &Node<'a, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| -> &[T] { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                kernel,
                bias,
                geom,
            } => {
                if let Some(dx) = self.accum(grads, *input) {
                    kernels::corr_adjoint(geom, g, val(*kernel), dx);
                }
                if let Some(dk) = self.accum(grads, *kernel) {
                    kernels::corr_kernel_grad(geom, val(*input), g, dk);
                }
                if let Some(db) = self.accum(grads, *bias) {
                    let plane: usize = geom.narrow.iter().product();
                    for (b, chunk) in db.iter_mut().zip(g.chunks_exact(plane)) {
                        *b += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Deconv {
                input,
                kernel,
                bias,
                geom,
            } => {
                if let Some(dx) = self.accum(grads, *input) {
                    kernels::corr_forward(geom, g, val(*kernel), dx);
                }
                if let Some(dk) = self.accum(grads, *kernel) {
                    kernels::corr_kernel_grad(geom, g, val(*input), dk);
                }
                if let Some(db) = self.accum(grads, *bias) {
                    let plane: usize = geom.wide.iter().product();
                    for (b, chunk) in db.iter_mut().zip(g.chunks_exact(plane)) {
                        *b += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Dense { input, weight, bias } => {
                if let Some(dx) = self.accum(grads, *input) {
                    kernels::matvec_transposed(val(*weight), g, dx);
                }
                if let Some(dw) = self.accum(grads, *weight) {
                    kernels::outer_accumulate(g, val(*input), dw);
                }
                if let Some(b) = bias {
                    if let Some(db) = self.accum(grads, *b) {
                        kernels::axpy(T::one(), g, db);
                    }
                }
            }
            Op::Elu(x) => {
                let y = &node.value;
                if let Some(dx) = self.accum(grads, *x) {
                    let xs = val(*x);
                    for ((d, &gi), (&xi, &yi)) in dx.iter_mut().zip(g).zip(xs.iter().zip(y.iter())) {
                        *d += if xi > T::zero() { gi } else { gi * (yi + T::one()) };
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y.iter()) {
                        *d += gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y.iter()) {
                        *d += gi * (T::one() - yi * yi);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.accum(grads, *a) {
                    kernels::axpy(T::one(), g, da);
                }
                if let Some(db) = self.accum(grads, *b) {
                    kernels::axpy(T::one(), g, db);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.accum(grads, *a) {
                    kernels::axpy(T::one(), g, da);
                }
                if let Some(db) = self.accum(grads, *b) {
                    kernels::axpy(-T::one(), g, db);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.accum(grads, *a) {
                    for ((d, &gi), &bv) in da.iter_mut().zip(g).zip(val(*b)) {
                        *d += gi * bv;
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    for ((d, &gi), &av) in db.iter_mut().zip(g).zip(val(*a)) {
                        *d += gi * av;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.accum(grads, *x) {
                    kernels::axpy(*c, g, dx);
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.accum(grads, *x) {
                    kernels::axpy(T::one(), g, dx);
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Dot(a, b) => {
                if let Some(da) = self.accum(grads, *a) {
                    kernels::axpy(g[0], val(*b), da);
                }
                if let Some(db) = self.accum(grads, *b) {
                    kernels::axpy(g[0], val(*a), db);
                }
            }
            Op::UnitNorm(x) => {
                let y = &node.value;
                if let Some(dx) = self.accum(grads, *x) {
                    let xs = val(*x);
                    let norm = kernels::dot(xs, xs).sqrt();
                    let yg = kernels::dot(y, g);
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y.iter()) {
                        *d += (gi - yi * yg) / norm;
                    }
                }
            }
            Op::Reparam { mean, log_var, eps } => {
                if let Some(dm) = self.accum(grads, *mean) {
                    kernels::axpy(T::one(), g, dm);
                }
                if let Some(dl) = self.accum(grads, *log_var) {
                    let half = T::of(0.5);
                    for ((d, &gi), (&lv, &e)) in dl.iter_mut().zip(g).zip(val(*log_var).iter().zip(eps)) {
                        *d += gi * half * (half * lv).exp() * e;
                    }
                }
            }
            Op::ReconBce { pred, target, gamma } => {
                if let Some(dp) = self.accum(grads, *pred) {
                    let eps = T::of(PREDICTION_EPS);
                    let hi = T::one() - eps;
                    let (gm, og) = (*gamma, T::one() - *gamma);
                    for ((d, &p), &t) in dp.iter_mut().zip(val(*pred)).zip(target.iter()) {
                        let p = p.max(eps).min(hi);
                        *d += g[0] * (-gm * t / p + og * (T::one() - t) / (T::one() - p));
                    }
                }
            }
            Op::Kl { mean, log_var } => {
                if let Some(dm) = self.accum(grads, *mean) {
                    kernels::axpy(g[0], val(*mean), dm);
                }
                if let Some(dl) = self.accum(grads, *log_var) {
                    let half = T::of(0.5);
                    for (d, &lv) in dl.iter_mut().zip(val(*log_var)) {
                        *d += g[0] * half * (lv.exp() - T::one());
                    }
                }
            }
            Op::SqDist(a, b) => {
                let two = T::of(2.0) * g[0];
                let (av, bv) = (val(*a), val(*b));
                if let Some(da) = self.accum(grads, *a) {
                    for ((d, &x), &y) in da.iter_mut().zip(av).zip(bv) {
                        *d += two * (x - y);
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    for ((d, &x), &y) in db.iter_mut().zip(av).zip(bv) {
                        *d -= two * (x - y);
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Value of the γ-weighted BCE, with the prediction clamp applied.
pub(crate) fn bce_sum<T: Scalar>(pred: &[T], target: &[T], gamma: T) -> T {
    let eps = T::of(PREDICTION_EPS);
    let hi = T::one() - eps;
    let og = T::one() - gamma;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(eps).min(hi);
            -gamma * t * p.ln() - og * (T::one() - t) * (T::one() - p).ln()
        })
        .sum()
}

pub(crate) fn kl_sum<T: Scalar>(mean: &[T], log_var: &[T]) -> T {
    let s = mean
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| T::one() + lv - m * m - lv.exp())
        .sum::<T>();
    -T::of(0.5) * s
}

/// Per-node gradients from one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the output does not depend on `v` through tracked nodes.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Tape handles for a bound [`ParamGroup`].
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, id: &str) -> Result<Var, NumericsError> {
        self.vars
            .get(id)
            .copied()
            .ok_or_else(|| NumericsError::MissingParam(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients for the parameters the output actually reached.
    pub fn collect<T: Scalar>(&self, grads: &Gradients<T>) -> ParamGrads<T> {
        let mut out = ParamGrads::new();
        for (id, v) in &self.vars {
            if let Some(g) = grads.get(*v) {
                out.insert(id.clone(), g.to_vec());
            }
        }
        out
    }
}
