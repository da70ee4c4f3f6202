use super::kernels::{gemm_nn, gemm_nt, gemm_tn, PatchGeom};
use super::{mismatch, Scalar, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: PatchGeom,
        batch: usize,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: PatchGeom,
        batch: usize,
    },
    ChannelMix {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Mse(Var, Var),
    BceWithLogits(Var, Var),
    L1(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    lens: Vec<usize>,
    disconnected: Vec<Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); self.lens[v.0]])
    }

    /// Trainable leaves the loss does not reach.
    pub fn disconnected(&self) -> &[Var] {
        &self.disconnected
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that is not differentiated.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var, TensorError> {
        if numel(shape) != data.len() {
            return Err(mismatch("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("node shape is consistent")
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || numel(sb) == 1 {
            Ok(sa.to_vec())
        } else if numel(sa) == 1 {
            Ok(sb.to_vec())
        } else {
            Err(mismatch(op, sa, sb))
        }
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        record: Op<T>,
    ) -> Result<Var, TensorError> {
        let shape = self.broadcast_shape(op, a, b)?;
        let n = numel(&shape);
        let (va, vb) = (self.value(a), self.value(b));
        let at = |v: &[T], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let out = (0..n).map(|i| f(at(va, i), at(vb, i))).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, record, rg))
    }

    /// Elementwise sum; either side may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, Op::Scale(a, c), rg)
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 4 {
            return Err(mismatch("concat", &first, &[0, 0, 0, 0]));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(mismatch("concat", &first, s));
            }
            channels += s[1];
        }
        let (n, plane) = (first[0], first[2] * first[3]);
        let mut out = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p)[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            vec![n, channels, first[2], first[3]],
            out,
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, n: usize) -> Result<(), TensorError> {
        match bias {
            Some(b) if self.shape(b) != [n] => Err(mismatch(op, self.shape(b), &[n])),
            _ => Ok(()),
        }
    }

    /// 2-D convolution. `input [N, C, H, W]`, `weight [OC, C, k, k]`,
    /// `bias [OC]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || sw[1] != si[1] || sw[2] != sw[3] || stride == 0 {
            return Err(mismatch("conv2d", &si, &sw));
        }
        let (k, oc) = (sw[2], sw[0]);
        if si[2] + 2 * pad < k || si[3] + 2 * pad < k {
            return Err(mismatch("conv2d", &si, &sw));
        }
        self.check_bias("conv2d", bias, oc)?;
        let geom = PatchGeom {
            channels: si[1],
            h: si[2],
            w: si[3],
            gh: (si[2] + 2 * pad - k) / stride + 1,
            gw: (si[3] + 2 * pad - k) / stride + 1,
            k,
            stride,
            pad,
        };
        let batch = si[0];
        let (rows, cols) = (geom.rows(), geom.cols());
        let mut out = vec![T::zero(); batch * oc * cols];
        let mut patches = vec![T::zero(); rows * cols];
        let (x, w) = (self.value(input), self.value(weight));
        for n in 0..batch {
            geom.im2col(
                &x[n * geom.image_len()..(n + 1) * geom.image_len()],
                &mut patches,
            );
            let o = &mut out[n * oc * cols..(n + 1) * oc * cols];
            if let Some(b) = bias {
                for (c, &bv) in self.value(b).iter().enumerate() {
                    o[c * cols..(c + 1) * cols].iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(w, &patches, o, oc, rows, cols);
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![batch, oc, geom.gh, geom.gw],
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
            },
            rg,
        ))
    }

    /// Transposed convolution. `input [N, C, H, W]`, `weight [C, OC, k, k]`,
    /// output `[N, OC, (H-1)*stride - 2*pad + k, ...]`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || sw[0] != si[1] || sw[2] != sw[3] || stride == 0 {
            return Err(mismatch("conv_transpose2d", &si, &sw));
        }
        let (k, oc) = (sw[2], sw[1]);
        let full_h = (si[2] - 1) * stride + k;
        let full_w = (si[3] - 1) * stride + k;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(mismatch("conv_transpose2d", &si, &sw));
        }
        self.check_bias("conv_transpose2d", bias, oc)?;
        let geom = PatchGeom {
            channels: oc,
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            gh: si[2],
            gw: si[3],
            k,
            stride,
            pad,
        };
        let (batch, ic) = (si[0], si[1]);
        let (rows, cols) = (geom.rows(), geom.cols());
        let img = geom.image_len();
        let mut out = vec![T::zero(); batch * img];
        let mut patches = vec![T::zero(); rows * cols];
        let (x, w) = (self.value(input), self.value(weight));
        for n in 0..batch {
            patches.iter_mut().for_each(|v| *v = T::zero());
            gemm_tn(
                w,
                &x[n * ic * cols..(n + 1) * ic * cols],
                &mut patches,
                rows,
                ic,
                cols,
            );
            let o = &mut out[n * img..(n + 1) * img];
            geom.col2im(&patches, o);
            if let Some(b) = bias {
                let plane = geom.h * geom.w;
                for (c, &bv) in self.value(b).iter().enumerate() {
                    o[c * plane..(c + 1) * plane]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![batch, oc, geom.h, geom.w],
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
                batch,
            },
            rg,
        ))
    }

    /// Per-pixel linear map across channels (a 1x1 convolution).
    /// `input [N, Cin, H, W]`, `weight [Cout, Cin]`, `bias [Cout]`.
    pub fn channel_mix(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
    ) -> Result<Var, TensorError> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 2 || sw[1] != si[1] {
            return Err(mismatch("channel_mix", &si, &sw));
        }
        let (cout, cin, plane) = (sw[0], sw[1], si[2] * si[3]);
        self.check_bias("channel_mix", bias, cout)?;
        let mut out = vec![T::zero(); si[0] * cout * plane];
        let (x, w) = (self.value(input), self.value(weight));
        for n in 0..si[0] {
            let o = &mut out[n * cout * plane..(n + 1) * cout * plane];
            if let Some(b) = bias {
                for (c, &bv) in self.value(b).iter().enumerate() {
                    o[c * plane..(c + 1) * plane]
                        .iter_mut()
                        .for_each(|v| *v = bv);
                }
            }
            gemm_nn(
                w,
                &x[n * cin * plane..(n + 1) * cin * plane],
                o,
                cout,
                cin,
                plane,
            );
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![si[0], cout, si[2], si[3]],
            out,
            Op::ChannelMix {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// Fully connected layer on `input` flattened to `[N, D]`.
    /// `weight [O, D]`, `bias [O]`, output `[N, O]`.
    pub fn dense(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
    ) -> Result<Var, TensorError> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.is_empty() || sw.len() != 2 {
            return Err(mismatch("dense", &si, &sw));
        }
        let n = si[0];
        let d = numel(&si[1..]);
        if sw[1] != d {
            return Err(mismatch("dense", &si, &sw));
        }
        let o = sw[0];
        self.check_bias("dense", bias, o)?;
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = bias {
            for row in out.chunks_mut(o) {
                row.copy_from_slice(self.value(b));
            }
        }
        gemm_nt(self.value(input), self.value(weight), &mut out, n, d, o);
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            vec![n, o],
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { alpha * x },
            Op::LeakyRelu(a, alpha),
        )
    }

    fn scalar_out(&mut self, v: T, op: Op<T>, rg: bool) -> Var {
        self.push(Vec::new(), vec![v], op, rg)
    }

    /// `mean((a - b)^2)`.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mse_loss", self.shape(a), self.shape(b)));
        }
        let n = T::of(self.value(a).len() as f64);
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.scalar_out(s / n, Op::Mse(a, b), rg))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed as `max(l, 0) - l*t + ln(1 + exp(-|l|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var, TensorError> {
        if self.shape(logits) != self.shape(targets) {
            return Err(mismatch(
                "bce_with_logits",
                self.shape(logits),
                self.shape(targets),
            ));
        }
        let n = T::of(self.value(logits).len() as f64);
        let s = self
            .value(logits)
            .iter()
            .zip(self.value(targets))
            .fold(T::zero(), |acc, (&l, &t)| {
                acc + l.max(T::zero()) - l * t + (-l.abs()).exp().ln_1p()
            });
        let rg = self.rg(logits) || self.rg(targets);
        Ok(self.scalar_out(s / n, Op::BceWithLogits(logits, targets), rg))
    }

    /// Mean absolute value.
    pub fn l1_norm(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).len() as f64);
        let s = self
            .value(a)
            .iter()
            .fold(T::zero(), |acc, &x| acc + x.abs());
        let rg = self.rg(a);
        self.scalar_out(s / n, Op::L1(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        let rg = self.rg(a);
        self.scalar_out(s, Op::Sum(a), rg)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let disconnected: Vec<Var> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| matches!(n.op, Op::Leaf) && n.requires_grad && grads[*i].is_none())
            .map(|(i, _)| Var(i))
            .collect();
        if !disconnected.is_empty() {
            log::warn!(
                "{} trainable tensor(s) do not influence the loss; their gradients are zero",
                disconnected.len()
            );
        }
        Ok(Gradients {
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
            grads,
            disconnected,
        })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        // Gradient buffer of `v`, created on first use; `None` if `v` is not tracked.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if self.rg(v) {
                    let len = self.nodes[v.0].value.len();
                    Some(
                        grads[v.0]
                            .get_or_insert_with(|| vec![T::zero(); len])
                            .as_mut_slice(),
                    )
                } else {
                    None
                }
            }};
        }
        // Adds `g * coef(i)` to `v`, summing when `v` was broadcast.
        let accumulate = |v: Var, coef: &dyn Fn(usize) -> T, grads: &mut [Option<Vec<T>>]| {
            if !self.rg(v) {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let dst = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            if len == 1 && g.len() > 1 {
                dst[0] += g
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |acc, (i, &gi)| acc + gi * coef(i));
            } else {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += g[i] * coef(i);
                }
            }
        };
        let at = |v: Var, i: usize| {
            let vals = &self.nodes[v.0].value;
            if vals.len() == 1 {
                vals[0]
            } else {
                vals[i]
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(*a, &|_| T::one(), grads);
                accumulate(*b, &|_| T::one(), grads);
            }
            Op::Sub(a, b) => {
                accumulate(*a, &|_| T::one(), grads);
                accumulate(*b, &|_| -T::one(), grads);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                accumulate(a, &|i| at(b, i), grads);
                accumulate(b, &|i| at(a, i), grads);
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(*a, &|_| c, grads);
            }
            Op::Concat(parts) => {
                let (n, plane) = (node.shape[0], node.shape[2] * node.shape[3]);
                let total_c = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if let Some(dst) = slot!(p) {
                        for b in 0..n {
                            let src = &g[(b * total_c + offset) * plane
                                ..(b * total_c + offset + c) * plane];
                            for (d, &s) in
                                dst[b * c * plane..(b + 1) * c * plane].iter_mut().zip(src)
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                batch,
            } => {
                let (rows, cols) = (geom.rows(), geom.cols());
                let oc = self.shape(*weight)[0];
                let x = self.value(*input);
                let w = self.value(*weight);
                let mut patches = vec![T::zero(); rows * cols];
                if let Some(db) = match *bias {
                    Some(b) => slot!(b),
                    None => None,
                } {
                    for n in 0..*batch {
                        for (c, d) in db.iter_mut().enumerate() {
                            let s = &g[(n * oc + c) * cols..(n * oc + c + 1) * cols];
                            *d += s.iter().fold(T::zero(), |acc, &v| acc + v);
                        }
                    }
                }
                if self.rg(*weight) {
                    for n in 0..*batch {
                        geom.im2col(
                            &x[n * geom.image_len()..(n + 1) * geom.image_len()],
                            &mut patches,
                        );
                        let dw = slot!(*weight).expect("tracked");
                        gemm_nt(
                            &g[n * oc * cols..(n + 1) * oc * cols],
                            &patches,
                            dw,
                            oc,
                            cols,
                            rows,
                        );
                    }
                }
                if self.rg(*input) {
                    for n in 0..*batch {
                        patches.iter_mut().for_each(|v| *v = T::zero());
                        gemm_tn(
                            w,
                            &g[n * oc * cols..(n + 1) * oc * cols],
                            &mut patches,
                            rows,
                            oc,
                            cols,
                        );
                        let dx = slot!(*input).expect("tracked");
                        geom.col2im(
                            &patches,
                            &mut dx[n * geom.image_len()..(n + 1) * geom.image_len()],
                        );
                    }
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geom,
                batch,
            } => {
                let (rows, cols) = (geom.rows(), geom.cols());
                let ic = self.shape(*input)[1];
                let img = geom.image_len();
                let x = self.value(*input);
                let w = self.value(*weight);
                if let Some(db) = match *bias {
                    Some(b) => slot!(b),
                    None => None,
                } {
                    let plane = geom.h * geom.w;
                    for n in 0..*batch {
                        for (c, d) in db.iter_mut().enumerate() {
                            let s = &g[n * img + c * plane..n * img + (c + 1) * plane];
                            *d += s.iter().fold(T::zero(), |acc, &v| acc + v);
                        }
                    }
                }
                let need_w = self.rg(*weight);
                let need_x = self.rg(*input);
                if need_w || need_x {
                    let mut patches = vec![T::zero(); rows * cols];
                    for n in 0..*batch {
                        geom.im2col(&g[n * img..(n + 1) * img], &mut patches);
                        if need_w {
                            let dw = slot!(*weight).expect("tracked");
                            gemm_nt(
                                &x[n * ic * cols..(n + 1) * ic * cols],
                                &patches,
                                dw,
                                ic,
                                cols,
                                rows,
                            );
                        }
                        if need_x {
                            let dx = slot!(*input).expect("tracked");
                            gemm_nn(
                                w,
                                &patches,
                                &mut dx[n * ic * cols..(n + 1) * ic * cols],
                                ic,
                                rows,
                                cols,
                            );
                        }
                    }
                }
            }
            Op::ChannelMix {
                input,
                weight,
                bias,
            } => {
                let si = self.shape(*input);
                let (batch, cin, plane) = (si[0], si[1], si[2] * si[3]);
                let cout = self.shape(*weight)[0];
                let x = self.value(*input);
                let w = self.value(*weight);
                if let Some(db) = match *bias {
                    Some(b) => slot!(b),
                    None => None,
                } {
                    for n in 0..batch {
                        for (c, d) in db.iter_mut().enumerate() {
                            let s = &g[(n * cout + c) * plane..(n * cout + c + 1) * plane];
                            *d += s.iter().fold(T::zero(), |acc, &v| acc + v);
                        }
                    }
                }
                if let Some(dw) = slot!(*weight) {
                    for n in 0..batch {
                        gemm_nt(
                            &g[n * cout * plane..(n + 1) * cout * plane],
                            &x[n * cin * plane..(n + 1) * cin * plane],
                            dw,
                            cout,
                            plane,
                            cin,
                        );
                    }
                }
                if let Some(dx) = slot!(*input) {
                    for n in 0..batch {
                        gemm_tn(
                            w,
                            &g[n * cout * plane..(n + 1) * cout * plane],
                            &mut dx[n * cin * plane..(n + 1) * cin * plane],
                            cin,
                            cout,
                            plane,
                        );
                    }
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (n, o) = (node.shape[0], node.shape[1]);
                let d = self.shape(*weight)[1];
                if let Some(db) = match *bias {
                    Some(b) => slot!(b),
                    None => None,
                } {
                    for row in g.chunks(o) {
                        for (dv, &gv) in db.iter_mut().zip(row) {
                            *dv += gv;
                        }
                    }
                }
                if let Some(dw) = slot!(*weight) {
                    gemm_tn(g, self.value(*input), dw, o, n, d);
                }
                if let Some(dx) = slot!(*input) {
                    gemm_nn(g, self.value(*weight), dx, n, o, d);
                }
            }
            Op::Sigmoid(a) => accumulate(*a, &|i| y[i] * (T::one() - y[i]), grads),
            Op::Tanh(a) => accumulate(*a, &|i| T::one() - y[i] * y[i], grads),
            Op::LeakyRelu(a, alpha) => {
                let x = self.value(*a);
                let alpha = *alpha;
                accumulate(
                    *a,
                    &|i| if x[i] > T::zero() { T::one() } else { alpha },
                    grads,
                );
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = g[0] * T::of(2.0) / T::of(va.len() as f64);
                if let Some(da) = slot!(*a) {
                    for i in 0..va.len() {
                        da[i] += k * (va[i] - vb[i]);
                    }
                }
                if let Some(db) = slot!(*b) {
                    for i in 0..va.len() {
                        db[i] -= k * (va[i] - vb[i]);
                    }
                }
            }
            Op::BceWithLogits(l, t) => {
                let (vl, vt) = (self.value(*l), self.value(*t));
                let k = g[0] / T::of(vl.len() as f64);
                if let Some(dl) = slot!(*l) {
                    for i in 0..vl.len() {
                        dl[i] += k * (sigmoid(vl[i]) - vt[i]);
                    }
                }
                if let Some(dt) = slot!(*t) {
                    for i in 0..vl.len() {
                        dt[i] -= k * vl[i];
                    }
                }
            }
            Op::L1(a) => {
                let x = self.value(*a);
                let k = g[0] / T::of(x.len() as f64);
                if let Some(da) = slot!(*a) {
                    for i in 0..x.len() {
                        if x[i] != T::zero() {
                            da[i] += k * x[i].signum();
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = slot!(*a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
    }
}
