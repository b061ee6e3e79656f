use rand::Rng;

use super::kernels::{self, axis_split, bcast_index, broadcast_shape, Bcast};
use super::{Real, Tensor};
use crate::{rng, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
        batch: usize,
        b_shared: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
        ia: Bcast,
        ib: Bcast,
    },
    Sub {
        a: usize,
        b: usize,
        ia: Bcast,
        ib: Bcast,
    },
    Mul {
        a: usize,
        b: usize,
        ia: Bcast,
        ib: Bcast,
    },
    Scale {
        a: usize,
        s: T,
    },
    MulConst {
        a: usize,
        factor: Vec<T>,
    },
    Relu {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Tanh {
        a: usize,
    },
    Softmax {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
        inv_std: Vec<T>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
        dim: usize,
    },
    Concat {
        parts: Vec<usize>,
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    MaskedFill {
        a: usize,
        mask: Vec<bool>,
    },
    Reduce {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
        mean: bool,
    },
    Reshape {
        a: usize,
    },
    Permute {
        a: usize,
        perm: Vec<usize>,
    },
    RepeatRows {
        a: usize,
        times: usize,
        row: usize,
    },
    Chamfer {
        pred: usize,
        target: usize,
        pred_nn: Vec<usize>,
        target_nn: Vec<usize>,
    },
    Density {
        pred: usize,
        target: usize,
        dims: [usize; 3],
    },
    Bce {
        probs: usize,
        labels: Vec<bool>,
    },
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Define-by-run tape. Each kernel call appends a node; [`Tape::backward`]
/// walks the nodes in reverse once.
#[derive(Debug)]
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
    training: bool,
    seed: u64,
    dropout_calls: u64,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// Evaluation-mode tape (dropout disabled).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            seed: 0,
            dropout_calls: 0,
            consumed: false,
        }
    }

    /// Training-mode tape; dropout masks derive from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            seed,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(shape.to_vec(), t.into_data(), Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone()).expect("node shape")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Gradient after [`backward`](Self::backward); zeros for unreached nodes
    /// that require gradients, `None` for constants.
    pub fn grad(&self, v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(
            self.grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()]),
        )
    }

    // ---- linear algebra -------------------------------------------------

    /// `a [.., m, k] x b [k, n]` (shared) or `b [.., k, n]` (batched).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a [.., m, k] x b^T` with `b [.., n, k]` or `b [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        let b_shared = sb.len() == 2;
        if kb != k || (!b_shared && sb[..sb.len() - 2] != sa[..sa.len() - 2]) {
            return Err(err());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            for bi in 0..batch {
                let a_s = &av[bi * m * k..(bi + 1) * m * k];
                let c_s = &mut out[bi * m * n..(bi + 1) * m * n];
                let b_off = if b_shared { 0 } else { bi * k * n };
                let b_s = &bv[b_off..b_off + k * n];
                if trans_b {
                    kernels::gemm_nt(a_s, b_s, c_s, m, k, n);
                } else {
                    kernels::gemm_nn(a_s, b_s, c_s, m, k, n);
                }
            }
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(
            shape,
            out,
            Op::MatMul {
                a: a.0,
                b: b.0,
                trans_b,
                batch,
                b_shared,
                m,
                k,
                n,
            },
            ng,
        ))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Vec<usize>, Vec<T>, Bcast, Bcast)> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let ia = bcast_index(&shape, self.shape(a));
        let ib = bcast_index(&shape, self.shape(b));
        let total: usize = shape.iter().product();
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = match (&ia, &ib) {
            (Bcast::Same, Bcast::Same) => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..total).map(|i| f(av[ia.index(i)], bv[ib.index(i)])).collect(),
        };
        Ok((shape, out, ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, ia, ib) = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(shape, out, Op::Add { a: a.0, b: b.0, ia, ib }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, ia, ib) = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(shape, out, Op::Sub { a: a.0, b: b.0, ia, ib }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, out, ia, ib) = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(shape, out, Op::Mul { a: a.0, b: b.0, ia, ib }, ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let ng = self.ng(&[a.0]);
        self.push(self.shape(a).to_vec(), out, Op::Scale { a: a.0, s }, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a.0]);
        self.push(self.shape(a).to_vec(), out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid { a: a.0 })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh { a: a.0 })
    }

    /// Inverted dropout with a counter-based Bernoulli mask; identity in
    /// evaluation mode or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        assert!(rate < 1.0, "dropout rate must be below 1");
        let call = self.dropout_calls;
        self.dropout_calls += 1;
        let mut gen = rng::stream(rng::mix64(&[self.seed, call]));
        let keep = T::of(1.0 / (1.0 - rate));
        let factor: Vec<T> = (0..self.value(a).len())
            .map(|_| if gen.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&factor).map(|(&x, &f)| x * f).collect();
        let ng = self.ng(&[a.0]);
        self.push(self.shape(a).to_vec(), out, Op::MulConst { a: a.0, factor }, ng)
    }

    // ---- normalizations -------------------------------------------------

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: vec![axis],
            });
        }
        Ok(())
    }

    /// Max-subtracted softmax along `axis`. `-inf` entries get probability 0.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let (outer, len, inner) = axis_split(self.shape(a), axis);
        let x = self.value(a);
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = if x[at(j)] == T::neg_infinity() {
                        T::zero()
                    } else {
                        (x[at(j)] - mx).exp()
                    };
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[at(j)] /= sum;
                }
            }
        }
        let ng = self.ng(&[a.0]);
        Ok(self.push(
            self.shape(a).to_vec(),
            out,
            Op::Softmax {
                a: a.0,
                outer,
                len,
                inner,
            },
            ng,
        ))
    }

    /// Normalizes to zero mean and unit (biased) variance along `axis`.
    pub fn layer_norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("layer_norm", a, axis)?;
        let (outer, len, inner) = axis_split(self.shape(a), axis);
        let x = self.value(a);
        let eps = T::of(LAYER_NORM_EPS);
        let nl = T::of(len as f64);
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mut mean = T::zero();
                for j in 0..len {
                    mean += x[at(j)];
                }
                mean /= nl;
                let mut var = T::zero();
                for j in 0..len {
                    let d = x[at(j)] - mean;
                    var += d * d;
                }
                var /= nl;
                let is = T::one() / (var + eps).sqrt();
                for j in 0..len {
                    out[at(j)] = (x[at(j)] - mean) * is;
                }
                inv_std.push(is);
            }
        }
        let ng = self.ng(&[a.0]);
        Ok(self.push(
            self.shape(a).to_vec(),
            out,
            Op::LayerNorm {
                a: a.0,
                outer,
                len,
                inner,
                inv_std,
            },
            ng,
        ))
    }

    // ---- indexing and shape ---------------------------------------------

    /// Rows of a `[V, D]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding",
                lhs: shape,
                rhs: vec![ids.len()],
            });
        }
        let (rows, dim) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::ClassOutOfRange {
                class_id: bad,
                table_size: rows,
            });
        }
        let t = self.value(table);
        let out: Vec<T> = ids
            .iter()
            .flat_map(|&i| t[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        let ng = self.ng(&[table.0]);
        Ok(self.push(
            vec![ids.len().max(1), dim],
            out,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
                dim,
            },
            ng,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        self.check_axis("concat", parts[0], axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let total_len: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let v = self.value(*p);
                out.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total_len;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: ids,
                outer,
                inner,
                lens,
            },
            ng,
        ))
    }

    /// Replaces entries where the (broadcast) mask is true with `value`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], mask_shape: &[usize], value: T) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if mask_shape.iter().product::<usize>() != mask.len()
            || broadcast_shape("masked_fill", &shape, mask_shape)? != shape
        {
            return Err(Error::ShapeMismatch {
                op: "masked_fill",
                lhs: shape,
                rhs: mask_shape.to_vec(),
            });
        }
        let idx = bcast_index(&shape, mask_shape);
        let full: Vec<bool> = (0..self.value(a).len()).map(|i| mask[idx.index(i)]).collect();
        let out = self
            .value(a)
            .iter()
            .zip(&full)
            .map(|(&x, &m)| if m { value } else { x })
            .collect();
        let ng = self.ng(&[a.0]);
        Ok(self.push(shape, out, Op::MaskedFill { a: a.0, mask: full }, ng))
    }

    fn reduce(&mut self, a: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, shape.iter().product(), 1, vec![1]),
            Some(ax) => {
                self.check_axis("reduce", a, ax)?;
                let (o, l, i) = axis_split(&shape, ax);
                let mut s = shape.clone();
                s.remove(ax);
                if s.is_empty() {
                    s.push(1);
                }
                (o, l, i, s)
            }
        };
        let x = self.value(a);
        let scale = if mean { T::one() / T::of(len as f64) } else { T::one() };
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v *= scale);
        }
        let ng = self.ng(&[a.0]);
        Ok(self.push(
            out_shape,
            out,
            Op::Reduce {
                a: a.0,
                outer,
                len,
                inner,
                mean,
            },
            ng,
        ))
    }

    /// Sum over `axis`, or over everything when `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(a, axis, true)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.value(a).to_vec();
        let ng = self.ng(&[a.0]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a: a.0 }, ng))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::ShapeMismatch {
                op: "permute",
                lhs: shape,
                rhs: perm.to_vec(),
            });
        }
        let (out, out_shape) = kernels::permute(self.value(a), &shape, perm);
        let ng = self.ng(&[a.0]);
        Ok(self.push(
            out_shape,
            out,
            Op::Permute {
                a: a.0,
                perm: perm.to_vec(),
            },
            ng,
        ))
    }

    /// Repeats each slice along axis 0 `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        assert!(times >= 1);
        let shape = self.shape(a).to_vec();
        let row: usize = shape[1..].iter().product();
        let x = self.value(a);
        let mut out = Vec::with_capacity(x.len() * times);
        for r in 0..shape[0] {
            for _ in 0..times {
                out.extend_from_slice(&x[r * row..(r + 1) * row]);
            }
        }
        let mut s = shape;
        s[0] *= times;
        let ng = self.ng(&[a.0]);
        self.push(s, out, Op::RepeatRows { a: a.0, times, row }, ng)
    }

    // ---- fused losses ---------------------------------------------------

    fn point_rows(&self, op: &'static str, v: Var) -> Result<usize> {
        let s = self.shape(v);
        if s.len() != 2 || s[1] != 3 || s[0] == 0 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 3],
            });
        }
        Ok(s[0])
    }

    /// Symmetric Chamfer distance between `[P, 3]` and `[Q, 3]` point sets:
    /// half the mean squared nearest-neighbour distance in each direction.
    /// Nearest-neighbour assignments are held fixed for the gradient.
    pub fn chamfer(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.point_rows("chamfer", pred)?;
        let q = self.point_rows("chamfer", target)?;
        let (pv, tv) = (self.value(pred), self.value(target));
        let (pred_nn, dp) = nearest_all(pv, tv);
        let (target_nn, dt) = nearest_all(tv, pv);
        let half = T::of(0.5);
        let loss = half * dp / T::of(p as f64) + half * dt / T::of(q as f64);
        let ng = self.ng(&[pred.0, target.0]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Chamfer {
                pred: pred.0,
                target: target.0,
                pred_nn,
                target_nn,
            },
            ng,
        ))
    }

    /// Mean squared difference of the normalized soft-occupancy grids of two
    /// point sets over `[-1, 1]^3`.
    pub fn density(&mut self, pred: Var, target: Var, dims: [usize; 3]) -> Result<Var> {
        self.point_rows("density", pred)?;
        self.point_rows("density", target)?;
        let gp = soft_occupancy(self.value(pred), dims);
        let gt = soft_occupancy(self.value(target), dims);
        let v = T::of(gp.len() as f64);
        let loss = gp.iter().zip(&gt).map(|(&a, &b)| (b - a) * (b - a)).sum::<T>() / v;
        let ng = self.ng(&[pred.0, target.0]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Density {
                pred: pred.0,
                target: target.0,
                dims,
            },
            ng,
        ))
    }

    /// Binary cross-entropy of probabilities against boolean labels, with
    /// probabilities clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, probs: Var, labels: &[bool]) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "bce",
                lhs: self.shape(probs).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (lo, hi) = bce_bounds::<T>();
        let mut acc = T::zero();
        for (&x, &y) in p.iter().zip(labels) {
            let c = x.max(lo).min(hi);
            acc += if y { c.ln() } else { (T::one() - c).ln() };
        }
        let loss = -acc / T::of(labels.len() as f64);
        let ng = self.ng(&[probs.0]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Bce {
                probs: probs.0,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse pass from a one-element `loss`. A tape supports one backward.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.nodes[loss.0].shape.clone(),
                rhs: vec![1],
            });
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce_bounds<T: Real>() -> (T, T) {
    (T::of(1e-7), T::of(1.0 - 1e-7))
}

/// For each row of `from`, the nearest row of `to` (ties: smallest index) and
/// the sum of squared distances.
pub(crate) fn nearest_all<T: Real>(from: &[T], to: &[T]) -> (Vec<usize>, T) {
    let mut nn = Vec::with_capacity(from.len() / 3);
    let mut total = T::zero();
    for a in from.chunks_exact(3) {
        let mut best = (0usize, T::infinity());
        for (j, b) in to.chunks_exact(3).enumerate() {
            let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
            let d = dx * dx + dy * dy + dz * dz;
            if d < best.1 {
                best = (j, d);
            }
        }
        nn.push(best.0);
        total += best.1;
    }
    (nn, total)
}

/// Per-axis trilinear placement: lower cell, upper weight, and d(upper weight)/dx.
#[inline]
pub(crate) fn axis_bin<T: Real>(x: T, g: usize) -> (usize, T, T) {
    if g == 1 {
        return (0, T::zero(), T::zero());
    }
    let w = T::of(2.0 / g as f64);
    let u = (x + T::one()) / w - T::of(0.5);
    let top = T::of((g - 1) as f64);
    if !(u > T::zero()) {
        return (0, T::zero(), T::zero());
    }
    if u >= top {
        return (g - 2, T::one(), T::zero());
    }
    let i0 = u.floor().to_usize().unwrap_or(0).min(g - 2);
    let t = u - T::of(i0 as f64);
    (i0, t, T::one() / w)
}

pub(crate) fn soft_occupancy<T: Real>(points: &[T], dims: [usize; 3]) -> Vec<T> {
    let mut grid = vec![T::zero(); dims[0] * dims[1] * dims[2]];
    let n = T::of((points.len() / 3) as f64);
    for p in points.chunks_exact(3) {
        let bins = [
            axis_bin(p[0], dims[0]),
            axis_bin(p[1], dims[1]),
            axis_bin(p[2], dims[2]),
        ];
        for corner in 0..8usize {
            let mut w = T::one();
            let mut cell = [0usize; 3];
            let mut valid = true;
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                let (i0, t, _) = bins[a];
                if up && dims[a] == 1 {
                    valid = false;
                    break;
                }
                cell[a] = i0 + up as usize;
                w *= if up { t } else { T::one() - t };
            }
            if valid {
                grid[(cell[0] * dims[1] + cell[1]) * dims[2] + cell[2]] += w / n;
            }
        }
    }
    grid
}
