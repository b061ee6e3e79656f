//! Reverse-mode rules for every [`Op`].

use super::kernels::{self, inverse_perm};
use super::tape::{axis_bin, bce_bounds, soft_occupancy, Node, Op, Tape};
use super::Real;

/// Runs `f` on the gradient buffer of `id`, allocating it on first use.
/// Constants are skipped.
fn acc<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, f: impl FnOnce(&mut [T])) {
    if !nodes[id].needs_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.len()]);
    f(buf);
}

impl<T: Real> Tape<T> {
    pub(crate) fn propagate(&mut self, id: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                trans_b,
                batch,
                b_shared,
                m,
                k,
                n,
            } => {
                let (av, bv) = (&nodes[a].value, &nodes[b].value);
                acc(nodes, grads, a, |ga| {
                    for bi in 0..batch {
                        let b_off = if b_shared { 0 } else { bi * k * n };
                        let b_s = &bv[b_off..b_off + k * n];
                        let g_s = &g[bi * m * n..(bi + 1) * m * n];
                        let ga_s = &mut ga[bi * m * k..(bi + 1) * m * k];
                        if trans_b {
                            kernels::gemm_nn(g_s, b_s, ga_s, m, n, k);
                        } else {
                            kernels::gemm_nt(g_s, b_s, ga_s, m, n, k);
                        }
                    }
                });
                acc(nodes, grads, b, |gb| {
                    for bi in 0..batch {
                        let b_off = if b_shared { 0 } else { bi * k * n };
                        let gb_s = &mut gb[b_off..b_off + k * n];
                        let a_s = &av[bi * m * k..(bi + 1) * m * k];
                        let g_s = &g[bi * m * n..(bi + 1) * m * n];
                        if trans_b {
                            kernels::gemm_tn(g_s, a_s, gb_s, n, m, k);
                        } else {
                            kernels::gemm_tn(a_s, g_s, gb_s, k, m, n);
                        }
                    }
                });
            }
            Op::Add { a, b, ia, ib } | Op::Sub { a, b, ia, ib } => {
                let neg = matches!(nodes[id].op, Op::Sub { .. });
                acc(nodes, grads, *a, |ga| {
                    for (i, &gi) in g.iter().enumerate() {
                        ga[ia.index(i)] += gi;
                    }
                });
                acc(nodes, grads, *b, |gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        if neg {
                            gb[ib.index(i)] -= gi;
                        } else {
                            gb[ib.index(i)] += gi;
                        }
                    }
                });
            }
            Op::Mul { a, b, ia, ib } => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                acc(nodes, grads, *a, |ga| {
                    for (i, &gi) in g.iter().enumerate() {
                        ga[ia.index(i)] += gi * bv[ib.index(i)];
                    }
                });
                acc(nodes, grads, *b, |gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[ib.index(i)] += gi * av[ia.index(i)];
                    }
                });
            }
            &Op::Scale { a, s } => acc(nodes, grads, a, |ga| {
                for (x, &gi) in ga.iter_mut().zip(g) {
                    *x += gi * s;
                }
            }),
            Op::MulConst { a, factor } => acc(nodes, grads, *a, |ga| {
                for ((x, &gi), &f) in ga.iter_mut().zip(g).zip(factor) {
                    *x += gi * f;
                }
            }),
            &Op::Relu { a } => {
                let av = &nodes[a].value;
                acc(nodes, grads, a, |ga| {
                    for ((x, &gi), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > T::zero() {
                            *x += gi;
                        }
                    }
                })
            }
            &Op::Sigmoid { a } => acc(nodes, grads, a, |ga| {
                for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gi * y * (T::one() - y);
                }
            }),
            &Op::Tanh { a } => acc(nodes, grads, a, |ga| {
                for ((x, &gi), &y) in ga.iter_mut().zip(g).zip(out) {
                    *x += gi * (T::one() - y * y);
                }
            }),
            &Op::Softmax { a, outer, len, inner } => acc(nodes, grads, a, |ga| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot += g[at(j)] * out[at(j)];
                        }
                        for j in 0..len {
                            ga[at(j)] += out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }),
            Op::LayerNorm {
                a,
                outer,
                len,
                inner,
                inv_std,
            } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let nl = T::of(len as f64);
                acc(nodes, grads, *a, |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * len + j) * inner + i;
                            let (mut mg, mut mgy) = (T::zero(), T::zero());
                            for j in 0..len {
                                mg += g[at(j)];
                                mgy += g[at(j)] * out[at(j)];
                            }
                            mg /= nl;
                            mgy /= nl;
                            let s = inv_std[o * inner + i];
                            for j in 0..len {
                                ga[at(j)] += s * (g[at(j)] - mg - out[at(j)] * mgy);
                            }
                        }
                    }
                })
            }
            Op::Embedding { table, ids, dim } => acc(nodes, grads, *table, |gt| {
                for (r, &row) in ids.iter().enumerate() {
                    for d in 0..*dim {
                        gt[row * dim + d] += g[r * dim + d];
                    }
                }
            }),
            Op::Concat {
                parts,
                outer,
                inner,
                lens,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&p, &len) in parts.iter().zip(lens) {
                    acc(nodes, grads, p, |gp| {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (x, &v) in gp[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *x += v;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::MaskedFill { a, mask } => acc(nodes, grads, *a, |ga| {
                for ((x, &gi), &m) in ga.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *x += gi;
                    }
                }
            }),
            &Op::Reduce {
                a,
                outer,
                len,
                inner,
                mean,
            } => {
                let scale = if mean { T::one() / T::of(len as f64) } else { T::one() };
                acc(nodes, grads, a, |ga| {
                    for o in 0..outer {
                        for j in 0..len {
                            let dst = &mut ga[(o * len + j) * inner..(o * len + j + 1) * inner];
                            for (x, &gi) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *x += gi * scale;
                            }
                        }
                    }
                })
            }
            &Op::Reshape { a } => acc(nodes, grads, a, |ga| {
                for (x, &gi) in ga.iter_mut().zip(g) {
                    *x += gi;
                }
            }),
            Op::Permute { a, perm } => {
                let (back, _) = kernels::permute(g, &nodes[id].shape, &inverse_perm(perm));
                acc(nodes, grads, *a, |ga| {
                    for (x, &gi) in ga.iter_mut().zip(&back) {
                        *x += gi;
                    }
                })
            }
            &Op::RepeatRows { a, times, row } => acc(nodes, grads, a, |ga| {
                for (r, dst) in ga.chunks_exact_mut(row).enumerate() {
                    for t in 0..times {
                        let src = &g[(r * times + t) * row..(r * times + t + 1) * row];
                        for (x, &gi) in dst.iter_mut().zip(src) {
                            *x += gi;
                        }
                    }
                }
            }),
            Op::Chamfer {
                pred,
                target,
                pred_nn,
                target_nn,
            } => {
                let (pv, tv) = (&nodes[*pred].value, &nodes[*target].value);
                let (np, nt) = (pred_nn.len(), target_nn.len());
                let cp = g[0] / T::of(np as f64);
                let ct = g[0] / T::of(nt as f64);
                let mut dp = vec![T::zero(); pv.len()];
                let mut dt = vec![T::zero(); tv.len()];
                for (i, &j) in pred_nn.iter().enumerate() {
                    for d in 0..3 {
                        let diff = cp * (pv[3 * i + d] - tv[3 * j + d]);
                        dp[3 * i + d] += diff;
                        dt[3 * j + d] -= diff;
                    }
                }
                for (j, &i) in target_nn.iter().enumerate() {
                    for d in 0..3 {
                        let diff = ct * (tv[3 * j + d] - pv[3 * i + d]);
                        dt[3 * j + d] += diff;
                        dp[3 * i + d] -= diff;
                    }
                }
                add_into(nodes, grads, *pred, &dp);
                add_into(nodes, grads, *target, &dt);
            }
            &Op::Density { pred, target, dims } => {
                let (pv, tv) = (&nodes[pred].value, &nodes[target].value);
                let gp = soft_occupancy(pv, dims);
                let gt = soft_occupancy(tv, dims);
                let v = T::of(gp.len() as f64);
                let coef: Vec<T> = gp
                    .iter()
                    .zip(&gt)
                    .map(|(&a, &b)| g[0] * T::of(2.0) * (a - b) / v)
                    .collect();
                let neg: Vec<T> = coef.iter().map(|&c| -c).collect();
                if nodes[pred].needs_grad {
                    let d = density_point_grads(pv, dims, &coef);
                    add_into(nodes, grads, pred, &d);
                }
                if nodes[target].needs_grad {
                    let d = density_point_grads(tv, dims, &neg);
                    add_into(nodes, grads, target, &d);
                }
            }
            Op::Bce { probs, labels } => {
                let pv = &nodes[*probs].value;
                let (lo, hi) = bce_bounds::<T>();
                let scale = g[0] / T::of(labels.len() as f64);
                acc(nodes, grads, *probs, |gp| {
                    for ((x, &p), &y) in gp.iter_mut().zip(pv).zip(labels) {
                        if p > lo && p < hi {
                            *x -= scale * if y { T::one() / p } else { -T::one() / (T::one() - p) };
                        }
                    }
                })
            }
        }
    }
}

fn add_into<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, d: &[T]) {
    acc(nodes, grads, id, |buf| {
        for (x, &v) in buf.iter_mut().zip(d) {
            *x += v;
        }
    });
}

/// Chain rule through the trilinear weights given `coef[v] = dL/d(grid[v])`.
fn density_point_grads<T: Real>(points: &[T], dims: [usize; 3], coef: &[T]) -> Vec<T> {
    let n = T::of((points.len() / 3) as f64);
    let mut out = vec![T::zero(); points.len()];
    for (pi, p) in points.chunks_exact(3).enumerate() {
        let bins = [
            axis_bin(p[0], dims[0]),
            axis_bin(p[1], dims[1]),
            axis_bin(p[2], dims[2]),
        ];
        for corner in 0..8usize {
            let mut cell = [0usize; 3];
            let mut w = [T::zero(); 3];
            let mut dw = [T::zero(); 3];
            let mut valid = true;
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                let (i0, t, dt) = bins[a];
                if up && dims[a] == 1 {
                    valid = false;
                    break;
                }
                cell[a] = i0 + up as usize;
                w[a] = if up { t } else { T::one() - t };
                dw[a] = if up { dt } else { -dt };
            }
            if !valid {
                continue;
            }
            let c = coef[(cell[0] * dims[1] + cell[1]) * dims[2] + cell[2]] / n;
            out[3 * pi] += c * dw[0] * w[1] * w[2];
            out[3 * pi + 1] += c * w[0] * dw[1] * w[2];
            out[3 * pi + 2] += c * w[0] * w[1] * dw[2];
        }
    }
    out
}
