//! Finite-difference checks of every tape kernel in isolation and of the
//! composed encoder, decoder and loss graph, all in f64.

mod common;

use common::*;
use rand::Rng;

use sgpc_core::decoder::{decoder_forward, sample_coarse_init};
use sgpc_core::encoder::encoder_forward;
use sgpc_core::geometry::{ObbAttributes, Vec3};
use sgpc_core::losses::{tape_loss, LossWeights, DEFAULT_DENSITY_GRID};
use sgpc_core::model::LayerModel;
use sgpc_core::numerics::{gradcheck, ParameterStore, Tape, Tensor};
use sgpc_core::patching::Patch;

const TRIALS: u64 = 5;

fn dims(g: &mut rand_chacha::ChaCha8Rng, lo: usize, hi: usize) -> usize {
    g.gen_range(lo..=hi)
}

#[test]
pub fn matmul_shared_and_batched() {
    for t in 0..TRIALS {
        let mut g = rng(100 + t);
        let (b, m, k, n) = (
            dims(&mut g, 1, 3),
            dims(&mut g, 1, 5),
            dims(&mut g, 1, 5),
            dims(&mut g, 1, 5),
        );
        let s = store(vec![
            ("a", tensor(&mut g, &[b, m, k], -1.0, 1.0)),
            ("b", tensor(&mut g, &[b, k, n], -1.0, 1.0)),
            ("w", tensor(&mut g, &[k, n], -1.0, 1.0)),
        ]);
        assert_gradients("matmul", &s, |tape, p| {
            let x = tape.matmul(p.get("a")?, p.get("b")?)?;
            let y = tape.matmul(p.get("a")?, p.get("w")?)?;
            let z = tape.add(x, y)?;
            weighted_sum(tape, z)
        });
    }
}

#[test]
pub fn matmul_transposed() {
    for t in 0..TRIALS {
        let mut g = rng(200 + t);
        let (b, m, k, n) = (
            dims(&mut g, 1, 3),
            dims(&mut g, 1, 5),
            dims(&mut g, 1, 5),
            dims(&mut g, 1, 5),
        );
        let s = store(vec![
            ("a", tensor(&mut g, &[b, m, k], -1.0, 1.0)),
            ("b", tensor(&mut g, &[b, n, k], -1.0, 1.0)),
            ("w", tensor(&mut g, &[n, k], -1.0, 1.0)),
        ]);
        assert_gradients("matmul_nt", &s, |tape, p| {
            let x = tape.matmul_nt(p.get("a")?, p.get("b")?)?;
            let y = tape.matmul_nt(p.get("a")?, p.get("w")?)?;
            let z = tape.mul(x, y)?;
            weighted_sum(tape, z)
        });
    }
}

#[test]
pub fn broadcasting_arithmetic() {
    let shapes: [(&[usize], &[usize]); TRIALS as usize] = [
        (&[3, 4], &[4]),
        (&[2, 3, 4], &[3, 1]),
        (&[2, 1, 4], &[1, 3, 1]),
        (&[5], &[1]),
        (&[2, 3, 2], &[2, 3, 2]),
    ];
    for (t, (sa, sb)) in shapes.iter().enumerate() {
        let mut g = rng(300 + t as u64);
        let s = store(vec![
            ("a", tensor(&mut g, sa, -1.0, 1.0)),
            ("b", tensor(&mut g, sb, -1.0, 1.0)),
        ]);
        assert_gradients("add/sub/mul", &s, |tape, p| {
            let (a, b) = (p.get("a")?, p.get("b")?);
            let x = tape.add(a, b)?;
            let y = tape.sub(b, a)?;
            let z = tape.mul(x, y)?;
            let z = tape.mul(z, a)?;
            let z = tape.scale(z, 0.7);
            weighted_sum(tape, z)
        });
    }
}

#[test]
pub fn activations() {
    for t in 0..TRIALS {
        let mut g = rng(400 + t);
        let shape = [dims(&mut g, 1, 4), dims(&mut g, 1, 6)];
        let s = store(vec![("x", tensor_off_zero(&mut g, &shape))]);
        assert_gradients("relu", &s, |tape, p| {
            let y = tape.relu(p.get("x")?);
            weighted_sum(tape, y)
        });
        assert_gradients("sigmoid", &s, |tape, p| {
            let y = tape.sigmoid(p.get("x")?);
            weighted_sum(tape, y)
        });
        assert_gradients("tanh", &s, |tape, p| {
            let y = tape.tanh(p.get("x")?);
            weighted_sum(tape, y)
        });
    }
}

#[test]
pub fn dropout_in_training_mode() {
    // The mask depends only on the tape seed and call order, so every
    // re-evaluation sees the same mask.
    for t in 0..TRIALS {
        let mut g = rng(500 + t);
        let shape = [dims(&mut g, 2, 6), dims(&mut g, 2, 6)];
        let x = tensor(&mut g, &shape, -1.0, 1.0);
        let eval = |x: &Tensor<f64>| {
            let mut tape = Tape::<f64>::training(t);
            let v = tape.param(x);
            let y = tape.dropout(v, 0.3);
            let l = weighted_sum(&mut tape, y).unwrap();
            (tape, v, l)
        };
        let (mut tape, v, l) = eval(&x);
        tape.backward(l).unwrap();
        let analytic = tape.grad(v).unwrap();
        let mut probe = x.clone();
        #[allow(clippy::needless_range_loop)]
        for i in 0..x.numel() {
            let h = 1e-5 * x.data()[i].abs().max(1.0);
            probe.data_mut()[i] = x.data()[i] + h;
            let (tu, _, lu) = eval(&probe);
            probe.data_mut()[i] = x.data()[i] - h;
            let (td, _, ld) = eval(&probe);
            probe.data_mut()[i] = x.data()[i];
            let numeric = (tu.item(lu) - td.item(ld)) / (2.0 * h);
            assert!(gradcheck::relative_error(analytic[i], numeric) < GRAD_TOL);
        }
    }
}

#[test]
pub fn softmax_every_axis() {
    for t in 0..TRIALS {
        let mut g = rng(600 + t);
        let shape = [dims(&mut g, 1, 3), dims(&mut g, 2, 4), dims(&mut g, 2, 5)];
        let s = store(vec![("x", tensor(&mut g, &shape, -2.0, 2.0))]);
        for axis in 0..3 {
            assert_gradients("softmax", &s, |tape, p| {
                let y = tape.softmax(p.get("x")?, axis)?;
                weighted_sum(tape, y)
            });
        }
    }
}

#[test]
pub fn layer_norm_plain_and_affine() {
    for t in 0..TRIALS {
        let mut g = rng(700 + t);
        let (r, d) = (dims(&mut g, 1, 4), dims(&mut g, 2, 6));
        let mut s = store(vec![("x", tensor(&mut g, &[2, r, d], -2.0, 2.0))]);
        s.insert("ln.g", tensor(&mut g, &[d], 0.5, 1.5));
        s.insert("ln.b", tensor(&mut g, &[d], -0.5, 0.5));
        assert_gradients("layer_norm", &s, |tape, p| {
            let y = tape.layer_norm(p.get("x")?, 1)?;
            let z = p.layer_norm(tape, "ln", p.get("x")?)?;
            let w = tape.mul(y, z)?;
            weighted_sum(tape, w)
        });
    }
}

#[test]
pub fn embedding_with_repeated_ids() {
    for t in 0..TRIALS {
        let mut g = rng(800 + t);
        let (rows, dim) = (dims(&mut g, 2, 6), dims(&mut g, 1, 5));
        let ids: Vec<usize> = (0..dims(&mut g, 1, 8)).map(|_| g.gen_range(0..rows)).collect();
        let s = store(vec![("table", tensor(&mut g, &[rows, dim], -1.0, 1.0))]);
        assert_gradients("embedding", &s, |tape, p| {
            let e = tape.embedding(p.get("table")?, &ids)?;
            let e2 = tape.mul(e, e)?;
            weighted_sum(tape, e2)
        });
    }
}

#[test]
pub fn concat_reshape_permute_repeat() {
    for t in 0..TRIALS {
        let mut g = rng(900 + t);
        let (a, b, c) = (dims(&mut g, 1, 3), dims(&mut g, 1, 4), dims(&mut g, 1, 4));
        let s = store(vec![
            ("x", tensor(&mut g, &[a, b, c], -1.0, 1.0)),
            ("y", tensor(&mut g, &[a, 2, c], -1.0, 1.0)),
        ]);
        assert_gradients("concat/reshape/permute/repeat", &s, |tape, p| {
            let z = tape.concat(&[p.get("x")?, p.get("y")?], 1)?;
            let z = tape.permute(z, &[2, 0, 1])?;
            let z = tape.reshape(z, &[c * a, b + 2])?;
            let z = tape.repeat_rows(z, 3);
            let z2 = tape.mul(z, z)?;
            let w = tape.concat(&[z2, z], 0)?;
            weighted_sum(tape, w)
        });
    }
}

#[test]
pub fn masked_fill_and_reductions() {
    for t in 0..TRIALS {
        let mut g = rng(1000 + t);
        let (a, b) = (dims(&mut g, 2, 4), dims(&mut g, 2, 5));
        let mask: Vec<bool> = (0..b).map(|i| i % 2 == 1).collect();
        let s = store(vec![("x", tensor(&mut g, &[a, b], -1.0, 1.0))]);
        assert_gradients("masked_fill/sum/mean", &s, |tape, p| {
            let x = p.get("x")?;
            let f = tape.masked_fill(x, &mask, &[1, b], 0.25)?;
            let f = tape.mul(f, x)?;
            let r0 = tape.sum(f, Some(0))?;
            let r1 = tape.mean(f, Some(1))?;
            let all = tape.mean(f, None)?;
            let s0 = weighted_sum(tape, r0)?;
            let s1 = weighted_sum(tape, r1)?;
            let s = tape.add(s0, s1)?;
            tape.add(s, all)
        });
    }
}

#[test]
pub fn linear_layer() {
    for t in 0..TRIALS {
        let mut g = rng(1100 + t);
        let (n, i, o) = (dims(&mut g, 1, 5), dims(&mut g, 1, 5), dims(&mut g, 1, 5));
        let mut s = store(vec![("x", tensor(&mut g, &[n, i], -1.0, 1.0))]);
        s.insert("lin.w", tensor(&mut g, &[i, o], -1.0, 1.0));
        s.insert("lin.b", tensor(&mut g, &[o], -1.0, 1.0));
        assert_gradients("linear", &s, |tape, p| {
            let y = p.linear(tape, "lin", p.get("x")?)?;
            let y = tape.tanh(y);
            weighted_sum(tape, y)
        });
    }
}

#[test]
pub fn chamfer_density_bce() {
    for t in 0..TRIALS {
        let mut g = rng(1200 + t);
        let (p, q) = (dims(&mut g, 1, 12), dims(&mut g, 1, 12));
        let s = store(vec![
            ("pred", tensor(&mut g, &[p, 3], -0.95, 0.95)),
            ("trg", tensor(&mut g, &[q, 3], -0.95, 0.95)),
            ("logit", tensor(&mut g, &[p], -2.0, 2.0)),
        ]);
        let labels: Vec<bool> = (0..p).map(|_| g.gen_bool(0.5)).collect();
        assert_gradients("chamfer", &s, |tape, b| tape.chamfer(b.get("pred")?, b.get("trg")?));
        for dims3 in [[2, 2, 2], [3, 4, 5], DEFAULT_DENSITY_GRID] {
            assert_gradients("density", &s, |tape, b| {
                tape.density(b.get("pred")?, b.get("trg")?, dims3)
            });
        }
        assert_gradients("bce", &s, |tape, b| {
            let pr = tape.sigmoid(b.get("logit")?);
            tape.bce(pr, &labels)
        });
    }
}

fn sixteen_point_patch(seed: u64) -> Patch {
    let mut g = rng(seed);
    let n_valid = 12;
    let mut pts: Vec<Vec3> = points(&mut g, n_valid, 0.9);
    pts.resize(16, Vec3::zeros());
    Patch {
        node_id: 4,
        cell_index: 0,
        class_id: 3,
        layer: 3,
        points_local: pts,
        valid_mask: (0..16).map(|i| i < n_valid).collect(),
        n_valid,
        obb: ObbAttributes::axis_aligned(Vec3::new(1.0, 2.0, 0.5), Vec3::new(2.0, 1.0, 3.0)),
    }
}

/// Full forward graph: masked encoder, decoder, weighted total loss.
fn full_loss(
    tape: &mut Tape<f64>,
    b: &sgpc_core::numerics::Bound,
    cfg: &sgpc_core::model::LayerConfig,
    patch: &Patch,
) -> sgpc_core::Result<sgpc_core::numerics::Var> {
    let padded: Vec<bool> = patch.valid_mask.iter().map(|v| !v).collect();
    let z = encoder_forward(
        tape,
        b,
        &cfg.encoder,
        &patch.points_local,
        &padded,
        patch.class_id as usize,
    )?;
    let init = sample_coarse_init(cfg.decoder.m, 17);
    let out = decoder_forward(tape, b, &cfg.decoder, z, &init)?;
    let w = LossWeights::scheduled([0.5, 10.0, 1.0, 0.5], 0.98, 0);
    Ok(tape_loss(tape, &out, patch, &w, [4, 4, 4])?.total)
}

#[test]
pub fn full_graph_on_a_sixteen_point_patch() {
    let cfg = tiny_layer(16, 8);
    let model = LayerModel::init(3, cfg, 5, 21).unwrap();
    let mut params: ParameterStore<f64> = model.params.cast();
    // Move FiLM off its identity initialization so its gradients are generic.
    let mut g = rng(22);
    for (name, p) in params.iter_mut() {
        if name.contains("film") {
            for v in p.value.data_mut() {
                *v += g.gen_range(-0.2..0.2);
            }
        }
    }
    let patch = sixteen_point_patch(23);
    let r = assert_gradients("encoder+decoder+loss", &params, |tape, b| {
        full_loss(tape, b, &cfg, &patch)
    });
    assert_eq!(r.checked, params.numel());
}
