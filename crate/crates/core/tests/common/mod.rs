//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sgpc_core::encoder::EncoderConfig;
use sgpc_core::geometry::Vec3;
use sgpc_core::model::LayerConfig;
use sgpc_core::numerics::{gradcheck, Bound, ParameterStore, Tape, Tensor, Var};
use sgpc_core::Result;

pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    sgpc_core::rng::stream(seed)
}

pub fn tensor(g: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| g.gen_range(lo..hi))
}

/// Values bounded away from zero, so kinks at zero stay out of reach of
/// finite differences.
pub fn tensor_off_zero(g: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = g.gen_range(0.1..1.0);
        if g.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn points(g: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(g.gen_range(-r..r), g.gen_range(-r..r), g.gen_range(-r..r)))
        .collect()
}

pub fn store(items: Vec<(&str, Tensor<f64>)>) -> ParameterStore<f64> {
    let mut s = ParameterStore::new();
    for (name, t) in items {
        s.insert(name, t);
    }
    s
}

/// `sum(v * w)` with fixed, non-uniform weights so that no gradient
/// vanishes by symmetry.
pub fn weighted_sum(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| 1.1 + (i as f64 * 0.73 + 0.3).sin()).collect();
    let w = tape.constant_from(&shape, w)?;
    let p = tape.mul(v, w)?;
    tape.sum(p, None)
}

/// Runs the finite-difference check on every entry and asserts the bound.
pub fn assert_gradients<F>(what: &str, store: &ParameterStore<f64>, f: F) -> gradcheck::GradReport
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let r = gradcheck::check(store, None, f).unwrap();
    assert!(
        r.passes(GRAD_TOL),
        "{what}: max relative error {} at {:?}",
        r.max_rel_err,
        r.worst
    );
    r
}

/// A deliberately tiny layer configuration for fast end-to-end tests.
pub fn tiny_layer(capacity: usize, d_z: usize) -> LayerConfig {
    let mut c = LayerConfig::new(
        capacity,
        EncoderConfig {
            d_f: 8,
            d_p: 4,
            d_s: 4,
            d_z,
            blocks: 1,
            heads: 2,
            dropout: 0.0,
        },
    );
    c.decoder.d_fc = 8;
    c.decoder.coarse_hidden = 16;
    c.decoder.head_hidden = 8;
    c.decoder.fold_hidden = 8;
    c
}
