//! Folding decoder: seeded uniform coarse points moved by latent-driven
//! offsets, each expanded into a `g x g` grid of fine points, with coarse
//! and fine confidence heads.
//!
//! Parameter names (all under `dec.`): `coarse1`, `coarse2` (latent to
//! `M * D_fc` features), `off1`, `off2` (offsets), `cmask1`, `cmask2`
//! (coarse confidence), `fold1`, `fold2` (grid deformation), `fmask1`,
//! `fmask2` (fine confidence, `G` logits per coarse row).

use rand::Rng;

use crate::geometry::{ObbAttributes, Vec3};
use crate::numerics::{Bound, ParameterStore, Real, Tape, Var};
use crate::patching::denormalize_patch;
use crate::{rng, Error, Result};

pub const OFFSET_SCALE: f64 = 1.0;
pub const FOLD_SCALE: f64 = 0.5;
pub const GRID_HALF_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Coarse point count.
    pub m: usize,
    /// Folding grid side; `G = grid * grid`.
    pub grid: usize,
    pub d_fc: usize,
    pub coarse_hidden: usize,
    pub head_hidden: usize,
    pub fold_hidden: usize,
}

impl DecoderConfig {
    pub fn for_capacity(capacity: usize) -> Self {
        Self {
            m: capacity / 4,
            grid: 2,
            d_fc: 32,
            coarse_hidden: 128,
            head_hidden: 32,
            fold_hidden: 64,
        }
    }

    /// `G`, the fine points per coarse point.
    pub fn g(&self) -> usize {
        self.grid * self.grid
    }

    /// `N = M * G`.
    pub fn capacity(&self) -> usize {
        self.m * self.g()
    }

    pub fn validate(&self, capacity: usize) -> Result<()> {
        let dims = [
            self.m,
            self.grid,
            self.d_fc,
            self.coarse_hidden,
            self.head_hidden,
            self.fold_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::ConfigMismatch(format!(
                "decoder dims must be positive: {self:?}"
            )));
        }
        if self.capacity() != capacity {
            return Err(Error::ConfigMismatch(format!(
                "decoder produces M*G = {} points but the layer holds {capacity}",
                self.capacity()
            )));
        }
        Ok(())
    }

    pub fn init_params<T: Real>(&self, store: &mut ParameterStore<T>, d_z: usize, rng: &mut impl Rng) {
        let (c, h) = (self.d_fc, self.head_hidden);
        store.add_linear("dec.coarse1", d_z, self.coarse_hidden, rng);
        store.add_linear("dec.coarse2", self.coarse_hidden, self.m * c, rng);
        store.add_linear("dec.off1", c, h, rng);
        store.add_linear("dec.off2", h, 3, rng);
        store.add_linear("dec.cmask1", c, h, rng);
        store.add_linear("dec.cmask2", h, 1, rng);
        store.add_linear("dec.fold1", c + 2, self.fold_hidden, rng);
        store.add_linear("dec.fold2", self.fold_hidden, 3, rng);
        store.add_linear("dec.fmask1", c + 1, h, rng);
        store.add_linear("dec.fmask2", h, self.g(), rng);
    }

    /// Lattice coordinates `g_n`, row-major over `[-0.25, 0.25]^2`.
    pub fn grid_points(&self) -> Vec<[f64; 2]> {
        let s = self.grid;
        let coord = |i: usize| {
            if s == 1 {
                0.0
            } else {
                -GRID_HALF_WIDTH + 2.0 * GRID_HALF_WIDTH * i as f64 / (s - 1) as f64
            }
        };
        (0..s).flat_map(|a| (0..s).map(move |b| [coord(a), coord(b)])).collect()
    }
}

/// `M` points uniform in `[-1, 1]^3` from the stream keyed by `seed`.
pub fn sample_coarse_init(m: usize, seed: u64) -> Vec<Vec3> {
    let mut g = rng::stream(seed);
    (0..m)
        .map(|_| {
            Vec3::new(
                g.gen_range(-1.0..=1.0),
                g.gen_range(-1.0..=1.0),
                g.gen_range(-1.0..=1.0),
            )
        })
        .collect()
}

/// Tape handles of one decoder pass.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    /// `[M, D_fc]`
    pub features: Var,
    /// `[M, 3]`
    pub coarse: Var,
    /// `[M, 1]`
    pub coarse_conf: Var,
    /// `[N, 3]`
    pub fine: Var,
    /// `[N, 1]`
    pub fine_conf: Var,
}

fn mlp<T: Real>(tape: &mut Tape<T>, b: &Bound, first: &str, second: &str, x: Var) -> Result<Var> {
    let h = b.linear(tape, first, x)?;
    let h = tape.relu(h);
    b.linear(tape, second, h)
}

/// Coarse features, positions and confidences from `z [1, D_z]`.
pub fn decode_coarse<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &DecoderConfig,
    z: Var,
    init: Var,
) -> Result<(Var, Var, Var)> {
    let f = mlp(tape, b, "dec.coarse1", "dec.coarse2", z)?;
    let f = tape.reshape(f, &[cfg.m, cfg.d_fc])?;
    let off = mlp(tape, b, "dec.off1", "dec.off2", f)?;
    let off = tape.tanh(off);
    let off = tape.scale(off, T::of(OFFSET_SCALE));
    let coarse = tape.add(init, off)?;
    let logit = mlp(tape, b, "dec.cmask1", "dec.cmask2", f)?;
    let conf = tape.sigmoid(logit);
    Ok((f, coarse, conf))
}

/// Fine points `m * G + n = coarse_m + fold(f_m, g_n)`.
pub fn fold_upsample<T: Real>(tape: &mut Tape<T>, b: &Bound, cfg: &DecoderConfig, coarse: Var, f: Var) -> Result<Var> {
    let g = cfg.g();
    let lattice: Vec<T> = (0..cfg.m)
        .flat_map(|_| cfg.grid_points())
        .flat_map(|p| [T::of(p[0]), T::of(p[1])])
        .collect();
    let lattice = tape.constant_from(&[cfg.m * g, 2], lattice)?;
    let rep = tape.repeat_rows(f, g);
    let inp = tape.concat(&[rep, lattice], 1)?;
    let d = mlp(tape, b, "dec.fold1", "dec.fold2", inp)?;
    let d = tape.tanh(d);
    let d = tape.scale(d, T::of(FOLD_SCALE));
    let base = tape.repeat_rows(coarse, g);
    tape.add(base, d)
}

/// `G` fine confidences per coarse row from `(f_m, mu_m)`, flattened to `[N, 1]`.
pub fn predict_fine_mask<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &DecoderConfig,
    f: Var,
    coarse_conf: Var,
) -> Result<Var> {
    let inp = tape.concat(&[f, coarse_conf], 1)?;
    let logits = mlp(tape, b, "dec.fmask1", "dec.fmask2", inp)?;
    let conf = tape.sigmoid(logits);
    tape.reshape(conf, &[cfg.capacity(), 1])
}

/// Decoder graph in the local frame.
pub fn decoder_forward<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &DecoderConfig,
    z: Var,
    init: &[Vec3],
) -> Result<DecoderVars> {
    if init.len() != cfg.m {
        return Err(Error::ShapeMismatch {
            op: "decoder",
            lhs: vec![init.len(), 3],
            rhs: vec![cfg.m, 3],
        });
    }
    let init = crate::encoder::points_var(tape, init)?;
    let (features, coarse, coarse_conf) = decode_coarse(tape, b, cfg, z, init)?;
    let fine = fold_upsample(tape, b, cfg, coarse, features)?;
    let fine_conf = predict_fine_mask(tape, b, cfg, features, coarse_conf)?;
    Ok(DecoderVars {
        features,
        coarse,
        coarse_conf,
        fine,
        fine_conf,
    })
}

/// Decoded patch in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub points_world: Vec<Vec3>,
    pub confidence: Vec<f64>,
    pub coarse_points_world: Vec<Vec3>,
    pub coarse_confidence: Vec<f64>,
}

impl Reconstruction {
    /// Points whose confidence is at least `threshold`.
    pub fn pruned(&self, threshold: f64) -> Vec<Vec3> {
        self.points_world
            .iter()
            .zip(&self.confidence)
            .filter(|(_, &c)| c >= threshold)
            .map(|(p, _)| *p)
            .collect()
    }
}

fn to_points<T: Real>(v: &[T]) -> Vec<Vec3> {
    v.chunks_exact(3)
        .map(|c| Vec3::new(c[0].as_f64(), c[1].as_f64(), c[2].as_f64()))
        .collect()
}

/// Decodes a latent into world points; the coarse initialization is seeded
/// from `(node_id, cell_index)`.
pub fn decode_patch(
    z: &[f32],
    obb: &ObbAttributes,
    node_id: u32,
    cell_index: u32,
    cfg: &DecoderConfig,
    params: &ParameterStore<f32>,
) -> Result<Reconstruction> {
    let init = sample_coarse_init(cfg.m, rng::decode_seed(node_id, cell_index));
    let mut tape = Tape::<f32>::new();
    let b = params.bind(&mut tape);
    let z = tape.constant_from(&[1, z.len()], z.to_vec())?;
    let out = decoder_forward(&mut tape, &b, cfg, z, &init)?;
    let conf = |v: Var| tape.value(v).iter().map(|c| c.as_f64()).collect::<Vec<_>>();
    Ok(Reconstruction {
        points_world: denormalize_patch(&to_points(tape.value(out.fine)), obb),
        confidence: conf(out.fine_conf),
        coarse_points_world: denormalize_patch(&to_points(tape.value(out.coarse)), obb),
        coarse_confidence: conf(out.coarse_conf),
    })
}
