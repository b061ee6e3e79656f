//! Patch encoder: point and positional embeddings, class-conditioned FiLM,
//! masked transformer blocks, spatial-attention pooling and the latent
//! projection.
//!
//! Parameter names (all under `enc.`):
//!
//! | name | shape |
//! |---|---|
//! | `feat`, `pos`, `pos_proj` | linear 3→D_f, 3→D_p, D_p→D_f |
//! | `class_emb` | `[rows, D_s]` |
//! | `film_g1`, `film_g2`, `film_b1`, `film_b2` | linear D_s→D_s, D_s→D_f |
//! | `blk{i}.wq/wk/wv/wo`, `blk{i}.ln1/ln2`, `blk{i}.ff1/ff2` | attention, norms, 4·D_f feed-forward |
//! | `pool1`, `pool2` | linear (3+D_p)→D_f, D_f→1 |
//! | `latent` | linear D_f→D_z |

use rand::Rng;

use crate::geometry::Vec3;
use crate::numerics::{Bound, ParameterStore, Real, Tape, Tensor, Var};
use crate::patching::Patch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub d_f: usize,
    pub d_p: usize,
    pub d_s: usize,
    pub d_z: usize,
    pub blocks: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_f: 128,
            d_p: 64,
            d_s: 32,
            d_z: 16,
            blocks: 4,
            heads: 4,
            dropout: 0.1,
        }
    }
}

/// Latent widths accepted by release configurations.
pub const RELEASE_LATENT_DIMS: [usize; 5] = [8, 16, 32, 64, 128];

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.d_f, self.d_p, self.d_s, self.d_z, self.heads];
        if dims.contains(&0) {
            return Err(Error::ConfigMismatch(format!(
                "encoder dims must be positive: {self:?}"
            )));
        }
        if !self.d_f.is_multiple_of(self.heads) {
            return Err(Error::ConfigMismatch(format!(
                "D_f = {} is not divisible by {} heads",
                self.d_f, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::ConfigMismatch(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn init_params<T: Real>(&self, store: &mut ParameterStore<T>, class_rows: usize, rng: &mut impl Rng) {
        let (f, p, s) = (self.d_f, self.d_p, self.d_s);
        store.add_linear("enc.feat", 3, f, rng);
        store.add_linear("enc.pos", 3, p, rng);
        store.add_linear("enc.pos_proj", p, f, rng);
        store.add_embedding("enc.class_emb", class_rows, s, rng);
        store.add_linear("enc.film_g1", s, s, rng);
        store.add_constant_linear("enc.film_g2", s, f, 1.0);
        store.add_linear("enc.film_b1", s, s, rng);
        store.add_constant_linear("enc.film_b2", s, f, 0.0);
        for i in 0..self.blocks {
            for w in ["wq", "wk", "wv", "wo"] {
                store.add_linear(&format!("enc.blk{i}.{w}"), f, f, rng);
            }
            store.add_layer_norm(&format!("enc.blk{i}.ln1"), f);
            store.add_linear(&format!("enc.blk{i}.ff1"), f, 4 * f, rng);
            store.add_linear(&format!("enc.blk{i}.ff2"), 4 * f, f, rng);
            store.add_layer_norm(&format!("enc.blk{i}.ln2"), f);
        }
        store.add_linear("enc.pool1", 3 + p, f, rng);
        store.add_linear("enc.pool2", f, 1, rng);
        store.add_linear("enc.latent", f, self.d_z, rng);
    }
}

/// A patch's latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub values: Vec<f32>,
    pub layer: u8,
}

/// `[N, 3]` constant holding local coordinates.
pub fn points_var<T: Real>(tape: &mut Tape<T>, points: &[Vec3]) -> Result<Var> {
    let data = points
        .iter()
        .flat_map(|p| [T::of(p.x), T::of(p.y), T::of(p.z)])
        .collect();
    tape.constant_from(&[points.len(), 3], data)
}

/// Returns `(H0, P)`: `H0 = feat(x) + pos_proj(pos(x))` and the raw
/// positional embedding `P = pos(x)`.
pub fn embed_points<T: Real>(tape: &mut Tape<T>, b: &Bound, x: Var) -> Result<(Var, Var)> {
    let f = b.linear(tape, "enc.feat", x)?;
    let p = b.linear(tape, "enc.pos", x)?;
    let pp = b.linear(tape, "enc.pos_proj", p)?;
    Ok((tape.add(f, pp)?, p))
}

/// `gamma(s) * h + beta(s)` with `s` the class embedding, shared by all rows.
pub fn film_modulate<T: Real>(tape: &mut Tape<T>, b: &Bound, h: Var, class_id: usize) -> Result<Var> {
    let table = b.get("enc.class_emb")?;
    let s = tape.embedding(table, &[class_id])?;
    let head = |tape: &mut Tape<T>, first: &str, second: &str| -> Result<Var> {
        let hidden = b.linear(tape, first, s)?;
        let hidden = tape.relu(hidden);
        b.linear(tape, second, hidden)
    };
    let gamma = head(tape, "enc.film_g1", "enc.film_g2")?;
    let beta = head(tape, "enc.film_b1", "enc.film_b2")?;
    let scaled = tape.mul(h, gamma)?;
    tape.add(scaled, beta)
}

/// Multi-head self-attention over rows, ignoring padded keys. Also returns
/// the `[heads, N, N]` attention weights.
pub fn self_attention<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    prefix: &str,
    cfg: &EncoderConfig,
    h: Var,
    padded: &[bool],
) -> Result<(Var, Var)> {
    let n = tape.shape(h)[0];
    let (heads, dh) = (cfg.heads, cfg.d_f / cfg.heads);
    let split = |tape: &mut Tape<T>, name: &str| -> Result<Var> {
        let y = b.linear(tape, &format!("{prefix}.{name}"), h)?;
        let y = tape.reshape(y, &[n, heads, dh])?;
        tape.permute(y, &[1, 0, 2])
    };
    let q = split(tape, "wq")?;
    let k = split(tape, "wk")?;
    let v = split(tape, "wv")?;
    let logits = tape.matmul_nt(q, k)?;
    let mut logits = tape.scale(logits, T::of(1.0 / (dh as f64).sqrt()));
    if padded.iter().any(|&p| p) {
        logits = tape.masked_fill(logits, padded, &[1, 1, n], T::neg_infinity())?;
    }
    let attn = tape.softmax(logits, 2)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.permute(ctx, &[1, 0, 2])?;
    let ctx = tape.reshape(ctx, &[n, cfg.d_f])?;
    Ok((b.linear(tape, &format!("{prefix}.wo"), ctx)?, attn))
}

/// `H' = Norm(H + Drop(MHA(H)))`, `out = Norm(H' + Drop(FFN(H')))`, padded
/// rows zeroed.
pub fn transformer_block<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &EncoderConfig,
    index: usize,
    h: Var,
    padded: &[bool],
) -> Result<Var> {
    let prefix = format!("enc.blk{index}");
    let (att, _) = self_attention(tape, b, &prefix, cfg, h, padded)?;
    let att = tape.dropout(att, cfg.dropout);
    let h1 = tape.add(h, att)?;
    let h1 = b.layer_norm(tape, &format!("{prefix}.ln1"), h1)?;
    let ff = b.linear(tape, &format!("{prefix}.ff1"), h1)?;
    let ff = tape.relu(ff);
    let ff = b.linear(tape, &format!("{prefix}.ff2"), ff)?;
    let ff = tape.dropout(ff, cfg.dropout);
    let h2 = tape.add(h1, ff)?;
    let out = b.layer_norm(tape, &format!("{prefix}.ln2"), h2)?;
    if padded.iter().any(|&p| p) {
        let n = padded.len();
        return tape.masked_fill(out, padded, &[n, 1], T::zero());
    }
    Ok(out)
}

/// Softmax-weighted sum of rows with scores from `(x || p)`; padded slots get
/// zero weight. Returns `(g [1, D_f], weights [N, 1])`.
pub fn spatial_attention_pool<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    h: Var,
    x: Var,
    p: Var,
    padded: &[bool],
) -> Result<(Var, Var)> {
    let n = padded.len();
    if padded.iter().all(|&m| m) {
        return Err(Error::Empty("spatial_attention_pool"));
    }
    let xp = tape.concat(&[x, p], 1)?;
    let s = b.linear(tape, "enc.pool1", xp)?;
    let s = tape.relu(s);
    let mut s = b.linear(tape, "enc.pool2", s)?;
    if padded.iter().any(|&m| m) {
        s = tape.masked_fill(s, padded, &[n, 1], T::neg_infinity())?;
    }
    let alpha = tape.softmax(s, 0)?;
    let row = tape.reshape(alpha, &[1, n])?;
    Ok((tape.matmul(row, h)?, alpha))
}

/// Full encoder on `points` (`[N, 3]`, local frame) with `padded[j]` marking
/// padding slots. Returns the `[1, D_z]` latent.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &EncoderConfig,
    points: &[Vec3],
    padded: &[bool],
    class_id: usize,
) -> Result<Var> {
    if points.len() != padded.len() {
        return Err(Error::ShapeMismatch {
            op: "encoder",
            lhs: vec![points.len(), 3],
            rhs: vec![padded.len()],
        });
    }
    if padded.iter().all(|&m| m) {
        return Err(Error::Empty("encoder"));
    }
    let x = points_var(tape, points)?;
    let (h0, p) = embed_points(tape, b, x)?;
    let mut h = film_modulate(tape, b, h0, class_id)?;
    for i in 0..cfg.blocks {
        h = transformer_block(tape, b, cfg, i, h, padded)?;
    }
    let (g, _) = spatial_attention_pool(tape, b, h, x, p, padded)?;
    b.linear(tape, "enc.latent", g)
}

/// Encodes a canonical patch in evaluation mode.
///
/// Only the valid prefix is fed through the network: padded rows never
/// receive attention and are excluded from pooling, so dropping them gives
/// the same latent as running the masked full-size input.
pub fn encode_patch(patch: &Patch, cfg: &EncoderConfig, params: &ParameterStore<f32>) -> Result<Latent> {
    patch.check_canonical()?;
    let valid = &patch.points_local[..patch.n_valid];
    let mut tape = Tape::<f32>::new();
    let b = params.bind(&mut tape);
    let z = encoder_forward(
        &mut tape,
        &b,
        cfg,
        valid,
        &vec![false; valid.len()],
        patch.class_id as usize,
    )?;
    Ok(Latent {
        values: tape.value(z).to_vec(),
        layer: patch.layer,
    })
}

/// Latent of the full masked input, without the prefix shortcut.
pub fn encode_patch_masked(patch: &Patch, cfg: &EncoderConfig, params: &ParameterStore<f32>) -> Result<Latent> {
    let padded: Vec<bool> = patch.valid_mask.iter().map(|&v| !v).collect();
    let mut tape = Tape::<f32>::new();
    let b = params.bind(&mut tape);
    let z = encoder_forward(
        &mut tape,
        &b,
        cfg,
        &patch.points_local,
        &padded,
        patch.class_id as usize,
    )?;
    Ok(Latent {
        values: tape.value(z).to_vec(),
        layer: patch.layer,
    })
}

/// Latent dimension recorded in an encoder parameter set.
pub fn latent_dim<T: Real>(params: &ParameterStore<T>) -> Result<usize> {
    let w: &Tensor<T> = params.value("enc.latent.w")?;
    Ok(w.shape()[1])
}
