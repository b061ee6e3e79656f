//! Training objective: fine and coarse Chamfer, soft-occupancy density
//! regularizer, and confidence-mask cross-entropy, with exponentially
//! decaying auxiliary weights.

use crate::decoder::{DecoderVars, Reconstruction};
use crate::geometry::{KdTree, Vec3};
use crate::numerics::tape::{bce_bounds, soft_occupancy};
use crate::numerics::{Real, Tape, Var};
use crate::patching::Patch;
use crate::{Error, Result};

pub const DEFAULT_DENSITY_GRID: [usize; 3] = [8, 8, 8];
/// Initial weights of the coarse Chamfer, density and the two mask terms. The
/// mask weights are small: larger ones stall the Chamfer terms at desk scale.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.5, 10.0, 0.05, 0.02];
pub const DEFAULT_DECAY: f64 = 0.98;

/// Mean squared nearest-neighbour distance from each point of `from` to `to`.
fn directed(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = KdTree::new(to);
    let total: f64 = from.iter().map(|p| tree.nearest(p).expect("non-empty").1).sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance: half the mean squared nearest-neighbour
/// distance in each direction.
pub fn chamfer(src: &[Vec3], trg: &[Vec3]) -> Result<f64> {
    if src.is_empty() || trg.is_empty() {
        return Err(Error::Empty("chamfer"));
    }
    Ok(0.5 * directed(trg, src) + 0.5 * directed(src, trg))
}

/// Normalized soft-occupancy grid over `[-1, 1]^3` (trilinear weights).
pub fn soft_grid(points: &[Vec3], dims: [usize; 3]) -> Vec<f64> {
    let flat: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    soft_occupancy(&flat, dims)
}

/// Mean squared difference of the two normalized soft-occupancy grids.
pub fn density_loss(src: &[Vec3], trg: &[Vec3], dims: [usize; 3]) -> Result<f64> {
    if src.is_empty() || trg.is_empty() {
        return Err(Error::Empty("density_loss"));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("density grid dims must be positive"));
    }
    let (a, b) = (soft_grid(src, dims), soft_grid(trg, dims));
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (y - x) * (y - x)).sum();
    Ok(sum / a.len() as f64)
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn mask_bce(truth: &[bool], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "mask_bce",
            lhs: vec![truth.len()],
            rhs: vec![pred.len()],
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("mask_bce"));
    }
    let (lo, hi) = bce_bounds::<f64>();
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(&y, &p)| {
            let c = p.clamp(lo, hi);
            if y {
                c.ln()
            } else {
                (1.0 - c).ln()
            }
        })
        .sum();
    Ok(-sum / truth.len() as f64)
}

/// Ground truth for the coarse confidences: the first `ceil(n_valid / G)`
/// slots.
pub fn coarse_target(n_valid: usize, m: usize, g: usize) -> Vec<bool> {
    let k = n_valid.div_ceil(g).min(m);
    (0..m).map(|i| i < k).collect()
}

/// Auxiliary weights `lambda_i(epoch) = lambda_i(0) * decay^epoch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambdas: [f64; 4],
    pub decay: f64,
    pub epoch: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        schedule_lambdas(0)
    }
}

impl LossWeights {
    pub fn scheduled(initial: [f64; 4], decay: f64, epoch: u32) -> Self {
        let f = decay.powi(epoch as i32);
        Self {
            lambdas: initial.map(|l| l * f),
            decay,
            epoch,
        }
    }

    pub fn zero() -> Self {
        Self {
            lambdas: [0.0; 4],
            decay: 1.0,
            epoch: 0,
        }
    }
}

/// Default schedule at `epoch`.
pub fn schedule_lambdas(epoch: u32) -> LossWeights {
    LossWeights::scheduled(DEFAULT_LAMBDAS, DEFAULT_DECAY, epoch)
}

/// The five loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub fine_cd: f64,
    pub coarse_cd: f64,
    pub density: f64,
    pub mask_fine: f64,
    pub mask_coarse: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(
        fine_cd: f64,
        coarse_cd: f64,
        density: f64,
        mask_fine: f64,
        mask_coarse: f64,
        w: &LossWeights,
    ) -> Self {
        let l = w.lambdas;
        Self {
            fine_cd,
            coarse_cd,
            density,
            mask_fine,
            mask_coarse,
            total: fine_cd + l[0] * coarse_cd + l[1] * density + l[2] * mask_fine + l[3] * mask_coarse,
        }
    }
}

/// Objective of a decoded patch against its ground truth, evaluated in the
/// patch's local frame.
pub fn total_loss(patch: &Patch, rec: &Reconstruction, weights: &LossWeights) -> Result<LossTerms> {
    total_loss_with_grid(patch, rec, weights, DEFAULT_DENSITY_GRID)
}

pub fn total_loss_with_grid(
    patch: &Patch,
    rec: &Reconstruction,
    weights: &LossWeights,
    grid: [usize; 3],
) -> Result<LossTerms> {
    let local = |pts: &[Vec3]| pts.iter().map(|p| patch.obb.normalize(p)).collect::<Vec<_>>();
    let fine = local(&rec.points_world);
    let coarse = local(&rec.coarse_points_world);
    let truth = patch.valid_points();
    if rec.confidence.len() != patch.capacity() {
        return Err(Error::ShapeMismatch {
            op: "total_loss",
            lhs: vec![rec.confidence.len()],
            rhs: vec![patch.capacity()],
        });
    }
    let g = fine.len() / coarse.len().max(1);
    Ok(LossTerms::combine(
        chamfer(&fine, truth)?,
        chamfer(&coarse, truth)?,
        density_loss(&fine, truth, grid)?,
        mask_bce(&patch.valid_mask, &rec.confidence)?,
        mask_bce(&coarse_target(patch.n_valid, coarse.len(), g), &rec.coarse_confidence)?,
        weights,
    ))
}

/// Tape handles of the five terms and the total.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub fine_cd: Var,
    pub coarse_cd: Var,
    pub density: Var,
    pub mask_fine: Var,
    pub mask_coarse: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> LossTerms {
        let v = |x: Var| tape.item(x).as_f64();
        LossTerms {
            fine_cd: v(self.fine_cd),
            coarse_cd: v(self.coarse_cd),
            density: v(self.density),
            mask_fine: v(self.mask_fine),
            mask_coarse: v(self.mask_coarse),
            total: v(self.total),
        }
    }
}

/// Differentiable objective for one decoded patch (local frame).
pub fn tape_loss<T: Real>(
    tape: &mut Tape<T>,
    out: &DecoderVars,
    patch: &Patch,
    weights: &LossWeights,
    grid: [usize; 3],
) -> Result<LossVars> {
    if patch.n_valid == 0 {
        return Err(Error::Empty("tape_loss"));
    }
    let truth = crate::encoder::points_var(tape, patch.valid_points())?;
    let m = tape.shape(out.coarse)[0];
    let g = tape.shape(out.fine)[0] / m;
    let fine_cd = tape.chamfer(out.fine, truth)?;
    let coarse_cd = tape.chamfer(out.coarse, truth)?;
    let density = tape.density(out.fine, truth, grid)?;
    let mask_fine = tape.bce(out.fine_conf, &patch.valid_mask)?;
    let mask_coarse = tape.bce(out.coarse_conf, &coarse_target(patch.n_valid, m, g))?;
    let mut total = fine_cd;
    for (term, l) in [coarse_cd, density, mask_fine, mask_coarse]
        .into_iter()
        .zip(weights.lambdas)
    {
        let s = tape.scale(term, T::of(l));
        total = tape.add(total, s)?;
    }
    Ok(LossVars {
        fine_cd,
        coarse_cd,
        density,
        mask_fine,
        mask_coarse,
        total,
    })
}
