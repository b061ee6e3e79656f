//! Minibatch training of the layer autoencoders.

use rand::seq::SliceRandom;

use crate::decoder::{decoder_forward, sample_coarse_init};
use crate::encoder::encoder_forward;
use crate::losses::{tape_loss, LossTerms, LossWeights, DEFAULT_DECAY, DEFAULT_DENSITY_GRID, DEFAULT_LAMBDAS};
use crate::model::{CodecModel, LayerModel};
use crate::numerics::{adam_step, AdamConfig, Tape};
use crate::patching::Patch;
use crate::{rng, Error, Result, NUM_LAYERS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub lambdas: [f64; 4],
    pub decay: f64,
    pub density_grid: [usize; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 1,
            batch_size: 8,
            seed: 0,
            lambdas: DEFAULT_LAMBDAS,
            decay: DEFAULT_DECAY,
            density_grid: DEFAULT_DENSITY_GRID,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self, epoch: u32) -> LossWeights {
        LossWeights::scheduled(self.lambdas, self.decay, epoch)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub layer: u8,
    pub epoch: u32,
    pub step: u64,
    pub terms: LossTerms,
}

pub const LOG_HEADER: &str = "epoch,step,fine_cd,coarse_cd,density,mask_fine,mask_coarse,total";

impl LogRow {
    pub fn csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            self.epoch, self.step, t.fine_cd, t.coarse_cd, t.density, t.mask_fine, t.mask_coarse, t.total
        )
    }
}

/// Loss of one patch through a training-mode tape; gradients are added into
/// the model with weight `scale`.
fn patch_pass(
    model: &mut LayerModel,
    patch: &Patch,
    weights: &LossWeights,
    grid: [usize; 3],
    tape_seed: u64,
    scale: f32,
) -> Result<LossTerms> {
    let cfg = model.config;
    let mut tape = Tape::<f32>::training(tape_seed);
    let b = model.params.bind(&mut tape);
    let valid = patch.valid_points();
    let z = encoder_forward(
        &mut tape,
        &b,
        &cfg.encoder,
        valid,
        &vec![false; valid.len()],
        patch.class_id as usize,
    )?;
    let init = sample_coarse_init(cfg.decoder.m, rng::decode_seed(patch.node_id, patch.cell_index));
    let out = decoder_forward(&mut tape, &b, &cfg.decoder, z, &init)?;
    let loss = tape_loss(&mut tape, &out, patch, weights, grid)?;
    tape.backward(loss.total)?;
    model.params.accumulate(&tape, &b, scale);
    Ok(loss.values(&tape))
}

/// One Adam step on the mean loss over `batch`. Returns the mean terms.
pub fn train_step(
    model: &mut LayerModel,
    batch: &[&Patch],
    weights: &LossWeights,
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossTerms> {
    let batch: Vec<&&Patch> = batch.iter().filter(|p| p.n_valid > 0).collect();
    if batch.is_empty() {
        return Err(Error::Empty("train_step"));
    }
    for p in &batch {
        if p.layer != model.layer || p.capacity() != model.config.capacity {
            return Err(Error::ConfigMismatch(format!(
                "patch {}/{} (layer {}, {} slots) does not fit the layer {} model ({} slots)",
                p.node_id,
                p.cell_index,
                p.layer,
                p.capacity(),
                model.layer,
                model.config.capacity
            )));
        }
    }
    model.params.zero_grad();
    let scale = 1.0 / batch.len() as f32;
    let mut mean = LossTerms::default();
    for (i, p) in batch.iter().enumerate() {
        let seed = rng::mix64(&[cfg.seed, model.layer as u64, step, i as u64]);
        let t = patch_pass(model, p, weights, cfg.density_grid, seed, scale)?;
        let k = batch.len() as f64;
        mean.fine_cd += t.fine_cd / k;
        mean.coarse_cd += t.coarse_cd / k;
        mean.density += t.density / k;
        mean.mask_fine += t.mask_fine / k;
        mean.mask_coarse += t.mask_coarse / k;
        mean.total += t.total / k;
    }
    adam_step(&mut model.params, &cfg.adam)?;
    Ok(mean)
}

/// One shuffled pass over `patches`; returns the next step index.
pub fn train_epoch(
    model: &mut LayerModel,
    patches: &[&Patch],
    cfg: &TrainConfig,
    epoch: u32,
    step0: u64,
    mut on_step: impl FnMut(&LogRow),
) -> Result<u64> {
    let usable: Vec<&Patch> = patches.iter().copied().filter(|p| p.n_valid > 0).collect();
    let mut step = step0;
    if usable.is_empty() {
        return Ok(step);
    }
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.shuffle(&mut rng::stream(rng::mix64(&[
        cfg.seed,
        model.layer as u64,
        epoch as u64,
    ])));
    let weights = cfg.weights(epoch);
    for chunk in order.chunks(cfg.batch_size.max(1)) {
        let batch: Vec<&Patch> = chunk.iter().map(|&i| usable[i]).collect();
        let terms = train_step(model, &batch, &weights, cfg, step)?;
        on_step(&LogRow {
            layer: model.layer,
            epoch,
            step,
            terms,
        });
        step += 1;
    }
    Ok(step)
}

/// Trains one layer for `cfg.epochs`, calling `on_step` after every step and
/// `on_epoch` after every epoch.
pub fn train_layer(
    model: &mut LayerModel,
    patches: &[&Patch],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogRow),
    mut on_epoch: impl FnMut(u32, &LayerModel) -> Result<()>,
) -> Result<()> {
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        step = train_epoch(model, patches, cfg, epoch, step, &mut on_step)?;
        on_epoch(epoch, model)?;
    }
    Ok(())
}

/// Trains all layers on their patches. Each epoch visits layers 1 to 4 in
/// turn and then calls `on_epoch`; the step counter runs on across layers
/// and epochs. Layers without patches keep their initialization.
pub fn train_model(
    model: &mut CodecModel,
    patches: &[Patch],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LogRow),
    mut on_epoch: impl FnMut(u32, &CodecModel) -> Result<()>,
) -> Result<()> {
    let by_layer: Vec<Vec<&Patch>> = (1..=NUM_LAYERS as u8)
        .map(|l| patches.iter().filter(|p| p.layer == l).collect())
        .collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for (i, mine) in by_layer.iter().enumerate() {
            step = train_epoch(model.layer_mut(i as u8 + 1), mine, cfg, epoch, step, &mut on_step)?;
        }
        on_epoch(epoch, model)?;
    }
    Ok(())
}
