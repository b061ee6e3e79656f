//! The four per-layer autoencoders and their combined checkpoint.
//!
//! In a checkpoint, layer `k` (1-based) stores its parameters under the
//! prefix `l{k}.`, for example `l3.enc.latent.w`.

use std::path::Path;

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::numerics::{load_checkpoint, save_checkpoint, ParameterStore};
use crate::patching::DEFAULT_LAYER_CAPS;
use crate::{rng, Error, Result, NUM_LAYERS};

/// Architecture of one layer's autoencoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerConfig {
    /// Patch capacity `N`.
    pub capacity: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl LayerConfig {
    pub fn new(capacity: usize, encoder: EncoderConfig) -> Self {
        Self {
            capacity,
            encoder,
            decoder: DecoderConfig::for_capacity(capacity),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate(self.capacity)
    }
}

/// Per-layer configurations, index 0 = terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub layers: [LayerConfig; NUM_LAYERS],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_latent_dims([16; NUM_LAYERS])
    }
}

impl ModelConfig {
    pub fn with_latent_dims(dims: [usize; NUM_LAYERS]) -> Self {
        let layers = std::array::from_fn(|i| {
            LayerConfig::new(
                DEFAULT_LAYER_CAPS[i],
                EncoderConfig {
                    d_z: dims[i],
                    ..EncoderConfig::default()
                },
            )
        });
        Self { layers }
    }

    pub fn latent_dims(&self) -> [usize; NUM_LAYERS] {
        self.layers.map(|l| l.encoder.d_z)
    }

    pub fn capacities(&self) -> [usize; NUM_LAYERS] {
        self.layers.map(|l| l.capacity)
    }

    pub fn layer(&self, layer: u8) -> &LayerConfig {
        &self.layers[layer as usize - 1]
    }

    pub fn validate(&self) -> Result<()> {
        self.layers.iter().try_for_each(LayerConfig::validate)
    }
}

/// Parameters of one layer's autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerModel {
    pub layer: u8,
    pub config: LayerConfig,
    pub params: ParameterStore<f32>,
}

impl LayerModel {
    pub fn init(layer: u8, config: LayerConfig, class_rows: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut g = rng::stream(rng::mix64(&[seed, layer as u64]));
        let mut params = ParameterStore::new();
        config.encoder.init_params(&mut params, class_rows, &mut g);
        config.decoder.init_params(&mut params, config.encoder.d_z, &mut g);
        Ok(Self { layer, config, params })
    }
}

/// All four layer models.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub config: ModelConfig,
    pub class_rows: usize,
    pub layers: Vec<LayerModel>,
}

impl CodecModel {
    pub fn init(config: ModelConfig, class_rows: usize, seed: u64) -> Result<Self> {
        let layers = (0..NUM_LAYERS)
            .map(|i| LayerModel::init(i as u8 + 1, config.layers[i], class_rows, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            class_rows,
            layers,
        })
    }

    pub fn layer(&self, layer: u8) -> &LayerModel {
        &self.layers[layer as usize - 1]
    }

    pub fn layer_mut(&mut self, layer: u8) -> &mut LayerModel {
        &mut self.layers[layer as usize - 1]
    }

    pub fn to_checkpoint(&self, with_adam: bool) -> Vec<u8> {
        let mut all = ParameterStore::new();
        for m in &self.layers {
            all.extend_prefixed(&format!("l{}.", m.layer), &m.params);
        }
        save_checkpoint(&all, with_adam)
    }

    /// Rebuilds a model from checkpoint bytes. Layer widths are read from
    /// the stored shapes; `heads` and `dropout` come from `template`, whose
    /// other fields are ignored.
    pub fn from_checkpoint(bytes: &[u8], template: &ModelConfig) -> Result<Self> {
        let all = load_checkpoint(bytes)?;
        let mut layers = Vec::with_capacity(NUM_LAYERS);
        let mut configs = template.layers;
        let mut class_rows = 0;
        for (i, cfg) in configs.iter_mut().enumerate() {
            let layer = i as u8 + 1;
            let params = all.strip_prefix(&format!("l{layer}."));
            if params.is_empty() {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint has no parameters for layer {layer}"
                )));
            }
            let (inferred, rows) = infer_layer_config(&params, cfg)?;
            *cfg = inferred;
            class_rows = rows;
            let reference = LayerModel::init(layer, inferred, rows, 0)?;
            check_same_shapes(&reference.params, &params, layer)?;
            layers.push(LayerModel {
                layer,
                config: inferred,
                params,
            });
        }
        Ok(Self {
            config: ModelConfig { layers: configs },
            class_rows,
            layers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, with_adam: bool) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_checkpoint(with_adam)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, template: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&bytes, template)
    }
}

fn dim(params: &ParameterStore<f32>, name: &str, axis: usize) -> Result<usize> {
    params
        .value(name)
        .map_err(|_| Error::ConfigMismatch(format!("checkpoint lacks `{name}`")))?
        .shape()
        .get(axis)
        .copied()
        .ok_or_else(|| Error::ConfigMismatch(format!("`{name}` has too few axes")))
}

fn infer_layer_config(params: &ParameterStore<f32>, template: &LayerConfig) -> Result<(LayerConfig, usize)> {
    let blocks = (0..)
        .take_while(|i| params.get(&format!("enc.blk{i}.wq.w")).is_some())
        .count();
    let encoder = EncoderConfig {
        d_f: dim(params, "enc.feat.w", 1)?,
        d_p: dim(params, "enc.pos.w", 1)?,
        d_s: dim(params, "enc.class_emb", 1)?,
        d_z: dim(params, "enc.latent.w", 1)?,
        blocks,
        heads: template.encoder.heads,
        dropout: template.encoder.dropout,
    };
    let d_fc = dim(params, "dec.off1.w", 0)?;
    let g = dim(params, "dec.fmask2.w", 1)?;
    let grid = (g as f64).sqrt().round() as usize;
    if grid * grid != g {
        return Err(Error::ConfigMismatch(format!(
            "fine mask head has {g} outputs, not a square"
        )));
    }
    let decoder = DecoderConfig {
        m: dim(params, "dec.coarse2.w", 1)? / d_fc.max(1),
        grid,
        d_fc,
        coarse_hidden: dim(params, "dec.coarse1.w", 1)?,
        head_hidden: dim(params, "dec.off1.w", 1)?,
        fold_hidden: dim(params, "dec.fold1.w", 1)?,
    };
    let cfg = LayerConfig {
        capacity: decoder.capacity(),
        encoder,
        decoder,
    };
    cfg.validate()?;
    Ok((cfg, dim(params, "enc.class_emb", 0)?))
}

fn check_same_shapes(reference: &ParameterStore<f32>, got: &ParameterStore<f32>, layer: u8) -> Result<()> {
    let names = |s: &ParameterStore<f32>| {
        s.iter()
            .map(|(n, p)| (n.to_string(), p.value.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    let (a, b) = (names(reference), names(got));
    if a != b {
        let diff = a
            .iter()
            .zip(&b)
            .find(|(x, y)| x != y)
            .map(|(x, y)| format!("expected {x:?}, found {y:?}"))
            .unwrap_or_else(|| format!("expected {} parameters, found {}", a.len(), b.len()));
        return Err(Error::ConfigMismatch(format!("layer {layer} checkpoint: {diff}")));
    }
    Ok(())
}
