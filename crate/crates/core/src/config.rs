//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Per-layer keys take either one
//! value for all four layers or four comma-separated values (terrain first).
//! Unknown keys and unparsable values are input errors; values that parse but
//! describe an impossible model are configuration mismatches.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bitstream::Precision;
use crate::encoder::RELEASE_LATENT_DIMS;
use crate::model::ModelConfig;
use crate::scene_graph::GraphParams;
use crate::synth::SynthParams;
use crate::train::TrainConfig;
use crate::{Error, Result, NUM_LAYERS};

/// Default crop radius around the sensor origin, in metres.
pub const DEFAULT_CROP_RADIUS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub graph: GraphParams,
    pub synth: SynthParams,
    pub crop_radius: f64,
    pub precision: Precision,
    pub frame_id: u32,
    /// Class table file; the bundled table when absent.
    pub class_table: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            graph: GraphParams::default(),
            synth: SynthParams::default(),
            crop_radius: DEFAULT_CROP_RADIUS,
            precision: Precision::F32,
            frame_id: 0,
            class_table: None,
        }
    }
}

fn bad(line: usize, key: &str, msg: impl Display) -> Error {
    Error::invalid(format!("config line {line}: `{key}`: {msg}"))
}

fn scalar<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| bad(line, key, e))
}

fn list<T: FromStr + Copy, const K: usize>(line: usize, key: &str, v: &str) -> Result<[T; K]>
where
    T::Err: Display,
{
    let items = v
        .split(',')
        .map(|s| scalar(line, key, s.trim()))
        .collect::<Result<Vec<T>>>()?;
    items.as_slice().try_into().map_err(|_| {
        bad(
            line,
            key,
            format!("expected {K} comma-separated values, got {}", items.len()),
        )
    })
}

/// One value broadcast to all layers, or one per layer.
fn per_layer<T: FromStr + Copy>(line: usize, key: &str, v: &str) -> Result<[T; NUM_LAYERS]>
where
    T::Err: Display,
{
    if v.contains(',') {
        list(line, key, v)
    } else {
        Ok([scalar(line, key, v)?; NUM_LAYERS])
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::invalid(format!("config line {n}: expected `key = value`")))?;
            if !seen.insert(key.to_string()) {
                return Err(bad(n, key, "duplicate key"));
            }
            c.set(n, key, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, n: usize, key: &str, v: &str) -> Result<()> {
        let layers = &mut self.model.layers;
        match key {
            "seed" => self.seed = scalar(n, key, v)?,
            "frame_id" => self.frame_id = scalar(n, key, v)?,
            "class_table" => self.class_table = Some(PathBuf::from(v)),
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f16" => Precision::F16,
                    _ => return Err(bad(n, key, "expected f32 or f16")),
                }
            }
            "crop_radius" => self.crop_radius = scalar(n, key, v)?,

            "capacity" => {
                let caps: [usize; NUM_LAYERS] = per_layer(n, key, v)?;
                for (l, cap) in layers.iter_mut().zip(caps) {
                    l.capacity = cap;
                    l.decoder.m = cap / l.decoder.g().max(1);
                }
            }
            "d_z" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.d_z = x),
            "d_f" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.d_f = x),
            "d_p" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.d_p = x),
            "d_s" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.d_s = x),
            "blocks" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.blocks = x),
            "heads" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.heads = x),
            "dropout" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.encoder.dropout = x),
            "grid" => {
                let grids: [usize; NUM_LAYERS] = per_layer(n, key, v)?;
                for (l, g) in layers.iter_mut().zip(grids) {
                    l.decoder.grid = g;
                    l.decoder.m = l.capacity / (g * g).max(1);
                }
            }
            "d_fc" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.decoder.d_fc = x),
            "coarse_hidden" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.decoder.coarse_hidden = x),
            "head_hidden" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.decoder.head_hidden = x),
            "fold_hidden" => per_layer(n, key, v)?
                .iter()
                .zip(layers.iter_mut())
                .for_each(|(&x, l)| l.decoder.fold_hidden = x),

            "lr" => self.train.adam.lr = scalar(n, key, v)?,
            "weight_decay" => self.train.adam.weight_decay = scalar(n, key, v)?,
            "epochs" => self.train.epochs = scalar(n, key, v)?,
            "batch_size" => self.train.batch_size = scalar(n, key, v)?,
            "lambdas" => self.train.lambdas = list(n, key, v)?,
            "lambda_decay" => self.train.decay = scalar(n, key, v)?,
            "density_grid" => self.train.density_grid = list(n, key, v)?,

            "cluster_cell" => self.graph.cluster_cell = per_layer(n, key, v)?,
            "min_points" => self.graph.min_points = scalar(n, key, v)?,
            "terrain_cell" => self.graph.terrain_cell = scalar(n, key, v)?,

            "synth_points" => self.synth.points = scalar(n, key, v)?,
            "synth_half_size" => self.synth.half_size = scalar(n, key, v)?,
            "synth_cars" => self.synth.cars = scalar(n, key, v)?,
            "synth_agents" => self.synth.agents = scalar(n, key, v)?,
            "synth_poles" => self.synth.poles = scalar(n, key, v)?,
            "synth_trunks" => self.synth.trunks = scalar(n, key, v)?,
            _ => return Err(bad(n, key, "unknown key")),
        }
        Ok(())
    }

    /// Checks every parsed value; model shape problems are mismatches.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (k, l) in self.model.layers.iter().enumerate() {
            if !RELEASE_LATENT_DIMS.contains(&l.encoder.d_z) {
                return Err(Error::ConfigMismatch(format!(
                    "layer {} latent width {} is not one of {RELEASE_LATENT_DIMS:?}",
                    k + 1,
                    l.encoder.d_z
                )));
            }
        }
        let t = &self.train;
        let positive = t.adam.lr > 0.0 && t.adam.lr.is_finite() && t.adam.weight_decay >= 0.0;
        if !positive || t.batch_size == 0 {
            return Err(Error::invalid(
                "lr must be positive, weight_decay non-negative, batch_size > 0",
            ));
        }
        if t.lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) || !(t.decay > 0.0 && t.decay <= 1.0) {
            return Err(Error::invalid(
                "lambdas must be non-negative and lambda_decay in (0, 1]",
            ));
        }
        if t.density_grid.contains(&0) {
            return Err(Error::invalid("density_grid entries must be positive"));
        }
        if self.graph.cluster_cell.iter().any(|&c| !(c > 0.0)) || !(self.graph.terrain_cell > 0.0) {
            return Err(Error::invalid("cluster and terrain cells must be positive"));
        }
        if !(self.crop_radius > 0.0) {
            return Err(Error::invalid("crop_radius must be positive"));
        }
        Ok(())
    }

    /// Serializes every key; `parse(to_text())` restores the config.
    pub fn to_text(&self) -> String {
        let l = &self.model.layers;
        let enc = |f: fn(&crate::model::LayerConfig) -> String| join(&l.iter().map(f).collect::<Vec<_>>());
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("frame_id", self.frame_id.to_string());
        if let Some(p) = &self.class_table {
            kv("class_table", p.display().to_string());
        }
        kv(
            "precision",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F16 => "f16",
            }
            .into(),
        );
        kv("crop_radius", self.crop_radius.to_string());
        kv("capacity", enc(|l| l.capacity.to_string()));
        kv("grid", enc(|l| l.decoder.grid.to_string()));
        kv("d_z", enc(|l| l.encoder.d_z.to_string()));
        kv("d_f", enc(|l| l.encoder.d_f.to_string()));
        kv("d_p", enc(|l| l.encoder.d_p.to_string()));
        kv("d_s", enc(|l| l.encoder.d_s.to_string()));
        kv("blocks", enc(|l| l.encoder.blocks.to_string()));
        kv("heads", enc(|l| l.encoder.heads.to_string()));
        kv("dropout", enc(|l| l.encoder.dropout.to_string()));
        kv("d_fc", enc(|l| l.decoder.d_fc.to_string()));
        kv("coarse_hidden", enc(|l| l.decoder.coarse_hidden.to_string()));
        kv("head_hidden", enc(|l| l.decoder.head_hidden.to_string()));
        kv("fold_hidden", enc(|l| l.decoder.fold_hidden.to_string()));
        kv("lr", t.adam.lr.to_string());
        kv("weight_decay", t.adam.weight_decay.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lambdas", join(&t.lambdas));
        kv("lambda_decay", t.decay.to_string());
        kv("density_grid", join(&t.density_grid));
        kv("cluster_cell", join(&self.graph.cluster_cell));
        kv("min_points", self.graph.min_points.to_string());
        kv("terrain_cell", self.graph.terrain_cell.to_string());
        kv("synth_points", self.synth.points.to_string());
        kv("synth_half_size", self.synth.half_size.to_string());
        kv("synth_cars", self.synth.cars.to_string());
        kv("synth_agents", self.synth.agents.to_string());
        kv("synth_poles", self.synth.poles.to_string());
        kv("synth_trunks", self.synth.trunks.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn per_layer_values() {
        let c = RunConfig::parse("d_z = 16, 32, 16, 32\nd_f = 64\nseed = 7 # trailing comment").unwrap();
        assert_eq!(c.model.latent_dims(), [16, 32, 16, 32]);
        assert!(c.model.layers.iter().all(|l| l.encoder.d_f == 64));
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn text_round_trip() {
        let mut c =
            RunConfig::parse("d_z = 8,16,32,64\nprecision = f16\nlambdas = 0.5,1,1,0.5\nclass_table = t.txt").unwrap();
        c.train.adam.lr = 1e-3;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn input_errors() {
        for text in [
            "bogus = 1",
            "seed",
            "seed = x",
            "lambdas = 1,2",
            "seed = 1\nseed = 2",
            "precision = f64",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Error::InvalidInput(_))), "{text}");
        }
    }

    #[test]
    fn model_errors_are_mismatches() {
        for text in ["d_z = 12", "capacity = 322", "heads = 3"] {
            assert!(
                matches!(RunConfig::parse(text), Err(Error::ConfigMismatch(_))),
                "{text}"
            );
        }
    }
}
