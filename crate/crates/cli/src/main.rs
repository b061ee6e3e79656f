//! `sgpc`: synthesize scenes, build scene graphs, train the layer models,
//! encode and decode `.sgpc` streams, evaluate reconstructions and run
//! rate-distortion sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sgpc_core::codec::{decode_scene, encode_scene, EncodeOptions};
use sgpc_core::config::RunConfig;
use sgpc_core::metrics::{evaluate, MetricsReport};
use sgpc_core::model::{CodecModel, ModelConfig};
use sgpc_core::patching::graph_patches;
use sgpc_core::scene_graph::build_scene_graph;
use sgpc_core::sweep::{sweep_scene, SweepRow, DEFAULT_OCTREE_DEPTHS};
use sgpc_core::synth::synthesize;
use sgpc_core::train::{train_model, LOG_HEADER};
use sgpc_core::{Error, LabeledPointCloud, SemanticClassTable};

#[derive(Parser)]
#[command(name = "sgpc", version, about = "Scene-graph-aware learned point cloud codec")]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-patch encode and decode (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print results as a single JSON object.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic street scene.
    Synth(SynthArgs),
    /// Build the scene graph of a cloud and print it.
    Graph(GraphArgs),
    /// Train the four layer models on one or more scenes.
    Train(TrainArgs),
    /// Compress a labeled cloud into an `.sgpc` stream.
    Encode(CodecArgs),
    /// Reconstruct a labeled cloud from an `.sgpc` stream.
    Decode(CodecArgs),
    /// Compare a reconstruction against its original.
    Eval(EvalArgs),
    /// Rate-distortion sweep of the learned codec and the octree baseline.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output `.lpc` file.
    #[arg(long)]
    out: PathBuf,
    /// Requested point count (overrides the config).
    #[arg(long)]
    points: Option<usize>,
    /// Half the scene side in metres (overrides the config).
    #[arg(long)]
    half_size: Option<f64>,
}

#[derive(Args)]
struct GraphArgs {
    /// Input cloud (`.lpc` or ASCII `x y z label`).
    #[arg(long)]
    input: PathBuf,
    /// Write the dump here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training scenes.
    #[arg(long, num_args = 1.., required = true)]
    scenes: Vec<PathBuf>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Epoch count (overrides the config).
    #[arg(long)]
    epochs: Option<u32>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct CodecArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    reconstructed: PathBuf,
    /// The `.sgpc` stream the reconstruction came from (for bpp).
    #[arg(long)]
    stream: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, num_args = 1.., required = true)]
    scenes: Vec<PathBuf>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Octree depths to sweep.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<u8>>,
    /// Checkpoint used for the latent width it was trained with; other
    /// widths use fresh models.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_format_error() => 3,
        Some(Error::ConfigMismatch(_) | Error::ShapeMismatch { .. }) => 4,
        Some(Error::TapeConsumed | Error::MissingGradient(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let ctx = Ctx { cfg, json: cli.json };
    match cli.command {
        Command::Synth(a) => ctx.synth(a),
        Command::Graph(a) => ctx.graph(a),
        Command::Train(a) => ctx.train(a),
        Command::Encode(a) => ctx.encode(a),
        Command::Decode(a) => ctx.decode(a),
        Command::Eval(a) => ctx.eval(a),
        Command::Bench(a) => ctx.bench(a),
    }
}

struct Ctx {
    cfg: RunConfig,
    json: bool,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

impl Ctx {
    fn table(&self) -> Result<SemanticClassTable> {
        Ok(match &self.cfg.class_table {
            Some(p) => SemanticClassTable::load(p)?,
            None => SemanticClassTable::bundled(),
        })
    }

    fn load_model(&self, path: &Path) -> Result<CodecModel> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(CodecModel::from_checkpoint(&bytes, &self.cfg.model)?)
    }

    fn emit(&self, value: serde_json::Value, text: String) {
        if self.json {
            println!("{value}");
        } else {
            print!("{text}");
        }
    }

    fn synth(&self, a: SynthArgs) -> Result<()> {
        let mut p = self.cfg.synth;
        p.seed = self.cfg.seed;
        p.points = a.points.unwrap_or(p.points);
        p.half_size = a.half_size.unwrap_or(p.half_size);
        let cloud = synthesize(&p)?;
        cloud.save(&a.out)?;
        self.emit(
            json!({ "path": a.out.display().to_string(), "points": cloud.len(), "seed": p.seed }),
            format!("wrote {} points to {}\n", cloud.len(), a.out.display()),
        );
        Ok(())
    }

    fn graph(&self, a: GraphArgs) -> Result<()> {
        let table = self.table()?;
        let cloud = LabeledPointCloud::load(&a.input)?.crop_radius(self.cfg.crop_radius);
        let g = build_scene_graph(&cloud, &table, &self.cfg.graph, self.cfg.frame_id)?;
        let out = if self.json {
            let nodes: Vec<_> = g
                .nodes
                .iter()
                .map(|n| {
                    json!({
                        "id": n.id,
                        "layer": n.layer,
                        "class_id": n.class_id,
                        "parent": g.parent_of(n.id),
                        "points": n.points.len(),
                        "cells": n.terrain_cells.as_ref().map(|c| c.len()),
                        "center": n.obb.center.as_slice(),
                        "extent": n.obb.extent.as_slice(),
                        "quaternion": n.obb.quaternion(),
                    })
                })
                .collect();
            let v = json!({
                "frame_id": g.frame_id,
                "layer_histogram": g.layer_histogram(),
                "nodes": nodes,
                "edges": g.edges,
            });
            format!("{v}\n")
        } else {
            g.dump()
        };
        match &a.out {
            Some(p) => write_file(p, out.as_bytes()),
            None => {
                print!("{out}");
                Ok(())
            }
        }
    }

    fn train(&self, a: TrainArgs) -> Result<()> {
        let table = self.table()?;
        let mut tc = self.cfg.train;
        tc.seed = self.cfg.seed;
        tc.epochs = a.epochs.unwrap_or(tc.epochs);
        let mut model = match &a.init {
            Some(p) => self.load_model(p)?,
            None => CodecModel::init(self.cfg.model, table.embedding_rows(), self.cfg.seed)?,
        };
        let mut patches = Vec::new();
        for path in &a.scenes {
            let cloud = LabeledPointCloud::load(path)?.crop_radius(self.cfg.crop_radius);
            let g = build_scene_graph(&cloud, &table, &self.cfg.graph, self.cfg.frame_id)
                .with_context(|| format!("building the graph of {}", path.display()))?;
            patches.extend(graph_patches(&cloud, &g, &model.config.capacities())?);
        }
        let mut log = match &a.log {
            Some(p) => {
                let mut f = fs::File::create(p).map_err(|e| Error::Io {
                    path: p.display().to_string(),
                    source: e,
                })?;
                writeln!(f, "{LOG_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        let mut log_err = None;
        let mut last = None;
        // Zero epochs still writes the (initial) checkpoint.
        model.save(&a.out, false)?;
        train_model(
            &mut model,
            &patches,
            &tc,
            |row| {
                last = Some(row.terms);
                if let Some(f) = log.as_mut() {
                    if let Err(e) = writeln!(f, "{}", row.csv()) {
                        log_err.get_or_insert(e);
                    }
                }
            },
            |_, m| m.save(&a.out, false),
        )?;
        if let Some(e) = log_err {
            return Err(e).context("writing the training log");
        }
        let total = last.map(|t| t.total);
        self.emit(
            json!({ "checkpoint": a.out.display().to_string(), "patches": patches.len(), "epochs": tc.epochs, "last_total": total }),
            format!(
                "trained {} epochs on {} patches; checkpoint {}\n",
                tc.epochs,
                patches.len(),
                a.out.display()
            ),
        );
        Ok(())
    }

    fn encode(&self, a: CodecArgs) -> Result<()> {
        let table = self.table()?;
        let model = self.load_model(&a.model)?;
        let cloud = LabeledPointCloud::load(&a.input)?;
        let enc = encode_scene(&cloud, &table, &model, &EncodeOptions::from(&self.cfg))?;
        write_file(&a.out, &enc.bytes)?;
        let patches: usize = enc.scene.nodes.iter().map(|n| n.cells.len()).sum();
        self.emit(
            json!({ "path": a.out.display().to_string(), "bytes": enc.bytes.len(), "nodes": enc.scene.nodes.len(), "patches": patches, "points": enc.cloud.len() }),
            format!(
                "wrote {} bytes ({} nodes, {} patches, {} points) to {}\n",
                enc.bytes.len(),
                enc.scene.nodes.len(),
                patches,
                enc.cloud.len(),
                a.out.display()
            ),
        );
        Ok(())
    }

    fn decode(&self, a: CodecArgs) -> Result<()> {
        let model = self.load_model(&a.model)?;
        let bytes = fs::read(&a.input).map_err(|e| Error::Io {
            path: a.input.display().to_string(),
            source: e,
        })?;
        let cloud = decode_scene(&bytes, &model)?;
        cloud.save(&a.out)?;
        self.emit(
            json!({ "path": a.out.display().to_string(), "points": cloud.len() }),
            format!("wrote {} points to {}\n", cloud.len(), a.out.display()),
        );
        Ok(())
    }

    fn eval(&self, a: EvalArgs) -> Result<()> {
        let original = LabeledPointCloud::load(&a.original)?.crop_radius(self.cfg.crop_radius);
        let rec = LabeledPointCloud::load(&a.reconstructed)?;
        let stream_len = fs::metadata(&a.stream)
            .map_err(|e| Error::Io {
                path: a.stream.display().to_string(),
                source: e,
            })?
            .len() as usize;
        let r: MetricsReport = evaluate(&original, &rec, stream_len)?;
        if self.json {
            println!("{}", serde_json::to_string(&r)?);
        } else {
            println!("{}", MetricsReport::CSV_HEADER);
            println!("{}", r.csv_row());
            print!("{}", r.text());
        }
        Ok(())
    }

    fn bench(&self, a: BenchArgs) -> Result<()> {
        let table = self.table()?;
        let depths = a.depths.unwrap_or_else(|| DEFAULT_OCTREE_DEPTHS.to_vec());
        let trained = a.model.as_ref().map(|p| self.load_model(p)).transpose()?;
        let opts = EncodeOptions::from(&self.cfg);
        let mut rows: Vec<SweepRow> = Vec::new();
        for path in &a.scenes {
            let cloud = LabeledPointCloud::load(path)?;
            let name = path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
            let model_for = |d_z: usize| {
                if let Some(m) = trained.as_ref().filter(|m| m.config.latent_dims() == [d_z; 4]) {
                    return Ok(m.clone());
                }
                let mut mc: ModelConfig = self.cfg.model;
                for l in &mut mc.layers {
                    l.encoder.d_z = d_z;
                }
                CodecModel::init(mc, table.embedding_rows(), self.cfg.seed)
            };
            rows.extend(sweep_scene(&name, &cloud, &table, &opts, &depths, model_for)?);
        }
        if self.json {
            let v: Vec<_> = rows
                .iter()
                .map(|r| {
                    json!({ "scene": r.scene, "codec": r.codec, "setting": r.setting, "bpp": r.bpp, "d_cd": r.d_cd, "d_perp": r.d_perp, "iou": r.iou })
                })
                .collect();
            let text = format!("{}\n", json!({ "rows": v }));
            return match &a.out {
                Some(p) => write_file(p, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
        }
        let mut csv = format!("{}\n", SweepRow::CSV_HEADER);
        for r in &rows {
            csv.push_str(&r.csv());
            csv.push('\n');
        }
        match &a.out {
            Some(p) => write_file(p, csv.as_bytes()),
            None => {
                print!("{csv}");
                Ok(())
            }
        }
    }
}
