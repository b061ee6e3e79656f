//! Rate-distortion sweep: the learned codec across latent widths and the
//! octree baseline across depths, one CSV row per operating point.

use crate::bitstream::compute_bpp;
use crate::codec::{decode_scene, encode_scene, EncodeOptions};
use crate::encoder::RELEASE_LATENT_DIMS;
use crate::metrics::evaluate;
use crate::model::CodecModel;
use crate::octree::{octree_decode, octree_encode};
use crate::{LabeledPointCloud, Result, SemanticClassTable};

pub const DEFAULT_OCTREE_DEPTHS: [u8; 7] = [4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scene: String,
    pub codec: &'static str,
    pub setting: String,
    pub bpp: f64,
    /// Distortion metrics; NaN when the reconstruction is empty.
    pub d_cd: f64,
    pub d_perp: f64,
    pub iou: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "scene,codec,setting,bpp,d_cd,d_perp,iou";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.9},{:.9},{:.9},{:.9}",
            self.scene, self.codec, self.setting, self.bpp, self.d_cd, self.d_perp, self.iou
        )
    }
}

fn row(
    scene: &str,
    codec: &'static str,
    setting: String,
    original: &LabeledPointCloud,
    rec: &LabeledPointCloud,
    stream_len: usize,
) -> Result<SweepRow> {
    let (d_cd, d_perp, iou) = if rec.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let r = evaluate(original, rec, stream_len)?;
        (r.d_cd, r.d_perp, r.iou)
    };
    Ok(SweepRow {
        scene: scene.to_string(),
        codec,
        setting,
        bpp: compute_bpp(stream_len, original.len())?,
        d_cd,
        d_perp,
        iou,
    })
}

/// Sweeps one scene. `model_for(d_z)` supplies the learned model used for
/// each latent width; the octree codes the same cropped cloud.
pub fn sweep_scene(
    name: &str,
    cloud: &LabeledPointCloud,
    table: &SemanticClassTable,
    opts: &EncodeOptions,
    depths: &[u8],
    model_for: impl Fn(usize) -> Result<CodecModel>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(RELEASE_LATENT_DIMS.len() + depths.len());
    let mut original = None;
    for d_z in RELEASE_LATENT_DIMS {
        let model = model_for(d_z)?;
        let enc = encode_scene(cloud, table, &model, opts)?;
        let rec = decode_scene(&enc.bytes, &model)?;
        rows.push(row(
            name,
            "learned",
            format!("d_z={d_z}"),
            &enc.cloud,
            &rec,
            enc.bytes.len(),
        )?);
        original = Some(enc.cloud);
    }
    let original = original.unwrap_or_else(|| cloud.crop_radius(opts.crop_radius));
    for &depth in depths {
        let bytes = octree_encode(original.points(), depth)?;
        let pts = octree_decode(&bytes)?;
        let labels = vec![0; pts.len()];
        let rec = LabeledPointCloud::new(pts, labels)?;
        rows.push(row(
            name,
            "octree",
            format!("depth={depth}"),
            &original,
            &rec,
            bytes.len(),
        )?);
    }
    Ok(rows)
}
