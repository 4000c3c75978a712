//! Procedural paired corpus on disk: PGM files plus a JSON-lines manifest.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::pnm::{decode_pnm, encode_pnm, load_image, save_image};
use super::texture::synth_texture;
use super::{degrade, DegradationParams, PairedSample};
use crate::image::Image;
use crate::par::{map_indexed_with, Parallelism};
use crate::{mix_seed, rng_from_seed, Error, Result};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub index: usize,
    pub hr_path: String,
    pub lr_path: String,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub scale: usize,
    pub quantize: bool,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn params(&self) -> DegradationParams {
        DegradationParams {
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            scale: self.scale,
            quantize: self.quantize,
        }
    }
}

/// A loaded corpus item.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusPair {
    pub record: ManifestRecord,
    pub hr: Image,
    pub lr_up: Image,
}

/// Round trip through the file encoding so memory and disk agree bitwise.
fn to_8bit(x: &Image) -> Result<Image> {
    decode_pnm(&encode_pnm(x)?)
}

/// Generates item `index` exactly as it is stored on disk (both images on
/// the 8-bit grid).
pub fn synth_item(index: usize, patch: usize, scale: usize, global_seed: u64) -> Result<PairedSample> {
    let mut rng = rng_from_seed(mix_seed(global_seed, index as u64));
    let hr = to_8bit(&synth_texture(patch, &mut rng))?;
    let params = DegradationParams::sample(scale, &mut rng);
    let seed = rng.random::<u64>();
    let mut pair = degrade(&hr, params, seed)?;
    pair.lr_up = to_8bit(&pair.lr_up)?;
    Ok(pair)
}

/// In-memory version of [`synth_corpus`].
pub fn synth_pairs(
    count: usize,
    patch: usize,
    scale: usize,
    global_seed: u64,
    mode: Parallelism,
) -> Result<Vec<PairedSample>> {
    check_patch(patch, scale)?;
    map_indexed_with(mode, count, |i| synth_item(i, patch, scale, global_seed))
        .into_iter()
        .collect()
}

fn check_patch(patch: usize, scale: usize) -> Result<()> {
    if patch == 0 || scale == 0 || patch % scale != 0 || patch % crate::codec::DEFAULT_FACTOR != 0 {
        return Err(Error::Config(format!(
            "patch {patch} must be positive and divisible by scale {scale} and by {}",
            crate::codec::DEFAULT_FACTOR
        )));
    }
    Ok(())
}

/// Writes `count` pairs and `manifest.jsonl` into `out_dir`, returning the
/// manifest records in index order.
pub fn synth_corpus(
    out_dir: &Path,
    count: usize,
    patch: usize,
    scale: usize,
    global_seed: u64,
    mode: Parallelism,
) -> Result<Vec<ManifestRecord>> {
    check_patch(patch, scale)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Vec<ManifestRecord> = map_indexed_with(mode, count, |i| {
        let pair = synth_item(i, patch, scale, global_seed)?;
        let hr_path = format!("{i:06}_hr.pgm");
        let lr_path = format!("{i:06}_lr.pgm");
        save_image(&pair.hr, out_dir.join(&hr_path))?;
        save_image(&pair.lr_up, out_dir.join(&lr_path))?;
        let p = pair.params;
        Ok(ManifestRecord {
            index: i,
            hr_path,
            lr_path,
            blur_sigma: p.blur_sigma,
            noise_sigma: p.noise_sigma,
            scale: p.scale,
            quantize: p.quantize,
            seed: pair.seed,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let path = out_dir.join(MANIFEST_NAME);
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Parses a manifest; blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

/// Loads every pair listed in a manifest.
pub fn load_corpus(manifest: &Path) -> Result<Vec<CorpusPair>> {
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    crate::par::map_indexed(records.len(), |i| {
        let record = records[i].clone();
        let hr = load_image(resolve(base, &record.hr_path))?;
        let lr_up = load_image(resolve(base, &record.lr_path))?;
        hr.same_dims(&lr_up)?;
        Ok(CorpusPair { record, hr, lr_up })
    })
    .into_iter()
    .collect()
}
