//! Synthetic OCT-like data: grayscale B-scan images with a bright,
//! curved, foveally-dipped band as the annotated layer.
//!
//! Samples are organized into "eye" groups that share slowly-varying
//! geometry; groups split 15:5:10 into train/validation/test so no group
//! ever crosses a partition. Generation is pure in (seed, group, index).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::GrayImage;
use crate::mask::BinaryMask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("invalid dims: {0}")]
    InvalidDims(String),
}

/// Everything needed to re-render one sample deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub group: usize,
    pub index: usize,
    /// Cubic band-center curve over u in [-1, 1], as a fraction of height.
    pub center_coeffs: [f64; 4],
    /// Foveal dip: position (u), relative depth, and Gaussian width.
    pub dip_center: f64,
    pub dip_depth: f64,
    pub dip_width: f64,
    pub base_thickness: f64,
    pub thickness_taper: f64,
    pub band_intensity: f64,
    pub background_level: f64,
    pub background_tilt: f64,
    pub layer_amplitude: f64,
    pub layer_phase: f64,
    pub noise_amplitude: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub params: GeneratorParams,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub height: usize,
    pub width: usize,
    pub train: Vec<SyntheticSample>,
    pub val: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

impl SyntheticDataset {
    pub fn splits(&self) -> [(&'static str, &[SyntheticSample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

fn mix_seed(seed: u64, group: u64, index: u64) -> u64 {
    // splitmix64 over a combined word
    let mut z = seed
        .wrapping_add(group.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Group split counts for the 15:5:10 ratio; every split gets at least
/// one group.
pub fn split_counts(groups: usize) -> Result<(usize, usize, usize), SynthError> {
    if groups < 3 {
        return Err(SynthError::InvalidDims(format!(
            "need at least 3 groups for a train/val/test split, got {groups}"
        )));
    }
    let train = (groups * 15 / 30).max(1);
    let val = (groups * 5 / 30).max(1);
    let test = groups - train - val;
    if test == 0 {
        return Err(SynthError::InvalidDims(format!("no test groups left from {groups}")));
    }
    Ok((train, val, test))
}

/// Generate `groups` groups of `per_group` samples at the given size and
/// speckle amplitude (0 disables noise), partitioned by group.
pub fn generate_dataset(
    seed: u64,
    groups: usize,
    per_group: usize,
    height: usize,
    width: usize,
    noise_amplitude: f64,
) -> Result<SyntheticDataset, SynthError> {
    if height < 32 || width < 32 || height % 2 != 0 || width % 2 != 0 {
        return Err(SynthError::InvalidDims(format!(
            "dims {height}x{width}: need even dims of at least 32x32"
        )));
    }
    if per_group == 0 {
        return Err(SynthError::InvalidDims("per_group must be at least 1".into()));
    }
    let (n_train, n_val, _) = split_counts(groups)?;

    let mut jobs: Vec<(usize, usize)> = Vec::with_capacity(groups * per_group);
    for g in 0..groups {
        for i in 0..per_group {
            jobs.push((g, i));
        }
    }
    let samples: Vec<SyntheticSample> = jobs
        .par_iter()
        .map(|&(g, i)| generate_sample(seed, g, i, height, width, noise_amplitude))
        .collect();

    let mut dataset = SyntheticDataset {
        height,
        width,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for sample in samples {
        let g = sample.params.group;
        if g < n_train {
            dataset.train.push(sample);
        } else if g < n_train + n_val {
            dataset.val.push(sample);
        } else {
            dataset.test.push(sample);
        }
    }
    Ok(dataset)
}

/// Render one sample. Pure in its arguments.
pub fn generate_sample(
    seed: u64,
    group: usize,
    index: usize,
    height: usize,
    width: usize,
    noise_amplitude: f64,
) -> SyntheticSample {
    let mut group_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, group as u64, u64::MAX));
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * group_rng.random::<f64>();

    // Group-level geometry, shared by all slices of one "eye".
    let center_base = uniform(0.42, 0.58);
    let c1 = uniform(-0.06, 0.06);
    let c2 = uniform(-0.05, 0.05);
    let c3 = uniform(-0.03, 0.03);
    let group_dip_center = uniform(-0.15, 0.15);
    let group_dip_depth = uniform(0.45, 0.65);
    let dip_width = uniform(0.12, 0.2);
    let group_thickness = uniform(9.0, 15.0);
    let thickness_taper = uniform(-2.0, 2.0);
    let band_intensity = uniform(0.62, 0.78);
    let background_level = uniform(0.15, 0.25);
    let background_tilt = uniform(0.05, 0.15);
    let layer_amplitude = uniform(0.03, 0.08);
    let layer_phase = uniform(0.0, std::f64::consts::TAU);

    // Per-slice variation within the group, like adjacent B-scans.
    let mut sample_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, group as u64, index as u64));
    let mut jitter = |amp: f64| (sample_rng.random::<f64>() - 0.5) * 2.0 * amp;
    let params = GeneratorParams {
        group,
        index,
        center_coeffs: [center_base + jitter(0.02), c1, c2, c3],
        dip_center: group_dip_center + jitter(0.05),
        dip_depth: (group_dip_depth + jitter(0.08)).clamp(0.35, 0.75),
        dip_width,
        base_thickness: (group_thickness + jitter(1.5)).clamp(6.0, 18.0),
        thickness_taper,
        band_intensity,
        background_level,
        background_tilt,
        layer_amplitude,
        layer_phase,
        noise_amplitude,
        noise_seed: mix_seed(seed, group as u64, 0x5a5a_0000 + index as u64),
    };
    render_sample(&params, height, width)
}

/// Deterministic rendering from a parameter record.
pub fn render_sample(params: &GeneratorParams, height: usize, width: usize) -> SyntheticSample {
    let h = height as f64;
    let mut mask = BinaryMask::new(height, width);
    let mut image = GrayImage::new(height, width);

    // Background: vertical gradient with soft horizontal layering.
    for r in 0..height {
        let rf = r as f64 / h;
        let bg = params.background_level
            + params.background_tilt * rf
            + params.layer_amplitude
                * (std::f64::consts::TAU * rf * 3.0 + params.layer_phase).sin();
        for c in 0..width {
            image.set(r, c, bg.clamp(0.0, 1.0) as f32);
        }
    }

    // Band: cubic center curve with a Gaussian foveal dip in thickness.
    for c in 0..width {
        let u = 2.0 * c as f64 / (width - 1) as f64 - 1.0;
        let [a0, a1, a2, a3] = params.center_coeffs;
        let center = (a0 + a1 * u + a2 * u * u + a3 * u * u * u) * h;
        let du = u - params.dip_center;
        let dip = params.dip_depth * (-du * du / (2.0 * params.dip_width * params.dip_width)).exp();
        let thickness = (params.base_thickness + params.thickness_taper * u * 0.5)
            * (1.0 - dip);
        let thickness = thickness.round().clamp(2.0, 24.0) as usize;
        let top = (center - thickness as f64 / 2.0).round() as isize;
        let top = top.clamp(1, (height - thickness - 1) as isize) as usize;
        for r in top..top + thickness {
            mask.set(r, c, true);
            image.set(r, c, params.band_intensity as f32);
        }
    }

    // Multiplicative speckle, seeded per sample.
    if params.noise_amplitude > 0.0 {
        let amp = params.noise_amplitude;
        let shape = 1.0 / (amp * amp);
        let gamma = Gamma::new(shape, 1.0 / shape).expect("valid gamma");
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        for v in &mut image.pixels {
            let factor = gamma.sample(&mut rng);
            *v = (*v as f64 * factor).clamp(0.0, 1.0) as f32;
        }
    }

    SyntheticSample { image, mask, params: params.clone() }
}

/// One manifest line per sample: file names plus the parameter record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: String,
    pub image_file: String,
    pub mask_file: String,
    pub params: GeneratorParams,
}

/// Write a dataset as paired PGMs plus a JSON-lines manifest.
pub fn save_dataset(
    dataset: &SyntheticDataset,
    dir: &std::path::Path,
) -> Result<(), crate::io::FormatError> {
    use std::io::Write as _;
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for (split, samples) in dataset.splits() {
        for sample in samples {
            let stem = format!("{split}_g{:03}_i{:03}", sample.params.group, sample.params.index);
            let image_file = format!("{stem}_img.pgm");
            let mask_file = format!("{stem}_msk.pgm");
            crate::io::write_gray_pgm(&sample.image, &dir.join(&image_file))?;
            crate::io::write_mask_pgm(&sample.mask, &dir.join(&mask_file))?;
            let entry = ManifestEntry {
                split: split.to_string(),
                image_file,
                mask_file,
                params: sample.params.clone(),
            };
            writeln!(manifest, "{}", serde_json::to_string(&entry).expect("serializable entry"))?;
        }
    }
    std::fs::write(dir.join("manifest.jsonl"), manifest)?;
    Ok(())
}

/// Load a dataset saved by [`save_dataset`]. Images come back through the
/// 8-bit PGM quantization.
pub fn load_dataset(dir: &std::path::Path) -> Result<SyntheticDataset, crate::io::FormatError> {
    let manifest = std::fs::read_to_string(dir.join("manifest.jsonl"))?;
    let mut dataset =
        SyntheticDataset { height: 0, width: 0, train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for line in manifest.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            crate::io::FormatError::Malformed { format: "manifest", detail: e.to_string() }
        })?;
        let image = crate::io::read_gray_pgm(&dir.join(&entry.image_file))?;
        let mask = crate::io::read_mask_pgm(&dir.join(&entry.mask_file))?;
        dataset.height = image.height;
        dataset.width = image.width;
        let sample = SyntheticSample { image, mask, params: entry.params };
        match entry.split.as_str() {
            "train" => dataset.train.push(sample),
            "val" => dataset.val.push(sample),
            "test" => dataset.test.push(sample),
            other => {
                return Err(crate::io::FormatError::Malformed {
                    format: "manifest",
                    detail: format!("unknown split '{other}'"),
                })
            }
        }
    }
    Ok(dataset)
}
