//! Segmentation evaluation: posterior thresholding, column-wise
//! postprocessing, pixel metrics, and physical-scale grid analysis of a
//! B-scan stack (nine macular sectors, volume, thickness).

use std::f64::consts::FRAC_PI_4;
use std::io::Write;

use thiserror::Error;

use crate::mask::{connected_components, BinaryMask, Connectivity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Per-pixel class posteriors, class-major planes (class, row, col).
#[derive(Debug, Clone)]
pub struct PosteriorMap {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    data: Vec<f32>,
}

impl PosteriorMap {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * classes);
        Self { height, width, classes, data }
    }

    pub fn class_plane(&self, class: usize) -> &[f32] {
        &self.data[class * self.height * self.width..][..self.height * self.width]
    }

    pub fn get(&self, row: usize, col: usize, class: usize) -> f32 {
        self.data[class * self.height * self.width + row * self.width + col]
    }
}

/// Foreground iff the foreground-class posterior (class 1) strictly
/// exceeds the threshold; exactly-threshold pixels stay background.
pub fn threshold_posteriors(posteriors: &PosteriorMap, threshold: f64) -> BinaryMask {
    let plane = posteriors.class_plane(1);
    let width = posteriors.width;
    BinaryMask::from_fn(posteriors.height, posteriors.width, |r, c| {
        plane[r * width + c] as f64 > threshold
    })
}

/// Column-wise noise removal: in every column containing pixels of two or
/// more connected components, keep only the pixels of the component with
/// the largest global pixel count among those present (ties to the
/// earlier-discovered label). Columns with at most one component pass
/// through unchanged.
pub fn postprocess_columns(mask: &BinaryMask) -> BinaryMask {
    let set = connected_components(mask, Connectivity::Eight);
    if set.components.len() <= 1 {
        return mask.clone();
    }
    let sizes = set.sizes_by_label();
    let (h, w) = (mask.height(), mask.width());
    let mut out = mask.clone();
    for col in 0..w {
        let mut keep: Option<u32> = None;
        let mut multiple = false;
        for row in 0..h {
            let label = set.label_at(row, col);
            if label == 0 {
                continue;
            }
            match keep {
                None => keep = Some(label),
                Some(k) if k != label => {
                    multiple = true;
                    let better = sizes[(label - 1) as usize] > sizes[(k - 1) as usize]
                        || (sizes[(label - 1) as usize] == sizes[(k - 1) as usize] && label < k);
                    if better {
                        keep = Some(label);
                    }
                }
                _ => {}
            }
        }
        if !multiple {
            continue;
        }
        let keep = keep.unwrap();
        for row in 0..h {
            if mask.get(row, col) && set.label_at(row, col) != keep {
                out.set(row, col, false);
            }
        }
    }
    out
}

/// Precision, recall, and f-score with the degenerate-count conventions:
/// empty denominators give 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl PixelMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f_score = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f_score }
    }
}

pub fn pixel_metrics(
    predicted: &BinaryMask,
    reference: &BinaryMask,
) -> Result<PixelMetrics, EvalError> {
    if predicted.height() != reference.height() || predicted.width() != reference.width() {
        return Err(EvalError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            predicted.height(),
            predicted.width(),
            reference.height(),
            reference.width()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &r) in predicted.data().iter().zip(reference.data()) {
        match (p, r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(PixelMetrics::from_counts(tp, fp, fn_))
}

/// Per-image metrics over two matched stacks.
pub fn stack_pixel_metrics(
    predicted: &[BinaryMask],
    reference: &[BinaryMask],
) -> Result<Vec<PixelMetrics>, EvalError> {
    if predicted.len() != reference.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} predicted images vs {} reference images",
            predicted.len(),
            reference.len()
        )));
    }
    predicted.iter().zip(reference).map(|(p, r)| pixel_metrics(p, r)).collect()
}

/// Unweighted mean of per-image metrics.
pub fn aggregate_metrics(per_image: &[PixelMetrics]) -> PixelMetrics {
    if per_image.is_empty() {
        return PixelMetrics { precision: 0.0, recall: 0.0, f_score: 0.0 };
    }
    let n = per_image.len() as f64;
    PixelMetrics {
        precision: per_image.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_image.iter().map(|m| m.recall).sum::<f64>() / n,
        f_score: per_image.iter().map(|m| m.f_score).sum::<f64>() / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EyeSide {
    Left,
    Right,
}

/// The nine macular sectors plus the outside region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sector {
    Central,
    InnerSuperior,
    InnerInferior,
    InnerNasal,
    InnerTemporal,
    OuterSuperior,
    OuterInferior,
    OuterNasal,
    OuterTemporal,
    Outside,
}

impl Sector {
    pub const NINE: [Sector; 9] = [
        Sector::Central,
        Sector::InnerSuperior,
        Sector::InnerInferior,
        Sector::InnerNasal,
        Sector::InnerTemporal,
        Sector::OuterSuperior,
        Sector::OuterInferior,
        Sector::OuterNasal,
        Sector::OuterTemporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Sector::Central => "central",
            Sector::InnerSuperior => "inner_superior",
            Sector::InnerInferior => "inner_inferior",
            Sector::InnerNasal => "inner_nasal",
            Sector::InnerTemporal => "inner_temporal",
            Sector::OuterSuperior => "outer_superior",
            Sector::OuterInferior => "outer_inferior",
            Sector::OuterNasal => "outer_nasal",
            Sector::OuterTemporal => "outer_temporal",
            Sector::Outside => "outside",
        }
    }
}

/// Physical-scale macular grid over the en-face plane of a B-scan stack:
/// concentric 1/3/6 mm circles about a center, quadrants split at the
/// 45-degree diagonals, nasal/temporal resolved by eye side.
#[derive(Debug, Clone)]
pub struct EtdrsGrid {
    /// (B-scan index, A-scan column) of the grid center, en-face plane.
    pub center: (f64, f64),
    pub lateral_mm_per_ascan: f64,
    pub slice_spacing_mm: f64,
    pub axial_mm_per_pixel: f64,
    pub eye: EyeSide,
}

impl EtdrsGrid {
    /// Default synthetic-volume scales, centered on the volume: chosen so
    /// a 512-column, 49-slice scan spans roughly the 6 mm grid.
    pub fn for_volume(slices: usize, columns: usize, eye: EyeSide) -> Self {
        Self {
            center: (
                (slices.saturating_sub(1)) as f64 / 2.0,
                (columns.saturating_sub(1)) as f64 / 2.0,
            ),
            lateral_mm_per_ascan: 0.011,
            slice_spacing_mm: 0.125,
            axial_mm_per_pixel: 0.0039,
            eye,
        }
    }

    /// En-face offsets in millimeters: x to the right along columns, y
    /// upward (toward smaller B-scan indices).
    fn enface_mm(&self, bscan: f64, ascan: f64) -> (f64, f64) {
        let x = (ascan - self.center.1) * self.lateral_mm_per_ascan;
        let y = -(bscan - self.center.0) * self.slice_spacing_mm;
        (x, y)
    }

    /// Sector of an A-scan. Ring-boundary radii go outward (r = 0.5 mm is
    /// already the inner ring) and quadrant-boundary angles go to the
    /// counterclockwise-following quadrant.
    pub fn sector_of(&self, bscan: usize, ascan: usize) -> Sector {
        self.sector_of_f(bscan as f64, ascan as f64)
    }

    pub fn sector_of_f(&self, bscan: f64, ascan: f64) -> Sector {
        let (x, y) = self.enface_mm(bscan, ascan);
        let r = (x * x + y * y).sqrt();
        if r < 0.5 {
            return Sector::Central;
        }
        if r >= 3.0 {
            return Sector::Outside;
        }
        let inner = r < 1.5;
        let theta = y.atan2(x);
        // Quadrants between the diagonals: [45, 135) is up, [-135, -45)
        // is down, [-45, 45) is toward increasing columns, the rest is
        // toward decreasing columns.
        let up = (FRAC_PI_4..3.0 * FRAC_PI_4).contains(&theta);
        let down = (-3.0 * FRAC_PI_4..-FRAC_PI_4).contains(&theta);
        if up {
            return if inner { Sector::InnerSuperior } else { Sector::OuterSuperior };
        }
        if down {
            return if inner { Sector::InnerInferior } else { Sector::OuterInferior };
        }
        let right_side = (-FRAC_PI_4..FRAC_PI_4).contains(&theta);
        // Nasal is toward increasing columns for the right eye, mirrored
        // for the left eye.
        let nasal = right_side == (self.eye == EyeSide::Right);
        match (inner, nasal) {
            (true, true) => Sector::InnerNasal,
            (true, false) => Sector::InnerTemporal,
            (false, true) => Sector::OuterNasal,
            (false, false) => Sector::OuterTemporal,
        }
    }

    /// True when the A-scan lies inside the 6 mm disk.
    pub fn in_disk(&self, bscan: usize, ascan: usize) -> bool {
        let (x, y) = self.enface_mm(bscan as f64, ascan as f64);
        (x * x + y * y).sqrt() < 3.0
    }
}

/// Volume and thickness of the foreground over a B-scan stack, restricted
/// to A-scans inside the 6 mm disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeThickness {
    pub total_volume_mm3: f64,
    pub average_thickness_um: f64,
    pub in_disk_ascans: usize,
}

pub fn volume_and_thickness(
    stack: &[BinaryMask],
    grid: &EtdrsGrid,
) -> Result<VolumeThickness, EvalError> {
    let Some(first) = stack.first() else {
        return Ok(VolumeThickness {
            total_volume_mm3: 0.0,
            average_thickness_um: 0.0,
            in_disk_ascans: 0,
        });
    };
    let (h, w) = (first.height(), first.width());
    for (i, slice) in stack.iter().enumerate() {
        if slice.height() != h || slice.width() != w {
            return Err(EvalError::ShapeMismatch(format!(
                "slice {i}: {}x{} vs {}x{}",
                slice.height(),
                slice.width(),
                h,
                w
            )));
        }
    }
    let ascan_area = grid.lateral_mm_per_ascan * grid.slice_spacing_mm;
    let mut volume = 0.0f64;
    let mut thickness_sum_mm = 0.0f64;
    let mut in_disk = 0usize;
    for (bscan, slice) in stack.iter().enumerate() {
        for col in 0..w {
            if !grid.in_disk(bscan, col) {
                continue;
            }
            in_disk += 1;
            let count = (0..h).filter(|&r| slice.get(r, col)).count();
            let thickness_mm = count as f64 * grid.axial_mm_per_pixel;
            thickness_sum_mm += thickness_mm;
            volume += thickness_mm * ascan_area;
        }
    }
    let average_thickness_um =
        if in_disk == 0 { 0.0 } else { thickness_sum_mm / in_disk as f64 * 1000.0 };
    Ok(VolumeThickness { total_volume_mm3: volume, average_thickness_um, in_disk_ascans: in_disk })
}

/// Per-sector TP/FP/FN over a volume: every pixel counts toward the
/// sector of its A-scan.
pub fn sector_metrics(
    predicted: &[BinaryMask],
    reference: &[BinaryMask],
    grid: &EtdrsGrid,
) -> Result<Vec<(Sector, PixelMetrics)>, EvalError> {
    if predicted.len() != reference.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} predicted slices vs {} reference slices",
            predicted.len(),
            reference.len()
        )));
    }
    let mut counts: std::collections::HashMap<Sector, (u64, u64, u64)> =
        std::collections::HashMap::new();
    for (bscan, (p, r)) in predicted.iter().zip(reference).enumerate() {
        if p.height() != r.height() || p.width() != r.width() {
            return Err(EvalError::ShapeMismatch(format!("slice {bscan} dims differ")));
        }
        for col in 0..p.width() {
            let sector = grid.sector_of(bscan, col);
            if sector == Sector::Outside {
                continue;
            }
            let entry = counts.entry(sector).or_default();
            for row in 0..p.height() {
                match (p.get(row, col), r.get(row, col)) {
                    (true, true) => entry.0 += 1,
                    (true, false) => entry.1 += 1,
                    (false, true) => entry.2 += 1,
                    _ => {}
                }
            }
        }
    }
    Ok(Sector::NINE
        .iter()
        .map(|&s| {
            let (tp, fp, fn_) = counts.get(&s).copied().unwrap_or((0, 0, 0));
            (s, PixelMetrics::from_counts(tp, fp, fn_))
        })
        .collect())
}

/// Full evaluation output: per-image and aggregate pixel metrics,
/// per-sector metrics, and volume/thickness.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_image: Vec<PixelMetrics>,
    pub aggregate: PixelMetrics,
    pub sectors: Vec<(Sector, PixelMetrics)>,
    pub volume_thickness: VolumeThickness,
}

impl EvalReport {
    /// CSV: one aggregate row with volume/thickness, then one row per
    /// sector.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "scope,precision,recall,f_score,total_volume_mm3,average_thickness_um")?;
        writeln!(
            out,
            "aggregate,{},{},{},{},{}",
            self.aggregate.precision,
            self.aggregate.recall,
            self.aggregate.f_score,
            self.volume_thickness.total_volume_mm3,
            self.volume_thickness.average_thickness_um
        )?;
        for (sector, m) in &self.sectors {
            writeln!(out, "{},{},{},{},,", sector.name(), m.precision, m.recall, m.f_score)?;
        }
        Ok(())
    }

    /// Human-readable table: sector f-scores plus the volume/thickness
    /// summary.
    pub fn format_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "aggregate: precision {:.4}  recall {:.4}  f-score {:.4}\n",
            self.aggregate.precision, self.aggregate.recall, self.aggregate.f_score
        ));
        s.push_str("sector f-scores:\n");
        for (sector, m) in &self.sectors {
            s.push_str(&format!("  {:<16} {:.4}\n", sector.name(), m.f_score));
        }
        s.push_str(&format!(
            "total volume: {:.4} mm^3\naverage thickness: {:.2} um ({} in-disk A-scans)\n",
            self.volume_thickness.total_volume_mm3,
            self.volume_thickness.average_thickness_um,
            self.volume_thickness.in_disk_ascans
        ));
        s
    }
}
