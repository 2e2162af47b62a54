//! Per-pixel Fourier descriptor maps via iterative contour peeling.
//!
//! Each foreground component is peeled ring by ring: trace the current
//! outer boundary, compute its descriptor set (centroid recomputed from
//! the current region), stamp the amplitudes onto the boundary pixels,
//! remove them, and repeat on what remains. Removal can split a region;
//! every resulting part continues independently. Remnants too small to
//! carry a contour inherit the descriptors of the last ring peeled from
//! their branch (or zero when the component was degenerate from the
//! start). Background pixels stay at zero.

use thiserror::Error;

use crate::fourier::descriptor_set;
use crate::mask::{connected_components, partition_pixels, trace_contour, BinaryMask, Component,
                  Connectivity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("invalid descriptor order {0}: must be >= 1")]
    InvalidHarmonic(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// H x W x N grid of descriptor values, row-major with the descriptor
/// channel last. Values are nonnegative and exactly zero on background.
/// Stored in 32-bit floats (training precision); all math producing the
/// values runs in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorMap {
    pub height: usize,
    pub width: usize,
    pub order: usize,
    data: Vec<f32>,
}

impl DescriptorMap {
    pub fn zeros(height: usize, width: usize, order: usize) -> Self {
        Self { height, width, order, data: vec![0.0; height * width * order] }
    }

    pub fn from_vec(height: usize, width: usize, order: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * order);
        Self { height, width, order, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.order + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        self.data[(row * self.width + col) * self.order + channel] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One channel as a dense H x W plane.
    pub fn channel_plane(&self, channel: usize) -> Vec<f32> {
        let mut plane = Vec::with_capacity(self.height * self.width);
        for rc in 0..self.height * self.width {
            plane.push(self.data[rc * self.order + channel]);
        }
        plane
    }
}

/// Generate the N descriptor maps of a mask by iterative peeling.
pub fn generate_descriptor_maps(mask: &BinaryMask, order: usize) -> Result<DescriptorMap, MapError> {
    if order < 1 {
        return Err(MapError::InvalidHarmonic(order));
    }
    let mut map = DescriptorMap::zeros(mask.height(), mask.width(), order);
    let set = connected_components(mask, Connectivity::Eight);
    for component in &set.components {
        peel_component(&component.pixels, order, None, &mut map);
    }
    Ok(map)
}

/// Peel one region branch to exhaustion, writing descriptor amplitudes
/// into `map`. `inherited` carries the amplitudes of the last ring peeled
/// on this branch for stamping degenerate remnants.
fn peel_component(
    pixels: &[(usize, usize)],
    order: usize,
    inherited: Option<Vec<f32>>,
    map: &mut DescriptorMap,
) {
    let mut work: Vec<(Vec<(usize, usize)>, Option<Vec<f32>>)> =
        vec![(pixels.to_vec(), inherited)];
    while let Some((region, inherited)) = work.pop() {
        let component = Component { label: 0, pixels: region };
        let contour = match trace_contour(&component) {
            Ok(c) => c,
            Err(_) => {
                let amps = inherited.unwrap_or_else(|| vec![0.0; order]);
                stamp(map, &component.pixels, &amps);
                continue;
            }
        };
        let descriptors = descriptor_set(&contour, order)
            .expect("order >= 1 checked at entry");
        let amps: Vec<f32> = descriptors.amplitudes.iter().map(|&a| a as f32).collect();

        // Distinct boundary pixels; thin regions revisit pixels in the trace.
        let mut boundary: Vec<(usize, usize)> = contour.points.clone();
        boundary.sort_unstable();
        boundary.dedup();
        stamp(map, &boundary, &amps);

        let remaining: Vec<(usize, usize)> = component
            .pixels
            .iter()
            .copied()
            .filter(|p| boundary.binary_search(p).is_err())
            .collect();
        debug_assert!(remaining.len() < component.pixels.len());
        if remaining.is_empty() {
            continue;
        }
        for part in partition_pixels(&remaining) {
            work.push((part, Some(amps.clone())));
        }
    }
}

fn stamp(map: &mut DescriptorMap, pixels: &[(usize, usize)], amps: &[f32]) {
    for &(r, c) in pixels {
        for (n, &a) in amps.iter().enumerate() {
            map.set(r, c, n, a);
        }
    }
}

/// Mean squared error over every entry of two descriptor maps.
pub fn map_error(predicted: &DescriptorMap, target: &DescriptorMap) -> Result<f64, MapError> {
    if predicted.height != target.height
        || predicted.width != target.width
        || predicted.order != target.order
    {
        return Err(MapError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            predicted.height, predicted.width, predicted.order,
            target.height, target.width, target.order
        )));
    }
    let mut acc = 0.0f64;
    for (p, t) in predicted.data.iter().zip(&target.data) {
        let d = *p as f64 - *t as f64;
        acc += d * d;
    }
    Ok(acc / predicted.data.len() as f64)
}
