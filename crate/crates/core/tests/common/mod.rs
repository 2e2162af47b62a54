//! Shared fixtures for integration and acceptance tests: rasterized
//! star-convex polygons with controlled low-harmonic content, plus the
//! disk and square fixtures.

use fouriernet::mask::{connected_components, trace_contour, BinaryMask, Connectivity, Contour};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Radius profile of a star-convex blob: a base radius plus angular
/// harmonic terms (order, amplitude, phase).
#[derive(Debug, Clone)]
pub struct StarShape {
    pub base_radius: f64,
    pub terms: Vec<(usize, f64, f64)>,
}

impl StarShape {
    /// Mild modulation at orders 1..3, under 25% of the base radius in
    /// total, so radial samples stay within a 2:1 ratio (which keeps the
    /// telescoped radial-difference sum exactly zero in floating point).
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_radius = 13.0 + 3.0 * rng.random::<f64>();
        let terms = vec![
            (1, base_radius * (0.03 + 0.02 * rng.random::<f64>()),
             rng.random::<f64>() * std::f64::consts::TAU),
            (2, base_radius * (0.06 + 0.04 * rng.random::<f64>()),
             rng.random::<f64>() * std::f64::consts::TAU),
            (3, base_radius * (0.06 + 0.04 * rng.random::<f64>()),
             rng.random::<f64>() * std::f64::consts::TAU),
        ];
        Self { base_radius, terms }
    }

    /// Strong lobes at orders 2..4 on a larger base, giving harmonic
    /// amplitudes of a few pixels each so that rerasterization noise is
    /// far below the scale-covariance tolerance.
    pub fn lobed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_radius = 20.0 + 5.0 * rng.random::<f64>();
        let terms = (2..=4)
            .map(|order| {
                (
                    order,
                    base_radius * (0.11 + 0.04 * rng.random::<f64>()),
                    rng.random::<f64>() * std::f64::consts::TAU,
                )
            })
            .collect();
        Self { base_radius, terms }
    }

    pub fn radius_at(&self, theta: f64) -> f64 {
        let mut r = self.base_radius;
        for &(order, amplitude, phase) in &self.terms {
            r += amplitude * (order as f64 * theta + phase).cos();
        }
        r
    }

    /// Rasterize at a scale factor: radii and canvas both scale.
    pub fn rasterize(&self, scale: f64) -> BinaryMask {
        let extent = (self.base_radius * 1.45 * scale).ceil() as usize;
        let size = 2 * extent + 3;
        let center = (size / 2) as f64;
        BinaryMask::from_fn(size, size, |r, c| {
            let dy = r as f64 - center;
            let dx = c as f64 - center;
            let dist = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);
            dist <= self.radius_at(theta) * scale
        })
    }
}

pub fn trace_largest(mask: &BinaryMask) -> Contour {
    let set = connected_components(mask, Connectivity::Eight);
    trace_contour(&set.components[0]).expect("fixture component traces")
}

pub fn star_contour(seed: u64) -> Contour {
    trace_largest(&StarShape::random(seed).rasterize(1.0))
}

pub fn disk_mask() -> BinaryMask {
    BinaryMask::from_fn(64, 64, |r, c| {
        let dr = r as f64 - 32.0;
        let dc = c as f64 - 32.0;
        dr * dr + dc * dc <= 400.0
    })
}

pub fn square_mask(side: usize) -> BinaryMask {
    BinaryMask::from_fn(side + 4, side + 4, |r, c| {
        (1..=side).contains(&r) && (1..=side).contains(&c)
    })
}

/// A contour with its radial samples forced constant: the idealized
/// regular polygon whose boundary pixels are all equidistant from the
/// centroid.
pub fn constant_radial_contour(value: f64) -> Contour {
    let mut contour = trace_largest(&square_mask(7));
    for xi in &mut contour.radial {
        *xi = value;
    }
    contour
}
