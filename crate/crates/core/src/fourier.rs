//! Fourier descriptors of the distance-to-center function on a contour.
//!
//! The radial function is treated as piecewise constant over each
//! arc-length interval between consecutive boundary pixels (the value of
//! the interval's left endpoint), which gives closed-form Fourier
//! coefficient sums over the radial differences. An independent numerical
//! quadrature of the defining integrals is provided as an oracle.
//!
//! All accumulation is in 64-bit floats: contours can have thousands of
//! points and the oracle tolerances are tighter than 32-bit summation
//! error.

use std::f64::consts::PI;
use std::io::Write;

use thiserror::Error;

use crate::mask::Contour;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FourierError {
    #[error("invalid harmonic index {0}: must be >= 1")]
    InvalidHarmonic(usize),
    #[error("too few quadrature samples {0}: need at least 1000")]
    TooFewSamples(usize),
}

/// Coefficient pairs, harmonic amplitudes, and phases for harmonics
/// `1..=order` of a contour's radial function.
///
/// The descriptor vector of the contour is `amplitudes`; phases are kept
/// for completeness but carry less shape information and are not part of
/// the descriptor.
#[derive(Debug, Clone)]
pub struct FourierDescriptorSet {
    pub order: usize,
    pub coefficients: Vec<(f64, f64)>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Closed-form cos/sin Fourier coefficients of the piecewise-constant
/// radial function for one harmonic.
///
/// With `d_t` the backward difference of consecutive radial samples and
/// the wraparound term using the start sample at arc length L:
///
/// ```text
/// a_n =  (1/(pi n)) * sum_t d_t * sin(2 pi n l_t / L)
/// b_n = -(1/(pi n)) * sum_t d_t * cos(2 pi n l_t / L)
/// ```
pub fn fourier_coefficients(contour: &Contour, harmonic: usize) -> Result<(f64, f64), FourierError> {
    if harmonic < 1 {
        return Err(FourierError::InvalidHarmonic(harmonic));
    }
    Ok(coefficients_unchecked(contour, harmonic))
}

fn coefficients_unchecked(contour: &Contour, harmonic: usize) -> (f64, f64) {
    let t_count = contour.len();
    let total = contour.total_length;
    let factor = 2.0 * PI * harmonic as f64 / total;
    let mut a = 0.0f64;
    let mut b = 0.0f64;
    for t in 1..=t_count {
        let (prev, cur, arc) = if t < t_count {
            (contour.radial[t - 1], contour.radial[t], contour.arc_lengths[t])
        } else {
            // Closed curve: the point after the last is the start again.
            (contour.radial[t_count - 1], contour.radial[0], total)
        };
        let diff = prev - cur;
        let phase = factor * arc;
        a += diff * phase.sin();
        b -= diff * phase.cos();
    }
    let scale = 1.0 / (PI * harmonic as f64);
    (a * scale, b * scale)
}

/// Numerical oracle for [`fourier_coefficients`]: integrates the defining
/// coefficient integrals over a uniform subdivision of `[0, L]`, with the
/// trigonometric factor taken at each piece midpoint and the
/// piecewise-constant radial function integrated exactly over the piece.
///
/// Exact treatment of the radial factor keeps the discrete orthogonality
/// of the midpoint grid (constant radial functions integrate to exactly
/// zero for every harmonic) while the remaining error falls off
/// quadratically in the piece width, fast enough to certify the closed
/// form at the documented tolerances.
pub fn fourier_coefficients_quadrature(
    contour: &Contour,
    harmonic: usize,
    samples: usize,
) -> Result<(f64, f64), FourierError> {
    if harmonic < 1 {
        return Err(FourierError::InvalidHarmonic(harmonic));
    }
    if samples < 1000 {
        return Err(FourierError::TooFewSamples(samples));
    }

    let t_count = contour.len();
    let total = contour.total_length;
    let step = total / samples as f64;
    let omega = 2.0 * PI * harmonic as f64 / total;

    // Interval t covers [edge(t), edge(t+1)) with radial value radial[t];
    // the final interval ends at L.
    let edge = |t: usize| -> f64 {
        if t >= t_count {
            total
        } else {
            contour.arc_lengths[t]
        }
    };

    let mut a = 0.0f64;
    let mut b = 0.0f64;
    let mut t = 0usize; // first interval overlapping the current piece
    for i in 0..samples {
        let lo = i as f64 * step;
        let hi = if i + 1 == samples { total } else { (i + 1) as f64 * step };
        while t + 1 < t_count && edge(t + 1) <= lo {
            t += 1;
        }
        // Exact integral of the piecewise-constant radial function on [lo, hi).
        let mut radial_integral = 0.0f64;
        let mut k = t;
        let mut cursor = lo;
        loop {
            let upper = edge(k + 1);
            if upper >= hi || k + 1 >= t_count {
                radial_integral += contour.radial[k] * (hi - cursor);
                break;
            }
            radial_integral += contour.radial[k] * (upper - cursor);
            cursor = upper;
            k += 1;
        }
        let mid = (i as f64 + 0.5) * step;
        let phase = omega * mid;
        a += radial_integral * phase.cos();
        b += radial_integral * phase.sin();
    }
    let scale = 2.0 / total;
    Ok((a * scale, b * scale))
}

/// Compute coefficient pairs, amplitudes, and phases for harmonics
/// `1..=order` via the closed form.
pub fn descriptor_set(contour: &Contour, order: usize) -> Result<FourierDescriptorSet, FourierError> {
    if order < 1 {
        return Err(FourierError::InvalidHarmonic(order));
    }
    let mut coefficients = Vec::with_capacity(order);
    let mut amplitudes = Vec::with_capacity(order);
    let mut phases = Vec::with_capacity(order);
    for n in 1..=order {
        let (a, b) = coefficients_unchecked(contour, n);
        coefficients.push((a, b));
        amplitudes.push((a * a + b * b).sqrt());
        phases.push(b.atan2(a));
    }
    Ok(FourierDescriptorSet { order, coefficients, amplitudes, phases })
}

/// Serialize descriptor sets as CSV: one row per contour per harmonic with
/// columns `component_id,n,a_n,b_n,A_n,alpha_n`.
pub fn write_descriptor_csv<W: Write>(
    out: &mut W,
    sets: &[(u32, FourierDescriptorSet)],
) -> std::io::Result<()> {
    writeln!(out, "component_id,n,a_n,b_n,A_n,alpha_n")?;
    for (component_id, set) in sets {
        for n in 1..=set.order {
            let (a, b) = set.coefficients[n - 1];
            writeln!(
                out,
                "{component_id},{n},{a},{b},{},{}",
                set.amplitudes[n - 1],
                set.phases[n - 1]
            )?;
        }
    }
    Ok(())
}
