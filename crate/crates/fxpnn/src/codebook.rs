//! Quantization codebooks: the power-of-two weight codebook and the
//! fixed-point-grid bias codebook.
//!
//! Weights are restricted to `{0} ∪ {±2^q : |q| <= K - 2}` so that every
//! multiplication at inference time is a bit shift or a zeroing. Biases are
//! restricted to the values a `K`-bit fixed-point format can represent, so
//! quantized biases carry no additional error at inference.

use crate::fxp::{FixedPointFormat, FxpValue};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodebookError {
    #[error("codebook requires a total width of at least 3 bits, got {0}")]
    WidthTooSmall(u32),
    #[error("total width {0} exceeds supported maximum {1}")]
    WidthTooLarge(u32, u32),
}

/// The weight codebook `{0} ∪ {±2^q : q ∈ Z, |q| <= K - 2}` for a `K`-bit
/// fixed-point system.
///
/// Exponents with `|q| >= K - 1` would shift every representable value to
/// zero or pure saturation, so they are excluded.
#[derive(Debug, Clone)]
pub struct PowerOfTwoCodebook {
    total_bits: u32,
    entries: Vec<f64>,
}

impl PowerOfTwoCodebook {
    pub fn new(total_bits: u32) -> Result<Self, CodebookError> {
        if total_bits < 3 {
            return Err(CodebookError::WidthTooSmall(total_bits));
        }
        // Keep exponents within exact f64 powers of two.
        let max = FixedPointFormat::MAX_MAGNITUDE_BITS + 1;
        if total_bits > max {
            return Err(CodebookError::WidthTooLarge(total_bits, max));
        }
        let max_abs_exp = total_bits as i32 - 2;
        let mut entries = Vec::with_capacity(4 * total_bits as usize - 5);
        for q in (-max_abs_exp..=max_abs_exp).rev() {
            entries.push(-f64::powi(2.0, q));
        }
        entries.push(0.0);
        for q in -max_abs_exp..=max_abs_exp {
            entries.push(f64::powi(2.0, q));
        }
        Ok(Self {
            total_bits,
            entries,
        })
    }

    /// Total bit width `K` the codebook was built for.
    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    /// Largest allowed `|q|`, i.e. `K - 2`.
    pub fn max_abs_exponent(&self) -> i32 {
        self.total_bits as i32 - 2
    }

    /// Sorted entries, `4K - 5` of them.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Nearest codebook entry to `x`; exact ties go to the entry of smaller
    /// magnitude.
    pub fn quantize_nearest(&self, x: f64) -> f64 {
        debug_assert!(x.is_finite());
        let idx = self.entries.partition_point(|&e| e < x);
        let mut best = if idx < self.entries.len() {
            self.entries[idx]
        } else {
            *self.entries.last().unwrap()
        };
        if idx > 0 {
            let lower = self.entries[idx - 1];
            let d_lower = x - lower;
            let d_best = (best - x).abs();
            if d_lower < d_best || (d_lower == d_best && lower.abs() < best.abs()) {
                best = lower;
            }
        }
        best
    }

    /// Exact membership test. Treats `-0.0` as zero.
    pub fn contains(&self, x: f64) -> bool {
        let x = if x == 0.0 { 0.0 } else { x };
        self.entries.binary_search_by(|e| e.total_cmp(&x)).is_ok()
    }
}

/// Quantizer onto the fixed-point grid of a given format, used for biases.
#[derive(Debug, Clone, Copy)]
pub struct BiasQuantizer {
    format: FixedPointFormat,
}

impl BiasQuantizer {
    pub fn new(format: FixedPointFormat) -> Self {
        Self { format }
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    /// Nearest grid point, with the same rounding and saturation as
    /// [`FxpValue::encode`].
    pub fn quantize(&self, x: f64) -> f64 {
        debug_assert!(x.is_finite());
        FxpValue::encode(x, self.format)
            .expect("finite input")
            .decode()
    }
}
