//! Bit-accurate simulation of signed fixed-point arithmetic.
//!
//! A format is `K_I` integer bits plus `K_F` fractional bits plus one sign
//! bit, for a total width of `K = K_I + K_F + 1`. Values are stored as a raw
//! integer with an implicit scale factor of `2^-K_F`; the raw range is the
//! symmetric interval `[-(2^(K_I+K_F) - 1), 2^(K_I+K_F) - 1]`. Overflow
//! saturates to the range endpoints and is tallied on an explicit
//! [`FxpContext`] rather than in global state.

use std::fmt;
use thiserror::Error;

/// Errors raised by fixed-point construction and arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FxpError {
    #[error("value is not finite")]
    NonFinite,
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(FixedPointFormat, FixedPointFormat),
    #[error("shift exponent {exponent} out of range for {format} (|q| must be < {max_abs})")]
    ShiftOutOfRange {
        exponent: i32,
        format: FixedPointFormat,
        max_abs: u32,
    },
    #[error("raw value {raw} outside ±{max_raw} for {format}")]
    RawOutOfRange {
        raw: i64,
        max_raw: i64,
        format: FixedPointFormat,
    },
    #[error("invalid format: {0}")]
    InvalidFormat(String),
    #[error("empty accumulation")]
    EmptyAccumulation,
}

/// A fixed-point number format: `K_I` integer bits, `K_F` fractional bits,
/// one sign bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    int_bits: u32,
    frac_bits: u32,
}

impl FixedPointFormat {
    /// Largest supported magnitude width; keeps raw values and their shifted
    /// intermediates inside `i64`/`i128`.
    pub const MAX_MAGNITUDE_BITS: u32 = 62;

    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self, FxpError> {
        let magnitude_bits = int_bits
            .checked_add(frac_bits)
            .ok_or_else(|| FxpError::InvalidFormat("bit widths overflow".into()))?;
        if magnitude_bits == 0 {
            return Err(FxpError::InvalidFormat(
                "total width must be at least 2 bits (one magnitude bit plus sign)".into(),
            ));
        }
        if magnitude_bits > Self::MAX_MAGNITUDE_BITS {
            return Err(FxpError::InvalidFormat(format!(
                "K_I + K_F = {magnitude_bits} exceeds supported maximum {}",
                Self::MAX_MAGNITUDE_BITS
            )));
        }
        Ok(Self {
            int_bits,
            frac_bits,
        })
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// Total width `K = K_I + K_F + 1` including the sign bit.
    pub fn total_bits(&self) -> u32 {
        self.int_bits + self.frac_bits + 1
    }

    /// Largest representable raw magnitude, `2^(K_I+K_F) - 1`.
    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.int_bits + self.frac_bits)) - 1
    }

    /// Grid spacing `2^-K_F` between consecutive representable values.
    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Largest representable magnitude, `(2^(K_I+K_F) - 1) * 2^-K_F`.
    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.resolution()
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fxp({},{})", self.int_bits, self.frac_bits)
    }
}

/// A fixed-point value: a raw integer plus its format.
///
/// The represented real number is `raw * 2^-K_F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxpValue {
    raw: i64,
    format: FixedPointFormat,
}

impl FxpValue {
    /// Wraps a raw integer, validating it against the format's range.
    pub fn from_raw(raw: i64, format: FixedPointFormat) -> Result<Self, FxpError> {
        let max_raw = format.max_raw();
        if raw.abs() > max_raw {
            return Err(FxpError::RawOutOfRange {
                raw,
                max_raw,
                format,
            });
        }
        Ok(Self { raw, format })
    }

    pub fn zero(format: FixedPointFormat) -> Self {
        Self { raw: 0, format }
    }

    /// Encodes a real number to the nearest representable value.
    ///
    /// Rounds half away from zero; magnitudes beyond the range saturate to
    /// the signed maximum. Non-finite inputs are rejected.
    pub fn encode(x: f64, format: FixedPointFormat) -> Result<Self, FxpError> {
        if !x.is_finite() {
            return Err(FxpError::NonFinite);
        }
        let scaled = x * (format.frac_bits as f64).exp2();
        // f64::round rounds half away from zero, matching the hardware model.
        let rounded = scaled.round();
        let max_raw = format.max_raw();
        let raw = if rounded >= max_raw as f64 {
            max_raw
        } else if rounded <= -(max_raw as f64) {
            -max_raw
        } else {
            rounded as i64
        };
        Ok(Self { raw, format })
    }

    /// Decodes to the represented real number, `raw * 2^-K_F`. Exact.
    pub fn decode(&self) -> f64 {
        self.raw as f64 * self.format.resolution()
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn is_zero(&self) -> bool {
        self.raw == 0
    }

    /// Sign flip. Always exact: the raw range is symmetric.
    pub fn negate(&self) -> Self {
        Self {
            raw: -self.raw,
            format: self.format,
        }
    }

    /// Rectifier: the value itself if positive, else zero. Exact, no
    /// arithmetic involved.
    pub fn relu(&self) -> Self {
        if self.raw > 0 {
            *self
        } else {
            Self::zero(self.format)
        }
    }
}

/// Encodes a slice of reals into one shared format.
pub fn encode_slice(xs: &[f64], format: FixedPointFormat) -> Result<Vec<FxpValue>, FxpError> {
    xs.iter().map(|&x| FxpValue::encode(x, format)).collect()
}

/// How a chain of additions handles overflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumMode {
    /// Every addition clamps to the K-bit range individually, modelling a
    /// K-bit hardware adder chain.
    #[default]
    SaturateEachAdd,
    /// Sum in a wide accumulator and clamp once at the end.
    WideThenSaturate,
}

/// Per-worker arithmetic context: accumulation mode plus saturation and
/// addition tallies.
#[derive(Debug, Clone, Default)]
pub struct FxpContext {
    mode: AccumMode,
    saturations: u64,
    additions: u64,
}

impl FxpContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mode(mode: AccumMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn mode(&self) -> AccumMode {
        self.mode
    }

    /// Number of results clamped to the range since the last reset.
    pub fn saturation_count(&self) -> u64 {
        self.saturations
    }

    /// Number of additions performed since the last reset.
    pub fn addition_count(&self) -> u64 {
        self.additions
    }

    pub fn reset_counters(&mut self) {
        self.saturations = 0;
        self.additions = 0;
    }

    /// Saturating addition of two values in the same format.
    pub fn add_sat(&mut self, a: FxpValue, b: FxpValue) -> Result<FxpValue, FxpError> {
        if a.format != b.format {
            return Err(FxpError::FormatMismatch(a.format, b.format));
        }
        self.additions += 1;
        let sum = a.raw + b.raw; // |raw| <= 2^62-1, no i64 overflow possible
        Ok(self.clamp_raw(sum as i128, a.format))
    }

    /// Multiplication by `2^q` as a bit shift.
    ///
    /// Left shifts saturate; right shifts round half away from zero on the
    /// discarded bits. `|q|` must be less than `K - 1`, which the
    /// power-of-two weight codebook guarantees.
    pub fn mul_pow2(&mut self, a: FxpValue, q: i32) -> Result<FxpValue, FxpError> {
        let max_abs = a.format.total_bits() - 1;
        if q.unsigned_abs() >= max_abs {
            return Err(FxpError::ShiftOutOfRange {
                exponent: q,
                format: a.format,
                max_abs,
            });
        }
        if q >= 0 {
            let wide = (a.raw as i128) << q;
            Ok(self.clamp_raw(wide, a.format))
        } else {
            let divisor = 1i64 << (-q);
            let quotient = a.raw / divisor;
            let remainder = a.raw % divisor;
            let raw = if 2 * remainder.abs() >= divisor {
                quotient + a.raw.signum()
            } else {
                quotient
            };
            Ok(FxpValue {
                raw,
                format: a.format,
            })
        }
    }

    /// Sums a non-empty slice of same-format values.
    ///
    /// An n-term sum performs exactly `n - 1` additions. In
    /// [`AccumMode::SaturateEachAdd`] every partial sum clamps; in
    /// [`AccumMode::WideThenSaturate`] the exact sum clamps once.
    pub fn accumulate(&mut self, terms: &[FxpValue]) -> Result<FxpValue, FxpError> {
        let (&first, rest) = terms.split_first().ok_or(FxpError::EmptyAccumulation)?;
        match self.mode {
            AccumMode::SaturateEachAdd => {
                let mut acc = first;
                for &term in rest {
                    acc = self.add_sat(acc, term)?;
                }
                Ok(acc)
            }
            AccumMode::WideThenSaturate => {
                let mut acc = first.raw as i128;
                for &term in rest {
                    if term.format != first.format {
                        return Err(FxpError::FormatMismatch(first.format, term.format));
                    }
                    self.additions += 1;
                    acc += term.raw as i128;
                }
                Ok(self.clamp_raw(acc, first.format))
            }
        }
    }

    fn clamp_raw(&mut self, wide: i128, format: FixedPointFormat) -> FxpValue {
        let max_raw = format.max_raw() as i128;
        let raw = if wide > max_raw {
            self.saturations += 1;
            max_raw
        } else if wide < -max_raw {
            self.saturations += 1;
            -max_raw
        } else {
            wide
        } as i64;
        FxpValue { raw, format }
    }
}
