//! Transmitter, AWGN channel, and maximum-likelihood baseline receiver.
//!
//! The default transmit signal set is a 256-point subset of the E8 lattice
//! spanning four complex channel uses (eight real dimensions): all lattice
//! points sorted by squared norm then lexicographic order, first 256 taken,
//! centered, and normalized to unit mean energy per channel use. A file
//! loader accepts externally supplied point sets in the same role.
//!
//! Complex samples are carried as interleaved real pairs end to end; the
//! channel adds i.i.d. Gaussian noise of variance `sigma2 / 2` per real
//! dimension, i.e. `sigma2` per complex symbol.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Noise variance per complex symbol corresponding to -80 dB.
pub const DEFAULT_SIGMA2: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CommError {
    #[error("message index {index} out of range for constellation of size {size}")]
    MessageOutOfRange { index: usize, size: usize },
    #[error("constellation point file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid constellation: {0}")]
    InvalidPoints(String),
    #[error("invalid channel parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The transmit signal set: `M` points in `2N` real dimensions.
#[derive(Debug, Clone)]
pub struct Constellation {
    points: Vec<Vec<f64>>,
    dim: usize,
    normalized: bool,
}

impl Constellation {
    /// Builds the default E8-subset constellation with `m` points in eight
    /// real dimensions (four complex channel uses).
    ///
    /// Lattice points are enumerated shell by shell in doubled integer
    /// coordinates, ordered by (squared norm, lexicographic), so the subset
    /// is deterministic. The selected points are centered on their centroid
    /// and normalized.
    pub fn e8_subset(m: usize) -> Result<Self, CommError> {
        if m < 2 {
            return Err(CommError::InvalidPoints(
                "need at least two points".into(),
            ));
        }
        let doubled = e8_points_sorted(m)?;
        let points: Vec<Vec<f64>> = doubled
            .iter()
            .take(m)
            .map(|p| p.iter().map(|&d| d as f64 / 2.0).collect())
            .collect();
        let mut c = Self::from_points(points)?;
        c.center();
        c.normalize();
        c.validate()?;
        Ok(c)
    }

    /// Loads points from a text file: one row per point, whitespace-separated
    /// decimals, `#` comments and blank lines allowed. The loaded set is
    /// normalized (not centered; rows are taken verbatim up to scaling).
    pub fn from_file(path: &Path) -> Result<Self, CommError> {
        let text = fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = body
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| CommError::Parse {
                        line: line_no,
                        msg: format!("bad number {tok:?}: {e}"),
                    })
                })
                .collect();
            let row = row?;
            if let Some(first) = points.first() {
                let width = (first as &Vec<f64>).len();
                if row.len() != width {
                    return Err(CommError::Parse {
                        line: line_no,
                        msg: format!("expected {width} coordinates, got {}", row.len()),
                    });
                }
            } else if row.len() % 2 != 0 {
                return Err(CommError::Parse {
                    line: line_no,
                    msg: format!(
                        "dimension {} is odd; points must span whole complex symbols",
                        row.len()
                    ),
                });
            }
            points.push(row);
        }
        let mut c = Self::from_points(points)?;
        c.normalize();
        c.validate()?;
        Ok(c)
    }

    /// Wraps an explicit point set without normalizing.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self, CommError> {
        let dim = match points.first() {
            Some(p) if !p.is_empty() && p.len() % 2 == 0 => p.len(),
            Some(p) => {
                return Err(CommError::InvalidPoints(format!(
                    "point dimension {} must be positive and even",
                    p.len()
                )))
            }
            None => return Err(CommError::InvalidPoints("empty point set".into())),
        };
        if points.iter().any(|p| p.len() != dim) {
            return Err(CommError::InvalidPoints("ragged point rows".into()));
        }
        Ok(Self {
            points,
            dim,
            normalized: false,
        })
    }

    /// Number of messages `M`.
    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Real dimension `2N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Complex channel uses `N`.
    pub fn channel_uses(&self) -> usize {
        self.dim / 2
    }

    pub fn point(&self, m: usize) -> &[f64] {
        &self.points[m]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Mean energy per complex channel use, `(1/M) Σ ‖x‖² / N`.
    pub fn mean_symbol_energy(&self) -> f64 {
        let n = self.channel_uses() as f64;
        let total: f64 = self
            .points
            .iter()
            .map(|p| p.iter().map(|x| x * x).sum::<f64>())
            .sum();
        total / (self.points.len() as f64 * n)
    }

    fn center(&mut self) {
        let m = self.points.len() as f64;
        let mut centroid = vec![0.0; self.dim];
        for p in &self.points {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / m;
            }
        }
        for p in &mut self.points {
            for (x, c) in p.iter_mut().zip(&centroid) {
                *x -= c;
            }
        }
        self.normalized = false;
    }

    /// Rescales so the mean energy per channel use is exactly 1. Idempotent.
    pub fn normalize(&mut self) {
        let energy = self.mean_symbol_energy();
        if energy > 0.0 {
            let scale = energy.sqrt().recip();
            for p in &mut self.points {
                for x in p.iter_mut() {
                    *x *= scale;
                }
            }
        }
        self.normalized = true;
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.min(d);
            }
        }
        best.sqrt()
    }

    fn validate(&self) -> Result<(), CommError> {
        if self.mean_symbol_energy() <= 0.0 {
            return Err(CommError::InvalidPoints("zero total energy".into()));
        }
        if self.min_distance() <= 0.0 {
            return Err(CommError::InvalidPoints("duplicate points".into()));
        }
        Ok(())
    }
}

/// Enumerates E8 lattice points in doubled integer coordinates, sorted by
/// (squared norm, lexicographic), growing the norm bound until at least
/// `wanted` points exist.
///
/// In doubled coordinates a lattice point has all-even or all-odd entries
/// with coordinate sum divisible by four.
fn e8_points_sorted(wanted: usize) -> Result<Vec<[i32; 8]>, CommError> {
    // Lattice squared norms are even; norm4 = 4 * norm² steps by 8.
    let mut max_norm4: i64 = 8;
    loop {
        let mut out = Vec::new();
        for parity in [0i32, 1] {
            let mut coords = [0i32; 8];
            enumerate_rec(0, 0, 0, parity, max_norm4, &mut coords, &mut out);
        }
        if out.len() >= wanted {
            out.sort_unstable_by(|a, b| {
                let na: i64 = a.iter().map(|&d| (d as i64) * (d as i64)).sum();
                let nb: i64 = b.iter().map(|&d| (d as i64) * (d as i64)).sum();
                na.cmp(&nb).then_with(|| a.cmp(b))
            });
            return Ok(out);
        }
        max_norm4 = max_norm4
            .checked_add(8)
            .ok_or_else(|| CommError::InvalidPoints("norm bound overflow".into()))?;
        if max_norm4 > 4 * 64 {
            return Err(CommError::InvalidPoints(format!(
                "requested {wanted} points, enumeration bound exhausted"
            )));
        }
    }
}

fn enumerate_rec(
    pos: usize,
    norm4: i64,
    sum: i32,
    parity: i32,
    max_norm4: i64,
    coords: &mut [i32; 8],
    out: &mut Vec<[i32; 8]>,
) {
    if pos == 8 {
        if sum.rem_euclid(4) == 0 {
            out.push(*coords);
        }
        return;
    }
    let budget = max_norm4 - norm4;
    let bound = (budget as f64).sqrt() as i32 + 1;
    let mut d = -bound;
    if d.rem_euclid(2) != parity {
        d -= 1;
    }
    while d <= bound {
        let contrib = (d as i64) * (d as i64);
        if norm4 + contrib <= max_norm4 {
            coords[pos] = d;
            enumerate_rec(pos + 1, norm4 + contrib, sum + d, parity, max_norm4, coords, out);
        }
        d += 2;
    }
}

/// Channel parameters: noise variance per complex symbol and energy per
/// complex symbol.
#[derive(Debug, Clone, Copy)]
pub struct ChannelConfig {
    pub sigma2: f64,
    pub es: f64,
}

impl ChannelConfig {
    pub fn new(es: f64, sigma2: f64) -> Result<Self, CommError> {
        if !(es > 0.0) || !(sigma2 >= 0.0) || !es.is_finite() || !sigma2.is_finite() {
            return Err(CommError::InvalidParameter(format!(
                "es = {es}, sigma2 = {sigma2}"
            )));
        }
        Ok(Self { sigma2, es })
    }

    /// Config at a given SNR, with the SNR controlled through `es`.
    pub fn from_snr_db(snr_db: f64, sigma2: f64) -> Result<Self, CommError> {
        Self::new(snr_to_es(snr_db, sigma2), sigma2)
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.es / self.sigma2).log10()
    }
}

/// `e_s = sigma2 * 10^(snr_db / 10)`.
pub fn snr_to_es(snr_db: f64, sigma2: f64) -> f64 {
    sigma2 * 10f64.powf(snr_db / 10.0)
}

/// Sends message `m`: `y = sqrt(e_s) * x_m + n` with i.i.d. Gaussian noise
/// of variance `sigma2 / 2` per real dimension.
pub fn transmit<R: Rng>(
    m: usize,
    c: &Constellation,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<Vec<f64>, CommError> {
    debug_assert!(c.is_normalized());
    if m >= c.size() {
        return Err(CommError::MessageOutOfRange {
            index: m,
            size: c.size(),
        });
    }
    let amp = cfg.es.sqrt();
    let mut y: Vec<f64> = c.point(m).iter().map(|&x| amp * x).collect();
    if cfg.sigma2 > 0.0 {
        let noise = Normal::new(0.0, (cfg.sigma2 / 2.0).sqrt()).expect("valid std");
        for v in y.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    Ok(y)
}

/// Maximum-likelihood detection: the message whose scaled constellation
/// point is closest to `y` in squared Euclidean distance. Ties go to the
/// smallest index.
pub fn ml_detect(y: &[f64], c: &Constellation, es: f64) -> usize {
    debug_assert!(c.is_normalized());
    let amp = es.sqrt();
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (m, p) in c.points().iter().enumerate() {
        let d: f64 = y
            .iter()
            .zip(p)
            .map(|(yi, xi)| {
                let e = yi - amp * xi;
                e * e
            })
            .sum();
        if d < best {
            best = d;
            arg = m;
        }
    }
    arg
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn e8_first_shell_has_240_points() {
        // Enumeration oracle over coordinate patterns: norm² = 2 points are
        // (±1, ±1, 0^6) permutations (112) plus all-±1/2 vectors with an
        // even number of minus signs (128).
        let pts = e8_points_sorted(241).unwrap();
        let shell: Vec<_> = pts
            .iter()
            .filter(|p| p.iter().map(|&d| (d as i64) * (d as i64)).sum::<i64>() == 8)
            .collect();
        assert_eq!(shell.len(), 240);
        assert_eq!(
            pts.iter()
                .map(|p| p.iter().map(|&d| (d as i64) * (d as i64)).sum::<i64>())
                .filter(|&n| n == 0)
                .count(),
            1
        );
    }

    #[test]
    fn e8_second_shell_has_2160_points() {
        let pts = e8_points_sorted(2401).unwrap();
        let count = pts
            .iter()
            .filter(|p| p.iter().map(|&d| (d as i64) * (d as i64)).sum::<i64>() == 16)
            .count();
        assert_eq!(count, 2160);
    }

    #[test]
    fn default_constellation_is_normalized_and_distinct() {
        let c = Constellation::e8_subset(256).unwrap();
        assert_eq!(c.size(), 256);
        assert_eq!(c.dim(), 8);
        assert_eq!(c.channel_uses(), 4);
        assert!((c.mean_symbol_energy() - 1.0).abs() < 1e-12);
        assert!(c.min_distance() > 0.0);
    }

    #[test]
    fn e8_subset_is_deterministic() {
        let a = Constellation::e8_subset(256).unwrap();
        let b = Constellation::e8_subset(256).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut c = Constellation::e8_subset(256).unwrap();
        let before = c.points().to_vec();
        c.normalize();
        assert_eq!(c.points(), &before[..]);
    }

    #[test]
    fn file_roundtrip_two_point_set() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# orthogonal pair, N = 1").unwrap();
        writeln!(f, "2 0").unwrap();
        writeln!(f, "0 2").unwrap();
        let c = Constellation::from_file(f.path()).unwrap();
        assert_eq!(c.size(), 2);
        // Mean energy per channel use: (4 + 4) / 2 / 1 = 4, scale 1/2.
        assert_eq!(c.point(0), &[1.0, 0.0]);
        assert_eq!(c.point(1), &[0.0, 1.0]);
        assert!((c.mean_symbol_energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn file_parse_error_carries_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1 0").unwrap();
        writeln!(f, "0 oops").unwrap();
        match Constellation::from_file(f.path()) {
            Err(CommError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn snr_to_es_values() {
        assert!((snr_to_es(0.0, 1e-8) - 1e-8).abs() < 1e-22);
        assert!((snr_to_es(10.0, 1e-8) - 1e-7).abs() < 1e-21);
        assert!((snr_to_es(-2.0, 1e-8) - 6.309573444801933e-9).abs() < 1e-20);
    }

    #[test]
    fn noiseless_transmit_is_exact_scaling() {
        let c = Constellation::e8_subset(256).unwrap();
        let cfg = ChannelConfig::new(4.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = transmit(17, &c, &cfg, &mut rng).unwrap();
        let expected: Vec<f64> = c.point(17).iter().map(|x| 2.0 * x).collect();
        assert_eq!(y, expected);
        assert_eq!(ml_detect(&y, &c, cfg.es), 17);
    }

    #[test]
    fn transmit_rejects_out_of_range_message() {
        let c = Constellation::e8_subset(256).unwrap();
        let cfg = ChannelConfig::from_snr_db(10.0, DEFAULT_SIGMA2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            transmit(256, &c, &cfg, &mut rng),
            Err(CommError::MessageOutOfRange { .. })
        ));
    }

    #[test]
    fn noise_statistics_match_model() {
        let c = Constellation::e8_subset(256).unwrap();
        let cfg = ChannelConfig::from_snr_db(10.0, 1e-8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 3;
        let amp = cfg.es.sqrt();
        let draws = 200_000;
        let mut sum = vec![0.0; 8];
        let mut sq = vec![0.0; 8];
        for _ in 0..draws {
            let y = transmit(m, &c, &cfg, &mut rng).unwrap();
            for (i, v) in y.iter().enumerate() {
                let n = v - amp * c.point(m)[i];
                sum[i] += n;
                sq[i] += n * n;
            }
        }
        let target_var = cfg.sigma2 / 2.0;
        for i in 0..8 {
            let mean = sum[i] / draws as f64;
            let var = sq[i] / draws as f64;
            // Mean within 3 standard errors, variance within 1%.
            assert!(mean.abs() < 3.0 * (target_var / draws as f64).sqrt());
            assert!((var - target_var).abs() < 0.01 * target_var);
        }
    }

    #[test]
    fn ml_detect_tie_goes_to_smaller_index() {
        let points = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]];
        let mut c = Constellation::from_points(points).unwrap();
        c.normalize();
        // Midpoint of points 0 and 1 is equidistant from both and strictly
        // farther from point 2.
        let mid: Vec<f64> = c.point(1).iter().map(|x| x / 2.0).collect();
        assert_eq!(ml_detect(&mid, &c, 1.0), 0);
    }

    #[test]
    fn ml_detect_matches_independent_reimplementation() {
        // Exhaustive-search oracle using the expanded form
        // ‖y‖² - 2⟨y, s·x⟩ + ‖s·x‖² with the ‖y‖² term dropped.
        let c = Constellation::e8_subset(256).unwrap();
        let cfg = ChannelConfig::from_snr_db(6.0, DEFAULT_SIGMA2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let amp = cfg.es.sqrt();
        for _ in 0..1000 {
            let m = rng.random_range(0..c.size());
            let y = transmit(m, &c, &cfg, &mut rng).unwrap();
            let oracle = c
                .points()
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let dot: f64 = y.iter().zip(p).map(|(a, b)| a * amp * b).sum();
                    let norm: f64 = p.iter().map(|x| amp * x * amp * x).sum();
                    (i, norm - 2.0 * dot)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            assert_eq!(ml_detect(&y, &c, cfg.es), oracle);
        }
    }
}
