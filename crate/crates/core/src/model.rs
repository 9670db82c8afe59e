//! Experiment configuration: antenna geometry, link budget, power split, and
//! the deterministic line-of-sight means.
//!
//! A [`SystemConfig`] is the single source of truth for one experiment. All
//! downstream code classifies the antenna triple once ([`classify_regime`])
//! and then assumes `M1 <= M2`; the `Swapped` tag tells callers to exchange
//! the channel roles and invert the resulting GSVs instead of carrying a
//! second code path.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::{C64, CMatrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("mean matrix file {path}: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    FileDimensionMismatch {
        path: PathBuf,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("mean matrix file {path}: {reason}")]
    FileParseError { path: PathBuf, reason: String },
    #[error("config file {path}: {reason}")]
    ConfigParseError { path: PathBuf, reason: String },
}

// ---------------------------------------------------------------------------
// SystemConfig
// ---------------------------------------------------------------------------

/// Full experiment configuration.
///
/// Distances are in meters, powers in dBm. `t` is the long-term power
/// normalization coefficient (dimensionless, user-settable; defaults to 1).
/// `l1` is user 1's power-allocation fraction; user 2 gets `1 - l1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub m1: usize,
    pub m2: usize,
    pub n: usize,
    pub d1: f64,
    pub d2: f64,
    pub tau: f64,
    pub t: f64,
    pub p_dbm: f64,
    pub pn_dbm: f64,
    pub l1: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub trials: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        // desk-scale defaults; the link-budget constants follow the usual
        // two-user urban setup (d1 = 200 m, d2 = 2000 m, tau = 2, PN = -20 dBm)
        SystemConfig {
            m1: 24,
            m2: 24,
            n: 36,
            d1: 200.0,
            d2: 2000.0,
            tau: 2.0,
            t: 1.0,
            p_dbm: 40.0,
            pn_dbm: -20.0,
            l1: 0.9,
            epsilon: 1e-5,
            seed: 1,
            trials: 1000,
        }
    }
}

/// dBm to linear milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

impl SystemConfig {
    /// Validate all invariants. Call once after construction/parsing.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.m1 < 1 || self.m2 < 1 || self.n < 1 {
            problems.push("antenna counts M1, M2, N must be >= 1".to_string());
        }
        if !(self.l1 > 0.0 && self.l1 < 1.0) {
            problems.push(format!("l1 must lie in (0, 1), got {}", self.l1));
        }
        for (name, v) in [
            ("d1", self.d1),
            ("d2", self.d2),
            ("t", self.t),
            ("tau", self.tau),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                problems.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !self.rho().is_finite() || self.rho() <= 0.0 {
            problems.push(format!("rho = P/PN must be positive and finite, got {}", self.rho()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(problems.join("; ")))
        }
    }

    /// Transmit SNR `rho = P / P_N` in linear scale.
    pub fn rho(&self) -> f64 {
        dbm_to_mw(self.p_dbm) / dbm_to_mw(self.pn_dbm)
    }

    /// Power-allocation fraction of user 2.
    pub fn l2(&self) -> f64 {
        1.0 - self.l1
    }

    /// Number of non-trivial GSVD subchannels.
    pub fn subchannels(&self) -> usize {
        subchannel_count(self.m1, self.m2, self.n)
    }

    pub fn regime(&self) -> Regime {
        classify_regime(self.m1, self.m2, self.n)
    }

    /// SIC-ordering check: user 1 is assumed to have the larger average
    /// channel gain `E{tr H_i H_i^H} / d_i^tau`. Violations are reported as a
    /// warning string, never an error.
    pub fn sic_ordering_warning(&self, h1bar: &CMatrix, h2bar: &CMatrix) -> Option<String> {
        let gain = |h: &CMatrix, m: usize, d: f64| {
            (h.norm_squared() + (m * self.n) as f64) / d.powf(self.tau)
        };
        let g1 = gain(h1bar, self.m1, self.d1);
        let g2 = gain(h2bar, self.m2, self.d2);
        if g1 < g2 {
            Some(format!(
                "SIC ordering assumption violated: average gain of U1 ({g1:.4e}) < U2 ({g2:.4e})"
            ))
        } else {
            None
        }
    }
}

// ---------------------------------------------------------------------------
// Regime classification
// ---------------------------------------------------------------------------

/// Antenna-count regime after the swap rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `M2 >= N`: H2 has full column rank, L is directly invertible.
    FullColumnRank,
    /// `M2 < N < M1 + M2`: epsilon-augmentation of H2 restores rank.
    Augmented,
    /// `M1 + M2 <= N`: the GSVs are deterministic; rejected downstream.
    Degenerate,
    /// `M1 > M2`: exchange the channel roles and invert the GSVs.
    Swapped,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::FullColumnRank => "full-column-rank",
            Regime::Augmented => "augmented",
            Regime::Degenerate => "degenerate",
            Regime::Swapped => "swapped",
        };
        f.write_str(s)
    }
}

/// Number of non-trivial GSVD subchannels:
/// `S = min(M1,N) + min(M2,N) - min(M1+M2,N)`.
pub fn subchannel_count(m1: usize, m2: usize, n: usize) -> usize {
    let s = m1.min(n) + m2.min(n) - (m1 + m2).min(n);
    debug_assert!(s <= m1.min(m2).min(n));
    s
}

/// Classify the antenna triple. Total over all positive inputs.
pub fn classify_regime(m1: usize, m2: usize, n: usize) -> Regime {
    if m1 > m2 {
        Regime::Swapped
    } else if m1 + m2 <= n {
        Regime::Degenerate
    } else if m2 >= n {
        Regime::FullColumnRank
    } else {
        Regime::Augmented
    }
}

// ---------------------------------------------------------------------------
// Mean matrices
// ---------------------------------------------------------------------------

/// Recipe for the deterministic line-of-sight means (H1bar, H2bar).
#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    /// Both means zero: Rayleigh fading.
    Zero,
    /// Every entry `1 + 0i`.
    AllOnes,
    /// i.i.d. complex Gaussian entries with per-entry variance `scale^2`,
    /// drawn once from `seed` (independent of the trial RNG).
    SeededGaussian { scale: f64, seed: u64 },
    /// Two matrix blocks read from one text file: first H1bar (M1 x N), then
    /// H2bar (M2 x N). Each block is `rows cols` on its own line followed by
    /// row-major `re im` pairs.
    FromFile(PathBuf),
}

/// Construct (H1bar, H2bar) for the given spec. Deterministic.
pub fn build_mean_matrices(
    spec: &MeanSpec,
    config: &SystemConfig,
) -> Result<(CMatrix, CMatrix), ModelError> {
    let (m1, m2, n) = (config.m1, config.m2, config.n);
    match spec {
        MeanSpec::Zero => Ok((
            DMatrix::zeros(m1, n),
            DMatrix::zeros(m2, n),
        )),
        MeanSpec::AllOnes => {
            let one = C64::new(1.0, 0.0);
            Ok((DMatrix::from_element(m1, n, one), DMatrix::from_element(m2, n, one)))
        }
        MeanSpec::SeededGaussian { scale, seed } => {
            if !(*scale >= 0.0) {
                return Err(ModelError::InvalidConfig(format!(
                    "SeededGaussian scale must be >= 0, got {scale}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut draw = |rows: usize, cols: usize| {
                let comp = scale / 2f64.sqrt();
                DMatrix::from_fn(rows, cols, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    C64::new(re * comp, im * comp)
                })
            };
            Ok((draw(m1, n), draw(m2, n)))
        }
        MeanSpec::FromFile(path) => {
            let text = fs::read_to_string(path).map_err(|e| ModelError::FileParseError {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            let mut tokens = text.split_whitespace();
            let h1 = read_matrix_block(&mut tokens, path, m1, n)?;
            let h2 = read_matrix_block(&mut tokens, path, m2, n)?;
            if tokens.next().is_some() {
                return Err(ModelError::FileParseError {
                    path: path.clone(),
                    reason: "trailing data after the two matrix blocks".to_string(),
                });
            }
            Ok((h1, h2))
        }
    }
}

fn read_matrix_block<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    path: &Path,
    expected_rows: usize,
    expected_cols: usize,
) -> Result<CMatrix, ModelError> {
    let parse_err = |reason: String| ModelError::FileParseError {
        path: path.to_path_buf(),
        reason,
    };
    let mut next_usize = |what: &str| -> Result<usize, ModelError> {
        tokens
            .next()
            .ok_or_else(|| parse_err(format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad {what}: {e}")))
    };
    let rows = next_usize("row count")?;
    let cols = next_usize("column count")?;
    if rows != expected_rows || cols != expected_cols {
        return Err(ModelError::FileDimensionMismatch {
            path: path.to_path_buf(),
            expected_rows,
            expected_cols,
            rows,
            cols,
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for idx in 0..rows * cols {
        let re: f64 = tokens
            .next()
            .ok_or_else(|| parse_err(format!("missing real part of entry {idx}")))?
            .parse()
            .map_err(|e| parse_err(format!("bad real part of entry {idx}: {e}")))?;
        let im: f64 = tokens
            .next()
            .ok_or_else(|| parse_err(format!("missing imaginary part of entry {idx}")))?
            .parse()
            .map_err(|e| parse_err(format!("bad imaginary part of entry {idx}: {e}")))?;
        data.push(C64::new(re, im));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Serialize a mean-matrix pair in the `FromFile` block format.
pub fn write_mean_matrices(h1bar: &CMatrix, h2bar: &CMatrix) -> String {
    let mut out = String::new();
    for h in [h1bar, h2bar] {
        out.push_str(&format!("{} {}\n", h.nrows(), h.ncols()));
        for i in 0..h.nrows() {
            let row: Vec<String> = (0..h.ncols())
                .map(|j| format!("{} {}", h[(i, j)].re, h[(i, j)].im))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Config file parsing
// ---------------------------------------------------------------------------

/// Parse a `key = value` config file into a config and mean spec.
///
/// Recognized keys (one per line, `#` starts a comment): `m1 m2 n d1 d2 tau t
/// p_dbm pn_dbm l1 epsilon seed trials mean_kind mean_scale mean_seed
/// mean_file`. Unknown keys are rejected. Missing keys keep their defaults
/// (`mean_kind` defaults to `zero`).
pub fn parse_config_file(path: &Path) -> Result<(SystemConfig, MeanSpec), ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ModelError::ConfigParseError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (config, spec) = parse_config_str(&text).map_err(|reason| ModelError::ConfigParseError {
        path: path.to_path_buf(),
        reason,
    })?;
    config.validate()?;
    Ok((config, spec))
}

/// Parse config text. Exposed for tests; see [`parse_config_file`].
pub fn parse_config_str(text: &str) -> Result<(SystemConfig, MeanSpec), String> {
    let mut config = SystemConfig::default();
    let mut mean_kind = "zero".to_string();
    let mut mean_scale = 1.0f64;
    let mut mean_seed = config.seed;
    let mut mean_seed_set = false;
    let mut mean_file: Option<PathBuf> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |e: &dyn fmt::Display| format!("line {}: bad value for {key}: {e}", lineno + 1);
        match key {
            "m1" => config.m1 = value.parse().map_err(|e| bad(&e))?,
            "m2" => config.m2 = value.parse().map_err(|e| bad(&e))?,
            "n" => config.n = value.parse().map_err(|e| bad(&e))?,
            "d1" => config.d1 = value.parse().map_err(|e| bad(&e))?,
            "d2" => config.d2 = value.parse().map_err(|e| bad(&e))?,
            "tau" => config.tau = value.parse().map_err(|e| bad(&e))?,
            "t" => config.t = value.parse().map_err(|e| bad(&e))?,
            "p_dbm" => config.p_dbm = value.parse().map_err(|e| bad(&e))?,
            "pn_dbm" => config.pn_dbm = value.parse().map_err(|e| bad(&e))?,
            "l1" => config.l1 = value.parse().map_err(|e| bad(&e))?,
            "epsilon" => config.epsilon = value.parse().map_err(|e| bad(&e))?,
            "seed" => config.seed = value.parse().map_err(|e| bad(&e))?,
            "trials" => config.trials = value.parse().map_err(|e| bad(&e))?,
            "mean_kind" => mean_kind = value.to_ascii_lowercase(),
            "mean_scale" => mean_scale = value.parse().map_err(|e| bad(&e))?,
            "mean_seed" => {
                mean_seed = value.parse().map_err(|e| bad(&e))?;
                mean_seed_set = true;
            }
            "mean_file" => mean_file = Some(PathBuf::from(value)),
            _ => return Err(format!("line {}: unknown key `{key}`", lineno + 1)),
        }
    }

    if !mean_seed_set {
        mean_seed = config.seed;
    }
    let spec = match mean_kind.as_str() {
        "zero" => MeanSpec::Zero,
        "ones" | "all-ones" => MeanSpec::AllOnes,
        "gaussian" => MeanSpec::SeededGaussian { scale: mean_scale, seed: mean_seed },
        "file" => MeanSpec::FromFile(
            mean_file.ok_or_else(|| "mean_kind = file requires mean_file".to_string())?,
        ),
        other => return Err(format!("unknown mean_kind `{other}`")),
    };
    Ok((config, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn subchannel_count_examples() {
        assert_eq!(subchannel_count(24, 24, 36), 12);
        assert_eq!(subchannel_count(2, 3, 2), 2);
        assert_eq!(subchannel_count(3, 4, 5), 2);
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(24, 24, 12), Regime::FullColumnRank);
        assert_eq!(classify_regime(24, 24, 36), Regime::Augmented);
        assert_eq!(classify_regime(1, 1, 3), Regime::Degenerate);
        assert_eq!(classify_regime(5, 3, 4), Regime::Swapped);
    }

    #[test]
    fn mean_zero_and_ones() {
        let config = SystemConfig { m1: 2, m2: 3, n: 2, ..Default::default() };
        let (h1, h2) = build_mean_matrices(&MeanSpec::Zero, &config).unwrap();
        assert_eq!((h1.nrows(), h1.ncols()), (2, 2));
        assert_eq!((h2.nrows(), h2.ncols()), (3, 2));
        assert!(h1.iter().all(|z| *z == C64::new(0.0, 0.0)));

        let config = SystemConfig { m1: 2, m2: 2, n: 2, ..Default::default() };
        let (h1, _) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();
        assert!(h1.iter().all(|z| *z == C64::new(1.0, 0.0)));
    }

    #[test]
    fn seeded_gaussian_is_deterministic() {
        let config = SystemConfig { m1: 3, m2: 4, n: 5, ..Default::default() };
        let spec = MeanSpec::SeededGaussian { scale: 1.0, seed: 7 };
        let (a1, a2) = build_mean_matrices(&spec, &config).unwrap();
        let (b1, b2) = build_mean_matrices(&spec, &config).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);

        let other = MeanSpec::SeededGaussian { scale: 1.0, seed: 8 };
        let (c1, _) = build_mean_matrices(&other, &config).unwrap();
        assert_ne!(a1, c1);
    }

    #[test]
    fn mean_file_roundtrip_and_dimension_check() {
        let config = SystemConfig { m1: 2, m2: 3, n: 2, ..Default::default() };
        let spec = MeanSpec::SeededGaussian { scale: 0.5, seed: 3 };
        let (h1, h2) = build_mean_matrices(&spec, &config).unwrap();

        let dir = std::env::temp_dir().join("gsvnoma-model-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("means.txt");
        fs::write(&path, write_mean_matrices(&h1, &h2)).unwrap();

        let (r1, r2) = build_mean_matrices(&MeanSpec::FromFile(path.clone()), &config).unwrap();
        assert!((&r1 - &h1).norm() < 1e-12);
        assert!((&r2 - &h2).norm() < 1e-12);

        // wrong dimensions in the config must be rejected
        let bad_config = SystemConfig { m1: 3, m2: 3, n: 2, ..Default::default() };
        let err = build_mean_matrices(&MeanSpec::FromFile(path), &bad_config).unwrap_err();
        assert!(matches!(err, ModelError::FileDimensionMismatch { .. }));
    }

    #[test]
    fn mean_file_parse_errors() {
        let dir = std::env::temp_dir().join("gsvnoma-model-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.txt");
        fs::write(&path, "2 2\n1 0 2 0 3 0 nope").unwrap();
        let config = SystemConfig { m1: 2, m2: 2, n: 2, ..Default::default() };
        let err = build_mean_matrices(&MeanSpec::FromFile(path), &config).unwrap_err();
        assert!(matches!(err, ModelError::FileParseError { .. }));
    }

    #[test]
    fn config_validation() {
        let mut config = SystemConfig::default();
        assert!(config.validate().is_ok());
        assert!((config.rho() - 1e6).abs() < 1e-6);

        config.l1 = 1.0;
        assert!(config.validate().is_err());
        config.l1 = 0.5;
        config.epsilon = 0.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_text_parses_every_key() {
        let text = "\
            m1 = 2\nm2 = 3\nn = 2\nd1 = 100 # meters\nd2 = 1500\ntau = 2.5\nt = 1.5\n\
            p_dbm = 30\npn_dbm = -10\nl1 = 0.8\nepsilon = 0.01\nseed = 42\ntrials = 50\n\
            mean_kind = gaussian\nmean_scale = 0.25\nmean_seed = 9\n";
        let (config, spec) = parse_config_str(text).unwrap();
        assert_eq!((config.m1, config.m2, config.n), (2, 3, 2));
        assert_eq!(config.trials, 50);
        assert_eq!(spec, MeanSpec::SeededGaussian { scale: 0.25, seed: 9 });

        assert!(parse_config_str("bogus_key = 1\n").is_err());
        assert!(parse_config_str("mean_kind = file\n").is_err());
    }

    #[test]
    fn sic_warning_fires_only_when_violated() {
        let config = SystemConfig { m1: 2, m2: 2, n: 2, ..Default::default() };
        let (h1, h2) = build_mean_matrices(&MeanSpec::AllOnes, &config).unwrap();
        // d1 = 200 < d2 = 2000 with equal means: U1 has the larger gain
        assert!(config.sic_ordering_warning(&h1, &h2).is_none());

        let flipped = SystemConfig { d1: 2000.0, d2: 200.0, ..config };
        assert!(flipped.sic_ordering_warning(&h1, &h2).is_some());
    }

    proptest! {
        #[test]
        fn subchannel_count_is_symmetric(m1 in 1usize..40, m2 in 1usize..40, n in 1usize..40) {
            prop_assert_eq!(subchannel_count(m1, m2, n), subchannel_count(m2, m1, n));
        }

        #[test]
        fn subchannel_count_matches_sum_rule(m1 in 1usize..40, m2 in 1usize..40, n in 1usize..40) {
            // S = M1 + M2 - N whenever M1, M2 <= N <= M1 + M2
            if m1 <= n && m2 <= n && n <= m1 + m2 {
                prop_assert_eq!(subchannel_count(m1, m2, n), m1 + m2 - n);
            }
            if m1 <= n && n <= m2 {
                prop_assert_eq!(subchannel_count(m1, m2, n), m1);
            }
        }

        #[test]
        fn classify_regime_total_and_swap_stable(m1 in 1usize..40, m2 in 1usize..40, n in 1usize..40) {
            let r = classify_regime(m1, m2, n);
            if m1 > m2 {
                prop_assert_eq!(r, Regime::Swapped);
                // after swapping the classification is final
                prop_assert_ne!(classify_regime(m2, m1, n), Regime::Swapped);
            } else {
                prop_assert_ne!(r, Regime::Swapped);
            }
        }
    }
}
