//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{SectorResolution, StatisticsOptions, DEGENERACY_TOL};
use crate::error::{Error, Result};
use crate::model::{Boundary, HubbardParams, InitialKind};

/// Largest Hilbert-space dimension a run may request.
pub const MAX_HILBERT_DIM: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sites: usize,
    #[serde(default = "default_j")]
    pub j: f64,
    #[serde(default = "default_jp")]
    pub jp: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

fn default_j() -> f64 {
    1.0
}

fn default_jp() -> f64 {
    0.125
}

impl ModelConfig {
    pub fn params(&self, u: f64) -> HubbardParams {
        HubbardParams {
            sites: self.sites,
            j: self.j,
            jp: self.jp,
            u,
            boundary: self.boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Number of initial states per interaction strength.
    pub count: usize,
    pub master_seed: u64,
    /// Total particle number; defaults to `L - 1`.
    #[serde(default)]
    pub particles: Option<usize>,
    #[serde(default = "default_kind")]
    pub kind: InitialKind,
    /// Free pre-evolution time for position-space states.
    #[serde(default)]
    pub t0: f64,
}

fn default_kind() -> InitialKind {
    InitialKind::Momentum
}

impl EnsembleConfig {
    /// Seed of ensemble member `k`.
    pub fn member_seed(&self, k: usize) -> u64 {
        self.master_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// Krylov / dense evolution tolerance.
    #[serde(default = "default_tol")]
    pub evolution_tol: f64,
    /// Eigenvalues below this are excluded from entanglement spectra.
    #[serde(default = "default_cutoff")]
    pub spectrum_cutoff: f64,
    /// Levels at which spectral errors are reported.
    #[serde(default = "default_levels")]
    pub spectral_levels: Vec<usize>,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_cutoff() -> f64 {
    crate::analysis::COMPARISON_CUTOFF
}

fn default_levels() -> Vec<usize> {
    vec![0, 10, 50, 100]
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            evolution_tol: default_tol(),
            spectrum_cutoff: default_cutoff(),
            spectral_levels: default_levels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_degeneracy")]
    pub degeneracy_tol: f64,
    #[serde(default = "default_resolution")]
    pub sectors: SectorResolution,
    /// Average per-member means instead of pooling ratios.
    #[serde(default)]
    pub member_average: bool,
    /// Ratios drawn for the Poisson and GUE reference histograms.
    #[serde(default = "default_reference")]
    pub reference_samples: usize,
}

fn default_bins() -> usize {
    24
}

fn default_resamples() -> usize {
    1000
}

fn default_degeneracy() -> f64 {
    DEGENERACY_TOL
}

fn default_resolution() -> SectorResolution {
    SectorResolution::NumberSpin
}

fn default_reference() -> usize {
    20_000
}

impl Default for StatisticsConfig {
    fn default() -> Self {
        StatisticsConfig {
            bins: default_bins(),
            bootstrap_resamples: default_resamples(),
            degeneracy_tol: default_degeneracy(),
            sectors: default_resolution(),
            member_average: false,
            reference_samples: default_reference(),
        }
    }
}

impl StatisticsConfig {
    pub fn options(&self, seed: u64) -> StatisticsOptions {
        StatisticsOptions {
            bins: self.bins,
            bootstrap_resamples: self.bootstrap_resamples,
            degeneracy_tol: self.degeneracy_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    #[serde(default = "default_order")]
    pub order: u8,
    #[serde(default = "default_shots")]
    pub shots: usize,
    /// Only ensemble members below this index are measured.
    #[serde(default = "default_members")]
    pub members: usize,
}

fn default_order() -> u8 {
    2
}

fn default_shots() -> usize {
    10_000
}

fn default_members() -> usize {
    1
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig {
            order: default_order(),
            shots: default_shots(),
            members: default_members(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresConfig {
    /// Time at which spectral errors are compared across `U`.
    #[serde(default = "default_fixed_time")]
    pub fixed_time: f64,
    /// Times (nearest grid points) of the two gap-ratio histograms.
    #[serde(default)]
    pub histogram_times: Option<[f64; 2]>,
    /// Interaction strength used for the gap-ratio time series; defaults to the largest.
    #[serde(default)]
    pub level_u: Option<f64>,
    /// Upper end of the early-time window, as a multiple of the first nonzero `tau`.
    #[serde(default = "default_window")]
    pub early_window: f64,
}

fn default_fixed_time() -> f64 {
    10.0
}

fn default_window() -> f64 {
    10.0
}

impl Default for FiguresConfig {
    fn default() -> Self {
        FiguresConfig {
            fixed_time: default_fixed_time(),
            histogram_times: None,
            level_u: None,
            early_window: default_window(),
        }
    }
}

/// Everything a run needs; every field maps to a TOML key of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub subsystem_sites: usize,
    pub times: Vec<f64>,
    pub interactions: Vec<f64>,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub statistics: StatisticsConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub figures: FiguresConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1).max(1) as f64))
        .collect()
}

impl Default for RunConfig {
    /// Desk-scale defaults: `L = 5`, three subsystem sites, an 8 x 8 log grid in `(U, t)`.
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                sites: 5,
                j: default_j(),
                jp: default_jp(),
                boundary: Boundary::Periodic,
            },
            subsystem_sites: 3,
            times: std::iter::once(0.0).chain(log_grid(0.01, 100.0, 8)).collect(),
            interactions: log_grid(1e-3, 1.0, 8),
            ensemble: EnsembleConfig {
                count: 10,
                master_seed: 1,
                particles: None,
                kind: InitialKind::Momentum,
                t0: 0.0,
            },
            reconstruction: ReconstructionConfig::default(),
            statistics: StatisticsConfig::default(),
            measurement: MeasurementConfig::default(),
            figures: FiguresConfig::default(),
            output_dir: default_output(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn particles(&self) -> usize {
        self.ensemble.particles.unwrap_or(self.model.sites - 1)
    }

    pub fn subsystem_modes(&self) -> usize {
        2 * self.subsystem_sites
    }

    pub fn validate(&self) -> Result<()> {
        self.model.params(0.0).validate()?;
        if self.times.is_empty() || self.interactions.is_empty() {
            return Err(Error::domain("time and interaction grids must be nonempty"));
        }
        if self.times.iter().chain(&self.interactions).any(|v| !v.is_finite()) {
            return Err(Error::domain("grids must be finite"));
        }
        if self.times.iter().any(|&t| t < 0.0) {
            return Err(Error::domain("times must be nonnegative"));
        }
        if self.ensemble.count == 0 {
            return Err(Error::domain("ensemble needs at least one member"));
        }
        if self.subsystem_sites == 0 || self.subsystem_sites >= self.model.sites {
            return Err(Error::domain(format!(
                "subsystem of {} sites in a chain of {}",
                self.subsystem_sites, self.model.sites
            )));
        }
        if self.subsystem_modes() > crate::correlations::MAX_SUBSYSTEM_MODES {
            return Err(Error::Capacity {
                what: "subsystem modes",
                got: self.subsystem_modes(),
                limit: crate::correlations::MAX_SUBSYSTEM_MODES,
            });
        }
        if 2 * self.subsystem_sites > self.model.sites {
            log::warn!(
                "subsystem of {} sites exceeds half of the {}-site chain",
                self.subsystem_sites,
                self.model.sites
            );
        }
        let n = self.particles();
        if n > 2 * self.model.sites {
            return Err(Error::domain(format!("{n} particles exceed {} modes", 2 * self.model.sites)));
        }
        let dim = crate::fock::binomial(2 * self.model.sites, n);
        if dim > MAX_HILBERT_DIM {
            return Err(Error::Capacity {
                what: "Hilbert-space dimension (reduce sites or particles)",
                got: dim,
                limit: MAX_HILBERT_DIM,
            });
        }
        if !(1..=2).contains(&self.measurement.order) || self.measurement.shots == 0 {
            return Err(Error::domain("measurement order must be 1 or 2 with at least one shot"));
        }
        if self.statistics.bins == 0 {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        Ok(())
    }
}
