use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stscale::scalecalc::{FilterParams, DEFAULT_GAMMA, DEFAULT_K};
use stscale::scalespace::{DEFAULT_GEOMETRIC_RATIO, DEFAULT_LINEAR_STEP};
use stscale::{ScaleGrid, SweepParams};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SpacingArg {
    Linear,
    Geometric,
}

/// Resolved settings of an analysis run; echoed verbatim into run.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub gamma: f64,
    pub k: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Additive step for linear spacing, ratio for geometric.
    pub sigma_step: f64,
    pub spacing: SpacingArg,
    pub post_smooth: Option<f64>,
    pub correction: bool,
    pub mask: Option<PathBuf>,
    pub bins: usize,
    pub seed: u64,
}

pub const DEFAULT_SIGMA_MIN: f64 = 1.0;
pub const DEFAULT_SIGMA_MAX: f64 = 14.0;
pub const DEFAULT_BINS: usize = 32;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            k: DEFAULT_K,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            sigma_step: DEFAULT_LINEAR_STEP,
            spacing: SpacingArg::Linear,
            post_smooth: None,
            correction: true,
            mask: None,
            bins: DEFAULT_BINS,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn default_step(spacing: SpacingArg) -> f64 {
        match spacing {
            SpacingArg::Linear => DEFAULT_LINEAR_STEP,
            SpacingArg::Geometric => DEFAULT_GEOMETRIC_RATIO,
        }
    }

    pub fn filter(&self) -> CliResult<FilterParams> {
        FilterParams::new(self.gamma, self.k).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid(&self) -> CliResult<ScaleGrid> {
        let g = match self.spacing {
            SpacingArg::Linear => ScaleGrid::linear(self.sigma_min, self.sigma_max, self.sigma_step),
            SpacingArg::Geometric => ScaleGrid::geometric(self.sigma_min, self.sigma_max, self.sigma_step),
        };
        g.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn sweep_params(&self) -> CliResult<SweepParams> {
        let filter = self.filter()?;
        if let Some(s) = self.post_smooth {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Config(format!("post-smooth sigma must be positive, got {s}")));
            }
        }
        let mut p = if self.correction { SweepParams::new(filter)? } else { SweepParams::uncorrected(filter) };
        p.post_smooth_sigma = self.post_smooth;
        Ok(p)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.bins < 2 {
            return Err(CliError::Config(format!("need at least 2 bins, got {}", self.bins)));
        }
        self.grid()?;
        self.filter()?;
        Ok(())
    }
}
