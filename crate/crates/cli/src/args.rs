use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stscale::scalecalc::{FilterParams, DEFAULT_GAMMA, DEFAULT_K};
use stscale::scalespace::{Correction3d, CALIBRATION_WIDTHS};
use stscale::synth::{NoiseKind, NoiseSpec, PhantomKind, PhantomSpec};
use stscale::ScaleGrid;

use crate::commands::{
    cmd_analyze, cmd_calibrate_anis, cmd_calibrate_corr3d, cmd_compare, cmd_resample, cmd_synth, Resample,
};
use crate::config::{RunConfig, SpacingArg, DEFAULT_BINS, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};
use crate::error::{CliError, CliResult, EXIT_CONFIG};
use crate::fieldio::write_json;

#[derive(Debug, Parser)]
#[command(name = "stscale", version, about = "Structure tensor scale-space analysis of 2D images and 3D volumes")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a scale per sample and write scale, width, shape and orientation maps.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic phantom with feature and skeleton masks.
    Synth(SynthArgs),
    /// Axial orientation difference between two analyze result directories.
    Compare(CompareArgs),
    /// Halve a field (block mean) or double it (nearest neighbour).
    Resample(ResampleArgs),
    /// Re-derive correction constants on synthetic phantoms.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Derivative normalization exponent, 1 < gamma < 3.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Ring inner/outer Gaussian ratio, 0 < k < 1.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: f64,
}

impl FilterArgs {
    fn resolve(&self) -> CliResult<FilterParams> {
        FilterParams::new(self.gamma, self.k).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = DEFAULT_SIGMA_MIN)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA_MAX)]
    pub sigma_max: f64,
    /// Increment (linear) or ratio (geometric); defaults to 1 or 2^(1/4).
    #[arg(long)]
    pub sigma_step: Option<f64>,
    #[arg(long, value_enum, default_value_t = SpacingArg::Linear)]
    pub spacing: SpacingArg,
}

impl GridArgs {
    fn step(&self) -> f64 {
        self.sigma_step.unwrap_or_else(|| RunConfig::default_step(self.spacing))
    }

    fn resolve(&self) -> CliResult<ScaleGrid> {
        let g = match self.spacing {
            SpacingArg::Linear => ScaleGrid::linear(self.sigma_min, self.sigma_max, self.step()),
            SpacingArg::Geometric => ScaleGrid::geometric(self.sigma_min, self.sigma_max, self.step()),
        };
        g.map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Raw field (.f32/.u8 with .json sidecar) or PGM image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Gaussian smoothing of the tensor after ring integration.
    #[arg(long, value_name = "SIGMA")]
    pub post_smooth: Option<f64>,
    /// Skip the shape-dependent scale correction.
    #[arg(long)]
    pub no_correction: bool,
    /// Statistics and histogram only over nonzero samples of this field.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Recorded in run.json; the analysis itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write an HSV orientation preview (2D only).
    #[arg(long)]
    pub preview: bool,
}

impl AnalyzeArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            gamma: self.filter.gamma,
            k: self.filter.k,
            sigma_min: self.grid.sigma_min,
            sigma_max: self.grid.sigma_max,
            sigma_step: self.grid.step(),
            spacing: self.grid.spacing,
            post_smooth: self.post_smooth,
            correction: !self.no_correction,
            mask: self.mask.clone(),
            bins: self.bins,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    None,
    Iid,
    Anisotropic,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Phantom kind, e.g. disk2d, line2d, lines2d-increasing, trio2d, sphere3d, cylinder3d, slab3d.
    #[arg(long, value_parser = parse_kind)]
    pub kind: PhantomKind,
    /// Feature width in samples (smallest bar for lines2d-increasing).
    #[arg(long)]
    pub width: f64,
    /// Extents in axis order, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shape: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub foreground: f64,
    #[arg(long, default_value_t = 0.0)]
    pub background: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::None)]
    pub noise: NoiseArg,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise_amplitude: f64,
    /// Axis along which anisotropic noise is smoothed.
    #[arg(long, default_value_t = 1)]
    pub noise_axis: usize,
    #[arg(long, default_value_t = 8.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub outdir: PathBuf,
}

fn parse_kind(s: &str) -> Result<PhantomKind, String> {
    PhantomKind::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = PhantomKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown kind {s:?}; expected one of {}", names.join(", "))
    })
}

impl SynthArgs {
    pub fn spec(&self) -> PhantomSpec {
        let mut spec = PhantomSpec::new(self.kind, self.width, self.shape.clone());
        spec.foreground = self.foreground;
        spec.background = self.background;
        spec.seed = self.seed;
        let kind = match self.noise {
            NoiseArg::None => None,
            NoiseArg::Iid => Some(NoiseKind::Iid),
            NoiseArg::Anisotropic => {
                Some(NoiseKind::Anisotropic { axis: self.noise_axis, smoothing_sigma: self.noise_sigma })
            }
        };
        spec.noise = kind.map(|kind| NoiseSpec { kind, amplitude: self.noise_amplitude });
        spec
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// First analyze output directory.
    #[arg(long)]
    pub a: PathBuf,
    /// Second analyze output directory, same shape.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also write compare.json here.
    #[arg(long)]
    pub outdir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactorArg {
    Down2,
    Up2,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    /// A raw field, or a directory whose raw fields are all resampled.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    #[arg(long, value_enum, default_value_t = FactorArg::Down2)]
    pub factor: FactorArg,
    /// Target extents for up2 (defaults to twice the input).
    #[arg(long, value_delimiter = ',')]
    pub shape: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrateMode {
    AnisRatio,
    Corr3d,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub mode: CalibrateMode,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Line widths for anis-ratio.
    #[arg(long, value_delimiter = ',', default_values_t = CALIBRATION_WIDTHS)]
    pub widths: Vec<f64>,
    /// Phantom width for corr3d.
    #[arg(long, default_value_t = 12.0)]
    pub width: f64,
    /// Cube extent for corr3d.
    #[arg(long, default_value_t = 64)]
    pub extent: usize,
    #[arg(long, default_value_t = 1.5)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 9.0)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 0.25)]
    pub sigma_step: f64,
    #[arg(long)]
    pub outdir: PathBuf,
}

fn print_json<T: Serialize>(value: &T) {
    if let Ok(s) = serde_json::to_string_pretty(value) {
        println!("{s}");
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(a) => {
            let report = cmd_analyze(&a.input, &a.config(), &a.outdir, a.preview)?;
            println!("{}", report.advice);
        }
        Command::Synth(s) => {
            let p = cmd_synth(&s.spec(), &s.outdir)?;
            println!("{} components written to {}", p.components.len(), s.outdir.display());
        }
        Command::Compare(c) => {
            let report = cmd_compare(&c.a, &c.b, c.mask.as_deref())?;
            if let Some(dir) = &c.outdir {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                write_json(&dir.join("compare.json"), &report)?;
            }
            print_json(&report);
        }
        Command::Resample(r) => {
            let mode = match r.factor {
                FactorArg::Down2 => Resample::Down2,
                FactorArg::Up2 => match r.shape {
                    Some(shape) => Resample::Up2(shape),
                    None => {
                        let first = if r.input.is_dir() { None } else { Some(r.input.clone()) };
                        let f = first.ok_or_else(|| {
                            CliError::Config("--shape is required when up-sampling a directory".into())
                        })?;
                        let shape = crate::fieldio::read_field(&f)?.shape().iter().map(|n| 2 * n).collect();
                        Resample::Up2(shape)
                    }
                },
            };
            for p in cmd_resample(&r.input, &mode, &r.outdir)? {
                println!("{}", p.display());
            }
        }
        Command::Calibrate(c) => {
            let filter = c.filter.resolve()?;
            match c.mode {
                CalibrateMode::AnisRatio => {
                    let cal = cmd_calibrate_anis(filter, &c.widths, &c.outdir)?;
                    println!("mean {} std {}", cal.mean, cal.std);
                }
                CalibrateMode::Corr3d => {
                    let grid = GridArgs {
                        sigma_min: c.sigma_min,
                        sigma_max: c.sigma_max,
                        sigma_step: Some(c.sigma_step),
                        spacing: SpacingArg::Linear,
                    }
                    .resolve()?;
                    let fit =
                        cmd_calibrate_corr3d(filter, c.width, c.extent, &grid, Correction3d::default(), &c.outdir)?;
                    println!("objective {} -> {}", fit.objective_start, fit.objective_end);
                }
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
