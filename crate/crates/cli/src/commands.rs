use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use stscale::scalecalc::{calibrate_anis_ratio, AnisCalibration, FilterParams};
use stscale::scalespace::{
    optimize_correction_3d, range_advice, scale_histogram, sweep, Correction3d, CorrectionFit, RangeAdvice,
    DEFAULT_ADVICE_THRESHOLD,
};
use stscale::synth::{downscale2, generate, upsample2_nearest, Phantom, PhantomSpec};
use stscale::tensor::axial_difference;
use stscale::{MeasureField, Orientation, ScalarField, ScaleGrid};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::fieldio::{read_field, read_input, sidecar_path, write_atomic, write_field, write_json, write_ppm, Dtype};

/// Count, mean, population standard deviation and median of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    /// None for an empty set.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        Some(Summary { count: values.len(), mean, std, median })
    }
}

/// Statistics over the whole field and, when given, over the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaskedSummary {
    pub full: Option<Summary>,
    pub mask: Option<Summary>,
}

fn masked_summary(f: &ScalarField, mask: Option<&ScalarField>) -> MaskedSummary {
    let inside: Option<Vec<f64>> = mask.map(|m| {
        f.data().iter().zip(m.data()).filter(|(_, &k)| k != 0.0).map(|(&v, _)| v).collect()
    });
    MaskedSummary { full: Summary::of(f.data()), mask: inside.and_then(|v| Summary::of(&v)) }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn read_mask(path: &Path, shape: &[usize]) -> CliResult<ScalarField> {
    let m = read_input(path)?;
    if m.shape() != shape {
        return Err(CliError::Shape(format!("mask {:?} vs input {:?}", m.shape(), shape)));
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub input: String,
    pub shape: Vec<usize>,
    pub config: RunConfig,
    /// Filter-to-feature ratio σ*/x_f.
    pub t: f64,
    pub anis_ratio: Option<f64>,
    pub scales: Vec<f64>,
    pub advice: &'static str,
    pub stats: Vec<(String, MaskedSummary)>,
    pub outputs: Vec<String>,
}

/// HSV preview of a 2D orientation map: hue from the angle, value from the anisotropy.
pub fn orientation_preview(angle: &ScalarField, anisotropy: &ScalarField) -> Vec<[u8; 3]> {
    angle
        .data()
        .iter()
        .zip(anisotropy.data())
        .map(|(&a, &v)| {
            let h = (a / std::f64::consts::PI).clamp(0.0, 1.0) * 6.0;
            let v = v.clamp(0.0, 1.0);
            let sector = (h.floor() as usize).min(5);
            let f = h - sector as f64;
            let (p, q, t) = (0.0, v * (1.0 - f), v * f);
            let (r, g, b) = match sector {
                0 => (v, t, p),
                1 => (q, v, p),
                2 => (p, v, t),
                3 => (p, q, v),
                4 => (t, p, v),
                _ => (v, p, q),
            };
            [r, g, b].map(|c| (c * 255.0).round() as u8)
        })
        .collect()
}

/// Runs the scale-space sweep on `input` and writes every artifact into `outdir`.
pub fn cmd_analyze(input: &Path, config: &RunConfig, outdir: &Path, preview: bool) -> CliResult<AnalyzeReport> {
    config.validate()?;
    let field = read_input(input)?;
    let mask = config.mask.as_deref().map(|p| read_mask(p, field.shape())).transpose()?;
    let grid = config.grid()?;
    let params = config.sweep_params()?;
    info!("analyzing {:?} over {} scales", field.shape(), grid.len());
    let r = sweep(&field, &grid, &params)?;

    create_dir(outdir)?;
    let mut outputs = Vec::new();
    let mut stats = Vec::new();
    let mut put = |name: &str, f: &ScalarField, with_stats: bool| -> CliResult<()> {
        let p = write_field(outdir, name, f, Dtype::F32)?;
        outputs.push(p.file_name().unwrap().to_string_lossy().into_owned());
        if with_stats {
            stats.push((name.to_string(), masked_summary(f, mask.as_ref())));
        }
        Ok(())
    };
    put("scale", &r.scale, true)?;
    put("scale_corrected", &r.corrected_scale, true)?;
    put("width", &r.width, true)?;
    match &r.measures {
        MeasureField::Planar { anisotropy } => put("anisotropy", anisotropy, true)?,
        MeasureField::Volumetric { fa, linearity, planarity, sphericity } => {
            put("fa", fa, true)?;
            put("linearity", linearity, true)?;
            put("planarity", planarity, true)?;
            put("sphericity", sphericity, true)?;
        }
    }
    match &r.orientation {
        Orientation::Angle(a) => put("orientation", a, false)?,
        Orientation::Vector(v) => {
            for (c, axis) in v.iter().zip(["z", "y", "x"]) {
                put(&format!("orientation_{axis}"), c, false)?;
            }
        }
    }
    if preview {
        if let (Orientation::Angle(a), MeasureField::Planar { anisotropy }) = (&r.orientation, &r.measures) {
            let path = outdir.join("orientation_preview.ppm");
            write_ppm(&path, a.shape()[1], a.shape()[0], &orientation_preview(a, anisotropy))?;
            outputs.push("orientation_preview.ppm".into());
        }
    }

    // The range aid reads the uncorrected map, whose edge bins are the grid ends.
    let hist = scale_histogram(&r.scale, mask.as_ref(), config.bins, &grid)?;
    let mut csv = String::from("bin_center,count\n");
    for (c, n) in hist.rows() {
        csv.push_str(&format!("{c},{n}\n"));
    }
    write_atomic(&outdir.join("histogram.csv"), csv.as_bytes())?;
    let advice = range_advice(&hist, DEFAULT_ADVICE_THRESHOLD);
    write_atomic(&outdir.join("advice.txt"), format!("{}\n", advice.as_str()).as_bytes())?;
    if advice != RangeAdvice::Ok {
        info!("scale range advice: {}", advice.as_str());
    }
    outputs.extend(["histogram.csv".to_string(), "advice.txt".to_string(), "run.json".to_string()]);

    let report = AnalyzeReport {
        input: input.display().to_string(),
        shape: field.shape().to_vec(),
        config: config.clone(),
        t: params.filter.gamma.t(),
        anis_ratio: params.correction.map(|c| c.anis_ratio),
        scales: grid.sigmas().to_vec(),
        advice: advice.as_str(),
        stats,
        outputs,
    };
    write_json(&outdir.join("run.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct ComponentRecord {
    name: String,
    width: f64,
    center_samples: usize,
    skeleton_samples: usize,
}

#[derive(Debug, Clone, Serialize)]
struct SynthRecord {
    kind: &'static str,
    width: f64,
    shape: Vec<usize>,
    foreground: f64,
    background: f64,
    seed: u64,
    noise: Option<String>,
    components: Vec<ComponentRecord>,
}

/// Generates a phantom and writes `field.f32`, `feature_mask.u8`,
/// `skeleton_mask.u8` and `phantom.json`.
pub fn cmd_synth(spec: &PhantomSpec, outdir: &Path) -> CliResult<Phantom> {
    let p = generate(spec)?;
    create_dir(outdir)?;
    write_field(outdir, "field", &p.field, Dtype::F32)?;
    write_field(outdir, "feature_mask", &p.feature_mask, Dtype::U8)?;
    write_field(outdir, "skeleton_mask", &p.skeleton_mask, Dtype::U8)?;
    let record = SynthRecord {
        kind: spec.kind.name(),
        width: spec.width,
        shape: spec.shape.clone(),
        foreground: spec.foreground,
        background: spec.background,
        seed: spec.seed,
        noise: spec.noise.map(|n| format!("{:?}", n)),
        components: p
            .components
            .iter()
            .map(|c| ComponentRecord {
                name: c.name.clone(),
                width: c.width,
                center_samples: c.center_samples.len(),
                skeleton_samples: c.skeleton.len(),
            })
            .collect(),
    };
    write_json(&outdir.join("phantom.json"), &record)?;
    Ok(p)
}

/// Loads the orientation written by `analyze` from a result directory.
pub fn read_orientation(dir: &Path) -> CliResult<Orientation> {
    let angle = dir.join("orientation.f32");
    if angle.exists() {
        return Ok(Orientation::Angle(read_field(&angle)?));
    }
    let comps = ["z", "y", "x"]
        .iter()
        .map(|a| read_field(&dir.join(format!("orientation_{a}.f32"))))
        .collect::<CliResult<Vec<_>>>()?;
    for c in &comps[1..] {
        if c.shape() != comps[0].shape() {
            return Err(CliError::format(dir, "orientation components differ in shape"));
        }
    }
    Ok(Orientation::Vector(comps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareReport {
    /// Axial angle difference in degrees.
    pub difference_deg: MaskedSummary,
}

/// Per-sample axial orientation difference between two analyses.
pub fn cmd_compare(a: &Path, b: &Path, mask: Option<&Path>) -> CliResult<CompareReport> {
    let (oa, ob) = (read_orientation(a)?, read_orientation(b)?);
    if oa.shape() != ob.shape() {
        return Err(CliError::Shape(format!("{:?} vs {:?}", oa.shape(), ob.shape())));
    }
    let d = axial_difference(&oa, &ob)?;
    let mask = mask.map(|p| read_mask(p, d.shape())).transpose()?;
    Ok(CompareReport { difference_deg: masked_summary(&d, mask.as_ref()) })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resample {
    /// Block-mean halving.
    Down2,
    /// Nearest-neighbour doubling onto the given shape.
    Up2(Vec<usize>),
}

fn resample_one(path: &Path, mode: &Resample, outdir: &Path) -> CliResult<PathBuf> {
    let f = read_field(path)?;
    let out = match mode {
        Resample::Down2 => downscale2(&f)?,
        Resample::Up2(shape) => upsample2_nearest(&f, shape)?,
    };
    let dtype = match path.extension().and_then(|e| e.to_str()) {
        Some("u8") => Dtype::U8,
        _ => Dtype::F32,
    };
    let stem = path.file_stem().unwrap().to_string_lossy();
    write_field(outdir, &stem, &out, dtype)
}

/// Resamples one raw field, or every raw field in a directory, into `outdir`
/// under the same names.
pub fn cmd_resample(input: &Path, mode: &Resample, outdir: &Path) -> CliResult<Vec<PathBuf>> {
    create_dir(outdir)?;
    if !input.is_dir() {
        return Ok(vec![resample_one(input, mode, outdir)?]);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| CliError::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(p.extension().and_then(|e| e.to_str()), Some("f32" | "u8")) && sidecar_path(p).exists()
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| resample_one(p, mode, outdir)).collect()
}

/// Measures the line width ratio at each width; writes `anis_ratio.csv` and `anis_ratio.json`.
pub fn cmd_calibrate_anis(filter: FilterParams, widths: &[f64], outdir: &Path) -> CliResult<AnisCalibration> {
    let cal = calibrate_anis_ratio(widths, filter)?;
    create_dir(outdir)?;
    let mut csv = String::from("width,ratio\n");
    for (w, r) in &cal.ratios {
        csv.push_str(&format!("{w},{r}\n"));
    }
    write_atomic(&outdir.join("anis_ratio.csv"), csv.as_bytes())?;
    #[derive(Serialize)]
    struct Record {
        gamma: f64,
        k: f64,
        mean: f64,
        std: f64,
    }
    write_json(
        &outdir.join("anis_ratio.json"),
        &Record { gamma: filter.gamma.gamma(), k: filter.k, mean: cal.mean, std: cal.std },
    )?;
    Ok(cal)
}

/// Refits the 3D correction coefficients on sphere, cylinder and slab
/// phantoms; writes `corr3d.csv`.
pub fn cmd_calibrate_corr3d(
    filter: FilterParams,
    width: f64,
    extent: usize,
    grid: &ScaleGrid,
    start: Correction3d,
    outdir: &Path,
) -> CliResult<CorrectionFit<4>> {
    let fit = optimize_correction_3d(width, extent, grid, filter, start)?;
    create_dir(outdir)?;
    let mut csv = String::from("coefficient,value\n");
    for (name, v) in ["c0", "c_s", "c_p", "c_l"].iter().zip(fit.coeffs) {
        csv.push_str(&format!("{name},{v}\n"));
    }
    csv.push_str(&format!("objective_start,{}\nobjective_end,{}\n", fit.objective_start, fit.objective_end));
    write_atomic(&outdir.join("corr3d.csv"), csv.as_bytes())?;
    Ok(fit)
}
