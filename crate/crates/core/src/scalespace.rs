//! Per-sample scale selection over a grid of derivative scales.

use log::info;

use crate::error::{Error, Result};
use crate::filters::RingSpec;
use crate::grid::ScalarField;
use crate::scalecalc::{self, FilterParams, DEFAULT_ANIS_RATIO};
use crate::synth::{self, PhantomKind, PhantomSpec};
use crate::tensor::{
    classic_structure_tensor, eigendecompose, measures, orientation, structure_tensor,
    EigenField, MeasureField, Orientation, TensorField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Geometric,
    Explicit,
}

/// Ascending list of derivative scales σ, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    sigmas: Vec<f64>,
    spacing: Spacing,
}

pub const DEFAULT_LINEAR_STEP: f64 = 1.0;
pub const DEFAULT_GEOMETRIC_RATIO: f64 = 1.189_207_115_002_721; // 2^(1/4)

fn check_bounds(min: f64, max: f64) -> Result<()> {
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return Err(Error::Grid(format!("need 0 < min <= max, got [{min}, {max}]")));
    }
    Ok(())
}

impl ScaleGrid {
    /// min, min + step, … up to max (inclusive within rounding).
    pub fn linear(min: f64, max: f64, step: f64) -> Result<Self> {
        check_bounds(min, max)?;
        if !(step > 0.0) {
            return Err(Error::Grid(format!("step must be positive, got {step}")));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize;
        let sigmas = (0..=n).map(|i| min + step * i as f64).collect();
        Ok(Self { sigmas, spacing: Spacing::Linear })
    }

    /// min, min·ratio, … up to max (inclusive within rounding).
    pub fn geometric(min: f64, max: f64, ratio: f64) -> Result<Self> {
        check_bounds(min, max)?;
        if !(ratio > 1.0) {
            return Err(Error::Grid(format!("ratio must exceed 1, got {ratio}")));
        }
        let n = ((max / min).ln() / ratio.ln() + 1e-9).floor() as usize;
        let sigmas = (0..=n).map(|i| min * ratio.powi(i as i32)).collect();
        Ok(Self { sigmas, spacing: Spacing::Geometric })
    }

    pub fn explicit(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::Grid("empty scale list".into()));
        }
        if sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Grid(format!("scales must be positive and finite: {sigmas:?}")));
        }
        if sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid(format!("scales must increase strictly: {sigmas:?}")));
        }
        Ok(Self { sigmas, spacing: Spacing::Explicit })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn max(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }
}

/// Coefficients of the 3D correction
/// `S / (c0 (1 + c_s m_s)(1 + c_p m_p)(1 + c_l m_l))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction3d {
    pub c0: f64,
    pub c_s: f64,
    pub c_p: f64,
    pub c_l: f64,
}

impl Correction3d {
    pub fn to_array(self) -> [f64; 4] {
        [self.c0, self.c_s, self.c_p, self.c_l]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { c0: a[0], c_s: a[1], c_p: a[2], c_l: a[3] }
    }

    pub fn factor(&self, ml: f64, mp: f64, ms: f64) -> f64 {
        self.c0 * (1.0 + self.c_s * ms) * (1.0 + self.c_p * mp) * (1.0 + self.c_l * ml)
    }
}

impl Default for Correction3d {
    fn default() -> Self {
        Self { c0: 0.53, c_s: 0.0158, c_p: 1.0, c_l: 0.327 }
    }
}

/// Constants of the shape-dependent scale correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionParams {
    /// Isotropic/anisotropic optimal-scale ratio, γ/(3−γ).
    pub iso_ratio: f64,
    /// Detected/true width of a straight line.
    pub anis_ratio: f64,
    pub coeffs_3d: Correction3d,
}

impl Default for CorrectionParams {
    fn default() -> Self {
        Self {
            iso_ratio: FilterParams::default().gamma.iso_ratio(),
            anis_ratio: DEFAULT_ANIS_RATIO,
            coeffs_3d: Correction3d::default(),
        }
    }
}

/// 2D correction divisor at anisotropy `a`; 1/iso_ratio at a = 0, 1/anis_ratio at a = 1.
pub fn correction_factor_2d(a: f64, p: &CorrectionParams) -> f64 {
    (1.0 + (p.anis_ratio - 1.0) * a) * (1.0 - (1.0 - p.iso_ratio) * (1.0 - a))
}

/// Calibration widths used when γ or k differ from the defaults.
pub const CALIBRATION_WIDTHS: [f64; 4] = [10.0, 20.0, 30.0, 40.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub filter: FilterParams,
    /// Optional Gaussian smoothing of each tensor channel after ring integration.
    pub post_smooth_sigma: Option<f64>,
    pub correction: Option<CorrectionParams>,
}

impl SweepParams {
    /// Corrected sweep. Outside the default γ and k the line ratio is
    /// measured on synthetic lines rather than taken from the default.
    pub fn new(filter: FilterParams) -> Result<Self> {
        let anis_ratio = if filter.is_default() {
            DEFAULT_ANIS_RATIO
        } else {
            let cal = scalecalc::calibrate_anis_ratio(&CALIBRATION_WIDTHS, filter)?;
            info!(
                "gamma {} k {}: measured line width ratio {:.4} replaces {}",
                filter.gamma.gamma(),
                filter.k,
                cal.mean,
                DEFAULT_ANIS_RATIO
            );
            cal.mean
        };
        Ok(Self {
            filter,
            post_smooth_sigma: None,
            correction: Some(CorrectionParams {
                iso_ratio: filter.gamma.iso_ratio(),
                anis_ratio,
                coeffs_3d: Correction3d::default(),
            }),
        })
    }

    pub fn uncorrected(filter: FilterParams) -> Self {
        Self { filter, post_smooth_sigma: None, correction: None }
    }
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            filter: FilterParams::default(),
            post_smooth_sigma: None,
            correction: Some(CorrectionParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpaceResult {
    /// Selected σ per sample.
    pub scale: ScalarField,
    /// Equal to `scale` when correction is off.
    pub corrected_scale: ScalarField,
    /// corrected_scale / t.
    pub width: ScalarField,
    pub best_trace: ScalarField,
    /// Tensor at the selected scale.
    pub tensor: TensorField,
    pub eigen: EigenField,
    pub measures: MeasureField,
    pub orientation: Orientation,
}

// Traces below (this × max |field|)² are rounding noise and compare as zero,
// so flat regions tie and keep the smallest scale.
const TRACE_FLOOR_REL: f64 = 1e-12;

/// Running-best scale selection by tensor trace. Ties keep the smaller σ.
pub fn sweep(field: &ScalarField, grid: &ScaleGrid, params: &SweepParams) -> Result<ScaleSpaceResult> {
    field.check_finite()?;
    let amplitude = field.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (TRACE_FLOOR_REL * amplitude).powi(2);
    let n = field.len();
    let gamma = params.filter.gamma.gamma();

    let mut best = vec![f64::NEG_INFINITY; n];
    let mut scale = vec![grid.min(); n];
    let mut channels: Vec<Vec<f64>> = Vec::new();
    for &sigma in grid.sigmas() {
        let ring = RingSpec::new(params.filter.ring_sigma(sigma)?, params.filter.k)?;
        let tensor = structure_tensor(field, sigma, gamma, &ring, params.post_smooth_sigma)?;
        let trace = tensor.trace();
        if channels.is_empty() {
            channels = vec![vec![0.0; n]; tensor.channels().len()];
        }
        for (i, &t) in trace.data().iter().enumerate() {
            let t = if t < floor { 0.0 } else { t };
            if t > best[i] {
                best[i] = t;
                scale[i] = sigma;
                for (dst, src) in channels.iter_mut().zip(tensor.channels()) {
                    dst[i] = src.data()[i];
                }
            }
        }
    }

    let shape = field.shape().to_vec();
    let tensor = TensorField::new(
        channels
            .into_iter()
            .map(|c| ScalarField::new(shape.clone(), c))
            .collect::<Result<_>>()?,
    )?;
    let eigen = eigendecompose(&tensor)?;
    let measures = measures(&eigen)?;
    let orientation = orientation(&eigen)?;
    let scale = ScalarField::new(shape.clone(), scale)?;
    let corrected_scale = match &params.correction {
        Some(c) => correct_scale(&scale, &measures, c)?,
        None => scale.clone(),
    };
    let width = width_map(&corrected_scale, params.filter.gamma.t())?;
    Ok(ScaleSpaceResult {
        scale,
        corrected_scale,
        width,
        best_trace: ScalarField::new(shape, best)?,
        tensor,
        eigen,
        measures,
        orientation,
    })
}

/// Applies the 2D or 3D correction depending on which measures are present.
pub fn correct_scale(s: &ScalarField, m: &MeasureField, p: &CorrectionParams) -> Result<ScalarField> {
    match m {
        MeasureField::Planar { anisotropy } => correct_scale_2d_with(s, anisotropy, p),
        MeasureField::Volumetric { .. } => correct_scale_3d_with(s, m, &p.coeffs_3d),
    }
}

/// 2D correction with the default constants.
pub fn correct_scale_2d(s: &ScalarField, a: &ScalarField) -> Result<ScalarField> {
    correct_scale_2d_with(s, a, &CorrectionParams::default())
}

pub fn correct_scale_2d_with(s: &ScalarField, a: &ScalarField, p: &CorrectionParams) -> Result<ScalarField> {
    s.zip_map(a, |s, a| s / correction_factor_2d(a, p))
}

/// 3D correction with the default coefficients.
pub fn correct_scale_3d(s: &ScalarField, m: &MeasureField) -> Result<ScalarField> {
    correct_scale_3d_with(s, m, &Correction3d::default())
}

pub fn correct_scale_3d_with(s: &ScalarField, m: &MeasureField, c: &Correction3d) -> Result<ScalarField> {
    let MeasureField::Volumetric { linearity, planarity, sphericity, .. } = m else {
        return Err(Error::Shape("3D correction needs volumetric measures".into()));
    };
    for f in [linearity, planarity, sphericity] {
        s.ensure_same_shape(f)?;
    }
    let (ml, mp, ms) = (linearity.data(), planarity.data(), sphericity.data());
    let data = s
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v / c.factor(ml[i], mp[i], ms[i]))
        .collect();
    ScalarField::new(s.shape().to_vec(), data)
}

/// Feature width x_f = σ / t.
pub fn width_map(corrected: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    Ok(corrected.map(|s| s / t))
}

/// Counts of selected scales over equal-width bins spanning [lo, hi].
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.counts.len()).map(|i| self.lo + w * (i as f64 + 0.5)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<(f64, u64)> {
        self.centers().into_iter().zip(self.counts.iter().copied()).collect()
    }
}

/// Histogram of `s` over samples where `mask` is nonzero (all samples if no
/// mask), bins spanning the grid's range. Out-of-range values land in the
/// end bins.
pub fn scale_histogram(
    s: &ScalarField,
    mask: Option<&ScalarField>,
    bins: usize,
    grid: &ScaleGrid,
) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
    }
    if let Some(m) = mask {
        s.ensure_same_shape(m)?;
    }
    let (lo, hi) = (grid.min(), grid.max());
    let mut counts = vec![0u64; bins];
    let width = (hi - lo) / bins as f64;
    for (i, &v) in s.data().iter().enumerate() {
        if mask.is_some_and(|m| m.data()[i] == 0.0) {
            continue;
        }
        let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        counts[b.clamp(0.0, (bins - 1) as f64) as usize] += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyMask);
    }
    Ok(Histogram { lo, hi, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeAdvice {
    Ok,
    ExpandLow,
    ExpandHigh,
    NoiseWarning,
}

impl RangeAdvice {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "OK",
            Self::ExpandLow => "EXPAND_LOW",
            Self::ExpandHigh => "EXPAND_HIGH",
            Self::NoiseWarning => "NOISE_WARNING",
        }
    }
}

pub const DEFAULT_ADVICE_THRESHOLD: f64 = 0.15;
/// Scales at or below this many pixels are where noise piles up.
pub const NOISE_SCALE_PX: f64 = 3.0;

/// Flags a histogram whose mass crowds either end of the scale range.
pub fn range_advice(hist: &Histogram, threshold: f64) -> RangeAdvice {
    let total = hist.total() as f64;
    if total == 0.0 {
        return RangeAdvice::Ok;
    }
    let top = hist.counts[hist.counts.len() - 1] as f64 / total;
    let bottom = hist.counts[0] as f64 / total;
    if top > threshold {
        RangeAdvice::ExpandHigh
    } else if bottom > threshold && hist.lo <= NOISE_SCALE_PX {
        RangeAdvice::NoiseWarning
    } else if bottom > threshold {
        RangeAdvice::ExpandLow
    } else {
        RangeAdvice::Ok
    }
}

/// How products of gradients are integrated in a single-scale analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Integration {
    Gaussian { rho: f64 },
    Ring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleScaleResult {
    pub tensor: TensorField,
    pub eigen: EigenField,
    pub measures: MeasureField,
    pub orientation: Orientation,
}

pub fn single_scale_analyze(
    field: &ScalarField,
    sigma: f64,
    integration: Integration,
    filter: &FilterParams,
) -> Result<SingleScaleResult> {
    field.check_finite()?;
    let tensor = match integration {
        Integration::Gaussian { rho } => classic_structure_tensor(field, sigma, rho)?,
        Integration::Ring => {
            let ring = RingSpec::new(filter.ring_sigma(sigma)?, filter.k)?;
            structure_tensor(field, sigma, filter.gamma.gamma(), &ring, None)?
        }
    };
    let eigen = eigendecompose(&tensor)?;
    Ok(SingleScaleResult {
        measures: measures(&eigen)?,
        orientation: orientation(&eigen)?,
        tensor,
        eigen,
    })
}

/// Derivative-free minimization by the Nelder–Mead simplex method.
/// Returns the best point and its value.
pub fn nelder_mead<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    start: [f64; N],
    steps: [f64; N],
    max_iter: usize,
    tol: f64,
) -> ([f64; N], f64) {
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] += steps[i];
        simplex.push((p, f(&p)));
    }
    let lerp = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] {
        std::array::from_fn(|i| a[i] + t * (b[i] - a[i]))
    };
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[N].1 - simplex[0].1).abs() <= tol {
            break;
        }
        let centroid: [f64; N] =
            std::array::from_fn(|i| simplex[..N].iter().map(|p| p.0[i]).sum::<f64>() / N as f64);
        let worst = simplex[N];
        let reflect = lerp(&centroid, &worst.0, -1.0);
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand = lerp(&centroid, &worst.0, -2.0);
            let fe = f(&expand);
            simplex[N] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflect, fr);
        } else {
            let (contract, fc) = if fr < worst.1 {
                let c = lerp(&centroid, &reflect, 0.5);
                (c, f(&c))
            } else {
                let c = lerp(&centroid, &worst.0, 0.5);
                (c, f(&c))
            };
            if fc < worst.1.min(fr) {
                simplex[N] = (contract, fc);
            } else {
                let best = simplex[0].0;
                for p in simplex.iter_mut().skip(1) {
                    p.0 = lerp(&best, &p.0, 0.5);
                    p.1 = f(&p.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0]
}

/// Selected scale and shape measures at the centre of one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct CentreReading {
    pub name: String,
    pub scale: f64,
    /// 2D: [A]; 3D: [m_l, m_p, m_s].
    pub measures: Vec<f64>,
}

fn centre_reading(phantom: &synth::Phantom, result: &ScaleSpaceResult) -> Result<CentreReading> {
    let comp = &phantom.components[0];
    let at = &comp.center_samples;
    let mean = |f: &ScalarField| at.iter().map(|&i| f.data()[i]).sum::<f64>() / at.len() as f64;
    let measures = match &result.measures {
        MeasureField::Planar { anisotropy } => vec![mean(anisotropy)],
        MeasureField::Volumetric { linearity, planarity, sphericity, .. } => {
            vec![mean(linearity), mean(planarity), mean(sphericity)]
        }
    };
    Ok(CentreReading { name: comp.name.clone(), scale: mean(&result.scale), measures })
}

/// Outcome of a correction-coefficient search.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionFit<const N: usize> {
    pub start: [f64; N],
    pub coeffs: [f64; N],
    pub objective_start: f64,
    pub objective_end: f64,
    /// False when the search did not beat its start point, which is returned instead.
    pub improved: bool,
    pub readings: Vec<CentreReading>,
    /// t · width.
    pub target: f64,
}

fn read_phantoms(
    kinds: &[PhantomKind],
    width: f64,
    shape: &[usize],
    grid: &ScaleGrid,
    filter: FilterParams,
) -> Result<Vec<CentreReading>> {
    let params = SweepParams::uncorrected(filter);
    kinds
        .iter()
        .map(|&kind| {
            let phantom = synth::generate(&PhantomSpec::new(kind, width, shape.to_vec()))?;
            let result = sweep(&phantom.field, grid, &params)?;
            centre_reading(&phantom, &result)
        })
        .collect()
}

fn fit<const N: usize>(
    readings: Vec<CentreReading>,
    target: f64,
    start: [f64; N],
    factor: impl Fn(&[f64; N], &[f64]) -> f64,
) -> CorrectionFit<N> {
    let objective = |c: &[f64; N]| {
        readings
            .iter()
            .map(|r| {
                let d = factor(c, &r.measures);
                if d > 0.0 { (r.scale / d - target).powi(2) } else { f64::INFINITY }
            })
            .sum::<f64>()
    };
    let steps = start.map(|c| (0.1 * c.abs()).max(0.01));
    let objective_start = objective(&start);
    let (best, value) = nelder_mead(objective, start, steps, 2000, 1e-14 * target * target);
    let improved = value < objective_start;
    CorrectionFit {
        start,
        coeffs: if improved { best } else { start },
        objective_start,
        objective_end: if improved { value } else { objective_start },
        improved,
        readings,
        target,
    }
}

/// Fits the 3D correction coefficients so that sphere, cylinder and slab of
/// equal width report the same corrected scale at their centres, starting
/// from `start`.
pub fn optimize_correction_3d(
    width: f64,
    extent: usize,
    grid: &ScaleGrid,
    filter: FilterParams,
    start: Correction3d,
) -> Result<CorrectionFit<4>> {
    let kinds = [PhantomKind::Sphere3D, PhantomKind::Cylinder3D, PhantomKind::Slab3D];
    let readings = read_phantoms(&kinds, width, &[extent; 3], grid, filter)?;
    let target = filter.gamma.t() * width;
    Ok(fit(readings, target, start.to_array(), |c, m| {
        Correction3d::from_array(*c).factor(m[0], m[1], m[2])
    }))
}

/// 2D analogue on a disk and a line, fitting (line excess, isotropic drop) in
/// `S / ((1 + a·A)(1 − b(1 − A)))` from `start`.
pub fn optimize_correction_2d(
    width: f64,
    extent: usize,
    grid: &ScaleGrid,
    filter: FilterParams,
    start: [f64; 2],
) -> Result<CorrectionFit<2>> {
    let kinds = [PhantomKind::Disk2D, PhantomKind::Line2D];
    let readings = read_phantoms(&kinds, width, &[extent; 2], grid, filter)?;
    let target = filter.gamma.t() * width;
    Ok(fit(readings, target, start, |c, m| (1.0 + c[0] * m[0]) * (1.0 - c[1] * (1.0 - m[0]))))
}
