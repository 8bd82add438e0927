//! Closed-form scale relations.
//!
//! A first-order Gaussian derivative normalized by σ^γ responds most strongly
//! to a rectangular feature of width `x_f` at σ* = t·x_f, where the ratio `t`
//! depends only on γ. The ring integration filter is sized from σ* so that its
//! peak sits on the feature edges when centred on the feature.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::scalespace::{self, ScaleGrid, SweepParams};
use crate::synth::{self, PhantomKind, PhantomSpec};

pub const DEFAULT_GAMMA: f64 = 1.2;
pub const DEFAULT_K: f64 = 0.999;
/// Detected/true width of a straight line under the default γ and k.
pub const DEFAULT_ANIS_RATIO: f64 = 1.0675;

/// Scale-normalization exponent with its filter-to-feature ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    gamma: f64,
    t: f64,
}

impl GammaParams {
    pub fn new(gamma: f64) -> Result<Self> {
        let t = gamma_to_t(gamma)?;
        Ok(Self { gamma, t })
    }

    pub fn from_t(t: f64) -> Result<Self> {
        let gamma = t_to_gamma(t)?;
        Ok(Self { gamma, t })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// σ*/x_f.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Ratio of optimal scales of an isotropic and an anisotropic feature of
    /// equal width under the trace discriminator: γ/(3−γ).
    pub fn iso_ratio(&self) -> f64 {
        self.gamma / (3.0 - self.gamma)
    }
}

impl Default for GammaParams {
    fn default() -> Self {
        Self::new(DEFAULT_GAMMA).expect("default gamma is in range")
    }
}

/// The constants every downstream stage shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub gamma: GammaParams,
    /// Inner/outer Gaussian ratio of the ring filter.
    pub k: f64,
}

impl FilterParams {
    pub fn new(gamma: f64, k: f64) -> Result<Self> {
        check_k(k)?;
        Ok(Self {
            gamma: GammaParams::new(gamma)?,
            k,
        })
    }

    pub fn is_default(&self) -> bool {
        self.gamma.gamma == DEFAULT_GAMMA && self.k == DEFAULT_K
    }

    /// Ring σ_R paired with derivative scale `sigma`.
    pub fn ring_sigma(&self, sigma: f64) -> Result<f64> {
        sigma_r_from_scale(sigma, self.k, self.gamma.t)
    }
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            gamma: GammaParams::default(),
            k: DEFAULT_K,
        }
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Domain(format!("ring ratio k must be in (0, 1), got {k}")));
    }
    Ok(())
}

/// Lower real branch W₋₁ of the Lambert W function on [−1/e, 0).
///
/// Solved as `w + ln(−w) = ln(−x)`, which is increasing on w < −1, with
/// Newton steps kept inside a shrinking bisection bracket.
pub fn lambert_w_m1(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if !(x.is_finite() && x < 0.0 && x >= branch) {
        return Err(Error::Domain(format!("W-1 needs -1/e <= x < 0, got {x}")));
    }
    if x == branch {
        return Ok(-1.0);
    }
    let target = (-x).ln();
    let g = |w: f64| w + (-w).ln() - target;

    let mut hi = -1.0;
    let mut lo = -2.0;
    while g(lo) >= 0.0 {
        lo *= 2.0;
    }
    // Initial guess: branch-point series near −1/e, asymptotic form elsewhere.
    let mut w = if x < -0.25 {
        let p = -(2.0 * (1.0 + E * x)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        target - (-target).ln()
    };
    if !(w > lo && w < hi) {
        w = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let gw = g(w);
        if gw == 0.0 {
            break;
        }
        if gw < 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let slope = 1.0 + 1.0 / w;
        let mut next = w - gw / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

/// Filter-to-feature ratio t = σ*/x_f for a given γ.
pub fn gamma_to_t(gamma: f64) -> Result<f64> {
    if !(gamma > 1.0 && gamma < 3.0) {
        return Err(Error::Domain(format!(
            "gamma must lie in (1, 3) for a finite ratio, got {gamma}"
        )));
    }
    let y = 0.5 * (1.0 - gamma);
    let w = lambert_w_m1(y * y.exp())?;
    Ok(1.0 / (1.0 - gamma - 2.0 * w).sqrt())
}

/// Inverse of [`gamma_to_t`]: γ = 1/(t²(e^{1/(2t²)} − 1)) + 1.
pub fn t_to_gamma(t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    let u = 0.5 / (t * t);
    let denom = t * t * u.exp_m1();
    if denom.is_infinite() {
        // exp overflow: the correction term vanishes
        return Ok(1.0);
    }
    Ok(1.0 / denom + 1.0)
}

/// Summed edge response of a γ-normalized derivative to a rectangle of width
/// `x_f`: the integral of the derivative over the outside of the rectangle
/// minus the integral over its inside, (2σ^{γ−1}/√(2π))·(1 − e^{−x_f²/(2σ²)}).
pub fn rect_response(x_f: f64, sigma: f64, gamma: f64) -> Result<f64> {
    if !(x_f > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "rect_response needs x_f > 0 and sigma > 0, got ({x_f}, {sigma})"
        )));
    }
    let decay = -(-(x_f * x_f) / (2.0 * sigma * sigma)).exp_m1();
    Ok(2.0 * sigma.powf(gamma - 1.0) / (2.0 * PI).sqrt() * decay)
}

/// Peak radius of the ring filter per unit σ_R: k·√(2 ln(k²)/(k²−1)).
pub fn ring_radius_factor(k: f64) -> Result<f64> {
    check_k(k)?;
    let k2m1 = (k - 1.0) * (k + 1.0);
    Ok(k * (2.0 * k2m1.ln_1p() / k2m1).sqrt())
}

pub fn ring_peak_radius(sigma_r: f64, k: f64) -> Result<f64> {
    if !(sigma_r > 0.0) {
        return Err(Error::Domain(format!("sigma_r must be positive, got {sigma_r}")));
    }
    Ok(sigma_r * ring_radius_factor(k)?)
}

/// σ_R placing the ring peak on the edges of the feature that σ* detects:
/// σ* = t · 2 · ring_peak_radius(σ_R, k).
pub fn sigma_r_from_scale(sigma_star: f64, k: f64, t: f64) -> Result<f64> {
    if !(sigma_star > 0.0 && t > 0.0 && t < 1.0) {
        return Err(Error::Domain(format!(
            "need sigma* > 0 and 0 < t < 1, got ({sigma_star}, {t})"
        )));
    }
    Ok(sigma_star / (2.0 * t * ring_radius_factor(k)?))
}

/// Area of the part of a disk of radius `r` beyond the chord at abscissa `x`.
pub fn circular_segment_area(x: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && x >= 0.0 && x <= r) {
        return Err(Error::Domain(format!(
            "segment needs 0 <= x <= r and r > 0, got ({x}, {r})"
        )));
    }
    Ok(r * r * (x / r).acos() - x * (r * r - x * x).sqrt())
}

/// Stationarity condition of the ring/line intersection area with respect to
/// ring radius, with all lengths in units of σ. `psi` is the line offset from
/// the ring centre, `a_r` the ring radius, `w_r` and `w_x` the half widths of
/// ring and line.
pub fn ring_line_gradient(psi: f64, a_r: f64, w_r: f64, w_x: f64) -> f64 {
    let term = |r: f64, x: f64| r * (x / r).clamp(-1.0, 1.0).acos();
    let (outer, inner) = (a_r + w_r, a_r - w_r);
    term(outer, psi - w_x) - term(outer, psi + w_x) - term(inner, psi - w_x)
        + term(inner, psi + w_x)
}

/// Line offset ψ = x_c/σ at which a ring of radius `a_r`·σ maximizes its
/// intersection with a line of half width `w_x`·σ. Depends on the constants
/// only, so the detected width/scale ratio is independent of feature size.
pub fn ring_line_ratio(a_r: f64, w_r: f64, w_x: f64) -> Result<f64> {
    if !(a_r > w_r && w_r > 0.0 && w_x > 0.0) {
        return Err(Error::Domain(format!(
            "need a_r > w_r > 0 and w_x > 0, got ({a_r}, {w_r}, {w_x})"
        )));
    }
    let f = |psi: f64| ring_line_gradient(psi, a_r, w_r, w_x);
    let end = a_r + w_r + w_x;
    if f(0.0) >= 0.0 {
        return Err(Error::Numerical(
            "ring/line gradient is not negative at zero offset".into(),
        ));
    }
    const SCAN: usize = 4000;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..SCAN {
        let psi = end * i as f64 / SCAN as f64;
        if f(psi) > 0.0 {
            hi = Some(psi);
            break;
        }
        lo = psi;
    }
    let Some(mut hi) = hi else {
        return Err(Error::Numerical(
            "ring/line gradient has no sign change in (0, a_r + w_r + w_x)".into(),
        ));
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-width outcome of [`calibrate_anis_ratio`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnisCalibration {
    /// (true width, detected/true) pairs in input order.
    pub ratios: Vec<(f64, f64)>,
    pub mean: f64,
    pub std: f64,
}

const CALIBRATION_GRID_RATIO: f64 = 1.002;

/// Measures the detected/true width ratio of straight binary lines.
///
/// Each line is analysed with an uncorrected sweep over a fine geometric grid
/// around its expected scale; the selected scale is read on the centreline
/// (both middle columns for even widths) and converted to a width with `t`.
pub fn calibrate_anis_ratio(widths: &[f64], filter: FilterParams) -> Result<AnisCalibration> {
    if widths.len() < 3 {
        return Err(Error::Sizing(format!(
            "calibration needs at least 3 widths, got {}",
            widths.len()
        )));
    }
    let t = filter.gamma.t();
    let params = SweepParams::uncorrected(filter);
    let mut ratios = Vec::with_capacity(widths.len());
    for &w in widths {
        if !(w >= 4.0) || w.fract() != 0.0 {
            return Err(Error::Sizing(format!(
                "calibration widths must be whole numbers >= 4 px, got {w}"
            )));
        }
        let grid = ScaleGrid::geometric(0.75 * t * w, 1.5 * t * w, CALIBRATION_GRID_RATIO)?;
        let reach = 11.0 * grid.max();
        let cols = (w + 2.0 * reach).ceil() as usize;
        let phantom = synth::generate(&PhantomSpec::new(PhantomKind::Rect1D, w, vec![4, cols]))?;
        let result = scalespace::sweep(&phantom.field, &grid, &params)?;
        let centre = &phantom.components[0].center_samples;
        let s = centre.iter().map(|&i| result.scale.data()[i]).sum::<f64>() / centre.len() as f64;
        if s <= grid.min() || s >= grid.max() {
            return Err(Error::Sizing(format!(
                "width {w}: selected scale {s} lies on the grid boundary"
            )));
        }
        ratios.push((w, s / t / w));
    }
    let n = ratios.len() as f64;
    let mean = ratios.iter().map(|r| r.1).sum::<f64>() / n;
    let std = (ratios.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(AnisCalibration { ratios, mean, std })
}
