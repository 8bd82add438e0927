//! Discrete kernels: Gaussian, γ-normalized Gaussian derivative, ring.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{convolve_separable, BoundaryRule, Kernel1D, ScalarField};

/// Gaussian and derivative kernels are cut at this many σ.
pub const GAUSSIAN_TRUNCATION: f64 = 4.0;
/// The ring is cut at this many σ_R. The ring's mass sits further out than a
/// Gaussian's, so the usual 4σ drops enough of it to bias scale selection.
pub const RING_TRUNCATION: f64 = 5.0;

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn radius(sigma: f64, truncation: f64) -> usize {
    (truncation * sigma).ceil().max(1.0) as usize
}

fn sampled_gaussian(sigma: f64, r: usize) -> Vec<f64> {
    let r = r as isize;
    (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Unit-sum sampled Gaussian, radius ceil(4σ).
pub fn gaussian_kernel(sigma: f64) -> Result<Kernel1D> {
    check_sigma(sigma)?;
    let mut taps = sampled_gaussian(sigma, radius(sigma, GAUSSIAN_TRUNCATION));
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    Kernel1D::new(taps)
}

/// Sampled ∂g/∂x multiplied by σ^γ, radius ceil(4σ).
///
/// Taps are stored so that convolution yields the derivative with its usual
/// sign: a rising step gives a positive response. The taps are built exactly
/// antisymmetric with a zero centre, so they sum to zero without any mean
/// correction and convolution maps constants to exact zeros.
pub fn gaussian_derivative_kernel(sigma: f64, gamma: f64) -> Result<Kernel1D> {
    check_sigma(sigma)?;
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be >= 1, got {gamma}")));
    }
    let r = radius(sigma, GAUSSIAN_TRUNCATION);
    let norm = sigma.powf(gamma) / (sigma * (2.0 * PI).sqrt());
    let right: Vec<f64> = (1..=r)
        .map(|x| {
            let x = x as f64;
            -x / (sigma * sigma) * (-x * x / (2.0 * sigma * sigma)).exp() * norm
        })
        .collect();
    let taps = right
        .iter()
        .rev()
        .map(|v| -v)
        .chain(std::iter::once(0.0))
        .chain(right.iter().copied())
        .collect();
    Kernel1D::new(taps)
}

/// Ring integration filter: difference of two unnormalized Gaussians of
/// widths σ_R and k·σ_R, scaled to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RingSpec {
    sigma_r: f64,
    k: f64,
    outer: Kernel1D,
    inner: Kernel1D,
}

impl RingSpec {
    pub fn new(sigma_r: f64, k: f64) -> Result<Self> {
        check_sigma(sigma_r)?;
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::Domain(format!("ring ratio k must be in (0, 1), got {k}")));
        }
        let r = radius(sigma_r, RING_TRUNCATION);
        let outer = Kernel1D::new(sampled_gaussian(sigma_r, r))?;
        let inner = Kernel1D::new(sampled_gaussian(sigma_r * k, r))?;
        Ok(Self {
            sigma_r,
            k,
            outer,
            inner,
        })
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn radius(&self) -> usize {
        self.outer.radius()
    }

    pub fn outer_taps(&self) -> &[f64] {
        self.outer.taps()
    }

    pub fn inner_taps(&self) -> &[f64] {
        self.inner.taps()
    }

    /// Sum of the N-D kernel before division.
    pub fn normalization(&self, rank: usize) -> f64 {
        let rank = rank as i32;
        self.outer.sum().powi(rank) - self.inner.sum().powi(rank)
    }
}

/// Convolves `field` with the unit-sum N-D ring kernel.
pub fn apply_ring(field: &ScalarField, spec: &RingSpec) -> Result<ScalarField> {
    let rank = field.rank();
    let outer = convolve_separable(field, &vec![spec.outer.clone(); rank], BoundaryRule::Mirror)?;
    let inner = convolve_separable(field, &vec![spec.inner.clone(); rank], BoundaryRule::Mirror)?;
    let z = spec.normalization(rank);
    outer.zip_map(&inner, |a, b| (a - b) / z)
}
