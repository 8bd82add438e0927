//! Structure tensors, their eigendecomposition, and shape measures.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{apply_ring, gaussian_derivative_kernel, gaussian_kernel, RingSpec};
use crate::grid::{convolve_separable, BoundaryRule, Kernel1D, ScalarField};

/// Symmetric tensor field stored as its upper triangle, channels ordered
/// (i, j) with i ≤ j in axis order: 2D (00, 01, 11), 3D (00, 01, 02, 11, 12, 22).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    rank: usize,
    channels: Vec<ScalarField>,
}

pub(crate) fn channel_count(rank: usize) -> usize {
    rank * (rank + 1) / 2
}

pub(crate) fn channel_index(rank: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * rank - i * i.saturating_sub(1) / 2 + (j - i)
}

impl TensorField {
    pub fn new(channels: Vec<ScalarField>) -> Result<Self> {
        let rank = match channels.len() {
            3 => 2,
            6 => 3,
            n => return Err(Error::Shape(format!("expected 3 or 6 tensor channels, got {n}"))),
        };
        for c in &channels {
            if c.rank() != rank {
                return Err(Error::Shape(format!(
                    "{}-channel tensor needs rank-{rank} channels, got rank {}",
                    channels.len(),
                    c.rank()
                )));
            }
            channels[0].ensure_same_shape(c)?;
        }
        Ok(Self { rank, channels })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn shape(&self) -> &[usize] {
        self.channels[0].shape()
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<ScalarField> {
        self.channels
    }

    pub fn channel(&self, i: usize, j: usize) -> &ScalarField {
        &self.channels[channel_index(self.rank, i, j)]
    }

    pub fn trace(&self) -> ScalarField {
        let mut acc = self.channel(0, 0).clone();
        for a in 1..self.rank {
            acc = acc.zip_map(self.channel(a, a), |x, y| x + y).expect("same shape");
        }
        acc
    }

    /// Full matrix at flat sample index `at`.
    #[allow(clippy::needless_range_loop)]
    pub fn matrix_at(&self, at: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..self.rank {
            for j in i..self.rank {
                let v = self.channel(i, j).data()[at];
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }
}

/// γ-normalized gradient: component i is the derivative along axis i,
/// Gaussian-smoothed with the same σ along every other axis.
pub fn gradient(field: &ScalarField, sigma: f64, gamma: f64) -> Result<Vec<ScalarField>> {
    let d = gaussian_derivative_kernel(sigma, gamma)?;
    let g = gaussian_kernel(sigma)?;
    gradient_with(field, &d, &g)
}

fn gradient_with(field: &ScalarField, d: &Kernel1D, g: &Kernel1D) -> Result<Vec<ScalarField>> {
    let rank = field.rank();
    if rank < 2 {
        return Err(Error::Shape(format!("tensor analysis needs rank 2 or 3, got {rank}")));
    }
    (0..rank)
        .map(|axis| {
            let kernels: Vec<Kernel1D> =
                (0..rank).map(|a| if a == axis { d.clone() } else { g.clone() }).collect();
            convolve_separable(field, &kernels, BoundaryRule::Mirror)
        })
        .collect()
}

fn outer_products(grad: &[ScalarField]) -> Vec<ScalarField> {
    let rank = grad.len();
    let mut out = Vec::with_capacity(channel_count(rank));
    for i in 0..rank {
        for j in i..rank {
            out.push(grad[i].zip_map(&grad[j], |a, b| a * b).expect("same shape"));
        }
    }
    out
}

fn smooth_channels(channels: Vec<ScalarField>, sigma: f64) -> Result<Vec<ScalarField>> {
    let g = gaussian_kernel(sigma)?;
    channels
        .iter()
        .map(|c| convolve_separable(c, &vec![g.clone(); c.rank()], BoundaryRule::Mirror))
        .collect()
}

/// Ring-integrated tensor at derivative scale `sigma`.
pub fn structure_tensor(
    field: &ScalarField,
    sigma: f64,
    gamma: f64,
    ring: &RingSpec,
    post_smooth_sigma: Option<f64>,
) -> Result<TensorField> {
    let grad = gradient(field, sigma, gamma)?;
    let mut channels = outer_products(&grad)
        .iter()
        .map(|c| apply_ring(c, ring))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = post_smooth_sigma {
        channels = smooth_channels(channels, s)?;
    }
    TensorField::new(channels)
}

/// Conventional tensor: unnormalized Gaussian gradients at `sigma`, products
/// smoothed with a Gaussian of `rho`. `rho == 0` skips the smoothing.
pub fn classic_structure_tensor(field: &ScalarField, sigma: f64, rho: f64) -> Result<TensorField> {
    if !(rho >= 0.0) {
        return Err(Error::Domain(format!("rho must be >= 0, got {rho}")));
    }
    let grad = gradient(field, sigma, 1.0)?;
    let mut channels = outer_products(&grad);
    if rho > 0.0 {
        channels = smooth_channels(channels, rho)?;
    }
    TensorField::new(channels)
}

/// Sorted eigenvalues and the unit eigenvector of the smallest one.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenField {
    /// Ascending.
    pub lambdas: Vec<ScalarField>,
    /// Components in axis order.
    pub principal: Vec<ScalarField>,
}

impl EigenField {
    pub fn rank(&self) -> usize {
        self.lambdas.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.lambdas[0].shape()
    }

    pub fn max_trace(&self) -> f64 {
        (0..self.lambdas[0].len())
            .map(|i| self.lambdas.iter().map(|l| l.data()[i]).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

// Components below this magnitude count as zero when fixing the sign of a
// unit eigenvector.
const SIGN_EPS: f64 = 1e-9;

/// Flips `v` so that its last significant component is positive.
pub fn canonical_sign(v: &mut [f64]) {
    if let Some(&c) = v.iter().rev().find(|c| c.abs() > SIGN_EPS) {
        if c < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Flips a (y, x) direction so that its angle from the x axis lies in (0, π].
pub fn canonical_sign_2d(v: &mut [f64; 2]) {
    if v[0] < -SIGN_EPS || (v[0].abs() <= SIGN_EPS && v[1] > 0.0) {
        *v = [-v[0], -v[1]];
    }
}

/// Eigen-decomposition of [[a, b], [b, c]] (axis order). The eigenvector of
/// the smaller eigenvalue is returned with canonical sign; isotropic input
/// yields the axis-0 unit vector.
pub fn eigen_sym2(a: f64, b: f64, c: f64) -> ([f64; 2], [f64; 2]) {
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    let rad = half.hypot(b);
    let (l1, l2) = (mean - rad, mean + rad);
    let mut v = if rad == 0.0 {
        [1.0, 0.0]
    } else {
        // Null vector of (M − λ1 I) from whichever row is better conditioned.
        let r0 = [b, l1 - a];
        let r1 = [l1 - c, b];
        let (n0, n1) = (r0[0].hypot(r0[1]), r1[0].hypot(r1[1]));
        if n0 >= n1 {
            [r0[0] / n0, r0[1] / n0]
        } else {
            [r1[0] / n1, r1[1] / n1]
        }
    };
    canonical_sign_2d(&mut v);
    ([l1, l2], v)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scaled(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Null vector of (m − λI) by the largest cross product of its rows.
fn null_vector(m: &[[f64; 3]; 3], lambda: f64) -> Option<[f64; 3]> {
    let rows = [
        [m[0][0] - lambda, m[0][1], m[0][2]],
        [m[1][0], m[1][1] - lambda, m[1][2]],
        [m[2][0], m[2][1], m[2][2] - lambda],
    ];
    let best = [
        cross(rows[0], rows[1]),
        cross(rows[0], rows[2]),
        cross(rows[1], rows[2]),
    ]
    .into_iter()
    .map(|c| (norm(c), c))
    .fold((0.0, [0.0; 3]), |b, c| if c.0 > b.0 { c } else { b });
    (best.0 > 0.0).then(|| scaled(best.1, 1.0 / best.0))
}

/// Cyclic Jacobi rotations; returns ascending eigenvalues and the matching
/// eigenvectors as columns.
#[allow(clippy::needless_range_loop)]
fn jacobi3(m: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0, 1, 2];
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = [a[idx[0]][idx[0]], a[idx[1]][idx[1]], a[idx[2]][idx[2]]];
    let mut vecs = [[0.0; 3]; 3];
    for (col, &i) in idx.iter().enumerate() {
        for r in 0..3 {
            vecs[r][col] = v[r][i];
        }
    }
    (vals, vecs)
}

// Relative eigenvalue gap below which the closed form loses accuracy and the
// Jacobi solver takes over.
const GAP_ANALYTIC: f64 = 1e-6;
// Relative gap below which eigenvalues are treated as equal.
const GAP_DEGENERATE: f64 = 1e-12;

/// Eigen-decomposition of a symmetric 3×3 matrix. Eigenvalues ascend; the
/// returned vector belongs to the smallest one and has canonical sign. When
/// the smallest eigenvalue is repeated, the vector is the normalized
/// projection of the first axis unit vector (then the second) onto its
/// eigenspace.
pub fn eigen_sym3(m: &[[f64; 3]; 3]) -> ([f64; 3], [f64; 3]) {
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return ([0.0; 3], [1.0, 0.0, 0.0]);
    }
    let a: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j] / scale));

    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let mut l = if p1 == 0.0 {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(f64::total_cmp);
        d
    } else {
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b: [[f64; 3]; 3] = std::array::from_fn(|i| {
            std::array::from_fn(|j| (a[i][j] - if i == j { q } else { 0.0 }) / p)
        });
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let phi = (0.5 * det).clamp(-1.0, 1.0).acos() / 3.0;
        let hi = q + 2.0 * p * phi.cos();
        let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
        [lo, 3.0 * q - lo - hi, hi]
    };
    l.sort_by(f64::total_cmp);
    let span = (l[2] - l[0]).abs().max(l[2].abs()).max(l[0].abs());
    let close = |x: f64, y: f64, rel: f64| y - x <= rel * span;

    // The closed form loses accuracy near repeated roots; Jacobi does not.
    let mut v = if !close(l[0], l[1], GAP_ANALYTIC) && !close(l[1], l[2], GAP_ANALYTIC) {
        null_vector(&a, l[0]).unwrap_or([1.0, 0.0, 0.0])
    } else {
        let (vals, vecs) = jacobi3(&a);
        l = vals;
        let col = |c: usize| [vecs[0][c], vecs[1][c], vecs[2][c]];
        if !close(l[0], l[1], GAP_DEGENERATE) {
            col(0)
        } else if close(l[1], l[2], GAP_DEGENERATE) {
            [1.0, 0.0, 0.0]
        } else {
            let top = col(2);
            let project = |e: [f64; 3]| {
                let d = dot(e, top);
                [e[0] - d * top[0], e[1] - d * top[1], e[2] - d * top[2]]
            };
            let p0 = project([1.0, 0.0, 0.0]);
            let p = if norm(p0) > 1e-6 { p0 } else { project([0.0, 1.0, 0.0]) };
            scaled(p, 1.0 / norm(p))
        }
    };
    canonical_sign(&mut v);
    (scaled(l, scale), v)
}

/// Per-sample eigen-decomposition of a tensor field.
pub fn eigendecompose(tensors: &TensorField) -> Result<EigenField> {
    for c in tensors.channels() {
        c.check_finite()?;
    }
    let rank = tensors.rank();
    let n = tensors.channels()[0].len();
    let per: Vec<([f64; 3], [f64; 3])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let m = tensors.matrix_at(i);
            if rank == 2 {
                let (l, v) = eigen_sym2(m[0][0], m[0][1], m[1][1]);
                ([l[0], l[1], 0.0], [v[0], v[1], 0.0])
            } else {
                eigen_sym3(&m)
            }
        })
        .collect();
    let shape = tensors.shape().to_vec();
    type Pair = ([f64; 3], [f64; 3]);
    let field = |f: &dyn Fn(&Pair) -> f64| {
        ScalarField::new(shape.clone(), per.iter().map(f).collect())
    };
    let mut lambdas = Vec::with_capacity(rank);
    let mut principal = Vec::with_capacity(rank);
    for a in 0..rank {
        lambdas.push(field(&|p| p.0[a])?);
        principal.push(field(&|p| p.1[a])?);
    }
    Ok(EigenField { lambdas, principal })
}

/// Shape measures, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureField {
    Planar {
        anisotropy: ScalarField,
    },
    Volumetric {
        fa: ScalarField,
        linearity: ScalarField,
        planarity: ScalarField,
        sphericity: ScalarField,
    },
}

impl MeasureField {
    pub fn anisotropy(&self) -> Option<&ScalarField> {
        match self {
            Self::Planar { anisotropy } => Some(anisotropy),
            Self::Volumetric { .. } => None,
        }
    }

    pub fn fa(&self) -> Option<&ScalarField> {
        match self {
            Self::Volumetric { fa, .. } => Some(fa),
            Self::Planar { .. } => None,
        }
    }
}

/// Degeneracy threshold relative to the largest trace in the field.
pub const DEGENERACY_REL: f64 = 1e-12;

/// A = 1 − λ1/λ2; 0 where λ2 is negligible.
pub fn anisotropy(l1: f64, l2: f64, eps: f64) -> f64 {
    if l2 <= eps {
        0.0
    } else {
        (1.0 - l1 / l2).clamp(0.0, 1.0)
    }
}

/// (fa, linearity, planarity, sphericity); a flat spot reads as a sphere.
pub fn shape_measures(l: [f64; 3], eps: f64) -> [f64; 4] {
    let [l1, l2, l3] = l;
    if l3 <= eps {
        return [0.0, 0.0, 0.0, 1.0];
    }
    let num = (l1 - l2).powi(2) + (l2 - l3).powi(2) + (l3 - l1).powi(2);
    let den = l1 * l1 + l2 * l2 + l3 * l3;
    let fa = (0.5 * num / den).sqrt();
    let c = |x: f64| x.clamp(0.0, 1.0);
    [c(fa), c((l2 - l1) / l3), c((l3 - l2) / l3), c(l1 / l3)]
}

pub fn measures_2d(eigen: &EigenField) -> Result<MeasureField> {
    if eigen.rank() != 2 {
        return Err(Error::Shape(format!("measures_2d needs rank 2, got {}", eigen.rank())));
    }
    let eps = DEGENERACY_REL * eigen.max_trace();
    let anisotropy = eigen.lambdas[0].zip_map(&eigen.lambdas[1], |a, b| anisotropy(a, b, eps))?;
    Ok(MeasureField::Planar { anisotropy })
}

pub fn measures_3d(eigen: &EigenField) -> Result<MeasureField> {
    if eigen.rank() != 3 {
        return Err(Error::Shape(format!("measures_3d needs rank 3, got {}", eigen.rank())));
    }
    let eps = DEGENERACY_REL * eigen.max_trace();
    let [l1, l2, l3] = [0, 1, 2].map(|a| eigen.lambdas[a].data());
    let per: Vec<[f64; 4]> = (0..l1.len())
        .into_par_iter()
        .map(|i| shape_measures([l1[i], l2[i], l3[i]], eps))
        .collect();
    let shape = eigen.shape().to_vec();
    let pick = |k: usize| ScalarField::new(shape.clone(), per.iter().map(|m| m[k]).collect());
    Ok(MeasureField::Volumetric {
        fa: pick(0)?,
        linearity: pick(1)?,
        planarity: pick(2)?,
        sphericity: pick(3)?,
    })
}

pub fn measures(eigen: &EigenField) -> Result<MeasureField> {
    match eigen.rank() {
        2 => measures_2d(eigen),
        _ => measures_3d(eigen),
    }
}

/// Direction of least change.
#[derive(Debug, Clone, PartialEq)]
pub enum Orientation {
    /// Angle from the x axis (horizontal, increasing column) toward the y axis
    /// (increasing row), in (0, π].
    Angle(ScalarField),
    /// Unit vector components in axis order (z, y, x), canonical sign.
    Vector(Vec<ScalarField>),
}

/// Folds an axial 2D direction, given as (y, x) components, into (0, π].
pub fn axial_angle(vy: f64, vx: f64) -> f64 {
    let a = vy.atan2(vx);
    let a = if a <= 0.0 { a + std::f64::consts::PI } else { a };
    // atan2 of a canonical vector may land a rounding step above π
    a.min(std::f64::consts::PI)
}

pub fn orientation(eigen: &EigenField) -> Result<Orientation> {
    match eigen.rank() {
        2 => Ok(Orientation::Angle(
            eigen.principal[0].zip_map(&eigen.principal[1], axial_angle)?,
        )),
        _ => Ok(Orientation::Vector(eigen.principal.clone())),
    }
}

impl Orientation {
    pub fn shape(&self) -> &[usize] {
        match self {
            Orientation::Angle(a) => a.shape(),
            Orientation::Vector(v) => v[0].shape(),
        }
    }

    /// Resamples every component with `f`; vectors are not renormalized.
    pub fn map_fields(&self, mut f: impl FnMut(&ScalarField) -> Result<ScalarField>) -> Result<Orientation> {
        Ok(match self {
            Orientation::Angle(a) => Orientation::Angle(f(a)?),
            Orientation::Vector(v) => Orientation::Vector(v.iter().map(f).collect::<Result<_>>()?),
        })
    }
}

/// Per-sample axial angle between two orientation fields, in degrees within
/// [0, 90]. A direction and its negation count as the same.
pub fn axial_difference(a: &Orientation, b: &Orientation) -> Result<ScalarField> {
    match (a, b) {
        (Orientation::Angle(x), Orientation::Angle(y)) => x.zip_map(y, |p, q| {
            let d = (p - q).abs() % std::f64::consts::PI;
            d.min(std::f64::consts::PI - d).to_degrees()
        }),
        (Orientation::Vector(u), Orientation::Vector(v)) if u.len() == v.len() => {
            for c in u.iter().chain(v) {
                u[0].ensure_same_shape(c)?;
            }
            let n = u[0].len();
            let data = (0..n)
                .map(|i| {
                    let dot: f64 = u.iter().zip(v).map(|(p, q)| p.data()[i] * q.data()[i]).sum();
                    let nu: f64 = u.iter().map(|p| p.data()[i].powi(2)).sum::<f64>().sqrt();
                    let nv: f64 = v.iter().map(|q| q.data()[i].powi(2)).sum::<f64>().sqrt();
                    if nu == 0.0 || nv == 0.0 {
                        return 0.0;
                    }
                    (dot.abs() / (nu * nv)).min(1.0).acos().to_degrees()
                })
                .collect();
            ScalarField::new(u[0].shape().to_vec(), data)
        }
        _ => Err(Error::Shape("orientation fields differ in kind or rank".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalecalc::FilterParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    // Classical largest-off-diagonal Jacobi, 50 sweeps, as an independent oracle.
    fn jacobi_oracle(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut a = m;
        let mut v = [[0.0; 3]; 3];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _ in 0..50 * 3 {
            let (mut p, mut q) = (0, 1);
            for (i, j) in [(0, 2), (1, 2)] {
                if a[i][j].abs() > a[p][q].abs() {
                    (p, q) = (i, j);
                }
            }
            if a[p][q].abs() < 1e-300 {
                break;
            }
            let phi = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
            let (s, c) = phi.sin_cos();
            let mut r = [[0.0; 3]; 3];
            for (i, row) in r.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            r[p][p] = c;
            r[q][q] = c;
            r[p][q] = s;
            r[q][p] = -s;
            let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| {
                let mut o = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        o[i][j] = (0..3).map(|k| x[i][k] * y[k][j]).sum();
                    }
                }
                o
            };
            let rt = [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]];
            a = mul(mul(rt, a), r);
            v = mul(v, r);
        }
        let mut idx = [0, 1, 2];
        idx.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
        let vals = idx.map(|i| a[i][i]);
        let vecs = [0, 1, 2].map(|r| idx.map(|i| v[r][i]));
        (vals, vecs)
    }

    fn random_psd(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        let g: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| g[i][k] * g[j][k]).sum()))
    }

    #[test]
    fn eigen3_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let m = random_psd(&mut rng);
            let (l, v) = eigen_sym3(&m);
            let (ol, ov) = jacobi_oracle(m);
            for i in 0..3 {
                assert!((l[i] - ol[i]).abs() < 1e-9, "{l:?} vs {ol:?}");
            }
            let o = [ov[0][0], ov[1][0], ov[2][0]];
            let c = dot(v, o).abs().min(1.0);
            assert!(c.acos() < 1e-6);
            assert!((norm(v) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eigen3_special_cases() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let (l, v) = eigen_sym3(&id);
        assert_eq!(l, [1.0, 1.0, 1.0]);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        // axis order (z, y, x): diag(3, 1, 2) has its smallest value on axis 1
        let d = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let (l, v) = eigen_sym3(&d);
        assert_eq!(l, [1.0, 2.0, 3.0]);
        assert!((v[1] - 1.0).abs() < 1e-12 && v[0].abs() < 1e-12 && v[2].abs() < 1e-12);
        let (l, v) = eigen_sym3(&[[0.0; 3]; 3]);
        assert_eq!((l, v), ([0.0; 3], [1.0, 0.0, 0.0]));
        // repeated smallest eigenvalue, top eigenvector along axis 0
        let (l, v) = eigen_sym3(&[[5.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(l, [1.0, 1.0, 5.0]);
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen3_near_degenerate_uses_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            // Q diag(1, 1 + 1e-8, 3) Qᵀ from a random rotation
            let g = random_psd(&mut rng);
            let (_, q) = jacobi_oracle(g);
            let d = [1.0, 1.0 + 1e-8, 3.0];
            let m: [[f64; 3]; 3] =
                std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| q[i][k] * d[k] * q[j][k]).sum()));
            let (l, v) = eigen_sym3(&m);
            assert!((l[0] - 1.0).abs() < 1e-9 && (l[2] - 3.0).abs() < 1e-9, "{l:?} {m:?}");
            let top = [q[0][2], q[1][2], q[2][2]];
            assert!(dot(v, top).abs() < 1e-6);
        }
    }

    #[test]
    fn eigen2_closed_form() {
        let (l, v) = eigen_sym2(2.0, 0.0, 1.0);
        assert_eq!(l, [1.0, 2.0]);
        assert!((v[1].abs() - 1.0).abs() < 1e-15);
        let (l, v) = eigen_sym2(1.0, 0.0, 1.0);
        assert_eq!(l, [1.0, 1.0]);
        assert_eq!(v, [1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (a, b, c) = (rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0));
            let (l, v) = eigen_sym2(a, b, c);
            let r = [a * v[0] + b * v[1] - l[0] * v[0], b * v[0] + c * v[1] - l[0] * v[1]];
            assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12);
            assert!(l[0] <= l[1]);
            let ang = axial_angle(v[0], v[1]);
            assert!(ang > 0.0 && ang <= PI);
        }
    }

    #[test]
    fn sign_convention_is_axial() {
        let v = [0.3f64, -0.8, 0.52];
        let n = norm(v);
        let mut a = scaled(v, 1.0 / n);
        let mut b = scaled(a, -1.0);
        canonical_sign(&mut a);
        canonical_sign(&mut b);
        assert_eq!(a, b);
        assert!(a[2] > 0.0);
        assert_eq!(axial_angle(1.0, 0.0), axial_angle(-1.0, 0.0));
        assert_eq!(axial_angle(0.0, 1.0), PI);
        assert!((axial_angle(1.0, 0.0) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn measure_values() {
        assert_eq!(anisotropy(1.0, 1.0, 0.0), 0.0);
        assert_eq!(anisotropy(0.0, 1.0, 0.0), 1.0);
        assert_eq!(anisotropy(1.0, 2.0, 0.0), 0.5);
        assert_eq!(anisotropy(0.0, 0.0, 0.0), 0.0);
        assert_eq!(shape_measures([1.0, 1.0, 1.0], 0.0), [0.0, 0.0, 0.0, 1.0]);
        let p = shape_measures([0.0, 0.0, 1.0], 0.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[2] == 1.0);
        let l = shape_measures([0.0, 1.0, 1.0], 0.0);
        assert!((l[0] - 0.5f64.sqrt()).abs() < 1e-15 && l[1] == 1.0);
        assert_eq!(shape_measures([0.0; 3], 1e-12), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn measures_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let (l, _) = eigen_sym3(&random_psd(&mut rng));
            let m = shape_measures(l, 0.0);
            assert!((m[1] + m[2] + m[3] - 1.0).abs() < 1e-9);
            assert!(m.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    fn vertical_line(shape: [usize; 2], x0: usize, w: usize) -> ScalarField {
        ScalarField::from_fn(&shape, |i| if (x0..x0 + w).contains(&i[1]) { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn gradient_basics() {
        let c = ScalarField::filled(&[20, 20], 2.0).unwrap();
        for g in gradient(&c, 2.0, 1.2).unwrap() {
            assert!(g.data().iter().all(|v| v.abs() < 1e-14));
        }
        let ramp = ScalarField::from_fn(&[40, 40], |i| i[1] as f64).unwrap();
        let g = gradient(&ramp, 2.0, 1.0).unwrap();
        for y in 10..30 {
            for x in 10..30 {
                assert!((g[1].get(&[y, x]) - g[1].get(&[20, 20])).abs() < 1e-10);
                assert!(g[1].get(&[y, x]) > 0.0);
                assert!(g[0].get(&[y, x]).abs() < 1e-12);
            }
        }
        // edges of a vertical bar carry the x response
        let bar = vertical_line([80, 120], 50, 20);
        let g = gradient(&bar, 7.44, 1.2).unwrap();
        let row: Vec<f64> = (0..120).map(|x| g[1].get(&[40, x]).abs()).collect();
        let argmax = row.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
        assert!(argmax == 49 || argmax == 50 || argmax == 69 || argmax == 70, "{argmax}");
        assert!(g[0].data().iter().all(|v| v.abs() < 1e-12));
    }

    fn ring_for(sigma: f64) -> RingSpec {
        let p = FilterParams::default();
        RingSpec::new(p.ring_sigma(sigma).unwrap(), p.k).unwrap()
    }

    #[test]
    fn structure_tensor_constant_and_swap() {
        let c = ScalarField::filled(&[24, 24], 1.0).unwrap();
        let t = structure_tensor(&c, 2.0, 1.2, &ring_for(2.0), None).unwrap();
        assert!(t.channels().iter().all(|ch| ch.data().iter().all(|v| v.abs() < 1e-20)));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = ScalarField::from_fn(&[20, 20], |_| rng.random_range(0.0..1.0)).unwrap();
        let ft = ScalarField::from_fn(&[20, 20], |i| f.get(&[i[1], i[0]])).unwrap();
        let a = structure_tensor(&f, 1.5, 1.2, &ring_for(1.5), Some(1.0)).unwrap();
        let b = structure_tensor(&ft, 1.5, 1.2, &ring_for(1.5), Some(1.0)).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let (p, q) = (&[y, x], &[x, y]);
                assert!((a.channel(0, 0).get(p) - b.channel(1, 1).get(q)).abs() < 1e-12);
                assert!((a.channel(0, 1).get(p) - b.channel(0, 1).get(q)).abs() < 1e-12);
                assert!((a.channel(1, 1).get(p) - b.channel(0, 0).get(q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disk_trace_below_line_trace() {
        let (n, w) = (128usize, 20.0);
        let f = ScalarField::from_fn(&[n, n], |i| {
            let (y, x) = (i[0] as f64 + 0.5, i[1] as f64 + 0.5);
            let disk = (y - 32.0).powi(2) + (x - 32.0).powi(2) < 100.0;
            let line = (86.0..106.0).contains(&x) && (10.0..118.0).contains(&y);
            if disk || line { 1.0 } else { 0.0 }
        })
        .unwrap();
        let s = 0.372 * w;
        let tr = structure_tensor(&f, s, 1.2, &ring_for(s), None).unwrap().trace();
        assert!(tr.get(&[31, 31]) < tr.get(&[64, 95]));
    }

    #[test]
    fn classic_tensor_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = ScalarField::from_fn(&[16, 18], |_| rng.random_range(0.0..1.0)).unwrap();
        let t = classic_structure_tensor(&f, 1.0, 0.0).unwrap();
        let g = gradient(&f, 1.0, 1.0).unwrap();
        for i in 0..f.len() {
            assert_eq!(t.channel(0, 1).data()[i], g[0].data()[i] * g[1].data()[i]);
        }
        let c = ScalarField::filled(&[16, 16], 4.0).unwrap();
        let t = classic_structure_tensor(&c, 1.0, 2.0).unwrap();
        assert!(t.trace().data().iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn classic_trace_is_blurrier_across_the_line() {
        let f = vertical_line([64, 160], 70, 20);
        let s = 0.372 * 20.0;
        let ring = structure_tensor(&f, s, 1.2, &ring_for(s), None).unwrap().trace();
        let classic = classic_structure_tensor(&f, s, 2.0 * s).unwrap().trace();
        let support = |t: &ScalarField| {
            let row: Vec<f64> = (0..160).map(|x| t.get(&[32, x])).collect();
            let m = row.iter().copied().fold(0.0, f64::max);
            row.iter().filter(|&&v| v >= 0.5 * m).count()
        };
        assert!(support(&classic) > support(&ring));
    }

    #[test]
    fn rotation_equivariance_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 24;
        let f = ScalarField::from_fn(&[n, n], |_| rng.random_range(0.0..1.0)).unwrap();
        // rotated(y, x) = f(x, n − 1 − y)
        let r = ScalarField::from_fn(&[n, n], |i| f.get(&[i[1], n - 1 - i[0]])).unwrap();
        let analyse = |g: &ScalarField| {
            let t = structure_tensor(g, 2.0, 1.2, &ring_for(2.0), None).unwrap();
            let e = eigendecompose(&t).unwrap();
            let Orientation::Angle(a) = orientation(&e).unwrap() else { unreachable!() };
            (a, measures_2d(&e).unwrap().anisotropy().unwrap().clone())
        };
        let (fa, fm) = analyse(&f);
        let (ra, rm) = analyse(&r);
        for y in 0..n {
            for x in 0..n {
                let (src, dst) = (&[x, n - 1 - y], &[y, x]);
                assert!((fm.get(src) - rm.get(dst)).abs() < 1e-9);
                let d = (fa.get(src) - ra.get(dst)).rem_euclid(PI);
                let d = d.min(PI - d);
                assert!((d - PI / 2.0).abs() < 1e-6, "{d}");
            }
        }
    }

    #[test]
    fn intensity_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = ScalarField::from_fn(&[10, 12, 11], |_| rng.random_range(0.0..1.0)).unwrap();
        let g = f.map(|v| 3.0 * v);
        let ta = structure_tensor(&f, 1.2, 1.2, &ring_for(1.2), None).unwrap();
        let tb = structure_tensor(&g, 1.2, 1.2, &ring_for(1.2), None).unwrap();
        for (a, b) in ta.channels().iter().zip(tb.channels()) {
            let top = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((9.0 * x - y).abs() <= 1e-12 * top);
            }
        }
        let (ea, eb) = (eigendecompose(&ta).unwrap(), eigendecompose(&tb).unwrap());
        let (ma, mb) = (measures_3d(&ea).unwrap(), measures_3d(&eb).unwrap());
        let (MeasureField::Volumetric { fa: fa1, linearity: l1, .. }, MeasureField::Volumetric { fa: fa2, linearity: l2, .. }) = (&ma, &mb) else {
            unreachable!()
        };
        for i in 0..f.len() {
            assert!((fa1.data()[i] - fa2.data()[i]).abs() < 1e-9);
            assert!((l1.data()[i] - l2.data()[i]).abs() < 1e-9);
            let va = [0, 1, 2].map(|a| ea.principal[a].data()[i]);
            let vb = [0, 1, 2].map(|a| eb.principal[a].data()[i]);
            assert!(dot(va, vb).abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn tensor_is_psd_and_trace_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = ScalarField::from_fn(&[12, 12, 12], |_| rng.random_range(0.0..1.0)).unwrap();
        let t = structure_tensor(&f, 1.0, 1.2, &ring_for(1.0), None).unwrap();
        let e = eigendecompose(&t).unwrap();
        let scale = e.max_trace();
        assert!(e.lambdas[0].data().iter().all(|&l| l >= -1e-9 * scale));
        assert!(t.trace().data().iter().all(|&v| v >= -1e-12 * scale));
        for i in 0..f.len() {
            assert!(e.lambdas[0].data()[i] <= e.lambdas[1].data()[i]);
            assert!(e.lambdas[1].data()[i] <= e.lambdas[2].data()[i]);
        }
    }

    #[test]
    fn vertical_line_orientation() {
        let f = vertical_line([64, 100], 40, 20);
        let s = 0.372 * 20.0;
        let t = structure_tensor(&f, s, 1.2, &ring_for(s), None).unwrap();
        let Orientation::Angle(a) = orientation(&eigendecompose(&t).unwrap()).unwrap() else {
            unreachable!()
        };
        assert!((a.get(&[32, 50]) - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn channel_indexing() {
        assert_eq!([(0, 0), (0, 1), (1, 1)].map(|(i, j)| channel_index(2, i, j)), [0, 1, 2]);
        assert_eq!(
            [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)].map(|(i, j)| channel_index(3, i, j)),
            [0, 1, 2, 3, 4, 5]
        );
        assert_eq!(channel_index(3, 2, 1), 4);
    }

    #[test]
    fn rejects_bad_input() {
        let f = ScalarField::zeros(&[4, 4]).unwrap();
        assert!(TensorField::new(vec![f.clone(), f.clone()]).is_err());
        let bad = ScalarField::new(vec![4, 4], vec![f64::NAN; 16]).unwrap();
        let t = TensorField::new(vec![bad, f.clone(), f]).unwrap();
        assert!(eigendecompose(&t).is_err());
    }

    #[test]
    fn axial_difference_identifies_opposite_vectors() {
        let f = |v: f64| ScalarField::filled(&[2, 2, 2], v).unwrap();
        let a = Orientation::Vector(vec![f(0.0), f(0.0), f(1.0)]);
        let b = Orientation::Vector(vec![f(0.0), f(0.0), f(-1.0)]);
        let c = Orientation::Vector(vec![f(0.0), f(0.5f64.sqrt()), f(0.5f64.sqrt())]);
        assert!(axial_difference(&a, &b).unwrap().max() < 1e-12);
        let d = axial_difference(&a, &c).unwrap();
        assert!(d.data().iter().all(|v| (v - 45.0).abs() < 1e-9));

        let g = |v: f64| ScalarField::filled(&[2, 2], v).unwrap();
        let p = Orientation::Angle(g(0.1));
        let q = Orientation::Angle(g(std::f64::consts::PI - 0.1));
        let d = axial_difference(&p, &q).unwrap();
        assert!(d.data().iter().all(|v| (v - 0.2f64.to_degrees()).abs() < 1e-9));
        assert!(axial_difference(&p, &a).is_err());
    }
}
