//! Dense scalar fields and separable convolution with mirror boundaries.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense rank-2 or rank-3 grid of samples, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if !(2..=3).contains(&shape.len()) {
        return Err(Error::Shape(format!(
            "rank must be 2 or 3, got {}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero extent in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl ScalarField {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} samples, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    /// Builds a field by evaluating `f` at every multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.rank()];
        for ax in (0..self.rank().saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * self.shape[ax + 1];
        }
        strides
    }

    /// Flat offset of a multi-index. Panics if out of bounds.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for (ax, (&i, &n)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {i} out of bounds on axis {ax} (extent {n})");
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, mut off: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank()];
        for ax in (0..self.rank()).rev() {
            idx[ax] = off % self.shape[ax];
            off /= self.shape[ax];
        }
        idx
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two fields of identical shape.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .par_iter()
                .zip(other.data.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// First non-finite sample, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Odd-length tap array centred at index `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
    radius: usize,
}

impl Kernel1D {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.len() % 2 != 1 {
            return Err(Error::Sizing(format!(
                "kernel length must be odd, got {}",
                taps.len()
            )));
        }
        if let Some(i) = taps.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let radius = taps.len() / 2;
        Ok(Self { taps, radius })
    }

    pub fn identity() -> Self {
        Self {
            taps: vec![1.0],
            radius: 0,
        }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Exact mirror symmetry of the taps about the centre.
    pub fn parity(&self) -> Parity {
        let r = self.radius;
        let t = &self.taps;
        if (1..=r).all(|x| t[r + x] == t[r - x]) {
            Parity::Even
        } else if t[r] == 0.0 && (1..=r).all(|x| t[r + x] == -t[r - x]) {
            Parity::Odd
        } else {
            Parity::None
        }
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }
}

/// Symmetry of a kernel's taps about their centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryRule {
    /// Reflection about the edge sample: index −1 maps to 1, n maps to n−2.
    #[default]
    Mirror,
}

impl BoundaryRule {
    /// Maps any integer position onto `0..n`. Positions further than one
    /// extent away keep reflecting with period 2(n−1).
    pub fn resolve(self, i: isize, n: usize) -> usize {
        match self {
            BoundaryRule::Mirror => mirror_index(i, n),
        }
    }
}

fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Convolves every line of `field` along `axis` with `kernel`:
/// `out[i] = Σ_j taps[j] · f[i + r − j]`, with out-of-range positions
/// resolved by `boundary`. A delta impulse therefore imprints the taps in
/// their stored order.
pub fn convolve_axis(
    field: &ScalarField,
    kernel: &Kernel1D,
    axis: usize,
    boundary: BoundaryRule,
) -> Result<ScalarField> {
    if axis >= field.rank() {
        return Err(Error::Axis {
            axis,
            rank: field.rank(),
        });
    }
    let n = field.shape[axis];
    let stride: usize = field.shape[axis + 1..].iter().product();
    let r = kernel.radius;
    let taps = &kernel.taps;
    let src = &field.data;
    let mut out = vec![0.0; src.len()];
    // Symmetric and antisymmetric kernels are applied as sums over mirrored
    // pairs; an antisymmetric kernel then returns exact zeros on constants.
    let parity = kernel.parity();
    let half = &taps[r..];

    if stride == 1 {
        // Contiguous lines: pad once, then dot products over the padded line.
        let rev: Vec<f64> = taps.iter().rev().copied().collect();
        out.par_chunks_mut(n)
            .zip(src.par_chunks(n))
            .for_each_init(
                || Vec::with_capacity(n + 2 * r),
                |pad, (dst, line)| {
                    pad.clear();
                    let ri = r as isize;
                    pad.extend((-ri..n as isize + ri).map(|q| line[boundary.resolve(q, n)]));
                    for (i, d) in dst.iter_mut().enumerate() {
                        let c = i + r;
                        *d = match parity {
                            Parity::Even => {
                                half[0] * pad[c]
                                    + (1..=r).map(|x| half[x] * (pad[c - x] + pad[c + x])).sum::<f64>()
                            }
                            Parity::Odd => {
                                (1..=r).map(|x| half[x] * (pad[c - x] - pad[c + x])).sum()
                            }
                            Parity::None => rev
                                .iter()
                                .zip(&pad[i..i + rev.len()])
                                .map(|(t, v)| t * v)
                                .sum(),
                        };
                    }
                },
            );
    } else {
        // Strided axis: each output row is a weighted sum of whole input rows.
        let ri = r as isize;
        out.par_chunks_mut(stride).enumerate().for_each(|(row, dst)| {
            let block = row / n;
            let i = (row % n) as isize;
            let base = block * n * stride;
            let line = |s: usize| &src[base + s * stride..base + (s + 1) * stride];
            match parity {
                Parity::None => {
                    for (j, &t) in taps.iter().enumerate() {
                        let l = line(boundary.resolve(i + ri - j as isize, n));
                        for (d, v) in dst.iter_mut().zip(l) {
                            *d += t * v;
                        }
                    }
                }
                Parity::Even | Parity::Odd => {
                    if parity == Parity::Even {
                        for (d, v) in dst.iter_mut().zip(line(i as usize)) {
                            *d = half[0] * v;
                        }
                    }
                    let sign = if parity == Parity::Even { 1.0 } else { -1.0 };
                    for (x, &t) in half.iter().enumerate().skip(1) {
                        let lo = line(boundary.resolve(i - x as isize, n));
                        let hi = line(boundary.resolve(i + x as isize, n));
                        for ((d, a), b) in dst.iter_mut().zip(lo).zip(hi) {
                            *d += t * (a + sign * b);
                        }
                    }
                }
            }
        });
    }
    Ok(ScalarField {
        shape: field.shape.clone(),
        data: out,
    })
}

/// Applies one kernel per axis, in axis order.
pub fn convolve_separable(
    field: &ScalarField,
    kernels: &[Kernel1D],
    boundary: BoundaryRule,
) -> Result<ScalarField> {
    if kernels.len() != field.rank() {
        return Err(Error::Shape(format!(
            "need one kernel per axis: rank {}, got {} kernels",
            field.rank(),
            kernels.len()
        )));
    }
    let order: Vec<usize> = (0..field.rank()).collect();
    convolve_separable_ordered(field, kernels, &order, boundary)
}

/// As [`convolve_separable`] but visiting axes in `order`.
pub fn convolve_separable_ordered(
    field: &ScalarField,
    kernels: &[Kernel1D],
    order: &[usize],
    boundary: BoundaryRule,
) -> Result<ScalarField> {
    let mut it = order.iter();
    let Some(&first) = it.next() else {
        return Ok(field.clone());
    };
    let kernel = kernels.get(first).ok_or(Error::Axis {
        axis: first,
        rank: kernels.len(),
    })?;
    let mut acc = convolve_axis(field, kernel, first, boundary)?;
    for &axis in it {
        let kernel = kernels.get(axis).ok_or(Error::Axis {
            axis,
            rank: kernels.len(),
        })?;
        acc = convolve_axis(&acc, kernel, axis, boundary)?;
    }
    Ok(acc)
}
