//! Synthetic binary phantoms and noise models.
//!
//! Coordinates are sample indices; a sample is foreground when its centre
//! lies strictly inside the continuous shape. Shapes of even width are
//! centred on half-integer coordinates so that exactly `width` samples are
//! covered across them, which moves their centre between two samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::filters::gaussian_kernel;
use crate::grid::{convolve_axis, BoundaryRule, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// Vertical band through the full image height.
    Rect1D,
    Disk2D,
    /// Vertical line of finite length.
    Line2D,
    /// Horizontal ellipse whose minor diameter is the width.
    Ellipse2D,
    /// Six full-height vertical bars whose widths grow geometrically from
    /// `width` to six times it.
    IncreasingLines2D,
    /// Disk, vertical line and horizontal ellipse of one width side by side.
    Trio2D,
    Sphere3D,
    /// Cylinder along axis 0 (z) through the full extent.
    Cylinder3D,
    /// Slab with its normal along axis 0 (z).
    Slab3D,
    /// Cylinders of `width` along z in the low-y part and of twice the
    /// width along x in the high-y part.
    CylinderBundles3D,
}

impl PhantomKind {
    pub fn rank(self) -> usize {
        match self {
            Self::Sphere3D | Self::Cylinder3D | Self::Slab3D | Self::CylinderBundles3D => 3,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Rect1D => "rect1d",
            Self::Disk2D => "disk2d",
            Self::Line2D => "line2d",
            Self::Ellipse2D => "ellipse2d",
            Self::IncreasingLines2D => "lines2d-increasing",
            Self::Trio2D => "trio2d",
            Self::Sphere3D => "sphere3d",
            Self::Cylinder3D => "cylinder3d",
            Self::Slab3D => "slab3d",
            Self::CylinderBundles3D => "bundles3d",
        }
    }

    pub const ALL: [Self; 10] = [
        Self::Rect1D,
        Self::Disk2D,
        Self::Line2D,
        Self::Ellipse2D,
        Self::IncreasingLines2D,
        Self::Trio2D,
        Self::Sphere3D,
        Self::Cylinder3D,
        Self::Slab3D,
        Self::CylinderBundles3D,
    ];

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Iid,
    /// White noise smoothed by a Gaussian along one axis.
    Anisotropic { axis: usize, smoothing_sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation of the added noise.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub width: f64,
    pub shape: Vec<usize>,
    pub foreground: f64,
    pub background: f64,
    /// Seeds the noise stage.
    pub seed: u64,
    pub noise: Option<NoiseSpec>,
}

impl PhantomSpec {
    /// Binary phantom at intensities 1 on 0, noise-free.
    pub fn new(kind: PhantomKind, width: f64, shape: Vec<usize>) -> Self {
        Self { kind, width, shape, foreground: 1.0, background: 0.0, seed: 0, noise: None }
    }

    pub fn with_noise(mut self, noise: NoiseSpec, seed: u64) -> Self {
        self.noise = Some(noise);
        self.seed = seed;
        self
    }
}

/// One feature of a phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: String,
    pub width: f64,
    /// Flat indices of the samples nearest the feature's centre point.
    pub center_samples: Vec<usize>,
    /// Flat indices of the rasterized medial set.
    pub skeleton: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub field: ScalarField,
    /// 1 on foreground, 0 elsewhere.
    pub feature_mask: ScalarField,
    pub skeleton_mask: ScalarField,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone)]
enum Prim {
    /// Open box; infinite bounds leave an axis unconstrained.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Axis-aligned ellipsoid; an infinite semi-axis makes a cylinder.
    Ellipsoid { center: Vec<f64>, semi: Vec<f64> },
}

impl Prim {
    fn contains(&self, p: &[f64]) -> bool {
        match self {
            Prim::Box { lo, hi } => p.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| x > l && x < h),
            Prim::Ellipsoid { center, semi } => {
                p.iter()
                    .zip(center.iter().zip(semi))
                    .map(|(x, (c, s))| if s.is_infinite() { 0.0 } else { ((x - c) / s).powi(2) })
                    .sum::<f64>()
                    < 1.0
            }
        }
    }

    /// Per-axis index sets whose product is the centre point and the medial set.
    fn axis_sets(&self, shape: &[usize]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let all = |n: usize| (0..n).collect::<Vec<_>>();
        let mid = |n: usize| (n as f64 - 1.0) / 2.0;
        let mut centre = Vec::new();
        let mut medial = Vec::new();
        match self {
            Prim::Box { lo, hi } => {
                let thin = lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| h - l)
                    .fold(f64::INFINITY, f64::min);
                for (ax, &n) in shape.iter().enumerate() {
                    let (l, h) = (lo[ax], hi[ax]);
                    let c = if l.is_finite() && h.is_finite() { 0.5 * (l + h) } else { mid(n) };
                    centre.push(nearest(c, n));
                    medial.push(if h - l == thin {
                        nearest(c, n)
                    } else {
                        all(n).into_iter().filter(|&i| (i as f64) > l && (i as f64) < h).collect()
                    });
                }
            }
            Prim::Ellipsoid { center, semi } => {
                let thin = semi.iter().copied().fold(f64::INFINITY, f64::min);
                for (ax, &n) in shape.iter().enumerate() {
                    let s = semi[ax];
                    if s.is_infinite() {
                        centre.push(nearest(mid(n), n));
                        medial.push(all(n));
                    } else {
                        centre.push(nearest(center[ax], n));
                        medial.push(if s == thin {
                            nearest(center[ax], n)
                        } else {
                            let half = s - thin * thin / s;
                            all(n)
                                .into_iter()
                                .filter(|&i| (i as f64 - center[ax]).abs() <= half)
                                .collect()
                        });
                    }
                }
            }
        }
        (centre, medial)
    }
}

/// The one or two sample indices nearest coordinate `c`.
fn nearest(c: f64, n: usize) -> Vec<usize> {
    let lo = c.floor();
    let cand: Vec<f64> = if c == lo { vec![lo] } else if c - lo == 0.5 { vec![lo, lo + 1.0] } else { vec![c.round()] };
    cand.into_iter()
        .filter(|&v| v >= 0.0 && v < n as f64)
        .map(|v| v as usize)
        .collect()
}

/// Centre coordinate near `base` so that a shape of `width` covers exactly
/// `width` samples across.
fn centred(base: f64, width: f64) -> f64 {
    let b = base.round();
    if (width.round() as i64) % 2 == 0 { b - 0.5 } else { b }
}

fn product(sets: &[Vec<usize>], shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for (ax, set) in sets.iter().enumerate() {
        let stride: usize = shape[ax + 1..].iter().product();
        out = out
            .iter()
            .flat_map(|&base| set.iter().map(move |&i| base + i * stride))
            .collect();
    }
    out.sort_unstable();
    out
}

struct Part {
    name: String,
    width: f64,
    prim: Prim,
}

fn band(axis: usize, rank: usize, c: f64, width: f64) -> Prim {
    let mut lo = vec![f64::NEG_INFINITY; rank];
    let mut hi = vec![f64::INFINITY; rank];
    lo[axis] = c - width / 2.0;
    hi[axis] = c + width / 2.0;
    Prim::Box { lo, hi }
}

fn layout(spec: &PhantomSpec) -> Result<Vec<Part>> {
    let w = spec.width;
    let shape = &spec.shape;
    let rank = spec.kind.rank();
    if shape.len() != rank {
        return Err(Error::Shape(format!(
            "{} needs a rank-{rank} shape, got {shape:?}",
            spec.kind.name()
        )));
    }
    // Extents across which the feature must fit; bands and cylinders run
    // through the others.
    let across: &[usize] = match spec.kind {
        PhantomKind::Rect1D | PhantomKind::IncreasingLines2D => &shape[1..],
        PhantomKind::Cylinder3D => &shape[1..],
        PhantomKind::Slab3D => &shape[..1],
        _ => shape,
    };
    let min_extent = across.iter().copied().min().unwrap_or(0) as f64;
    if !(w >= 2.0) || !w.is_finite() {
        return Err(Error::Sizing(format!("width must be at least 2 px, got {w}")));
    }
    if w >= min_extent {
        return Err(Error::Sizing(format!("width {w} does not fit shape {shape:?}")));
    }
    let mid = |ax: usize| centred(shape[ax] as f64 / 2.0, w);
    let part = |name: &str, width: f64, prim: Prim| Part { name: name.into(), width, prim };
    let need = |extent: f64| -> Result<()> {
        if shape.iter().any(|&n| (n as f64) < extent) {
            return Err(Error::Sizing(format!(
                "{} of width {w} needs every extent >= {extent}, got {shape:?}",
                spec.kind.name()
            )));
        }
        Ok(())
    };
    let parts = match spec.kind {
        PhantomKind::Rect1D => vec![part("band", w, band(1, 2, mid(1), w))],
        PhantomKind::Disk2D | PhantomKind::Sphere3D => {
            let center = (0..rank).map(mid).collect();
            vec![part("blob", w, Prim::Ellipsoid { center, semi: vec![w / 2.0; rank] })]
        }
        PhantomKind::Line2D => {
            let n0 = shape[0] as f64;
            let (c, margin) = (mid(1), (n0 / 8.0).round() - 0.5);
            let lo = vec![margin, c - w / 2.0];
            let hi = vec![n0 - 1.0 - margin, c + w / 2.0];
            vec![part("line", w, Prim::Box { lo, hi })]
        }
        PhantomKind::Ellipse2D => {
            need(5.0 * w + 2.0)?;
            let center = vec![mid(0), mid(1)];
            vec![part("ellipse", w, Prim::Ellipsoid { center, semi: vec![w / 2.0, 2.5 * w] })]
        }
        PhantomKind::Cylinder3D => {
            let center = vec![0.0, mid(1), mid(2)];
            let semi = vec![f64::INFINITY, w / 2.0, w / 2.0];
            vec![part("cylinder", w, Prim::Ellipsoid { center, semi })]
        }
        PhantomKind::Slab3D => vec![part("slab", w, band(0, 3, mid(0), w))],
        PhantomKind::Trio2D => {
            // Reference layout for width 20 on 256², scaled with the width.
            let u = w / 20.0;
            need((256.0 * u).round())?;
            let at = |v: f64| centred(v * u, w);
            let disk = Prim::Ellipsoid { center: vec![at(64.0), at(64.0)], semi: vec![w / 2.0; 2] };
            let (lx, y0, y1) = (at(190.0), (30.0 * u).round() - 0.5, (226.0 * u).round() - 0.5);
            let line = Prim::Box { lo: vec![y0, lx - w / 2.0], hi: vec![y1, lx + w / 2.0] };
            let ellipse = Prim::Ellipsoid {
                center: vec![at(190.0), at(70.0)],
                semi: vec![w / 2.0, 2.5 * w],
            };
            vec![part("disk", w, disk), part("line", w, line), part("ellipse", w, ellipse)]
        }
        PhantomKind::IncreasingLines2D => {
            // Six bands a factor 6 apart, then more at the same ratio while
            // they fit.
            let step = |i: usize| (w * 6f64.powf(i as f64 / 5.0)).round();
            let span_of = |ws: &[f64]| {
                ws.iter().sum::<f64>() + ws.windows(2).map(|p| p[1].max(p[0]) + 8.0).sum::<f64>()
            };
            let mut widths: Vec<f64> = (0..6).map(step).collect();
            let span = span_of(&widths);
            if span + 16.0 > shape[1] as f64 {
                return Err(Error::Sizing(format!(
                    "bars of widths {widths:?} need {} columns, got {}",
                    span + 16.0,
                    shape[1]
                )));
            }
            loop {
                widths.push(step(widths.len()));
                if span_of(&widths) + 16.0 > shape[1] as f64 {
                    widths.pop();
                    break;
                }
            }
            let span = span_of(&widths);
            let mut left = ((shape[1] as f64 - span) / 2.0).floor();
            let mut parts = Vec::new();
            for (i, &bw) in widths.iter().enumerate() {
                let lo = left - 0.5;
                parts.push(part(&format!("bar{i}"), bw, band(1, 2, lo + bw / 2.0, bw)));
                left += bw + widths.get(i + 1).map_or(0.0, |&nw| nw.max(bw) + 8.0);
            }
            parts
        }
        PhantomKind::CylinderBundles3D => {
            // Reference layout for width 8 on 96³, scaled with the width.
            let u = w / 8.0;
            need((96.0 * u).round())?;
            let thin = |y: f64, x: f64| Prim::Ellipsoid {
                center: vec![0.0, centred(y * u, w), centred(x * u, w)],
                semi: vec![f64::INFINITY, w / 2.0, w / 2.0],
            };
            let wide = |z: f64, y: f64| Prim::Ellipsoid {
                center: vec![centred(z * u, 2.0 * w), centred(y * u, 2.0 * w), 0.0],
                semi: vec![w, w, f64::INFINITY],
            };
            let mut parts = Vec::new();
            for (j, y) in [12.0, 34.0].into_iter().enumerate() {
                for (i, x) in [16.0, 38.0, 60.0, 82.0].into_iter().enumerate() {
                    parts.push(part(&format!("thin{j}{i}"), w, thin(y, x)));
                }
            }
            for (i, z) in [16.0, 48.0, 80.0].into_iter().enumerate() {
                parts.push(part(&format!("wide{i}"), 2.0 * w, wide(z, 74.0)));
            }
            parts
        }
    };
    Ok(parts)
}

/// Rasterizes `spec` and, if requested, adds its noise.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    let parts = layout(spec)?;
    let shape = spec.shape.clone();
    let mut p = vec![0.0; shape.len()];
    let feature_mask = ScalarField::from_fn(&shape, |idx| {
        for (q, &i) in p.iter_mut().zip(idx) {
            *q = i as f64;
        }
        parts.iter().any(|part| part.prim.contains(&p)) as u8 as f64
    })?;
    let mut skeleton = vec![0.0; feature_mask.len()];
    let mut components = Vec::with_capacity(parts.len());
    for part in &parts {
        let (centre, medial) = part.prim.axis_sets(&shape);
        let inside = |v: Vec<usize>| -> Vec<usize> {
            v.into_iter().filter(|&i| feature_mask.data()[i] != 0.0).collect()
        };
        let center_samples = inside(product(&centre, &shape));
        let skel = inside(product(&medial, &shape));
        if center_samples.is_empty() {
            return Err(Error::Sizing(format!("component {} has no samples", part.name)));
        }
        for &i in &skel {
            skeleton[i] = 1.0;
        }
        components.push(Component {
            name: part.name.clone(),
            width: part.width,
            center_samples,
            skeleton: skel,
        });
    }
    let (fg, bg) = (spec.foreground, spec.background);
    let mut field = feature_mask.map(|m| if m != 0.0 { fg } else { bg });
    if let Some(noise) = &spec.noise {
        field = add_noise(&field, noise, spec.seed)?;
    }
    Ok(Phantom {
        field,
        feature_mask,
        skeleton_mask: ScalarField::new(shape, skeleton)?,
        components,
    })
}

/// Adds zero-mean Gaussian noise of standard deviation `noise.amplitude`.
pub fn add_noise(field: &ScalarField, noise: &NoiseSpec, seed: u64) -> Result<ScalarField> {
    if !(noise.amplitude >= 0.0) {
        return Err(Error::Domain(format!("noise amplitude must be >= 0, got {}", noise.amplitude)));
    }
    if noise.amplitude == 0.0 {
        return Ok(field.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = ScalarField::new(
        field.shape().to_vec(),
        (0..field.len()).map(|_| StandardNormal.sample(&mut rng)).collect(),
    )?;
    let shaped = match noise.kind {
        NoiseKind::Iid => white,
        NoiseKind::Anisotropic { axis, smoothing_sigma } => {
            let g = gaussian_kernel(smoothing_sigma)?;
            // Smoothing white noise scales its deviation by the taps' L2 norm.
            let gain = g.taps().iter().map(|t| t * t).sum::<f64>().sqrt();
            convolve_axis(&white, &g, axis, BoundaryRule::Mirror)?.map(|v| v / gain)
        }
    };
    field.zip_map(&shaped, |f, n| f + noise.amplitude * n)
}

/// Halves every extent by averaging 2×2(×2) blocks; an odd trailing sample is dropped.
pub fn downscale2(field: &ScalarField) -> Result<ScalarField> {
    let shape = field.shape();
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::Shape(format!("cannot halve shape {shape:?}")));
    }
    let out_shape: Vec<usize> = shape.iter().map(|n| n / 2).collect();
    let rank = shape.len();
    let blocks = 1usize << rank;
    ScalarField::from_fn(&out_shape, |idx| {
        let mut src = vec![0usize; rank];
        let mut acc = 0.0;
        for b in 0..blocks {
            for ax in 0..rank {
                src[ax] = 2 * idx[ax] + ((b >> ax) & 1);
            }
            acc += field.get(&src);
        }
        acc / blocks as f64
    })
}

/// Nearest-neighbour doubling onto `shape`; samples past the doubled extent
/// repeat the last source sample.
pub fn upsample2_nearest(field: &ScalarField, shape: &[usize]) -> Result<ScalarField> {
    if shape.len() != field.rank() {
        return Err(Error::Shape(format!(
            "target {shape:?} does not match rank {}",
            field.rank()
        )));
    }
    let src_shape = field.shape().to_vec();
    let mut src = vec![0usize; shape.len()];
    ScalarField::from_fn(shape, |idx| {
        for ax in 0..idx.len() {
            src[ax] = (idx[ax] / 2).min(src_shape[ax] - 1);
        }
        field.get(&src)
    })
}
