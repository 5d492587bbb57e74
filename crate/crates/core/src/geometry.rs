//! Sets in `R^n`: rasterized [`GridSet`]s on a cubical [`Window`] and
//! analytic [`Region`]s built from half-spaces, balls, boxes and planar
//! sectors.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rays::{self, Spans};

/// Axis-aligned cube `min + [0, side]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub min: Vec<f64>,
    pub side: f64,
}

impl Window {
    pub fn new(min: Vec<f64>, side: f64) -> Result<Self> {
        if min.is_empty() || min.len() > 3 {
            return invalid(format!("window dimension {} not in 1..=3", min.len()));
        }
        if !(side.is_finite() && side > 0.0) || min.iter().any(|m| !m.is_finite()) {
            return invalid("window must have finite corner and positive side");
        }
        Ok(Window { min, side })
    }

    /// `[-half, half]^n`.
    pub fn centered(n: usize, half: f64) -> Result<Self> {
        Window::new(vec![-half; n], 2.0 * half)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn max(&self, axis: usize) -> f64 {
        self.min[axis] + self.side
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.min).all(|(x, m)| *x >= *m && *x <= m + self.side)
    }

    fn same_as(&self, other: &Window) -> bool {
        let tol = 1e-12 * self.side.max(other.side);
        self.min.len() == other.min.len()
            && (self.side - other.side).abs() <= tol
            && self.min.iter().zip(&other.min).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// A union of grid cells inside a [`Window`], stored as one flag per cell
/// with the first axis varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    window: Window,
    resolution: usize,
    cells: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    format: String,
    resolution: usize,
    window: Window,
}

const GRID_FORMAT: &str = "fraccap-gridset-v1";

impl GridSet {
    pub fn empty(window: Window, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return invalid("resolution must be positive");
        }
        let total = resolution
            .checked_pow(window.dim() as u32)
            .filter(|t| *t <= 1 << 26)
            .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
        Ok(GridSet { window, resolution, cells: vec![false; total] })
    }

    /// Cells whose center satisfies `inside`.
    pub fn from_fn(window: Window, resolution: usize, inside: impl Fn(&[f64]) -> bool) -> Result<Self> {
        let mut set = GridSet::empty(window, resolution)?;
        let mut x = vec![0.0; set.dim()];
        for i in 0..set.cells.len() {
            set.center_into(i, &mut x);
            set.cells[i] = inside(&x);
        }
        Ok(set)
    }

    /// Cell-center rasterization of an analytic region.
    pub fn rasterize(region: &Region, window: Window, resolution: usize) -> Result<Self> {
        region.check_dim(window.dim())?;
        GridSet::from_fn(window, resolution, |x| region.contains(x))
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    /// Cell edge length.
    pub fn h(&self) -> f64 {
        self.window.side / self.resolution as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim() as i32)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|c| *c)
    }

    pub fn get(&self, idx: usize) -> bool {
        self.cells[idx]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.cells[idx] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.cell_volume()
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, c)| **c).map(|(i, _)| i)
    }

    /// Integer coordinates of a cell, first axis first.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = idx;
        for slot in out.iter_mut().take(self.dim()) {
            *slot = rest % self.resolution;
            rest /= self.resolution;
        }
        out
    }

    pub fn linear_index(&self, mi: &[usize]) -> usize {
        mi.iter().rev().fold(0, |acc, &i| acc * self.resolution + i)
    }

    pub fn center_into(&self, idx: usize, x: &mut [f64]) {
        let mi = self.multi_index(idx);
        let h = self.h();
        for (d, xd) in x.iter_mut().enumerate().take(self.dim()) {
            *xd = self.window.min[d] + (mi[d] as f64 + 0.5) * h;
        }
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.center_into(idx, &mut x);
        x
    }

    /// Index of the cell containing `x`, if `x` lies in the window.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let h = self.h();
        let mut mi = [0usize; 3];
        for d in 0..self.dim() {
            let f = ((x[d] - self.window.min[d]) / h).floor();
            if !(f >= 0.0 && f < self.resolution as f64) {
                return None;
            }
            mi[d] = f as usize;
        }
        Some(self.linear_index(&mi[..self.dim()]))
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.locate(x).is_some_and(|i| self.cells[i])
    }

    pub fn same_grid(&self, other: &GridSet) -> bool {
        self.resolution == other.resolution && self.window.same_as(&other.window)
    }

    fn require_same_grid(&self, other: &GridSet) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            invalid("grid sets live on different windows or resolutions")
        }
    }

    fn zip_with(&self, other: &GridSet, f: impl Fn(bool, bool) -> bool) -> Result<GridSet> {
        self.require_same_grid(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| f(*a, *b)).collect();
        Ok(GridSet { window: self.window.clone(), resolution: self.resolution, cells })
    }

    pub fn union(&self, other: &GridSet) -> Result<GridSet> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &GridSet) -> Result<GridSet> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &GridSet) -> Result<GridSet> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn symmetric_difference(&self, other: &GridSet) -> Result<GridSet> {
        self.zip_with(other, |a, b| a != b)
    }

    /// Complement relative to the window.
    pub fn complement(&self) -> GridSet {
        GridSet {
            window: self.window.clone(),
            resolution: self.resolution,
            cells: self.cells.iter().map(|c| !c).collect(),
        }
    }

    /// Number of cells occupied in both sets.
    pub fn overlap(&self, other: &GridSet) -> Result<usize> {
        self.require_same_grid(other)?;
        Ok(self.cells.iter().zip(&other.cells).filter(|(a, b)| **a && **b).count())
    }

    /// The same cells on a window shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Result<GridSet> {
        if v.len() != self.dim() {
            return invalid("translation vector has wrong dimension");
        }
        let min = self.window.min.iter().zip(v).map(|(m, v)| m + v).collect();
        Ok(GridSet { window: Window::new(min, self.window.side)?, ..self.clone() })
    }

    /// Moves every cell by an integer offset inside the same window; cells
    /// leaving the window are dropped.
    pub fn shifted(&self, offset: &[i64]) -> Result<GridSet> {
        if offset.len() != self.dim() {
            return invalid("offset has wrong dimension");
        }
        let mut out = GridSet::empty(self.window.clone(), self.resolution)?;
        let res = self.resolution as i64;
        'cells: for i in self.occupied() {
            let mi = self.multi_index(i);
            let mut target = [0usize; 3];
            for d in 0..self.dim() {
                let t = mi[d] as i64 + offset[d];
                if t < 0 || t >= res {
                    continue 'cells;
                }
                target[d] = t as usize;
            }
            let j = out.linear_index(&target[..self.dim()]);
            out.cells[j] = true;
        }
        Ok(out)
    }

    /// The set `E / r`: same occupancy on the window scaled by `1 / r`.
    pub fn rescaled(&self, r: f64) -> Result<GridSet> {
        if !(r.is_finite() && r > 0.0) {
            return invalid("rescale factor must be positive");
        }
        let min = self.window.min.iter().map(|m| m / r).collect();
        Ok(GridSet { window: Window::new(min, self.window.side / r)?, ..self.clone() })
    }

    /// Samples this set at the cell centers of another grid.
    pub fn resample(&self, window: Window, resolution: usize) -> Result<GridSet> {
        if window.dim() != self.dim() {
            return invalid("resample window has wrong dimension");
        }
        GridSet::from_fn(window, resolution, |x| self.contains_point(x))
    }

    /// Merges blocks of `2^n` cells by majority vote; ties are broken by a
    /// checkerboard on the coarse cells.
    pub fn coarsened(&self) -> Result<GridSet> {
        if self.resolution % 2 != 0 {
            return invalid("coarsening needs an even resolution");
        }
        let n = self.dim();
        let mut out = GridSet::empty(self.window.clone(), self.resolution / 2)?;
        let children = 1usize << n;
        for c in 0..out.cells.len() {
            let mi = out.multi_index(c);
            let mut count = 0;
            for k in 0..children {
                let mut fine = [0usize; 3];
                for d in 0..n {
                    fine[d] = 2 * mi[d] + ((k >> d) & 1);
                }
                if self.cells[self.linear_index(&fine[..n])] {
                    count += 1;
                }
            }
            out.cells[c] = match (2 * count).cmp(&children) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => mi[..n].iter().sum::<usize>() % 2 == 0,
            };
        }
        Ok(out)
    }

    /// Whether the hyperplane `{x_n = 0}` runs along cell faces.
    pub fn wall_aligned(&self) -> bool {
        let k = -self.window.min[self.dim() - 1] / self.h();
        (k - k.round()).abs() < 1e-9 && k.round() >= 0.0 && k.round() <= self.resolution as f64
    }

    /// Number of cell layers below the wall, when it is aligned.
    pub fn wall_layer(&self) -> Option<usize> {
        self.wall_aligned().then(|| (-self.window.min[self.dim() - 1] / self.h()).round() as usize)
    }

    /// Whether every occupied cell lies in `{x_n > 0}`.
    pub fn in_upper_halfspace(&self) -> bool {
        let mut x = vec![0.0; self.dim()];
        self.occupied().all(|i| {
            self.center_into(i, &mut x);
            x[self.dim() - 1] > 0.0
        })
    }

    /// Smallest box containing all occupied cells.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let h = self.h();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        let mut any = false;
        for i in self.occupied() {
            any = true;
            let mi = self.multi_index(i);
            for d in 0..n {
                let a = self.window.min[d] + mi[d] as f64 * h;
                lo[d] = lo[d].min(a);
                hi[d] = hi[d].max(a + h);
            }
        }
        any.then_some((lo, hi))
    }

    /// Writes a one-line JSON header followed by the packed occupancy bits
    /// (most significant bit first, first axis fastest).
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let header = GridHeader {
            format: GRID_FORMAT.into(),
            resolution: self.resolution,
            window: self.window.clone(),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        let mut bytes = vec![0u8; self.cells.len().div_ceil(8)];
        for i in self.occupied() {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from(input: &mut impl BufRead) -> Result<GridSet> {
        let mut line = Vec::new();
        input.read_until(b'\n', &mut line)?;
        let header: GridHeader =
            serde_json::from_slice(&line).map_err(|e| Error::Format(format!("header: {e}")))?;
        if header.format != GRID_FORMAT {
            return Err(Error::Format(format!("unknown format tag {:?}", header.format)));
        }
        let mut set = GridSet::empty(Window::new(header.window.min, header.window.side)?, header.resolution)?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != set.cells.len().div_ceil(8) {
            return Err(Error::Format(format!(
                "expected {} payload bytes, found {}",
                set.cells.len().div_ceil(8),
                bytes.len()
            )));
        }
        for (i, c) in set.cells.iter_mut().enumerate() {
            *c = bytes[i / 8] & (0x80 >> (i % 8)) != 0;
        }
        Ok(set)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }
}

/// Which pieces of the complement of a window a region covers: the part
/// in the upper half-space and the part in the lower one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exterior {
    pub upper: bool,
    pub lower: bool,
}

impl Exterior {
    pub const NONE: Exterior = Exterior { upper: false, lower: false };
    pub const ALL: Exterior = Exterior { upper: true, lower: true };

    pub fn is_none(&self) -> bool {
        !self.upper && !self.lower
    }
}

/// Analytic set. All primitives are open; boundaries have measure zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionSpec", into = "RegionSpec")]
pub enum Region {
    /// `{x_n > 0}`.
    HalfSpace,
    Ball { center: Vec<f64>, radius: f64 },
    /// Planar points whose angle around `apex` lies in `(alpha, beta)`.
    Sector { apex: [f64; 2], alpha: f64, beta: f64 },
    Box { min: Vec<f64>, max: Vec<f64> },
    Complement(Box<Region>),
    Intersection(Vec<Region>),
    Union(Vec<Region>),
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Region {
        Region::Ball { center, radius }
    }

    /// Sector with apex at the origin.
    pub fn sector(alpha: f64, beta: f64) -> Region {
        Region::Sector { apex: [0.0, 0.0], alpha, beta }
    }

    pub fn complement(self) -> Region {
        Region::Complement(Box::new(self))
    }

    pub fn and(self, other: Region) -> Region {
        Region::Intersection(vec![self, other])
    }

    pub fn or(self, other: Region) -> Region {
        Region::Union(vec![self, other])
    }

    /// Checks that the region can be evaluated in `R^n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Region::HalfSpace => Ok(()),
            Region::Ball { center, .. } if center.len() == n => Ok(()),
            Region::Box { min, max } if min.len() == n && max.len() == n => Ok(()),
            Region::Sector { .. } if n == 2 => Ok(()),
            Region::Complement(r) => r.check_dim(n),
            Region::Intersection(v) | Region::Union(v) => v.iter().try_for_each(|r| r.check_dim(n)),
            _ => invalid(format!("region does not live in dimension {n}")),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::HalfSpace => x[x.len() - 1] > 0.0,
            Region::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() < radius * radius
            }
            Region::Box { min, max } => x.iter().zip(min.iter().zip(max)).all(|(x, (a, b))| *x > *a && *x < *b),
            Region::Sector { apex, alpha, beta } => {
                let width = beta - alpha;
                if width <= 0.0 {
                    return false;
                }
                let q = [x[0] - apex[0], x[1] - apex[1]];
                if q == [0.0, 0.0] {
                    return false;
                }
                if width >= 2.0 * PI {
                    return true;
                }
                let rel = (q[1].atan2(q[0]) - alpha).rem_euclid(2.0 * PI);
                rel > 0.0 && rel < width
            }
            Region::Complement(r) => !r.contains(x),
            Region::Intersection(v) => v.iter().all(|r| r.contains(x)),
            Region::Union(v) => v.iter().any(|r| r.contains(x)),
        }
    }

    /// Parameter intervals `ρ ≥ 0` with `x + ρu` inside the region
    /// (`u` need not be normalized).
    pub fn ray(&self, x: &[f64], u: &[f64]) -> Spans {
        match self {
            Region::HalfSpace => {
                let n = x.len() - 1;
                rays::halfline(x[n], u[n])
            }
            Region::Ball { center, radius } => {
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = -radius * radius;
                for d in 0..x.len() {
                    let q = x[d] - center[d];
                    a += u[d] * u[d];
                    b += u[d] * q;
                    c += q * q;
                }
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return rays::empty();
                }
                let root = disc.sqrt();
                // stable roots of a ρ² + 2 b ρ + c
                let (lo, hi) = if b > 0.0 {
                    let q = -(b + root);
                    (q / a, c / q)
                } else {
                    let q = root - b;
                    (c / q, q / a)
                };
                rays::between(lo, hi)
            }
            Region::Box { min, max } => {
                let mut lo = 0.0f64;
                let mut hi = f64::INFINITY;
                for d in 0..x.len() {
                    if u[d] == 0.0 {
                        if !(x[d] > min[d] && x[d] < max[d]) {
                            return rays::empty();
                        }
                    } else {
                        let t1 = (min[d] - x[d]) / u[d];
                        let t2 = (max[d] - x[d]) / u[d];
                        lo = lo.max(t1.min(t2));
                        hi = hi.min(t1.max(t2));
                    }
                }
                rays::between(lo, hi)
            }
            Region::Sector { apex, alpha, beta } => {
                let width = beta - alpha;
                if width <= 0.0 {
                    return rays::empty();
                }
                if width >= 2.0 * PI {
                    return rays::full();
                }
                let q = [x[0] - apex[0], x[1] - apex[1]];
                let v = [u[0], u[1]];
                let da = [alpha.cos(), alpha.sin()];
                let db = [beta.cos(), beta.sin()];
                if width <= PI {
                    let left = rays::halfline(cross(da, q), cross(da, v));
                    let right = rays::halfline(-cross(db, q), -cross(db, v));
                    rays::intersect(&left, &right)
                } else {
                    let left = rays::halfline(cross(db, q), cross(db, v));
                    let right = rays::halfline(-cross(da, q), -cross(da, v));
                    rays::complement(&rays::intersect(&left, &right))
                }
            }
            Region::Complement(r) => rays::complement(&r.ray(x, u)),
            Region::Intersection(v) => {
                let mut acc = rays::full();
                for r in v {
                    acc = rays::intersect(&acc, &r.ray(x, u));
                    if acc.is_empty() {
                        break;
                    }
                }
                acc
            }
            Region::Union(v) => v.iter().fold(rays::empty(), |acc, r| rays::union(&acc, &r.ray(x, u))),
        }
    }

    /// A box containing the region, or `None` when it is unbounded.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Region::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Region::Box { min, max } => Some((min.clone(), max.clone())),
            Region::Intersection(v) => {
                let boxes: Vec<_> = v.iter().filter_map(|r| r.bounding_box()).collect();
                let first = boxes.first()?.clone();
                Some(boxes.iter().skip(1).fold(first, |(lo, hi), (l, h)| {
                    (
                        lo.iter().zip(l).map(|(a, b)| a.max(*b)).collect(),
                        hi.iter().zip(h).map(|(a, b)| a.min(*b)).collect(),
                    )
                }))
            }
            Region::Union(v) => {
                let boxes: Option<Vec<_>> = v.iter().map(|r| r.bounding_box()).collect();
                let boxes = boxes?;
                let first = boxes.first()?.clone();
                Some(boxes.iter().skip(1).fold(first, |(lo, hi), (l, h)| {
                    (
                        lo.iter().zip(l).map(|(a, b)| a.min(*b)).collect(),
                        hi.iter().zip(h).map(|(a, b)| a.max(*b)).collect(),
                    )
                }))
            }
            _ => None,
        }
    }

    /// Corner points of planar primitives, used as angular breakpoints.
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        match self {
            Region::Sector { apex, .. } => vec![*apex],
            Region::Box { min, max } if min.len() == 2 => {
                vec![[min[0], min[1]], [max[0], min[1]], [max[0], max[1]], [min[0], max[1]]]
            }
            Region::Complement(r) => r.vertices(),
            Region::Intersection(v) | Region::Union(v) => v.iter().flat_map(|r| r.vertices()).collect(),
            _ => Vec::new(),
        }
    }

    /// The image of the region under `x ↦ λx`.
    pub fn scaled(&self, lambda: f64) -> Region {
        match self {
            Region::HalfSpace => Region::HalfSpace,
            Region::Ball { center, radius } => Region::Ball {
                center: center.iter().map(|c| c * lambda).collect(),
                radius: radius * lambda,
            },
            Region::Box { min, max } => Region::Box {
                min: min.iter().map(|c| c * lambda).collect(),
                max: max.iter().map(|c| c * lambda).collect(),
            },
            Region::Sector { apex, alpha, beta } => Region::Sector {
                apex: [apex[0] * lambda, apex[1] * lambda],
                alpha: *alpha,
                beta: *beta,
            },
            Region::Complement(r) => Region::Complement(Box::new(r.scaled(lambda))),
            Region::Intersection(v) => Region::Intersection(v.iter().map(|r| r.scaled(lambda)).collect()),
            Region::Union(v) => Region::Union(v.iter().map(|r| r.scaled(lambda)).collect()),
        }
    }

    /// The image under `x ↦ x + v`. Half-spaces may only move along the wall.
    pub fn translated(&self, v: &[f64]) -> Result<Region> {
        Ok(match self {
            Region::HalfSpace => {
                if v[v.len() - 1] != 0.0 {
                    return invalid("half-space can only be translated parallel to its boundary");
                }
                Region::HalfSpace
            }
            Region::Ball { center, radius } => Region::Ball {
                center: center.iter().zip(v).map(|(c, v)| c + v).collect(),
                radius: *radius,
            },
            Region::Box { min, max } => Region::Box {
                min: min.iter().zip(v).map(|(c, v)| c + v).collect(),
                max: max.iter().zip(v).map(|(c, v)| c + v).collect(),
            },
            Region::Sector { apex, alpha, beta } => Region::Sector {
                apex: [apex[0] + v[0], apex[1] + v[1]],
                alpha: *alpha,
                beta: *beta,
            },
            Region::Complement(r) => Region::Complement(Box::new(r.translated(v)?)),
            Region::Intersection(rs) => Region::Intersection(rs.iter().map(|r| r.translated(v)).collect::<Result<_>>()?),
            Region::Union(rs) => Region::Union(rs.iter().map(|r| r.translated(v)).collect::<Result<_>>()?),
        })
    }

    /// Describes the part of the region outside `window` in terms of the two
    /// halves of the window's complement, when that is possible.
    pub fn exterior(&self, window: &Window) -> Option<Exterior> {
        let inside_window = |lo: &[f64], hi: &[f64]| {
            lo.iter().zip(hi).enumerate().all(|(d, (l, h))| *l >= window.min[d] && *h <= window.max(d))
        };
        match self {
            Region::HalfSpace => Some(Exterior { upper: true, lower: false }),
            Region::Ball { .. } | Region::Box { .. } => {
                let (lo, hi) = self.bounding_box()?;
                inside_window(&lo, &hi).then_some(Exterior::NONE)
            }
            Region::Sector { apex, alpha, beta } => {
                let width = beta - alpha;
                if width <= 0.0 {
                    return Some(Exterior::NONE);
                }
                if width >= 2.0 * PI {
                    return Some(Exterior::ALL);
                }
                let on_wall = apex[1] == 0.0 && (width - PI).abs() < 1e-15;
                let a = alpha.rem_euclid(2.0 * PI);
                if on_wall && a.abs() < 1e-15 {
                    Some(Exterior { upper: true, lower: false })
                } else if on_wall && (a - PI).abs() < 1e-15 {
                    Some(Exterior { upper: false, lower: true })
                } else {
                    None
                }
            }
            Region::Complement(r) => r.exterior(window).map(|e| Exterior { upper: !e.upper, lower: !e.lower }),
            Region::Intersection(v) => v.iter().try_fold(Exterior::ALL, |acc, r| {
                r.exterior(window).map(|e| Exterior { upper: acc.upper && e.upper, lower: acc.lower && e.lower })
            }),
            Region::Union(v) => v.iter().try_fold(Exterior::NONE, |acc, r| {
                r.exterior(window).map(|e| Exterior { upper: acc.upper || e.upper, lower: acc.lower || e.lower })
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RegionSpec {
    Shape(ShapeSpec),
    Op(OpSpec),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
enum ShapeSpec {
    Halfspace,
    Ball {
        r: f64,
        c: Vec<f64>,
    },
    Sector {
        alpha: f64,
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        apex: Option<[f64; 2]>,
    },
    Box {
        min: Vec<f64>,
        max: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
enum OpSpec {
    Intersect { args: Vec<RegionSpec> },
    Union { args: Vec<RegionSpec> },
    Complement { arg: Box<RegionSpec> },
}

impl TryFrom<RegionSpec> for Region {
    type Error = Error;

    fn try_from(spec: RegionSpec) -> Result<Region> {
        Ok(match spec {
            RegionSpec::Shape(ShapeSpec::Halfspace) => Region::HalfSpace,
            RegionSpec::Shape(ShapeSpec::Ball { r, c }) => {
                if !(r > 0.0 && r.is_finite()) || c.is_empty() {
                    return invalid("ball needs a positive radius and a center");
                }
                Region::Ball { center: c, radius: r }
            }
            RegionSpec::Shape(ShapeSpec::Sector { alpha, beta, apex }) => {
                if !(alpha.is_finite() && beta.is_finite()) || beta < alpha {
                    return invalid("sector needs finite angles with alpha <= beta");
                }
                Region::Sector { apex: apex.unwrap_or([0.0, 0.0]), alpha, beta }
            }
            RegionSpec::Shape(ShapeSpec::Box { min, max }) => {
                if min.len() != max.len() || min.iter().zip(&max).any(|(a, b)| !(a < b)) {
                    return invalid("box needs min < max componentwise");
                }
                Region::Box { min, max }
            }
            RegionSpec::Op(OpSpec::Intersect { args }) => {
                Region::Intersection(args.into_iter().map(Region::try_from).collect::<Result<_>>()?)
            }
            RegionSpec::Op(OpSpec::Union { args }) => {
                Region::Union(args.into_iter().map(Region::try_from).collect::<Result<_>>()?)
            }
            RegionSpec::Op(OpSpec::Complement { arg }) => Region::Complement(Box::new(Region::try_from(*arg)?)),
        })
    }
}

impl From<Region> for RegionSpec {
    fn from(r: Region) -> RegionSpec {
        match r {
            Region::HalfSpace => RegionSpec::Shape(ShapeSpec::Halfspace),
            Region::Ball { center, radius } => RegionSpec::Shape(ShapeSpec::Ball { r: radius, c: center }),
            Region::Sector { apex, alpha, beta } => RegionSpec::Shape(ShapeSpec::Sector {
                alpha,
                beta,
                apex: (apex != [0.0, 0.0]).then_some(apex),
            }),
            Region::Box { min, max } => RegionSpec::Shape(ShapeSpec::Box { min, max }),
            Region::Complement(r) => RegionSpec::Op(OpSpec::Complement { arg: Box::new((*r).into()) }),
            Region::Intersection(v) => RegionSpec::Op(OpSpec::Intersect { args: v.into_iter().map(Into::into).collect() }),
            Region::Union(v) => RegionSpec::Op(OpSpec::Union { args: v.into_iter().map(Into::into).collect() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_json_round_trip() {
        let text = r#"{"op":"intersect","args":[{"shape":"ball","r":1.0,"c":[0.0,0.0]},{"shape":"halfspace"}]}"#;
        let r: Region = serde_json::from_str(text).unwrap();
        assert!(r.contains(&[0.1, 0.5]));
        assert!(!r.contains(&[0.1, -0.5]));
        let back = serde_json::to_string(&r).unwrap();
        let again: Region = serde_json::from_str(&back).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<Region>(r#"{"shape":"ball","r":1,"c":[0,0],"x":1}"#).is_err());
    }

    #[test]
    fn sector_rays_match_membership() {
        let regions = [
            Region::sector(0.3, 1.2),
            Region::sector(0.0, PI),
            Region::Sector { apex: [0.2, -0.1], alpha: -0.5, beta: 4.0 },
        ];
        let x = [0.37, 0.11];
        for r in &regions {
            for k in 0..64 {
                let phi = 2.0 * PI * (k as f64 + 0.3) / 64.0;
                let u = [phi.cos(), phi.sin()];
                let spans = r.ray(&x, &u);
                for j in 0..200 {
                    let rho = 0.013 * j as f64 + 0.001;
                    let p = [x[0] + rho * u[0], x[1] + rho * u[1]];
                    let in_spans = spans.iter().any(|(a, b)| rho > *a && rho < *b);
                    assert_eq!(in_spans, r.contains(&p), "phi={phi} rho={rho}");
                }
            }
        }
    }

    #[test]
    fn coarsening_is_exact_on_aligned_blocks() {
        let w = Window::centered(2, 1.0).unwrap();
        let q = GridSet::rasterize(&Region::sector(0.0, PI / 2.0), w.clone(), 32).unwrap();
        let c = q.coarsened().unwrap();
        let direct = GridSet::rasterize(&Region::sector(0.0, PI / 2.0), w, 16).unwrap();
        assert_eq!(c, direct);
    }

    #[test]
    fn file_round_trip() {
        let w = Window::new(vec![-1.0, 0.0], 2.0).unwrap();
        let s = GridSet::rasterize(&Region::ball(vec![0.0, 0.7], 0.5), w, 13).unwrap();
        let bytes = s.to_bytes();
        let back = GridSet::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(s, back);
    }
}
