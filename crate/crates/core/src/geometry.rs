//! Dense vector math: distances, normalization, minimum enclosing balls,
//! the Jung radius bound and Gaussian dimension reduction.
//!
//! Everything here is pure and immutable after construction; all types are
//! safe to share across threads.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tags};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A point of `R^d` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("point coordinates"));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("coords", "coordinates must be finite"));
        }
        Ok(Point { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// An ordered set of points sharing one dimension; ids are the positions
/// `0..n-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<Point>,
    dim: usize,
}

impl Dataset {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let dim = points.first().map_or(0, Point::dim);
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(Error::invalid(
                    "points",
                    format!("point {i} has dim {}, expected {dim}", p.dim()),
                ));
            }
        }
        Ok(Dataset { points, dim })
    }

    pub fn empty(dim: usize) -> Self {
        Dataset { points: Vec::new(), dim }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, id: usize) -> &Point {
        &self.points[id]
    }

    pub fn coords(&self, id: usize) -> &[f64] {
        self.points[id].coords()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

/// Euclidean distance between two equal-dimension points.
pub fn distance(u: &Point, v: &Point) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(distance_slice(u.coords(), v.coords()))
}

#[inline]
pub(crate) fn distance_slice(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut s = 0.0;
    for i in 0..u.len() {
        let d = u[i] - v[i];
        s += d * d;
    }
    s.sqrt()
}

#[inline]
pub(crate) fn norm_slice(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale `x` to length `radius`. Errors on the zero vector.
pub fn normalize_to_radius(x: &Point, radius: f64) -> Result<Point> {
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::invalid("radius", "must be positive and finite"));
    }
    let n = norm_slice(x.coords());
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    let f = radius / n;
    Point::new(x.coords().iter().map(|v| v * f).collect())
}

/// Squared distance between the unit normalizations of `u` and `v`, computed
/// through the identity
/// `||u/||u|| - v/||v||||^2 = (||u-v||^2 - (||u|| - ||v||)^2) / (||u|| ||v||)`.
pub fn normalized_distance_sq(u: &Point, v: &Point) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let nu = norm_slice(u.coords());
    let nv = norm_slice(v.coords());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let duv = distance_slice(u.coords(), v.coords());
    Ok((duv * duv - (nu - nv) * (nu - nv)) / (nu * nv))
}

/// A ball given by center and radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

/// Approximate minimum enclosing ball by iterative core-set refinement:
/// start at the first point and repeatedly step toward the farthest point
/// with step `1/(i+1)`; `ceil(1/delta^2)` rounds give a `(1+delta)` radius
/// guarantee.
pub fn smallest_enclosing_ball(points: &[Point], delta: f64) -> Result<Ball> {
    if points.is_empty() {
        return Err(Error::Empty("smallest_enclosing_ball input"));
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.dim(),
            });
        }
    }
    let views: Vec<&[f64]> = points.iter().map(Point::coords).collect();
    let (center, radius) = seb_slices(&views, delta)?;
    Ok(Ball {
        center: Point::new(center)?,
        radius,
    })
}

pub(crate) fn seb_slices(points: &[&[f64]], delta: f64) -> Result<(Vec<f64>, f64)> {
    if points.is_empty() {
        return Err(Error::Empty("smallest_enclosing_ball input"));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::invalid("delta", "must lie in (0, 0.5]"));
    }
    if points.len() == 1 {
        return Ok((points[0].to_vec(), 0.0));
    }
    let mut center = points[0].to_vec();
    let iterations = (1.0 / (delta * delta)).ceil() as usize;
    for i in 1..=iterations {
        let mut far = 0usize;
        let mut far_d = -1.0;
        for (j, p) in points.iter().enumerate() {
            let d = distance_slice(&center, p);
            if d > far_d {
                far_d = d;
                far = j;
            }
        }
        if far_d == 0.0 {
            break; // all points coincide with the center
        }
        let step = 1.0 / (i as f64 + 1.0);
        for (c, &p) in center.iter_mut().zip(points[far]) {
            *c += (p - *c) * step;
        }
    }
    let radius = points
        .iter()
        .map(|p| distance_slice(&center, p))
        .fold(0.0, f64::max);
    Ok((center, radius))
}

/// Radius sufficient to enclose any set of the given diameter: `diameter / sqrt(2)`.
pub fn jung_radius_bound(diameter: f64) -> f64 {
    diameter / std::f64::consts::SQRT_2
}

/// A dense Gaussian dimension-reduction map with entries `N(0,1)/sqrt(out_dim)`.
#[derive(Debug, Clone)]
pub struct JlMap {
    pub seed: u64,
    pub in_dim: usize,
    pub out_dim: usize,
    pub scale: f64,
    matrix: Vec<f64>, // out_dim x in_dim, row-major, pre-scaled
}

/// Sample a dimension-reduction map; deterministic per seed.
pub fn sample_jl(in_dim: usize, out_dim: usize, seed: u64) -> Result<JlMap> {
    if in_dim == 0 || out_dim == 0 {
        return Err(Error::invalid("dims", "in_dim and out_dim must be >= 1"));
    }
    let scale = 1.0 / (out_dim as f64).sqrt();
    let mut rng = stream_rng(seed, &[tags::JL]);
    let matrix = (0..in_dim * out_dim)
        .map(|_| {
            let g: f64 = rng.sample(StandardNormal);
            g * scale
        })
        .collect();
    Ok(JlMap {
        seed,
        in_dim,
        out_dim,
        scale,
        matrix,
    })
}

impl JlMap {
    pub fn apply(&self, x: &Point) -> Result<Point> {
        if x.dim() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: x.dim(),
            });
        }
        Point::new(self.apply_slice(x.coords()))
    }

    pub(crate) fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot_slice(&self.matrix[j * self.in_dim..(j + 1) * self.in_dim], x);
        }
        out
    }
}
