//! The outer-level family: project to `t` dimensions with a raw Gaussian
//! map, then carve space with balls of radius `w` placed on a sequence of
//! randomly shifted grids of cell side `4w`. The key of a point is the pair
//! (index of the first grid whose nearest lattice ball contains it, lattice
//! cell coordinates); points missed by all `max_grids` grids key to
//! `Overflow`.
//!
//! Collision probability depends only on the distance between the two points
//! (the projection is rotation invariant and the shifts are uniform), and the
//! analytic `L` / `U(c)` evaluators expose the theoretical envelope
//! `p(1) >= L`, `p(c) <= U(c)`.

use crate::error::{Error, Result};
use crate::families::{HashFunction, HashKey, LshFamily};
use crate::rng::{stream_rng, tags};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::RwLock;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallCarvingParams {
    /// Projected dimension.
    pub t: usize,
    /// Ball radius in projected units; the grid cell side is `4w`.
    pub w: f64,
    /// Cap on the number of shifted grids tried before returning `Overflow`.
    pub max_grids: u32,
    /// The absolute constant `A` in the `L` bound, in (0,1).
    pub a_const: f64,
    /// The slack parameter of the analytic bounds, default `t^{-1/2}`.
    pub epsilon: f64,
}

impl BallCarvingParams {
    pub fn new(t: usize) -> Result<Self> {
        Self::with_radius(t, (t as f64).sqrt())
    }

    pub fn with_radius(t: usize, w: f64) -> Result<Self> {
        let p = BallCarvingParams {
            t,
            w,
            max_grids: 4096,
            a_const: 0.5,
            epsilon: (t as f64).powf(-0.5),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 1 {
            return Err(Error::invalid("t", "must be >= 1"));
        }
        if !(self.w > 0.0) {
            return Err(Error::invalid("w", "must be positive"));
        }
        if self.max_grids < 1 {
            return Err(Error::invalid("max_grids", "must be >= 1"));
        }
        if !(self.a_const > 0.0 && self.a_const < 1.0) {
            return Err(Error::invalid("A", "must lie in (0,1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> AnalyticBounds {
        AnalyticBounds {
            t: self.t as f64,
            epsilon: self.epsilon,
            a_const: self.a_const,
        }
    }
}

/// Default projected dimension `max(4, ceil((ln n)^{2/3}))`.
pub fn default_t(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::invalid("n", "must be >= 2"));
    }
    let v = (n as f64).ln().powf(2.0 / 3.0).ceil() as usize;
    Ok(v.max(4))
}

/// The theoretical collision-probability envelope of the family:
/// `L = A / (2 sqrt(t)) * (1 + eps + 8 eps^2)^{-t/2}` and
/// `U(c) = 2 / (1 + c^2 eps)^{t/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticBounds {
    pub t: f64,
    pub epsilon: f64,
    pub a_const: f64,
}

impl AnalyticBounds {
    pub fn l_bound(&self) -> f64 {
        self.a_const / (2.0 * self.t.sqrt())
            * (1.0 + self.epsilon + 8.0 * self.epsilon * self.epsilon).powf(-self.t / 2.0)
    }

    pub fn u_bound(&self, c: f64) -> Result<f64> {
        if !(c > 1.0) {
            return Err(Error::invalid("c", "U(c) requires c > 1"));
        }
        Ok(2.0 / (1.0 + c * c * self.epsilon).powf(self.t / 2.0))
    }
}

#[derive(Debug, Clone)]
pub struct BallCarvingFamily {
    params: BallCarvingParams,
    dim: usize,
}

impl BallCarvingFamily {
    pub fn new(params: BallCarvingParams, dim: usize) -> Result<Self> {
        params.validate()?;
        if dim < params.t {
            return Err(Error::invalid(
                "d",
                format!("data dimension {dim} must be >= projected dimension {}", params.t),
            ));
        }
        Ok(BallCarvingFamily { params, dim })
    }

    pub fn params(&self) -> &BallCarvingParams {
        &self.params
    }
}

pub struct BallCarvingFunction {
    params: BallCarvingParams,
    dim: usize,
    /// Raw Gaussian `t x d` projection, row-major. Stored in f32; the
    /// rounding is part of the function definition.
    projection: Vec<f32>,
    shift_seed: u64,
    /// Lazily generated grid shifts, `t` values per grid, uniform in `[0, 4w)`.
    /// The generator state is kept alongside so extension continues the same
    /// stream; memoization only, results are independent of access order.
    shifts: RwLock<(ChaCha8Rng, Vec<f64>)>,
}

impl BallCarvingFunction {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let t = self.params.t;
        let d = self.dim;
        let mut y = vec![0.0f64; t];
        for (j, yj) in y.iter_mut().enumerate() {
            let row = &self.projection[j * d..(j + 1) * d];
            let mut s = 0.0f64;
            for (g, v) in row.iter().zip(x) {
                s += *g as f64 * v;
            }
            *yj = s;
        }
        y
    }

    /// Run `f` with the shifts of grid `grid` (0-based) available.
    fn with_shifts<R>(&self, grid: usize, f: impl FnOnce(&[f64]) -> R) -> R {
        let t = self.params.t;
        let need = (grid + 1) * t;
        {
            let guard = self.shifts.read().unwrap();
            if guard.1.len() >= need {
                return f(&guard.1[grid * t..need]);
            }
        }
        let mut guard = self.shifts.write().unwrap();
        let side = 4.0 * self.params.w;
        while guard.1.len() < need {
            let u: f64 = guard.0.gen::<f64>() * side;
            guard.1.push(u);
        }
        f(&guard.1[grid * t..need])
    }

    /// Squared distance from projected point `y` to the nearest lattice point
    /// of the shifted grid, plus that lattice point's cell coordinates.
    fn nearest_cell(&self, y: &[f64], shifts: &[f64]) -> (f64, Vec<i64>) {
        let side = 4.0 * self.params.w;
        let mut dist2 = 0.0;
        let mut cell = Vec::with_capacity(y.len());
        for (v, s) in y.iter().zip(shifts) {
            let z = (v - s) / side;
            let n = z.round();
            let r = (z - n) * side;
            dist2 += r * r;
            cell.push(n as i64);
        }
        (dist2, cell)
    }

    fn first_hit(&self, y: &[f64]) -> HashKey {
        let w2 = self.params.w * self.params.w;
        for grid in 0..self.params.max_grids {
            let hit = self.with_shifts(grid as usize, |sh| {
                let (d2, cell) = self.nearest_cell(y, sh);
                (d2 <= w2).then_some(cell)
            });
            if let Some(cell) = hit {
                return HashKey::Cell { grid, coords: cell };
            }
        }
        HashKey::Overflow
    }
}

impl HashFunction for BallCarvingFunction {
    fn eval(&self, x: &[f64]) -> Result<HashKey> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(self.first_hit(&self.project(x)))
    }

    fn eval_pair(&self, u: &[f64], v: &[f64]) -> Result<(HashKey, HashKey)> {
        if u.len() != self.dim || v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: if u.len() != self.dim { u.len() } else { v.len() },
            });
        }
        let (yu, yv) = (self.project(u), self.project(v));
        let w2 = self.params.w * self.params.w;
        let mut ku = None;
        let mut kv = None;
        for grid in 0..self.params.max_grids {
            let (hu, hv) = self.with_shifts(grid as usize, |sh| {
                let a = ku.is_none().then(|| self.nearest_cell(&yu, sh));
                let b = kv.is_none().then(|| self.nearest_cell(&yv, sh));
                (a, b)
            });
            if let Some((d2, cell)) = hu {
                if d2 <= w2 {
                    ku = Some(HashKey::Cell { grid, coords: cell });
                }
            }
            if let Some((d2, cell)) = hv {
                if d2 <= w2 {
                    kv = Some(HashKey::Cell { grid, coords: cell });
                }
            }
            if ku.is_some() && kv.is_some() {
                break;
            }
        }
        Ok((ku.unwrap_or(HashKey::Overflow), kv.unwrap_or(HashKey::Overflow)))
    }
}

impl LshFamily for BallCarvingFamily {
    type Function = BallCarvingFunction;

    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, seed: u64) -> BallCarvingFunction {
        let mut prng = stream_rng(seed, &[tags::PROJECTION]);
        let projection = (0..self.params.t * self.dim)
            .map(|_| prng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        let shift_seed = crate::rng::child_seed(seed, &[tags::SHIFTS]);
        BallCarvingFunction {
            params: self.params,
            dim: self.dim,
            projection,
            shift_seed,
            shifts: RwLock::new((stream_rng(shift_seed, &[]), Vec::new())),
        }
    }
}

impl Clone for BallCarvingFunction {
    fn clone(&self) -> Self {
        BallCarvingFunction {
            params: self.params,
            dim: self.dim,
            projection: self.projection.clone(),
            shift_seed: self.shift_seed,
            shifts: RwLock::new((stream_rng(self.shift_seed, &[]), Vec::new())),
        }
    }
}
