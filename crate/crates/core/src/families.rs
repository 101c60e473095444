//! The generic LSH-family contract: samplable hash functions with discrete
//! keys, tensoring, Monte-Carlo collision estimation and the shared
//! probability arithmetic.
//!
//! A family is a distribution over hash functions; `sample(seed)` draws one
//! deterministically. Collision probabilities are estimated by sampling many
//! functions and counting key agreements; estimates carry their trial count
//! and standard error.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::rng::{child_seed, tags};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Discrete hash value. `Overflow` is the reserved key for points left
/// uncovered by a capped partitioning process; it compares equal only to
/// itself, so capped families stay well-defined (and conservative: two
/// overflowed points count as colliding).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HashKey {
    Overflow,
    /// Index of a part in a sequential partition.
    Part(u64),
    /// Grid index plus lattice cell coordinates.
    Cell { grid: u32, coords: Vec<i64> },
    /// Concatenation of component keys (tensoring).
    Tuple(Vec<HashKey>),
}

impl HashKey {
    /// Stable 64-bit digest (FNV-1a over a canonical encoding). Used as the
    /// storage key in hash tables; the probability of two distinct keys in
    /// one table sharing a digest is negligible and any such merge only adds
    /// candidates that the exact distance check filters out.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        self.digest_into(&mut h);
        h
    }

    fn digest_into(&self, h: &mut u64) {
        const P: u64 = 0x100000001b3;
        let mut eat = |b: u8| {
            *h ^= b as u64;
            *h = h.wrapping_mul(P);
        };
        match self {
            HashKey::Overflow => eat(0x01),
            HashKey::Part(i) => {
                eat(0x02);
                for b in i.to_le_bytes() {
                    eat(b);
                }
            }
            HashKey::Cell { grid, coords } => {
                eat(0x03);
                for b in grid.to_le_bytes() {
                    eat(b);
                }
                for c in coords {
                    for b in c.to_le_bytes() {
                        eat(b);
                    }
                }
            }
            HashKey::Tuple(parts) => {
                eat(0x04);
                for b in (parts.len() as u64).to_le_bytes() {
                    eat(b);
                }
                for p in parts {
                    p.digest_into(h);
                }
            }
        }
    }

    pub fn contains_overflow(&self) -> bool {
        match self {
            HashKey::Overflow => true,
            HashKey::Tuple(parts) => parts.iter().any(HashKey::contains_overflow),
            _ => false,
        }
    }
}

/// A sampled hash function: deterministic given its stored state.
pub trait HashFunction: Send + Sync {
    fn eval(&self, x: &[f64]) -> Result<HashKey>;

    /// Evaluate both points under this one function. Families override this
    /// to share the scan over random parts; the result must equal
    /// `(eval(u), eval(v))` exactly.
    fn eval_pair(&self, u: &[f64], v: &[f64]) -> Result<(HashKey, HashKey)> {
        Ok((self.eval(u)?, self.eval(v)?))
    }
}

/// A samplable distribution over hash functions on `R^dim`.
pub trait LshFamily: Send + Sync {
    type Function: HashFunction;

    fn dim(&self) -> usize;

    /// Draw a function; identical seeds give identical functions.
    fn sample(&self, seed: u64) -> Self::Function;
}

/// `k` independent copies evaluated together; collides iff every component
/// collides.
pub struct Tensored<F: LshFamily> {
    base: F,
    k: usize,
}

pub fn tensor<F: LshFamily>(base: F, k: usize) -> Result<Tensored<F>> {
    if k == 0 {
        return Err(Error::invalid("k", "tensoring order must be >= 1"));
    }
    Ok(Tensored { base, k })
}

impl<F: LshFamily> Tensored<F> {
    pub fn k(&self) -> usize {
        self.k
    }
}

pub struct TensoredFunction<H: HashFunction> {
    components: Vec<H>,
}

impl<H: HashFunction> TensoredFunction<H> {
    pub fn from_components(components: Vec<H>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("k", "tensoring order must be >= 1"));
        }
        Ok(TensoredFunction { components })
    }
}

impl<H: HashFunction> HashFunction for TensoredFunction<H> {
    fn eval(&self, x: &[f64]) -> Result<HashKey> {
        let parts = self
            .components
            .iter()
            .map(|c| c.eval(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(HashKey::Tuple(parts))
    }

    fn eval_pair(&self, u: &[f64], v: &[f64]) -> Result<(HashKey, HashKey)> {
        let mut ku = Vec::with_capacity(self.components.len());
        let mut kv = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let (a, b) = c.eval_pair(u, v)?;
            ku.push(a);
            kv.push(b);
        }
        Ok((HashKey::Tuple(ku), HashKey::Tuple(kv)))
    }
}

impl<F: LshFamily> LshFamily for Tensored<F> {
    type Function = TensoredFunction<F::Function>;

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn sample(&self, seed: u64) -> Self::Function {
        let components = (0..self.k)
            .map(|j| self.base.sample(child_seed(seed, &[tags::TENSOR, j as u64])))
            .collect();
        TensoredFunction { components }
    }
}

/// Monte-Carlo estimate of a collision probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEstimate {
    pub p_hat: f64,
    pub trials: u64,
    pub stderr: f64,
    /// Fraction of evaluated keys that were `Overflow` (or contained one).
    pub overflow_rate: f64,
}

impl CollisionEstimate {
    pub fn from_counts(successes: u64, trials: u64, overflow_keys: u64, keys: u64) -> Self {
        let p_hat = successes as f64 / trials as f64;
        CollisionEstimate {
            p_hat,
            trials,
            stderr: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
            overflow_rate: if keys == 0 { 0.0 } else { overflow_keys as f64 / keys as f64 },
        }
    }

    /// Conservative upper confidence value: `p_hat` inflated by three
    /// standard errors (and by the rule-of-three bound when nothing was
    /// observed).
    pub fn upper3(&self) -> f64 {
        if self.p_hat == 0.0 {
            3.0 / self.trials as f64
        } else {
            (self.p_hat + 3.0 * self.stderr).min(1.0)
        }
    }
}

/// Estimate `Pr[h(u) = h(v)]` over `trials` independently sampled functions.
/// Deterministic given `seed` and independent of thread count.
pub fn estimate_collision<F: LshFamily>(
    family: &F,
    u: &Point,
    v: &Point,
    trials: u64,
    seed: u64,
) -> Result<CollisionEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    if u.dim() != family.dim() || v.dim() != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            actual: if u.dim() != family.dim() { u.dim() } else { v.dim() },
        });
    }
    let (hits, overflows) = (0..trials)
        .into_par_iter()
        .map(|j| {
            let f = family.sample(child_seed(seed, &[tags::TRIAL, j]));
            let (ku, kv) = f.eval_pair(u.coords(), v.coords())?;
            let hit = (ku == kv) as u64;
            let ovf = ku.contains_overflow() as u64 + kv.contains_overflow() as u64;
            Ok::<_, Error>((hit, ovf))
        })
        .try_reduce(|| (0u64, 0u64), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(CollisionEstimate::from_counts(hits, trials, overflows, 2 * trials))
}

/// Exact standard normal upper tail `Pr[X >= t]`.
pub fn gaussian_tail(t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::invalid("t", "must be positive"));
    }
    Ok(0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2))
}

/// The standard sandwich for the normal tail:
/// `(1/sqrt(2pi)) (1/t - 1/t^3) e^{-t^2/2} <= Pr[X >= t] <= (1/sqrt(2pi)) (1/t) e^{-t^2/2}`.
/// The lower bound is nonpositive (vacuous) for `t <= 1`.
pub fn gaussian_tail_bounds(t: f64) -> Result<(f64, f64)> {
    if t <= 0.0 {
        return Err(Error::invalid("t", "must be positive"));
    }
    let base = (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    Ok((base * (1.0 / t - 1.0 / (t * t * t)), base / t))
}

/// The query exponent `ln(1/p1) / ln(1/p2)` for `0 < p2 < p1 < 1`.
pub fn rho_from_probs(p1: f64, p2: f64) -> Result<f64> {
    if !(p1 > 0.0 && p1 < 1.0) || !(p2 > 0.0 && p2 < 1.0) {
        return Err(Error::invalid("p", "probabilities must lie in (0,1)"));
    }
    if p1 <= p2 {
        return Err(Error::invalid("p", format!("need p2 < p1, got p1={p1} p2={p2}")));
    }
    Ok((1.0 / p1).ln() / (1.0 / p2).ln())
}
