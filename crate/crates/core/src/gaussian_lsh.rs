//! The inner-level family: spherical Gaussian partitioning. A function is a
//! lazy stream of directions `w_1, w_2, ...` drawn `N(0,1)^d`; a point `x` is
//! first normalized to the shell radius `eta*c` and keyed by the smallest `i`
//! with `<x', w_i> >= eta*c*eps*sqrt(d)`, or `Overflow` after `max_parts`
//! misses.
//!
//! Normalization makes evaluation exactly scale invariant, which is what lets
//! the two-level index apply the family to shell points whose norms wander in
//! `[eta*c - 1, eta*c + 1]`. Analytic predictors for `ln(1/p)` and the
//! exponent live here too.

use crate::error::{Error, Result};
use crate::families::{CollisionEstimate, HashFunction, HashKey, LshFamily};
use crate::geometry::norm_slice;
use crate::rng::{child_seed, stream_rng, tags};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::sync::RwLock;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalParams {
    /// Shell radius is `eta * c`; `eta >= 1/2`.
    pub eta: f64,
    pub c: f64,
    pub d: usize,
    /// Threshold slack, default `d^{-1/4}`; must lie in `(d^{-1/2}, 1)`.
    pub epsilon: f64,
    /// Cap on the partition length; uncovered points key to `Overflow`.
    pub max_parts: u64,
    /// In strict mode points off the shell `[eta c - 1, eta c + 1]` are
    /// rejected; in lenient mode they are normalized anyway.
    pub strict: bool,
}

impl SphericalParams {
    pub fn new(eta: f64, c: f64, d: usize) -> Result<Self> {
        let p = SphericalParams {
            eta,
            c,
            d,
            epsilon: (d as f64).powf(-0.25),
            max_parts: 1_000_000,
            strict: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.5) {
            return Err(Error::invalid("eta", "must be >= 1/2"));
        }
        if !(self.c > 1.0) {
            return Err(Error::invalid("c", "must be > 1"));
        }
        if self.d < 2 {
            return Err(Error::invalid("d", "must be >= 2"));
        }
        let lo = (self.d as f64).powf(-0.5);
        if !(self.epsilon > lo && self.epsilon < 1.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("must lie in (d^-1/2, 1) = ({lo}, 1), got {}", self.epsilon),
            ));
        }
        if self.max_parts == 0 {
            return Err(Error::invalid("max_parts", "must be >= 1"));
        }
        Ok(())
    }

    pub fn shell_radius(&self) -> f64 {
        self.eta * self.c
    }

    /// Threshold on the unit-normalized dot product: `eps * sqrt(d)`.
    fn unit_threshold(&self) -> f64 {
        self.epsilon * (self.d as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SphericalFamily {
    params: SphericalParams,
}

impl SphericalFamily {
    pub fn new(params: SphericalParams) -> Result<Self> {
        params.validate()?;
        Ok(SphericalFamily { params })
    }

    pub fn params(&self) -> &SphericalParams {
        &self.params
    }
}

pub struct SphericalFunction {
    params: SphericalParams,
    seed: u64,
    /// Direction cache, `d` values per part, filled in stream order.
    /// Memoization only: part `i` is a pure function of `(seed, i)`.
    dirs: RwLock<(ChaCha8Rng, Vec<f64>)>,
}

pub fn sample_spherical(params: &SphericalParams, seed: u64) -> Result<SphericalFunction> {
    params.validate()?;
    let dir_seed = child_seed(seed, &[tags::DIRECTIONS]);
    Ok(SphericalFunction {
        params: *params,
        seed: dir_seed,
        dirs: RwLock::new((stream_rng(dir_seed, &[]), Vec::new())),
    })
}

impl SphericalFunction {
    fn check_domain(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        if x.len() != self.params.d {
            return Err(Error::DimensionMismatch {
                expected: self.params.d,
                actual: x.len(),
            });
        }
        let n = norm_slice(x);
        if self.params.strict {
            let r = self.params.shell_radius();
            if !(n >= r - 1.0 - 1e-9 && n <= r + 1.0 + 1e-9) {
                return Err(Error::DomainViolation(format!(
                    "norm {n} outside shell [{}, {}]",
                    r - 1.0,
                    r + 1.0
                )));
            }
        }
        if n == 0.0 {
            // lenient mode: the zero vector has no direction, key it Overflow
            return Ok(None);
        }
        Ok(Some(x.iter().map(|v| v / n).collect()))
    }

    fn with_direction<R>(&self, part: usize, f: impl FnOnce(&[f64]) -> R) -> R {
        let d = self.params.d;
        let need = (part + 1) * d;
        {
            let guard = self.dirs.read().unwrap();
            if guard.1.len() >= need {
                return f(&guard.1[part * d..need]);
            }
        }
        let mut guard = self.dirs.write().unwrap();
        while guard.1.len() < need {
            let g: f64 = guard.0.sample(StandardNormal);
            guard.1.push(g);
        }
        f(&guard.1[part * d..need])
    }

    /// First part whose cap contains the unit vector, scanning the cached
    /// direction stream.
    fn first_part_cached(&self, unit: &[f64]) -> HashKey {
        let thr = self.params.unit_threshold();
        for part in 0..self.params.max_parts {
            let dot = self.with_direction(part as usize, |w| {
                w.iter().zip(unit).map(|(a, b)| a * b).sum::<f64>()
            });
            if dot >= thr {
                return HashKey::Part(part);
            }
        }
        HashKey::Overflow
    }
}

impl HashFunction for SphericalFunction {
    fn eval(&self, x: &[f64]) -> Result<HashKey> {
        match self.check_domain(x)? {
            None => Ok(HashKey::Overflow),
            Some(unit) => Ok(self.first_part_cached(&unit)),
        }
    }

    /// Shared scan: streams the direction sequence once, stopping when both
    /// points have found their part. Bypasses the cache; the direction stream
    /// is identical by construction.
    fn eval_pair(&self, u: &[f64], v: &[f64]) -> Result<(HashKey, HashKey)> {
        let uu = self.check_domain(u)?;
        let vv = self.check_domain(v)?;
        let (uu, vv) = match (uu, vv) {
            (None, None) => return Ok((HashKey::Overflow, HashKey::Overflow)),
            (None, Some(_)) => return Ok((HashKey::Overflow, self.eval(v)?)),
            (Some(_), None) => return Ok((self.eval(u)?, HashKey::Overflow)),
            (Some(a), Some(b)) => (a, b),
        };
        let thr = self.params.unit_threshold();
        let d = self.params.d;
        let mut rng = stream_rng(self.seed, &[]);
        let mut ku = None;
        let mut kv = None;
        for part in 0..self.params.max_parts {
            let mut du = 0.0f64;
            let mut dv = 0.0f64;
            for i in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                du += g * uu[i];
                dv += g * vv[i];
            }
            if ku.is_none() && du >= thr {
                ku = Some(HashKey::Part(part));
            }
            if kv.is_none() && dv >= thr {
                kv = Some(HashKey::Part(part));
            }
            if ku.is_some() && kv.is_some() {
                break;
            }
        }
        Ok((ku.unwrap_or(HashKey::Overflow), kv.unwrap_or(HashKey::Overflow)))
    }
}

impl LshFamily for SphericalFamily {
    type Function = SphericalFunction;

    fn dim(&self) -> usize {
        self.params.d
    }

    fn sample(&self, seed: u64) -> SphericalFunction {
        sample_spherical(&self.params, seed).expect("validated at construction")
    }
}

/// `tan^2(alpha/2)` for the angle subtended by a chord of length `s` on the
/// sphere of radius `eta*c`: `(s^2/(eta c)^2) / (4 - s^2/(eta c)^2)`.
pub fn tan_sq_half_angle(s: f64, eta: f64, c: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::invalid("s", "chord must be nonnegative"));
    }
    let r = eta * c;
    if !(r > 0.0) {
        return Err(Error::invalid("eta*c", "shell radius must be positive"));
    }
    if s >= 2.0 * r {
        return Err(Error::invalid("s", format!("chord {s} >= diameter {}", 2.0 * r)));
    }
    let q = (s / r) * (s / r);
    Ok(q / (4.0 - q))
}

/// Analytic bracket on `ln(1/p)` for a chord `s`:
/// lower `eps^2 d / 2 * tan^2(alpha/2) - slack`, upper the same leading term
/// plus `ln(eps sqrt(d) tan(alpha/2)) + slack`. The upper form requires
/// `alpha < pi/2`.
pub fn predicted_log_inv_p(s: f64, params: &SphericalParams, slack: f64) -> Result<(f64, f64)> {
    let tsq = tan_sq_half_angle(s, params.eta, params.c)?;
    let lead = params.epsilon * params.epsilon * params.d as f64 / 2.0 * tsq;
    let lower = lead - slack;
    if tsq >= 1.0 {
        return Err(Error::invalid(
            "s",
            "upper bracket requires the chord angle below pi/2",
        ));
    }
    let upper = if s == 0.0 {
        slack
    } else {
        lead + (params.epsilon * (params.d as f64).sqrt() * tsq.sqrt()).ln() + slack
    };
    Ok((lower, upper))
}

/// The finite-form exponent of the idealized family:
/// `(4 - 1/eta^2) / (4 - 1/(eta c)^2) * 1/c^2`.
pub fn predicted_rho(eta: f64, c: f64) -> Result<f64> {
    if !(eta >= 0.5) {
        return Err(Error::invalid("eta", "must be >= 1/2"));
    }
    if !(c > 1.0) {
        return Err(Error::invalid("c", "must be > 1"));
    }
    let num = 4.0 - 1.0 / (eta * eta);
    let den = 4.0 - 1.0 / (eta * c * eta * c);
    Ok(num / den / (c * c))
}

/// Monte-Carlo estimate of
/// `Pr[X >= s  and  cos(alpha) X - sin(alpha) Y >= s]`, `X, Y ~ N(0,1)` iid —
/// the numerator of the collision-probability identity in two dimensions.
pub fn orthant_prob(s: f64, alpha: f64, trials: u64, seed: u64) -> Result<CollisionEstimate> {
    if !(s > 0.0) {
        return Err(Error::invalid("s", "threshold must be positive"));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&alpha) {
        return Err(Error::invalid("alpha", "must lie in [0, pi/2)"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let (ca, sa) = (alpha.cos(), alpha.sin());
    let chunk = 65_536u64;
    let nchunks = trials.div_ceil(chunk);
    let hits: u64 = (0..nchunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = stream_rng(seed, &[tags::ORTHANT, ci]);
            let lo = ci * chunk;
            let hi = (lo + chunk).min(trials);
            let mut h = 0u64;
            for _ in lo..hi {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                if x >= s && ca * x - sa * y >= s {
                    h += 1;
                }
            }
            h
        })
        .sum();
    Ok(CollisionEstimate::from_counts(hits, trials, 0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{estimate_collision, gaussian_tail, rho_from_probs};
    use crate::geometry::{distance_slice, normalize_to_radius, Point};

    fn params(eta: f64, c: f64, d: usize) -> SphericalParams {
        SphericalParams::new(eta, c, d).unwrap()
    }

    /// Two points on the shell of radius `eta*c` at chord distance `s`.
    fn shell_pair(p: &SphericalParams, s: f64, seed: u64) -> (Point, Point) {
        let r = p.shell_radius();
        let mut rng = stream_rng(seed, &[1]);
        let mut u: Vec<f64> = (0..p.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let nu = norm_slice(&u);
        u.iter_mut().for_each(|x| *x *= r / nu);
        // orthogonal direction
        let mut w: Vec<f64> = (0..p.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let proj = crate::geometry::dot_slice(&w, &u) / (r * r);
        for i in 0..p.d {
            w[i] -= proj * u[i];
        }
        let nw = norm_slice(&w);
        w.iter_mut().for_each(|x| *x /= nw);
        // rotate u by angle alpha = 2 asin(s / 2r) in the (u, w) plane
        let alpha = 2.0 * (s / (2.0 * r)).asin();
        let v: Vec<f64> = (0..p.d)
            .map(|i| u[i] * alpha.cos() + r * w[i] * alpha.sin())
            .collect();
        let (pu, pv) = (Point::new(u).unwrap(), Point::new(v).unwrap());
        debug_assert!((distance_slice(pu.coords(), pv.coords()) - s).abs() < 1e-9);
        (pu, pv)
    }

    #[test]
    fn first_hit_definition() {
        let p = params(1.0, 2.0, 16);
        let f = sample_spherical(&p, 3).unwrap();
        let (u, _) = shell_pair(&p, 1.0, 5);
        // recompute the first hit by hand from the cached directions
        let unit = normalize_to_radius(&u, 1.0).unwrap();
        let key = f.eval(u.coords()).unwrap();
        let HashKey::Part(i) = key else { panic!("expected a part key") };
        let thr = p.epsilon * (p.d as f64).sqrt();
        for j in 0..=i {
            let dot = f.with_direction(j as usize, |w| {
                w.iter().zip(unit.coords()).map(|(a, b)| a * b).sum::<f64>()
            });
            if j < i {
                assert!(dot < thr);
            } else {
                assert!(dot >= thr);
            }
        }
    }

    #[test]
    fn scale_invariance_exact() {
        let p = params(1.0, 2.0, 32);
        let f = sample_spherical(&p, 11).unwrap();
        for seed in 0..100 {
            let (u, _) = shell_pair(&p, 0.7, 100 + seed);
            let base = f.eval(u.coords()).unwrap();
            for lambda in [0.5, 1.0, 7.0] {
                let scaled: Vec<f64> = u.coords().iter().map(|x| x * lambda).collect();
                assert_eq!(f.eval(&scaled).unwrap(), base, "lambda {lambda}");
            }
        }
    }

    #[test]
    fn eval_pair_agrees_with_eval() {
        let p = params(1.0, 2.0, 16);
        for seed in 0..30 {
            let f = sample_spherical(&p, 500 + seed).unwrap();
            let (u, v) = shell_pair(&p, 1.3, 900 + seed);
            let (a, b) = f.eval_pair(u.coords(), v.coords()).unwrap();
            assert_eq!(a, f.eval(u.coords()).unwrap());
            assert_eq!(b, f.eval(v.coords()).unwrap());
        }
    }

    #[test]
    fn zero_vector_is_overflow_lenient_error_strict() {
        let p = params(1.0, 2.0, 8);
        let f = sample_spherical(&p, 1).unwrap();
        let z = vec![0.0; 8];
        assert_eq!(f.eval(&z).unwrap(), HashKey::Overflow);
        let mut sp = p;
        sp.strict = true;
        let f = sample_spherical(&sp, 1).unwrap();
        assert!(f.eval(&z).is_err());
        // off-shell point rejected in strict mode
        let (u, _) = shell_pair(&p, 1.0, 2);
        let tiny: Vec<f64> = u.coords().iter().map(|x| x * 0.01).collect();
        assert!(f.eval(&tiny).is_err());
    }

    #[test]
    fn nearer_shell_pairs_collide_more() {
        let p = params(1.0, 2.0, 64);
        let fam = SphericalFamily::new(p).unwrap();
        let (u1, v1) = shell_pair(&p, 1.0, 41);
        let (u2, v2) = shell_pair(&p, 2.0, 42);
        let trials = 4000;
        let near = estimate_collision(&fam, &u1, &v1, trials, 51).unwrap();
        let far = estimate_collision(&fam, &u2, &v2, trials, 52).unwrap();
        assert!(
            near.p_hat - far.p_hat > 3.0 * (near.stderr + far.stderr),
            "near {} far {}",
            near.p_hat,
            far.p_hat
        );
        assert!(near.overflow_rate <= 1e-3);
    }

    #[test]
    fn rotation_invariance_within_noise() {
        let p = params(1.0, 2.0, 16);
        let fam = SphericalFamily::new(p).unwrap();
        let (u, v) = shell_pair(&p, 1.0, 77);
        // Gram-Schmidt rotation from a seeded Gaussian matrix
        let d = p.d;
        let mut rng = stream_rng(123, &[2]);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for _ in 0..d {
            let mut w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for prev in &q {
                let pr = crate::geometry::dot_slice(&w, prev);
                for i in 0..d {
                    w[i] -= pr * prev[i];
                }
            }
            let n = norm_slice(&w);
            w.iter_mut().for_each(|x| *x /= n);
            q.push(w);
        }
        let rotate = |x: &[f64]| -> Point {
            Point::new(q.iter().map(|row| crate::geometry::dot_slice(row, x)).collect()).unwrap()
        };
        let trials = 6000;
        let a = estimate_collision(&fam, &u, &v, trials, 9).unwrap();
        let b = estimate_collision(&fam, &rotate(u.coords()), &rotate(v.coords()), trials, 10)
            .unwrap();
        assert!(
            (a.p_hat - b.p_hat).abs() <= 3.0 * (a.stderr + b.stderr),
            "{} vs {}",
            a.p_hat,
            b.p_hat
        );
    }

    #[test]
    fn shell_tolerance_inequality() {
        // norms in [eta c - 1, eta c + 1], distance s <= 1:
        // (eta c ||u' - v'||)^2 <= s^2 (eta c)^2 / (eta c - 1)^2
        let p = params(1.0, 3.0, 24);
        let r = p.shell_radius();
        let mut rng = stream_rng(5, &[3]);
        for _ in 0..300 {
            let (u0, v0) = shell_pair(&p, rng.gen::<f64>().min(0.999), rng.gen());
            let fu = 1.0 + (rng.gen::<f64>() - 0.5) * 2.0 / r; // norm in [r-1, r+1]
            let fv = 1.0 + (rng.gen::<f64>() - 0.5) * 2.0 / r;
            let u = Point::new(u0.coords().iter().map(|x| x * fu).collect()).unwrap();
            let v = Point::new(v0.coords().iter().map(|x| x * fv).collect()).unwrap();
            let s = distance_slice(u.coords(), v.coords());
            if s > 1.0 {
                continue;
            }
            let nds = crate::geometry::normalized_distance_sq(&u, &v).unwrap();
            let lhs = r * r * nds;
            let rhs = s * s * r * r / ((r - 1.0) * (r - 1.0));
            assert!(lhs <= rhs + 1e-9, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn tan_sq_values() {
        assert_eq!(tan_sq_half_angle(0.0, 1.0, 2.0).unwrap(), 0.0);
        let v = tan_sq_half_angle(1.0, 1.0, 2.0).unwrap();
        assert!((v - 1.0 / 15.0).abs() < 1e-15);
        // monotone growth toward the pole at s -> 2 eta c
        let mut last = 0.0;
        for s in [0.5, 1.0, 2.0, 3.0, 3.9, 3.99] {
            let t = tan_sq_half_angle(s, 1.0, 2.0).unwrap();
            assert!(t > last);
            last = t;
        }
        assert!(tan_sq_half_angle(4.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn predicted_log_inv_p_leading_term() {
        // d = 4096, eps = d^{-1/4} = 1/8, eta c = 2, s = 1:
        // leading lower term (eps^2 d / 2) * (1/15) = 32/15
        let mut p = SphericalParams::new(1.0, 2.0, 4096).unwrap();
        p.epsilon = (4096f64).powf(-0.25);
        let (lo, _up) = predicted_log_inv_p(1.0, &p, 0.0).unwrap();
        assert!((lo - 32.0 / 15.0).abs() < 1e-12, "{lo}");
        // s = 0 lower bracket is -slack
        let (lo0, up0) = predicted_log_inv_p(0.0, &p, 3.0).unwrap();
        assert_eq!(lo0, -3.0);
        assert_eq!(up0, 3.0);
        // angle >= pi/2 rejected for the upper form: chord s = sqrt(2) r
        assert!(predicted_log_inv_p(2.0 * std::f64::consts::SQRT_2, &p, 3.0).is_err());
    }

    #[test]
    fn measured_log_inv_p_lies_between_brackets() {
        let p = params(1.0, 2.0, 128);
        let fam = SphericalFamily::new(p).unwrap();
        for (s, seed) in [(1.0, 61u64), (2.0, 62)] {
            let (u, v) = shell_pair(&p, s, seed);
            let est = estimate_collision(&fam, &u, &v, 8000, seed).unwrap();
            let l = (1.0 / est.p_hat).ln();
            let (lo, up) = predicted_log_inv_p(s, &p, 3.0).unwrap();
            assert!(lo <= l && l <= up, "s={s}: ln(1/p)={l} bracket=[{lo},{up}]");
        }
    }

    #[test]
    fn predicted_rho_values() {
        assert!((predicted_rho(1.0, 2.0).unwrap() - 0.2).abs() < 1e-15);
        // eta -> infinity at fixed c: -> 1/c^2
        let big = predicted_rho(1e9, 2.0).unwrap();
        assert!((big - 0.25).abs() < 1e-9);
        // eta = 1, c -> infinity: rho * c^2 -> 3/4
        let v = predicted_rho(1.0, 100.0).unwrap();
        assert!((v * 100.0 * 100.0 / 0.75 - 1.0).abs() < 0.01);
        assert!(predicted_rho(0.4, 2.0).is_err());
    }

    #[test]
    fn empirical_rho_beats_nothing_but_is_consistent() {
        // the spread between p(1) and p(2) drives the two-level gains;
        // check the measured exponent against the exact 2-d reduction
        let p = params(1.0, 2.0, 64);
        let fam = SphericalFamily::new(p).unwrap();
        let (u1, v1) = shell_pair(&p, 1.0, 81);
        let (u2, v2) = shell_pair(&p, 2.0, 82);
        let t = 6000;
        let e1 = estimate_collision(&fam, &u1, &v1, t, 91).unwrap();
        let e2 = estimate_collision(&fam, &u2, &v2, t, 92).unwrap();
        let rho = rho_from_probs(e1.p_hat, e2.p_hat).unwrap();
        assert!(rho > 0.0 && rho < 1.0, "rho {rho}");
    }

    #[test]
    fn orthant_degenerate_angle_is_single_tail() {
        let est = orthant_prob(2.0, 0.0, 200_000, 3).unwrap();
        let tail = gaussian_tail(2.0).unwrap();
        assert!((est.p_hat - tail).abs() <= 3.0 * est.stderr);
    }

    #[test]
    fn orthant_monotone_in_alpha() {
        let mut last = 1.0f64;
        for alpha in [0.0, std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_3] {
            let est = orthant_prob(2.0, alpha, 400_000, 7).unwrap();
            assert!(est.p_hat < last + 3.0 * est.stderr);
            last = est.p_hat;
        }
        assert!(orthant_prob(2.0, std::f64::consts::FRAC_PI_2, 10, 1).is_err());
        assert!(orthant_prob(0.0, 0.1, 10, 1).is_err());
    }

    #[test]
    fn orthant_respects_analytic_sandwich() {
        let s = 2.0;
        let alpha = std::f64::consts::FRAC_PI_3;
        let est = orthant_prob(s, alpha, 1_000_000, 13).unwrap();
        let tan_half = (alpha / 2.0).tan();
        let upper = (-s * s * (1.0 + tan_half * tan_half) / 2.0).exp() / s;
        assert!(est.p_hat <= upper, "{} vs upper {}", est.p_hat, upper);
        for da in [1e-3, 0.05, 0.2] {
            let a0 = alpha + da;
            let t0 = (a0 / 2.0).tan();
            let lower = 0.1 * (-s * s * (1.0 + t0 * t0) / 2.0).exp() / (s * s * t0);
            assert!(est.p_hat >= lower, "{} vs lower {} (a0={a0})", est.p_hat, lower);
        }
    }
}
