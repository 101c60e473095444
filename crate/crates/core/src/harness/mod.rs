//! Benchmark harness: planted instance generation, the brute-force oracle,
//! the min-hash demonstration and the Hamming embedding.

pub mod bench;
pub mod fvecs;
pub mod report;

use crate::error::{Error, Result};
use crate::geometry::{distance_slice, norm_slice, Dataset, Point};
use crate::rng::{stream_rng, tags};
use rand::Rng;
use rand_distr::StandardNormal;

/// A `(c, 1)` promise instance: every query has a planted neighbor at
/// distance at most 1 and every other point at distance at least `c`.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub dataset: Dataset,
    pub queries: Vec<Point>,
    /// Id of the planted neighbor of each query.
    pub planted: Vec<u32>,
    pub c: f64,
}

/// Generate a planted instance with `n` points and `n_queries` queries in
/// dimension `d`. Base points are spread Gaussians; each query sits at
/// distance uniform in `[0.5, 1]` from its planted point. Directions are
/// rejection-resampled (boundedly) until the decoy guarantee holds, then the
/// whole instance is re-audited with exact distances.
pub fn gen_planted(n: usize, d: usize, c: f64, n_queries: usize, seed: u64) -> Result<PlantedInstance> {
    if n < 2 || d < 2 {
        return Err(Error::invalid("n/d", "need n >= 2 and d >= 2"));
    }
    if !(c > 1.0) {
        return Err(Error::invalid("c", "must be > 1"));
    }
    if n_queries < 1 || n_queries > n {
        return Err(Error::invalid("n_queries", "need 1 <= n_queries <= n"));
    }
    // spread factor keeps typical inter-point distances ~ sqrt(2 d) * spread
    // far above c, so the decoy guarantee almost never needs resampling
    let spread = (2.0 * c).max(4.0);
    let mut rng = stream_rng(seed, &[tags::PLANTED, 0]);
    let points: Vec<Point> = (0..n)
        .map(|_| {
            Point::new(
                (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * spread)
                    .collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(points)?;

    let mut queries = Vec::with_capacity(n_queries);
    let mut planted = Vec::with_capacity(n_queries);
    for qi in 0..n_queries {
        let target = qi; // distinct planted points
        let mut ok = false;
        for attempt in 0..100u64 {
            let mut qrng = stream_rng(seed, &[tags::PLANTED, 1, qi as u64, attempt]);
            let dist = 0.5 + 0.5 * qrng.gen::<f64>();
            let mut dir: Vec<f64> = (0..d).map(|_| qrng.sample::<f64, _>(StandardNormal)).collect();
            let nn = norm_slice(&dir);
            dir.iter_mut().for_each(|x| *x *= dist / nn);
            let q: Vec<f64> = dataset
                .coords(target)
                .iter()
                .zip(&dir)
                .map(|(a, b)| a + b)
                .collect();
            let decoys_ok = (0..n).all(|j| {
                j == target || distance_slice(dataset.coords(j), &q) >= c
            });
            if decoys_ok {
                queries.push(Point::new(q)?);
                planted.push(target as u32);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Infeasible {
                message: format!(
                    "could not satisfy the decoy guarantee for query {qi} after 100 attempts \
                     (d too small or n too large for c={c})"
                ),
            });
        }
    }

    let inst = PlantedInstance { dataset, queries, planted, c };
    inst.audit()?;
    Ok(inst)
}

impl PlantedInstance {
    /// Re-verify the promise with exact distances.
    pub fn audit(&self) -> Result<()> {
        for (qi, q) in self.queries.iter().enumerate() {
            let target = self.planted[qi] as usize;
            let dp = distance_slice(self.dataset.coords(target), q.coords());
            if dp > 1.0 + 1e-12 {
                return Err(Error::Infeasible {
                    message: format!("planted distance {dp} > 1 for query {qi}"),
                });
            }
            for j in 0..self.dataset.len() {
                if j == target {
                    continue;
                }
                let dj = distance_slice(self.dataset.coords(j), q.coords());
                if dj < self.c - 1e-12 {
                    return Err(Error::Infeasible {
                        message: format!("decoy {j} at distance {dj} < c for query {qi}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Exact nearest neighbor by full linear scan.
pub fn brute_force_nn(dataset: &Dataset, q: &Point) -> Result<(u32, f64)> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if q.dim() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: q.dim(),
        });
    }
    let mut best = (0u32, f64::INFINITY);
    for id in 0..dataset.len() {
        let d = distance_slice(dataset.coords(id), q.coords());
        if d < best.1 {
            best = (id as u32, d);
        }
    }
    Ok(best)
}

/// Min-hash demonstration: binary sets of size `s` with a given overlap;
/// empirical collision frequency over seeded random permutations compared to
/// the Jaccard index and to `(1-x)/(1+x)` with `x = |p - q|_1 / (2s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinhashResult {
    pub s: usize,
    pub overlap: usize,
    pub jaccard: f64,
    pub equal_weight_form: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub trials: u64,
}

pub fn minhash_demo(s: usize, overlap: usize, trials: u64, seed: u64) -> Result<MinhashResult> {
    if overlap > s {
        return Err(Error::invalid("overlap", "must be <= s"));
    }
    if s == 0 {
        return Err(Error::invalid("s", "sets must be nonempty"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    // universe: [0, overlap) shared, then s - overlap private to each side
    let p: Vec<u64> = (0..s as u64).collect();
    let q: Vec<u64> = (0..overlap as u64)
        .chain((s as u64)..(2 * s - overlap) as u64)
        .collect();
    let union = (2 * s - overlap) as u64;

    let mut hits = 0u64;
    for t in 0..trials {
        let mut rng = stream_rng(seed, &[tags::MINHASH, t]);
        // random priorities simulate a permutation of the universe
        let prio: Vec<u64> = (0..union).map(|_| rng.gen()).collect();
        let min_of = |set: &[u64]| set.iter().map(|&e| prio[e as usize]).min().unwrap();
        if min_of(&p) == min_of(&q) {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / trials as f64;
    let jaccard = overlap as f64 / union as f64;
    let x = (s - overlap) as f64 / s as f64; // |p-q|_1 / (2s) = 2(s-overlap)/(2s)
    Ok(MinhashResult {
        s,
        overlap,
        jaccard,
        equal_weight_form: (1.0 - x) / (1.0 + x),
        p_hat,
        stderr: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
        trials,
    })
}

/// Identity embedding of binary vectors into Euclidean space; the squared
/// distance equals the Hamming distance, so a `(c, r)` Hamming instance
/// becomes a `(sqrt(c), sqrt(r))` Euclidean instance.
pub fn embed_hamming_to_l2(x: &[f64]) -> Result<Point> {
    for (i, &v) in x.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::invalid(
                "x",
                format!("coordinate {i} is {v}; binary vectors only"),
            ));
        }
    }
    Point::new(x.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::distance;

    #[test]
    fn planted_minimal_instance() {
        let inst = gen_planted(2, 4, 2.0, 1, 7).unwrap();
        assert_eq!(inst.dataset.len(), 2);
        let d = distance(&inst.queries[0], inst.dataset.point(inst.planted[0] as usize)).unwrap();
        assert!(d <= 1.0);
        inst.audit().unwrap();
    }

    #[test]
    fn planted_is_deterministic() {
        let a = gen_planted(50, 8, 2.0, 10, 3).unwrap();
        let b = gen_planted(50, 8, 2.0, 10, 3).unwrap();
        assert_eq!(a.dataset.points(), b.dataset.points());
        assert_eq!(a.planted, b.planted);
        for (x, y) in a.queries.iter().zip(&b.queries) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn planted_audit_brute_force() {
        let inst = gen_planted(300, 16, 2.0, 50, 11).unwrap();
        for (qi, q) in inst.queries.iter().enumerate() {
            let (nn, d) = brute_force_nn(&inst.dataset, q).unwrap();
            assert_eq!(nn, inst.planted[qi]);
            assert!(d <= 1.0);
        }
    }

    #[test]
    fn minhash_hand_case() {
        // |p| = |q| = 3, overlap 2: jaccard = 0.5 = (1-x)/(1+x)
        let r = minhash_demo(3, 2, 60_000, 5).unwrap();
        assert!((r.jaccard - 0.5).abs() < 1e-15);
        assert!((r.equal_weight_form - 0.5).abs() < 1e-15);
        assert!((r.p_hat - 0.5).abs() <= 3.0 * r.stderr, "{}", r.p_hat);
    }

    #[test]
    fn minhash_identity_and_disjoint() {
        let same = minhash_demo(5, 5, 2000, 1).unwrap();
        assert_eq!(same.p_hat, 1.0);
        let disj = minhash_demo(8, 0, 2000, 2).unwrap();
        assert_eq!(disj.p_hat, 0.0);
        assert!(minhash_demo(3, 4, 10, 0).is_err());
    }

    #[test]
    fn hamming_embedding_scale_law() {
        let x = embed_hamming_to_l2(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let y = embed_hamming_to_l2(&[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        // Hamming distance 4 -> Euclidean 2
        assert_eq!(distance(&x, &y).unwrap(), 2.0);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        assert!(embed_hamming_to_l2(&[0.5]).is_err());
    }

    #[test]
    fn hamming_embedding_random_counts() {
        let mut rng = stream_rng(9, &[1]);
        use rand::Rng;
        for _ in 0..50 {
            let a: Vec<f64> = (0..64).map(|_| (rng.gen::<bool>() as u8) as f64).collect();
            let b: Vec<f64> = (0..64).map(|_| (rng.gen::<bool>() as u8) as f64).collect();
            let ham = a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64;
            let x = embed_hamming_to_l2(&a).unwrap();
            let y = embed_hamming_to_l2(&b).unwrap();
            let d = distance(&x, &y).unwrap();
            assert!((d * d - ham).abs() < 1e-9);
        }
    }
}
