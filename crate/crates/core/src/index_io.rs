//! Versioned binary container for the two-level index.
//!
//! Layout (all little-endian): magic `L2IX`, format version, the build
//! parameters, resolved parameters, datasets and per-table maps. Hash
//! functions are regenerated from their stored seeds on load, so the file
//! stays compact. Buckets and annulus entries are written in sorted digest
//! order, making the byte stream a pure function of the index content.

use crate::error::{Error, Result};
use crate::geometry::{sample_jl, Dataset, Point};
use crate::two_level::{
    Annulus, Center, EstimationBudget, MultiBucket, OuterConfig, ParamMode, QueryResult,
    ResolvedParams, Table, TwoLevelIndex, TwoLevelParams, Variant,
};
use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use std::collections::HashMap;
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"L2IX";
const VERSION: u32 = 1;

struct Counting<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Counting<R> {
    fn new(inner: R) -> Self {
        Counting { inner, pos: 0 }
    }

    fn bad(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

fn write_opt_f64<W: Write>(w: &mut W, v: Option<f64>) -> Result<()> {
    w.write_u8(v.is_some() as u8)?;
    w.write_f64::<LE>(v.unwrap_or(0.0))?;
    Ok(())
}

fn read_opt_f64<R: Read>(r: &mut Counting<R>) -> Result<Option<f64>> {
    let some = r.read_u8()? != 0;
    let v = r.read_f64::<LE>()?;
    Ok(some.then_some(v))
}

fn write_dataset<W: Write>(w: &mut W, d: &Dataset) -> Result<()> {
    w.write_u64::<LE>(d.len() as u64)?;
    w.write_u64::<LE>(d.dim() as u64)?;
    for p in d.points() {
        for &x in p.coords() {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

fn read_dataset<R: Read>(r: &mut Counting<R>) -> Result<Dataset> {
    let n = r.read_u64::<LE>()? as usize;
    let dim = r.read_u64::<LE>()? as usize;
    if n == 0 {
        return Ok(Dataset::empty(dim));
    }
    if dim == 0 {
        return Err(r.bad("dataset with points but dimension 0"));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut coords = Vec::with_capacity(dim);
        for _ in 0..dim {
            coords.push(r.read_f64::<LE>()?);
        }
        points.push(Point::new(coords).map_err(|e| r.bad(e.to_string()))?);
    }
    Dataset::new(points).map_err(|e| r.bad(e.to_string()))
}

impl TwoLevelIndex {
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;

        // params
        let p = &self.params;
        w.write_f64::<LE>(p.c)?;
        w.write_f64::<LE>(p.tau)?;
        w.write_f64::<LE>(p.r)?;
        w.write_f64::<LE>(p.delta_meb)?;
        w.write_u8(match p.param_mode {
            ParamMode::Analytic => 0,
            ParamMode::Empirical => 1,
        })?;
        w.write_u8(match p.variant {
            Variant::Meb => 0,
            Variant::Pivot => 1,
        })?;
        match p.outer {
            OuterConfig::PStable { width } => {
                w.write_u8(0)?;
                w.write_f64::<LE>(width)?;
                w.write_u64::<LE>(0)?;
            }
            OuterConfig::BallCarving { t, w_factor } => {
                w.write_u8(1)?;
                w.write_f64::<LE>(w_factor)?;
                w.write_u64::<LE>(t.map_or(0, |v| v as u64))?;
            }
        }
        write_opt_f64(w, p.inner_epsilon)?;
        w.write_u8(p.jl as u8)?;
        write_opt_f64(w, p.epsilon_jl)?;
        w.write_u64::<LE>(p.seed)?;
        w.write_u64::<LE>(p.tables_override.map_or(u64::MAX, |v| v as u64))?;
        w.write_u64::<LE>(p.est.pair_trials)?;
        w.write_u32::<LE>(p.est.q_tables)?;
        w.write_u32::<LE>(p.est.q_pairs)?;
        w.write_u64::<LE>(p.est.q_sample as u64)?;
        w.write_u64::<LE>(p.est.max_tables as u64)?;

        // resolved
        let r = &self.resolved;
        w.write_u64::<LE>(r.n as u64)?;
        w.write_u64::<LE>(r.data_dim as u64)?;
        w.write_u64::<LE>(r.built_dim as u64)?;
        w.write_f64::<LE>(r.c_eff)?;
        w.write_u32::<LE>(r.t_max)?;
        w.write_u32::<LE>(r.k)?;
        w.write_u64::<LE>(r.k_tilde.len() as u64)?;
        for &kt in &r.k_tilde {
            w.write_u32::<LE>(kt)?;
        }
        w.write_f64::<LE>(r.p_near)?;
        w.write_f64::<LE>(r.p_mid)?;
        w.write_f64::<LE>(r.p_far)?;
        w.write_f64::<LE>(r.q_hat)?;
        w.write_u32::<LE>(r.tables)?;
        w.write_u64::<LE>(r.stop_cap)?;

        w.write_f64::<LE>(self.scale)?;
        match &self.jl {
            None => w.write_u8(0)?,
            Some(m) => {
                w.write_u8(1)?;
                w.write_u64::<LE>(m.seed)?;
                w.write_u64::<LE>(m.in_dim as u64)?;
                w.write_u64::<LE>(m.out_dim as u64)?;
            }
        }
        write_dataset(w, &self.built)?;
        w.write_u8(self.original.is_some() as u8)?;
        if let Some(d) = &self.original {
            write_dataset(w, d)?;
        }

        w.write_u64::<LE>(self.tables.len() as u64)?;
        for t in &self.tables {
            w.write_u64::<LE>(t.outer_seed)?;
            w.write_u64::<LE>(t.inner_seed)?;
            w.write_u64::<LE>(t.entries.len() as u64)?;
            for &(digest, id) in &t.entries {
                w.write_u64::<LE>(digest)?;
                w.write_u32::<LE>(id)?;
            }
            let mut digests: Vec<&u64> = t.multi.keys().collect();
            digests.sort_unstable();
            w.write_u64::<LE>(digests.len() as u64)?;
            for digest in digests {
                let mb = &t.multi[digest];
                w.write_u64::<LE>(*digest)?;
                w.write_u64::<LE>(mb.members.len() as u64)?;
                for &m in &mb.members {
                    w.write_u32::<LE>(m)?;
                }
                match &mb.center {
                    Center::Member(m) => {
                        w.write_u8(0)?;
                        w.write_u32::<LE>(*m)?;
                    }
                    Center::Coords(c) => {
                        w.write_u8(1)?;
                        w.write_u64::<LE>(c.len() as u64)?;
                        for &x in c {
                            w.write_f64::<LE>(x)?;
                        }
                    }
                }
                w.write_u32::<LE>(mb.pivot)?;
                w.write_u64::<LE>(mb.annuli.len() as u64)?;
                for an in &mb.annuli {
                    w.write_u32::<LE>(an.l)?;
                    let mut keys: Vec<&u64> = an.map.keys().collect();
                    keys.sort_unstable();
                    w.write_u64::<LE>(keys.len() as u64)?;
                    for k in keys {
                        w.write_u64::<LE>(*k)?;
                        let ids = &an.map[k];
                        w.write_u64::<LE>(ids.len() as u64)?;
                        for &id in ids {
                            w.write_u32::<LE>(id)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self> {
        let mut r = Counting::new(reader);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(r.bad("bad magic; not an index file"));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(r.bad(format!("unsupported format version {version}")));
        }

        let c = r.read_f64::<LE>()?;
        let tau = r.read_f64::<LE>()?;
        let radius = r.read_f64::<LE>()?;
        let delta_meb = r.read_f64::<LE>()?;
        let param_mode = match r.read_u8()? {
            0 => ParamMode::Analytic,
            1 => ParamMode::Empirical,
            v => return Err(r.bad(format!("bad param mode {v}"))),
        };
        let variant = match r.read_u8()? {
            0 => Variant::Meb,
            1 => Variant::Pivot,
            v => return Err(r.bad(format!("bad variant {v}"))),
        };
        let outer = match r.read_u8()? {
            0 => {
                let width = r.read_f64::<LE>()?;
                let _ = r.read_u64::<LE>()?;
                OuterConfig::PStable { width }
            }
            1 => {
                let w_factor = r.read_f64::<LE>()?;
                let t = r.read_u64::<LE>()?;
                OuterConfig::BallCarving {
                    t: (t != 0).then_some(t as usize),
                    w_factor,
                }
            }
            v => return Err(r.bad(format!("bad outer family tag {v}"))),
        };
        let inner_epsilon = read_opt_f64(&mut r)?;
        let jl_flag = r.read_u8()? != 0;
        let epsilon_jl = read_opt_f64(&mut r)?;
        let seed = r.read_u64::<LE>()?;
        let tables_override = match r.read_u64::<LE>()? {
            u64::MAX => None,
            v => Some(v as usize),
        };
        let est = EstimationBudget {
            pair_trials: r.read_u64::<LE>()?,
            q_tables: r.read_u32::<LE>()?,
            q_pairs: r.read_u32::<LE>()?,
            q_sample: r.read_u64::<LE>()? as usize,
            max_tables: r.read_u64::<LE>()? as usize,
        };
        let params = TwoLevelParams {
            c,
            tau,
            r: radius,
            delta_meb,
            param_mode,
            variant,
            outer,
            inner_epsilon,
            jl: jl_flag,
            epsilon_jl,
            seed,
            tables_override,
            est,
        };

        let n = r.read_u64::<LE>()? as usize;
        let data_dim = r.read_u64::<LE>()? as usize;
        let built_dim = r.read_u64::<LE>()? as usize;
        let c_eff = r.read_f64::<LE>()?;
        let t_max = r.read_u32::<LE>()?;
        let k = r.read_u32::<LE>()?;
        let ktl = r.read_u64::<LE>()? as usize;
        if ktl != t_max as usize + 1 {
            return Err(r.bad(format!("annulus count {ktl} != T+1 = {}", t_max + 1)));
        }
        let mut k_tilde = Vec::with_capacity(ktl);
        for _ in 0..ktl {
            k_tilde.push(r.read_u32::<LE>()?);
        }
        let resolved = ResolvedParams {
            n,
            data_dim,
            built_dim,
            c_eff,
            t_max,
            k,
            k_tilde,
            p_near: r.read_f64::<LE>()?,
            p_mid: r.read_f64::<LE>()?,
            p_far: r.read_f64::<LE>()?,
            q_hat: r.read_f64::<LE>()?,
            tables: r.read_u32::<LE>()?,
            stop_cap: r.read_u64::<LE>()?,
        };

        let scale = r.read_f64::<LE>()?;
        let jl = match r.read_u8()? {
            0 => None,
            _ => {
                let seed = r.read_u64::<LE>()?;
                let in_dim = r.read_u64::<LE>()? as usize;
                let out_dim = r.read_u64::<LE>()? as usize;
                Some(sample_jl(in_dim, out_dim, seed).map_err(|e| r.bad(e.to_string()))?)
            }
        };
        let built = read_dataset(&mut r)?;
        let original = if r.read_u8()? != 0 {
            Some(read_dataset(&mut r)?)
        } else {
            None
        };

        let n_tables = r.read_u64::<LE>()? as usize;
        if n_tables != resolved.tables as usize {
            return Err(r.bad(format!(
                "table count {n_tables} does not match header {}",
                resolved.tables
            )));
        }
        let mut tables = Vec::with_capacity(n_tables);
        for _ in 0..n_tables {
            let outer_seed = r.read_u64::<LE>()?;
            let inner_seed = r.read_u64::<LE>()?;
            let ne = r.read_u64::<LE>()? as usize;
            if ne != n {
                return Err(r.bad(format!("table entry count {ne} != n = {n}")));
            }
            let mut entries = Vec::with_capacity(ne);
            for _ in 0..ne {
                let digest = r.read_u64::<LE>()?;
                let id = r.read_u32::<LE>()?;
                if id as usize >= n {
                    return Err(r.bad(format!("point id {id} out of range")));
                }
                entries.push((digest, id));
            }
            let nm = r.read_u64::<LE>()? as usize;
            let mut multi = HashMap::with_capacity(nm);
            for _ in 0..nm {
                let digest = r.read_u64::<LE>()?;
                let nmem = r.read_u64::<LE>()? as usize;
                let mut members = Vec::with_capacity(nmem);
                for _ in 0..nmem {
                    members.push(r.read_u32::<LE>()?);
                }
                let center = match r.read_u8()? {
                    0 => Center::Member(r.read_u32::<LE>()?),
                    1 => {
                        let len = r.read_u64::<LE>()? as usize;
                        let mut coords = Vec::with_capacity(len);
                        for _ in 0..len {
                            coords.push(r.read_f64::<LE>()?);
                        }
                        Center::Coords(coords)
                    }
                    v => return Err(r.bad(format!("bad center tag {v}"))),
                };
                let pivot = r.read_u32::<LE>()?;
                let nann = r.read_u64::<LE>()? as usize;
                let mut annuli = Vec::with_capacity(nann);
                for _ in 0..nann {
                    let l = r.read_u32::<LE>()?;
                    let nkeys = r.read_u64::<LE>()? as usize;
                    let mut map = HashMap::with_capacity(nkeys);
                    for _ in 0..nkeys {
                        let key = r.read_u64::<LE>()?;
                        let nids = r.read_u64::<LE>()? as usize;
                        let mut ids = Vec::with_capacity(nids);
                        for _ in 0..nids {
                            ids.push(r.read_u32::<LE>()?);
                        }
                        map.insert(key, ids);
                    }
                    annuli.push(Annulus { l, map });
                }
                multi.insert(
                    digest,
                    MultiBucket {
                        members,
                        center,
                        pivot,
                        annuli,
                    },
                );
            }
            tables.push(Table {
                outer_seed,
                inner_seed,
                entries,
                multi,
            });
        }

        Ok(TwoLevelIndex {
            params,
            resolved,
            scale,
            jl,
            built,
            original,
            tables,
        })
    }

    /// Convenience: query many points, returning plain results.
    pub fn query_batch(&self, queries: &[Point]) -> Result<Vec<QueryResult>> {
        queries.iter().map(|q| self.query(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::two_level::{build, TwoLevelParams};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn save_load_roundtrip_identical_answers() {
        let mut rng = stream_rng(1, &[0xabc]);
        let pts: Vec<Point> = (0..150)
            .map(|_| {
                Point::new(
                    (0..8)
                        .map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0)
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let data = Dataset::new(pts).unwrap();
        let mut p = TwoLevelParams::new(2.0);
        p.seed = 5;
        p.tables_override = Some(5);
        p.est.pair_trials = 500;
        let idx = build(&data, &p).unwrap();

        let mut buf = Vec::new();
        idx.save(&mut buf).unwrap();
        let loaded = TwoLevelIndex::load(&buf[..]).unwrap();

        // bytes are a pure function of content
        let mut buf2 = Vec::new();
        loaded.save(&mut buf2).unwrap();
        assert_eq!(buf, buf2);

        for i in 0..200 {
            let q = Point::new(
                (0..8)
                    .map(|j| data.coords(i % data.len())[j] + 0.3 * ((i + j) as f64).sin())
                    .collect(),
            )
            .unwrap();
            assert_eq!(idx.query(&q).unwrap(), loaded.query(&q).unwrap(), "query {i}");
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(TwoLevelIndex::load(&b"not an index"[..]).is_err());
        let mut buf = b"L2IX".to_vec();
        buf.extend_from_slice(&99u32.to_le_bytes());
        assert!(TwoLevelIndex::load(&buf[..]).is_err());
    }

    #[test]
    fn truncation_is_detected() {
        let data = Dataset::new(
            (0..20)
                .map(|i| Point::new(vec![i as f64, 0.5, 1.0, 2.0]).unwrap())
                .collect(),
        )
        .unwrap();
        let mut p = TwoLevelParams::new(2.0);
        p.tables_override = Some(2);
        p.est.pair_trials = 300;
        let idx = build(&data, &p).unwrap();
        let mut buf = Vec::new();
        idx.save(&mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(TwoLevelIndex::load(&buf[..]).is_err());
    }
}
