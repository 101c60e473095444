//! fvecs / ivecs readers and writers.
//!
//! Record layout per vector: a 32-bit little-endian integer `d`, then `d`
//! little-endian 32-bit floats (ivecs: 32-bit signed integers). All records
//! in a file must share `d`. Round trips are lossless at 32-bit precision.

use crate::error::{Error, Result};
use crate::geometry::{Dataset, Point};
use byteorder::{ReadBytesExt, WriteBytesExt, LE};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

fn bad(offset: u64, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let mut pos = 0u64;
    let mut points: Vec<Point> = Vec::new();
    let mut dim: Option<usize> = None;
    while pos < len {
        if len - pos < 4 {
            return Err(bad(pos, "truncated record header"));
        }
        let d = r.read_i32::<LE>()?;
        pos += 4;
        if d <= 0 {
            return Err(bad(pos - 4, format!("record dimension {d} <= 0")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(bad(
                    pos - 4,
                    format!("inconsistent dimension {d}, expected {expected}"),
                ));
            }
            _ => {}
        }
        if len - pos < 4 * d as u64 {
            return Err(bad(pos, format!("truncated record body ({d} floats expected)")));
        }
        let mut coords = Vec::with_capacity(d);
        for _ in 0..d {
            coords.push(r.read_f32::<LE>()? as f64);
        }
        pos += 4 * d as u64;
        points.push(Point::new(coords).map_err(|e| bad(pos, e.to_string()))?);
    }
    if points.is_empty() {
        return Ok(Dataset::empty(0));
    }
    Dataset::new(points)
}

pub fn write_fvecs(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in dataset.points() {
        w.write_i32::<LE>(p.dim() as i32)?;
        for &x in p.coords() {
            w.write_f32::<LE>(x as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let mut pos = 0u64;
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    while pos < len {
        if len - pos < 4 {
            return Err(bad(pos, "truncated record header"));
        }
        let d = r.read_i32::<LE>()?;
        pos += 4;
        if d <= 0 {
            return Err(bad(pos - 4, format!("record dimension {d} <= 0")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(bad(
                    pos - 4,
                    format!("inconsistent dimension {d}, expected {expected}"),
                ));
            }
            _ => {}
        }
        if len - pos < 4 * d as u64 {
            return Err(bad(pos, format!("truncated record body ({d} ints expected)")));
        }
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            row.push(r.read_i32::<LE>()?);
        }
        pos += 4 * d as u64;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        if row.is_empty() {
            return Err(Error::Empty("ivecs row"));
        }
        w.write_i32::<LE>(row.len() as i32)?;
        for &v in row {
            w.write_i32::<LE>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// In-memory fvecs encoding, used by tests to pin the byte layout.
pub fn fvecs_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for p in dataset.points() {
        out.extend_from_slice(&(p.dim() as i32).to_le_bytes());
        for &x in p.coords() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.fvecs");
        File::create(&path).unwrap();
        let d = read_fvecs(&path).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn single_vector_layout() {
        let d = Dataset::new(vec![Point::new(vec![1.0, 2.0]).unwrap()]).unwrap();
        let bytes = fvecs_bytes(&d);
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[0..4], &[2, 0, 0, 0]);
        assert_eq!(&bytes[4..8], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2.0f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.fvecs");
        let mut pts = Vec::new();
        let mut state = 0x12345u64;
        for _ in 0..50 {
            let coords: Vec<f64> = (0..16)
                .map(|_| {
                    state = crate::rng::mix64(state);
                    // values representable at f32 so the roundtrip is exact
                    (state as f32 / u32::MAX as f32) as f64
                })
                .collect();
            pts.push(Point::new(coords).unwrap());
        }
        let d = Dataset::new(pts).unwrap();
        write_fvecs(&path, &d).unwrap();
        let back = read_fvecs(&path).unwrap();
        assert_eq!(d.len(), back.len());
        for (a, b) in d.points().iter().zip(back.points()) {
            for (x, y) in a.coords().iter().zip(b.coords()) {
                assert_eq!(*x as f32, *y as f32);
                assert_eq!(*y, (*y as f32) as f64);
            }
        }
    }

    #[test]
    fn malformed_inputs_error_with_offsets() {
        let dir = tempfile::tempdir().unwrap();

        let trunc = dir.path().join("t.fvecs");
        let mut f = File::create(&trunc).unwrap();
        f.write_all(&4i32.to_le_bytes()).unwrap();
        f.write_all(&1.0f32.to_le_bytes()).unwrap(); // 3 floats missing
        drop(f);
        match read_fvecs(&trunc) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }

        let badd = dir.path().join("b.fvecs");
        let mut f = File::create(&badd).unwrap();
        f.write_all(&(-1i32).to_le_bytes()).unwrap();
        drop(f);
        assert!(matches!(read_fvecs(&badd), Err(Error::Format { .. })));

        let incons = dir.path().join("i.fvecs");
        let mut f = File::create(&incons).unwrap();
        f.write_all(&1i32.to_le_bytes()).unwrap();
        f.write_all(&1.0f32.to_le_bytes()).unwrap();
        f.write_all(&2i32.to_le_bytes()).unwrap();
        f.write_all(&1.0f32.to_le_bytes()).unwrap();
        f.write_all(&1.0f32.to_le_bytes()).unwrap();
        drop(f);
        match read_fvecs(&incons) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn ivecs_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ivecs");
        let rows = vec![vec![3, 1, 4], vec![1, 5, 9]];
        write_ivecs(&path, &rows).unwrap();
        assert_eq!(read_ivecs(&path).unwrap(), rows);
    }
}
