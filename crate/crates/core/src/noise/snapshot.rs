//! Binary and CSV export of diagram trajectories.
//!
//! Snapshot layout, all little-endian:
//! `b"SQED"`, version `u32`, `n u32`, cutoff `f64`, grid length `u64`, renorm `f64`,
//! then per stored time: `t f64` followed by `⟨1⟩, …, ⟨n⟩` as `(re f64, im f64)` pairs in
//! canonical mode order of the `k`-fold product set.

use super::{DiagramOrigin, DiagramSet};
use crate::error::{invalid, Result};
use crate::spectral::{make_mode_set, SpectralField};
use crate::trajectory::Trajectory;
use num_complex::Complex64;
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"SQED";
const VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(d: &DiagramSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.n as u32).to_le_bytes())?;
    w.write_all(&d.base_modes().cutoff().to_le_bytes())?;
    w.write_all(&(d.len() as u64).to_le_bytes())?;
    w.write_all(&d.renorm.to_le_bytes())?;
    for i in 0..d.len() {
        w.write_all(&d.times()[i].to_le_bytes())?;
        for f in d.frame(i) {
            for c in f.coeffs() {
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_bytes<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_bytes::<8, _>(r)?))
}

/// Inverse of [`write_snapshot`]; the origin is not stored and comes back as stationary.
pub fn read_snapshot<R: Read>(mut r: R) -> Result<DiagramSet> {
    if &read_bytes::<4, _>(&mut r)? != MAGIC {
        return Err(invalid("not a diagram snapshot"));
    }
    let version = u32::from_le_bytes(read_bytes::<4, _>(&mut r)?);
    if version != VERSION {
        return Err(invalid(format!("unsupported snapshot version {version}")));
    }
    let n = u32::from_le_bytes(read_bytes::<4, _>(&mut r)?) as usize;
    let cutoff = read_f64(&mut r)?;
    let len = u64::from_le_bytes(read_bytes::<8, _>(&mut r)?) as usize;
    let renorm = read_f64(&mut r)?;
    let base = make_mode_set(cutoff)?;
    let sets: Vec<_> = (1..=n).map(|k| base.power_set(k)).collect();
    let mut trajectories = vec![Trajectory::new(); n];
    for _ in 0..len {
        let t = read_f64(&mut r)?;
        for (k, ms) in sets.iter().enumerate() {
            let coeffs = (0..ms.len())
                .map(|_| Ok(Complex64::new(read_f64(&mut r)?, read_f64(&mut r)?)))
                .collect::<Result<Vec<_>>>()?;
            trajectories[k].push(t, SpectralField::from_coeffs(ms, coeffs)?);
        }
    }
    Ok(DiagramSet { n, trajectories, renorm, origin: DiagramOrigin::Stationary })
}

/// Long-format CSV with columns `time, k, m0, m1, re, im`.
pub fn write_diagram_csv<W: Write>(d: &DiagramSet, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "k", "m0", "m1", "re", "im"])?;
    for i in 0..d.len() {
        let t = d.times()[i].to_string();
        for (k, f) in d.frame(i).into_iter().enumerate() {
            for (m, c) in f.mode_set().modes().iter().zip(f.coeffs()) {
                out.write_record([
                    t.clone(),
                    (k + 1).to_string(),
                    m[0].to_string(),
                    m[1].to_string(),
                    c.re.to_string(),
                    c.im.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{ou_path, sample_stationary_ou, wick_trajectory, NoiseKey};

    #[test]
    fn snapshot_roundtrip() {
        let ms = make_mode_set(3.0).unwrap();
        let key = NoiseKey::new(3, 1);
        let p = ou_path(&sample_stationary_ou(&ms, key).field, 0.0, 0.1, 3, key, 0).unwrap();
        let d = wick_trajectory(&p, 3, DiagramOrigin::Stationary).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&d, &mut buf).unwrap();
        let back = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back.len(), d.len());
        assert_eq!(back.renorm, d.renorm);
        for k in 0..3 {
            assert_eq!(back.trajectories[k].max_abs_diff(&d.trajectories[k]).unwrap(), 0.0);
        }
        assert!(read_snapshot(&b"nope"[..]).is_err());
        let mut csv = Vec::new();
        write_diagram_csv(&d, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("time,k,m0,m1,re,im"));
    }
}
