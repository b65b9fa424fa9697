//! Snapshot export: CSV `t, x.., v.., weight` and the binary columnar dump.
//!
//! Binary layout, little-endian: magic `RTK1`, `u32` dimension `d`, `u64`
//! particle count `N`, `f64` time, then `2d + 1` columns of `N` `f64` each,
//! in the order `x_1..x_d, v_1..v_d, weight`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::pdmp::{EnsembleSnapshot, ParticleState};
use crate::vector::Vector;

pub const MAGIC: &[u8; 4] = b"RTK1";

fn dim_of(snap: &EnsembleSnapshot) -> Result<usize> {
    let d = snap.particles.first().map(|p| p.x.dim()).unwrap_or(0);
    if snap.particles.iter().any(|p| p.x.dim() != d || p.v.dim() != d) {
        return Err(Error::Input("particles of mixed dimension in one snapshot".into()));
    }
    Ok(d)
}

pub fn csv_header(d: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=d).map(|i| format!("x{i}")));
    cols.extend((1..=d).map(|i| format!("v{i}")));
    cols.push("weight".into());
    cols.join(",")
}

pub fn write_csv<W: Write>(snap: &EnsembleSnapshot, mut out: W) -> Result<()> {
    let d = dim_of(snap)?;
    writeln!(out, "{}", csv_header(d))?;
    for p in &snap.particles {
        write!(out, "{}", snap.time)?;
        for c in p.x.as_slice().iter().chain(p.v.as_slice()) {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",{}", p.weight)?;
    }
    Ok(())
}

pub fn write_binary<W: Write>(snap: &EnsembleSnapshot, mut out: W) -> Result<()> {
    let d = dim_of(snap)?;
    out.write_all(MAGIC)?;
    out.write_all(&(d as u32).to_le_bytes())?;
    out.write_all(&(snap.particles.len() as u64).to_le_bytes())?;
    out.write_all(&snap.time.to_le_bytes())?;
    let mut col = |f: &dyn Fn(&ParticleState) -> f64| -> Result<()> {
        let mut buf = Vec::with_capacity(8 * snap.particles.len());
        for p in &snap.particles {
            buf.extend_from_slice(&f(p).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    };
    for i in 0..d {
        col(&|p| p.x[i])?;
    }
    for i in 0..d {
        col(&|p| p.v[i])?;
    }
    col(&|p| p.weight)?;
    Ok(())
}

/// Reads a binary dump; `seed` is not stored in the format and comes back as 0.
pub fn read_binary<R: Read>(mut inp: R) -> Result<EnsembleSnapshot> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Input("not an RTK1 dump".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    inp.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    if d == 0 || d > crate::vector::MAX_DIM {
        return Err(Error::Input(format!("bad dimension {d} in dump")));
    }
    inp.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    inp.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    let mut cols = vec![vec![0.0; n]; 2 * d + 1];
    for c in cols.iter_mut() {
        for val in c.iter_mut() {
            inp.read_exact(&mut b8)?;
            *val = f64::from_le_bytes(b8);
        }
    }
    let particles = (0..n)
        .map(|j| {
            let mut x = Vector::zeros(d);
            let mut v = Vector::zeros(d);
            for i in 0..d {
                x[i] = cols[i][j];
                v[i] = cols[d + i][j];
            }
            ParticleState { x, v, t: time, weight: cols[2 * d][j] }
        })
        .collect();
    Ok(EnsembleSnapshot { time, particles, seed: 0 })
}
