//! Field snapshot files and CSV profile exports.
//!
//! Snapshot format (self-describing, documented in the README):
//! an ASCII header terminated by a blank line, then raw little-endian f64
//! samples, component after component, each in row-major (z, y, x) order:
//!
//! ```text
//! vorlab-field 1
//! n=<points per axis>
//! half_width=<box half width, 17 significant digits>
//! components=3
//! layout=z,y,x
//!
//! <binary payload>
//! ```

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::field::VectorFieldR;
use crate::grid::Grid3;

const MAGIC: &str = "vorlab-field 1";

pub fn write_field(path: &Path, f: &VectorFieldR) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "n={}", f.grid.n())?;
    writeln!(w, "half_width={:.16e}", f.grid.half_width())?;
    writeln!(w, "components=3")?;
    writeln!(w, "layout=z,y,x")?;
    writeln!(w)?;
    for c in 0..3 {
        let mut bytes = Vec::with_capacity(f.comps[c].len() * 8);
        for v in &f.comps[c] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_field(path: &Path) -> Result<VectorFieldR> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic line {:?}",
            line.trim_end()
        )));
    }
    let mut n: Option<usize> = None;
    let mut half_width: Option<f64> = None;
    let mut components = 3usize;
    loop {
        line.clear();
        let read = r.read_line(&mut line)?;
        if read == 0 {
            return Err(CoreError::Format("unexpected end of header".into()));
        }
        let t = line.trim_end();
        if t.is_empty() {
            break;
        }
        let (key, value) = t
            .split_once('=')
            .ok_or_else(|| CoreError::Format(format!("bad header line {t:?}")))?;
        match key {
            "n" => n = Some(value.parse().map_err(|_| CoreError::Format("bad n".into()))?),
            "half_width" => {
                half_width = Some(
                    value
                        .parse()
                        .map_err(|_| CoreError::Format("bad half_width".into()))?,
                )
            }
            "components" => {
                components = value
                    .parse()
                    .map_err(|_| CoreError::Format("bad components".into()))?
            }
            "layout" => {
                if value != "z,y,x" {
                    return Err(CoreError::Format(format!("unsupported layout {value}")));
                }
            }
            other => return Err(CoreError::Format(format!("unknown header key {other}"))),
        }
    }
    let n = n.ok_or_else(|| CoreError::Format("missing n".into()))?;
    let half_width = half_width.ok_or_else(|| CoreError::Format("missing half_width".into()))?;
    if components != 3 {
        return Err(CoreError::Format(format!(
            "expected 3 components, got {components}"
        )));
    }
    let grid = Grid3::new(n, half_width)?;
    let mut out = VectorFieldR::zeros(grid);
    let mut buf = vec![0u8; grid.len() * 8];
    for c in 0..3 {
        r.read_exact(&mut buf)
            .map_err(|_| CoreError::Format("truncated payload".into()))?;
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            out.comps[c][i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if !out.is_finite() {
        return Err(CoreError::Format("payload contains NaN/Inf".into()));
    }
    Ok(out)
}

/// CSV of the field magnitude along a coordinate axis through the center.
pub fn axis_slice_csv(f: &VectorFieldR, axis: usize) -> String {
    let grid = f.grid;
    let n = grid.n();
    let mid = n / 2;
    let mut out = String::from("coord,w1,w2,w3\n");
    for j in 0..n {
        let idx = match axis {
            0 => grid.idx(mid, mid, j),
            1 => grid.idx(mid, j, mid),
            _ => grid.idx(j, mid, mid),
        };
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e}\n",
            grid.coord(j),
            f.comps[0][idx],
            f.comps[1][idx],
            f.comps[2][idx]
        ));
    }
    out
}

/// CSV of the shell-averaged magnitude profile.
pub fn radial_profile_csv(f: &VectorFieldR, bins: usize) -> String {
    let grid = f.grid;
    let n = grid.n();
    let rmax = grid.half_width();
    let mut sums = vec![0.0f64; bins];
    let mut counts = vec![0usize; bins];
    for iz in 0..n {
        let z = grid.coord(iz);
        for iy in 0..n {
            let y = grid.coord(iy);
            for ix in 0..n {
                let x = grid.coord(ix);
                let r = (x * x + y * y + z * z).sqrt();
                let bin = ((r / rmax) * bins as f64) as usize;
                if bin < bins {
                    sums[bin] += f.magnitude_at(grid.idx(iz, iy, ix));
                    counts[bin] += 1;
                }
            }
        }
    }
    let mut out = String::from("r,mean_magnitude\n");
    for b in 0..bins {
        if counts[b] > 0 {
            out.push_str(&format!(
                "{:.16e},{:.16e}\n",
                (b as f64 + 0.5) / bins as f64 * rmax,
                sums[b] / counts[b] as f64
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_round_trip() {
        let grid = Grid3::new(16, 6.0).unwrap();
        let f = crate::rand_fields::random_solenoidal(grid, 77, 2.0);
        let dir = std::env::temp_dir().join("vorlab-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.vlf");
        write_field(&path, &f).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.grid, grid);
        for c in 0..3 {
            assert_eq!(back.comps[c], f.comps[c], "component {c} differs");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = std::env::temp_dir().join("vorlab-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.vlf");
        std::fs::write(&path, b"not a field\n").unwrap();
        assert!(read_field(&path).is_err());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn csv_exports_have_headers() {
        let grid = Grid3::new(8, 4.0).unwrap();
        let f = VectorFieldR::zeros(grid);
        assert!(axis_slice_csv(&f, 0).starts_with("coord,"));
        assert!(radial_profile_csv(&f, 4).starts_with("r,"));
    }
}
