//! Field serialization.
//!
//! CSV: header `x,value`, one row per cell.
//! Binary: `b"MMFG"`, version `u32`, cell count `u32`, then `n` values as
//! little-endian `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{PeriodicGrid, ScalarField};

pub const MAGIC: &[u8; 4] = b"MMFG";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_csv<W: Write>(mut w: W, grid: PeriodicGrid, values: &[f64]) -> Result<()> {
    writeln!(w, "x,value")?;
    for (x, v) in grid.centers().zip(values) {
        writeln!(w, "{x:.17e},{v:.17e}")?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(mut r: R) -> Result<ScalarField> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("x,value") => {}
        other => return Err(Error::Io(format!("bad CSV header {other:?}"))),
    }
    let mut values = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let v = line
            .split(',')
            .nth(1)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::Io(format!("bad CSV row `{line}`")))?;
        values.push(v);
    }
    ScalarField::new(PeriodicGrid::new(values.len())?, values)
}

pub fn write_binary<W: Write>(mut w: W, values: &[f64]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let n = u32::try_from(values.len())
        .map_err(|_| Error::Io("field too large for binary dump".into()))?;
    w.write_all(&n.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if &word != MAGIC {
        return Err(Error::Io("missing MMFG magic".into()));
    }
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Io(format!("unsupported dump version {version}")));
    }
    r.read_exact(&mut word)?;
    let n = u32::from_le_bytes(word) as usize;
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_layout_is_fixed() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &[1.0, -2.5]).unwrap();
        assert_eq!(&buf[..4], b"MMFG");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 12 + 16);
    }

    proptest! {
        #[test]
        fn dumps_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 4..40)) {
            let grid = PeriodicGrid::new(values.len()).unwrap();
            let mut bin = Vec::new();
            write_binary(&mut bin, &values).unwrap();
            prop_assert_eq!(read_binary(&bin[..]).unwrap(), values.clone());
            let mut csv = Vec::new();
            write_csv(&mut csv, grid, &values).unwrap();
            let back = read_csv(&csv[..]).unwrap();
            prop_assert_eq!(back.values(), &values[..]);
        }
    }
}
