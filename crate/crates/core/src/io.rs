//! Field files: 8-byte little-endian N header, then N² little-endian f64
//! in row-major order, plus a `<file>.json` sidecar.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KwError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    #[serde(rename = "N")]
    pub n: usize,
    pub name: String,
    pub layout: String,
    pub dtype: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_field(path: &Path, n: usize, values: &[f64], name: &str) -> Result<()> {
    if values.len() != n * n {
        return Err(KwError::Format(format!("expected {} values, got {}", n * n, values.len())));
    }
    let mut buf = Vec::with_capacity(8 + 8 * values.len());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    let side = FieldSidecar {
        n,
        name: name.to_string(),
        layout: "row-major, index iy*N+ix, node (ix/N, iy/N)".into(),
        dtype: "float64-le".into(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(KwError::Format(format!("{}: missing header", path.display())));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if n == 0 || body.len() != 8 * n * n {
        return Err(KwError::Format(format!(
            "{}: header N = {n} does not match {} payload bytes",
            path.display(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((n, values))
}

/// Serde adapter for reals that may be NaN or infinite: written as null,
/// read back from null as NaN.
pub mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        let vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 1.0).collect();
        write_field(&p, 4, &vals, "u").unwrap();
        let (n, back) = read_field(&p).unwrap();
        assert_eq!(n, 4);
        assert_eq!(back, vals);
        let side: FieldSidecar =
            serde_json::from_str(&fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side.n, 4);
        assert_eq!(fs::metadata(&p).unwrap().len(), 8 + 16 * 8);
    }

    #[test]
    fn truncated_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        let mut b = 4u64.to_le_bytes().to_vec();
        b.extend_from_slice(&[0u8; 24]);
        fs::write(&p, b).unwrap();
        assert!(read_field(&p).is_err());
    }
}
