//! Raw volume with a plain-text sidecar header.
//!
//! `<name>` holds the little-endian float64 payload, `<name>.txt` holds
//! lines of the form `dims nx ny nz`, `spacing sx sy sz`, `origin ox oy oz`
//! and `kind <kind>`.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Volume3D, VolumeKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

pub fn write_raw<T: Real>(volume: &Volume3D<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [nx, ny, nz] = volume.dims();
    let [sx, sy, sz] = volume.spacing().map(|v| v.as_f64());
    let [ox, oy, oz] = volume.origin().map(|v| v.as_f64());
    let header = format!(
        "dims {nx} {ny} {nz}\nspacing {sx:?} {sy:?} {sz:?}\norigin {ox:?} {oy:?} {oz:?}\nkind {}\n",
        volume.kind().as_str()
    );
    let side = sidecar(path);
    fs::write(&side, header).map_err(|e| Error::io(&side, e))?;
    let mut payload = Vec::with_capacity(8 * volume.len());
    for v in volume.data() {
        payload.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}

pub fn read_raw<T: Real>(path: impl AsRef<Path>) -> Result<Volume3D<T>> {
    let path = path.as_ref();
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = [0.0f64; 3];
    let mut kind = VolumeKind::Intensity;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        let bad = || Error::Format(format!("{}:{}: malformed `{key}` line", side.display(), lineno + 1));
        let floats = || -> Result<[f64; 3]> {
            let v: Vec<f64> = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            v.try_into().map_err(|_| bad())
        };
        match key {
            "dims" => {
                let v: Vec<usize> = rest
                    .iter()
                    .map(|s| s.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                dims = Some(<[usize; 3]>::try_from(v).map_err(|_| bad())?);
            }
            "spacing" => spacing = Some(floats()?),
            "origin" => origin = floats()?,
            "kind" => kind = rest.first().and_then(|k| VolumeKind::parse(k)).ok_or_else(bad)?,
            other => return Err(Error::Format(format!("{}: unknown key `{other}`", side.display()))),
        }
    }
    let dims = dims.ok_or_else(|| Error::Format("sidecar lacks `dims`".into()))?;
    let spacing = spacing.ok_or_else(|| Error::Format("sidecar lacks `spacing`".into()))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = dims[0] * dims[1] * dims[2];
    if bytes.len() != 8 * n {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("expected {} payload bytes, found {}", 8 * n, bytes.len()),
            ),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Volume3D::new(dims, spacing.map(T::lit), origin.map(T::lit), data, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        let v = Volume3D::new(
            [2, 3, 1],
            [0.5, 0.7, 1.25],
            [1.0, -2.0, 3.5],
            vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
            VolumeKind::BinaryMask,
        )
        .unwrap();
        write_raw(&v, &path).unwrap();
        let back: Volume3D = read_raw(&path).unwrap();
        assert_eq!(back, v);
    }
}
