//! Versioned binary checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u32` length plus
//! UTF-8 `key=value` config echo, `u64` parameter count plus `f64` values,
//! `u64` buffer count plus `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{UNet, UNetConfig};

pub const MAGIC: &[u8; 8] = b"AMSKUNET";
pub const VERSION: u32 = 1;

fn config_echo(c: &UNetConfig) -> String {
    format!(
        "levels={}\nbase_channels={}\nuse_batchnorm={}\nseed={}\n",
        c.levels, c.base_channels, c.use_batchnorm, c.seed
    )
}

fn parse_echo(text: &str) -> Result<UNetConfig> {
    let mut cfg = UNetConfig::default();
    let bad = |m: String| Error::Checkpoint(m);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed config line {line:?}")))?;
        let num = || v.parse::<u64>().map_err(|_| bad(format!("bad value for {k}: {v:?}")));
        match k {
            "levels" => cfg.levels = num()? as usize,
            "base_channels" => cfg.base_channels = num()? as usize,
            "seed" => cfg.seed = num()?,
            "use_batchnorm" => cfg.use_batchnorm = v.parse().map_err(|_| bad(format!("bad value for {k}: {v:?}")))?,
            _ => return Err(bad(format!("unknown config key {k:?}"))),
        }
    }
    Ok(cfg)
}

pub fn write_checkpoint<T: Real, W: Write>(net: &UNet<T>, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    let echo = config_echo(net.config());
    let mut buf = Vec::with_capacity(32 + echo.len() + 8 * (net.params.len() + net.buffers.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    buf.extend_from_slice(echo.as_bytes());
    for block in [&net.params, &net.buffers] {
        buf.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block.iter() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<UNet<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { b: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
    let echo = std::str::from_utf8(cur.take(len)?).map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
    let config = parse_echo(echo)?;
    let mut blocks = Vec::new();
    for _ in 0..2 {
        let n = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = cur.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("count overflow".into()))?,
        )?;
        blocks.push(
            raw.chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect::<Vec<T>>(),
        );
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let buffers = blocks.pop().expect("two blocks");
    let params = blocks.pop().expect("two blocks");
    UNet::from_parts(config, params, buffers).map_err(|e| Error::Checkpoint(e.to_string()))
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn save_checkpoint<T: Real>(net: &UNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(net, BufWriter::new(f))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<UNet<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let net = UNet::<f64>::new(UNetConfig {
            seed: 42,
            ..UNetConfig::default()
        })
        .unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back: UNet<f64> = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let net = UNet::<f64>::new(UNetConfig::default()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            read_checkpoint::<f64, _>(bad_magic.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            read_checkpoint::<f64, _>(truncated),
            Err(Error::Checkpoint(_))
        ));
        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        assert!(matches!(
            read_checkpoint::<f64, _>(bad_version.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn f32_net_stores_as_f64() {
        let net = UNet::<f32>::new(UNetConfig::default()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back: UNet<f32> = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back, net);
    }
}
