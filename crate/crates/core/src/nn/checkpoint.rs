//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"TSTABCKP"
//! version   u32       1
//! cfg_len   u32       byte length of the config text
//! cfg       cfg_len   UTF-8 `key = value` network config
//! n_params  u64
//! params    n_params × f64 little-endian, in layer order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSTABCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        msg: msg.into(),
    }
}

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let cfg = net.config().to_kv().to_text();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    w.write_all(&(net.num_params() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * net.num_params());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let mut cfg = vec![0u8; u32::from_le_bytes(u32buf) as usize];
    r.read_exact(&mut cfg)?;
    let cfg = String::from_utf8(cfg).map_err(|_| format_err("config is not UTF-8"))?;
    let cfg = NetworkConfig::from_kv(&KeyValues::parse(&cfg)?)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    let mut raw = vec![0u8; 8 * n];
    r.read_exact(&mut raw)?;
    let params = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Network::from_params(&cfg, params)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    read_checkpoint(fs::read(path)?.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = NetworkConfig::colorization(&[3, 5]);
        let net = Network::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.config(), net.config());
        assert!(back
            .params()
            .iter()
            .zip(net.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let net = Network::zeroed(&NetworkConfig::hdr(&[2])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice()),
            Err(Error::Format { .. })
        ));
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
