//! Binary checkpoint format.
//!
//! ```text
//! "INGRAM01"
//! u32 header_count, then header_count × (u32 len, key bytes, u32 len, value bytes)
//! u32 tensor_count, then tensor_count × (u32 rows, u32 cols, rows·cols × f64 LE)
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Integers are little-endian. Tensors follow [`ModelConfig::layout`] order.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParameters};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"INGRAM01";

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x}); file corrupt or truncated")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("expected {expected} tensors, found {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Trained parameters plus the seed that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub seed: u64,
}

fn header(ck: &Checkpoint) -> Vec<(&'static str, String)> {
    let c = &ck.params.config;
    vec![
        ("d", c.rel_dim.to_string()),
        ("d_prime", c.rel_hidden.to_string()),
        ("d_hat", c.ent_dim.to_string()),
        ("d_hat_prime", c.ent_hidden.to_string()),
        ("L", c.rel_layers.to_string()),
        ("L_hat", c.ent_layers.to_string()),
        ("K", c.rel_heads.to_string()),
        ("K_hat", c.ent_heads.to_string()),
        ("B", c.bins.to_string()),
        // bit pattern keeps the margin exact
        ("gamma", format!("{:#018x}", c.margin.to_bits())),
        ("seed", ck.seed.to_string()),
        ("aggregator", c.aggregator.to_string()),
        ("self_loop", c.self_loop.to_string()),
        ("relation_update", c.relation_update.to_string()),
    ]
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let kv = header(ck);
    put_u32(&mut out, kv.len());
    for (k, v) in &kv {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    let tensors = ck.params.tensors();
    put_u32(&mut out, tensors.len());
    for t in tensors {
        put_u32(&mut out, t.rows());
        put_u32(&mut out, t.cols());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Header("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> std::result::Result<String, CheckpointError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Header("non-UTF-8 text".into()))
    }
}

fn parse_config(kv: &BTreeMap<String, String>) -> std::result::Result<(ModelConfig, u64), CheckpointError> {
    fn get<'a>(kv: &'a BTreeMap<String, String>, k: &str) -> std::result::Result<&'a str, CheckpointError> {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| CheckpointError::Header(format!("missing key `{k}`")))
    }
    fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> std::result::Result<T, CheckpointError> {
        get(kv, k)?
            .parse()
            .map_err(|_| CheckpointError::Header(format!("bad value for `{k}`")))
    }
    let gamma = get(kv, "gamma")?;
    let bits = u64::from_str_radix(gamma.trim_start_matches("0x"), 16)
        .map_err(|_| CheckpointError::Header("bad value for `gamma`".into()))?;
    let bad = |k: &str| CheckpointError::Header(format!("bad value for `{k}`"));
    let config = ModelConfig {
        rel_dim: num(kv, "d")?,
        rel_hidden: num(kv, "d_prime")?,
        ent_dim: num(kv, "d_hat")?,
        ent_hidden: num(kv, "d_hat_prime")?,
        rel_layers: num(kv, "L")?,
        ent_layers: num(kv, "L_hat")?,
        rel_heads: num(kv, "K")?,
        ent_heads: num(kv, "K_hat")?,
        bins: num(kv, "B")?,
        margin: f64::from_bits(bits),
        aggregator: get(kv, "aggregator")?.parse().map_err(|_| bad("aggregator"))?,
        self_loop: get(kv, "self_loop")?.parse().map_err(|_| bad("self_loop"))?,
        relation_update: num(kv, "relation_update")?,
    };
    config.validate().map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok((config, num(kv, "seed")?))
}

pub fn from_bytes(buf: &[u8]) -> std::result::Result<Checkpoint, CheckpointError> {
    if buf.len() >= MAGIC.len() && &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if buf.len() < MAGIC.len() + 4 {
        return Err(CheckpointError::ChecksumMismatch { stored: 0, computed: 0 });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let count = r.u32()?;
    let mut kv = BTreeMap::new();
    for _ in 0..count {
        let k = r.string()?;
        let v = r.string()?;
        kv.insert(k, v);
    }
    let (config, seed) = parse_config(&kv)?;
    let layout = config.layout();
    let found = r.u32()?;
    if found != layout.len() {
        return Err(CheckpointError::TensorCount {
            expected: layout.len(),
            found,
        });
    }
    let mut tensors = Vec::with_capacity(found);
    for (name, expected) in layout {
        let shape = (r.u32()?, r.u32()?);
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: shape,
            });
        }
        let bytes = r.take(shape.0 * shape.1 * 8)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(shape.0, shape.1, data));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Header("trailing bytes after tensors".into()));
    }
    let params = ModelParameters::from_tensors(config, tensors).map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(Checkpoint { params, seed })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregator, SelfLoop};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(self_loop: SelfLoop) -> Checkpoint {
        let config = ModelConfig {
            rel_dim: 3,
            ent_dim: 2,
            rel_hidden: 4,
            ent_hidden: 6,
            rel_layers: 2,
            ent_layers: 1,
            rel_heads: 2,
            ent_heads: 3,
            bins: 10,
            margin: 1.7,
            aggregator: Aggregator::Sum,
            self_loop,
            relation_update: false,
        };
        let params = ModelParameters::init(config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        Checkpoint { params, seed: 99 }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for mode in [SelfLoop::MeanRelation, SelfLoop::Learned] {
            let ck = sample(mode);
            let bytes = to_bytes(&ck);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(to_bytes(&back), bytes);
            assert_eq!(back.params.config.bins, 10);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&sample(SelfLoop::MeanRelation));
        for cut in [bytes.len() - 1, bytes.len() / 2, 10, 3] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CheckpointError::ChecksumMismatch { .. }), "{cut}: {err:?}");
        }
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(from_bytes(&flipped), Err(CheckpointError::ChecksumMismatch { .. })));
        let mut magic = bytes;
        magic[0] = b'X';
        assert_eq!(from_bytes(&magic), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn shape_inconsistency_is_reported() {
        let mut ck = sample(SelfLoop::MeanRelation);
        ck.params.rel_proj = Tensor::zeros(5, 3);
        let bytes = to_bytes(&ck);
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::ShapeMismatch { ref name, .. }) if name == "rel_proj"
        ));
    }
}
