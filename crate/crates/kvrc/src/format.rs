//! Versioned binary cache file: magic "KVRC", little-endian throughout.
//!
//! Layout (version 1):
//!
//! ```text
//! "KVRC" | version u32 | model_fingerprint u64 | entry_count u32 |
//! per entry:
//!   prompt_byte_len u32 | prompt UTF-8 bytes |
//!   token_count u32     | token ids u32[] |
//!   L u32 | H u32 | d_k u32 | seq_len u32 |
//!   K f32[L*H*seq_len*d_k]  layer-major, then head-major, then position-major |
//!   V f32[...]              same order |
//!   d_model u32 | embedding f32[d_model]
//! ```
//!
//! Every count is validated against the remaining file length before any
//! tensor is read, so corrupt and truncated files fail with a clean error
//! instead of a huge allocation or a panic.

use std::fs;
use std::path::Path;

use kvrc_core::{CacheEntry, CacheStore, KvCache, TokenId};

use crate::error::KvrcError;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 4] = b"KVRC";
pub const FORMAT_VERSION: u32 = 1;

/// Smallest possible serialized entry: seven u32 counts, everything empty.
const MIN_ENTRY_BYTES: u64 = 28;

/// Serializes the store and writes it atomically (temp file in the same
/// directory, fsync, rename).
pub fn save_store(store: &CacheStore, path: &Path) -> Result<(), KvrcError> {
    write_atomic(path, &encode_store(store))
}

/// Reads a store and checks its fingerprint against the running model's.
/// A mismatch is a stale cache: states from different weights must never
/// be injected.
pub fn load_store(path: &Path, expected_fingerprint: u64) -> Result<CacheStore, KvrcError> {
    let bytes = fs::read(path).map_err(KvrcError::io(path))?;
    decode_store(&bytes, expected_fingerprint)
}

pub fn encode_store(store: &CacheStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&store.model_fingerprint().to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for entry in store.entries() {
        encode_entry(entry, &mut out);
    }
    out
}

fn encode_entry(entry: &CacheEntry, out: &mut Vec<u8>) {
    let prompt = entry.prompt_text.as_bytes();
    out.extend_from_slice(&(prompt.len() as u32).to_le_bytes());
    out.extend_from_slice(prompt);
    out.extend_from_slice(&(entry.input_ids.len() as u32).to_le_bytes());
    for &id in &entry.input_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    let kv = &entry.kv;
    let (layers, heads, d_head, seq_len) = (kv.n_layers(), kv.n_heads(), kv.d_head(), kv.seq_len());
    out.extend_from_slice(&(layers as u32).to_le_bytes());
    out.extend_from_slice(&(heads as u32).to_le_bytes());
    out.extend_from_slice(&(d_head as u32).to_le_bytes());
    out.extend_from_slice(&(seq_len as u32).to_le_bytes());
    let row = heads * d_head;
    // In memory a layer is position-major ([seq, H*d_k]); on disk it is
    // head-major, so each head's positions are contiguous.
    for tensor in [KvCache::layer_k, KvCache::layer_v] {
        for layer in 0..layers {
            let data = tensor(kv, layer);
            for head in 0..heads {
                for pos in 0..seq_len {
                    let start = pos * row + head * d_head;
                    for &v in &data[start..start + d_head] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    out.extend_from_slice(&(entry.embedding.len() as u32).to_le_bytes());
    for &v in &entry.embedding {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn decode_store(bytes: &[u8], expected_fingerprint: u64) -> Result<CacheStore, KvrcError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(corrupt("bad magic bytes, not a cache file"));
    }
    let version = r.take_u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "file has format version {version}, this reader supports version {FORMAT_VERSION}"
        )));
    }
    let fingerprint = r.take_u64("model fingerprint")?;
    if fingerprint != expected_fingerprint {
        return Err(KvrcError::StaleCache {
            expected: expected_fingerprint,
            found: fingerprint,
        });
    }
    let entry_count = r.take_u32("entry count")? as u64;
    if entry_count == 0 {
        return Err(corrupt("cache file holds zero entries"));
    }
    if entry_count * MIN_ENTRY_BYTES > r.remaining() as u64 {
        return Err(corrupt(format!(
            "entry count {entry_count} exceeds what the file could hold"
        )));
    }

    let mut entries = Vec::with_capacity(entry_count as usize);
    for index in 0..entry_count {
        entries.push(decode_entry(&mut r, index)?);
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!(
            "{} trailing bytes after the last entry",
            r.remaining()
        )));
    }
    CacheStore::from_entries(fingerprint, entries)
        .map_err(|e| corrupt(format!("entry validation failed: {e}")))
}

fn decode_entry(r: &mut Reader<'_>, index: u64) -> Result<CacheEntry, KvrcError> {
    let ctx = |what: &str| format!("entry {index}: {what}");

    let prompt_len = r.take_u32(&ctx("prompt length"))? as usize;
    let prompt_bytes = r.take(prompt_len, &ctx("prompt text"))?;
    let prompt_text = std::str::from_utf8(prompt_bytes)
        .map_err(|_| corrupt(ctx("prompt is not valid UTF-8")))?
        .to_owned();

    let token_count = r.take_u32(&ctx("token count"))? as usize;
    r.check_fits(token_count as u64 * 4, &ctx("token ids"))?;
    let mut input_ids = Vec::with_capacity(token_count);
    for _ in 0..token_count {
        input_ids.push(r.take_u32(&ctx("token id"))? as TokenId);
    }

    let layers = r.take_u32(&ctx("layer count"))? as usize;
    let heads = r.take_u32(&ctx("head count"))? as usize;
    let d_head = r.take_u32(&ctx("head width"))? as usize;
    let seq_len = r.take_u32(&ctx("cached length"))? as usize;
    let per_tensor = (layers as u64)
        .checked_mul(heads as u64)
        .and_then(|v| v.checked_mul(d_head as u64))
        .and_then(|v| v.checked_mul(seq_len as u64))
        .ok_or_else(|| corrupt(ctx("tensor dimensions overflow")))?;
    r.check_fits(
        per_tensor
            .checked_mul(8)
            .ok_or_else(|| corrupt(ctx("tensor size overflow")))?,
        &ctx("kv tensors"),
    )?;

    let row = heads * d_head;
    let read_tensor = |r: &mut Reader<'_>| -> Result<Vec<Vec<f32>>, KvrcError> {
        let mut per_layer = Vec::with_capacity(layers);
        for _ in 0..layers {
            // Disk order is head-major; scatter back into position-major rows.
            let mut data = vec![0.0f32; seq_len * row];
            for head in 0..heads {
                for pos in 0..seq_len {
                    let floats = r.take_f32s(d_head, &ctx("kv tensor data"))?;
                    let start = pos * row + head * d_head;
                    data[start..start + d_head].copy_from_slice(&floats);
                }
            }
            per_layer.push(data);
        }
        Ok(per_layer)
    };
    let k_layers = read_tensor(&mut *r)?;
    let v_layers = read_tensor(&mut *r)?;
    let kv = KvCache::from_parts(
        heads,
        d_head,
        seq_len,
        k_layers.into_iter().zip(v_layers).collect(),
    )
    .map_err(|e| corrupt(ctx(&format!("cache shape invalid: {e}"))))?;

    let d_model = r.take_u32(&ctx("embedding width"))? as usize;
    let embedding = r.take_f32s(d_model, &ctx("embedding"))?;

    Ok(CacheEntry {
        prompt_text,
        input_ids,
        kv,
        embedding,
    })
}

fn corrupt(reason: impl Into<String>) -> KvrcError {
    KvrcError::CorruptCache {
        reason: reason.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn check_fits(&self, needed: u64, what: &str) -> Result<(), KvrcError> {
        if needed > self.remaining() as u64 {
            return Err(corrupt(format!(
                "file too short for {what}: need {needed} bytes, {} remain",
                self.remaining()
            )));
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], KvrcError> {
        self.check_fits(n as u64, what)?;
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u32(&mut self, what: &str) -> Result<u32, KvrcError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take_u64(&mut self, what: &str) -> Result<u64, KvrcError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("length checked")))
    }

    fn take_f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, KvrcError> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kvrc_core::model::{Model, ModelConfig};
    use kvrc_core::store::build_cache;

    fn tiny_store() -> (CacheStore, u64) {
        let config = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_head: 8,
            vocab_size: 256,
            max_context: 64,
            seed: 5,
        };
        let fingerprint = config.fingerprint();
        let model = Model::new(config).unwrap();
        let store = build_cache(&model, &["alpha one", "beta two", "gamma"]).unwrap();
        (store, fingerprint)
    }

    fn stores_bit_identical(a: &CacheStore, b: &CacheStore) -> bool {
        if a.len() != b.len() || a.model_fingerprint() != b.model_fingerprint() {
            return false;
        }
        a.entries().iter().zip(b.entries()).all(|(x, y)| {
            x.prompt_text == y.prompt_text
                && x.input_ids == y.input_ids
                && x.embedding
                    .iter()
                    .zip(&y.embedding)
                    .all(|(p, q)| p.to_bits() == q.to_bits())
                && x.kv.seq_len() == y.kv.seq_len()
                && (0..x.kv.n_layers()).all(|l| {
                    x.kv.layer_k(l)
                        .iter()
                        .zip(y.kv.layer_k(l))
                        .all(|(p, q)| p.to_bits() == q.to_bits())
                        && x.kv
                            .layer_v(l)
                            .iter()
                            .zip(y.kv.layer_v(l))
                            .all(|(p, q)| p.to_bits() == q.to_bits())
                })
        })
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (store, fp) = tiny_store();
        let bytes = encode_store(&store);
        let loaded = decode_store(&bytes, fp).unwrap();
        assert!(stores_bit_identical(&store, &loaded));
    }

    #[test]
    fn file_round_trip_with_fsync() {
        let (store, fp) = tiny_store();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.kvrc");
        save_store(&store, &path).unwrap();
        let loaded = load_store(&path, fp).unwrap();
        assert!(stores_bit_identical(&store, &loaded));
        // Re-saving produces byte-identical files: the build is deterministic.
        let bytes_a = std::fs::read(&path).unwrap();
        save_store(&store, &path).unwrap();
        let bytes_b = std::fs::read(&path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn rebuilt_store_serializes_byte_identical() {
        let config = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_head: 8,
            vocab_size: 256,
            max_context: 64,
            seed: 5,
        };
        let prompts = ["alpha one", "beta two"];
        let model_a = Model::new(config.clone()).unwrap();
        let model_b = Model::new(config).unwrap();
        let bytes_a = encode_store(&build_cache(&model_a, &prompts).unwrap());
        let bytes_b = encode_store(&build_cache(&model_b, &prompts).unwrap());
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn file_starts_with_magic_and_version() {
        let (store, _) = tiny_store();
        let bytes = encode_store(&store);
        assert_eq!(&bytes[..4], b"KVRC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn truncation_at_every_boundary_is_corrupt_not_panic() {
        let (store, fp) = tiny_store();
        let bytes = encode_store(&store);
        // Walk a spread of truncation points, including tensor interiors.
        for cut in (0..bytes.len()).step_by(7).chain([bytes.len() - 1]) {
            match decode_store(&bytes[..cut], fp) {
                Err(KvrcError::CorruptCache { .. }) => {}
                Err(other) => panic!("cut {cut}: unexpected error {other}"),
                Ok(_) => panic!("cut {cut}: truncated file decoded successfully"),
            }
        }
    }

    #[test]
    fn fingerprint_mismatch_is_stale() {
        let (store, fp) = tiny_store();
        let bytes = encode_store(&store);
        match decode_store(&bytes, fp ^ 0xDEAD) {
            Err(KvrcError::StaleCache { expected, found }) => {
                assert_eq!(expected, fp ^ 0xDEAD);
                assert_eq!(found, fp);
            }
            other => panic!("expected stale cache, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_corrupt_naming_both_versions() {
        let (store, fp) = tiny_store();
        let mut bytes = encode_store(&store);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        match decode_store(&bytes, fp) {
            Err(KvrcError::CorruptCache { reason }) => {
                assert!(reason.contains('2') && reason.contains('1'), "{reason}");
            }
            other => panic!("expected corrupt cache, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_corrupt() {
        let (store, fp) = tiny_store();
        let mut bytes = encode_store(&store);
        bytes[0] = b'X';
        assert!(matches!(
            decode_store(&bytes, fp),
            Err(KvrcError::CorruptCache { .. })
        ));
    }

    #[test]
    fn absurd_entry_count_is_rejected_before_allocation() {
        let (store, fp) = tiny_store();
        let mut bytes = encode_store(&store);
        bytes[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        match decode_store(&bytes, fp) {
            Err(KvrcError::CorruptCache { reason }) => {
                assert!(reason.contains("entry count"), "{reason}");
            }
            other => panic!("expected corrupt cache, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let (store, fp) = tiny_store();
        let mut bytes = encode_store(&store);
        bytes.push(0);
        assert!(matches!(
            decode_store(&bytes, fp),
            Err(KvrcError::CorruptCache { .. })
        ));
    }

    #[test]
    fn stale_check_runs_before_entry_parsing() {
        // A file that is both stale and truncated reports staleness: the
        // fingerprint gate must run before any tensor read.
        let (store, fp) = tiny_store();
        let bytes = encode_store(&store);
        let cut = &bytes[..40];
        assert!(matches!(
            decode_store(cut, fp ^ 1),
            Err(KvrcError::StaleCache { .. })
        ));
    }
}
