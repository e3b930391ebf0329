//! Binary container for embeddings and classifier weights.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"EMB1"
//! version u32 (= 1)
//! dim     u32
//! count   u64
//! count x { id_len u16, id [u8; id_len] (UTF-8), values [f32; dim] }
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

/// Ordered `(id, vector)` records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    /// Builds a store, inferring the dimension from the first record.
    pub fn from_records(records: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let dim = records.first().map_or(0, |(_, v)| v.len());
        let store = Self { dim, records };
        store.check()?;
        Ok(store)
    }

    pub fn push(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "record {id} has dimension {}, store has {}",
                vector.len(),
                self.dim
            )));
        }
        self.records.push((id, vector));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check(&self) -> Result<()> {
        for (id, v) in &self.records {
            if v.len() != self.dim {
                return Err(Error::Format(format!(
                    "mixed dimensions: record {id} has {}, expected {}",
                    v.len(),
                    self.dim
                )));
            }
            if id.len() > u16::MAX as usize {
                return Err(Error::Format(format!("id of {} bytes is too long", id.len())));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::Format(format!("dimension {} too large", self.dim)))?;
        let mut out = Vec::with_capacity(
            HEADER_LEN + self.records.iter().map(|(id, _)| 2 + id.len() + 4 * self.dim).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (id, v) in &self.records {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected EMB1".into()));
        }
        let version = u32::from_le_bytes(cur.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let dim = u32::from_le_bytes(cur.array()?) as usize;
        let count = u64::from_le_bytes(cur.array()?);
        let record_min = 2 + 4 * dim as u64;
        if count.saturating_mul(record_min) > (bytes.len() - HEADER_LEN) as u64 {
            return Err(Error::Format(format!(
                "declared {count} records of dimension {dim} exceed file size"
            )));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id_len = u16::from_le_bytes(cur.array()?) as usize;
            let id = std::str::from_utf8(cur.take(id_len)?)
                .map_err(|_| Error::Format("record id is not UTF-8".into()))?
                .to_string();
            let raw = cur.take(4 * dim)?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            records.push((id, v));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {count} records (mixed dimensions?)",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { dim, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.records
            .iter()
            .find(|(i, _)| i == id)
            .map(|(_, v)| v.as_slice())
    }

    /// Id to vector lookup table.
    pub fn index(&self) -> std::collections::HashMap<&str, &[f32]> {
        self.records
            .iter()
            .map(|(id, v)| (id.as_str(), v.as_slice()))
            .collect()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::load_embeddings;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(n: usize, dim: usize) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let records = (0..n)
            .map(|i| {
                let v = (0..dim).map(|_| rng.random_range(-3.0f32..3.0)).collect();
                (format!("utt{i:03}"), v)
            })
            .collect();
        EmbeddingStore::from_records(records).unwrap()
    }

    #[test]
    fn hundred_records_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.emb");
        let store = seeded(100, 128);
        store.write(&p).unwrap();
        let loaded = load_embeddings(&p).unwrap();
        assert_eq!(loaded.len(), 100);
        for ((id, v), e) in store.records.iter().zip(&loaded) {
            assert_eq!(id, &e.utt_id);
            assert!(v.iter().zip(&e.vector).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn empty_store_with_header() {
        let bytes = EmbeddingStore::new(16).to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim, 16);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let err = EmbeddingStore::from_records(vec![
            ("a".into(), vec![1.0, 2.0]),
            ("b".into(), vec![1.0, 2.0, 3.0]),
        ]);
        assert!(matches!(err, Err(Error::Format(_))));

        // a second record whose payload is one float longer than declared
        let mut bytes = EmbeddingStore::from_records(vec![("a".into(), vec![1.0, 2.0])])
            .unwrap()
            .to_bytes()
            .unwrap();
        bytes[12..20].copy_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'b');
        for x in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        assert!(matches!(EmbeddingStore::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let good = seeded(2, 4).to_bytes().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(EmbeddingStore::from_bytes(&v2), Err(Error::Format(_))));
        assert!(matches!(
            EmbeddingStore::from_bytes(&good[..good.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(EmbeddingStore::from_bytes(&good[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn header_layout() {
        let bytes = seeded(3, 5).to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(bytes[20..22].try_into().unwrap()), 6);
        assert_eq!(&bytes[22..28], b"utt000");
    }

    proptest! {
        #[test]
        fn arbitrary_stores_round_trip(
            dim in 0usize..9,
            ids in proptest::collection::vec("[a-zé#_0-9]{0,12}", 0..20),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<_> = ids
                .into_iter()
                .map(|id| (id, (0..dim).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect()))
                .collect();
            let store = EmbeddingStore { dim, records };
            let back = EmbeddingStore::from_bytes(&store.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), store.to_bytes().unwrap());
        }
    }
}
