//! Embedding vectors and tables, plus their two on-disk formats.
//!
//! JSONL: one `{"id": "<string>", "vec": [<floats>]}` object per line.
//!
//! Binary (`.ptge`), little-endian:
//!
//! ```text
//! magic    b"PTGE"
//! version  u32 = 1
//! dim      u32
//! count    u64
//! count × { id_len u32, id bytes (UTF-8), dim × f32 }
//! ```
//!
//! Tables are validated on load: one dimension throughout, unique non-empty
//! ids, finite values. Zero vectors are allowed in a table and rejected only
//! when they take part in a cosine.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_hex;

pub const BINARY_MAGIC: &[u8; 4] = b"PTGE";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("non-finite value in `{id}` at component {index}")]
    NonFinite { id: String, index: usize },
    #[error("empty item id at {0}")]
    EmptyId(String),
    #[error("malformed record at {location}: {reason}")]
    Malformed { location: String, reason: String },
    #[error("zero-dimensional vector")]
    ZeroDimension,
    #[error("zero-norm vector cannot be used in a cosine")]
    ZeroNorm,
    #[error("no records: the table dimension cannot be inferred")]
    NoRecords,
    #[error("unknown magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported binary version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A dense float vector. Components are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, StoreError> {
        if values.is_empty() {
            return Err(StoreError::ZeroDimension);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                id: String::new(),
                index,
            });
        }
        Ok(Self { values })
    }

    /// Builds from 64-bit values, rounding each to the nearest f32.
    pub fn from_f64(values: &[f64]) -> Result<Self, StoreError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = StoreError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Cosine similarity with f64 accumulation, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimensionMismatch {
            id: String::new(),
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mut dot = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(StoreError::ZeroNorm);
    }
    Ok((dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Image,
    MaskedImage,
    Text,
}

/// A typed reference to an item stored elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRef {
    pub id: String,
    pub kind: ItemKind,
}

impl ItemRef {
    pub fn new(id: impl Into<String>, kind: ItemKind) -> Result<Self, StoreError> {
        let id = id.into();
        if id.is_empty() {
            return Err(StoreError::EmptyId("item reference".into()));
        }
        Ok(Self { id, kind })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Jsonl,
    Binary,
}

impl TableFormat {
    /// `.ptge`/`.bin` are binary, everything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ptge") | Some("bin") => TableFormat::Binary,
            _ => TableFormat::Jsonl,
        }
    }
}

/// Fixed-dimension vectors keyed by item id, iterated in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), StoreError> {
        let id = id.into();
        if id.is_empty() {
            return Err(StoreError::EmptyId(format!("entry #{}", self.entries.len() + 1)));
        }
        if vector.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                id,
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.entries.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = (S, EmbeddingVector)>,
        S: Into<String>,
    {
        let mut table = Self::new(dim)?;
        for (id, v) in entries {
            table.insert(id, v)?;
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    /// Like [`get`](Self::get) but with an error naming the missing id.
    pub fn require(&self, id: &str) -> Result<&EmbeddingVector, StoreError> {
        self.entries
            .get(id)
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// SHA-256 of the binary encoding; identifies table contents in provenance records.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        sha256_hex(&buf)
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        #[derive(Deserialize)]
        struct Record {
            id: String,
            vec: Vec<f64>,
        }

        let mut table: Option<Self> = None;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
                location: format!("line {lineno}"),
                reason: e.to_string(),
            })?;
            if record.id.is_empty() {
                return Err(StoreError::EmptyId(format!("line {lineno}")));
            }
            let values: Vec<f32> = record.vec.iter().map(|&v| v as f32).collect();
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite {
                    id: record.id,
                    index,
                });
            }
            let table = match &mut table {
                Some(t) => t,
                None => table.insert(Self::new(values.len())?),
            };
            if values.len() != table.dim {
                return Err(StoreError::DimensionMismatch {
                    id: record.id,
                    expected: table.dim,
                    found: values.len(),
                });
            }
            table.insert(record.id, EmbeddingVector { values })?;
        }
        table.ok_or(StoreError::NoRecords)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<(), StoreError> {
        #[derive(Serialize)]
        struct Record<'a> {
            id: &'a str,
            vec: &'a [f32],
        }

        for (id, v) in &self.entries {
            serde_json::to_writer(&mut writer, &Record { id, vec: &v.values })
                .map_err(io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut reader: R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        read_exact_at(&mut reader, &mut magic, 0)?;
        if &magic != BINARY_MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = read_u32(&mut reader, 4)?;
        if version != BINARY_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dim = read_u32(&mut reader, 8)? as usize;
        let count = read_u64(&mut reader, 12)?;
        let mut table = Self::new(dim)?;
        let mut offset: u64 = 20;
        let mut floats = vec![0u8; dim * 4];
        for _ in 0..count {
            let id_len = read_u32(&mut reader, offset)? as usize;
            offset += 4;
            let mut id_bytes = vec![0u8; id_len];
            read_exact_at(&mut reader, &mut id_bytes, offset)?;
            let id = String::from_utf8(id_bytes).map_err(|_| StoreError::Malformed {
                location: format!("offset {offset}"),
                reason: "id is not valid UTF-8".into(),
            })?;
            offset += id_len as u64;
            read_exact_at(&mut reader, &mut floats, offset)?;
            let values: Vec<f32> = floats
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite { id, index });
            }
            if id.is_empty() {
                return Err(StoreError::EmptyId(format!("offset {offset}")));
            }
            offset += floats.len() as u64;
            table.insert(id, EmbeddingVector { values })?;
        }
        Ok(table)
    }

    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<(), StoreError> {
        writer.write_all(BINARY_MAGIC)?;
        writer.write_all(&BINARY_VERSION.to_le_bytes())?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        writer.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (id, v) in &self.entries {
            writer.write_all(&(id.len() as u32).to_le_bytes())?;
            writer.write_all(id.as_bytes())?;
            for x in &v.values {
                writer.write_all(&x.to_le_bytes())?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

fn read_exact_at<R: Read>(reader: &mut R, buf: &mut [u8], offset: u64) -> Result<(), StoreError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StoreError::Malformed {
            location: format!("offset {offset}"),
            reason: "unexpected end of file".into(),
        },
        _ => StoreError::Io(e),
    })
}

fn read_u32<R: Read>(reader: &mut R, offset: u64) -> Result<u32, StoreError> {
    let mut b = [0u8; 4];
    read_exact_at(reader, &mut b, offset)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(reader: &mut R, offset: u64) -> Result<u64, StoreError> {
    let mut b = [0u8; 8];
    read_exact_at(reader, &mut b, offset)?;
    Ok(u64::from_le_bytes(b))
}

pub fn load_table(path: &Path, format: TableFormat) -> Result<EmbeddingTable, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        TableFormat::Jsonl => EmbeddingTable::read_jsonl(reader),
        TableFormat::Binary => EmbeddingTable::read_binary(reader),
    }
}

pub fn save_table(table: &EmbeddingTable, path: &Path, format: TableFormat) -> Result<(), StoreError> {
    let writer = BufWriter::new(File::create(path)?);
    match format {
        TableFormat::Jsonl => table.write_jsonl(writer),
        TableFormat::Binary => table.write_binary(writer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn jsonl_with_three_records() {
        let data = r#"{"id": "a", "vec": [1, 0, 0, 0]}
{"id": "b", "vec": [0, 1, 0, 0]}
{"id": "c", "vec": [0.5, 0.5, 0.25, -1.5]}
"#;
        let table = EmbeddingTable::read_jsonl(data.as_bytes()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.dim(), 4);
        assert_eq!(table.get("c").unwrap().values(), &[0.5, 0.5, 0.25, -1.5]);
    }

    #[test]
    fn jsonl_dimension_mismatch_names_record() {
        let data = "{\"id\": \"a\", \"vec\": [1, 2, 3, 4]}\n{\"id\": \"second\", \"vec\": [1, 2, 3]}\n{\"id\": \"c\", \"vec\": [1, 2, 3, 4]}\n";
        match EmbeddingTable::read_jsonl(data.as_bytes()) {
            Err(StoreError::DimensionMismatch { id, expected, found }) => {
                assert_eq!(id, "second");
                assert_eq!((expected, found), (4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_rejects_duplicates_overflow_and_garbage() {
        let dup = "{\"id\": \"a\", \"vec\": [1]}\n{\"id\": \"a\", \"vec\": [2]}\n";
        assert!(matches!(
            EmbeddingTable::read_jsonl(dup.as_bytes()),
            Err(StoreError::DuplicateId(id)) if id == "a"
        ));

        let inf = "{\"id\": \"a\", \"vec\": [1, 1e300]}\n";
        assert!(matches!(
            EmbeddingTable::read_jsonl(inf.as_bytes()),
            Err(StoreError::NonFinite { index: 1, .. })
        ));

        let bad = "{\"id\": \"a\", \"vec\": [1]}\n\n{\"id\": \"b\", \"vec\": [oops]}\n";
        match EmbeddingTable::read_jsonl(bad.as_bytes()) {
            Err(StoreError::Malformed { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(
            EmbeddingTable::read_jsonl("".as_bytes()),
            Err(StoreError::NoRecords)
        ));
    }

    #[test]
    fn binary_header_is_checked() {
        let mut buf = Vec::new();
        let table = EmbeddingTable::from_entries(2, [("x", v(&[1.0, 2.0]))]).unwrap();
        table.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PTGE");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 4 + 1 + 8);

        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            EmbeddingTable::read_binary(wrong_magic.as_slice()),
            Err(StoreError::BadMagic(_))
        ));

        let mut wrong_version = buf.clone();
        wrong_version[4] = 2;
        assert!(matches!(
            EmbeddingTable::read_binary(wrong_version.as_slice()),
            Err(StoreError::UnsupportedVersion(2))
        ));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(
            EmbeddingTable::read_binary(truncated),
            Err(StoreError::Malformed { .. })
        ));
    }

    #[test]
    fn cosine_trivial_cases() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[0.0, 1.0])),
            Err(StoreError::ZeroNorm)
        ));
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[0.0, 1.0])),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_matches_hand_computed_value() {
        // 32 / sqrt(14 * 77), evaluated independently with exact integer parts.
        let expected = 32.0_f64 / (14.0_f64 * 77.0).sqrt();
        let got = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got - 0.974_631_846_197_076_2).abs() < 1e-15);
    }

    #[test]
    fn vector_rejects_non_finite_and_empty() {
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![1.0, f32::NAN]).is_err());
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }

    #[test]
    fn item_ref_requires_id() {
        assert!(ItemRef::new("", ItemKind::Image).is_err());
        assert_eq!(ItemRef::new("a", ItemKind::Text).unwrap().id, "a");
    }
}
