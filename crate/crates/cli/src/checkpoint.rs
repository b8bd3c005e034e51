//! Versioned checkpoint format.
//!
//! Byte layout:
//! - bytes 0..8: magic `ADNFM001`
//! - bytes 8..16: metadata length, big-endian u64
//! - UTF-8 JSON metadata (schema, sizes, kind, task, data format, train
//!   config fingerprint, metric summary)
//! - raw little-endian f64 parameter blocks in the fixed declaration order
//!   of the parameter store
//!
//! Loading reproduces every parameter bit-exactly; a bad magic or a
//! truncated file is detected before any parameter is read.

use std::path::Path;

use serde::{Deserialize, Serialize};

use adnfm_core::features::{FeatureSchema, FieldKind, FieldSpec};
use adnfm_core::model::{HyperParams, ModelKind, ModelParams};
use adnfm_core::{Error, Result};

use crate::config::fnv1a64;

pub const MAGIC: &[u8; 8] = b"ADNFM001";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Loader used for the training data: "criteo" | "movielens" | "tsv".
    pub data_format: String,
    pub task: String,
    pub kind: String,
    pub hyper: HyperDoc,
    pub schema: SchemaDoc,
    pub train_fingerprint: String,
    /// Final test metrics summary line, when written by training.
    pub metrics: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperDoc {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub attn_dim: usize,
}

impl From<HyperParams> for HyperDoc {
    fn from(h: HyperParams) -> Self {
        HyperDoc {
            embedding_dim: h.embedding_dim,
            hidden_dim: h.hidden_dim,
            depth: h.depth,
            attn_dim: h.attn_dim,
        }
    }
}

impl HyperDoc {
    pub fn to_hyper(&self) -> HyperParams {
        HyperParams {
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            attn_dim: self.attn_dim,
        }
    }
}

/// Self-describing schema document embedded in the metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub fields: Vec<FieldDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldDoc {
    pub name: String,
    pub kind: String,
    pub offset: usize,
    pub cardinality: usize,
    pub vocab: Vec<String>,
}

impl SchemaDoc {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        SchemaDoc {
            fields: schema
                .fields()
                .iter()
                .map(|f| FieldDoc {
                    name: f.name.clone(),
                    kind: f.kind.name().to_string(),
                    offset: f.offset,
                    cardinality: f.cardinality,
                    vocab: f.vocab.clone(),
                })
                .collect(),
        }
    }

    pub fn to_schema(&self) -> Result<FeatureSchema> {
        let fields = self
            .fields
            .iter()
            .map(|f| {
                Ok(FieldSpec {
                    name: f.name.clone(),
                    kind: FieldKind::parse(&f.kind)?,
                    offset: f.offset,
                    cardinality: f.cardinality,
                    vocab: f.vocab.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSchema::from_fields(fields)
    }

    /// Fingerprint for schema-mismatch diagnostics.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("schema serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

impl CheckpointMeta {
    pub fn kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.kind)
    }

    pub fn task(&self) -> Result<adnfm_core::data::Task> {
        adnfm_core::data::Task::parse(&self.task)
    }
}

pub fn save(path: &Path, meta: &CheckpointMeta, params: &ModelParams) -> Result<()> {
    let json = serde_json::to_vec(meta)
        .map_err(|e| Error::Config(format!("metadata serialization: {e}")))?;
    let flat = params.to_flat();
    let mut bytes = Vec::with_capacity(16 + json.len() + flat.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_be_bytes());
    bytes.extend_from_slice(&json);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(CheckpointMeta, ModelParams)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Data(format!(
            "{} is not a checkpoint (bad magic or too short)",
            path.display()
        )));
    }
    let meta_len = u64::from_be_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + meta_len {
        return Err(Error::Data(format!(
            "{} is truncated inside the metadata block",
            path.display()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..16 + meta_len])
        .map_err(|e| Error::Data(format!("corrupt checkpoint metadata: {e}")))?;

    let schema = meta.schema.to_schema()?;
    let hyper = meta.hyper.to_hyper();
    let mut params = ModelParams::zeros(&schema, &hyper)?;
    let expected = params.flat_len() * 8;
    let body = &bytes[16 + meta_len..];
    if body.len() != expected {
        return Err(Error::Data(format!(
            "{}: parameter block holds {} bytes, expected {expected}",
            path.display(),
            body.len()
        )));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.assign_flat(&flat)?;
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use adnfm_core::data::synth_interactions;

    fn sample_checkpoint() -> (CheckpointMeta, ModelParams, std::path::PathBuf) {
        let (ds, _) = synth_interactions(20, 3, 5, 2, 4).unwrap();
        let hyper = HyperParams {
            embedding_dim: 3,
            hidden_dim: 4,
            depth: 2,
            attn_dim: 3,
        };
        let params = ModelParams::init(&ds.schema, &hyper, 11).unwrap();
        let meta = CheckpointMeta {
            format_version: 1,
            data_format: "tsv".into(),
            task: "ctr".into(),
            kind: "adnfm".into(),
            hyper: hyper.into(),
            schema: SchemaDoc::from_schema(&ds.schema),
            train_fingerprint: "deadbeefdeadbeef".into(),
            metrics: Some("auc=0.900000\tlogloss=0.400000".into()),
        };
        let dir = tempfile::tempdir().unwrap().keep();
        (meta, params, dir.join("model.ckpt"))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (meta, params, path) = sample_checkpoint();
        save(&path, &meta, &params).unwrap();
        let (meta2, params2) = load(&path).unwrap();
        assert_eq!(meta2.kind, meta.kind);
        assert_eq!(meta2.schema.fingerprint(), meta.schema.fingerprint());
        let a = params.to_flat();
        let b = params2.to_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let (meta, params, path) = sample_checkpoint();
        save(&path, &meta, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Data(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let (meta, params, path) = sample_checkpoint();
        save(&path, &meta, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load(&path), Err(Error::Data(_))));
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load(&path), Err(Error::Data(_))));
    }

    #[test]
    fn save_is_deterministic() {
        let (meta, params, path) = sample_checkpoint();
        save(&path, &meta, &params).unwrap();
        let first = std::fs::read(&path).unwrap();
        save(&path, &meta, &params).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }
}
