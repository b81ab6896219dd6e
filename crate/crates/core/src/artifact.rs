//! On-disk formats.
//!
//! Binary containers are laid out as
//!
//! ```text
//! magic "EXTUBATE" | u32 format version | u64 header length | JSON header | f64 payload
//! ```
//!
//! with all integers and floats little-endian. The JSON header carries a
//! `kind` tag so a bundle can never be read back as a checkpoint. Record
//! streams (events, profiles, timelines) are newline-delimited JSON.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cohort::PatientId;
use crate::error::{Error, Result};
use crate::preprocess::{MinMax, StaticBlock, SubsetKind, SubsetTensor, SubsetTensorBundle, TabularData};
use crate::temporal::{FusedModel, FusedModelSpec};
use crate::training::{History, ModelSpec, TrainConfig, TrainedModel};
use crate::gbdt::BoostedModel;

pub const MAGIC: &[u8; 8] = b"EXTUBATE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<H> {
    kind: String,
    payload_len: u64,
    header: H,
}

/// Encodes a header and float payload into a container.
pub fn encode<H: Serialize>(kind: &str, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&Envelope {
        kind: kind.to_string(),
        payload_len: payload.len() as u64,
        header,
    })?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!("truncated container while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Decodes a container, checking magic, version and kind.
pub fn decode<H: DeserializeOwned>(kind: &str, mut bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if take(&mut bytes, 8, "magic")? != MAGIC {
        return Err(Error::Format("not an artifact container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::SchemaVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let hlen = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().expect("8 bytes"));
    let env: Envelope<serde_json::Value> = serde_json::from_slice(take(&mut bytes, hlen as usize, "header")?)?;
    if env.kind != kind {
        return Err(Error::Format(format!("expected a `{kind}` container, found `{}`", env.kind)));
    }
    if bytes.len() as u64 != env.payload_len * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header declares {} floats",
            bytes.len(),
            env.payload_len
        )));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((serde_json::from_value(env.header)?, payload))
}

pub fn write_container<H: Serialize>(path: &Path, kind: &str, header: &H, payload: &[f64]) -> Result<()> {
    std::fs::write(path, encode(kind, header, payload)?)?;
    Ok(())
}

pub fn read_container<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    decode(kind, &std::fs::read(path)?)
}

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

// ---------------------------------------------------------------------------
// Sequence bundles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubsetHeader {
    kind: SubsetKind,
    interval: u32,
    features: Vec<String>,
    shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleHeader {
    provenance: Provenance,
    patients: Vec<PatientId>,
    labels: Vec<u8>,
    subsets: Vec<SubsetHeader>,
    static_columns: Option<Vec<String>>,
    scalers: BTreeMap<String, MinMax>,
}

pub const BUNDLE_KIND: &str = "subset-tensor-bundle";

/// Serializes a bundle. Masked cells are stored as NaN, which is how the
/// mask is recovered on load.
pub fn encode_bundle(
    bundle: &SubsetTensorBundle,
    scalers: &BTreeMap<String, MinMax>,
    provenance: &Provenance,
) -> Result<Vec<u8>> {
    bundle.validate()?;
    let mut payload = Vec::new();
    let subsets = bundle
        .subsets
        .iter()
        .map(|s| {
            payload.extend(s.values.iter().copied());
            let (n, t, f) = s.values.dim();
            SubsetHeader {
                kind: s.kind,
                interval: s.interval,
                features: s.features.clone(),
                shape: [n, t, f],
            }
        })
        .collect();
    if let Some(sb) = &bundle.static_block {
        payload.extend(sb.data.iter().copied());
    }
    let header = BundleHeader {
        provenance: provenance.clone(),
        patients: bundle.patients.clone(),
        labels: bundle.labels.clone(),
        subsets,
        static_columns: bundle.static_block.as_ref().map(|s| s.columns.clone()),
        scalers: scalers.clone(),
    };
    encode(BUNDLE_KIND, &header, &payload)
}

/// A bundle read back from disk with the state stored next to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedBundle {
    pub bundle: SubsetTensorBundle,
    pub scalers: BTreeMap<String, MinMax>,
    pub provenance: Provenance,
}

pub fn decode_bundle(bytes: &[u8]) -> Result<LoadedBundle> {
    let (h, payload): (BundleHeader, Vec<f64>) = decode(BUNDLE_KIND, bytes)?;
    if h.subsets.len() != 3 {
        return Err(Error::Format(format!("bundle has {} subsets, expected 3", h.subsets.len())));
    }
    let n = h.patients.len();
    let mut offset = 0;
    let mut next = |len: usize| -> Result<Vec<f64>> {
        let chunk = payload
            .get(offset..offset + len)
            .ok_or_else(|| Error::Format("bundle payload shorter than its shapes".into()))?
            .to_vec();
        offset += len;
        Ok(chunk)
    };
    let mut subsets = Vec::with_capacity(3);
    for s in &h.subsets {
        let [sn, t, f] = s.shape;
        if sn != n || f != s.features.len() {
            return Err(Error::Format(format!("{:?} subset shape {:?} disagrees with header", s.kind, s.shape)));
        }
        let values = Array3::from_shape_vec((sn, t, f), next(sn * t * f)?)
            .map_err(|e| Error::Format(e.to_string()))?;
        subsets.push(SubsetTensor::from_values(s.kind, s.interval, s.features.clone(), values));
    }
    let static_block = match h.static_columns {
        Some(columns) => {
            let data = Array2::from_shape_vec((n, columns.len()), next(n * columns.len())?)
                .map_err(|e| Error::Format(e.to_string()))?;
            Some(StaticBlock { columns, data })
        }
        None => None,
    };
    let bundle = SubsetTensorBundle {
        patients: h.patients,
        labels: h.labels,
        subsets: subsets.try_into().expect("three subsets"),
        static_block,
    };
    bundle.validate()?;
    Ok(LoadedBundle {
        bundle,
        scalers: h.scalers,
        provenance: h.provenance,
    })
}

// ---------------------------------------------------------------------------
// Baseline tables

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TableHeader {
    provenance: Provenance,
    columns: Vec<String>,
    patients: Vec<PatientId>,
    labels: Vec<u8>,
}

pub const TABLE_KIND: &str = "tabular";

pub fn encode_table(table: &TabularData, provenance: &Provenance) -> Result<Vec<u8>> {
    let header = TableHeader {
        provenance: provenance.clone(),
        columns: table.columns.clone(),
        patients: table.patients.clone(),
        labels: table.labels.clone(),
    };
    encode(TABLE_KIND, &header, &table.data.iter().copied().collect::<Vec<_>>())
}

pub fn decode_table(bytes: &[u8]) -> Result<(TabularData, Provenance)> {
    let (h, payload): (TableHeader, Vec<f64>) = decode(TABLE_KIND, bytes)?;
    let data = Array2::from_shape_vec((h.patients.len(), h.columns.len()), payload)
        .map_err(|e| Error::Format(e.to_string()))?;
    if h.labels.len() != h.patients.len() {
        return Err(Error::Format("table labels and patients differ in length".into()));
    }
    Ok((
        TabularData {
            columns: h.columns,
            patients: h.patients,
            labels: h.labels,
            data,
        },
        h.provenance,
    ))
}

// ---------------------------------------------------------------------------
// Model checkpoints

pub const CHECKPOINT_KIND: &str = "model-checkpoint";

/// Everything needed to rebuild, evaluate or retrain a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub family: String,
    pub spec: ModelSpec,
    pub train_config: TrainConfig,
    pub use_static: bool,
    /// Input columns in order: `subset/feature` for sequence models, table
    /// columns for the baseline.
    pub feature_order: Vec<String>,
    pub scaler_hash: String,
    pub provenance: Provenance,
    pub history: History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Body {
    Fused { model_spec: FusedModelSpec },
    Gbdt { model: BoostedModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    meta: CheckpointMeta,
    body: Body,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: TrainedModel,
}

/// Input column order for a sequence bundle as stored in checkpoints.
pub fn bundle_feature_order(bundle: &SubsetTensorBundle) -> Vec<String> {
    let mut order: Vec<String> = bundle
        .feature_order()
        .into_iter()
        .map(|(k, f)| format!("{}/{f}", k.name()))
        .collect();
    if let Some(sb) = &bundle.static_block {
        order.extend(sb.columns.iter().map(|c| format!("static/{c}")));
    }
    order
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let (body, payload) = match &ckpt.model {
        TrainedModel::Fused(m) => (
            Body::Fused {
                model_spec: m.spec.clone(),
            },
            m.state_tensors().concat(),
        ),
        TrainedModel::Gbdt(m) => (Body::Gbdt { model: m.clone() }, Vec::new()),
    };
    encode(
        CHECKPOINT_KIND,
        &CheckpointHeader {
            meta: ckpt.meta.clone(),
            body,
        },
        &payload,
    )
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (h, payload): (CheckpointHeader, Vec<f64>) = decode(CHECKPOINT_KIND, bytes)?;
    let model = match h.body {
        Body::Gbdt { model } => TrainedModel::Gbdt(model),
        Body::Fused { model_spec } => {
            let mut m = FusedModel::new(model_spec, 0)?;
            m.load_state(&payload)
                .map_err(|_| Error::Format("checkpoint payload does not match its model spec".into()))?;
            TrainedModel::Fused(m)
        }
    };
    Ok(Checkpoint { meta: h.meta, model })
}

// ---------------------------------------------------------------------------
// Record streams

pub fn write_ndjson<T: Serialize, W: Write>(mut w: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_ndjson<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("record {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_rejections() {
        let bytes = encode("thing", &vec![1, 2, 3], &[1.5, f64::NAN, -0.0]).unwrap();
        let (h, p): (Vec<i32>, Vec<f64>) = decode("thing", &bytes).unwrap();
        assert_eq!(h, vec![1, 2, 3]);
        assert_eq!(p[0], 1.5);
        assert!(p[1].is_nan());
        assert!(p[2].is_sign_negative());

        assert!(matches!(decode::<Vec<i32>>("other", &bytes), Err(Error::Format(_))));
        assert!(matches!(decode::<Vec<i32>>("thing", &bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut bumped = bytes.clone();
        bumped[8] = 9;
        assert!(matches!(
            decode::<Vec<i32>>("thing", &bumped),
            Err(Error::SchemaVersion { expected: 1, found: 9 })
        ));
        assert!(matches!(decode::<Vec<i32>>("thing", b"garbage!"), Err(Error::Format(_))));
    }

    #[test]
    fn ndjson_roundtrip() {
        let recs = vec![(1u32, 0.1f64), (2, 1e-300)];
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &recs).unwrap();
        let back: Vec<(u32, f64)> = read_ndjson(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
