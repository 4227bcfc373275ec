//! Versioned, digest-checked persistence of every fitted artifact in one
//! self-contained JSON document. Floats serialize in shortest round-trip
//! decimal form, so `load(save(bundle))` reproduces predictions exactly and
//! reruns with the same config yield byte-identical documents.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EvaluationSummary, PipelineConfig};
use crate::encoding::{EncodedInstance, FeatureSchema};
use crate::local_regions::RegionModel;
use crate::neural_net::TrainedNetwork;
use crate::surrogate::SurrogateTree;
use crate::{Error, Result};

pub const BUNDLE_VERSION: &str = "xppm-bundle/1";

/// The validation instances the explanations are served from, aligned with
/// `regions.assignments`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationData {
    pub instances: Vec<EncodedInstance>,
    pub scores: Vec<f64>,
    pub latent: Vec<Vec<f64>>,
}

/// Everything a trained pipeline produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub schema: FeatureSchema,
    pub network: TrainedNetwork,
    /// Selected equal-error classification threshold.
    pub tau: f64,
    pub regions: RegionModel,
    pub baseline_regions: Option<RegionModel>,
    pub surrogates: BTreeMap<usize, SurrogateTree>,
    pub baseline_surrogates: BTreeMap<usize, SurrogateTree>,
    pub validation: ValidationData,
    pub evaluation: EvaluationSummary,
}

#[derive(Serialize, Deserialize)]
struct BundleDocument {
    version: String,
    digest: String,
    payload: ModelBundle,
}

/// Hex SHA-256 over the bundle's canonical JSON serialization.
pub fn bundle_digest(bundle: &ModelBundle) -> Result<String> {
    let payload = serde_json::to_string(bundle)
        .map_err(|e| Error::InvalidInput(format!("bundle serialization failed: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(payload.as_bytes());
    Ok(hex_encode(&hasher.finalize()))
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the bundle atomically (temp file + rename), so a failed run never
/// leaves a partial bundle behind.
pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let document = BundleDocument {
        version: BUNDLE_VERSION.to_string(),
        digest: bundle_digest(bundle)?,
        payload: bundle.clone(),
    };
    let text = serde_json::to_string(&document)
        .map_err(|e| Error::InvalidInput(format!("bundle serialization failed: {e}")))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a bundle, verifying version and content digest.
pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptBundle(format!("unreadable document: {e}")))?;

    let version = value
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::CorruptBundle("missing version field".to_string()))?;
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion(version.to_string()));
    }

    let document: BundleDocument = serde_json::from_value(value)
        .map_err(|e| Error::CorruptBundle(format!("malformed payload: {e}")))?;
    let recomputed = bundle_digest(&document.payload)?;
    if recomputed != document.digest {
        return Err(Error::CorruptBundle(format!(
            "digest mismatch: stored {}, recomputed {}",
            document.digest, recomputed
        )));
    }
    Ok(document.payload)
}
