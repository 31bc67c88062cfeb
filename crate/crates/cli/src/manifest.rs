use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance attached to every emitted artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// Arguments after the program name.
    pub command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    /// SHA-256 of the effective configuration after overrides.
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Taken from `SOURCE_DATE_EPOCH` only, so reruns stay byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config_path: Option<String>, config_json: &str, seed: Option<u64>) -> Self {
        RunManifest {
            tool: "nvcharge",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_path,
            config_sha256: sha256_hex(config_json.as_bytes()),
            seed,
            created_unix: std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
