//! Run manifests. The hash covers everything that determines the artifacts
//! and nothing else; wall-clock metadata sits outside it.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

/// How chunk and sample seeds derive from the master seed.
pub const SUBSTREAM_SCHEME: &str = "ChaCha20 keyed by seed_from_u64(master_seed), stream id = unit index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substreams {
    pub scheme: String,
    /// Stream ids used, in merge order.
    pub ids: Vec<u64>,
}

impl Substreams {
    pub fn range(n: u64) -> Self {
        Self { scheme: SUBSTREAM_SCHEME.into(), ids: (0..n).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub sideband: String,
    pub cli: String,
    pub record_format: u16,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            sideband: sideband::VERSION.into(),
            cli: env!("CARGO_PKG_VERSION").into(),
            record_format: crate::codec::VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCore {
    pub command: String,
    pub config: Config,
    pub master_seed: u64,
    pub substreams: Substreams,
    pub versions: Versions,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl ManifestCore {
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_s: f64,
    pub elapsed_s: f64,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub core: ManifestCore,
    /// Hex SHA-256 of the canonical JSON of `core`.
    pub hash: String,
    pub wall_clock: WallClock,
}

impl RunManifest {
    pub fn new(core: ManifestCore, wall_clock: WallClock) -> Self {
        let hash = hex(&core.hash());
        Self { core, hash, wall_clock }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn display_path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
