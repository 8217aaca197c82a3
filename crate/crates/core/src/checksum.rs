use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a JSON value's compact serialization. `serde_json` maps keep
/// keys sorted, so equal configs hash equally regardless of input order.
pub fn config_hash(config: &Value) -> String {
    sha256_hex(serde_json::to_string(config).expect("json").as_bytes())
}
