//! Config hashing for file headers and reports.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the value's JSON serialization, hex encoded.
///
/// Struct fields serialize in declaration order and maps are `BTreeMap`s,
/// so the encoding is canonical for the types in this crate.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types always serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_sensitive() {
        let a = config_hash(&("x", 1.0_f64));
        assert_eq!(a, config_hash(&("x", 1.0_f64)));
        assert_ne!(a, config_hash(&("x", 1.0000001_f64)));
        assert_eq!(a.len(), 64);
    }
}
