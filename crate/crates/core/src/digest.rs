//! Content digests used for ids and cassette keys.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
///
/// Struct fields serialize in declaration order and maps used in hashed types
/// are `BTreeMap`s, so the encoding is stable for a given value.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("digest input serializes");
    sha256_hex(bytes)
}

/// Short identifier: the first 16 hex characters of [`json_digest`].
pub fn short_id<T: Serialize + ?Sized>(value: &T) -> String {
    json_digest(value)[..16].to_string()
}
