use sha2::{Digest, Sha256};

/// Hex SHA-256 over the given parts, separated by a unit-separator byte so
/// that `["ab", "c"]` and `["a", "bc"]` hash differently.
pub fn content_hash(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    hex(&hasher.finalize())
}

/// Short prefix of a content hash, for display.
pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
