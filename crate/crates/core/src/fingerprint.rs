//! Content hashes used to tie evaluation results and routing tables to datasets.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Combined fingerprint over `(code_id, dataset fingerprint)` pairs, order-independent.
pub fn combine<'a, I>(parts: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut parts: Vec<_> = parts.into_iter().collect();
    parts.sort();
    let mut hasher = Sha256::new();
    for (code, fp) in parts {
        hasher.update(code.as_bytes());
        hasher.update([0]);
        hasher.update(fp.as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
