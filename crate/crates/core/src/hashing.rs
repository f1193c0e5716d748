//! Content hashing helpers shared by corpus ids, cache keys, and manifests.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice.
#[must_use]
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Hex-encoded SHA-256 of a file's contents, streamed.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Hex-encoded SHA-256 of a list of string parts.
///
/// Parts are length-prefixed before hashing so that the boundary between
/// adjacent parts cannot be shifted without changing the digest.
#[must_use]
pub fn sha256_hex_parts(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Deterministic 64-bit digest of a list of string parts.
///
/// Same length-prefixed scheme as [`sha256_hex_parts`], truncated to the
/// first eight bytes of the digest.
#[must_use]
pub fn stable_hash_u64(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is at least 8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_hex_matches_known_vector() {
        // Well-known digest of the empty string.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn file_hash_agrees_with_in_memory_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blob.bin");
        let data = vec![7u8; 200_000];
        std::fs::write(&path, &data).unwrap();
        assert_eq!(sha256_file(&path).unwrap(), sha256_hex(&data));
    }

    #[test]
    fn length_prefixing_separates_adjacent_parts() {
        assert_ne!(stable_hash_u64(&["ab", "c"]), stable_hash_u64(&["a", "bc"]));
        assert_ne!(stable_hash_u64(&["ab"]), stable_hash_u64(&["ab", ""]));
        assert_eq!(stable_hash_u64(&["x", "y"]), stable_hash_u64(&["x", "y"]));
        assert_ne!(sha256_hex_parts(&["ab", "c"]), sha256_hex_parts(&["a", "bc"]));
    }

    #[test]
    fn truncated_hash_agrees_with_full_digest_prefix() {
        let full = sha256_hex_parts(&["x"]);
        let bytes = hex::decode(&full[..16]).unwrap();
        let expected = u64::from_le_bytes(bytes.try_into().unwrap());
        assert_eq!(stable_hash_u64(&["x"]), expected);
    }
}
