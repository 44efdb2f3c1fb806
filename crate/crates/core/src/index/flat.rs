use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedder, IndexError};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest";
pub const VECTORS_FILE: &str = "vectors.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub embedder_id: String,
    pub dimension: usize,
    pub metric: String,
    pub row_count: usize,
    pub column: String,
    pub content_hash: String,
}

/// Exact cosine index over one text column: a row-major matrix of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimIndex {
    manifest: Manifest,
    vectors: Vec<f32>,
}

/// SHA-256 over length-prefixed cell bytes, hex encoded.
pub fn content_hash<S: AsRef<str>>(cells: &[S]) -> String {
    let mut h = Sha256::new();
    for c in cells {
        let b = c.as_ref().as_bytes();
        h.update((b.len() as u64).to_le_bytes());
        h.update(b);
    }
    hex::encode(h.finalize())
}

impl SimIndex {
    pub fn build(column: &str, cells: &[&str], embedder: &dyn Embedder) -> Self {
        let dim = embedder.dimension();
        let mut vectors = Vec::with_capacity(cells.len() * dim);
        for v in embedder.embed(cells) {
            assert_eq!(v.len(), dim, "embedder {} returned wrong dimension", embedder.id());
            vectors.extend(v);
        }
        Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                embedder_id: embedder.id().to_string(),
                dimension: dim,
                metric: "cosine".into(),
                row_count: cells.len(),
                column: column.to_string(),
                content_hash: content_hash(cells),
            },
            vectors,
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dimension(&self) -> usize {
        self.manifest.dimension
    }

    pub fn row_count(&self) -> usize {
        self.manifest.row_count
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        let d = self.manifest.dimension;
        &self.vectors[row * d..(row + 1) * d]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
        let mut bytes = Vec::with_capacity(self.vectors.len() * 4);
        for v in &self.vectors {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(VECTORS_FILE), bytes)?;
        Ok(())
    }

    pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest, IndexError> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| IndexError::MissingManifest(format!("{}: {e}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| IndexError::CorruptManifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(IndexError::CorruptManifest(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        if manifest.metric != "cosine" {
            return Err(IndexError::CorruptManifest(format!("unsupported metric {}", manifest.metric)));
        }
        if manifest.dimension == 0 {
            return Err(IndexError::CorruptManifest("zero dimension".into()));
        }
        Ok(manifest)
    }

    /// Loads an index without checking it against any table.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = dir.as_ref();
        let manifest = Self::read_manifest(dir)?;
        let bytes = fs::read(dir.join(VECTORS_FILE))?;
        let expected = manifest.row_count * manifest.dimension * 4;
        if bytes.len() != expected {
            return Err(IndexError::CorruptManifest(format!(
                "{VECTORS_FILE} has {} bytes, manifest implies {expected}",
                bytes.len()
            )));
        }
        let vectors = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { manifest, vectors })
    }
}

/// Cosine (dot product of unit vectors) accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Descending score, ties by ascending position.
pub fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// The `k` best `(position, score)` pairs, best first.
pub fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::HashEmbedder;

    #[test]
    fn save_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let e = HashEmbedder::new(16, 3);
        let idx = SimIndex::build("c", &["a", "b", "c"], &e);
        idx.save(dir.path()).unwrap();
        let back = SimIndex::load(dir.path()).unwrap();
        assert_eq!(back, idx);
        let raw = fs::read(dir.path().join(VECTORS_FILE)).unwrap();
        assert_eq!(raw.len(), 3 * 16 * 4);
        assert_eq!(f32::from_le_bytes(raw[..4].try_into().unwrap()), idx.vectors()[0]);
    }

    #[test]
    fn truncated_vectors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let idx = SimIndex::build("c", &["a", "b"], &HashEmbedder::new(4, 0));
        idx.save(dir.path()).unwrap();
        fs::write(dir.path().join(VECTORS_FILE), [0u8; 5]).unwrap();
        assert!(matches!(SimIndex::load(dir.path()), Err(IndexError::CorruptManifest(_))));
        fs::write(dir.path().join(MANIFEST_FILE), "{not json").unwrap();
        assert!(matches!(SimIndex::load(dir.path()), Err(IndexError::CorruptManifest(_))));
    }

    #[test]
    fn top_k_orders_and_breaks_ties() {
        let s = vec![(0, 0.5), (1, 0.9), (2, 0.5), (3, 0.1)];
        assert_eq!(top_k(s.clone(), 3), vec![(1, 0.9), (0, 0.5), (2, 0.5)]);
        assert_eq!(top_k(s, 10).len(), 4);
    }
}
