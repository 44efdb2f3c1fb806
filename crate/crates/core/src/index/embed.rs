/// Maps texts to unit-norm vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Vec<Vec<f32>>;
}

/// Retrieval-free embedder: signed feature hashing of character trigrams
/// (plus whole words), L2-normalized. Identical texts map to identical
/// vectors on every platform; texts sharing many n-grams land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dimension: usize,
    seed: u64,
}

const ID_PREFIX: &str = "hash-ngram";

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            id: format!("{ID_PREFIX}:dim={dimension}:seed={seed}"),
            dimension,
            seed,
        }
    }

    /// Reconstructs an embedder from its id string.
    pub fn from_id(id: &str) -> Option<Self> {
        let mut parts = id.split(':');
        if parts.next()? != ID_PREFIX {
            return None;
        }
        let dim = parts.next()?.strip_prefix("dim=")?.parse().ok()?;
        let seed = parts.next()?.strip_prefix("seed=")?.parse().ok()?;
        if parts.next().is_some() || dim == 0 {
            return None;
        }
        Some(Self::new(dim, seed))
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dimension];
        let lower = text.to_lowercase();
        let chars: Vec<char> = std::iter::once(' ')
            .chain(lower.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            self.add(&mut acc, buf.as_bytes(), 1.0);
        }
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.add(&mut acc, word.as_bytes(), 2.0);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            let slot = (mix(fnv1a(b"") ^ self.seed) % self.dimension as u64) as usize;
            acc[slot] = 1.0;
            return acc.iter().map(|&v| v as f32).collect();
        }
        let mut out: Vec<f32> = acc.iter().map(|v| (v / norm) as f32).collect();
        // re-normalize in f32 so the stored vector itself has unit norm
        let n32 = out.iter().map(|v| v * v).sum::<f32>().sqrt();
        out.iter_mut().for_each(|v| *v /= n32);
        out
    }

    fn add(&self, acc: &mut [f64], feature: &[u8], weight: f64) {
        let h = mix(fnv1a(feature) ^ self.seed);
        let slot = (h % self.dimension as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[slot] += sign * weight;
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Vec<Vec<f32>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scores a (query, document) pair; larger is more relevant.
pub trait Reranker: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, query: &str, document: &str) -> f64;
}

/// Jaccard overlap of lowercase word sets.
#[derive(Debug, Clone, Default)]
pub struct OverlapReranker;

impl Reranker for OverlapReranker {
    fn id(&self) -> &str {
        "word-overlap"
    }

    fn score(&self, query: &str, document: &str) -> f64 {
        use std::collections::HashSet;
        let words = |s: &str| -> HashSet<String> {
            s.split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase)
                .collect()
        };
        let (q, d) = (words(query), words(document));
        let union = q.union(&d).count();
        if union == 0 {
            0.0
        } else {
            q.intersection(&d).count() as f64 / union as f64
        }
    }
}
