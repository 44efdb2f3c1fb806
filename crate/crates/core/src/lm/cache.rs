use std::collections::HashMap;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::table::RowId;

/// Unordered row pair under one ranking criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairKey {
    lo: RowId,
    hi: RowId,
    criterion: u64,
}

impl PairKey {
    pub fn new(a: RowId, b: RowId, criterion: u64) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Self { lo, hi, criterion }
    }
}

pub fn criterion_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Winners of already-decided pairwise comparisons.
#[derive(Debug, Default)]
pub struct PairCache {
    winners: Mutex<HashMap<PairKey, RowId>>,
}

impl PairCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, key: &PairKey) -> Option<RowId> {
        self.winners.lock().expect("cache poisoned").get(key).copied()
    }

    pub fn store(&self, key: PairKey, winner: RowId) {
        debug_assert!(winner == key.lo || winner == key.hi);
        self.winners.lock().expect("cache poisoned").insert(key, winner);
    }

    pub fn len(&self) -> usize {
        self.winners.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
