//! Diversity-filtered semantic index over functionality embeddings.

use std::collections::BTreeSet;
use std::io::Read as _;
use std::path::Path;

use crate::providers::{cosine, reaches, Embedding};
use crate::store::{write_atomic, StoreError};

pub const INDEX_MAGIC: &[u8; 4] = b"AFIX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub functionality_id: usize,
    pub node_id: usize,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalIndex {
    pub dimension: usize,
    pub entries: Vec<IndexEntry>,
}

impl RetrievalIndex {
    /// Greedy admission in input order: an entry is skipped when its cosine
    /// with any admitted entry reaches `diversity_threshold`.
    pub fn build(
        candidates: impl IntoIterator<Item = IndexEntry>,
        diversity_threshold: f64,
    ) -> Self {
        let mut entries: Vec<IndexEntry> = Vec::new();
        for cand in candidates {
            if entries
                .iter()
                .all(|e| !reaches(cosine(&e.embedding, &cand.embedding), diversity_threshold))
            {
                entries.push(cand);
            }
        }
        let dimension = entries.first().map(|e| e.embedding.dim()).unwrap_or(0);
        Self { dimension, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top-`k` entries by cosine to `query`, skipping entries on `exclude`d
    /// nodes and any entry whose cosine with an already selected one reaches
    /// `diversity_threshold`. Ties go to the lower functionality id.
    pub fn retrieve(
        &self,
        query: &Embedding,
        k: usize,
        exclude: &BTreeSet<usize>,
        diversity_threshold: f64,
    ) -> Vec<&IndexEntry> {
        if k == 0 {
            return Vec::new();
        }
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .filter(|e| !exclude.contains(&e.node_id))
            .map(|e| (cosine(query, &e.embedding), e))
            .collect();
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.functionality_id.cmp(&b.1.functionality_id))
        });
        let mut out: Vec<&IndexEntry> = Vec::new();
        for (_, e) in scored {
            if out
                .iter()
                .all(|o| !reaches(cosine(&o.embedding, &e.embedding), diversity_threshold))
            {
                out.push(e);
                if out.len() == k {
                    break;
                }
            }
        }
        out
    }

    /// Binary matrix: magic, version, count, dim (u32 LE), then f32 LE rows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.entries.len() * self.dimension * 4);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        for e in &self.entries {
            for v in e.embedding.as_slice() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Parsed `index.bin`: `(count, dim, rows)`.
pub fn read_index_matrix(path: &Path) -> Result<(usize, usize, Vec<Vec<f32>>), StoreError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| StoreError::io(path, e))?;
    let bad = |message: &str| StoreError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[0..4] != INDEX_MAGIC {
        return Err(bad("missing AFIX header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != INDEX_VERSION as usize {
        return Err(bad("unsupported index version"));
    }
    let (count, dim) = (word(8), word(12));
    if bytes.len() != 16 + count * dim * 4 {
        return Err(bad("matrix size does not match header"));
    }
    let rows = (0..count)
        .map(|r| {
            (0..dim)
                .map(|c| {
                    let at = 16 + (r * dim + c) * 4;
                    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
                })
                .collect()
        })
        .collect();
    Ok((count, dim, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(id: usize, node: usize, v: Vec<f64>) -> IndexEntry {
        IndexEntry {
            functionality_id: id,
            node_id: node,
            embedding: Embedding::normalized(v),
        }
    }

    #[test]
    fn identical_second_entry_is_skipped() {
        let idx =
            RetrievalIndex::build(vec![e(0, 0, vec![1.0, 0.0]), e(1, 1, vec![2.0, 0.0])], 0.8);
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn orthogonal_entries_all_admitted() {
        let idx = RetrievalIndex::build(
            (0..4).map(|i| {
                let mut v = vec![0.0; 4];
                v[i] = 1.0;
                e(i, i, v)
            }),
            0.8,
        );
        assert_eq!(idx.len(), 4);
    }

    #[test]
    fn retrieve_edge_cases() {
        let idx = RetrievalIndex::build(
            (0..5).map(|i| {
                let mut v = vec![0.0; 5];
                v[i] = 1.0;
                e(i, i, v)
            }),
            0.8,
        );
        let q = Embedding::normalized(vec![1.0; 5]);
        assert!(idx.retrieve(&q, 0, &BTreeSet::new(), 0.8).is_empty());
        assert!(idx.retrieve(&q, 30, &(0..5).collect(), 0.8).is_empty());
        assert_eq!(idx.retrieve(&q, 30, &BTreeSet::from([1]), 0.8).len(), 4);
        assert!(RetrievalIndex::default()
            .retrieve(&q, 3, &BTreeSet::new(), 0.8)
            .is_empty());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx =
            RetrievalIndex::build(vec![e(0, 0, vec![3.0, 4.0]), e(1, 1, vec![0.0, 1.0])], 0.9);
        idx.save(&dir.path().join("index.bin")).unwrap();
        let (count, dim, rows) = read_index_matrix(&dir.path().join("index.bin")).unwrap();
        assert_eq!((count, dim), (2, 2));
        assert_eq!(rows[0], vec![0.6f32, 0.8f32]);
    }
}
