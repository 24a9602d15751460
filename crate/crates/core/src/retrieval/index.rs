//! Exact cosine kNN over an append-only in-memory index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{EmbeddingVector, RetrievalError};

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
}

/// Total ranking order: score descending, then image id ascending.
pub fn rank_order(a: &ScoredImage, b: &ScoredImage) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Heap entry whose `Ord` puts the worst-ranked hit on top of a max-heap.
struct Worst(ScoredImage);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

#[derive(Default)]
struct Entries {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    positions: HashMap<String, usize>,
}

/// Append-only vector index. Readers share a read lock; appends take the
/// write lock between queries.
pub struct VectorIndex {
    dimension: usize,
    entries: RwLock<Entries>,
}

impl std::fmt::Debug for VectorIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorIndex")
            .field("dimension", &self.dimension)
            .field("len", &self.len())
            .finish()
    }
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: RwLock::new(Entries::default()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("index lock poisoned").ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.entries
            .read()
            .expect("index lock poisoned")
            .positions
            .contains_key(image_id)
    }

    pub fn get(&self, image_id: &str) -> Option<EmbeddingVector> {
        let entries = self.entries.read().expect("index lock poisoned");
        entries
            .positions
            .get(image_id)
            .map(|&pos| entries.vectors[pos].clone())
    }

    /// Adds a vector. Ids must be unique.
    pub fn insert(&self, image_id: &str, vector: EmbeddingVector) -> Result<(), RetrievalError> {
        if vector.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                actual: vector.dimension(),
            });
        }
        let mut entries = self.entries.write().expect("index lock poisoned");
        if entries.positions.contains_key(image_id) {
            return Err(RetrievalError::DuplicateId(image_id.to_owned()));
        }
        let pos = entries.ids.len();
        entries.ids.push(image_id.to_owned());
        entries.vectors.push(vector);
        entries.positions.insert(image_id.to_owned(), pos);
        Ok(())
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), RetrievalError> {
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        Ok(())
    }

    /// Top-`k` hits by cosine, ties broken by ascending id.
    pub fn knn(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredImage>, RetrievalError> {
        self.knn_excluding(query, k, None)
    }

    /// Like [`VectorIndex::knn`] but never returns `exclude`.
    pub fn knn_excluding(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<ScoredImage>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        self.check_query(query)?;
        let entries = self.entries.read().expect("index lock poisoned");
        if entries.ids.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }

        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for (id, vector) in entries.ids.iter().zip(&entries.vectors) {
            if exclude == Some(id.as_str()) {
                continue;
            }
            let candidate = ScoredImage {
                image_id: id.clone(),
                score: query.cosine(vector),
            };
            if heap.len() < k {
                heap.push(Worst(candidate));
            } else if let Some(top) = heap.peek() {
                if rank_order(&candidate, &top.0) == Ordering::Less {
                    heap.pop();
                    heap.push(Worst(candidate));
                }
            }
        }
        let mut hits: Vec<ScoredImage> = heap.into_iter().map(|w| w.0).collect();
        hits.sort_by(rank_order);
        Ok(hits)
    }

    /// Full ranking of every indexed vector (minus `exclude`).
    pub fn rank_all(
        &self,
        query: &EmbeddingVector,
        exclude: Option<&str>,
    ) -> Result<Vec<ScoredImage>, RetrievalError> {
        self.check_query(query)?;
        let entries = self.entries.read().expect("index lock poisoned");
        if entries.ids.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut hits: Vec<ScoredImage> = entries
            .ids
            .iter()
            .zip(&entries.vectors)
            .filter(|(id, _)| exclude != Some(id.as_str()))
            .map(|(id, v)| ScoredImage {
                image_id: id.clone(),
                score: query.cosine(v),
            })
            .collect();
        hits.sort_unstable_by(rank_order);
        Ok(hits)
    }
}
