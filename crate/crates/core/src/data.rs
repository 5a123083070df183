//! Interaction data: contiguous indexing, the 7:1:2 split, the normalized
//! bipartite adjacency and degree-quantile user groups.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("no valid interactions")]
    NoInteractions,
    #[error("cannot split {0} interactions; at least 10 are required")]
    TooFewToSplit(usize),
    #[error("training split is empty")]
    EmptyTrain,
    #[error("need at least 2 degree groups, got {0}")]
    BadGroupCount(usize),
    #[error("{users} users cannot fill {groups} degree groups")]
    TooFewUsers { users: usize, groups: usize },
}

/// One observed user-item pair. `rating` is 1.0 for implicit feedback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
}

impl Interaction {
    pub fn new(user: u32, item: u32) -> Self {
        Self {
            user,
            item,
            rating: 1.0,
        }
    }

    fn key(&self) -> (u32, u32) {
        (self.user, self.item)
    }
}

/// Deduplicated interactions with contiguous indices assigned in first-seen
/// order.
#[derive(Clone, Debug, Default)]
pub struct RawInteractions {
    pub records: Vec<Interaction>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    user_index: BTreeMap<String, u32>,
    item_index: BTreeMap<String, u32>,
    seen: BTreeSet<(u32, u32)>,
}

impl RawInteractions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one interaction. Returns `false` if the pair was already present;
    /// the first occurrence (and its rating) wins.
    pub fn push(&mut self, user: &str, item: &str, rating: Option<f64>) -> bool {
        let u = intern(&mut self.user_index, &mut self.user_ids, user);
        let i = intern(&mut self.item_index, &mut self.item_ids, item);
        if !self.seen.insert((u, i)) {
            return false;
        }
        self.records.push(Interaction {
            user: u,
            item: i,
            rating: rating.unwrap_or(1.0),
        });
        true
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn user_index(&self, id: &str) -> Option<u32> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<u32> {
        self.item_index.get(id).copied()
    }
}

fn intern(index: &mut BTreeMap<String, u32>, ids: &mut Vec<String>, key: &str) -> u32 {
    if let Some(&k) = index.get(key) {
        return k;
    }
    let k = ids.len() as u32;
    ids.push(key.to_string());
    index.insert(key.to_string(), k);
    k
}

/// Train / validation / test edges, each sorted by `(user, item)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<Interaction>,
    pub validation: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub split_seed: u64,
}

impl DatasetSplit {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Global uniform shuffle under `seed`, cut at `⌊0.7n⌋` and `⌊0.8n⌋`.
pub fn split_dataset(raw: &RawInteractions, seed: u64) -> Result<DatasetSplit, DataError> {
    let n = raw.len();
    if n < 10 {
        return Err(DataError::TooFewToSplit(n));
    }
    let mut shuffled = raw.records.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let cut_train = n * 7 / 10;
    let cut_val = n * 8 / 10;
    let mut test = shuffled.split_off(cut_val);
    let mut validation = shuffled.split_off(cut_train);
    let mut train = shuffled;
    for part in [&mut train, &mut validation, &mut test] {
        part.sort_by_key(Interaction::key);
    }
    Ok(DatasetSplit {
        n_users: raw.n_users(),
        n_items: raw.n_items(),
        train,
        validation,
        test,
        split_seed: seed,
    })
}

/// Binary adjacency `A` over training edges and its symmetric normalization
/// `Ã = D_u^{-1/2} A D_i^{-1/2}`.
#[derive(Clone, Debug)]
pub struct InteractionGraph {
    pub n_users: usize,
    pub n_items: usize,
    pub adjacency: CsrMatrix,
    pub normalized: CsrMatrix,
    pub user_degrees: Vec<u32>,
    pub item_degrees: Vec<u32>,
}

impl InteractionGraph {
    /// Builds the graph directly from an edge list; duplicate pairs collapse.
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[Interaction]) -> Self {
        let unique: BTreeSet<(u32, u32)> = edges.iter().map(Interaction::key).collect();
        let triplets: Vec<(u32, u32, f64)> = unique.iter().map(|&(u, i)| (u, i, 1.0)).collect();
        let adjacency = CsrMatrix::from_triplets(n_users, n_items, &triplets);

        let mut user_degrees = alloc::vec![0u32; n_users];
        let mut item_degrees = alloc::vec![0u32; n_items];
        for &(u, i) in &unique {
            user_degrees[u as usize] += 1;
            item_degrees[i as usize] += 1;
        }
        let normalized = adjacency.with_values(
            adjacency
                .iter()
                .map(|(u, i, _)| {
                    let du = user_degrees[u] as f64;
                    let di = item_degrees[i as usize] as f64;
                    1.0 / libm::sqrt(du * di)
                })
                .collect(),
        );
        Self {
            n_users,
            n_items,
            adjacency,
            normalized,
            user_degrees,
            item_degrees,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn has_edge(&self, user: u32, item: u32) -> bool {
        self.adjacency.contains(user as usize, item)
    }

    /// Items a user interacted with in training, ascending.
    pub fn user_items(&self, user: u32) -> &[u32] {
        self.adjacency.row(user as usize).0
    }

    pub fn density(&self) -> f64 {
        self.n_edges() as f64 / (self.n_users as f64 * self.n_items as f64)
    }
}

/// Builds the training graph; degrees come from train edges only.
pub fn build_graph(split: &DatasetSplit) -> Result<InteractionGraph, DataError> {
    if split.train.is_empty() {
        return Err(DataError::EmptyTrain);
    }
    Ok(InteractionGraph::from_edges(
        split.n_users,
        split.n_items,
        &split.train,
    ))
}

/// Users bucketed into equal-count groups of increasing training degree.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityGroups {
    /// Inclusive `(min_degree, max_degree)` per group.
    pub boundaries: Vec<(u32, u32)>,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl SparsityGroups {
    pub fn n_groups(&self) -> usize {
        self.sizes.len()
    }
}

/// Sorts users by `(train degree, index)` and cuts the order into `n_groups`
/// contiguous buckets; the remainder goes one-per-bucket to the lowest ones.
pub fn group_users_by_degree(
    graph: &InteractionGraph,
    n_groups: usize,
) -> Result<SparsityGroups, DataError> {
    if n_groups < 2 {
        return Err(DataError::BadGroupCount(n_groups));
    }
    let n = graph.n_users;
    if n < n_groups {
        return Err(DataError::TooFewUsers {
            users: n,
            groups: n_groups,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&u| (graph.user_degrees[u], u));

    let base = n / n_groups;
    let rem = n % n_groups;
    let mut assignment = alloc::vec![0usize; n];
    let mut boundaries = Vec::with_capacity(n_groups);
    let mut sizes = Vec::with_capacity(n_groups);
    let mut start = 0;
    for g in 0..n_groups {
        let size = base + usize::from(g < rem);
        let members = &order[start..start + size];
        for &u in members {
            assignment[u] = g;
        }
        boundaries.push((
            graph.user_degrees[members[0]],
            graph.user_degrees[members[size - 1]],
        ));
        sizes.push(size);
        start += size;
    }
    Ok(SparsityGroups {
        boundaries,
        assignment,
        sizes,
    })
}
