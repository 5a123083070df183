#![allow(dead_code)]

use lfagcl_core::data::{Interaction, InteractionGraph};
use lfagcl_core::lfa::LatentFactors;
use lfagcl_core::linalg::Matrix;
use lfagcl_core::propagation::EmbeddingTables;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Each user gets 1..=max_degree distinct random items; some users may be
/// left empty when `allow_empty` is set.
pub fn random_edges(
    n_users: usize,
    n_items: usize,
    max_degree: usize,
    allow_empty: bool,
    rng: &mut impl Rng,
) -> Vec<Interaction> {
    let mut edges = Vec::new();
    for u in 0..n_users {
        let lo = if allow_empty { 0 } else { 1 };
        let degree = rng.gen_range(lo..=max_degree).min(n_items);
        let mut items: Vec<u32> = Vec::new();
        while items.len() < degree {
            let i = rng.gen_range(0..n_items as u32);
            if !items.contains(&i) {
                items.push(i);
            }
        }
        edges.extend(items.into_iter().map(|i| Interaction::new(u as u32, i)));
    }
    edges
}

pub fn random_graph(n_users: usize, n_items: usize, max_degree: usize, rng: &mut impl Rng) -> InteractionGraph {
    let edges = random_edges(n_users, n_items, max_degree, false, rng);
    InteractionGraph::from_edges(n_users, n_items, &edges)
}

pub fn random_factors(n_users: usize, n_items: usize, f: usize, rng: &mut impl Rng) -> LatentFactors {
    LatentFactors::new(
        random_matrix(n_users, f, 1.0, rng),
        random_matrix(n_items, f, 1.0, rng),
        0.1,
    )
}

pub fn random_embeddings(n_users: usize, n_items: usize, d: usize, rng: &mut impl Rng) -> EmbeddingTables {
    EmbeddingTables::new(
        random_matrix(n_users, d, 0.5, rng),
        random_matrix(n_items, d, 0.5, rng),
    )
}

pub fn to_na(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn max_rel_diff(a: &nalgebra::DMatrix<f64>, b: &Matrix) -> f64 {
    let bn = to_na(b);
    let scale = 1.0 + a.amax();
    (a - bn).amax() / scale
}
