//! The two propagation channels.
//!
//! Main channel: `L` rounds of LightGCN aggregation over the (edge-dropped)
//! normalized adjacency `S`,
//!
//! ```text
//! U_l = S · I_{l-1},   I_l = Sᵀ · U_{l-1},   e = Σ_{l=0}^{L} layer_l
//! ```
//!
//! Augmented channel: each main-channel layer is sent one hop through
//! `R̂ = P Qᵀ`, always in factored order so that no `|U|×|I|` product exists:
//!
//! ```text
//! h_u = Σ_l P · (Qᵀ · I_l),   h_i = Σ_l Q · (Pᵀ · U_l)
//! ```

use alloc::vec::Vec;

use rand::Rng;

use crate::data::InteractionGraph;
use crate::lfa::LatentFactors;
use crate::linalg::{dot, Matrix};
use crate::sparse::CsrMatrix;

/// Trainable layer-0 embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTables {
    pub user: Matrix,
    pub item: Matrix,
}

impl EmbeddingTables {
    pub fn new(user: Matrix, item: Matrix) -> Self {
        assert_eq!(user.cols(), item.cols(), "embedding widths differ");
        Self { user, item }
    }

    pub fn zeros(n_users: usize, n_items: usize, dim: usize) -> Self {
        Self::new(Matrix::zeros(n_users, dim), Matrix::zeros(n_items, dim))
    }

    /// Uniform in `±√(6 / (rows + dim))` per table.
    pub fn xavier(n_users: usize, n_items: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut table = |rows: usize| {
            let bound = libm::sqrt(6.0 / (rows + dim) as f64);
            Matrix::from_fn(rows, dim, |_, _| rng.gen_range(-bound..=bound))
        };
        let user = table(n_users);
        let item = table(n_items);
        Self::new(user, item)
    }

    pub fn dim(&self) -> usize {
        self.user.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.user.is_finite() && self.item.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer states of the main channel for one forward pass.
#[derive(Clone, Debug)]
pub struct LayerStates {
    pub user_layers: Vec<Matrix>,
    pub item_layers: Vec<Matrix>,
    /// The propagation matrix actually used: `Ã` after this pass's dropout.
    pub propagation: CsrMatrix,
}

impl LayerStates {
    pub fn n_layers(&self) -> usize {
        self.user_layers.len() - 1
    }

    pub fn final_user(&self) -> Matrix {
        layer_sum(&self.user_layers)
    }

    pub fn final_item(&self) -> Matrix {
        layer_sum(&self.item_layers)
    }
}

fn layer_sum(layers: &[Matrix]) -> Matrix {
    let mut acc = layers[0].clone();
    for l in &layers[1..] {
        acc.add_assign(l);
    }
    acc
}

/// Final augmented-view representations.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedStates {
    pub user: Matrix,
    pub item: Matrix,
}

/// Keeps each stored entry with probability `1 − rate` and rescales kept
/// values by `1 / (1 − rate)`. `rate == 0` returns the input unchanged.
pub fn edge_dropout(normalized: &CsrMatrix, rate: f64, rng: &mut impl Rng) -> CsrMatrix {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return normalized.clone();
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    normalized.filter(|_, _, v| rng.gen_bool(keep).then_some(v * scale))
}

/// Runs `layers` rounds of bipartite aggregation over `s`, returning every
/// layer including layer 0.
pub fn propagate_layers(
    s: &CsrMatrix,
    user0: &Matrix,
    item0: &Matrix,
    layers: usize,
) -> (Vec<Matrix>, Vec<Matrix>) {
    let mut users = Vec::with_capacity(layers + 1);
    let mut items = Vec::with_capacity(layers + 1);
    users.push(user0.clone());
    items.push(item0.clone());
    for l in 1..=layers {
        let next_user = s.mul_dense(&items[l - 1]);
        let next_item = s.t_mul_dense(&users[l - 1]);
        users.push(next_user);
        items.push(next_item);
    }
    (users, items)
}

/// Main-channel forward pass. In `Mode::Train` a fresh dropout mask is drawn
/// from `rng` and shared by both directions and all layers; `Mode::Eval`
/// never drops.
pub fn main_channel_forward(
    graph: &InteractionGraph,
    emb: &EmbeddingTables,
    layers: usize,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> LayerStates {
    let propagation = match mode {
        Mode::Train => edge_dropout(&graph.normalized, dropout_rate, rng),
        Mode::Eval => graph.normalized.clone(),
    };
    forward_with_matrix(propagation, emb, layers)
}

/// Main-channel forward pass over an explicit propagation matrix.
pub fn forward_with_matrix(propagation: CsrMatrix, emb: &EmbeddingTables, layers: usize) -> LayerStates {
    let (user_layers, item_layers) = propagate_layers(&propagation, &emb.user, &emb.item, layers);
    LayerStates {
        user_layers,
        item_layers,
        propagation,
    }
}

/// Final main-channel embeddings with dropout bypassed.
pub fn eval_embeddings(graph: &InteractionGraph, emb: &EmbeddingTables, layers: usize) -> (Matrix, Matrix) {
    let states = forward_with_matrix(graph.normalized.clone(), emb, layers);
    (states.final_user(), states.final_item())
}

/// Augmented channel over the shared main-channel layers.
pub fn augmented_channel_forward(factors: &LatentFactors, states: &LayerStates) -> AugmentedStates {
    let d = states.user_layers[0].cols();
    let mut user = Matrix::zeros(factors.n_users(), d);
    let mut item = Matrix::zeros(factors.n_items(), d);
    for (u_l, i_l) in states.user_layers.iter().zip(&states.item_layers) {
        // f×d intermediates
        let q_t_items = factors.q.t_mul(i_l);
        let p_t_users = factors.p.t_mul(u_l);
        user.add_assign(&factors.p.mul(&q_t_items));
        item.add_assign(&factors.q.mul(&p_t_users));
    }
    AugmentedStates { user, item }
}

/// `ŷ = e_u · e_i`
#[inline]
pub fn score_pair(user_final: &Matrix, item_final: &Matrix, user: usize, item: usize) -> f64 {
    dot(user_final.row(user), item_final.row(item))
}

/// Scores of one user against every item.
pub fn score_row(user_final: &Matrix, item_final: &Matrix, user: usize) -> Vec<f64> {
    let e_u = user_final.row(user);
    (0..item_final.rows())
        .map(|i| dot(e_u, item_final.row(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = InteractionGraph::from_edges(2, 3, &[Interaction::new(0, 1), Interaction::new(1, 2)]);
        assert_eq!(edge_dropout(&g.normalized, 0.0, &mut rng()), g.normalized);
    }

    #[test]
    fn kept_values_are_rescaled_exactly() {
        let edges: Vec<_> = (0..50u32).map(|i| Interaction::new(i % 5, i)).collect();
        let g = InteractionGraph::from_edges(5, 50, &edges);
        let rate = 0.3;
        let dropped = edge_dropout(&g.normalized, rate, &mut rng());
        assert!(dropped.nnz() < g.normalized.nnz());
        for (u, i, v) in dropped.iter() {
            assert_eq!(v, g.normalized.get(u, i).unwrap() * (1.0 / (1.0 - rate)));
        }
    }

    #[test]
    fn kept_fraction_concentrates() {
        let edges: Vec<_> = (0..100_000u32).map(|k| Interaction::new(k / 1000, k % 1000)).collect();
        let g = InteractionGraph::from_edges(100, 1000, &edges);
        let dropped = edge_dropout(&g.normalized, 0.5, &mut rng());
        let frac = dropped.nnz() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "kept fraction {frac}");
    }

    #[test]
    fn single_edge_one_hop() {
        let g = InteractionGraph::from_edges(1, 1, &[Interaction::new(0, 0)]);
        let emb = EmbeddingTables::new(
            Matrix::from_vec(1, 2, alloc::vec![1.0, 2.0]),
            Matrix::from_vec(1, 2, alloc::vec![10.0, 20.0]),
        );
        let states = main_channel_forward(&g, &emb, 1, 0.0, Mode::Train, &mut rng());
        assert_eq!(states.final_user().as_slice(), &[11.0, 22.0]);
        assert_eq!(states.n_layers(), 1);
    }

    #[test]
    fn zero_degree_user_keeps_base_row() {
        let g = InteractionGraph::from_edges(2, 2, &[Interaction::new(0, 0), Interaction::new(0, 1)]);
        let emb = EmbeddingTables::new(
            Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64 + 1.0),
            Matrix::from_fn(2, 3, |r, c| (r + c) as f64 - 0.5),
        );
        let states = main_channel_forward(&g, &emb, 2, 0.0, Mode::Eval, &mut rng());
        for l in 1..=2 {
            assert!(states.user_layers[l].row(1).iter().all(|&v| v == 0.0));
        }
        assert_eq!(states.final_user().row(1), emb.user.row(1));
    }

    #[test]
    fn identity_factors_sum_item_layers() {
        let n = 3;
        let edges: Vec<_> = (0..n as u32).map(|k| Interaction::new(k, (k + 1) % 3)).collect();
        let g = InteractionGraph::from_edges(n, n, &edges);
        let emb = EmbeddingTables::new(
            Matrix::from_fn(n, 2, |r, c| r as f64 - c as f64),
            Matrix::from_fn(n, 2, |r, c| (r * c) as f64 + 0.5),
        );
        let states = main_channel_forward(&g, &emb, 2, 0.0, Mode::Eval, &mut rng());
        let factors = LatentFactors::new(Matrix::identity(n), Matrix::identity(n), 0.0);
        let aug = augmented_channel_forward(&factors, &states);
        assert_eq!(aug.user, states.final_item());
        assert_eq!(aug.item, states.final_user());
    }

    #[test]
    fn zero_p_annihilates_augmented_view() {
        let g = InteractionGraph::from_edges(2, 3, &[Interaction::new(0, 1), Interaction::new(1, 2)]);
        let emb = EmbeddingTables::xavier(2, 3, 4, &mut rng());
        let states = main_channel_forward(&g, &emb, 2, 0.0, Mode::Eval, &mut rng());
        let factors = LatentFactors::new(Matrix::zeros(2, 1), Matrix::from_fn(3, 1, |r, _| r as f64), 0.0);
        let aug = augmented_channel_forward(&factors, &states);
        assert_eq!(aug.user.max_abs(), 0.0);
        assert_eq!(aug.item.max_abs(), 0.0);
    }

    #[test]
    fn pair_scores() {
        let u = Matrix::from_vec(1, 2, alloc::vec![1.0, 0.0]);
        let i = Matrix::from_vec(2, 2, alloc::vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(score_pair(&u, &i, 0, 0), 0.0);
        assert_eq!(score_pair(&u, &i, 0, 1), 1.0);
        assert_eq!(score_row(&u, &i, 0), alloc::vec![0.0, 1.0]);
    }
}
