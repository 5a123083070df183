//! Joint objective: BPR + λ₁·(InfoNCE_user + InfoNCE_item) + λ₂·‖Θ‖², with
//! analytic gradients w.r.t. the two base embedding tables.
//!
//! Both propagation channels are linear in the base embeddings, so the
//! backward pass only needs two facts:
//!
//! * the augmented views are `h_u = R̂ e_i` and `h_i = R̂ᵀ e_u`, so their
//!   gradients fold back into the final main-channel embeddings through the
//!   factored products `Q (Pᵀ ·)` and `P (Qᵀ ·)`;
//! * the main channel's layer-sum map is `Σ_l Mˡ` with the symmetric block
//!   operator `M = [[0, S], [Sᵀ, 0]]`, so its adjoint is itself and the
//!   gradient w.r.t. layer 0 is obtained by running the same propagation on
//!   the gradient tables.
//!
//! Batch losses are means over triplets / anchor nodes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::InteractionGraph;
use crate::lfa::LatentFactors;
use crate::linalg::{dot, norm, Matrix};
use crate::propagation::{
    augmented_channel_forward, edge_dropout, forward_with_matrix, propagate_layers,
    EmbeddingTables,
};
use crate::sparse::CsrMatrix;

/// Norms below this make cosine similarity 0.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// BPR triplets plus the deduplicated (ascending) node sets they touch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Minibatch {
    pub triplets: Vec<(u32, u32, u32)>,
    pub batch_users: Vec<u32>,
    pub batch_items: Vec<u32>,
}

impl Minibatch {
    pub fn new(triplets: Vec<(u32, u32, u32)>) -> Self {
        let mut batch_users: Vec<u32> = triplets.iter().map(|t| t.0).collect();
        batch_users.sort_unstable();
        batch_users.dedup();
        let mut batch_items: Vec<u32> = triplets.iter().flat_map(|t| [t.1, t.2]).collect();
        batch_items.sort_unstable();
        batch_items.dedup();
        Self {
            triplets,
            batch_users,
            batch_items,
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Which views serve as InfoNCE negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClNegatives {
    /// Other nodes of the same type in the batch.
    #[default]
    Batch,
    /// Every node of the same type.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointHyper {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub layers: usize,
    pub dropout_rate: f64,
    pub cl_negatives: ClNegatives,
}

impl Default for JointHyper {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 1e-6,
            tau: 0.5,
            layers: 2,
            dropout_rate: 0.1,
            cl_negatives: ClNegatives::Batch,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub cl_user: f64,
    pub cl_item: f64,
    pub l2: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

impl LossBreakdown {
    pub fn compose(bpr: f64, cl_user: f64, cl_item: f64, l2: f64, hyper: &JointHyper) -> Self {
        Self {
            bpr,
            cl_user,
            cl_item,
            l2,
            total: bpr + hyper.lambda1 * (cl_user + cl_item) + hyper.lambda2 * l2,
            lambda1: hyper.lambda1,
            lambda2: hyper.lambda2,
            tau: hyper.tau,
        }
    }
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Mean of `−log σ(ŷ⁺ − ŷ⁻)` over `(ŷ⁺, ŷ⁻)` pairs.
pub fn bpr_loss(scores: &[(f64, f64)]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|&(pos, neg)| softplus(neg - pos)).sum::<f64>() / scores.len() as f64
}

/// Cosine similarity, 0 when either norm is below [`COSINE_EPS`].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_EPS || nb < COSINE_EPS {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// In-batch InfoNCE: row `k` of `anchor` is positive with row `k` of
/// `positive` and negative with every other row. Mean over rows.
pub fn infonce_loss(anchor: &Matrix, positive: &Matrix, tau: f64) -> f64 {
    assert_eq!(anchor.shape(), positive.shape());
    assert!(anchor.rows() >= 2, "InfoNCE needs at least two nodes");
    assert!(tau > 0.0);
    let nodes: Vec<u32> = (0..anchor.rows() as u32).collect();
    let slots: Vec<usize> = (0..anchor.rows()).collect();
    info_nce(anchor, positive, &nodes, &nodes, &slots, tau, 0.0, None)
}

/// Sum of squared base-embedding entries.
pub fn l2_penalty(emb: &EmbeddingTables) -> f64 {
    emb.user.squared_norm() + emb.item.squared_norm()
}

/// InfoNCE over `anchors` (rows of `e`) against `candidates` (rows of `h`);
/// `positive_slot[k]` is the position in `candidates` of anchor `k`'s own
/// view. When `grads` is given, `weight · ∂loss` is accumulated into
/// `(∂e, ∂h)`.
#[allow(clippy::too_many_arguments)]
fn info_nce(
    e: &Matrix,
    h: &Matrix,
    anchors: &[u32],
    candidates: &[u32],
    positive_slot: &[usize],
    tau: f64,
    weight: f64,
    mut grads: Option<(&mut Matrix, &mut Matrix)>,
) -> f64 {
    let n = anchors.len();
    let cand_norms: Vec<f64> = candidates.iter().map(|&c| norm(h.row(c as usize))).collect();
    let mut logits = vec![0.0; candidates.len()];
    let mut cosines = vec![0.0; candidates.len()];
    let mut degenerate = false;
    let mut total = 0.0;
    let coef_scale = weight / (n as f64 * tau);

    for (k, &a) in anchors.iter().enumerate() {
        let ea = e.row(a as usize);
        let na = norm(ea);
        for (slot, &c) in candidates.iter().enumerate() {
            let nc = cand_norms[slot];
            cosines[slot] = if na < COSINE_EPS || nc < COSINE_EPS {
                degenerate = true;
                0.0
            } else {
                dot(ea, h.row(c as usize)) / (na * nc)
            };
            logits[slot] = cosines[slot] / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|&l| libm::exp(l - max)).sum();
        let log_z = max + libm::log(sum_exp);
        total += log_z - logits[positive_slot[k]];

        let Some((ge, gh)) = grads.as_mut() else {
            continue;
        };
        if na < COSINE_EPS {
            continue;
        }
        for (slot, &c) in candidates.iter().enumerate() {
            let nc = cand_norms[slot];
            if nc < COSINE_EPS {
                continue;
            }
            let mut coef = libm::exp(logits[slot] - log_z);
            if slot == positive_slot[k] {
                coef -= 1.0;
            }
            let coef = coef * coef_scale;
            if coef == 0.0 {
                continue;
            }
            let s = cosines[slot];
            let hc = h.row(c as usize);
            let inv = 1.0 / (na * nc);
            let ge_row = ge.row_mut(a as usize);
            for (g, (&x, &y)) in ge_row.iter_mut().zip(ea.iter().zip(hc)) {
                *g += coef * (y * inv - s * x / (na * na));
            }
            let gh_row = gh.row_mut(c as usize);
            for (g, (&x, &y)) in gh_row.iter_mut().zip(ea.iter().zip(hc)) {
                *g += coef * (x * inv - s * y / (nc * nc));
            }
        }
    }
    if degenerate {
        log::warn!("zero-norm representation in InfoNCE; cosine treated as 0");
    }
    total / n as f64
}

fn contrastive_term(
    e: &Matrix,
    h: &Matrix,
    batch: &[u32],
    negatives: ClNegatives,
    tau: f64,
    weight: f64,
    grads: Option<(&mut Matrix, &mut Matrix)>,
) -> f64 {
    if batch.len() < 2 {
        return 0.0;
    }
    match negatives {
        ClNegatives::Batch => {
            let slots: Vec<usize> = (0..batch.len()).collect();
            info_nce(e, h, batch, batch, &slots, tau, weight, grads)
        }
        ClNegatives::Full => {
            let all: Vec<u32> = (0..h.rows() as u32).collect();
            let slots: Vec<usize> = batch.iter().map(|&b| b as usize).collect();
            info_nce(e, h, batch, &all, &slots, tau, weight, grads)
        }
    }
}

/// Draws this step's dropout mask and evaluates the joint loss and its
/// gradients.
pub fn joint_loss_and_gradients(
    graph: &InteractionGraph,
    factors: &LatentFactors,
    emb: &EmbeddingTables,
    batch: &Minibatch,
    hyper: &JointHyper,
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, EmbeddingTables), ObjectiveError> {
    let propagation = edge_dropout(&graph.normalized, hyper.dropout_rate, rng);
    loss_and_gradients_with_matrix(propagation, factors, emb, batch, hyper)
}

/// Joint loss and gradients for a fixed propagation matrix (a realized
/// dropout mask, or `Ã` itself).
pub fn loss_and_gradients_with_matrix(
    propagation: CsrMatrix,
    factors: &LatentFactors,
    emb: &EmbeddingTables,
    batch: &Minibatch,
    hyper: &JointHyper,
) -> Result<(LossBreakdown, EmbeddingTables), ObjectiveError> {
    let states = forward_with_matrix(propagation, emb, hyper.layers);
    let e_user = states.final_user();
    let e_item = states.final_item();
    let aug = augmented_channel_forward(factors, &states);

    let d = emb.dim();
    let mut g_eu = Matrix::zeros(e_user.rows(), d);
    let mut g_ei = Matrix::zeros(e_item.rows(), d);
    let mut g_hu = Matrix::zeros(e_user.rows(), d);
    let mut g_hi = Matrix::zeros(e_item.rows(), d);

    // BPR
    let mut bpr = 0.0;
    if !batch.is_empty() {
        let inv_b = 1.0 / batch.len() as f64;
        for &(u, pos, neg) in &batch.triplets {
            let (u, pos, neg) = (u as usize, pos as usize, neg as usize);
            let eu = e_user.row(u);
            let x = dot(eu, e_item.row(pos)) - dot(eu, e_item.row(neg));
            bpr += softplus(-x);
            let g = -sigmoid(-x) * inv_b;
            for k in 0..d {
                let diff = e_item.get(pos, k) - e_item.get(neg, k);
                let eu_k = e_user.get(u, k);
                g_eu.row_mut(u)[k] += g * diff;
                g_ei.row_mut(pos)[k] += g * eu_k;
                g_ei.row_mut(neg)[k] -= g * eu_k;
            }
        }
        bpr *= inv_b;
    }

    // contrastive terms; gradients only when they contribute
    let want = hyper.lambda1 != 0.0;
    let cl_user = contrastive_term(
        &e_user,
        &aug.user,
        &batch.batch_users,
        hyper.cl_negatives,
        hyper.tau,
        hyper.lambda1,
        want.then_some((&mut g_eu, &mut g_hu)),
    );
    let cl_item = contrastive_term(
        &e_item,
        &aug.item,
        &batch.batch_items,
        hyper.cl_negatives,
        hyper.tau,
        hyper.lambda1,
        want.then_some((&mut g_ei, &mut g_hi)),
    );

    let l2 = l2_penalty(emb);
    let losses = LossBreakdown::compose(bpr, cl_user, cl_item, l2, hyper);
    for (value, term) in [
        (losses.bpr, "bpr loss"),
        (losses.cl_user, "user contrastive loss"),
        (losses.cl_item, "item contrastive loss"),
        (losses.l2, "l2 penalty"),
    ] {
        if !value.is_finite() {
            return Err(ObjectiveError::NonFinite(term));
        }
    }

    // h_u = P Qᵀ e_i and h_i = Q Pᵀ e_u
    if want {
        g_ei.add_assign(&factors.q.mul(&factors.p.t_mul(&g_hu)));
        g_eu.add_assign(&factors.p.mul(&factors.q.t_mul(&g_hi)));
    }

    // adjoint of the layer sum is the layer sum itself
    let (user_layers, item_layers) =
        propagate_layers(&states.propagation, &g_eu, &g_ei, hyper.layers);
    let mut grad_user = Matrix::zeros(emb.user.rows(), d);
    let mut grad_item = Matrix::zeros(emb.item.rows(), d);
    for (ul, il) in user_layers.iter().zip(&item_layers) {
        grad_user.add_assign(ul);
        grad_item.add_assign(il);
    }
    grad_user.axpy(2.0 * hyper.lambda2, &emb.user);
    grad_item.axpy(2.0 * hyper.lambda2, &emb.item);

    if !grad_user.is_finite() {
        return Err(ObjectiveError::NonFinite("user embedding gradient"));
    }
    if !grad_item.is_finite() {
        return Err(ObjectiveError::NonFinite("item embedding gradient"));
    }
    Ok((losses, EmbeddingTables::new(grad_user, grad_item)))
}
