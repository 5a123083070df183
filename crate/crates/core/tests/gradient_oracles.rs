mod common;

use common::*;
use lfagcl_core::data::InteractionGraph;
use lfagcl_core::lfa::LatentFactors;
use lfagcl_core::objectives::{
    loss_and_gradients_with_matrix, ClNegatives, JointHyper, LossBreakdown, Minibatch,
};
use lfagcl_core::propagation::EmbeddingTables;
use lfagcl_core::trainer::sample_minibatch;

const STEP: f64 = 1e-5;

struct Instance {
    graph: InteractionGraph,
    factors: LatentFactors,
    emb: EmbeddingTables,
    batch: Minibatch,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let graph = random_graph(12, 15, 4, &mut r);
    let factors = random_factors(12, 15, 2, &mut r);
    let emb = random_embeddings(12, 15, 4, &mut r);
    let (batch, skipped) = sample_minibatch(&graph, 6, &mut r);
    assert_eq!(skipped, 0);
    Instance {
        graph,
        factors,
        emb,
        batch,
    }
}

fn hyper(negatives: ClNegatives) -> JointHyper {
    JointHyper {
        lambda1: 0.01,
        lambda2: 1e-6,
        tau: 0.5,
        layers: 2,
        dropout_rate: 0.0,
        cl_negatives: negatives,
    }
}

fn total(inst: &Instance, emb: &EmbeddingTables, h: &JointHyper) -> f64 {
    loss_and_gradients_with_matrix(inst.graph.normalized.clone(), &inst.factors, emb, &inst.batch, h)
        .unwrap()
        .0
        .total
}

/// Max relative error of analytic vs central-difference gradient entries.
fn max_fd_error(inst: &Instance, h: &JointHyper) -> f64 {
    let (_, grads) =
        loss_and_gradients_with_matrix(inst.graph.normalized.clone(), &inst.factors, &inst.emb, &inst.batch, h)
            .unwrap();
    let mut worst: f64 = 0.0;
    for table in 0..2 {
        let len = if table == 0 { inst.emb.user.as_slice().len() } else { inst.emb.item.as_slice().len() };
        for k in 0..len {
            let mut plus = inst.emb.clone();
            let mut minus = inst.emb.clone();
            let (p, m, analytic) = if table == 0 {
                (&mut plus.user, &mut minus.user, grads.user.as_slice()[k])
            } else {
                (&mut plus.item, &mut minus.item, grads.item.as_slice()[k])
            };
            p.as_mut_slice()[k] += STEP;
            m.as_mut_slice()[k] -= STEP;
            let numeric = (total(inst, &plus, h) - total(inst, &minus, h)) / (2.0 * STEP);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let err = max_fd_error(&instance(seed), &hyper(ClNegatives::Batch));
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn full_negative_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let err = max_fd_error(&instance(100 + seed), &hyper(ClNegatives::Full));
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn large_contrastive_weight_gradient_matches() {
    let mut h = hyper(ClNegatives::Batch);
    h.lambda1 = 1.0;
    h.tau = 0.2;
    h.layers = 3;
    let err = max_fd_error(&instance(77), &h);
    assert!(err < 1e-4, "max relative error {err}");
}

/// Dense route: final = T·E with T = Σ_l Mˡ over the block adjacency
/// M = [[0, S], [Sᵀ, 0]]; the base gradient is Tᵀ·∂final.
fn dense_bpr_gradient(inst: &Instance, layers: usize) -> (nalgebra::DMatrix<f64>, f64) {
    let (nu, ni) = (inst.graph.n_users, inst.graph.n_items);
    let s = to_na(&inst.graph.normalized.to_dense());
    let n = nu + ni;
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    m.view_mut((0, nu), (nu, ni)).copy_from(&s);
    m.view_mut((nu, 0), (ni, nu)).copy_from(&s.transpose());
    let mut t = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut power = nalgebra::DMatrix::<f64>::identity(n, n);
    for _ in 0..layers {
        power = &power * &m;
        t += &power;
    }
    let d = inst.emb.dim();
    let mut base = nalgebra::DMatrix::<f64>::zeros(n, d);
    base.view_mut((0, 0), (nu, d)).copy_from(&to_na(&inst.emb.user));
    base.view_mut((nu, 0), (ni, d)).copy_from(&to_na(&inst.emb.item));
    let fin = &t * &base;
    let mut g = nalgebra::DMatrix::<f64>::zeros(n, d);
    let b = inst.batch.len() as f64;
    let mut loss = 0.0;
    for &(u, p, q) in &inst.batch.triplets {
        let (u, p, q) = (u as usize, nu + p as usize, nu + q as usize);
        let x = fin.row(u).dot(&fin.row(p)) - fin.row(u).dot(&fin.row(q));
        loss += -(1.0 / (1.0 + (-x).exp())).ln() / b;
        let coef = -1.0 / (1.0 + x.exp()) / b;
        let diff = fin.row(p) - fin.row(q);
        let eu = fin.row(u).clone_owned();
        for k in 0..d {
            g[(u, k)] += coef * diff[k];
            g[(p, k)] += coef * eu[k];
            g[(q, k)] -= coef * eu[k];
        }
    }
    (t.transpose() * g, loss)
}

#[test]
fn without_auxiliary_terms_gradient_is_pure_bpr() {
    for seed in 0..5 {
        let inst = instance(200 + seed);
        let h = JointHyper {
            lambda1: 0.0,
            lambda2: 0.0,
            ..hyper(ClNegatives::Batch)
        };
        let (losses, grads) = loss_and_gradients_with_matrix(
            inst.graph.normalized.clone(),
            &inst.factors,
            &inst.emb,
            &inst.batch,
            &h,
        )
        .unwrap();
        let (dense, dense_loss) = dense_bpr_gradient(&inst, 2);
        assert!((losses.total - dense_loss).abs() < 1e-12);
        let nu = inst.graph.n_users;
        let d = inst.emb.dim();
        for u in 0..nu {
            for k in 0..d {
                assert!((grads.user.get(u, k) - dense[(u, k)]).abs() < 1e-12);
            }
        }
        for i in 0..inst.graph.n_items {
            for k in 0..d {
                assert!((grads.item.get(i, k) - dense[(nu + i, k)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_embeddings_give_ln2_and_finite_gradients() {
    let mut inst = instance(9);
    inst.emb = EmbeddingTables::zeros(12, 15, 4);
    let (losses, grads) = loss_and_gradients_with_matrix(
        inst.graph.normalized.clone(),
        &inst.factors,
        &inst.emb,
        &inst.batch,
        &hyper(ClNegatives::Batch),
    )
    .unwrap();
    assert!((losses.bpr - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(grads.is_finite());
}

fn breakdown(inst: &Instance, h: &JointHyper) -> LossBreakdown {
    loss_and_gradients_with_matrix(inst.graph.normalized.clone(), &inst.factors, &inst.emb, &inst.batch, h)
        .unwrap()
        .0
}

#[test]
fn total_is_the_weighted_sum_of_terms() {
    for seed in 0..10 {
        let inst = instance(300 + seed);
        let h = JointHyper {
            lambda1: 0.3,
            lambda2: 0.01,
            ..hyper(ClNegatives::Batch)
        };
        let l = breakdown(&inst, &h);
        let recomposed = l.bpr + h.lambda1 * (l.cl_user + l.cl_item) + h.lambda2 * l.l2;
        assert!((l.total - recomposed).abs() < 1e-12);
        assert_eq!((l.lambda1, l.lambda2, l.tau), (0.3, 0.01, 0.5));
    }
}

#[test]
fn batch_order_does_not_change_losses() {
    let inst = instance(5);
    let h = hyper(ClNegatives::Batch);
    let base = breakdown(&inst, &h);
    let mut reversed = inst.batch.triplets.clone();
    reversed.reverse();
    let shuffled = Instance {
        batch: Minibatch::new(reversed),
        ..inst
    };
    let other = breakdown(&shuffled, &h);
    for (a, b) in [
        (base.bpr, other.bpr),
        (base.cl_user, other.cl_user),
        (base.cl_item, other.cl_item),
        (base.l2, other.l2),
    ] {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gradients_are_deterministic_given_the_mask() {
    let inst = instance(8);
    let h = hyper(ClNegatives::Batch);
    let run = || {
        loss_and_gradients_with_matrix(inst.graph.normalized.clone(), &inst.factors, &inst.emb, &inst.batch, &h)
            .unwrap()
            .1
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_embeddings_are_reported() {
    let mut inst = instance(1);
    inst.emb.user.set(0, 0, f64::NAN);
    let err = loss_and_gradients_with_matrix(
        inst.graph.normalized.clone(),
        &inst.factors,
        &inst.emb,
        &inst.batch,
        &hyper(ClNegatives::Batch),
    );
    assert!(err.is_err());
}
