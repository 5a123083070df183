mod common;

use common::*;
use lfagcl_core::data::{group_users_by_degree, Interaction, InteractionGraph};
use lfagcl_core::eval::{
    evaluate, ndcg_user, recall_at_k, top_k, EvalOptions, NdcgVariant, RankingResult,
};
use lfagcl_core::linalg::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;

fn brute_recall(list: &[u32], truth: &[u32], k: usize) -> f64 {
    let hits = list.iter().take(k).filter(|i| truth.contains(i)).count();
    hits as f64 / truth.len() as f64
}

fn brute_ndcg(list: &[u32], truth: &[u32], k: usize, log: fn(f64) -> f64) -> f64 {
    let mut dcg = 0.0;
    for n in 1..=k.min(list.len()) {
        if truth.contains(&list[n - 1]) {
            dcg += 1.0 / log(n as f64 + 1.0);
        }
    }
    let ideal: f64 = (1..=k).map(|n| 1.0 / log(n as f64 + 1.0)).sum();
    dcg / ideal
}

fn random_case(r: &mut impl Rng) -> (RankingResult, usize) {
    let n_items = r.gen_range(5..60u32);
    let mut all: Vec<u32> = (0..n_items).collect();
    all.shuffle(r);
    let k = r.gen_range(1..=n_items as usize);
    let list_len = r.gen_range(k.min(n_items as usize)..=n_items as usize);
    let list = all[..list_len].to_vec();
    all.shuffle(r);
    let n_truth = r.gen_range(1..=n_items as usize);
    let mut truth = all[..n_truth].to_vec();
    truth.sort_unstable();
    (
        RankingResult {
            user: 0,
            top_k_items: list,
            truth,
        },
        k,
    )
}

#[test]
fn per_user_metrics_match_brute_force() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let (case, k) = random_case(&mut r);
        let recall = recall_at_k(&case, k);
        let ndcg = ndcg_user(&case, k, NdcgVariant::Literal);
        assert!((recall - brute_recall(&case.top_k_items, &case.truth, k)).abs() < 1e-12);
        assert!((ndcg - brute_ndcg(&case.top_k_items, &case.truth, k, f64::ln)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&recall) && (0.0..=1.0).contains(&ndcg));
    }
}

#[test]
fn ndcg_does_not_depend_on_log_base() {
    let mut r = rng(2);
    for _ in 0..200 {
        let (case, k) = random_case(&mut r);
        let natural = brute_ndcg(&case.top_k_items, &case.truth, k, f64::ln);
        let binary = brute_ndcg(&case.top_k_items, &case.truth, k, f64::log2);
        assert!((natural - binary).abs() < 1e-12);
        assert!((ndcg_user(&case, k, NdcgVariant::Literal) - binary).abs() < 1e-12);
    }
}

#[test]
fn standard_variant_uses_truncated_ideal() {
    let case = RankingResult {
        user: 0,
        top_k_items: vec![3, 1, 2],
        truth: vec![3],
    };
    assert!((ndcg_user(&case, 3, NdcgVariant::Standard) - 1.0).abs() < 1e-15);
    let literal = 1.0 / (1.0 + 1.0 / 3f64.log2() + 0.5);
    assert!((ndcg_user(&case, 3, NdcgVariant::Literal) - literal).abs() < 1e-12);
}

/// Full sort of every unmasked item, ties broken by ascending index.
fn full_sort(scores: &[f64], masked: &[u32]) -> Vec<u32> {
    let mut items: Vec<u32> = (0..scores.len() as u32).filter(|i| !masked.contains(i)).collect();
    items.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    items
}

struct Setup {
    graph: InteractionGraph,
    users: Matrix,
    items: Matrix,
    test: Vec<Interaction>,
}

fn setup(seed: u64, quantize: bool) -> Setup {
    let mut r = rng(seed);
    let (nu, ni) = (200, 300);
    let edges = random_edges(nu, ni, 15, false, &mut r);
    let graph = InteractionGraph::from_edges(nu, ni, &edges);
    let mut users = random_matrix(nu, 8, 1.0, &mut r);
    let mut items = random_matrix(ni, 8, 1.0, &mut r);
    if quantize {
        // coarse values force many exactly tied scores
        for m in [&mut users, &mut items] {
            for v in m.as_mut_slice() {
                *v = (*v * 2.0).round() / 2.0;
            }
        }
    }
    let mut test = Vec::new();
    for u in 0..nu as u32 {
        for _ in 0..r.gen_range(0..6) {
            let i = r.gen_range(0..ni as u32);
            if !graph.has_edge(u, i) && !test.contains(&Interaction::new(u, i)) {
                test.push(Interaction::new(u, i));
            }
        }
    }
    Setup { graph, users, items, test }
}

fn oracle_metrics(s: &Setup, k: usize, extra: Option<&[Interaction]>) -> (f64, f64, usize) {
    let (mut recall, mut ndcg, mut n) = (0.0, 0.0, 0);
    for u in 0..s.graph.n_users as u32 {
        let mut truth: Vec<u32> = s.test.iter().filter(|e| e.user == u).map(|e| e.item).collect();
        if truth.is_empty() {
            continue;
        }
        truth.sort_unstable();
        let mut masked = s.graph.user_items(u).to_vec();
        if let Some(extra) = extra {
            masked.extend(extra.iter().filter(|e| e.user == u).map(|e| e.item));
        }
        let scores: Vec<f64> = (0..s.graph.n_items)
            .map(|i| (0..8).map(|c| s.users.get(u as usize, c) * s.items.get(i, c)).sum())
            .collect();
        let list = full_sort(&scores, &masked);
        recall += brute_recall(&list, &truth, k);
        ndcg += brute_ndcg(&list, &truth, k, f64::log2);
        n += 1;
    }
    (recall / n as f64, ndcg / n as f64, n)
}

#[test]
fn all_ranking_matches_full_sort_oracle() {
    for quantize in [false, true] {
        let s = setup(3, quantize);
        let report = evaluate(&s.users, &s.items, &s.graph, &s.test, &[5, 20, 40], None, None, &EvalOptions::default())
            .unwrap();
        for k in [5, 20, 40] {
            let (recall, ndcg, n) = oracle_metrics(&s, k, None);
            let m = report.at(k).unwrap();
            assert_eq!(report.n_users_evaluated, n);
            assert!((m.recall - recall).abs() < 1e-12, "recall@{k}: {} vs {recall}", m.recall);
            assert!((m.ndcg - ndcg).abs() < 1e-12, "ndcg@{k}: {} vs {ndcg}", m.ndcg);
        }
    }
}

#[test]
fn extra_mask_matches_oracle_and_is_never_ranked() {
    let s = setup(4, false);
    let mut r = rng(40);
    let extra: Vec<Interaction> = (0..300)
        .map(|_| Interaction::new(r.gen_range(0..200), r.gen_range(0..300)))
        .filter(|e| !s.test.contains(e))
        .collect();
    let report = evaluate(&s.users, &s.items, &s.graph, &s.test, &[20], None, Some(&extra), &EvalOptions::default())
        .unwrap();
    let (recall, ndcg, _) = oracle_metrics(&s, 20, Some(&extra));
    assert!((report.at(20).unwrap().recall - recall).abs() < 1e-12);
    assert!((report.at(20).unwrap().ndcg - ndcg).abs() < 1e-12);
}

#[test]
fn training_positives_are_never_recommended() {
    let s = setup(5, false);
    for u in 0..200u32 {
        let scores: Vec<f64> = (0..300)
            .map(|i| (0..8).map(|c| s.users.get(u as usize, c) * s.items.get(i, c)).sum())
            .collect();
        let list = top_k(&scores, s.graph.user_items(u), 300);
        assert_eq!(list.len(), 300 - s.graph.user_items(u).len());
        assert!(list.iter().all(|i| !s.graph.has_edge(u, *i)));
    }
}

#[test]
fn masked_positive_with_top_score_is_skipped() {
    let graph = InteractionGraph::from_edges(1, 4, &[Interaction::new(0, 2)]);
    let users = Matrix::from_vec(1, 1, vec![1.0]);
    let items = Matrix::from_vec(4, 1, vec![0.1, 0.3, 100.0, 0.2]);
    let truth = [Interaction::new(0, 1)];
    let report = evaluate(&users, &items, &graph, &truth, &[1], None, None, &EvalOptions::default()).unwrap();
    assert_eq!(report.at(1).unwrap().recall, 1.0);
}

#[test]
fn recall_is_monotone_in_k() {
    let s = setup(6, false);
    let ks: Vec<usize> = (1..=60).collect();
    let report = evaluate(&s.users, &s.items, &s.graph, &s.test, &ks, None, None, &EvalOptions::default()).unwrap();
    for w in report.metrics.windows(2) {
        assert!(w[1].recall >= w[0].recall);
    }
}

#[test]
fn oracle_scores_give_perfect_recall() {
    let s = setup(7, false);
    let mut items = Matrix::zeros(300, 200);
    for e in &s.test {
        items.set(e.item as usize, e.user as usize, 1.0);
    }
    let users = Matrix::identity(200);
    let report = evaluate(&users, &items, &s.graph, &s.test, &[5], None, None, &EvalOptions::default()).unwrap();
    let m = report.at(5).unwrap();
    assert_eq!(m.recall, 1.0);
    let standard = evaluate(
        &users,
        &items,
        &s.graph,
        &s.test,
        &[5],
        None,
        None,
        &EvalOptions { ndcg: NdcgVariant::Standard },
    )
    .unwrap();
    assert!((standard.at(5).unwrap().ndcg - 1.0).abs() < 1e-12);
}

#[test]
fn group_metrics_partition_the_overall_mean() {
    let mut r = rng(8);
    let edges = random_edges(100, 80, 12, false, &mut r);
    let graph = InteractionGraph::from_edges(100, 80, &edges);
    let users = random_matrix(100, 6, 1.0, &mut r);
    let items = random_matrix(80, 6, 1.0, &mut r);
    let test: Vec<Interaction> = (0..100u32)
        .filter_map(|u| {
            let i = r.gen_range(0..80);
            (!graph.has_edge(u, i)).then_some(Interaction::new(u, i))
        })
        .collect();
    let groups = group_users_by_degree(&graph, 5).unwrap();
    let report = evaluate(&users, &items, &graph, &test, &[10], Some(&groups), None, &EvalOptions::default()).unwrap();
    let total: usize = report.groups.iter().map(|g| g.n_users).sum();
    assert_eq!(total, report.n_users_evaluated);
    let weighted: f64 = report
        .groups
        .iter()
        .map(|g| g.n_users as f64 * g.metrics[0].recall)
        .sum::<f64>()
        / total as f64;
    assert!((weighted - report.at(10).unwrap().recall).abs() < 1e-12);
}

#[test]
fn equal_scores_rank_by_index() {
    let scores = vec![1.0; 10];
    assert_eq!(top_k(&scores, &[0, 3], 4), vec![1, 2, 4, 5]);
    let mut r = rng(9);
    for _ in 0..50 {
        let scores: Vec<f64> = (0..40).map(|_| r.gen_range(0..4) as f64).collect();
        assert_eq!(top_k(&scores, &[], 40), full_sort(&scores, &[]));
        assert_eq!(top_k(&scores, &[], 7), full_sort(&scores, &[])[..7].to_vec());
    }
}
