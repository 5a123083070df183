//! All-ranking Top-K evaluation.
//!
//! Every item is scored for every user; the user's training positives are
//! removed before taking the top K (descending score, ascending item index on
//! ties). Recall@K is `|Rᴷ ∩ T| / |T|`. NDCG@K by default uses the
//! untruncated normalizer `Σ_{n=1}^{K} 1/log(n+1)`; [`NdcgVariant::Standard`]
//! truncates it at `min(K, |T|)` instead.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::{Interaction, InteractionGraph, SparsityGroups};
use crate::linalg::Matrix;
use crate::propagation::score_row;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("no cutoffs K requested")]
    NoCutoffs,
    #[error("cutoff K must be at least 1")]
    ZeroCutoff,
    #[error("groups cover {groups} users but the graph has {users}")]
    GroupMismatch { groups: usize, users: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NdcgVariant {
    /// Normalizer `Σ_{n=1}^{K} 1/log(n+1)` regardless of `|T(u)|`.
    #[default]
    Literal,
    /// Ideal DCG truncated at `min(K, |T(u)|)`.
    Standard,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub ndcg: NdcgVariant,
}

/// One user's ranked list (`top_k_items`, rank order) and ground truth
/// (`truth`, ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub user: u32,
    pub top_k_items: Vec<u32>,
    pub truth: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: usize,
    pub min_degree: u32,
    pub max_degree: u32,
    /// Users in the group with non-empty truth.
    pub n_users: usize,
    pub metrics: Vec<KMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<KMetrics>,
    pub groups: Vec<GroupReport>,
    pub n_users_evaluated: usize,
    /// Evaluated users with no training interactions (scored from layer 0 only).
    pub n_cold_users: usize,
}

impl MetricReport {
    pub fn at(&self, k: usize) -> Option<&KMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

#[inline]
fn rank_order(scores: &[f64]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    }
}

/// Top `k` item indices by score, skipping `masked` (sorted ascending).
pub fn top_k(scores: &[f64], masked: &[u32], k: usize) -> Vec<u32> {
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| masked.binary_search(i).is_err())
        .collect();
    let cmp = rank_order(scores);
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, &cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(&cmp);
    candidates
}

/// Ranks every item for `user` with its training positives masked.
pub fn rank_all_items(
    user_final: &Matrix,
    item_final: &Matrix,
    graph: &InteractionGraph,
    user: u32,
    k: usize,
    truth: Vec<u32>,
) -> RankingResult {
    let scores = score_row(user_final, item_final, user as usize);
    RankingResult {
        user,
        top_k_items: top_k(&scores, graph.user_items(user), k),
        truth,
    }
}

fn hits(result: &RankingResult, k: usize) -> impl Iterator<Item = (usize, bool)> + '_ {
    result
        .top_k_items
        .iter()
        .take(k)
        .enumerate()
        .map(|(n, item)| (n, result.truth.binary_search(item).is_ok()))
}

/// `|Rᴷ(u) ∩ T(u)| / |T(u)|`; `truth` must be non-empty.
pub fn recall_at_k(result: &RankingResult, k: usize) -> f64 {
    debug_assert!(!result.truth.is_empty());
    let found = hits(result, k).filter(|&(_, h)| h).count();
    found as f64 / result.truth.len() as f64
}

#[inline]
fn discount(rank0: usize) -> f64 {
    1.0 / libm::log(rank0 as f64 + 2.0)
}

/// NDCG@K of one user.
pub fn ndcg_user(result: &RankingResult, k: usize, variant: NdcgVariant) -> f64 {
    let dcg: f64 = hits(result, k)
        .filter(|&(_, h)| h)
        .map(|(n, _)| discount(n))
        .sum();
    let ideal_len = match variant {
        NdcgVariant::Literal => k,
        NdcgVariant::Standard => k.min(result.truth.len()),
    };
    let ideal: f64 = (0..ideal_len).map(discount).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Mean NDCG@K over users (all must have non-empty truth).
pub fn ndcg_at_k(results: &[RankingResult], k: usize, variant: NdcgVariant) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| ndcg_user(r, k, variant)).sum::<f64>() / results.len() as f64
}

fn group_by_user(edges: &[Interaction], n_users: usize) -> Vec<Vec<u32>> {
    let mut per_user = alloc::vec![Vec::new(); n_users];
    for e in edges {
        per_user[e.user as usize].push(e.item);
    }
    for items in &mut per_user {
        items.sort_unstable();
        items.dedup();
    }
    per_user
}

/// Computes Recall@K and NDCG@K at every requested K over all users with
/// non-empty `truth`, optionally broken down by degree group.
///
/// `extra_mask` holds additional per-user items to exclude from ranking
/// (e.g. validation positives at test time).
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    user_final: &Matrix,
    item_final: &Matrix,
    graph: &InteractionGraph,
    truth: &[Interaction],
    ks: &[usize],
    groups: Option<&SparsityGroups>,
    extra_mask: Option<&[Interaction]>,
    options: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    if ks.is_empty() {
        return Err(EvalError::NoCutoffs);
    }
    if ks.contains(&0) {
        return Err(EvalError::ZeroCutoff);
    }
    if let Some(g) = groups {
        if g.assignment.len() != graph.n_users {
            return Err(EvalError::GroupMismatch {
                groups: g.assignment.len(),
                users: graph.n_users,
            });
        }
    }
    let max_k = *ks.iter().max().unwrap();
    let truth_by_user = group_by_user(truth, graph.n_users);
    let extra_by_user = extra_mask.map(|m| group_by_user(m, graph.n_users));

    let n_groups = groups.map_or(0, |g| g.n_groups());
    let mut sums = alloc::vec![(0.0f64, 0.0f64); ks.len()];
    let mut group_sums = alloc::vec![alloc::vec![(0.0f64, 0.0f64); ks.len()]; n_groups];
    let mut group_counts = alloc::vec![0usize; n_groups];
    let mut evaluated = 0;
    let mut cold = 0;
    let mut mask = Vec::new();

    for (user, items) in truth_by_user.into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        let train_items = graph.user_items(user as u32);
        let masked: &[u32] = match &extra_by_user {
            Some(extra) if !extra[user].is_empty() => {
                mask.clear();
                mask.extend_from_slice(train_items);
                mask.extend_from_slice(&extra[user]);
                mask.sort_unstable();
                mask.dedup();
                &mask
            }
            _ => train_items,
        };
        let scores = score_row(user_final, item_final, user);
        let result = RankingResult {
            user: user as u32,
            top_k_items: top_k(&scores, masked, max_k),
            truth: items,
        };
        evaluated += 1;
        if graph.user_degrees[user] == 0 {
            cold += 1;
        }
        let group = groups.map(|g| g.assignment[user]);
        if let Some(g) = group {
            group_counts[g] += 1;
        }
        for (slot, &k) in ks.iter().enumerate() {
            let r = recall_at_k(&result, k);
            let n = ndcg_user(&result, k, options.ndcg);
            sums[slot].0 += r;
            sums[slot].1 += n;
            if let Some(g) = group {
                group_sums[g][slot].0 += r;
                group_sums[g][slot].1 += n;
            }
        }
    }
    if evaluated == 0 {
        return Err(EvalError::EmptySplit);
    }
    if cold > 0 {
        log::info!("{cold} evaluated users have no training interactions");
    }

    let average = |sums: &[(f64, f64)], count: usize| -> Vec<KMetrics> {
        ks.iter()
            .zip(sums)
            .map(|(&k, &(r, n))| {
                let c = count.max(1) as f64;
                KMetrics {
                    k,
                    recall: r / c,
                    ndcg: n / c,
                }
            })
            .collect()
    };
    let group_reports = match groups {
        Some(g) => (0..n_groups)
            .map(|idx| GroupReport {
                group: idx,
                min_degree: g.boundaries[idx].0,
                max_degree: g.boundaries[idx].1,
                n_users: group_counts[idx],
                metrics: average(&group_sums[idx], group_counts[idx]),
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(MetricReport {
        metrics: average(&sums, evaluated),
        groups: group_reports,
        n_users_evaluated: evaluated,
        n_cold_users: cold,
    })
}
