//! Latent factor analysis: fit `R̂ = P Qᵀ` on the observed entries only.
//!
//! The objective regularizes per observed entry,
//!
//! ```text
//! ε = Σ_{(u,i)∈Λ} (r_ui − p_u·q_i)² + λ(‖p_u‖² + ‖q_i‖²)
//! ```
//!
//! so each user appears in the ridge term once per observation. Holding `Q`
//! fixed, the minimizer for row `p_u` solves
//!
//! ```text
//! (Σ_{i∈Λ_u} q_i q_iᵀ + λ|Λ_u| I) p_u = Σ_{i∈Λ_u} r_ui q_i
//! ```
//!
//! and symmetrically for `q_i`. Alternating these exact block minimizations
//! never increases ε.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Interaction;
use crate::linalg::{cholesky_solve, dot, Matrix};
use crate::sparse::CsrMatrix;

const RIDGE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LfaError {
    #[error("no observed entries to factorize")]
    NoEntries,
    #[error("latent dimension {f} must be below min(|U|, |I|) = {limit}")]
    RankTooLarge { f: usize, limit: usize },
    #[error("invalid LFA configuration: {0}")]
    BadConfig(&'static str),
    #[error("objective became non-finite ({objective}) at iteration {iteration} after the {side} update")]
    NonFinite {
        iteration: usize,
        side: Side,
        objective: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

impl core::fmt::Display for Side {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Side::User => "user",
            Side::Item => "item",
        })
    }
}

/// Observed `(u, i, r)` entries indexed both by user and by item.
#[derive(Clone, Debug)]
pub struct ObservedEntries {
    by_user: CsrMatrix,
    by_item: CsrMatrix,
}

impl ObservedEntries {
    pub fn new(n_users: usize, n_items: usize, entries: &[Interaction]) -> Self {
        let triplets: Vec<(u32, u32, f64)> =
            entries.iter().map(|e| (e.user, e.item, e.rating)).collect();
        let transposed: Vec<(u32, u32, f64)> = triplets.iter().map(|&(u, i, r)| (i, u, r)).collect();
        Self {
            by_user: CsrMatrix::from_triplets(n_users, n_items, &triplets),
            by_item: CsrMatrix::from_triplets(n_items, n_users, &transposed),
        }
    }

    pub fn n_users(&self) -> usize {
        self.by_user.n_rows()
    }

    pub fn n_items(&self) -> usize {
        self.by_user.n_cols()
    }

    pub fn len(&self) -> usize {
        self.by_user.nnz()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        self.by_user.iter()
    }

    fn side(&self, side: Side) -> &CsrMatrix {
        match side {
            Side::User => &self.by_user,
            Side::Item => &self.by_item,
        }
    }
}

/// The pretrained factor pair. `R̂` is never materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFactors {
    pub p: Matrix,
    pub q: Matrix,
    pub lambda: f64,
}

impl LatentFactors {
    pub fn new(p: Matrix, q: Matrix, lambda: f64) -> Self {
        assert_eq!(p.cols(), q.cols(), "factor ranks differ");
        Self { p, q, lambda }
    }

    pub fn rank(&self) -> usize {
        self.p.cols()
    }

    pub fn n_users(&self) -> usize {
        self.p.rows()
    }

    pub fn n_items(&self) -> usize {
        self.q.rows()
    }

    /// `r̂_ui = p_u · q_i`
    pub fn predict_entry(&self, user: usize, item: usize) -> f64 {
        dot(self.p.row(user), self.q.row(item))
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LfaSolver {
    Als,
    /// Plain per-entry SGD over shuffled observations; one iteration is one
    /// epoch.
    Sgd { learning_rate: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LfaConfig {
    pub f: usize,
    pub lambda: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub solver: LfaSolver,
}

impl Default for LfaConfig {
    fn default() -> Self {
        Self {
            f: 5,
            lambda: 0.1,
            max_iters: 50,
            rel_tol: 1e-6,
            init_scale: 0.01,
            seed: 0,
            solver: LfaSolver::Als,
        }
    }
}

impl LfaConfig {
    pub fn validate(&self) -> Result<(), LfaError> {
        if self.f == 0 {
            return Err(LfaError::BadConfig("f must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(LfaError::BadConfig("max_iters must be at least 1"));
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return Err(LfaError::BadConfig("rel_tol must be positive"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(LfaError::BadConfig("lambda must be finite and non-negative"));
        }
        if self.init_scale.is_nan() || self.init_scale < 0.0 {
            return Err(LfaError::BadConfig("init_scale must be non-negative"));
        }
        if let LfaSolver::Sgd { learning_rate } = self.solver {
            if learning_rate.is_nan() || learning_rate <= 0.0 {
                return Err(LfaError::BadConfig("SGD learning rate must be positive"));
            }
        }
        Ok(())
    }
}

/// Objective trajectory of a pretraining run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LfaTrace {
    /// Objective at initialization, then after every half-step (ALS) or epoch (SGD).
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Row solves that needed diagonal jitter.
    pub jittered_solves: usize,
}

impl LfaTrace {
    pub fn final_objective(&self) -> f64 {
        *self.objectives.last().unwrap_or(&f64::NAN)
    }
}

pub fn lfa_objective(factors: &LatentFactors, entries: &ObservedEntries) -> f64 {
    let lambda = factors.lambda;
    entries
        .iter()
        .map(|(u, i, r)| {
            let p = factors.p.row(u);
            let q = factors.q.row(i as usize);
            let residual = r - dot(p, q);
            residual * residual + lambda * (dot(p, p) + dot(q, q))
        })
        .sum()
}

/// One exact block minimization of the objective over all rows of one side.
/// Rows without observations are left unchanged. Returns the number of rows
/// whose normal matrix needed jitter to factor.
pub fn als_half_step(factors: &mut LatentFactors, entries: &ObservedEntries, side: Side) -> usize {
    let f = factors.rank();
    let lambda = factors.lambda;
    let (solve_for, fixed) = match side {
        Side::User => (&mut factors.p, &factors.q),
        Side::Item => (&mut factors.q, &factors.p),
    };
    let index = entries.side(side);
    let mut gram = vec![0.0; f * f];
    let mut rhs = vec![0.0; f];
    let mut jittered = 0;
    for row in 0..index.n_rows() {
        let (others, ratings) = index.row(row);
        if others.is_empty() {
            continue;
        }
        gram.iter_mut().for_each(|g| *g = 0.0);
        rhs.iter_mut().for_each(|b| *b = 0.0);
        for (&o, &r) in others.iter().zip(ratings) {
            let v = fixed.row(o as usize);
            for a in 0..f {
                rhs[a] += r * v[a];
                for b in 0..f {
                    gram[a * f + b] += v[a] * v[b];
                }
            }
        }
        let ridge = lambda * others.len() as f64;
        for a in 0..f {
            gram[a * f + a] += ridge;
        }
        let solution = match cholesky_solve(&gram, &rhs, f) {
            Some(x) => x,
            None => {
                jittered += 1;
                let mut attempt = None;
                let mut jitter = RIDGE_JITTER;
                while attempt.is_none() && jitter < 1.0 {
                    let mut g = gram.clone();
                    for a in 0..f {
                        g[a * f + a] += jitter;
                    }
                    attempt = cholesky_solve(&g, &rhs, f);
                    jitter *= 10.0;
                }
                match attempt {
                    Some(x) => x,
                    None => continue,
                }
            }
        };
        solve_for.row_mut(row).copy_from_slice(&solution);
    }
    if jittered > 0 {
        log::warn!("{jittered} {side} rows needed ridge jitter to solve");
    }
    jittered
}

/// One SGD epoch over the observations in a shuffled order.
pub fn sgd_epoch(
    factors: &mut LatentFactors,
    entries: &ObservedEntries,
    learning_rate: f64,
    rng: &mut impl Rng,
) {
    let mut order: Vec<(usize, u32, f64)> = entries.iter().collect();
    order.shuffle(rng);
    let f = factors.rank();
    let lambda = factors.lambda;
    for (u, i, r) in order {
        let i = i as usize;
        let err = r - dot(factors.p.row(u), factors.q.row(i));
        for k in 0..f {
            let pk = factors.p.get(u, k);
            let qk = factors.q.get(i, k);
            factors.p.set(u, k, pk + learning_rate * (err * qk - lambda * pk));
            factors.q.set(i, k, qk + learning_rate * (err * pk - lambda * qk));
        }
    }
}

pub fn init_factors(n_users: usize, n_items: usize, config: &LfaConfig) -> LatentFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    let mut draw = |_, _| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
    let p = Matrix::from_fn(n_users, config.f, &mut draw);
    let q = Matrix::from_fn(n_items, config.f, &mut draw);
    LatentFactors::new(p, q, config.lambda)
}

/// Pretrains the factor pair from a seeded uniform initialization.
pub fn train_lfa(
    entries: &ObservedEntries,
    config: &LfaConfig,
) -> Result<(LatentFactors, LfaTrace), LfaError> {
    config.validate()?;
    if entries.is_empty() {
        return Err(LfaError::NoEntries);
    }
    let limit = entries.n_users().min(entries.n_items());
    if config.f >= limit {
        return Err(LfaError::RankTooLarge {
            f: config.f,
            limit,
        });
    }
    if 2 * config.f > limit {
        log::warn!(
            "latent dimension {} is more than half of min(|U|, |I|) = {limit}",
            config.f
        );
    }

    let mut factors = init_factors(entries.n_users(), entries.n_items(), config);
    let mut trace = LfaTrace::default();
    let mut prev = lfa_objective(&factors, entries);
    trace.objectives.push(prev);
    let mut sgd_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sgd_rng.set_stream(1);

    for iteration in 1..=config.max_iters {
        match config.solver {
            LfaSolver::Als => {
                for side in [Side::User, Side::Item] {
                    trace.jittered_solves += als_half_step(&mut factors, entries, side);
                    let obj = lfa_objective(&factors, entries);
                    if !obj.is_finite() {
                        return Err(LfaError::NonFinite {
                            iteration,
                            side,
                            objective: obj,
                        });
                    }
                    trace.objectives.push(obj);
                }
            }
            LfaSolver::Sgd { learning_rate } => {
                sgd_epoch(&mut factors, entries, learning_rate, &mut sgd_rng);
                let obj = lfa_objective(&factors, entries);
                if !obj.is_finite() {
                    return Err(LfaError::NonFinite {
                        iteration,
                        side: Side::Item,
                        objective: obj,
                    });
                }
                trace.objectives.push(obj);
            }
        }
        trace.iterations = iteration;
        let cur = trace.final_objective();
        let rel = (prev - cur) / prev.max(f64::MIN_POSITIVE);
        prev = cur;
        if cur == 0.0 || (rel >= 0.0 && rel < config.rel_tol) {
            trace.converged = true;
            break;
        }
    }
    log::info!(
        "LFA finished after {} iterations, objective {:.6e}",
        trace.iterations,
        trace.final_objective()
    );
    Ok((factors, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries_from_dense(rows: &[&[f64]]) -> ObservedEntries {
        let mut e = Vec::new();
        for (u, row) in rows.iter().enumerate() {
            for (i, &r) in row.iter().enumerate() {
                e.push(Interaction {
                    user: u as u32,
                    item: i as u32,
                    rating: r,
                });
            }
        }
        ObservedEntries::new(rows.len(), rows[0].len(), &e)
    }

    #[test]
    fn objective_at_zero_factors_counts_entries() {
        let entries = entries_from_dense(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let factors = LatentFactors::new(Matrix::zeros(2, 2), Matrix::zeros(3, 2), 7.0);
        assert_eq!(lfa_objective(&factors, &entries), 6.0);
    }

    #[test]
    fn exact_rank_one_has_zero_objective() {
        let entries = entries_from_dense(&[&[2.0, 4.0], &[1.0, 2.0]]);
        let factors = LatentFactors::new(
            Matrix::from_vec(2, 1, vec![2.0, 1.0]),
            Matrix::from_vec(2, 1, vec![1.0, 2.0]),
            0.0,
        );
        assert_eq!(lfa_objective(&factors, &entries), 0.0);
    }

    #[test]
    fn scalar_half_step() {
        let entries = ObservedEntries::new(
            1,
            1,
            &[Interaction {
                user: 0,
                item: 0,
                rating: 3.0,
            }],
        );
        let mut factors = LatentFactors::new(
            Matrix::from_vec(1, 1, vec![0.0]),
            Matrix::from_vec(1, 1, vec![2.0]),
            0.0,
        );
        als_half_step(&mut factors, &entries, Side::User);
        assert_eq!(factors.p.get(0, 0), 1.5);
    }

    #[test]
    fn huge_lambda_shrinks_rows_to_zero() {
        let entries = entries_from_dense(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut factors = LatentFactors::new(
            Matrix::from_fn(2, 2, |r, c| 1.0 + (r + c) as f64),
            Matrix::from_fn(2, 2, |r, c| 1.0 - (r * c) as f64),
            1e300,
        );
        als_half_step(&mut factors, &entries, Side::User);
        assert!(factors.p.max_abs() < 1e-290);
    }

    #[test]
    fn singular_normal_matrix_gets_jitter() {
        // q = 0 with λ = 0 makes the 1×1 normal matrix exactly zero.
        let entries = entries_from_dense(&[&[1.0]]);
        let mut factors = LatentFactors::new(
            Matrix::from_vec(1, 1, vec![0.5]),
            Matrix::from_vec(1, 1, vec![0.0]),
            0.0,
        );
        assert_eq!(als_half_step(&mut factors, &entries, Side::User), 1);
        assert!(factors.p.is_finite());
    }

    #[test]
    fn rows_without_observations_are_untouched() {
        let entries = ObservedEntries::new(2, 2, &[Interaction::new(0, 0)]);
        let mut factors = LatentFactors::new(
            Matrix::from_vec(2, 1, vec![0.1, 0.7]),
            Matrix::from_vec(2, 1, vec![0.3, 0.9]),
            0.1,
        );
        als_half_step(&mut factors, &entries, Side::User);
        assert_eq!(factors.p.get(1, 0), 0.7);
    }

    #[test]
    fn predict_entry_is_a_dot_product() {
        let f = LatentFactors::new(
            Matrix::from_vec(1, 2, vec![1.0, 0.0]),
            Matrix::from_vec(1, 2, vec![0.0, 1.0]),
            0.0,
        );
        assert_eq!(f.predict_entry(0, 0), 0.0);
        let g = LatentFactors::new(Matrix::from_vec(1, 3, vec![1.0; 3]), Matrix::from_vec(1, 3, vec![1.0; 3]), 0.0);
        assert_eq!(g.predict_entry(0, 0), 3.0);
    }

    #[test]
    fn config_validation() {
        let bad = LfaConfig {
            max_iters: 0,
            ..LfaConfig::default()
        };
        assert!(matches!(bad.validate(), Err(LfaError::BadConfig(_))));
        let entries = entries_from_dense(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let too_big = LfaConfig {
            f: 2,
            ..LfaConfig::default()
        };
        assert_eq!(
            train_lfa(&entries, &too_big).unwrap_err(),
            LfaError::RankTooLarge { f: 2, limit: 2 }
        );
    }
}
