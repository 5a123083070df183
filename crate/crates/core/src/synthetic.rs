//! Block-structured synthetic interactions for smoke tests and experiments.

use alloc::format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RawInteractions;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDatasetConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Users and items are split into this many contiguous communities.
    pub n_blocks: usize,
    /// Target fraction of the user-item matrix that is observed.
    pub density: f64,
    /// Probability that an interaction stays inside the user's block.
    pub in_block: f64,
    pub seed: u64,
}

impl Default for BlockDatasetConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 300,
            n_blocks: 10,
            density: 0.02,
            in_block: 0.8,
            seed: 0,
        }
    }
}

/// Users draw an exponentially distributed degree (mean `density · n_items`,
/// at least 1) and pick items from their own block with probability
/// `in_block`, otherwise uniformly. Ids are `u<k>` / `i<k>`.
pub fn block_interactions(config: &BlockDatasetConfig) -> RawInteractions {
    assert!(config.n_blocks >= 1 && config.n_blocks <= config.n_users.min(config.n_items));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mean_degree = config.density * config.n_items as f64;
    let max_degree = (config.n_items / 2).max(1);
    let block_of_user = |u: usize| u * config.n_blocks / config.n_users;
    let block_items = |b: usize| {
        let lo = b * config.n_items / config.n_blocks;
        let hi = (b + 1) * config.n_items / config.n_blocks;
        lo..hi
    };

    let mut raw = RawInteractions::new();
    for u in 0..config.n_users {
        let uniform: f64 = rng.gen_range(f64::EPSILON..1.0);
        let degree = (libm::round(-libm::log(uniform) * mean_degree) as usize).clamp(1, max_degree);
        let items = block_items(block_of_user(u));
        let user_id = format!("u{u}");
        let mut added = 0;
        let mut attempts = 0;
        while added < degree && attempts < 50 * degree {
            attempts += 1;
            let item = if rng.gen_bool(config.in_block) {
                rng.gen_range(items.clone())
            } else {
                rng.gen_range(0..config.n_items)
            };
            if raw.push(&user_id, &format!("i{item}"), None) {
                added += 1;
            }
        }
    }
    raw
}
