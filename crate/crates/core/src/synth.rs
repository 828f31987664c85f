//! Seeded synthetic interaction graphs with power-law degrees and planted
//! communities.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    /// Approximate edge count; the realized count is slightly lower after
    /// per-user deduplication.
    pub target_edges: usize,
    pub min_user_degree: usize,
    /// Zipf exponents of user activity and item popularity.
    pub user_exponent: f64,
    pub item_exponent: f64,
    pub communities: usize,
    /// Probability that an interaction stays inside the user's community.
    pub in_community: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 6000,
            items: 4000,
            target_edges: 100_000,
            min_user_degree: 5,
            user_exponent: 0.8,
            item_exponent: 0.8,
            communities: 25,
            in_community: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.users == 0 || self.items == 0 || self.communities == 0 {
            return bad("users, items and communities must be positive");
        }
        if self.communities > self.items {
            return bad("more communities than items");
        }
        if !(0.0..=1.0).contains(&self.in_community) {
            return bad("in-community probability outside [0, 1]");
        }
        if self.min_user_degree == 0 || self.min_user_degree * 2 > self.items {
            return bad("minimum user degree must be in 1..=items/2");
        }
        if self.target_edges < self.users * self.min_user_degree {
            return bad("target edges below users * min degree");
        }
        Ok(())
    }
}

fn zipf_weights(n: usize, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    w.shuffle(rng);
    w
}

/// Generate a graph per `config`. Users and items are split round-robin
/// into communities; each user's degree follows a Zipf law floored at
/// `min_user_degree`, and its items are drawn by popularity, from its own
/// community with probability `in_community`.
pub fn power_law_communities(config: &SynthConfig) -> Result<BipartiteGraph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let user_w = zipf_weights(config.users, config.user_exponent, &mut rng);
    let item_w = zipf_weights(config.items, config.item_exponent, &mut rng);
    let c = config.communities;

    let community_items: Vec<Vec<u32>> = (0..c)
        .map(|k| (k..config.items).step_by(c).map(|i| i as u32).collect())
        .collect();
    let pick = |items: &[u32]| {
        WeightedIndex::new(items.iter().map(|&i| item_w[i as usize]))
            .map_err(|e| Error::InvalidArgument(format!("item weights: {e}")))
    };
    let community_dist = community_items.iter().map(|v| pick(v)).collect::<Result<Vec<_>>>()?;
    let all_items: Vec<u32> = (0..config.items as u32).collect();
    let global_dist = pick(&all_items)?;

    let extra = (config.target_edges - config.users * config.min_user_degree) as f64;
    let total_w: f64 = user_w.iter().sum();
    let cap = config.items / 2;
    let mut edges = Vec::with_capacity(config.target_edges);
    let mut seen = HashSet::new();
    for (u, &w) in user_w.iter().enumerate() {
        let degree = (config.min_user_degree + (extra * w / total_w).round() as usize).min(cap);
        let home = u % c;
        seen.clear();
        let mut attempts = 0;
        while seen.len() < degree && attempts < degree * 20 {
            attempts += 1;
            let item = if rng.random_bool(config.in_community) {
                community_items[home][community_dist[home].sample(&mut rng)]
            } else {
                global_dist.sample(&mut rng) as u32
            };
            if seen.insert(item) {
                edges.push((u as u32, item));
            }
        }
    }
    BipartiteGraph::from_edges(config.users, config.items, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{degree_histogram, Side};

    fn small() -> SynthConfig {
        SynthConfig {
            users: 400,
            items: 300,
            target_edges: 6000,
            communities: 6,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a = power_law_communities(&small()).unwrap();
        let b = power_law_communities(&small()).unwrap();
        assert_eq!(a, b);
        assert!(a.num_edges() > 5000 && a.num_edges() <= 6100, "{}", a.num_edges());
        assert!((0..400).all(|u| a.degree(Side::User, u) >= 5));
        let other = power_law_communities(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn heavy_tailed_items_and_planted_communities() {
        let g = power_law_communities(&small()).unwrap();
        let h = degree_histogram(&g, Side::Item);
        assert!(h.log_log_slope().unwrap() < 0.0);
        assert!(g.max_degree(Side::Item) > 5 * g.num_edges() / g.num_items());
        let inside = g.edges().filter(|&(u, i)| u as usize % 6 == i as usize % 6).count();
        assert!(inside as f64 / g.num_edges() as f64 > 0.7);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            SynthConfig { users: 0, ..small() },
            SynthConfig { communities: 301, ..small() },
            SynthConfig { in_community: 1.5, ..small() },
            SynthConfig { target_edges: 10, ..small() },
        ] {
            assert!(power_law_communities(&bad).is_err());
        }
    }
}
