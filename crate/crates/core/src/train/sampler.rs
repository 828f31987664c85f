use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};

/// Parallel arrays of `(user, interacted item, non-interacted item)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BprBatch {
    pub users: Vec<u32>,
    pub pos_items: Vec<u32>,
    pub neg_items: Vec<u32>,
}

impl BprBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Draw `size` tuples: positives uniformly over training edges, negatives
/// uniformly over the user's non-interacted items by rejection.
pub fn sample_bpr_batch<R: Rng + ?Sized>(train: &BipartiteGraph, size: usize, rng: &mut R) -> Result<BprBatch> {
    let ni = train.num_items();
    let ne = train.num_edges();
    let sampleable = |u: usize| train.degree(Side::User, u) < ni;
    if ne == 0 || !(0..train.num_users()).any(|u| train.degree(Side::User, u) > 0 && sampleable(u)) {
        return Err(Error::Sampling(
            "no user has both an interacted and a non-interacted item".into(),
        ));
    }
    let mut batch = BprBatch {
        users: Vec::with_capacity(size),
        pos_items: Vec::with_capacity(size),
        neg_items: Vec::with_capacity(size),
    };
    while batch.len() < size {
        let (u, pos) = train.edge(rng.random_range(0..ne));
        if !sampleable(u as usize) {
            continue;
        }
        let neg = loop {
            let j = rng.random_range(0..ni as u32);
            if !train.has_edge(u as usize, j) {
                break j;
            }
        };
        batch.users.push(u);
        batch.pos_items.push(pos);
        batch.neg_items.push(neg);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn forced_tuple() {
        let g = BipartiteGraph::from_edges(1, 2, [(0, 0)]).unwrap();
        let b = sample_bpr_batch(&g, 20, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(b.users.iter().all(|&u| u == 0));
        assert!(b.pos_items.iter().all(|&i| i == 0));
        assert!(b.neg_items.iter().all(|&i| i == 1));
    }

    #[test]
    fn complete_users_skipped_or_rejected() {
        let g = BipartiteGraph::from_edges(2, 2, [(0, 0), (0, 1), (1, 1)]).unwrap();
        let b = sample_bpr_batch(&g, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(b.users.iter().all(|&u| u == 1));
        let full = BipartiteGraph::from_edges(1, 2, [(0, 0), (0, 1)]).unwrap();
        assert!(matches!(
            sample_bpr_batch(&full, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn membership_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let edges: Vec<(u32, u32)> = (0..400)
            .map(|_| (rng.random_range(0..30u32), rng.random_range(0..25u32)))
            .collect();
        let g = BipartiteGraph::from_edges(30, 25, edges).unwrap();
        let a = sample_bpr_batch(&g, 10_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for k in 0..a.len() {
            let u = a.users[k] as usize;
            assert!(g.has_edge(u, a.pos_items[k]));
            assert!(!g.has_edge(u, a.neg_items[k]));
        }
        let b = sample_bpr_batch(&g, 10_000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}
