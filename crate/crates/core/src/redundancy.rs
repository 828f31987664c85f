//! Per-worker subgraph footprints, cross-worker redundancy and the largest
//! batch that fits a memory budget.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{memory_footprint_estimate, BipartiteGraph, FootprintOptions, GraphStats, Side};

/// A user or item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vertex {
    User(u32),
    Item(u32),
}

impl Vertex {
    fn index(self, g: &BipartiteGraph) -> usize {
        match self {
            Vertex::User(u) => u as usize,
            Vertex::Item(i) => g.num_users() + i as usize,
        }
    }

    fn check(self, g: &BipartiteGraph) -> Result<()> {
        let ok = match self {
            Vertex::User(u) => (u as usize) < g.num_users(),
            Vertex::Item(i) => (i as usize) < g.num_items(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("vertex {self:?} out of range")))
        }
    }
}

/// How far and how wide subgraphs are expanded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expansion {
    pub layers: usize,
    /// `None` keeps every neighbor.
    pub sampling: Option<usize>,
    pub seed: u64,
    pub embed_dim: usize,
    pub footprint: FootprintOptions,
}

impl Expansion {
    pub fn new(layers: usize, sampling: Option<usize>, seed: u64) -> Self {
        Self {
            layers,
            sampling,
            seed,
            embed_dim: 64,
            footprint: FootprintOptions::default(),
        }
    }

    pub fn with_embed_dim(mut self, d: usize) -> Self {
        self.embed_dim = d;
        self
    }

    fn sampling_label(&self) -> String {
        self.sampling.map_or_else(|| "none".to_string(), |s| s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphFootprint {
    pub targets: Vec<Vertex>,
    pub layers: usize,
    pub sampling: Option<usize>,
    /// Sorted global vertex indices (users first, then items).
    pub vertex_set: Vec<u32>,
    /// Sorted canonical edge ids.
    pub edge_set: Vec<u32>,
    pub estimated_bytes: u64,
}

impl SubgraphFootprint {
    pub fn vertices(&self) -> usize {
        self.vertex_set.len()
    }

    pub fn edges(&self) -> usize {
        self.edge_set.len()
    }
}

/// Neighbors kept when expanding vertex `v`: all of them, or `s` chosen
/// uniformly by a stream seeded from `(seed, v)` alone, so the choice does
/// not depend on when `v` is reached.
fn kept_neighbors(g: &BipartiteGraph, side: Side, v: usize, exp: &Expansion) -> Vec<(u32, usize)> {
    let adj = g.adjacency(side);
    let r = adj.range(v);
    let all = r.clone().map(|p| (adj.cols[p], adj.edge_id(p)));
    match exp.sampling {
        Some(s) if r.len() > s => {
            let key = exp.seed ^ ((v as u64) << 1 | (side == Side::Item) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let mut picked: Vec<usize> = sample(&mut rng, r.len(), s).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|k| (adj.cols[r.start + k], adj.edge_id(r.start + k))).collect()
        }
        _ => all.collect(),
    }
}

/// Breadth-first `L`-hop neighborhood of `targets`.
pub fn subgraph_footprint(g: &BipartiteGraph, targets: &[Vertex], exp: &Expansion) -> Result<SubgraphFootprint> {
    for t in targets {
        t.check(g)?;
    }
    let mut seen = vec![false; g.num_vertices()];
    let mut frontier: Vec<Vertex> = Vec::new();
    for &t in targets {
        if !std::mem::replace(&mut seen[t.index(g)], true) {
            frontier.push(t);
        }
    }
    let mut edges = HashSet::new();
    for _ in 0..exp.layers {
        let mut next = Vec::new();
        for &v in &frontier {
            let (side, id) = match v {
                Vertex::User(u) => (Side::User, u as usize),
                Vertex::Item(i) => (Side::Item, i as usize),
            };
            for (n, e) in kept_neighbors(g, side, id, exp) {
                edges.insert(e as u32);
                let nv = match side {
                    Side::User => Vertex::Item(n),
                    Side::Item => Vertex::User(n),
                };
                if !std::mem::replace(&mut seen[nv.index(g)], true) {
                    next.push(nv);
                }
            }
        }
        frontier = next;
    }
    let vertex_set: Vec<u32> = (0..seen.len()).filter(|&k| seen[k]).map(|k| k as u32).collect();
    let mut edge_set: Vec<u32> = edges.into_iter().collect();
    edge_set.sort_unstable();
    let stats = GraphStats {
        vertices: vertex_set.len() as u64,
        edges: edge_set.len() as u64,
    };
    let estimated_bytes = memory_footprint_estimate(stats, exp.layers as u64, exp.embed_dim as u64, exp.footprint)?;
    Ok(SubgraphFootprint {
        targets: targets.to_vec(),
        layers: exp.layers,
        sampling: exp.sampling,
        vertex_set,
        edge_set,
        estimated_bytes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Redundancy {
    pub footprints: Vec<SubgraphFootprint>,
    /// Sum of per-worker vertex counts over the size of their union.
    pub ratio_vertices: f64,
    pub ratio_edges: f64,
    pub union_vertices: usize,
    pub union_edges: usize,
}

impl Redundancy {
    /// Vertices held by more than one worker, counted with multiplicity.
    pub fn duplicate_vertices(&self) -> usize {
        self.footprints.iter().map(|f| f.vertices()).sum::<usize>() - self.union_vertices
    }
}

fn union_len(sets: impl Iterator<Item = impl Iterator<Item = u32>>) -> usize {
    sets.flatten().collect::<HashSet<u32>>().len()
}

fn ratio(sum: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        sum as f64 / union as f64
    }
}

/// Redundancy across explicit per-worker target groups.
pub fn redundancy_of(g: &BipartiteGraph, groups: &[Vec<Vertex>], exp: &Expansion) -> Result<Redundancy> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no worker groups".into()));
    }
    let footprints = groups
        .par_iter()
        .map(|t| subgraph_footprint(g, t, exp))
        .collect::<Result<Vec<_>>>()?;
    let union_vertices = union_len(footprints.iter().map(|f| f.vertex_set.iter().copied()));
    let union_edges = union_len(footprints.iter().map(|f| f.edge_set.iter().copied()));
    let sum_v = footprints.iter().map(|f| f.vertices()).sum();
    let sum_e = footprints.iter().map(|f| f.edges()).sum();
    Ok(Redundancy {
        ratio_vertices: ratio(sum_v, union_vertices),
        ratio_edges: ratio(sum_e, union_edges),
        union_vertices,
        union_edges,
        footprints,
    })
}

/// Edge ids given to each worker: worker `w` takes positions `w`, `w + W`,
/// `w + 2W`, ... of one seeded permutation of all edges, so a larger batch
/// only extends each worker's share.
fn worker_shares(g: &BipartiteGraph, batch: usize, workers: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if workers == 0 {
        return Err(Error::InvalidArgument("at least one worker is required".into()));
    }
    batch
        .checked_mul(workers)
        .filter(|&n| n <= g.num_edges())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{batch} x {workers} targets requested from {} edges",
                g.num_edges()
            ))
        })?;
    let mut order: Vec<usize> = (0..g.num_edges()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..workers)
        .map(|w| order.iter().skip(w).step_by(workers).take(batch).copied().collect())
        .collect())
}

/// Users and items of the given edges.
fn roots(g: &BipartiteGraph, edges: &[usize]) -> Vec<Vertex> {
    let mut roots: Vec<Vertex> = edges
        .iter()
        .flat_map(|&e| {
            let (u, i) = g.edge(e);
            [Vertex::User(u), Vertex::Item(i)]
        })
        .collect();
    roots.sort_unstable();
    roots.dedup();
    roots
}

/// Sample `batch * workers` training edges, give each worker `batch` of
/// them and measure the overlap of their subgraphs.
pub fn batch_redundancy(g: &BipartiteGraph, batch: usize, workers: usize, exp: &Expansion) -> Result<Redundancy> {
    let groups: Vec<Vec<Vertex>> = worker_shares(g, batch, workers, exp.seed)?
        .iter()
        .map(|s| roots(g, s))
        .collect();
    redundancy_of(g, &groups, exp)
}

/// Largest aggregate batch (a multiple of `workers`) for which every
/// worker's subgraph estimate fits `budget_bytes / workers`; 0 when one
/// edge per worker already does not fit.
pub fn max_batch_under_budget(g: &BipartiteGraph, budget_bytes: u64, workers: usize, exp: &Expansion) -> Result<usize> {
    if budget_bytes == 0 {
        return Err(Error::InvalidArgument("budget must be positive".into()));
    }
    if workers == 0 || workers > g.num_edges() {
        return Err(Error::InvalidArgument(format!(
            "{workers} workers for {} edges",
            g.num_edges()
        )));
    }
    let per_worker = budget_bytes / workers as u64;
    let max_b = g.num_edges() / workers;
    let shares = worker_shares(g, max_b, workers, exp.seed)?;
    let fits = |b: usize| -> Result<bool> {
        for share in &shares {
            if subgraph_footprint(g, &roots(g, &share[..b]), exp)?.estimated_bytes > per_worker {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if !fits(1)? {
        return Ok(0);
    }
    let (mut lo, mut hi) = (1, max_b);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo * workers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RedundancyRow {
    pub workers: usize,
    pub batch: usize,
    pub layers: usize,
    pub sampling: String,
    pub ratio_vertices: f64,
    pub ratio_edges: f64,
    pub max_batch: usize,
}

impl fmt::Display for RedundancyRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{:.6},{:.6},{}",
            self.workers, self.batch, self.layers, self.sampling, self.ratio_vertices, self.ratio_edges, self.max_batch
        )
    }
}

pub const REDUNDANCY_CSV_HEADER: &str = "workers,batch,L,sampling,ratio_vertices,ratio_edges,max_batch";

/// One row per `(workers, batch, layers, sampling)` combination.
pub fn redundancy_report(
    g: &BipartiteGraph,
    workers: &[usize],
    batches: &[usize],
    layers: &[usize],
    samplings: &[Option<usize>],
    budget_bytes: u64,
    base: &Expansion,
) -> Result<Vec<RedundancyRow>> {
    let mut rows = Vec::new();
    for &w in workers {
        for &l in layers {
            for &s in samplings {
                let exp = Expansion {
                    layers: l,
                    sampling: s,
                    ..*base
                };
                let max_batch = max_batch_under_budget(g, budget_bytes, w, &exp)?;
                for &b in batches {
                    let r = batch_redundancy(g, b, w, &exp)?;
                    rows.push(RedundancyRow {
                        workers: w,
                        batch: b,
                        layers: l,
                        sampling: exp.sampling_label(),
                        ratio_vertices: r.ratio_vertices,
                        ratio_edges: r.ratio_edges,
                        max_batch,
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn redundancy_csv(rows: &[RedundancyRow]) -> String {
    let mut out = format!("{REDUNDANCY_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{r}\n"));
    }
    out
}
