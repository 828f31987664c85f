//! User-item bipartite interaction graphs.
//!
//! Edges are stored twice: once as compressed rows over users (the
//! canonical edge order, used by every per-edge buffer) and once as
//! compressed rows over items together with the canonical id of each entry.

mod footprint;
mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use footprint::{memory_footprint_estimate, FootprintOptions, GraphStats};
pub use io::{
    load_edge_list, load_edge_list_compacted, parse_edge_list, read_graph_cache, write_edge_list,
    write_graph_cache, EdgeListFormat, IdMap, GRAPH_CACHE_MAGIC, GRAPH_CACHE_VERSION,
};

/// Compressed sparse rows: `cols[row_ptr[r]..row_ptr[r + 1]]` are the
/// neighbors of row `r`, sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Csr {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
}

impl Csr {
    pub fn num_rows(&self) -> usize {
        self.row_ptr.len().saturating_sub(1)
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn degree(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Transpose into rows over `num_cols`, returning for each entry of the
    /// result the position of the same entry in `self`.
    pub fn transpose(&self, num_cols: usize) -> (Csr, Vec<usize>) {
        let mut counts = vec![0usize; num_cols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for k in 0..num_cols {
            counts[k + 1] += counts[k];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0u32; self.nnz()];
        let mut pos = vec![0usize; self.nnz()];
        for r in 0..self.num_rows() {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[p] as usize;
                let slot = next[c];
                cols[slot] = r as u32;
                pos[slot] = p;
                next[c] += 1;
            }
        }
        (Csr { row_ptr, cols }, pos)
    }
}

/// Which way messages flow over the bipartite edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Sources are users, destinations are items.
    UserToItem,
    /// Sources are items, destinations are users.
    ItemToUser,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::UserToItem => Direction::ItemToUser,
            Direction::ItemToUser => Direction::UserToItem,
        }
    }

    pub fn src_side(self) -> Side {
        match self {
            Direction::UserToItem => Side::User,
            Direction::ItemToUser => Side::Item,
        }
    }

    pub fn dst_side(self) -> Side {
        self.src_side().other()
    }
}

/// One side of the bipartite graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::User => "user",
            Side::Item => "item",
        })
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" | "users" => Ok(Side::User),
            "item" | "items" => Ok(Side::Item),
            other => Err(Error::InvalidArgument(format!("unknown side `{other}`"))),
        }
    }
}

/// Neighbor lists of one side together with the canonical edge id of every
/// entry.
#[derive(Clone, Copy, Debug)]
pub struct Adjacency<'a> {
    pub row_ptr: &'a [usize],
    pub cols: &'a [u32],
    eids: Option<&'a [usize]>,
}

impl<'a> Adjacency<'a> {
    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Canonical edge id of adjacency entry `p`.
    #[inline]
    pub fn edge_id(&self, p: usize) -> usize {
        match self.eids {
            Some(e) => e[p],
            None => p,
        }
    }

    #[inline]
    pub fn range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }
}

/// A deduplicated user-item interaction graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    u2i: Csr,
    i2u: Csr,
    i2u_eids: Vec<usize>,
}

impl BipartiteGraph {
    /// Build from `(user, item)` pairs. Duplicates are removed; an empty edge
    /// set is allowed here (loaders reject it).
    pub fn from_edges<I>(num_users: usize, num_items: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut list: Vec<(u32, u32)> = edges.into_iter().collect();
        for &(u, i) in &list {
            if u as usize >= num_users || i as usize >= num_items {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {i}) outside {num_users} users x {num_items} items"
                )));
            }
        }
        list.sort_unstable();
        list.dedup();
        let mut row_ptr = vec![0usize; num_users + 1];
        for &(u, _) in &list {
            row_ptr[u as usize + 1] += 1;
        }
        for r in 0..num_users {
            row_ptr[r + 1] += row_ptr[r];
        }
        let cols = list.into_iter().map(|(_, i)| i).collect();
        Ok(Self::from_user_csr_unchecked(
            num_users,
            num_items,
            Csr { row_ptr, cols },
        ))
    }

    /// Build from user-major compressed rows, validating every invariant.
    pub fn from_user_csr(num_users: usize, num_items: usize, u2i: Csr) -> Result<Self> {
        if u2i.row_ptr.len() != num_users + 1 {
            return Err(Error::Format(format!(
                "row pointer length {} for {num_users} users",
                u2i.row_ptr.len()
            )));
        }
        if u2i.row_ptr[0] != 0 || *u2i.row_ptr.last().unwrap() != u2i.cols.len() {
            return Err(Error::Format("row pointers do not span the edge array".into()));
        }
        for r in 0..num_users {
            if u2i.row_ptr[r] > u2i.row_ptr[r + 1] {
                return Err(Error::Format(format!("row pointer decreases at user {r}")));
            }
            let row = u2i.row(r);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("neighbors of user {r} not strictly sorted")));
            }
            if row.iter().any(|&i| i as usize >= num_items) {
                return Err(Error::Format(format!("item id out of range at user {r}")));
            }
        }
        Ok(Self::from_user_csr_unchecked(num_users, num_items, u2i))
    }

    fn from_user_csr_unchecked(num_users: usize, num_items: usize, u2i: Csr) -> Self {
        let (i2u, i2u_eids) = u2i.transpose(num_items);
        Self {
            num_users,
            num_items,
            u2i,
            i2u,
            i2u_eids,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.u2i.nnz()
    }

    pub fn num_vertices(&self) -> usize {
        self.num_users + self.num_items
    }

    /// Fraction of the `users x items` matrix that holds an interaction.
    pub fn density(&self) -> f64 {
        if self.num_users == 0 || self.num_items == 0 {
            return 0.0;
        }
        self.num_edges() as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    pub fn user_csr(&self) -> &Csr {
        &self.u2i
    }

    pub fn item_csr(&self) -> &Csr {
        &self.i2u
    }

    /// Canonical edge id of each entry of [`Self::item_csr`].
    pub fn item_csr_edge_ids(&self) -> &[usize] {
        &self.i2u_eids
    }

    pub fn num_on(&self, side: Side) -> usize {
        match side {
            Side::User => self.num_users,
            Side::Item => self.num_items,
        }
    }

    /// Neighbor lists of `side`, with canonical edge ids.
    pub fn adjacency(&self, side: Side) -> Adjacency<'_> {
        match side {
            Side::User => Adjacency {
                row_ptr: &self.u2i.row_ptr,
                cols: &self.u2i.cols,
                eids: None,
            },
            Side::Item => Adjacency {
                row_ptr: &self.i2u.row_ptr,
                cols: &self.i2u.cols,
                eids: Some(&self.i2u_eids),
            },
        }
    }

    /// Incoming neighbor lists of the destinations of `dir`.
    pub fn in_adjacency(&self, dir: Direction) -> Adjacency<'_> {
        self.adjacency(dir.dst_side())
    }

    pub fn user_items(&self, u: usize) -> &[u32] {
        self.u2i.row(u)
    }

    pub fn item_users(&self, i: usize) -> &[u32] {
        self.i2u.row(i)
    }

    pub fn degree(&self, side: Side, v: usize) -> usize {
        match side {
            Side::User => self.u2i.degree(v),
            Side::Item => self.i2u.degree(v),
        }
    }

    pub fn max_degree(&self, side: Side) -> usize {
        (0..self.num_on(side))
            .map(|v| self.degree(side, v))
            .max()
            .unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, i: u32) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }

    /// Edges in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_users).flat_map(move |u| self.u2i.row(u).iter().map(move |&i| (u as u32, i)))
    }

    /// Endpoints of canonical edge `e`.
    pub fn edge(&self, e: usize) -> (u32, u32) {
        let u = self.u2i.row_ptr.partition_point(|&p| p <= e) - 1;
        (u as u32, self.u2i.cols[e])
    }

    /// Symmetric degree normalization `1 / sqrt(deg(u) * deg(i))` per
    /// canonical edge.
    pub fn sym_norm_weights<T: Scalar>(&self) -> Vec<T> {
        self.edges()
            .map(|(u, i)| {
                let d = self.u2i.degree(u as usize) as f64 * self.i2u.degree(i as usize) as f64;
                T::from_f64_lossy(1.0 / d.sqrt())
            })
            .collect()
    }

    /// Same vertex sets, different edges.
    pub fn with_edges<I>(&self, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        Self::from_edges(self.num_users, self.num_items, edges)
    }
}

/// Split the edge set into disjoint train and test graphs.
///
/// The train side receives `round(train_fraction * |E|)` edges chosen by a
/// seeded shuffle; both outputs keep the original vertex counts.
pub fn split_train_test(
    g: &BipartiteGraph,
    train_fraction: f64,
    seed: u64,
) -> Result<(BipartiteGraph, BipartiteGraph)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let mut edges: Vec<(u32, u32)> = g.edges().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let n_train = (train_fraction * edges.len() as f64).round() as usize;
    let test = edges.split_off(n_train);
    Ok((g.with_edges(edges)?, g.with_edges(test)?))
}

/// Vertex counts per exact degree for one side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeHistogram {
    pub side: Side,
    pub buckets: BTreeMap<usize, usize>,
}

impl DegreeHistogram {
    pub fn total(&self) -> usize {
        self.buckets.values().sum()
    }

    /// Two-column `degree,count` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,count\n");
        for (d, c) in &self.buckets {
            out.push_str(&format!("{d},{c}\n"));
        }
        out
    }

    /// Least-squares slope of `ln(count)` against `ln(degree)` over the
    /// nonzero-degree buckets.
    pub fn log_log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .buckets
            .iter()
            .filter(|(&d, &c)| d > 0 && c > 0)
            .map(|(&d, &c)| ((d as f64).ln(), (c as f64).ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    }
}

pub fn degree_histogram(g: &BipartiteGraph, side: Side) -> DegreeHistogram {
    let mut buckets = BTreeMap::new();
    for v in 0..g.num_on(side) {
        *buckets.entry(g.degree(side, v)).or_insert(0) += 1;
    }
    DegreeHistogram { side, buckets }
}
