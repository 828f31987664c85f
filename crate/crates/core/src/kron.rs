//! Kronecker expansion of a bipartite graph by a small 0/1 seed block.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;

/// `k_u x k_i` binary mask; row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedBlock {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl SeedBlock {
    pub fn new(rows: usize, cols: usize, mask: Vec<bool>) -> Result<Self> {
        if rows == 0 || cols == 0 || mask.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "seed mask of {} entries does not fill {rows}x{cols}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("seed mask has no nonzero entry".into()));
        }
        Ok(Self { rows, cols, mask })
    }

    /// All-ones `k x k` block.
    pub fn ones(k: usize) -> Result<Self> {
        Self::new(k, k, vec![true; k * k])
    }

    /// Dense text grid of `0`/`1` tokens, one row per line. Blank lines and
    /// `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = 0;
        let mut cols = None;
        let mut mask = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<bool> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| match t {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Parse {
                        line: n + 1,
                        msg: format!("seed entry `{other}` is not 0 or 1"),
                    }),
                })
                .collect::<Result<_>>()?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::Parse {
                        line: n + 1,
                        msg: format!("row has {} entries, expected {c}", row.len()),
                    })
                }
                _ => {}
            }
            mask.extend(row);
            rows += 1;
        }
        Self::new(rows, cols.unwrap_or(0), mask)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.mask[a * self.cols + b]
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.rows * self.cols) as f64
    }

    /// Nonzero positions in row-major order.
    pub fn nonzeros(&self) -> Vec<(u64, u64)> {
        (0..self.rows)
            .flat_map(|a| (0..self.cols).map(move |b| (a, b)))
            .filter(|&(a, b)| self.get(a, b))
            .map(|(a, b)| (a as u64, b as u64))
            .collect()
    }
}

impl fmt::Display for SeedBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in 0..self.rows {
            let row: Vec<&str> = (0..self.cols).map(|b| if self.get(a, b) { "1" } else { "0" }).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Sizes before and after an expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandManifest {
    pub input_users: u64,
    pub input_items: u64,
    pub input_edges: u64,
    pub seed_rows: u64,
    pub seed_cols: u64,
    pub seed_nnz: u64,
    pub output_users: u64,
    pub output_items: u64,
    pub output_edges: u64,
    pub permuted: bool,
}

impl ExpandManifest {
    /// Output sizes for an input of the given shape, without expanding.
    pub fn plan(users: u64, items: u64, edges: u64, seed: &SeedBlock) -> Result<Self> {
        let overflow = || Error::Overflow("expanded graph size exceeds u64".into());
        let (r, c, nnz) = (seed.rows as u64, seed.cols as u64, seed.nnz() as u64);
        Ok(Self {
            input_users: users,
            input_items: items,
            input_edges: edges,
            seed_rows: r,
            seed_cols: c,
            seed_nnz: nnz,
            output_users: users.checked_mul(r).ok_or_else(overflow)?,
            output_items: items.checked_mul(c).ok_or_else(overflow)?,
            output_edges: edges.checked_mul(nnz).ok_or_else(overflow)?,
            permuted: false,
        })
    }

    pub fn input_density(&self) -> f64 {
        self.input_edges as f64 / (self.input_users as f64 * self.input_items as f64)
    }

    pub fn output_density(&self) -> f64 {
        self.output_edges as f64 / (self.output_users as f64 * self.output_items as f64)
    }

    pub fn to_text(&self) -> String {
        format!(
            "input_users = {}\ninput_items = {}\ninput_edges = {}\ninput_density = {:.6}\n\
             seed = {}x{}\nseed_nnz = {}\n\
             output_users = {}\noutput_items = {}\noutput_edges = {}\noutput_density = {:.6}\npermuted = {}\n",
            self.input_users,
            self.input_items,
            self.input_edges,
            self.input_density(),
            self.seed_rows,
            self.seed_cols,
            self.seed_nnz,
            self.output_users,
            self.output_items,
            self.output_edges,
            self.output_density(),
            self.permuted
        )
    }
}

/// Receives expanded edges in output order.
pub trait EdgeSink {
    fn begin(&mut self, _manifest: &ExpandManifest) -> Result<()> {
        Ok(())
    }

    fn push(&mut self, edges: &[(u64, u64)]) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Collects edges into memory for building a [`BipartiteGraph`].
#[derive(Debug, Default)]
pub struct GraphSink {
    users: usize,
    items: usize,
    edges: Vec<(u32, u32)>,
}

impl GraphSink {
    pub fn into_graph(self) -> Result<BipartiteGraph> {
        BipartiteGraph::from_edges(self.users, self.items, self.edges)
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }
}

impl EdgeSink for GraphSink {
    fn begin(&mut self, m: &ExpandManifest) -> Result<()> {
        let fits = |n: u64| n <= u32::MAX as u64;
        if !fits(m.output_users) || !fits(m.output_items) {
            return Err(Error::Overflow(format!(
                "{}x{} vertices do not fit 32-bit ids",
                m.output_users, m.output_items
            )));
        }
        self.users = m.output_users as usize;
        self.items = m.output_items as usize;
        self.edges.reserve(m.output_edges as usize);
        Ok(())
    }

    fn push(&mut self, edges: &[(u64, u64)]) -> Result<()> {
        self.edges.extend(edges.iter().map(|&(u, i)| (u as u32, i as u32)));
        Ok(())
    }
}

/// Writes a text edge list with a `# users=N items=M` header.
pub struct EdgeListSink<W: Write> {
    out: W,
}

impl<W: Write> EdgeListSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<edge sink>", e)
}

impl<W: Write> EdgeSink for EdgeListSink<W> {
    fn begin(&mut self, m: &ExpandManifest) -> Result<()> {
        writeln!(self.out, "# users={} items={}", m.output_users, m.output_items).map_err(io_err)
    }

    fn push(&mut self, edges: &[(u64, u64)]) -> Result<()> {
        for (u, i) in edges {
            writeln!(self.out, "{u}\t{i}").map_err(io_err)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush().map_err(io_err)
    }
}

/// Counts edges without storing them.
#[derive(Debug, Default)]
pub struct CountingSink {
    pub edges: u64,
}

impl EdgeSink for CountingSink {
    fn push(&mut self, edges: &[(u64, u64)]) -> Result<()> {
        self.edges += edges.len() as u64;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KronOptions {
    /// Refuse outputs with more edges than this.
    pub edge_cap: u64,
    /// Relabel output users and items by seeded random permutations.
    pub permute_seed: Option<u64>,
    /// Input edges expanded per parallel chunk.
    pub chunk_edges: usize,
}

impl Default for KronOptions {
    fn default() -> Self {
        Self {
            edge_cap: 1 << 31,
            permute_seed: None,
            chunk_edges: 1 << 16,
        }
    }
}

fn permutation(n: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut p: Vec<u64> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Stream the Kronecker product of `g`'s biadjacency with `seed` into
/// `sink`. Input edge `(u, i)` and seed nonzero `(a, b)` give output edge
/// `(u * k_u + a, i * k_i + b)`, ordered by input edge then seed position.
pub fn expand_into(
    g: &BipartiteGraph,
    seed: &SeedBlock,
    opts: &KronOptions,
    sink: &mut dyn EdgeSink,
) -> Result<ExpandManifest> {
    let mut manifest = ExpandManifest::plan(g.num_users() as u64, g.num_items() as u64, g.num_edges() as u64, seed)?;
    if manifest.output_edges > opts.edge_cap {
        return Err(Error::EdgeCap {
            required: manifest.output_edges,
            cap: opts.edge_cap,
        });
    }
    let perms = opts.permute_seed.map(|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let pu = permutation(manifest.output_users, &mut rng);
        let pi = permutation(manifest.output_items, &mut rng);
        (pu, pi)
    });
    manifest.permuted = perms.is_some();
    sink.begin(&manifest)?;
    let nz = seed.nonzeros();
    let (ku, ki) = (seed.rows as u64, seed.cols as u64);
    let input: Vec<(u32, u32)> = g.edges().collect();
    for chunk in input.chunks(opts.chunk_edges.max(1)) {
        let out: Vec<(u64, u64)> = chunk
            .par_iter()
            .flat_map_iter(|&(u, i)| {
                let perms = perms.as_ref();
                nz.iter().map(move |&(a, b)| {
                    let (nu, ni) = (u as u64 * ku + a, i as u64 * ki + b);
                    match perms {
                        Some((pu, pi)) => (pu[nu as usize], pi[ni as usize]),
                        None => (nu, ni),
                    }
                })
            })
            .collect();
        sink.push(&out)?;
    }
    sink.finish()?;
    Ok(manifest)
}

/// In-memory expansion.
pub fn expand(g: &BipartiteGraph, seed: &SeedBlock, opts: &KronOptions) -> Result<BipartiteGraph> {
    let mut sink = GraphSink::default();
    expand_into(g, seed, opts, &mut sink)?;
    sink.into_graph()
}
