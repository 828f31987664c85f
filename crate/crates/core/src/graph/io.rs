//! Edge-list ingestion and the binary graph cache.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BipartiteGraph, Csr};
use crate::error::{Error, Result};

pub const GRAPH_CACHE_MAGIC: [u8; 8] = *b"GNNRGRPH";
pub const GRAPH_CACHE_VERSION: u32 = 1;

/// Field separator of a text edge list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EdgeListFormat {
    /// Tab- or space-separated columns.
    #[default]
    Whitespace,
    /// Comma-separated columns.
    Csv,
}

/// Dense-to-original id mapping produced by compaction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<u64>,
    pub items: Vec<u64>,
}

impl IdMap {
    /// Text form: one `side<TAB>dense<TAB>original` line per vertex.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# side\tdense\toriginal\n");
        for (d, o) in self.users.iter().enumerate() {
            out.push_str(&format!("u\t{d}\t{o}\n"));
        }
        for (d, o) in self.items.iter().enumerate() {
            out.push_str(&format!("i\t{d}\t{o}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = IdMap::default();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse {
                line: n + 1,
                msg: format!("bad id map line `{line}`"),
            };
            if f.len() != 3 {
                return Err(bad());
            }
            let dense: usize = f[1].parse().map_err(|_| bad())?;
            let orig: u64 = f[2].parse().map_err(|_| bad())?;
            let side = match f[0] {
                "u" => &mut map.users,
                "i" => &mut map.items,
                _ => return Err(bad()),
            };
            if dense != side.len() {
                return Err(bad());
            }
            side.push(orig);
        }
        Ok(map)
    }
}

struct RawEdges {
    edges: Vec<(u64, u64)>,
    header_users: Option<usize>,
    header_items: Option<usize>,
}

fn parse_header(line: &str) -> (Option<usize>, Option<usize>) {
    let mut users = None;
    let mut items = None;
    for tok in line.trim_start_matches(['#', '%']).split_whitespace() {
        if let Some(v) = tok.strip_prefix("users=") {
            users = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("items=") {
            items = v.parse().ok();
        }
    }
    (users, items)
}

fn read_raw<R: BufRead>(reader: R, format: EdgeListFormat) -> Result<RawEdges> {
    let mut raw = RawEdges {
        edges: Vec::new(),
        header_users: None,
        header_items: None,
    };
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') || trimmed.starts_with('%') {
            let (u, i) = parse_header(trimmed);
            raw.header_users = raw.header_users.or(u);
            raw.header_items = raw.header_items.or(i);
            continue;
        }
        let mut fields: Box<dyn Iterator<Item = &str>> = match format {
            EdgeListFormat::Whitespace => Box::new(trimmed.split_whitespace()),
            EdgeListFormat::Csv => Box::new(trimmed.split(',').map(str::trim)),
        };
        let mut field = |what: &str| -> Result<u64> {
            let tok = fields.next().ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("missing {what} id"),
            })?;
            tok.parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("invalid {what} id `{tok}`"),
            })
        };
        let u = field("user")?;
        let i = field("item")?;
        raw.edges.push((u, i));
    }
    if raw.edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(raw)
}

fn to_u32(v: u64, line_hint: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{line_hint} id {v} exceeds 32 bits")))
}

/// Parse a text edge list. Vertex counts are `1 + max id` per side unless a
/// `# users=N items=M` comment line overrides them.
pub fn parse_edge_list<R: Read>(reader: R, format: EdgeListFormat) -> Result<BipartiteGraph> {
    let raw = read_raw(BufReader::new(reader), format)?;
    let max_u = raw.edges.iter().map(|e| e.0).max().unwrap_or(0);
    let max_i = raw.edges.iter().map(|e| e.1).max().unwrap_or(0);
    let num_users = raw.header_users.unwrap_or(max_u as usize + 1);
    let num_items = raw.header_items.unwrap_or(max_i as usize + 1);
    let edges = raw
        .edges
        .iter()
        .map(|&(u, i)| Ok((to_u32(u, "user")?, to_u32(i, "item")?)))
        .collect::<Result<Vec<_>>>()?;
    BipartiteGraph::from_edges(num_users, num_items, edges)
}

pub fn load_edge_list(path: impl AsRef<Path>, format: EdgeListFormat) -> Result<BipartiteGraph> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(f, format)
}

/// Load an edge list and remap the observed ids of each side onto a dense
/// `0..n` range, ordered by original id.
pub fn load_edge_list_compacted(
    path: impl AsRef<Path>,
    format: EdgeListFormat,
) -> Result<(BipartiteGraph, IdMap)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let raw = read_raw(BufReader::new(f), format)?;
    let mut users: Vec<u64> = raw.edges.iter().map(|e| e.0).collect();
    let mut items: Vec<u64> = raw.edges.iter().map(|e| e.1).collect();
    users.sort_unstable();
    users.dedup();
    items.sort_unstable();
    items.dedup();
    let uidx: HashMap<u64, u32> = users.iter().enumerate().map(|(d, &o)| (o, d as u32)).collect();
    let iidx: HashMap<u64, u32> = items.iter().enumerate().map(|(d, &o)| (o, d as u32)).collect();
    let edges = raw.edges.iter().map(|(u, i)| (uidx[u], iidx[i]));
    let g = BipartiteGraph::from_edges(users.len(), items.len(), edges)?;
    Ok((g, IdMap { users, items }))
}

pub fn write_edge_list(g: &BipartiteGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "# users={} items={}", g.num_users(), g.num_items()).map_err(io)?;
    for (u, i) in g.edges() {
        writeln!(w, "{u}\t{i}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Binary cache layout, all little-endian:
///
/// ```text
/// magic[8] version:u32 num_users:u64 num_items:u64 num_edges:u64
/// row_ptr:[u64; num_users + 1] item_ids:[u32; num_edges]
/// ```
pub fn write_graph_cache<W: Write>(g: &BipartiteGraph, mut w: W) -> std::io::Result<()> {
    w.write_all(&GRAPH_CACHE_MAGIC)?;
    w.write_all(&GRAPH_CACHE_VERSION.to_le_bytes())?;
    for n in [g.num_users(), g.num_items(), g.num_edges()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &p in &g.user_csr().row_ptr {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    for &c in &g.user_csr().cols {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_graph_cache<R: Read>(mut r: R) -> Result<BipartiteGraph> {
    let fmt = |e: std::io::Error| Error::Format(format!("truncated graph cache: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(fmt)?;
    if magic != GRAPH_CACHE_MAGIC {
        return Err(Error::Format("not a graph cache (bad magic)".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(fmt)?;
    let version = u32::from_le_bytes(v);
    if version != GRAPH_CACHE_VERSION {
        return Err(Error::Format(format!("unsupported graph cache version {version}")));
    }
    let num_users = read_u64(&mut r).map_err(fmt)? as usize;
    let num_items = read_u64(&mut r).map_err(fmt)? as usize;
    let num_edges = read_u64(&mut r).map_err(fmt)? as usize;
    let mut row_ptr = Vec::with_capacity(num_users + 1);
    for _ in 0..=num_users {
        row_ptr.push(read_u64(&mut r).map_err(fmt)? as usize);
    }
    let mut buf = vec![0u8; num_edges * 4];
    r.read_exact(&mut buf).map_err(fmt)?;
    let cols = buf
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    BipartiteGraph::from_user_csr(num_users, num_items, Csr { row_ptr, cols })
}

impl BipartiteGraph {
    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_graph_cache(self, BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        read_graph_cache(BufReader::new(f))
    }

    /// Load either a binary cache (detected by magic) or a text edge list.
    pub fn load_any(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut head = [0u8; 8];
        let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
        if n == 8 && head == GRAPH_CACHE_MAGIC {
            Self::load_cache(path)
        } else {
            load_edge_list(path, EdgeListFormat::Whitespace)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<BipartiteGraph> {
        parse_edge_list(s.as_bytes(), EdgeListFormat::Whitespace)
    }

    #[test]
    fn load_examples() {
        let g = parse("0\t0\n0\t1\n1\t0").unwrap();
        assert_eq!((g.num_users(), g.num_items(), g.num_edges()), (2, 2, 3));

        let g = parse("0\t0\n0\t0").unwrap();
        assert_eq!(g.num_edges(), 1);

        match parse("0\tx") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ignores_extra_columns_and_comments() {
        let g = parse("% movielens\n# users=4 items=9\n1 2 5.0 881250949\n\n3\t8\t1\n").unwrap();
        assert_eq!((g.num_users(), g.num_items(), g.num_edges()), (4, 9, 2));
    }

    #[test]
    fn empty_and_short_lines_fail() {
        assert!(matches!(parse("# nothing\n"), Err(Error::EmptyGraph)));
        assert!(matches!(parse("0 1\n2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("-1 2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_variant() {
        let g = parse_edge_list("0,1\n2, 0\n".as_bytes(), EdgeListFormat::Csv).unwrap();
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn compaction_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        std::fs::write(&p, "100\t7\n5\t7\n100\t900\n").unwrap();
        let (g, map) = load_edge_list_compacted(&p, EdgeListFormat::Whitespace).unwrap();
        assert_eq!((g.num_users(), g.num_items()), (2, 2));
        assert_eq!(map.users, vec![5, 100]);
        assert_eq!(map.items, vec![7, 900]);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(IdMap::from_text(&map.to_text()).unwrap(), map);
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let g = parse("0 0\n0 1\n1 0\n3 2\n").unwrap();
        let mut buf = Vec::new();
        write_graph_cache(&g, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"GNNRGRPH");
        assert_eq!(buf.len(), 8 + 4 + 24 + 8 * 5 + 4 * 4);
        assert_eq!(read_graph_cache(&buf[..]).unwrap(), g);

        assert!(read_graph_cache(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_graph_cache(&bad[..]).is_err());
        // item id out of range
        let mut bad = buf.clone();
        let n = bad.len();
        bad[n - 4..].copy_from_slice(&99u32.to_le_bytes());
        assert!(read_graph_cache(&bad[..]).is_err());
    }

    #[test]
    fn text_round_trip_keeps_vertex_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        let g = BipartiteGraph::from_edges(6, 4, [(0, 1), (2, 2)]).unwrap();
        write_edge_list(&g, &p).unwrap();
        assert_eq!(BipartiteGraph::load_any(&p).unwrap(), g);
        let c = dir.path().join("g.bin");
        g.save_cache(&c).unwrap();
        assert_eq!(BipartiteGraph::load_any(&c).unwrap(), g);
    }
}
