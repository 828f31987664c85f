use std::fmt;
use std::str::FromStr;

use super::host::available_nodes;
use crate::error::{Error, Result};

/// Page size assumed for placement bookkeeping.
pub const PAGE_SIZE: usize = 4096;

/// How the pages of a region are distributed over memory nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum PlacementPolicy {
    /// Page `p` goes to node `p % n`.
    Interleaved,
    /// Contiguous page blocks, one per node. `weights` gives the relative
    /// block sizes; empty means equal blocks.
    Blocked { weights: Vec<u32> },
}

impl PlacementPolicy {
    /// Node index (into the node set) of every page of a `pages`-page region.
    pub fn assign_pages(&self, pages: usize, nodes: usize) -> Result<Vec<usize>> {
        if nodes == 0 {
            return Err(Error::InvalidArgument("empty node set".into()));
        }
        match self {
            PlacementPolicy::Interleaved => Ok((0..pages).map(|p| p % nodes).collect()),
            PlacementPolicy::Blocked { weights } => {
                let weights: Vec<u64> = if weights.is_empty() {
                    vec![1; nodes]
                } else if weights.len() != nodes {
                    return Err(Error::InvalidArgument(format!(
                        "{} block weights for {nodes} nodes",
                        weights.len()
                    )));
                } else {
                    weights.iter().map(|&w| w as u64).collect()
                };
                let total: u64 = weights.iter().sum();
                if total == 0 {
                    return Err(Error::InvalidArgument("block weights sum to zero".into()));
                }
                let mut out = Vec::with_capacity(pages);
                let mut cum = 0u64;
                for (n, w) in weights.iter().enumerate() {
                    cum += w;
                    let end = (pages as u64 * cum / total) as usize;
                    out.resize(end, n);
                }
                Ok(out)
            }
        }
    }
}

impl fmt::Display for PlacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacementPolicy::Interleaved => f.write_str("interleaved"),
            PlacementPolicy::Blocked { weights } if weights.is_empty() => f.write_str("blocked"),
            PlacementPolicy::Blocked { weights } => {
                let w: Vec<String> = weights.iter().map(u32::to_string).collect();
                write!(f, "blocked:{}", w.join(":"))
            }
        }
    }
}

impl FromStr for PlacementPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        match parts.next() {
            Some("interleaved") if s == "interleaved" => Ok(PlacementPolicy::Interleaved),
            Some("blocked") => {
                let weights = parts
                    .map(|w| {
                        w.parse::<u32>()
                            .map_err(|_| Error::InvalidArgument(format!("bad block weight `{w}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PlacementPolicy::Blocked { weights })
            }
            _ => Err(Error::InvalidArgument(format!("unknown placement `{s}`"))),
        }
    }
}

/// A policy together with the node set it spreads pages over.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Placement {
    pub policy: PlacementPolicy,
    pub nodes: Vec<u32>,
}

impl Placement {
    pub fn new(policy: PlacementPolicy, nodes: Vec<u32>) -> Self {
        Self { policy, nodes }
    }

    /// Node list formatted as `0+1+3`.
    pub fn nodes_label(&self) -> String {
        let n: Vec<String> = self.nodes.iter().map(u32::to_string).collect();
        n.join("+")
    }
}

/// Outcome of placing a region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlacedRegion {
    /// Memory node of every page of the region.
    pub page_nodes: Vec<u32>,
    /// True when the host has a single memory node and placement is
    /// bookkeeping only.
    pub emulated: bool,
}

impl PlacedRegion {
    pub fn pages_on(&self, node: u32) -> usize {
        self.page_nodes.iter().filter(|&&n| n == node).count()
    }
}

/// Bind the pages backing `region` to memory nodes according to `policy`.
///
/// On a single-node host nothing is bound and the result is flagged as
/// emulated. Requested nodes must exist on the host.
pub fn place<T>(region: &mut [T], policy: &PlacementPolicy, nodes: &[u32]) -> Result<PlacedRegion> {
    let available = available_nodes();
    for &n in nodes {
        if !available.contains(&n) {
            return Err(Error::NodeUnavailable {
                node: n,
                available,
            });
        }
    }
    let bytes = std::mem::size_of_val(region);
    let pages = bytes.div_ceil(PAGE_SIZE);
    let assignment = policy.assign_pages(pages, nodes.len())?;
    let page_nodes: Vec<u32> = assignment.iter().map(|&k| nodes[k]).collect();
    let emulated = available.len() < 2;
    if !emulated {
        bind_pages(region.as_mut_ptr() as usize, bytes, &page_nodes)?;
    }
    Ok(PlacedRegion {
        page_nodes,
        emulated,
    })
}

/// [`place`] with a bundled [`Placement`].
pub fn bind_slice<T>(region: &mut [T], placement: &Placement) -> Result<PlacedRegion> {
    place(region, &placement.policy, &placement.nodes)
}

#[cfg(target_os = "linux")]
fn bind_pages(start: usize, bytes: usize, page_nodes: &[u32]) -> Result<()> {
    const MPOL_BIND: libc::c_ulong = 2;
    const MPOL_MF_MOVE: libc::c_ulong = 2;
    let os_page = host_page_size();
    let first_page = start.div_ceil(os_page) * os_page;
    let end = start + bytes;
    let mut addr = first_page;
    while addr + os_page <= end {
        let node = page_nodes[(addr - start) / PAGE_SIZE];
        let mut run_end = addr + os_page;
        while run_end + os_page <= end && page_nodes[(run_end - start) / PAGE_SIZE] == node {
            run_end += os_page;
        }
        let mut mask = vec![0 as libc::c_ulong; node as usize / 64 + 1];
        mask[node as usize / 64] |= 1 << (node % 64);
        let maxnode = (mask.len() * 64 + 1) as libc::c_ulong;
        // SAFETY: the range lies inside `region`, which the caller borrows
        // mutably; mbind only changes the backing policy of those pages.
        let rc = unsafe {
            libc::syscall(
                libc::SYS_mbind,
                addr as *mut libc::c_void,
                run_end - addr,
                MPOL_BIND,
                mask.as_ptr(),
                maxnode,
                MPOL_MF_MOVE,
            )
        };
        if rc != 0 {
            return Err(Error::Binding(format!(
                "mbind to node {node}: {}",
                std::io::Error::last_os_error()
            )));
        }
        addr = run_end;
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
fn bind_pages(_start: usize, _bytes: usize, _page_nodes: &[u32]) -> Result<()> {
    Err(Error::Binding("page binding requires Linux".into()))
}

fn host_page_size() -> usize {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as usize
    } else {
        PAGE_SIZE
    }
}
