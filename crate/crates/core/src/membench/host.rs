use std::fs;

use crate::scalar::streaming_stores_available;

/// LLC size assumed when the host does not report one.
const FALLBACK_LLC_BYTES: usize = 32 << 20;

/// Host properties that shape bandwidth measurements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostInfo {
    pub cpus: usize,
    pub numa_nodes: Vec<u32>,
    pub llc_bytes: usize,
    pub page_size: usize,
    pub streaming_stores: bool,
    /// Transparent huge page mode, e.g. `madvise`.
    pub thp: String,
}

impl HostInfo {
    pub fn detect() -> Self {
        Self {
            cpus: available_cpus(),
            numa_nodes: available_nodes(),
            llc_bytes: llc_bytes(),
            page_size: super::placement::PAGE_SIZE,
            streaming_stores: streaming_stores_available(),
            thp: thp_mode(),
        }
    }

    /// `key=value` lines, one per property, preceded by a comment line.
    pub fn to_sidecar(&self) -> String {
        let nodes: Vec<String> = self.numa_nodes.iter().map(u32::to_string).collect();
        format!(
            "# host metadata\ncpus={}\nnuma_nodes={}\nllc_bytes={}\npage_size={}\nstreaming_stores={}\nthp={}\n",
            self.cpus,
            nodes.join(","),
            self.llc_bytes,
            self.page_size,
            self.streaming_stores,
            self.thp
        )
    }
}

pub fn available_cpus() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Online memory nodes; `[0]` where the host exposes no topology.
pub fn available_nodes() -> Vec<u32> {
    fs::read_to_string("/sys/devices/system/node/online")
        .ok()
        .and_then(|s| parse_id_list(s.trim()))
        .filter(|v| !v.is_empty())
        .unwrap_or_else(|| vec![0])
}

/// Parse a kernel id list such as `0-3,8,10-11`.
pub fn parse_id_list(s: &str) -> Option<Vec<u32>> {
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (a.parse::<u32>().ok()?, b.parse::<u32>().ok()?);
                if a > b {
                    return None;
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().ok()?),
        }
    }
    Some(out)
}

/// Size of the highest cache level reported for cpu0.
pub fn llc_bytes() -> usize {
    let base = "/sys/devices/system/cpu/cpu0/cache";
    let mut best: Option<(u32, usize)> = None;
    let Ok(entries) = fs::read_dir(base) else {
        return FALLBACK_LLC_BYTES;
    };
    for entry in entries.flatten() {
        let p = entry.path();
        let level = fs::read_to_string(p.join("level")).ok().and_then(|s| s.trim().parse().ok());
        let size = fs::read_to_string(p.join("size")).ok().and_then(|s| parse_size(s.trim()));
        if let (Some(level), Some(size)) = (level, size) {
            if best.is_none_or(|(l, _)| level > l) {
                best = Some((level, size));
            }
        }
    }
    best.map_or(FALLBACK_LLC_BYTES, |(_, s)| s)
}

/// Parse sizes such as `32K`, `1024K`, `36M`.
pub fn parse_size(s: &str) -> Option<usize> {
    let (num, mult) = match s.chars().last()? {
        'K' | 'k' => (&s[..s.len() - 1], 1 << 10),
        'M' | 'm' => (&s[..s.len() - 1], 1 << 20),
        'G' | 'g' => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    num.parse::<usize>().ok().map(|n| n * mult)
}

fn thp_mode() -> String {
    fs::read_to_string("/sys/kernel/mm/transparent_hugepage/enabled")
        .ok()
        .and_then(|s| {
            let start = s.find('[')?;
            let end = s[start..].find(']')?;
            Some(s[start + 1..start + end].to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_lists() {
        assert_eq!(parse_id_list("0"), Some(vec![0]));
        assert_eq!(parse_id_list("0-2,5"), Some(vec![0, 1, 2, 5]));
        assert_eq!(parse_id_list("3-1"), None);
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("32K"), Some(32 << 10));
        assert_eq!(parse_size("36M"), Some(36 << 20));
        assert_eq!(parse_size("x"), None);
    }

    #[test]
    fn sidecar_has_every_key() {
        let s = HostInfo::detect().to_sidecar();
        for key in ["cpus=", "numa_nodes=", "llc_bytes=", "page_size=", "streaming_stores=", "thp="] {
            assert!(s.contains(key), "{key} missing");
        }
    }
}
