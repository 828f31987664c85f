//! Memory-bandwidth microbenchmarks: sequential and random reads, writes
//! and streaming writes over large regions, swept across access sizes,
//! thread counts and page placements.

mod host;
mod placement;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{streaming_fence, streaming_stores_available};

pub use host::{available_cpus, available_nodes, llc_bytes, parse_id_list, parse_size, HostInfo};
pub use placement::{bind_slice, place, PlacedRegion, Placement, PlacementPolicy, PAGE_SIZE};

pub const SWEEP_CSV_HEADER: &str = "pattern,op,access_size,threads,placement,nodes,gbps,run_id,error";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessPattern {
    Sequential,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemOp {
    Read,
    Write,
    /// Streaming stores that bypass the caches.
    NtWrite,
}

macro_rules! text_enum {
    ($ty:ident { $($var:ident => $s:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $s),* })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)*
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(AccessPattern { Sequential => "sequential", Random => "random" });
text_enum!(MemOp { Read => "read", Write => "write", NtWrite => "nt_write" });

/// One benchmark cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchSpec {
    pub pattern: AccessPattern,
    pub op: MemOp,
    /// Bytes per access; a multiple of 64 in `64..=4096`.
    pub access_size: usize,
    pub threads: usize,
    pub region_bytes: usize,
    pub placement: Option<Placement>,
    pub repetitions: usize,
    pub seed: u64,
    /// Smallest admissible region. `None` means twice the host LLC.
    pub min_region_bytes: Option<usize>,
    /// Random accesses per thread and repetition. `None` covers each
    /// thread's partition once on average.
    pub random_accesses: Option<usize>,
    /// Permit more threads than CPUs.
    pub allow_oversubscribe: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            pattern: AccessPattern::Sequential,
            op: MemOp::Read,
            access_size: 64,
            threads: 1,
            region_bytes: 1 << 30,
            placement: None,
            repetitions: 5,
            seed: 0,
            min_region_bytes: None,
            random_accesses: None,
            allow_oversubscribe: false,
        }
    }
}

impl BenchSpec {
    fn validate(&self) -> Result<()> {
        if self.access_size < 64 || self.access_size > 4096 || !self.access_size.is_multiple_of(64) {
            return Err(Error::InvalidArgument(format!(
                "access size {} is not a multiple of 64 in 64..=4096",
                self.access_size
            )));
        }
        if self.threads == 0 || self.repetitions == 0 {
            return Err(Error::InvalidArgument("threads and repetitions must be positive".into()));
        }
        let cpus = available_cpus();
        if self.threads > cpus && !self.allow_oversubscribe {
            return Err(Error::WorkersUnavailable {
                requested: self.threads,
                available: cpus,
            });
        }
        let floor = self.min_region_bytes.unwrap_or_else(|| 2 * llc_bytes());
        if self.region_bytes < floor {
            return Err(Error::RegionTooSmall {
                region: self.region_bytes,
                floor,
            });
        }
        if self.region_bytes / self.threads < self.access_size {
            return Err(Error::InvalidArgument("region too small for one access per thread".into()));
        }
        Ok(())
    }

    /// Block indices touched by `worker` in one repetition, given its
    /// partition holds `blocks` access-size blocks.
    pub fn access_sequence(&self, worker: usize, blocks: usize) -> Vec<u32> {
        match self.pattern {
            AccessPattern::Sequential => (0..blocks as u32).collect(),
            AccessPattern::Random => {
                let n = self.random_accesses.unwrap_or(blocks);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (worker as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                (0..n).map(|_| rng.random_range(0..blocks as u32)).collect()
            }
        }
    }
}

/// Result of one benchmark cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub spec: BenchSpec,
    pub bytes_moved: u64,
    /// Repetitions times the median repetition time.
    pub elapsed_secs: f64,
    /// `bytes_moved / elapsed_secs`.
    pub bytes_per_sec: f64,
    /// Whether `NtWrite` used real streaming stores.
    pub streaming_used: bool,
    pub placement_emulated: bool,
}

impl BenchRecord {
    pub fn gbps(&self) -> f64 {
        self.bytes_per_sec / 1e9
    }
}

/// Measure one cell.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchRecord> {
    spec.validate()?;
    let words_per_access = spec.access_size / 8;
    let part_blocks = spec.region_bytes / spec.threads / spec.access_size;
    let part_words = part_blocks * words_per_access;
    let mut region = vec![1u64; part_words * spec.threads];
    let placement_emulated = match &spec.placement {
        Some(p) => bind_slice(&mut region, p)?.emulated,
        None => false,
    };
    let sequences: Vec<Vec<u32>> = (0..spec.threads).map(|w| spec.access_sequence(w, part_blocks)).collect();
    let accesses: u64 = sequences.iter().map(|s| s.len() as u64).sum();

    let mut times = Vec::with_capacity(spec.repetitions);
    let mut sink = 0u64;
    for rep in 0..spec.repetitions {
        let start = Instant::now();
        let sums: Vec<u64> = std::thread::scope(|s| {
            let handles: Vec<_> = region
                .chunks_mut(part_words)
                .zip(&sequences)
                .map(|(part, seq)| s.spawn(move || touch(part, seq, words_per_access, spec.op, rep as u64)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
        });
        times.push(start.elapsed());
        sink = sums.iter().fold(sink, |a, &b| a.wrapping_add(b));
    }
    std::hint::black_box(sink);
    times.sort();
    let median = times[times.len() / 2].as_secs_f64().max(1e-9);
    let bytes_moved = spec.repetitions as u64 * accesses * spec.access_size as u64;
    let elapsed_secs = spec.repetitions as f64 * median;
    Ok(BenchRecord {
        spec: spec.clone(),
        bytes_moved,
        elapsed_secs,
        bytes_per_sec: bytes_moved as f64 / elapsed_secs,
        streaming_used: spec.op == MemOp::NtWrite && streaming_stores_available(),
        placement_emulated,
    })
}

fn touch(part: &mut [u64], seq: &[u32], words: usize, op: MemOp, value: u64) -> u64 {
    let mut acc = 0u64;
    for &b in seq {
        let block = &mut part[b as usize * words..(b as usize + 1) * words];
        match op {
            MemOp::Read => {
                acc = block.iter().fold(acc, |a, &v| a.wrapping_add(v));
            }
            MemOp::Write => block.iter_mut().for_each(|v| *v = value),
            MemOp::NtWrite => block.iter_mut().for_each(|v| stream_u64(v, value)),
        }
    }
    if op == MemOp::NtWrite {
        streaming_fence();
    }
    std::hint::black_box(acc)
}

#[inline]
fn stream_u64(dst: &mut u64, value: u64) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: `dst` is a valid, aligned, exclusive reference.
    unsafe {
        std::arch::x86_64::_mm_stream_si64(dst as *mut u64 as *mut i64, value as i64);
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        *dst = value;
    }
}

/// Axes of a sweep; every combination becomes one cell.
#[derive(Clone, Debug)]
pub struct SweepGrid {
    pub patterns: Vec<AccessPattern>,
    pub ops: Vec<MemOp>,
    pub access_sizes: Vec<usize>,
    pub threads: Vec<usize>,
    /// `None` keeps the allocator's default placement.
    pub placements: Vec<Option<Placement>>,
    /// Template for the remaining fields.
    pub base: BenchSpec,
    pub cooldown: Duration,
}

impl SweepGrid {
    pub fn new(base: BenchSpec) -> Self {
        Self {
            patterns: vec![base.pattern],
            ops: vec![base.op],
            access_sizes: vec![base.access_size],
            threads: vec![base.threads],
            placements: vec![base.placement.clone()],
            base,
            cooldown: Duration::from_millis(100),
        }
    }

    pub fn cells(&self) -> Result<Vec<BenchSpec>> {
        let axes = [
            ("pattern", self.patterns.len()),
            ("op", self.ops.len()),
            ("access_size", self.access_sizes.len()),
            ("threads", self.threads.len()),
            ("placement", self.placements.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::InvalidArgument(format!("sweep axis `{name}` is empty")));
        }
        let mut out = Vec::new();
        for &pattern in &self.patterns {
            for &op in &self.ops {
                for &access_size in &self.access_sizes {
                    for &threads in &self.threads {
                        for placement in &self.placements {
                            out.push(BenchSpec {
                                pattern,
                                op,
                                access_size,
                                threads,
                                placement: placement.clone(),
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One sweep cell and its outcome; failures are kept as messages.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub spec: BenchSpec,
    pub outcome: std::result::Result<BenchRecord, String>,
}

/// Run every cell of `grid`, pausing `grid.cooldown` between cells.
pub fn sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>> {
    let cells = grid.cells()?;
    let mut rows = Vec::with_capacity(cells.len());
    for (k, spec) in cells.into_iter().enumerate() {
        if k > 0 {
            std::thread::sleep(grid.cooldown);
        }
        let outcome = run_bench(&spec).map_err(|e| e.to_string());
        rows.push(SweepRow { spec, outcome });
    }
    Ok(rows)
}

/// CSV body lines (no header) for `rows` tagged with `run_id`.
pub fn sweep_csv_rows(rows: &[SweepRow], run_id: u64) -> String {
    let mut out = String::new();
    for r in rows {
        let (placement, nodes) = match &r.spec.placement {
            Some(p) => (p.policy.to_string(), p.nodes_label()),
            None => ("default".to_string(), "local".to_string()),
        };
        let (gbps, err) = match &r.outcome {
            Ok(rec) => (format!("{:.6}", rec.gbps()), String::new()),
            Err(e) => (String::new(), e.replace([',', '\n'], ";")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.spec.pattern, r.spec.op, r.spec.access_size, r.spec.threads, placement, nodes, gbps, run_id, err
        ));
    }
    out
}

/// Append `rows` to the CSV at `path`, writing the header for a new file.
/// Returns the run id used, one more than the largest already present.
pub fn append_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<u64> {
    let existing = match fs::read_to_string(path) {
        Ok(s) => Some(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(path, e)),
    };
    let run_id = match &existing {
        Some(s) => {
            let mut lines = s.lines();
            if lines.next() != Some(SWEEP_CSV_HEADER) {
                return Err(Error::Format(format!("{} is not a sweep CSV", path.display())));
            }
            lines
                .filter_map(|l| l.split(',').nth(7).and_then(|v| v.parse::<u64>().ok()))
                .max()
                .map_or(0, |m| m + 1)
        }
        None => 0,
    };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if existing.is_none() {
        text.push_str(SWEEP_CSV_HEADER);
        text.push('\n');
    }
    text.push_str(&sweep_csv_rows(rows, run_id));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(run_id)
}
