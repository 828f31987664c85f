//! Random-access bandwidth against access size, for reads and writes.
//!
//! ```text
//! cargo run --release --example bandwidth_sweep -- 1024
//! ```
//! The argument is the region size in MiB; it must exceed twice the LLC.

use gnnrec::membench::{sweep, sweep_csv_rows, AccessPattern, BenchSpec, MemOp, SweepGrid, SWEEP_CSV_HEADER};

fn main() -> gnnrec::Result<()> {
    let mib: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let mut grid = SweepGrid::new(BenchSpec {
        region_bytes: mib << 20,
        repetitions: 3,
        ..Default::default()
    });
    grid.patterns = vec![AccessPattern::Random];
    grid.ops = vec![MemOp::Read, MemOp::Write, MemOp::NtWrite];
    grid.access_sizes = vec![64, 256, 1024, 4096];
    let rows = sweep(&grid)?;
    println!("{SWEEP_CSV_HEADER}");
    print!("{}", sweep_csv_rows(&rows, 0));
    Ok(())
}
