//! Subgraph redundancy for simulated workers and the largest batch that
//! fits a memory budget.

use gnnrec::redundancy::{batch_redundancy, redundancy_csv, redundancy_report, Expansion};
use gnnrec::synth::{power_law_communities, SynthConfig};

fn main() -> gnnrec::Result<()> {
    let g = power_law_communities(&SynthConfig {
        users: 3000,
        items: 2000,
        target_edges: 40_000,
        communities: 10,
        ..Default::default()
    })?;
    for layers in 1..=3 {
        let r = batch_redundancy(&g, 32, 8, &Expansion::new(layers, Some(10), 0))?;
        println!(
            "L={layers}: union {} vertices, ratio {:.2} (edges {:.2})",
            r.union_vertices, r.ratio_vertices, r.ratio_edges
        );
    }
    let rows = redundancy_report(&g, &[1, 4], &[16], &[1, 2], &[None, Some(5)], 64 << 20, &Expansion::new(0, None, 0))?;
    print!("{}", redundancy_csv(&rows));
    Ok(())
}
