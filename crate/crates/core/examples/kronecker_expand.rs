//! Expand a graph with an all-ones seed and with a custom mask, then plan
//! a large expansion without materializing it.

use gnnrec::graph::{degree_histogram, Side};
use gnnrec::kron::{expand, ExpandManifest, KronOptions, SeedBlock};
use gnnrec::synth::{power_law_communities, SynthConfig};

fn main() -> gnnrec::Result<()> {
    let g = power_law_communities(&SynthConfig {
        users: 1000,
        items: 800,
        target_edges: 12_000,
        communities: 8,
        ..Default::default()
    })?;
    for k in [2, 3] {
        let out = expand(&g, &SeedBlock::ones(k)?, &KronOptions::default())?;
        let slope = |g| degree_histogram(g, Side::Item).log_log_slope().unwrap_or(f64::NAN);
        println!(
            "k={k}: {} -> {} edges, density {:.4}% -> {:.4}%, item slope {:.3} -> {:.3}",
            g.num_edges(),
            out.num_edges(),
            g.density() * 100.0,
            out.density() * 100.0,
            slope(&g),
            slope(&out)
        );
    }

    let mask = SeedBlock::parse("1 1\n0 1\n")?;
    let opts = KronOptions {
        permute_seed: Some(1),
        ..Default::default()
    };
    let out = expand(&g, &mask, &opts)?;
    println!("mask\n{mask}-> {} edges (x{})", out.num_edges(), mask.nnz());

    let plan = ExpandManifest::plan(69_878, 10_677, 10_000_054, &SeedBlock::ones(5)?)?;
    print!("{}", plan.to_text());
    Ok(())
}
