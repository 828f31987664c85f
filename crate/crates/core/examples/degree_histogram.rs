//! Load an edge list (or generate one) and print its degree histograms.
//!
//! ```text
//! cargo run --example degree_histogram -- data/ratings.tsv
//! ```

use gnnrec::graph::{degree_histogram, BipartiteGraph, Side};
use gnnrec::synth::{power_law_communities, SynthConfig};

fn main() -> gnnrec::Result<()> {
    let g = match std::env::args().nth(1) {
        Some(path) => BipartiteGraph::load_any(path)?,
        None => power_law_communities(&SynthConfig::default())?,
    };
    println!("{} users, {} items, {} edges, density {:.4}%", g.num_users(), g.num_items(), g.num_edges(), g.density() * 100.0);
    for side in [Side::User, Side::Item] {
        let h = degree_histogram(&g, side);
        let slope = h.log_log_slope().unwrap_or(f64::NAN);
        println!("{side}: max degree {}, log-log slope {slope:.3}", g.max_degree(side));
        for line in h.to_csv().lines().take(8) {
            println!("  {line}");
        }
    }
    Ok(())
}
