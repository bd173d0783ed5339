//! Builds an edge atlas from synthetic healthy-subject tract densities and
//! shows how the retention quorum and top fraction shape it.
//!
//! Usage: `cargo run --example edge_atlas -- [regions] [seed]`

use idhnet::atlas::{build_edge_atlas, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION};
use idhnet::synth::{generate_atlas_pair, SynthConfig};

fn main() -> idhnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let regions = args.first().and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = SynthConfig { regions, seed, ..SynthConfig::default() };

    let pair = generate_atlas_pair(&config)?;
    let subjects = pair.densities.subject_count();
    println!(
        "{regions} regions on a {:?} grid, {} candidate pairs across {subjects} subjects",
        config.grid,
        pair.densities.pairs().len()
    );
    for (&(i, j), &absent) in &pair.missing {
        println!("  pair ({i},{j}) has no tracts in {absent} subject(s)");
    }

    for quorum in [1, DEFAULT_QUORUM, subjects] {
        let atlas = build_edge_atlas(&pair.densities, quorum, DEFAULT_TOP_FRACTION)?;
        println!("quorum {quorum:2}/{subjects}: {} edges", atlas.len());
    }
    for fraction in [0.01, DEFAULT_TOP_FRACTION, 0.2] {
        let atlas = build_edge_atlas(&pair.densities, DEFAULT_QUORUM, fraction)?;
        let voxels: usize = atlas.iter().map(|(_, m)| m.len()).sum();
        println!("top {:4.1}%: {:.1} voxels per edge", 100.0 * fraction, voxels as f64 / atlas.len() as f64);
    }
    Ok(())
}
