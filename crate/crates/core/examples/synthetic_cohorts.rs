//! Writes a graph-level and a volume-level synthetic cohort to disk, with
//! the ground-truth affected edges of every subject.
//!
//! Usage: `cargo run --example synthetic_cohorts -- [outdir] [seed]`

use std::path::PathBuf;

use idhnet::atlas::{build_edge_atlas, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION};
use idhnet::synth::{
    generate_atlas_pair, generate_graph_cohort, generate_phantom_cohort, layout, write_graph_level,
    write_volume_level, SynthConfig,
};

fn main() -> idhnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("idhnet-synth"));
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let graph_cfg = SynthConfig { seed, ..SynthConfig::default() };
    let (graphs, truth) = generate_graph_cohort(&graph_cfg)?;
    write_graph_level(&out.join("graph"), &graphs, &truth)?;
    let g = &graphs[0];
    println!(
        "graph level: {} graphs of {} nodes and {} edges -> {}",
        graphs.len(),
        g.node_count(),
        g.edge_count(),
        out.join("graph").join(layout::GRAPHS).display()
    );

    let volume_cfg = SynthConfig { seed, ..SynthConfig::default().with_counts(4, 4) };
    let pair = generate_atlas_pair(&volume_cfg)?;
    let edges = build_edge_atlas(&pair.densities, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION)?;
    let (phantoms, truth) = generate_phantom_cohort(&volume_cfg, &pair.nodes, &edges)?;
    write_volume_level(&out.join("volume"), &pair, &phantoms, &truth)?;
    println!(
        "volume level: {} phantoms on a {:?} grid, {} atlas edges -> {}",
        phantoms.len(),
        volume_cfg.grid,
        edges.len(),
        out.join("volume").display()
    );
    for s in truth.subjects.iter().take(4) {
        println!("  {} label {} affected {:?}", s.id, s.label, s.affected_edges);
    }
    Ok(())
}
