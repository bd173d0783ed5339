//! Runs the full volume-level pipeline on synthetic phantoms: atlas build,
//! voxel-vector extraction, node and edge autoencoders, graph assembly,
//! classifier training and evaluation.
//!
//! Usage: `cargo run --release --example phantom_pipeline -- [workdir] [seed] [per_class]`

use std::path::PathBuf;
use std::time::Instant;

use idhnet::pipeline::{run_volume_pipeline, PipelineConfig};

fn main() -> idhnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let root = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("idhnet-phantoms"));
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let per_class = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);

    let mut config = PipelineConfig { seed, ..Default::default() };
    config.synth = config.synth.with_counts(per_class, per_class);

    let start = Instant::now();
    let report = run_volume_pipeline(&config, &root)?;
    println!("{}", report.table());
    println!("outputs in {} ({:.1}s)", root.display(), start.elapsed().as_secs_f64());
    Ok(())
}
