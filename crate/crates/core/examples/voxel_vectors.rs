//! Extracts fixed-length voxel vectors for every node and edge region of one
//! synthetic subject and compares a mutant with a wild-type scan.
//!
//! Usage: `cargo run --example voxel_vectors -- [seed]`

use idhnet::atlas::{build_edge_atlas, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION};
use idhnet::gnn::MUTANT;
use idhnet::synth::{generate_atlas_pair, generate_phantom_cohort, SynthConfig};
use idhnet::volumes::{extract_voxel_vector, Mask, Modality, VOXEL_SLOTS};

fn mean(block: &[f64], used: usize) -> f64 {
    block[..used].iter().sum::<f64>() / used.max(1) as f64
}

fn main() -> idhnet::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = SynthConfig { seed, ..SynthConfig::default().with_counts(1, 1) };
    let pair = generate_atlas_pair(&config)?;
    let edges = build_edge_atlas(&pair.densities, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION)?;
    let (phantoms, truth) = generate_phantom_cohort(&config, &pair.nodes, &edges)?;

    for (phantom, t) in phantoms.iter().zip(&truth.subjects) {
        let class = if phantom.label == MUTANT { "mutant" } else { "wild-type" };
        let brain = Mask::from_volume(pair.nodes.labels(), |v| v > 0.0);
        let scan = phantom.scan.normalized(&brain)?;
        println!("{} ({class}), affected edges {:?}", phantom.id, t.affected_edges);
        for ((i, j), mask) in edges.iter() {
            let v = extract_voxel_vector(&scan, mask)?;
            let used = mask.len().min(VOXEL_SLOTS);
            let flair = mean(v.block(Modality::Flair), used);
            let marker = if t.affected_edges.contains(&(i, j)) { "*" } else { " " };
            println!("  edge ({i},{j}){marker} {:4} voxels, mean FLAIR {flair:.3}", mask.len());
        }
        for node in 0..pair.nodes.region_count() {
            let mask = pair.nodes.node_mask(node);
            let v = extract_voxel_vector(&scan, &mask)?;
            let used = mask.len().min(VOXEL_SLOTS);
            println!("  node {node} {:5} voxels, mean T1 {:.3}", mask.len(), mean(v.block(Modality::T1), used));
        }
    }
    Ok(())
}
