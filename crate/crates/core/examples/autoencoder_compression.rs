//! Compresses low-rank synthetic voxel vectors to 12 latent features and
//! compares the reconstruction error with the constant-mean predictor.
//!
//! Usage: `cargo run --release --example autoencoder_compression -- [samples] [epochs] [l2]`

use std::time::Instant;

use idhnet::autoencoder::{ae_train_rows, mean_baseline_mse, reconstruction_mse, AeConfig};
use idhnet::numerics::seeded;
use idhnet::volumes::VECTOR_LEN;
use rand::Rng;
use rand_distr::StandardNormal;

const RANK: usize = 8;

fn main() -> idhnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let samples: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(200);
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let l2: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.001);

    let mut rng = seeded(3);
    let basis: Vec<Vec<f64>> = (0..RANK)
        .map(|_| (0..VECTOR_LEN).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let raw: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let coef: Vec<f64> = (0..RANK).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..VECTOR_LEN).map(|d| (0..RANK).map(|k| coef[k] * basis[k][d]).sum()).collect()
        })
        .collect();
    let peak = raw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|v| 0.5 + 0.45 * v / peak).collect()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();

    let config = AeConfig { epochs, l2_coefficient: l2, ..AeConfig::default() };
    let start = Instant::now();
    let fit = ae_train_rows(&refs, VECTOR_LEN, &config)?;
    let mse = reconstruction_mse(&fit.model, &refs)?;
    let baseline = mean_baseline_mse(&refs)?;
    println!("{samples} vectors of rank {RANK}, {epochs} epochs, {:.1}s", start.elapsed().as_secs_f64());
    println!("latent width {}", fit.model.encode(refs[0])?.len());
    println!("mse {mse:.3e}  baseline {baseline:.3e}  ratio {:.3}", mse / baseline);
    Ok(())
}
