//! Single-bottleneck sparse autoencoder used to compress voxel vectors.
//!
//! Encoder and decoder both use the logistic sigmoid. The training objective is
//!
//! ```text
//! (1/B) Σ_b Σ_d (r_bd - x_bd)^2  +  λ Σ W^2  +  β Σ_k KL(ρ || ρ̂_k)
//! ```
//!
//! where `ρ̂_k` is the batch-mean activation of latent unit `k`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, glorot_uniform, seeded, sigmoid, AdamConfig, AdamState, ParamSet, Tensor};
use crate::volumes::{VoxelVector, VECTOR_LEN};

pub const LATENT_DIM: usize = 12;
const RHO_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub latent_dim: usize,
    pub l2_coefficient: f64,
    pub sparsity_target: f64,
    pub sparsity_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            latent_dim: LATENT_DIM,
            l2_coefficient: 0.001,
            sparsity_target: 0.05,
            sparsity_weight: 1.0,
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if !(self.l2_coefficient >= 0.0) {
            return Err(Error::Config("l2_coefficient must be >= 0".into()));
        }
        if !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return Err(Error::Config("sparsity_target must lie in (0, 1)".into()));
        }
        if !(self.sparsity_weight >= 0.0) {
            return Err(Error::Config("sparsity_weight must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Encoder `W_e: D×H`, `b_e: H`; decoder `W_d: H×D`, `b_d: D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub params: ParamSet,
    pub config: AeConfig,
    input_dim: usize,
}

/// Activations of one forward pass over a batch.
pub struct AeActivations {
    pub latent: Tensor,
    pub reconstruction: Tensor,
}

impl AeModel {
    pub fn new(input_dim: usize, config: AeConfig) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        let h = config.latent_dim;
        let mut rng = seeded(config.seed);
        let mut params = ParamSet::new();
        params.insert("enc_w", glorot_uniform(&mut rng, input_dim, h));
        params.insert("enc_b", Tensor::zeros(&[h]));
        params.insert("dec_w", glorot_uniform(&mut rng, h, input_dim));
        params.insert("dec_b", Tensor::zeros(&[input_dim]));
        Ok(Self {
            params,
            config,
            input_dim,
        })
    }

    /// A model with every weight and bias set to zero.
    pub fn zeroed(input_dim: usize, config: AeConfig) -> Result<Self> {
        let mut m = Self::new(input_dim, config)?;
        let names: Vec<String> = m.params.names().map(str::to_string).collect();
        for n in names {
            m.params.get_mut(&n)?.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "autoencoder expects rows of width {}, got shape {:?}",
                self.input_dim,
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::Data("autoencoder input contains non-finite values".into()));
        }
        Ok(())
    }

    fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        let z = x.matmul(self.params.get("enc_w")?)?;
        add_bias_sigmoid(z, self.params.get("enc_b")?)
    }

    pub fn forward_batch(&self, x: &Tensor) -> Result<AeActivations> {
        self.check_batch(x)?;
        let latent = self.encode_batch(x)?;
        let z = latent.matmul(self.params.get("dec_w")?)?;
        let reconstruction = add_bias_sigmoid(z, self.params.get("dec_b")?)?;
        Ok(AeActivations {
            latent,
            reconstruction,
        })
    }

    /// Latent code and reconstruction of a single input row.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = Tensor::matrix(1, x.len(), x.to_vec())?;
        let act = self.forward_batch(&batch)?;
        Ok((act.latent.into_data(), act.reconstruction.into_data()))
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Tensor::matrix(1, x.len(), x.to_vec())?;
        self.check_batch(&batch)?;
        Ok(self.encode_batch(&batch)?.into_data())
    }

    /// Loss on a batch of rows, without touching gradients.
    pub fn loss(&self, x: &Tensor) -> Result<f64> {
        let act = self.forward_batch(x)?;
        Ok(self.loss_terms(x, &act)?.total())
    }

    fn loss_terms(&self, x: &Tensor, act: &AeActivations) -> Result<LossTerms> {
        let b = x.rows() as f64;
        let recon = act
            .reconstruction
            .data()
            .iter()
            .zip(x.data())
            .map(|(r, v)| (r - v) * (r - v))
            .sum::<f64>()
            / b;
        let l2 = self.config.l2_coefficient
            * (self.params.get("enc_w")?.sum_squares() + self.params.get("dec_w")?.sum_squares());
        let rho = self.config.sparsity_target;
        let mut sparsity = 0.0;
        if self.config.sparsity_weight > 0.0 {
            let mean = act.latent.sum_rows();
            for &m in mean.data() {
                sparsity += kl_divergence(rho, (m / b).clamp(RHO_CLAMP, 1.0 - RHO_CLAMP));
            }
            sparsity *= self.config.sparsity_weight;
        }
        Ok(LossTerms {
            recon,
            l2,
            sparsity,
        })
    }

    /// Loss and analytic gradients (stored into `self.params`) for one batch.
    pub fn loss_and_grad(&mut self, x: &Tensor) -> Result<f64> {
        let act = self.forward_batch(x)?;
        let terms = self.loss_terms(x, &act)?;
        let b = x.rows() as f64;
        let lambda = self.config.l2_coefficient;

        // decoder
        let mut dz2 = act.reconstruction.zip_map(x, |r, v| 2.0 * (r - v) / b)?;
        for (g, r) in dz2.data_mut().iter_mut().zip(act.reconstruction.data()) {
            *g *= r * (1.0 - r);
        }
        let dec_w = self.params.get("dec_w")?;
        let mut d_dec_w = act.latent.t_matmul(&dz2)?;
        d_dec_w.add_assign(&dec_w.map(|w| 2.0 * lambda * w))?;
        let d_dec_b = dz2.sum_rows();
        let mut dh = dz2.matmul_t(dec_w)?;

        // sparsity acts on the batch mean of each latent unit
        if self.config.sparsity_weight > 0.0 {
            let rho = self.config.sparsity_target;
            let mean = act.latent.sum_rows();
            let h = self.latent_dim();
            let dmean: Vec<f64> = mean
                .data()
                .iter()
                .map(|&m| {
                    let r = m / b;
                    if !(RHO_CLAMP..=1.0 - RHO_CLAMP).contains(&r) {
                        0.0
                    } else {
                        self.config.sparsity_weight * (-rho / r + (1.0 - rho) / (1.0 - r)) / b
                    }
                })
                .collect();
            for row in dh.data_mut().chunks_mut(h) {
                for (g, d) in row.iter_mut().zip(&dmean) {
                    *g += d;
                }
            }
        }

        // encoder
        for (g, h) in dh.data_mut().iter_mut().zip(act.latent.data()) {
            *g *= h * (1.0 - h);
        }
        let enc_w = self.params.get("enc_w")?;
        let mut d_enc_w = x.t_matmul(&dh)?;
        d_enc_w.add_assign(&enc_w.map(|w| 2.0 * lambda * w))?;
        let d_enc_b = dh.sum_rows();

        self.params.set_grad("enc_w", d_enc_w)?;
        self.params.set_grad("enc_b", d_enc_b)?;
        self.params.set_grad("dec_w", d_dec_w)?;
        self.params.set_grad("dec_b", d_dec_b)?;
        Ok(terms.total())
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let mut header = Map::new();
        header.insert("kind".into(), Value::from("autoencoder"));
        header.insert("latent".into(), Value::from(self.latent_dim()));
        header.insert("input".into(), Value::from(self.input_dim));
        header.insert(
            "config".into(),
            serde_json::to_value(&self.config).map_err(|e| Error::Internal(e.to_string()))?,
        );
        let mut a = Archive::new(header);
        for (name, t) in self.params.iter() {
            a.tensors.insert(name.to_string(), t.clone());
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let kind: String = a.field("kind")?;
        if kind != "autoencoder" {
            return Err(Error::Data(format!("archive holds a {kind}, not an autoencoder")));
        }
        let config: AeConfig = a.field("config")?;
        let input_dim: usize = a.field("input")?;
        let latent: usize = a.field("latent")?;
        if latent != config.latent_dim {
            return Err(Error::Data("latent width disagrees with config".into()));
        }
        let mut params = ParamSet::new();
        let shapes = [
            ("enc_w", vec![input_dim, latent]),
            ("enc_b", vec![latent]),
            ("dec_w", vec![latent, input_dim]),
            ("dec_b", vec![input_dim]),
        ];
        for (name, shape) in shapes {
            let t = a.tensor(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Data(format!(
                    "section {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            params.insert(name, t.clone());
        }
        Ok(Self {
            params,
            config,
            input_dim,
        })
    }
}

struct LossTerms {
    recon: f64,
    l2: f64,
    sparsity: f64,
}

impl LossTerms {
    fn total(&self) -> f64 {
        self.recon + self.l2 + self.sparsity
    }
}

fn add_bias_sigmoid(mut z: Tensor, bias: &Tensor) -> Result<Tensor> {
    let w = z.cols();
    if bias.len() != w {
        return Err(Error::Dimension(format!("bias length {} vs width {w}", bias.len())));
    }
    for row in z.data_mut().chunks_mut(w) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v = sigmoid(*v + b);
        }
    }
    Ok(z)
}

/// `KL(ρ ‖ ρ̂)` between Bernoulli distributions.
pub fn kl_divergence(rho: f64, rho_hat: f64) -> f64 {
    rho * (rho / rho_hat).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - rho_hat)).ln()
}

/// Latent code and reconstruction of one voxel vector.
pub fn ae_forward(model: &AeModel, x: &VoxelVector) -> Result<(Vec<f64>, Vec<f64>)> {
    model.forward(x.values())
}

pub fn encode(model: &AeModel, x: &VoxelVector) -> Result<Vec<f64>> {
    model.encode(x.values())
}

pub fn ae_loss(model: &AeModel, batch: &[VoxelVector]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("autoencoder loss needs a non-empty batch".into()));
    }
    let rows: Vec<&[f64]> = batch.iter().map(|v| v.values()).collect();
    model.loss(&Tensor::from_rows(&rows)?)
}

/// Per-epoch mean training loss alongside the fitted model.
#[derive(Debug, Clone)]
pub struct AeFit {
    pub model: AeModel,
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Trains a [`VECTOR_LEN`]-wide autoencoder on voxel vectors.
pub fn ae_train(vectors: &[VoxelVector], config: &AeConfig) -> Result<AeModel> {
    let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values()).collect();
    Ok(ae_train_rows(&rows, VECTOR_LEN, config)?.model)
}

/// Trains on arbitrary-width rows; used directly for down-scaled instances.
pub fn ae_train_rows(rows: &[&[f64]], input_dim: usize, config: &AeConfig) -> Result<AeFit> {
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "autoencoder training needs at least 2 vectors, got {}",
            rows.len()
        )));
    }
    let data = Tensor::from_rows(rows)?;
    let mut model = AeModel::new(input_dim, config.clone())?;
    model.check_batch(&data)?;

    // Start the decoder at the per-feature mean so training begins from the
    // constant-mean predictor.
    let mean = data.sum_rows();
    let n = rows.len() as f64;
    for (b, m) in model.params.get_mut("dec_b")?.data_mut().iter_mut().zip(mean.data()) {
        let p = (m / n).clamp(1e-3, 1.0 - 1e-3);
        *b = (p / (1.0 - p)).ln();
    }

    let initial_loss = model.loss(&data)?;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = seeded(crate::numerics::derive_seed(config.seed, "ae-shuffle"));
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch_rows: Vec<&[f64]> = chunk.iter().map(|&i| rows[i]).collect();
            let batch = Tensor::from_rows(&batch_rows)?;
            let loss = model.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("autoencoder loss {loss} at epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            adam_step(&mut model.params, &mut adam)?;
        }
        epoch_losses.push(total / n);
    }
    Ok(AeFit {
        model,
        initial_loss,
        epoch_losses,
    })
}

/// Mean squared error per element between rows and their reconstructions.
pub fn reconstruction_mse(model: &AeModel, rows: &[&[f64]]) -> Result<f64> {
    let x = Tensor::from_rows(rows)?;
    let act = model.forward_batch(&x)?;
    let se: f64 = act
        .reconstruction
        .data()
        .iter()
        .zip(x.data())
        .map(|(r, v)| (r - v) * (r - v))
        .sum();
    Ok(se / x.len() as f64)
}

/// Per-element MSE of predicting every row by the column means.
pub fn mean_baseline_mse(rows: &[&[f64]]) -> Result<f64> {
    let x = Tensor::from_rows(rows)?;
    let n = x.rows() as f64;
    let mean = x.sum_rows().map(|s| s / n);
    let mut se = 0.0;
    for r in 0..x.rows() {
        for (v, m) in x.row(r).iter().zip(mean.data()) {
            se += (v - m) * (v - m);
        }
    }
    Ok(se / x.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, DEFAULT_EPS};
    use rand::Rng;

    fn small_config(seed: u64) -> AeConfig {
        AeConfig {
            latent_dim: 3,
            l2_coefficient: 0.01,
            sparsity_weight: 0.5,
            seed,
            ..AeConfig::default()
        }
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = AeModel::zeroed(VECTOR_LEN, AeConfig::default()).unwrap();
        let x = VoxelVector::new(vec![0.3; VECTOR_LEN]).unwrap();
        let (z, r) = ae_forward(&m, &x).unwrap();
        assert_eq!(z, vec![0.5; 12]);
        assert_eq!(r.len(), VECTOR_LEN);
        assert!(r.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_sized_forward() {
        let cfg = AeConfig {
            latent_dim: 2,
            ..AeConfig::default()
        };
        let mut m = AeModel::zeroed(4, cfg).unwrap();
        *m.params.get_mut("enc_w").unwrap() =
            Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, -1.0]).unwrap();
        *m.params.get_mut("enc_b").unwrap() = Tensor::vector(vec![0.0, 0.5]).unwrap();
        *m.params.get_mut("dec_w").unwrap() =
            Tensor::matrix(2, 4, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        let (z, r) = m.forward(&[1.0, 0.5, 0.0, 1.0]).unwrap();
        // z1 = σ(1 + 0) ; z2 = σ(0.5 - 1 + 0.5) = σ(0)
        let z1 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((z[0] - z1).abs() < 1e-15 && (z[1] - 0.5).abs() < 1e-15);
        let expect = [z1, 2.0 * z1, 0.5, -0.5].map(|a: f64| 1.0 / (1.0 + (-a).exp()));
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_reconstruction_is_zero_loss() {
        let cfg = AeConfig {
            latent_dim: 2,
            l2_coefficient: 0.0,
            sparsity_weight: 0.0,
            ..AeConfig::default()
        };
        let m = AeModel::zeroed(3, cfg).unwrap();
        let x = Tensor::from_rows(&[[0.5, 0.5, 0.5]]).unwrap();
        assert_eq!(m.loss(&x).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_value() {
        let expect = 0.05 * 0.1f64.ln() + 0.95 * 1.9f64.ln();
        assert!((kl_divergence(0.05, 0.5) - expect).abs() < 1e-15);
        assert!((expect - 0.4946).abs() < 1e-4);
        // one latent unit with mean activation 0.5, no other terms
        let cfg = AeConfig {
            latent_dim: 1,
            l2_coefficient: 0.0,
            sparsity_weight: 2.0,
            ..AeConfig::default()
        };
        let m = AeModel::zeroed(2, cfg).unwrap();
        let x = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!((m.loss(&x).unwrap() - 2.0 * expect).abs() < 1e-12);
    }

    #[test]
    fn default_l2_coefficient() {
        assert_eq!(AeConfig::default().l2_coefficient, 0.001);
        assert_eq!(AeConfig::default().latent_dim, 12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(5);
        for seed in 0..5 {
            let mut m = AeModel::new(16, small_config(seed)).unwrap();
            for name in ["enc_b", "dec_b"] {
                for v in m.params.get_mut(name).unwrap().data_mut() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..16).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let x = Tensor::from_rows(&rows).unwrap();
            m.loss_and_grad(&x).unwrap();
            let template = m.clone();
            let report = grad_check(
                |p| {
                    let mut probe = template.clone();
                    probe.params = p.clone();
                    probe.loss(&x)
                },
                &m.params,
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(report.passes(1e-4), "{report:?}");
        }
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let mut rng = seeded(9);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..16).map(|_| rng.random_range(0.2..0.8)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let cfg = AeConfig {
            epochs: 30,
            batch_size: 4,
            ..small_config(3)
        };
        let a = ae_train_rows(&refs, 16, &cfg).unwrap();
        let b = ae_train_rows(&refs, 16, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let x = Tensor::from_rows(&refs).unwrap();
        assert!(a.model.loss(&x).unwrap() <= a.initial_loss);
    }

    #[test]
    fn training_needs_two_vectors() {
        let v = VoxelVector::new(vec![0.0; VECTOR_LEN]).unwrap();
        assert!(ae_train(&[v], &AeConfig::default()).is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = AeModel::new(3, small_config(0)).unwrap();
        assert!(m.forward(&[0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn archive_round_trip() {
        let m = AeModel::new(16, small_config(1)).unwrap();
        let back = AeModel::from_archive(&Archive::from_bytes(&m.to_archive().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn separate_models_do_not_share_parameters() {
        let node = AeModel::new(8, small_config(1)).unwrap();
        let edge = AeModel::new(8, small_config(1)).unwrap();
        assert!(!std::ptr::eq(&node.params, &edge.params));
        assert!(!std::ptr::eq(
            node.params.get("enc_w").unwrap().data().as_ptr(),
            edge.params.get("enc_w").unwrap().data().as_ptr()
        ));
    }
}
