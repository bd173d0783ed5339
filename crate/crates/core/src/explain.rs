//! Soft edge-mask explanations for a trained graph classifier.
//!
//! Each edge gets a logit `m_e`; its feature vector is multiplied by
//! `σ(m_e)` and the mask is optimised to keep the model's own prediction
//! while staying small and nearly binary.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atlas::{EdgeAtlas, EdgeKey};
use crate::error::{Error, Result};
use crate::gnn::{BrainGraph, GnnModel, MUTANT};
use crate::numerics::{adam_step, binary_entropy, derive_seed, seeded, sigmoid, AdamConfig, AdamState, ParamSet, Tensor};
use crate::volumes::Volume;

pub const PRIMARY_THRESHOLD: f64 = 0.5;
pub const STRICT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub size_weight: f64,
    pub entropy_weight: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Half-width of a uniform perturbation of the initial logits. Zero
    /// starts every edge at exactly 0.5.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            size_weight: 0.005,
            entropy_weight: 0.1,
            iterations: 200,
            learning_rate: 0.05,
            init_jitter: 0.0,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.size_weight >= 0.0 && self.entropy_weight >= 0.0 && self.init_jitter >= 0.0) {
            return Err(Error::Config("penalty weights and jitter must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMaskResult {
    pub edges: Vec<EdgeKey>,
    pub scores: Vec<f64>,
    /// Explained class (the model's unmasked prediction).
    pub target: u8,
    /// Objective before each update, then once after the last.
    pub objective: Vec<f64>,
}

impl EdgeMaskResult {
    /// Edge indices sorted by descending score; ties keep edge order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subnetwork {
    pub threshold: f64,
    pub edges: Vec<EdgeKey>,
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Explainer objective at mask logits `m` and its gradient with respect to `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskObjective {
    pub objective: f64,
    pub grad: Vec<f64>,
}

/// Evaluates the masked log-likelihood of class `target` minus the size and
/// entropy penalties, for one mask logit per edge.
pub fn mask_objective(
    model: &GnnModel,
    graph: &BrainGraph,
    target: u8,
    m: &[f64],
    cfg: &ExplainConfig,
) -> Result<MaskObjective> {
    if m.len() != graph.edge_count() {
        return Err(Error::Dimension(format!("{} mask logits for {} edges", m.len(), graph.edge_count())));
    }
    let scale: Vec<f64> = m.iter().map(|&v| sigmoid(v)).collect();
    let fwd = model.forward(graph, Some(&scale), None)?;
    let z = fwd.logit;
    let (log_p, d_logit) = if target == MUTANT {
        (log_sigmoid(z), 1.0 - sigmoid(z))
    } else {
        (log_sigmoid(-z), -sigmoid(z))
    };
    let size: f64 = scale.iter().sum();
    let entropy: f64 = scale.iter().map(|&s| binary_entropy(s)).sum();
    let objective = log_p - cfg.size_weight * size - cfg.entropy_weight * entropy;
    if !objective.is_finite() {
        return Err(Error::Divergence(format!("explainer objective became {objective} on graph {}", graph.id)));
    }
    let d_scale = model.backward(graph, &fwd, d_logit)?.edge_scale;
    // dH/dσ = ln((1-σ)/σ) = -m, so the entropy term contributes λ·m·σ'.
    let grad = m
        .iter()
        .zip(&scale)
        .zip(&d_scale)
        .map(|((&mv, &s), &ds)| s * (1.0 - s) * (ds - cfg.size_weight + cfg.entropy_weight * mv))
        .collect();
    Ok(MaskObjective { objective, grad })
}

/// Learns one importance score per edge by gradient ascent on the masked log-likelihood.
pub fn explain_edges(model: &GnnModel, graph: &BrainGraph, config: &ExplainConfig) -> Result<EdgeMaskResult> {
    config.validate()?;
    let target = u8::from(model.predict(graph)? >= 0.5);
    let edges: Vec<EdgeKey> = graph.edges().iter().map(|&(i, j)| crate::atlas::edge_key(i, j)).collect();
    if edges.is_empty() {
        return Ok(EdgeMaskResult {
            edges,
            scores: Vec::new(),
            target,
            objective: Vec::new(),
        });
    }
    let init: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| {
            if config.init_jitter == 0.0 {
                0.0
            } else {
                let mut rng = seeded(derive_seed(config.seed, &format!("mask-{i}-{j}")));
                rng.random_range(-config.init_jitter..=config.init_jitter)
            }
        })
        .collect();
    let mut params = ParamSet::new();
    params.insert("mask", Tensor::vector(init)?);
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut objective = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let eval = mask_objective(model, graph, target, params.get("mask")?.data(), config)?;
        objective.push(eval.objective);
        // Ascent: hand the optimiser the negated gradient.
        params.set_grad("mask", Tensor::vector(eval.grad.iter().map(|g| -g).collect())?)?;
        adam_step(&mut params, &mut adam)?;
    }
    let m = params.get("mask")?.data().to_vec();
    objective.push(mask_objective(model, graph, target, &m, config)?.objective);
    Ok(EdgeMaskResult {
        edges,
        scores: m.iter().map(|&v| sigmoid(v)).collect(),
        target,
        objective,
    })
}

/// Edges whose score is strictly greater than `threshold`.
pub fn threshold_subnetwork(result: &EdgeMaskResult, threshold: f64) -> Result<Subnetwork> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must lie in [0, 1), got {threshold}")));
    }
    let edges = result
        .edges
        .iter()
        .zip(&result.scores)
        .filter(|(_, &s)| s > threshold)
        .map(|(&e, _)| e)
        .collect();
    Ok(Subnetwork { threshold, edges })
}

/// Voxel-wise count of retained edges whose atlas mask covers the voxel.
pub fn tract_density_map(subnetwork: &Subnetwork, atlas: &EdgeAtlas) -> Result<Volume> {
    let mut out = Volume::zeros(atlas.dims(), atlas.voxel_size_mm())?;
    for &(i, j) in &subnetwork.edges {
        for &v in atlas.edge_mask(i, j)?.indices() {
            out.data_mut()[v] += 1.0;
        }
    }
    Ok(out)
}

pub fn scores_to_csv(result: &EdgeMaskResult) -> String {
    let mut s = String::from("i,j,score\n");
    for (&(i, j), score) in result.edges.iter().zip(&result.scores) {
        let _ = writeln!(s, "{i},{j},{score}");
    }
    s
}

pub fn write_scores_csv(result: &EdgeMaskResult, path: &Path) -> Result<()> {
    std::fs::write(path, scores_to_csv(result)).map_err(|e| Error::io(path, e))
}

/// Parses `i,j,score` rows written by [`write_scores_csv`].
pub fn read_scores_csv(path: &Path) -> Result<Vec<(EdgeKey, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("line {}: expected i,j,score", n + 1));
        if fields.len() != 3 {
            return Err(bad());
        }
        let i = fields[0].trim().parse().map_err(|_| bad())?;
        let j = fields[1].trim().parse().map_err(|_| bad())?;
        let s = fields[2].trim().parse().map_err(|_| bad())?;
        rows.push(((i, j), s));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{ChannelMode, GnnArchitecture};
    use crate::volumes::Mask;
    use std::collections::BTreeMap;

    fn arch() -> GnnArchitecture {
        GnnArchitecture {
            node_dim: 2,
            edge_dim: 2,
            conv_widths: [3, 3, 3],
            embed_dim: 3,
            hidden_dim: 3,
            channel_mode: ChannelMode::Shared,
        }
    }

    fn graph(seed: u64, n: usize) -> BrainGraph {
        let mut rng = seeded(seed);
        let x = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        let e = (0..edges.len() * 2).map(|_| rng.random_range(0.1..1.0)).collect();
        BrainGraph::new("t", 0, x, edges, 2, e).unwrap()
    }

    fn result(scores: &[f64]) -> EdgeMaskResult {
        EdgeMaskResult {
            edges: (0..scores.len()).map(|k| (k, k + 1)).collect(),
            scores: scores.to_vec(),
            target: 0,
            objective: vec![],
        }
    }

    #[test]
    fn log_sigmoid_is_exact_in_the_tails() {
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(40.0) < 0.0);
    }

    #[test]
    fn identity_mask_preserves_prediction() {
        let model = GnnModel::new(arch(), 1.0, 1).unwrap();
        let g = graph(2, 5);
        let ones = vec![1.0; g.edge_count()];
        let masked = model.forward(&g, Some(&ones), None).unwrap().probability;
        assert_eq!(masked, model.predict(&g).unwrap());
    }

    #[test]
    fn zero_iterations_leave_every_edge_at_half() {
        let model = GnnModel::new(arch(), 1.0, 1).unwrap();
        let cfg = ExplainConfig { iterations: 0, ..Default::default() };
        let r = explain_edges(&model, &graph(3, 4), &cfg).unwrap();
        assert!(r.scores.iter().all(|&s| s == 0.5));
        assert_eq!(r.objective.len(), 1);
    }

    #[test]
    fn mask_gradient_matches_differences() {
        let model = GnnModel::new(arch(), 1.0, 5).unwrap();
        let g = graph(6, 4);
        let cfg = ExplainConfig::default();
        let target = u8::from(model.predict(&g).unwrap() >= 0.5);
        let mut rng = seeded(7);
        let m: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = mask_objective(&model, &g, target, &m, &cfg).unwrap();
        for e in 0..m.len() {
            let h = 1e-6;
            let (mut up, mut dn) = (m.clone(), m.clone());
            up[e] += h;
            dn[e] -= h;
            let f = |v: &[f64]| mask_objective(&model, &g, target, v, &cfg).unwrap().objective;
            let num = (f(&up) - f(&dn)) / (2.0 * h);
            assert!(crate::numerics::relative_error(eval.grad[e], num) < 1e-4);
        }
    }

    #[test]
    fn objective_mostly_increases_on_single_edge() {
        let model = GnnModel::new(arch(), 1.0, 8).unwrap();
        let g = graph(9, 2);
        let cfg = ExplainConfig { learning_rate: 0.01, ..Default::default() };
        let r = explain_edges(&model, &g, &cfg).unwrap();
        let steps = r.objective.windows(2).count();
        let up = r.objective.windows(2).filter(|w| w[1] >= w[0] - 1e-12).count();
        assert!(up as f64 >= 0.95 * steps as f64, "{up}/{steps}");
    }

    #[test]
    fn scores_ignore_edge_order() {
        let model = GnnModel::new(arch(), 1.0, 10).unwrap();
        let g = graph(11, 5);
        let cfg = ExplainConfig { iterations: 50, init_jitter: 0.3, seed: 4, ..Default::default() };
        let a = explain_edges(&model, &g, &cfg).unwrap();
        let order: Vec<usize> = (0..g.edge_count()).rev().collect();
        let b = explain_edges(&model, &g.reorder_edges(&order).unwrap(), &cfg).unwrap();
        for (k, &o) in order.iter().enumerate() {
            assert_eq!(a.edges[o], b.edges[k]);
            assert!((a.scores[o] - b.scores[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_filters_strictly() {
        let r = result(&[0.4, 0.6, 0.95]);
        assert_eq!(threshold_subnetwork(&r, 0.5).unwrap().edges.len(), 2);
        assert_eq!(threshold_subnetwork(&r, 0.9).unwrap().edges.len(), 1);
        assert!(threshold_subnetwork(&r, 0.99).unwrap().edges.is_empty());
        assert!(threshold_subnetwork(&result(&[0.5]), 0.5).unwrap().edges.is_empty());
        assert!(threshold_subnetwork(&r, 1.0).is_err());
    }

    fn small_atlas() -> EdgeAtlas {
        let d = [2, 2, 2];
        let mut edges = BTreeMap::new();
        edges.insert((0, 1), Mask::from_indices(d, vec![0, 1, 2, 3]).unwrap());
        edges.insert((1, 2), Mask::from_indices(d, vec![2, 3, 6]).unwrap());
        EdgeAtlas::new(d, [1.0; 3], edges).unwrap()
    }

    #[test]
    fn density_counts_overlaps() {
        let atlas = small_atlas();
        let both = Subnetwork { threshold: 0.5, edges: vec![(0, 1), (1, 2)] };
        let v = tract_density_map(&both, &atlas).unwrap();
        assert_eq!(v.data(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0, 1.0, 0.0]);
        let total: f32 = v.data().iter().sum();
        assert_eq!(total as usize, 4 + 3);

        let one = Subnetwork { threshold: 0.5, edges: vec![(1, 2)] };
        let v = tract_density_map(&one, &atlas).unwrap();
        assert_eq!(v, atlas.edge_mask(1, 2).unwrap().to_volume([1.0; 3]).unwrap());

        let none = Subnetwork { threshold: 0.5, edges: vec![] };
        assert!(tract_density_map(&none, &atlas).unwrap().data().iter().all(|&x| x == 0.0));

        let missing = Subnetwork { threshold: 0.5, edges: vec![(0, 2)] };
        assert!(matches!(tract_density_map(&missing, &atlas), Err(Error::Lookup(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let r = result(&[0.25, 0.875]);
        write_scores_csv(&r, &p).unwrap();
        let back = read_scores_csv(&p).unwrap();
        assert_eq!(back, vec![((0, 1), 0.25), ((1, 2), 0.875)]);
    }
}
