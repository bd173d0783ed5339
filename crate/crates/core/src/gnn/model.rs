use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::graph::BrainGraph;
use super::scaler::FeatureScaler;
use super::layers::{conv_backward, conv_forward, ChannelMode, ConvCache, EdgeChannels, EmbedLayer, GraphConvLayer};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, relu, seeded, sigmoid, ParamSet, Tensor};

pub const CONV_LAYERS: usize = 3;

/// Layer widths. The layer count is fixed: three convolutions, one
/// embedding, two fully connected layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnArchitecture {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub conv_widths: [usize; CONV_LAYERS],
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub channel_mode: ChannelMode,
}

impl Default for GnnArchitecture {
    fn default() -> Self {
        Self {
            node_dim: 12,
            edge_dim: 12,
            conv_widths: [32, 32, 32],
            embed_dim: 64,
            hidden_dim: 16,
            channel_mode: ChannelMode::Shared,
        }
    }
}

impl GnnArchitecture {
    fn theta2_count(&self) -> usize {
        match self.channel_mode {
            ChannelMode::Shared => 1,
            ChannelMode::PerChannel => self.edge_dim,
        }
    }

    fn conv_in(&self, l: usize) -> usize {
        if l == 0 {
            self.node_dim
        } else {
            self.conv_widths[l - 1]
        }
    }

    pub fn theta1_name(l: usize) -> String {
        format!("conv{l}.theta1")
    }

    pub fn theta2_name(&self, l: usize, c: usize) -> String {
        match self.channel_mode {
            ChannelMode::Shared => format!("conv{l}.theta2"),
            ChannelMode::PerChannel => format!("conv{l}.theta2.{c:02}"),
        }
    }
}

/// Dropout multipliers on the hidden layer for one training forward pass (0 or `1/(1-p)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub hidden: Vec<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, hidden_dim: usize, p: f64) -> Self {
        let keep = 1.0 / (1.0 - p);
        let mut draw = || if rng.random::<f64>() < p { 0.0 } else { keep };
        Self {
            hidden: (0..hidden_dim).map(|_| draw()).collect(),
        }
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct GnnForward {
    channels: EdgeChannels,
    convs: Vec<ConvCache>,
    node_sum: Tensor,
    embedding: Tensor,
    fc1_pre: Tensor,
    fc1_out: Tensor,
    hidden_mask: Option<Vec<f64>>,
    pub logit: f64,
    pub probability: f64,
}

impl GnnForward {
    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }
}

/// Parameter and edge-scale gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct GnnGradients {
    pub params: BTreeMap<String, Tensor>,
    pub edge_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub arch: GnnArchitecture,
    pub params: ParamSet,
    /// Input standardisation; identity until fitted.
    pub scaler: FeatureScaler,
}

impl GnnModel {
    /// Glorot initialisation; `Θ2` is additionally divided by `message_scale`
    /// (typically the mean weighted node degree) so neighbour sums start at
    /// the same magnitude as the self term.
    pub fn new(arch: GnnArchitecture, message_scale: f64, seed: u64) -> Result<Self> {
        if arch.node_dim == 0 || arch.edge_dim == 0 || arch.embed_dim == 0 || arch.hidden_dim == 0 {
            return Err(Error::Config("all layer widths must be positive".into()));
        }
        if arch.conv_widths.contains(&0) {
            return Err(Error::Config("conv widths must be positive".into()));
        }
        let message_scale = if message_scale.is_finite() && message_scale > 1.0 {
            message_scale
        } else {
            1.0
        };
        let mut rng = seeded(seed);
        let mut params = ParamSet::new();
        for l in 0..CONV_LAYERS {
            let (din, dout) = (arch.conv_in(l), arch.conv_widths[l]);
            params.insert(GnnArchitecture::theta1_name(l), glorot_uniform(&mut rng, din, dout));
            for c in 0..arch.theta2_count() {
                let mut t2 = glorot_uniform(&mut rng, din, dout);
                t2.scale(1.0 / message_scale);
                params.insert(arch.theta2_name(l, c), t2);
            }
        }
        let last = arch.conv_widths[CONV_LAYERS - 1];
        params.insert("embed.theta", glorot_uniform(&mut rng, last, arch.embed_dim));
        params.insert("fc1.w", glorot_uniform(&mut rng, arch.embed_dim, arch.hidden_dim));
        params.insert("fc1.b", Tensor::zeros(&[arch.hidden_dim]));
        params.insert("fc2.w", glorot_uniform(&mut rng, arch.hidden_dim, 1));
        params.insert("fc2.b", Tensor::zeros(&[1]));
        let scaler = FeatureScaler::identity(arch.node_dim, arch.edge_dim);
        Ok(Self { arch, params, scaler })
    }

    pub fn zeroed(arch: GnnArchitecture) -> Result<Self> {
        let mut m = Self::new(arch, 1.0, 0)?;
        let names: Vec<String> = m.params.names().map(str::to_string).collect();
        for n in names {
            m.params.get_mut(&n)?.data_mut().fill(0.0);
        }
        Ok(m)
    }

    pub fn conv_layer(&self, l: usize) -> Result<GraphConvLayer<'_>> {
        let theta1 = self.params.get(&GnnArchitecture::theta1_name(l))?;
        let theta2 = (0..self.arch.theta2_count())
            .map(|c| self.params.get(&self.arch.theta2_name(l, c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GraphConvLayer { theta1, theta2 })
    }

    pub fn embed_layer(&self) -> Result<EmbedLayer<'_>> {
        Ok(EmbedLayer {
            theta: self.params.get("embed.theta")?,
        })
    }

    fn check_graph(&self, graph: &BrainGraph) -> Result<()> {
        if graph.node_dim() != self.arch.node_dim {
            return Err(Error::Dimension(format!(
                "graph {} has node width {}, model expects {}",
                graph.id,
                graph.node_dim(),
                self.arch.node_dim
            )));
        }
        if graph.edge_count() > 0 && graph.edge_dim() != self.arch.edge_dim {
            return Err(Error::Dimension(format!(
                "graph {} has edge width {}, model expects {}",
                graph.id,
                graph.edge_dim(),
                self.arch.edge_dim
            )));
        }
        Ok(())
    }

    /// Forward pass. `edge_scale` multiplies each edge's feature vector;
    /// `dropout` enables training-mode dropout with the given masks.
    pub fn forward(
        &self,
        graph: &BrainGraph,
        edge_scale: Option<&[f64]>,
        dropout: Option<&DropoutMasks>,
    ) -> Result<GnnForward> {
        self.check_graph(graph)?;
        let graph = &self.scaler.apply(graph);
        let channels = EdgeChannels::new(graph, self.arch.channel_mode, edge_scale)?;
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        let mut x = graph.node_features().clone();
        for l in 0..CONV_LAYERS {
            let cache = conv_forward(&self.conv_layer(l)?, graph.edges(), &channels, &x)?;
            x = cache.out.clone();
            convs.push(cache);
        }
        let node_sum = {
            let s = x.sum_rows();
            Tensor::matrix(1, s.len(), s.into_data())?
        };
        let embedding = node_sum.matmul(self.params.get("embed.theta")?)?;
        let fc1_pre = crate::numerics::affine_forward(&embedding, self.params.get("fc1.w")?, self.params.get("fc1.b")?)?;
        let mut fc1_out = fc1_pre.map(relu);
        let hidden_mask = dropout.map(|d| d.hidden.clone());
        if let Some(mask) = &hidden_mask {
            if mask.len() != fc1_out.len() {
                return Err(Error::Dimension("dropout mask width differs from hidden layer".into()));
            }
            for (v, m) in fc1_out.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        let logit = crate::numerics::affine_forward(&fc1_out, self.params.get("fc2.w")?, self.params.get("fc2.b")?)?.data()[0];
        let probability = sigmoid(logit);
        if !probability.is_finite() || !logit.is_finite() {
            return Err(Error::Divergence(format!("non-finite logit {logit} for graph {}", graph.id)));
        }
        Ok(GnnForward {
            channels,
            convs,
            node_sum,
            embedding,
            fc1_pre,
            fc1_out,
            hidden_mask,
            logit,
            probability,
        })
    }

    /// Inference-mode probability of the mutant class.
    pub fn predict(&self, graph: &BrainGraph) -> Result<f64> {
        Ok(self.forward(graph, None, None)?.probability)
    }

    /// Backpropagates `d_logit` (derivative of the loss w.r.t. the output logit).
    pub fn backward(&self, graph: &BrainGraph, fwd: &GnnForward, d_logit: f64) -> Result<GnnGradients> {
        let mut grads = BTreeMap::new();
        let d_out = Tensor::matrix(1, 1, vec![d_logit])?;
        let (mut d_fc1, d_w2, d_b2) =
            crate::numerics::affine_backward(&fwd.fc1_out, self.params.get("fc2.w")?, &d_out)?;
        grads.insert("fc2.w".to_string(), d_w2);
        grads.insert("fc2.b".to_string(), d_b2);
        if let Some(mask) = &fwd.hidden_mask {
            for (g, m) in d_fc1.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let d_fc1_pre = d_fc1.zip_map(&fwd.fc1_pre, |g, a| if a > 0.0 { g } else { 0.0 })?;
        let (d_embed, d_w1, d_b1) =
            crate::numerics::affine_backward(&fwd.embedding, self.params.get("fc1.w")?, &d_fc1_pre)?;
        grads.insert("fc1.w".to_string(), d_w1);
        grads.insert("fc1.b".to_string(), d_b1);

        let theta = self.params.get("embed.theta")?;
        grads.insert("embed.theta".to_string(), fwd.node_sum.t_matmul(&d_embed)?);
        let d_sum = d_embed.matmul_t(theta)?;
        let n = graph.node_count();
        let mut d_x = Tensor::matrix(n, d_sum.len(), d_sum.data().repeat(n))?;

        let mut edge_scale = vec![0.0; graph.edge_count()];
        for l in (0..CONV_LAYERS).rev() {
            let layer = self.conv_layer(l)?;
            let g = conv_backward(&layer, graph.edges(), &fwd.channels, &fwd.convs[l], &d_x)?;
            grads.insert(GnnArchitecture::theta1_name(l), g.theta1);
            for (c, t) in g.theta2.into_iter().enumerate() {
                grads.insert(self.arch.theta2_name(l, c), t);
            }
            for (a, b) in edge_scale.iter_mut().zip(&g.edge_scale) {
                *a += b;
            }
            d_x = g.input;
        }
        Ok(GnnGradients {
            params: grads,
            edge_scale,
        })
    }

    pub fn to_archive(&self, extra: Map<String, Value>) -> Result<Archive> {
        let mut header = extra;
        header.insert("kind".into(), Value::from("gnn"));
        header.insert(
            "architecture".into(),
            serde_json::to_value(&self.arch).map_err(|e| Error::Internal(e.to_string()))?,
        );
        header.insert(
            "scaler".into(),
            serde_json::to_value(&self.scaler).map_err(|e| Error::Internal(e.to_string()))?,
        );
        let mut a = Archive::new(header);
        for (name, t) in self.params.iter() {
            a.tensors.insert(name.to_string(), t.clone());
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let kind: String = a.field("kind")?;
        if kind != "gnn" {
            return Err(Error::Data(format!("archive holds a {kind}, not a gnn")));
        }
        let arch: GnnArchitecture = a.field("architecture")?;
        let scaler: FeatureScaler = a.field("scaler")?;
        if scaler.node_mean.len() != arch.node_dim || scaler.edge_mean.len() != arch.edge_dim {
            return Err(Error::Data("scaler widths differ from the architecture".into()));
        }
        let template = Self::new(arch.clone(), 1.0, 0)?;
        let mut params = ParamSet::new();
        for (name, t) in template.params.iter() {
            let stored = a.tensor(name)?;
            if stored.shape() != t.shape() {
                return Err(Error::Data(format!(
                    "section {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            params.insert(name, stored.clone());
        }
        Ok(Self { arch, params, scaler })
    }
}

/// Mean weighted node degree `2 Σ_e Σ_z |e_z| / N` over a set of graphs.
pub fn mean_weighted_degree(graphs: &[BrainGraph]) -> f64 {
    if graphs.is_empty() {
        return 1.0;
    }
    let total: f64 = graphs
        .iter()
        .map(|g| 2.0 * g.edge_feature_data().iter().map(|v| v.abs()).sum::<f64>() / g.node_count().max(1) as f64)
        .sum();
    total / graphs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::loss::{weighted_bce_grad_logit, weighted_bce_logit};
    use crate::numerics::{grad_check, DEFAULT_EPS};

    fn arch(mode: ChannelMode) -> GnnArchitecture {
        GnnArchitecture {
            node_dim: 3,
            edge_dim: 2,
            conv_widths: [4, 3, 4],
            embed_dim: 3,
            hidden_dim: 3,
            channel_mode: mode,
        }
    }

    fn random_graph(rng: &mut crate::numerics::SeededRng, n: usize, label: u8) -> BrainGraph {
        let x = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < 0.7 {
                    edges.push((i, j));
                }
            }
        }
        let e = (0..edges.len() * 2).map(|_| rng.random_range(0.1..1.0)).collect();
        BrainGraph::new("r", label, x, edges, 2, e).unwrap()
    }

    #[test]
    fn zero_network_gives_half() {
        let m = GnnModel::zeroed(GnnArchitecture::default()).unwrap();
        let mut rng = seeded(1);
        let x = Tensor::matrix(5, 12, (0..60).map(|_| rng.random::<f64>()).collect()).unwrap();
        let g = BrainGraph::new("z", 1, x, vec![(0, 1), (3, 4)], 12, vec![0.5; 24]).unwrap();
        assert_eq!(m.predict(&g).unwrap(), 0.5);
    }

    #[test]
    fn inference_is_bit_exact() {
        let m = GnnModel::new(arch(ChannelMode::Shared), 1.0, 4).unwrap();
        let g = random_graph(&mut seeded(5), 6, 0);
        assert_eq!(m.predict(&g).unwrap().to_bits(), m.predict(&g).unwrap().to_bits());
    }

    #[test]
    fn node_permutation_invariance() {
        for mode in [ChannelMode::Shared, ChannelMode::PerChannel] {
            let m = GnnModel::new(arch(mode), 1.0, 7).unwrap();
            let mut rng = seeded(8);
            let g = random_graph(&mut rng, 7, 1);
            let perm = [3, 6, 0, 1, 5, 2, 4];
            let (a, b) = (m.predict(&g).unwrap(), m.predict(&g.permuted(&perm).unwrap()).unwrap());
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn wrong_node_width_is_rejected() {
        let m = GnnModel::new(GnnArchitecture::default(), 1.0, 0).unwrap();
        let g = random_graph(&mut seeded(2), 3, 0);
        assert!(matches!(m.predict(&g), Err(Error::Dimension(_))));
    }

    fn check_gradients(mode: ChannelMode, seed: u64) {
        let mut rng = seeded(seed);
        let g = random_graph(&mut rng, 4, (seed % 2) as u8);
        let mut model = GnnModel::new(arch(mode), 1.0, seed).unwrap();
        // Keep biases away from ReLU kinks.
        model.params.get_mut("fc1.b").unwrap().data_mut().fill(0.3);
        let masks = DropoutMasks {
            hidden: vec![2.0, 0.0, 2.0],
        };
        let (w1, w0) = (1.4, 0.7);
        let loss = |m: &GnnModel| -> Result<f64> {
            let f = m.forward(&g, None, Some(&masks))?;
            Ok(weighted_bce_logit(f.logit, g.label, w1, w0))
        };
        let fwd = model.forward(&g, None, Some(&masks)).unwrap();
        let grads = model
            .backward(&g, &fwd, weighted_bce_grad_logit(fwd.logit, g.label, w1, w0))
            .unwrap();
        assert_eq!(grads.params.len(), model.params.len());
        for (n, t) in grads.params {
            model.params.set_grad(&n, t).unwrap();
        }
        let a = model.arch.clone();
        let report = grad_check(
            |p| {
                loss(&GnnModel {
                    arch: a.clone(),
                    params: p.clone(),
                    scaler: FeatureScaler::identity(3, 2),
                })
            },
            &model.params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{:?}", report.per_param);
    }

    #[test]
    fn gradients_shared_mode() {
        for seed in 1..4 {
            check_gradients(ChannelMode::Shared, seed);
        }
    }

    #[test]
    fn gradients_per_channel_mode() {
        for seed in 1..4 {
            check_gradients(ChannelMode::PerChannel, seed);
        }
    }

    #[test]
    fn edge_scale_gradient() {
        let mut rng = seeded(11);
        let g = random_graph(&mut rng, 5, 1);
        let model = GnnModel::new(arch(ChannelMode::Shared), 1.0, 3).unwrap();
        let scale: Vec<f64> = (0..g.edge_count()).map(|_| rng.random_range(0.2..0.8)).collect();
        let f = |s: &[f64]| model.forward(&g, Some(s), None).unwrap().logit;
        let fwd = model.forward(&g, Some(&scale), None).unwrap();
        let grads = model.backward(&g, &fwd, 1.0).unwrap();
        for e in 0..scale.len() {
            let h = 1e-6;
            let (mut up, mut dn) = (scale.clone(), scale.clone());
            up[e] += h;
            dn[e] -= h;
            let num = (f(&up) - f(&dn)) / (2.0 * h);
            let rel = crate::numerics::relative_error(grads.edge_scale[e], num);
            assert!(rel < 1e-4, "edge {e}: {} vs {num}", grads.edge_scale[e]);
        }
    }

    #[test]
    fn archive_round_trip() {
        let m = GnnModel::new(arch(ChannelMode::PerChannel), 2.0, 9).unwrap();
        let bytes = m.to_archive(Map::new()).unwrap().to_bytes().unwrap();
        let back = GnnModel::from_archive(&Archive::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
