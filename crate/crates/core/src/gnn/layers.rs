//! Edge-featured graph convolution and the sum-readout embedding.
//!
//! Convolution, per node `i`:
//!
//! ```text
//! x_i' = Θ1ᵀ x_i + Σ_z Θ2ᵀ Σ_{j∈N(i)} e_{j,i,z} x_j
//! ```
//!
//! With one shared `Θ2` the channel sum collapses to a scalar weight
//! `s_ji = Σ_z e_{j,i,z}` per edge. Per-channel mode keeps a separate `Θ2_z`
//! for every edge feature channel. Undirected edges send a message in both
//! directions with the same feature vector.

use serde::{Deserialize, Serialize};

use super::graph::BrainGraph;
use crate::error::{Error, Result};
use crate::numerics::{relu, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// One `Θ2` shared by every edge feature channel.
    #[default]
    Shared,
    /// A distinct `Θ2_z` per edge feature channel.
    PerChannel,
}

/// Per-edge message weights for every `Θ2` channel, optionally scaled by an edge mask.
#[derive(Debug, Clone)]
pub struct EdgeChannels {
    channels: usize,
    /// Unscaled weights, `E × channels`.
    raw: Vec<f64>,
    /// Weights after applying the edge scale.
    scaled: Vec<f64>,
}

impl EdgeChannels {
    pub fn new(graph: &BrainGraph, mode: ChannelMode, edge_scale: Option<&[f64]>) -> Result<Self> {
        let e = graph.edge_count();
        if let Some(s) = edge_scale {
            if s.len() != e {
                return Err(Error::Dimension(format!(
                    "edge scale has {} entries for {e} edges",
                    s.len()
                )));
            }
        }
        let (channels, raw): (usize, Vec<f64>) = match mode {
            ChannelMode::Shared => (
                1,
                (0..e).map(|k| graph.edge_feature(k).iter().sum()).collect(),
            ),
            ChannelMode::PerChannel => (graph.edge_dim(), graph.edge_feature_data().to_vec()),
        };
        let scaled = match edge_scale {
            None => raw.clone(),
            Some(s) => raw
                .chunks(channels)
                .zip(s)
                .flat_map(|(row, &f)| row.iter().map(move |w| w * f))
                .collect(),
        };
        Ok(Self {
            channels,
            raw,
            scaled,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn scaled(&self, e: usize, c: usize) -> f64 {
        self.scaled[e * self.channels + c]
    }

    fn raw(&self, e: usize, c: usize) -> f64 {
        self.raw[e * self.channels + c]
    }
}

/// Borrowed view of one convolution's weights.
#[derive(Debug, Clone)]
pub struct GraphConvLayer<'a> {
    pub theta1: &'a Tensor,
    /// One matrix in shared mode, one per edge channel otherwise.
    pub theta2: Vec<&'a Tensor>,
}

impl GraphConvLayer<'_> {
    pub fn mode(&self) -> ChannelMode {
        if self.theta2.len() == 1 {
            ChannelMode::Shared
        } else {
            ChannelMode::PerChannel
        }
    }

    fn check(&self, x: &Tensor, channels: usize) -> Result<()> {
        let (d_in, d_out) = (self.theta1.rows(), self.theta1.cols());
        if self.theta2.iter().any(|t| t.shape() != self.theta1.shape()) {
            return Err(Error::Dimension("Θ1 and Θ2 shapes must be equal".into()));
        }
        if self.theta2.len() != channels {
            return Err(Error::Dimension(format!(
                "layer has {} Θ2 matrices for {channels} edge channels",
                self.theta2.len()
            )));
        }
        if x.shape().len() != 2 || x.cols() != d_in {
            return Err(Error::Dimension(format!(
                "conv layer expects node features of width {d_in}, got {:?} (Θ is {d_in}×{d_out})",
                x.shape()
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one convolution, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub input: Tensor,
    /// Neighbour aggregates `S_c X`, one per channel.
    pub messages: Vec<Tensor>,
    pub pre: Tensor,
    pub out: Tensor,
}

pub struct ConvGrads {
    pub theta1: Tensor,
    pub theta2: Vec<Tensor>,
    pub input: Tensor,
    /// Gradient with respect to each edge's scale factor.
    pub edge_scale: Vec<f64>,
}

fn aggregate(edges: &[(usize, usize)], ch: &EdgeChannels, c: usize, x: &Tensor) -> Result<Tensor> {
    let n = x.rows();
    let d = x.cols();
    let mut m = Tensor::zeros(&[n, d]);
    for (e, &(i, j)) in edges.iter().enumerate() {
        let s = ch.scaled(e, c);
        if s == 0.0 {
            continue;
        }
        if i >= n || j >= n {
            return Err(Error::Data(format!("edge ({i},{j}) references a node >= {n}")));
        }
        for k in 0..d {
            let (xi, xj) = (x.at(i, k), x.at(j, k));
            m.data_mut()[i * d + k] += s * xj;
            m.data_mut()[j * d + k] += s * xi;
        }
    }
    Ok(m)
}

pub fn conv_forward(
    layer: &GraphConvLayer<'_>,
    edges: &[(usize, usize)],
    channels: &EdgeChannels,
    x: &Tensor,
) -> Result<ConvCache> {
    layer.check(x, channels.channels())?;
    let mut pre = x.matmul(layer.theta1)?;
    let mut messages = Vec::with_capacity(channels.channels());
    for (c, theta2) in layer.theta2.iter().enumerate() {
        let m = aggregate(edges, channels, c, x)?;
        pre.add_assign(&m.matmul(theta2)?)?;
        messages.push(m);
    }
    let out = pre.map(relu);
    Ok(ConvCache {
        input: x.clone(),
        messages,
        pre,
        out,
    })
}

pub fn conv_backward(
    layer: &GraphConvLayer<'_>,
    edges: &[(usize, usize)],
    channels: &EdgeChannels,
    cache: &ConvCache,
    d_out: &Tensor,
) -> Result<ConvGrads> {
    let d_pre = d_out.zip_map(&cache.pre, |g, a| if a > 0.0 { g } else { 0.0 })?;
    let x = &cache.input;
    let theta1 = cache.input.t_matmul(&d_pre)?;
    let mut input = d_pre.matmul_t(layer.theta1)?;
    let mut edge_scale = vec![0.0; edges.len()];
    let mut theta2 = Vec::with_capacity(layer.theta2.len());
    let d = x.cols();
    for (c, t2) in layer.theta2.iter().enumerate() {
        theta2.push(cache.messages[c].t_matmul(&d_pre)?);
        // G = dA Θ2ᵀ is the gradient w.r.t. the aggregate S_c X.
        let g = d_pre.matmul_t(t2)?;
        for (e, &(i, j)) in edges.iter().enumerate() {
            let s = channels.scaled(e, c);
            let (gi, gj) = (g.row(i), g.row(j));
            let (xi, xj) = (x.row(i), x.row(j));
            let dot: f64 = xj.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>()
                + xi.iter().zip(gj).map(|(a, b)| a * b).sum::<f64>();
            edge_scale[e] += channels.raw(e, c) * dot;
            if s == 0.0 {
                continue;
            }
            for k in 0..d {
                input.data_mut()[j * d + k] += s * gi[k];
                input.data_mut()[i * d + k] += s * gj[k];
            }
        }
    }
    Ok(ConvGrads {
        theta1,
        theta2,
        input,
        edge_scale,
    })
}

/// Graph convolution followed by ReLU.
pub fn graph_conv(layer: &GraphConvLayer<'_>, graph: &BrainGraph, x: &Tensor) -> Result<Tensor> {
    Ok(graph_conv_cache(layer, graph, x)?.out)
}

/// Convolution output before the ReLU.
pub fn graph_conv_pre_activation(layer: &GraphConvLayer<'_>, graph: &BrainGraph, x: &Tensor) -> Result<Tensor> {
    Ok(graph_conv_cache(layer, graph, x)?.pre)
}

fn graph_conv_cache(layer: &GraphConvLayer<'_>, graph: &BrainGraph, x: &Tensor) -> Result<ConvCache> {
    if x.rows() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            x.rows(),
            graph.node_count()
        )));
    }
    let ch = EdgeChannels::new(graph, layer.mode(), None)?;
    conv_forward(layer, graph.edges(), &ch, x)
}

/// Sum-readout graph embedding weights `Θ: D_in × D_g`.
#[derive(Debug, Clone)]
pub struct EmbedLayer<'a> {
    pub theta: &'a Tensor,
}

/// `G = Σ_i Θᵀ x_i`, returned as a `1 × D_g` row.
pub fn graph_embed(layer: &EmbedLayer<'_>, x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || x.cols() != layer.theta.rows() {
        return Err(Error::Dimension(format!(
            "embedding expects node width {}, got {:?}",
            layer.theta.rows(),
            x.shape()
        )));
    }
    let sum = x.sum_rows();
    Tensor::matrix(1, sum.len(), sum.into_data())?.matmul(layer.theta)
}
