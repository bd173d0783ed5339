use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Label value of the IDH-mutant (positive) class.
pub const MUTANT: u8 = 1;
pub const WILD_TYPE: u8 = 0;

/// One subject's structural network: node features, undirected edges with
/// feature vectors, and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainGraph {
    pub id: String,
    pub label: u8,
    node_features: Tensor,
    edges: Vec<(usize, usize)>,
    edge_dim: usize,
    /// `E × edge_dim`, row-major.
    edge_features: Vec<f64>,
}

impl BrainGraph {
    pub fn new(
        id: impl Into<String>,
        label: u8,
        node_features: Tensor,
        edges: Vec<(usize, usize)>,
        edge_dim: usize,
        edge_features: Vec<f64>,
    ) -> Result<Self> {
        if label > 1 {
            return Err(Error::Data(format!("label must be 0 or 1, got {label}")));
        }
        if node_features.shape().len() != 2 {
            return Err(Error::Dimension("node features must be an N×D matrix".into()));
        }
        if edge_dim == 0 || edge_features.len() != edges.len() * edge_dim {
            return Err(Error::Dimension(format!(
                "{} edge feature values do not match {} edges of width {edge_dim}",
                edge_features.len(),
                edges.len()
            )));
        }
        if edge_features.iter().chain(node_features.data()).any(|v| !v.is_finite()) {
            return Err(Error::Data("graph features must be finite".into()));
        }
        let n = node_features.rows();
        let mut seen = BTreeSet::new();
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::Data(format!("edge ({i},{j}) references a node >= {n}")));
            }
            if i == j {
                return Err(Error::Data(format!("self-loop at node {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Data(format!("duplicate undirected edge ({i},{j})")));
            }
        }
        Ok(Self {
            id: id.into(),
            label,
            node_features,
            edges,
            edge_dim,
            edge_features,
        })
    }

    /// Builds a graph from an `E × Z` edge feature matrix.
    pub fn from_matrix(
        id: impl Into<String>,
        label: u8,
        node_features: Tensor,
        edges: Vec<(usize, usize)>,
        edge_features: &Tensor,
    ) -> Result<Self> {
        if edge_features.shape().len() != 2 {
            return Err(Error::Dimension("edge features must be an E×Z matrix".into()));
        }
        Self::new(
            id,
            label,
            node_features,
            edges,
            edge_features.cols(),
            edge_features.data().to_vec(),
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_feature(&self, e: usize) -> &[f64] {
        &self.edge_features[e * self.edge_dim..(e + 1) * self.edge_dim]
    }

    pub fn edge_feature_data(&self) -> &[f64] {
        &self.edge_features
    }

    /// Position of the undirected edge `{i, j}` in the edge list.
    pub fn find_edge(&self, i: usize, j: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|&(a, b)| (a == i && b == j) || (a == j && b == i))
    }

    /// Keeps the edges whose flag is set.
    pub fn with_edges(&self, keep: &[bool]) -> Result<Self> {
        let mut edges = Vec::new();
        let mut feats = Vec::new();
        for (e, (&pair, &k)) in self.edges.iter().zip(keep).enumerate() {
            if k {
                edges.push(pair);
                feats.extend_from_slice(self.edge_feature(e));
            }
        }
        Ok(Self {
            edges,
            edge_features: feats,
            ..self.clone()
        })
    }

    /// Relabels node `i` as `perm[i]`, moving features and remapping edges.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension(format!("invalid permutation of {n} nodes")));
        }
        let mut rows = vec![Vec::new(); n];
        for (i, &p) in perm.iter().enumerate() {
            rows[p] = self.node_features.row(i).to_vec();
        }
        Ok(Self {
            node_features: Tensor::from_rows(&rows)?,
            edges: self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect(),
            ..self.clone()
        })
    }

    /// Same topology with replaced edge features (`E × edge_dim` values).
    pub fn with_edge_features(&self, edge_features: Vec<f64>) -> Result<Self> {
        Self::new(
            self.id.clone(),
            self.label,
            self.node_features.clone(),
            self.edges.clone(),
            self.edge_dim,
            edge_features,
        )
    }

    /// Applies `node(channel, value)` and `edge(channel, value)` to every feature.
    pub(crate) fn map_features(&self, node: impl Fn(usize, f64) -> f64, edge: impl Fn(usize, f64) -> f64) -> Self {
        let d = self.node_dim();
        let z = self.edge_dim;
        let mut node_features = self.node_features.clone();
        for (k, v) in node_features.data_mut().iter_mut().enumerate() {
            *v = node(k % d, *v);
        }
        let edge_features = self
            .edge_features
            .iter()
            .enumerate()
            .map(|(k, &v)| edge(k % z, v))
            .collect();
        Self {
            node_features,
            edge_features,
            ..self.clone()
        }
    }

    /// Reorders the edge list: new position `k` holds old edge `order[k]`.
    pub fn reorder_edges(&self, order: &[usize]) -> Result<Self> {
        let mut feats = Vec::with_capacity(self.edge_features.len());
        for &e in order {
            feats.extend_from_slice(self.edge_feature(e));
        }
        Self::new(
            self.id.clone(),
            self.label,
            self.node_features.clone(),
            order.iter().map(|&e| self.edges[e]).collect(),
            self.edge_dim,
            feats,
        )
    }
}

/// Removes each undirected edge independently with probability `p_drop`.
pub fn edge_drop<R: Rng + ?Sized>(graph: &BrainGraph, p_drop: f64, rng: &mut R) -> Result<BrainGraph> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(Error::Config(format!("edge drop probability must be in [0, 1), got {p_drop}")));
    }
    if p_drop == 0.0 {
        return Ok(graph.clone());
    }
    let keep: Vec<bool> = (0..graph.edge_count())
        .map(|_| rng.random::<f64>() >= p_drop)
        .collect();
    graph.with_edges(&keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub label: u8,
    pub node_features: Vec<Vec<f64>>,
    pub edges: Vec<[usize; 2]>,
    pub edge_features: Vec<Vec<f64>>,
}

/// Cohort file: `{"nodes":N,"latent_dim":D,"graphs":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDataset {
    pub nodes: usize,
    pub latent_dim: usize,
    pub graphs: Vec<GraphRecord>,
}

impl GraphDataset {
    pub fn from_graphs(graphs: &[BrainGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Data("dataset needs at least one graph".into()))?;
        let (nodes, latent_dim) = (first.node_count(), first.node_dim());
        let mut records = Vec::with_capacity(graphs.len());
        for g in graphs {
            if g.node_count() != nodes || g.node_dim() != latent_dim {
                return Err(Error::Dimension(format!(
                    "graph {} has {}×{} node features, expected {nodes}×{latent_dim}",
                    g.id,
                    g.node_count(),
                    g.node_dim()
                )));
            }
            records.push(GraphRecord {
                id: g.id.clone(),
                label: g.label,
                node_features: (0..nodes).map(|i| g.node_features.row(i).to_vec()).collect(),
                edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
                edge_features: (0..g.edge_count()).map(|e| g.edge_feature(e).to_vec()).collect(),
            });
        }
        Ok(Self {
            nodes,
            latent_dim,
            graphs: records,
        })
    }

    pub fn to_graphs(&self) -> Result<Vec<BrainGraph>> {
        self.graphs
            .iter()
            .map(|r| {
                if r.node_features.len() != self.nodes {
                    return Err(Error::Dimension(format!(
                        "graph {} has {} nodes, dataset declares {}",
                        r.id,
                        r.node_features.len(),
                        self.nodes
                    )));
                }
                let x = Tensor::from_rows(&r.node_features)?;
                if x.cols() != self.latent_dim {
                    return Err(Error::Dimension(format!(
                        "graph {} node width {} differs from latent_dim {}",
                        r.id,
                        x.cols(),
                        self.latent_dim
                    )));
                }
                let edges = r.edges.iter().map(|e| (e[0], e[1])).collect::<Vec<_>>();
                let edge_dim = r.edge_features.first().map_or(self.latent_dim, Vec::len);
                if r.edge_features.len() != edges.len() || r.edge_features.iter().any(|f| f.len() != edge_dim) {
                    return Err(Error::Dimension(format!(
                        "graph {} edge features do not match its {} edges",
                        r.id,
                        edges.len()
                    )));
                }
                let flat = r.edge_features.concat();
                BrainGraph::new(r.id.clone(), r.label, x, edges, edge_dim, flat)
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded;

    pub(crate) fn line_graph(edges: usize) -> BrainGraph {
        let n = edges + 1;
        let x = Tensor::matrix(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let e: Vec<(usize, usize)> = (0..edges).map(|i| (i, i + 1)).collect();
        BrainGraph::new("g", 1, x, e, 1, vec![1.0; edges]).unwrap()
    }

    #[test]
    fn validation() {
        let x = Tensor::zeros(&[3, 2]);
        let ef = vec![0.0; 2];
        assert!(BrainGraph::new("a", 0, x.clone(), vec![(0, 0)], 2, ef.clone()).is_err());
        assert!(BrainGraph::new("a", 0, x.clone(), vec![(0, 3)], 2, ef.clone()).is_err());
        assert!(BrainGraph::new("a", 0, x.clone(), vec![(0, 1), (1, 0)], 2, vec![0.0; 4]).is_err());
        assert!(BrainGraph::new("a", 2, x.clone(), vec![(0, 1)], 2, ef.clone()).is_err());
        assert!(BrainGraph::new("a", 1, x.clone(), vec![(0, 1)], 2, vec![0.0; 3]).is_err());
        assert!(BrainGraph::new("a", 1, x, vec![(0, 1)], 2, ef).is_ok());
    }

    #[test]
    fn edge_drop_zero_is_identity() {
        let g = line_graph(20);
        let mut rng = seeded(1);
        assert_eq!(edge_drop(&g, 0.0, &mut rng).unwrap(), g);
    }

    #[test]
    fn edge_drop_binomial_bound() {
        let n = 10_000;
        let x = Tensor::zeros(&[n + 1, 1]);
        let edges: Vec<_> = (0..n).map(|i| (i, i + 1)).collect();
        let g = BrainGraph::new("big", 0, x, edges, 1, vec![0.0; n]).unwrap();
        let kept = edge_drop(&g, 0.5, &mut seeded(2024)).unwrap().edge_count();
        assert!((4800..=5200).contains(&kept), "{kept}");
    }

    #[test]
    fn edge_drop_is_seeded() {
        let g = line_graph(200);
        let a = edge_drop(&g, 0.3, &mut seeded(9)).unwrap();
        let b = edge_drop(&g, 0.3, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.node_features(), g.node_features());
        assert_eq!(a.label, g.label);
        assert!(edge_drop(&g, 1.0, &mut seeded(9)).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let g = line_graph(3);
        let empty = g.with_edges(&[false; 3]).unwrap();
        let ds = GraphDataset::from_graphs(&[g.clone(), empty.clone()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.json");
        ds.save(&p).unwrap();
        let back = GraphDataset::load(&p).unwrap().to_graphs().unwrap();
        assert_eq!(back[0], g);
        assert_eq!(back[1].edge_count(), 0);
    }
}
