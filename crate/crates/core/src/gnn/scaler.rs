use serde::{Deserialize, Serialize};

use super::graph::BrainGraph;
use crate::error::{Error, Result};

/// Per-channel standardisation of node and edge features, fitted on a
/// training set and applied before the first convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub node_mean: Vec<f64>,
    pub node_std: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_std: Vec<f64>,
}

fn moments(sums: &[f64], squares: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mean: Vec<f64> = sums.iter().map(|s| if n == 0 { 0.0 } else { s / n as f64 }).collect();
    let std = squares
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = if n == 0 { 0.0 } else { (q / n as f64 - m * m).max(0.0) };
            if var.sqrt() > 1e-9 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl FeatureScaler {
    pub fn identity(node_dim: usize, edge_dim: usize) -> Self {
        Self {
            node_mean: vec![0.0; node_dim],
            node_std: vec![1.0; node_dim],
            edge_mean: vec![0.0; edge_dim],
            edge_std: vec![1.0; edge_dim],
        }
    }

    pub fn fit(graphs: &[BrainGraph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Data("cannot fit a scaler on zero graphs".into()))?;
        let (d, z) = (first.node_dim(), first.edge_dim());
        let (mut ns, mut nq, mut es, mut eq) = (vec![0.0; d], vec![0.0; d], vec![0.0; z], vec![0.0; z]);
        let (mut n_nodes, mut n_edges) = (0, 0);
        for g in graphs {
            if g.node_dim() != d || (g.edge_count() > 0 && g.edge_dim() != z) {
                return Err(Error::Dimension(format!("graph {} has inconsistent feature widths", g.id)));
            }
            for row in g.node_features().data().chunks(d) {
                for (c, &v) in row.iter().enumerate() {
                    ns[c] += v;
                    nq[c] += v * v;
                }
            }
            for row in g.edge_feature_data().chunks(z) {
                for (c, &v) in row.iter().enumerate() {
                    es[c] += v;
                    eq[c] += v * v;
                }
            }
            n_nodes += g.node_count();
            n_edges += g.edge_count();
        }
        let (node_mean, node_std) = moments(&ns, &nq, n_nodes);
        let (edge_mean, edge_std) = moments(&es, &eq, n_edges);
        Ok(Self {
            node_mean,
            node_std,
            edge_mean,
            edge_std,
        })
    }

    pub fn apply(&self, graph: &BrainGraph) -> BrainGraph {
        graph.map_features(
            |c, v| (v - self.node_mean[c]) / self.node_std[c],
            |c, v| (v - self.edge_mean[c]) / self.edge_std[c],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn fitted_features_are_standardised() {
        let g = |k: f64| {
            let x = Tensor::matrix(2, 1, vec![k, k + 2.0]).unwrap();
            BrainGraph::new("g", 0, x, vec![(0, 1)], 2, vec![k, 5.0]).unwrap()
        };
        let graphs = [g(0.0), g(4.0)];
        let s = FeatureScaler::fit(&graphs).unwrap();
        assert_eq!(s.node_mean, vec![3.0]);
        assert_eq!(s.edge_mean, vec![2.0, 5.0]);
        // A constant channel keeps unit scale.
        assert_eq!(s.edge_std[1], 1.0);
        let all: Vec<f64> = graphs.iter().flat_map(|x| s.apply(x).node_features().data().to_vec()).collect();
        let mean = all.iter().sum::<f64>() / 4.0;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_leaves_graph_unchanged() {
        let x = Tensor::matrix(2, 1, vec![0.3, 0.7]).unwrap();
        let g = BrainGraph::new("g", 1, x, vec![(0, 1)], 1, vec![0.9]).unwrap();
        assert_eq!(FeatureScaler::identity(1, 1).apply(&g), g);
    }
}
