//! Seeded synthetic cohorts with planted ground truth.
//!
//! Two levels are available. Graph-level cohorts emit latent-feature graphs
//! directly. Volume-level cohorts build a label atlas, per-subject tract
//! densities and four-modality scans whose intensities are shifted inside
//! the ROIs of each subject's affected edges. In both, wild-type subjects
//! carry more affected edges than mutants.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::atlas::{EdgeAtlas, EdgeKey, NodeAtlas, TractDensitySet};
use crate::cohort::{save_scan, CohortEntry, CohortManifest};
use crate::error::{Error, Result};
use crate::gnn::{BrainGraph, GraphDataset, MUTANT, WILD_TYPE};
use crate::numerics::{derive_seed, seeded, SeededRng, Tensor};
use crate::volumes::{save_volume, Mask, MultiModalScan, Volume, MODALITY_COUNT};

/// Graph-level background features are drawn from this interval.
pub const GRAPH_BACKGROUND: (f64, f64) = (0.4, 0.6);
/// Baseline phantom intensity per modality.
pub const MODALITY_BASELINE: [f64; MODALITY_COUNT] = [0.55, 0.65, 0.45, 0.5];
pub const MIN_REGION_VOXELS: usize = 8;
const TUBE_PEAK: f64 = 20.0;

/// Standard deviation of the graph-level background distribution.
pub fn graph_noise_std() -> f64 {
    (GRAPH_BACKGROUND.1 - GRAPH_BACKGROUND.0) / 12f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub count: usize,
    pub affected_edges: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub grid: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub regions: usize,
    pub atlas_subjects: usize,
    /// Pairs missing in between 2 and S/2 atlas subjects.
    pub sparse_pairs: usize,
    /// Pairs missing in exactly one atlas subject.
    pub flaky_pairs: usize,
    pub tube_radius: f64,
    pub mutant: ClassSpec,
    pub wild_type: ClassSpec,
    /// Gaussian intensity noise of volume-level phantoms.
    pub noise: f64,
    pub node_features: usize,
    pub edge_features: usize,
    /// Graph-level edge density; `None` connects every pair.
    pub edge_probability: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let amplitude = 5.0 * graph_noise_std();
        Self {
            grid: [24, 24, 24],
            voxel_size_mm: [2.0; 3],
            regions: 6,
            atlas_subjects: 10,
            sparse_pairs: 2,
            flaky_pairs: 1,
            tube_radius: 2.0,
            mutant: ClassSpec {
                count: 150,
                affected_edges: 2,
                amplitude,
            },
            wild_type: ClassSpec {
                count: 150,
                affected_edges: 6,
                amplitude,
            },
            noise: 0.05,
            node_features: 12,
            edge_features: 12,
            edge_probability: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Sets both class amplitudes to `snr` graph-level background deviations.
    pub fn with_snr(mut self, snr: f64) -> Self {
        let a = snr * graph_noise_std();
        self.mutant.amplitude = a;
        self.wild_type.amplitude = a;
        self
    }

    pub fn with_counts(mut self, mutant: usize, wild_type: usize) -> Self {
        self.mutant.count = mutant;
        self.wild_type.count = wild_type;
        self
    }

    /// Cohort for explanation experiments: one affected edge in wild-type
    /// subjects, none in mutants.
    pub fn single_edge() -> Self {
        let mut c = Self::default().with_snr(8.0);
        c.mutant.affected_edges = 0;
        c.wild_type.affected_edges = 1;
        c
    }

    pub fn subject_count(&self) -> usize {
        self.mutant.count + self.wild_type.count
    }

    pub fn class(&self, label: u8) -> &ClassSpec {
        if label == MUTANT {
            &self.mutant
        } else {
            &self.wild_type
        }
    }

    fn pair_count(&self) -> usize {
        self.regions * (self.regions.saturating_sub(1)) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.regions < 2 {
            return bad(format!("need at least 2 regions, got {}", self.regions));
        }
        if self.wild_type.affected_edges <= self.mutant.affected_edges {
            return bad(format!(
                "wild-type must affect more edges than mutant ({} vs {})",
                self.wild_type.affected_edges, self.mutant.affected_edges
            ));
        }
        if self.wild_type.affected_edges > self.pair_count() {
            return bad(format!(
                "{} affected edges exceed the {} possible pairs",
                self.wild_type.affected_edges,
                self.pair_count()
            ));
        }
        if self.subject_count() == 0 {
            return bad("cohort is empty".into());
        }
        for c in [&self.mutant, &self.wild_type] {
            if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
                return bad(format!("amplitude must be finite and non-negative, got {}", c.amplitude));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        if let Some(p) = self.edge_probability {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("edge probability must be in (0, 1], got {p}"));
            }
        }
        if self.node_features == 0 || self.edge_features == 0 {
            return bad("feature widths must be positive".into());
        }
        if self.grid.contains(&0) || self.voxel_size_mm.iter().any(|&v| !(v > 0.0)) {
            return bad("grid and voxel size must be positive".into());
        }
        if self.atlas_subjects == 0 {
            return bad("need at least one atlas subject".into());
        }
        if self.sparse_pairs > 0 && self.atlas_subjects < 4 {
            return bad("sparse pairs need at least 4 atlas subjects".into());
        }
        if self.sparse_pairs + self.flaky_pairs >= self.pair_count() {
            return bad("sparse and flaky pairs must leave at least one complete pair".into());
        }
        if !(self.tube_radius > 0.0) {
            return bad("tube radius must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub label: u8,
    pub affected_edges: Vec<EdgeKey>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub level: String,
    pub seed: u64,
    pub subjects: Vec<SubjectTruth>,
}

impl SynthTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Labels in a seeded random order with the configured class counts.
fn shuffled_labels(config: &SynthConfig, rng: &mut SeededRng) -> Vec<u8> {
    let mut labels = vec![MUTANT; config.mutant.count];
    labels.extend(std::iter::repeat_n(WILD_TYPE, config.wild_type.count));
    labels.shuffle(rng);
    labels
}

fn sample_edges(edges: &[EdgeKey], k: usize, rng: &mut SeededRng) -> Vec<EdgeKey> {
    let mut picked: Vec<EdgeKey> = index::sample(rng, edges.len(), k).into_iter().map(|i| edges[i]).collect();
    picked.sort_unstable();
    picked
}

/// Edge list shared by every subject of a graph-level cohort.
pub fn graph_topology(config: &SynthConfig) -> Result<Vec<EdgeKey>> {
    config.validate()?;
    let mut rng = seeded(derive_seed(config.seed, "topology"));
    let mut edges = Vec::new();
    for i in 0..config.regions {
        for j in i + 1..config.regions {
            if config.edge_probability.is_none_or(|p| rng.random::<f64>() < p) {
                edges.push((i, j));
            }
        }
    }
    if edges.len() < config.wild_type.affected_edges {
        return Err(Error::Config(format!(
            "topology has {} edges, fewer than the {} affected wild-type edges",
            edges.len(),
            config.wild_type.affected_edges
        )));
    }
    Ok(edges)
}

fn graph_subject(
    config: &SynthConfig,
    topology: &[EdgeKey],
    id: String,
    label: u8,
    affected_count: usize,
    rng: &mut SeededRng,
) -> Result<(BrainGraph, SubjectTruth)> {
    let (lo, hi) = GRAPH_BACKGROUND;
    let n = config.regions;
    let x: Vec<f64> = (0..n * config.node_features).map(|_| rng.random_range(lo..hi)).collect();
    let z = config.edge_features;
    let mut e: Vec<f64> = (0..topology.len() * z).map(|_| rng.random_range(lo..hi)).collect();
    let affected = sample_edges(topology, affected_count, rng);
    let amplitude = config.class(label).amplitude;
    for (k, pair) in topology.iter().enumerate() {
        if affected.binary_search(pair).is_ok() {
            for v in &mut e[k * z..(k + 1) * z] {
                *v += amplitude;
            }
        }
    }
    let graph = BrainGraph::new(
        id.clone(),
        label,
        Tensor::matrix(n, config.node_features, x)?,
        topology.to_vec(),
        z,
        e,
    )?;
    let truth = SubjectTruth {
        id,
        label,
        affected_edges: affected,
        amplitude,
    };
    Ok((graph, truth))
}

/// Latent-feature graphs with uniform background and shifted affected edges.
pub fn generate_graph_cohort(config: &SynthConfig) -> Result<(Vec<BrainGraph>, SynthTruth)> {
    let topology = graph_topology(config)?;
    let labels = shuffled_labels(config, &mut seeded(derive_seed(config.seed, "labels")));
    let mut graphs = Vec::with_capacity(labels.len());
    let mut subjects = Vec::with_capacity(labels.len());
    for (k, &label) in labels.iter().enumerate() {
        let mut rng = seeded(derive_seed(config.seed, &format!("graph-{k}")));
        let count = config.class(label).affected_edges;
        let (g, t) = graph_subject(config, &topology, format!("g-{k:04}"), label, count, &mut rng)?;
        graphs.push(g);
        subjects.push(t);
    }
    Ok((
        graphs,
        SynthTruth {
            level: "graph".into(),
            seed: config.seed,
            subjects,
        },
    ))
}

/// A wild-type graph from the cohort's topology with exactly one shifted edge.
pub fn generate_planted_graph(config: &SynthConfig, seed: u64) -> Result<(BrainGraph, EdgeKey)> {
    let topology = graph_topology(config)?;
    let mut rng = seeded(derive_seed(seed, "planted"));
    let (g, t) = graph_subject(config, &topology, format!("planted-{seed}"), WILD_TYPE, 1, &mut rng)?;
    Ok((g, t.affected_edges[0]))
}

/// Label atlas and tract densities for volume-level phantoms.
#[derive(Debug, Clone)]
pub struct AtlasPair {
    pub nodes: NodeAtlas,
    pub densities: TractDensitySet,
    /// Number of atlas subjects lacking each incomplete pair.
    pub missing: BTreeMap<EdgeKey, usize>,
}

fn ellipsoid_mask(dims: [usize; 3]) -> Vec<bool> {
    let c: Vec<f64> = dims.iter().map(|&d| (d as f64 - 1.0) / 2.0).collect();
    let a: Vec<f64> = dims.iter().map(|&d| 0.45 * d as f64).collect();
    let mut out = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let r: f64 = (0..3).map(|k| ((p[k] - c[k]) / a[k]).powi(2)).sum();
                out.push(r <= 1.0);
            }
        }
    }
    out
}

fn coords(dims: [usize; 3], idx: usize) -> [f64; 3] {
    [
        (idx % dims[0]) as f64,
        ((idx / dims[0]) % dims[1]) as f64,
        (idx / (dims[0] * dims[1])) as f64,
    ]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab: Vec<f64> = (0..3).map(|k| b[k] - a[k]).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((0..3).map(|k| (p[k] - a[k]) * ab[k]).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist2(p, q).sqrt()
}

/// Voronoi regions inside an ellipsoidal brain and noisy tract tubes
/// between region centroids.
pub fn generate_atlas_pair(config: &SynthConfig) -> Result<AtlasPair> {
    config.validate()?;
    let dims = config.grid;
    let brain = ellipsoid_mask(dims);
    let brain_idx: Vec<usize> = (0..brain.len()).filter(|&i| brain[i]).collect();
    let r = config.regions;
    if brain_idx.len() < r * MIN_REGION_VOXELS {
        return Err(Error::Config(format!(
            "grid {dims:?} holds {} brain voxels, too few for {r} regions",
            brain_idx.len()
        )));
    }
    let mut rng = seeded(derive_seed(config.seed, "atlas"));
    let min_sep = 0.5 * (brain_idx.len() as f64 / r as f64).cbrt();
    let mut sites: Vec<[f64; 3]> = Vec::with_capacity(r);
    let mut attempts = 0;
    while sites.len() < r {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config(format!("could not place {r} separated regions in grid {dims:?}")));
        }
        let p = coords(dims, brain_idx[rng.random_range(0..brain_idx.len())]);
        if sites.iter().all(|&s| dist2(s, p).sqrt() >= min_sep) {
            sites.push(p);
        }
    }
    let mut labels = vec![0f32; brain.len()];
    for &i in &brain_idx {
        let p = coords(dims, i);
        let mut best = 0;
        for k in 1..r {
            if dist2(sites[k], p) < dist2(sites[best], p) {
                best = k;
            }
        }
        labels[i] = (best + 1) as f32;
    }
    let nodes = NodeAtlas::from_volume(Volume::new(dims, config.voxel_size_mm, labels)?, Some(r))?;

    let centroids: Vec<[f64; 3]> = nodes
        .node_masks()
        .iter()
        .map(|m| {
            let mut c = [0.0; 3];
            for &i in m.indices() {
                let p = coords(dims, i);
                for k in 0..3 {
                    c[k] += p[k];
                }
            }
            c.map(|v| v / m.len() as f64)
        })
        .collect();

    let s = config.atlas_subjects;
    let mut pairs: Vec<EdgeKey> = (0..r).flat_map(|i| (i + 1..r).map(move |j| (i, j))).collect();
    let mut order = pairs.clone();
    order.shuffle(&mut rng);
    let mut absent: BTreeMap<EdgeKey, Vec<usize>> = BTreeMap::new();
    for (k, &pair) in order.iter().take(config.sparse_pairs + config.flaky_pairs).enumerate() {
        let m = if k < config.sparse_pairs { rng.random_range(2..=s / 2) } else { 1 };
        absent.insert(pair, index::sample(&mut rng, s, m).into_vec());
    }
    pairs.sort_unstable();

    let radius = config.tube_radius;
    let mut subjects = Vec::with_capacity(s);
    for sub in 0..s {
        let mut srng = seeded(derive_seed(config.seed, &format!("tracts-{sub}")));
        let mut map = BTreeMap::new();
        for &(i, j) in &pairs {
            if absent.get(&(i, j)).is_some_and(|a| a.contains(&sub)) {
                continue;
            }
            let mut data = vec![0f32; brain.len()];
            for &v in &brain_idx {
                let d = segment_distance(coords(dims, v), centroids[i], centroids[j]);
                if d <= radius {
                    let jitter = srng.random_range(0.7..1.3);
                    data[v] = (TUBE_PEAK * (1.0 - d / (radius + 1.0)) * jitter).round().max(1.0) as f32;
                }
            }
            map.insert((i, j), Volume::new(dims, config.voxel_size_mm, data)?);
        }
        subjects.push(map);
    }
    let densities = TractDensitySet::new(dims, config.voxel_size_mm, subjects)?;
    let missing = absent.into_iter().map(|(k, v)| (k, v.len())).collect();
    Ok(AtlasPair {
        nodes,
        densities,
        missing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub id: String,
    pub label: u8,
    pub scan: MultiModalScan,
}

/// Four-modality scans: per-modality baseline plus Gaussian noise inside the
/// brain, shifted by the class amplitude inside the union of the subject's
/// affected edge masks and their endpoint regions.
pub fn generate_phantom_cohort(
    config: &SynthConfig,
    nodes: &NodeAtlas,
    edges: &EdgeAtlas,
) -> Result<(Vec<Phantom>, SynthTruth)> {
    config.validate()?;
    if nodes.dims() != edges.dims() {
        return Err(Error::Dimension(format!(
            "node atlas grid {:?} differs from edge atlas grid {:?}",
            nodes.dims(),
            edges.dims()
        )));
    }
    let available = edges.edges();
    if available.len() < config.wild_type.affected_edges {
        return Err(Error::Config(format!(
            "edge atlas has {} edges, fewer than the {} affected wild-type edges",
            available.len(),
            config.wild_type.affected_edges
        )));
    }
    let dims = nodes.dims();
    let vox = nodes.labels().voxel_size_mm();
    let brain: Vec<usize> = nodes.labels().data().iter().enumerate().filter(|(_, &l)| l > 0.0).map(|(i, _)| i).collect();
    let node_masks = nodes.node_masks();
    let labels = shuffled_labels(config, &mut seeded(derive_seed(config.seed, "labels")));

    let mut phantoms = Vec::with_capacity(labels.len());
    let mut subjects = Vec::with_capacity(labels.len());
    for (k, &label) in labels.iter().enumerate() {
        let mut rng = seeded(derive_seed(config.seed, &format!("phantom-{k}")));
        let spec = config.class(label);
        let affected = sample_edges(&available, spec.affected_edges, &mut rng);
        let mut roi = Mask::empty(dims);
        for &(i, j) in &affected {
            roi = roi.union(edges.edge_mask(i, j)?)?;
            roi = roi.union(&node_masks[i])?.union(&node_masks[j])?;
        }
        let mut shifted = vec![false; dims.iter().product()];
        for &v in roi.indices() {
            shifted[v] = true;
        }
        let mut vols = Vec::with_capacity(MODALITY_COUNT);
        for base in MODALITY_BASELINE {
            let mut data = vec![0f32; shifted.len()];
            for &v in &brain {
                let noise: f64 = rng.sample(StandardNormal);
                let shift = if shifted[v] { spec.amplitude } else { 0.0 };
                data[v] = (base + config.noise * noise + shift) as f32;
            }
            vols.push(Volume::new(dims, vox, data)?);
        }
        let id = format!("sub-{k:03}");
        phantoms.push(Phantom {
            id: id.clone(),
            label,
            scan: MultiModalScan::new(vols)?,
        });
        subjects.push(SubjectTruth {
            id,
            label,
            affected_edges: affected,
            amplitude: spec.amplitude,
        });
    }
    Ok((
        phantoms,
        SynthTruth {
            level: "volume".into(),
            seed: config.seed,
            subjects,
        },
    ))
}

/// File names used by [`write_volume_level`] and [`write_graph_level`].
pub mod layout {
    pub const NODE_ATLAS: &str = "atlas/labels.f32";
    pub const DENSITIES: &str = "atlas/densities";
    pub const COHORT: &str = "cohort";
    pub const GRAPHS: &str = "graphs.json";
    pub const TRUTH: &str = "truth.json";
}

/// Writes the atlas pair, the phantom cohort and the truth file under `dir`.
pub fn write_volume_level(dir: &Path, pair: &AtlasPair, phantoms: &[Phantom], truth: &SynthTruth) -> Result<()> {
    let atlas_path = dir.join(layout::NODE_ATLAS);
    if let Some(parent) = atlas_path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_volume(pair.nodes.labels(), &atlas_path)?;
    pair.densities.save_dir(&dir.join(layout::DENSITIES))?;
    let cohort = dir.join(layout::COHORT);
    let manifest = CohortManifest {
        subjects: phantoms
            .iter()
            .map(|p| CohortEntry {
                id: p.id.clone(),
                label: p.label,
            })
            .collect(),
    };
    manifest.save(&cohort)?;
    for p in phantoms {
        save_scan(&cohort, &p.id, &p.scan)?;
    }
    truth.save(&dir.join(layout::TRUTH))
}

pub fn write_graph_level(dir: &Path, graphs: &[BrainGraph], truth: &SynthTruth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    GraphDataset::from_graphs(graphs)?.save(&dir.join(layout::GRAPHS))?;
    truth.save(&dir.join(layout::TRUTH))
}
