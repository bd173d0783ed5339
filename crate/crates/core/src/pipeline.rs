//! File-based pipeline stages shared by the command-line tool and the
//! end-to-end tests: edge atlas, voxel vectors, autoencoders, graphs,
//! classifier training, evaluation and explanation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::archive::{config_hash, Archive};
use crate::atlas::{build_edge_atlas, load_edge_atlas, load_node_atlas, save_edge_atlas, EdgeAtlas, EdgeKey, TractDensitySet, DEFAULT_QUORUM, DEFAULT_TOP_FRACTION};
use crate::autoencoder::{ae_train_rows, AeConfig, AeModel};
use crate::cohort::{load_scan, CohortManifest};
use crate::error::{Error, Result};
use crate::explain::{explain_edges, threshold_subnetwork, tract_density_map, write_scores_csv, ExplainConfig, PRIMARY_THRESHOLD, STRICT_THRESHOLD};
use crate::gnn::{evaluate, split_cohort, train_gnn, BrainGraph, GnnArchitecture, GnnModel, GraphDataset, Metrics, TrainConfig, TrainLog};
use crate::numerics::{derive_seed, Tensor};
use crate::synth::{generate_atlas_pair, generate_phantom_cohort, layout, write_volume_level, SynthConfig};
use crate::volumes::{extract_voxel_vector, save_volume, Mask, VECTOR_LEN};

pub const SPLIT_FILE: &str = "split.json";
pub const VECTOR_DIR: &str = "vectors";
pub const DEFAULT_THRESHOLDS: [f64; 2] = [PRIMARY_THRESHOLD, STRICT_THRESHOLD];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnSettings {
    pub architecture: GnnArchitecture,
    pub train: TrainConfig,
}

/// Every tunable of the pipeline. Module seeds are derived from `seed` by
/// [`PipelineConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub quorum: usize,
    pub top_fraction: f64,
    pub autoencoder: AeConfig,
    pub gnn: GnnSettings,
    pub explain: ExplainConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            quorum: DEFAULT_QUORUM,
            top_fraction: DEFAULT_TOP_FRACTION,
            autoencoder: AeConfig::default(),
            gnn: GnnSettings::default(),
            explain: ExplainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Copy with each module seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.autoencoder.seed = derive_seed(self.seed, "autoencoder");
        c.gnn.train.seed = derive_seed(self.seed, "gnn");
        c.explain.seed = derive_seed(self.seed, "explain");
        c.synth.seed = derive_seed(self.seed, "synth");
        c
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_value<T: Serialize + ?Sized>(value: &T) -> Result<Value> {
    serde_json::to_value(value).map_err(|e| Error::Internal(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Subject ids of each partition, recorded once and checked by every later stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn from_labels(ids: &[String], labels: &[u8], seed: u64) -> Result<Self> {
        let s = split_cohort(labels, seed)?;
        let take = |ix: &[usize]| ix.iter().map(|&k| ids[k].clone()).collect();
        Ok(Self {
            seed,
            train: take(&s.train),
            val: take(&s.val),
            test: take(&s.test),
        })
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads a manifest; its absence means no split was recorded.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Leakage(format!(
                "no split manifest at {}; run feature extraction first",
                path.display()
            )));
        }
        read_json(path)
    }
}

/// Per-edge voxel statistics of a freshly built atlas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtlasReport {
    pub edges: usize,
    pub min_voxels: usize,
    pub max_voxels: usize,
    pub mean_voxels: f64,
}

impl AtlasReport {
    pub fn of(atlas: &EdgeAtlas) -> Self {
        let counts: Vec<usize> = atlas.iter().map(|(_, m)| m.len()).collect();
        Self {
            edges: counts.len(),
            min_voxels: counts.iter().copied().min().unwrap_or(0),
            max_voxels: counts.iter().copied().max().unwrap_or(0),
            mean_voxels: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
        }
    }
}

pub fn atlas_build(densities: &Path, quorum: usize, top_fraction: f64, out: &Path) -> Result<AtlasReport> {
    let set = TractDensitySet::load_dir(densities)?;
    let atlas = build_edge_atlas(&set, quorum, top_fraction)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_edge_atlas(&atlas, out)?;
    Ok(AtlasReport::of(&atlas))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractReport {
    pub subjects: usize,
    pub nodes: usize,
    pub edges: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

fn vector_path(features: &Path, id: &str) -> PathBuf {
    features.join(VECTOR_DIR).join(format!("{id}.vec"))
}

/// Normalises each scan inside the brain, extracts one voxel vector per node
/// and per atlas edge, and records the stratified split.
pub fn features_extract(
    cohort: &Path,
    node_atlas: &Path,
    edge_atlas: &Path,
    out: &Path,
    split_seed: u64,
) -> Result<ExtractReport> {
    let manifest = CohortManifest::load(cohort)?;
    let nodes = load_node_atlas(node_atlas, None)?;
    let edges = load_edge_atlas(edge_atlas)?;
    if nodes.dims() != edges.dims() {
        return Err(Error::format(
            edge_atlas,
            format!("grid {:?} differs from node atlas grid {:?}", edges.dims(), nodes.dims()),
        ));
    }
    let node_masks = nodes.node_masks();
    let mut brain = Mask::empty(nodes.dims());
    for m in &node_masks {
        brain = brain.union(m)?;
    }
    let edge_list = edges.edges();
    if let Some(&(_, j)) = edge_list.iter().find(|&&(_, j)| j >= node_masks.len()) {
        return Err(Error::format(edge_atlas, format!("edge references node {j} beyond the node atlas")));
    }
    create_dir(&out.join(VECTOR_DIR))?;
    let pairs: Vec<[usize; 2]> = edge_list.iter().map(|&(i, j)| [i, j]).collect();
    for entry in &manifest.subjects {
        let scan = load_scan(cohort, &entry.id)?.normalized(&brain)?;
        let mut node_rows = Vec::with_capacity(node_masks.len() * VECTOR_LEN);
        for m in &node_masks {
            node_rows.extend(extract_voxel_vector(&scan, m)?.into_values());
        }
        let mut edge_rows = Vec::with_capacity(edge_list.len() * VECTOR_LEN);
        for &(i, j) in &edge_list {
            edge_rows.extend(extract_voxel_vector(&scan, edges.edge_mask(i, j)?)?.into_values());
        }
        let mut header = Map::new();
        header.insert("id".into(), Value::from(entry.id.clone()));
        header.insert("label".into(), Value::from(entry.label));
        header.insert("edges".into(), json_value(&pairs)?);
        let mut a = Archive::new(header);
        a.tensors.insert("nodes".into(), Tensor::matrix(node_masks.len(), VECTOR_LEN, node_rows)?);
        a.tensors.insert("edges".into(), Tensor::matrix(edge_list.len(), VECTOR_LEN, edge_rows)?);
        a.save(&vector_path(out, &entry.id))?;
    }
    let ids: Vec<String> = manifest.subjects.iter().map(|s| s.id.clone()).collect();
    let split = SplitManifest::from_labels(&ids, &manifest.labels(), split_seed)?;
    split.save(&out.join(SPLIT_FILE))?;
    write_json(&out.join(crate::cohort::MANIFEST_FILE), &manifest)?;
    Ok(ExtractReport {
        subjects: ids.len(),
        nodes: node_masks.len(),
        edges: edge_list.len(),
        train: split.train.len(),
        val: split.val.len(),
        test: split.test.len(),
    })
}

/// Which ROI family an autoencoder compresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiKind {
    Node,
    Edge,
}

impl RoiKind {
    fn section(self) -> &'static str {
        match self {
            RoiKind::Node => "nodes",
            RoiKind::Edge => "edges",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AeReport {
    pub kind: RoiKind,
    pub subjects: usize,
    pub vectors: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Trains an autoencoder on the vectors of training-split subjects only.
pub fn ae_train_stage(features: &Path, kind: RoiKind, config: &AeConfig, out: &Path) -> Result<AeReport> {
    let split = SplitManifest::load(&features.join(SPLIT_FILE))?;
    let mut data = Vec::new();
    let mut width = 0;
    for id in &split.train {
        let a = Archive::load(&vector_path(features, id))?;
        let t = a.tensor(kind.section())?;
        width = t.cols();
        data.extend_from_slice(t.data());
    }
    if width == 0 {
        return Err(Error::Data("training split is empty".into()));
    }
    let rows: Vec<&[f64]> = data.chunks(width).collect();
    let fit = ae_train_rows(&rows, width, config)?;
    let mut archive = fit.model.to_archive()?;
    archive.header.insert("roi".into(), Value::from(kind.section()));
    archive.header.insert("split_hash".into(), Value::from(split.hash()));
    archive.header.insert("config_hash".into(), Value::from(config_hash(config)));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    archive.save(out)?;
    Ok(AeReport {
        kind,
        subjects: split.train.len(),
        vectors: rows.len(),
        initial_loss: fit.initial_loss,
        final_loss: fit.epoch_losses.last().copied().unwrap_or(fit.initial_loss),
    })
}

fn load_ae(path: &Path, kind: RoiKind, split: &SplitManifest) -> Result<AeModel> {
    let a = Archive::load(path)?;
    let roi: String = a.field("roi")?;
    if roi != kind.section() {
        return Err(Error::Mismatch(format!("{} holds a {roi} autoencoder", path.display())));
    }
    let trained_on: String = a.field("split_hash")?;
    if trained_on != split.hash() {
        return Err(Error::Leakage(format!(
            "{} was trained on a different split than the recorded one",
            path.display()
        )));
    }
    AeModel::from_archive(&a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SubjectRef {
    id: String,
    label: u8,
}

/// Encodes every subject's node and edge vectors to latent features.
pub fn ae_encode_stage(features: &Path, node_model: &Path, edge_model: &Path, out: &Path) -> Result<usize> {
    let split = SplitManifest::load(&features.join(SPLIT_FILE))?;
    let node_ae = load_ae(node_model, RoiKind::Node, &split)?;
    let edge_ae = load_ae(edge_model, RoiKind::Edge, &split)?;
    let manifest: CohortManifest = read_json(&features.join(crate::cohort::MANIFEST_FILE))?;
    let mut latents = Archive::new(Map::new());
    let mut edges: Option<Vec<[usize; 2]>> = None;
    let mut subjects = Vec::new();
    for entry in &manifest.subjects {
        let a = Archive::load(&vector_path(features, &entry.id))?;
        let pairs: Vec<[usize; 2]> = a.field("edges")?;
        match &edges {
            None => edges = Some(pairs),
            Some(e) if *e != pairs => {
                return Err(Error::Data(format!("subject {} uses a different edge list", entry.id)));
            }
            Some(_) => {}
        }
        for (kind, model) in [(RoiKind::Node, &node_ae), (RoiKind::Edge, &edge_ae)] {
            let t = a.tensor(kind.section())?;
            let mut z = Vec::with_capacity(t.rows() * model.latent_dim());
            for r in 0..t.rows() {
                z.extend(model.encode(t.row(r))?);
            }
            latents.tensors.insert(
                format!("{}.{}", entry.id, kind.section()),
                Tensor::matrix(t.rows(), model.latent_dim(), z)?,
            );
        }
        subjects.push(SubjectRef {
            id: entry.id.clone(),
            label: entry.label,
        });
    }
    latents.header.insert("split_hash".into(), Value::from(split.hash()));
    latents.header.insert("subjects".into(), json_value(&subjects)?);
    latents.header.insert("edges".into(), json_value(&edges.unwrap_or_default())?);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    latents.save(out)?;
    Ok(subjects.len())
}

/// Assembles latent features into the graph dataset and re-emits the split
/// manifest next to it.
pub fn graph_build_stage(latents: &Path, features: &Path, out: &Path) -> Result<usize> {
    let split = SplitManifest::load(&features.join(SPLIT_FILE))?;
    let a = Archive::load(latents)?;
    let hash: String = a.field("split_hash")?;
    if hash != split.hash() {
        return Err(Error::Leakage("latents were encoded under a different split".into()));
    }
    let subjects: Vec<SubjectRef> = a.field("subjects")?;
    let pairs: Vec<[usize; 2]> = a.field("edges")?;
    let edges: Vec<EdgeKey> = pairs.iter().map(|p| (p[0], p[1])).collect();
    let mut graphs = Vec::with_capacity(subjects.len());
    for s in &subjects {
        let x = a.tensor(&format!("{}.nodes", s.id))?;
        let e = a.tensor(&format!("{}.edges", s.id))?;
        graphs.push(BrainGraph::new(s.id.clone(), s.label, x.clone(), edges.clone(), e.cols(), e.data().to_vec())?);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    GraphDataset::from_graphs(&graphs)?.save(out)?;
    split.save(&split_beside(out))?;
    Ok(graphs.len())
}

/// Default split location for a dataset file: `split.json` in the same directory.
pub fn split_beside(dataset: &Path) -> PathBuf {
    dataset.parent().unwrap_or(Path::new("")).join(SPLIT_FILE)
}

struct Partitioned {
    train: Vec<BrainGraph>,
    val: Vec<BrainGraph>,
    test: Vec<BrainGraph>,
}

fn partition(dataset: &Path, split: &SplitManifest) -> Result<Partitioned> {
    let graphs = GraphDataset::load(dataset)?.to_graphs()?;
    let find = |ids: &[String]| -> Result<Vec<BrainGraph>> {
        ids.iter()
            .map(|id| {
                graphs
                    .iter()
                    .find(|g| &g.id == id)
                    .cloned()
                    .ok_or_else(|| Error::format(dataset, format!("split names subject {id}, absent from the dataset")))
            })
            .collect()
    };
    let p = Partitioned {
        train: find(&split.train)?,
        val: find(&split.val)?,
        test: find(&split.test)?,
    };
    if p.train.len() + p.val.len() + p.test.len() != graphs.len() {
        return Err(Error::format(dataset, "dataset holds subjects outside the split"));
    }
    Ok(p)
}

pub fn settings_hash(settings: &GnnSettings) -> String {
    config_hash(settings)
}

pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_os_string();
    s.push(".log.json");
    s.into()
}

/// Trains on the train partition with early stopping on the validation partition.
pub fn gnn_train_stage(dataset: &Path, split_path: &Path, settings: &GnnSettings, out: &Path) -> Result<TrainLog> {
    let split = SplitManifest::load(split_path)?;
    let parts = partition(dataset, &split)?;
    let (model, log) = train_gnn(&parts.train, &parts.val, &settings.architecture, &settings.train)?;
    let mut header = Map::new();
    header.insert("config_hash".into(), Value::from(settings_hash(settings)));
    header.insert("split_hash".into(), Value::from(split.hash()));
    header.insert("settings".into(), json_value(settings)?);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.to_archive(header)?.save(out)?;
    write_json(&log_path(out), &log)?;
    Ok(log)
}

/// Loads a classifier checkpoint, checking its recorded hashes when expectations are given.
pub fn load_checkpoint(path: &Path, settings: Option<&GnnSettings>, split: Option<&SplitManifest>) -> Result<GnnModel> {
    let a = Archive::load(path)?;
    if let Some(s) = settings {
        let stored: String = a.field("config_hash")?;
        if stored != settings_hash(s) {
            return Err(Error::Mismatch(format!(
                "{} was trained with a different configuration (hash {stored})",
                path.display()
            )));
        }
    }
    if let Some(s) = split {
        let stored: String = a.field("split_hash")?;
        if stored != s.hash() {
            return Err(Error::Mismatch(format!("{} was trained on a different split", path.display())));
        }
    }
    GnnModel::from_archive(&a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub validation: Metrics,
    pub test: Metrics,
}

impl EvalReport {
    /// Accuracy, sensitivity and specificity per partition as a text table.
    pub fn table(&self) -> String {
        let cell = |v: f64| if v.is_nan() { "n/a".to_string() } else { format!("{v:.1}") };
        let mut s = format!("{:<12}{:>10}{:>13}{:>13}\n", "", "Accuracy", "Sensitivity", "Specificity");
        for (name, m) in [("Validation", &self.validation), ("Test", &self.test)] {
            let _ = writeln!(
                s,
                "{name:<12}{:>10}{:>13}{:>13}",
                cell(m.accuracy),
                cell(m.sensitivity),
                cell(m.specificity)
            );
        }
        s
    }
}

pub fn gnn_eval_stage(
    checkpoint: &Path,
    dataset: &Path,
    split_path: &Path,
    settings: Option<&GnnSettings>,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let split = SplitManifest::load(split_path)?;
    let model = load_checkpoint(checkpoint, settings, Some(&split))?;
    let parts = partition(dataset, &split)?;
    let report = EvalReport {
        validation: evaluate(&model, &parts.val)?,
        test: evaluate(&model, &parts.test)?,
    };
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplainReport {
    pub subject: String,
    pub target: u8,
    /// `(threshold, retained edge count)` per density map written.
    pub retained: Vec<(f64, usize)>,
}

pub fn density_file(threshold: f64) -> String {
    format!("density_p{:02}.f32", (threshold * 100.0).round() as u32)
}

/// Scores one subject's edges, writes `edge_scores.csv` and one density
/// volume per threshold.
pub fn explain_stage(
    checkpoint: &Path,
    dataset: &Path,
    edge_atlas: &Path,
    subject: &str,
    config: &ExplainConfig,
    thresholds: &[f64],
    out: &Path,
) -> Result<ExplainReport> {
    let model = load_checkpoint(checkpoint, None, None)?;
    let graphs = GraphDataset::load(dataset)?.to_graphs()?;
    let graph = graphs
        .iter()
        .find(|g| g.id == subject)
        .ok_or_else(|| Error::Lookup(format!("subject {subject} is not in {}", dataset.display())))?;
    let atlas = load_edge_atlas(edge_atlas)?;
    let result = explain_edges(&model, graph, config)?;
    create_dir(out)?;
    write_scores_csv(&result, &out.join("edge_scores.csv"))?;
    let mut retained = Vec::new();
    for &t in thresholds {
        let sub = threshold_subnetwork(&result, t)?;
        let volume = tract_density_map(&sub, &atlas)?;
        save_volume(&volume, &out.join(density_file(t)))?;
        retained.push((t, sub.edges.len()));
    }
    let report = ExplainReport {
        subject: subject.to_string(),
        target: result.target,
        retained,
    };
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}

/// Paths produced by [`run_volume_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelinePaths {
    pub root: PathBuf,
}

impl PipelinePaths {
    pub fn synth(&self) -> PathBuf {
        self.root.join("synth")
    }
    pub fn edge_atlas(&self) -> PathBuf {
        self.root.join("edge_atlas.json")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn node_model(&self) -> PathBuf {
        self.root.join("models/node_ae.bin")
    }
    pub fn edge_model(&self) -> PathBuf {
        self.root.join("models/edge_ae.bin")
    }
    pub fn latents(&self) -> PathBuf {
        self.root.join("latents.bin")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("graphs/dataset.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("models/gnn.bin")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
}

/// Generates a volume-level phantom cohort and runs every stage on it,
/// leaving all intermediate files under `root`.
pub fn run_volume_pipeline(config: &PipelineConfig, root: &Path) -> Result<EvalReport> {
    let cfg = config.resolved();
    let paths = PipelinePaths { root: root.to_path_buf() };
    create_dir(root)?;
    cfg.save(&root.join("config.json"))?;

    let pair = generate_atlas_pair(&cfg.synth)?;
    let edges = build_edge_atlas(&pair.densities, cfg.quorum, cfg.top_fraction)?;
    let (phantoms, truth) = generate_phantom_cohort(&cfg.synth, &pair.nodes, &edges)?;
    write_volume_level(&paths.synth(), &pair, &phantoms, &truth)?;

    atlas_build(&paths.synth().join(layout::DENSITIES), cfg.quorum, cfg.top_fraction, &paths.edge_atlas())?;
    features_extract(
        &paths.synth().join(layout::COHORT),
        &paths.synth().join(layout::NODE_ATLAS),
        &paths.edge_atlas(),
        &paths.features(),
        cfg.split_seed(),
    )?;
    ae_train_stage(&paths.features(), RoiKind::Node, &cfg.autoencoder, &paths.node_model())?;
    ae_train_stage(&paths.features(), RoiKind::Edge, &cfg.autoencoder, &paths.edge_model())?;
    ae_encode_stage(&paths.features(), &paths.node_model(), &paths.edge_model(), &paths.latents())?;
    graph_build_stage(&paths.latents(), &paths.features(), &paths.dataset())?;
    let split = split_beside(&paths.dataset());
    gnn_train_stage(&paths.dataset(), &split, &cfg.gnn, &paths.checkpoint())?;
    gnn_eval_stage(&paths.checkpoint(), &paths.dataset(), &split, Some(&cfg.gnn), Some(&paths.metrics()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_seeds_follow_the_global_seed() {
        let a = PipelineConfig { seed: 3, ..Default::default() }.resolved();
        let b = PipelineConfig { seed: 3, ..Default::default() }.resolved();
        let c = PipelineConfig { seed: 4, ..Default::default() }.resolved();
        assert_eq!(a, b);
        assert_ne!(a.autoencoder.seed, c.autoencoder.seed);
        assert_ne!(a.gnn.train.seed, a.autoencoder.seed);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 5, "gnn": {"train": {"max_epochs": 7}}}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.gnn.train.max_epochs, 7);
        assert_eq!(c.gnn.train.dropout, 0.5);
        assert_eq!(c.quorum, 9);
    }

    #[test]
    fn missing_split_is_leakage() {
        let dir = tempfile::tempdir().unwrap();
        let err = ae_train_stage(dir.path(), RoiKind::Node, &AeConfig::default(), &dir.path().join("m.bin")).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }

    #[test]
    fn table_has_the_three_metric_columns() {
        let m = Metrics::from_counts(3, 1, 4, 0);
        let t = EvalReport { validation: m, test: m }.table();
        for col in ["Accuracy", "Sensitivity", "Specificity", "Validation", "Test"] {
            assert!(t.contains(col));
        }
    }

    #[test]
    fn density_file_names() {
        assert_eq!(density_file(0.5), "density_p50.f32");
        assert_eq!(density_file(0.9), "density_p90.f32");
    }
}
