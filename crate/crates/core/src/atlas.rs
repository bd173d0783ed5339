//! Node atlas validation and edge-atlas construction from tract densities.
//!
//! Nodes are addressed by 0-based index `label - 1`; an edge is the pair
//! `(i, j)` of node indices with `i < j`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::{header_path, load_volume, save_volume, Mask, Volume};

pub const DEFAULT_QUORUM: usize = 9;
pub const DEFAULT_TOP_FRACTION: f64 = 0.05;
/// Edge count of the published 90-region template at quorum 9 of 10.
pub const AAL_EDGE_COUNT: usize = 2309;
pub const AAL_REGIONS: usize = 90;

pub type EdgeKey = (usize, usize);

pub fn edge_key(i: usize, j: usize) -> EdgeKey {
    (i.min(j), i.max(j))
}

/// Integer label volume with regions `1..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAtlas {
    labels: Volume,
    voxel_counts: Vec<usize>,
}

impl NodeAtlas {
    /// Validates a label volume. Without `expected_regions`, R is the largest label.
    pub fn from_volume(labels: Volume, expected_regions: Option<usize>) -> Result<Self> {
        let mut max_label = 0usize;
        for (idx, &v) in labels.data().iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Data(format!(
                    "label {v} at flat index {idx} is not a non-negative integer"
                )));
            }
            max_label = max_label.max(v as usize);
        }
        let r = expected_regions.unwrap_or(max_label);
        if max_label > r {
            return Err(Error::Data(format!("label {max_label} outside 0..={r}")));
        }
        if r == 0 {
            return Err(Error::Data("atlas has no labelled regions".into()));
        }
        let mut voxel_counts = vec![0usize; r];
        for &v in labels.data() {
            if v > 0.0 {
                voxel_counts[v as usize - 1] += 1;
            }
        }
        if let Some(empty) = voxel_counts.iter().position(|&c| c == 0) {
            return Err(Error::Data(format!("region {} has no voxels", empty + 1)));
        }
        Ok(Self {
            labels,
            voxel_counts,
        })
    }

    pub fn region_count(&self) -> usize {
        self.voxel_counts.len()
    }

    pub fn voxel_counts(&self) -> &[usize] {
        &self.voxel_counts
    }

    pub fn labels(&self) -> &Volume {
        &self.labels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.labels.dims()
    }

    /// Mask of node `node` (label `node + 1`).
    pub fn node_mask(&self, node: usize) -> Mask {
        let label = (node + 1) as f32;
        Mask::from_volume(&self.labels, |v| v == label)
    }

    pub fn node_masks(&self) -> Vec<Mask> {
        let mut lists = vec![Vec::new(); self.region_count()];
        for (idx, &v) in self.labels.data().iter().enumerate() {
            if v > 0.0 {
                lists[v as usize - 1].push(idx);
            }
        }
        lists
            .into_iter()
            .map(|l| Mask::from_indices(self.dims(), l).expect("indices from the grid"))
            .collect()
    }
}

pub fn load_node_atlas(path: &Path, expected_regions: Option<usize>) -> Result<NodeAtlas> {
    let v = load_volume(path)?;
    NodeAtlas::from_volume(v, expected_regions).map_err(|e| match e {
        Error::Data(reason) => Error::format(path, reason),
        other => other,
    })
}

/// Per-subject pairwise tract-density volumes on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TractDensitySet {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    subjects: Vec<BTreeMap<EdgeKey, Volume>>,
}

impl TractDensitySet {
    pub fn new(
        dims: [usize; 3],
        voxel_size_mm: [f64; 3],
        subjects: Vec<BTreeMap<EdgeKey, Volume>>,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Data("tract density set has no subjects".into()));
        }
        for (s, map) in subjects.iter().enumerate() {
            for (&(i, j), v) in map {
                if i >= j {
                    return Err(Error::Data(format!(
                        "subject {s}: pair ({i},{j}) must satisfy i < j"
                    )));
                }
                if v.dims() != dims {
                    return Err(Error::Dimension(format!(
                        "subject {s} pair ({i},{j}) grid {:?} differs from {dims:?}",
                        v.dims()
                    )));
                }
                if v.data().iter().any(|&d| d < 0.0) {
                    return Err(Error::Data(format!(
                        "subject {s} pair ({i},{j}) has negative densities"
                    )));
                }
            }
        }
        Ok(Self {
            dims,
            voxel_size_mm,
            subjects,
        })
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn subjects(&self) -> &[BTreeMap<EdgeKey, Volume>] {
        &self.subjects
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    /// Every pair present in at least one subject.
    pub fn pairs(&self) -> Vec<EdgeKey> {
        let mut all: Vec<EdgeKey> = self.subjects.iter().flat_map(|m| m.keys().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Number of subjects in which the pair has at least one nonzero voxel.
    pub fn support(&self, pair: EdgeKey) -> usize {
        self.subjects
            .iter()
            .filter(|m| {
                m.get(&pair)
                    .is_some_and(|v| v.data().iter().any(|&d| d > 0.0))
            })
            .count()
    }

    /// Writes `dir/<subject>/tract_<i>_<j>.f32` (plus sidecars).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        for (s, map) in self.subjects.iter().enumerate() {
            let sub = dir.join(format!("sub-{s:03}"));
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (&(i, j), v) in map {
                save_volume(v, &sub.join(format!("tract_{i}_{j}.f32")))?;
            }
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut subject_dirs: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subject_dirs.sort();
        let mut subjects = Vec::new();
        let mut grid: Option<([usize; 3], [f64; 3])> = None;
        for sub in &subject_dirs {
            let mut map = BTreeMap::new();
            let mut files: Vec<_> = fs::read_dir(sub)
                .map_err(|e| Error::io(sub, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .collect();
            files.sort();
            for f in files {
                let Some(name) = f.file_name().and_then(|n| n.to_str()) else {
                    continue;
                };
                let Some(pair) = name
                    .strip_prefix("tract_")
                    .and_then(|n| n.strip_suffix(".f32"))
                else {
                    continue;
                };
                let key = parse_pair(pair).ok_or_else(|| {
                    Error::format(&f, format!("cannot parse node pair from {name:?}"))
                })?;
                let v = load_volume(&f)?;
                grid.get_or_insert((v.dims(), v.voxel_size_mm()));
                map.insert(key, v);
            }
            subjects.push(map);
        }
        let (dims, vox) = grid.ok_or_else(|| Error::format(dir, "no tract density volumes found"))?;
        Self::new(dims, vox, subjects).map_err(|e| Error::format(dir, e.to_string()))
    }
}

fn parse_pair(s: &str) -> Option<EdgeKey> {
    let (a, b) = s.split_once('_')?;
    let (i, j) = (a.parse().ok()?, b.parse().ok()?);
    (i < j).then_some((i, j))
}

/// Binary voxel masks of the retained edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAtlas {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    edges: BTreeMap<EdgeKey, Mask>,
}

impl EdgeAtlas {
    pub fn new(
        dims: [usize; 3],
        voxel_size_mm: [f64; 3],
        edges: BTreeMap<EdgeKey, Mask>,
    ) -> Result<Self> {
        for (&(i, j), m) in &edges {
            if i >= j {
                return Err(Error::Data(format!("edge ({i},{j}) must satisfy i < j")));
            }
            if m.is_empty() {
                return Err(Error::Data(format!("edge ({i},{j}) has an empty mask")));
            }
            if m.dims() != dims {
                return Err(Error::Dimension(format!(
                    "edge ({i},{j}) mask grid {:?} differs from {dims:?}",
                    m.dims()
                )));
            }
        }
        Ok(Self {
            dims,
            voxel_size_mm,
            edges,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges in ascending `(i, j)` order.
    pub fn edges(&self) -> Vec<EdgeKey> {
        self.edges.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeKey, &Mask)> {
        self.edges.iter().map(|(k, m)| (*k, m))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains_key(&edge_key(i, j))
    }

    /// Mask for the undirected edge between `i` and `j`.
    pub fn edge_mask(&self, i: usize, j: usize) -> Result<&Mask> {
        self.edges
            .get(&edge_key(i, j))
            .ok_or_else(|| Error::Lookup(format!("edge ({i},{j}) is not in the atlas")))
    }
}

/// Voxels kept by the top-fraction rule on one mean-density map.
///
/// Among strictly positive voxels, the threshold is the value of the
/// `ceil(fraction * count)`-th largest; every voxel at or above it is kept.
pub fn retained_voxels(density: &[f64], top_fraction: f64) -> Vec<usize> {
    let mut positive: Vec<f64> = density.iter().copied().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        return Vec::new();
    }
    let k = ((top_fraction * positive.len() as f64 - 1e-9).ceil() as usize).clamp(1, positive.len());
    let (_, kth, _) = positive.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    let threshold = *kth;
    density
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0 && d >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Keeps pairs present in at least `quorum` subjects and binarises the top
/// `top_fraction` of each pair's mean tract density.
pub fn build_edge_atlas(
    densities: &TractDensitySet,
    quorum: usize,
    top_fraction: f64,
) -> Result<EdgeAtlas> {
    let s = densities.subject_count();
    if quorum == 0 || quorum > s {
        return Err(Error::Config(format!("quorum must be in 1..={s}, got {quorum}")));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "top fraction must be in (0, 1], got {top_fraction}"
        )));
    }
    let n: usize = densities.dims.iter().product();
    let mut edges = BTreeMap::new();
    let mut column = Vec::with_capacity(s);
    for pair in densities.pairs() {
        if densities.support(pair) < quorum {
            continue;
        }
        let vols: Vec<&Volume> = densities
            .subjects
            .iter()
            .filter_map(|m| m.get(&pair))
            .collect();
        // Sum each voxel's values in sorted order so the mean does not depend
        // on subject order.
        let mut mean = vec![0.0f64; n];
        for (idx, slot) in mean.iter_mut().enumerate() {
            column.clear();
            column.extend(vols.iter().map(|v| v.data()[idx] as f64).filter(|&d| d > 0.0));
            if column.is_empty() {
                continue;
            }
            column.sort_unstable_by(f64::total_cmp);
            *slot = column.iter().sum::<f64>() / s as f64;
        }
        let kept = retained_voxels(&mean, top_fraction);
        if kept.is_empty() {
            return Err(Error::Internal(format!(
                "edge ({},{}) met the quorum but has an all-zero mean density",
                pair.0, pair.1
            )));
        }
        edges.insert(pair, Mask::from_indices(densities.dims, kept)?);
    }
    if edges.is_empty() {
        return Err(Error::EmptyAtlas);
    }
    EdgeAtlas::new(densities.dims, densities.voxel_size_mm, edges)
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeIndexEntry {
    pair: [usize; 2],
    voxel_count: usize,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeAtlasIndex {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    payload: String,
    edges: Vec<EdgeIndexEntry>,
}

fn payload_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".bin");
    s.into()
}

/// Writes the JSON index at `path` and the `u32` little-endian voxel payload at `path.bin`.
pub fn save_edge_atlas(atlas: &EdgeAtlas, path: &Path) -> Result<()> {
    let bin = payload_path(path);
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(atlas.len());
    for (&(i, j), mask) in &atlas.edges {
        entries.push(EdgeIndexEntry {
            pair: [i, j],
            voxel_count: mask.len(),
            offset: bytes.len() as u64,
        });
        for &idx in mask.indices() {
            let idx = u32::try_from(idx)
                .map_err(|_| Error::Data(format!("voxel index {idx} exceeds u32")))?;
            bytes.extend_from_slice(&idx.to_le_bytes());
        }
    }
    let index = EdgeAtlasIndex {
        dims: atlas.dims,
        voxel_size_mm: atlas.voxel_size_mm,
        payload: bin
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
        edges: entries,
    };
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
}

pub fn load_edge_atlas(path: &Path) -> Result<EdgeAtlas> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let index: EdgeAtlasIndex = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let bin = path.with_file_name(&index.payload);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut edges = BTreeMap::new();
    for e in &index.edges {
        let start = e.offset as usize;
        let end = start + 4 * e.voxel_count;
        if end > bytes.len() {
            return Err(Error::format(
                &bin,
                format!("edge {:?} payload runs past end of file", e.pair),
            ));
        }
        let idx: Vec<usize> = bytes[start..end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        if idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(&bin, format!("edge {:?} indices not sorted", e.pair)));
        }
        let key = (e.pair[0], e.pair[1]);
        if edges.insert(key, Mask::from_indices(index.dims, idx)?).is_some() {
            return Err(Error::format(path, format!("duplicate edge {:?}", e.pair)));
        }
    }
    EdgeAtlas::new(index.dims, index.voxel_size_mm, edges).map_err(|e| Error::format(path, e.to_string()))
}

/// True if `path` looks like a volume with a sidecar header.
pub fn is_volume_file(path: &Path) -> bool {
    path.is_file() && header_path(path).is_file()
}
