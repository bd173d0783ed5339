//! Volumetric grids, ROI masks, and the fixed-length voxel vectors that feed
//! the autoencoders.
//!
//! A volume on disk is a raw little-endian `f32` payload plus a JSON sidecar
//! header stored next to it with `.json` appended to the payload file name:
//!
//! ```text
//! t1.f32        nx*ny*nz little-endian f32 values, x fastest
//! t1.f32.json   {"dims":[nx,ny,nz],"voxel_size_mm":[sx,sy,sz],"dtype":"f32le","order":"x-fastest"}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel slots per modality block.
pub const VOXEL_SLOTS: usize = 2500;
pub const MODALITY_COUNT: usize = 4;
/// Length of every voxel vector: 2500 slots × 4 modalities.
pub const VECTOR_LEN: usize = VOXEL_SLOTS * MODALITY_COUNT;

/// MNI152 2 mm grid.
pub const MNI_2MM_DIMS: [usize; 3] = [91, 109, 91];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], voxel_size_mm: [f64; 3], data: Vec<f32>) -> Result<Self> {
        check_grid(dims, voxel_size_mm)?;
        let n = dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "volume {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite voxel value at flat index {pos}")));
        }
        Ok(Self {
            dims,
            voxel_size_mm,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], voxel_size_mm: [f64; 3]) -> Result<Self> {
        check_grid(dims, voxel_size_mm)?;
        Ok(Self {
            dims,
            voxel_size_mm,
            data: vec![0.0; dims.iter().product()],
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access; callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn flat_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.flat_index(x, y, z)]
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims
    }
}

fn check_grid(dims: [usize; 3], voxel_size_mm: [f64; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Dimension(format!("volume dims must be positive, got {dims:?}")));
    }
    if voxel_size_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::Dimension(format!(
            "voxel sizes must be positive, got {voxel_size_mm:?}"
        )));
    }
    Ok(())
}

/// Set of voxels on a grid, stored as strictly increasing flat indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    indices: Vec<usize>,
}

impl Mask {
    /// Builds a mask from indices in any order; duplicates are merged.
    pub fn from_indices(dims: [usize; 3], mut indices: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::Dimension(format!(
                    "mask index {last} outside grid {dims:?}"
                )));
            }
        }
        Ok(Self { dims, indices })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            indices: Vec::new(),
        }
    }

    pub fn from_volume(volume: &Volume, keep: impl Fn(f32) -> bool) -> Self {
        Self {
            dims: volume.dims,
            indices: volume
                .data
                .iter()
                .enumerate()
                .filter(|(_, &v)| keep(v))
                .map(|(i, _)| i)
                .collect(),
        }
    }

    /// Voxels with a nonzero value.
    pub fn nonzero(volume: &Volume) -> Self {
        Self::from_volume(volume, |v| v != 0.0)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "mask grids differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let mut all = self.indices.clone();
        all.extend_from_slice(&other.indices);
        Mask::from_indices(self.dims, all)
    }

    /// Binary volume with 1 inside the mask.
    pub fn to_volume(&self, voxel_size_mm: [f64; 3]) -> Result<Volume> {
        let mut v = Volume::zeros(self.dims, voxel_size_mm)?;
        for &i in &self.indices {
            v.data[i] = 1.0;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    T1,
    T1Post,
    T2,
    Flair,
}

impl Modality {
    /// Order of the modality blocks inside a voxel vector.
    pub const ALL: [Modality; MODALITY_COUNT] =
        [Modality::T1, Modality::T1Post, Modality::T2, Modality::Flair];

    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1Post => "t1post",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
        }
    }
}

/// Four co-registered volumes in [`Modality::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalScan {
    modalities: Vec<Volume>,
}

impl MultiModalScan {
    pub fn new(modalities: Vec<Volume>) -> Result<Self> {
        if modalities.len() != MODALITY_COUNT {
            return Err(Error::Dimension(format!(
                "a scan needs exactly {MODALITY_COUNT} modalities, got {}",
                modalities.len()
            )));
        }
        let dims = modalities[0].dims;
        if let Some(v) = modalities.iter().find(|v| v.dims != dims) {
            return Err(Error::Dimension(format!(
                "modality grids differ: {dims:?} vs {:?}",
                v.dims
            )));
        }
        Ok(Self { modalities })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.modalities[0].dims
    }

    pub fn modality(&self, m: Modality) -> &Volume {
        &self.modalities[m as usize]
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.modalities
    }

    /// Min-max normalises every modality inside `brain_mask`.
    pub fn normalized(&self, brain_mask: &Mask) -> Result<Self> {
        let modalities = self
            .modalities
            .iter()
            .map(|v| minmax_normalize(v, brain_mask))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { modalities })
    }
}

/// Fixed-length ROI descriptor of [`VECTOR_LEN`] values.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVector {
    values: Vec<f64>,
}

impl VoxelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != VECTOR_LEN {
            return Err(Error::Dimension(format!(
                "voxel vectors hold {VECTOR_LEN} values, got {}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, m: Modality) -> &[f64] {
        let k = m as usize;
        &self.values[k * VOXEL_SLOTS..(k + 1) * VOXEL_SLOTS]
    }
}

/// Maps values inside `brain_mask` linearly onto [0, 1]; everything outside becomes 0.
pub fn minmax_normalize(volume: &Volume, brain_mask: &Mask) -> Result<Volume> {
    if brain_mask.is_empty() {
        return Err(Error::Data("brain mask is empty".into()));
    }
    if brain_mask.dims != volume.dims {
        return Err(Error::Dimension(format!(
            "mask grid {:?} differs from volume grid {:?}",
            brain_mask.dims, volume.dims
        )));
    }
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &i in &brain_mask.indices {
        lo = lo.min(volume.data[i]);
        hi = hi.max(volume.data[i]);
    }
    let mut out = Volume::zeros(volume.dims, volume.voxel_size_mm)?;
    if hi > lo {
        let (lo64, range) = (lo as f64, hi as f64 - lo as f64);
        for &i in &brain_mask.indices {
            let v = ((volume.data[i] as f64 - lo64) / range) as f32;
            out.data[i] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Concatenates ROI voxel values of each modality into a zero-padded vector.
///
/// Voxels are taken in ascending flat-index order; ROIs larger than
/// [`VOXEL_SLOTS`] keep only their first 2500 voxels.
pub fn extract_voxel_vector(scan: &MultiModalScan, roi: &Mask) -> Result<VoxelVector> {
    if roi.dims != scan.dims() {
        return Err(Error::Dimension(format!(
            "ROI grid {:?} differs from scan grid {:?}",
            roi.dims,
            scan.dims()
        )));
    }
    let mut values = vec![0.0; VECTOR_LEN];
    let take = roi.len().min(VOXEL_SLOTS);
    for (k, vol) in scan.modalities.iter().enumerate() {
        let block = &mut values[k * VOXEL_SLOTS..k * VOXEL_SLOTS + take];
        for (slot, &idx) in block.iter_mut().zip(&roi.indices[..take]) {
            *slot = vol.data[idx] as f64;
        }
    }
    Ok(VoxelVector { values })
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    dtype: String,
    order: String,
}

/// Sidecar header path for a payload path.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let header = VolumeHeader {
        dims: volume.dims,
        voxel_size_mm: volume.voxel_size_mm,
        dtype: "f32le".into(),
        order: "x-fastest".into(),
    };
    let hpath = header_path(path);
    let text = serde_json::to_string(&header).map_err(|e| Error::json(&hpath, e))?;
    fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))?;
    let mut bytes = Vec::with_capacity(volume.data.len() * 4);
    for v in &volume.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let hpath = header_path(path);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::json(&hpath, e))?;
    if header.dtype != "f32le" || header.order != "x-fastest" {
        return Err(Error::format(
            &hpath,
            format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        ));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n * 4 {
        return Err(Error::format(
            path,
            format!(
                "header {:?} expects {} payload bytes, found {}",
                header.dims,
                n * 4,
                bytes.len()
            ),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(header.dims, header.voxel_size_mm, data)
}

pub fn save_mask(mask: &Mask, voxel_size_mm: [f64; 3], path: &Path) -> Result<()> {
    save_volume(&mask.to_volume(voxel_size_mm)?, path)
}

/// Loads a mask container; payload values must be 0 or 1.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let v = load_volume(path)?;
    if let Some(bad) = v.data.iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(Error::format(path, format!("mask payload value {bad} is not 0 or 1")));
    }
    Ok(Mask::nonzero(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    const VOX: [f64; 3] = [2.0, 2.0, 2.0];

    fn scan_with(dims: [usize; 3], f: impl Fn(usize, usize) -> f32) -> MultiModalScan {
        let n = dims.iter().product();
        let vols = (0..4)
            .map(|m| Volume::new(dims, VOX, (0..n).map(|i| f(m, i)).collect()).unwrap())
            .collect();
        MultiModalScan::new(vols).unwrap()
    }

    #[test]
    fn zero_volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.f32");
        let v = Volume::zeros([2, 2, 2], VOX).unwrap();
        save_volume(&v, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 32);
        assert_eq!(load_volume(&path).unwrap(), v);
    }

    #[test]
    fn short_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.f32");
        fs::write(
            header_path(&path),
            r#"{"dims":[91,109,91],"voxel_size_mm":[2,2,2],"dtype":"f32le","order":"x-fastest"}"#,
        )
        .unwrap();
        fs::write(&path, vec![0u8; 400]).unwrap();
        assert!(matches!(load_volume(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.f32");
        let v = Volume::zeros([2, 1, 1], VOX).unwrap();
        save_volume(&v, &path).unwrap();
        let mut bytes = 0f32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_volume(&path), Err(Error::Data(_))));
        assert!(Volume::new([1, 1, 1], VOX, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn mask_payload_must_be_binary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        save_volume(&Volume::new([2, 1, 1], VOX, vec![0.0, 2.0]).unwrap(), &path).unwrap();
        assert!(load_mask(&path).is_err());
        let m = Mask::from_indices([2, 1, 1], vec![1]).unwrap();
        save_mask(&m, VOX, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);
    }

    #[test]
    fn normalize_hand_values() {
        let v = Volume::new([4, 1, 1], VOX, vec![2.0, 4.0, 6.0, 100.0]).unwrap();
        let mask = Mask::from_indices([4, 1, 1], vec![0, 1, 2]).unwrap();
        let n = minmax_normalize(&v, &mask).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0, 0.0]);
    }

    #[test]
    fn normalize_constant_is_zero() {
        let v = Volume::new([3, 1, 1], VOX, vec![7.0; 3]).unwrap();
        let mask = Mask::from_indices([3, 1, 1], vec![0, 1, 2]).unwrap();
        assert_eq!(minmax_normalize(&v, &mask).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn normalize_unit_range_is_identity() {
        let v = Volume::new([2, 1, 1], VOX, vec![0.0, 1.0]).unwrap();
        let mask = Mask::from_indices([2, 1, 1], vec![0, 1]).unwrap();
        assert_eq!(minmax_normalize(&v, &mask).unwrap(), v);
    }

    #[test]
    fn normalize_empty_mask_errors() {
        let v = Volume::zeros([2, 1, 1], VOX).unwrap();
        assert!(minmax_normalize(&v, &Mask::empty([2, 1, 1])).is_err());
    }

    #[test]
    fn extract_small_roi_pads_with_zeros() {
        let scan = scan_with([5, 1, 1], |m, i| (10 * m + i) as f32);
        let roi = Mask::from_indices([5, 1, 1], vec![4, 1, 2]).unwrap();
        let vv = extract_voxel_vector(&scan, &roi).unwrap();
        assert_eq!(vv.values().len(), VECTOR_LEN);
        assert_eq!(&vv.block(Modality::T1)[..4], &[1.0, 2.0, 4.0, 0.0]);
        assert_eq!(&vv.block(Modality::T2)[..3], &[21.0, 22.0, 24.0]);
        assert!(vv.block(Modality::Flair)[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_empty_roi() {
        let scan = scan_with([3, 1, 1], |_, _| 0.7);
        let vv = extract_voxel_vector(&scan, &Mask::empty([3, 1, 1])).unwrap();
        assert!(vv.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_truncates_oversized_roi() {
        let dims = [2600, 1, 1];
        let scan = scan_with(dims, |m, i| (i as f32) * 1e-3 + m as f32);
        let mut idx: Vec<usize> = (0..2501).map(|k| k + 50).collect();
        idx.reverse();
        let roi = Mask::from_indices(dims, idx.clone()).unwrap();
        let vv = extract_voxel_vector(&scan, &roi).unwrap();
        // oracle: explicit sort, truncation to the first 2500
        idx.sort();
        idx.truncate(VOXEL_SLOTS);
        for (m, modality) in Modality::ALL.iter().enumerate() {
            let expected: Vec<f64> = idx
                .iter()
                .map(|&i| scan.volumes()[m].data()[i] as f64)
                .collect();
            assert_eq!(vv.block(*modality), expected.as_slice());
        }
    }

    #[test]
    fn extract_dims_mismatch() {
        let scan = scan_with([3, 1, 1], |_, _| 0.0);
        assert!(extract_voxel_vector(&scan, &Mask::empty([4, 1, 1])).is_err());
    }

    #[test]
    fn scan_requires_four_equal_grids() {
        let a = Volume::zeros([2, 2, 2], VOX).unwrap();
        let b = Volume::zeros([2, 2, 3], VOX).unwrap();
        assert!(MultiModalScan::new(vec![a.clone(); 3]).is_err());
        assert!(MultiModalScan::new(vec![a.clone(), a.clone(), a, b]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vector_length_and_order_invariance(
                mut idx in proptest::collection::vec(0usize..3000, 0..2800),
                seed in any::<u64>(),
            ) {
                let dims = [3000, 1, 1];
                let scan = scan_with(dims, |m, i| ((i * 7 + m) % 13) as f32);
                let a = extract_voxel_vector(&scan, &Mask::from_indices(dims, idx.clone()).unwrap()).unwrap();
                let k = idx.len().max(1);
                idx.rotate_left((seed as usize) % k);
                idx.reverse();
                let b = extract_voxel_vector(&scan, &Mask::from_indices(dims, idx).unwrap()).unwrap();
                prop_assert_eq!(a.values().len(), VECTOR_LEN);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn normalize_idempotent(vals in proptest::collection::vec(-1e3f32..1e3, 2..64)) {
                let n = vals.len();
                let v = Volume::new([n, 1, 1], VOX, vals).unwrap();
                let mask = Mask::from_indices([n, 1, 1], (0..n).step_by(2).collect()).unwrap();
                let once = minmax_normalize(&v, &mask).unwrap();
                let twice = minmax_normalize(&once, &mask).unwrap();
                for (a, b) in once.data().iter().zip(twice.data()) {
                    prop_assert!((a - b).abs() as f64 <= 1e-12);
                }
            }
        }
    }
}
