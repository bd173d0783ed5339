//! On-disk layout of a multi-modal subject cohort.
//!
//! ```text
//! DIR/cohort.json                 {"subjects":[{"id","label"}...]}
//! DIR/<id>/<modality>.f32         one volume per modality (plus sidecar)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::{load_volume, save_volume, Modality, MultiModalScan};

pub const MANIFEST_FILE: &str = "cohort.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub subjects: Vec<CohortEntry>,
}

impl CohortManifest {
    pub fn labels(&self) -> Vec<u8> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        for (k, s) in m.subjects.iter().enumerate() {
            if s.label > 1 {
                return Err(Error::format(&path, format!("subject {} has label {}", s.id, s.label)));
            }
            if m.subjects[..k].iter().any(|o| o.id == s.id) {
                return Err(Error::format(&path, format!("subject id {} repeats", s.id)));
            }
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn scan_path(dir: &Path, id: &str, modality: Modality) -> PathBuf {
    dir.join(id).join(format!("{}.f32", modality.file_stem()))
}

pub fn save_scan(dir: &Path, id: &str, scan: &MultiModalScan) -> Result<()> {
    let sub = dir.join(id);
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    for m in Modality::ALL {
        save_volume(scan.modality(m), &scan_path(dir, id, m))?;
    }
    Ok(())
}

pub fn load_scan(dir: &Path, id: &str) -> Result<MultiModalScan> {
    let vols = Modality::ALL
        .iter()
        .map(|&m| load_volume(&scan_path(dir, id, m)))
        .collect::<Result<Vec<_>>>()?;
    MultiModalScan::new(vols).map_err(|e| Error::format(dir.join(id), e.to_string()))
}
