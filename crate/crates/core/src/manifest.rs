//! JSON-lines dataset manifest: one record per image.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{io::read_image, AcquisitionMeta, FrameKind, RasterImage};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: String,
    pub timestamp: f64,
    pub iso: f64,
    pub exposure_s: f64,
    pub focal_mm: f64,
    pub f_number: f64,
    pub kind: FrameKind,
    #[serde(default)]
    pub device_id: String,
    pub session_index: usize,
    /// Age class of a trusted image; absent for untrusted queries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<usize>,
    pub dataset_id: String,
    pub schema_version: u32,
}

impl ManifestRecord {
    pub fn meta(&self) -> AcquisitionMeta {
        AcquisitionMeta {
            timestamp: self.timestamp,
            iso: self.iso,
            exposure_s: self.exposure_s,
            focal_mm: self.focal_mm,
            f_number: self.f_number,
            kind: self.kind,
            device_id: self.device_id.clone(),
        }
    }

    pub fn from_meta(path: String, meta: &AcquisitionMeta, session_index: usize, class_label: Option<usize>, dataset_id: &str) -> Self {
        Self {
            path,
            timestamp: meta.timestamp,
            iso: meta.iso,
            exposure_s: meta.exposure_s,
            focal_mm: meta.focal_mm,
            f_number: meta.f_number,
            kind: meta.kind,
            device_id: meta.device_id.clone(),
            session_index,
            class_label,
            dataset_id: dataset_id.to_string(),
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn is_trusted(&self) -> bool {
        self.class_label.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub schema_version: u32,
    pub records: Vec<ManifestRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            schema_version: SCHEMA_VERSION,
            records,
            base_dir: base_dir.into(),
        }
    }

    /// Parse and validate a manifest file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                what: "manifest record",
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })?;
            records.push(rec);
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dataset_id = records.first().map(|r| r.dataset_id.clone()).unwrap_or_default();
        let m = Self {
            dataset_id,
            schema_version: SCHEMA_VERSION,
            records,
            base_dir,
        };
        m.validate(path)?;
        Ok(m)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Parse {
            what: "manifest",
            path: path.to_path_buf(),
            message,
        };
        for (i, r) in self.records.iter().enumerate() {
            if r.schema_version != SCHEMA_VERSION {
                return Err(bad(format!(
                    "record {i}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    r.schema_version
                )));
            }
            r.meta()
                .validate()
                .map_err(|e| bad(format!("record {i}: {e}")))?;
            let p = self.resolve(r);
            if !p.exists() {
                return Err(bad(format!("record {i}: image {} does not exist", p.display())));
            }
        }
        for w in self.records.windows(2) {
            if w[0].session_index == w[1].session_index && w[1].timestamp < w[0].timestamp {
                return Err(bad(format!(
                    "timestamps decrease within session {}",
                    w[0].session_index
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("manifest record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_image(&self, record: &ManifestRecord) -> Result<RasterImage> {
        read_image(self.resolve(record))
    }

    /// Records of `kind`, in chronological order (stable for ties).
    pub fn chronological(&self, kind: FrameKind) -> Vec<&ManifestRecord> {
        let mut v: Vec<&ManifestRecord> = self.records.iter().filter(|r| r.kind == kind).collect();
        v.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        v
    }
}
