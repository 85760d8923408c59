//! Dataset directories, manifests and input standardization.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dvsf::{parse_csv, read_dvsf, write_dvsf};
use super::Sample;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nn::CLASS_NAMES;
use crate::tensor::{Shape, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Path relative to the dataset directory.
    pub file: String,
    pub label: usize,
    /// Data line (0-based, header excluded) for samples stored in a CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub counts: Vec<usize>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    fn from_entries(name: String, samples: Vec<ManifestEntry>) -> Self {
        let mut counts = vec![0; CLASS_NAMES.len()];
        for e in &samples {
            counts[e.label] += 1;
        }
        Self {
            name,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            counts,
            samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.iter().map(String::as_str).ne(CLASS_NAMES) {
            return Err(Error::Ingestion(format!(
                "unexpected class names {:?}",
                self.class_names
            )));
        }
        if let Some(e) = self.samples.iter().find(|e| e.label >= CLASS_NAMES.len()) {
            return Err(Error::Ingestion(format!(
                "sample {} has unknown label {}",
                e.id, e.label
            )));
        }
        let fresh = Self::from_entries(self.name.clone(), self.samples.clone());
        if fresh.counts != self.counts {
            return Err(Error::Ingestion(format!(
                "manifest counts {:?} disagree with its file list {:?}",
                self.counts, fresh.counts
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Sorted by id.
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

fn check_sample(file: &str, label: usize, frame: &Tensor, shape: Shape) -> Result<()> {
    if frame.shape() != shape {
        return Err(Error::Ingestion(format!(
            "{file}: frame is {}, expected {shape}",
            frame.shape()
        )));
    }
    if label >= CLASS_NAMES.len() {
        return Err(Error::Ingestion(format!("{file}: unknown label {label}")));
    }
    Ok(())
}

fn csv_id(stem: &str, row: usize) -> String {
    format!("{stem}-{row:05}")
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_file(path: &Path) -> Result<Vec<(usize, Tensor)>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let wrap = |e: Error| Error::Ingestion(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("dvsf") => Ok(vec![read_dvsf(&bytes).map_err(wrap)?]),
        Some("csv") => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
            parse_csv(&text).map_err(wrap)
        }
        _ => Err(Error::Ingestion(format!(
            "{}: unknown sample file type",
            path.display()
        ))),
    }
}

/// Loads a dataset from a directory (with or without `manifest.json`), a
/// single `.dvsf` file or a `.csv` file. Frames must have shape `shape`.
///
/// Without a manifest, a DVSF sample's id is its file stem and a CSV
/// sample's id is `<stem>-<row>` with the row zero-padded to five digits.
pub fn dataset_ingest(path: &Path, shape: Shape) -> Result<Dataset> {
    let name = file_stem(path);
    let mut entries = Vec::new();
    let mut samples = Vec::new();
    let mut push = |entry: ManifestEntry, frame: Tensor| -> Result<()> {
        check_sample(&entry.file, entry.label, &frame, shape)?;
        samples.push(Sample {
            id: entry.id.clone(),
            label: entry.label,
            frame,
        });
        entries.push(entry);
        Ok(())
    };
    let add_file = |rel: &str,
                    path: &Path,
                    push: &mut dyn FnMut(ManifestEntry, Tensor) -> Result<()>|
     -> Result<()> {
        let stem = file_stem(path);
        let frames = read_file(path)?;
        let is_csv = path.extension().is_some_and(|e| e == "csv");
        for (row, (label, frame)) in frames.into_iter().enumerate() {
            let (id, row) = if is_csv {
                (csv_id(&stem, row), Some(row))
            } else {
                (stem.clone(), None)
            };
            push(
                ManifestEntry {
                    id,
                    file: rel.to_string(),
                    label,
                    row,
                },
                frame,
            )?;
        }
        Ok(())
    };

    let manifest_name;
    if path.is_dir() {
        let manifest_path = path.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path)?;
            let manifest: DatasetManifest = serde_json::from_str(&text)
                .map_err(|e| Error::Ingestion(format!("{}: {e}", manifest_path.display())))?;
            manifest.validate()?;
            manifest_name = manifest.name.clone();
            let mut cache: Option<(String, Vec<(usize, Tensor)>)> = None;
            for e in manifest.samples {
                if cache.as_ref().map(|(f, _)| f != &e.file).unwrap_or(true) {
                    cache = Some((e.file.clone(), read_file(&path.join(&e.file))?));
                }
                let frames = &cache.as_ref().unwrap().1;
                let idx = e.row.unwrap_or(0);
                let (label, frame) = frames
                    .get(idx)
                    .ok_or_else(|| Error::Ingestion(format!("{}: no row {idx}", e.file)))?
                    .clone();
                if label != e.label {
                    return Err(Error::Ingestion(format!(
                        "{}: label {label} but manifest says {}",
                        e.file, e.label
                    )));
                }
                push(e, frame)?;
            }
        } else {
            manifest_name = name;
            let mut files: Vec<_> = std::fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?;
            files.retain(|p| p.extension().is_some_and(|e| e == "dvsf" || e == "csv"));
            files.sort();
            for f in files {
                let rel = f.file_name().unwrap().to_string_lossy().into_owned();
                add_file(&rel, &f, &mut push)?;
            }
        }
    } else {
        manifest_name = name;
        let rel = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        add_file(&rel, path, &mut push)?;
    }

    let mut seen = BTreeSet::new();
    if let Some(dup) = entries.iter().find(|e| !seen.insert(e.id.as_str())) {
        return Err(Error::Ingestion(format!("duplicate sample id {}", dup.id)));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Dataset {
        manifest: DatasetManifest::from_entries(manifest_name, entries),
        samples,
    })
}

/// Writes one `<id>.dvsf` per sample plus `manifest.json`.
pub fn write_dataset(dir: &Path, name: &str, samples: &[Sample]) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let file = format!("{}.dvsf", s.id);
        write_atomic(&dir.join(&file), &write_dvsf(s.label, &s.frame)?)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            file,
            label: s.label,
            row: None,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = DatasetManifest::from_entries(name.to_string(), entries);
    manifest.validate()?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

/// Global standardization: one mean and one standard deviation over every
/// value of every training frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Normalizer {
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for f in frames {
            for &v in f.data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, frame: &Tensor) -> Tensor {
        let mut out = frame.clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v - self.mean) / self.std);
        out
    }

    pub fn apply_all(&self, samples: &[Sample]) -> Vec<Sample> {
        samples
            .iter()
            .map(|s| Sample {
                frame: self.apply(&s.frame),
                ..s.clone()
            })
            .collect()
    }
}
