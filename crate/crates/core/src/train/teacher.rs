//! Precomputed teacher logits: `sample_id,logit_0,logit_1,...` per line.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherLogits {
    pub logits: BTreeMap<String, Vec<f64>>,
}

impl TeacherLogits {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.logits.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn parse(text: &str, class_count: usize) -> Result<Self> {
        let mut logits = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let id = fields.next().unwrap_or_default().trim();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing sample id".into(),
                });
            }
            let values = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad logit {f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != class_count {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {class_count} logits, found {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "non-finite logit".into(),
                });
            }
            if logits.insert(id.to_string(), values).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate sample id {id}"),
                });
            }
        }
        Ok(Self { logits })
    }

    /// One line per entry, ids in sorted order, shortest round-trip floats.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, v) in &self.logits {
            out.push_str(id);
            for x in v {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Checks that the table covers exactly the given sample ids.
    pub fn check_against<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let ids: Vec<&str> = ids.into_iter().collect();
        if ids.len() != self.logits.len() {
            return Err(Error::Ingestion(format!(
                "teacher file has {} records for {} samples",
                self.logits.len(),
                ids.len()
            )));
        }
        if let Some(missing) = ids.iter().find(|id| !self.logits.contains_key(**id)) {
            return Err(Error::Ingestion(format!(
                "no teacher logits for sample {missing}"
            )));
        }
        Ok(())
    }
}

/// Reads a teacher file and checks it against the dataset's sample ids.
pub fn teacher_logits_load<'a>(
    path: &Path,
    class_count: usize,
    ids: impl IntoIterator<Item = &'a str>,
) -> Result<TeacherLogits> {
    let text = std::fs::read_to_string(path)?;
    let table = TeacherLogits::parse(&text, class_count)?;
    table.check_against(ids)?;
    Ok(table)
}
