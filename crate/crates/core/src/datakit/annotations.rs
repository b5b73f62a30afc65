use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::read_pgm;
use crate::error::{Error, Result};
use crate::fusion::RoiBox;
use crate::image::GrayImage;

/// One entry of the annotation file. Relative image paths resolve against
/// the annotation file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub thermal: PathBuf,
    pub optical: Option<PathBuf>,
    #[serde(default)]
    pub boxes: Vec<RoiBox>,
}

/// Loaded sample. `optical` is `None` for unregistered thermal images,
/// which can be fused and scored but not trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSample {
    pub thermal: GrayImage,
    pub optical: Option<GrayImage>,
    pub boxes: Vec<RoiBox>,
}

impl AnnotatedSample {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.thermal.dims();
        if let Some(o) = &self.optical {
            self.thermal.expect_same_dims(o)?;
        }
        self.boxes.iter().try_for_each(|b| b.validate(h, w))
    }

    pub fn is_registered(&self) -> bool {
        self.optical.is_some()
    }
}

fn record_error(index: usize, e: Error) -> Error {
    match e {
        Error::Validation(m) | Error::Shape(m) | Error::Format(m) => {
            Error::Validation(format!("record {index}: {m}"))
        }
        Error::Io { path, source } => {
            Error::Validation(format!("record {index}: {}: {source}", path.display()))
        }
        other => other,
    }
}

/// Reads and validates every record, loading its images.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::validation(format!("{}: not a JSON array: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let rec: SampleRecord = serde_json::from_value(v)
                .map_err(|e| Error::validation(format!("record {i}: {e}")))?;
            load_record(&rec, base).map_err(|e| record_error(i, e))
        })
        .collect()
}

fn load_record(rec: &SampleRecord, base: &Path) -> Result<AnnotatedSample> {
    let sample = AnnotatedSample {
        thermal: read_pgm(base.join(&rec.thermal))?,
        optical: rec
            .optical
            .as_ref()
            .map(|p| read_pgm(base.join(p)))
            .transpose()?,
        boxes: rec.boxes.clone(),
    };
    sample.validate()?;
    Ok(sample)
}

pub fn write_annotations(records: &[SampleRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(records).expect("records serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
