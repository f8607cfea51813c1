//! Interchange formats.
//!
//! Scenes file: line-delimited JSON. The first record is the dataset header,
//!
//! ```text
//! {"format":"detfusion-scenes/1","partition":{...},"base":{...},"novel":{...}}
//! ```
//!
//! followed by one [`SceneRecord`] per line. Detections file: a
//! `{"format":"detfusion-detections/1"}` record, then one
//! `{"image_id":..,"detections":[..]}` record per image. Reals are written in
//! shortest round-trip form. Blank lines are ignored; unknown fields are not.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::eval::EvalReport;
use crate::fusion::{parse_checkpoint, write_checkpoint, FusionNetParams};
use crate::model::{
    ClassPartition, Dataset, DatasetHeader, Detection, DetectorLayout, SceneRecord,
};

pub const SCENES_FORMAT: &str = "detfusion-scenes/1";
pub const DETECTIONS_FORMAT: &str = "detfusion-detections/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format: String,
    partition: ClassPartition,
    base: DetectorLayout,
    novel: DetectorLayout,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatLine {
    format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

fn parse_line<T: DeserializeOwned>(
    file: &str,
    line_no: usize,
    line: &str,
) -> Result<T, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(line);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        HarnessError::Parse {
            file: file.to_string(),
            line: line_no,
            path,
            message: e.into_inner().to_string(),
        }
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn check_format(file: &str, line: usize, found: &str, expected: &str) -> Result<(), HarnessError> {
    if found != expected {
        return Err(HarnessError::Parse {
            file: file.into(),
            line,
            path: "format".into(),
            message: format!("expected format {expected:?}, found {found:?}"),
        });
    }
    Ok(())
}

/// Parses a scenes file. Structural errors carry the line number and field
/// path; invariant checks are left to [`Dataset::validate`].
pub fn parse_scenes_str(file: &str, text: &str) -> Result<Dataset, HarnessError> {
    let mut lines = content_lines(text);
    let Some((hl, first)) = lines.next() else {
        return Err(HarnessError::Parse {
            file: file.into(),
            line: 1,
            path: ".".into(),
            message: "missing header record".into(),
        });
    };
    let h: HeaderLine = parse_line(file, hl, first)?;
    check_format(file, hl, &h.format, SCENES_FORMAT)?;
    let header = DatasetHeader {
        partition: h.partition,
        base: h.base,
        novel: h.novel,
    };
    let scenes = lines
        .map(|(n, l)| parse_line::<SceneRecord>(file, n, l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { header, scenes })
}

pub fn write_scenes_string(dataset: &Dataset) -> String {
    let h = HeaderLine {
        format: SCENES_FORMAT.into(),
        partition: dataset.header.partition.clone(),
        base: dataset.header.base,
        novel: dataset.header.novel,
    };
    let mut out = serde_json::to_string(&h).expect("header serializes");
    out.push('\n');
    for s in &dataset.scenes {
        out.push_str(&serde_json::to_string(s).expect("scene serializes"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads, parses and validates a scenes file.
pub fn parse_scenes(path: &Path) -> Result<Dataset, HarnessError> {
    let name = path.display().to_string();
    let dataset = parse_scenes_str(&name, &read(path)?)?;
    let violations = dataset.validate();
    if !violations.is_empty() {
        return Err(HarnessError::Validation {
            file: name,
            violations,
        });
    }
    Ok(dataset)
}

pub fn write_scenes(path: &Path, dataset: &Dataset) -> Result<(), HarnessError> {
    write(path, &write_scenes_string(dataset))
}

pub fn parse_detections_str(file: &str, text: &str) -> Result<Vec<ImageDetections>, HarnessError> {
    let mut lines = content_lines(text);
    let Some((hl, first)) = lines.next() else {
        return Err(HarnessError::Parse {
            file: file.into(),
            line: 1,
            path: ".".into(),
            message: "missing header record".into(),
        });
    };
    let f: FormatLine = parse_line(file, hl, first)?;
    check_format(file, hl, &f.format, DETECTIONS_FORMAT)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, l) in lines {
        let rec: ImageDetections = parse_line(file, n, l)?;
        if !seen.insert(rec.image_id.clone()) {
            return Err(HarnessError::Parse {
                file: file.into(),
                line: n,
                path: "image_id".into(),
                message: format!("duplicate image_id {:?}", rec.image_id),
            });
        }
        if let Some((k, d)) = rec
            .detections
            .iter()
            .enumerate()
            .find(|(_, d)| d.bbox.check().is_err())
        {
            return Err(HarnessError::Parse {
                file: file.into(),
                line: n,
                path: format!("detections[{k}].box"),
                message: format!("invalid box {:?}", d.bbox.to_array()),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_detections_string(dets: &[ImageDetections]) -> String {
    let mut out = serde_json::to_string(&FormatLine {
        format: DETECTIONS_FORMAT.into(),
    })
    .expect("format line serializes");
    out.push('\n');
    for d in dets {
        out.push_str(&serde_json::to_string(d).expect("detections serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_detections(path: &Path) -> Result<Vec<ImageDetections>, HarnessError> {
    parse_detections_str(&path.display().to_string(), &read(path)?)
}

pub fn write_detections(path: &Path, dets: &[ImageDetections]) -> Result<(), HarnessError> {
    write(path, &write_detections_string(dets))
}

pub fn detections_map(dets: &[ImageDetections]) -> HashMap<String, Vec<Detection>> {
    dets.iter()
        .map(|d| (d.image_id.clone(), d.detections.clone()))
        .collect()
}

pub fn write_report_string(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<(), HarnessError> {
    write(path, &write_report_string(report))
}

pub fn parse_report(path: &Path) -> Result<EvalReport, HarnessError> {
    let name = path.display().to_string();
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Parse {
        file: name,
        line: e.inner().line(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn parse_checkpoint_file(path: &Path) -> Result<FusionNetParams, HarnessError> {
    parse_checkpoint(&read(path)?).map_err(|e| HarnessError::Parse {
        file: path.display().to_string(),
        line: e.line,
        path: "checkpoint".into(),
        message: e.message,
    })
}

pub fn write_checkpoint_file(path: &Path, params: &FusionNetParams) -> Result<(), HarnessError> {
    write(path, &write_checkpoint(params))
}
