//! Report corpora on disk.
//!
//! Layout of a corpus directory:
//!
//! ```text
//! manifest.json                {"app_id": "...", "reports": ["r1", ...], "format_version": 1}
//! reports/<id>/report.json     {"id": "...", "text": "...", "screenshot": "screenshot.png",
//!                               "annotations": [{"bbox": [x, y, w, h], "text": "...", "type": "BTN"}]}
//! reports/<id>/screenshot.png  8-bit RGB or RGBA PNG, alpha ignored
//! reports/<id>/nlp.json        optional text-pipeline override
//! labels.json                  {"<report_id>": "<bug_category>", ...}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vision::{self, WidgetType};
use crate::NULL_REPORT_ID;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no manifest.json in {0}")]
    MissingManifest(PathBuf),
    #[error("malformed report {0:?}: {1}")]
    MalformedReport(String, String),
    #[error("cannot read screenshot of report {0:?}")]
    UnreadableImage(String),
    #[error("labels reference unknown report id {0:?}")]
    UnknownReportId(String),
    #[error("malformed labels: {0}")]
    MalformedLabels(String),
}

/// Pixel rectangle: top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }
}

/// Externally supplied widget: stands in for OCR and widget detection.
#[derive(Debug, Clone, PartialEq)]
pub struct WidgetAnnotation {
    pub bbox: Rect,
    pub text: Option<String>,
    pub widget_type: Option<WidgetType>,
}

/// Pre-computed text pipeline results that replace the built-in classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpOverride {
    pub bug_sentences: Vec<String>,
    pub step_sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub id: String,
    pub app_id: String,
    pub text: String,
    pub screenshot: RgbImage,
    pub annotations: Option<Vec<WidgetAnnotation>>,
    pub nlp_override: Option<NlpOverride>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub app_id: String,
    pub reports: Vec<Report>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.reports.iter().map(|r| r.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&Report> {
        self.reports.iter().find(|r| r.id == id)
    }
}

/// Ground-truth bug category per report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<String, String>);

impl LabelMap {
    /// Builds a label map, rejecting an empty mapping.
    pub fn new(map: BTreeMap<String, String>) -> Result<Self, CorpusError> {
        if map.is_empty() {
            return Err(CorpusError::MalformedLabels("empty label mapping".into()));
        }
        Ok(LabelMap(map))
    }

    pub fn from_json_str(json: &str) -> Result<Self, CorpusError> {
        let map: BTreeMap<String, String> =
            serde_json::from_str(json).map_err(|e| CorpusError::MalformedLabels(e.to_string()))?;
        Self::new(map)
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CorpusError::MalformedLabels(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn category(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn category_count(&self) -> usize {
        self.0.values().collect::<BTreeSet<_>>().len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Fails on the first (sorted) label key that is not in `ids`.
    pub fn check_ids<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<(), CorpusError> {
        let known: HashSet<&str> = ids.into_iter().collect();
        match self.0.keys().find(|k| !known.contains(k.as_str())) {
            Some(k) => Err(CorpusError::UnknownReportId(k.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusStats {
    pub report_count: usize,
    pub bug_category_count: Option<usize>,
    /// Mean (width, height) over every widget of every report.
    pub mean_widget_crop_size: (u32, u32),
}

#[derive(Deserialize)]
struct ManifestDoc {
    app_id: String,
    reports: Vec<String>,
    format_version: u64,
}

#[derive(Deserialize)]
struct ReportDoc {
    id: String,
    #[serde(default)]
    text: String,
    screenshot: String,
    #[serde(default)]
    annotations: Option<Vec<AnnotationDoc>>,
}

#[derive(Deserialize)]
struct AnnotationDoc {
    bbox: [i64; 4],
    #[serde(default)]
    text: Option<String>,
    #[serde(default, rename = "type")]
    widget_type: Option<String>,
}

fn malformed(id: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedReport(id.to_string(), reason.into())
}

fn check_report_id(id: &str) -> Result<(), CorpusError> {
    if id.is_empty() {
        return Err(malformed(id, "empty report id"));
    }
    if id == NULL_REPORT_ID {
        return Err(malformed(id, "report id is reserved"));
    }
    if id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(malformed(id, "report id is not a valid directory name"));
    }
    Ok(())
}

/// Loads every report listed in `dir/manifest.json`, in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let manifest_path = dir.join("manifest.json");
    let manifest_text = fs::read_to_string(&manifest_path)
        .map_err(|_| CorpusError::MissingManifest(dir.to_path_buf()))?;
    let manifest: ManifestDoc = serde_json::from_str(&manifest_text)
        .map_err(|e| malformed("", format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(malformed(
            "",
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    if manifest.reports.is_empty() {
        return Err(malformed("", "no reports"));
    }

    let mut seen = HashSet::new();
    let mut reports = Vec::with_capacity(manifest.reports.len());
    for id in &manifest.reports {
        check_report_id(id)?;
        if !seen.insert(id.as_str()) {
            return Err(malformed(id, "duplicate report id"));
        }
        reports.push(load_report(&dir.join("reports").join(id), id, &manifest.app_id)?);
    }
    Ok(Corpus {
        app_id: manifest.app_id,
        reports,
    })
}

fn load_report(report_dir: &Path, id: &str, app_id: &str) -> Result<Report, CorpusError> {
    let text = fs::read_to_string(report_dir.join("report.json"))
        .map_err(|e| malformed(id, format!("report.json: {e}")))?;
    let doc: ReportDoc =
        serde_json::from_str(&text).map_err(|e| malformed(id, format!("report.json: {e}")))?;
    if doc.id != id {
        return Err(malformed(id, format!("report.json declares id {:?}", doc.id)));
    }

    let screenshot = image::open(report_dir.join(&doc.screenshot))
        .map_err(|_| CorpusError::UnreadableImage(id.to_string()))?
        .to_rgb8();
    let (width, height) = screenshot.dimensions();
    if width == 0 || height == 0 {
        return Err(CorpusError::UnreadableImage(id.to_string()));
    }

    let annotations = match doc.annotations {
        None => None,
        Some(list) => Some(
            list.into_iter()
                .map(|a| parse_annotation(id, a, width, height))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };

    let nlp_path = report_dir.join("nlp.json");
    let nlp_override = if nlp_path.exists() {
        let text = fs::read_to_string(&nlp_path).map_err(|e| malformed(id, format!("nlp.json: {e}")))?;
        let o: NlpOverride =
            serde_json::from_str(&text).map_err(|e| malformed(id, format!("nlp.json: {e}")))?;
        if let Some(e) = &o.embedding {
            if e.len() != crate::nlp::EMBEDDING_DIM || e.iter().any(|v| !v.is_finite()) {
                return Err(malformed(id, "nlp.json embedding must hold 100 finite reals"));
            }
        }
        Some(o)
    } else {
        None
    };

    Ok(Report {
        id: id.to_string(),
        app_id: app_id.to_string(),
        text: doc.text,
        screenshot,
        annotations,
        nlp_override,
    })
}

fn parse_annotation(
    id: &str,
    doc: AnnotationDoc,
    width: u32,
    height: u32,
) -> Result<WidgetAnnotation, CorpusError> {
    let [x, y, w, h] = doc.bbox;
    let in_u32 = |v: i64| u32::try_from(v).ok();
    let bbox = match (in_u32(x), in_u32(y), in_u32(w), in_u32(h)) {
        (Some(x), Some(y), Some(w), Some(h)) => Rect::new(x, y, w, h),
        _ => return Err(malformed(id, "bbox out of bounds")),
    };
    if !bbox.fits_within(width, height) {
        return Err(malformed(id, "bbox out of bounds"));
    }
    let widget_type = match doc.widget_type {
        None => None,
        Some(code) => Some(
            WidgetType::from_code(&code)
                .ok_or_else(|| malformed(id, format!("unknown widget type {code:?}")))?,
        ),
    };
    Ok(WidgetAnnotation {
        bbox,
        text: doc.text,
        widget_type,
    })
}

/// Loads `labels.json` and checks every key against the corpus.
pub fn load_labels(path: &Path, corpus: &Corpus) -> Result<LabelMap, CorpusError> {
    let labels = LabelMap::from_file(path)?;
    labels.check_ids(corpus.ids())?;
    Ok(labels)
}

pub fn corpus_stats(corpus: &Corpus, labels: Option<&LabelMap>) -> CorpusStats {
    let sizes: Vec<(u32, u32)> = corpus
        .reports
        .iter()
        .flat_map(vision::extract_widgets)
        .map(|w| (w.bbox.w, w.bbox.h))
        .collect();
    CorpusStats {
        report_count: corpus.len(),
        bug_category_count: labels.map(LabelMap::category_count),
        mean_widget_crop_size: mean_size(&sizes),
    }
}

/// Rounded mean of `(w, h)` pairs, floored at `(1, 1)`.
pub fn mean_size(sizes: &[(u32, u32)]) -> (u32, u32) {
    if sizes.is_empty() {
        return (1, 1);
    }
    let n = sizes.len() as f64;
    let (sw, sh) = sizes
        .iter()
        .fold((0u64, 0u64), |(a, b), &(w, h)| (a + w as u64, b + h as u64));
    let w = (sw as f64 / n).round().max(1.0) as u32;
    let h = (sh as f64 / n).round().max(1.0) as u32;
    (w, h)
}
