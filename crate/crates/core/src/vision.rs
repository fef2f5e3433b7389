//! Screenshot analysis: widget extraction, widget-type classification,
//! problem-widget localization and keypoint descriptors.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::fmt;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Rect, Report};
use crate::lexicon::Lexicons;
use crate::nlp;

/// Detected boxes smaller than this fraction of the screenshot are noise.
pub const MIN_WIDGET_AREA_FRACTION: f64 = 0.0005;
/// Detected boxes larger than this fraction of the screenshot are background.
pub const MAX_WIDGET_AREA_FRACTION: f64 = 0.9;
/// Minimum token overlap for a text match to pick the problem widget.
pub const TEXT_MATCH_THRESHOLD: f64 = 0.5;

pub const HARRIS_K: f64 = 0.04;
pub const HARRIS_NMS_RADIUS: i64 = 3;
pub const HARRIS_RELATIVE_THRESHOLD: f64 = 0.01;
pub const MAX_KEYPOINTS: usize = 256;
pub const DESCRIPTOR_DIM: usize = 32;

pub const FEATURE_DIM: usize = 8;
pub const MODEL_VERSION: u32 = 1;

/// The 14 Android widget types, in ordinal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WidgetType {
    Btn,
    Chb,
    Ctv,
    Edt,
    Imb,
    Imv,
    Pbh,
    Pbv,
    Rbu,
    Rba,
    Skb,
    Swc,
    Spn,
    Txv,
}

pub const WIDGET_TYPE_COUNT: usize = 14;

impl WidgetType {
    pub const ALL: [WidgetType; WIDGET_TYPE_COUNT] = [
        WidgetType::Btn,
        WidgetType::Chb,
        WidgetType::Ctv,
        WidgetType::Edt,
        WidgetType::Imb,
        WidgetType::Imv,
        WidgetType::Pbh,
        WidgetType::Pbv,
        WidgetType::Rbu,
        WidgetType::Rba,
        WidgetType::Skb,
        WidgetType::Swc,
        WidgetType::Spn,
        WidgetType::Txv,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            WidgetType::Btn => "BTN",
            WidgetType::Chb => "CHB",
            WidgetType::Ctv => "CTV",
            WidgetType::Edt => "EDT",
            WidgetType::Imb => "IMB",
            WidgetType::Imv => "IMV",
            WidgetType::Pbh => "PBH",
            WidgetType::Pbv => "PBV",
            WidgetType::Rbu => "RBU",
            WidgetType::Rba => "RBA",
            WidgetType::Skb => "SKB",
            WidgetType::Swc => "SWC",
            WidgetType::Spn => "SPN",
            WidgetType::Txv => "TXV",
        }
    }

    /// Parses a type code, case-insensitively. "BUT" is accepted for buttons.
    pub fn from_code(code: &str) -> Option<Self> {
        let upper = code.trim().to_ascii_uppercase();
        if upper == "BUT" {
            return Some(WidgetType::Btn);
        }
        Self::ALL.into_iter().find(|t| t.code() == upper)
    }
}

impl fmt::Display for WidgetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for WidgetType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for WidgetType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        WidgetType::from_code(&code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown widget type {code:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Widget {
    pub bbox: Rect,
    pub crop: RgbImage,
    pub text: Option<String>,
    pub widget_type: Option<WidgetType>,
    pub type_confidence: Option<f64>,
}

impl Widget {
    pub fn from_screenshot(screenshot: &RgbImage, bbox: Rect) -> Self {
        let crop = imageops::crop_imm(screenshot, bbox.x, bbox.y, bbox.w, bbox.h).to_image();
        Widget {
            bbox,
            crop,
            text: None,
            widget_type: None,
            type_confidence: None,
        }
    }

    fn has_text(&self) -> bool {
        self.text.as_deref().is_some_and(|t| !t.trim().is_empty())
    }
}

/// Row-major grayscale plane in [0, 255].
#[derive(Debug, Clone)]
pub(crate) struct Gray {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Gray {
    pub(crate) fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        Gray {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    fn at(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Sobel derivatives with replicated borders.
    fn sobel(&self) -> (Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; self.data.len()];
        let mut gy = vec![0.0; self.data.len()];
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let p = |dx: i64, dy: i64| self.at(x + dx, y + dy);
                let dx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                let dy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                let i = y as usize * self.width + x as usize;
                gx[i] = dx;
                gy[i] = dy;
            }
        }
        (gx, gy)
    }

    fn gradient_magnitude(&self) -> Vec<f64> {
        let (gx, gy) = self.sobel();
        gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
    }
}

/// Marks pixels whose gradient magnitude lies above Otsu's threshold.
fn edge_mask(magnitude: &[f64]) -> Vec<bool> {
    let max = magnitude.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![false; magnitude.len()];
    }
    let bin = |m: f64| ((m / max * 255.0) as usize).min(255);
    let mut hist = [0usize; 256];
    for &m in magnitude {
        hist[bin(m)] += 1;
    }
    let split = otsu_split(&hist);
    magnitude.iter().map(|&m| bin(m) > split).collect()
}

/// Otsu's method: the bin `k` maximizing between-class variance of
/// `{0..=k}` versus `{k+1..}`; first maximum wins.
fn otsu_split(hist: &[usize; 256]) -> usize {
    let total: usize = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0usize, 0.0);
    let (mut best_k, mut best_var) = (0, -1.0);
    for (k, &c) in hist.iter().enumerate().take(255) {
        w0 += c;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (mu0 - mu1).powi(2);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    best_k
}

/// Widgets of a report: the annotations when present, otherwise the
/// output of [`detect_widgets`].
pub fn extract_widgets(report: &Report) -> Vec<Widget> {
    match &report.annotations {
        Some(annotations) => annotations
            .iter()
            .map(|a| Widget {
                text: a.text.clone(),
                widget_type: a.widget_type,
                ..Widget::from_screenshot(&report.screenshot, a.bbox)
            })
            .collect(),
        None => detect_widgets(&report.screenshot)
            .into_iter()
            .map(|bbox| Widget::from_screenshot(&report.screenshot, bbox))
            .collect(),
    }
}

/// Bounding boxes of 8-connected edge regions, sorted by (y, x).
pub fn detect_widgets(screenshot: &RgbImage) -> Vec<Rect> {
    let gray = Gray::from_rgb(screenshot);
    let (w, h) = (gray.width, gray.height);
    let mask = edge_mask(&gray.gradient_magnitude());
    let screen_area = (w * h) as f64;
    let mut seen = vec![false; mask.len()];
    let mut boxes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        let rect = Rect::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32);
        let frac = rect.area() as f64 / screen_area;
        if (MIN_WIDGET_AREA_FRACTION..=MAX_WIDGET_AREA_FRACTION).contains(&frac) {
            boxes.push(rect);
        }
    }
    boxes.sort_by_key(|r| (r.y, r.x));
    boxes
}

/// Eight image statistics used by the widget-type classifier:
/// aspect ratio, log area, mean R/G/B, grayscale spread, edge density and
/// a text-present flag.
pub fn widget_features(crop: &RgbImage, text_present: bool) -> [f64; FEATURE_DIM] {
    let (w, h) = crop.dimensions();
    let n = (w as f64) * (h as f64);
    let mut sums = [0.0f64; 3];
    for p in crop.pixels() {
        for (s, &c) in sums.iter_mut().zip(p.0.iter()) {
            *s += c as f64;
        }
    }
    let gray = Gray::from_rgb(crop);
    let mean_gray = gray.data.iter().sum::<f64>() / n;
    let var = gray.data.iter().map(|g| (g - mean_gray).powi(2)).sum::<f64>() / n;
    let edges = edge_mask(&gray.gradient_magnitude());
    let edge_fraction = edges.iter().filter(|&&e| e).count() as f64 / n;
    [
        w as f64 / h as f64,
        n.ln(),
        sums[0] / n / 255.0,
        sums[1] / n / 255.0,
        sums[2] / n / 255.0,
        var.sqrt() / 255.0,
        edge_fraction,
        if text_present { 1.0 } else { 0.0 },
    ]
}

#[derive(Debug, Error, PartialEq)]
pub enum VisionError {
    #[error("no training samples for widget type {0}")]
    EmptyClass(WidgetType),
    #[error("malformed widget model: {0}")]
    MalformedModel(String),
}

pub struct WidgetSample {
    pub crop: RgbImage,
    pub text_present: bool,
    pub widget_type: WidgetType,
}

/// Nearest-centroid widget-type classifier over min-max normalized
/// [`widget_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetTypeModel {
    pub version: u32,
    pub classes: Vec<WidgetType>,
    pub centroids: Vec<Vec<f64>>,
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
}

impl WidgetTypeModel {
    pub fn from_json_str(json: &str) -> Result<Self, VisionError> {
        let model: WidgetTypeModel =
            serde_json::from_str(json).map_err(|e| VisionError::MalformedModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let bad = |m: &str| Err(VisionError::MalformedModel(m.to_string()));
        if self.version != MODEL_VERSION {
            return bad("unsupported version");
        }
        if self.classes.is_empty() || self.classes.len() != self.centroids.len() {
            return bad("need one centroid per class, at least one class");
        }
        if self.classes.iter().collect::<BTreeSet<_>>().len() != self.classes.len() {
            return bad("duplicate class");
        }
        if self.feature_min.len() != FEATURE_DIM
            || self.feature_max.len() != FEATURE_DIM
            || self.centroids.iter().any(|c| c.len() != FEATURE_DIM)
        {
            return bad("feature dimensionality mismatch");
        }
        Ok(())
    }

    pub fn normalize(&self, features: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for (i, o) in out.iter_mut().enumerate() {
            let span = self.feature_max[i] - self.feature_min[i];
            *o = if span > 0.0 {
                (features[i] - self.feature_min[i]) / span
            } else {
                0.0
            };
        }
        out
    }

    /// Nearest centroid; confidence `1 / (1 + distance)`; ties go to the
    /// smaller ordinal.
    pub fn predict(&self, features: &[f64; FEATURE_DIM]) -> (WidgetType, f64) {
        let x = self.normalize(features);
        let mut best: Option<(f64, WidgetType)> = None;
        for (class, centroid) in self.classes.iter().zip(&self.centroids) {
            let d = euclidean(&x, centroid);
            let better = match best {
                None => true,
                Some((bd, bc)) => d < bd || (d == bd && class.ordinal() < bc.ordinal()),
            };
            if better {
                best = Some((d, *class));
            }
        }
        let (d, class) = best.expect("validated model has a class");
        (class, 1.0 / (1.0 + d))
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Fits normalization bounds on all samples and averages each class.
/// Every type in `classes` needs at least one sample.
pub fn train_widget_classifier(
    samples: &[WidgetSample],
    classes: &[WidgetType],
) -> Result<WidgetTypeModel, VisionError> {
    let declared: BTreeSet<WidgetType> = classes.iter().copied().collect();
    if let Some(&first) = declared.iter().next() {
        if samples.is_empty() {
            return Err(VisionError::EmptyClass(first));
        }
    } else {
        return Err(VisionError::MalformedModel("no classes declared".into()));
    }
    let features: Vec<[f64; FEATURE_DIM]> = samples
        .iter()
        .map(|s| widget_features(&s.crop, s.text_present))
        .collect();
    let mut feature_min = vec![f64::INFINITY; FEATURE_DIM];
    let mut feature_max = vec![f64::NEG_INFINITY; FEATURE_DIM];
    for f in &features {
        for i in 0..FEATURE_DIM {
            feature_min[i] = feature_min[i].min(f[i]);
            feature_max[i] = feature_max[i].max(f[i]);
        }
    }
    let mut model = WidgetTypeModel {
        version: MODEL_VERSION,
        classes: declared.iter().copied().collect(),
        centroids: Vec::new(),
        feature_min,
        feature_max,
    };
    for &class in &model.classes {
        let members: Vec<[f64; FEATURE_DIM]> = samples
            .iter()
            .zip(&features)
            .filter(|(s, _)| s.widget_type == class)
            .map(|(_, f)| model.normalize(f))
            .collect();
        if members.is_empty() {
            return Err(VisionError::EmptyClass(class));
        }
        let mut centroid = vec![0.0; FEATURE_DIM];
        for m in &members {
            for (c, v) in centroid.iter_mut().zip(m) {
                *c += v;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
        model.centroids.push(centroid);
    }
    Ok(model)
}

/// Annotated types pass through with confidence 1.
pub fn classify_widget_type(widget: &Widget, model: &WidgetTypeModel) -> (WidgetType, f64) {
    if let Some(t) = widget.widget_type {
        return (t, 1.0);
    }
    model.predict(&widget_features(&widget.crop, widget.has_text()))
}

/// Fills in `widget_type` and `type_confidence` for every widget.
pub fn classify_widgets(widgets: &mut [Widget], model: &WidgetTypeModel) {
    for w in widgets {
        let (t, c) = classify_widget_type(w, model);
        w.widget_type = Some(t);
        w.type_confidence = Some(c);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocateStrategy {
    TextMatch,
    TypeLexicon,
    LargestArea,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemLocation {
    pub problem: Widget,
    pub context: Vec<Widget>,
    pub strategy: LocateStrategy,
}

/// Picks the widget the bug description talks about.
///
/// Text match on widget labels first; when no widget carries text or the
/// best overlap is below [`TEXT_MATCH_THRESHOLD`], the first widget whose
/// type is named in the phrase; otherwise the largest widget. Returns `None`
/// only for an empty widget list.
pub fn locate_problem_widget(
    widgets: Vec<Widget>,
    problem_phrase: &[String],
    lex: &Lexicons,
    model: &WidgetTypeModel,
) -> Option<ProblemLocation> {
    if widgets.is_empty() {
        return None;
    }
    let (index, strategy) = match_by_text(&widgets, problem_phrase, lex)
        .map(|i| (i, LocateStrategy::TextMatch))
        .or_else(|| match_by_type(&widgets, problem_phrase, lex, model).map(|i| (i, LocateStrategy::TypeLexicon)))
        .unwrap_or_else(|| (largest_widget(&widgets), LocateStrategy::LargestArea));
    let mut context = widgets;
    let problem = context.remove(index);
    Some(ProblemLocation {
        problem,
        context,
        strategy,
    })
}

fn match_by_text(widgets: &[Widget], phrase: &[String], lex: &Lexicons) -> Option<usize> {
    let phrase: BTreeSet<&str> = phrase.iter().map(String::as_str).collect();
    if phrase.is_empty() {
        return None;
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, w) in widgets.iter().enumerate() {
        let Some(text) = w.text.as_deref() else { continue };
        let tokens: BTreeSet<String> = nlp::tokenize(text, &lex.stopwords).into_iter().collect();
        let overlap = tokens.iter().filter(|t| phrase.contains(t.as_str())).count();
        let score = overlap as f64 / phrase.len() as f64;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, i));
        }
    }
    best.filter(|(s, _)| *s >= TEXT_MATCH_THRESHOLD).map(|(_, i)| i)
}

fn match_by_type(
    widgets: &[Widget],
    phrase: &[String],
    lex: &Lexicons,
    model: &WidgetTypeModel,
) -> Option<usize> {
    let wanted: BTreeSet<WidgetType> = phrase
        .iter()
        .filter_map(|t| lex.widget_types.get(t))
        .flatten()
        .copied()
        .collect();
    if wanted.is_empty() {
        return None;
    }
    widgets
        .iter()
        .position(|w| wanted.contains(&classify_widget_type(w, model).0))
}

fn largest_widget(widgets: &[Widget]) -> usize {
    let mut best = 0;
    for (i, w) in widgets.iter().enumerate() {
        if w.bbox.area() > widgets[best].bbox.area() {
            best = i;
        }
    }
    best
}

/// Counts context widgets per type ordinal.
pub fn widget_type_histogram(context: &[Widget], model: &WidgetTypeModel) -> [u32; WIDGET_TYPE_COUNT] {
    let mut hist = [0u32; WIDGET_TYPE_COUNT];
    for w in context {
        hist[classify_widget_type(w, model).0.ordinal()] += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: u32,
    pub y: u32,
    /// Unit-length descriptor of [`DESCRIPTOR_DIM`] reals.
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet(pub Vec<Keypoint>);

impl KeypointSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Keypoint> {
        self.0.iter()
    }
}

/// Harris corners with 4x4-cell gradient descriptors.
///
/// Corners are local maxima (radius [`HARRIS_NMS_RADIUS`]) of the Harris
/// response above 1% of the crop's strongest response, strongest first and
/// capped at [`MAX_KEYPOINTS`]. Each descriptor covers a 16x16 patch: per
/// cell the mean gradient magnitude and the dominant orientation over pi.
pub fn extract_keypoints(crop: &RgbImage) -> KeypointSet {
    let gray = Gray::from_rgb(crop);
    let (w, h) = (gray.width, gray.height);
    if w == 0 || h == 0 {
        return KeypointSet::default();
    }
    let (gx, gy) = gray.sobel();
    let response = harris_response(&gx, &gy, w, h);
    let max = response.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return KeypointSet::default();
    }
    let threshold = HARRIS_RELATIVE_THRESHOLD * max;
    let mut corners: Vec<(f64, usize)> = Vec::new();
    for i in 0..response.len() {
        let r = response[i];
        if r > threshold && is_local_max(&response, w, h, i) {
            corners.push((r, i));
        }
    }
    corners.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    corners.truncate(MAX_KEYPOINTS);

    let magnitude: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b) / 255.0).collect();
    let angle: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| b.atan2(*a)).collect();
    let keypoints = corners
        .into_iter()
        .filter_map(|(_, i)| {
            let (x, y) = (i % w, i / w);
            let descriptor = describe(&magnitude, &angle, w, h, x as i64, y as i64)?;
            Some(Keypoint {
                x: x as u32,
                y: y as u32,
                descriptor,
            })
        })
        .collect();
    KeypointSet(keypoints)
}

fn harris_response(gx: &[f64], gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |v: &[f64], x: i64, y: i64| {
        let x = x.clamp(0, w as i64 - 1) as usize;
        let y = y.clamp(0, h as i64 - 1) as usize;
        v[y * w + x]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let ix = at(gx, x + dx, y + dy) / 8.0;
                    let iy = at(gy, x + dx, y + dy) / 8.0;
                    sxx += ix * ix;
                    syy += iy * iy;
                    sxy += ix * iy;
                }
            }
            let det = sxx * syy - sxy * sxy;
            let trace = sxx + syy;
            out[y as usize * w + x as usize] = det - HARRIS_K * trace * trace;
        }
    }
    out
}

/// Strict local maximum; among equal responses the earliest pixel wins.
fn is_local_max(response: &[f64], w: usize, h: usize, i: usize) -> bool {
    let (x, y) = ((i % w) as i64, (i / w) as i64);
    let r = response[i];
    for ny in (y - HARRIS_NMS_RADIUS).max(0)..=(y + HARRIS_NMS_RADIUS).min(h as i64 - 1) {
        for nx in (x - HARRIS_NMS_RADIUS).max(0)..=(x + HARRIS_NMS_RADIUS).min(w as i64 - 1) {
            let j = ny as usize * w + nx as usize;
            if j == i {
                continue;
            }
            let other = response[j];
            if other > r || (other == r && j < i) {
                return false;
            }
        }
    }
    true
}

fn describe(magnitude: &[f64], angle: &[f64], w: usize, h: usize, cx: i64, cy: i64) -> Option<Vec<f64>> {
    const BINS: usize = 8;
    let mut desc = Vec::with_capacity(DESCRIPTOR_DIM);
    for cell_y in 0..4i64 {
        for cell_x in 0..4i64 {
            let mut sum = 0.0;
            let mut hist = [0.0f64; BINS];
            for py in 0..4 {
                for px in 0..4 {
                    let x = (cx - 8 + cell_x * 4 + px).clamp(0, w as i64 - 1) as usize;
                    let y = (cy - 8 + cell_y * 4 + py).clamp(0, h as i64 - 1) as usize;
                    let i = y * w + x;
                    sum += magnitude[i];
                    let b = (((angle[i] + PI) / (2.0 * PI) * BINS as f64) as usize).min(BINS - 1);
                    hist[b] += magnitude[i];
                }
            }
            let mut dominant = 0;
            for b in 1..BINS {
                if hist[b] > hist[dominant] {
                    dominant = b;
                }
            }
            let orientation = if sum > 0.0 {
                let center = -PI + (dominant as f64 + 0.5) * 2.0 * PI / BINS as f64;
                center / PI
            } else {
                0.0
            };
            desc.push(sum / 16.0);
            desc.push(orientation);
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    desc.iter_mut().for_each(|v| *v /= norm);
    Some(desc)
}
