//! Synthetic report corpora with planted duplicate-bug clusters.
//!
//! Every category gets a screen layout, a problem widget with a unique
//! label, a bug sentence naming that widget and a list of reproduction
//! steps. Reports of one category share all of these; three noise knobs
//! perturb them the way real crowdsourced reports differ:
//!
//! - `theme_shift`: each report is rendered with a random color theme.
//! - `shared_screen`: categories are paired and each pair shares one
//!   screen layout (different bugs on the same screen).
//! - `same_bug_different_screens`: some reports of a category show the
//!   problem widget on an alternate screen.
//!
//! The module also renders individual widget crops, which is what the
//! reference widget-type classifier is trained on.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{self, Corpus, CorpusError, LabelMap, Rect};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::lexicon::Lexicons;
use crate::nlp::stable_hash;
use crate::vision::{self, WidgetSample, WidgetType, WidgetTypeModel};

pub const SCREEN_WIDTH: u32 = 240;
pub const SCREEN_HEIGHT: u32 = 400;
/// Seed of the bundled widget-classifier training set.
pub const DEFAULT_WIDGET_SEED: u64 = 0x5eed;
pub const DEFAULT_WIDGET_SAMPLES_PER_CLASS: usize = 50;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synthetic corpus I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode screenshot: {0}")]
    Image(#[from] image::ImageError),
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("generated corpus failed validation: {0}")]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub category: String,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub theme_shift: bool,
    #[serde(default)]
    pub shared_screen: bool,
    #[serde(default)]
    pub same_bug_different_screens: bool,
}

impl NoiseSpec {
    pub fn all() -> Self {
        NoiseSpec {
            theme_shift: true,
            shared_screen: true,
            same_bug_different_screens: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_app_id")]
    pub app_id: String,
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Per-category templates; categories without one get a generated one.
    #[serde(default)]
    pub templates: BTreeMap<String, CategoryTemplate>,
}

fn default_app_id() -> String {
    "synthetic".to_string()
}

impl SynthSpec {
    pub fn new(seed: u64, clusters: &[(&str, usize)], noise: NoiseSpec) -> Self {
        SynthSpec {
            seed,
            app_id: default_app_id(),
            clusters: clusters
                .iter()
                .map(|(c, n)| ClusterSpec {
                    category: c.to_string(),
                    size: *n,
                })
                .collect(),
            noise,
            templates: BTreeMap::new(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SynthError::Spec(e.to_string()))
    }

    pub fn total_size(&self) -> usize {
        self.clusters.iter().map(|c| c.size).sum()
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.clusters.is_empty() {
            return Err(SynthError::Spec("no clusters".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            if c.size == 0 {
                return Err(SynthError::Spec(format!("cluster {:?} is empty", c.category)));
            }
            if c.category.is_empty() || !seen.insert(&c.category) {
                return Err(SynthError::Spec(format!("bad or duplicate category {:?}", c.category)));
            }
        }
        for t in self.templates.values() {
            for screen in [&t.screen, &t.alt_screen] {
                let fits = screen.widgets.iter().all(|w| w.bbox.fits_within(SCREEN_WIDTH, SCREEN_HEIGHT));
                if !fits || t.problem >= t.screen.widgets.len() {
                    return Err(SynthError::Spec("template widget outside the screen".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedWidget {
    pub widget_type: WidgetType,
    pub bbox: Rect,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenLayout {
    pub name: String,
    pub widgets: Vec<PlacedWidget>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTemplate {
    pub screen: ScreenLayout,
    /// Index of the problem widget in `screen.widgets`.
    pub problem: usize,
    pub bug_sentence: String,
    pub steps: Vec<String>,
    /// Alternate screen that also shows the problem widget.
    pub alt_screen: ScreenLayout,
    pub alt_steps: Vec<String>,
}

/// Color transform applied to every rendered pixel of a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Theme {
    pub channels: [usize; 3],
    pub offset: i16,
    pub background: [u8; 3],
}

impl Default for Theme {
    fn default() -> Self {
        Theme {
            channels: [0, 1, 2],
            offset: 0,
            background: [250, 250, 250],
        }
    }
}

impl Theme {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut channels = [0, 1, 2];
        channels.shuffle(rng);
        let dark = rng.gen_bool(0.3);
        Theme {
            channels,
            offset: rng.gen_range(-40..=40),
            background: if dark {
                [rng.gen_range(20..50), rng.gen_range(20..50), rng.gen_range(20..60)]
            } else {
                [rng.gen_range(215..=255), rng.gen_range(215..=255), rng.gen_range(215..=255)]
            },
        }
    }

    fn apply(&self, c: [u8; 3]) -> Rgb<u8> {
        let shift = |v: u8| (v as i16 + self.offset).clamp(0, 255) as u8;
        Rgb([
            shift(c[self.channels[0]]),
            shift(c[self.channels[1]]),
            shift(c[self.channels[2]]),
        ])
    }
}

struct Canvas<'a> {
    img: &'a mut RgbImage,
    theme: Theme,
}

impl Canvas<'_> {
    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            let px = self.theme.apply(c);
            self.img.put_pixel(x as u32, y as u32, px);
        }
    }

    fn fill(&mut self, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    fn outline(&mut self, x: i64, y: i64, w: i64, h: i64, t: i64, c: [u8; 3]) {
        self.fill(x, y, w, t, c);
        self.fill(x, y + h - t, w, t, c);
        self.fill(x, y, t, h, c);
        self.fill(x + w - t, y, t, h, c);
    }

    /// Pixels whose distance from the center lies in `[inner, outer]`.
    fn ring(&mut self, cx: f64, cy: f64, inner: f64, outer: f64, c: [u8; 3]) {
        let (x0, x1) = ((cx - outer).floor() as i64, (cx + outer).ceil() as i64);
        let (y0, y1) = ((cy - outer).floor() as i64, (cy + outer).ceil() as i64);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                if d >= inner && d <= outer {
                    self.put(x, y, c);
                }
            }
        }
    }

    /// Blocky 3x5 glyphs derived from each character's hash.
    fn text(&mut self, x: i64, y: i64, max_w: i64, text: &str, c: [u8; 3]) {
        let mut cx = x;
        for ch in text.chars() {
            if cx + 3 > x + max_w {
                break;
            }
            if !ch.is_whitespace() {
                let bits = stable_hash(&ch.to_string()) | 0b100_0000_0000_0001;
                for i in 0..15 {
                    if bits >> i & 1 == 1 {
                        self.put(cx + (i % 3) as i64, y + (i / 3) as i64, c);
                    }
                }
            }
            cx += 4;
        }
    }
}

const DARK: [u8; 3] = [33, 33, 33];
const WHITE: [u8; 3] = [255, 255, 255];

/// Default (width, height) of each widget type.
pub fn default_size(t: WidgetType) -> (u32, u32) {
    match t {
        WidgetType::Btn => (84, 28),
        WidgetType::Chb => (20, 20),
        WidgetType::Ctv => (120, 24),
        WidgetType::Edt => (140, 30),
        WidgetType::Imb => (36, 36),
        WidgetType::Imv => (96, 64),
        WidgetType::Pbh => (140, 8),
        WidgetType::Pbv => (40, 40),
        WidgetType::Rbu => (20, 20),
        WidgetType::Rba => (100, 20),
        WidgetType::Skb => (140, 20),
        WidgetType::Swc => (40, 22),
        WidgetType::Spn => (120, 32),
        WidgetType::Txv => (110, 18),
    }
}

/// Types that carry a visible label.
pub fn has_label(t: WidgetType) -> bool {
    matches!(
        t,
        WidgetType::Btn | WidgetType::Ctv | WidgetType::Edt | WidgetType::Spn | WidgetType::Txv
    )
}

/// Draws one widget of type `t` into `rect` of `img`; `tint` jitters colors.
pub fn draw_widget(img: &mut RgbImage, rect: Rect, t: WidgetType, text: Option<&str>, theme: Theme, tint: i16) {
    let mut cv = Canvas { img, theme };
    let (x, y, w, h) = (rect.x as i64, rect.y as i64, rect.w as i64, rect.h as i64);
    let j = |c: [u8; 3]| c.map(|v| (v as i16 + tint).clamp(0, 255) as u8);
    let label = text.unwrap_or("");
    match t {
        WidgetType::Btn => {
            cv.fill(x, y, w, h, j([33, 150, 243]));
            cv.text(x + 6, y + h / 2 - 2, w - 12, label, WHITE);
        }
        WidgetType::Chb => {
            cv.fill(x, y, w, h, WHITE);
            cv.outline(x, y, w, h, 2, j([97, 97, 97]));
            for k in 0..w.min(h) / 2 {
                cv.fill(x + w / 4 + k, y + h / 2 + k / 2 - 1, 2, 2, j([76, 175, 80]));
            }
        }
        WidgetType::Ctv => {
            cv.fill(x, y, w, h, j([240, 240, 240]));
            cv.text(x + 4, y + h / 2 - 2, w - 24, label, DARK);
            cv.fill(x + w - 16, y + h / 2 - 2, 10, 4, j([76, 175, 80]));
        }
        WidgetType::Edt => {
            cv.fill(x, y, w, h, WHITE);
            cv.fill(x, y + h - 2, w, 2, j([158, 158, 158]));
            cv.text(x + 4, y + h / 2 - 3, w - 8, label, j([117, 117, 117]));
        }
        WidgetType::Imb => {
            cv.fill(x, y, w, h, j([255, 152, 0]));
            cv.fill(x + w / 2 - 2, y + h / 4, 4, h / 2, WHITE);
            cv.fill(x + w / 4, y + h / 2 - 2, w / 2, 4, WHITE);
        }
        WidgetType::Imv => {
            for yy in 0..h {
                for xx in 0..w {
                    let c = [(xx * 255 / w.max(1)) as u8, (yy * 255 / h.max(1)) as u8, 128];
                    cv.put(x + xx, y + yy, j(c));
                }
            }
        }
        WidgetType::Pbh => {
            cv.fill(x, y, w, h, j([224, 224, 224]));
            cv.fill(x, y, w * 3 / 5, h, j([0, 150, 136]));
        }
        WidgetType::Pbv => {
            let r = w.min(h) as f64 / 2.0;
            cv.ring(x as f64 + w as f64 / 2.0, y as f64 + h as f64 / 2.0, r - 5.0, r, j([156, 39, 176]));
        }
        WidgetType::Rbu => {
            let (cx, cy) = (x as f64 + w as f64 / 2.0, y as f64 + h as f64 / 2.0);
            let r = w.min(h) as f64 / 2.0;
            cv.ring(cx, cy, r - 2.0, r, j([233, 30, 99]));
            cv.ring(cx, cy, 0.0, r / 2.5, j([233, 30, 99]));
        }
        WidgetType::Rba => {
            let step = w / 5;
            for k in 0..5 {
                let (cx, cy) = (x + k * step + step / 2, y + h / 2);
                for d in 0..h / 2 {
                    cv.fill(cx - (h / 2 - d) / 2, cy - d, h / 2 - d, 1, j([255, 193, 7]));
                    cv.fill(cx - (h / 2 - d) / 2, cy + d, h / 2 - d, 1, j([255, 193, 7]));
                }
            }
        }
        WidgetType::Skb => {
            cv.fill(x, y + h / 2 - 2, w, 4, j([159, 168, 218]));
            let r = h as f64 / 2.0;
            cv.ring(x as f64 + w as f64 * 0.4, y as f64 + r, 0.0, r, j([63, 81, 181]));
        }
        WidgetType::Swc => {
            cv.fill(x, y, w, h, j([139, 195, 74]));
            let r = h as f64 / 2.0 - 2.0;
            cv.ring(x as f64 + w as f64 - r - 2.0, y as f64 + h as f64 / 2.0, 0.0, r, WHITE);
        }
        WidgetType::Spn => {
            cv.fill(x, y, w, h, j([224, 224, 224]));
            cv.text(x + 4, y + h / 2 - 2, w - 24, label, DARK);
            for d in 0..5 {
                cv.fill(x + w - 16 + d, y + h / 2 - 2 + d, 10 - 2 * d, 1, DARK);
            }
        }
        WidgetType::Txv => {
            cv.text(x, y + h / 2 - 2, w, label, DARK);
        }
    }
}

/// One jittered crop of widget type `t` on a default-theme background.
pub fn render_widget_crop(t: WidgetType, rng: &mut impl Rng) -> (RgbImage, bool) {
    let (bw, bh) = default_size(t);
    let scale = rng.gen_range(0.9..1.1);
    let w = ((bw as f64 * scale).round() as u32).max(4);
    let h = ((bh as f64 * rng.gen_range(0.9..1.1)).round() as u32).max(4);
    let theme = Theme::default();
    let mut img = RgbImage::from_pixel(w, h, theme.apply(theme.background));
    let text = has_label(t).then(|| random_word(rng));
    let tint = rng.gen_range(-10..=10);
    draw_widget(&mut img, Rect::new(0, 0, w, h), t, text.as_deref(), theme, tint);
    (img, text.is_some())
}

fn random_word(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(3..9);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// `per_class` rendered crops for each of the 14 widget types.
pub fn widget_training_set(per_class: usize, seed: u64) -> Vec<WidgetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(per_class * WidgetType::ALL.len());
    for t in WidgetType::ALL {
        for _ in 0..per_class {
            let (crop, text_present) = render_widget_crop(t, &mut rng);
            samples.push(WidgetSample {
                crop,
                text_present,
                widget_type: t,
            });
        }
    }
    samples
}

/// The reference widget classifier, trained on rendered crops.
pub fn default_widget_model() -> WidgetTypeModel {
    let samples = widget_training_set(DEFAULT_WIDGET_SAMPLES_PER_CLASS, DEFAULT_WIDGET_SEED);
    vision::train_widget_classifier(&samples, &WidgetType::ALL).expect("every class is rendered")
}

/// Writes a widget training directory: one PNG per crop plus `samples.json`.
pub fn write_widget_dataset(dir: &Path, per_class: usize, seed: u64) -> Result<(), SynthError> {
    let mut entries = Vec::new();
    let mut counters: BTreeMap<WidgetType, usize> = BTreeMap::new();
    for s in widget_training_set(per_class, seed) {
        let k = counters.entry(s.widget_type).or_default();
        let rel = format!("{}/{:03}.png", s.widget_type.code(), k);
        *k += 1;
        let path = dir.join(&rel);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        write_atomic(&path, &encode_png(&s.crop)?)?;
        entries.push(json!({"image": rel, "type": s.widget_type, "text_present": s.text_present}));
    }
    let classes: Vec<&str> = WidgetType::ALL.iter().map(|t| t.code()).collect();
    write_json_atomic(&dir.join("samples.json"), &json!({"classes": classes, "samples": entries}))?;
    Ok(())
}

fn encode_png(img: &RgbImage) -> Result<Vec<u8>, SynthError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

const LABEL_WORDS: &[&str] = &[
    "wallet", "transfer", "history", "balance", "profile", "coupon", "invoice", "ticket", "album",
    "playlist", "lyrics", "chapter", "bookmark", "library", "account", "password", "username",
    "amount", "payee", "receipt", "budget", "savings", "loan", "credit", "deposit", "statement",
    "rewards", "points", "cart", "checkout", "order", "delivery", "address", "voucher", "gift",
    "member", "friends", "message", "comment", "share", "favorite", "download", "upload", "lesson",
    "quiz", "course", "teacher", "video", "song", "artist", "radio", "podcast", "novel", "author",
    "shelf", "notes", "weather", "calendar", "reminder", "alarm", "battery", "storage", "network",
    "privacy", "language", "theme", "font", "brightness", "volume", "bluetooth", "location",
    "camera", "gallery", "contacts", "dialer", "recorder", "scanner", "compass", "translator",
    "dictionary", "recipe", "fitness", "steps", "sleep", "water", "diet", "doctor", "hospital",
    "insurance", "tax", "stock", "fund", "exchange", "currency", "bill", "utility", "parking",
    "taxi", "flight", "hotel", "map", "route", "station", "coffee", "menu", "table", "booking",
    "review", "rating", "feedback", "support", "faq", "about", "version", "update", "logout",
    "login", "signup", "captcha", "avatar", "nickname", "badge", "level", "score", "ranking",
];

fn type_word(t: WidgetType) -> &'static str {
    match t {
        WidgetType::Btn => "button",
        WidgetType::Edt => "field",
        WidgetType::Txv => "label",
        WidgetType::Spn => "dropdown",
        WidgetType::Ctv => "checkbox",
        _ => "widget",
    }
}

const BUG_CUES: &[&str] = &[
    "does not respond",
    "crashes with an error",
    "is missing and nothing happens",
    "fails with an error",
    "freezes and crashes",
    "is blank with no response",
    "is broken and does not respond",
    "crashes unexpectedly",
    "is stuck and fails",
    "fails and is missing",
    "freezes with an error",
    "is garbled and crashes",
];

const STEP_VERBS: &[&str] = &["Tap", "Click", "Press", "Select"];

/// Hands out label words without repeats, skipping lexicon words.
struct WordPool {
    words: Vec<String>,
    next: usize,
}

impl WordPool {
    fn new(rng: &mut impl Rng, lex: &Lexicons) -> Self {
        let mut words: Vec<String> = LABEL_WORDS
            .iter()
            .filter(|w| {
                !lex.stopwords.contains(**w)
                    && !lex.actions.contains(**w)
                    && !lex.bug_cues.contains(**w)
                    && !lex.widget_types.contains_key(**w)
            })
            .map(|w| w.to_string())
            .collect();
        words.shuffle(rng);
        WordPool { words, next: 0 }
    }

    fn take(&mut self) -> String {
        let i = self.next;
        self.next += 1;
        let base = &self.words[i % self.words.len()];
        match i / self.words.len() {
            0 => base.clone(),
            round => format!("{base}{round}"),
        }
    }
}

fn layout(name: String, mut specs: Vec<(WidgetType, Option<String>)>, rng: &mut impl Rng) -> ScreenLayout {
    specs[1..].shuffle(rng);
    let mut y = 12u32;
    let mut widgets = Vec::new();
    for (t, text) in specs {
        let (w, h) = default_size(t);
        if y + h + 8 > SCREEN_HEIGHT {
            break;
        }
        let x = rng.gen_range(8..=SCREEN_WIDTH - w - 8);
        widgets.push(PlacedWidget {
            widget_type: t,
            bbox: Rect::new(x, y, w, h),
            text,
        });
        y += h + 10;
    }
    ScreenLayout { name, widgets }
}

const LABELED: [WidgetType; 5] = [
    WidgetType::Btn,
    WidgetType::Edt,
    WidgetType::Txv,
    WidgetType::Spn,
    WidgetType::Ctv,
];

/// A screen with `problem` first, then two more labeled widgets and 3-5
/// random ones.
fn random_screen(
    name: String,
    problem: Option<PlacedWidget>,
    words: &mut WordPool,
    rng: &mut impl Rng,
) -> (ScreenLayout, usize) {
    let mut specs: Vec<(WidgetType, Option<String>)> = Vec::new();
    let first = match &problem {
        Some(p) => (p.widget_type, p.text.clone()),
        None => (*LABELED.choose(rng).expect("non-empty"), Some(words.take())),
    };
    specs.push(first);
    for _ in 0..2 {
        specs.push((*LABELED.choose(rng).expect("non-empty"), Some(words.take())));
    }
    // Guarantee an input field for the typed-input step.
    if !specs.iter().any(|(t, _)| *t == WidgetType::Edt) {
        specs.push((WidgetType::Edt, Some(words.take())));
    }
    for _ in 0..rng.gen_range(3..=5) {
        let t = *WidgetType::ALL.choose(rng).expect("non-empty");
        let text = has_label(t).then(|| words.take());
        specs.push((t, text));
    }
    let screen = layout(name, specs, rng);
    let problem_text = match &problem {
        Some(p) => p.text.clone(),
        None => None,
    };
    let index = match problem_text {
        Some(text) => screen.widgets.iter().position(|w| w.text.as_ref() == Some(&text)).unwrap_or(0),
        None => 0,
    };
    (screen, index)
}

fn title(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn steps_for(screen: &ScreenLayout, problem: &PlacedWidget, rng: &mut impl Rng) -> Vec<String> {
    let mut steps = vec![format!("Open the {} page", screen.name)];
    let others: Vec<&PlacedWidget> = screen
        .widgets
        .iter()
        .filter(|w| w.text.is_some() && w.text != problem.text)
        .collect();
    if let Some(edt) = others.iter().find(|w| w.widget_type == WidgetType::Edt) {
        let digits: String = (0..4).map(|_| rng.gen_range(b'0'..=b'9') as char).collect();
        steps.push(format!(
            "Input \"{digits}\" in the {} field",
            edt.text.as_deref().unwrap_or_default()
        ));
    }
    if let Some(other) = others.iter().find(|w| w.widget_type != WidgetType::Edt) {
        steps.push(format!(
            "{} the {} {}",
            STEP_VERBS.choose(rng).expect("non-empty"),
            other.text.as_deref().unwrap_or_default(),
            type_word(other.widget_type)
        ));
    }
    steps.push(format!(
        "{} the {} {}",
        STEP_VERBS.choose(rng).expect("non-empty"),
        problem.text.as_deref().unwrap_or_default(),
        type_word(problem.widget_type)
    ));
    steps
}

/// Generates the template of every category, in cluster order.
pub fn generate_templates(spec: &SynthSpec, lex: &Lexicons) -> Vec<CategoryTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = WordPool::new(&mut rng, lex);
    let mut cues: Vec<&str> = BUG_CUES.to_vec();
    cues.shuffle(&mut rng);
    let mut templates: Vec<CategoryTemplate> = Vec::new();
    for (k, cluster) in spec.clusters.iter().enumerate() {
        if let Some(t) = spec.templates.get(&cluster.category) {
            templates.push(t.clone());
            continue;
        }
        let partner = (spec.noise.shared_screen && k % 2 == 1).then(|| &templates[k - 1]);
        let (screen, problem) = match partner {
            Some(p) => {
                // Same screen, a different labeled widget is the problem.
                let screen = p.screen.clone();
                let problem = screen
                    .widgets
                    .iter()
                    .enumerate()
                    .position(|(i, w)| i != p.problem && w.text.is_some())
                    .unwrap_or(0);
                (screen, problem)
            }
            None => random_screen(words.take(), None, &mut words, &mut rng),
        };
        let problem_widget = screen.widgets[problem].clone();
        let (alt_screen, _) = random_screen(words.take(), Some(problem_widget.clone()), &mut words, &mut rng);
        let cue = cues[k % cues.len()];
        let bug_sentence = format!(
            "The {} {} {}",
            title(problem_widget.text.as_deref().unwrap_or_default()),
            type_word(problem_widget.widget_type),
            cue
        );
        let steps = steps_for(&screen, &problem_widget, &mut rng);
        let mut alt_steps = steps.clone();
        alt_steps[0] = format!("Open the {} page", alt_screen.name);
        templates.push(CategoryTemplate {
            screen,
            problem,
            bug_sentence,
            steps,
            alt_screen,
            alt_steps,
        });
    }
    templates
}

fn render_screen(layout: &ScreenLayout, theme: Theme) -> RgbImage {
    let mut img = RgbImage::from_pixel(SCREEN_WIDTH, SCREEN_HEIGHT, theme.apply(theme.background));
    for w in &layout.widgets {
        draw_widget(&mut img, w.bbox, w.widget_type, w.text.as_deref(), theme, 0);
    }
    img
}

fn report_text(steps: &[String], bug: &str) -> String {
    let mut s: Vec<String> = steps.iter().map(|s| format!("{s}.")).collect();
    s.push(format!("{bug}."));
    s.join(" ")
}

/// Writes the corpus described by `spec` into `out` and loads it back.
pub fn generate(spec: &SynthSpec, out: &Path) -> Result<(Corpus, LabelMap), SynthError> {
    spec.validate()?;
    let lex = Lexicons::default();
    let templates = generate_templates(spec, &lex);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);

    // (category index, member index) in a seeded shuffle.
    let mut slots: Vec<(usize, usize)> = spec
        .clusters
        .iter()
        .enumerate()
        .flat_map(|(k, c)| (0..c.size).map(move |j| (k, j)))
        .collect();
    slots.shuffle(&mut rng);

    let width = spec.total_size().to_string().len().max(3);
    let mut ids = Vec::with_capacity(slots.len());
    let mut labels = BTreeMap::new();
    for (n, &(k, member)) in slots.iter().enumerate() {
        let id = format!("r{:0width$}", n + 1);
        let template = &templates[k];
        let alt = spec.noise.same_bug_different_screens && member > 0 && rng.gen_bool(1.0 / 3.0);
        let theme = if spec.noise.theme_shift {
            Theme::random(&mut rng)
        } else {
            Theme::default()
        };
        let (screen, steps) = if alt {
            (&template.alt_screen, &template.alt_steps)
        } else {
            (&template.screen, &template.steps)
        };
        write_report(out, &id, screen, &report_text(steps, &template.bug_sentence), theme)?;
        labels.insert(id.clone(), spec.clusters[k].category.clone());
        ids.push(id);
    }

    write_json_atomic(
        &out.join("manifest.json"),
        &json!({"app_id": spec.app_id, "reports": ids, "format_version": corpus::FORMAT_VERSION}),
    )?;
    write_json_atomic(&out.join("labels.json"), &labels)?;

    let corpus = corpus::load_corpus(out)?;
    let labels = corpus::load_labels(&out.join("labels.json"), &corpus)?;
    Ok((corpus, labels))
}

fn write_report(out: &Path, id: &str, screen: &ScreenLayout, text: &str, theme: Theme) -> Result<PathBuf, SynthError> {
    let dir = out.join("reports").join(id);
    fs::create_dir_all(&dir)?;
    let img = render_screen(screen, theme);
    write_atomic(&dir.join("screenshot.png"), &encode_png(&img)?)?;
    let annotations: Vec<_> = screen
        .widgets
        .iter()
        .map(|w| {
            let mut a = json!({"bbox": [w.bbox.x, w.bbox.y, w.bbox.w, w.bbox.h], "type": w.widget_type});
            if let Some(t) = &w.text {
                a["text"] = json!(title(t));
            }
            a
        })
        .collect();
    write_json_atomic(
        &dir.join("report.json"),
        &json!({"id": id, "text": text, "screenshot": "screenshot.png", "annotations": annotations}),
    )?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_deep_feature, Models};
    use crate::nlp;

    fn models() -> Models {
        let lex = Lexicons::default();
        Models {
            widget: default_widget_model(),
            sentence: nlp::train_sentence_classifier(&nlp::bundled_sentence_samples(), &lex.stopwords).unwrap(),
        }
    }

    fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn zero_noise_cluster_has_identical_features() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(3, &[("b1", 2)], NoiseSpec::default());
        let (corpus, labels) = generate(&spec, tmp.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(labels.category_count(), 1);
        let m = models();
        let lex = Lexicons::default();
        let a = build_deep_feature(&corpus.reports[0], &m, &lex).feature;
        let b = build_deep_feature(&corpus.reports[1], &m, &lex).feature;
        assert_eq!(
            crate::features::DeepFeature {
                report_id: b.report_id.clone(),
                ..a
            },
            b
        );
    }

    #[test]
    fn theme_shift_changes_pixels_only() {
        let tmp = tempfile::tempdir().unwrap();
        let noise = NoiseSpec {
            theme_shift: true,
            ..NoiseSpec::default()
        };
        let (corpus, _) = generate(&SynthSpec::new(11, &[("b1", 4)], noise), tmp.path()).unwrap();
        let m = models();
        let lex = Lexicons::default();
        let fs: Vec<_> = corpus.reports.iter().map(|r| build_deep_feature(r, &m, &lex).feature).collect();
        for f in &fs[1..] {
            assert_eq!(f.context_histogram, fs[0].context_histogram);
            assert_eq!(f.reproduction_sequence, fs[0].reproduction_sequence);
            assert_eq!(f.bug_description_embedding, fs[0].bug_description_embedding);
        }
        let distinct: BTreeSet<Vec<u8>> = corpus.reports.iter().map(|r| r.screenshot.as_raw().clone()).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn fixed_seed_gives_identical_bytes() {
        let spec = SynthSpec::new(5, &[("b1", 3), ("b2", 2), ("b3", 1)], NoiseSpec::all());
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (_, labels) = generate(&spec, a.path()).unwrap();
        generate(&spec, b.path()).unwrap();
        assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
        assert_eq!(labels.category_count(), 3);
    }

    #[test]
    fn generated_text_routes_to_the_right_bucket() {
        let lex = Lexicons::default();
        let m = models();
        for seed in 0..10 {
            let spec = SynthSpec::new(seed, &[("a", 1), ("b", 1), ("c", 1), ("d", 1)], NoiseSpec::all());
            for t in generate_templates(&spec, &lex) {
                let (bugs, steps) = nlp::classify_report_text(&report_text(&t.steps, &t.bug_sentence), &m.sentence, &lex.stopwords);
                assert_eq!(bugs, vec![t.bug_sentence.clone()], "seed {seed}: {:?}", t.steps);
                assert_eq!(steps, t.steps);
                let phrase = nlp::extract_problem_phrase(&bugs, &lex);
                let loc = vision::locate_problem_widget(
                    t.screen
                        .widgets
                        .iter()
                        .map(|w| vision::Widget {
                            text: w.text.as_deref().map(title),
                            widget_type: Some(w.widget_type),
                            ..vision::Widget::from_screenshot(&render_screen(&t.screen, Theme::default()), w.bbox)
                        })
                        .collect(),
                    &phrase,
                    &lex,
                    &m.widget,
                )
                .unwrap();
                assert_eq!(loc.problem.bbox, t.screen.widgets[t.problem].bbox);
            }
        }
    }

    #[test]
    fn shared_screen_pairs_share_layouts() {
        let lex = Lexicons::default();
        let noise = NoiseSpec {
            shared_screen: true,
            ..NoiseSpec::default()
        };
        let t = generate_templates(&SynthSpec::new(9, &[("a", 1), ("b", 1), ("c", 1)], noise), &lex);
        assert_eq!(t[0].screen, t[1].screen);
        assert_ne!(t[0].problem, t[1].problem);
        assert_ne!(t[1].screen, t[2].screen);
    }

    #[test]
    fn invalid_specs_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            generate(&SynthSpec::new(1, &[], NoiseSpec::default()), tmp.path()),
            Err(SynthError::Spec(_))
        ));
        assert!(matches!(
            generate(&SynthSpec::new(1, &[("a", 0)], NoiseSpec::default()), tmp.path()),
            Err(SynthError::Spec(_))
        ));
        assert!(matches!(
            generate(&SynthSpec::new(1, &[("a", 1), ("a", 2)], NoiseSpec::default()), tmp.path()),
            Err(SynthError::Spec(_))
        ));
    }

    #[test]
    fn widget_classifier_generalizes_to_held_out_crops() {
        let model = default_widget_model();
        let held_out = widget_training_set(50, 12345);
        let correct = held_out
            .iter()
            .filter(|s| model.predict(&vision::widget_features(&s.crop, s.text_present)).0 == s.widget_type)
            .count();
        let accuracy = correct as f64 / held_out.len() as f64;
        assert!(accuracy >= 0.9, "accuracy {accuracy}");
    }
}
