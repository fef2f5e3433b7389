//! Per-report feature aggregation.
//!
//! A [`DeepFeature`] holds the bug feature (problem-widget keypoints and
//! bug-description embedding) and the context feature (widget-type
//! histogram and reproduction action-object sequence). Nothing else about
//! a report reaches the similarity stage.

use std::fs;
use std::path::Path;

use image::RgbImage;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{corpus_stats, Corpus, CorpusStats, Report};
use crate::lexicon::Lexicons;
use crate::nlp::{self, ActionObjectSequence, SentenceModel, EMBEDDING_DIM};
use crate::vision::{self, Keypoint, KeypointSet, WidgetTypeModel, DESCRIPTOR_DIM, WIDGET_TYPE_COUNT};
use crate::NULL_REPORT_ID;

pub const FEATURES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFeature {
    pub report_id: String,
    pub problem_widget_keypoints: KeypointSet,
    pub bug_description_embedding: Vec<f64>,
    pub context_histogram: [u32; WIDGET_TYPE_COUNT],
    pub reproduction_sequence: ActionObjectSequence,
}

impl DeepFeature {
    pub fn is_null(&self) -> bool {
        self.report_id == NULL_REPORT_ID
    }
}

/// Trained models the pipeline needs.
#[derive(Debug, Clone)]
pub struct Models {
    pub widget: WidgetTypeModel,
    pub sentence: SentenceModel,
}

/// Conditions under which a report still yields a (degraded) feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureIssue {
    /// The screenshot produced no widgets: empty keypoints, zero histogram.
    NoWidgets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltFeature {
    pub feature: DeepFeature,
    pub issue: Option<FeatureIssue>,
}

pub fn build_deep_feature(report: &Report, models: &Models, lex: &Lexicons) -> BuiltFeature {
    let (bug_sentences, step_sentences) = match &report.nlp_override {
        Some(o) => (o.bug_sentences.clone(), o.step_sentences.clone()),
        None => nlp::classify_report_text(&report.text, &models.sentence, &lex.stopwords),
    };
    let phrase = nlp::extract_problem_phrase(&bug_sentences, lex);

    let widgets = vision::extract_widgets(report);
    let (keypoints, histogram, issue) =
        match vision::locate_problem_widget(widgets, &phrase, lex, &models.widget) {
            Some(loc) => (
                vision::extract_keypoints(&loc.problem.crop),
                vision::widget_type_histogram(&loc.context, &models.widget),
                None,
            ),
            None => (
                KeypointSet::default(),
                [0; WIDGET_TYPE_COUNT],
                Some(FeatureIssue::NoWidgets),
            ),
        };

    let embedding = match report.nlp_override.as_ref().and_then(|o| o.embedding.clone()) {
        Some(e) => e,
        None => {
            let tokens: Vec<String> = bug_sentences
                .iter()
                .flat_map(|s| nlp::tokenize(s, &lex.stopwords))
                .collect();
            nlp::embed_text(&tokens)
        }
    };

    BuiltFeature {
        feature: DeepFeature {
            report_id: report.id.clone(),
            problem_widget_keypoints: keypoints,
            bug_description_embedding: embedding,
            context_histogram: histogram,
            reproduction_sequence: nlp::extract_action_object_sequence(&step_sentences, lex),
        },
        issue,
    }
}

/// The artificial report that seeds the prioritized pool: an all-black
/// problem widget, an all-zero embedding and histogram, no steps.
pub fn null_report_feature(stats: &CorpusStats) -> DeepFeature {
    let (w, h) = stats.mean_widget_crop_size;
    let black = RgbImage::new(w.max(1), h.max(1));
    DeepFeature {
        report_id: NULL_REPORT_ID.to_string(),
        problem_widget_keypoints: vision::extract_keypoints(&black),
        bug_description_embedding: vec![0.0; EMBEDDING_DIM],
        context_histogram: [0; WIDGET_TYPE_COUNT],
        reproduction_sequence: Vec::new(),
    }
}

/// Features for every report in corpus order, followed by the NULL report.
pub fn build_corpus_features(corpus: &Corpus, models: &Models, lex: &Lexicons) -> Vec<DeepFeature> {
    let built: Vec<BuiltFeature> = corpus
        .reports
        .par_iter()
        .map(|r| build_deep_feature(r, models, lex))
        .collect();
    let mut features = Vec::with_capacity(built.len() + 1);
    for b in built {
        if b.issue == Some(FeatureIssue::NoWidgets) {
            warn!("report {}: no widgets found in screenshot", b.feature.report_id);
        }
        features.push(b.feature);
    }
    features.push(null_report_feature(&corpus_stats(corpus, None)));
    features
}

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("cannot read features: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed features: {0}")]
    Malformed(String),
}

#[derive(Serialize, Deserialize)]
struct FeaturesDoc {
    version: u32,
    features: Vec<FeatureDoc>,
}

#[derive(Serialize, Deserialize)]
struct FeatureDoc {
    report_id: String,
    keypoints: Vec<(u32, u32, Vec<f64>)>,
    embedding: Vec<f64>,
    histogram: Vec<u32>,
    sequence: ActionObjectSequence,
}

impl From<&DeepFeature> for FeatureDoc {
    fn from(f: &DeepFeature) -> Self {
        FeatureDoc {
            report_id: f.report_id.clone(),
            keypoints: f
                .problem_widget_keypoints
                .iter()
                .map(|k| (k.x, k.y, k.descriptor.clone()))
                .collect(),
            embedding: f.bug_description_embedding.clone(),
            histogram: f.context_histogram.to_vec(),
            sequence: f.reproduction_sequence.clone(),
        }
    }
}

impl TryFrom<FeatureDoc> for DeepFeature {
    type Error = FeatureFileError;

    fn try_from(doc: FeatureDoc) -> Result<Self, Self::Error> {
        let bad = |m: String| FeatureFileError::Malformed(format!("{}: {m}", doc.report_id));
        if doc.report_id.is_empty() {
            return Err(bad("empty report id".into()));
        }
        if doc.embedding.len() != EMBEDDING_DIM || doc.embedding.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("embedding must hold {EMBEDDING_DIM} finite reals")));
        }
        let histogram: [u32; WIDGET_TYPE_COUNT] = doc
            .histogram
            .as_slice()
            .try_into()
            .map_err(|_| bad(format!("histogram must hold {WIDGET_TYPE_COUNT} counts")))?;
        if doc
            .keypoints
            .iter()
            .any(|(_, _, d)| d.len() != DESCRIPTOR_DIM || d.iter().any(|v| !v.is_finite()))
        {
            return Err(bad(format!("descriptors must hold {DESCRIPTOR_DIM} finite reals")));
        }
        if doc.sequence.iter().any(|p| p.action.is_empty()) {
            return Err(bad("empty action".into()));
        }
        Ok(DeepFeature {
            problem_widget_keypoints: KeypointSet(
                doc.keypoints
                    .into_iter()
                    .map(|(x, y, descriptor)| Keypoint { x, y, descriptor })
                    .collect(),
            ),
            bug_description_embedding: doc.embedding,
            context_histogram: histogram,
            reproduction_sequence: doc.sequence,
            report_id: doc.report_id,
        })
    }
}

pub fn features_to_json(features: &[DeepFeature]) -> serde_json::Value {
    let doc = FeaturesDoc {
        version: FEATURES_VERSION,
        features: features.iter().map(FeatureDoc::from).collect(),
    };
    serde_json::to_value(doc).expect("features serialize")
}

pub fn features_from_json_str(json: &str) -> Result<Vec<DeepFeature>, FeatureFileError> {
    let doc: FeaturesDoc =
        serde_json::from_str(json).map_err(|e| FeatureFileError::Malformed(e.to_string()))?;
    if doc.version != FEATURES_VERSION {
        return Err(FeatureFileError::Malformed(format!(
            "unsupported version {}",
            doc.version
        )));
    }
    doc.features.into_iter().map(DeepFeature::try_from).collect()
}

pub fn load_features(path: &Path) -> Result<Vec<DeepFeature>, FeatureFileError> {
    features_from_json_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Rect, WidgetAnnotation};
    use crate::nlp::{train_sentence_classifier, ActionObjectPair, SentenceClass};
    use crate::vision::{train_widget_classifier, WidgetSample, WidgetType};
    use image::Rgb;

    fn models() -> Models {
        let lex = Lexicons::default();
        let sentence = train_sentence_classifier(
            &[
                ("the app crashes".to_string(), SentenceClass::BugDescription),
                ("button does not respond".to_string(), SentenceClass::BugDescription),
                ("click the menu".to_string(), SentenceClass::ReproductionStep),
                ("open settings".to_string(), SentenceClass::ReproductionStep),
            ],
            &lex.stopwords,
        )
        .unwrap();
        let widget = train_widget_classifier(
            &[WidgetSample {
                crop: RgbImage::from_pixel(8, 4, Rgb([200, 200, 200])),
                text_present: true,
                widget_type: WidgetType::Txv,
            }],
            &[WidgetType::Txv],
        )
        .unwrap();
        Models { widget, sentence }
    }

    fn fixture_report(id: &str) -> Report {
        let mut img = RgbImage::from_pixel(60, 40, Rgb([255, 255, 255]));
        for y in 5..15 {
            for x in 5..30 {
                img.put_pixel(x, y, Rgb([20, 20, 200]));
            }
        }
        Report {
            id: id.into(),
            app_id: "app".into(),
            text: "Open settings. The save button does not respond.".into(),
            screenshot: img,
            annotations: Some(vec![
                WidgetAnnotation {
                    bbox: Rect::new(5, 5, 25, 10),
                    text: Some("Save".into()),
                    widget_type: Some(WidgetType::Btn),
                },
                WidgetAnnotation {
                    bbox: Rect::new(0, 20, 60, 10),
                    text: Some("Title".into()),
                    widget_type: Some(WidgetType::Txv),
                },
                WidgetAnnotation {
                    bbox: Rect::new(40, 0, 10, 10),
                    text: None,
                    widget_type: Some(WidgetType::Imv),
                },
            ]),
            nlp_override: None,
        }
    }

    #[test]
    fn fixture_report_components() {
        let lex = Lexicons::default();
        let m = models();
        let report = fixture_report("r1");
        let built = build_deep_feature(&report, &m, &lex);
        assert_eq!(built.issue, None);
        let f = built.feature;
        assert_eq!(f.reproduction_sequence, vec![ActionObjectPair::new("open", &["settings"])]);
        let bug_tokens: Vec<String> = ["save", "button", "does", "not", "respond"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(f.bug_description_embedding, nlp::embed_text(&bug_tokens));
        let mut hist = [0u32; 14];
        hist[WidgetType::Txv.ordinal()] = 1;
        hist[WidgetType::Imv.ordinal()] = 1;
        assert_eq!(f.context_histogram, hist);
        let save_crop = image::imageops::crop_imm(&report.screenshot, 5, 5, 25, 10).to_image();
        assert_eq!(f.problem_widget_keypoints, vision::extract_keypoints(&save_crop));
        assert_eq!(f, build_deep_feature(&fixture_report("r1"), &m, &lex).feature);
    }

    #[test]
    fn blank_report_equals_null_feature() {
        let lex = Lexicons::default();
        let report = Report {
            id: "blank".into(),
            app_id: "a".into(),
            text: String::new(),
            screenshot: RgbImage::from_pixel(30, 30, Rgb([255, 255, 255])),
            annotations: None,
            nlp_override: None,
        };
        let built = build_deep_feature(&report, &models(), &lex);
        assert_eq!(built.issue, Some(FeatureIssue::NoWidgets));
        let null = null_report_feature(&CorpusStats {
            report_count: 1,
            bug_category_count: None,
            mean_widget_crop_size: (12, 7),
        });
        assert_eq!(
            DeepFeature {
                report_id: NULL_REPORT_ID.into(),
                ..built.feature
            },
            null
        );
    }

    #[test]
    fn null_feature_is_empty() {
        for size in [(1, 1), (40, 20)] {
            let null = null_report_feature(&CorpusStats {
                report_count: 3,
                bug_category_count: Some(2),
                mean_widget_crop_size: size,
            });
            assert!(null.is_null());
            assert!(null.problem_widget_keypoints.is_empty());
            assert!(null.bug_description_embedding.iter().all(|&v| v == 0.0));
            assert_eq!(null.bug_description_embedding.len(), 100);
            assert_eq!(null.context_histogram, [0; 14]);
            assert!(null.reproduction_sequence.is_empty());
        }
    }

    #[test]
    fn sidecar_overrides_text_pipeline() {
        let lex = Lexicons::default();
        let mut report = fixture_report("r2");
        let mut embedding = vec![0.0; 100];
        embedding[3] = 1.0;
        report.nlp_override = Some(crate::corpus::NlpOverride {
            bug_sentences: vec!["title garbled".into()],
            step_sentences: vec!["tap save".into()],
            embedding: Some(embedding.clone()),
        });
        let f = build_deep_feature(&report, &models(), &lex).feature;
        assert_eq!(f.bug_description_embedding, embedding);
        assert_eq!(f.reproduction_sequence, vec![ActionObjectPair::new("tap", &["save"])]);
        // "title" matches the Title widget, so Save moves into the context.
        assert_eq!(f.context_histogram[WidgetType::Btn.ordinal()], 1);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let lex = Lexicons::default();
        let f = build_deep_feature(&fixture_report("r1"), &models(), &lex).feature;
        let json = serde_json::to_string(&features_to_json(std::slice::from_ref(&f))).unwrap();
        assert_eq!(features_from_json_str(&json).unwrap(), vec![f]);
        let broken = json.replacen("\"histogram\":[", "\"histogram\":[1,", 1);
        assert!(features_from_json_str(&broken).is_err());
        assert!(features_from_json_str(r#"{"version":2,"features":[]}"#).is_err());
    }
}
