//! Text side of a report: sentence segmentation, bug-description versus
//! reproduction-step classification, bag-of-words embeddings and
//! action-object sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Lexicons, TokenSet};

pub const EMBEDDING_DIM: usize = 100;
pub const MODEL_VERSION: u32 = 1;

const SENTENCE_DELIMITERS: &[char] = &['.', '!', '?', '\n', ';', '。', '！', '？', '；'];
/// Actions whose quoted argument is kept as the pair's supplement.
const INPUT_ACTIONS: &[&str] = &["type", "input", "enter"];
const QUOTE_PAIRS: &[(char, char)] = &[('"', '"'), ('“', '”'), ('「', '」'), ('『', '』')];
const BUNDLED_SENTENCES: &str = include_str!("../data/sentences.tsv");

#[derive(Debug, Error, PartialEq)]
pub enum NlpError {
    #[error("no training sentences for class {0}")]
    EmptyClass(SentenceClass),
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("malformed sentence model: {0}")]
    MalformedModel(String),
    #[error("malformed sentence data: {0}")]
    MalformedData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceClass {
    BugDescription,
    ReproductionStep,
}

impl SentenceClass {
    pub const ALL: [SentenceClass; 2] = [SentenceClass::BugDescription, SentenceClass::ReproductionStep];
}

impl fmt::Display for SentenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SentenceClass::BugDescription => "bug_description",
            SentenceClass::ReproductionStep => "reproduction_step",
        })
    }
}

/// Splits on sentence punctuation (ASCII and CJK) and newlines.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split(SENTENCE_DELIMITERS)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FFFF)
}

fn is_joiner(c: char) -> bool {
    c == '-' || c == '\''
}

/// Lowercases, splits on whitespace and punctuation, drops stopwords.
///
/// Hyphens and apostrophes inside a word are kept ("long-press",
/// "doesn't"); CJK characters become single-character tokens.
pub fn tokenize(sentence: &str, stopwords: &TokenSet) -> Vec<String> {
    let lowered = sentence.to_lowercase().replace('’', "'");
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let t = current.trim_matches(is_joiner);
        if !t.is_empty() && !stopwords.contains(t) {
            tokens.push(t.to_string());
        }
        current.clear();
    };
    for c in lowered.chars() {
        if is_cjk(c) {
            flush(&mut current, &mut tokens);
            current.push(c);
            flush(&mut current, &mut tokens);
        } else if c.is_alphanumeric() || is_joiner(c) {
            current.push(c);
        } else {
            flush(&mut current, &mut tokens);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Multinomial naive Bayes over sentence tokens with add-one smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceModel {
    pub version: u32,
    pub priors: BTreeMap<SentenceClass, f64>,
    pub log_probs: BTreeMap<SentenceClass, BTreeMap<String, f64>>,
    pub vocab: Vec<String>,
}

impl SentenceModel {
    pub fn from_json_str(json: &str) -> Result<Self, NlpError> {
        let model: SentenceModel =
            serde_json::from_str(json).map_err(|e| NlpError::MalformedModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), NlpError> {
        let bad = |m: &str| Err(NlpError::MalformedModel(m.to_string()));
        if self.version != MODEL_VERSION {
            return bad("unsupported version");
        }
        let total: f64 = self.priors.values().sum();
        if self.priors.len() != 2 || (total - 1.0).abs() > 1e-9 {
            return bad("priors must cover both classes and sum to 1");
        }
        for class in SentenceClass::ALL {
            let Some(table) = self.log_probs.get(&class) else {
                return bad("missing class log-probabilities");
            };
            if self.vocab.iter().any(|t| !table.contains_key(t)) {
                return bad("vocabulary token without probability");
            }
        }
        Ok(())
    }

    /// Log posterior (up to a shared constant) of each class.
    pub fn log_scores(&self, tokens: &[String]) -> [f64; 2] {
        SentenceClass::ALL.map(|class| {
            let table = &self.log_probs[&class];
            let prior = self.priors[&class].ln();
            prior + tokens.iter().filter_map(|t| table.get(t)).sum::<f64>()
        })
    }
}

/// Parses `bug|step<TAB>sentence` lines; blank lines and `#` comments are skipped.
pub fn parse_sentence_tsv(text: &str) -> Result<Vec<(String, SentenceClass)>, NlpError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, sentence) = line
            .split_once('\t')
            .ok_or_else(|| NlpError::MalformedData(format!("line {}: expected label<TAB>sentence", n + 1)))?;
        let class = match label.trim() {
            "bug" => SentenceClass::BugDescription,
            "step" => SentenceClass::ReproductionStep,
            other => return Err(NlpError::MalformedData(format!("line {}: unknown label {other:?}", n + 1))),
        };
        out.push((sentence.trim().to_string(), class));
    }
    Ok(out)
}

/// The 60-sentence training fixture shipped with the crate.
pub fn bundled_sentence_samples() -> Vec<(String, SentenceClass)> {
    parse_sentence_tsv(BUNDLED_SENTENCES).expect("bundled fixture is well formed")
}

pub fn train_sentence_classifier(
    samples: &[(String, SentenceClass)],
    stopwords: &TokenSet,
) -> Result<SentenceModel, NlpError> {
    let mut doc_counts: BTreeMap<SentenceClass, usize> = BTreeMap::new();
    let mut token_counts: BTreeMap<SentenceClass, BTreeMap<String, usize>> = BTreeMap::new();
    let mut vocab = BTreeSet::new();
    for (sentence, class) in samples {
        *doc_counts.entry(*class).or_default() += 1;
        let counts = token_counts.entry(*class).or_default();
        for t in tokenize(sentence, stopwords) {
            *counts.entry(t.clone()).or_default() += 1;
            vocab.insert(t);
        }
    }
    for class in SentenceClass::ALL {
        if !doc_counts.contains_key(&class) {
            return Err(NlpError::EmptyClass(class));
        }
    }

    let n = samples.len() as f64;
    let v = vocab.len() as f64;
    let priors = SentenceClass::ALL
        .into_iter()
        .map(|c| (c, doc_counts[&c] as f64 / n))
        .collect();
    let log_probs = SentenceClass::ALL
        .into_iter()
        .map(|c| {
            let counts = token_counts.get(&c).cloned().unwrap_or_default();
            let total: usize = counts.values().sum();
            let denom = total as f64 + v;
            let table = vocab
                .iter()
                .map(|t| {
                    let k = counts.get(t).copied().unwrap_or(0) as f64;
                    (t.clone(), ((k + 1.0) / denom).ln())
                })
                .collect();
            (c, table)
        })
        .collect();
    Ok(SentenceModel {
        version: MODEL_VERSION,
        priors,
        log_probs,
        vocab: vocab.into_iter().collect(),
    })
}

/// Argmax posterior class; ties go to [`SentenceClass::BugDescription`].
pub fn classify_sentence(
    sentence: &str,
    model: &SentenceModel,
    stopwords: &TokenSet,
) -> Result<SentenceClass, NlpError> {
    let tokens = tokenize(sentence, stopwords);
    if tokens.is_empty() {
        return Err(NlpError::EmptySentence);
    }
    let [bug, step] = model.log_scores(&tokens);
    Ok(if step > bug {
        SentenceClass::ReproductionStep
    } else {
        SentenceClass::BugDescription
    })
}

/// Splits a report description into (bug sentences, step sentences).
pub fn classify_report_text(
    text: &str,
    model: &SentenceModel,
    stopwords: &TokenSet,
) -> (Vec<String>, Vec<String>) {
    let mut bugs = Vec::new();
    let mut steps = Vec::new();
    for sentence in split_sentences(text) {
        match classify_sentence(&sentence, model, stopwords) {
            Ok(SentenceClass::BugDescription) => bugs.push(sentence),
            Ok(SentenceClass::ReproductionStep) => steps.push(sentence),
            Err(_) => {}
        }
    }
    (bugs, steps)
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn stable_hash(token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    token
        .bytes()
        .fold(OFFSET, |h, b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Signed feature-hashing embedding, L2-normalized unless all-zero.
pub fn embed_text(tokens: &[String]) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    for t in tokens {
        let h = stable_hash(t);
        let bucket = (h % EMBEDDING_DIM as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Object words of the bug description: its tokens minus action words and
/// bug cues, in order.
pub fn extract_problem_phrase(bug_sentences: &[String], lex: &Lexicons) -> Vec<String> {
    bug_sentences
        .iter()
        .flat_map(|s| tokenize(s, &lex.stopwords))
        .filter(|t| !lex.actions.contains(t) && !lex.bug_cues.contains(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionObjectPair {
    pub action: String,
    pub object: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplement: Option<String>,
}

impl ActionObjectPair {
    pub fn new(action: &str, object: &[&str]) -> Self {
        ActionObjectPair {
            action: action.to_string(),
            object: object.iter().map(|s| s.to_string()).collect(),
            supplement: None,
        }
    }

    pub fn with_supplement(mut self, supplement: &str) -> Self {
        self.supplement = Some(supplement.to_string());
        self
    }
}

pub type ActionObjectSequence = Vec<ActionObjectPair>;

enum Segment {
    Text(String),
    Quote(String),
}

/// Splits `sentence` into plain text and quoted spans, in order. An
/// unterminated quote stays in the text.
fn quote_segments(sentence: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut text = String::with_capacity(sentence.len());
    let mut chars = sentence.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let close = QUOTE_PAIRS.iter().find(|(open, _)| *open == c).map(|p| p.1);
        if let Some(close) = close {
            let start = i + c.len_utf8();
            if let Some(end) = sentence[start..].find(close) {
                out.push(Segment::Text(std::mem::take(&mut text)));
                out.push(Segment::Quote(sentence[start..start + end].to_string()));
                let stop = start + end + close.len_utf8();
                while chars.peek().is_some_and(|(j, _)| *j < stop) {
                    chars.next();
                }
                continue;
            }
        }
        text.push(c);
    }
    out.push(Segment::Text(text));
    out
}

/// Scans step sentences for action words; each action opens a pair whose
/// object is every following non-action token up to the next action. A
/// quoted string following a type/input/enter action becomes its supplement.
pub fn extract_action_object_sequence(step_sentences: &[String], lex: &Lexicons) -> ActionObjectSequence {
    let mut seq = Vec::new();
    for sentence in step_sentences {
        let mut current: Option<ActionObjectPair> = None;
        for segment in quote_segments(sentence) {
            match segment {
                Segment::Quote(q) => {
                    if let Some(pair) = current.as_mut() {
                        if pair.supplement.is_none() && INPUT_ACTIONS.contains(&pair.action.as_str()) {
                            pair.supplement = Some(q);
                        }
                    }
                }
                Segment::Text(text) => {
                    for token in tokenize(&text, &lex.stopwords) {
                        if lex.is_action(&token) {
                            seq.extend(current.take());
                            current = Some(ActionObjectPair {
                                action: token,
                                object: Vec::new(),
                                supplement: None,
                            });
                        } else if let Some(pair) = current.as_mut() {
                            pair.object.push(token);
                        }
                    }
                }
            }
        }
        seq.extend(current);
    }
    seq
}
