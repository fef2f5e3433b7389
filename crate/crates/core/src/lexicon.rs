//! Editable word lists used by the text pipeline and problem-widget lookup.
//!
//! Stopwords, action words and bug cues are UTF-8 files with one token per
//! line (blank lines and `#` comments are skipped). The type lexicon is a
//! JSON object mapping a word to the widget type codes it refers to.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::vision::WidgetType;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const DEFAULT_ACTIONS: &str = include_str!("../data/actions.txt");
const DEFAULT_BUG_CUES: &str = include_str!("../data/bug_cues.txt");
const DEFAULT_TYPE_LEXICON: &str = include_str!("../data/type_lexicon.json");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed type lexicon: {0}")]
    Malformed(String),
}

pub type TokenSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicons {
    pub stopwords: TokenSet,
    pub actions: TokenSet,
    pub bug_cues: TokenSet,
    /// Word -> widget types it names, for problem-widget fallback lookup.
    pub widget_types: BTreeMap<String, Vec<WidgetType>>,
}

impl Default for Lexicons {
    fn default() -> Self {
        Lexicons {
            stopwords: parse_token_list(DEFAULT_STOPWORDS),
            actions: parse_token_list(DEFAULT_ACTIONS),
            bug_cues: parse_token_list(DEFAULT_BUG_CUES),
            widget_types: parse_type_lexicon(DEFAULT_TYPE_LEXICON)
                .expect("bundled type lexicon is valid"),
        }
    }
}

/// Optional file overrides; `None` keeps the bundled default.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LexiconPaths {
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    #[serde(default)]
    pub actions: Option<PathBuf>,
    #[serde(default)]
    pub bug_cues: Option<PathBuf>,
    #[serde(default)]
    pub widget_types: Option<PathBuf>,
}

impl Lexicons {
    pub fn load(paths: &LexiconPaths) -> Result<Self, LexiconError> {
        let mut lex = Lexicons::default();
        if let Some(p) = &paths.stopwords {
            lex.stopwords = parse_token_list(&read(p)?);
        }
        if let Some(p) = &paths.actions {
            lex.actions = parse_token_list(&read(p)?);
        }
        if let Some(p) = &paths.bug_cues {
            lex.bug_cues = parse_token_list(&read(p)?);
        }
        if let Some(p) = &paths.widget_types {
            lex.widget_types = parse_type_lexicon(&read(p)?)?;
        }
        Ok(lex)
    }

    pub fn is_action(&self, token: &str) -> bool {
        self.actions.contains(token)
    }
}

fn read(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_token_list(text: &str) -> TokenSet {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn parse_type_lexicon(json: &str) -> Result<BTreeMap<String, Vec<WidgetType>>, LexiconError> {
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(json).map_err(|e| LexiconError::Malformed(e.to_string()))?;
    raw.into_iter()
        .map(|(word, codes)| {
            let types = codes
                .iter()
                .map(|c| {
                    WidgetType::from_code(c)
                        .ok_or_else(|| LexiconError::Malformed(format!("unknown widget type {c:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((word.to_lowercase(), types))
        })
        .collect()
}
