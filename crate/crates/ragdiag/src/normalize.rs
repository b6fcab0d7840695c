//! Medical normalization pre-processing applied to contexts, answers, and
//! ground truths before any metric computation.
//!
//! The pipeline is fixed: general cleanup, abbreviation expansion on word
//! boundaries, age-threshold canonicalization, gender unification. The fixed
//! order plus the load-time invariants make `normalize_text` idempotent.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_RULES_JSON: &str = include_str!("../assets/default_normalization.json");

/// Punctuation removed by `strip_punctuation`. Comparison operators and the
/// unicode inequality signs are kept so canonical age forms survive a second
/// normalization pass.
const STRIP_CHARS: &[char] = &[
    '.', ',', ':', '!', '?', '\'', '"', '(', ')', '[', ']', '{', '}', '`', '*', '#', '|', '\u{2018}',
    '\u{2019}', '\u{201c}', '\u{201d}', '\u{2022}',
];

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed rules file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("duplicate abbreviation key after case-folding: {0:?}")]
    DuplicateKey(String),
    #[error("expansion of {key:?} contains rule key {inner:?}; rewrite cycles are not allowed")]
    Cycle { key: String, inner: String },
    #[error("invalid age pattern {pattern:?}: {source}")]
    InvalidPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralFlags {
    pub lowercase: bool,
    pub collapse_whitespace: bool,
    pub strip_punctuation: bool,
}

impl Default for GeneralFlags {
    fn default() -> Self {
        Self {
            lowercase: true,
            collapse_whitespace: true,
            strip_punctuation: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgePattern {
    pub pattern: String,
    pub canonical: String,
}

/// Raw rules document as stored on disk.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RulesFile {
    #[serde(default)]
    abbreviations: BTreeMap<String, String>,
    #[serde(default)]
    age_patterns: Vec<AgePattern>,
    #[serde(default)]
    gender_synonyms: BTreeMap<String, String>,
    #[serde(default)]
    general: GeneralFlags,
}

/// Compiled, invariant-checked normalization rules.
#[derive(Debug, Clone)]
pub struct NormalizationRules {
    pub abbreviation_map: BTreeMap<String, String>,
    pub age_patterns: Vec<AgePattern>,
    pub gender_synonyms: BTreeMap<String, String>,
    pub general: GeneralFlags,
    compiled_age: Vec<(Regex, String)>,
}

impl NormalizationRules {
    /// Rules with empty maps and all general flags off; `normalize_text`
    /// with these rules is the identity function.
    pub fn identity() -> Self {
        Self::from_file_struct(RulesFile {
            general: GeneralFlags {
                lowercase: false,
                collapse_whitespace: false,
                strip_punctuation: false,
            },
            ..RulesFile::default()
        })
        .expect("empty rules are valid")
    }

    /// The built-in default rule set.
    pub fn default_rules() -> Self {
        parse_rules(DEFAULT_RULES_JSON).expect("bundled default rules are valid")
    }

    fn from_file_struct(file: RulesFile) -> Result<Self, RulesError> {
        let mut abbreviation_map = BTreeMap::new();
        for (key, value) in &file.abbreviations {
            let folded = key.to_lowercase();
            if abbreviation_map.insert(folded.clone(), value.clone()).is_some() {
                return Err(RulesError::DuplicateKey(folded));
            }
        }
        let mut gender_synonyms = BTreeMap::new();
        for (key, value) in &file.gender_synonyms {
            let folded = key.to_lowercase();
            if gender_synonyms.insert(folded.clone(), value.clone()).is_some() {
                return Err(RulesError::DuplicateKey(folded));
            }
        }

        // Reject any expansion that reintroduces a rule key as a whole token.
        // This forbids rewrite cycles and makes single-pass expansion
        // idempotent.
        for (key, expansion) in abbreviation_map.iter().chain(gender_synonyms.iter()) {
            for token in crate::text::tokenize(expansion) {
                let folded = token.to_lowercase();
                if abbreviation_map.contains_key(&folded) || gender_synonyms.contains_key(&folded) {
                    return Err(RulesError::Cycle {
                        key: key.clone(),
                        inner: folded,
                    });
                }
            }
        }

        let mut compiled_age = Vec::new();
        for ap in &file.age_patterns {
            let re = Regex::new(&ap.pattern).map_err(|source| RulesError::InvalidPattern {
                pattern: ap.pattern.clone(),
                source,
            })?;
            compiled_age.push((re, ap.canonical.clone()));
        }

        Ok(Self {
            abbreviation_map,
            age_patterns: file.age_patterns,
            gender_synonyms,
            general: file.general,
            compiled_age,
        })
    }
}

fn parse_rules(json: &str) -> Result<NormalizationRules, RulesError> {
    let file: RulesFile = serde_json::from_str(json)?;
    NormalizationRules::from_file_struct(file)
}

/// Loads a JSON rules document; `None` yields the built-in defaults.
pub fn load_rules(path: Option<&Path>) -> Result<NormalizationRules, RulesError> {
    match path {
        None => Ok(NormalizationRules::default_rules()),
        Some(path) => {
            let json = std::fs::read_to_string(path).map_err(|source| RulesError::Io {
                path: path.display().to_string(),
                source,
            })?;
            parse_rules(&json)
        }
    }
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{N}_]+").unwrap())
}

fn replace_tokens(text: &str, map: &BTreeMap<String, String>) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    word_re()
        .replace_all(text, |caps: &regex::Captures| {
            let token = &caps[0];
            match map.get(&token.to_lowercase()) {
                Some(expansion) => expansion.clone(),
                None => token.to_string(),
            }
        })
        .into_owned()
}

/// Applies general cleanup, abbreviation expansion, age canonicalization,
/// and gender unification, in that order. Deterministic and idempotent.
pub fn normalize_text(text: &str, rules: &NormalizationRules) -> String {
    let mut out = text.to_string();

    if rules.general.lowercase {
        out = out.to_lowercase();
    }
    if rules.general.strip_punctuation {
        out = out
            .chars()
            .map(|c| if STRIP_CHARS.contains(&c) { ' ' } else { c })
            .collect();
    }
    if rules.general.collapse_whitespace {
        out = out.split_whitespace().collect::<Vec<_>>().join(" ");
    }

    out = replace_tokens(&out, &rules.abbreviation_map);

    for (re, canonical) in &rules.compiled_age {
        out = re.replace_all(&out, canonical.as_str()).into_owned();
    }

    out = replace_tokens(&out, &rules.gender_synonyms);

    if rules.general.collapse_whitespace {
        out = out.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    out
}
