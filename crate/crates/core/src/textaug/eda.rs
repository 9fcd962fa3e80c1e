use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TextAugError;

const BUNDLED_SYNONYMS: &str = include_str!("../../data/synonyms.tsv");

/// Resampling attempts when random insertion draws a word without synonyms.
const INSERTION_RETRIES: usize = 10;

/// Word to synonyms, loaded from `word<TAB>syn1,syn2,...` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SYNONYMS).expect("bundled synonym table is well formed")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextAugError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| TextAugError::SynonymTable {
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TextAugError> {
        let mut entries = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| TextAugError::SynonymTable {
                line: idx + 1,
                message: message.to_string(),
            };
            let (word, list) = line.split_once('\t').ok_or_else(|| err("missing tab separator"))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(err("empty headword"));
            }
            let mut syns = Vec::new();
            for s in list.split(',') {
                let s = s.trim().to_lowercase();
                if s.is_empty() {
                    return Err(err("empty synonym"));
                }
                if s.contains(char::is_whitespace) {
                    return Err(err("synonyms must be single words"));
                }
                if s != word && !syns.contains(&s) {
                    syns.push(s);
                }
            }
            entries.insert(word, syns);
        }
        Ok(Self { entries })
    }

    /// Synonyms of `word` other than the word itself.
    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdaOp {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
    RandomDeletion,
    /// One of the four word-level operations, chosen uniformly.
    Composite,
}

impl std::str::FromStr for EdaOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "synonym_replacement" | "sr" => Self::SynonymReplacement,
            "random_insertion" | "ri" => Self::RandomInsertion,
            "random_swap" | "rs" => Self::RandomSwap,
            "random_deletion" | "rd" => Self::RandomDeletion,
            "composite" => Self::Composite,
            other => return Err(format!("unknown EDA op {other:?}")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EdaParams {
    pub alpha_sr: f64,
    pub alpha_ri: f64,
    pub alpha_rs: f64,
    pub p_rd: f64,
    pub synonym_table: SynonymTable,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self {
            alpha_sr: 0.1,
            alpha_ri: 0.1,
            alpha_rs: 0.1,
            p_rd: 0.1,
            synonym_table: SynonymTable::bundled(),
        }
    }
}

impl EdaParams {
    pub fn validate(&self) -> Result<(), TextAugError> {
        for (name, value) in [
            ("alpha_sr", self.alpha_sr),
            ("alpha_ri", self.alpha_ri),
            ("alpha_rs", self.alpha_rs),
            ("p_rd", self.p_rd),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(TextAugError::InvalidRate { name, value });
            }
        }
        Ok(())
    }
}

/// Number of words an operation with rate `alpha` touches in an `n`-word sentence.
fn touched(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64).round() as usize).max(1)
}

/// Applies one EDA operation. Words are the lowercased whitespace-separated
/// tokens of `sentence`; the result is re-joined with single spaces.
pub fn eda_augment<R: Rng + ?Sized>(
    sentence: &str,
    op: EdaOp,
    params: &EdaParams,
    rng: &mut R,
) -> Result<String, TextAugError> {
    params.validate()?;
    let mut words: Vec<String> = sentence.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() {
        return Err(TextAugError::EmptyInput);
    }
    let op = match op {
        EdaOp::Composite => [
            EdaOp::SynonymReplacement,
            EdaOp::RandomInsertion,
            EdaOp::RandomSwap,
            EdaOp::RandomDeletion,
        ][rng.gen_range(0..4)],
        other => other,
    };
    let n = words.len();
    let table = &params.synonym_table;
    match op {
        EdaOp::SynonymReplacement => {
            let mut candidates: Vec<usize> = (0..n).filter(|&i| !table.synonyms(&words[i]).is_empty()).collect();
            candidates.shuffle(rng);
            for &i in candidates.iter().take(touched(params.alpha_sr, n)) {
                let syn = table.synonyms(&words[i]).choose(rng).expect("non-empty").clone();
                words[i] = syn;
            }
        }
        EdaOp::RandomInsertion => {
            for _ in 0..touched(params.alpha_ri, n) {
                let picked = (0..INSERTION_RETRIES).find_map(|_| {
                    let w = &words[rng.gen_range(0..words.len())];
                    table.synonyms(w).choose(rng).cloned()
                });
                if let Some(syn) = picked {
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, syn);
                }
            }
        }
        EdaOp::RandomSwap => {
            if n >= 2 {
                for _ in 0..touched(params.alpha_rs, n) {
                    let i = rng.gen_range(0..n);
                    let mut j = rng.gen_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    words.swap(i, j);
                }
            }
        }
        EdaOp::RandomDeletion => {
            if n > 1 {
                let kept: Vec<String> = words
                    .iter()
                    .filter(|_| rng.gen::<f64>() >= params.p_rd)
                    .cloned()
                    .collect();
                words = if kept.is_empty() {
                    vec![words[rng.gen_range(0..n)].clone()]
                } else {
                    kept
                };
            }
        }
        EdaOp::Composite => unreachable!("resolved above"),
    }
    Ok(words.join(" "))
}
