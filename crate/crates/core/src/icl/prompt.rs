use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::IclError;
use crate::util::Rng;

pub const TASK_SENTENCE: &str = "Rewrite the following image descriptions, keeping the key objects and meaning.";

const EXAMPLES_PER_PROMPT: usize = 3;
const PAIRS_PER_STRATEGY: usize = 16;
const CAPTIONS_PER_IMAGE: usize = 5;

/// Where a set of meta-input/output pairs came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Chatgpt,
    Bard,
    Mscoco,
    Human,
}

impl Strategy {
    /// Order used when all four rewrites are produced.
    pub const ALL: [Strategy; 4] = [Strategy::Chatgpt, Strategy::Bard, Strategy::Mscoco, Strategy::Human];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Chatgpt => "chatgpt",
            Strategy::Bard => "bard",
            Strategy::Mscoco => "mscoco",
            Strategy::Human => "human",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = IclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| IclError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPair {
    pub source: String,
    pub target: String,
    pub strategy: Strategy,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    chatgpt: Vec<[String; 2]>,
    bard: Vec<[String; 2]>,
    human: Vec<[String; 2]>,
    mscoco: Vec<[String; CAPTIONS_PER_IMAGE]>,
}

/// The 16 example pairs of every strategy. Coco entries keep all five
/// captions of each image; a prompt draws two distinct ones.
#[derive(Debug, Clone)]
pub struct MetaRegistry {
    pairs: BTreeMap<Strategy, Vec<MetaPair>>,
    coco_groups: Vec<[String; CAPTIONS_PER_IMAGE]>,
}

impl MetaRegistry {
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../../data/meta_pairs.json")).expect("bundled registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, IclError> {
        let file: RegistryFile = serde_json::from_str(text).map_err(|e| IclError::Registry(e.to_string()))?;
        let to_pairs = |strategy, rows: Vec<[String; 2]>| -> Vec<MetaPair> {
            rows.into_iter()
                .map(|[source, target]| MetaPair { source, target, strategy })
                .collect()
        };
        let mut pairs = BTreeMap::new();
        pairs.insert(Strategy::Chatgpt, to_pairs(Strategy::Chatgpt, file.chatgpt));
        pairs.insert(Strategy::Bard, to_pairs(Strategy::Bard, file.bard));
        pairs.insert(Strategy::Human, to_pairs(Strategy::Human, file.human));
        // Canonical listing of a coco image: its first caption rewritten as its second.
        pairs.insert(
            Strategy::Mscoco,
            file.mscoco
                .iter()
                .map(|g| MetaPair {
                    source: g[0].clone(),
                    target: g[1].clone(),
                    strategy: Strategy::Mscoco,
                })
                .collect(),
        );
        let registry = Self {
            pairs,
            coco_groups: file.mscoco,
        };
        registry.validate()?;
        Ok(registry)
    }

    fn validate(&self) -> Result<(), IclError> {
        for (strategy, pairs) in &self.pairs {
            if pairs.len() != PAIRS_PER_STRATEGY {
                return Err(IclError::Registry(format!("{strategy}: {} pairs, expected 16", pairs.len())));
            }
            for p in pairs {
                if p.source.trim().is_empty() || p.target.trim().is_empty() || has_newline(&p.source) || has_newline(&p.target) {
                    return Err(IclError::Registry(format!("{strategy}: empty or multi-line pair")));
                }
            }
        }
        for g in &self.coco_groups {
            if g.iter().any(|c| c.trim().is_empty() || has_newline(c)) {
                return Err(IclError::Registry("mscoco: empty or multi-line caption".into()));
            }
        }
        Ok(())
    }

    pub fn pairs(&self, strategy: Strategy) -> &[MetaPair] {
        &self.pairs[&strategy]
    }

    pub fn coco_groups(&self) -> &[[String; CAPTIONS_PER_IMAGE]] {
        &self.coco_groups
    }

    fn sample_examples(&self, strategy: Strategy, rng: &mut Rng) -> Vec<MetaPair> {
        let picked = sample(rng, PAIRS_PER_STRATEGY, EXAMPLES_PER_PROMPT).into_vec();
        match strategy {
            Strategy::Mscoco => picked
                .into_iter()
                .map(|i| {
                    let group = &self.coco_groups[i];
                    let a = rng.gen_range(0..CAPTIONS_PER_IMAGE);
                    let mut b = rng.gen_range(0..CAPTIONS_PER_IMAGE - 1);
                    if b >= a {
                        b += 1;
                    }
                    MetaPair {
                        source: group[a].clone(),
                        target: group[b].clone(),
                        strategy,
                    }
                })
                .collect(),
            _ => picked.into_iter().map(|i| self.pairs[&strategy][i].clone()).collect(),
        }
    }
}

impl Default for MetaRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

fn has_newline(s: &str) -> bool {
    s.contains(['\n', '\r'])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptContext {
    pub task_sentence: String,
    pub examples: Vec<MetaPair>,
    pub query: String,
}

impl PromptContext {
    /// Task line, one `source => target` line per example, then `query =>`.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(512);
        out.push_str(&self.task_sentence);
        out.push('\n');
        for ex in &self.examples {
            out.push_str(&ex.source);
            out.push_str(" => ");
            out.push_str(&ex.target);
            out.push('\n');
        }
        out.push_str(&self.query);
        out.push_str(" =>");
        out
    }
}

/// Samples three distinct pairs of `strategy` and renders the prompt.
/// Line breaks inside the query are folded to spaces so the prompt always
/// has exactly five lines.
pub fn build_prompt(
    registry: &MetaRegistry,
    strategy: Strategy,
    query: &str,
    rng: &mut Rng,
) -> Result<(PromptContext, String), IclError> {
    let query = query.split(['\n', '\r']).map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
    if query.is_empty() {
        return Err(IclError::EmptyQuery);
    }
    let ctx = PromptContext {
        task_sentence: TASK_SENTENCE.to_string(),
        examples: registry.sample_examples(strategy, rng),
        query,
    };
    let rendered = ctx.render();
    Ok((ctx, rendered))
}

/// First line of the completion, without a stray `=>` at either end.
pub fn postprocess_completion(raw: &str) -> Result<String, IclError> {
    let line = raw.split('\n').next().unwrap_or_default().trim();
    let line = line.strip_prefix("=>").unwrap_or(line).trim_start();
    let line = line.strip_suffix("=>").unwrap_or(line).trim();
    if line.is_empty() {
        Err(IclError::EmptyRewrite)
    } else {
        Ok(line.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;

    #[test]
    fn registry_shape() {
        let r = MetaRegistry::bundled();
        for s in Strategy::ALL {
            assert_eq!(r.pairs(s).len(), 16);
        }
        assert_eq!(r.coco_groups().len(), 16);
        assert_eq!(r.pairs(Strategy::Bard)[0].source, "man driving a car through the mountains");
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("ChatGPT".parse::<Strategy>().unwrap(), Strategy::Chatgpt);
        assert!(matches!("llama".parse::<Strategy>(), Err(IclError::UnknownStrategy(_))));
    }

    #[test]
    fn prompt_is_five_lines() {
        let r = MetaRegistry::bundled();
        for s in Strategy::ALL {
            let (ctx, text) = build_prompt(&r, s, "two\nlines", &mut rng_from_seed(3)).unwrap();
            assert_eq!(text.lines().count(), 5);
            assert!(text.ends_with("two lines =>"));
            assert_eq!(ctx.examples.len(), 3);
            assert!(ctx.examples.iter().all(|e| e.source != e.target));
        }
        assert!(matches!(
            build_prompt(&r, Strategy::Human, " \n ", &mut rng_from_seed(0)),
            Err(IclError::EmptyQuery)
        ));
    }

    #[test]
    fn coco_examples_come_from_one_image() {
        let r = MetaRegistry::bundled();
        for seed in 0..200 {
            let (ctx, _) = build_prompt(&r, Strategy::Mscoco, "q", &mut rng_from_seed(seed)).unwrap();
            for ex in &ctx.examples {
                assert!(r
                    .coco_groups()
                    .iter()
                    .any(|g| g.contains(&ex.source) && g.contains(&ex.target)));
            }
        }
    }

    #[test]
    fn postprocess_cases() {
        assert_eq!(postprocess_completion("A cat sleeps.\nnext line garbage").unwrap(), "A cat sleeps.");
        assert_eq!(postprocess_completion("   spaced   ").unwrap(), "spaced");
        assert_eq!(postprocess_completion("=> arrow =>").unwrap(), "arrow");
        assert!(matches!(postprocess_completion("\n\n"), Err(IclError::EmptyRewrite)));
        assert!(matches!(postprocess_completion(" => "), Err(IclError::EmptyRewrite)));
    }
}
