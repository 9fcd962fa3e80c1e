use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    build_prompt, cache_key, postprocess_completion, CompletionBackend, CompletionRequest, IclError, MetaRegistry,
    RewriteCache, RewriteCacheEntry, Strategy,
};
use crate::dataset::{AugmentedRecord, CaptionRecord};
use crate::util::{rng_from_seed, KeyHasher};

pub const DEFAULT_TEMPERATURE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOptions {
    pub strategies: Vec<Strategy>,
    pub temperature: f64,
    /// Upper bound on in-flight backend requests.
    pub concurrency: usize,
    pub seed: u64,
    pub max_retries: u32,
    /// Delay before retry `k` is `backoff * 2^(k-1)`.
    pub backoff: Duration,
    pub max_tokens: u32,
    pub stop: String,
}

impl Default for RewriteOptions {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            temperature: DEFAULT_TEMPERATURE,
            concurrency: 4,
            seed: 0,
            max_retries: 3,
            backoff: Duration::from_millis(200),
            max_tokens: 64,
            stop: "\n".into(),
        }
    }
}

impl RewriteOptions {
    fn validate(&self) -> Result<(), IclError> {
        if self.strategies.is_empty() {
            return Err(IclError::NoStrategies);
        }
        if self.concurrency == 0 {
            return Err(IclError::InvalidOption("concurrency must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(IclError::InvalidOption(format!("temperature {} must be >= 0", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RewriteReport {
    pub cached: usize,
    pub fetched: usize,
    pub fallback: usize,
    /// Record ids whose rewrite fell back to the original caption, one entry per fallback.
    pub fallback_ids: Vec<String>,
    pub backend_calls: usize,
}

#[derive(Debug, Clone)]
pub struct RewriteOutput {
    pub records: Vec<AugmentedRecord>,
    pub report: RewriteReport,
}

enum Source {
    Cached,
    Fetched,
}

struct Item {
    text: Option<String>,
    source: Source,
}

fn attempt_seed(seed: u64, record_id: &str, strategy: Strategy, attempt: u32) -> u64 {
    KeyHasher::new(seed)
        .str("icl-prompt")
        .str(record_id)
        .str(strategy.as_str())
        .u64(attempt as u64)
        .finish()
}

fn rewrite_one(
    record: &CaptionRecord,
    strategy: Strategy,
    opts: &RewriteOptions,
    registry: &MetaRegistry,
    backend: &dyn CompletionBackend,
    cache: &RewriteCache,
    calls: &AtomicUsize,
) -> Result<Item, IclError> {
    let attempts = opts.max_retries + 1;
    let prompts = (0..attempts)
        .map(|a| {
            let mut rng = rng_from_seed(attempt_seed(opts.seed, &record.id, strategy, a));
            build_prompt(registry, strategy, &record.caption, &mut rng).map(|(_, p)| p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let keys: Vec<u64> = prompts.iter().map(|p| cache_key(strategy, p, opts.temperature, opts.seed)).collect();

    // Any attempt that completed in an earlier run replays from the cache.
    if let Some(entry) = keys.iter().find_map(|&k| cache.get(k)) {
        return Ok(Item {
            text: postprocess_completion(&entry.completion).ok(),
            source: Source::Cached,
        });
    }

    let mut last_err = None;
    for (a, (prompt, key)) in prompts.into_iter().zip(keys).enumerate() {
        if a > 0 {
            std::thread::sleep(opts.backoff * 2u32.saturating_pow(a as u32 - 1));
        }
        let request = CompletionRequest {
            prompt,
            temperature: opts.temperature,
            max_tokens: opts.max_tokens,
            stop: opts.stop.clone(),
        };
        calls.fetch_add(1, Ordering::Relaxed);
        match backend.complete(&request) {
            Ok(resp) => {
                cache.insert(key, RewriteCacheEntry::new(key, resp.text.clone(), backend.id()))?;
                return Ok(Item {
                    text: postprocess_completion(&resp.text).ok(),
                    source: Source::Fetched,
                });
            }
            Err(e) => {
                log::warn!("record {} ({strategy}) attempt {}: {e}", record.id, a + 1);
                last_err = Some(e);
            }
        }
    }
    Err(IclError::Backend {
        record_id: record.id.clone(),
        attempts,
        source: last_err.expect("at least one attempt"),
    })
}

/// One rewrite per (record, strategy), in strategy order, appended after the
/// original caption. Output order follows input order. Empty completions fall
/// back to the original caption.
pub fn rewrite_dataset(
    records: &[CaptionRecord],
    opts: &RewriteOptions,
    registry: &MetaRegistry,
    backend: &dyn CompletionBackend,
    cache: &RewriteCache,
) -> Result<RewriteOutput, IclError> {
    opts.validate()?;
    let items: Vec<(usize, Strategy)> = (0..records.len())
        .flat_map(|i| opts.strategies.iter().map(move |&s| (i, s)))
        .collect();
    let calls = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency)
        .build()
        .map_err(|e| IclError::InvalidOption(e.to_string()))?;
    let results: Vec<Item> = pool.install(|| {
        items
            .par_iter()
            .map(|&(i, s)| rewrite_one(&records[i], s, opts, registry, backend, cache, &calls))
            .collect::<Result<_, _>>()
    })?;

    let mut report = RewriteReport {
        backend_calls: calls.load(Ordering::Relaxed),
        ..RewriteReport::default()
    };
    let backend_id = backend.id();
    let mut out: Vec<AugmentedRecord> = records.iter().cloned().map(AugmentedRecord::from).collect();
    for (&(i, strategy), item) in items.iter().zip(results) {
        let record = &mut out[i];
        match item.text {
            Some(text) => {
                match item.source {
                    Source::Cached => report.cached += 1,
                    Source::Fetched => report.fetched += 1,
                }
                record.push_rewrite(text, strategy.as_str(), backend_id.clone());
            }
            None => {
                log::warn!("record {}: empty {strategy} rewrite, using the original caption", record.id);
                report.fallback += 1;
                report.fallback_ids.push(record.id.clone());
                let original = record.captions[0].clone();
                record.push_rewrite(original, strategy.as_str(), "fallback");
            }
        }
    }
    Ok(RewriteOutput { records: out, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icl::FixtureBackend;

    fn records() -> Vec<CaptionRecord> {
        vec![
            CaptionRecord {
                caption: "a dog on grass".into(),
                id: "r1".into(),
                image_ref: "img1".into(),
            },
            CaptionRecord {
                caption: "a red bus in the rain".into(),
                id: "r0".into(),
                image_ref: "img0".into(),
            },
        ]
    }

    fn opts() -> RewriteOptions {
        RewriteOptions {
            backoff: Duration::ZERO,
            ..RewriteOptions::default()
        }
    }

    #[test]
    fn cold_then_warm() {
        let reg = MetaRegistry::bundled();
        let cache = RewriteCache::in_memory();
        let b = FixtureBackend::echo();
        let out = rewrite_dataset(&records(), &opts(), &reg, &b, &cache).unwrap();
        assert_eq!(b.calls(), 8);
        assert_eq!(out.report.fetched, 8);
        assert_eq!(out.records[0].id, "r1");
        for (r, src) in out.records.iter().zip(records()) {
            assert_eq!(r.m(), 4);
            assert_eq!(r.captions[0], src.caption);
            assert!(r.captions[1].starts_with(&src.caption));
            assert!(!r.captions[1].contains('\n'));
        }
        let b2 = FixtureBackend::echo();
        let again = rewrite_dataset(&records(), &opts(), &reg, &b2, &cache).unwrap();
        assert_eq!(b2.calls(), 0);
        assert_eq!(again.report.cached, 8);
        assert_eq!(again.records, out.records);
    }

    #[test]
    fn empty_completions_fall_back() {
        let out = rewrite_dataset(
            &records(),
            &opts(),
            &MetaRegistry::bundled(),
            &FixtureBackend::empty(),
            &RewriteCache::in_memory(),
        )
        .unwrap();
        assert_eq!(out.report.fallback, 8);
        for r in &out.records {
            assert!(r.captions.iter().all(|c| c == &r.captions[0]));
        }
    }

    #[test]
    fn retries_then_gives_up() {
        let reg = MetaRegistry::bundled();
        let o = RewriteOptions {
            concurrency: 1,
            strategies: vec![Strategy::Human],
            ..opts()
        };
        let b = FixtureBackend::echo().failing_first(3);
        let out = rewrite_dataset(&records()[..1], &o, &reg, &b, &RewriteCache::in_memory()).unwrap();
        assert_eq!(out.report.fetched, 1);
        assert_eq!(b.calls(), 4);

        let b = FixtureBackend::echo().failing_first(4);
        let err = rewrite_dataset(&records()[..1], &o, &reg, &b, &RewriteCache::in_memory()).unwrap_err();
        assert!(matches!(err, IclError::Backend { attempts: 4, .. }));
    }

    #[test]
    fn concurrency_does_not_change_output() {
        let reg = MetaRegistry::bundled();
        let many: Vec<CaptionRecord> = (0..40)
            .map(|i| CaptionRecord {
                caption: format!("caption number {i}"),
                id: format!("id{i:03}"),
                image_ref: format!("img{i}"),
            })
            .collect();
        let run = |c| {
            let o = RewriteOptions { concurrency: c, ..opts() };
            rewrite_dataset(&many, &o, &reg, &FixtureBackend::echo(), &RewriteCache::in_memory())
                .unwrap()
                .records
        };
        assert_eq!(run(1), run(16));
    }
}
