mod common;

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Duration;

use laclip_core::dataset::CaptionRecord;
use laclip_core::icl::{
    build_prompt, cache_key, rewrite_dataset, FixtureBackend, MetaRegistry, RewriteCache, RewriteOptions, Strategy,
    TASK_SENTENCE,
};
use laclip_core::util::rng_from_seed;

const QUERY: &str = "a dog on grass";
/// Seeds whose prompts are pinned as golden files.
const GOLDEN_SEEDS: [u64; 3] = [0, 1, 2];
/// A chatgpt prompt seed whose examples include the mountain-road pair.
const MOUNTAIN_SEED: u64 = 12;
const MOUNTAIN_SOURCE: &str = "man driving a car through the mountains";
const MOUNTAIN_TARGET: &str = "A man confidently navigating a winding mountain road with breathtaking views.";

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/prompts")
}

/// Compares against the golden file, rewriting it when `LACLIP_BLESS` is set.
fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("LACLIP_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from its golden file");
}

fn prompt(strategy: Strategy, seed: u64) -> String {
    build_prompt(&MetaRegistry::bundled(), strategy, QUERY, &mut rng_from_seed(seed)).unwrap().1
}

#[test]
fn prompts_match_golden_files() {
    for strategy in Strategy::ALL {
        for seed in GOLDEN_SEEDS {
            let text = prompt(strategy, seed);
            assert_eq!(text.lines().count(), 5);
            check_golden(&format!("{strategy}-{seed}.txt"), &text);
        }
    }
    check_golden(&format!("chatgpt-{MOUNTAIN_SEED}.txt"), &prompt(Strategy::Chatgpt, MOUNTAIN_SEED));
}

#[test]
fn pinned_seed_contains_mountain_pair() {
    let text = prompt(Strategy::Chatgpt, MOUNTAIN_SEED);
    assert!(text.contains(&format!("{MOUNTAIN_SOURCE} => {MOUNTAIN_TARGET}\n")));
    assert!(text.ends_with("a dog on grass =>"));
}

#[test]
fn prompt_layout() {
    let registry = MetaRegistry::bundled();
    for strategy in Strategy::ALL {
        for seed in 0..50 {
            let (ctx, text) = build_prompt(&registry, strategy, QUERY, &mut rng_from_seed(seed)).unwrap();
            let lines: Vec<&str> = text.split('\n').collect();
            assert_eq!(lines.len(), 5);
            assert_eq!(lines[0], TASK_SENTENCE);
            for (line, ex) in lines[1..4].iter().zip(&ctx.examples) {
                assert_eq!(*line, format!("{} => {}", ex.source, ex.target));
                assert_eq!(line.matches(" => ").count(), 1);
            }
            assert_eq!(lines[4], format!("{QUERY} =>"));
        }
    }
}

#[test]
fn examples_come_from_the_bundled_pairs() {
    let registry = MetaRegistry::bundled();
    for strategy in [Strategy::Chatgpt, Strategy::Bard, Strategy::Human] {
        let known: HashSet<(String, String)> =
            registry.pairs(strategy).iter().map(|p| (p.source.clone(), p.target.clone())).collect();
        assert_eq!(known.len(), 16);
        for seed in 0..200 {
            let (ctx, _) = build_prompt(&registry, strategy, QUERY, &mut rng_from_seed(seed)).unwrap();
            for ex in &ctx.examples {
                assert!(known.contains(&(ex.source.clone(), ex.target.clone())));
            }
        }
    }
    for seed in 0..200 {
        let (ctx, _) = build_prompt(&registry, Strategy::Mscoco, QUERY, &mut rng_from_seed(seed)).unwrap();
        for ex in &ctx.examples {
            assert_ne!(ex.source, ex.target);
            assert!(registry
                .coco_groups()
                .iter()
                .any(|g| g.contains(&ex.source) && g.contains(&ex.target)));
        }
    }
}

#[test]
fn every_ordered_triple_is_reachable() {
    let registry = MetaRegistry::bundled();
    let pairs = registry.pairs(Strategy::Chatgpt);
    let mut seen = HashSet::new();
    for seed in 0..100_000 {
        let (ctx, _) = build_prompt(&registry, Strategy::Chatgpt, QUERY, &mut rng_from_seed(seed)).unwrap();
        let idx: Vec<usize> = ctx
            .examples
            .iter()
            .map(|ex| pairs.iter().position(|p| p.source == ex.source && p.target == ex.target).unwrap())
            .collect();
        assert!(idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2]);
        seen.insert((idx[0], idx[1], idx[2]));
    }
    assert_eq!(seen.len(), 16 * 15 * 14);
}

#[test]
fn cache_keys_do_not_collide() {
    let temps = [0.7, 0.8, 0.9, 1.0];
    let mut keys = HashSet::with_capacity(1_000_000);
    for strategy in Strategy::ALL {
        for p in 0..2500 {
            let prompt = format!("{TASK_SENTENCE}\nsource {p} => target {p}\nquery {} =>", p % 97);
            for &t in &temps {
                for seed in 0..25 {
                    keys.insert(cache_key(strategy, &prompt, t, seed));
                }
            }
        }
    }
    assert_eq!(keys.len(), 1_000_000);
}

fn records(n: usize) -> Vec<CaptionRecord> {
    (0..n)
        .map(|i| CaptionRecord {
            id: format!("r{i}"),
            image_ref: format!("img{i}"),
            caption: format!("a caption about thing {i}"),
        })
        .collect()
}

fn options() -> RewriteOptions {
    RewriteOptions {
        strategies: Strategy::ALL.to_vec(),
        backoff: Duration::ZERO,
        ..RewriteOptions::default()
    }
}

#[test]
fn file_cache_makes_reruns_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let input = records(5);
    let registry = MetaRegistry::bundled();

    let cold_backend = FixtureBackend::echo();
    let cold = rewrite_dataset(&input, &options(), &registry, &cold_backend, &RewriteCache::open(&path).unwrap()).unwrap();
    assert_eq!(cold_backend.calls(), 20);
    assert!(cold.records.iter().all(|r| r.m() == 4));

    let warm_backend = FixtureBackend::echo();
    let warm = rewrite_dataset(&input, &options(), &registry, &warm_backend, &RewriteCache::open(&path).unwrap()).unwrap();
    assert_eq!(warm_backend.calls(), 0);
    assert_eq!(warm.records, cold.records);
    assert_eq!(warm.report.cached, 20);
}

#[test]
fn torn_cache_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let input = records(2);
    let registry = MetaRegistry::bundled();
    rewrite_dataset(&input, &options(), &registry, &FixtureBackend::echo(), &RewriteCache::open(&path).unwrap()).unwrap();

    let mut text = std::fs::read_to_string(&path).unwrap();
    let full = RewriteCache::open(&path).unwrap().len();
    text.truncate(text.len() - 10);
    std::fs::write(&path, &text).unwrap();
    let reopened = RewriteCache::open(&path).unwrap();
    assert_eq!(reopened.len(), full - 1);

    let backend = FixtureBackend::echo();
    rewrite_dataset(&input, &options(), &registry, &backend, &reopened).unwrap();
    assert_eq!(backend.calls(), 1);
    drop(reopened);
    assert_eq!(RewriteCache::open(&path).unwrap().len(), full);
}

#[test]
fn output_independent_of_concurrency() {
    let input = records(12);
    let registry = MetaRegistry::bundled();
    let run = |concurrency| {
        let opts = RewriteOptions {
            concurrency,
            ..options()
        };
        rewrite_dataset(&input, &opts, &registry, &FixtureBackend::echo(), &RewriteCache::in_memory())
            .unwrap()
            .records
    };
    assert_eq!(run(1), run(8));
}
