//! Content-addressed on-disk cache for backend calls.
//!
//! Keys are SHA-256 over (model id, top-N, full prompt text), so any change
//! to the template, descriptor bank, ordering seed, or transcription misses
//! cleanly. One JSON file per key, sharded by the first two hex characters
//! to keep directories small. Writes go through a temp file and rename so a
//! crashed run never leaves a truncated entry behind.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::backend::{cache_key, OptionLogits, ScoreBackend};
use crate::error::{NlaError, Result};
use crate::prompting::Prompt;

/// File-per-key logit cache rooted at one directory.
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    /// Opens (and creates if needed) a cache rooted at `root`.
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| NlaError::io(root, e))?;
        Ok(DiskCache {
            root: root.to_path_buf(),
        })
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Returns the cached logits for `key`, or `None` on a miss. A present
    /// but unreadable entry is an error, not a miss: silently refetching
    /// would mask cache corruption.
    pub fn get(&self, key: &str) -> Result<Option<OptionLogits>> {
        let path = self.entry_path(key);
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(NlaError::io(&path, e)),
        };
        let logits: OptionLogits = serde_json::from_slice(&bytes)
            .map_err(|e| NlaError::parse(&path, format!("corrupt cache entry: {e}")))?;
        Ok(Some(logits))
    }

    /// Stores `logits` under `key` atomically.
    pub fn put(&self, key: &str, logits: &OptionLogits) -> Result<()> {
        let path = self.entry_path(key);
        let dir = path.parent().expect("entry path has a shard directory");
        std::fs::create_dir_all(dir).map_err(|e| NlaError::io(dir, e))?;
        let body = serde_json::to_vec(logits)
            .map_err(|e| NlaError::Validation(format!("unserializable logits: {e}")))?;
        let tmp = dir.join(format!(".{key}.tmp-{}", std::process::id()));
        std::fs::write(&tmp, &body).map_err(|e| NlaError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| NlaError::io(&path, e))?;
        Ok(())
    }
}

/// Wraps a backend with a [`DiskCache`], counting hits and misses.
pub struct CachedBackend<B> {
    inner: B,
    cache: DiskCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: ScoreBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: DiskCache) -> Self {
        CachedBackend {
            inner,
            cache,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of calls that reached the wrapped backend.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

impl<B: ScoreBackend> ScoreBackend for CachedBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn top_n(&self) -> u32 {
        self.inner.top_n()
    }

    fn score_options(&self, prompt: &Prompt) -> Result<OptionLogits> {
        let key = cache_key(self.inner.model_id(), self.inner.top_n(), &prompt.text);
        if let Some(cached) = self.cache.get(&key)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(cached);
        }
        let logits = self.inner.score_options(prompt)?;
        self.cache.put(&key, &logits)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::atomic::AtomicU64;

    use super::*;
    use crate::backend::prompt_sha;
    use crate::bank::{AspectId, DescriptorBank};
    use crate::prompting::{generate_orderings, PromptTemplate};

    /// Backend that counts invocations and returns constant logits.
    struct CountingBackend {
        calls: AtomicU64,
    }

    impl ScoreBackend for CountingBackend {
        fn model_id(&self) -> &str {
            "counting"
        }

        fn top_n(&self) -> u32 {
            20
        }

        fn score_options(&self, prompt: &Prompt) -> Result<OptionLogits> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let logits: BTreeMap<char, f64> = prompt
                .labels
                .labels()
                .enumerate()
                .map(|(i, label)| (label, i as f64 * 0.25))
                .collect();
            Ok(OptionLogits {
                model_id: "counting".into(),
                prompt_hash: prompt_sha(&prompt.text),
                logits,
            })
        }
    }

    fn demo_prompt(transcription: &str) -> Prompt {
        let bank = DescriptorBank::embedded_demo();
        let orderings = generate_orderings(&bank, 1, 7).unwrap();
        PromptTemplate::default_template()
            .build_prompt(transcription, "r", &orderings[&AspectId::Glr][0], &bank)
            .unwrap()
    }

    /// Verifies a repeated prompt is served from disk without touching the
    /// wrapped backend again.
    #[test]
    fn second_call_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(
            CountingBackend {
                calls: AtomicU64::new(0),
            },
            DiskCache::open(dir.path()).unwrap(),
        );
        let prompt = demo_prompt("some transcription");
        let first = cached.score_options(&prompt).unwrap();
        let second = cached.score_options(&prompt).unwrap();
        assert_eq!(first, second);
        assert_eq!(cached.hits(), 1);
        assert_eq!(cached.misses(), 1);
        assert_eq!(cached.inner.calls.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn different_prompts_miss_independently() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(
            CountingBackend {
                calls: AtomicU64::new(0),
            },
            DiskCache::open(dir.path()).unwrap(),
        );
        cached.score_options(&demo_prompt("first")).unwrap();
        cached.score_options(&demo_prompt("second")).unwrap();
        assert_eq!(cached.hits(), 0);
        assert_eq!(cached.misses(), 2);
    }

    /// Verifies the cache survives reopening, which is what resumed runs
    /// rely on.
    #[test]
    fn cache_persists_across_open() {
        let dir = tempfile::tempdir().unwrap();
        let prompt = demo_prompt("persisted");
        {
            let cached = CachedBackend::new(
                CountingBackend {
                    calls: AtomicU64::new(0),
                },
                DiskCache::open(dir.path()).unwrap(),
            );
            cached.score_options(&prompt).unwrap();
        }
        let cached = CachedBackend::new(
            CountingBackend {
                calls: AtomicU64::new(0),
            },
            DiskCache::open(dir.path()).unwrap(),
        );
        cached.score_options(&prompt).unwrap();
        assert_eq!(cached.hits(), 1);
        assert_eq!(cached.inner.calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn corrupt_entry_is_an_error_not_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        let key = cache_key("counting", 20, "text");
        let entry = dir.path().join(&key[..2]).join(format!("{key}.json"));
        std::fs::create_dir_all(entry.parent().unwrap()).unwrap();
        std::fs::write(&entry, b"{ not json").unwrap();
        let err = cache.get(&key).unwrap_err();
        assert!(err.to_string().contains("corrupt"), "got: {err}");
    }
}
