//! Corpus ingestion and the planted synthetic corpus generator.
//!
//! A corpus is two structured-line files: response transcriptions and
//! per-candidate reference scores. Both carry schema-versioned headers and
//! are validated on load against a corpus profile that fixes the expected
//! part set and score bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::mock::PlantedProfile;
use crate::bank::{AspectId, Level};
use crate::error::{NlaError, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::prompting::uniform_u32;

/// Schema tag for response files.
pub const CORPUS_SCHEMA: &str = "nla-corpus/1";
/// Schema tag for reference score files.
pub const REFS_SCHEMA: &str = "nla-refs/1";

/// Which split a response belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

/// One transcribed exam-part response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub response_id: String,
    pub candidate_id: String,
    pub part: u8,
    pub transcription: String,
    pub split: Split,
    /// Marks a response whose transcription is legitimately empty (for
    /// example inaudible audio); such records are skipped when scoring.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unscorable: bool,
}

/// One candidate's human reference scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScore {
    pub candidate_id: String,
    pub parts: BTreeMap<u8, f64>,
    pub overall: f64,
}

/// Expected part set and score bounds for one corpus family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub name: String,
    pub parts: Vec<u8>,
    pub min_score: f64,
    pub max_score: f64,
}

impl CorpusProfile {
    /// Speak & Improve: parts 1, 3, 4, 5 scored on 2.0 to 6.0.
    pub fn si() -> Self {
        CorpusProfile {
            name: "si".into(),
            parts: vec![1, 3, 4, 5],
            min_score: 2.0,
            max_score: 6.0,
        }
    }

    /// Generic speaking corpus scored on the full 1.0 to 6.0 level range.
    pub fn generic() -> Self {
        CorpusProfile {
            name: "generic".into(),
            parts: vec![1, 3, 4, 5],
            min_score: 1.0,
            max_score: 6.0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "si" => Ok(Self::si()),
            "generic" => Ok(Self::generic()),
            other => Err(NlaError::Config(format!(
                "unknown corpus profile {other:?} (expected \"si\" or \"generic\")"
            ))),
        }
    }

    /// Levels whose values fall inside this profile's score bounds; the
    /// synthetic generator only plants these.
    pub fn allowed_levels(&self) -> Vec<Level> {
        Level::ALL
            .iter()
            .copied()
            .filter(|l| l.value() >= self.min_score && l.value() <= self.max_score)
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    schema: String,
}

/// Loads and validates response records against `profile`.
pub fn load_responses(path: &Path, profile: &CorpusProfile) -> Result<Vec<ResponseRecord>> {
    let (_, records): (CorpusHeader, Vec<ResponseRecord>) = read_jsonl(path, CORPUS_SCHEMA)?;
    let mut seen = BTreeSet::new();
    for rec in &records {
        if !seen.insert(rec.response_id.as_str()) {
            return Err(NlaError::parse(
                path,
                format!("duplicate response_id {:?}", rec.response_id),
            ));
        }
        if !profile.parts.contains(&rec.part) {
            return Err(NlaError::parse(
                path,
                format!(
                    "response {:?} has part {} outside the {} profile's part set {:?}",
                    rec.response_id, rec.part, profile.name, profile.parts
                ),
            ));
        }
        if rec.transcription.trim().is_empty() && !rec.unscorable {
            return Err(NlaError::parse(
                path,
                format!(
                    "response {:?} has an empty transcription but is not flagged unscorable",
                    rec.response_id
                ),
            ));
        }
    }
    let mut records = records;
    records.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    Ok(records)
}

/// Loads and validates reference scores against `profile`.
pub fn load_references(path: &Path, profile: &CorpusProfile) -> Result<Vec<ReferenceScore>> {
    let (_, records): (CorpusHeader, Vec<ReferenceScore>) = read_jsonl(path, REFS_SCHEMA)?;
    let mut seen = BTreeSet::new();
    for rec in &records {
        if !seen.insert(rec.candidate_id.as_str()) {
            return Err(NlaError::parse(
                path,
                format!("duplicate candidate_id {:?}", rec.candidate_id),
            ));
        }
        for (&part, &score) in &rec.parts {
            if !profile.parts.contains(&part) {
                return Err(NlaError::parse(
                    path,
                    format!(
                        "candidate {:?} scored on part {part} outside the part set {:?}",
                        rec.candidate_id, profile.parts
                    ),
                ));
            }
            if !(profile.min_score..=profile.max_score).contains(&score) {
                return Err(NlaError::parse(
                    path,
                    format!(
                        "candidate {:?} part {part} score {score} outside [{}, {}]",
                        rec.candidate_id, profile.min_score, profile.max_score
                    ),
                ));
            }
        }
        if rec.parts.len() == profile.parts.len() {
            let mean = rec.parts.values().sum::<f64>() / rec.parts.len() as f64;
            if (mean - rec.overall).abs() > 1e-6 {
                return Err(NlaError::parse(
                    path,
                    format!(
                        "candidate {:?} overall {} does not equal its part mean {mean}",
                        rec.candidate_id, rec.overall
                    ),
                ));
            }
        }
    }
    let mut records = records;
    records.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(records)
}

/// Loads both corpus files and cross-checks candidate ids between them.
pub fn load_corpus(
    corpus_path: &Path,
    refs_path: &Path,
    profile: &CorpusProfile,
) -> Result<(Vec<ResponseRecord>, Vec<ReferenceScore>)> {
    let responses = load_responses(corpus_path, profile)?;
    let references = load_references(refs_path, profile)?;
    let response_candidates: BTreeSet<&str> =
        responses.iter().map(|r| r.candidate_id.as_str()).collect();
    let reference_candidates: BTreeSet<&str> =
        references.iter().map(|r| r.candidate_id.as_str()).collect();
    if let Some(missing) = response_candidates.difference(&reference_candidates).next() {
        return Err(NlaError::Validation(format!(
            "candidate {missing:?} has responses but no reference scores"
        )));
    }
    if let Some(orphan) = reference_candidates.difference(&response_candidates).next() {
        return Err(NlaError::Validation(format!(
            "candidate {orphan:?} has reference scores but no responses"
        )));
    }
    Ok((responses, references))
}

pub fn save_responses(path: &Path, records: &[ResponseRecord]) -> Result<()> {
    let header = CorpusHeader {
        schema: CORPUS_SCHEMA.to_string(),
    };
    write_jsonl(path, &header, records)
}

pub fn save_references(path: &Path, records: &[ReferenceScore]) -> Result<()> {
    let header = CorpusHeader {
        schema: REFS_SCHEMA.to_string(),
    };
    write_jsonl(path, &header, records)
}

/// Configuration for the synthetic corpus generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_candidates: usize,
    pub seed: u64,
    pub profile: CorpusProfile,
    /// Fraction of candidates assigned to the dev split; the rest go to
    /// eval.
    pub dev_fraction: f64,
}

/// A generated corpus together with the planted levels that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub responses: Vec<ResponseRecord>,
    pub references: Vec<ReferenceScore>,
    pub planted: PlantedProfile,
}

fn synth_rng(seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"/synth");
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Phrase fragments keyed by coarse level band, to give transcriptions some
/// level-correlated texture.
fn band_phrase(level: Level) -> &'static str {
    match level {
        Level::A1 => "I say small words about my family and my town.",
        Level::A2 => "I can talk simple about my day and what I like to do.",
        Level::B1 => "I usually manage to explain my plans even if I make some mistakes.",
        Level::B2 => "I can develop an argument about familiar topics fairly fluently.",
        Level::C1 => "I discuss abstract questions at length with only occasional slips.",
        Level::C2 => {
            "I express nuanced positions precisely, reformulating effortlessly when needed."
        }
    }
}

/// Generates a corpus with one response per (candidate, part) and planted
/// per-aspect levels. Every transcription embeds its response id, keeping
/// prompt texts unique so content-addressed caching stays sound under the
/// mock backend.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.n_candidates == 0 {
        return Err(NlaError::Config(
            "synthetic corpus needs at least 1 candidate".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.dev_fraction) {
        return Err(NlaError::Config(format!(
            "dev fraction must lie in [0, 1], got {}",
            cfg.dev_fraction
        )));
    }
    let allowed = cfg.profile.allowed_levels();
    let mut rng = synth_rng(cfg.seed);
    let n_dev = ((cfg.n_candidates as f64) * cfg.dev_fraction).round() as usize;

    let mut responses = Vec::new();
    let mut references = Vec::new();
    let mut planted = PlantedProfile::new();
    for c in 0..cfg.n_candidates {
        let candidate_id = format!("cand-{c:04}");
        let split = if c < n_dev { Split::Dev } else { Split::Eval };
        let mut part_scores = BTreeMap::new();
        for &part in &cfg.profile.parts {
            let response_id = format!("{candidate_id}-p{part}");
            let mut planted_sum = 0.0;
            let mut phrases = Vec::with_capacity(AspectId::ALL.len());
            for &aspect in &AspectId::ALL {
                let pool: Vec<Level> = aspect
                    .levels()
                    .iter()
                    .copied()
                    .filter(|l| allowed.contains(l))
                    .collect();
                let level = pool[uniform_u32(&mut rng, pool.len() as u32) as usize];
                planted.set(&response_id, aspect, level);
                planted_sum += level.value();
                phrases.push(band_phrase(level));
            }
            part_scores.insert(part, planted_sum / AspectId::ALL.len() as f64);
            phrases.dedup();
            responses.push(ResponseRecord {
                response_id: response_id.clone(),
                candidate_id: candidate_id.clone(),
                part,
                transcription: format!("[{response_id}] {}", phrases.join(" ")),
                split,
                unscorable: false,
            });
        }
        let overall = part_scores.values().sum::<f64>() / part_scores.len() as f64;
        references.push(ReferenceScore {
            candidate_id,
            parts: part_scores,
            overall,
        });
    }
    Ok(SyntheticCorpus {
        responses,
        references,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_corpus_file(path: &Path, lines: &[&str]) {
        let mut body = String::from("{\"schema\": \"nla-corpus/1\"}\n");
        for line in lines {
            body.push_str(line);
            body.push('\n');
        }
        std::fs::write(path, body).unwrap();
    }

    fn response_line(id: &str, part: u8) -> String {
        format!(
            "{{\"response_id\": \"{id}\", \"candidate_id\": \"c1\", \"part\": {part}, \
             \"transcription\": \"hello there\", \"split\": \"dev\"}}"
        )
    }

    /// Verifies the four-part single-candidate example loads cleanly.
    #[test]
    fn loads_a_minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let lines: Vec<String> = [1u8, 3, 4, 5]
            .iter()
            .map(|&p| response_line(&format!("r{p}"), p))
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        write_corpus_file(&corpus, &refs);
        let records = load_responses(&corpus, &CorpusProfile::si()).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(records[0].response_id, "r1");
    }

    #[test]
    fn duplicate_response_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let a = response_line("r1", 1);
        let b = response_line("r1", 3);
        write_corpus_file(&corpus, &[&a, &b]);
        let err = load_responses(&corpus, &CorpusProfile::si()).unwrap_err();
        assert!(err.to_string().contains("\"r1\""), "got: {err}");
    }

    #[test]
    fn part_outside_profile_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let a = response_line("r1", 2);
        write_corpus_file(&corpus, &[&a]);
        let err = load_responses(&corpus, &CorpusProfile::si()).unwrap_err();
        assert!(err.to_string().contains("part 2"), "got: {err}");
    }

    #[test]
    fn empty_transcription_needs_unscorable_flag() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let bad = "{\"response_id\": \"r1\", \"candidate_id\": \"c1\", \"part\": 1, \
                   \"transcription\": \"\", \"split\": \"dev\"}";
        write_corpus_file(&corpus, &[bad]);
        assert!(load_responses(&corpus, &CorpusProfile::si()).is_err());

        let ok = "{\"response_id\": \"r1\", \"candidate_id\": \"c1\", \"part\": 1, \
                  \"transcription\": \"\", \"split\": \"dev\", \"unscorable\": true}";
        write_corpus_file(&corpus, &[ok]);
        let records = load_responses(&corpus, &CorpusProfile::si()).unwrap();
        assert!(records[0].unscorable);
    }

    fn refs_file(path: &Path, lines: &[&str]) {
        let mut body = String::from("{\"schema\": \"nla-refs/1\"}\n");
        for line in lines {
            body.push_str(line);
            body.push('\n');
        }
        std::fs::write(path, body).unwrap();
    }

    #[test]
    fn out_of_bounds_part_score_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs.jsonl");
        refs_file(
            &refs,
            &["{\"candidate_id\": \"c1\", \"parts\": {\"1\": 7.0}, \"overall\": 7.0}"],
        );
        let err = load_references(&refs, &CorpusProfile::si()).unwrap_err();
        assert!(err.to_string().contains("outside [2, 6]"), "got: {err}");
    }

    #[test]
    fn overall_must_match_part_mean_when_complete() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs.jsonl");
        refs_file(
            &refs,
            &["{\"candidate_id\": \"c1\", \
               \"parts\": {\"1\": 3.0, \"3\": 3.0, \"4\": 3.0, \"5\": 3.0}, \
               \"overall\": 4.0}"],
        );
        let err = load_references(&refs, &CorpusProfile::si()).unwrap_err();
        assert!(err.to_string().contains("part mean"), "got: {err}");
    }

    #[test]
    fn incomplete_parts_skip_the_overall_check() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs.jsonl");
        refs_file(
            &refs,
            &["{\"candidate_id\": \"c1\", \"parts\": {\"1\": 3.0}, \"overall\": 4.5}"],
        );
        assert!(load_references(&refs, &CorpusProfile::si()).is_ok());
    }

    #[test]
    fn cross_check_names_the_mismatched_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let refs = dir.path().join("refs.jsonl");
        let a = response_line("r1", 1);
        write_corpus_file(&corpus, &[&a]);
        refs_file(
            &refs,
            &["{\"candidate_id\": \"other\", \"parts\": {\"1\": 3.0}, \"overall\": 3.0}"],
        );
        let err = load_corpus(&corpus, &refs, &CorpusProfile::si()).unwrap_err();
        assert!(err.to_string().contains("\"c1\""), "got: {err}");
    }

    fn synth_cfg(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_candidates: n,
            seed,
            profile: CorpusProfile::si(),
            dev_fraction: 0.5,
        }
    }

    /// Verifies generated corpora satisfy every loader invariant by writing
    /// and re-loading them.
    #[test]
    fn synthetic_corpus_round_trips_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let synth = generate_synthetic(&synth_cfg(6, 7)).unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let refs = dir.path().join("refs.jsonl");
        save_responses(&corpus, &synth.responses).unwrap();
        save_references(&refs, &synth.references).unwrap();
        let (responses, references) = load_corpus(&corpus, &refs, &CorpusProfile::si()).unwrap();
        assert_eq!(responses, synth.responses);
        assert_eq!(references, synth.references);
        assert_eq!(responses.len(), 24);
        assert_eq!(references.len(), 6);
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let a = generate_synthetic(&synth_cfg(5, 99)).unwrap();
        let b = generate_synthetic(&synth_cfg(5, 99)).unwrap();
        assert_eq!(a.responses, b.responses);
        assert_eq!(a.references, b.references);
        assert_eq!(a.planted, b.planted);

        let c = generate_synthetic(&synth_cfg(5, 100)).unwrap();
        assert_ne!(a.planted, c.planted);
    }

    #[test]
    fn synthetic_respects_profile_bounds_and_splits() {
        let synth = generate_synthetic(&synth_cfg(8, 3)).unwrap();
        for reference in &synth.references {
            for &score in reference.parts.values() {
                assert!((2.0..=6.0).contains(&score));
            }
        }
        let dev = synth
            .responses
            .iter()
            .filter(|r| r.split == Split::Dev)
            .count();
        assert_eq!(dev, 16);

        let ids: BTreeSet<&str> = synth
            .responses
            .iter()
            .map(|r| r.transcription.as_str())
            .collect();
        assert_eq!(
            ids.len(),
            synth.responses.len(),
            "transcriptions must be unique"
        );
    }

    #[test]
    fn si_profile_never_plants_a1() {
        let synth = generate_synthetic(&synth_cfg(4, 11)).unwrap();
        for response in &synth.responses {
            for &aspect in &AspectId::ALL {
                let level = synth.planted.get(&response.response_id, aspect).unwrap();
                assert!(
                    level.value() >= 2.0,
                    "planted {level:?} under the si profile"
                );
            }
        }
    }

    #[test]
    fn generic_profile_plants_the_full_range() {
        let mut cfg = synth_cfg(30, 17);
        cfg.profile = CorpusProfile::generic();
        let synth = generate_synthetic(&cfg).unwrap();
        let mut saw_a1 = false;
        for response in &synth.responses {
            if synth.planted.get(&response.response_id, AspectId::Glr) == Some(Level::A1) {
                saw_a1 = true;
            }
        }
        assert!(
            saw_a1,
            "expected at least one planted A1 across 120 responses"
        );
    }
}
