//! Deterministic mock backend driven by a planted proficiency profile.
//!
//! Each response carries one planted level per aspect. The mock answers a
//! prompt by finding the option label bound to the planted level for that
//! prompt's ordering and giving it a large logit; every other label gets
//! zero. The softmax then concentrates nearly all mass on the planted level,
//! so fair averages recover the planted values to within a known deviation,
//! which makes end-to-end pipeline tests exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{prompt_sha, OptionLogits, ScoreBackend};
use crate::bank::{AspectId, Level};
use crate::error::{NlaError, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::prompting::Prompt;

/// Schema tag for planted-profile files.
pub const PLANTED_SCHEMA: &str = "nla-planted/1";

#[derive(Debug, Serialize, Deserialize)]
struct PlantedHeader {
    schema: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlantedRecord {
    response_id: String,
    aspect: AspectId,
    level: Level,
}

/// Planted per-aspect levels for a set of responses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlantedProfile {
    levels: BTreeMap<String, BTreeMap<AspectId, Level>>,
}

impl PlantedProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, response_id: &str, aspect: AspectId, level: Level) {
        self.levels
            .entry(response_id.to_string())
            .or_default()
            .insert(aspect, level);
    }

    pub fn get(&self, response_id: &str, aspect: AspectId) -> Option<Level> {
        self.levels
            .get(response_id)
            .and_then(|m| m.get(&aspect))
            .copied()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn response_ids(&self) -> impl Iterator<Item = &str> {
        self.levels.keys().map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = PlantedHeader {
            schema: PLANTED_SCHEMA.to_string(),
        };
        let records: Vec<PlantedRecord> = self
            .levels
            .iter()
            .flat_map(|(rid, aspects)| {
                aspects.iter().map(|(&aspect, &level)| PlantedRecord {
                    response_id: rid.clone(),
                    aspect,
                    level,
                })
            })
            .collect();
        write_jsonl(path, &header, &records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, records): (PlantedHeader, Vec<PlantedRecord>) =
            read_jsonl(path, PLANTED_SCHEMA)?;
        debug_assert_eq!(header.schema, PLANTED_SCHEMA);
        let mut profile = PlantedProfile::new();
        for rec in records {
            if profile.get(&rec.response_id, rec.aspect).is_some() {
                return Err(NlaError::parse(
                    path,
                    format!(
                        "duplicate planted level for response {:?} aspect {}",
                        rec.response_id,
                        rec.aspect.code()
                    ),
                ));
            }
            profile.set(&rec.response_id, rec.aspect, rec.level);
        }
        Ok(profile)
    }
}

/// Backend returning planted logits: `gap` on the label bound to the planted
/// level, zero elsewhere, plus an optional constant bump on label `A` to
/// simulate position bias.
pub struct MockBackend {
    profile: PlantedProfile,
    gap: f64,
    label_bias: f64,
    model_id: String,
}

impl MockBackend {
    pub fn new(profile: PlantedProfile, gap: f64) -> Self {
        Self::with_label_bias(profile, gap, 0.0)
    }

    pub fn with_label_bias(profile: PlantedProfile, gap: f64, label_bias: f64) -> Self {
        let model_id = format!("mock:g={gap},bias={label_bias}");
        MockBackend {
            profile,
            gap,
            label_bias,
            model_id,
        }
    }
}

impl ScoreBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_options(&self, prompt: &Prompt) -> Result<OptionLogits> {
        let planted = self
            .profile
            .get(&prompt.response_id, prompt.aspect)
            .ok_or_else(|| {
                NlaError::Backend(format!(
                    "no planted level for response {:?} aspect {}",
                    prompt.response_id,
                    prompt.aspect.code()
                ))
            })?;
        let bound = prompt.labels.label_for(planted).ok_or_else(|| {
            NlaError::Backend(format!(
                "planted level {} is not offered by the prompt for aspect {}",
                planted.code(),
                prompt.aspect.code()
            ))
        })?;
        let mut logits = BTreeMap::new();
        for &(label, _) in prompt.labels.bindings() {
            let mut v = if label == bound { self.gap } else { 0.0 };
            if label == 'A' {
                v += self.label_bias;
            }
            logits.insert(label, v);
        }
        Ok(OptionLogits {
            model_id: self.model_id.clone(),
            prompt_hash: prompt_sha(&prompt.text),
            logits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::DescriptorBank;
    use crate::prompting::{generate_orderings, PromptTemplate};

    fn demo_prompt(aspect: AspectId, ordering_index: usize) -> Prompt {
        let bank = DescriptorBank::embedded_demo();
        let orderings = generate_orderings(&bank, 3, 42).unwrap();
        let template = PromptTemplate::default_template();
        template
            .build_prompt(
                "I lived in three country and learn the languages quick.",
                "resp-001",
                &orderings[&aspect][ordering_index],
                &bank,
            )
            .unwrap()
    }

    fn profile_with(aspect: AspectId, level: Level) -> PlantedProfile {
        let mut profile = PlantedProfile::new();
        profile.set("resp-001", aspect, level);
        profile
    }

    /// Verifies the gap lands on whichever label the ordering binds to the
    /// planted level, not on a fixed position.
    #[test]
    fn gap_follows_planted_level_across_orderings() {
        let profile = profile_with(AspectId::Glr, Level::B2);
        let backend = MockBackend::new(profile, 10.0);
        for index in 0..3 {
            let prompt = demo_prompt(AspectId::Glr, index);
            let logits = backend.score_options(&prompt).unwrap();
            let bound = prompt.labels.label_for(Level::B2).unwrap();
            for (&label, &v) in &logits.logits {
                if label == bound {
                    assert_eq!(v, 10.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn label_bias_bumps_a_only() {
        let profile = profile_with(AspectId::Glr, Level::A1);
        let backend = MockBackend::with_label_bias(profile, 10.0, 1.5);
        let prompt = demo_prompt(AspectId::Glr, 0);
        let logits = backend.score_options(&prompt).unwrap();
        let bound = prompt.labels.label_for(Level::A1).unwrap();
        for (&label, &v) in &logits.logits {
            let mut expect = if label == bound { 10.0 } else { 0.0 };
            if label == 'A' {
                expect += 1.5;
            }
            assert_eq!(v, expect, "label {label}");
        }
    }

    #[test]
    fn unplanted_response_is_a_backend_error() {
        let backend = MockBackend::new(PlantedProfile::new(), 10.0);
        let prompt = demo_prompt(AspectId::Vr, 0);
        let err = backend.score_options(&prompt).unwrap_err();
        assert!(err.to_string().contains("resp-001"), "got: {err}");
    }

    /// Verifies save/load round-trips the profile exactly.
    #[test]
    fn profile_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("planted.jsonl");
        let mut profile = PlantedProfile::new();
        profile.set("r1", AspectId::Glr, Level::C1);
        profile.set("r1", AspectId::Vc, Level::A2);
        profile.set("r2", AspectId::Pp, Level::B1);
        profile.save(&path).unwrap();
        let loaded = PlantedProfile::load(&path).unwrap();
        assert_eq!(loaded, profile);
    }

    #[test]
    fn duplicate_planted_record_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("planted.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"schema\": \"nla-planted/1\"}\n",
                "{\"response_id\": \"r1\", \"aspect\": \"glr\", \"level\": \"B1\"}\n",
                "{\"response_id\": \"r1\", \"aspect\": \"glr\", \"level\": \"B2\"}\n",
            ),
        )
        .unwrap();
        let err = PlantedProfile::load(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "got: {err}");
    }
}
