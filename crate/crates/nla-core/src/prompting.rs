//! Fixed random descriptor orderings and multiple-choice prompt rendering.
//!
//! Orderings are drawn once per run from a seeded ChaCha8 stream and then
//! reused for every response ("fixed once chosen"). Option labels stay in
//! A, B, C... order; only the descriptor behind each label moves.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{AspectId, DescriptorBank, Level};
use crate::error::{NlaError, Result};

/// One fixed shuffle of an aspect's descriptors: option position i shows the
/// descriptor for `permutation[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorOrdering {
    pub aspect: AspectId,
    pub index: u32,
    pub permutation: Vec<Level>,
}

impl DescriptorOrdering {
    /// The label map induced by this ordering: consecutive uppercase letters
    /// from 'A', one per option position.
    pub fn label_map(&self) -> OptionLabelMap {
        let bindings = self
            .permutation
            .iter()
            .enumerate()
            .map(|(i, &level)| ((b'A' + i as u8) as char, level))
            .collect();
        OptionLabelMap { bindings }
    }
}

/// Label -> level binding for one ordering. Labels are always A..E or A..F
/// in alphabetical order regardless of the shuffle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionLabelMap {
    bindings: Vec<(char, Level)>,
}

impl OptionLabelMap {
    pub fn labels(&self) -> impl Iterator<Item = char> + '_ {
        self.bindings.iter().map(|(c, _)| *c)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn level_for(&self, label: char) -> Option<Level> {
        self.bindings
            .iter()
            .find(|(c, _)| *c == label)
            .map(|(_, l)| *l)
    }

    pub fn label_for(&self, level: Level) -> Option<char> {
        self.bindings
            .iter()
            .find(|(_, l)| *l == level)
            .map(|(c, _)| *c)
    }

    pub fn bindings(&self) -> &[(char, Level)] {
        &self.bindings
    }
}

/// A fully rendered prompt plus the metadata needed to interpret the answer.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub text: String,
    pub response_id: String,
    pub aspect: AspectId,
    pub ordering_index: u32,
    pub labels: OptionLabelMap,
}

/// Generates `n` orderings per aspect, deterministic in (bank, n, seed).
///
/// Each aspect draws from its own ChaCha8 stream keyed by SHA-256 of the
/// global seed and the aspect id, so adding or removing aspects never shifts
/// another aspect's orderings. Shuffles are Fisher-Yates with unbiased
/// rejection sampling, so the sequence is reproducible from the documented
/// stream on any platform.
pub fn generate_orderings(
    bank: &DescriptorBank,
    n: u32,
    seed: u64,
) -> Result<BTreeMap<AspectId, Vec<DescriptorOrdering>>> {
    if n < 1 {
        return Err(NlaError::Config("n_orderings must be at least 1".into()));
    }
    let _ = bank.len(); // bank is already validated; shape comes from AspectId
    let mut out = BTreeMap::new();
    for aspect in AspectId::ALL {
        let mut rng = aspect_rng(seed, aspect);
        let mut orderings = Vec::with_capacity(n as usize);
        for index in 0..n {
            let mut permutation: Vec<Level> = aspect.levels().to_vec();
            fisher_yates(&mut permutation, &mut rng);
            orderings.push(DescriptorOrdering {
                aspect,
                index,
                permutation,
            });
        }
        out.insert(aspect, orderings);
    }
    Ok(out)
}

fn aspect_rng(seed: u64, aspect: AspectId) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"/");
    hasher.update(aspect.code().as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn fisher_yates(items: &mut [Level], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = uniform_u32(rng, (i + 1) as u32) as usize;
        items.swap(i, j);
    }
}

/// Unbiased integer in [0, bound) by rejection on the raw u32 stream.
pub(crate) fn uniform_u32(rng: &mut ChaCha8Rng, bound: u32) -> u32 {
    debug_assert!(bound >= 1);
    if bound == 1 {
        return 0;
    }
    let rem = (u32::MAX % bound + 1) % bound;
    loop {
        let r = rng.next_u32();
        if rem == 0 || r <= u32::MAX - rem {
            return r % bound;
        }
    }
}

/// The instruction template prompts are rendered from. Must contain each of
/// the placeholders `{{aspect_name}}`, `{{options}}`, and `{{transcription}}`
/// exactly once.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    text: String,
    hash: String,
}

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/default_prompt.txt");

const PLACEHOLDERS: [&str; 3] = ["{{aspect_name}}", "{{options}}", "{{transcription}}"];

impl PromptTemplate {
    pub fn from_text(text: String) -> Result<PromptTemplate> {
        for ph in PLACEHOLDERS {
            match text.matches(ph).count() {
                1 => {}
                0 => {
                    return Err(NlaError::Validation(format!(
                        "prompt template is missing the {ph} placeholder"
                    )))
                }
                n => {
                    return Err(NlaError::Validation(format!(
                        "prompt template contains {ph} {n} times, expected once"
                    )))
                }
            }
        }
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(PromptTemplate { text, hash })
    }

    pub fn load(path: &Path) -> Result<PromptTemplate> {
        let text = std::fs::read_to_string(path).map_err(|e| NlaError::io(path, e))?;
        Self::from_text(text)
    }

    pub fn default_template() -> PromptTemplate {
        Self::from_text(DEFAULT_TEMPLATE.to_string()).expect("default template is valid")
    }

    /// SHA-256 of the template text, recorded in the run manifest.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Renders the prompt for one (response, aspect, ordering). Descriptors
    /// appear under their labels in permutation order; the transcription sits
    /// in a fenced block. Rendering is pure: identical inputs give
    /// byte-identical text.
    pub fn build_prompt(
        &self,
        transcription: &str,
        response_id: &str,
        ordering: &DescriptorOrdering,
        bank: &DescriptorBank,
    ) -> Result<Prompt> {
        if transcription.trim().is_empty() {
            return Err(NlaError::Validation(format!(
                "empty transcription for response {response_id:?}"
            )));
        }
        let labels = ordering.label_map();
        let mut options = String::new();
        for (label, level) in labels.bindings() {
            let descriptor = bank.descriptor(ordering.aspect, *level).ok_or_else(|| {
                NlaError::Validation(format!(
                    "bank has no descriptor for ({}, {level})",
                    ordering.aspect
                ))
            })?;
            options.push_str(&format!("{label}. {}\n", descriptor.text));
        }
        let text = self
            .text
            .replace("{{aspect_name}}", ordering.aspect.display_name())
            .replace("{{options}}", options.trim_end())
            .replace("{{transcription}}", transcription);
        Ok(Prompt {
            text,
            response_id: response_id.to_string(),
            aspect: ordering.aspect,
            ordering_index: ordering.index,
            labels,
        })
    }
}
