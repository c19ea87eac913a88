//! Analytic proficiency descriptors: the level scale, the ten aspects, and
//! the validated bank that serves descriptor sets to the prompting stage.
//!
//! The bank file is a structured-line file (see [`crate::jsonl`]) with one
//! `{aspect, level, text}` record per descriptor. Descriptor prose is not
//! bundled beyond a small synthetic demo bank; production runs point
//! `--bank` at their own file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NlaError, Result};
use crate::jsonl;

pub const BANK_SCHEMA: &str = "nla-bank/1";

/// A synthetic demo bank with the full aspect/level shape, bundled so the
/// pipeline runs out of the box. Not real assessment prose.
pub const DEMO_BANK: &str = include_str!("../../../data/demo_bank.jsonl");

/// One proficiency level on the six-point scale.
///
/// The ordinal value is fixed: A1 = 1 through C2 = 6, and `Ord` follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    A1,
    A2,
    B1,
    B2,
    C1,
    C2,
}

impl Level {
    pub const ALL: [Level; 6] = [
        Level::A1,
        Level::A2,
        Level::B1,
        Level::B2,
        Level::C1,
        Level::C2,
    ];

    /// Ordinal value used by fair-average scoring: A1 = 1, ..., C2 = 6.
    pub fn value(self) -> f64 {
        match self {
            Level::A1 => 1.0,
            Level::A2 => 2.0,
            Level::B1 => 3.0,
            Level::B2 => 4.0,
            Level::C1 => 5.0,
            Level::C2 => 6.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Level::A1 => "A1",
            Level::A2 => "A2",
            Level::B1 => "B1",
            Level::B2 => "B2",
            Level::C1 => "C1",
            Level::C2 => "C2",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Level {
    type Err = NlaError;

    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .iter()
            .copied()
            .find(|l| l.code() == s)
            .ok_or_else(|| NlaError::Validation(format!("unknown level code {s:?}")))
    }
}

/// One of the ten analytic proficiency aspects, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum AspectId {
    #[serde(rename = "glr")]
    Glr,
    #[serde(rename = "vr")]
    Vr,
    #[serde(rename = "vc")]
    Vc,
    #[serde(rename = "ga")]
    Ga,
    #[serde(rename = "soc")]
    Soc,
    #[serde(rename = "fl")]
    Fl,
    #[serde(rename = "td")]
    Td,
    #[serde(rename = "cc")]
    Cc,
    #[serde(rename = "flu")]
    Flu,
    #[serde(rename = "pp")]
    Pp,
}

impl AspectId {
    /// All aspects in canonical (reporting) order.
    pub const ALL: [AspectId; 10] = [
        AspectId::Glr,
        AspectId::Vr,
        AspectId::Vc,
        AspectId::Ga,
        AspectId::Soc,
        AspectId::Fl,
        AspectId::Td,
        AspectId::Cc,
        AspectId::Flu,
        AspectId::Pp,
    ];

    pub fn code(self) -> &'static str {
        match self {
            AspectId::Glr => "glr",
            AspectId::Vr => "vr",
            AspectId::Vc => "vc",
            AspectId::Ga => "ga",
            AspectId::Soc => "soc",
            AspectId::Fl => "fl",
            AspectId::Td => "td",
            AspectId::Cc => "cc",
            AspectId::Flu => "flu",
            AspectId::Pp => "pp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AspectId::Glr => "General linguistic range",
            AspectId::Vr => "Vocabulary range",
            AspectId::Vc => "Vocabulary control",
            AspectId::Ga => "Grammatical accuracy",
            AspectId::Soc => "Sociolinguistic appropriateness",
            AspectId::Fl => "Flexibility",
            AspectId::Td => "Thematic development",
            AspectId::Cc => "Coherence and cohesion",
            AspectId::Flu => "Fluency",
            AspectId::Pp => "Propositional precision",
        }
    }

    /// Levels this aspect defines descriptors for, ascending. Vocabulary
    /// control, flexibility, and thematic development have no A1 descriptor;
    /// every aspect runs up to C2.
    pub fn levels(self) -> &'static [Level] {
        match self {
            AspectId::Vc | AspectId::Fl | AspectId::Td => &Level::ALL[1..],
            _ => &Level::ALL[..],
        }
    }

    /// Ordinal values aligned with [`AspectId::levels`], the `v` of the
    /// fair-average sum.
    pub fn level_values(self) -> Vec<f64> {
        self.levels().iter().map(|l| l.value()).collect()
    }
}

impl fmt::Display for AspectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for AspectId {
    type Err = NlaError;

    fn from_str(s: &str) -> Result<Self> {
        AspectId::ALL
            .iter()
            .copied()
            .find(|a| a.code() == s)
            .ok_or_else(|| NlaError::Validation(format!("unknown aspect id {s:?}")))
    }
}

/// One descriptor: the prose for a single (aspect, level) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub aspect: AspectId,
    pub level: Level,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankHeader {
    schema: String,
    version: String,
}

/// The validated set of descriptors: every aspect covered at every level it
/// defines, no duplicates, no empty prose. Immutable after load.
#[derive(Debug, Clone)]
pub struct DescriptorBank {
    version: String,
    descriptors: BTreeMap<(AspectId, Level), Descriptor>,
}

impl DescriptorBank {
    /// Loads and validates a bank file.
    pub fn load(path: &Path) -> Result<DescriptorBank> {
        let (header, records): (BankHeader, Vec<Descriptor>) =
            jsonl::read_jsonl(path, BANK_SCHEMA)?;
        Self::from_descriptors(header.version, records)
    }

    /// The bundled synthetic demo bank.
    pub fn embedded_demo() -> DescriptorBank {
        let mut lines = DEMO_BANK.lines();
        let header: BankHeader = serde_json::from_str(lines.next().expect("demo bank header"))
            .expect("demo bank header");
        let records = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).expect("demo bank record"))
            .collect();
        Self::from_descriptors(header.version, records).expect("demo bank is valid")
    }

    /// Builds a bank from raw records, checking every invariant: unique
    /// (aspect, level) pairs, non-empty text, and full level coverage for
    /// all ten aspects.
    pub fn from_descriptors(version: String, records: Vec<Descriptor>) -> Result<DescriptorBank> {
        let mut descriptors = BTreeMap::new();
        for d in records {
            if d.text.trim().is_empty() {
                return Err(NlaError::Validation(format!(
                    "empty descriptor text for ({}, {})",
                    d.aspect, d.level
                )));
            }
            if !d.aspect.levels().contains(&d.level) {
                return Err(NlaError::Validation(format!(
                    "aspect {} defines no {} level",
                    d.aspect, d.level
                )));
            }
            if descriptors.insert((d.aspect, d.level), d.clone()).is_some() {
                return Err(NlaError::Validation(format!(
                    "duplicate descriptor for ({}, {})",
                    d.aspect, d.level
                )));
            }
        }
        for aspect in AspectId::ALL {
            for &level in aspect.levels() {
                if !descriptors.contains_key(&(aspect, level)) {
                    return Err(NlaError::Validation(format!(
                        "missing descriptor for ({aspect}, {level})"
                    )));
                }
            }
        }
        Ok(DescriptorBank {
            version,
            descriptors,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Descriptors for one aspect in canonical ascending level order.
    pub fn aspect_set(&self, aspect: AspectId) -> Vec<&Descriptor> {
        aspect
            .levels()
            .iter()
            .map(|&level| &self.descriptors[&(aspect, level)])
            .collect()
    }

    pub fn descriptor(&self, aspect: AspectId, level: Level) -> Option<&Descriptor> {
        self.descriptors.get(&(aspect, level))
    }

    /// Persists the bank in the loadable file format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = BankHeader {
            schema: BANK_SCHEMA.into(),
            version: self.version.clone(),
        };
        let records: Vec<&Descriptor> = self.descriptors.values().collect();
        jsonl::write_jsonl(path, &header, &records)
    }
}
