//! Run orchestration: the scoring fan-out and the analysis passes that
//! consume a scored run directory.
//!
//! A run directory holds a deterministic manifest plus one structured-line
//! file per artifact level (distributions, analytic vectors, holistic
//! scores, fitted models). Everything except run.log is byte-reproducible:
//! records are written in sorted key order, floats round-trip exactly, and
//! wall-clock timestamps are confined to the log.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backend::ScoreBackend;
use crate::bank::{AspectId, DescriptorBank};
use crate::bias::{bias_report, BiasAggregation, BiasReport};
use crate::corpus::{CorpusProfile, ReferenceScore, ResponseRecord, Split};
use crate::error::{NlaError, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::prompting::{generate_orderings, PromptTemplate};
use crate::regression::{beta_report, ridge_predict, BetaReport, RegressionModel, RidgeConfig};
use crate::scoring::{
    aspect_score, overall_score, part_holistic, to_level_distribution, AnalyticScoreVector,
    ScoreDistribution,
};
use crate::stats::{friedman, nemenyi, pcc, src, FriedmanResult, NemenyiResult};

pub const MANIFEST_SCHEMA: &str = "nla-manifest/1";
pub const DISTRIBUTIONS_SCHEMA: &str = "nla-distributions/1";
pub const ANALYTIC_SCHEMA: &str = "nla-analytic/1";
pub const HOLISTIC_SCHEMA: &str = "nla-holistic/1";

/// Everything needed to reproduce a run bit for bit given the same backend
/// responses. Deliberately holds no timestamps; see run.log for those.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub seed: u64,
    pub n_orderings: u32,
    pub bank_version: String,
    pub template_hash: String,
    pub model_id: String,
    pub top_n: u32,
    pub profile: CorpusProfile,
}

/// One scored (response, aspect, ordering) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub response_id: String,
    pub candidate_id: String,
    pub part: u8,
    pub split: Split,
    pub aspect: AspectId,
    pub ordering_index: u32,
    pub probs: Vec<f64>,
    pub fair_average: f64,
}

/// One response's aspect scores and part holistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRecord {
    pub response_id: String,
    pub candidate_id: String,
    pub part: u8,
    pub split: Split,
    pub aspects: BTreeMap<AspectId, f64>,
    pub holistic: f64,
}

/// One candidate's per-part and overall scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolisticRecord {
    pub candidate_id: String,
    pub split: Split,
    pub part_scores: BTreeMap<u8, f64>,
    pub overall: f64,
    /// Profile parts the candidate never submitted; flagged in reports.
    pub missing_parts: Vec<u8>,
}

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths {
            root: root.to_path_buf(),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn distributions(&self) -> PathBuf {
        self.root.join("distributions.jsonl")
    }

    pub fn analytic(&self) -> PathBuf {
        self.root.join("analytic.jsonl")
    }

    pub fn holistic(&self) -> PathBuf {
        self.root.join("holistic.jsonl")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models.jsonl")
    }

    pub fn log(&self) -> PathBuf {
        self.root.join("run.log")
    }
}

/// Scoring-phase configuration.
#[derive(Debug, Clone)]
pub struct ScoreConfig {
    pub seed: u64,
    pub n_orderings: u32,
    pub profile: CorpusProfile,
    /// Worker threads (and so concurrent backend calls).
    pub max_in_flight: usize,
}

/// Counters reported after a scoring pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub n_responses: usize,
    pub n_unscorable: usize,
    pub n_tasks: usize,
    pub n_candidates: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactHeader {
    schema: String,
}

fn append_log(paths: &RunPaths, message: &str) -> Result<()> {
    let path = paths.log();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| NlaError::io(&path, e))?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    writeln!(file, "[{stamp}] {message}").map_err(|e| NlaError::io(&path, e))?;
    Ok(())
}

fn write_manifest(paths: &RunPaths, manifest: &RunManifest) -> Result<()> {
    let path = paths.manifest();
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| NlaError::Validation(format!("unserializable manifest: {e}")))?;
    std::fs::write(&path, body + "\n").map_err(|e| NlaError::io(&path, e))
}

pub fn load_manifest(paths: &RunPaths) -> Result<RunManifest> {
    let path = paths.manifest();
    let body = std::fs::read_to_string(&path).map_err(|e| NlaError::io(&path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&body).map_err(|e| NlaError::parse(&path, e.to_string()))?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(NlaError::parse(
            &path,
            format!("unsupported manifest schema {:?}", manifest.schema),
        ));
    }
    Ok(manifest)
}

/// Scores every (response, aspect, ordering) triple and writes the full
/// artifact hierarchy. The manifest is written before the first backend
/// call; the scoring fan-out runs on `max_in_flight` worker threads and
/// merges results in sorted task order, so output bytes never depend on
/// scheduling.
pub fn run_score(
    paths: &RunPaths,
    bank: &DescriptorBank,
    template: &PromptTemplate,
    responses: &[ResponseRecord],
    backend: &dyn ScoreBackend,
    cfg: &ScoreConfig,
) -> Result<ScoreSummary> {
    if responses.is_empty() {
        return Err(NlaError::Validation("no responses to score".into()));
    }
    std::fs::create_dir_all(&paths.root).map_err(|e| NlaError::io(&paths.root, e))?;

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed: cfg.seed,
        n_orderings: cfg.n_orderings,
        bank_version: bank.version().to_string(),
        template_hash: template.hash().to_string(),
        model_id: backend.model_id().to_string(),
        top_n: backend.top_n(),
        profile: cfg.profile.clone(),
    };
    write_manifest(paths, &manifest)?;
    append_log(
        paths,
        &format!("scoring started: {} responses", responses.len()),
    )?;

    let orderings = generate_orderings(bank, cfg.n_orderings, cfg.seed)?;

    let mut sorted: Vec<&ResponseRecord> = responses.iter().collect();
    sorted.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    let mut tasks = Vec::new();
    let mut n_unscorable = 0usize;
    for response in &sorted {
        if response.unscorable {
            n_unscorable += 1;
            continue;
        }
        for &aspect in &AspectId::ALL {
            for ordering in &orderings[&aspect] {
                tasks.push((*response, ordering));
            }
        }
    }
    if tasks.is_empty() {
        return Err(NlaError::Validation(
            "every response is flagged unscorable".into(),
        ));
    }

    let next_task = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<BTreeMap<usize, ScoreDistribution>> = Mutex::new(BTreeMap::new());
    let first_error: Mutex<Option<NlaError>> = Mutex::new(None);
    let workers = cfg.max_in_flight.clamp(1, tasks.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    return;
                }
                let index = next_task.fetch_add(1, Ordering::Relaxed);
                if index >= tasks.len() {
                    return;
                }
                let (response, ordering) = &tasks[index];
                let outcome = template
                    .build_prompt(
                        &response.transcription,
                        &response.response_id,
                        ordering,
                        bank,
                    )
                    .and_then(|prompt| {
                        let logits = backend.score_options(&prompt)?;
                        to_level_distribution(&logits, &prompt)
                    });
                match outcome {
                    Ok(dist) => {
                        results.lock().expect("results lock").insert(index, dist);
                    }
                    Err(e) => {
                        let wrapped = NlaError::Backend(format!(
                            "scoring response {:?} aspect {} ordering {}: {e}",
                            response.response_id,
                            ordering.aspect.code(),
                            ordering.index
                        ));
                        let mut slot = first_error.lock().expect("error lock");
                        if slot.is_none() {
                            *slot = Some(match e {
                                NlaError::Transport(_) | NlaError::Io { .. } => {
                                    NlaError::Transport(wrapped.to_string())
                                }
                                _ => wrapped,
                            });
                        }
                        failed.store(true, Ordering::Relaxed);
                        return;
                    }
                }
            });
        }
    });

    if let Some(error) = first_error.into_inner().expect("error lock") {
        append_log(paths, &format!("scoring failed: {error}"))?;
        return Err(error);
    }
    let results = results.into_inner().expect("results lock");
    assert_eq!(
        results.len(),
        tasks.len(),
        "every task must produce a result"
    );

    let mut dist_records = Vec::with_capacity(tasks.len());
    for (index, dist) in &results {
        let (response, _) = &tasks[*index];
        let fair = dist.fair_average()?;
        dist_records.push(DistributionRecord {
            response_id: response.response_id.clone(),
            candidate_id: response.candidate_id.clone(),
            part: response.part,
            split: response.split,
            aspect: dist.aspect,
            ordering_index: dist.ordering_index,
            probs: dist.probs.clone(),
            fair_average: fair.score,
        });
    }
    let header = ArtifactHeader {
        schema: DISTRIBUTIONS_SCHEMA.to_string(),
    };
    write_jsonl(&paths.distributions(), &header, &dist_records)?;

    let analytic = aggregate_analytic(&dist_records, &results, &tasks)?;
    let header = ArtifactHeader {
        schema: ANALYTIC_SCHEMA.to_string(),
    };
    write_jsonl(&paths.analytic(), &header, &analytic)?;

    let holistic = aggregate_holistic(&analytic, &cfg.profile)?;
    let header = ArtifactHeader {
        schema: HOLISTIC_SCHEMA.to_string(),
    };
    write_jsonl(&paths.holistic(), &header, &holistic)?;

    let flagged = holistic
        .iter()
        .filter(|h| !h.missing_parts.is_empty())
        .count();
    append_log(
        paths,
        &format!(
            "scoring finished: {} tasks, {} candidates, {} with missing parts",
            tasks.len(),
            holistic.len(),
            flagged
        ),
    )?;
    Ok(ScoreSummary {
        n_responses: sorted.len(),
        n_unscorable,
        n_tasks: tasks.len(),
        n_candidates: holistic.len(),
    })
}

fn aggregate_analytic(
    dist_records: &[DistributionRecord],
    results: &BTreeMap<usize, ScoreDistribution>,
    tasks: &[(&ResponseRecord, &crate::prompting::DescriptorOrdering)],
) -> Result<Vec<AnalyticRecord>> {
    let mut fair_by_key: BTreeMap<(String, AspectId), Vec<crate::scoring::FairAverageScore>> =
        BTreeMap::new();
    for (index, dist) in results {
        let (response, _) = &tasks[*index];
        fair_by_key
            .entry((response.response_id.clone(), dist.aspect))
            .or_default()
            .push(dist.fair_average()?);
    }

    let mut meta: BTreeMap<&str, &DistributionRecord> = BTreeMap::new();
    for record in dist_records {
        meta.entry(&record.response_id).or_insert(record);
    }

    let mut per_response: BTreeMap<String, BTreeMap<AspectId, f64>> = BTreeMap::new();
    for ((response_id, aspect), scores) in &fair_by_key {
        per_response
            .entry(response_id.clone())
            .or_default()
            .insert(*aspect, aspect_score(scores)?);
    }

    let mut records = Vec::with_capacity(per_response.len());
    for (response_id, aspects) in per_response {
        let source = meta[response_id.as_str()];
        let vector = AnalyticScoreVector::new(response_id.clone(), source.part, aspects.clone())?;
        records.push(AnalyticRecord {
            response_id,
            candidate_id: source.candidate_id.clone(),
            part: source.part,
            split: source.split,
            holistic: part_holistic(&vector),
            aspects,
        });
    }
    Ok(records)
}

fn aggregate_holistic(
    analytic: &[AnalyticRecord],
    profile: &CorpusProfile,
) -> Result<Vec<HolisticRecord>> {
    let mut by_candidate: BTreeMap<&str, Vec<&AnalyticRecord>> = BTreeMap::new();
    for record in analytic {
        by_candidate
            .entry(&record.candidate_id)
            .or_default()
            .push(record);
    }
    let mut records = Vec::with_capacity(by_candidate.len());
    for (candidate_id, parts) in by_candidate {
        let split = parts[0].split;
        if parts.iter().any(|p| p.split != split) {
            return Err(NlaError::Validation(format!(
                "candidate {candidate_id:?} has responses in multiple splits"
            )));
        }
        let mut part_scores = BTreeMap::new();
        for record in &parts {
            if part_scores.insert(record.part, record.holistic).is_some() {
                return Err(NlaError::Validation(format!(
                    "candidate {candidate_id:?} has two responses for part {}",
                    record.part
                )));
            }
        }
        let score = overall_score(candidate_id, &part_scores)?;
        let missing_parts: Vec<u8> = profile
            .parts
            .iter()
            .copied()
            .filter(|p| !part_scores.contains_key(p))
            .collect();
        records.push(HolisticRecord {
            candidate_id: candidate_id.to_string(),
            split,
            part_scores,
            overall: score.overall,
            missing_parts,
        });
    }
    Ok(records)
}

/// A scored run directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub manifest: RunManifest,
    pub distributions: Vec<DistributionRecord>,
    pub analytic: Vec<AnalyticRecord>,
    pub holistic: Vec<HolisticRecord>,
}

pub fn load_run(paths: &RunPaths) -> Result<RunArtifacts> {
    let manifest = load_manifest(paths)?;
    let (_, distributions): (ArtifactHeader, Vec<DistributionRecord>) =
        read_jsonl(&paths.distributions(), DISTRIBUTIONS_SCHEMA)?;
    let (_, analytic): (ArtifactHeader, Vec<AnalyticRecord>) =
        read_jsonl(&paths.analytic(), ANALYTIC_SCHEMA)?;
    let (_, holistic): (ArtifactHeader, Vec<HolisticRecord>) =
        read_jsonl(&paths.holistic(), HOLISTIC_SCHEMA)?;
    Ok(RunArtifacts {
        manifest,
        distributions,
        analytic,
        holistic,
    })
}

/// One correlation row of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: Split,
    /// `Some(part)` for a per-part row, `None` for the overall row.
    pub part: Option<u8>,
    pub pcc: f64,
    pub src: f64,
    pub n: usize,
}

/// PCC/SRC of predictions against references, per part and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<EvalRow>,
}

fn refs_by_candidate(refs: &[ReferenceScore]) -> BTreeMap<&str, &ReferenceScore> {
    refs.iter().map(|r| (r.candidate_id.as_str(), r)).collect()
}

fn correlation_row(
    split: Split,
    part: Option<u8>,
    predicted: &[f64],
    reference: &[f64],
) -> Result<EvalRow> {
    let p = pcc(predicted, reference)?;
    let s = src(predicted, reference)?;
    Ok(EvalRow {
        split,
        part,
        pcc: p.value,
        src: s.value,
        n: predicted.len(),
    })
}

fn splits_present(holistic: &[HolisticRecord]) -> Vec<Split> {
    let mut splits: Vec<Split> = holistic.iter().map(|h| h.split).collect();
    splits.sort();
    splits.dedup();
    splits
}

/// Correlates predicted scores with references, one row per (split, part)
/// plus an overall row per split.
pub fn evaluate(run: &RunArtifacts, refs: &[ReferenceScore]) -> Result<EvaluationReport> {
    let refs = refs_by_candidate(refs);
    let mut rows = Vec::new();
    for split in splits_present(&run.holistic) {
        let candidates: Vec<&HolisticRecord> =
            run.holistic.iter().filter(|h| h.split == split).collect();
        for &part in &run.manifest.profile.parts {
            let mut predicted = Vec::new();
            let mut reference = Vec::new();
            for h in &candidates {
                let (Some(&p), Some(r)) =
                    (h.part_scores.get(&part), refs.get(h.candidate_id.as_str()))
                else {
                    continue;
                };
                let Some(&rp) = r.parts.get(&part) else {
                    continue;
                };
                predicted.push(p);
                reference.push(rp);
            }
            if predicted.len() >= 2 {
                rows.push(correlation_row(split, Some(part), &predicted, &reference)?);
            }
        }
        let mut predicted = Vec::new();
        let mut reference = Vec::new();
        for h in &candidates {
            let Some(r) = refs.get(h.candidate_id.as_str()) else {
                return Err(NlaError::Validation(format!(
                    "candidate {:?} in run has no reference score",
                    h.candidate_id
                )));
            };
            predicted.push(h.overall);
            reference.push(r.overall);
        }
        rows.push(correlation_row(split, None, &predicted, &reference)?);
    }
    Ok(EvaluationReport { rows })
}

/// Output of the ridge recombination pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub alpha: f64,
    pub beta: BetaReport,
    /// Correlations of the ridge-aggregated overall predictions.
    pub rows: Vec<EvalRow>,
}

fn analytic_row(record: &AnalyticRecord) -> Vec<f64> {
    AspectId::ALL.iter().map(|a| record.aspects[a]).collect()
}

/// Fits one ridge model per profile part on the dev split, then evaluates
/// part-averaged ridge predictions on every split.
pub fn fit(
    run: &RunArtifacts,
    refs: &[ReferenceScore],
    cfg: &RidgeConfig,
) -> Result<(BTreeMap<u8, RegressionModel>, FitReport)> {
    let refs = refs_by_candidate(refs);
    let mut models = BTreeMap::new();
    for &part in &run.manifest.profile.parts {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for record in &run.analytic {
            if record.split != Split::Dev || record.part != part {
                continue;
            }
            let reference = refs.get(record.candidate_id.as_str()).ok_or_else(|| {
                NlaError::Validation(format!(
                    "candidate {:?} in run has no reference score",
                    record.candidate_id
                ))
            })?;
            let &target = reference.parts.get(&part).ok_or_else(|| {
                NlaError::Validation(format!(
                    "candidate {:?} has no reference score for part {part}",
                    record.candidate_id
                ))
            })?;
            x.push(analytic_row(record));
            y.push(target);
        }
        if x.is_empty() {
            return Err(NlaError::Validation(format!(
                "no dev-split responses for part {part}; cannot fit"
            )));
        }
        models.insert(part, RegressionModel::fit(part, &x, &y, cfg)?);
    }
    let beta = beta_report(&models, &run.manifest.profile.parts)?;

    let mut rows = Vec::new();
    for split in splits_present(&run.holistic) {
        let mut predicted = Vec::new();
        let mut reference = Vec::new();
        let mut by_candidate: BTreeMap<&str, Vec<&AnalyticRecord>> = BTreeMap::new();
        for record in run.analytic.iter().filter(|r| r.split == split) {
            by_candidate
                .entry(&record.candidate_id)
                .or_default()
                .push(record);
        }
        for (candidate_id, records) in by_candidate {
            let r = refs.get(candidate_id).ok_or_else(|| {
                NlaError::Validation(format!(
                    "candidate {candidate_id:?} in run has no reference score"
                ))
            })?;
            let mut part_predictions = Vec::new();
            for record in records {
                let model = &models[&record.part];
                let vector = AnalyticScoreVector::new(
                    record.response_id.clone(),
                    record.part,
                    record.aspects.clone(),
                )?;
                part_predictions.push(ridge_predict(model, &vector)?);
            }
            predicted.push(part_predictions.iter().sum::<f64>() / part_predictions.len() as f64);
            reference.push(r.overall);
        }
        if predicted.len() >= 2 {
            rows.push(correlation_row(split, None, &predicted, &reference)?);
        }
    }
    let report = FitReport {
        alpha: cfg.alpha,
        beta,
        rows,
    };
    Ok((models, report))
}

/// Positional-bias table over a scored run.
pub fn bias(run: &RunArtifacts, aggregation: BiasAggregation) -> Result<BiasReport> {
    let dists: Vec<ScoreDistribution> = run
        .distributions
        .iter()
        .map(|r| ScoreDistribution {
            response_id: r.response_id.clone(),
            aspect: r.aspect,
            ordering_index: r.ordering_index,
            probs: r.probs.clone(),
        })
        .collect();
    bias_report(&dists, aggregation)
}

/// The assembled rank-test input and both test results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub split: Split,
    /// Column labels: the ten aspect codes, then "reference".
    pub columns: Vec<String>,
    pub n_rows: usize,
    pub friedman: FriedmanResult,
    pub nemenyi: NemenyiResult,
}

/// Builds the subjects-by-groups matrix for the rank battery: one row per
/// candidate of `split`, columns are the candidate's per-aspect means
/// across parts plus the reference overall score (k = 11).
pub fn assemble_stats_matrix(
    run: &RunArtifacts,
    refs: &[ReferenceScore],
    split: Split,
) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let refs = refs_by_candidate(refs);
    let mut by_candidate: BTreeMap<&str, Vec<&AnalyticRecord>> = BTreeMap::new();
    for record in run.analytic.iter().filter(|r| r.split == split) {
        by_candidate
            .entry(&record.candidate_id)
            .or_default()
            .push(record);
    }
    if by_candidate.is_empty() {
        return Err(NlaError::Validation(format!(
            "no candidates in the {split:?} split"
        )));
    }
    let mut matrix = Vec::with_capacity(by_candidate.len());
    for (candidate_id, records) in by_candidate {
        let reference = refs.get(candidate_id).ok_or_else(|| {
            NlaError::Validation(format!(
                "candidate {candidate_id:?} in run has no reference score"
            ))
        })?;
        let mut row = Vec::with_capacity(AspectId::ALL.len() + 1);
        for &aspect in &AspectId::ALL {
            let mean =
                records.iter().map(|r| r.aspects[&aspect]).sum::<f64>() / records.len() as f64;
            row.push(mean);
        }
        row.push(reference.overall);
        matrix.push(row);
    }
    let mut columns: Vec<String> = AspectId::ALL.iter().map(|a| a.code().to_string()).collect();
    columns.push("reference".to_string());
    Ok((matrix, columns))
}

/// Runs the Friedman test and Nemenyi post-hoc over the assembled matrix.
pub fn stats(run: &RunArtifacts, refs: &[ReferenceScore], split: Split) -> Result<StatsReport> {
    let (matrix, columns) = assemble_stats_matrix(run, refs, split)?;
    Ok(StatsReport {
        split,
        n_rows: matrix.len(),
        friedman: friedman(&matrix)?,
        nemenyi: nemenyi(&matrix)?,
        columns,
    })
}
