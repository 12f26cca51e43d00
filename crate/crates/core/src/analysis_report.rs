//! Unblinded analysis of collected responses.
//!
//! Three agreement analyses are computed per feature:
//!
//! * between-method: per rater, original vs reconstruction of the same record and
//!   lead (first occurrence of duplicated records);
//! * inter-rater: per rater pair, answers on the same presentation;
//! * within-observer: per rater, first vs second occurrence of duplicated
//!   presentations.
//!
//! Every cell keeps the contingency table it was computed from. Outputs refer to
//! records by record id only.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement_stats::{contingency, kappa_with, AgreementError, ContingencyTable, KappaOptions, KappaResult};
use crate::questionnaire::{Feature, LeadAnswers, QuestionnaireSchema};
use crate::session::ResponseRecord;
use crate::study_builder::{Arm, BlindingKey, KeyEntry};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("the blinding key is still sealed; unseal it after data collection has finished")]
    KeySealed,
    #[error("the blinding key was unsealed at {unsealed_at}, before the last response at {last_response}")]
    UnsealedEarly { unsealed_at: String, last_response: String },
    #[error("{0} responses refer to presentations missing from the blinding key")]
    UnknownPresentations(usize),
    #[error("{feature}: {source}")]
    Table {
        feature: Feature,
        #[source]
        source: AgreementError,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// Refuses analysis while the key is sealed or was unsealed before the last response.
pub fn check_key_released(key: &BlindingKey, responses: &[ResponseRecord]) -> Result<(), AnalysisError> {
    if key.sealed {
        return Err(AnalysisError::KeySealed);
    }
    let last = responses.iter().map(|r| r.submitted_at).max();
    match (key.unsealed_at, last) {
        (None, _) => Err(AnalysisError::KeySealed),
        (Some(at), Some(last)) if at < last => Err(AnalysisError::UnsealedEarly {
            unsealed_at: at.to_rfc3339(),
            last_response: last.to_rfc3339(),
        }),
        _ => Ok(()),
    }
}

/// Keeps the newest record per (rater, strip); resubmissions replace earlier answers.
pub fn live_responses(responses: &[ResponseRecord]) -> Vec<ResponseRecord> {
    let mut live: BTreeMap<(&str, &str), &ResponseRecord> = BTreeMap::new();
    for r in responses {
        let slot = live.entry((r.rater.as_str(), r.strip_id.as_str())).or_insert(r);
        if r.seq > slot.seq {
            *slot = r;
        }
    }
    live.into_values().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    BetweenMethod,
    InterRater,
    WithinObserver,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::BetweenMethod => "between-method",
            Analysis::InterRater => "inter-rater",
            Analysis::WithinObserver => "within-observer",
        }
    }
}

/// Which presentations enter the inter-rater comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmFilter {
    #[default]
    Both,
    Original,
    Reconstructed,
}

impl ArmFilter {
    fn admits(self, arm: Arm) -> bool {
        match self {
            ArmFilter::Both => true,
            ArmFilter::Original => arm == Arm::Original,
            ArmFilter::Reconstructed => arm == Arm::Reconstructed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCell {
    pub feature: Feature,
    /// Rater id, or `A-B` for a rater pair.
    pub group: String,
    /// `None` when no pairs were available.
    pub table: Option<ContingencyTable>,
    pub kappa: Option<KappaResult>,
}

impl AgreementCell {
    pub fn n(&self) -> u64 {
        self.table.as_ref().map_or(0, ContingencyTable::n)
    }

    pub fn p_o_percent(&self) -> Option<f64> {
        self.kappa.as_ref().map(|k| 100.0 * k.p_o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub analysis: Analysis,
    pub features: Vec<Feature>,
    pub groups: Vec<String>,
    /// Feature-major, then group, in the order of `features` and `groups`.
    pub cells: Vec<AgreementCell>,
    pub warnings: Vec<String>,
}

impl AgreementReport {
    pub fn cell(&self, feature: Feature, group: &str) -> Option<&AgreementCell> {
        self.cells.iter().find(|c| c.feature == feature && c.group == group)
    }
}

/// Features reported by default: the wave-shape items, then the pathology ticks.
pub fn default_features() -> Vec<Feature> {
    Feature::SHAPE.iter().chain(Feature::PATHOLOGY.iter()).copied().collect()
}

/// Responses joined with the key, addressable by rater and presentation.
struct Joined<'a> {
    entries: HashMap<&'a str, &'a KeyEntry>,
    /// rater -> strip id -> answers
    answers: BTreeMap<&'a str, HashMap<&'a str, &'a [LeadAnswers]>>,
}

impl<'a> Joined<'a> {
    fn new(responses: &'a [ResponseRecord], key: &'a BlindingKey) -> Result<Self, AnalysisError> {
        let entries = key.index();
        let mut answers: BTreeMap<&str, HashMap<&str, &[LeadAnswers]>> = BTreeMap::new();
        let mut unknown = 0;
        for r in responses {
            if !entries.contains_key(r.strip_id.as_str()) {
                unknown += 1;
                continue;
            }
            answers
                .entry(r.rater.as_str())
                .or_default()
                .insert(r.strip_id.as_str(), &r.answers.leads);
        }
        if unknown > 0 {
            return Err(AnalysisError::UnknownPresentations(unknown));
        }
        Ok(Joined { entries, answers })
    }

    /// The key entry for (record, arm, occurrence).
    fn locate(&self) -> BTreeMap<(&'a str, Arm, u8), &'a KeyEntry> {
        self.entries
            .values()
            .map(|e| ((e.record_id.as_str(), e.arm, e.occurrence), *e))
            .collect()
    }
}

type Pairs = Vec<(String, String)>;

fn lead_pairs(feature: Feature, a: &[LeadAnswers], b: &[LeadAnswers], out: &mut Pairs) {
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (feature.value(x), feature.value(y)) {
            out.push((x, y));
        }
    }
}

fn build_cells(
    features: &[Feature],
    groups: &[String],
    schema: &QuestionnaireSchema,
    opts: &KappaOptions,
    pairs: &BTreeMap<(Feature, String), Pairs>,
) -> Result<Vec<AgreementCell>, AnalysisError> {
    let mut cells = Vec::new();
    for &feature in features {
        for group in groups {
            let p = pairs.get(&(feature, group.clone())).map_or(&[][..], Vec::as_slice);
            let table = if p.is_empty() {
                None
            } else {
                Some(
                    contingency(p, &feature.categories(schema))
                        .map_err(|source| AnalysisError::Table { feature, source })?,
                )
            };
            let kappa = table.as_ref().map(|t| kappa_with(t, opts));
            cells.push(AgreementCell {
                feature,
                group: group.clone(),
                table,
                kappa,
            });
        }
    }
    Ok(cells)
}

/// Original vs reconstructed answers per rater; rows of each table are the original.
pub fn between_method(
    responses: &[ResponseRecord],
    key: &BlindingKey,
    features: &[Feature],
    opts: &KappaOptions,
) -> Result<AgreementReport, AnalysisError> {
    let joined = Joined::new(responses, key)?;
    let locate = joined.locate();
    let records: BTreeSet<&str> = key.entries.iter().map(|e| e.record_id.as_str()).collect();
    let mut pairs: BTreeMap<(Feature, String), Pairs> = BTreeMap::new();
    let mut warnings = Vec::new();
    let groups: Vec<String> = joined.answers.keys().map(|r| r.to_string()).collect();
    for (rater, given) in &joined.answers {
        for record in &records {
            let answer = |arm: Arm| {
                locate
                    .get(&(*record, arm, 1))
                    .and_then(|e| given.get(e.id.as_str()))
            };
            match (answer(Arm::Original), answer(Arm::Reconstructed)) {
                (Some(o), Some(r)) => {
                    for &feature in features {
                        lead_pairs(feature, o, r, pairs.entry((feature, rater.to_string())).or_default());
                    }
                }
                (None, None) => {}
                (o, _) => warnings.push(format!(
                    "rater {rater}: record {record} has no {} answers; skipped",
                    if o.is_some() { Arm::Reconstructed } else { Arm::Original }
                )),
            }
        }
    }
    Ok(AgreementReport {
        analysis: Analysis::BetweenMethod,
        features: features.to_vec(),
        cells: build_cells(features, &groups, &key.schema, opts, &pairs)?,
        groups,
        warnings,
    })
}

/// Rater-pair agreement on identical presentations; rows are the first rater of the pair.
pub fn inter_rater(
    responses: &[ResponseRecord],
    key: &BlindingKey,
    features: &[Feature],
    arms: ArmFilter,
    opts: &KappaOptions,
) -> Result<AgreementReport, AnalysisError> {
    let joined = Joined::new(responses, key)?;
    let raters: Vec<&str> = joined.answers.keys().copied().collect();
    let mut pairs: BTreeMap<(Feature, String), Pairs> = BTreeMap::new();
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let group = format!("{a}-{b}");
            let (ga, gb) = (&joined.answers[a], &joined.answers[b]);
            let mut shared: Vec<&&str> = ga
                .keys()
                .filter(|id| gb.contains_key(*id) && arms.admits(joined.entries[*id].arm))
                .collect();
            shared.sort_by_key(|id| {
                let e = joined.entries[**id];
                (e.subset, e.position)
            });
            if shared.is_empty() {
                warnings.push(format!("raters {a} and {b} answered no common presentations"));
            }
            for id in shared {
                for &feature in features {
                    lead_pairs(feature, ga[*id], gb[*id], pairs.entry((feature, group.clone())).or_default());
                }
            }
            groups.push(group);
        }
    }
    Ok(AgreementReport {
        analysis: Analysis::InterRater,
        features: features.to_vec(),
        cells: build_cells(features, &groups, &key.schema, opts, &pairs)?,
        groups,
        warnings,
    })
}

/// First vs second occurrence of duplicated presentations, per rater.
pub fn within_observer(
    responses: &[ResponseRecord],
    key: &BlindingKey,
    features: &[Feature],
    opts: &KappaOptions,
) -> Result<AgreementReport, AnalysisError> {
    let joined = Joined::new(responses, key)?;
    let locate = joined.locate();
    let repeated: BTreeSet<(&str, Arm)> = key
        .entries
        .iter()
        .filter(|e| e.occurrence == 2)
        .map(|e| (e.record_id.as_str(), e.arm))
        .collect();
    let mut warnings = Vec::new();
    if repeated.is_empty() {
        warnings.push("the study has no repeated presentations".to_string());
    }
    let mut pairs: BTreeMap<(Feature, String), Pairs> = BTreeMap::new();
    let groups: Vec<String> = joined.answers.keys().map(|r| r.to_string()).collect();
    for (rater, given) in &joined.answers {
        for &(record, arm) in &repeated {
            let answer = |occ: u8| locate.get(&(record, arm, occ)).and_then(|e| given.get(e.id.as_str()));
            match (answer(1), answer(2)) {
                (Some(first), Some(second)) => {
                    for &feature in features {
                        lead_pairs(feature, first, second, pairs.entry((feature, rater.to_string())).or_default());
                    }
                }
                (None, None) => {}
                _ => warnings.push(format!(
                    "rater {rater}: record {record} ({arm}) was answered only once; skipped"
                )),
            }
        }
    }
    Ok(AgreementReport {
        analysis: Analysis::WithinObserver,
        features: features.to_vec(),
        cells: build_cells(features, &groups, &key.schema, opts, &pairs)?,
        groups,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityCell {
    pub record_id: String,
    pub lead: String,
    pub rater: String,
    pub q_original: u8,
    pub q_reconstructed: u8,
    /// `q_original − q_reconstructed`; negative when the reconstruction scored better.
    pub diff: i16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordQuality {
    pub record_id: String,
    pub mean_diff: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityDiff {
    /// Sorted by record, lead order, rater.
    pub cells: Vec<QualityCell>,
    /// Mean over raters and leads, per record.
    pub records: Vec<RecordQuality>,
}

/// Quality score differences, first occurrence of each arm.
pub fn quality_diff(responses: &[ResponseRecord], key: &BlindingKey) -> Result<QualityDiff, AnalysisError> {
    let joined = Joined::new(responses, key)?;
    let locate = joined.locate();
    let records: BTreeSet<&str> = key.entries.iter().map(|e| e.record_id.as_str()).collect();
    let mut cells = Vec::new();
    for record in &records {
        let (Some(eo), Some(er)) = (locate.get(&(*record, Arm::Original, 1)), locate.get(&(*record, Arm::Reconstructed, 1))) else {
            continue;
        };
        for (lead_index, lead) in eo.leads.iter().enumerate() {
            for (rater, given) in &joined.answers {
                let score = |e: &KeyEntry| {
                    given
                        .get(e.id.as_str())
                        .and_then(|leads| leads.get(lead_index))
                        .and_then(|l| l.quality)
                };
                if let (Some(qo), Some(qr)) = (score(eo), score(er)) {
                    cells.push(QualityCell {
                        record_id: record.to_string(),
                        lead: lead.clone(),
                        rater: rater.to_string(),
                        q_original: qo,
                        q_reconstructed: qr,
                        diff: i16::from(qo) - i16::from(qr),
                    });
                }
            }
        }
    }
    let mut sums: BTreeMap<&str, (i64, usize)> = BTreeMap::new();
    for c in &cells {
        let s = sums.entry(c.record_id.as_str()).or_default();
        s.0 += i64::from(c.diff);
        s.1 += 1;
    }
    let records = sums
        .into_iter()
        .map(|(record, (sum, n))| RecordQuality {
            record_id: record.to_string(),
            mean_diff: sum as f64 / n as f64,
            n,
        })
        .collect();
    Ok(QualityDiff { cells, records })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisPair {
    pub record_id: String,
    pub rater: String,
    pub original: Option<String>,
    pub reconstructed: Option<String>,
    /// Identical after trimming surrounding whitespace.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSummary {
    pub rater: String,
    pub pairs: usize,
    pub exact_percent: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReview {
    pub pairs: Vec<DiagnosisPair>,
    pub summary: Vec<DiagnosisSummary>,
}

/// Free-text diagnoses side by side for manual review, with an exact-match share.
pub fn diagnosis_review(responses: &[ResponseRecord], key: &BlindingKey) -> Result<DiagnosisReview, AnalysisError> {
    let joined = Joined::new(responses, key)?;
    let diagnoses: HashMap<(&str, &str), Option<&str>> = responses
        .iter()
        .map(|r| ((r.rater.as_str(), r.strip_id.as_str()), r.answers.diagnosis.as_deref()))
        .collect();
    let locate = joined.locate();
    let records: BTreeSet<&str> = key.entries.iter().map(|e| e.record_id.as_str()).collect();
    let mut pairs = Vec::new();
    for rater in joined.answers.keys() {
        for record in &records {
            let text = |arm: Arm| {
                locate
                    .get(&(*record, arm, 1))
                    .and_then(|e| diagnoses.get(&(*rater, e.id.as_str())))
            };
            if let (Some(o), Some(r)) = (text(Arm::Original), text(Arm::Reconstructed)) {
                let clean = |s: &Option<&str>| s.map(str::trim).filter(|s| !s.is_empty()).map(str::to_string);
                let (o, r) = (clean(o), clean(r));
                if o.is_none() && r.is_none() {
                    continue;
                }
                pairs.push(DiagnosisPair {
                    record_id: record.to_string(),
                    rater: rater.to_string(),
                    exact: o == r,
                    original: o,
                    reconstructed: r,
                });
            }
        }
    }
    let summary = joined
        .answers
        .keys()
        .map(|rater| {
            let mine: Vec<&DiagnosisPair> = pairs.iter().filter(|p| p.rater == *rater).collect();
            DiagnosisSummary {
                rater: rater.to_string(),
                pairs: mine.len(),
                exact_percent: (!mine.is_empty())
                    .then(|| 100.0 * mine.iter().filter(|p| p.exact).count() as f64 / mine.len() as f64),
            }
        })
        .collect();
    Ok(DiagnosisReview { pairs, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub inter_rater_arms: ArmFilter,
    pub kappa: KappaOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub between_method: AgreementReport,
    pub inter_rater: AgreementReport,
    pub within_observer: AgreementReport,
    pub quality: QualityDiff,
    pub diagnosis: DiagnosisReview,
}

/// All analyses. Resubmissions are resolved to the newest answer first.
pub fn analyze(
    responses: &[ResponseRecord],
    key: &BlindingKey,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport, AnalysisError> {
    let live = live_responses(responses);
    let features = default_features();
    Ok(AnalysisReport {
        between_method: between_method(&live, key, &features, &opts.kappa)?,
        inter_rater: inter_rater(&live, key, &features, opts.inter_rater_arms, &opts.kappa)?,
        within_observer: within_observer(&live, key, &features, &opts.kappa)?,
        quality: quality_diff(&live, key)?,
        diagnosis: diagnosis_review(&live, key)?,
    })
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.1}"))
}

fn fmt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// Table layout: one row per feature, four columns per rater or rater pair.
pub fn agreement_csv(report: &AgreementReport) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["feature".to_string()];
    for g in &report.groups {
        header.extend([
            format!("{g} kappa (kappa_max)"),
            format!("{g} 95% CI"),
            format!("{g} P_o %"),
            format!("{g} n"),
        ]);
    }
    w.write_record(&header)?;
    for &feature in &report.features {
        let mut row = vec![feature.name().to_string()];
        for g in &report.groups {
            let cell = report.cell(feature, g);
            let k = cell.and_then(|c| c.kappa.as_ref());
            row.extend([
                k.map_or_else(|| "n/a (n/a)".into(), KappaResult::cell),
                k.map_or_else(|| "n/a".into(), KappaResult::ci_cell),
                fmt_pct(cell.and_then(AgreementCell::p_o_percent)),
                cell.map_or(0, AgreementCell::n).to_string(),
            ]);
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// Long-format concordance data behind the agreement figures.
pub fn concordance_csv(reports: &[&AgreementReport]) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "analysis", "feature", "group", "n", "p_o_percent", "kappa", "kappa_max", "ci_low", "ci_high", "na",
    ])?;
    for report in reports {
        for c in &report.cells {
            let k = c.kappa.as_ref();
            w.write_record([
                report.analysis.name().to_string(),
                c.feature.name().to_string(),
                c.group.clone(),
                c.n().to_string(),
                c.p_o_percent().map_or_else(String::new, |v| format!("{v:.6}")),
                fmt_num(k.and_then(|k| k.kappa)),
                fmt_num(k.and_then(|k| k.kappa_max)),
                fmt_num(k.and_then(|k| k.ci95).map(|c| c.0)),
                fmt_num(k.and_then(|k| k.ci95).map(|c| c.1)),
                k.map_or(String::new(), |k| k.na.to_string()),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

fn quality_csv(q: &QualityDiff) -> Result<(String, String), AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["record", "lead", "rater", "q_original", "q_reconstructed", "diff"])?;
    for c in &q.cells {
        w.write_record([
            c.record_id.clone(),
            c.lead.clone(),
            c.rater.clone(),
            c.q_original.to_string(),
            c.q_reconstructed.to_string(),
            c.diff.to_string(),
        ])?;
    }
    let cells = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["record", "mean_diff", "n"])?;
    for r in &q.records {
        w.write_record([r.record_id.clone(), format!("{:.6}", r.mean_diff), r.n.to_string()])?;
    }
    let means = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8");
    Ok((cells, means))
}

fn diagnosis_csv(d: &DiagnosisReview) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["record", "rater", "original", "reconstructed", "exact"])?;
    for p in &d.pairs {
        w.write_record([
            p.record_id.clone(),
            p.rater.clone(),
            p.original.clone().unwrap_or_default(),
            p.reconstructed.clone().unwrap_or_default(),
            p.exact.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
}

/// File name → contents. Deterministic for a given report.
pub fn render_files(report: &AnalysisReport) -> Result<BTreeMap<String, String>, AnalysisError> {
    let mut files = BTreeMap::new();
    for r in [&report.between_method, &report.inter_rater, &report.within_observer] {
        files.insert(format!("{}.csv", r.analysis.name()), agreement_csv(r)?);
    }
    files.insert(
        "concordance.csv".into(),
        concordance_csv(&[&report.between_method, &report.inter_rater, &report.within_observer])?,
    );
    let (cells, means) = quality_csv(&report.quality)?;
    files.insert("quality_diff.csv".into(), cells);
    files.insert("quality_means.csv".into(), means);
    files.insert("diagnosis_review.csv".into(), diagnosis_csv(&report.diagnosis)?);
    files.insert("report.json".into(), serde_json::to_string_pretty(report)? + "\n");
    Ok(files)
}

pub fn render_report(report: &AnalysisReport, dir: impl AsRef<Path>) -> Result<Vec<String>, AnalysisError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = render_files(report)?;
    for (name, contents) in &files {
        fs::write(dir.join(name), contents)?;
    }
    Ok(files.into_keys().collect())
}
