//! Blinded study layout.
//!
//! Every record is shown twice, once per arm (original and reconstruction). A
//! seeded subset of records is shown twice per arm for within-observer checks.
//! Presentations are spread over work packages ("subsets") such that both arms of
//! a record never share a subset and the two copies of a duplicated arm never
//! share a subset either. Identifiers handed to raters are random 128-bit tokens;
//! the mapping back to records lives only in the separate [`BlindingKey`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::questionnaire::QuestionnaireSchema;
use crate::signal_io::{extract_strip, Record, SignalError};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
    #[error("constraints cannot be met: {0}")]
    Unsatisfiable(String),
    #[error("no {arm} recording for record {record}")]
    MissingRecording { record: String, arm: Arm },
    #[error("record {record}: {source}")]
    Signal {
        record: String,
        #[source]
        source: SignalError,
    },
    #[error("blinding key does not match manifest: {0}")]
    KeyMismatch(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Original,
    Reconstructed,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Original => "original",
            Arm::Reconstructed => "reconstructed",
        })
    }
}

/// One record of the study and the window shown to raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    pub id: String,
    pub leads: Vec<String>,
    #[serde(default)]
    pub t_start: f64,
    /// Seconds; the rest of the record when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterConfig {
    pub id: String,
    pub token: String,
}

fn default_duplicates() -> usize {
    6
}

fn default_subsets() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub records: Vec<RecordSpec>,
    /// Records presented twice in each arm.
    #[serde(default = "default_duplicates")]
    pub n_duplicates: usize,
    #[serde(default = "default_subsets")]
    pub n_subsets: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub raters: Vec<RaterConfig>,
    #[serde(default)]
    pub admin_token: String,
    #[serde(default)]
    pub schema: QuestionnaireSchema,
}

impl StudyConfig {
    pub fn check(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::InvalidConfig(m));
        if self.records.is_empty() {
            return bad("no records".into());
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(&r.id) {
                return bad(format!("record {} listed twice", r.id));
            }
            if r.leads.is_empty() {
                return bad(format!("record {} has no leads", r.id));
            }
        }
        if self.n_duplicates > self.records.len() {
            return bad(format!(
                "{} duplicates requested from {} records",
                self.n_duplicates,
                self.records.len()
            ));
        }
        if self.n_subsets < 2 {
            return bad("at least two subsets are needed to separate the arms".into());
        }
        let mut rater_ids = HashSet::new();
        let mut tokens = HashSet::new();
        for r in &self.raters {
            if !rater_ids.insert(&r.id) || r.token.is_empty() || !tokens.insert(&r.token) {
                return bad(format!("rater {} needs a unique id and a unique non-empty token", r.id));
            }
        }
        if tokens.contains(&self.admin_token) {
            return bad("admin token must differ from rater tokens".into());
        }
        self.schema.check().map_err(StudyError::InvalidConfig)
    }
}

/// One lead of a presentation as shown to raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripPayload {
    pub lead: String,
    pub fs: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    /// Opaque token, 32 lowercase hex digits.
    pub id: String,
    pub subset: usize,
    pub position: usize,
    pub strips: Vec<StripPayload>,
}

impl Presentation {
    pub fn n_leads(&self) -> usize {
        self.strips.len()
    }

    /// FNV-1a over lead names and sample bits. Ties key entries to payloads.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for s in &self.strips {
            eat(s.lead.as_bytes());
            eat(&s.fs.to_bits().to_le_bytes());
            for v in &s.samples {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        format!("{h:016x}")
    }
}

/// What the service needs to run the study. Holds no record ids or arm labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub study_id: String,
    pub n_subsets: usize,
    pub schema: QuestionnaireSchema,
    pub raters: Vec<RaterConfig>,
    pub admin_token: String,
    /// Sorted by `(subset, position)`.
    pub presentations: Vec<Presentation>,
}

impl StudyManifest {
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, StudyError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), StudyError> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn presentation(&self, id: &str) -> Option<&Presentation> {
        self.presentations.iter().find(|p| p.id == id)
    }

    pub fn subset_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_subsets];
        for p in &self.presentations {
            if let Some(s) = sizes.get_mut(p.subset) {
                *s += 1;
            }
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub id: String,
    pub record_id: String,
    pub arm: Arm,
    /// 1 or 2; 2 only for the second copy of a duplicated record.
    pub occurrence: u8,
    pub duplicate: bool,
    pub subset: usize,
    pub position: usize,
    pub leads: Vec<String>,
    pub digest: String,
}

/// The unblinding key. Kept away from the service; analysis requires it to be unsealed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindingKey {
    pub study_id: String,
    pub sealed: bool,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsealed_at: Option<DateTime<Utc>>,
    /// The questionnaire the study was run with; fixes the analysis categories.
    pub schema: QuestionnaireSchema,
    /// Sorted by `(subset, position)`.
    pub entries: Vec<KeyEntry>,
}

impl BlindingKey {
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, StudyError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), StudyError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Marks the key as released for analysis at `now`.
    pub fn unseal(&mut self, now: DateTime<Utc>) {
        self.sealed = false;
        self.unsealed_at = Some(now);
    }

    pub fn entry(&self, id: &str) -> Option<&KeyEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn index(&self) -> HashMap<&str, &KeyEntry> {
        self.entries.iter().map(|e| (e.id.as_str(), e)).collect()
    }
}

/// A presentation before ids and order are fixed.
struct Slot {
    record: usize,
    arm: Arm,
    occurrence: u8,
    subset: usize,
}

/// Lays out the study.
///
/// `originals` and `reconstructions` are looked up by record id.
pub fn build_study(
    config: &StudyConfig,
    originals: &[Record],
    reconstructions: &[Record],
) -> Result<(StudyManifest, BlindingKey), StudyError> {
    build_study_at(config, originals, reconstructions, Utc::now())
}

pub fn build_study_at(
    config: &StudyConfig,
    originals: &[Record],
    reconstructions: &[Record],
    now: DateTime<Utc>,
) -> Result<(StudyManifest, BlindingKey), StudyError> {
    config.check()?;
    if config.n_duplicates > 0 && config.n_subsets < 4 {
        return Err(StudyError::Unsatisfiable(format!(
            "duplicated records need four distinct subsets, only {} configured",
            config.n_subsets
        )));
    }
    fn find<'a>(set: &'a [Record], arm: Arm, id: &str) -> Result<&'a Record, StudyError> {
        set.iter()
            .find(|r| r.id == id)
            .ok_or_else(|| StudyError::MissingRecording {
                record: id.to_string(),
                arm,
            })
    }
    let sources: Vec<(&Record, &Record)> = config
        .records
        .iter()
        .map(|spec| {
            Ok((
                find(originals, Arm::Original, &spec.id)?,
                find(reconstructions, Arm::Reconstructed, &spec.id)?,
            ))
        })
        .collect::<Result<_, StudyError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_records = config.records.len();
    let mut order: Vec<usize> = (0..n_records).collect();
    order.shuffle(&mut rng);
    let duplicated: HashSet<usize> = order[..config.n_duplicates].iter().copied().collect();

    // duplicated records first: they need four distinct subsets
    let mut slots = Vec::with_capacity(2 * (n_records + config.n_duplicates));
    let mut load = vec![0usize; config.n_subsets];
    for &record in &order {
        let copies = if duplicated.contains(&record) { 2 } else { 1 };
        let mut arms: Vec<(Arm, u8)> = (1..=copies)
            .flat_map(|occ| [(Arm::Original, occ), (Arm::Reconstructed, occ)])
            .collect();
        arms.shuffle(&mut rng);
        let mut subsets: Vec<usize> = (0..config.n_subsets).collect();
        subsets.shuffle(&mut rng);
        subsets.sort_by_key(|&s| load[s]);
        for ((arm, occurrence), &subset) in arms.into_iter().zip(&subsets) {
            load[subset] += 1;
            slots.push(Slot {
                record,
                arm,
                occurrence,
                subset,
            });
        }
    }

    let mut by_subset: Vec<Vec<Slot>> = (0..config.n_subsets).map(|_| Vec::new()).collect();
    for slot in slots {
        by_subset[slot.subset].push(slot);
    }
    for subset in by_subset.iter_mut() {
        subset.sort_by_key(|s| (s.record, s.arm, s.occurrence));
        subset.shuffle(&mut rng);
    }

    let mut id_rng = ChaCha8Rng::seed_from_u64(config.seed);
    id_rng.set_stream(1);
    let mut issued = HashSet::new();
    let mut presentations = Vec::new();
    let mut entries = Vec::new();
    for (subset, slots) in by_subset.into_iter().enumerate() {
        for (position, slot) in slots.into_iter().enumerate() {
            let id = loop {
                let token = format!("{:032x}", id_rng.random::<u128>());
                if issued.insert(token.clone()) {
                    break token;
                }
            };
            let spec = &config.records[slot.record];
            let (original, reconstruction) = sources[slot.record];
            let source = match slot.arm {
                Arm::Original => original,
                Arm::Reconstructed => reconstruction,
            };
            let strips = spec
                .leads
                .iter()
                .map(|lead| {
                    let duration = spec.duration.unwrap_or(source.duration() - spec.t_start);
                    extract_strip(source, lead, spec.t_start, duration)
                        .map(|s| StripPayload {
                            lead: s.lead,
                            fs: s.fs,
                            samples: s.samples,
                        })
                        .map_err(|source| StudyError::Signal {
                            record: spec.id.clone(),
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let presentation = Presentation {
                id: id.clone(),
                subset,
                position,
                strips,
            };
            entries.push(KeyEntry {
                id,
                record_id: spec.id.clone(),
                arm: slot.arm,
                occurrence: slot.occurrence,
                duplicate: duplicated.contains(&slot.record),
                subset,
                position,
                leads: spec.leads.clone(),
                digest: presentation.digest(),
            });
            presentations.push(presentation);
        }
    }

    let manifest = StudyManifest {
        study_id: config.study_id.clone(),
        n_subsets: config.n_subsets,
        schema: config.schema.clone(),
        raters: config.raters.clone(),
        admin_token: config.admin_token.clone(),
        presentations,
    };
    let key = BlindingKey {
        study_id: config.study_id.clone(),
        sealed: true,
        created_at: now,
        unsealed_at: None,
        schema: config.schema.clone(),
        entries,
    };
    Ok((manifest, key))
}

/// A broken study invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    ArmsShareSubset { record: String, subset: usize },
    CopiesShareSubset { record: String, arm: Arm, subset: usize },
    WrongCopyCount { record: String, arm: Arm, found: usize, expected: usize },
    UnbalancedSubsets { sizes: Vec<usize> },
    BadPositions { subset: usize },
    SubsetOutOfRange { id: String, subset: usize },
    LeadCountMismatch { record: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ArmsShareSubset { record, subset } => {
                write!(f, "both arms of record {record} are in subset {subset}")
            }
            Violation::CopiesShareSubset { record, arm, subset } => {
                write!(f, "both {arm} copies of record {record} are in subset {subset}")
            }
            Violation::WrongCopyCount {
                record,
                arm,
                found,
                expected,
            } => write!(f, "record {record} has {found} {arm} presentations, expected {expected}"),
            Violation::UnbalancedSubsets { sizes } => write!(f, "subset sizes {sizes:?} differ by more than one"),
            Violation::BadPositions { subset } => {
                write!(f, "positions in subset {subset} are not 0..n in order")
            }
            Violation::SubsetOutOfRange { id, subset } => write!(f, "presentation {id} names subset {subset}"),
            Violation::LeadCountMismatch { record } => {
                write!(f, "presentations of record {record} differ in lead count")
            }
        }
    }
}

/// Checks every layout invariant. Errors only when key and manifest disagree.
/// (subset, lead count) of every presentation of one record, per arm.
type Placement = BTreeMap<Arm, Vec<(usize, usize)>>;

pub fn validate_study(manifest: &StudyManifest, key: &BlindingKey) -> Result<Vec<Violation>, StudyError> {
    if manifest.study_id != key.study_id {
        return Err(StudyError::KeyMismatch(format!(
            "study {} vs key for {}",
            manifest.study_id, key.study_id
        )));
    }
    let index = key.index();
    if index.len() != key.entries.len() || key.entries.len() != manifest.presentations.len() {
        return Err(StudyError::KeyMismatch(format!(
            "{} key entries for {} presentations",
            key.entries.len(),
            manifest.presentations.len()
        )));
    }
    for p in &manifest.presentations {
        let entry = index
            .get(p.id.as_str())
            .ok_or_else(|| StudyError::KeyMismatch(format!("presentation {} has no key entry", p.id)))?;
        if entry.digest != p.digest() {
            return Err(StudyError::KeyMismatch(format!(
                "key entry {} does not describe the presented signals",
                p.id
            )));
        }
    }

    let mut violations = Vec::new();
    let mut subsets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    // record -> arm -> (subsets, lead counts)
    let mut placement: BTreeMap<&str, Placement> = BTreeMap::new();
    let mut duplicated: HashMap<&str, bool> = HashMap::new();
    for p in &manifest.presentations {
        if p.subset >= manifest.n_subsets {
            violations.push(Violation::SubsetOutOfRange {
                id: p.id.clone(),
                subset: p.subset,
            });
        }
        subsets.entry(p.subset).or_default().push(p.position);
        let e = index[p.id.as_str()];
        placement
            .entry(e.record_id.as_str())
            .or_default()
            .entry(e.arm)
            .or_default()
            .push((p.subset, p.n_leads()));
        *duplicated.entry(e.record_id.as_str()).or_default() |= e.duplicate;
    }

    for (record, arms) in &placement {
        let expected = if duplicated[record] { 2 } else { 1 };
        for arm in [Arm::Original, Arm::Reconstructed] {
            let found = arms.get(&arm).map_or(0, Vec::len);
            if found != expected {
                violations.push(Violation::WrongCopyCount {
                    record: record.to_string(),
                    arm,
                    found,
                    expected,
                });
            }
        }
        for (arm, copies) in arms {
            let mut seen = HashSet::new();
            for &(subset, _) in copies {
                if !seen.insert(subset) {
                    violations.push(Violation::CopiesShareSubset {
                        record: record.to_string(),
                        arm: *arm,
                        subset,
                    });
                }
            }
        }
        if let (Some(o), Some(r)) = (arms.get(&Arm::Original), arms.get(&Arm::Reconstructed)) {
            let originals: HashSet<usize> = o.iter().map(|c| c.0).collect();
            let mut shared: Vec<usize> = r.iter().map(|c| c.0).filter(|s| originals.contains(s)).collect();
            shared.sort_unstable();
            shared.dedup();
            for subset in shared {
                violations.push(Violation::ArmsShareSubset {
                    record: record.to_string(),
                    subset,
                });
            }
        }
        let leads: HashSet<usize> = arms.values().flatten().map(|c| c.1).collect();
        if leads.len() > 1 {
            violations.push(Violation::LeadCountMismatch {
                record: record.to_string(),
            });
        }
    }

    let sizes = manifest.subset_sizes();
    if sizes.iter().max().unwrap_or(&0) - sizes.iter().min().unwrap_or(&0) > 1 {
        violations.push(Violation::UnbalancedSubsets { sizes });
    }
    let mut last = None;
    for p in &manifest.presentations {
        if let Some((subset, position)) = last {
            if p.subset == subset && p.position != position + 1 || p.subset < subset {
                violations.push(Violation::BadPositions { subset: p.subset });
            }
        }
        last = Some((p.subset, p.position));
    }
    for (subset, mut positions) in subsets {
        positions.sort_unstable();
        if positions.iter().enumerate().any(|(i, &p)| i != p) {
            violations.push(Violation::BadPositions { subset });
        }
    }
    violations.dedup();
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::Lead;

    fn record(id: &str, level: f64) -> Record {
        let leads = ["I", "II", "V1"]
            .iter()
            .enumerate()
            .map(|(k, name)| Lead {
                name: name.to_string(),
                samples: (0..720).map(|i| level + k as f64 + (i as f64 * 0.05).sin()).collect(),
            })
            .collect();
        Record::new(id.to_string(), 360.0, leads, None).unwrap()
    }

    fn config(n_records: usize, n_duplicates: usize, n_subsets: usize, seed: u64) -> (StudyConfig, Vec<Record>, Vec<Record>) {
        let ids: Vec<String> = (0..n_records).map(|i| format!("mgh{:03}", i + 1)).collect();
        let config = StudyConfig {
            study_id: "demo".into(),
            records: ids
                .iter()
                .map(|id| RecordSpec {
                    id: id.clone(),
                    leads: vec!["I".into(), "II".into(), "V1".into()],
                    t_start: 0.0,
                    duration: Some(1.0),
                })
                .collect(),
            n_duplicates,
            n_subsets,
            seed,
            raters: vec![],
            admin_token: "admin".into(),
            schema: QuestionnaireSchema::default(),
        };
        let originals = ids.iter().enumerate().map(|(i, id)| record(id, i as f64)).collect();
        let recon = ids.iter().enumerate().map(|(i, id)| record(id, i as f64 + 0.5)).collect();
        (config, originals, recon)
    }

    fn build(n: usize, d: usize, s: usize, seed: u64) -> (StudyManifest, BlindingKey) {
        let (c, o, r) = config(n, d, s, seed);
        build_study(&c, &o, &r).unwrap()
    }

    #[test]
    fn full_size_layout() {
        let (m, k) = build(26, 6, 4, 7);
        assert_eq!(m.presentations.len(), 64);
        assert_eq!(m.presentations.iter().map(Presentation::n_leads).sum::<usize>(), 192);
        assert_eq!(m.subset_sizes(), vec![16; 4]);
        assert_eq!(k.entries.iter().filter(|e| e.occurrence == 2).count(), 12);
        assert!(validate_study(&m, &k).unwrap().is_empty());
        assert!(k.sealed);
    }

    #[test]
    fn minimal_layout() {
        let (m, k) = build(2, 0, 2, 1);
        assert_eq!(m.presentations.len(), 4);
        for subset in 0..2 {
            let mut records: Vec<&str> = k
                .entries
                .iter()
                .filter(|e| e.subset == subset)
                .map(|e| e.record_id.as_str())
                .collect();
            records.sort_unstable();
            assert_eq!(records, ["mgh001", "mgh002"]);
        }
        assert!(validate_study(&m, &k).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_study() {
        let (c, o, r) = config(10, 2, 4, 42);
        let t = Utc::now();
        let a = build_study_at(&c, &o, &r, t).unwrap();
        let b = build_study_at(&c, &o, &r, t).unwrap();
        assert_eq!(a, b);
        let (c2, ..) = config(10, 2, 4, 43);
        let other = build_study_at(&c2, &o, &r, t).unwrap();
        assert_ne!(a.0.presentations[0].id, other.0.presentations[0].id);
    }

    #[test]
    fn duplicates_need_four_subsets() {
        let (c, o, r) = config(6, 1, 3, 0);
        assert!(matches!(build_study(&c, &o, &r), Err(StudyError::Unsatisfiable(_))));
        let (c, o, r) = config(6, 0, 1, 0);
        assert!(matches!(build_study(&c, &o, &r), Err(StudyError::InvalidConfig(_))));
        let (c, o, r) = config(3, 4, 4, 0);
        assert!(matches!(build_study(&c, &o, &r), Err(StudyError::InvalidConfig(_))));
    }

    #[test]
    fn missing_reconstruction_is_reported() {
        let (c, o, mut r) = config(3, 0, 2, 0);
        r.pop();
        assert!(matches!(
            build_study(&c, &o, &r),
            Err(StudyError::MissingRecording {
                arm: Arm::Reconstructed,
                ..
            })
        ));
    }

    #[test]
    fn manifest_holds_no_record_ids_or_arms() {
        let (m, k) = build(26, 6, 4, 3);
        let text = serde_json::to_string(&m).unwrap();
        for e in &k.entries {
            assert!(!text.contains(&e.record_id));
        }
        assert!(!text.contains("original") && !text.contains("reconstructed"));
        assert!(m.presentations.iter().all(|p| p.id.len() == 32 && p.id.chars().all(|c| c.is_ascii_hexdigit())));
    }

    #[test]
    fn swapped_presentation_is_one_violation() {
        let (mut m, k) = build(26, 6, 4, 11);
        let entry = |k: &BlindingKey, id: &str| k.entry(id).unwrap().clone();
        // move an original of a non-duplicated record into the subset holding its
        // reconstruction, trading places with a presentation that is free to move back
        let (a, b) = m
            .presentations
            .iter()
            .enumerate()
            .flat_map(|(i, p)| m.presentations.iter().enumerate().map(move |(j, q)| (i, p, j, q)))
            .find_map(|(i, p, j, q)| {
                let ep = entry(&k, &p.id);
                let eq = entry(&k, &q.id);
                let holds = |subset: usize, record: &str| {
                    k.entries.iter().any(|e| e.subset == subset && e.record_id == record)
                };
                let target = k
                    .entries
                    .iter()
                    .find(|e| e.record_id == ep.record_id && e.arm == Arm::Reconstructed)?
                    .subset;
                (!ep.duplicate
                    && ep.arm == Arm::Original
                    && q.subset == target
                    && eq.record_id != ep.record_id
                    && !holds(p.subset, &eq.record_id))
                .then_some((i, j))
            })
            .unwrap();
        let record = k.entry(&m.presentations[a].id).unwrap().record_id.clone();
        let (sa, pa) = (m.presentations[a].subset, m.presentations[a].position);
        let (sb, pb) = (m.presentations[b].subset, m.presentations[b].position);
        m.presentations[a].subset = sb;
        m.presentations[a].position = pb;
        m.presentations[b].subset = sa;
        m.presentations[b].position = pa;
        m.presentations.sort_by_key(|p| (p.subset, p.position));
        assert_eq!(
            validate_study(&m, &k).unwrap(),
            vec![Violation::ArmsShareSubset { record, subset: sb }]
        );
    }

    #[test]
    fn shuffled_key_is_rejected() {
        let (m, mut k) = build(8, 2, 4, 5);
        let ids: Vec<String> = k.entries.iter().map(|e| e.id.clone()).collect();
        for (i, e) in k.entries.iter_mut().enumerate() {
            e.id = ids[(i + 1) % ids.len()].clone();
        }
        assert!(matches!(validate_study(&m, &k), Err(StudyError::KeyMismatch(_))));

        let (m, mut k) = build(8, 2, 4, 5);
        k.entries.pop();
        assert!(matches!(validate_study(&m, &k), Err(StudyError::KeyMismatch(_))));
    }

    #[test]
    fn unseal_stamps_time() {
        let (_, mut k) = build(2, 0, 2, 0);
        let t = Utc::now();
        k.unseal(t);
        assert!(!k.sealed);
        assert_eq!(k.unsealed_at, Some(t));
    }
}
