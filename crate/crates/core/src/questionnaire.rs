//! Per-lead wave-shape questionnaire: schema, answers and validation.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Answer options for every item. Labels are data so a study can change them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireSchema {
    pub version: u32,
    pub p_morphology: Vec<String>,
    pub qrs_morphology: Vec<String>,
    pub t_morphology: Vec<String>,
    pub st_morphology: Vec<String>,
    pub quality_min: u8,
    pub quality_max: u8,
}

impl Default for QuestionnaireSchema {
    fn default() -> Self {
        QuestionnaireSchema {
            version: SCHEMA_VERSION,
            p_morphology: strings(&["insignificant", "positive", "negative", "biphasic"]),
            qrs_morphology: strings(&["R", "Rs", "rS", "RS", "qR", "qRs", "QS", "Q", "rSr'", "other"]),
            t_morphology: strings(&["positive", "negative", "biphasic", "flattened"]),
            st_morphology: strings(&["normal", "ascending", "descending", "other"]),
            quality_min: 1,
            quality_max: 5,
        }
    }
}

impl QuestionnaireSchema {
    pub fn check(&self) -> Result<(), String> {
        for (name, labels) in [
            ("p_morphology", &self.p_morphology),
            ("qrs_morphology", &self.qrs_morphology),
            ("t_morphology", &self.t_morphology),
            ("st_morphology", &self.st_morphology),
        ] {
            let mut seen = std::collections::HashSet::new();
            if labels.len() < 2 || !labels.iter().all(|l| seen.insert(l)) {
                return Err(format!("{name} needs at least two distinct labels"));
            }
        }
        if self.quality_min > self.quality_max {
            return Err("quality_min exceeds quality_max".into());
        }
        Ok(())
    }
}

/// Optional "pathological" ticks per wave item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathologyFlags {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrs: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub st: Option<bool>,
}

/// Answers for one lead. Mandatory items are `Option` so that an incomplete
/// submission can be reported item by item instead of failing to parse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadAnswers {
    #[serde(default)]
    pub p_morphology: Option<String>,
    #[serde(default)]
    pub qrs_morphology: Option<String>,
    #[serde(default)]
    pub t_morphology: Option<String>,
    #[serde(default)]
    pub st_morphology: Option<String>,
    /// Unticked boxes are `false`.
    #[serde(default)]
    pub st_depressed: bool,
    #[serde(default)]
    pub st_elevated: bool,
    #[serde(default)]
    pub pathology: PathologyFlags,
    #[serde(default)]
    pub quality: Option<u8>,
}

/// Answers for one presentation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answers {
    pub leads: Vec<LeadAnswers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Path of the offending item, e.g. `leads[0].p_morphology`.
    pub item: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.item, self.message)
    }
}

impl Answers {
    /// Every problem found, in item order; empty when the answers are complete.
    pub fn validate(&self, schema: &QuestionnaireSchema, n_leads: usize) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        if self.leads.len() != n_leads {
            issues.push(ValidationIssue {
                item: "leads".into(),
                message: format!("expected answers for {n_leads} leads, got {}", self.leads.len()),
            });
        }
        for (i, lead) in self.leads.iter().enumerate() {
            let choices = [
                ("p_morphology", &lead.p_morphology, &schema.p_morphology),
                ("qrs_morphology", &lead.qrs_morphology, &schema.qrs_morphology),
                ("t_morphology", &lead.t_morphology, &schema.t_morphology),
                ("st_morphology", &lead.st_morphology, &schema.st_morphology),
            ];
            for (name, answer, options) in choices {
                let item = format!("leads[{i}].{name}");
                match answer {
                    None => issues.push(ValidationIssue {
                        item,
                        message: "missing".into(),
                    }),
                    Some(a) if !options.contains(a) => issues.push(ValidationIssue {
                        item,
                        message: format!("{a:?} is not one of {options:?}"),
                    }),
                    Some(_) => {}
                }
            }
            let item = format!("leads[{i}].quality");
            match lead.quality {
                None => issues.push(ValidationIssue {
                    item,
                    message: "missing".into(),
                }),
                Some(q) if q < schema.quality_min || q > schema.quality_max => issues.push(ValidationIssue {
                    item,
                    message: format!("{q} outside {}..={}", schema.quality_min, schema.quality_max),
                }),
                Some(_) => {}
            }
        }
        issues
    }
}

/// A categorical feature compared between two answers of the same lead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    PMorphology,
    QrsMorphology,
    TMorphology,
    StMorphology,
    StDepressed,
    StElevated,
    PathologyP,
    PathologyQrs,
    PathologyT,
    PathologySt,
}

const YES_NO: [&str; 2] = ["yes", "no"];

impl Feature {
    /// The wave-shape features reported in the agreement tables.
    pub const SHAPE: [Feature; 6] = [
        Feature::PMorphology,
        Feature::QrsMorphology,
        Feature::TMorphology,
        Feature::StMorphology,
        Feature::StDepressed,
        Feature::StElevated,
    ];

    pub const PATHOLOGY: [Feature; 4] = [
        Feature::PathologyP,
        Feature::PathologyQrs,
        Feature::PathologyT,
        Feature::PathologySt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::PMorphology => "P morphology",
            Feature::QrsMorphology => "QRS morphology",
            Feature::TMorphology => "T morphology",
            Feature::StMorphology => "ST morphology",
            Feature::StDepressed => "ST depressed",
            Feature::StElevated => "ST elevated",
            Feature::PathologyP => "P pathological",
            Feature::PathologyQrs => "QRS pathological",
            Feature::PathologyT => "T pathological",
            Feature::PathologySt => "ST pathological",
        }
    }

    pub fn categories(self, schema: &QuestionnaireSchema) -> Vec<String> {
        match self {
            Feature::PMorphology => schema.p_morphology.clone(),
            Feature::QrsMorphology => schema.qrs_morphology.clone(),
            Feature::TMorphology => schema.t_morphology.clone(),
            Feature::StMorphology => schema.st_morphology.clone(),
            _ => strings(&YES_NO),
        }
    }

    /// The category recorded in `lead`, if the item was answered.
    pub fn value(self, lead: &LeadAnswers) -> Option<String> {
        let flag = |b: Option<bool>| b.map(|b| YES_NO[usize::from(!b)].to_string());
        match self {
            Feature::PMorphology => lead.p_morphology.clone(),
            Feature::QrsMorphology => lead.qrs_morphology.clone(),
            Feature::TMorphology => lead.t_morphology.clone(),
            Feature::StMorphology => lead.st_morphology.clone(),
            Feature::StDepressed => flag(Some(lead.st_depressed)),
            Feature::StElevated => flag(Some(lead.st_elevated)),
            Feature::PathologyP => flag(lead.pathology.p),
            Feature::PathologyQrs => flag(lead.pathology.qrs),
            Feature::PathologyT => flag(lead.pathology.t),
            Feature::PathologySt => flag(lead.pathology.st),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
