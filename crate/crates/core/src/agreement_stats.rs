//! Cohen's kappa and friends for K×K contingency tables.
//!
//! Rows hold the first measurement (original signal, or first rater), columns the
//! second. With row totals `g_i`, column totals `f_i` and `n` observations:
//!
//! ```text
//! P_o = Σ_i n_ii / n          P_c = Σ_i f_i g_i / n²
//! κ   = (P_o − P_c) / (1 − P_c)
//! κ_max uses P_o,max = Σ_i min(f_i, g_i) / n in place of P_o
//! SE  = sqrt(P_o (1 − P_o) / (n (1 − P_c)²)),   CI = κ ± 1.96 SE clipped to [−1, 1]
//! ```
//!
//! κ and κ_max are evaluated from integer sums, so the degenerate cases (κ = 0 when
//! observed equals chance agreement, "not applicable" when `Σ f_i g_i = n²`) are exact.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("label {0:?} is not one of the table categories")]
    UnknownLabel(String),
    #[error("a contingency table needs at least one observation")]
    Empty,
    #[error("categories must be non-empty and distinct")]
    BadCategories,
    #[error("counts must form a {0}×{0} matrix")]
    NotSquare(usize),
    #[error("kappa value {0} lies outside [-1, 1]")]
    OutOfRange(f64),
    #[error("not a permutation of {0} categories")]
    BadPermutation(usize),
}

/// Category-by-category counts. Rows: first measurement, columns: second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct ContingencyTable {
    categories: Vec<String>,
    counts: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    categories: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl TryFrom<RawTable> for ContingencyTable {
    type Error = AgreementError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        ContingencyTable::new(raw.categories, raw.counts)
    }
}

impl From<ContingencyTable> for RawTable {
    fn from(t: ContingencyTable) -> Self {
        RawTable {
            categories: t.categories,
            counts: t.counts,
        }
    }
}

impl ContingencyTable {
    pub fn new(categories: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, AgreementError> {
        let k = categories.len();
        let mut seen = std::collections::HashSet::new();
        if k == 0 || !categories.iter().all(|c| seen.insert(c)) {
            return Err(AgreementError::BadCategories);
        }
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(AgreementError::NotSquare(k));
        }
        let table = ContingencyTable { categories, counts };
        if table.n() == 0 {
            return Err(AgreementError::Empty);
        }
        Ok(table)
    }

    /// The dichotomous layout: `a` and `d` on the diagonal, `b` = (positive, negative),
    /// `c` = (negative, positive).
    pub fn two_by_two(a: u64, b: u64, c: u64, d: u64) -> Result<Self, AgreementError> {
        Self::new(
            vec!["positive".into(), "negative".into()],
            vec![vec![a, b], vec![c, d]],
        )
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.categories.len()
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `g_i`: totals of the first measurement.
    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// `f_i`: totals of the second measurement.
    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.k()).map(|j| self.counts.iter().map(|row| row[j]).sum()).collect()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Same table with the roles of the two measurements swapped.
    pub fn transposed(&self) -> Self {
        let k = self.k();
        let counts = (0..k).map(|i| (0..k).map(|j| self.counts[j][i]).collect()).collect();
        ContingencyTable {
            categories: self.categories.clone(),
            counts,
        }
    }

    /// Reorders categories: new category `i` is old category `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, AgreementError> {
        let k = self.k();
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..k).collect::<Vec<_>>() {
            return Err(AgreementError::BadPermutation(k));
        }
        Ok(ContingencyTable {
            categories: order.iter().map(|&i| self.categories[i].clone()).collect(),
            counts: order
                .iter()
                .map(|&i| order.iter().map(|&j| self.counts[i][j]).collect())
                .collect(),
        })
    }

    fn chance_sum(&self) -> u128 {
        self.row_totals()
            .iter()
            .zip(self.column_totals())
            .map(|(&g, f)| g as u128 * f as u128)
            .sum()
    }

    fn max_diagonal(&self) -> u64 {
        self.row_totals()
            .iter()
            .zip(self.column_totals())
            .map(|(&g, f)| g.min(f))
            .sum()
    }
}

/// Tallies `(first, second)` label pairs.
pub fn contingency<S: AsRef<str>>(pairs: &[(S, S)], categories: &[String]) -> Result<ContingencyTable, AgreementError> {
    if pairs.is_empty() {
        return Err(AgreementError::Empty);
    }
    let index: HashMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let k = categories.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (a, b) in pairs {
        let lookup = |s: &S| {
            index
                .get(s.as_ref())
                .copied()
                .ok_or_else(|| AgreementError::UnknownLabel(s.as_ref().to_string()))
        };
        counts[lookup(a)?][lookup(b)?] += 1;
    }
    ContingencyTable::new(categories.to_vec(), counts)
}

pub fn observed_agreement(table: &ContingencyTable) -> f64 {
    table.diagonal() as f64 / table.n() as f64
}

pub fn chance_agreement(table: &ContingencyTable) -> f64 {
    let n = table.n() as f64;
    table.chance_sum() as f64 / (n * n)
}

/// Which quantity divides `P_o − P_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaDenominator {
    /// `1 − P_c`, Cohen's definition.
    #[default]
    Classical,
    /// `1 − P_o`. Provided for comparison only; it is not bounded by 1.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KappaOptions {
    pub denominator: KappaDenominator,
    /// Normal quantile for the confidence interval.
    pub z: f64,
}

impl Default for KappaOptions {
    fn default() -> Self {
        KappaOptions {
            denominator: KappaDenominator::Classical,
            z: 1.96,
        }
    }
}

/// Strength-of-agreement bands; each band includes its upper endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interpretation {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpretation::Poor => "poor",
            Interpretation::Slight => "slight",
            Interpretation::Fair => "fair",
            Interpretation::Moderate => "moderate",
            Interpretation::Substantial => "substantial",
            Interpretation::AlmostPerfect => "almost perfect",
        })
    }
}

pub fn interpret(kappa: f64) -> Result<Interpretation, AgreementError> {
    if !(-1.0..=1.0).contains(&kappa) {
        return Err(AgreementError::OutOfRange(kappa));
    }
    Ok(if kappa < 0.0 {
        Interpretation::Poor
    } else if kappa <= 0.20 {
        Interpretation::Slight
    } else if kappa <= 0.40 {
        Interpretation::Fair
    } else if kappa <= 0.60 {
        Interpretation::Moderate
    } else if kappa <= 0.80 {
        Interpretation::Substantial
    } else {
        Interpretation::AlmostPerfect
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub n: u64,
    pub p_o: f64,
    pub p_c: f64,
    /// `None` when not applicable.
    pub kappa: Option<f64>,
    pub kappa_max: Option<f64>,
    pub se: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    /// `None` when κ is not applicable or outside [−1, 1].
    pub interpretation: Option<Interpretation>,
    /// True iff the denominator of κ is zero.
    pub na: bool,
    pub denominator: KappaDenominator,
}

impl KappaResult {
    /// `"0.40 (0.80)"`, or `"n/a (n/a)"`.
    pub fn cell(&self) -> String {
        format!("{} ({})", fmt_opt(self.kappa), fmt_opt(self.kappa_max))
    }

    /// `"(0.15, 0.65)"`, or `"n/a"`.
    pub fn ci_cell(&self) -> String {
        match self.ci95 {
            Some((lo, hi)) => format!("({}, {})", fmt2(lo), fmt2(hi)),
            None => "n/a".into(),
        }
    }
}

fn fmt2(v: f64) -> String {
    // avoid "-0.00"
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), fmt2)
}

fn ratio(num: i128, den: i128) -> Option<f64> {
    (den != 0).then(|| num as f64 / den as f64)
}

pub fn kappa(table: &ContingencyTable) -> KappaResult {
    kappa_with(table, &KappaOptions::default())
}

pub fn kappa_with(table: &ContingencyTable, opts: &KappaOptions) -> KappaResult {
    let n = table.n() as i128;
    let diag = table.diagonal() as i128;
    let chance = table.chance_sum() as i128;
    let max_diag = table.max_diagonal() as i128;
    let p_o = observed_agreement(table);
    let p_c = chance_agreement(table);
    // every quantity below is multiplied through by n², keeping integer sums exact
    let (kappa, kappa_max, denominator) = match opts.denominator {
        KappaDenominator::Classical => (
            ratio(n * diag - chance, n * n - chance),
            ratio(n * max_diag - chance, n * n - chance),
            1.0 - p_c,
        ),
        KappaDenominator::Printed => (
            ratio(n * diag - chance, n * (n - diag)),
            ratio(n * max_diag - chance, n * (n - max_diag)),
            1.0 - p_o,
        ),
    };
    let na = kappa.is_none();
    let se = kappa.map(|_| (p_o * (1.0 - p_o) / (n as f64)).sqrt() / denominator.abs());
    let ci95 = kappa.zip(se).map(|(k, se)| {
        (
            (k - opts.z * se).clamp(-1.0, 1.0),
            (k + opts.z * se).clamp(-1.0, 1.0),
        )
    });
    KappaResult {
        n: n as u64,
        p_o,
        p_c,
        kappa,
        kappa_max,
        se,
        ci95,
        interpretation: kappa.and_then(|k| interpret(k).ok()),
        na,
        denominator: opts.denominator,
    }
}

/// κ for many tables.
pub fn kappa_batch(tables: &[ContingencyTable], opts: &KappaOptions, exec: Execution) -> Vec<KappaResult> {
    exec.map(tables, |t| kappa_with(t, opts))
}
