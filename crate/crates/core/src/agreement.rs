//! Correlation tests and cross-population agreement reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clustering::CoMembership;
use crate::ctt::{DifficultyKind, DifficultyVector};
use crate::data::PopulationTag;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::special::student_t_two_sided;

/// Largest sample size for which Spearman p-values use the exact
/// permutation distribution.
pub const EXACT_SPEARMAN_MAX_N: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Pearson,
    Spearman,
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coefficient::Pearson => "pearson",
            Coefficient::Spearman => "spearman",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    TDistribution,
    ExactPermutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTest {
    pub r: f64,
    pub p: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Why a correlation could not be computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<(), Undefined> {
    if x.len() != y.len() {
        return Err(Undefined::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Undefined::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Undefined::NonFinite);
    }
    Ok(())
}

/// Sample Pearson r without a test; `None` on zero variance.
pub(crate) fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p for r from t = r·sqrt((n−2)/(1−r²)), n−2 df.
pub fn pearson_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    student_t_two_sided(r * (df / denom).sqrt(), df)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationTest, Undefined> {
    check_inputs(x, y)?;
    let r = pearson_r(x, y).ok_or(Undefined::ZeroVariance)?;
    Ok(CorrelationTest { r, p: pearson_p(r, x.len()), n: x.len(), method: PValueMethod::TDistribution })
}

/// Ranks 1..n with ties given their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1)..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationTest, Undefined> {
    spearman_with(x, y, Execution::Sequential)
}

/// Spearman rho (Pearson on average ranks). For n ≤ 9 the p-value comes
/// from the exact permutation distribution, otherwise from the t
/// approximation.
pub fn spearman_with(x: &[f64], y: &[f64], exec: Execution) -> Result<CorrelationTest, Undefined> {
    check_inputs(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson_r(&rx, &ry).ok_or(Undefined::ZeroVariance)?;
    let n = x.len();
    if n <= EXACT_SPEARMAN_MAX_N {
        let p = exact_permutation_p(&rx, &ry, exec);
        Ok(CorrelationTest { r: rho, p, n, method: PValueMethod::ExactPermutation })
    } else {
        Ok(CorrelationTest { r: rho, p: pearson_p(rho, n), n, method: PValueMethod::TDistribution })
    }
}

/// Two-sided exact p over all n! orderings of `ry` against fixed `rx`.
///
/// Ranks are multiples of 1/2, so doubled ranks are integers and the
/// statistic Σ(2rx)(2ry) is compared exactly. Rank multisets are fixed by
/// the permutation, so |rho| is monotone in |S − n(n+1)²|.
pub fn exact_permutation_p(rx: &[f64], ry: &[f64], exec: Execution) -> f64 {
    let n = rx.len();
    assert!(n <= 12, "exact enumeration is limited to small n");
    let x2: Vec<i64> = rx.iter().map(|r| (2.0 * r).round() as i64).collect();
    let y2: Vec<i64> = ry.iter().map(|r| (2.0 * r).round() as i64).collect();
    let center = (n * (n + 1) * (n + 1)) as i64;
    let observed: i64 = x2.iter().zip(&y2).map(|(a, b)| a * b).sum::<i64>() - center;
    let threshold = observed.abs();

    // Fix which y sits at position 0, enumerate the rest with Heap's algorithm.
    let counts = exec.map(n, |first| {
        let mut rest: Vec<i64> = y2.iter().enumerate().filter(|&(i, _)| i != first).map(|(_, &v)| v).collect();
        let head = x2[0] * y2[first];
        let tail_x = &x2[1..];
        let mut hits = 0u64;
        let mut tally = |perm: &[i64]| {
            let s: i64 = head + tail_x.iter().zip(perm).map(|(a, b)| a * b).sum::<i64>();
            if (s - center).abs() >= threshold {
                hits += 1;
            }
        };
        heap_permutations(&mut rest, &mut tally);
        hits
    });
    let total: u64 = (1..=n as u64).product();
    counts.iter().sum::<u64>() as f64 / total as f64
}

fn heap_permutations(v: &mut [i64], visit: &mut impl FnMut(&[i64])) {
    let k = v.len();
    let mut c = vec![0usize; k];
    visit(v);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// "***" for p < 0.001, "**" for p < 0.01, "*" for p < 0.05.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Which item property a compared vector holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    ProportionCorrect,
    RaschB,
    CoMembership,
    ItemTotal,
}

impl PropertyKind {
    /// Spearman for proportion correct; Pearson for everything else.
    pub fn default_coefficient(self) -> Coefficient {
        match self {
            PropertyKind::ProportionCorrect => Coefficient::Spearman,
            _ => Coefficient::Pearson,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PropertyKind::ProportionCorrect => "proportion_correct",
            PropertyKind::RaschB => "rasch_b",
            PropertyKind::CoMembership => "comembership",
            PropertyKind::ItemTotal => "item_total",
        }
    }
}

/// A population's per-item (or per item-pair) property values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyVector {
    pub population: PopulationTag,
    pub kind: PropertyKind,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl From<&DifficultyVector> for PropertyVector {
    fn from(d: &DifficultyVector) -> Self {
        PropertyVector {
            population: d.population.clone(),
            kind: match d.kind {
                DifficultyKind::ProportionCorrect => PropertyKind::ProportionCorrect,
                DifficultyKind::RaschB => PropertyKind::RaschB,
            },
            labels: d.item_ids.clone(),
            values: d.values.clone(),
        }
    }
}

impl PropertyVector {
    pub fn from_comembership(population: PopulationTag, c: &CoMembership) -> Self {
        PropertyVector {
            population,
            kind: PropertyKind::CoMembership,
            labels: c.pairs.iter().map(|(a, b)| format!("{a}|{b}")).collect(),
            values: c.bits.iter().map(|&b| f64::from(b)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub population: PopulationTag,
    pub coefficient: Coefficient,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub stars: String,
    pub n: usize,
    /// Highest |r| among the report's rows.
    pub strongest: bool,
    /// Reason the row is "n/a".
    pub note: Option<String>,
}

impl AgreementRow {
    pub fn not_available(population: PopulationTag, coefficient: Coefficient, n: usize, note: String) -> Self {
        AgreementRow { population, coefficient, r: None, p: None, stars: String::new(), n, strongest: false, note: Some(note) }
    }

    /// Cell text in the table layout: stars then r to two decimals.
    pub fn cell(&self) -> String {
        match self.r {
            Some(r) => format!("{}{:.2}", self.stars, r),
            None => "n/a".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub category: String,
    pub property: PropertyKind,
    pub reference_population: PopulationTag,
    pub rows: Vec<AgreementRow>,
}

impl AgreementReport {
    /// Set `strongest` on the row(s) with maximal |r|.
    pub fn mark_strongest(&mut self) {
        let best = self.rows.iter().filter_map(|r| r.r).map(f64::abs).fold(f64::NEG_INFINITY, f64::max);
        for row in &mut self.rows {
            row.strongest = row.r.is_some_and(|r| r.abs() == best);
        }
    }

    pub fn row(&self, population: &str) -> Option<&AgreementRow> {
        self.rows.iter().find(|r| r.population.name == population)
    }
}

/// Correlate each proxy's vector with the reference's.
///
/// All vectors must carry identical labels in identical order. Rows whose
/// correlation is undefined are kept as "n/a".
pub fn compare_populations(
    category: &str,
    reference: &PropertyVector,
    proxies: &[PropertyVector],
    coefficient: Option<Coefficient>,
) -> Result<AgreementReport> {
    let coefficient = coefficient.unwrap_or_else(|| reference.kind.default_coefficient());
    let mut rows = Vec::with_capacity(proxies.len());
    for proxy in proxies {
        if proxy.labels != reference.labels {
            return Err(Error::Misaligned(format!(
                "`{}` and `{}` differ in item ordering",
                reference.population.name, proxy.population.name
            )));
        }
        if proxy.kind != reference.kind {
            return Err(Error::Misaligned(format!(
                "`{}` holds {} but reference holds {}",
                proxy.population.name,
                proxy.kind.as_str(),
                reference.kind.as_str()
            )));
        }
        let test = match coefficient {
            Coefficient::Pearson => pearson(&reference.values, &proxy.values),
            Coefficient::Spearman => spearman(&reference.values, &proxy.values),
        };
        rows.push(match test {
            Ok(t) => AgreementRow {
                population: proxy.population.clone(),
                coefficient,
                r: Some(t.r),
                p: Some(t.p),
                stars: significance_stars(t.p).to_string(),
                n: t.n,
                strongest: false,
                note: None,
            },
            Err(e) => AgreementRow::not_available(proxy.population.clone(), coefficient, reference.values.len(), e.to_string()),
        });
    }
    let mut report = AgreementReport {
        category: category.to_string(),
        property: reference.kind,
        reference_population: reference.population.clone(),
        rows,
    };
    report.mark_strongest();
    Ok(report)
}
