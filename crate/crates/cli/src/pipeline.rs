//! End-to-end analysis: scored matrices per population, per-category item
//! statistics, and agreement with the reference population.

use psyagree_core::agreement::{compare_populations, AgreementReport, AgreementRow, Coefficient, PropertyKind, PropertyVector};
use psyagree_core::clustering::{agglomerate, comembership, iic_distance, mean_silhouette, select_k, ClusterAssignment};
use psyagree_core::ctt::{
    cronbach_alpha, inter_item_correlation_with, item_total_correlation, proportion_correct, AlphaResult, CorrelationMatrix,
    DifficultyVector, ItemTotalVariant,
};
use psyagree_core::data::{common_items, restrict_items};
use psyagree_core::irt::{fit_rasch_mml, RaschFit};
use psyagree_core::{score_responses, slice_by_category, ItemBank, PopulationTag, RawRecord, ResponseMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterK, RunConfig};
use crate::error::{CliError, CliResult};

/// Machine-readable notice about something skipped or degraded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<String>,
    pub message: String,
}

impl Warning {
    fn new(code: &str, category: &str, population: Option<&str>, message: impl Into<String>) -> Self {
        Warning { code: code.into(), category: Some(category.into()), population: population.map(Into::into), message: message.into() }
    }
}

/// The four compared item properties, in report order.
pub const PROPERTIES: [PropertyKind; 4] =
    [PropertyKind::ProportionCorrect, PropertyKind::CoMembership, PropertyKind::RaschB, PropertyKind::ItemTotal];

pub fn coefficient_for(cfg: &RunConfig, kind: PropertyKind) -> Coefficient {
    match kind {
        PropertyKind::ProportionCorrect => cfg.agreement.difficulty,
        PropertyKind::CoMembership => cfg.agreement.comembership,
        PropertyKind::RaschB => cfg.agreement.rasch_b,
        PropertyKind::ItemTotal => cfg.agreement.item_total,
    }
}

fn other(c: Coefficient) -> Coefficient {
    match c {
        Coefficient::Pearson => Coefficient::Spearman,
        Coefficient::Spearman => Coefficient::Pearson,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: ClusterAssignment,
    /// "auto" (silhouette) or "fixed".
    pub k_selection: String,
    pub silhouette: f64,
}

/// Item statistics of one population within one category.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationResult {
    pub population: PopulationTag,
    pub n_respondents: usize,
    pub difficulty: DifficultyVector,
    pub iic: CorrelationMatrix,
    pub clustering: Clustering,
    pub item_total: Vec<Option<f64>>,
    pub alpha: Option<AlphaResult>,
    pub rasch: Option<RaschFit>,
}

/// Agreement for one property in one category: the configured coefficient
/// and the other one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyAgreement {
    pub primary: AgreementReport,
    pub alternate: AgreementReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAnalysis {
    pub category: String,
    /// Items shared by every population, in bank order. Empty when skipped.
    pub item_ids: Vec<String>,
    pub skipped: bool,
    pub populations: Vec<PopulationResult>,
    pub agreement: Vec<PropertyAgreement>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub reference: PopulationTag,
    /// Compared populations in input order (reference excluded).
    pub proxies: Vec<PopulationTag>,
    pub categories: Vec<CategoryAnalysis>,
    pub warnings: Vec<Warning>,
}

/// Group records by population (first-appearance order) and score them.
pub fn population_matrices(records: &[RawRecord], bank: &ItemBank) -> CliResult<Vec<ResponseMatrix>> {
    let mut groups: Vec<(PopulationTag, Vec<RawRecord>)> = Vec::new();
    for rec in records {
        match groups.iter_mut().find(|(tag, _)| tag.name == rec.population.name) {
            Some((tag, recs)) => {
                if tag.kind != rec.population.kind {
                    return Err(CliError::Data(format!(
                        "population `{}` declared as both {} and {}",
                        tag.name,
                        tag.kind.as_str(),
                        rec.population.kind.as_str()
                    )));
                }
                recs.push(rec.clone());
            }
            None => groups.push((rec.population.clone(), vec![rec.clone()])),
        }
    }
    groups
        .into_iter()
        .map(|(_, recs)| {
            // resubmissions under one respondent id are ambiguous once scored
            let mut ids: Vec<&str> = recs.iter().map(|r| r.respondent_id.as_str()).collect();
            ids.sort_unstable();
            if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
                return Err(CliError::Data(format!(
                    "respondent `{}` of `{}` has several submissions; run validate first",
                    w[0], recs[0].population.name
                )));
            }
            score_responses(&recs, bank).map_err(CliError::from)
        })
        .collect()
}

pub fn analyze(bank: &ItemBank, records: &[RawRecord], cfg: &RunConfig) -> CliResult<Analysis> {
    cfg.check()?;
    let reference_name = cfg.reference.as_deref().ok_or_else(|| CliError::Usage("no reference population given (--reference)".into()))?;
    let mut matrices = population_matrices(records, bank)?;
    let pos = matrices
        .iter()
        .position(|m| m.population().name == reference_name)
        .ok_or_else(|| CliError::Config(format!("reference population `{reference_name}` not found in responses")))?;
    let reference = matrices.remove(pos);
    if matrices.is_empty() {
        return Err(CliError::Data("need at least one population besides the reference".into()));
    }
    matrices.insert(0, reference);

    let categories: Vec<String> = if cfg.categories.is_empty() {
        bank.categories().into_iter().filter(|c| bank.items().iter().any(|it| &it.category == c && !it.is_attention_check)).collect()
    } else {
        for c in &cfg.categories {
            if !bank.has_category(c) {
                return Err(CliError::Config(format!("unknown category `{c}`")));
            }
        }
        cfg.categories.clone()
    };

    let results: Vec<CliResult<CategoryAnalysis>> = categories.par_iter().map(|cat| analyze_category(cat, &matrices, bank, cfg)).collect();
    let categories = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let warnings = categories.iter().flat_map(|c| c.warnings.iter().cloned()).collect();
    Ok(Analysis {
        reference: matrices[0].population().clone(),
        proxies: matrices[1..].iter().map(|m| m.population().clone()).collect(),
        categories,
        warnings,
    })
}

fn skipped(category: &str, matrices: &[ResponseMatrix], cfg: &RunConfig, mut warnings: Vec<Warning>, why: &str) -> CategoryAnalysis {
    let reference = matrices[0].population().clone();
    let agreement = PROPERTIES
        .iter()
        .map(|&kind| {
            let report = |coef| {
                let rows =
                    matrices[1..].iter().map(|m| AgreementRow::not_available(m.population().clone(), coef, 0, why.to_string())).collect();
                AgreementReport { category: category.into(), property: kind, reference_population: reference.clone(), rows }
            };
            let coef = coefficient_for(cfg, kind);
            PropertyAgreement { primary: report(coef), alternate: report(other(coef)) }
        })
        .collect();
    warnings.push(Warning::new("category_skipped", category, None, why));
    CategoryAnalysis { category: category.into(), item_ids: Vec::new(), skipped: true, populations: Vec::new(), agreement, warnings }
}

fn analyze_category(category: &str, matrices: &[ResponseMatrix], bank: &ItemBank, cfg: &RunConfig) -> CliResult<CategoryAnalysis> {
    let mut warnings = Vec::new();
    let mut slices = Vec::with_capacity(matrices.len());
    for m in matrices {
        let s = slice_by_category(m, category, bank)?.drop_empty();
        if s.n_respondents() == 0 {
            return Ok(skipped(
                category,
                matrices,
                cfg,
                warnings,
                &format!("population `{}` answered no items in this category", m.population().name),
            ));
        }
        slices.push(s);
    }
    let shared = common_items(&slices.iter().collect::<Vec<_>>());
    for s in &slices {
        let excluded: Vec<&String> = s.item_ids().iter().filter(|id| !shared.contains(id)).collect();
        if !excluded.is_empty() {
            warnings.push(Warning::new(
                "items_not_shared",
                category,
                Some(&s.population().name),
                format!(
                    "{} item(s) not answered by every population were left out: {}",
                    excluded.len(),
                    excluded.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                ),
            ));
        }
    }
    if shared.len() < 3 {
        return Ok(skipped(
            category,
            matrices,
            cfg,
            warnings,
            &format!("only {} shared item(s); correlations need at least 3", shared.len()),
        ));
    }

    let mut populations = Vec::with_capacity(slices.len());
    for s in &slices {
        let m = restrict_items(s, &shared)?.drop_empty();
        populations.push(population_stats(category, &m, cfg, &mut warnings)?);
    }
    let agreement = PROPERTIES
        .iter()
        .map(|&kind| {
            let coef = coefficient_for(cfg, kind);
            PropertyAgreement {
                primary: property_report(category, kind, &populations, coef),
                alternate: property_report(category, kind, &populations, other(coef)),
            }
        })
        .collect();
    Ok(CategoryAnalysis { category: category.into(), item_ids: shared, skipped: false, populations, agreement, warnings })
}

fn population_stats(category: &str, m: &ResponseMatrix, cfg: &RunConfig, warnings: &mut Vec<Warning>) -> CliResult<PopulationResult> {
    let name = m.population().name.as_str();
    let exec = cfg.irt.execution;
    let difficulty = proportion_correct(m)?;
    let iic = inter_item_correlation_with(m, exec);
    let (dist, undefined) = iic_distance(&iic, cfg.strict).map_err(|e| CliError::Numerical(format!("{category}/{name}: {e}")))?;
    if !undefined.is_empty() {
        warnings.push(Warning::new(
            "undefined_correlation",
            category,
            Some(name),
            format!(
                "{} item pair(s) with undefined correlation set to distance 1: {}",
                undefined.len(),
                undefined.iter().map(|u| format!("{}|{}", u.item_a, u.item_b)).collect::<Vec<_>>().join(", ")
            ),
        ));
    }
    let n = dist.len();
    let (k, k_selection) = match cfg.clustering.k {
        ClusterK::Auto => {
            let hi = cfg.clustering.k_max.unwrap_or(n - 1).clamp(2, n - 1);
            (select_k(&dist, 2..=hi)?, "auto")
        }
        ClusterK::Fixed(k) if k > n => {
            warnings.push(Warning::new("k_clamped", category, Some(name), format!("k = {k} exceeds {n} items")));
            (n, "fixed")
        }
        ClusterK::Fixed(k) => (k, "fixed"),
    };
    let assignment = agglomerate(&dist, k)?;
    let silhouette = mean_silhouette(&dist, &labels_in_order(&assignment, &dist.item_ids));
    let clustering = Clustering { assignment, k_selection: k_selection.into(), silhouette };

    let item_total = match item_total_correlation(m, ItemTotalVariant::Corrected) {
        Ok(v) => v,
        Err(e) => {
            warnings.push(Warning::new("item_total_unavailable", category, Some(name), e.to_string()));
            vec![None; m.n_items()]
        }
    };
    let alpha = match cronbach_alpha(m) {
        Ok(a) => Some(a),
        Err(e) => {
            warnings.push(Warning::new("alpha_unavailable", category, Some(name), e.to_string()));
            None
        }
    };
    let rasch = match fit_rasch_mml(m, &cfg.irt) {
        Ok(fit) => {
            if !fit.converged {
                let msg = format!("EM stopped after {} iterations with max change {:.3e}", fit.iterations, fit.max_change);
                if cfg.strict {
                    return Err(CliError::Numerical(format!("{category}/{name}: {msg}")));
                }
                warnings.push(Warning::new("rasch_not_converged", category, Some(name), msg));
            }
            if !fit.dropped_items.is_empty() {
                warnings.push(Warning::new(
                    "rasch_items_dropped",
                    category,
                    Some(name),
                    fit.dropped_items
                        .iter()
                        .map(|d| {
                            format!(
                                "{} ({})",
                                d.item_id,
                                serde_json::to_value(d.reason).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default()
                            )
                        })
                        .collect::<Vec<_>>()
                        .join(", "),
                ));
            }
            Some(fit)
        }
        Err(e @ psyagree_core::Error::Numerical(_)) if cfg.strict => return Err(CliError::Numerical(format!("{category}/{name}: {e}"))),
        Err(e) => {
            warnings.push(Warning::new("rasch_unavailable", category, Some(name), e.to_string()));
            None
        }
    };
    Ok(PopulationResult {
        population: m.population().clone(),
        n_respondents: m.n_respondents(),
        difficulty,
        iic,
        clustering,
        item_total,
        alpha,
        rasch,
    })
}

fn labels_in_order(a: &ClusterAssignment, ids: &[String]) -> Vec<usize> {
    ids.iter().map(|id| a.label_of(id).expect("same item set")).collect()
}

/// The compared vector for one population, if it exists.
pub fn property_vector(p: &PopulationResult, kind: PropertyKind) -> Option<PropertyVector> {
    match kind {
        PropertyKind::ProportionCorrect => Some(PropertyVector::from(&p.difficulty)),
        PropertyKind::CoMembership => {
            Some(PropertyVector::from_comembership(p.population.clone(), &comembership(&p.clustering.assignment)))
        }
        PropertyKind::RaschB => p.rasch.as_ref().map(|f| PropertyVector::from(&f.difficulty_vector(p.population.clone()))),
        PropertyKind::ItemTotal => {
            let (labels, values) = p.difficulty.item_ids.iter().zip(&p.item_total).filter_map(|(id, v)| v.map(|v| (id.clone(), v))).unzip();
            Some(PropertyVector { population: p.population.clone(), kind, labels, values })
        }
    }
}

/// Restrict two vectors to their shared labels, in the reference's order.
fn intersect(reference: &PropertyVector, proxy: &PropertyVector) -> (PropertyVector, PropertyVector) {
    let mut r = PropertyVector { labels: Vec::new(), values: Vec::new(), ..reference.clone() };
    let mut p = PropertyVector { labels: Vec::new(), values: Vec::new(), ..proxy.clone() };
    for (label, &v) in reference.labels.iter().zip(&reference.values) {
        if let Some(j) = proxy.labels.iter().position(|l| l == label) {
            r.labels.push(label.clone());
            r.values.push(v);
            p.labels.push(label.clone());
            p.values.push(proxy.values[j]);
        }
    }
    (r, p)
}

fn property_report(category: &str, kind: PropertyKind, pops: &[PopulationResult], coef: Coefficient) -> AgreementReport {
    let reference = property_vector(&pops[0], kind);
    let rows = pops[1..]
        .iter()
        .map(|p| match (&reference, property_vector(p, kind)) {
            (Some(rv), Some(pv)) => {
                let (rv, pv) = intersect(rv, &pv);
                let n = rv.values.len();
                compare_populations(category, &rv, &[pv], Some(coef))
                    .map(|mut rep| rep.rows.remove(0))
                    .unwrap_or_else(|e| AgreementRow::not_available(p.population.clone(), coef, n, e.to_string()))
            }
            (None, _) => AgreementRow::not_available(p.population.clone(), coef, 0, "reference has no estimate".into()),
            (_, None) => AgreementRow::not_available(p.population.clone(), coef, 0, "population has no estimate".into()),
        })
        .collect();
    let mut report = AgreementReport { category: category.into(), property: kind, reference_population: pops[0].population.clone(), rows };
    report.mark_strongest();
    report
}
