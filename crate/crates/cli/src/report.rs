//! Output files of `analyze` and the agreement table layout.
//!
//! Layout under the output directory:
//!
//! ```text
//! report.md                       all agreement tables
//! warnings.json                   skipped categories, dropped items, ...
//! config.json                     resolved run configuration
//! tables/<property>.{md,csv,json} one table per compared property
//! categories/<category>/
//!     difficulty.csv              proportion correct, item x population
//!     item_total.csv              corrected item-total correlation
//!     iic_<population>.csv        inter-item correlation matrix
//!     clusters.csv                cluster label, item x population
//!     comembership.csv            same-cluster indicator, pair x population
//!     dendrogram_<population>.json
//!     rasch.csv                   b and standard error per population
//!     rasch_<population>.json     full fit
//!     agreement.json              per-property agreement, both coefficients
//!     summary.json                respondents, alpha, k, convergence
//! ```

use std::path::Path;

use psyagree_core::agreement::{AgreementReport, Coefficient, PropertyKind};
use psyagree_core::clustering::comembership;
use psyagree_core::PopulationTag;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::io::{csv_table, json_bytes, num, slug, write_atomic};
use crate::pipeline::{coefficient_for, Analysis, CategoryAnalysis, PROPERTIES};

/// One agreement table: category rows, population columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub property: PropertyKind,
    pub coefficient: Coefficient,
    pub reference: PopulationTag,
    pub populations: Vec<PopulationTag>,
    pub rows: Vec<AgreementReport>,
}

pub fn property_title(kind: PropertyKind) -> &'static str {
    match kind {
        PropertyKind::ProportionCorrect => "Item difficulty (proportion correct)",
        PropertyKind::CoMembership => "Cluster co-membership",
        PropertyKind::RaschB => "Rasch difficulty b",
        PropertyKind::ItemTotal => "Corrected item-total correlation",
    }
}

fn coefficient_name(c: Coefficient) -> &'static str {
    match c {
        Coefficient::Pearson => "Pearson r",
        Coefficient::Spearman => "Spearman rho",
    }
}

pub fn tables(analysis: &Analysis, cfg: &RunConfig) -> Vec<AgreementTable> {
    PROPERTIES
        .iter()
        .enumerate()
        .map(|(k, &kind)| AgreementTable {
            property: kind,
            coefficient: coefficient_for(cfg, kind),
            reference: analysis.reference.clone(),
            populations: analysis.proxies.clone(),
            rows: analysis.categories.iter().map(|c| c.agreement[k].primary.clone()).collect(),
        })
        .collect()
}

fn md_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('*', "\\*").replace('|', "\\|")
}

pub fn render_markdown(t: &AgreementTable) -> String {
    let mut out = format!(
        "### {} agreement with `{}` ({})\n\n| Category |",
        property_title(t.property),
        md_escape(&t.reference.name),
        coefficient_name(t.coefficient)
    );
    for p in &t.populations {
        out.push_str(&format!(" {} |", md_escape(&p.name)));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(t.populations.len()));
    out.push('\n');
    for row in &t.rows {
        out.push_str(&format!("| {} |", md_escape(&row.category)));
        for p in &t.populations {
            let cell = match row.row(&p.name) {
                Some(r) if r.strongest => format!("**{}**", md_escape(&r.cell())),
                Some(r) => md_escape(&r.cell()),
                None => "n/a".into(),
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out.push_str("\n\\* p < 0.05, \\*\\* p < 0.01, \\*\\*\\* p < 0.001 (two-sided). Bold: strongest |r| in the row.\n");
    out
}

pub fn render_report(tables: &[AgreementTable]) -> String {
    let mut out = String::from("# Agreement report\n");
    for t in tables {
        out.push('\n');
        out.push_str(&render_markdown(t));
    }
    out
}

pub fn table_csv(t: &AgreementTable) -> CliResult<Vec<u8>> {
    let header: Vec<String> = ["category", "population", "population_kind", "coefficient", "r", "p", "stars", "n", "strongest", "note"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .flat_map(|rep| {
            rep.rows.iter().map(move |r| {
                vec![
                    rep.category.clone(),
                    r.population.name.clone(),
                    r.population.kind.as_str().to_string(),
                    serde_json::to_value(r.coefficient).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    num(r.r),
                    num(r.p),
                    r.stars.clone(),
                    r.n.to_string(),
                    r.strongest.to_string(),
                    r.note.clone().unwrap_or_default(),
                ]
            })
        })
        .collect();
    csv_table(&header, &rows)
}

pub fn table_file_stem(kind: PropertyKind) -> &'static str {
    kind.as_str()
}

#[derive(Serialize)]
struct PopulationSummary<'a> {
    population: &'a PopulationTag,
    n_respondents: usize,
    alpha: Option<f64>,
    alpha_complete_rows: Option<usize>,
    k: usize,
    k_selection: &'a str,
    silhouette: f64,
    rasch_converged: Option<bool>,
    rasch_iterations: Option<usize>,
    rasch_log_likelihood: Option<f64>,
    rasch_discrimination: Option<f64>,
}

#[derive(Serialize)]
struct CategorySummary<'a> {
    category: &'a str,
    skipped: bool,
    item_ids: &'a [String],
    populations: Vec<PopulationSummary<'a>>,
}

fn write_category(dir: &Path, c: &CategoryAnalysis) -> CliResult<()> {
    let pops = &c.populations;
    let mut header = vec!["item_id".to_string()];
    header.extend(pops.iter().map(|p| p.population.name.clone()));

    if !c.skipped {
        let rows: Vec<Vec<String>> = c
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| std::iter::once(id.clone()).chain(pops.iter().map(|p| num(Some(p.difficulty.values[i])))).collect())
            .collect();
        write_atomic(&dir.join("difficulty.csv"), &csv_table(&header, &rows)?)?;

        let rows: Vec<Vec<String>> = c
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| std::iter::once(id.clone()).chain(pops.iter().map(|p| num(p.item_total[i]))).collect())
            .collect();
        write_atomic(&dir.join("item_total.csv"), &csv_table(&header, &rows)?)?;

        let rows: Vec<Vec<String>> = c
            .item_ids
            .iter()
            .map(|id| {
                std::iter::once(id.clone())
                    .chain(pops.iter().map(|p| p.clustering.assignment.label_of(id).map(|l| l.to_string()).unwrap_or_default()))
                    .collect()
            })
            .collect();
        write_atomic(&dir.join("clusters.csv"), &csv_table(&header, &rows)?)?;

        let co: Vec<_> = pops.iter().map(|p| comembership(&p.clustering.assignment)).collect();
        let mut co_header = vec!["item_a".to_string(), "item_b".to_string()];
        co_header.extend(pops.iter().map(|p| p.population.name.clone()));
        let rows: Vec<Vec<String>> = co[0]
            .pairs
            .iter()
            .enumerate()
            .map(|(j, (a, b))| [a.clone(), b.clone()].into_iter().chain(co.iter().map(|cm| cm.bits[j].to_string())).collect())
            .collect();
        write_atomic(&dir.join("comembership.csv"), &csv_table(&co_header, &rows)?)?;

        let mut rasch_header = vec!["item_id".to_string()];
        for p in pops {
            rasch_header.push(format!("b_{}", p.population.name));
            rasch_header.push(format!("se_{}", p.population.name));
        }
        let rows: Vec<Vec<String>> = c
            .item_ids
            .iter()
            .map(|id| {
                let mut row = vec![id.clone()];
                for p in pops {
                    let j = p.rasch.as_ref().and_then(|f| f.item_ids.iter().position(|x| x == id).map(|j| (f, j)));
                    row.push(num(j.map(|(f, j)| f.b[j])));
                    row.push(num(j.and_then(|(f, j)| f.se_b[j])));
                }
                row
            })
            .collect();
        write_atomic(&dir.join("rasch.csv"), &csv_table(&rasch_header, &rows)?)?;

        for p in pops {
            let s = slug(&p.population.name);
            let mut iic_rows = Vec::with_capacity(p.iic.len());
            for i in 0..p.iic.len() {
                let mut row = vec![p.iic.item_ids[i].clone()];
                row.extend((0..p.iic.len()).map(|j| num(p.iic.get(i, j))));
                iic_rows.push(row);
            }
            let mut iic_header = vec!["item_id".to_string()];
            iic_header.extend(p.iic.item_ids.iter().cloned());
            write_atomic(&dir.join(format!("iic_{s}.csv")), &csv_table(&iic_header, &iic_rows)?)?;
            write_atomic(&dir.join(format!("dendrogram_{s}.json")), &json_bytes(&p.clustering)?)?;
            if let Some(fit) = &p.rasch {
                write_atomic(&dir.join(format!("rasch_{s}.json")), &json_bytes(fit)?)?;
            }
        }
    }

    write_atomic(&dir.join("agreement.json"), &json_bytes(&c.agreement)?)?;
    let summary = CategorySummary {
        category: &c.category,
        skipped: c.skipped,
        item_ids: &c.item_ids,
        populations: pops
            .iter()
            .map(|p| PopulationSummary {
                population: &p.population,
                n_respondents: p.n_respondents,
                alpha: p.alpha.as_ref().and_then(|a| a.alpha),
                alpha_complete_rows: p.alpha.as_ref().map(|a| a.n_complete),
                k: p.clustering.assignment.k,
                k_selection: &p.clustering.k_selection,
                silhouette: p.clustering.silhouette,
                rasch_converged: p.rasch.as_ref().map(|f| f.converged),
                rasch_iterations: p.rasch.as_ref().map(|f| f.iterations),
                rasch_log_likelihood: p.rasch.as_ref().map(|f| f.log_likelihood),
                rasch_discrimination: p.rasch.as_ref().map(|f| f.discrimination),
            })
            .collect(),
    };
    write_atomic(&dir.join("summary.json"), &json_bytes(&summary)?)
}

/// Write every output file of an analysis.
pub fn write_analysis(out: &Path, analysis: &Analysis, cfg: &RunConfig) -> CliResult<Vec<AgreementTable>> {
    let written: Vec<CliResult<()>> =
        analysis.categories.par_iter().map(|c| write_category(&out.join("categories").join(slug(&c.category)), c)).collect();
    written.into_iter().collect::<CliResult<Vec<()>>>()?;

    let tables = tables(analysis, cfg);
    for t in &tables {
        let stem = out.join("tables").join(table_file_stem(t.property));
        write_atomic(&stem.with_extension("md"), render_markdown(t).as_bytes())?;
        write_atomic(&stem.with_extension("csv"), &table_csv(t)?)?;
        write_atomic(&stem.with_extension("json"), &json_bytes(t)?)?;
    }
    write_atomic(&out.join("report.md"), render_report(&tables).as_bytes())?;
    write_atomic(&out.join("warnings.json"), &json_bytes(&analysis.warnings)?)?;
    let resolved = RunConfig { output_dir: None, ..cfg.clone() };
    write_atomic(&out.join("config.json"), &json_bytes(&resolved)?)?;
    Ok(tables)
}

/// Load the tables an earlier `analyze` wrote.
pub fn read_tables(out: &Path) -> CliResult<Vec<AgreementTable>> {
    let mut tables = Vec::new();
    for kind in PROPERTIES {
        let path = out.join("tables").join(table_file_stem(kind)).with_extension("json");
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| crate::error::CliError::io(&path, e))?;
        let t: AgreementTable =
            serde_json::from_str(&text).map_err(|e| crate::error::CliError::schema(&path, Some(e.line() as u64), e.to_string()))?;
        tables.push(t);
    }
    if tables.is_empty() {
        return Err(crate::error::CliError::Config(format!("no tables found under {}", out.join("tables").display())));
    }
    Ok(tables)
}
