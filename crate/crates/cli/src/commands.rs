//! The four subcommands and their flags.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use psyagree_core::synth::{generate_random_guessers, generate_rasch_population, GenerativeSpec};
use psyagree_core::validation::{run_protocol, Decision, ValidationVerdict};
use psyagree_core::{Execution, Item, ItemBank, Label, PopulationKind, PopulationTag, RawRecord};
use serde::Serialize;

use crate::config::{ClusterK, RunConfig, SimModel, SimPopulation};
use crate::error::{CliError, CliResult};
use crate::io::{bank_csv, csv_table, json_bytes, num, read_bank, read_responses, responses_csv, slug, write_atomic};
use crate::pipeline::analyze;
use crate::report::{read_tables, render_report, write_analysis};

#[derive(Debug, Parser)]
#[command(name = "psyagree", version, about = "Screen crowd responses, compute item statistics, and compare populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Screen submissions and write accepted responses plus an audit log.
    Validate(CommonArgs),
    /// Item statistics per category and agreement tables.
    Analyze(CommonArgs),
    /// Generate a synthetic item bank and responses.
    Simulate(CommonArgs),
    /// Re-render the agreement tables of an earlier analysis as markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML config file; its values override flags.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Item bank (.csv or .json).
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Response file(s) in long format (.csv or .json).
    #[arg(long, num_args = 1..)]
    pub responses: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Reference population name.
    #[arg(long)]
    pub reference: Option<String>,
    /// Restrict to a category (repeatable).
    #[arg(long = "category")]
    pub categories: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fail (exit 3) on non-convergence or undefined correlations.
    #[arg(long)]
    pub strict: bool,
    /// Populations to screen (repeatable); default all of kind human.
    #[arg(long = "screen")]
    pub screen_populations: Vec<String>,
    #[arg(long)]
    pub reject_below: Option<f64>,
    #[arg(long)]
    pub accept_above: Option<f64>,
    #[arg(long)]
    pub attention_pass_min: Option<f64>,
    /// Number of clusters, or "auto".
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub quadrature_points: Option<usize>,
    /// Estimate one shared discrimination instead of fixing it at 1.
    #[arg(long)]
    pub estimate_discrimination: bool,
    /// Run numerical loops on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of an earlier `analyze`.
    #[arg(long)]
    pub analysis: PathBuf,
    /// Write here instead of standard output.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Defaults, then flags, then the config file.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.bank {
            cfg.bank = Some(p.clone());
        }
        if !self.responses.is_empty() {
            cfg.responses = self.responses.clone();
        }
        if let Some(p) = &self.out {
            cfg.output_dir = Some(p.clone());
        }
        if let Some(r) = &self.reference {
            cfg.reference = Some(r.clone());
        }
        if !self.categories.is_empty() {
            cfg.categories = self.categories.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.strict |= self.strict;
        if !self.screen_populations.is_empty() {
            cfg.screen_populations = self.screen_populations.clone();
        }
        if let Some(v) = self.reject_below {
            cfg.validation.reject_below = v;
        }
        if let Some(v) = self.accept_above {
            cfg.validation.accept_above = v;
        }
        if let Some(v) = self.attention_pass_min {
            cfg.validation.attention_pass_min = v;
        }
        if let Some(k) = &self.k {
            cfg.clustering.k = match k.as_str() {
                "auto" => ClusterK::Auto,
                s => ClusterK::Fixed(s.parse().map_err(|_| CliError::Usage(format!("--k expects an integer or auto, got `{s}`")))?),
            };
        }
        if let Some(q) = self.quadrature_points {
            cfg.irt.quadrature_points = q;
        }
        if self.estimate_discrimination {
            cfg.irt.discrimination = psyagree_core::irt::DiscriminationMode::EstimatedShared;
        }
        if self.sequential {
            cfg.irt.execution = Execution::Sequential;
        }
        match &self.config {
            Some(path) => cfg.with_file(path),
            None => {
                cfg.check()?;
                Ok(cfg)
            }
        }
    }
}

/// One audit-log line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub population: String,
    #[serde(flatten)]
    pub verdict: ValidationVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateSummary {
    pub screened: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub passed_through: usize,
}

pub fn audit_csv(entries: &[AuditEntry]) -> CliResult<Vec<u8>> {
    let header: Vec<String> =
        ["population", "respondent_id", "submission_index", "decision", "triggered_rules", "score", "attention", "evidence"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            let v = &e.verdict;
            vec![
                e.population.clone(),
                v.respondent_id.clone(),
                v.submission_index.to_string(),
                v.decision.as_str().to_string(),
                v.triggered_rules.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
                num(v.score),
                num(v.attention),
                v.evidence.join(" | "),
            ]
        })
        .collect();
    csv_table(&header, &rows)
}

pub fn cmd_validate(cfg: &RunConfig) -> CliResult<ValidateSummary> {
    let bank = read_bank(cfg.require_bank()?)?;
    let records = read_responses(cfg.require_responses()?)?;
    let out = cfg.require_output()?;

    let present: BTreeSet<&str> = records.iter().map(|r| r.population.name.as_str()).collect();
    let screened: BTreeSet<String> = if cfg.screen_populations.is_empty() {
        records.iter().filter(|r| r.population.kind == PopulationKind::Human).map(|r| r.population.name.clone()).collect()
    } else {
        for name in &cfg.screen_populations {
            if !records.is_empty() && !present.contains(name.as_str()) {
                return Err(CliError::Config(format!("screened population `{name}` not found in responses")));
            }
        }
        cfg.screen_populations.iter().cloned().collect()
    };

    let mut groups: BTreeMap<&str, Vec<RawRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| screened.contains(&r.population.name)) {
        groups.entry(r.population.name.as_str()).or_default().push(r.clone());
    }
    let mut audit = Vec::new();
    let mut keep: BTreeSet<(String, String, u64)> = BTreeSet::new();
    for (pop, recs) in &groups {
        let outcome = run_protocol(recs, &bank, &cfg.validation);
        for r in &outcome.accepted {
            keep.insert((pop.to_string(), r.respondent_id.clone(), r.submission_index));
        }
        audit.extend(outcome.audit.into_iter().map(|verdict| AuditEntry { population: pop.to_string(), verdict }));
    }
    let accepted: Vec<RawRecord> = records
        .iter()
        .filter(|r| {
            !screened.contains(&r.population.name)
                || keep.contains(&(r.population.name.clone(), r.respondent_id.clone(), r.submission_index))
        })
        .cloned()
        .collect();

    write_atomic(&out.join("accepted_responses.csv"), &responses_csv(&accepted)?)?;
    write_atomic(&out.join("audit.csv"), &audit_csv(&audit)?)?;
    write_atomic(&out.join("audit.json"), &json_bytes(&audit)?)?;
    let rejected = audit.iter().filter(|e| e.verdict.decision == Decision::Rejected).count();
    Ok(ValidateSummary {
        screened: audit.len(),
        accepted: audit.len() - rejected,
        rejected,
        passed_through: accepted.len() + rejected - audit.len(),
    })
}

pub fn cmd_analyze(cfg: &RunConfig) -> CliResult<crate::pipeline::Analysis> {
    let bank = read_bank(cfg.require_bank()?)?;
    let records = read_responses(cfg.require_responses()?)?;
    let out = cfg.require_output()?;
    let analysis = analyze(&bank, &records, cfg)?;
    write_analysis(out, &analysis, cfg)?;
    Ok(analysis)
}

#[derive(Debug, Serialize)]
struct TruthItem<'a> {
    item_id: &'a str,
    category: &'a str,
    b: f64,
}

#[derive(Debug, Serialize)]
struct Truth<'a> {
    seed: u64,
    items: Vec<TruthItem<'a>>,
    populations: Vec<SimPopulation>,
}

/// Simulated bank and records.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub bank: ItemBank,
    /// Generating difficulty per bank item.
    pub true_b: Vec<f64>,
    pub records: Vec<RawRecord>,
    /// Populations with their seeds filled in.
    pub populations: Vec<SimPopulation>,
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Simulation> {
    let sim = &cfg.simulate;
    if sim.categories.is_empty() || sim.populations.is_empty() {
        return Err(CliError::Config("simulate needs at least one category and one population".into()));
    }
    let mut items = Vec::new();
    let mut true_b = Vec::new();
    for c in &sim.categories {
        if c.n_items == 0 || !(c.b_min.is_finite() && c.b_max.is_finite()) {
            return Err(CliError::Config(format!("category `{}`: need n_items >= 1 and finite b range", c.name)));
        }
        for i in 0..c.n_items {
            let b =
                if c.n_items == 1 { 0.5 * (c.b_min + c.b_max) } else { c.b_min + (c.b_max - c.b_min) * i as f64 / (c.n_items - 1) as f64 };
            items.push(Item {
                item_id: format!("{}-{:02}", slug(&c.name), i + 1),
                category: c.name.clone(),
                gold_label: Label::ALL[items.len() % 3],
                premise: None,
                hypothesis: None,
                is_attention_check: false,
            });
            true_b.push(b);
        }
    }
    let bank = ItemBank::new(items).map_err(|e| CliError::Config(e.to_string()))?;
    let ids: Vec<String> = bank.items().iter().map(|it| it.item_id.clone()).collect();

    let mut names = BTreeSet::new();
    let mut records = Vec::new();
    let mut resolved = Vec::new();
    for (pi, p) in sim.populations.iter().enumerate() {
        if !names.insert(p.name.clone()) {
            return Err(CliError::Config(format!("population `{}` listed twice", p.name)));
        }
        let seed = p.seed.unwrap_or(cfg.seed.wrapping_add(pi as u64));
        let tag = PopulationTag::new(p.name.clone(), p.kind);
        let m = match p.model {
            SimModel::Rasch => generate_rasch_population(&GenerativeSpec {
                population: tag.clone(),
                item_ids: ids.clone(),
                n_respondents: p.n_respondents,
                true_b: true_b.clone(),
                theta_mean: p.theta_mean,
                theta_sd: p.theta_sd,
                seed,
                n_choices: p.n_choices,
            }),
            SimModel::Guesser => {
                if p.n_respondents == 0 {
                    return Err(CliError::Config(format!("population `{}`: n_respondents must be >= 1", p.name)));
                }
                generate_random_guessers(tag.clone(), p.n_respondents, &ids, p.n_choices, seed)
            }
        }
        .map_err(|e| CliError::Config(format!("population `{}`: {e}", p.name)))?;
        for r in 0..m.n_respondents() {
            let mut rec = RawRecord::new(m.respondent_ids()[r].clone(), tag.clone());
            rec.submission_index = records.len() as u64;
            for (i, item) in bank.items().iter().enumerate() {
                if let Some(v) = m.get(r, i) {
                    rec.answers.insert(item.item_id.clone(), if v == 1 { item.gold_label } else { item.gold_label.next() });
                }
            }
            records.push(rec);
        }
        resolved.push(SimPopulation { seed: Some(seed), ..p.clone() });
    }
    Ok(Simulation { bank, true_b, records, populations: resolved })
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<usize> {
    let out = cfg.require_output()?;
    let Simulation { bank, true_b, records, populations: pops } = simulate(cfg)?;
    write_atomic(&out.join("bank.csv"), &bank_csv(&bank)?)?;
    write_atomic(&out.join("responses.csv"), &responses_csv(&records)?)?;
    let truth = Truth {
        seed: cfg.seed,
        items: bank.items().iter().zip(&true_b).map(|(it, &b)| TruthItem { item_id: &it.item_id, category: &it.category, b }).collect(),
        populations: pops,
    };
    write_atomic(&out.join("truth.json"), &json_bytes(&truth)?)?;
    Ok(records.len())
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let md = render_report(&read_tables(&args.analysis)?);
    if let Some(p) = &args.out {
        write_atomic(p, md.as_bytes())?;
    }
    Ok(md)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let say = |stdout: &mut dyn Write, s: String| {
        let _ = writeln!(stdout, "{s}");
    };
    match cli.command {
        Command::Validate(a) => {
            let s = cmd_validate(&a.resolve()?)?;
            say(
                stdout,
                format!(
                    "screened {} submission(s): {} accepted, {} rejected; {} passed through unscreened",
                    s.screened, s.accepted, s.rejected, s.passed_through
                ),
            );
        }
        Command::Analyze(a) => {
            let cfg = a.resolve()?;
            let analysis = cmd_analyze(&cfg)?;
            let out = cfg.output_dir.as_deref().unwrap_or(Path::new("."));
            say(
                stdout,
                format!(
                    "analyzed {} categor{} ({} warning(s)); report at {}",
                    analysis.categories.len(),
                    if analysis.categories.len() == 1 { "y" } else { "ies" },
                    analysis.warnings.len(),
                    out.join("report.md").display()
                ),
            );
        }
        Command::Simulate(a) => {
            let n = cmd_simulate(&a.resolve()?)?;
            say(stdout, format!("wrote {n} simulated submission(s)"));
        }
        Command::Report(a) => {
            let md = cmd_report(&a)?;
            if a.out.is_none() {
                let _ = stdout.write_all(md.as_bytes());
            }
        }
    }
    Ok(())
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(rendered.as_bytes()) } else { stderr.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
