mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};

use psyagree::report::AgreementTable;
use psyagree_core::agreement::{pearson, spearman};

use common::{fixture, tree};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psyagree")).args(args).output().expect("spawn psyagree")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(o));
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (header, rows) = csv_rows(path);
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {}", path.display()));
    rows.into_iter().map(|r| r[i].clone()).collect()
}

fn validate(responses: &Path, out: &Path) -> Output {
    run(&["validate", "--bank", s(&fixture("protocol/bank.csv")), "--responses", s(responses), "--out", s(out)])
}

fn simulate(out: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", s(out)];
    args.extend_from_slice(extra);
    assert_ok(&run(&args));
}

fn analyze(sim: &Path, out: &Path, extra: &[&str]) -> Output {
    let bank = sim.join("bank.csv");
    let responses = sim.join("responses.csv");
    let mut args = vec!["analyze", "--bank", s(&bank), "--responses", s(&responses), "--reference", "human", "--out", s(out)];
    args.extend_from_slice(extra);
    run(&args)
}

fn table(out: &Path, stem: &str) -> AgreementTable {
    serde_json::from_str(&std::fs::read_to_string(out.join("tables").join(format!("{stem}.json"))).unwrap()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn validate_rejects_exactly_one_duplicate_and_passes_proxies_through() {
    let dir = tempfile::tempdir().unwrap();
    let o = validate(&fixture("protocol/responses.csv"), dir.path());
    assert_ok(&o);
    let rules = column(&dir.path().join("audit.csv"), "triggered_rules");
    assert_eq!(rules.iter().filter(|r| r.contains("duplicate_identity")).count(), 1);

    let kept: BTreeSet<String> = column(&dir.path().join("accepted_responses.csv"), "respondent_id").into_iter().collect();
    let want: BTreeSet<String> = ["a", "f", "lm-1", "lm-2"].iter().map(|s| s.to_string()).collect();
    assert_eq!(kept, want);

    let audit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit.json")).unwrap()).unwrap();
    assert_eq!(audit.as_array().unwrap().len(), 6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 accepted, 4 rejected"));
}

#[test]
fn empty_response_file_gives_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("empty.csv");
    std::fs::write(&responses, "respondent_id,population,population_kind,submission_index,identity,item_id,label,justification\n").unwrap();
    let out = dir.path().join("out");
    assert_ok(&validate(&responses, &out));
    assert!(csv_rows(&out.join("audit.csv")).1.is_empty());
    assert!(csv_rows(&out.join("accepted_responses.csv")).1.is_empty());
}

#[test]
fn malformed_responses_exit_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("bad.csv");
    std::fs::write(
        &responses,
        "respondent_id,population,population_kind,submission_index,identity,item_id,label,justification\n\
         a,crowd,human,0,worker:W1,q01,entailment,fine reasoning here\n\
         a,crowd,human,0,worker:W1,q02,maybe,fine reasoning here\n",
    )
    .unwrap();
    let o = validate(&responses, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr(&o));
    assert!(stderr(&o).contains("line 3"), "stderr: {}", stderr(&o));
}

#[test]
fn bank_missing_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.csv");
    std::fs::write(&bank, "item_id,gold_label\nq01,entailment\n").unwrap();
    let o = run(&["validate", "--bank", s(&bank), "--responses", s(&fixture("protocol/responses.csv")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr(&o));
}

#[test]
fn usage_and_io_errors_exit_1() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "--no-such-flag"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--responses", s(&fixture("protocol/responses.csv")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "missing --bank");
    let o = run(&[
        "validate",
        "--bank",
        s(&dir.path().join("nope.csv")),
        "--responses",
        s(&fixture("protocol/responses.csv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "missing bank file");
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    simulate(&p("a"), &["--seed", "7"]);
    simulate(&p("b"), &["--seed", "7"]);
    simulate(&p("c"), &["--seed", "8"]);
    assert_eq!(tree(&p("a")), tree(&p("b")));
    assert_ne!(tree(&p("a")), tree(&p("c")));
}

/// Every simulated answer equals its item's gold label.
fn all_correct(sim: &Path) -> bool {
    let gold: BTreeMap<String, String> = {
        let (h, rows) = csv_rows(&sim.join("bank.csv"));
        let (i, g) = (h.iter().position(|c| c == "item_id").unwrap(), h.iter().position(|c| c == "gold_label").unwrap());
        rows.into_iter().map(|r| (r[i].clone(), r[g].clone())).collect()
    };
    let ids = column(&sim.join("responses.csv"), "item_id");
    let labels = column(&sim.join("responses.csv"), "label");
    !ids.is_empty() && ids.iter().zip(&labels).all(|(i, l)| &gold[i] == l)
}

#[test]
fn single_choice_guessers_and_very_able_respondents_answer_everything_correctly() {
    let dir = tempfile::tempdir().unwrap();
    for (name, population) in [("guess", "model = \"guesser\"\nn_choices = 1"), ("able", "model = \"rasch\"\ntheta_mean = 50.0")] {
        let sub = dir.path().join(name);
        std::fs::create_dir_all(&sub).unwrap();
        let cfg = write_config(
            &sub,
            &format!(
                "[simulate]\ncategories = [{{ name = \"c\", n_items = 6 }}]\n\n\
                 [[simulate.populations]]\nname = \"p\"\nkind = \"synthetic\"\nn_respondents = 50\n{population}\n"
            ),
        );
        simulate(&sub.join("sim"), &["--config", s(&cfg)]);
        assert!(all_correct(&sub.join("sim")), "{name}");
    }
}

#[test]
fn identical_populations_agree_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, &[]);
    let text = std::fs::read_to_string(sim.join("responses.csv")).unwrap();
    let mut lines = text.lines();
    let mut doubled = format!("{}\n", lines.next().unwrap());
    let human: Vec<&str> = lines.filter(|l| l.contains(",human,human,")).collect();
    for l in &human {
        doubled.push_str(l);
        doubled.push('\n');
    }
    for l in &human {
        doubled.push_str(&l.replacen(",human,human,", ",twin,proxy,", 1));
        doubled.push('\n');
    }
    std::fs::write(sim.join("responses.csv"), doubled).unwrap();
    let out = dir.path().join("out");
    assert_ok(&analyze(&sim, &out, &[]));
    for stem in ["proportion_correct", "comembership", "rasch_b", "item_total"] {
        let path = out.join("tables").join(format!("{stem}.json"));
        if !path.exists() {
            continue;
        }
        let t = table(&out, stem);
        let row = t.rows[0].row("twin").unwrap();
        if let Some(r) = row.r {
            assert!((r - 1.0).abs() < 1e-12, "{stem}: r = {r}");
        }
    }
    assert!((table(&out, "proportion_correct").rows[0].row("twin").unwrap().r.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn random_guessers_never_reach_three_stars_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, out) = (dir.path().join("sim"), dir.path().join("out"));
    simulate(&sim, &[]);
    assert_ok(&analyze(&sim, &out, &[]));
    let tables = psyagree::report::read_tables(&out).unwrap();
    assert_eq!(tables.len(), 4);
    for t in &tables {
        for row in &t.rows {
            assert_ne!(row.row("random").unwrap().stars, "***", "{:?}", t.property);
        }
    }
    let o = run(&["report", "--analysis", s(&out)]);
    assert_ok(&o);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), std::fs::read_to_string(out.join("report.md")).unwrap());
    let md = dir.path().join("again.md");
    assert_ok(&run(&["report", "--analysis", s(&out), "--out", s(&md)]));
    assert_eq!(std::fs::read(&md).unwrap(), std::fs::read(out.join("report.md")).unwrap());
}

#[test]
fn strict_mode_turns_non_convergence_into_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, &[]);
    let cfg = write_config(dir.path(), "[irt]\nmax_em_iterations = 1\n");
    let lenient = analyze(&sim, &dir.path().join("lenient"), &["--config", s(&cfg)]);
    assert_ok(&lenient);
    let warnings = std::fs::read_to_string(dir.path().join("lenient/warnings.json")).unwrap();
    assert!(warnings.contains("rasch_not_converged"));
    let strict = analyze(&sim, &dir.path().join("strict"), &["--config", s(&cfg), "--strict"]);
    assert_eq!(strict.status.code(), Some(3), "stderr: {}", stderr(&strict));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, &[]);
    let bad = run(&[
        "analyze",
        "--bank",
        s(&sim.join("bank.csv")),
        "--responses",
        s(&sim.join("responses.csv")),
        "--reference",
        "nobody",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(bad.status.code(), Some(1), "stderr: {}", stderr(&bad));
    let cfg = write_config(dir.path(), "reference = \"proxy\"\n");
    let o = run(&[
        "analyze",
        "--config",
        s(&cfg),
        "--bank",
        s(&sim.join("bank.csv")),
        "--responses",
        s(&sim.join("responses.csv")),
        "--reference",
        "nobody",
        "--out",
        s(&dir.path().join("y")),
    ]);
    assert_ok(&o);
    assert_eq!(table(&dir.path().join("y"), "proportion_correct").reference.name, "proxy");
}

fn floats(v: &[String]) -> Vec<Option<f64>> {
    v.iter().map(|s| if s.is_empty() { None } else { Some(s.parse().unwrap()) }).collect()
}

fn paired(a: &[Option<f64>], b: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(b).filter_map(|(x, y)| Some((x.as_ref().copied()?, y.as_ref().copied()?))).unzip()
}

#[test]
fn table_values_recompute_from_intermediate_files() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, out) = (dir.path().join("sim"), dir.path().join("out"));
    simulate(&sim, &[]);
    assert_ok(&analyze(&sim, &out, &[]));
    let cat = out.join("categories/demo");
    let checks: [(&str, &str, &str, bool); 4] = [
        ("proportion_correct", "difficulty.csv", "", true),
        ("rasch_b", "rasch.csv", "b_", false),
        ("item_total", "item_total.csv", "", false),
        ("comembership", "comembership.csv", "", false),
    ];
    for (stem, file, prefix, rank) in checks {
        let path = out.join("tables").join(format!("{stem}.json"));
        assert!(path.exists(), "{stem}");
        let t = table(&out, stem);
        let reference = floats(&column(&cat.join(file), &format!("{prefix}human")));
        for pop in ["proxy", "random"] {
            let other = floats(&column(&cat.join(file), &format!("{prefix}{pop}")));
            let (x, y) = paired(&reference, &other);
            let test = if rank { spearman(&x, &y) } else { pearson(&x, &y) }.unwrap();
            let row = t.rows[0].row(pop).unwrap();
            let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() <= 1e-12 * b.abs().max(1e-300));
            assert!(close(row.r, test.r), "{stem}/{pop}: r {:?} vs {}", row.r, test.r);
            assert!(close(row.p, test.p), "{stem}/{pop}: p {:?} vs {}", row.p, test.p);
            assert_eq!(row.n, x.len(), "{stem}/{pop}");
        }
    }
}

#[test]
fn sequential_flag_gives_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(&sim, &[]);
    assert_ok(&analyze(&sim, &dir.path().join("par"), &[]));
    assert_ok(&analyze(&sim, &dir.path().join("seq"), &["--sequential"]));
    let tables = |d: &str| tree(&dir.path().join(d).join("tables"));
    assert_eq!(tables("par"), tables("seq"));
}
