//! File schemas.
//!
//! Item bank (CSV header or JSON array of objects):
//!
//! | column             | type                                     |
//! |--------------------|------------------------------------------|
//! | item_id            | string, unique                           |
//! | category           | string                                   |
//! | gold_label         | entailment / contradiction / neutral     |
//! | premise            | string, optional                         |
//! | hypothesis         | string, optional                         |
//! | is_attention_check | true/false/1/0, optional (default false) |
//!
//! Responses, long format, one row per (submission, item):
//!
//! | column           | type                                                  |
//! |------------------|-------------------------------------------------------|
//! | respondent_id    | string                                                |
//! | population       | string                                                |
//! | population_kind  | human / proxy / random / synthetic, default human     |
//! | submission_index | integer, default: position of the submission's first row |
//! | identity         | `kind:value` keys separated by `;`, optional          |
//! | item_id          | string                                                |
//! | label            | label, empty for an unanswered item                   |
//! | justification    | string, optional                                      |
//!
//! Rows sharing (population, respondent_id, submission_index) form one
//! submission; its population_kind and identity must agree across rows.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use psyagree_core::data::IdentityKey;
use psyagree_core::{Item, ItemBank, Label, PopulationKind, PopulationTag, RawRecord};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn csv_line(e: &csv::Error) -> Option<u64> {
    e.position().map(|p| p.line())
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(file))
}

#[derive(Debug, Deserialize)]
struct BankRow {
    item_id: String,
    category: String,
    gold_label: String,
    #[serde(default)]
    premise: Option<String>,
    #[serde(default)]
    hypothesis: Option<String>,
    #[serde(default)]
    is_attention_check: Option<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "" | "false" | "0" | "no" => Some(false),
        "true" | "1" | "yes" => Some(true),
        _ => None,
    }
}

fn bank_item(row: BankRow, path: &Path, line: Option<u64>) -> CliResult<Item> {
    let gold_label: Label = row.gold_label.parse().map_err(|e: psyagree_core::Error| CliError::schema(path, line, e.to_string()))?;
    let flag = row.is_attention_check.as_deref().unwrap_or("");
    let is_attention_check =
        parse_bool(flag).ok_or_else(|| CliError::schema(path, line, format!("is_attention_check: expected true/false, got `{flag}`")))?;
    let nonempty = |s: Option<String>| s.filter(|t| !t.is_empty());
    if row.item_id.trim().is_empty() {
        return Err(CliError::schema(path, line, "empty item_id"));
    }
    Ok(Item {
        item_id: row.item_id.trim().to_string(),
        category: row.category.trim().to_string(),
        gold_label,
        premise: nonempty(row.premise),
        hypothesis: nonempty(row.hypothesis),
        is_attention_check,
    })
}

pub fn read_bank(path: &Path) -> CliResult<ItemBank> {
    let mut items = Vec::new();
    if is_json(path) {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let rows: Vec<serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| CliError::schema(path, Some(e.line() as u64), e.to_string()))?;
        for (i, v) in rows.into_iter().enumerate() {
            let mut v = v;
            if let Some(flag) = v.get_mut("is_attention_check") {
                if let serde_json::Value::Bool(b) = flag {
                    *flag = serde_json::Value::String(b.to_string());
                }
            }
            let row: BankRow = serde_json::from_value(v).map_err(|e| CliError::schema(path, None, format!("entry {i}: {e}")))?;
            items.push(bank_item(row, path, None).map_err(|e| match e {
                CliError::Schema { path, msg, .. } => CliError::Schema { path, line: None, msg: format!("entry {i}: {msg}") },
                other => other,
            })?);
        }
    } else {
        let mut rdr = csv_reader(path)?;
        let headers = rdr.headers().map_err(|e| CliError::schema(path, csv_line(&e), e.to_string()))?.clone();
        let mut record = csv::StringRecord::new();
        loop {
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => return Err(CliError::schema(path, csv_line(&e), e.to_string())),
            }
            let line = record.position().map(|p| p.line());
            let row: BankRow = record.deserialize(Some(&headers)).map_err(|e| CliError::schema(path, line, e.to_string()))?;
            items.push(bank_item(row, path, line)?);
        }
    }
    ItemBank::new(items).map_err(|e| CliError::schema(path, None, e.to_string()))
}

/// One long-format response row.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResponseRow {
    pub respondent_id: String,
    pub population: String,
    #[serde(default)]
    pub population_kind: Option<String>,
    #[serde(default)]
    pub submission_index: Option<u64>,
    #[serde(default)]
    pub identity: Option<String>,
    pub item_id: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub justification: Option<String>,
}

struct Pending {
    record: RawRecord,
    identity: Option<String>,
}

/// Accumulates rows from any number of files into submissions.
#[derive(Default)]
struct RecordBuilder {
    order: Vec<(String, String, u64)>,
    pending: BTreeMap<(String, String, u64), Pending>,
    /// Default submission index for rows that leave it blank.
    first_row: BTreeMap<(String, String), u64>,
    rows_seen: u64,
}

impl RecordBuilder {
    fn push(&mut self, row: ResponseRow, path: &Path, line: Option<u64>) -> CliResult<()> {
        let err = |msg: String| CliError::schema(path, line, msg);
        let respondent = row.respondent_id.trim().to_string();
        let population = row.population.trim().to_string();
        if respondent.is_empty() || population.is_empty() {
            return Err(err("respondent_id and population are required".into()));
        }
        let kind: PopulationKind = match row.population_kind.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            Some(s) => s.parse().map_err(|e: psyagree_core::Error| err(e.to_string()))?,
            None => PopulationKind::Human,
        };
        let seen = self.rows_seen;
        self.rows_seen += 1;
        let index = match row.submission_index {
            Some(i) => i,
            None => *self.first_row.entry((population.clone(), respondent.clone())).or_insert(seen),
        };
        let key = (population.clone(), respondent.clone(), index);
        let identity = row.identity.map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        if !self.pending.contains_key(&key) {
            let mut record = RawRecord::new(respondent.clone(), PopulationTag::new(population.clone(), kind));
            record.submission_index = index;
            if let Some(ids) = &identity {
                record.identity_keys = ids
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<IdentityKey>().map_err(|e| err(e.to_string())))
                    .collect::<CliResult<_>>()?;
            }
            self.order.push(key.clone());
            self.pending.insert(key.clone(), Pending { record, identity: identity.clone() });
        }
        let p = self.pending.get_mut(&key).expect("inserted above");
        if p.record.population.kind != kind {
            return Err(err(format!(
                "population_kind `{}` conflicts with `{}` on earlier rows of `{respondent}`",
                kind.as_str(),
                p.record.population.kind.as_str()
            )));
        }
        if identity.is_some() && p.identity.is_some() && identity != p.identity {
            return Err(err(format!("identity differs from earlier rows of `{respondent}`")));
        }
        if identity.is_some() && p.identity.is_none() {
            return Err(err(format!("identity missing on earlier rows of `{respondent}`")));
        }
        let item = row.item_id.trim().to_string();
        if item.is_empty() {
            return Err(err("empty item_id".into()));
        }
        if p.record.answers.contains_key(&item) || p.record.justifications.contains_key(&item) {
            return Err(err(format!("second answer from `{respondent}` to item `{item}`")));
        }
        if let Some(label) = row.label.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
            let label: Label = label.parse().map_err(|e: psyagree_core::Error| err(e.to_string()))?;
            p.record.answers.insert(item.clone(), label);
        }
        if let Some(j) = row.justification.filter(|s| !s.trim().is_empty()) {
            p.record.justifications.insert(item, j);
        }
        Ok(())
    }

    fn finish(mut self) -> Vec<RawRecord> {
        self.order.iter().map(|k| self.pending.remove(k).expect("recorded key").record).collect()
    }
}

/// Read and merge response files, returning submissions in first-row order.
pub fn read_responses(paths: &[impl AsRef<Path>]) -> CliResult<Vec<RawRecord>> {
    let mut builder = RecordBuilder::default();
    for path in paths {
        let path = path.as_ref();
        if is_json(path) {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let rows: Vec<ResponseRow> =
                serde_json::from_str(&text).map_err(|e| CliError::schema(path, Some(e.line() as u64), e.to_string()))?;
            for (i, row) in rows.into_iter().enumerate() {
                builder.push(row, path, None).map_err(|e| match e {
                    CliError::Schema { path, msg, .. } => CliError::Schema { path, line: None, msg: format!("entry {i}: {msg}") },
                    other => other,
                })?;
            }
        } else {
            let mut rdr = csv_reader(path)?;
            let mut record = csv::StringRecord::new();
            let headers = rdr.headers().map_err(|e| CliError::schema(path, csv_line(&e), e.to_string()))?.clone();
            loop {
                match rdr.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {}
                    Err(e) => return Err(CliError::schema(path, csv_line(&e), e.to_string())),
                }
                let line = record.position().map(|p| p.line());
                let row: ResponseRow = record.deserialize(Some(&headers)).map_err(|e| CliError::schema(path, line, e.to_string()))?;
                builder.push(row, path, line)?;
            }
        }
    }
    Ok(builder.finish())
}

/// Flatten submissions back to long-format rows, items in id order.
pub fn response_rows(records: &[RawRecord]) -> Vec<ResponseRow> {
    let mut rows = Vec::new();
    for rec in records {
        let identity = rec.identity_keys.iter().map(ToString::to_string).collect::<Vec<_>>().join(";");
        let mut items: Vec<&String> = rec.answers.keys().chain(rec.justifications.keys()).collect();
        items.sort();
        items.dedup();
        for item in items {
            rows.push(ResponseRow {
                respondent_id: rec.respondent_id.clone(),
                population: rec.population.name.clone(),
                population_kind: Some(rec.population.kind.as_str().to_string()),
                submission_index: Some(rec.submission_index),
                identity: Some(identity.clone()),
                item_id: item.clone(),
                label: rec.answers.get(item).map(|l| l.as_str().to_string()),
                justification: rec.justifications.get(item).cloned(),
            });
        }
    }
    rows
}

pub fn responses_csv(records: &[RawRecord]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["respondent_id", "population", "population_kind", "submission_index", "identity", "item_id", "label", "justification"])
        .map_err(csv_write_err)?;
    for row in response_rows(records) {
        w.serialize(row).map_err(csv_write_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn bank_csv(bank: &ItemBank) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "category", "gold_label", "premise", "hypothesis", "is_attention_check"]).map_err(csv_write_err)?;
    for it in bank.items() {
        w.write_record([
            it.item_id.as_str(),
            it.category.as_str(),
            it.gold_label.as_str(),
            it.premise.as_deref().unwrap_or(""),
            it.hypothesis.as_deref().unwrap_or(""),
            if it.is_attention_check { "true" } else { "false" },
        ])
        .map_err(csv_write_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn csv_write_err(e: csv::Error) -> CliError {
    CliError::Data(format!("csv encoding: {e}"))
}

/// Build a CSV document from a header and string rows.
pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_write_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_write_err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

/// Shortest round-trip decimal; empty for missing or non-finite.
pub fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => String::new(),
    }
}

/// Write via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// File-name-safe form of a population or category name.
pub fn slug(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const BANK: &str = "item_id,category,gold_label,premise,hypothesis,is_attention_check\n\
        a,lex,entailment,P a,H a,false\n\
        b,lex,Neutral,,,0\n\
        c,neg,contradiction,,,\n\
        z,check,entailment,,,true\n";

    #[test]
    fn bank_csv_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let csv_bank = read_bank(&file(dir.path(), "bank.csv", BANK)).unwrap();
        let json = r#"[
            {"item_id":"a","category":"lex","gold_label":"entailment","premise":"P a","hypothesis":"H a"},
            {"item_id":"b","category":"lex","gold_label":"neutral","is_attention_check":false},
            {"item_id":"c","category":"neg","gold_label":"CONTRADICTION"},
            {"item_id":"z","category":"check","gold_label":"entailment","is_attention_check":true}
        ]"#;
        let json_bank = read_bank(&file(dir.path(), "bank.json", json)).unwrap();
        assert_eq!(csv_bank.items(), json_bank.items());
        assert_eq!(csv_bank.scored_item_ids(), vec!["a", "b", "c"]);
        assert_eq!(
            read_bank(&file(dir.path(), "b2.csv", &String::from_utf8(bank_csv(&csv_bank).unwrap()).unwrap())).unwrap().items(),
            csv_bank.items()
        );
    }

    #[test]
    fn bank_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let bad = "item_id,category,gold_label\na,lex,entailment\nb,lex,maybe\n";
        match read_bank(&file(dir.path(), "bad.csv", bad)).unwrap_err() {
            CliError::Schema { line, msg, .. } => {
                assert_eq!(line, Some(3));
                assert!(msg.contains("maybe"), "{msg}");
            }
            e => panic!("{e:?}"),
        }
        let dup = "item_id,category,gold_label\na,lex,entailment\na,lex,neutral\n";
        assert_eq!(read_bank(&file(dir.path(), "dup.csv", dup)).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn responses_group_into_submissions() {
        let dir = tempfile::tempdir().unwrap();
        let body = "respondent_id,population,population_kind,submission_index,identity,item_id,label,justification\n\
            w1,human,human,0,worker:W1;ip:1.2.3.4,a,Entailment,because of the premise\n\
            w1,human,human,0,worker:W1;ip:1.2.3.4,b,,\n\
            m1,lm,proxy,,,a,neutral,\n\
            m1,lm,proxy,,,b,neutral,\n";
        let recs = read_responses(&[file(dir.path(), "r.csv", body)]).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].identity_keys.len(), 2);
        assert_eq!(recs[0].answers.len(), 1);
        assert_eq!(recs[0].justifications.len(), 1);
        assert_eq!(recs[1].population.kind, PopulationKind::Proxy);
        assert_eq!(recs[1].submission_index, 2);

        // round trip
        let again = read_responses(&[file(dir.path(), "r2.csv", &String::from_utf8(responses_csv(&recs).unwrap()).unwrap())]).unwrap();
        assert_eq!(again, recs);
    }

    #[test]
    fn response_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let head = "respondent_id,population,item_id,label\n";
        let cases = [
            (format!("{head}r,h,a,entailment\nr,h,a,neutral\n"), 3),
            (format!("{head}r,h,a,entailment\nr,h,b,yes\n"), 3),
            (format!("{head}r,h,a,entailment\nr,h,b\n"), 3),
            (format!("{head}r,h,a,entailment\nr,h,b,neutral,extra\n"), 3),
            (format!("{head},h,a,entailment\n"), 2),
        ];
        for (body, expected) in cases {
            match read_responses(&[file(dir.path(), "r.csv", &body)]).unwrap_err() {
                CliError::Schema { line, .. } => assert_eq!(line, Some(expected), "{body}"),
                e => panic!("{e:?}"),
            }
        }
    }

    #[test]
    fn empty_response_file_yields_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let recs = read_responses(&[file(dir.path(), "r.csv", "respondent_id,population,item_id,label\n")]).unwrap();
        assert!(recs.is_empty());
        let recs = read_responses(&[file(dir.path(), "r.json", "[]")]).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn atomic_write_and_slug() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(slug("a b/c"), "a_b_c");
        assert_eq!(num(Some(0.1)), "0.1");
        assert_eq!(num(None), "");
    }
}
