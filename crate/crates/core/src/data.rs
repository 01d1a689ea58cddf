//! Item bank, raw submissions, and the binary response matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// NLI gold/answer label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Entailment,
    Contradiction,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
        }
    }

    /// The next label in the fixed cycle; used to write a deterministic
    /// incorrect answer.
    pub fn next(self) -> Label {
        match self {
            Label::Entailment => Label::Contradiction,
            Label::Contradiction => Label::Neutral,
            Label::Neutral => Label::Entailment,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    /// Case-insensitive after trimming.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "contradiction" => Ok(Label::Contradiction),
            "neutral" => Ok(Label::Neutral),
            _ => Err(Error::InvalidLabel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub category: String,
    pub gold_label: Label,
    #[serde(default)]
    pub premise: Option<String>,
    #[serde(default)]
    pub hypothesis: Option<String>,
    #[serde(default)]
    pub is_attention_check: bool,
}

/// Items keyed by unique id, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ItemBank {
    items: Vec<Item>,
    index: HashMap<String, usize>,
}

impl ItemBank {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(Self { items, index })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&Item> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct categories in order of first appearance.
    pub fn categories(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.items.iter().filter(|it| seen.insert(it.category.as_str())).map(|it| it.category.clone()).collect()
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.items.iter().any(|it| it.category == category)
    }

    /// Ids of the scorable (non attention-check) items, bank order.
    pub fn scored_item_ids(&self) -> Vec<String> {
        self.items.iter().filter(|it| !it.is_attention_check).map(|it| it.item_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    Human,
    Proxy,
    Random,
    Synthetic,
}

impl PopulationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PopulationKind::Human => "human",
            PopulationKind::Proxy => "proxy",
            PopulationKind::Random => "random",
            PopulationKind::Synthetic => "synthetic",
        }
    }
}

impl FromStr for PopulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "human" => Ok(PopulationKind::Human),
            "proxy" => Ok(PopulationKind::Proxy),
            "random" => Ok(PopulationKind::Random),
            "synthetic" => Ok(PopulationKind::Synthetic),
            other => Err(Error::Config(format!("unknown population kind `{other}`"))),
        }
    }
}

impl fmt::Display for PopulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PopulationTag {
    pub name: String,
    pub kind: PopulationKind,
}

impl PopulationTag {
    pub fn new(name: impl Into<String>, kind: PopulationKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// One identity field of a submission, e.g. `ip` / hashed address or
/// `worker` / worker id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IdentityKey {
    pub kind: String,
    pub value: String,
}

impl IdentityKey {
    pub fn new(kind: impl Into<String>, value: impl Into<String>) -> Self {
        Self { kind: kind.into(), value: value.into() }
    }
}

impl fmt::Display for IdentityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.value)
    }
}

impl FromStr for IdentityKey {
    type Err = Error;

    /// `kind:value`; a bare value gets kind `id`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Config("empty identity key".into()));
        }
        Ok(match s.split_once(':') {
            Some((k, v)) => IdentityKey::new(k.trim(), v.trim()),
            None => IdentityKey::new("id", s),
        })
    }
}

/// One respondent's unscored submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub respondent_id: String,
    pub population: PopulationTag,
    pub submission_index: u64,
    #[serde(default)]
    pub identity_keys: Vec<IdentityKey>,
    pub answers: BTreeMap<String, Label>,
    #[serde(default)]
    pub justifications: BTreeMap<String, String>,
}

impl RawRecord {
    pub fn new(respondent_id: impl Into<String>, population: PopulationTag) -> Self {
        Self {
            respondent_id: respondent_id.into(),
            population,
            submission_index: 0,
            identity_keys: Vec::new(),
            answers: BTreeMap::new(),
            justifications: BTreeMap::new(),
        }
    }

    /// Fraction of answered attention-check items answered correctly, or
    /// `None` when no attention check was answered.
    pub fn attention_fraction(&self, bank: &ItemBank) -> Option<f64> {
        let (mut correct, mut total) = (0usize, 0usize);
        for (id, label) in &self.answers {
            if let Some(item) = bank.get(id).filter(|it| it.is_attention_check) {
                total += 1;
                correct += usize::from(item.gold_label == *label);
            }
        }
        (total > 0).then(|| correct as f64 / total as f64)
    }
}

/// Respondents × items matrix of binary scores; `None` is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    population: PopulationTag,
    respondent_ids: Vec<String>,
    item_ids: Vec<String>,
    cells: Vec<Option<u8>>,
}

impl ResponseMatrix {
    /// Build from row-major cells; every present cell must be 0 or 1.
    pub fn new(population: PopulationTag, respondent_ids: Vec<String>, item_ids: Vec<String>, cells: Vec<Option<u8>>) -> Result<Self> {
        if cells.len() != respondent_ids.len() * item_ids.len() {
            return Err(Error::Shape(format!("{} cells for {} respondents x {} items", cells.len(), respondent_ids.len(), item_ids.len())));
        }
        if let Some(bad) = cells.iter().flatten().find(|&&v| v > 1) {
            return Err(Error::Shape(format!("cell value {bad} is not 0 or 1")));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = item_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateItem(dup.clone()));
        }
        seen.clear();
        if let Some(dup) = respondent_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateRespondent(dup.clone()));
        }
        Ok(Self { population, respondent_ids, item_ids, cells })
    }

    pub fn from_rows(
        population: PopulationTag,
        respondent_ids: Vec<String>,
        item_ids: Vec<String>,
        rows: &[Vec<Option<u8>>],
    ) -> Result<Self> {
        if rows.len() != respondent_ids.len() {
            return Err(Error::Shape(format!("{} rows for {} respondents", rows.len(), respondent_ids.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != item_ids.len()) {
            return Err(Error::Shape(format!("row of length {} for {} items", r.len(), item_ids.len())));
        }
        let cells = rows.iter().flatten().copied().collect();
        Self::new(population, respondent_ids, item_ids, cells)
    }

    pub fn population(&self) -> &PopulationTag {
        &self.population
    }

    pub fn respondent_ids(&self) -> &[String] {
        &self.respondent_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn n_respondents(&self) -> usize {
        self.respondent_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn get(&self, respondent: usize, item: usize) -> Option<u8> {
        self.cells[respondent * self.item_ids.len() + item]
    }

    pub fn row(&self, respondent: usize) -> &[Option<u8>] {
        let k = self.item_ids.len();
        &self.cells[respondent * k..(respondent + 1) * k]
    }

    pub fn column(&self, item: usize) -> Vec<Option<u8>> {
        (0..self.n_respondents()).map(|r| self.get(r, item)).collect()
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.item_ids.iter().position(|id| id == item_id)
    }

    /// Keep the given columns (by index, in the given order) and rows.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> ResponseMatrix {
        let mut cells = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            let row = self.row(r);
            cells.extend(cols.iter().map(|&c| row[c]));
        }
        ResponseMatrix {
            population: self.population.clone(),
            respondent_ids: rows.iter().map(|&r| self.respondent_ids[r].clone()).collect(),
            item_ids: cols.iter().map(|&c| self.item_ids[c].clone()).collect(),
            cells,
        }
    }

    pub fn select_items(&self, cols: &[usize]) -> ResponseMatrix {
        let rows: Vec<usize> = (0..self.n_respondents()).collect();
        self.select(&rows, cols)
    }

    /// Drop items nobody answered and respondents with no answers left.
    pub fn drop_empty(&self) -> ResponseMatrix {
        let cols: Vec<usize> = (0..self.n_items()).filter(|&c| (0..self.n_respondents()).any(|r| self.get(r, c).is_some())).collect();
        let rows: Vec<usize> = (0..self.n_respondents()).filter(|&r| cols.iter().any(|&c| self.get(r, c).is_some())).collect();
        self.select(&rows, &cols)
    }

    pub fn with_population(mut self, population: PopulationTag) -> Self {
        self.population = population;
        self
    }
}

/// Binarize records against gold labels.
///
/// Columns are the bank's non attention-check items in bank order; rows are
/// sorted by respondent id so the result does not depend on record order.
pub fn score_responses(records: &[RawRecord], bank: &ItemBank) -> Result<ResponseMatrix> {
    let population = match records.first() {
        Some(r) => r.population.clone(),
        None => return ResponseMatrix::new(PopulationTag::new("", PopulationKind::Human), Vec::new(), bank.scored_item_ids(), Vec::new()),
    };
    for rec in records {
        if rec.population != population {
            return Err(Error::MixedPopulations { first: population.name.clone(), other: rec.population.name.clone() });
        }
        if let Some(id) = rec.answers.keys().find(|id| bank.get(id).is_none()) {
            return Err(Error::UnknownItem { respondent_id: rec.respondent_id.clone(), item_id: id.clone() });
        }
    }

    let item_ids = bank.scored_item_ids();
    let mut order: Vec<&RawRecord> = records.iter().collect();
    order.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));

    let mut cells = Vec::with_capacity(order.len() * item_ids.len());
    for rec in &order {
        for id in &item_ids {
            let gold = bank.get(id).map(|it| it.gold_label);
            cells.push(rec.answers.get(id).map(|l| u8::from(Some(*l) == gold)));
        }
    }
    let respondent_ids = order.iter().map(|r| r.respondent_id.clone()).collect();
    ResponseMatrix::new(population, respondent_ids, item_ids, cells)
}

/// Restrict both matrices to their shared items, in `a`'s column order.
pub fn align_items(a: &ResponseMatrix, b: &ResponseMatrix) -> Result<(ResponseMatrix, ResponseMatrix)> {
    let in_b: HashSet<&str> = b.item_ids.iter().map(String::as_str).collect();
    let shared: Vec<&String> = a.item_ids.iter().filter(|id| in_b.contains(id.as_str())).collect();
    if shared.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let a_cols: Vec<usize> = shared.iter().map(|id| a.item_index(id).unwrap()).collect();
    let b_cols: Vec<usize> = shared.iter().map(|id| b.item_index(id).unwrap()).collect();
    Ok((a.select_items(&a_cols), b.select_items(&b_cols)))
}

/// Restrict to one category's items; respondents with nothing left are dropped.
pub fn slice_by_category(m: &ResponseMatrix, category: &str, bank: &ItemBank) -> Result<ResponseMatrix> {
    if !bank.has_category(category) {
        return Err(Error::UnknownCategory(category.to_string()));
    }
    let mut cols = Vec::new();
    for (c, id) in m.item_ids.iter().enumerate() {
        let item = bank.get(id).ok_or_else(|| Error::UnknownItem { respondent_id: String::new(), item_id: id.clone() })?;
        if item.category == category {
            cols.push(c);
        }
    }
    let rows: Vec<usize> = (0..m.n_respondents()).filter(|&r| cols.iter().any(|&c| m.get(r, c).is_some())).collect();
    Ok(m.select(&rows, &cols))
}

/// Items shared by every matrix, in the first matrix's order.
pub fn common_items(matrices: &[&ResponseMatrix]) -> Vec<String> {
    let Some(first) = matrices.first() else { return Vec::new() };
    let others: Vec<BTreeSet<&str>> = matrices[1..].iter().map(|m| m.item_ids.iter().map(String::as_str).collect()).collect();
    first.item_ids.iter().filter(|id| others.iter().all(|s| s.contains(id.as_str()))).cloned().collect()
}

/// Restrict to the named items in the given order. Unknown ids are an error.
pub fn restrict_items(m: &ResponseMatrix, item_ids: &[String]) -> Result<ResponseMatrix> {
    let cols = item_ids
        .iter()
        .map(|id| m.item_index(id).ok_or_else(|| Error::Misaligned(format!("item `{id}` missing from `{}`", m.population.name))))
        .collect::<Result<Vec<_>>>()?;
    Ok(m.select_items(&cols))
}
