//! Screening of raw crowd submissions before analysis.
//!
//! Three stages, in order:
//! 1. duplicate submissions (shared IP, worker id, ...) keep only the earliest;
//! 2. score gate: below `reject_below` rejects, above `accept_above` accepts,
//!    the middle band is rejected when attention checks fall below
//!    `attention_pass_min` and otherwise goes to review;
//! 3. records under review are rejected if any justification flag fires.
//!
//! Every input record ends with exactly one verdict.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{ItemBank, RawRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub reject_below: f64,
    pub accept_above: f64,
    pub attention_pass_min: f64,
    pub min_justification_chars: usize,
    /// A normalized justification may be reused on at most this many items.
    pub duplicate_justification_max: usize,
    /// Minimum length of a justification counted as pasted question text.
    pub copy_min_chars: usize,
    /// Also run justification checks on records the score gate accepted.
    pub review_auto_accepted: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            reject_below: 0.40,
            accept_above: 0.60,
            attention_pass_min: 0.75,
            min_justification_chars: 10,
            duplicate_justification_max: 1,
            copy_min_chars: 15,
            review_auto_accepted: false,
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.reject_below) && unit(self.accept_above) && self.reject_below <= self.accept_above) {
            return Err(Error::Config(format!(
                "need 0 <= reject_below ({}) <= accept_above ({}) <= 1",
                self.reject_below, self.accept_above
            )));
        }
        if !unit(self.attention_pass_min) {
            return Err(Error::Config(format!("attention_pass_min {} outside [0, 1]", self.attention_pass_min)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    NeedsReview,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Accepted => "accepted",
            Decision::Rejected => "rejected",
            Decision::NeedsReview => "needs_review",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum JustificationFlag {
    CopiedQuestionText,
    RepeatedJustification,
    TooShort,
    Empty,
}

impl JustificationFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            JustificationFlag::CopiedQuestionText => "copied_question_text",
            JustificationFlag::RepeatedJustification => "repeated_justification",
            JustificationFlag::TooShort => "too_short",
            JustificationFlag::Empty => "empty",
        }
    }
}

/// Identifier of a rule that fired.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    /// Shares an identity key of this kind with an earlier submission.
    DuplicateIdentity(String),
    UnknownItem,
    ScoreBelowReject,
    AttentionBelowMin,
    Justification(JustificationFlag),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::DuplicateIdentity(kind) => write!(f, "duplicate_identity:{kind}"),
            Rule::UnknownItem => f.write_str("unknown_item"),
            Rule::ScoreBelowReject => f.write_str("score_below_reject"),
            Rule::AttentionBelowMin => f.write_str("attention_below_min"),
            Rule::Justification(flag) => f.write_str(flag.as_str()),
        }
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(kind) = s.strip_prefix("duplicate_identity:") {
            return Ok(Rule::DuplicateIdentity(kind.to_string()));
        }
        Ok(match s {
            "unknown_item" => Rule::UnknownItem,
            "score_below_reject" => Rule::ScoreBelowReject,
            "attention_below_min" => Rule::AttentionBelowMin,
            "copied_question_text" => Rule::Justification(JustificationFlag::CopiedQuestionText),
            "repeated_justification" => Rule::Justification(JustificationFlag::RepeatedJustification),
            "too_short" => Rule::Justification(JustificationFlag::TooShort),
            "empty" => Rule::Justification(JustificationFlag::Empty),
            other => return Err(Error::Config(format!("unknown rule `{other}`"))),
        })
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub respondent_id: String,
    pub submission_index: u64,
    pub decision: Decision,
    pub triggered_rules: Vec<Rule>,
    /// One line per rule (or per decision when no rule fired).
    pub evidence: Vec<String>,
    /// Proportion correct on scored items, when computed.
    pub score: Option<f64>,
    pub attention: Option<f64>,
}

impl ValidationVerdict {
    fn new(rec: &RawRecord, decision: Decision) -> Self {
        ValidationVerdict {
            respondent_id: rec.respondent_id.clone(),
            submission_index: rec.submission_index,
            decision,
            triggered_rules: Vec::new(),
            evidence: Vec::new(),
            score: None,
            attention: None,
        }
    }
}

fn by_arrival(a: &RawRecord, b: &RawRecord) -> std::cmp::Ordering {
    (a.submission_index, &a.respondent_id).cmp(&(b.submission_index, &b.respondent_id))
}

/// Keep the earliest submission for every identity key.
///
/// A record is rejected when any of its keys appeared on a record with a
/// smaller submission index (ties broken by respondent id). Survivors come
/// back in arrival order.
pub fn dedupe(records: &[RawRecord]) -> (Vec<RawRecord>, Vec<ValidationVerdict>) {
    let mut order: Vec<&RawRecord> = records.iter().collect();
    order.sort_by(|a, b| by_arrival(a, b));
    let mut first_seen: HashMap<(&str, &str), &RawRecord> = HashMap::new();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for rec in order {
        let mut clashes: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        for key in &rec.identity_keys {
            match first_seen.get(&(key.kind.as_str(), key.value.as_str())) {
                Some(prev) => clashes
                    .entry(key.kind.as_str())
                    .or_default()
                    .push(format!("{} shared with `{}` (submission {})", key, prev.respondent_id, prev.submission_index)),
                None => {
                    first_seen.insert((key.kind.as_str(), key.value.as_str()), rec);
                }
            }
        }
        if clashes.is_empty() {
            kept.push(rec.clone());
        } else {
            let mut v = ValidationVerdict::new(rec, Decision::Rejected);
            for (kind, lines) in clashes {
                v.triggered_rules.push(Rule::DuplicateIdentity(kind.to_string()));
                v.evidence.push(lines.join("; "));
            }
            rejected.push(v);
        }
    }
    (kept, rejected)
}

/// Proportion correct over the record's answered scored items.
pub fn overall_score(record: &RawRecord, bank: &ItemBank) -> Option<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (id, label) in &record.answers {
        if let Some(item) = bank.get(id).filter(|it| !it.is_attention_check) {
            total += 1;
            correct += usize::from(item.gold_label == *label);
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Score gate on one record. `scored` is the record's row of the response
/// matrix (attention checks excluded).
///
/// Boundaries: exactly `reject_below` and exactly `accept_above` fall in the
/// middle band; exactly `attention_pass_min` passes.
pub fn score_gate(record: &RawRecord, scored: &[Option<u8>], attention: f64, cfg: &ValidationConfig) -> ValidationVerdict {
    let answered: Vec<u8> = scored.iter().flatten().copied().collect();
    let score = if answered.is_empty() { 0.0 } else { answered.iter().map(|&v| f64::from(v)).sum::<f64>() / answered.len() as f64 };
    let mut v = ValidationVerdict::new(record, Decision::NeedsReview);
    v.score = Some(score);
    v.attention = Some(attention);
    if score < cfg.reject_below {
        v.decision = Decision::Rejected;
        v.triggered_rules.push(Rule::ScoreBelowReject);
        v.evidence.push(format!("score {score:.3} < {:.3}", cfg.reject_below));
    } else if score > cfg.accept_above {
        v.decision = Decision::Accepted;
        v.evidence.push(format!("score {score:.3} > {:.3}", cfg.accept_above));
    } else if attention < cfg.attention_pass_min {
        v.decision = Decision::Rejected;
        v.triggered_rules.push(Rule::AttentionBelowMin);
        v.evidence.push(format!("score {score:.3} in middle band, attention {attention:.3} < {:.3}", cfg.attention_pass_min));
    } else {
        v.evidence.push(format!("score {score:.3} in middle band, attention {attention:.3} passed"));
    }
    v
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase, strip punctuation, collapse whitespace.
pub fn normalize_justification(s: &str) -> String {
    let stripped: String = s.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).flat_map(char::to_lowercase).collect();
    collapse_ws(&stripped)
}

/// Mechanical justification checks over every item the record answered.
pub fn justification_flags(record: &RawRecord, bank: &ItemBank, cfg: &ValidationConfig) -> Vec<(JustificationFlag, String)> {
    let mut flags: BTreeMap<JustificationFlag, Vec<String>> = BTreeMap::new();
    let mut uses: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for id in record.answers.keys() {
        let text = record.justifications.get(id).map(|s| s.trim()).unwrap_or("");
        if text.is_empty() {
            flags.entry(JustificationFlag::Empty).or_default().push(id.clone());
            continue;
        }
        if text.chars().count() < cfg.min_justification_chars {
            flags.entry(JustificationFlag::TooShort).or_default().push(id.clone());
        }
        let lowered = collapse_ws(&text.to_lowercase());
        if lowered.chars().count() >= cfg.copy_min_chars {
            let copied = bank.get(id).is_some_and(|item| {
                [&item.premise, &item.hypothesis].into_iter().flatten().any(|src| collapse_ws(&src.to_lowercase()).contains(&lowered))
            });
            if copied {
                flags.entry(JustificationFlag::CopiedQuestionText).or_default().push(id.clone());
            }
        }
        let norm = normalize_justification(text);
        if !norm.is_empty() {
            uses.entry(norm).or_default().push(id);
        }
    }
    for (text, ids) in &uses {
        if ids.len() > cfg.duplicate_justification_max {
            flags.entry(JustificationFlag::RepeatedJustification).or_default().push(format!("\"{text}\" x{}", ids.len()));
        }
    }
    flags.into_iter().map(|(flag, what)| (flag, format!("{}: {}", flag.as_str(), what.join(", ")))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutcome {
    /// Records downstream analyses may use, ordered by respondent id.
    pub accepted: Vec<RawRecord>,
    /// One verdict per input record, ordered by respondent id.
    pub audit: Vec<ValidationVerdict>,
}

impl ProtocolOutcome {
    pub fn count(&self, decision: Decision) -> usize {
        self.audit.iter().filter(|v| v.decision == decision).count()
    }
}

/// Run dedupe, score gate and justification review.
pub fn run_protocol(records: &[RawRecord], bank: &ItemBank, cfg: &ValidationConfig) -> ProtocolOutcome {
    let (kept, mut audit) = dedupe(records);
    let scored_ids = bank.scored_item_ids();
    let mut accepted = Vec::new();
    for rec in kept {
        let unknown: BTreeSet<&String> = rec.answers.keys().filter(|id| bank.get(id).is_none()).collect();
        if !unknown.is_empty() {
            let mut v = ValidationVerdict::new(&rec, Decision::Rejected);
            v.triggered_rules.push(Rule::UnknownItem);
            v.evidence.push(format!("unknown items: {}", unknown.into_iter().cloned().collect::<Vec<_>>().join(", ")));
            audit.push(v);
            continue;
        }
        let row: Vec<Option<u8>> = scored_ids
            .iter()
            .map(|id| {
                let gold = bank.get(id).map(|it| it.gold_label);
                rec.answers.get(id).map(|l| u8::from(Some(*l) == gold))
            })
            .collect();
        // a record that answered no attention check cannot pass one
        let attention = rec.attention_fraction(bank).unwrap_or(0.0);
        let mut v = score_gate(&rec, &row, attention, cfg);
        let review = v.decision == Decision::NeedsReview || (cfg.review_auto_accepted && v.decision == Decision::Accepted);
        if review {
            let flags = justification_flags(&rec, bank, cfg);
            if flags.is_empty() {
                v.decision = Decision::Accepted;
                v.evidence.push("justifications passed".into());
            } else {
                v.decision = Decision::Rejected;
                for (flag, ev) in flags {
                    v.triggered_rules.push(Rule::Justification(flag));
                    v.evidence.push(ev);
                }
            }
        }
        if v.decision == Decision::Accepted {
            accepted.push(rec);
        }
        audit.push(v);
    }
    accepted.sort_by(|a, b| (&a.respondent_id, a.submission_index).cmp(&(&b.respondent_id, b.submission_index)));
    audit.sort_by(|a, b| (&a.respondent_id, a.submission_index).cmp(&(&b.respondent_id, b.submission_index)));
    ProtocolOutcome { accepted, audit }
}
