//! Event log domain model: cases, events, and their parsed representations.
//!
//! Logs come in as XES (the IEEE 1849-2016 XML vocabulary) or CSV with a
//! header row. Both parsers produce the same in-memory model: a list of
//! traces, each an ordered sequence of timestamped events carrying typed
//! attributes. Parsed logs are immutable and safe to share across threads.

mod csv;
mod xes;

pub use csv::{parse_csv, write_csv, CsvOptions};
pub use xes::{parse_xes, XesOptions};

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};

/// A typed attribute value attached to an event or a case.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Text(String),
    Number(f64),
    Time(DateTime<Utc>),
    Boolean(bool),
}

impl AttributeValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttributeValue::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Renders the value for display and CSV export.
    pub fn render(&self) -> String {
        match self {
            AttributeValue::Text(s) => s.clone(),
            AttributeValue::Number(n) => format!("{n}"),
            AttributeValue::Time(t) => t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            AttributeValue::Boolean(b) => format!("{b}"),
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// A single recorded process step.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Canonical activity label, composed per the configured [`LabelScheme`].
    pub activity: String,
    pub timestamp: DateTime<Utc>,
    /// Remaining attributes; keys consumed for `activity`/`timestamp` are not
    /// repeated here.
    pub attributes: BTreeMap<String, AttributeValue>,
}

/// One process execution instance (a case).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub case_id: String,
    /// Events in non-decreasing timestamp order (ties keep original order).
    pub events: Vec<Event>,
    pub case_attributes: BTreeMap<String, AttributeValue>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// How the canonical activity label is composed from raw attributes.
///
/// The VINST-style default joins a status attribute with a sub-status
/// attribute ("Accepted" + "In Progress" -> "Accepted-In.Progress"); a single
/// attribute also works by leaving `secondary` unset. For CSV input the keys
/// name columns instead of XES attribute keys.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelScheme {
    pub primary: String,
    pub secondary: Option<String>,
    pub separator: String,
    /// Replace whitespace inside label parts with '.' so composed labels stay
    /// single tokens ("In Progress" -> "In.Progress").
    pub dot_whitespace: bool,
}

impl LabelScheme {
    pub fn single(key: impl Into<String>) -> Self {
        LabelScheme {
            primary: key.into(),
            secondary: None,
            separator: "-".to_string(),
            dot_whitespace: true,
        }
    }

    pub fn joined(primary: impl Into<String>, secondary: impl Into<String>) -> Self {
        LabelScheme {
            primary: primary.into(),
            secondary: Some(secondary.into()),
            separator: "-".to_string(),
            dot_whitespace: true,
        }
    }

    fn normalize(&self, part: &str) -> String {
        if self.dot_whitespace {
            part.split_whitespace().collect::<Vec<_>>().join(".")
        } else {
            part.to_string()
        }
    }

    pub(crate) fn compose(&self, primary: &str, secondary: Option<&str>) -> String {
        match secondary {
            Some(s) if self.secondary.is_some() => format!(
                "{}{}{}",
                self.normalize(primary),
                self.separator,
                self.normalize(s)
            ),
            _ => self.normalize(primary),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Xes,
    Csv,
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogFormat::Xes => f.write_str("xes"),
            LogFormat::Csv => f.write_str("csv"),
        }
    }
}

/// Where a log came from and what happened while reading it.
#[derive(Debug, Clone, Default)]
pub struct SourceMeta {
    pub name: String,
    pub format: Option<LogFormat>,
    /// Traces whose events had to be re-sorted into timestamp order.
    pub monotonicity_repairs: usize,
    /// CSV rows skipped because of unparseable content.
    pub skipped_rows: usize,
    pub warnings: Vec<String>,
}

/// A parsed event log.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    pub traces: Vec<Trace>,
    pub source: SourceMeta,
}

impl EventLog {
    pub fn event_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    pub fn find_trace(&self, case_id: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.case_id == case_id)
    }

    /// Compares the process content (cases, events, attributes), ignoring
    /// source metadata.
    pub fn content_eq(&self, other: &EventLog) -> bool {
        self.traces == other.traces
    }
}

/// Structural summary produced by [`validate_log`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub traces: usize,
    pub events: usize,
    /// Event attribute name -> number of events carrying it.
    pub attribute_coverage: BTreeMap<String, usize>,
    pub monotonicity_repairs: usize,
    pub warnings: Vec<String>,
}

/// Sorts a trace's events into timestamp order (stable, so ties keep their
/// original order) and reports whether anything moved.
pub(crate) fn repair_order(trace: &mut Trace) -> bool {
    let out_of_order = trace
        .events
        .windows(2)
        .any(|w| w[1].timestamp < w[0].timestamp);
    if out_of_order {
        trace.events.sort_by_key(|e| e.timestamp);
    }
    out_of_order
}

/// Checks structural integrity, repairs event ordering in place, and reports
/// counts and attribute coverage.
pub fn validate_log(log: &mut EventLog) -> ValidationReport {
    let mut repairs = log.source.monotonicity_repairs;
    let mut warnings = Vec::new();
    let mut coverage: BTreeMap<String, usize> = BTreeMap::new();

    for trace in &mut log.traces {
        if repair_order(trace) {
            repairs += 1;
        }
        for event in &trace.events {
            for key in event.attributes.keys() {
                *coverage.entry(key.clone()).or_insert(0) += 1;
            }
        }
        if trace.events.is_empty() {
            warnings.push(format!("trace {} has no events", trace.case_id));
        }
    }
    log.source.monotonicity_repairs = repairs;

    if log.traces.is_empty() {
        warnings.push("empty log".to_string());
    }

    ValidationReport {
        traces: log.traces.len(),
        events: log.event_count(),
        attribute_coverage: coverage,
        monotonicity_repairs: repairs,
        warnings,
    }
}

pub(crate) fn check_unique_case_ids(traces: &[Trace]) -> crate::Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for trace in traces {
        if !seen.insert(trace.case_id.as_str()) {
            return Err(crate::Error::InvalidInput(format!(
                "duplicate case id {:?}",
                trace.case_id
            )));
        }
    }
    Ok(())
}
