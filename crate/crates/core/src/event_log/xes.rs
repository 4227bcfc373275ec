//! XES (IEEE 1849-2016) log parser for the log/trace/event subset with
//! string/date/int/float/boolean attributes.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use super::{
    check_unique_case_ids, repair_order, AttributeValue, Event, EventLog, LabelScheme, LogFormat,
    SourceMeta, Trace,
};
use crate::{Error, Result};

/// Attribute bindings for XES input.
#[derive(Debug, Clone, PartialEq)]
pub struct XesOptions {
    /// Event attribute key(s) the activity label is composed from.
    pub label: LabelScheme,
    /// Event attribute key holding the timestamp.
    pub timestamp_key: String,
    /// Trace attribute key holding the case id.
    pub trace_id_key: String,
}

impl Default for XesOptions {
    fn default() -> Self {
        XesOptions {
            label: LabelScheme::joined("concept:name", "lifecycle:transition"),
            timestamp_key: "time:timestamp".to_string(),
            trace_id_key: "concept:name".to_string(),
        }
    }
}

fn parse_attribute(node: roxmltree::Node) -> Option<(String, AttributeValue)> {
    let key = node.attribute("key")?.to_string();
    let raw = node.attribute("value")?;
    let value = match node.tag_name().name() {
        "string" | "id" => AttributeValue::Text(raw.to_string()),
        "date" => AttributeValue::Time(parse_timestamp(raw)?),
        "int" | "float" => AttributeValue::Number(raw.parse().ok()?),
        "boolean" => AttributeValue::Boolean(raw.parse().ok()?),
        _ => return None,
    };
    Some((key, value))
}

pub(crate) fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    // Space-separated variant with an explicit offset.
    if let Ok(t) = DateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%.f%:z") {
        return Some(t.with_timezone(&Utc));
    }
    // Naive fallbacks are read as UTC.
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

fn collect_attributes(node: roxmltree::Node) -> BTreeMap<String, AttributeValue> {
    node.children()
        .filter(|c| c.is_element())
        .filter(|c| !matches!(c.tag_name().name(), "event" | "trace"))
        .filter_map(parse_attribute)
        .collect()
}

/// Parses an XES document into an [`EventLog`].
///
/// Events missing the activity or timestamp key are skipped with a warning;
/// a trace is dropped (and reported) only when none of its events survive.
pub fn parse_xes(input: &[u8], options: &XesOptions) -> Result<EventLog> {
    let text = std::str::from_utf8(input)
        .map_err(|e| Error::InvalidInput(format!("input is not valid UTF-8: {e}")))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        Error::XmlParse {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let root = doc.root_element();
    if root.tag_name().name() != "log" {
        return Err(Error::InvalidInput(format!(
            "expected <log> root element, found <{}>",
            root.tag_name().name()
        )));
    }

    let mut warnings = Vec::new();
    let mut repairs = 0usize;
    let mut traces = Vec::new();

    for (trace_index, trace_node) in root
        .children()
        .filter(|c| c.has_tag_name("trace"))
        .enumerate()
    {
        let mut case_attributes = collect_attributes(trace_node);
        let case_id = match case_attributes.remove(&options.trace_id_key) {
            Some(v) => v.render(),
            None => {
                warnings.push(format!(
                    "trace #{trace_index} has no {:?} attribute; synthesized id",
                    options.trace_id_key
                ));
                format!("trace-{trace_index}")
            }
        };

        let mut events = Vec::new();
        for event_node in trace_node.children().filter(|c| c.has_tag_name("event")) {
            let mut attributes = collect_attributes(event_node);

            let primary = attributes.remove(&options.label.primary);
            let secondary = options
                .label
                .secondary
                .as_ref()
                .and_then(|k| attributes.remove(k));
            let timestamp = attributes.remove(&options.timestamp_key);

            let Some(primary) = primary else {
                warnings.push(format!(
                    "case {case_id}: event missing activity key {:?}, skipped",
                    options.label.primary
                ));
                continue;
            };
            let timestamp = match timestamp {
                Some(AttributeValue::Time(t)) => t,
                Some(other) => match parse_timestamp(&other.render()) {
                    Some(t) => t,
                    None => {
                        warnings.push(format!(
                            "case {case_id}: unparseable timestamp {:?}, event skipped",
                            other.render()
                        ));
                        continue;
                    }
                },
                None => {
                    warnings.push(format!(
                        "case {case_id}: event missing timestamp key {:?}, skipped",
                        options.timestamp_key
                    ));
                    continue;
                }
            };

            let activity = options
                .label
                .compose(&primary.render(), secondary.as_ref().map(|s| s.render()).as_deref());
            events.push(Event {
                activity,
                timestamp,
                attributes,
            });
        }

        if events.is_empty() {
            warnings.push(format!("case {case_id}: no usable events, trace dropped"));
            continue;
        }

        let mut trace = Trace {
            case_id,
            events,
            case_attributes,
        };
        if repair_order(&mut trace) {
            repairs += 1;
        }
        traces.push(trace);
    }

    check_unique_case_ids(&traces)?;

    Ok(EventLog {
        traces,
        source: SourceMeta {
            name: String::new(),
            format: Some(LogFormat::Xes),
            monotonicity_repairs: repairs,
            skipped_rows: 0,
            warnings,
        },
    })
}
