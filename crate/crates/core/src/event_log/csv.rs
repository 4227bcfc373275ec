//! CSV event log reader/writer (header row, comma separator, RFC-4180
//! quoting). One row per event; rows are grouped into traces by the case
//! column. Columns prefixed `case:` carry case-level attributes; all other
//! unmapped columns become text-valued event attributes.

use std::collections::BTreeMap;

use super::xes::parse_timestamp;
use super::{
    check_unique_case_ids, repair_order, AttributeValue, EventLog, LabelScheme, LogFormat,
    SourceMeta, Trace,
};
use crate::{Error, Result};

const CASE_ATTR_PREFIX: &str = "case:";

/// Column bindings for CSV input. `label.primary` (and the optional
/// `label.secondary`) name activity columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub case_column: String,
    pub label: LabelScheme,
    pub timestamp_column: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            case_column: "case".to_string(),
            label: LabelScheme::single("activity"),
            timestamp_column: "timestamp".to_string(),
        }
    }
}

/// Parses CSV bytes into an [`EventLog`]. Rows with an unparseable timestamp
/// are skipped and counted; a missing mapped column is a configuration error.
pub fn parse_csv(input: &[u8], options: &CsvOptions) -> Result<EventLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);

    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse(e.to_string()))?
        .clone();
    let column_index = |name: &str, role: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!("column {name:?} (role {role}) not found in header"))
        })
    };

    let case_idx = column_index(&options.case_column, "case")?;
    let activity_idx = column_index(&options.label.primary, "activity")?;
    let secondary_idx = match &options.label.secondary {
        Some(col) => Some(column_index(col, "activity-secondary")?),
        None => None,
    };
    let timestamp_idx = column_index(&options.timestamp_column, "timestamp")?;

    let mut mapped = vec![case_idx, activity_idx, timestamp_idx];
    mapped.extend(secondary_idx);

    let mut warnings = Vec::new();
    let mut skipped_rows = 0usize;
    let mut order: Vec<String> = Vec::new();
    let mut by_case: BTreeMap<String, Trace> = BTreeMap::new();

    for (row_number, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse(e.to_string()))?;
        let line = row_number + 2; // 1-based, after the header

        let raw_ts = record.get(timestamp_idx).unwrap_or("");
        let Some(timestamp) = parse_timestamp(raw_ts) else {
            warnings.push(format!("row {line}: unparseable timestamp {raw_ts:?}, skipped"));
            skipped_rows += 1;
            continue;
        };

        let case_id = record.get(case_idx).unwrap_or("").to_string();
        if case_id.is_empty() {
            warnings.push(format!("row {line}: empty case id, skipped"));
            skipped_rows += 1;
            continue;
        }
        let activity = options.label.compose(
            record.get(activity_idx).unwrap_or(""),
            secondary_idx.and_then(|i| record.get(i)),
        );

        let mut attributes = BTreeMap::new();
        let mut case_attributes = BTreeMap::new();
        for (i, value) in record.iter().enumerate() {
            if mapped.contains(&i) || value.is_empty() {
                continue;
            }
            let header = &headers[i];
            if let Some(name) = header.strip_prefix(CASE_ATTR_PREFIX) {
                case_attributes.insert(name.to_string(), AttributeValue::Text(value.to_string()));
            } else {
                attributes.insert(header.to_string(), AttributeValue::Text(value.to_string()));
            }
        }

        let trace = by_case.entry(case_id.clone()).or_insert_with(|| {
            order.push(case_id.clone());
            Trace {
                case_id,
                events: Vec::new(),
                case_attributes: BTreeMap::new(),
            }
        });
        // First row of a case wins for case attributes.
        for (k, v) in case_attributes {
            trace.case_attributes.entry(k).or_insert(v);
        }
        trace.events.push(super::Event {
            activity,
            timestamp,
            attributes,
        });
    }

    let mut repairs = 0usize;
    let mut traces = Vec::with_capacity(order.len());
    for case_id in order {
        let mut trace = by_case.remove(&case_id).expect("case collected above");
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
            format: Some(LogFormat::Csv),
            monotonicity_repairs: repairs,
            skipped_rows,
            warnings,
        },
    })
}

/// Serializes a log back to CSV with columns `case,activity,timestamp`
/// followed by the sorted union of attribute names (case attributes under a
/// `case:` prefix). `parse_csv` of the output with default options yields a
/// log with identical content when attribute values are text.
pub fn write_csv(log: &EventLog) -> Result<String> {
    let mut event_keys = std::collections::BTreeSet::new();
    let mut case_keys = std::collections::BTreeSet::new();
    for trace in &log.traces {
        case_keys.extend(trace.case_attributes.keys().cloned());
        for event in &trace.events {
            event_keys.extend(event.attributes.keys().cloned());
        }
    }

    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["case".to_string(), "activity".to_string(), "timestamp".to_string()];
    header.extend(event_keys.iter().cloned());
    header.extend(case_keys.iter().map(|k| format!("{CASE_ATTR_PREFIX}{k}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::CsvParse(e.to_string()))?;

    for trace in &log.traces {
        for event in &trace.events {
            let mut row = vec![
                trace.case_id.clone(),
                event.activity.clone(),
                event
                    .timestamp
                    .to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            ];
            for key in &event_keys {
                row.push(event.attributes.get(key).map(AttributeValue::render).unwrap_or_default());
            }
            for key in &case_keys {
                row.push(
                    trace
                        .case_attributes
                        .get(key)
                        .map(AttributeValue::render)
                        .unwrap_or_default(),
                );
            }
            writer
                .write_record(&row)
                .map_err(|e| Error::CsvParse(e.to_string()))?;
        }
    }

    let bytes = writer
        .into_inner()
        .map_err(|e| Error::CsvParse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::CsvParse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_CASES: &str = "\
case,activity,timestamp,impact
c1,Accepted-In.Progress,2012-01-01T09:00:00Z,Medium
c1,Completed-Resolved,2012-01-01T10:00:00Z,Medium
c2,Accepted-In.Progress,2012-01-02T09:00:00Z,High
c2,Queued-Awaiting.Assignment,2012-01-02T09:05:00Z,High
";

    #[test]
    fn groups_rows_into_traces() {
        let log = parse_csv(TWO_CASES.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(log.traces.len(), 2);
        assert_eq!(log.traces[0].events.len(), 2);
        assert_eq!(log.traces[1].events.len(), 2);
        assert_eq!(
            log.traces[1].events[1].activity,
            "Queued-Awaiting.Assignment"
        );
    }

    #[test]
    fn header_only_file_yields_empty_log() {
        let log = parse_csv(b"case,activity,timestamp\n", &CsvOptions::default()).unwrap();
        assert_eq!(log.traces.len(), 0);
    }

    #[test]
    fn missing_timestamp_role_is_a_configuration_error() {
        let options = CsvOptions {
            timestamp_column: "when".to_string(),
            ..CsvOptions::default()
        };
        let err = parse_csv(TWO_CASES.as_bytes(), &options).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn bad_timestamp_rows_are_skipped_and_counted() {
        let data = "case,activity,timestamp\nc1,A,not-a-time\nc1,B,2012-01-01T00:00:00Z\n";
        let log = parse_csv(data.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(log.source.skipped_rows, 1);
        assert_eq!(log.traces[0].events.len(), 1);
    }

    #[test]
    fn csv_round_trip_preserves_content() {
        let log = parse_csv(TWO_CASES.as_bytes(), &CsvOptions::default()).unwrap();
        let serialized = write_csv(&log).unwrap();
        let reparsed = parse_csv(serialized.as_bytes(), &CsvOptions::default()).unwrap();
        assert!(log.content_eq(&reparsed));
    }

    #[test]
    fn joined_activity_columns_compose_labels() {
        let data = "case,status,substatus,timestamp\nc1,Accepted,In Progress,2012-01-01T00:00:00Z\n";
        let options = CsvOptions {
            case_column: "case".into(),
            label: LabelScheme::joined("status", "substatus"),
            timestamp_column: "timestamp".into(),
        };
        let log = parse_csv(data.as_bytes(), &options).unwrap();
        assert_eq!(log.traces[0].events[0].activity, "Accepted-In.Progress");
    }

    #[test]
    fn case_prefixed_columns_become_case_attributes() {
        let data = "case,activity,timestamp,case:product\nc1,A,2012-01-01T00:00:00Z,PROD-1\n";
        let log = parse_csv(data.as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(
            log.traces[0].case_attributes.get("product"),
            Some(&AttributeValue::Text("PROD-1".into()))
        );
        assert!(log.traces[0].events[0].attributes.is_empty());
    }
}
