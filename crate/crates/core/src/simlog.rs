//! Deterministic incident-management log generator.
//!
//! Produces VINST-style event logs: cases move through status/sub-status
//! activities across three support lines, carry an impact attribute, and a
//! configurable fraction is pushed to the 2nd/3rd line ("push-to-front").
//! Useful as demo input for the pipeline and as a reproducible stand-in for
//! a real incident log in tests and benchmarks.
//!
//! Each case draws a latent urgency that drives its pacing, its impact
//! rating, and its probability of being pushed, so the label is informative
//! but never fully determined by the observable prefix. That keeps classifier
//! scores spread over the unit interval the way real incident data does,
//! instead of collapsing to a separable toy problem.

use std::collections::BTreeMap;

use chrono::{Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::event_log::{AttributeValue, Event, EventLog, LogFormat, SourceMeta, Trace};
use crate::exec::derive_seed;

pub const SUPPORT_LINE_ATTR: &str = "support_line";
pub const IMPACT_ATTR: &str = "impact";

#[derive(Debug, Clone, PartialEq)]
pub struct SimLogConfig {
    pub cases: usize,
    pub seed: u64,
    /// Baseline push probability for the calmest case (urgency 0).
    pub push_floor: f64,
    /// Push probability reach: urgency 1 pushes with `push_floor + push_gain`.
    pub push_gain: f64,
    /// Logistic steepness of the urgency-to-push relation. Larger values make
    /// the task easier (scores saturate); smaller values make it noisier.
    pub push_slope: f64,
    /// Fraction of regular (non-pushed) cases that still visit the queue.
    pub queued_regular_rate: f64,
    /// Mean inter-event gap in seconds for the calmest case; urgent cases are
    /// proportionally faster.
    pub slow_gap_seconds: f64,
    /// Mean inter-event gap in seconds for the most urgent case.
    pub fast_gap_seconds: f64,
}

impl Default for SimLogConfig {
    fn default() -> Self {
        SimLogConfig {
            cases: 1200,
            seed: 20130301,
            push_floor: 0.02,
            push_gain: 0.93,
            push_slope: 6.0,
            queued_regular_rate: 0.18,
            slow_gap_seconds: 2400.0,
            fast_gap_seconds: 110.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn exponential_gap(rng: &mut ChaCha20Rng, mean_seconds: f64, floor_seconds: f64) -> i64 {
    let u: f64 = rng.gen_range(1e-9..1.0);
    (floor_seconds - mean_seconds * u.ln()).round() as i64
}

const IMPACT_LEVELS: [&str; 4] = ["Low", "Medium", "High", "Major"];

struct StepSpec {
    activity: &'static str,
    line: &'static str,
    gap_scale: f64,
}

/// Generates the log. Identical config always yields an identical log.
pub fn generate(config: &SimLogConfig) -> EventLog {
    let start = Utc.with_ymd_and_hms(2012, 3, 1, 8, 0, 0).unwrap();
    let mut traces = Vec::with_capacity(config.cases);

    for case_index in 0..config.cases {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.seed, case_index as u64));

        // Latent urgency drives pace, impact, and the push decision.
        let urgency: f64 = rng.gen();
        let gap_mean = config.slow_gap_seconds
            * (config.fast_gap_seconds / config.slow_gap_seconds).powf(urgency);
        let push_probability =
            config.push_floor + config.push_gain * sigmoid(config.push_slope * (urgency - 0.55));
        let pushed = rng.gen::<f64>() < push_probability;

        // Impact is a noisy reading of urgency.
        let impact_position = (urgency + rng.gen_range(-0.22..0.22)).clamp(0.0, 0.999);
        let impact = IMPACT_LEVELS[(impact_position * 4.0) as usize];

        let mut steps: Vec<StepSpec> = vec![StepSpec {
            activity: "Accepted-In.Progress",
            line: "1st",
            gap_scale: 0.0,
        }];
        let work = |steps: &mut Vec<StepSpec>, n: usize, line: &'static str, scale: f64, rng: &mut ChaCha20Rng| {
            for _ in 0..n {
                steps.push(StepSpec {
                    activity: WORK_STEPS[rng.gen_range(0..WORK_STEPS.len())],
                    line,
                    gap_scale: scale,
                });
            }
        };

        // Shared first-line phase.
        let shared = rng.gen_range(1..=2);
        work(&mut steps, shared, "1st", 1.0, &mut rng);

        if pushed {
            steps.push(StepSpec {
                activity: "Queued-Awaiting.Assignment",
                line: "1st",
                gap_scale: 0.6,
            });
            let second_line = rng.gen_range(1..=3);
            work(&mut steps, second_line, "2nd", 0.8, &mut rng);
            if rng.gen::<f64>() < 0.25 {
                work(&mut steps, 1, "3rd", 0.8, &mut rng);
            }
            steps.push(StepSpec {
                activity: "Completed-Resolved",
                line: "2nd",
                gap_scale: 1.0,
            });
            steps.push(StepSpec {
                activity: "Completed-Closed",
                line: "2nd",
                gap_scale: 1.5,
            });
        } else {
            if rng.gen::<f64>() < config.queued_regular_rate {
                steps.push(StepSpec {
                    activity: "Queued-Awaiting.Assignment",
                    line: "1st",
                    gap_scale: 0.6,
                });
                work(&mut steps, rng.gen_range(1..=2), "1st", 0.8, &mut rng);
            } else if rng.gen::<f64>() < 0.5 {
                work(&mut steps, 1, "1st", 1.0, &mut rng);
            }
            steps.push(StepSpec {
                activity: "Completed-Resolved",
                line: "1st",
                gap_scale: 1.0,
            });
            steps.push(StepSpec {
                activity: "Completed-Closed",
                line: "1st",
                gap_scale: 1.5,
            });
        }

        let mut timestamp = start + Duration::seconds(case_index as i64 * 1800);
        let mut events = Vec::with_capacity(steps.len());
        for spec in &steps {
            if spec.gap_scale > 0.0 {
                timestamp +=
                    Duration::seconds(exponential_gap(&mut rng, gap_mean * spec.gap_scale, 15.0));
            }
            let mut attributes = BTreeMap::new();
            attributes.insert(
                SUPPORT_LINE_ATTR.to_string(),
                AttributeValue::Text(spec.line.to_string()),
            );
            attributes.insert(
                IMPACT_ATTR.to_string(),
                AttributeValue::Text(impact.to_string()),
            );
            events.push(Event {
                activity: spec.activity.to_string(),
                timestamp,
                attributes,
            });
        }

        traces.push(Trace {
            case_id: format!("INC-{case_index:05}"),
            events,
            case_attributes: BTreeMap::new(),
        });
    }

    EventLog {
        traces,
        source: SourceMeta {
            name: format!("simlog(cases={}, seed={})", config.cases, config.seed),
            format: Some(LogFormat::Csv),
            monotonicity_repairs: 0,
            skipped_rows: 0,
            warnings: Vec::new(),
        },
    }
}

/// Generates the log and renders it as CSV (see [`crate::event_log::write_csv`]).
pub fn generate_csv(config: &SimLogConfig) -> String {
    crate::event_log::write_csv(&generate(config)).expect("synthetic log serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{label_case, LabelRule};

    #[test]
    fn generation_is_deterministic() {
        let config = SimLogConfig {
            cases: 30,
            ..SimLogConfig::default()
        };
        let a = generate(&config);
        let b = generate(&config);
        assert!(a.content_eq(&b));
    }

    #[test]
    fn push_rate_lands_in_a_plausible_band() {
        let config = SimLogConfig {
            cases: 600,
            ..SimLogConfig::default()
        };
        let log = generate(&config);
        let rule = LabelRule::new(
            SUPPORT_LINE_ATTR,
            ["2nd".to_string(), "3rd".to_string()],
        );
        let pushed = log
            .traces
            .iter()
            .filter(|t| label_case(t, &rule).unwrap())
            .count();
        let rate = pushed as f64 / log.traces.len() as f64;
        assert!((0.15..0.55).contains(&rate), "rate {rate}");
    }

    #[test]
    fn timestamps_are_monotone_and_attributes_present() {
        let log = generate(&SimLogConfig {
            cases: 50,
            ..SimLogConfig::default()
        });
        for trace in &log.traces {
            assert!(trace.events.len() >= 3);
            for pair in trace.events.windows(2) {
                assert!(pair[0].timestamp <= pair[1].timestamp);
            }
            for event in &trace.events {
                assert!(event.attributes.contains_key(SUPPORT_LINE_ATTR));
                assert!(event.attributes.contains_key(IMPACT_ATTR));
            }
        }
    }

    #[test]
    fn csv_rendering_round_trips() {
        let config = SimLogConfig {
            cases: 10,
            ..SimLogConfig::default()
        };
        let log = generate(&config);
        let csv = generate_csv(&config);
        let reparsed =
            crate::event_log::parse_csv(csv.as_bytes(), &crate::event_log::CsvOptions::default())
                .unwrap();
        assert!(log.content_eq(&reparsed));
    }
}
