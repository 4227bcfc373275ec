//! Report rendering: one JSON summary plus flat CSVs (metrics, ROC points,
//! cluster table, k-selection trace) and optional DOT trees, all written into
//! a report directory. Rendering is a pure function of the bundle, so a
//! reloaded bundle regenerates identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ModelBundle, SpaceEvaluation};
use crate::local_regions::KSelectionTrace;
use crate::{Error, Result};

fn metric_line(out: &mut String, name: &str, value: f64) {
    let _ = writeln!(out, "{name},{value}");
}

fn optional_metric_line(out: &mut String, name: &str, value: Option<f64>) {
    match value {
        Some(v) => {
            let _ = writeln!(out, "{name},{v}");
        }
        None => {
            let _ = writeln!(out, "{name},");
        }
    }
}

fn metrics_csv(bundle: &ModelBundle) -> String {
    let evaluation = &bundle.evaluation;
    let m = &evaluation.measures;
    let mut out = String::from("metric,value\n");
    metric_line(&mut out, "auroc", evaluation.auroc);
    metric_line(&mut out, "tau", evaluation.tau);
    metric_line(&mut out, "accuracy", m.accuracy);
    metric_line(&mut out, "precision", m.precision);
    metric_line(&mut out, "recall", m.recall);
    metric_line(&mut out, "specificity", m.specificity);
    metric_line(&mut out, "mcc", m.mcc);
    metric_line(&mut out, "f1", m.f1);
    metric_line(&mut out, "false_negative_rate", m.false_negative_rate);
    metric_line(&mut out, "false_positive_rate", m.false_positive_rate);
    metric_line(&mut out, "true_positives", evaluation.confusion.true_positives as f64);
    metric_line(&mut out, "false_positives", evaluation.confusion.false_positives as f64);
    metric_line(&mut out, "false_negatives", evaluation.confusion.false_negatives as f64);
    metric_line(&mut out, "true_negatives", evaluation.confusion.true_negatives as f64);
    metric_line(&mut out, "selected_k", evaluation.latent.selected_k as f64);
    metric_line(
        &mut out,
        "explained_variance",
        evaluation.latent.cluster_ss.explained_variance,
    );
    optional_metric_line(
        &mut out,
        "ssbc_over_sswc",
        evaluation.latent.cluster_ss.paper_ratio,
    );
    optional_metric_line(&mut out, "mean_surrogate_r2", evaluation.latent.mean_r2);
    optional_metric_line(
        &mut out,
        "mean_surrogate_r2_all_defined",
        evaluation.latent.mean_r2_all_defined,
    );
    if let Some(baseline) = &evaluation.baseline {
        metric_line(&mut out, "baseline_selected_k", baseline.selected_k as f64);
        metric_line(
            &mut out,
            "baseline_explained_variance",
            baseline.cluster_ss.explained_variance,
        );
        optional_metric_line(&mut out, "baseline_mean_surrogate_r2", baseline.mean_r2);
    }
    out
}

fn roc_csv(bundle: &ModelBundle) -> String {
    let mut out = String::from("false_positive_rate,true_positive_rate,threshold\n");
    for point in &bundle.evaluation.roc.points {
        let _ = writeln!(
            out,
            "{},{},{}",
            point.false_positive_rate, point.true_positive_rate, point.threshold
        );
    }
    out
}

fn clusters_csv(space: &SpaceEvaluation) -> String {
    let mut out = String::from("cluster,size,local_accuracy,r2,flag\n");
    for row in &space.per_cluster {
        let r2 = row.r2.map(|v| v.to_string()).unwrap_or_default();
        let flag = row.r2_flag.clone().unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.cluster,
            row.size,
            row.local_accuracy,
            r2,
            flag.replace(',', ";")
        );
    }
    out
}

fn k_selection_csv(trace: &KSelectionTrace) -> String {
    let mut out = String::from("k,feasible,mean_local_accuracy,explained_variance,chosen\n");
    for candidate in &trace.candidates {
        let accuracy = candidate
            .mean_local_accuracy
            .map(|v| v.to_string())
            .unwrap_or_default();
        let variance = candidate
            .explained_variance
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            candidate.k, candidate.feasible, accuracy, variance, candidate.chosen
        );
    }
    out
}

/// Writes the report directory and returns the paths created.
pub fn write_report(bundle: &ModelBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, content)?;
        written.push(path);
        Ok(())
    };

    let summary = serde_json::to_string_pretty(&bundle.evaluation)
        .map_err(|e| Error::InvalidInput(format!("report serialization failed: {e}")))?;
    emit("report.json", summary)?;
    emit("metrics.csv", metrics_csv(bundle))?;
    emit("roc.csv", roc_csv(bundle))?;
    emit("clusters.csv", clusters_csv(&bundle.evaluation.latent))?;
    emit(
        "k_selection.csv",
        k_selection_csv(&bundle.evaluation.latent.k_selection),
    )?;
    if let Some(baseline) = &bundle.evaluation.baseline {
        emit("baseline_clusters.csv", clusters_csv(baseline))?;
        emit(
            "baseline_k_selection.csv",
            k_selection_csv(&baseline.k_selection),
        )?;
    }

    if bundle.config.report.export_trees {
        let trees_dir = dir.join("trees");
        std::fs::create_dir_all(&trees_dir)?;
        for (cluster, tree) in &bundle.surrogates {
            let path = trees_dir.join(format!("cluster_{cluster}.dot"));
            std::fs::write(&path, tree.to_dot(&bundle.schema))?;
            written.push(path);
        }
    }

    Ok(written)
}
