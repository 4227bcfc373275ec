//! Per-cluster surrogate regression trees: CART-style variance-reduction
//! growth against the black-box prediction scores, decision-path extraction,
//! human-readable rules in raw feature units, and rule confidence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoding::{FeatureKind, FeatureSchema};
use crate::exec;
use crate::local_regions::RegionModel;
use crate::metrics;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_variance_reduction: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 4,
            min_samples_leaf: 5,
            min_variance_reduction: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Instances with feature value <= threshold go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Mean black-box score of the training members.
        prediction: f64,
        samples: usize,
        /// Class implied by the leaf prediction at the pipeline threshold.
        positive_class: bool,
        /// Fraction of members whose black-box class matches the leaf class.
        confidence: f64,
        /// Same fraction measured against ground-truth labels instead.
        ground_truth_confidence: f64,
    },
}

impl TreeNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// A cluster's surrogate tree plus its fidelity on that cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub cluster_id: usize,
    pub root: TreeNode,
    /// Fidelity R² against the black-box scores of the cluster members;
    /// absent when the black-box scores are degenerate.
    pub r2: Option<f64>,
    /// Set when r2 must not be read as a regular fidelity value.
    pub r2_flag: Option<String>,
    /// Classification threshold the leaf classes refer to.
    pub tau: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    reduction: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Exhaustive greedy split search: every feature, every midpoint between
/// consecutive distinct observed values. Ties resolve to the lowest feature
/// index, then the lowest threshold (strict-improvement scan order).
fn best_split(
    rows: &[&[f64]],
    targets: &[f64],
    indices: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitChoice> {
    let node_sum: f64 = indices.iter().map(|&i| targets[i]).sum();
    let node_sq: f64 = indices.iter().map(|&i| targets[i] * targets[i]).sum();
    let n = indices.len() as f64;
    let node_ss = node_sq - node_sum * node_sum / n;

    let dim = rows[indices[0]].len();
    let mut best: Option<SplitChoice> = None;

    let mut sorted = indices.to_vec();
    for feature in 0..dim {
        sorted.sort_by(|&a, &b| {
            rows[a][feature]
                .partial_cmp(&rows[b][feature])
                .expect("finite features")
        });

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for (position, &index) in sorted.iter().enumerate().take(sorted.len() - 1) {
            let y = targets[index];
            left_sum += y;
            left_sq += y * y;

            let value = rows[index][feature];
            let next_value = rows[sorted[position + 1]][feature];
            if value == next_value {
                continue;
            }
            let left_len = position + 1;
            let right_len = sorted.len() - left_len;
            if left_len < min_samples_leaf || right_len < min_samples_leaf {
                continue;
            }

            let right_sum = node_sum - left_sum;
            let right_sq = node_sq - left_sq;
            let left_ss = left_sq - left_sum * left_sum / left_len as f64;
            let right_ss = right_sq - right_sum * right_sum / right_len as f64;
            let reduction = node_ss - left_ss - right_ss;

            if best.as_ref().is_none_or(|b| reduction > b.reduction) {
                best = Some(SplitChoice {
                    feature,
                    threshold: (value + next_value) / 2.0,
                    reduction,
                    left: sorted[..left_len].to_vec(),
                    right: sorted[left_len..].to_vec(),
                });
            }
        }
    }
    best
}

fn grow(
    rows: &[&[f64]],
    targets: &[f64],
    indices: &[usize],
    depth: usize,
    config: &TreeConfig,
) -> TreeNode {
    let make_leaf = |indices: &[usize]| TreeNode::Leaf {
        prediction: mean(&indices.iter().map(|&i| targets[i]).collect::<Vec<_>>()),
        samples: indices.len(),
        positive_class: false,
        confidence: 0.0,
        ground_truth_confidence: 0.0,
    };

    if depth >= config.max_depth || indices.len() < 2 * config.min_samples_leaf {
        return make_leaf(indices);
    }
    match best_split(rows, targets, indices, config.min_samples_leaf) {
        Some(split) if split.reduction >= config.min_variance_reduction => TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(grow(rows, targets, &split.left, depth + 1, config)),
            right: Box::new(grow(rows, targets, &split.right, depth + 1, config)),
        },
        _ => make_leaf(indices),
    }
}

/// Fits a CART-style regression tree on original encoded features against
/// black-box scores. Leaf class/confidence fields are filled by
/// [`annotate_leaves`]; [`fit_cluster_surrogates`] does both.
pub fn fit_tree(rows: &[&[f64]], targets: &[f64], config: &TreeConfig) -> Result<TreeNode> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::InvalidInput(
            "tree fitting needs aligned, non-empty rows and targets".to_string(),
        ));
    }
    if config.max_depth == 0 || config.min_samples_leaf == 0 {
        return Err(Error::Config(
            "max_depth and min_samples_leaf must be >= 1".to_string(),
        ));
    }
    let indices: Vec<usize> = (0..rows.len()).collect();
    Ok(grow(rows, targets, &indices, 0, config))
}

fn route<'t>(root: &'t TreeNode, features: &[f64]) -> &'t TreeNode {
    let mut node = root;
    while let TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    } = node
    {
        node = if features[*feature] <= *threshold {
            left
        } else {
            right
        };
    }
    node
}

/// In-order position of the leaf an instance routes to.
fn leaf_ordinal(root: &TreeNode, features: &[f64]) -> usize {
    let mut node = root;
    let mut ordinal = 0;
    loop {
        match node {
            TreeNode::Leaf { .. } => return ordinal,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if features[*feature] <= *threshold {
                    node = left;
                } else {
                    ordinal += left.leaf_count();
                    node = right;
                }
            }
        }
    }
}

/// Piecewise-constant prediction: exactly the routed leaf's stored mean.
pub fn predict(root: &TreeNode, features: &[f64]) -> f64 {
    match route(root, features) {
        TreeNode::Leaf { prediction, .. } => *prediction,
        TreeNode::Split { .. } => unreachable!("route ends at a leaf"),
    }
}

/// Fills per-leaf class and confidence fields from the members routed to each
/// leaf: the leaf class is its prediction thresholded at `tau`, confidence the
/// fraction of members whose black-box class (and, for the ground-truth
/// variant, whose label) agrees with it.
pub fn annotate_leaves(
    root: &mut TreeNode,
    rows: &[&[f64]],
    blackbox_scores: &[f64],
    labels: &[u8],
    tau: f64,
) {
    #[derive(Default, Clone)]
    struct LeafTally {
        members: usize,
        blackbox_positive: usize,
        label_positive: usize,
    }
    let mut tallies = vec![LeafTally::default(); root.leaf_count()];
    for ((row, &score), &label) in rows.iter().zip(blackbox_scores).zip(labels) {
        let tally = &mut tallies[leaf_ordinal(root, row)];
        tally.members += 1;
        if score >= tau {
            tally.blackbox_positive += 1;
        }
        if label == 1 {
            tally.label_positive += 1;
        }
    }

    fn visit(node: &mut TreeNode, tallies: &[LeafTally], next: &mut usize, tau: f64) {
        match node {
            TreeNode::Split { left, right, .. } => {
                visit(left, tallies, next, tau);
                visit(right, tallies, next, tau);
            }
            TreeNode::Leaf {
                prediction,
                positive_class,
                confidence,
                ground_truth_confidence,
                ..
            } => {
                let tally = &tallies[*next];
                *next += 1;
                *positive_class = *prediction >= tau;
                if tally.members > 0 {
                    let agree_blackbox = if *positive_class {
                        tally.blackbox_positive
                    } else {
                        tally.members - tally.blackbox_positive
                    };
                    let agree_label = if *positive_class {
                        tally.label_positive
                    } else {
                        tally.members - tally.label_positive
                    };
                    *confidence = agree_blackbox as f64 / tally.members as f64;
                    *ground_truth_confidence = agree_label as f64 / tally.members as f64;
                }
            }
        }
    }
    let mut next = 0;
    visit(root, &tallies, &mut next, tau);
}

/// Fits one surrogate per cluster of the region model, scoring each with
/// fidelity R² inside its own cluster. Clusters smaller than
/// 2*min_samples_leaf get a single-leaf tree and a flagged r2, as do clusters
/// whose black-box scores are degenerate.
pub fn fit_cluster_surrogates(
    regions: &RegionModel,
    rows: &[&[f64]],
    blackbox_scores: &[f64],
    labels: &[u8],
    config: &TreeConfig,
    tau: f64,
) -> Result<BTreeMap<usize, SurrogateTree>> {
    if rows.len() != regions.assignments.len()
        || rows.len() != blackbox_scores.len()
        || rows.len() != labels.len()
    {
        return Err(Error::InvalidInput(
            "regions, rows, scores and labels must be aligned".to_string(),
        ));
    }

    let clusters: Vec<usize> = (0..regions.k).collect();
    let trees = exec::map_collect(&clusters, |&cluster| {
        let members = regions.cluster_members(cluster);
        let member_rows: Vec<&[f64]> = members.iter().map(|&i| rows[i]).collect();
        let member_scores: Vec<f64> = members.iter().map(|&i| blackbox_scores[i]).collect();
        let member_labels: Vec<u8> = members.iter().map(|&i| labels[i]).collect();

        let small = member_rows.len() < 2 * config.min_samples_leaf;
        let mut root = if small {
            TreeNode::Leaf {
                prediction: if member_scores.is_empty() {
                    0.0
                } else {
                    mean(&member_scores)
                },
                samples: member_rows.len(),
                positive_class: false,
                confidence: 0.0,
                ground_truth_confidence: 0.0,
            }
        } else {
            grow(
                &member_rows,
                &member_scores,
                &(0..member_rows.len()).collect::<Vec<_>>(),
                0,
                config,
            )
        };
        annotate_leaves(&mut root, &member_rows, &member_scores, &member_labels, tau);

        let predictions: Vec<f64> = member_rows.iter().map(|row| predict(&root, row)).collect();
        let (r2, mut r2_flag) = match metrics::fidelity_r2(&predictions, &member_scores) {
            Ok(value) => (Some(value), None),
            Err(Error::DegenerateScores) => {
                (None, Some("degenerate black-box scores".to_string()))
            }
            Err(_) => (None, Some("too few instances to measure fidelity".to_string())),
        };
        if small && r2_flag.is_none() {
            r2_flag = Some(format!(
                "cluster smaller than {} instances; single-leaf surrogate",
                2 * config.min_samples_leaf
            ));
        }

        SurrogateTree {
            cluster_id: cluster,
            root,
            r2,
            r2_flag,
            tau,
        }
    });

    Ok(clusters.into_iter().zip(trees).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub feature: usize,
    pub threshold: f64,
    pub went_left: bool,
}

/// The unique root-to-leaf route an instance takes through a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPath {
    pub steps: Vec<PathStep>,
    pub leaf_prediction: f64,
    pub leaf_samples: usize,
    pub leaf_positive_class: bool,
    pub leaf_confidence: f64,
    pub leaf_ground_truth_confidence: f64,
}

impl DecisionPath {
    /// "Left-Left-Right" style rendering of the walk.
    pub fn directions(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| if s.went_left { "Left".to_string() } else { "Right".to_string() })
            .collect()
    }
}

/// Walks the instance down the tree, recording each branch taken.
pub fn decision_path(tree: &SurrogateTree, features: &[f64]) -> DecisionPath {
    let mut steps = Vec::new();
    let mut node = &tree.root;
    loop {
        match node {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let went_left = features[*feature] <= *threshold;
                steps.push(PathStep {
                    feature: *feature,
                    threshold: *threshold,
                    went_left,
                });
                node = if went_left { left } else { right };
            }
            TreeNode::Leaf {
                prediction,
                samples,
                positive_class,
                confidence,
                ground_truth_confidence,
            } => {
                return DecisionPath {
                    steps,
                    leaf_prediction: *prediction,
                    leaf_samples: *samples,
                    leaf_positive_class: *positive_class,
                    leaf_confidence: *confidence,
                    leaf_ground_truth_confidence: *ground_truth_confidence,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    /// Numeric `<=` in raw units.
    LessEq,
    /// Numeric `>` in raw units.
    Greater,
    /// One-hot: the attribute takes this level.
    Is,
    /// One-hot: the attribute does not take this level.
    IsNot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RuleBound {
    Numeric(f64),
    Level(String),
}

/// One conjunct of a rule, in raw feature units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCondition {
    /// Schema feature name ("A---B", "duration_since_start_seconds",
    /// "impact=Medium").
    pub feature: String,
    /// Index into the schema's flat feature vector.
    pub feature_index: usize,
    pub comparator: Comparator,
    pub bound: RuleBound,
    /// The tree's own threshold in the encoded (scaled) space; checking
    /// against it keeps rule satisfaction exactly equal to tree routing.
    pub scaled_bound: f64,
    pub display: String,
}

/// A human-readable rule extracted from a decision path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<RuleCondition>,
    pub predicted_score: f64,
    pub confidence: f64,
    pub ground_truth_confidence: f64,
    pub support: usize,
}

impl Rule {
    /// Fig.-5-style rendering: IF ... AND ... THEN prediction.
    pub fn text(&self) -> String {
        if self.conditions.is_empty() {
            return format!(
                "THEN prediction of the surrogate model is {}",
                format_signif(self.predicted_score, 4)
            );
        }
        let mut out = String::from("IF ");
        for (i, condition) in self.conditions.iter().enumerate() {
            if i > 0 {
                out.push_str("\nAND ");
            }
            out.push_str(&condition.display);
        }
        out.push_str(&format!(
            "\nTHEN prediction of the surrogate model is {}",
            format_signif(self.predicted_score, 4)
        ));
        out
    }

    /// True when the (scaled) instance satisfies every condition; faithful to
    /// tree routing by construction.
    pub fn satisfied_by(&self, features: &[f64]) -> bool {
        self.conditions.iter().all(|condition| {
            let value = features[condition.feature_index];
            match condition.comparator {
                Comparator::LessEq | Comparator::IsNot => value <= condition.scaled_bound,
                Comparator::Greater | Comparator::Is => value > condition.scaled_bound,
            }
        })
    }
}

/// Rounds to `digits` significant digits for display.
pub fn format_signif(value: f64, digits: u32) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits as i32 - 1 - magnitude);
    let rounded = (value * factor).round() / factor;
    format!("{rounded}")
}

fn humanize(name: &str) -> String {
    if let Some(stripped) = name.strip_suffix("_seconds") {
        stripped.replace('_', " ")
    } else {
        name.replace('_', " ")
    }
}

fn numeric_display(name: &str, comparator: Comparator, raw_bound: f64) -> String {
    let pretty = humanize(name);
    let unit = if name.ends_with("_seconds") { " seconds" } else { "" };
    let bound = format_signif(raw_bound, 4);
    match comparator {
        Comparator::LessEq => format!("{pretty} is less than or equal to {bound}{unit}"),
        Comparator::Greater => format!("{pretty} is greater than {bound}{unit}"),
        _ => unreachable!("numeric comparator"),
    }
}

fn count_display(name: &str, comparator: Comparator, threshold: f64) -> String {
    // Transition counts are integers; render the integer form of the cut.
    match comparator {
        Comparator::LessEq => format!("{name} is less than {}", threshold.floor() as i64 + 1),
        Comparator::Greater => format!("{name} is at least {}", threshold.floor() as i64 + 1),
        _ => unreachable!("count comparator"),
    }
}

/// Converts a decision path into a rule on raw feature units. Repeated
/// conditions on one feature merge into the tightest interval; thresholds on
/// z-scaled numerics are mapped back through the schema scaler.
pub fn extract_rule(path: &DecisionPath, schema: &FeatureSchema) -> Rule {
    struct Interval {
        upper: Option<f64>, // tightest `<=` bound, scaled units
        lower: Option<f64>, // tightest `>` bound, scaled units
        first_seen: usize,
    }
    let mut intervals: BTreeMap<usize, Interval> = BTreeMap::new();
    for (position, step) in path.steps.iter().enumerate() {
        let entry = intervals.entry(step.feature).or_insert(Interval {
            upper: None,
            lower: None,
            first_seen: position,
        });
        if step.went_left {
            entry.upper = Some(entry.upper.map_or(step.threshold, |u: f64| u.min(step.threshold)));
        } else {
            entry.lower = Some(entry.lower.map_or(step.threshold, |l: f64| l.max(step.threshold)));
        }
    }

    let mut ordered: Vec<(usize, Interval)> = intervals.into_iter().collect();
    ordered.sort_by_key(|(_, interval)| interval.first_seen);

    let names = schema.feature_names();
    let mut conditions = Vec::new();
    for (feature_index, interval) in ordered {
        let kind = schema.feature_kind(feature_index);
        let name = names[feature_index].clone();
        let mut push = |comparator: Comparator, scaled_bound: f64| {
            let (bound, display) = match &kind {
                Some(FeatureKind::Numeric { name: feature_name, scaler }) => {
                    let raw = scaler.unscale(scaled_bound);
                    (RuleBound::Numeric(raw), numeric_display(feature_name, comparator, raw))
                }
                Some(FeatureKind::OneHot { attribute, level }) => {
                    let display = match comparator {
                        // one-hot <= t with t in (0,1) means "not this level"
                        Comparator::LessEq => format!("{attribute} is not {level}"),
                        _ => format!("{attribute} is {level}"),
                    };
                    (RuleBound::Level((*level).to_string()), display)
                }
                _ => (
                    RuleBound::Numeric(scaled_bound),
                    count_display(&name, comparator, scaled_bound),
                ),
            };
            let comparator = match (&kind, comparator) {
                (Some(FeatureKind::OneHot { .. }), Comparator::LessEq) => Comparator::IsNot,
                (Some(FeatureKind::OneHot { .. }), Comparator::Greater) => Comparator::Is,
                (_, c) => c,
            };
            conditions.push(RuleCondition {
                feature: name.clone(),
                feature_index,
                comparator,
                bound,
                scaled_bound,
                display,
            });
        };
        if let Some(upper) = interval.upper {
            push(Comparator::LessEq, upper);
        }
        if let Some(lower) = interval.lower {
            push(Comparator::Greater, lower);
        }
    }

    Rule {
        conditions,
        predicted_score: path.leaf_prediction,
        confidence: path.leaf_confidence,
        ground_truth_confidence: path.leaf_ground_truth_confidence,
        support: path.leaf_samples,
    }
}

/// Recomputes a rule's confidence over cluster members: of the instances the
/// rule covers, the fraction whose black-box class at `tau` matches the class
/// implied by the rule's predicted score.
pub fn rule_confidence(
    rule: &Rule,
    rows: &[&[f64]],
    blackbox_scores: &[f64],
    tau: f64,
) -> Result<f64> {
    let rule_positive = rule.predicted_score >= tau;
    let mut members = 0usize;
    let mut agree = 0usize;
    for (row, &score) in rows.iter().zip(blackbox_scores) {
        if rule.satisfied_by(row) {
            members += 1;
            if (score >= tau) == rule_positive {
                agree += 1;
            }
        }
    }
    if members == 0 {
        return Err(Error::InvalidInput(
            "rule covers no instances (empty leaf)".to_string(),
        ));
    }
    Ok(agree as f64 / members as f64)
}

fn dot_escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

impl SurrogateTree {
    /// Renders the tree as a DOT digraph. Internal nodes carry raw-unit
    /// conditions (the left edge satisfies the condition), leaves carry
    /// score, support and confidence.
    pub fn to_dot(&self, schema: &FeatureSchema) -> String {
        let names = schema.feature_names();
        let mut out = format!("digraph cluster_{} {{\n", self.cluster_id);
        out.push_str("  node [shape=box];\n");
        let mut counter = 0usize;
        self.dot_node(&self.root, schema, &names, &mut counter, &mut out);
        out.push_str("}\n");
        out
    }

    fn dot_node(
        &self,
        node: &TreeNode,
        schema: &FeatureSchema,
        names: &[String],
        counter: &mut usize,
        out: &mut String,
    ) -> usize {
        let id = *counter;
        *counter += 1;
        match node {
            TreeNode::Leaf {
                prediction,
                samples,
                confidence,
                ..
            } => {
                out.push_str(&format!(
                    "  n{id} [label=\"score = {}\\nsupport = {samples}\\nconfidence = {}\"];\n",
                    dot_escape(&format_signif(*prediction, 4)),
                    dot_escape(&format_signif(*confidence, 4)),
                ));
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let label = match schema.feature_kind(*feature) {
                    Some(FeatureKind::Numeric { name, scaler }) => format!(
                        "{} <= {}",
                        humanize(name),
                        format_signif(scaler.unscale(*threshold), 4)
                    ),
                    Some(FeatureKind::OneHot { attribute, level }) => {
                        format!("{attribute} is not {level}")
                    }
                    _ => format!("{} <= {}", names[*feature], format_signif(*threshold, 4)),
                };
                out.push_str(&format!("  n{id} [label=\"{}\"];\n", dot_escape(&label)));
                let left_id = self.dot_node(left, schema, names, counter, out);
                let right_id = self.dot_node(right, schema, names, counter, out);
                out.push_str(&format!("  n{id} -> n{left_id} [label=\"yes\"];\n"));
                out.push_str(&format!("  n{id} -> n{right_id} [label=\"no\"];\n"));
            }
        }
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{CategoricalFeature, FeatureScaler, LabelRule};

    fn schema_with(
        vocab: Vec<&str>,
        numeric_scalers: Vec<FeatureScaler>,
        categoricals: Vec<(&str, Vec<&str>)>,
    ) -> FeatureSchema {
        FeatureSchema {
            ngram_order: 2,
            ngram_vocabulary: vocab.into_iter().map(String::from).collect(),
            numeric_features: vec![
                crate::encoding::DURATION_SINCE_START.to_string(),
                crate::encoding::DURATION_SINCE_PREVIOUS.to_string(),
            ][..numeric_scalers.len()]
                .to_vec(),
            categorical_features: categoricals
                .into_iter()
                .map(|(name, levels)| CategoricalFeature {
                    name: name.to_string(),
                    levels: levels.into_iter().map(String::from).collect(),
                })
                .collect(),
            scaler: numeric_scalers,
            label_rule: LabelRule::new("x", std::iter::empty::<String>()),
            positive_class_name: "Regular".to_string(),
            negative_class_name: "Push-to-Front".to_string(),
        }
    }

    fn plain_schema(dim: usize) -> FeatureSchema {
        FeatureSchema {
            ngram_order: 2,
            ngram_vocabulary: (0..dim).map(|i| format!("f{i}---g{i}")).collect(),
            numeric_features: vec![],
            categorical_features: vec![],
            scaler: vec![],
            label_rule: LabelRule::new("x", std::iter::empty::<String>()),
            positive_class_name: "Regular".to_string(),
            negative_class_name: "Push-to-Front".to_string(),
        }
    }

    fn loose_config() -> TreeConfig {
        TreeConfig {
            max_depth: 4,
            min_samples_leaf: 1,
            min_variance_reduction: 1e-9,
        }
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let rows_data = [[0.0], [1.0], [2.0], [3.0]];
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let tree = fit_tree(&rows, &[0.7, 0.7, 0.7, 0.7], &loose_config()).unwrap();
        match tree {
            TreeNode::Leaf { prediction, samples, .. } => {
                assert_eq!(prediction, 0.7);
                assert_eq!(samples, 4);
            }
            other => panic!("expected leaf, got {other:?}"),
        }
    }

    #[test]
    fn one_dimensional_fixture_splits_at_six() {
        let rows_data = [[1.0], [2.0], [10.0], [11.0]];
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let tree = fit_tree(&rows, &[0.0, 0.0, 1.0, 1.0], &loose_config()).unwrap();
        match &tree {
            TreeNode::Split { feature, threshold, left, right } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 6.0);
                assert!(matches!(**left, TreeNode::Leaf { prediction: 0.0, .. }));
                assert!(matches!(**right, TreeNode::Leaf { prediction: 1.0, .. }));
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(predict(&tree, &[1.0]), 0.0);
        assert_eq!(predict(&tree, &[11.0]), 1.0);
    }

    #[test]
    fn decision_path_on_fixture() {
        let rows_data = [[1.0], [2.0], [10.0], [11.0]];
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let root = fit_tree(&rows, &[0.0, 0.0, 1.0, 1.0], &loose_config()).unwrap();
        let tree = SurrogateTree {
            cluster_id: 0,
            root,
            r2: Some(1.0),
            r2_flag: None,
            tau: 0.5,
        };
        let path = decision_path(&tree, &[1.0]);
        assert_eq!(path.directions(), vec!["Left"]);
        assert_eq!(path.leaf_prediction, 0.0);

        let single_leaf = SurrogateTree {
            cluster_id: 1,
            root: TreeNode::Leaf {
                prediction: 0.4,
                samples: 3,
                positive_class: false,
                confidence: 1.0,
                ground_truth_confidence: 1.0,
            },
            r2: None,
            r2_flag: Some("degenerate".into()),
            tau: 0.5,
        };
        let path = decision_path(&single_leaf, &[123.0]);
        assert!(path.steps.is_empty());
        assert_eq!(path.leaf_prediction, 0.4);
    }

    #[test]
    fn redundant_conditions_merge_to_tightest_interval() {
        let path = DecisionPath {
            steps: vec![
                PathStep { feature: 0, threshold: 10.0, went_left: true },
                PathStep { feature: 0, threshold: 5.0, went_left: true },
            ],
            leaf_prediction: 0.2,
            leaf_samples: 5,
            leaf_positive_class: false,
            leaf_confidence: 0.6,
            leaf_ground_truth_confidence: 0.8,
        };
        let schema = plain_schema(1);
        let rule = extract_rule(&path, &schema);
        assert_eq!(rule.conditions.len(), 1);
        assert_eq!(rule.conditions[0].bound, RuleBound::Numeric(5.0));
    }

    #[test]
    fn scaled_duration_threshold_renders_in_raw_seconds() {
        // scaled = (raw - 100) / 20, so scaled 3.45 is raw 169.
        let schema = schema_with(
            vec![],
            vec![
                FeatureScaler { mean: 100.0, stddev: 20.0, constant: false },
                FeatureScaler { mean: 0.0, stddev: 1.0, constant: false },
            ],
            vec![],
        );
        let path = DecisionPath {
            steps: vec![PathStep { feature: 0, threshold: 3.45, went_left: false }],
            leaf_prediction: 0.267,
            leaf_samples: 5,
            leaf_positive_class: false,
            leaf_confidence: 0.6,
            leaf_ground_truth_confidence: 0.6,
        };
        let rule = extract_rule(&path, &schema);
        assert_eq!(rule.conditions[0].bound, RuleBound::Numeric(169.0));
        assert_eq!(
            rule.conditions[0].display,
            "duration since start is greater than 169 seconds"
        );
    }

    #[test]
    fn one_hot_condition_renders_as_level_membership() {
        let schema = schema_with(
            vec![],
            vec![
                FeatureScaler { mean: 0.0, stddev: 1.0, constant: false },
                FeatureScaler { mean: 0.0, stddev: 1.0, constant: false },
            ],
            vec![("impact", vec!["High", "Medium"])],
        );
        // Feature 3 is impact=Medium; going right of 0.5 means "is Medium".
        let path = DecisionPath {
            steps: vec![PathStep { feature: 3, threshold: 0.5, went_left: false }],
            leaf_prediction: 0.3,
            leaf_samples: 4,
            leaf_positive_class: false,
            leaf_confidence: 0.75,
            leaf_ground_truth_confidence: 0.5,
        };
        let rule = extract_rule(&path, &schema);
        assert_eq!(rule.conditions[0].display, "impact is Medium");
        assert_eq!(rule.conditions[0].comparator, Comparator::Is);

        let left_path = DecisionPath {
            steps: vec![PathStep { feature: 3, threshold: 0.5, went_left: true }],
            ..path
        };
        let rule = extract_rule(&left_path, &schema);
        assert_eq!(rule.conditions[0].display, "impact is not Medium");
    }

    #[test]
    fn count_conditions_render_integer_phrasing() {
        let schema = plain_schema(1);
        let path = DecisionPath {
            steps: vec![PathStep { feature: 0, threshold: 0.5, went_left: true }],
            leaf_prediction: 0.26,
            leaf_samples: 9,
            leaf_positive_class: false,
            leaf_confidence: 0.6,
            leaf_ground_truth_confidence: 0.6,
        };
        let rule = extract_rule(&path, &schema);
        assert_eq!(rule.conditions[0].display, "f0---g0 is less than 1");
    }

    #[test]
    fn rule_confidence_hand_tally() {
        let rule = Rule {
            conditions: vec![RuleCondition {
                feature: "f0---g0".to_string(),
                feature_index: 0,
                comparator: Comparator::LessEq,
                bound: RuleBound::Numeric(0.5),
                scaled_bound: 0.5,
                display: String::new(),
            }],
            predicted_score: 0.2,
            confidence: 0.0,
            ground_truth_confidence: 0.0,
            support: 5,
        };
        // 5 covered instances; leaf class is negative at tau 0.5; black-box
        // classes agree for 3 of them.
        let rows_data = [[0.0], [0.0], [0.0], [0.0], [0.0], [1.0]];
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let scores = [0.1, 0.3, 0.4, 0.9, 0.8, 0.2];
        let confidence = rule_confidence(&rule, &rows, &scores, 0.5).unwrap();
        assert!((confidence - 0.6).abs() < 1e-12);

        let all_match = rule_confidence(&rule, &rows[..3], &scores[..3], 0.5).unwrap();
        assert_eq!(all_match, 1.0);
    }

    #[test]
    fn single_leaf_r2_is_zero_under_standard_denominator() {
        let scores = [0.2, 0.4, 0.9, 0.7];
        let prediction = scores.iter().sum::<f64>() / scores.len() as f64;
        let predictions = vec![prediction; scores.len()];
        let r2 = metrics::fidelity_r2(&predictions, &scores).unwrap();
        assert!(r2.abs() < 1e-12, "r2 {r2}");
    }

    #[test]
    fn deeper_trees_never_fit_worse() {
        let rows_data: Vec<[f64; 2]> = (0..60)
            .map(|i| [((i * 37) % 100) as f64 / 10.0, ((i * 53) % 100) as f64 / 10.0])
            .collect();
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let targets: Vec<f64> = rows_data
            .iter()
            .map(|r| ((r[0] * 1.3 + r[1] * 0.7).sin() + 1.0) / 2.0)
            .collect();
        let mut previous = f64::NEG_INFINITY;
        for depth in 1..=6 {
            let config = TreeConfig {
                max_depth: depth,
                min_samples_leaf: 2,
                min_variance_reduction: 1e-12,
            };
            let tree = fit_tree(&rows, &targets, &config).unwrap();
            let predictions: Vec<f64> = rows.iter().map(|r| predict(&tree, r)).collect();
            let r2 = metrics::fidelity_r2(&predictions, &targets).unwrap();
            assert!(
                r2 >= previous - 1e-12,
                "depth {depth}: r2 {r2} < previous {previous}"
            );
            previous = r2;
        }
    }

    #[test]
    fn dot_export_shapes() {
        let schema = plain_schema(1);
        let single = SurrogateTree {
            cluster_id: 3,
            root: TreeNode::Leaf {
                prediction: 0.5,
                samples: 2,
                positive_class: true,
                confidence: 1.0,
                ground_truth_confidence: 1.0,
            },
            r2: None,
            r2_flag: None,
            tau: 0.5,
        };
        let dot = single.to_dot(&schema);
        assert!(dot.starts_with("digraph cluster_3 {"));
        assert_eq!(dot.matches("n0 [label=").count(), 1);
        assert_eq!(dot.matches("->").count(), 0);

        let rows_data = [[1.0], [2.0], [10.0], [11.0]];
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| r.as_slice()).collect();
        let root = fit_tree(
            &rows,
            &[0.0, 0.0, 1.0, 1.0],
            &TreeConfig { max_depth: 2, min_samples_leaf: 1, min_variance_reduction: 1e-9 },
        )
        .unwrap();
        let tree = SurrogateTree { cluster_id: 0, root, r2: Some(1.0), r2_flag: None, tau: 0.5 };
        let dot = tree.to_dot(&schema);
        assert_eq!(dot.matches("[label=").count(), 5); // 3 nodes + 2 edge labels
        assert!(dot.contains("<= 6"));
        assert!(dot.contains("n0 -> n1"));
        assert!(dot.contains("n0 -> n2"));
    }
}
