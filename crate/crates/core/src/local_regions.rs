//! Local region identification: k-means over the validation-set latent codes
//! (or over the original feature space for the K-LIME-style baseline), with
//! the cluster count chosen by maximizing the mean per-cluster accuracy of
//! the black-box classifier at the selected threshold.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, derive_seed};
use crate::metrics::{clustering_ss, ClusterSS};
use crate::{Error, Result};

const CONVERGENCE_MOVEMENT: f64 = 1e-6;
const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionSpace {
    Latent,
    Original,
}

/// A fitted k-means partition of the validation instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub space: RegionSpace,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per fitted instance, aligned with the input point order.
    pub assignments: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Within-cluster sum of squares of the winning restart.
    pub inertia: f64,
    pub fit_summary: ClusterSS,
    /// Objective after each Lloyd iteration of the winning restart.
    pub iteration_sswc: Vec<f64>,
}

impl RegionModel {
    pub fn cluster_members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn dimension(&self) -> usize {
        self.centroids.first().map(Vec::len).unwrap_or(0)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_distance = f64::INFINITY;
    for (j, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best_distance {
            best_distance = d;
            best = j;
        }
    }
    (best, best_distance)
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let first = rng.gen_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut distances: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = distances.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&distances)
                .expect("non-negative weights with positive sum")
                .sample(rng)
        } else {
            // All remaining mass at existing centroids; any point works.
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in distances.iter_mut().zip(points) {
            let nd = squared_distance(p, centroids.last().unwrap());
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut sswc = 0.0;
    let mut assignments = Vec::with_capacity(points.len());
    for point in points {
        let (j, d) = nearest_centroid(point, centroids);
        assignments.push(j);
        sswc += d;
    }
    (assignments, sswc)
}

fn cluster_means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut means = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (point, &a) in points.iter().zip(assignments) {
        sizes[a] += 1;
        for (m, v) in means[a].iter_mut().zip(point) {
            *m += v;
        }
    }
    for (mean, &size) in means.iter_mut().zip(&sizes) {
        if size > 0 {
            for m in mean.iter_mut() {
                *m /= size as f64;
            }
        }
    }
    (means, sizes)
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    sswc: f64,
    iteration_sswc: Vec<f64>,
}

/// Nearest-centroid assignment with empty-cluster repair: every empty
/// cluster's centroid is reseeded at the point currently farthest from its
/// own centroid, then points are reassigned.
fn assign_with_repair(points: &[Vec<f64>], centroids: &mut [Vec<f64>], k: usize) -> Vec<usize> {
    let mut assignments = assign_all(points, centroids).0;
    loop {
        let (_, sizes) = cluster_means(points, &assignments, k);
        let empty: Vec<usize> = (0..k).filter(|&j| sizes[j] == 0).collect();
        if empty.is_empty() {
            return assignments;
        }
        let mut taken: Vec<usize> = Vec::new();
        for cluster in empty {
            let farthest = (0..points.len())
                .filter(|i| !taken.contains(i))
                .max_by(|&a, &b| {
                    let da = squared_distance(&points[a], &centroids[assignments[a]]);
                    let db = squared_distance(&points[b], &centroids[assignments[b]]);
                    da.partial_cmp(&db).expect("finite distances")
                })
                .expect("points exist");
            taken.push(farthest);
            centroids[cluster] = points[farthest].clone();
        }
        assignments = assign_all(points, centroids).0;
    }
}

/// One seeded Lloyd run. On exit the centroids are the exact means of their
/// assigned points, so the sum-of-squares decomposition is exact.
fn lloyd(points: &[Vec<f64>], k: usize, seed: u64) -> LloydRun {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut iteration_sswc = Vec::new();

    for _ in 0..MAX_ITERATIONS {
        let new_assignments = assign_with_repair(points, &mut centroids, k);
        let converged_assignments = new_assignments == assignments;
        assignments = new_assignments;
        let (means, _) = cluster_means(points, &assignments, k);
        let movement = centroids
            .iter()
            .zip(&means)
            .map(|(old, new)| squared_distance(old, new).sqrt())
            .fold(0.0f64, f64::max);
        centroids = means;
        let (_, sswc_now) = assign_all(points, &centroids);
        iteration_sswc.push(sswc_now);

        if converged_assignments || movement < CONVERGENCE_MOVEMENT {
            break;
        }
    }

    // Final normalization: a consistent (assignments, means) pair with no
    // empty cluster, so the sum-of-squares decomposition is exact.
    let assignments = assign_with_repair(points, &mut centroids, k);
    let (centroids, _) = cluster_means(points, &assignments, k);
    let sswc: f64 = points
        .iter()
        .zip(&assignments)
        .map(|(point, &a)| squared_distance(point, &centroids[a]))
        .sum();

    LloydRun {
        centroids,
        assignments,
        sswc,
        iteration_sswc,
    }
}

/// Fits k-means with k-means++ seeding and best-of-`restarts` selection by
/// lowest within-cluster sum of squares. Deterministic under the seed;
/// restarts run concurrently with an order-stable reduction.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<RegionModel> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".to_string()));
    }
    if k > points.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the number of points ({})",
            points.len()
        )));
    }
    let restarts = restarts.max(1);
    let runs = exec::map_indices(restarts, |r| lloyd(points, k, derive_seed(seed, r as u64)));
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.sswc
                .partial_cmp(&b.sswc)
                .expect("finite objective")
                .then(ia.cmp(ib))
        })
        .map(|(_, run)| run)
        .expect("at least one restart");

    let fit_summary = clustering_ss(points, &best.assignments, &best.centroids)?;
    Ok(RegionModel {
        space: RegionSpace::Latent,
        centroids: best.centroids,
        assignments: best.assignments,
        k,
        seed,
        restarts,
        inertia: best.sswc,
        fit_summary,
        iteration_sswc: best.iteration_sswc,
    })
}

/// Routes a point to its nearest centroid (ties go to the lowest cluster id).
pub fn assign(model: &RegionModel, point: &[f64]) -> Result<usize> {
    if point.len() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            actual: point.len(),
        });
    }
    Ok(nearest_centroid(point, &model.centroids).0)
}

/// Per-candidate record of the cluster-count search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCandidate {
    pub k: usize,
    pub feasible: bool,
    pub mean_local_accuracy: Option<f64>,
    pub explained_variance: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionTrace {
    pub candidates: Vec<KCandidate>,
    /// Whether the mean was instance-weighted instead of unweighted.
    pub instance_weighted: bool,
}

/// Accuracy of the thresholded black-box decision within each cluster.
pub fn per_cluster_accuracy(
    assignments: &[usize],
    k: usize,
    scores: &[f64],
    labels: &[u8],
    tau: f64,
) -> Vec<f64> {
    let mut correct = vec![0usize; k];
    let mut sizes = vec![0usize; k];
    for ((&a, &score), &label) in assignments.iter().zip(scores).zip(labels) {
        sizes[a] += 1;
        if (score >= tau) == (label == 1) {
            correct[a] += 1;
        }
    }
    (0..k)
        .map(|j| {
            if sizes[j] == 0 {
                0.0
            } else {
                correct[j] as f64 / sizes[j] as f64
            }
        })
        .collect()
}

fn selection_criterion(
    model: &RegionModel,
    scores: &[f64],
    labels: &[u8],
    tau: f64,
    instance_weighted: bool,
) -> f64 {
    let accuracies = per_cluster_accuracy(&model.assignments, model.k, scores, labels, tau);
    if instance_weighted {
        let mut sizes = vec![0usize; model.k];
        for &a in &model.assignments {
            sizes[a] += 1;
        }
        let n = model.assignments.len() as f64;
        accuracies
            .iter()
            .zip(&sizes)
            .map(|(acc, &size)| acc * size as f64 / n)
            .sum()
    } else {
        accuracies.iter().sum::<f64>() / model.k as f64
    }
}

/// Searches `k_range` for the partition maximizing the mean per-cluster
/// accuracy of the black-box classification at `tau` (unweighted mean by
/// default; ties go to the smaller k). Infeasible candidates (k > #points)
/// are skipped and recorded.
#[allow(clippy::too_many_arguments)]
pub fn select_k(
    points: &[Vec<f64>],
    scores: &[f64],
    labels: &[u8],
    tau: f64,
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
    instance_weighted: bool,
) -> Result<(RegionModel, KSelectionTrace)> {
    if points.is_empty() || points.len() != scores.len() || points.len() != labels.len() {
        return Err(Error::InvalidInput(
            "points, scores and labels must be aligned and non-empty".to_string(),
        ));
    }
    if k_range.is_empty() {
        return Err(Error::InvalidInput("empty k range".to_string()));
    }

    let ks: Vec<usize> = k_range.clone().collect();
    let fits = exec::map_collect(&ks, |&k| {
        if k > points.len() {
            return None;
        }
        let model = kmeans(points, k, derive_seed(seed, k as u64), restarts).ok()?;
        let criterion = selection_criterion(&model, scores, labels, tau, instance_weighted);
        Some((model, criterion))
    });

    let mut candidates = Vec::with_capacity(ks.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, (k, fit)) in ks.iter().zip(&fits).enumerate() {
        match fit {
            None => candidates.push(KCandidate {
                k: *k,
                feasible: false,
                mean_local_accuracy: None,
                explained_variance: None,
                chosen: false,
            }),
            Some((model, criterion)) => {
                candidates.push(KCandidate {
                    k: *k,
                    feasible: true,
                    mean_local_accuracy: Some(*criterion),
                    explained_variance: Some(model.fit_summary.explained_variance),
                    chosen: false,
                });
                // Strictly-greater keeps the smallest k on ties.
                if best.is_none() || *criterion > best.unwrap().1 {
                    best = Some((i, *criterion));
                }
            }
        }
    }

    let (best_index, _) = best.ok_or_else(|| {
        Error::InvalidInput("no feasible candidate k in the requested range".to_string())
    })?;
    candidates[best_index].chosen = true;
    let model = fits
        .into_iter()
        .nth(best_index)
        .flatten()
        .map(|(model, _)| model)
        .expect("chosen candidate was feasible");

    Ok((
        model,
        KSelectionTrace {
            candidates,
            instance_weighted,
        },
    ))
}

/// K-LIME-style baseline: the identical search run on the original (scaled)
/// feature vectors of the same validation instances, tagged accordingly.
#[allow(clippy::too_many_arguments)]
pub fn baseline_regions(
    original_features: &[Vec<f64>],
    scores: &[f64],
    labels: &[u8],
    tau: f64,
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
    instance_weighted: bool,
) -> Result<(RegionModel, KSelectionTrace)> {
    let (mut model, trace) = select_k(
        original_features,
        scores,
        labels,
        tau,
        k_range,
        seed,
        restarts,
        instance_weighted,
    )?;
    model.space = RegionSpace::Original;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rectangle() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ]
    }

    /// Partition equality up to cluster relabeling.
    pub(crate) fn same_partition(a: &[usize], b: &[usize]) -> bool {
        if a.len() != b.len() {
            return false;
        }
        let mut forward = std::collections::BTreeMap::new();
        let mut backward = std::collections::BTreeMap::new();
        for (&x, &y) in a.iter().zip(b) {
            if *forward.entry(x).or_insert(y) != y {
                return false;
            }
            if *backward.entry(y).or_insert(x) != x {
                return false;
            }
        }
        true
    }

    #[test]
    fn k1_centroid_is_the_mean() {
        let points = rectangle();
        let model = kmeans(&points, 1, 7, 3).unwrap();
        assert_eq!(model.centroids.len(), 1);
        assert!((model.centroids[0][0] - 5.0).abs() < 1e-12);
        assert!((model.centroids[0][1] - 0.5).abs() < 1e-12);
        assert_eq!(model.fit_summary.ssbc, 0.0);
    }

    #[test]
    fn k_equal_to_distinct_points_has_zero_inertia() {
        let points = rectangle();
        let model = kmeans(&points, 4, 3, 5).unwrap();
        assert!(model.inertia < 1e-12, "inertia {}", model.inertia);
    }

    #[test]
    fn rectangle_splits_into_left_and_right() {
        let points = rectangle();
        let model = kmeans(&points, 2, 11, 10).unwrap();
        let mut centroids = model.centroids.clone();
        centroids.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((centroids[0][0]).abs() < 1e-9);
        assert!((centroids[0][1] - 0.5).abs() < 1e-9);
        assert!((centroids[1][0] - 10.0).abs() < 1e-9);
        assert!((centroids[1][1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn k_larger_than_points_is_an_error() {
        assert!(kmeans(&rectangle(), 5, 1, 1).is_err());
    }

    #[test]
    fn assign_prefers_lowest_cluster_on_ties() {
        let points = rectangle();
        let model = kmeans(&points, 2, 11, 10).unwrap();
        let at_centroid = model.centroids[1].clone();
        assert_eq!(assign(&model, &at_centroid).unwrap(), 1);
        // Exactly between the two centroids.
        let midpoint: Vec<f64> = model.centroids[0]
            .iter()
            .zip(&model.centroids[1])
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        assert_eq!(assign(&model, &midpoint).unwrap(), 0);
        // Near the right pair.
        let near_right = vec![9.0, 0.0];
        let right_cluster = model
            .centroids
            .iter()
            .position(|c| (c[0] - 10.0).abs() < 1e-9)
            .unwrap();
        assert_eq!(assign(&model, &near_right).unwrap(), right_cluster);
    }

    #[test]
    fn assign_rejects_dimension_mismatch() {
        let model = kmeans(&rectangle(), 2, 1, 2).unwrap();
        assert!(assign(&model, &[1.0]).is_err());
    }

    #[test]
    fn lloyd_objective_is_monotone() {
        let mut points = Vec::new();
        for i in 0..40 {
            let x = (i % 8) as f64 + if i < 20 { 0.0 } else { 30.0 };
            points.push(vec![x, (i % 5) as f64]);
        }
        let model = kmeans(&points, 3, 17, 1).unwrap();
        for pair in model.iteration_sswc.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "objective increased: {:?}",
                model.iteration_sswc
            );
        }
    }

    #[test]
    fn permuting_points_only_relabels_clusters() {
        let points: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 10) as f64 * 0.3 + if i % 3 == 0 { 20.0 } else { 0.0 }, (i / 3) as f64 * 0.1])
            .collect();
        let model = kmeans(&points, 2, 5, 8).unwrap();

        let permutation: Vec<usize> = (0..points.len()).rev().collect();
        let permuted: Vec<Vec<f64>> = permutation.iter().map(|&i| points[i].clone()).collect();
        let permuted_model = kmeans(&permuted, 2, 5, 8).unwrap();

        let mut realigned = vec![0usize; points.len()];
        for (pos, &original_index) in permutation.iter().enumerate() {
            realigned[original_index] = permuted_model.assignments[pos];
        }
        assert!(same_partition(&model.assignments, &realigned));
    }

    #[test]
    fn select_k_prefers_smallest_on_uniform_accuracy() {
        // Everything correctly classified: all k tie at mean accuracy 1.0.
        let points: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let scores: Vec<f64> = (0..12).map(|i| if i < 6 { 0.1 } else { 0.9 }).collect();
        let labels: Vec<u8> = (0..12).map(|i| u8::from(i >= 6)).collect();
        let (model, trace) = select_k(&points, &scores, &labels, 0.5, 2..=5, 3, 4, false).unwrap();
        assert_eq!(model.k, 2);
        assert_eq!(trace.candidates.iter().filter(|c| c.chosen).count(), 1);
        assert!(trace.candidates[0].chosen);
    }

    #[test]
    fn select_k_isolates_the_mixed_region() {
        // Blob A (all correct) at 0, blob C (mixed) at 4, blob B (all wrong)
        // at 14. With k=2 the mixed blob merges into A; k=3 isolates it.
        let mut points = Vec::new();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            points.push(vec![0.0 + 0.01 * i as f64]);
            scores.push(0.9);
            labels.push(1u8);
        }
        for i in 0..10 {
            points.push(vec![4.0 + 0.01 * i as f64]);
            scores.push(if i % 2 == 0 { 0.9 } else { 0.1 });
            labels.push(1u8);
        }
        for i in 0..10 {
            points.push(vec![14.0 + 0.01 * i as f64]);
            scores.push(0.1);
            labels.push(1u8);
        }
        let (model, trace) = select_k(&points, &scores, &labels, 0.5, 2..=3, 9, 8, false).unwrap();
        assert_eq!(model.k, 3);
        let by_k: std::collections::BTreeMap<usize, f64> = trace
            .candidates
            .iter()
            .filter_map(|c| c.mean_local_accuracy.map(|m| (c.k, m)))
            .collect();
        assert!(by_k[&3] > by_k[&2]);
    }

    #[test]
    fn select_k_trace_recomputes_choice() {
        let points: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 1.7) % 7.0, (i as f64 * 0.9) % 3.0])
            .collect();
        let scores: Vec<f64> = (0..20).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let labels: Vec<u8> = (0..20).map(|i| ((i * 5) % 3 == 0) as u8).collect();
        let (model, trace) = select_k(&points, &scores, &labels, 0.5, 2..=6, 21, 4, false).unwrap();
        let best_from_trace = trace
            .candidates
            .iter()
            .filter(|c| c.feasible)
            .max_by(|a, b| {
                a.mean_local_accuracy
                    .partial_cmp(&b.mean_local_accuracy)
                    .unwrap()
                    .then(b.k.cmp(&a.k))
            })
            .unwrap();
        assert_eq!(best_from_trace.k, model.k);
        assert!(best_from_trace.chosen);
    }

    #[test]
    fn infeasible_candidates_are_recorded_not_fatal() {
        let points: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let scores = vec![0.1, 0.9, 0.2];
        let labels = vec![0u8, 1, 0];
        let (model, trace) = select_k(&points, &scores, &labels, 0.5, 2..=5, 1, 2, false).unwrap();
        assert!(model.k <= 3);
        assert!(trace.candidates.iter().any(|c| !c.feasible));
    }

    #[test]
    fn baseline_gets_tagged_original() {
        let points = rectangle();
        let scores = vec![0.9, 0.9, 0.1, 0.1];
        let labels = vec![1u8, 1, 0, 0];
        let (model, _) =
            baseline_regions(&points, &scores, &labels, 0.5, 2..=2, 4, 4, false).unwrap();
        assert_eq!(model.space, RegionSpace::Original);
    }

    #[test]
    fn brute_force_agreement_on_small_fixtures() {
        // Exhaustive assignment enumeration for up to 8 points and k <= 3.
        fn brute_force_sswc(points: &[Vec<f64>], k: usize) -> f64 {
            let n = points.len();
            let mut best = f64::INFINITY;
            let mut assignment = vec![0usize; n];
            loop {
                let (means, sizes) = cluster_means(points, &assignment, k);
                if sizes.iter().all(|&s| s > 0) {
                    let sswc: f64 = points
                        .iter()
                        .zip(&assignment)
                        .map(|(p, &a)| squared_distance(p, &means[a]))
                        .sum();
                    best = best.min(sswc);
                }
                // Next assignment in base-k.
                let mut i = 0;
                loop {
                    if i == n {
                        return best;
                    }
                    assignment[i] += 1;
                    if assignment[i] < k {
                        break;
                    }
                    assignment[i] = 0;
                    i += 1;
                }
            }
        }

        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for fixture in 0..25 {
            let n = 4 + (fixture % 5);
            let k = 2 + (fixture % 2);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
                .collect();
            let model = kmeans(&points, k, fixture as u64, 12).unwrap();
            let optimum = brute_force_sswc(&points, k);
            assert!(
                model.inertia <= optimum + 1e-9,
                "fixture {fixture}: kmeans {} vs brute force {optimum}",
                model.inertia
            );
        }
    }
}
