//! Label-invariant scoring: matched Hamming distance via minimum-cost
//! assignment, minimum-expected-Hamming sample selection, held-out
//! predictive likelihood, and feature-matrix summarization.

use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::messages::forward_log_likelihood;
use crate::model::{BehaviorLibrary, Dataset, FeatureMatrix};
use crate::num::Scalar;

/// Minimum-cost assignment on a square cost matrix (Hungarian method with
/// row/column potentials, O(n^3)). Returns (total cost, row -> column map).
pub fn hungarian(cost: &[Vec<i64>]) -> (i64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0, Vec::new());
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else if minv[j] != i64::MAX {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[i][assignment[i]]).sum();
    (total, assignment)
}

/// Result of a matched-Hamming comparison over a collection of label
/// sequences.
#[derive(Debug, Clone)]
pub struct HammingResult {
    /// Mismatched frames / total frames after the optimal label mapping.
    pub distance: f64,
    /// estimated label -> matched true label (None for labels padded against
    /// a dummy column, i.e. counted fully as errors).
    pub mapping: HashMap<usize, Option<usize>>,
    pub mismatches: usize,
    pub total: usize,
}

/// Hamming distance between label-sequence collections after the optimal
/// injective relabeling of estimated labels onto true labels, aggregated
/// over series by total frames.
pub fn hamming_matched(estimated: &[Vec<usize>], truth: &[Vec<usize>]) -> Result<HammingResult> {
    if estimated.len() != truth.len() || estimated.is_empty() {
        return Err(Error::InvalidInput(
            "label collections must be nonempty and series-aligned".into(),
        ));
    }
    let mut est_labels: Vec<usize> = Vec::new();
    let mut true_labels: Vec<usize> = Vec::new();
    let mut total = 0usize;
    for (e, t) in estimated.iter().zip(truth) {
        if e.len() != t.len() || e.is_empty() {
            return Err(Error::InvalidInput(
                "label sequences must be nonempty with matching lengths".into(),
            ));
        }
        total += e.len();
        for &l in e {
            if !est_labels.contains(&l) {
                est_labels.push(l);
            }
        }
        for &l in t {
            if !true_labels.contains(&l) {
                true_labels.push(l);
            }
        }
    }
    est_labels.sort_unstable();
    true_labels.sort_unstable();
    let ne = est_labels.len();
    let nt = true_labels.len();
    let n = ne.max(nt);
    // agreement counts, square-padded with zero columns/rows
    let mut agree = vec![vec![0i64; n]; n];
    let e_index: HashMap<usize, usize> =
        est_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let t_index: HashMap<usize, usize> =
        true_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for (e, t) in estimated.iter().zip(truth) {
        for (&le, &lt) in e.iter().zip(t) {
            agree[e_index[&le]][t_index[&lt]] += 1;
        }
    }
    // maximize agreement == minimize (-agreement)
    let cost: Vec<Vec<i64>> = agree.iter().map(|r| r.iter().map(|&a| -a).collect()).collect();
    let (neg_agree, assignment) = hungarian(&cost);
    let matched = (-neg_agree) as usize;
    let mut mapping = HashMap::new();
    for (i, &l) in est_labels.iter().enumerate() {
        let col = assignment[i];
        mapping.insert(l, (col < nt).then(|| true_labels[col]));
    }
    let mismatches = total - matched;
    Ok(HammingResult {
        distance: mismatches as f64 / total as f64,
        mapping,
        mismatches,
        total,
    })
}

/// Index (and score) in `test` minimizing the mean matched-Hamming distance
/// to every member of `reference`.
pub fn select_min_expected_hamming(
    test: &[Vec<Vec<usize>>],
    reference: &[Vec<Vec<usize>>],
) -> Result<(usize, f64)> {
    if test.is_empty() || reference.is_empty() {
        return Err(Error::InvalidInput(
            "selection needs nonempty test and reference sets".into(),
        ));
    }
    let mut best = (0usize, f64::INFINITY);
    for (i, cand) in test.iter().enumerate() {
        let mut sum = 0.0;
        for r in reference {
            sum += hamming_matched(cand, r)?.distance;
        }
        let mean = sum / reference.len() as f64;
        if mean < best.1 {
            best = (i, mean);
        }
    }
    Ok(best)
}

/// Total log-likelihood of a held-out dataset under one posterior sample:
/// held-out series i reuses training series i's feature row and transition
/// weights, and series terms add by conditional independence.
pub fn heldout_predictive_loglik<T: Scalar>(
    features: &FeatureMatrix,
    eta: &[DMatrix<T>],
    library: &BehaviorLibrary<T>,
    heldout: &Dataset<T>,
) -> Result<T> {
    if features.num_series() != heldout.num_series() || eta.len() != heldout.num_series() {
        return Err(Error::InvalidInput(
            "held-out dataset must pair one series per training series".into(),
        ));
    }
    let mut total = T::zero();
    for (i, series) in heldout.series().iter().enumerate() {
        let active = features.active(i);
        total += forward_log_likelihood(series, heldout.lag(), &active, &eta[i], library)?;
    }
    Ok(total)
}

/// Average, over posterior samples, of the binary behavior-usage matrix with
/// estimated labels mapped onto true labels by matched Hamming distance and
/// modes occupying at most `threshold` of a series' frames dropped.
/// Returns an N x K_true matrix of empirical usage frequencies.
pub fn summarize_feature_matrix(
    samples: &[Vec<Vec<usize>>],
    truth: &[Vec<usize>],
    k_true: usize,
    threshold: f64,
) -> Result<DMatrix<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to summarize".into()));
    }
    let n = truth.len();
    let mut avg = DMatrix::zeros(n, k_true);
    for sample in samples {
        let matched = hamming_matched(sample, truth)?;
        for (i, seq) in sample.iter().enumerate() {
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for &l in seq {
                *counts.entry(l).or_insert(0) += 1;
            }
            for (l, c) in counts {
                if (c as f64) <= threshold * seq.len() as f64 {
                    continue;
                }
                if let Some(Some(t)) = matched.mapping.get(&l) {
                    if *t < k_true {
                        avg[(i, *t)] += 1.0;
                    }
                }
            }
        }
    }
    avg /= samples.len() as f64;
    Ok(avg)
}

/// Binary usage matrix of ground-truth mode sequences (which behaviors each
/// series visits), for comparison against [`summarize_feature_matrix`].
pub fn usage_matrix(truth: &[Vec<usize>], k_true: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(truth.len(), k_true);
    for (i, seq) in truth.iter().enumerate() {
        for &l in seq {
            if l < k_true {
                m[(i, l)] = 1.0;
            }
        }
    }
    m
}

/// Mean of each behavior's estimated AR coefficient matrix is often wanted
/// per selected sample; tiny helper shared by the CLI and tests.
pub fn flatten_coeffs<T: Scalar>(library: &BehaviorLibrary<T>) -> Vec<DVector<T>> {
    library
        .behaviors
        .iter()
        .map(|b| DVector::from_iterator(b.coeffs.len(), b.coeffs.iter().copied()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force_distance(est: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
        // try every injective map from estimated labels into true labels
        // (plus "unmatched"), by permuting the padded label set
        let mut est_labels: Vec<usize> = est.iter().flatten().copied().collect();
        est_labels.sort_unstable();
        est_labels.dedup();
        let mut true_labels: Vec<usize> = truth.iter().flatten().copied().collect();
        true_labels.sort_unstable();
        true_labels.dedup();
        let n = est_labels.len().max(true_labels.len());
        let mut targets: Vec<Option<usize>> = true_labels.iter().copied().map(Some).collect();
        targets.resize(n, None);
        let total: usize = est.iter().map(|s| s.len()).sum();
        let mut best = usize::MAX;
        permute(&mut targets, 0, &mut |perm| {
            let mut mism = 0usize;
            for (e, t) in est.iter().zip(truth) {
                for (&le, &lt) in e.iter().zip(t) {
                    let idx = est_labels.iter().position(|&l| l == le).unwrap();
                    match perm.get(idx).copied().flatten() {
                        Some(mapped) if mapped == lt => {}
                        _ => mism += 1,
                    }
                }
            }
            best = best.min(mism);
        });
        best as f64 / total as f64
    }

    fn permute<F: FnMut(&[Option<usize>])>(v: &mut Vec<Option<usize>>, k: usize, f: &mut F) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(1..=4usize);
            let cost: Vec<Vec<i64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-20..20i64)).collect())
                .collect();
            let (total, asg) = hungarian(&cost);
            // brute force over permutations
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = i64::MAX;
            loop {
                let c: i64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                best = best.min(c);
                if !next_permutation(&mut perm) {
                    break;
                }
            }
            assert_eq!(total, best);
            // assignment is a permutation
            let mut seen = vec![false; n];
            for &j in &asg {
                assert!(!seen[j]);
                seen[j] = true;
            }
        }
    }

    fn next_permutation(v: &mut [usize]) -> bool {
        let n = v.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && v[i - 1] >= v[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut j = n - 1;
        while v[j] <= v[i - 1] {
            j -= 1;
        }
        v.swap(i - 1, j);
        v[i..].reverse();
        true
    }

    #[test]
    fn identical_sequences_have_zero_distance() {
        let z = vec![vec![0, 1, 1, 2, 0]];
        let r = hamming_matched(&z, &z).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.mismatches, 0);
    }

    #[test]
    fn permuted_labels_have_zero_distance() {
        let truth = vec![vec![0, 1, 1, 2, 0], vec![2, 2, 0, 0, 1]];
        let est: Vec<Vec<usize>> = truth
            .iter()
            .map(|s| s.iter().map(|&l| [7, 3, 5][l]).collect())
            .collect();
        let r = hamming_matched(&est, &truth).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.mapping[&7], Some(0));
        assert_eq!(r.mapping[&3], Some(1));
        assert_eq!(r.mapping[&5], Some(2));
    }

    #[test]
    fn matches_brute_force_permutation_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n_series = rng.random_range(1..=2usize);
            let est: Vec<Vec<usize>> = (0..n_series)
                .map(|_| {
                    (0..rng.random_range(1..=10usize))
                        .map(|_| rng.random_range(0..5usize))
                        .collect()
                })
                .collect();
            let truth: Vec<Vec<usize>> = est
                .iter()
                .map(|s| s.iter().map(|_| rng.random_range(0..4usize)).collect())
                .collect();
            let fast = hamming_matched(&est, &truth).unwrap().distance;
            let slow = brute_force_distance(&est, &truth);
            assert!(
                (fast - slow).abs() < 1e-12,
                "fast {fast} vs brute force {slow} on {est:?} / {truth:?}"
            );
        }
    }

    #[test]
    fn symmetry_of_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a: Vec<Vec<usize>> = vec![(0..8).map(|_| rng.random_range(0..4usize)).collect()];
            let b: Vec<Vec<usize>> = vec![(0..8).map(|_| rng.random_range(0..3usize)).collect()];
            let d1 = hamming_matched(&a, &b).unwrap().distance;
            let d2 = hamming_matched(&b, &a).unwrap().distance;
            assert!((d1 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn unmatched_extra_labels_count_as_errors() {
        // estimated uses 3 labels, truth only 1: two labels stay unmatched
        let est = vec![vec![0, 1, 2, 0]];
        let truth = vec![vec![9, 9, 9, 9]];
        let r = hamming_matched(&est, &truth).unwrap();
        assert_eq!(r.mismatches, 2);
        assert_eq!(r.distance, 0.5);
    }

    #[test]
    fn selection_singleton() {
        let s = vec![vec![vec![0, 1, 0]]];
        let (idx, score) = select_min_expected_hamming(&s, &s).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn selection_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<usize>> {
            vec![
                (0..6).map(|_| rng.random_range(0..3usize)).collect(),
                (0..4).map(|_| rng.random_range(0..3usize)).collect(),
            ]
        };
        let test: Vec<_> = (0..3).map(|_| gen(&mut rng)).collect();
        let reference: Vec<_> = (0..4).map(|_| gen(&mut rng)).collect();
        let (idx, score) = select_min_expected_hamming(&test, &reference).unwrap();
        let mut oracle = (0usize, f64::INFINITY);
        for (i, t) in test.iter().enumerate() {
            let m: f64 = reference
                .iter()
                .map(|r| hamming_matched(t, r).unwrap().distance)
                .sum::<f64>()
                / reference.len() as f64;
            if m < oracle.1 {
                oracle = (i, m);
            }
        }
        assert_eq!(idx, oracle.0);
        assert!((score - oracle.1).abs() < 1e-12);
    }

    #[test]
    fn duplicating_the_argmin_reference_keeps_argmin() {
        let test = vec![
            vec![vec![0, 0, 1, 1]],
            vec![vec![0, 1, 0, 1]],
        ];
        let mut reference = vec![vec![vec![0usize, 0, 1, 1]], vec![vec![0usize, 0, 0, 1]]];
        let (before, _) = select_min_expected_hamming(&test, &reference).unwrap();
        reference.push(test[before].clone());
        let (after, _) = select_min_expected_hamming(&test, &reference).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn summarize_perfect_recovery_is_identity() {
        let truth = vec![vec![0, 0, 1, 1, 1], vec![2, 2, 2, 0, 0]];
        let samples = vec![truth.clone()];
        let avg = summarize_feature_matrix(&samples, &truth, 3, 0.02).unwrap();
        assert_eq!(avg, usage_matrix(&truth, 3));
    }

    #[test]
    fn two_percent_rule_drops_rare_modes() {
        let mut seq = vec![0usize; 100];
        seq[57] = 1; // one frame out of 100
        let truth = vec![vec![0usize; 100]];
        let est = vec![seq];
        let with_threshold = summarize_feature_matrix(&[est.clone()], &truth, 2, 0.02).unwrap();
        assert_eq!(with_threshold[(0, 1)], 0.0);
        let without = summarize_feature_matrix(&[est], &truth, 2, 0.0).unwrap();
        // threshold 0 keeps every used mode (label 1 stays, mapped or not)
        assert_eq!(without[(0, 0)], 1.0);
    }
}
