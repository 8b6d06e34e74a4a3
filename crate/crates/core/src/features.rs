//! Per-series feature vector updates: Metropolis-Hastings flips for features
//! shared with other series, and birth/death reversible-jump moves for
//! features unique to one series.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::messages::{
    forward_log_likelihood, forward_loglik_from_table, forward_loglik_scaled, log_density_table,
    scaled_emission_table,
};
use crate::model::{active_pi_matrix, Dataset, MniwPrior, SamplerState, TransitionState};
use crate::num::{poisson_log_pmf, Scalar};
use crate::params::draw_behavior_from_prior;

/// log rho* for a shared-feature flip: the posterior odds of f_ik = 1 vs 0,
/// given the feature's usage count among the other series.
pub fn log_flip_ratio<T: Scalar>(
    m_excl: usize,
    n_series: usize,
    loglik_on: T,
    loglik_off: T,
) -> Result<T> {
    if m_excl == 0 || m_excl >= n_series {
        return Err(Error::Contract(format!(
            "shared flip requires 1 <= m^-i < N, got m^-i = {m_excl}, N = {n_series}"
        )));
    }
    Ok(T::of_usize(m_excl).ln() - T::of_usize(n_series - m_excl).ln() + loglik_on - loglik_off)
}

/// Probability of flipping f_ik: min{rho*, 1} when currently off,
/// min{1/rho*, 1} when currently on.
pub fn flip_probability<T: Scalar>(
    m_excl: usize,
    n_series: usize,
    loglik_on: T,
    loglik_off: T,
    currently_on: bool,
) -> Result<T> {
    let log_rho = log_flip_ratio(m_excl, n_series, loglik_on, loglik_off)?;
    let log_p = if currently_on { -log_rho } else { log_rho };
    if log_p >= T::zero() {
        Ok(T::one())
    } else {
        Ok(log_p.exp())
    }
}

/// Forward marginal likelihood of one series restricted to `active`, reusing
/// a precomputed emission table whose columns span all current features.
pub fn forward_loglik_for_active<T: Scalar>(
    table_all: &DMatrix<T>,
    eta: &DMatrix<T>,
    active: &[usize],
) -> Result<T> {
    let sub = table_all.select_columns(active);
    let pi = active_pi_matrix(eta, active)?;
    forward_loglik_from_table(&sub, &pi)
}

/// Same quantity through the scaled recursion, falling back to log space
/// when the restricted probability mass underflows.
fn forward_loglik_fast<T: Scalar>(
    table_all: &DMatrix<T>,
    exp_table: &DMatrix<T>,
    shifts: &[T],
    eta: &DMatrix<T>,
    active: &[usize],
) -> Result<T> {
    let pi = active_pi_matrix(eta, active)?;
    match forward_loglik_scaled(exp_table, shifts, active, &pi)? {
        Some(ll) => Ok(ll),
        None => forward_loglik_from_table(&table_all.select_columns(active), &pi),
    }
}

/// Shared-feature MH flips for one series, feature index ascending.
/// Features with m^-i = 0 (unique or unused elsewhere) are skipped; flips
/// that would empty a row are auto-rejected. The likelihood of the current
/// configuration is cached across the loop.
pub fn sample_shared_features_series<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
    i: usize,
) -> Result<()> {
    let n = state.features.num_series();
    let k_plus = state.features.num_features();
    if k_plus == 0 {
        return Ok(());
    }
    let all: Vec<usize> = (0..k_plus).collect();
    // theta is fixed for the whole sweep: one emission table per series
    let table = log_density_table(&dataset.series()[i], dataset.lag(), &state.library, &all)?;
    let (exp_table, shifts) = scaled_emission_table(&table);
    let mut ll_cur = forward_loglik_fast(
        &table,
        &exp_table,
        &shifts,
        &state.transitions.eta[i],
        &state.features.active(i),
    )?;
    for k in 0..k_plus {
        let m_excl = state.features.count_excluding(i, k);
        if m_excl == 0 {
            continue;
        }
        let on = state.features.get(i, k);
        if on && state.features.row_weight(i) == 1 {
            continue; // flipping off would empty the row
        }
        let mut proposed = state.features.active(i);
        if on {
            proposed.retain(|&a| a != k);
        } else {
            proposed.push(k);
            proposed.sort_unstable();
        }
        let ll_prop = forward_loglik_fast(
            &table,
            &exp_table,
            &shifts,
            &state.transitions.eta[i],
            &proposed,
        )?;
        let (ll_on, ll_off) = if on { (ll_cur, ll_prop) } else { (ll_prop, ll_cur) };
        let p = flip_probability(m_excl, n, ll_on, ll_off, on)?;
        if T::draw_unit(&mut state.rng) < p {
            state.features.set(i, k, !on);
            ll_cur = ll_prop;
        }
    }
    Ok(())
}

/// One full sweep of shared-feature MH flips, series ascending.
pub fn sample_shared_features<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
) -> Result<()> {
    for i in 0..state.features.num_series() {
        sample_shared_features_series(state, dataset, i)?;
    }
    state.modes = None;
    Ok(())
}

/// Log acceptance ratio of a birth from n_i unique features, with
/// `loglik_ratio` = log l(proposed) - log l(current) and lambda = alpha / N.
///
/// The q_f ratio uses the move-type probabilities only; the uniform choice
/// among unique features in a death cancels against exchangeability of the
/// features, so a Poisson count marginal is preserved.
pub fn birth_log_accept(n_i: usize, lambda: f64, loglik_ratio: f64) -> f64 {
    let p_birth: f64 = if n_i == 0 { 1.0 } else { 0.5 };
    let q_rev: f64 = 0.5; // death move from n_i + 1 >= 1
    loglik_ratio + poisson_log_pmf(n_i as u64 + 1, lambda) - poisson_log_pmf(n_i as u64, lambda)
        + q_rev.ln()
        - p_birth.ln()
}

/// Log acceptance ratio of a death move from n_i >= 1 unique features.
pub fn death_log_accept(n_i: usize, lambda: f64, loglik_ratio: f64) -> f64 {
    let q_fwd: f64 = 0.5;
    let q_rev: f64 = if n_i == 1 { 1.0 } else { 0.5 }; // birth from n_i - 1
    loglik_ratio + poisson_log_pmf(n_i as u64 - 1, lambda) - poisson_log_pmf(n_i as u64, lambda)
        + q_rev.ln()
        - q_fwd.ln()
}

fn grow_eta<T: Scalar, R: Rng + ?Sized>(
    m: &DMatrix<T>,
    gamma: T,
    kappa: T,
    rng: &mut R,
) -> DMatrix<T> {
    let k = m.nrows();
    let mut grown = DMatrix::zeros(k + 1, k + 1);
    grown.view_mut((0, 0), (k, k)).copy_from(m);
    for j in 0..=k {
        grown[(j, k)] = TransitionState::prior_draw(gamma, kappa, j == k, rng);
        if j < k {
            grown[(k, j)] = TransitionState::prior_draw(gamma, kappa, false, rng);
        }
    }
    grown
}

fn birth_death_impl<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: Option<&Dataset<T>>,
    prior: &MniwPrior<T>,
    i: usize,
) -> Result<()> {
    let n = state.features.num_series();
    let lambda = state.hyper.alpha.to_f64() / n as f64;
    let unique = state.features.unique_features(i);
    let n_i = unique.len();
    let p_birth = if n_i == 0 { 1.0 } else { 0.5 };
    let (gamma, kappa) = (state.transitions.gamma, state.transitions.kappa);

    if f64::draw_unit(&mut state.rng) < p_birth {
        // birth: propose a fresh behavior and prior-distributed transition
        // extensions; evaluate before mutating anything shared
        let new_behavior = draw_behavior_from_prior(prior, &mut state.rng)?;
        let k_new = state.features.num_features();
        let eta_prop = grow_eta(&state.transitions.eta[i], gamma, kappa, &mut state.rng);
        let loglik_ratio = match dataset {
            Some(data) => {
                let series = &data.series()[i];
                let active = state.features.active(i);
                let ll_old = forward_log_likelihood(
                    series,
                    data.lag(),
                    &active,
                    &state.transitions.eta[i],
                    &state.library,
                )?;
                let mut lib_prop = state.library.clone();
                lib_prop.behaviors.push(new_behavior.clone());
                let mut active_new = active;
                active_new.push(k_new);
                let ll_new =
                    forward_log_likelihood(series, data.lag(), &active_new, &eta_prop, &lib_prop)?;
                (ll_new - ll_old).to_f64()
            }
            None => 0.0,
        };
        let log_r = birth_log_accept(n_i, lambda, loglik_ratio);
        if f64::draw_unit(&mut state.rng).ln() < log_r {
            state.features.push_feature(i);
            state.library.behaviors.push(new_behavior);
            for (j, m) in state.transitions.eta.iter_mut().enumerate() {
                if j == i {
                    *m = eta_prop.clone();
                } else {
                    *m = grow_eta(m, gamma, kappa, &mut state.rng);
                }
            }
            state.modes = None;
        }
    } else {
        let pick = unique[state.rng.random_range(0..n_i)];
        if state.features.row_weight(i) == 1 {
            return Ok(()); // death would empty the row: auto-reject
        }
        let loglik_ratio = match dataset {
            Some(data) => {
                let series = &data.series()[i];
                let active = state.features.active(i);
                let ll_old = forward_log_likelihood(
                    series,
                    data.lag(),
                    &active,
                    &state.transitions.eta[i],
                    &state.library,
                )?;
                let active_new: Vec<usize> = active.into_iter().filter(|&a| a != pick).collect();
                let ll_new = forward_log_likelihood(
                    series,
                    data.lag(),
                    &active_new,
                    &state.transitions.eta[i],
                    &state.library,
                )?;
                (ll_new - ll_old).to_f64()
            }
            None => 0.0,
        };
        let log_r = death_log_accept(n_i, lambda, loglik_ratio);
        if f64::draw_unit(&mut state.rng).ln() < log_r {
            state.remove_feature(pick);
        }
    }
    Ok(())
}

/// One birth/death reversible-jump move for series i: with probability 0.5
/// (1 at n_i = 0) propose a prior-drawn new unique feature, otherwise
/// propose the death of a uniformly chosen unique feature.
pub fn birth_death_move<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
    prior: &MniwPrior<T>,
    i: usize,
) -> Result<()> {
    birth_death_impl(state, Some(dataset), prior, i)
}

/// Diagnostic variant with the likelihood ratio forced to one; the move then
/// targets the Poisson(alpha/N) prior on n_i, which validation code checks.
pub fn birth_death_move_prior_only<T: Scalar>(
    state: &mut SamplerState<T>,
    prior: &MniwPrior<T>,
    i: usize,
) -> Result<()> {
    birth_death_impl(state, None, prior, i)
}

/// Drop every feature column no series uses (with its behavior and
/// transition rows/columns).
pub fn remove_empty_columns<T: Scalar>(state: &mut SamplerState<T>) {
    let mut empty = state.features.empty_columns();
    while let Some(k) = empty.pop() {
        state.remove_feature(k); // descending order keeps indices valid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::chi_square_gof;
    use crate::model::{
        BehaviorLibrary, FeatureMatrix, Hyperparams, TimeSeries, VarBehavior,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_behavior(a: f64, var: f64) -> VarBehavior<f64> {
        VarBehavior::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, var),
        )
        .unwrap()
    }

    fn unit_prior() -> MniwPrior<f64> {
        MniwPrior::new(
            3.0,
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1) * 0.1,
        )
        .unwrap()
    }

    #[test]
    fn flip_probability_examples() {
        // m^-i = 2, N = 5, equal likelihoods, currently off: p = 2/3
        let p = flip_probability(2, 5, 0.0, 0.0, false).unwrap();
        assert_relative_eq!(p, 2.0 / 3.0, epsilon = 1e-12);
        // same odds, currently on: 1/rho* = 3/2 capped at 1
        let p = flip_probability(2, 5, 0.0, 0.0, true).unwrap();
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn flip_probability_limiting_behavior() {
        // the off-likelihood dominating drives the flip-to-0 probability to 1
        let p = flip_probability(4, 5, -1000.0, 0.0, true).unwrap();
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);
        // and the flip-to-1 probability to 0
        let p = flip_probability(1, 5, -1000.0, 0.0, false).unwrap();
        assert!(p < 1e-300);
    }

    #[test]
    fn flip_rejects_non_shared_feature() {
        assert!(flip_probability(0, 5, 0.0, 0.0, false).is_err());
        assert!(flip_probability(5, 5, 0.0, 0.0, false).is_err());
    }

    #[test]
    fn birth_death_ratio_examples() {
        // n_i = 0, alpha = 1, N = 5: Poisson pmf ratio alone is 0.2; with the
        // proposal correction (reverse death 0.5, forward birth 1) r = 0.1
        let pmf_ratio = (poisson_log_pmf(1, 0.2) - poisson_log_pmf(0, 0.2)).exp();
        assert_relative_eq!(pmf_ratio, 0.2, epsilon = 1e-12);
        assert_relative_eq!(birth_log_accept(0, 0.2, 0.0).exp(), 0.1, epsilon = 1e-12);
        // death from n_i = 1 with equal likelihoods:
        // Poisson(0)/Poisson(1) = 5, q_rev(birth from 0) = 1, q_fwd = 0.5
        assert_relative_eq!(death_log_accept(1, 0.2, 0.0).exp(), 10.0, epsilon = 1e-10);
    }

    #[test]
    fn birth_death_ratios_are_reciprocal() {
        // reversibility bookkeeping: accept ratios of a move and its reverse
        // multiply to one when the likelihood ratios cancel
        for n_i in 0..5 {
            let fwd = birth_log_accept(n_i, 0.7, 1.3);
            let rev = death_log_accept(n_i + 1, 0.7, -1.3);
            assert_relative_eq!(fwd + rev, 0.0, epsilon = 1e-10);
        }
    }

    fn two_series_state(
        flags: Vec<Vec<bool>>,
        lib: &BehaviorLibrary<f64>,
        eta: &[DMatrix<f64>; 2],
        seed: u64,
    ) -> SamplerState<f64> {
        SamplerState {
            features: FeatureMatrix::from_flags_unchecked(flags),
            library: lib.clone(),
            transitions: TransitionState {
                eta: eta.to_vec(),
                gamma: 1.0,
                kappa: 1.0,
            },
            hyper: Hyperparams::default(),
            modes: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
        }
    }

    /// Enumeration target for the shared-flip chain on N = 2: each flip's
    /// prior odds m^-i/(N - m^-i) are consistent with joint weights
    /// prod_k (m_k - 1)!(N - m_k)!, which equal 1 for N = 2, so the
    /// stationary law on the chain's communicating class is just the
    /// normalized marginal likelihood.
    #[test]
    fn shared_sweep_matches_enumerated_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let lib = BehaviorLibrary::new(vec![scalar_behavior(0.7, 0.5), scalar_behavior(-0.5, 2.0)]);
        let eta = [
            DMatrix::from_fn(2, 2, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng)),
            DMatrix::from_fn(2, 2, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng)),
        ];
        let obs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..6).map(|_| f64::draw_std_normal(&mut rng)).collect())
            .collect();
        let dataset = Dataset::new(
            obs.iter()
                .enumerate()
                .map(|(i, v)| {
                    TimeSeries::new(format!("s{i}"), DMatrix::from_column_slice(6, 1, v)).unwrap()
                })
                .collect(),
            1,
            1,
        )
        .unwrap();

        let rows = [vec![true, false], vec![false, true], vec![true, true]];
        let series_ll = |i: usize, row: &[bool]| -> f64 {
            let active: Vec<usize> = row
                .iter()
                .enumerate()
                .filter_map(|(k, &f)| f.then_some(k))
                .collect();
            forward_log_likelihood(&dataset.series()[i], 1, &active, &eta[i], &lib).unwrap()
        };
        // communicating class of the flip chain started from the full matrix:
        // every row-nonzero F except the two matched-singleton states
        // (both series on the same lone feature), where turning the feature
        // off would empty a row and turning the other on needs a co-user
        let mut weights = std::collections::HashMap::new();
        for (a, r0) in rows.iter().enumerate() {
            for (b, r1) in rows.iter().enumerate() {
                let isolated = a == b && a < 2;
                if !isolated {
                    weights.insert(
                        (r0.clone(), r1.clone()),
                        (series_ll(0, r0) + series_ll(1, r1)).exp(),
                    );
                }
            }
        }
        let total: f64 = weights.values().sum();

        let mut state = two_series_state(
            vec![vec![true, true], vec![true, true]],
            &lib,
            &eta,
            123,
        );
        let sweeps = 200_000usize;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..sweeps {
            sample_shared_features(&mut state, &dataset).unwrap();
            let key = (state.features.row(0).to_vec(), state.features.row(1).to_vec());
            *counts.entry(key).or_insert(0usize) += 1;
        }
        let mut tv = 0.0;
        for (key, w) in &weights {
            let p = w / total;
            let q = *counts.get(key).unwrap_or(&0) as f64 / sweeps as f64;
            tv += 0.5 * (p - q).abs();
        }
        // mass observed outside the predicted class counts fully against TV
        let inside: usize = weights.keys().map(|k| *counts.get(k).unwrap_or(&0)).sum();
        tv += 0.5 * (sweeps - inside) as f64 / sweeps as f64;
        assert!(tv < 0.05, "total variation distance {tv:.4}");
    }

    #[test]
    fn rejected_flips_leave_state_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // likelihoods hugely favor the current configuration: behavior 1 has
        // absurd variance, so adding it is always rejected for both series
        let lib =
            BehaviorLibrary::new(vec![scalar_behavior(0.0, 1.0), scalar_behavior(0.0, 1e12)]);
        let eta = [
            DMatrix::from_fn(2, 2, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng)),
            DMatrix::from_fn(2, 2, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng)),
        ];
        let vals: Vec<f64> = (0..40).map(|_| f64::draw_std_normal(&mut rng)).collect();
        let dataset = Dataset::new(
            vec![
                TimeSeries::new("a", DMatrix::from_column_slice(20, 1, &vals[..20])).unwrap(),
                TimeSeries::new("b", DMatrix::from_column_slice(20, 1, &vals[20..])).unwrap(),
            ],
            1,
            1,
        )
        .unwrap();
        let mut state = two_series_state(
            vec![vec![true, false], vec![true, true]],
            &lib,
            &eta,
            7,
        );
        let before_features = state.features.clone();
        let before_eta = state.transitions.eta.clone();
        for _ in 0..30 {
            sample_shared_features(&mut state, &dataset).unwrap();
        }
        assert_eq!(state.features, before_features);
        for (a, b) in state.transitions.eta.iter().zip(&before_eta) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn prior_only_birth_death_matches_poisson() {
        // N = 2 with one permanently shared feature so the row never empties;
        // unique features of series 0 then follow Poisson(alpha/N)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lib = BehaviorLibrary::new(vec![scalar_behavior(0.0, 1.0)]);
        let eta0 = DMatrix::from_fn(1, 1, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng));
        let eta1 = eta0.clone();
        let mut state = two_series_state(
            vec![vec![true], vec![true]],
            &lib,
            &[eta0, eta1],
            2024,
        );
        state.hyper.alpha = 3.0; // lambda = 1.5
        let prior = unit_prior();
        let lambda = 1.5;
        let iters = 100_000usize;
        let burn = 5_000usize;
        let mut hist = vec![0u64; 12];
        for it in 0..iters {
            birth_death_move_prior_only(&mut state, &prior, 0).unwrap();
            if it >= burn {
                let n_i = state.features.unique_features(0).len().min(hist.len() - 1);
                hist[n_i] += 1;
            }
        }
        let kept = (iters - burn) as f64;
        let mut expected: Vec<f64> = (0..hist.len())
            .map(|k| (poisson_log_pmf(k as u64, lambda)).exp() * kept)
            .collect();
        // fold the tail into the last bin
        let tail = kept - expected[..hist.len() - 1].iter().sum::<f64>();
        expected[11] = tail.max(0.0);
        // merge sparse bins (expected < 5) into their left neighbor
        let mut obs_m = Vec::new();
        let mut exp_m = Vec::new();
        for (o, e) in hist.iter().zip(&expected) {
            if exp_m.last().map(|&x| x < 5.0).unwrap_or(false) {
                *obs_m.last_mut().unwrap() += *o;
                *exp_m.last_mut().unwrap() += *e;
            } else {
                obs_m.push(*o);
                exp_m.push(*e);
            }
        }
        let p = chi_square_gof(&obs_m, &exp_m);
        assert!(p > 0.01, "chi-square p = {p}");
    }

    #[test]
    fn accepted_moves_keep_state_aligned() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lib = BehaviorLibrary::new(vec![scalar_behavior(0.3, 1.0)]);
        let eta0 = DMatrix::from_fn(1, 1, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng));
        let eta1 = eta0.clone();
        let vals: Vec<f64> = (0..24).map(|_| f64::draw_std_normal(&mut rng)).collect();
        let dataset = Dataset::new(
            vec![
                TimeSeries::new("a", DMatrix::from_column_slice(12, 1, &vals[..12])).unwrap(),
                TimeSeries::new("b", DMatrix::from_column_slice(12, 1, &vals[12..])).unwrap(),
            ],
            1,
            1,
        )
        .unwrap();
        let mut state = two_series_state(vec![vec![true], vec![true]], &lib, &[eta0, eta1], 31);
        let prior = unit_prior();
        for _ in 0..500 {
            for i in 0..2 {
                birth_death_move(&mut state, &dataset, &prior, i).unwrap();
            }
            sample_shared_features(&mut state, &dataset).unwrap();
            remove_empty_columns(&mut state);
            state.audit(&dataset).unwrap();
        }
    }

    #[test]
    fn empty_column_cleanup() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lib = BehaviorLibrary::new(vec![
            scalar_behavior(0.1, 1.0),
            scalar_behavior(0.2, 1.0),
            scalar_behavior(0.3, 1.0),
        ]);
        let eta = DMatrix::from_fn(3, 3, |_, _| f64::draw_gamma(1.0, 1.0, &mut rng));
        let mut state = two_series_state(
            vec![vec![true, false, true], vec![true, false, false]],
            &lib,
            &[eta.clone(), eta],
            4,
        );
        remove_empty_columns(&mut state);
        assert_eq!(state.features.num_features(), 2);
        assert_eq!(state.library.len(), 2);
        assert_eq!(state.transitions.num_features(), 2);
        assert_eq!(state.features.row(0), &[true, true]);
    }
}
