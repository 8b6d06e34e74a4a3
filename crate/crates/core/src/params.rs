//! Auxiliary-variable updates: block-sample mode sequences, Gibbs-sample
//! transition variables, and draw VAR parameters from the MNIW posterior.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::messages::sample_mode_sequence;
use crate::model::{
    build_lagged, Dataset, ModeSequence, MniwPrior, SamplerState, VarBehavior,
};
use crate::num::{draw_chi_squared, Scalar};

/// Pooled regression statistics for one behavior, prior terms included.
#[derive(Debug, Clone)]
pub struct SufficientStats<T: Scalar> {
    /// (d*r) x (d*r): sum of lagged outer products plus the prior column precision.
    pub s_lag_lag: DMatrix<T>,
    /// d x (d*r): cross moments plus M*K.
    pub s_obs_lag: DMatrix<T>,
    /// d x d: observation outer products plus M*K*M^T.
    pub s_obs_obs: DMatrix<T>,
    /// d x d Schur complement S_yy - S_yl S_ll^-1 S_yl^T.
    pub s_cond: DMatrix<T>,
    /// Number of pooled frames assigned to the behavior.
    pub count: usize,
}

/// Cholesky with a trace-scaled jitter fallback, at most three attempts.
pub fn chol_with_jitter<T: Scalar>(m: &DMatrix<T>) -> Result<Cholesky<T, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let d = m.nrows();
    let jitter = T::of(1e-10) * m.trace() / T::of_usize(d.max(1));
    let mut bumped = m.clone();
    for _ in 0..3 {
        for i in 0..d {
            bumped[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(bumped.clone()) {
            return Ok(c);
        }
    }
    Err(Error::numeric("matrix not positive definite after jitter"))
}

/// Block sample every series' mode sequence. Series are conditionally
/// independent given the parameters; the per-series RNG streams are derived
/// up front so the parallel draw is deterministic regardless of scheduling.
pub fn sample_all_modes<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
) -> Result<Vec<ModeSequence>> {
    let seeds: Vec<u64> = (0..dataset.num_series())
        .map(|_| state.rng.next_u64())
        .collect();
    let modes: Result<Vec<ModeSequence>> = dataset
        .series()
        .par_iter()
        .enumerate()
        .map(|(i, series)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
            let active = state.features.active(i);
            sample_mode_sequence(
                series,
                dataset.lag(),
                &active,
                &state.transitions.eta[i],
                &state.library,
                &mut rng,
            )
        })
        .collect();
    modes
}

/// Gibbs draw of the dense eta matrix for series `i` given its transition
/// counts: each normalized active sub-row is Dirichlet(gamma + kappa*delta +
/// n_jk) with an independent Gamma(K_i*gamma + kappa, 1) total mass; entries
/// outside the active block keep their Gamma(gamma + kappa*delta, 1) prior.
pub fn sample_eta<T: Scalar, R: Rng + ?Sized>(
    counts: &[Vec<usize>],
    k_plus: usize,
    active: &[usize],
    gamma: T,
    kappa: T,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    if gamma <= T::zero() {
        return Err(Error::Contract("gamma must be positive".into()));
    }
    if kappa < T::zero() {
        return Err(Error::Contract("kappa must be nonnegative".into()));
    }
    let mut eta = DMatrix::zeros(k_plus, k_plus);
    for j in 0..k_plus {
        for k in 0..k_plus {
            let n_jk = counts
                .get(j)
                .and_then(|row| row.get(k))
                .copied()
                .unwrap_or(0);
            let delta = if j == k { kappa } else { T::zero() };
            let shape = gamma + delta + T::of_usize(n_jk);
            eta[(j, k)] = T::draw_gamma(shape, T::one(), rng);
        }
    }
    // The draws above give each normalized active sub-row its Dirichlet
    // posterior, but a count-inflated total mass. The exact conditional
    // factorizes as (normalized sub-row) ~ Dirichlet(shape + count) times an
    // independent total ~ Gamma(sum of prior shapes, 1): the likelihood sees
    // only the normalized weights, so counts must not inflate the scale.
    // Unnormalized magnitudes feed birth proposals and the transition
    // hyperparameter block, which both rely on this law.
    if !active.is_empty() {
        let scale_shape = gamma * T::of_usize(active.len()) + kappa;
        for &j in active {
            let drawn: T = active.iter().map(|&k| eta[(j, k)]).fold(T::zero(), |a, b| a + b);
            let target = T::draw_gamma(scale_shape, T::one(), rng);
            let ratio = target / drawn;
            for &k in active {
                eta[(j, k)] *= ratio;
            }
        }
    }
    Ok(eta)
}

/// Resample every series' eta from the mode-sequence counts.
pub fn sample_all_eta<T: Scalar>(
    state: &mut SamplerState<T>,
    modes: &[ModeSequence],
) -> Result<()> {
    let k_plus = state.features.num_features();
    let gamma = state.transitions.gamma;
    let kappa = state.transitions.kappa;
    for (i, m) in modes.iter().enumerate() {
        let active = state.features.active(i);
        state.transitions.eta[i] =
            sample_eta(&m.counts, k_plus, &active, gamma, kappa, &mut state.rng)?;
    }
    Ok(())
}

/// Pool data assigned to behavior `k` across all series and fold in the
/// prior terms.
pub fn compute_sufficient_stats<T: Scalar>(
    dataset: &Dataset<T>,
    modes: &[ModeSequence],
    k: usize,
    prior: &MniwPrior<T>,
) -> Result<SufficientStats<T>> {
    let d = prior.dim();
    let dr = prior.lag_dim();
    let mk = &prior.mean * &prior.col_precision;
    let mut s_lag_lag = prior.col_precision.clone();
    let mut s_obs_lag = mk.clone();
    let mut s_obs_obs = &mk * prior.mean.transpose();
    let mut count = 0usize;
    for (i, m) in modes.iter().enumerate() {
        let series = &dataset.series()[i];
        let lagged = build_lagged(series, dataset.lag())?;
        for (t, &z) in m.states.iter().enumerate() {
            if z != k {
                continue;
            }
            let y = series.at(dataset.lag() + t);
            let yl = &lagged[t];
            s_lag_lag += yl * yl.transpose();
            s_obs_lag += &y * yl.transpose();
            s_obs_obs += &y * y.transpose();
            count += 1;
        }
    }
    debug_assert_eq!(s_lag_lag.nrows(), dr);
    debug_assert_eq!(s_obs_obs.nrows(), d);
    let chol = chol_with_jitter(&s_lag_lag)?;
    // Schur complement S_yy - S_yl S_ll^-1 S_yl^T
    let solved = chol.solve(&s_obs_lag.transpose());
    let s_cond = &s_obs_obs - &s_obs_lag * solved;
    // symmetrize against accumulated roundoff
    let s_cond = (s_cond.clone() + s_cond.transpose()) * T::of(0.5);
    Ok(SufficientStats {
        s_lag_lag,
        s_obs_lag,
        s_obs_obs,
        s_cond,
        count,
    })
}

/// Inverse-Wishart draw via the Bartlett decomposition.
pub fn draw_inverse_wishart<T: Scalar, R: Rng + ?Sized>(
    dof: T,
    scale: &DMatrix<T>,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let d = scale.nrows();
    if dof <= T::of_usize(d) - T::one() {
        return Err(Error::numeric("inverse-Wishart dof too small"));
    }
    // W ~ Wishart(dof, scale^-1), Sigma = W^-1.
    let scale_chol = chol_with_jitter(scale)?;
    let scale_inv = scale_chol.inverse();
    let c = chol_with_jitter(&scale_inv)?.l();
    let mut bartlett = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi_dof = dof - T::of_usize(i);
        bartlett[(i, i)] = draw_chi_squared(chi_dof, rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = T::draw_std_normal(rng);
        }
    }
    let l = &c * bartlett;
    let w = &l * l.transpose();
    let w_chol = chol_with_jitter(&w)?;
    let sigma = w_chol.inverse();
    Ok((sigma.clone() + sigma.transpose()) * T::of(0.5))
}

/// Matrix-normal draw A = M + L_Sigma Z L_G^T with G the inverse of the
/// column precision.
pub fn draw_matrix_normal<T: Scalar, R: Rng + ?Sized>(
    mean: &DMatrix<T>,
    row_cov: &DMatrix<T>,
    col_precision: &DMatrix<T>,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let d = mean.nrows();
    let dr = mean.ncols();
    let l_row = chol_with_jitter(row_cov)?.l();
    let col_cov = chol_with_jitter(col_precision)?.inverse();
    let l_col = chol_with_jitter(&col_cov)?.l();
    let z = DMatrix::from_fn(d, dr, |_, _| T::draw_std_normal(rng));
    Ok(mean + l_row * z * l_col.transpose())
}

/// Draw (A_k, Sigma_k) from the MNIW posterior given pooled statistics.
pub fn sample_mniw_posterior<T: Scalar, R: Rng + ?Sized>(
    stats: &SufficientStats<T>,
    prior: &MniwPrior<T>,
    rng: &mut R,
) -> Result<VarBehavior<T>> {
    let iw_dof = prior.dof + T::of_usize(stats.count);
    let iw_scale = &stats.s_cond + &prior.scale;
    let sigma = draw_inverse_wishart(iw_dof, &iw_scale, rng)
        .map_err(|_| Error::numeric("Cholesky failure on the posterior IW scale"))?;
    // posterior mean S_yl S_ll^-1 equals the ridge-regression solution
    let chol = chol_with_jitter(&stats.s_lag_lag)?;
    let mean = chol.solve(&stats.s_obs_lag.transpose()).transpose();
    let coeffs = draw_matrix_normal(&mean, &sigma, &stats.s_lag_lag, rng)?;
    VarBehavior::new(coeffs, sigma)
}

/// Draw a fresh behavior from the MNIW prior (used by birth proposals and
/// synthetic generators).
pub fn draw_behavior_from_prior<T: Scalar, R: Rng + ?Sized>(
    prior: &MniwPrior<T>,
    rng: &mut R,
) -> Result<VarBehavior<T>> {
    let sigma = draw_inverse_wishart(prior.dof, &prior.scale, rng)?;
    let coeffs = draw_matrix_normal(&prior.mean, &sigma, &prior.col_precision, rng)?;
    VarBehavior::new(coeffs, sigma)
}

/// Posterior mean of A (no sampling): the ridge-regression solution.
pub fn posterior_mean_coeffs<T: Scalar>(stats: &SufficientStats<T>) -> Result<DMatrix<T>> {
    let chol = chol_with_jitter(&stats.s_lag_lag)?;
    Ok(chol.solve(&stats.s_obs_lag.transpose()).transpose())
}

/// Resample every behavior from its MNIW posterior given mode assignments.
pub fn sample_all_behaviors<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
    modes: &[ModeSequence],
    prior: &MniwPrior<T>,
) -> Result<()> {
    for k in 0..state.library.len() {
        let stats = compute_sufficient_stats(dataset, modes, k, prior)?;
        state.library.behaviors[k] = sample_mniw_posterior(&stats, prior, &mut state.rng)
            .map_err(|e| match e {
                Error::Numeric { msg, .. } => Error::numeric_behavior(k, msg),
                other => other,
            })?;
    }
    Ok(())
}
