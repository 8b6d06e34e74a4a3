//! Resampling of the beta-process mass alpha (conjugate) and the transition
//! hyperparameters gamma and kappa (random-walk Metropolis-Hastings with
//! gamma proposals of fixed variance).

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{active_pi_matrix, SamplerState};
use crate::num::Scalar;

/// Harmonic number H_N.
pub fn harmonic<T: Scalar>(n: usize) -> T {
    let mut h = T::zero();
    for i in 1..=n {
        h += T::one() / T::of_usize(i);
    }
    h
}

/// Conjugate draw: alpha ~ Gamma(a + K+, b + H_N) (shape/rate).
pub fn sample_alpha<T: Scalar, R: Rng + ?Sized>(
    k_plus: usize,
    n_series: usize,
    a_alpha: T,
    b_alpha: T,
    rng: &mut R,
) -> T {
    let shape = a_alpha + T::of_usize(k_plus);
    let rate = b_alpha + harmonic::<T>(n_series);
    T::draw_gamma(shape, T::one() / rate, rng)
}

/// Normalized restrictions pi~ for every series: the K_i x K_i row-normalized
/// transition matrices over each series' active features, recomputed from eta.
pub fn pi_tilde_all<T: Scalar>(state: &SamplerState<T>) -> Result<Vec<DMatrix<T>>> {
    (0..state.features.num_series())
        .map(|i| {
            let active = state.features.active(i);
            active_pi_matrix(&state.transitions.eta[i], &active)
        })
        .collect()
}

/// Log likelihood term f(gamma): the product over every series and every
/// entry of the dense transition-weight matrices of the Gamma(gamma + kappa
/// on the diagonal, gamma off it; unit rate) density. Conditioning on the
/// weights themselves (not just their row normalizations) keeps this the
/// exact full conditional even though other moves in the sweep read the
/// unnormalized magnitudes.
pub fn log_f_gamma<T: Scalar>(gamma: T, kappa: T, etas: &[DMatrix<T>]) -> T {
    let mut total = T::zero();
    for eta in etas {
        let ki = eta.nrows();
        let lg_off = gamma.ln_gamma_fn();
        let lg_diag = (gamma + kappa).ln_gamma_fn();
        for j in 0..ki {
            for k in 0..ki {
                let (shape, lg) = if j == k {
                    (gamma + kappa, lg_diag)
                } else {
                    (gamma, lg_off)
                };
                let e = eta[(j, k)];
                total += (shape - T::one()) * e.ln() - e - lg;
            }
        }
    }
    total
}

/// Log likelihood term f(kappa); reads only the self-transition weights,
/// each Gamma(gamma + kappa, 1) a priori.
pub fn log_f_kappa<T: Scalar>(gamma: T, kappa: T, etas: &[DMatrix<T>]) -> T {
    let mut total = T::zero();
    for eta in etas {
        let lg = (gamma + kappa).ln_gamma_fn();
        for j in 0..eta.nrows() {
            let e = eta[(j, j)];
            total += (gamma + kappa - T::one()) * e.ln() - e - lg;
        }
    }
    total
}

/// Gamma proposal with mean `current` and variance `sigma_sq`:
/// shape = current^2/sigma_sq, rate = current/sigma_sq.
pub fn propose_gamma_rw<T: Scalar, R: Rng + ?Sized>(current: T, sigma_sq: T, rng: &mut R) -> T {
    let shape = current * current / sigma_sq;
    let scale = sigma_sq / current;
    T::draw_gamma(shape, scale, rng)
}

/// Log density of the random-walk gamma proposal.
pub fn log_proposal_density<T: Scalar>(to: T, from: T, sigma_sq: T) -> T {
    let shape = from * from / sigma_sq;
    let rate = from / sigma_sq;
    shape * rate.ln() - shape.ln_gamma_fn() + (shape - T::one()) * to.ln() - rate * to
}

/// Compact log acceptance ratio for the hyperparameter move, shared by the
/// gamma and kappa sub-steps. `log_f_new`/`log_f_cur` are the likelihood
/// terms at the proposed and current values.
pub fn log_accept_ratio<T: Scalar>(
    current: T,
    proposed: T,
    a_prior: T,
    b_prior: T,
    sigma_sq: T,
    log_f_cur: T,
    log_f_new: T,
) -> T {
    let theta = current * current / sigma_sq;
    let theta_p = proposed * proposed / sigma_sq;
    log_f_new - log_f_cur + theta.ln_gamma_fn() - theta_p.ln_gamma_fn()
        + (theta_p - theta - a_prior) * current.ln()
        - (theta - theta_p - a_prior) * proposed.ln()
        - (proposed - current) * b_prior
        + (theta - theta_p) * sigma_sq.ln()
}

/// One Metropolis-Hastings move for gamma given kappa. Returns the new value
/// (unchanged on rejection or non-finite likelihood).
pub fn mh_gamma<T: Scalar, R: Rng + ?Sized>(
    gamma: T,
    kappa: T,
    etas: &[DMatrix<T>],
    a_gamma: T,
    b_gamma: T,
    sigma_gamma_sq: T,
    rng: &mut R,
) -> Result<T> {
    if gamma <= T::zero() {
        return Err(Error::Contract("gamma must be positive".into()));
    }
    let proposed = propose_gamma_rw(gamma, sigma_gamma_sq, rng);
    if proposed <= T::zero() || !proposed.is_finite_val() {
        return Ok(gamma);
    }
    let f_cur = log_f_gamma(gamma, kappa, etas);
    let f_new = log_f_gamma(proposed, kappa, etas);
    if !f_new.is_finite_val() || !f_cur.is_finite_val() {
        return Ok(gamma);
    }
    let log_r = log_accept_ratio(gamma, proposed, a_gamma, b_gamma, sigma_gamma_sq, f_cur, f_new);
    let u = T::draw_unit(rng);
    if u.ln() < log_r {
        Ok(proposed)
    } else {
        Ok(gamma)
    }
}

/// One Metropolis-Hastings move for kappa given gamma.
pub fn mh_kappa<T: Scalar, R: Rng + ?Sized>(
    gamma: T,
    kappa: T,
    etas: &[DMatrix<T>],
    a_kappa: T,
    b_kappa: T,
    sigma_kappa_sq: T,
    rng: &mut R,
) -> Result<T> {
    if kappa <= T::zero() {
        return Err(Error::Contract("kappa must be positive for the MH move".into()));
    }
    let proposed = propose_gamma_rw(kappa, sigma_kappa_sq, rng);
    if proposed <= T::zero() || !proposed.is_finite_val() {
        return Ok(kappa);
    }
    let f_cur = log_f_kappa(gamma, kappa, etas);
    let f_new = log_f_kappa(gamma, proposed, etas);
    if !f_new.is_finite_val() || !f_cur.is_finite_val() {
        return Ok(kappa);
    }
    let log_r = log_accept_ratio(kappa, proposed, a_kappa, b_kappa, sigma_kappa_sq, f_cur, f_new);
    let u = T::draw_unit(rng);
    if u.ln() < log_r {
        Ok(proposed)
    } else {
        Ok(kappa)
    }
}

/// Conjugate alpha update in place (scheduled right after feature sweeps).
pub fn sample_alpha_step<T: Scalar>(state: &mut SamplerState<T>) {
    let k_plus = state.features.num_features();
    let n = state.features.num_series();
    let (a, b) = (state.hyper.a_alpha, state.hyper.b_alpha);
    state.hyper.alpha = sample_alpha(k_plus, n, a, b, &mut state.rng);
}

/// One MH move each for gamma and kappa, conditioned on the dense
/// transition-weight matrices.
pub fn sample_gamma_kappa<T: Scalar>(state: &mut SamplerState<T>) -> Result<()> {
    let h = state.hyper.clone();
    state.transitions.gamma = mh_gamma(
        state.transitions.gamma,
        state.transitions.kappa,
        &state.transitions.eta,
        h.a_gamma,
        h.b_gamma,
        h.sigma_gamma_sq,
        &mut state.rng,
    )?;
    state.transitions.kappa = mh_kappa(
        state.transitions.gamma,
        state.transitions.kappa,
        &state.transitions.eta,
        h.a_kappa,
        h.b_kappa,
        h.sigma_kappa_sq,
        &mut state.rng,
    )?;
    Ok(())
}

/// Resample alpha, gamma, and kappa in place (one MH move per sub-step).
pub fn sample_hyperparameters<T: Scalar>(state: &mut SamplerState<T>) -> Result<()> {
    sample_alpha_step(state);
    sample_gamma_kappa(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::ks_test_cdf;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

    fn random_weights(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Vec<DMatrix<f64>> {
        sizes
            .iter()
            .map(|&ki| {
                let mut m = DMatrix::from_fn(ki, ki, |_, _| f64::draw_gamma(1.0, 1.0, rng));
                for j in 0..ki {
                    let s: f64 = m.row(j).iter().sum();
                    for k in 0..ki {
                        m[(j, k)] /= s;
                    }
                }
                m
            })
            .collect()
    }

    #[test]
    fn alpha_posterior_arithmetic() {
        // a=1, b=1, K+=3, N=2 -> Gamma(4, 2.5), mean 1.6
        let shape = 1.0 + 3.0;
        let rate = 1.0 + harmonic::<f64>(2);
        assert_relative_eq!(rate, 2.5, epsilon = 1e-15);
        assert_relative_eq!(shape / rate, 1.6, epsilon = 1e-15);
    }

    #[test]
    fn alpha_empty_feature_case() {
        // K+=0, N=1 -> prior shape, rate b+1
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let a = 2.0;
        let b = 3.0;
        let mean: f64 = (0..n)
            .map(|_| sample_alpha(0, 1, a, b, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - a / (b + 1.0)).abs() < 0.01 * a / (b + 1.0) + 0.005);
    }

    #[test]
    fn alpha_monte_carlo_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let (a, b, kp, ns) = (1.0, 1.0, 3, 2);
        let mean: f64 = (0..n)
            .map(|_| sample_alpha(kp, ns, a, b, &mut rng))
            .sum::<f64>()
            / n as f64;
        let expected = (a + kp as f64) / (b + harmonic::<f64>(ns));
        assert!((mean - expected).abs() < 0.01 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn identity_proposal_has_unit_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pi = random_weights(&mut rng, &[3, 2]);
        let g = 1.7;
        let f = log_f_gamma(g, 0.5, &pi);
        let lr = log_accept_ratio(g, g, 1.0, 1.0, 1.0, f, f);
        assert_relative_eq!(lr, 0.0, epsilon = 1e-12);
        let fk = log_f_kappa(g, 0.5, &pi);
        let lrk = log_accept_ratio(0.5, 0.5, 100.0, 1.0, 100.0, fk, fk);
        assert_relative_eq!(lrk, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn compact_ratio_equals_raw_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..25 {
            let pi = random_weights(&mut rng, &[2, 3]);
            let kappa = f64::draw_gamma(2.0, 1.0, &mut rng);
            let g = f64::draw_gamma(2.0, 1.0, &mut rng);
            let gp = f64::draw_gamma(2.0, 1.0, &mut rng);
            let (a, b, s2) = (1.3, 0.7, 1.5);
            let compact = log_accept_ratio(
                g,
                gp,
                a,
                b,
                s2,
                log_f_gamma(g, kappa, &pi),
                log_f_gamma(gp, kappa, &pi),
            );
            // raw ratio term by term: f(g')p(g')q(g|g') / f(g)p(g)q(g'|g)
            let log_prior = |x: f64| (a - 1.0) * x.ln() - b * x;
            let raw = log_f_gamma(gp, kappa, &pi) - log_f_gamma(g, kappa, &pi)
                + log_prior(gp)
                - log_prior(g)
                + log_proposal_density(g, gp, s2)
                - log_proposal_density(gp, g, s2);
            assert!((compact - raw).abs() < 1e-10, "{compact} vs {raw}");
        }
    }

    #[test]
    fn f_kappa_reads_only_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pi = random_weights(&mut rng, &[3]);
        let base = log_f_kappa(1.2, 2.0, &pi);
        let mut perturbed = pi.clone();
        perturbed[0][(0, 1)] += 0.123;
        perturbed[0][(2, 0)] *= 0.5;
        assert_relative_eq!(log_f_kappa(1.2, 2.0, &perturbed), base, epsilon = 1e-14);
    }

    #[test]
    fn prior_only_gamma_chain_matches_prior() {
        // with f forced to one, the MH chain targets Gamma(a, b)
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let (a, b, s2) = (2.0, 1.5, 1.0);
        let mut x = 1.0f64;
        let mut samples = Vec::new();
        for it in 0..300_000 {
            let prop = propose_gamma_rw(x, s2, &mut rng);
            if prop > 0.0 && prop.is_finite() {
                let lr = log_accept_ratio(x, prop, a, b, s2, 0.0, 0.0);
                if f64::draw_unit(&mut rng).ln() < lr {
                    x = prop;
                }
            }
            if it % 100 == 0 {
                samples.push(x); // heavy thinning: KS assumes independence
            }
        }
        let dist = GammaDist::new(a, b).unwrap();
        let p = ks_test_cdf(&samples, |v| dist.cdf(v));
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn prior_only_kappa_chain_matches_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let (a, b, s2) = (3.0, 1.0, 4.0);
        let mut x = 2.0f64;
        let mut samples = Vec::new();
        for it in 0..300_000 {
            let prop = propose_gamma_rw(x, s2, &mut rng);
            if prop > 0.0 && prop.is_finite() {
                let lr = log_accept_ratio(x, prop, a, b, s2, 0.0, 0.0);
                if f64::draw_unit(&mut rng).ln() < lr {
                    x = prop;
                }
            }
            if it % 100 == 0 {
                samples.push(x); // heavy thinning: KS assumes independence
            }
        }
        let dist = GammaDist::new(a, b).unwrap();
        let p = ks_test_cdf(&samples, |v| dist.cdf(v));
        assert!(p > 0.01, "KS p = {p}");
    }
}
