//! Log-space dynamic programming over the latent mode chain: marginal
//! likelihood by the forward recursion, and joint posterior path draws by
//! backward message passing with forward sampling.
//!
//! All recursions run in log space with max-shift normalization per time
//! step; series in the hundreds of frames underflow in linear space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{active_pi_matrix, build_lagged, BehaviorLibrary, ModeSequence, TimeSeries};
use crate::num::{log_sum_exp, Scalar};

/// Gaussian emission evaluator with a cached Cholesky factor of the noise
/// covariance; the same behavior is evaluated at every frame of every series
/// within a sweep.
pub struct GaussianEmission<T: Scalar> {
    coeffs: DMatrix<T>,
    chol_lower: DMatrix<T>,
    log_norm: T,
}

impl<T: Scalar> GaussianEmission<T> {
    pub fn new(behavior: &crate::model::VarBehavior<T>, index: usize) -> Result<Self> {
        let chol = behavior
            .cholesky()
            .map_err(|_| Error::numeric_behavior(index, "noise covariance is not SPD"))?;
        let lower = chol.l();
        let d = behavior.dim();
        let mut log_det_half = T::zero();
        for i in 0..d {
            log_det_half += lower[(i, i)].ln();
        }
        let log_norm =
            -T::of(0.5) * T::of_usize(d) * T::of(2.0 * std::f64::consts::PI).ln() - log_det_half;
        Ok(GaussianEmission {
            coeffs: behavior.coeffs.clone(),
            chol_lower: lower,
            log_norm,
        })
    }

    pub fn log_density(&self, y: &DVector<T>, lagged: &DVector<T>) -> T {
        let resid = y - &self.coeffs * lagged;
        let z = self
            .chol_lower
            .solve_lower_triangular(&resid)
            .expect("cholesky factor is nonsingular");
        self.log_norm - T::of(0.5) * z.dot(&z)
    }
}

/// (T_i - r) x |which| table of per-frame emission log densities.
pub fn log_density_table<T: Scalar>(
    series: &TimeSeries<T>,
    lag: usize,
    library: &BehaviorLibrary<T>,
    which: &[usize],
) -> Result<DMatrix<T>> {
    let lagged = build_lagged(series, lag)?;
    let n = lagged.len();
    let emissions = which
        .iter()
        .map(|&k| GaussianEmission::new(library.get(k), k))
        .collect::<Result<Vec<_>>>()?;
    let mut table = DMatrix::zeros(n, which.len());
    for (t, ylag) in lagged.iter().enumerate() {
        let y = series.at(lag + t);
        for (c, em) in emissions.iter().enumerate() {
            table[(t, c)] = em.log_density(&y, ylag);
        }
    }
    Ok(table)
}

fn log_pi<T: Scalar>(pi: &DMatrix<T>) -> DMatrix<T> {
    pi.map(|p| {
        if p > T::zero() {
            p.ln()
        } else {
            T::of(f64::NEG_INFINITY)
        }
    })
}

/// Forward recursion over a precomputed emission table. Columns of `table`
/// follow the order of the active set used to build `pi` (K_a x K_a, rows
/// normalized). The initial state distribution is uniform over the active
/// set.
pub fn forward_loglik_from_table<T: Scalar>(table: &DMatrix<T>, pi: &DMatrix<T>) -> Result<T> {
    let n = table.nrows();
    let ka = table.ncols();
    if ka == 0 || n == 0 {
        return Err(Error::InvalidState("empty chain".into()));
    }
    if pi.nrows() != ka || pi.ncols() != ka {
        return Err(Error::InvalidState("transition matrix dimension mismatch".into()));
    }
    let lpi = log_pi(pi);
    let log_pi0 = -T::of_usize(ka).ln();
    let mut alpha: Vec<T> = (0..ka).map(|k| log_pi0 + table[(0, k)]).collect();
    let mut scratch = vec![T::zero(); ka];
    for t in 1..n {
        let mut next = vec![T::zero(); ka];
        for b in 0..ka {
            for a in 0..ka {
                scratch[a] = alpha[a] + lpi[(a, b)];
            }
            next[b] = table[(t, b)] + log_sum_exp(&scratch);
        }
        alpha = next;
    }
    let total = log_sum_exp(&alpha);
    if !total.is_finite_val() && total > T::zero() {
        return Err(Error::numeric("forward recursion produced +inf"));
    }
    Ok(total)
}

/// Per-frame shifted probabilities for the scaled forward recursion:
/// `exp_table[(t, k)] = exp(table[(t, k)] - shift[t])` with `shift[t]` the
/// row maximum, so each row has a unit-scale entry.
pub fn scaled_emission_table<T: Scalar>(table: &DMatrix<T>) -> (DMatrix<T>, Vec<T>) {
    let (n, k) = table.shape();
    let mut shifts = Vec::with_capacity(n);
    let mut exp_table = DMatrix::zeros(n, k);
    for t in 0..n {
        let mut m = T::of(f64::NEG_INFINITY);
        for c in 0..k {
            if table[(t, c)] > m {
                m = table[(t, c)];
            }
        }
        shifts.push(m);
        for c in 0..k {
            exp_table[(t, c)] = (table[(t, c)] - m).exp();
        }
    }
    (exp_table, shifts)
}

/// Scaled (normalized-probability) forward recursion over the columns
/// `active` of a shifted emission table built by [`scaled_emission_table`].
/// Returns `None` when a frame's probability mass underflows to zero (the
/// shift is taken over all columns, so a subset can lose it); callers fall
/// back to the log-space recursion in that case. Otherwise agrees with
/// [`forward_loglik_from_table`] up to rounding.
pub fn forward_loglik_scaled<T: Scalar>(
    exp_table: &DMatrix<T>,
    shifts: &[T],
    active: &[usize],
    pi: &DMatrix<T>,
) -> Result<Option<T>> {
    let n = exp_table.nrows();
    let ka = active.len();
    if ka == 0 || n == 0 {
        return Err(Error::InvalidState("empty chain".into()));
    }
    if pi.nrows() != ka || pi.ncols() != ka {
        return Err(Error::InvalidState("transition matrix dimension mismatch".into()));
    }
    // contiguous row-major copies keep the hot loop off strided
    // bounds-checked matrix indexing
    let mut emis: Vec<T> = Vec::with_capacity(n * ka);
    for t in 0..n {
        for &k in active {
            emis.push(exp_table[(t, k)]);
        }
    }
    let mut pi_flat: Vec<T> = Vec::with_capacity(ka * ka);
    for a in 0..ka {
        for b in 0..ka {
            pi_flat.push(pi[(a, b)]);
        }
    }

    let mut total = T::zero();
    let mut alpha = vec![T::zero(); ka];
    let mut next = vec![T::zero(); ka];
    let pi0 = T::one() / T::of_usize(ka);
    let mut norm = T::zero();
    for b in 0..ka {
        alpha[b] = pi0 * emis[b];
        norm += alpha[b];
    }
    if !(norm > T::zero()) || !norm.is_finite_val() {
        return Ok(None);
    }
    total += shifts[0] + norm.ln();
    for x in alpha.iter_mut() {
        *x /= norm;
    }
    for t in 1..n {
        next.iter_mut().for_each(|x| *x = T::zero());
        for a in 0..ka {
            let wa = alpha[a];
            let row = &pi_flat[a * ka..a * ka + ka];
            for b in 0..ka {
                next[b] += wa * row[b];
            }
        }
        let frame = &emis[t * ka..t * ka + ka];
        let mut norm = T::zero();
        for b in 0..ka {
            next[b] *= frame[b];
            norm += next[b];
        }
        if !(norm > T::zero()) || !norm.is_finite_val() {
            return Ok(None);
        }
        total += shifts[t] + norm.ln();
        for b in 0..ka {
            alpha[b] = next[b] / norm;
        }
    }
    Ok(Some(total))
}

/// log p(y_{r+1:T} | pi, theta) for one series restricted to its active
/// feature set.
pub fn forward_log_likelihood<T: Scalar>(
    series: &TimeSeries<T>,
    lag: usize,
    active: &[usize],
    eta: &DMatrix<T>,
    library: &BehaviorLibrary<T>,
) -> Result<T> {
    if active.is_empty() {
        return Err(Error::InvalidState("empty active feature set".into()));
    }
    let table = log_density_table(series, lag, library, active)?;
    let pi = active_pi_matrix(eta, active)?;
    forward_loglik_from_table(&table, &pi)
}

fn sample_categorical_from_log<T: Scalar, R: Rng + ?Sized>(
    log_w: &[T],
    rng: &mut R,
) -> Result<usize> {
    let m = log_w
        .iter()
        .copied()
        .fold(T::of(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    if !m.is_finite_val() {
        return Err(Error::numeric("all categorical weights are zero"));
    }
    let w: Vec<T> = log_w.iter().map(|&x| (x - m).exp()).collect();
    let total: T = w.iter().copied().fold(T::zero(), |a, b| a + b);
    let u = T::draw_unit(rng) * total;
    let mut acc = T::zero();
    for (k, &wk) in w.iter().enumerate() {
        acc += wk;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(w.len() - 1)
}

/// Block sample of one series' mode path from its joint conditional
/// posterior: backward messages (initialized to one past the last frame)
/// followed by forward inverse-CDF draws. States are reported as global
/// feature indices; counts are K+ x K+.
pub fn sample_mode_sequence<T: Scalar, R: Rng + ?Sized>(
    series: &TimeSeries<T>,
    lag: usize,
    active: &[usize],
    eta: &DMatrix<T>,
    library: &BehaviorLibrary<T>,
    rng: &mut R,
) -> Result<ModeSequence> {
    if active.is_empty() {
        return Err(Error::InvalidState("empty active feature set".into()));
    }
    let table = log_density_table(series, lag, library, active)?;
    let pi = active_pi_matrix(eta, active)?;
    let lpi = log_pi(&pi);
    let n = table.nrows();
    let ka = active.len();

    // log m_{t+1,t}(a): messages[t][a] sums over the path from t+1 on.
    let mut messages = DMatrix::zeros(n, ka);
    let mut scratch = vec![T::zero(); ka];
    for t in (0..n - 1).rev() {
        for a in 0..ka {
            for b in 0..ka {
                scratch[b] = lpi[(a, b)] + table[(t + 1, b)] + messages[(t + 1, b)];
            }
            messages[(t, a)] = log_sum_exp(&scratch);
        }
    }

    let log_pi0 = -T::of_usize(ka).ln();
    let mut states = Vec::with_capacity(n);
    let mut log_w = vec![T::zero(); ka];
    for t in 0..n {
        for b in 0..ka {
            let trans = if t == 0 {
                log_pi0
            } else {
                let prev = *states.last().expect("nonempty path");
                lpi[(prev, b)]
            };
            log_w[b] = trans + table[(t, b)] + messages[(t, b)];
        }
        states.push(sample_categorical_from_log(&log_w, rng)?);
    }

    let global: Vec<usize> = states.into_iter().map(|a| active[a]).collect();
    Ok(ModeSequence::from_states(global, library.len()))
}
