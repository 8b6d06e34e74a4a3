//! MCMC orchestration: default priors, block initialization, the per-
//! iteration sweep schedule, joint log-probability, and chain execution
//! with sample records.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    birth_death_move, remove_empty_columns, sample_shared_features_series,
};
use crate::hyper::{harmonic, sample_alpha_step, sample_gamma_kappa};
use crate::messages::forward_log_likelihood;
use crate::model::{
    BehaviorLibrary, Dataset, FeatureMatrix, Hyperparams, MniwPrior, ModeSequence, SamplerState,
    TransitionState,
};
use crate::num::Scalar;
use crate::params::{
    compute_sufficient_stats, sample_all_behaviors, sample_all_eta, sample_all_modes,
    sample_mniw_posterior,
};

/// Everything one fitting run needs beyond the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RunConfig<T: Scalar> {
    pub iterations: u64,
    pub burn_in: u64,
    /// Keep every `thinning`-th post-burn-in sample.
    pub thinning: u64,
    pub chains: usize,
    pub seed: u64,
    /// Contiguous equal blocks per series at initialization.
    pub block_count: usize,
    /// Checkpoint cadence in iterations (0 disables).
    pub checkpoint_every: u64,
    pub hyper: Hyperparams<T>,
    /// Scale on the pooled first-difference covariance used as the
    /// inverse-Wishart scale.
    pub mniw_scale_factor: T,
    /// Diagonal of the matrix-normal column precision.
    pub mniw_col_precision: T,
    /// Inverse-Wishart degrees of freedom = d + this offset.
    pub mniw_dof_offset: T,
}

impl<T: Scalar> Default for RunConfig<T> {
    fn default() -> Self {
        RunConfig {
            iterations: 1000,
            burn_in: 500,
            thinning: 1,
            chains: 1,
            seed: 0,
            block_count: 5,
            checkpoint_every: 0,
            hyper: Hyperparams::default(),
            mniw_scale_factor: T::of(0.75),
            mniw_col_precision: T::of(0.1),
            mniw_dof_offset: T::of(2.0),
        }
    }
}

impl<T: Scalar> RunConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < self.burn_in {
            return Err(Error::Config("iterations must be >= burn_in".into()));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be >= 1".into()));
        }
        if self.chains == 0 || self.block_count == 0 {
            return Err(Error::Config("chains and block_count must be >= 1".into()));
        }
        self.hyper
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.mniw_scale_factor <= T::zero()
            || self.mniw_col_precision <= T::zero()
            || self.mniw_dof_offset <= T::zero()
        {
            return Err(Error::Config("MNIW settings must be positive".into()));
        }
        Ok(())
    }

    pub fn chain_seed(&self, chain: usize) -> u64 {
        self.seed
            .wrapping_add((chain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Data-driven conjugate prior: zero mean, col_precision*I column precision,
/// dof = d + offset, scale = factor * pooled covariance of first differences.
pub fn default_mniw_prior<T: Scalar>(
    dataset: &Dataset<T>,
    config: &RunConfig<T>,
) -> Result<MniwPrior<T>> {
    let d = dataset.dim();
    let r = dataset.lag();
    let mut diffs: Vec<nalgebra::DVector<T>> = Vec::new();
    for s in dataset.series() {
        for t in 1..s.len() {
            diffs.push(s.at(t) - s.at(t - 1));
        }
    }
    if diffs.is_empty() {
        return Err(Error::Data("dataset has no first differences".into()));
    }
    let nf = T::of_usize(diffs.len());
    let mut mean = nalgebra::DVector::zeros(d);
    for v in &diffs {
        mean += v;
    }
    mean /= nf;
    let mut cov = DMatrix::zeros(d, d);
    for v in &diffs {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    cov /= nf;
    let scale = cov * config.mniw_scale_factor;
    // guard against degenerate (constant) inputs
    let scale = if scale.iter().all(|&x| x == T::zero()) {
        DMatrix::identity(d, d) * T::of(1e-6)
    } else {
        scale
    };
    MniwPrior::new(
        T::of_usize(d) + config.mniw_dof_offset,
        scale,
        DMatrix::zeros(d, d * r),
        DMatrix::identity(d * r, d * r) * config.mniw_col_precision,
    )
}

/// Block initialization: each series is cut into `block_count` contiguous
/// equal blocks over its likelihood frames, each block gets a fresh feature
/// unique to that series, behaviors come from the MNIW posterior under that
/// assignment, transition weights and hyperparameters from their priors.
pub fn initialize<T: Scalar>(
    dataset: &Dataset<T>,
    config: &RunConfig<T>,
    prior: &MniwPrior<T>,
    seed: u64,
) -> Result<SamplerState<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dataset.num_series();

    let mut flags: Vec<Vec<bool>> = Vec::with_capacity(n);
    let mut mode_states: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut next_feature = 0usize;
    for i in 0..n {
        let frames = dataset.effective_len(i);
        let blocks = config.block_count.min(frames); // short series: fewer blocks
        let mut states = Vec::with_capacity(frames);
        for b in 0..blocks {
            let start = b * frames / blocks;
            let end = (b + 1) * frames / blocks;
            states.extend(std::iter::repeat(next_feature + b).take(end - start));
        }
        mode_states.push(states);
        flags.push(Vec::new()); // filled below once K+ is known
        next_feature += blocks;
    }
    let k_plus = next_feature;
    let mut offset = 0usize;
    for (i, row) in flags.iter_mut().enumerate() {
        let blocks = config.block_count.min(dataset.effective_len(i));
        *row = (0..k_plus)
            .map(|k| k >= offset && k < offset + blocks)
            .collect();
        offset += blocks;
    }
    let features = FeatureMatrix::from_flags(flags)?;

    let h = &config.hyper;
    let alpha = T::draw_gamma(h.a_alpha, T::one() / h.b_alpha, &mut rng);
    let gamma = T::draw_gamma(h.a_gamma, T::one() / h.b_gamma, &mut rng);
    let kappa = T::draw_gamma(h.a_kappa, T::one() / h.b_kappa, &mut rng);
    let transitions = TransitionState::from_prior(n, k_plus, gamma, kappa, &mut rng);

    let modes: Vec<ModeSequence> = mode_states
        .into_iter()
        .map(|s| ModeSequence::from_states(s, k_plus))
        .collect();
    let mut behaviors = Vec::with_capacity(k_plus);
    for k in 0..k_plus {
        let stats = compute_sufficient_stats(dataset, &modes, k, prior)?;
        behaviors.push(sample_mniw_posterior(&stats, prior, &mut rng)?);
    }

    let mut hyper = h.clone();
    hyper.alpha = alpha;
    let state = SamplerState {
        features,
        library: BehaviorLibrary::new(behaviors),
        transitions,
        hyper,
        modes: Some(modes),
        rng,
        iteration: 0,
    };
    state.audit(dataset)?;
    Ok(state)
}

/// One full MCMC sweep: per series shared-feature flips then a birth/death
/// move, empty-column cleanup, the conjugate alpha draw, block mode
/// resampling with eta and behavior updates, and the gamma/kappa MH moves.
pub fn sweep<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
    prior: &MniwPrior<T>,
) -> Result<()> {
    for i in 0..dataset.num_series() {
        sample_shared_features_series(state, dataset, i)?;
        birth_death_move(state, dataset, prior, i)?;
    }
    remove_empty_columns(state);
    sample_alpha_step(state);

    let modes = sample_all_modes(state, dataset)?;
    sample_gamma_kappa(state)?;
    sample_all_eta(state, &modes)?;
    sample_all_behaviors(state, dataset, &modes, prior)?;
    state.modes = Some(modes);

    state.iteration += 1;
    Ok(())
}

fn ln_factorial<T: Scalar>(n: usize) -> T {
    (T::of_usize(n) + T::one()).ln_gamma_fn()
}

/// Log pmf of the feature matrix under the Indian buffet process
/// (exchangeable form with the repeated-column correction).
pub fn ibp_log_pmf<T: Scalar>(features: &FeatureMatrix, alpha: T) -> Result<T> {
    if alpha <= T::zero() {
        return Err(Error::InvalidInput("alpha must be positive".into()));
    }
    let n = features.num_series();
    let k_plus = features.num_features();
    let mut lp = T::of_usize(k_plus) * alpha.ln() - alpha * harmonic::<T>(n);
    // multiplicity correction over identical columns
    let mut columns: Vec<Vec<bool>> = (0..k_plus)
        .map(|k| (0..n).map(|i| features.get(i, k)).collect())
        .collect();
    columns.sort();
    let mut run = 1usize;
    for idx in 1..=columns.len() {
        if idx < columns.len() && columns[idx] == columns[idx - 1] {
            run += 1;
        } else {
            lp -= ln_factorial::<T>(run);
            run = 1;
        }
    }
    for k in 0..k_plus {
        let m = features.count(k);
        lp += ln_factorial::<T>(n - m) + ln_factorial::<T>(m - 1) - ln_factorial::<T>(n);
    }
    Ok(lp)
}

fn gamma_log_pdf<T: Scalar>(x: T, shape: T, rate: T) -> T {
    shape * rate.ln() - shape.ln_gamma_fn() + (shape - T::one()) * x.ln() - rate * x
}

fn ln_multigamma<T: Scalar>(d: usize, a: T) -> T {
    let mut out = T::of_usize(d * (d - 1)) / T::of(4.0) * T::of(std::f64::consts::PI).ln();
    for j in 1..=d {
        out += (a + (T::one() - T::of_usize(j)) / T::of(2.0)).ln_gamma_fn();
    }
    out
}

fn inverse_wishart_log_pdf<T: Scalar>(sigma: &DMatrix<T>, dof: T, scale: &DMatrix<T>) -> Result<T> {
    let d = sigma.nrows();
    let chol_sigma = crate::params::chol_with_jitter(sigma)?;
    let chol_scale = crate::params::chol_with_jitter(scale)?;
    let ln_det = |c: &nalgebra::Cholesky<T, nalgebra::Dyn>| {
        let l = c.l();
        let mut s = T::zero();
        for i in 0..d {
            s += l[(i, i)].ln();
        }
        s * T::of(2.0)
    };
    let half = T::of(0.5);
    let tr = chol_sigma.solve(scale).trace();
    Ok(half * dof * ln_det(&chol_scale)
        - half * dof * T::of_usize(d) * T::of(2.0).ln()
        - ln_multigamma(d, half * dof)
        - half * (dof + T::of_usize(d) + T::one()) * ln_det(&chol_sigma)
        - half * tr)
}

fn matrix_normal_log_pdf<T: Scalar>(
    a: &DMatrix<T>,
    mean: &DMatrix<T>,
    row_cov: &DMatrix<T>,
    col_precision: &DMatrix<T>,
) -> Result<T> {
    let d = a.nrows();
    let p = a.ncols();
    let chol_row = crate::params::chol_with_jitter(row_cov)?;
    let chol_prec = crate::params::chol_with_jitter(col_precision)?;
    let ln_det = |c: &nalgebra::Cholesky<T, nalgebra::Dyn>, n: usize| {
        let l = c.l();
        let mut s = T::zero();
        for i in 0..n {
            s += l[(i, i)].ln();
        }
        s * T::of(2.0)
    };
    let resid = a - mean;
    let quad = (col_precision * resid.transpose() * chol_row.solve(&resid)).trace();
    let half = T::of(0.5);
    Ok(-half * T::of_usize(d * p) * T::of(2.0 * std::f64::consts::PI).ln()
        + half * T::of_usize(d) * ln_det(&chol_prec, p)
        - half * T::of_usize(p) * ln_det(&chol_row, d)
        - half * quad)
}

/// Joint log-probability of the current state: IBP pmf, hyperparameter
/// priors, transition-weight priors, behavior priors, and the forward
/// marginal likelihood of every series (mode sequences integrated out).
pub fn joint_log_prob<T: Scalar>(
    state: &SamplerState<T>,
    dataset: &Dataset<T>,
    prior: &MniwPrior<T>,
) -> Result<T> {
    let h = &state.hyper;
    let mut lp = ibp_log_pmf(&state.features, h.alpha)?;
    lp += gamma_log_pdf(h.alpha, h.a_alpha, h.b_alpha);
    lp += gamma_log_pdf(state.transitions.gamma, h.a_gamma, h.b_gamma);
    lp += gamma_log_pdf(state.transitions.kappa, h.a_kappa, h.b_kappa);

    let k_plus = state.features.num_features();
    for eta in &state.transitions.eta {
        for j in 0..k_plus {
            for k in 0..k_plus {
                let shape = if j == k {
                    state.transitions.gamma + state.transitions.kappa
                } else {
                    state.transitions.gamma
                };
                lp += gamma_log_pdf(eta[(j, k)], shape, T::one());
            }
        }
    }

    for b in &state.library.behaviors {
        lp += inverse_wishart_log_pdf(&b.noise_cov, prior.dof, &prior.scale)?;
        lp += matrix_normal_log_pdf(&b.coeffs, &prior.mean, &b.noise_cov, &prior.col_precision)?;
    }

    for (i, series) in dataset.series().iter().enumerate() {
        let active = state.features.active(i);
        lp += forward_log_likelihood(
            series,
            dataset.lag(),
            &active,
            &state.transitions.eta[i],
            &state.library,
        )?;
    }
    Ok(lp)
}

/// Run-length encoding of a mode sequence: (label, run length) pairs.
pub fn rle(states: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &s in states {
        match out.last_mut() {
            Some((l, n)) if *l == s => *n += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

pub fn rle_expand(runs: &[(usize, usize)]) -> Vec<usize> {
    runs.iter()
        .flat_map(|&(l, n)| std::iter::repeat(l).take(n))
        .collect()
}

/// One retained posterior sample, self-contained enough for selection,
/// summarization, and held-out prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SampleRecord<T: Scalar> {
    pub iteration: u64,
    pub k_plus: usize,
    pub alpha: T,
    pub gamma: T,
    pub kappa: T,
    pub joint_log_prob: T,
    pub features: Vec<Vec<bool>>,
    pub coeffs: Vec<DMatrix<T>>,
    pub noise_covs: Vec<DMatrix<T>>,
    pub eta: Vec<DMatrix<T>>,
    pub mode_rle: Vec<Vec<(usize, usize)>>,
}

impl<T: Scalar> SampleRecord<T> {
    pub fn from_state(
        state: &SamplerState<T>,
        dataset: &Dataset<T>,
        prior: &MniwPrior<T>,
    ) -> Result<Self> {
        let lp = joint_log_prob(state, dataset, prior)?;
        if !lp.is_finite_val() {
            return Err(Error::numeric("joint log-probability is not finite"));
        }
        let mode_rle = state
            .modes
            .as_ref()
            .map(|ms| ms.iter().map(|m| rle(&m.states)).collect())
            .unwrap_or_default();
        Ok(SampleRecord {
            iteration: state.iteration,
            k_plus: state.features.num_features(),
            alpha: state.hyper.alpha,
            gamma: state.transitions.gamma,
            kappa: state.transitions.kappa,
            joint_log_prob: lp,
            features: (0..state.features.num_series())
                .map(|i| state.features.row(i).to_vec())
                .collect(),
            coeffs: state.library.behaviors.iter().map(|b| b.coeffs.clone()).collect(),
            noise_covs: state
                .library
                .behaviors
                .iter()
                .map(|b| b.noise_cov.clone())
                .collect(),
            eta: state.transitions.eta.clone(),
            mode_rle,
        })
    }

    pub fn mode_sequences(&self) -> Vec<Vec<usize>> {
        self.mode_rle.iter().map(|r| rle_expand(r)).collect()
    }
}

/// Advance an initialized (or resumed) chain to `config.iterations`, calling
/// `on_sample` for the initial state and for every retained sample.
pub fn run_chain_from<T: Scalar>(
    state: &mut SamplerState<T>,
    dataset: &Dataset<T>,
    config: &RunConfig<T>,
    prior: &MniwPrior<T>,
    mut on_sample: impl FnMut(&SampleRecord<T>) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    if state.iteration == 0 {
        on_sample(&SampleRecord::from_state(state, dataset, prior)?)?;
    }
    while state.iteration < config.iterations {
        sweep(state, dataset, prior)?;
        let it = state.iteration;
        if it > config.burn_in && (it - config.burn_in) % config.thinning == 0 {
            on_sample(&SampleRecord::from_state(state, dataset, prior)?)?;
        }
    }
    state.audit(dataset)?;
    Ok(())
}

/// Initialize and run one chain, collecting retained samples.
pub fn run_chain<T: Scalar>(
    dataset: &Dataset<T>,
    config: &RunConfig<T>,
    prior: &MniwPrior<T>,
    chain: usize,
) -> Result<(SamplerState<T>, Vec<SampleRecord<T>>)> {
    let mut state = initialize(dataset, config, prior, config.chain_seed(chain))?;
    let mut records = Vec::new();
    run_chain_from(&mut state, dataset, config, prior, |r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((state, records))
}
