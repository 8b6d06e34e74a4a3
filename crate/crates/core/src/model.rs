//! Domain types shared by every sampler module: the dataset, the binary
//! feature matrix, the behavior library, transition variables, mode
//! sequences, hyperparameters, and the aggregated sampler state.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// One observed multivariate time series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeSeries<T: Scalar> {
    pub id: String,
    /// T_i x d, one row per time step.
    pub observations: DMatrix<T>,
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new(id: impl Into<String>, observations: DMatrix<T>) -> Result<Self> {
        if observations.iter().any(|x| !x.is_finite_val()) {
            return Err(Error::InvalidInput(
                "time series contains non-finite observations".into(),
            ));
        }
        Ok(TimeSeries {
            id: id.into(),
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn at(&self, t: usize) -> DVector<T> {
        self.observations.row(t).transpose()
    }
}

/// A collection of series sharing dimension `dim` and autoregressive lag `lag`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar> {
    series: Vec<TimeSeries<T>>,
    dim: usize,
    lag: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(series: Vec<TimeSeries<T>>, dim: usize, lag: usize) -> Result<Self> {
        if dim == 0 || lag == 0 {
            return Err(Error::InvalidInput(
                "dimension and lag order must be positive".into(),
            ));
        }
        if series.is_empty() {
            return Err(Error::InvalidInput("dataset has no series".into()));
        }
        for s in &series {
            if s.dim() != dim {
                return Err(Error::InvalidInput(format!(
                    "series '{}' has dimension {}, expected {}",
                    s.id,
                    s.dim(),
                    dim
                )));
            }
            if s.len() <= lag {
                return Err(Error::InvalidInput(format!(
                    "series '{}' has length {} but lag order {} requires at least {} frames",
                    s.id,
                    s.len(),
                    lag,
                    lag + 1
                )));
            }
        }
        Ok(Dataset { series, dim, lag })
    }

    pub fn series(&self) -> &[TimeSeries<T>] {
        &self.series
    }

    pub fn num_series(&self) -> usize {
        self.series.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Number of likelihood frames of series `i` (frames after conditioning).
    pub fn effective_len(&self, i: usize) -> usize {
        self.series[i].len() - self.lag
    }
}

/// Lagged observation vectors for one series: for each t in r..T_i-1
/// (zero based), the stack of the r most recent observations, most recent
/// first. Entry `v[t - r]` conditions the observation at index `t`.
pub fn build_lagged<T: Scalar>(series: &TimeSeries<T>, r: usize) -> Result<Vec<DVector<T>>> {
    if r == 0 {
        return Err(Error::InvalidInput("lag order must be positive".into()));
    }
    let t_len = series.len();
    if t_len <= r {
        return Err(Error::InvalidInput(format!(
            "series of length {t_len} too short for lag order {r}"
        )));
    }
    let d = series.dim();
    let mut out = Vec::with_capacity(t_len - r);
    for t in r..t_len {
        let mut v = DVector::zeros(d * r);
        for j in 0..r {
            v.rows_mut(j * d, d).copy_from(&series.at(t - 1 - j));
        }
        out.push(v);
    }
    Ok(out)
}

/// The binary N x K+ matrix of behavior assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    flags: Vec<Vec<bool>>,
}

impl FeatureMatrix {
    /// Empty matrix (no features) over `n` series.
    pub fn empty(n: usize) -> Self {
        FeatureMatrix {
            flags: vec![Vec::new(); n],
        }
    }

    /// Validating constructor: every column must be used by at least one
    /// series and every row must have at least one active entry.
    pub fn from_flags(flags: Vec<Vec<bool>>) -> Result<Self> {
        let m = FeatureMatrix { flags };
        m.check()?;
        Ok(m)
    }

    /// Like `from_flags` but without the nonzero-row/column checks; used by
    /// generators that enforce their own constraints.
    pub fn from_flags_unchecked(flags: Vec<Vec<bool>>) -> Self {
        FeatureMatrix { flags }
    }

    fn check(&self) -> Result<()> {
        let k = self.num_features();
        for row in &self.flags {
            if row.len() != k {
                return Err(Error::InvalidState("ragged feature matrix".into()));
            }
            if k > 0 && !row.iter().any(|&f| f) {
                return Err(Error::InvalidState("feature row with no active entry".into()));
            }
        }
        for col in 0..k {
            if self.count(col) == 0 {
                return Err(Error::InvalidState(format!("feature column {col} is empty")));
            }
        }
        Ok(())
    }

    pub fn num_series(&self) -> usize {
        self.flags.len()
    }

    pub fn num_features(&self) -> usize {
        self.flags.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn get(&self, i: usize, k: usize) -> bool {
        self.flags[i][k]
    }

    pub fn set(&mut self, i: usize, k: usize, value: bool) {
        self.flags[i][k] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.flags[i]
    }

    /// m_k: number of series using feature k.
    pub fn count(&self, k: usize) -> usize {
        self.flags.iter().filter(|row| row[k]).count()
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.num_features()).map(|k| self.count(k)).collect()
    }

    /// m_k^{-i}: count excluding series i.
    pub fn count_excluding(&self, i: usize, k: usize) -> usize {
        self.count(k) - usize::from(self.flags[i][k])
    }

    /// Indices of active features for series i, ascending.
    pub fn active(&self, i: usize) -> Vec<usize> {
        self.flags[i]
            .iter()
            .enumerate()
            .filter_map(|(k, &f)| f.then_some(k))
            .collect()
    }

    pub fn row_weight(&self, i: usize) -> usize {
        self.flags[i].iter().filter(|&&f| f).count()
    }

    /// Features unique to series i (m_k = 1 and f_ik = 1), ascending.
    pub fn unique_features(&self, i: usize) -> Vec<usize> {
        (0..self.num_features())
            .filter(|&k| self.flags[i][k] && self.count(k) == 1)
            .collect()
    }

    /// Append a column active only for series i; returns the new column index.
    pub fn push_feature(&mut self, i: usize) -> usize {
        let k = self.num_features();
        for (j, row) in self.flags.iter_mut().enumerate() {
            row.push(j == i);
        }
        k
    }

    pub fn remove_column(&mut self, k: usize) {
        for row in &mut self.flags {
            row.remove(k);
        }
    }

    /// Column indices with m_k = 0.
    pub fn empty_columns(&self) -> Vec<usize> {
        (0..self.num_features())
            .filter(|&k| self.count(k) == 0)
            .collect()
    }
}

/// One VAR(r) behavior: lag matrices stacked as a d x (d*r) block row, plus
/// the process noise covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct VarBehavior<T: Scalar> {
    /// d x (d*r): [A_1 ... A_r].
    pub coeffs: DMatrix<T>,
    /// d x d SPD.
    pub noise_cov: DMatrix<T>,
}

impl<T: Scalar> VarBehavior<T> {
    pub fn new(coeffs: DMatrix<T>, noise_cov: DMatrix<T>) -> Result<Self> {
        let d = noise_cov.nrows();
        if noise_cov.ncols() != d || coeffs.nrows() != d || coeffs.ncols() % d != 0 {
            return Err(Error::InvalidInput(
                "behavior matrices have inconsistent dimensions".into(),
            ));
        }
        let b = VarBehavior { coeffs, noise_cov };
        b.cholesky()?;
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn lag(&self) -> usize {
        self.coeffs.ncols() / self.dim()
    }

    pub fn cholesky(&self) -> Result<Cholesky<T, Dyn>> {
        Cholesky::new(self.noise_cov.clone())
            .ok_or_else(|| Error::numeric("noise covariance is not positive definite"))
    }

    /// Conditional mean A * y_lagged.
    pub fn mean(&self, lagged: &DVector<T>) -> DVector<T> {
        &self.coeffs * lagged
    }
}

/// Index-aligned list of the K+ instantiated behaviors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BehaviorLibrary<T: Scalar> {
    pub behaviors: Vec<VarBehavior<T>>,
}

impl<T: Scalar> BehaviorLibrary<T> {
    pub fn new(behaviors: Vec<VarBehavior<T>>) -> Self {
        BehaviorLibrary { behaviors }
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }

    pub fn get(&self, k: usize) -> &VarBehavior<T> {
        &self.behaviors[k]
    }
}

/// Matrix-normal inverse-Wishart prior on a behavior's (A, Sigma).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MniwPrior<T: Scalar> {
    /// Inverse-Wishart degrees of freedom, > d - 1.
    pub dof: T,
    /// d x d SPD inverse-Wishart scale.
    pub scale: DMatrix<T>,
    /// d x (d*r) matrix-normal mean.
    pub mean: DMatrix<T>,
    /// (d*r) x (d*r) SPD column precision of the matrix normal.
    pub col_precision: DMatrix<T>,
}

impl<T: Scalar> MniwPrior<T> {
    pub fn new(
        dof: T,
        scale: DMatrix<T>,
        mean: DMatrix<T>,
        col_precision: DMatrix<T>,
    ) -> Result<Self> {
        let d = scale.nrows();
        if scale.ncols() != d || mean.nrows() != d {
            return Err(Error::InvalidInput("MNIW prior dimension mismatch".into()));
        }
        let dr = mean.ncols();
        if col_precision.nrows() != dr || col_precision.ncols() != dr {
            return Err(Error::InvalidInput(
                "MNIW column precision dimension mismatch".into(),
            ));
        }
        if dof <= T::of_usize(d) - T::one() {
            return Err(Error::InvalidInput(
                "MNIW degrees of freedom must exceed d - 1".into(),
            ));
        }
        if Cholesky::new(scale.clone()).is_none() || Cholesky::new(col_precision.clone()).is_none()
        {
            return Err(Error::InvalidInput(
                "MNIW scale and column precision must be SPD".into(),
            ));
        }
        Ok(MniwPrior {
            dof,
            scale,
            mean,
            col_precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn lag_dim(&self) -> usize {
        self.mean.ncols()
    }
}

/// Per-series gamma transition variables plus the shared Dirichlet
/// hyperparameters gamma and kappa. Each eta matrix is stored densely at
/// K+ x K+; only rows/columns for active features of a series carry
/// likelihood weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TransitionState<T: Scalar> {
    pub eta: Vec<DMatrix<T>>,
    pub gamma: T,
    pub kappa: T,
}

impl<T: Scalar> TransitionState<T> {
    /// Draw all eta entries from the Gamma(gamma + kappa*delta(j,k), 1) prior.
    pub fn from_prior<R: Rng + ?Sized>(
        n_series: usize,
        k_plus: usize,
        gamma: T,
        kappa: T,
        rng: &mut R,
    ) -> Self {
        let mut eta = Vec::with_capacity(n_series);
        for _ in 0..n_series {
            let mut m = DMatrix::zeros(k_plus, k_plus);
            for j in 0..k_plus {
                for k in 0..k_plus {
                    m[(j, k)] = Self::prior_draw(gamma, kappa, j == k, rng);
                }
            }
            eta.push(m);
        }
        TransitionState { eta, gamma, kappa }
    }

    pub fn prior_draw<R: Rng + ?Sized>(gamma: T, kappa: T, diagonal: bool, rng: &mut R) -> T {
        let shape = if diagonal { gamma + kappa } else { gamma };
        T::draw_gamma(shape, T::one(), rng)
    }

    pub fn num_features(&self) -> usize {
        self.eta.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Extend every series' eta with a fresh prior-distributed row and
    /// column for one new feature.
    pub fn grow<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (gamma, kappa) = (self.gamma, self.kappa);
        for m in &mut self.eta {
            let k = m.nrows();
            let mut grown = DMatrix::zeros(k + 1, k + 1);
            grown.view_mut((0, 0), (k, k)).copy_from(m);
            for j in 0..=k {
                grown[(j, k)] = Self::prior_draw(gamma, kappa, j == k, rng);
                if j < k {
                    grown[(k, j)] = Self::prior_draw(gamma, kappa, false, rng);
                }
            }
            *m = grown;
        }
    }

    pub fn remove_feature(&mut self, k: usize) {
        for m in &mut self.eta {
            *m = m.clone().remove_row(k).remove_column(k);
        }
    }
}

/// Normalized restriction of one eta row to the active features: pi_jk =
/// eta_jk / sum over active k', exactly zero at inactive indices.
pub fn construct_pi<T: Scalar>(eta_row: &[T], feature_row: &[bool]) -> Result<DVector<T>> {
    if eta_row.len() != feature_row.len() {
        return Err(Error::InvalidInput(
            "eta row and feature row lengths differ".into(),
        ));
    }
    if !feature_row.iter().any(|&f| f) {
        return Err(Error::InvalidState(
            "cannot normalize over an all-zero feature row".into(),
        ));
    }
    let mut total = T::zero();
    for (k, &f) in feature_row.iter().enumerate() {
        if f {
            if eta_row[k] <= T::zero() {
                return Err(Error::InvalidState("non-positive transition variable".into()));
            }
            total += eta_row[k];
        }
    }
    let mut pi = DVector::zeros(eta_row.len());
    for (k, &f) in feature_row.iter().enumerate() {
        if f {
            pi[k] = eta_row[k] / total;
        }
    }
    Ok(pi)
}

/// K_a x K_a transition matrix over the active feature set of a series,
/// rows normalized. `active` holds ascending global feature indices.
pub fn active_pi_matrix<T: Scalar>(eta: &DMatrix<T>, active: &[usize]) -> Result<DMatrix<T>> {
    if active.is_empty() {
        return Err(Error::InvalidState("empty active feature set".into()));
    }
    let ka = active.len();
    let mut pi = DMatrix::zeros(ka, ka);
    for (a, &j) in active.iter().enumerate() {
        let mut total = T::zero();
        for &k in active {
            if eta[(j, k)] <= T::zero() {
                return Err(Error::InvalidState("non-positive transition variable".into()));
            }
            total += eta[(j, k)];
        }
        for (b, &k) in active.iter().enumerate() {
            pi[(a, b)] = eta[(j, k)] / total;
        }
    }
    Ok(pi)
}

/// A sampled latent state path over the likelihood frames of one series,
/// with its transition counts. States are global feature indices; counts
/// are K+ x K+ dense.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSequence {
    pub states: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl ModeSequence {
    pub fn from_states(states: Vec<usize>, k_plus: usize) -> Self {
        let mut counts = vec![vec![0usize; k_plus]; k_plus];
        for w in states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        ModeSequence { states, counts }
    }

    pub fn count(&self, j: usize, k: usize) -> usize {
        self.counts[j][k]
    }

    pub fn total_transitions(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Beta-process mass, its prior, and the priors/proposal scales for the
/// transition hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Hyperparams<T: Scalar> {
    pub alpha: T,
    pub a_alpha: T,
    pub b_alpha: T,
    pub a_gamma: T,
    pub b_gamma: T,
    pub a_kappa: T,
    pub b_kappa: T,
    pub sigma_gamma_sq: T,
    pub sigma_kappa_sq: T,
}

impl<T: Scalar> Hyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.alpha,
            self.a_alpha,
            self.b_alpha,
            self.a_gamma,
            self.b_gamma,
            self.a_kappa,
            self.b_kappa,
            self.sigma_gamma_sq,
            self.sigma_kappa_sq,
        ];
        if fields.iter().any(|&x| x <= T::zero() || !x.is_finite_val()) {
            return Err(Error::InvalidInput(
                "hyperparameters must be strictly positive and finite".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Hyperparams<T> {
    /// Gamma(1,1) priors on alpha and gamma, Gamma(100,1) on kappa, proposal
    /// variances 1 and 100.
    fn default() -> Self {
        Hyperparams {
            alpha: T::one(),
            a_alpha: T::one(),
            b_alpha: T::one(),
            a_gamma: T::one(),
            b_gamma: T::one(),
            a_kappa: T::of(100.0),
            b_kappa: T::one(),
            sigma_gamma_sq: T::one(),
            sigma_kappa_sq: T::of(100.0),
        }
    }
}

/// Everything the MCMC sweep mutates; the unit of checkpointing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SamplerState<T: Scalar> {
    pub features: FeatureMatrix,
    pub library: BehaviorLibrary<T>,
    pub transitions: TransitionState<T>,
    pub hyper: Hyperparams<T>,
    pub modes: Option<Vec<ModeSequence>>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl<T: Scalar> SamplerState<T> {
    /// Structural audit: feature columns, behaviors, and eta dimensions are
    /// index-aligned, every row and column of F is nonzero, and the library
    /// entries have matching dimensions.
    pub fn audit(&self, dataset: &Dataset<T>) -> Result<()> {
        let k = self.features.num_features();
        if self.features.num_series() != dataset.num_series() {
            return Err(Error::InvalidState("feature matrix row count mismatch".into()));
        }
        if self.library.len() != k {
            return Err(Error::InvalidState(format!(
                "library holds {} behaviors but feature matrix has {} columns",
                self.library.len(),
                k
            )));
        }
        if self.transitions.eta.len() != dataset.num_series() {
            return Err(Error::InvalidState("eta series count mismatch".into()));
        }
        for m in &self.transitions.eta {
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::InvalidState("eta dimension mismatch".into()));
            }
            if m.iter().any(|&x| x <= T::zero()) {
                return Err(Error::InvalidState("non-positive eta entry".into()));
            }
        }
        for b in &self.library.behaviors {
            if b.dim() != dataset.dim() || b.lag() != dataset.lag() {
                return Err(Error::InvalidState("behavior dimension mismatch".into()));
            }
        }
        self.features.check()?;
        if let Some(modes) = &self.modes {
            if modes.len() != dataset.num_series() {
                return Err(Error::InvalidState("mode sequence count mismatch".into()));
            }
            for (i, m) in modes.iter().enumerate() {
                if m.states.len() != dataset.effective_len(i) {
                    return Err(Error::InvalidState("mode sequence length mismatch".into()));
                }
                if m.states.iter().any(|&z| !self.features.get(i, z)) {
                    return Err(Error::InvalidState(
                        "mode sequence visits an inactive feature".into(),
                    ));
                }
            }
        }
        self.hyper.validate()?;
        Ok(())
    }

    /// Drop a feature column from every aligned structure.
    pub fn remove_feature(&mut self, k: usize) {
        self.features.remove_column(k);
        self.library.behaviors.remove(k);
        self.transitions.remove_feature(k);
        self.modes = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn series_1d(vals: &[f64]) -> TimeSeries<f64> {
        TimeSeries::new("s", DMatrix::from_column_slice(vals.len(), 1, vals)).unwrap()
    }

    #[test]
    fn build_lagged_r1() {
        let s = series_1d(&[1.0, 2.0, 3.0]);
        let l = build_lagged(&s, 1).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[0][0], 1.0);
        assert_eq!(l[1][0], 2.0);
    }

    #[test]
    fn build_lagged_r2_most_recent_first() {
        let s = series_1d(&[1.0, 2.0, 3.0, 4.0]);
        let l = build_lagged(&s, 2).unwrap();
        assert_eq!(l.len(), 2);
        // y~_3 = [y_2, y_1], y~_4 = [y_3, y_2]
        assert_eq!(l[0].as_slice(), &[2.0, 1.0]);
        assert_eq!(l[1].as_slice(), &[3.0, 2.0]);
    }

    #[test]
    fn build_lagged_too_short() {
        let s = series_1d(&[1.0, 2.0]);
        assert!(matches!(build_lagged(&s, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn build_lagged_matches_index_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t_len = 12;
        let d = 2;
        let r = 2;
        let obs = DMatrix::from_fn(t_len, d, |_, _| f64::draw_std_normal(&mut rng));
        let s = TimeSeries::new("x", obs.clone()).unwrap();
        let l = build_lagged(&s, r).unwrap();
        for t in r..t_len {
            for j in 0..r {
                for c in 0..d {
                    // brute-force index shuffling: block j holds y_{t-1-j}
                    assert_eq!(l[t - r][j * d + c], obs[(t - 1 - j, c)]);
                }
            }
        }
    }

    #[test]
    fn construct_pi_single_active() {
        let pi = construct_pi(&[3.0, 9.9, 0.5], &[true, false, false]).unwrap();
        assert_eq!(pi.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn construct_pi_normalizes() {
        let pi = construct_pi(&[2.0, 6.0], &[true, true]).unwrap();
        assert_relative_eq!(pi[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(pi[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn construct_pi_rejects_empty_row() {
        assert!(matches!(
            construct_pi(&[1.0f64], &[false]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn construct_pi_sums_to_one_with_exact_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 6;
            let eta: Vec<f64> = (0..n)
                .map(|_| f64::draw_gamma(1.5, 1.0, &mut rng))
                .collect();
            let mut f: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            f[0] = true;
            let pi = construct_pi(&eta, &f).unwrap();
            let active_sum: f64 = pi.iter().zip(&f).filter(|(_, &a)| a).map(|(p, _)| p).sum();
            assert_relative_eq!(active_sum, 1.0, epsilon = 1e-12);
            for (p, &a) in pi.iter().zip(&f) {
                if !a {
                    assert_eq!(*p, 0.0);
                }
            }
        }
    }

    #[test]
    fn feature_matrix_bookkeeping() {
        let mut f =
            FeatureMatrix::from_flags(vec![vec![true, true], vec![false, true]]).unwrap();
        assert_eq!(f.counts(), vec![1, 2]);
        assert_eq!(f.count_excluding(0, 1), 1);
        assert_eq!(f.unique_features(0), vec![0]);
        assert_eq!(f.active(1), vec![1]);
        let k = f.push_feature(1);
        assert_eq!(k, 2);
        assert_eq!(f.count(2), 1);
        f.remove_column(0);
        assert_eq!(f.num_features(), 2);
        assert_eq!(f.active(0), vec![0]);
    }

    #[test]
    fn feature_matrix_rejects_empty_row_and_column() {
        assert!(FeatureMatrix::from_flags(vec![vec![true], vec![false]]).is_err());
        assert!(
            FeatureMatrix::from_flags(vec![vec![true, false], vec![true, false]]).is_err()
        );
    }

    #[test]
    fn mniw_prior_validation() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!(MniwPrior::new(4.0, eye.clone(), DMatrix::zeros(2, 2), eye.clone()).is_ok());
        // dof too small
        assert!(MniwPrior::new(0.5, eye.clone(), DMatrix::zeros(2, 2), eye.clone()).is_err());
        // non-SPD scale
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MniwPrior::new(4.0, bad, DMatrix::zeros(2, 2), eye).is_err());
    }

    #[test]
    fn mode_sequence_counts() {
        let m = ModeSequence::from_states(vec![0, 0, 1, 0], 2);
        assert_eq!(m.count(0, 0), 1);
        assert_eq!(m.count(0, 1), 1);
        assert_eq!(m.count(1, 0), 1);
        assert_eq!(m.total_transitions(), 3);
    }

    #[test]
    fn transition_state_grow_and_remove() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ts = TransitionState::<f64>::from_prior(2, 2, 1.0, 2.0, &mut rng);
        assert_eq!(ts.num_features(), 2);
        ts.grow(&mut rng);
        assert_eq!(ts.num_features(), 3);
        assert!(ts.eta.iter().all(|m| m.iter().all(|&x| x > 0.0)));
        ts.remove_feature(1);
        assert_eq!(ts.num_features(), 2);
    }

    use rand_chacha::ChaCha8Rng;
}
