//! Scalar abstraction so the model and samplers work at `f32` or `f64`.

use nalgebra::RealField;
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type used throughout the model.
///
/// Random draws are routed through this trait so generic code never needs
/// distribution trait bounds. The `f32` impl draws in double precision and
/// rounds, keeping one code path per distribution.
pub trait Scalar:
    RealField + SampleUniform + Serialize + DeserializeOwned + Copy + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn of_usize(x: usize) -> Self {
        Self::of(x as f64)
    }
    /// Natural log of the gamma function.
    fn ln_gamma_fn(self) -> Self {
        Self::of(statrs::function::gamma::ln_gamma(self.to_f64()))
    }
    fn draw_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn draw_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self;
    /// Uniform draw in [0, 1).
    fn draw_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn is_finite_val(self) -> bool {
        self.to_f64().is_finite()
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn draw_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn draw_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self {
        Gamma::new(shape, scale)
            .expect("gamma parameters must be positive")
            .sample(rng)
    }
    fn draw_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn draw_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let x: f64 = StandardNormal.sample(rng);
        x as f32
    }
    fn draw_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self {
        f64::draw_gamma(shape as f64, scale as f64, rng) as f32
    }
    fn draw_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>() as f32
    }
}

/// Poisson draw with a double-precision rate.
pub fn draw_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let p: f64 = Poisson::new(lambda)
        .expect("poisson rate must be positive and finite")
        .sample(rng);
    p as u64
}

/// Log pmf of a Poisson(lambda) variate.
pub fn poisson_log_pmf(k: u64, lambda: f64) -> f64 {
    let kf = k as f64;
    kf * lambda.ln() - lambda - statrs::function::gamma::ln_gamma(kf + 1.0)
}

/// Chi-squared draw via the gamma representation; supports fractional dof.
pub fn draw_chi_squared<T: Scalar, R: Rng + ?Sized>(dof: T, rng: &mut R) -> T {
    T::draw_gamma(dof / T::of(2.0), T::of(2.0), rng)
}

/// log(sum(exp(x))) with max-shift, -inf safe.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let mut m = T::of(f64::NEG_INFINITY);
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if !m.is_finite_val() {
        return m;
    }
    let mut s = T::zero();
    for &x in xs {
        s += (x - m).exp();
    }
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_gamma_matches_factorials() {
        assert_relative_eq!(5.0f64.ln_gamma_fn(), 24.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(1.0f64.ln_gamma_fn(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_sum_exp_shifted() {
        let xs = [1000.0f64, 1000.0];
        assert_relative_eq!(log_sum_exp(&xs), 1000.0 + 2.0f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn gamma_one_is_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| f64::draw_gamma(1.0, 1.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn poisson_log_pmf_ratio() {
        // pmf(1; 0.2) / pmf(0; 0.2) = 0.2
        let r = (poisson_log_pmf(1, 0.2) - poisson_log_pmf(0, 0.2)).exp();
        assert_relative_eq!(r, 0.2, epsilon = 1e-12);
    }
}
