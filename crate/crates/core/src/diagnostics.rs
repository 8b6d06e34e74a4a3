//! Small statistical test utilities used by validation code: one- and
//! two-sample Kolmogorov-Smirnov tests and a chi-square goodness-of-fit test.

/// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2).
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test against a CDF; returns the asymptotic p-value.
pub fn ks_test_cdf<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
    }
    let sqrt_n = n.sqrt();
    kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

/// Two-sample KS test; returns the asymptotic p-value.
pub fn ks_test_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xa: Vec<f64> = a.to_vec();
    let mut xb: Vec<f64> = b.to_vec();
    xa.sort_by(|u, v| u.partial_cmp(v).unwrap());
    xb.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na as f64 + nb as f64);
    let sqrt_ne = ne.sqrt();
    kolmogorov_sf((sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d)
}

/// Chi-square goodness-of-fit p-value for observed counts vs expected counts.
/// Degrees of freedom = (#bins with expected > 0) - 1.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let mut stat = 0.0;
    let mut bins = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e > 0.0 {
            stat += (o as f64 - e).powi(2) / e;
            bins += 1;
        }
    }
    if bins <= 1 {
        return 1.0;
    }
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let dist = ChiSquared::new((bins - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn ks_accepts_matching_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f64> = (0..5000)
            .map(|_| crate::num::Scalar::draw_std_normal(&mut rng))
            .collect();
        let dist = Normal::new(0.0, 1.0).unwrap();
        let p = ks_test_cdf(&samples, |x| dist.cdf(x));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn ks_rejects_shifted_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<f64> = (0..5000)
            .map(|_| <f64 as crate::num::Scalar>::draw_std_normal(&mut rng) + 0.3)
            .collect();
        let dist = Normal::new(0.0, 1.0).unwrap();
        let p = ks_test_cdf(&samples, |x| dist.cdf(x));
        assert!(p < 1e-6, "p = {p}");
    }

    #[test]
    fn two_sample_ks_same_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..4000)
            .map(|_| <f64 as crate::num::Scalar>::draw_std_normal(&mut rng))
            .collect();
        let b: Vec<f64> = (0..4000)
            .map(|_| <f64 as crate::num::Scalar>::draw_std_normal(&mut rng))
            .collect();
        assert!(ks_test_two_sample(&a, &b) > 0.01);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let observed = [105u64, 98, 97, 100];
        let expected = [100.0; 4];
        assert!(chi_square_gof(&observed, &expected) > 0.5);
        let bad = [300u64, 10, 45, 45];
        assert!(chi_square_gof(&bad, &expected) < 1e-10);
    }
}
