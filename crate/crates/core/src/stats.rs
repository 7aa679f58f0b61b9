//! Goodness-of-fit and z statistics used to compare simulation with theory.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Fewest samples accepted by the goodness-of-fit tests.
pub const MIN_GOF_SAMPLES: usize = 100;
/// Smallest expected count in a pooled chi-square bin.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn need(got: usize) -> Result<()> {
    if got < MIN_GOF_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_GOF_SAMPLES, got });
    }
    Ok(())
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let d = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    d.sf(statistic)
}

/// Histogram of non-negative integer samples.
pub fn histogram(samples: &[u64]) -> Vec<u64> {
    let len = samples.iter().max().map_or(0, |&m| m as usize + 1);
    let mut h = vec![0u64; len];
    for &s in samples {
        h[s as usize] += 1;
    }
    h
}

/// Pearson chi-square of `counts[v]` against `probs[v]`.
///
/// Values at or beyond `probs.len()` form one tail bin with the remaining mass.
/// Adjacent bins are merged left to right until each expects at least [`MIN_EXPECTED`].
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<TestOutcome> {
    let n: u64 = counts.iter().sum();
    need(n as usize)?;
    let n = n as f64;
    let covered: f64 = probs.iter().sum();
    let mut obs: Vec<f64> = Vec::with_capacity(probs.len() + 1);
    let mut exp: Vec<f64> = Vec::with_capacity(probs.len() + 1);
    for (v, &p) in probs.iter().enumerate() {
        obs.push(counts.get(v).copied().unwrap_or(0) as f64);
        exp.push(n * p);
    }
    obs.push(counts.iter().skip(probs.len()).sum::<u64>() as f64);
    exp.push(n * (1.0 - covered).max(0.0));

    let (mut bo, mut be) = (Vec::new(), Vec::new());
    let (mut acc_o, mut acc_e) = (0.0, 0.0);
    for (o, e) in obs.into_iter().zip(exp) {
        acc_o += o;
        acc_e += e;
        if acc_e >= MIN_EXPECTED {
            bo.push(acc_o);
            be.push(acc_e);
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        match (bo.last_mut(), be.last_mut()) {
            (Some(o), Some(e)) => {
                *o += acc_o;
                *e += acc_e;
            }
            _ => {
                bo.push(acc_o);
                be.push(acc_e);
            }
        }
    }
    let statistic: f64 = bo
        .iter()
        .zip(&be)
        .map(|(&o, &e)| if e > 0.0 { (o - e) * (o - e) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = be.len().saturating_sub(1);
    Ok(TestOutcome { statistic, dof, p_value: chi_square_p(statistic, dof) })
}

/// Chi-square test of `samples` against a pmf on the non-negative integers.
pub fn gof_pmf(samples: &[u64], pmf: impl Fn(u64) -> f64) -> Result<TestOutcome> {
    need(samples.len())?;
    let counts = histogram(samples);
    let n = samples.len() as f64;
    // extend the explicit range until the remaining mass is negligible
    let mut probs = Vec::new();
    let mut mass = 0.0;
    let mut v = 0u64;
    while (v as usize) < counts.len().max(1) || (n * (1.0 - mass) >= MIN_EXPECTED && v < 1 << 20) {
        let p = pmf(v);
        probs.push(p);
        mass += p;
        v += 1;
    }
    chi_square_gof(&counts, &probs)
}

/// Chi-square test against the geometric law `P(N = n) = p (1 - p)^{n-1}`, `n >= 1`.
pub fn gof_geometric(samples: &[u64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("geometric parameter must be in (0,1], got {p}")));
    }
    Ok(gof_pmf(samples, |n| if n == 0 { 0.0 } else { p * (1.0 - p).powi(n as i32 - 1) })?.p_value)
}

/// Two-sample chi-square homogeneity test on integer-valued samples.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestOutcome> {
    need(a.len().min(b.len()))?;
    let (ha, hb) = (histogram(a), histogram(b));
    let len = ha.len().max(hb.len());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let frac_a = na / (na + nb);
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut acc_a, mut acc_b) = (0.0, 0.0);
    for v in 0..len {
        acc_a += ha.get(v).copied().unwrap_or(0) as f64;
        acc_b += hb.get(v).copied().unwrap_or(0) as f64;
        let tot = acc_a + acc_b;
        if tot * frac_a.min(1.0 - frac_a) >= MIN_EXPECTED {
            bins.push((acc_a, acc_b));
            acc_a = 0.0;
            acc_b = 0.0;
        }
    }
    if acc_a + acc_b > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc_a;
                last.1 += acc_b;
            }
            None => bins.push((acc_a, acc_b)),
        }
    }
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let statistic: f64 = bins
        .iter()
        .map(|&(x, y)| {
            let d = ka * x - kb * y;
            d * d / (x + y)
        })
        .sum();
    let dof = bins.len().saturating_sub(1);
    Ok(TestOutcome { statistic, dof, p_value: chi_square_p(statistic, dof) })
}

/// Asymptotic Kolmogorov tail `P(K > lambda)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestOutcome> {
    need(samples.len())?;
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = cdf(v);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    Ok(TestOutcome { statistic: d, dof: 0, p_value: ks_p(d, n) })
}

/// KS test against Exp(1).
pub fn ks_exponential(samples: &[f64]) -> Result<f64> {
    Ok(ks_one_sample(samples, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })?.p_value)
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    need(a.len().min(b.len()))?;
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(TestOutcome { statistic: d, dof: 0, p_value: ks_p(d, na * nb / (na + nb)) })
}

/// `(estimate - theory) / se`; zero when both coincide.
pub fn welch_z(estimate: f64, se: f64, theory: f64) -> f64 {
    let diff = estimate - theory;
    if diff == 0.0 {
        0.0
    } else if se > 0.0 {
        diff / se
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometric<R: Rng>(p: f64, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        1 + ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u64
    }

    #[test]
    fn geometric_gof_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = 0.2;
        let rejects = (0..200)
            .filter(|_| {
                let s: Vec<u64> = (0..1000).map(|_| geometric(p, &mut rng)).collect();
                gof_geometric(&s, p).unwrap() < 0.05
            })
            .count();
        let frac = rejects as f64 / 200.0;
        assert!((0.01..=0.12).contains(&frac), "rejection fraction {frac}");
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        assert!(gof_geometric(&[7; 500], 0.3).unwrap() < 1e-12);
        assert!(ks_exponential(&[1.0; 500]).unwrap() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            gof_geometric(&[1; 99], 0.5),
            Err(Error::InsufficientSamples { needed: 100, got: 99 })
        ));
        assert!(ks_exponential(&[1.0; 10]).is_err());
        assert!(gof_geometric(&[1; 200], 0.0).is_err());
    }

    #[test]
    fn exact_match_gives_zero_z() {
        assert_eq!(welch_z(1.25, 0.1, 1.25), 0.0);
        assert_eq!(welch_z(1.25, 0.0, 1.25), 0.0);
        assert!((welch_z(1.5, 0.25, 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // P(K > 1.36) ~ 0.0494, P(K > 1.63) ~ 0.0098
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 5e-4);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 3e-4);
    }

    #[test]
    fn ks_accepts_true_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
        assert!(ks_exponential(&s).unwrap() > 0.001);
        let t: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(rand_distr::Exp1)).collect();
        assert!(ks_two_sample(&s, &t).unwrap().p_value > 0.001);
        let shifted: Vec<f64> = t.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&s, &shifted).unwrap().p_value < 1e-6);
    }

    #[test]
    fn two_sample_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: Vec<u64> = (0..5000).map(|_| geometric(0.3, &mut rng)).collect();
        let b: Vec<u64> = (0..7000).map(|_| geometric(0.3, &mut rng)).collect();
        let c: Vec<u64> = (0..7000).map(|_| geometric(0.4, &mut rng)).collect();
        assert!(chi_square_two_sample(&a, &b).unwrap().p_value > 0.001);
        assert!(chi_square_two_sample(&a, &c).unwrap().p_value < 1e-6);
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
