use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// How the KS p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KsMethod {
    /// Asymptotic Kolmogorov distribution with Stephens' finite-n correction.
    Asymptotic,
    /// Small samples: null distribution of D simulated with a fixed seed.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: KsMethod,
}

const ASYMPTOTIC_MIN_N: usize = 35;
const MC_REPLICATES: usize = 20_000;
const MC_SEED: u64 = 0x4b53_5f4e_554c_4c;

/// One-sample KS statistic `sup |F_n - F|` for a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges quickly for small lambda
        let pi2 = std::f64::consts::PI.powi(2);
        let y = -pi2 / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (m * m * y).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn p_value(d: f64, n: usize) -> (f64, KsMethod) {
    if n >= ASYMPTOTIC_MIN_N {
        let sn = (n as f64).sqrt();
        (kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d), KsMethod::Asymptotic)
    } else {
        // D is distribution-free under the null, so uniforms suffice.
        let mut r = rng::indexed_stream(MC_SEED, "ks-null", n as u64);
        let mut exceed = 0usize;
        let mut buf = vec![0.0; n];
        for _ in 0..MC_REPLICATES {
            for v in buf.iter_mut() {
                *v = r.random::<f64>();
            }
            if ks_statistic(&buf, |u| u) >= d {
                exceed += 1;
            }
        }
        (
            (exceed + 1) as f64 / (MC_REPLICATES + 1) as f64,
            KsMethod::MonteCarlo,
        )
    }
}

/// KS test of the successive gaps of sorted arrival times against `Exp(rate)`.
pub fn exponential_interarrival_test(arrivals: &[f64], rate: f64) -> Result<KsResult> {
    if arrivals.len() < 10 {
        return Err(Error::invalid("exponential test needs at least 10 arrivals"));
    }
    if !(rate > 0.0) {
        return Err(Error::invalid("rate must be positive"));
    }
    if arrivals.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("arrival times are not sorted"));
    }
    let gaps: Vec<f64> = arrivals.windows(2).map(|w| w[1] - w[0]).collect();
    let d = ks_statistic(&gaps, |x| 1.0 - (-rate * x).exp());
    let (p, method) = p_value(d, gaps.len());
    Ok(KsResult {
        statistic: d,
        p_value: p,
        n: gaps.len(),
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    fn arrivals(seed: u64, n: usize, rate: f64) -> Vec<f64> {
        let mut r = rng::indexed_stream(seed, "ks-test", 0);
        let e = Exp::new(rate).unwrap();
        let mut t = 0.0;
        (0..n)
            .map(|_| {
                t += e.sample(&mut r);
                t
            })
            .collect()
    }

    #[test]
    fn kolmogorov_known_quantiles() {
        // classical critical values
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_sf(1.628) - 0.01).abs() < 2e-4);
        assert!((kolmogorov_sf(0.5) - 0.9639).abs() < 1e-3);
        // both branches agree at the switch
        let a = kolmogorov_sf(1.18 - 1e-9);
        let b = kolmogorov_sf(1.18);
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn exponential_gaps_accepted() {
        let mut accepted = 0;
        for seed in 0..100 {
            let r = exponential_interarrival_test(&arrivals(seed, 1001, 3.0), 3.0).unwrap();
            assert!((0.0..=1.0).contains(&r.p_value));
            assert_eq!(r.method, KsMethod::Asymptotic);
            if r.p_value > 0.01 {
                accepted += 1;
            }
        }
        assert!(accepted >= 95, "{accepted}");
    }

    #[test]
    fn constant_gaps_rejected() {
        let t: Vec<f64> = (0..1001).map(|i| i as f64 / 3.0).collect();
        let r = exponential_interarrival_test(&t, 3.0).unwrap();
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn small_samples_use_monte_carlo() {
        let r = exponential_interarrival_test(&arrivals(5, 12, 1.0), 1.0).unwrap();
        assert_eq!(r.method, KsMethod::MonteCarlo);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn errors() {
        assert!(exponential_interarrival_test(&[1.0; 5], 1.0).is_err());
        let mut t = arrivals(1, 20, 1.0);
        t.swap(3, 4);
        assert!(exponential_interarrival_test(&t, 1.0).is_err());
    }
}
