//! Metrics and goodness-of-fit tests used across the toolkit.

pub mod gamma;
mod ks;

pub use gamma::chi_square_sf;
pub use ks::{exponential_interarrival_test, kolmogorov_sf, ks_statistic, KsMethod, KsResult};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named scalar with optional auxiliary values (p-values, per-class scores).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auxiliary: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            auxiliary: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.auxiliary.insert(key.into(), value);
        self
    }
}

/// Mean absolute error between predicted and true indices.
pub fn mae(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predictions vs {} truths",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("mae of empty vectors"));
    }
    let s: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / predicted.len() as f64)
}

/// MAE divided by the mean gap between successive defect onsets.
pub fn relative_estimation_error(mae_value: f64, onset_times: &[f64]) -> Result<f64> {
    if onset_times.len() < 2 {
        return Err(Error::invalid("relative estimation error needs at least two onsets"));
    }
    let mut t = onset_times.to_vec();
    t.sort_by(f64::total_cmp);
    let mean_gap = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if mean_gap <= 0.0 {
        return Err(Error::invalid("onsets coincide; mean gap is zero"));
    }
    Ok(mae_value / mean_gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
    /// The class never occurs in the truth vector; its f1 is reported as 0.
    pub absent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassScore>,
}

pub fn classification_report(
    predicted: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<ClassificationReport> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid("prediction and truth lengths differ"));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("empty classification report"));
    }
    let n_classes = n_classes
        .max(predicted.iter().chain(truth).max().map_or(0, |m| m + 1));
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fnc = vec![0usize; n_classes];
    let mut correct = 0;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fnc[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class = (0..n_classes)
        .map(|c| {
            let support = tp[c] + fnc[c];
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], support);
            let f1 = ratio(2 * tp[c], 2 * tp[c] + fp[c] + fnc[c]);
            ClassScore {
                class: c,
                f1: if support == 0 { 0.0 } else { f1 },
                precision,
                recall,
                support,
                absent: support == 0,
            }
        })
        .collect();
    Ok(ClassificationReport {
        accuracy: correct as f64 / predicted.len() as f64,
        per_class,
    })
}

/// Pearson chi-square goodness of fit; `dof = bins - 1`.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() {
        return Err(Error::invalid("observed and expected bin counts differ"));
    }
    if observed.len() < 2 {
        return Err(Error::invalid("chi-square needs at least two bins"));
    }
    if let Some(i) = expected.iter().position(|&e| e <= 0.0) {
        return Err(Error::invalid(format!("expected count of bin {i} is not positive")));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let p = chi_square_sf(stat, (observed.len() - 1) as f64);
    Ok((stat, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `t`.
pub fn growth_regression(t: &[f64], y: &[f64]) -> Result<LinearFit> {
    if t.len() != y.len() {
        return Err(Error::invalid("time and count vectors differ in length"));
    }
    if t.len() < 3 {
        return Err(Error::invalid("growth regression needs at least three points"));
    }
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - mt).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::invalid("time vector is constant"));
    }
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sse: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Pearson correlation coefficient; `None` if either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len()) as f64;
    if n < 2.0 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 1.5);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn relative_error_examples() {
        // MAE 76.97 over a mean onset gap of 45.01 gives 1.71.
        let onsets: Vec<f64> = (0..5).map(|i| i as f64 * 45.01).collect();
        let r = relative_estimation_error(76.97, &onsets).unwrap();
        assert!((r - 1.71).abs() < 0.005, "{r}");
        assert_eq!(relative_estimation_error(0.0, &onsets).unwrap(), 0.0);
        let doubled: Vec<f64> = onsets.iter().map(|t| t * 2.0).collect();
        assert_relative_eq!(relative_estimation_error(10.0, &doubled).unwrap(), 0.5 * relative_estimation_error(10.0, &onsets).unwrap());
        assert!(relative_estimation_error(1.0, &[3.0]).is_err());
    }

    #[test]
    fn classification_examples() {
        let t = [0, 1, 2, 3, 4, 0, 1, 2, 3, 4];
        let perfect = classification_report(&t, &t, 5).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert!(perfect.per_class.iter().all(|c| c.f1 == 1.0));

        let single = classification_report(&[0; 10], &t, 5).unwrap();
        assert_eq!(single.accuracy, 0.2);

        // TP=8, FP=2, FN=2, TN=8 for class 1
        let mut truth = vec![1; 10];
        truth.extend(vec![0; 10]);
        let mut pred = vec![1; 8];
        pred.extend([0, 0]);
        pred.extend([1, 1]);
        pred.extend(vec![0; 8]);
        let r = classification_report(&pred, &truth, 2).unwrap();
        assert_relative_eq!(r.per_class[1].f1, 0.8, epsilon = 1e-12);

        let absent = classification_report(&[0, 0], &[0, 0], 3).unwrap();
        assert!(absent.per_class[2].absent);
        assert_eq!(absent.per_class[2].f1, 0.0);
    }

    #[test]
    fn chi_square_examples() {
        let (s, p) = chi_square_gof(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!((s, p), (0.0, 1.0));
        // two bins: statistic = 2 a^2 / 50
        let a = 5.0 * 3.841_458_820_694_124f64.sqrt();
        let (s, p) = chi_square_gof(&[50.0 + a, 50.0 - a], &[50.0, 50.0]).unwrap();
        assert_relative_eq!(s, 3.841_458_820_694_124, epsilon = 1e-9);
        assert_relative_eq!(p, 0.05, epsilon = 1e-8);
        assert!(chi_square_gof(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(chi_square_gof(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn regression_examples() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = t.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = growth_regression(&t, &y).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        assert!(growth_regression(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(growth_regression(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn mae_shift_invariant(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..20), s in -1e3f64..1e3) {
            let (p, t): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let ps: Vec<f64> = p.iter().map(|x| x + s).collect();
            let ts: Vec<f64> = t.iter().map(|x| x + s).collect();
            prop_assert!((mae(&p, &t).unwrap() - mae(&ps, &ts).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn chi_square_monotone_in_deviation(e in prop::collection::vec(1.0f64..100.0, 2..10), i in any::<prop::sample::Index>(), d1 in 0.0f64..50.0, d2 in 0.0f64..50.0) {
            let k = i.index(e.len());
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let mut a = e.clone();
            a[k] += lo;
            let mut b = e.clone();
            b[k] += hi;
            let (sa, _) = chi_square_gof(&a, &e).unwrap();
            let (sb, _) = chi_square_gof(&b, &e).unwrap();
            prop_assert!(sa <= sb);
        }

        #[test]
        fn slope_time_shift_invariant(y in prop::collection::vec(-1e3f64..1e3, 3..30), s in -1e4f64..1e4) {
            let t: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + s).collect();
            let a = growth_regression(&t, &y).unwrap();
            let b = growth_regression(&ts, &y).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-6 * (1.0 + a.slope.abs()));
        }
    }
}
