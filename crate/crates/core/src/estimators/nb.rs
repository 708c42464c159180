use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImageClassifier;
use crate::error::{Error, Result};
use crate::imaging::{residual_at, AcquisitionMeta, PixelCoord, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NbVariant {
    /// Normal distribution per class.
    Ne,
    /// Histogram estimate.
    He,
    /// Gaussian kernel density estimate.
    Kde,
}

pub const HISTOGRAM_BINS: usize = 64;
const SIGMA_FLOOR: f64 = 1e-3;
const BANDWIDTH_FLOOR: f64 = 0.5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Class-conditional density of one defect's residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Density {
    Normal { mean: f64, sigma: f64 },
    /// Equal-width bins over `[low, high]`; values outside fall into the
    /// edge bins.
    Histogram { low: f64, high: f64, probabilities: Vec<f64> },
    Kernel { samples: Vec<f64>, bandwidth: f64 },
}

impl Density {
    pub fn log_pdf(&self, x: f64) -> f64 {
        match self {
            Density::Normal { mean, sigma } => {
                let z = (x - mean) / sigma;
                -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
            }
            Density::Histogram { low, high, probabilities } => {
                let bins = probabilities.len();
                let width = (high - low) / bins as f64;
                let bin = (((x - low) / width).floor().max(0.0) as usize).min(bins - 1);
                (probabilities[bin] / width).ln()
            }
            Density::Kernel { samples, bandwidth } => {
                let terms: Vec<f64> = samples
                    .iter()
                    .map(|s| {
                        let z = (x - s) / bandwidth;
                        -0.5 * z * z
                    })
                    .collect();
                let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
                m + sum.ln() - (samples.len() as f64 * bandwidth).ln() - LN_SQRT_2PI
            }
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn silverman(v: &[f64]) -> f64 {
    let (_, sd) = mean_std(v);
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * (v.len() as f64).powf(-0.2)).max(BANDWIDTH_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBModel {
    pub variant: NbVariant,
    pub n_classes: usize,
    pub priors: Vec<f64>,
    /// `densities[defect][class]`.
    pub densities: Vec<Vec<Density>>,
}

/// Fit class-conditional densities of each feature (defect residual).
/// `features[i]` holds the residuals of sample `i` over all defects.
pub fn nb_train(variant: NbVariant, features: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<NBModel> {
    if features.len() != labels.len() {
        return Err(Error::invalid("feature and label counts differ"));
    }
    if n_classes < 2 {
        return Err(Error::invalid("naive Bayes needs at least two classes"));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::invalid("naive Bayes needs at least one feature"));
    }
    if features.iter().any(|f| f.len() != dim || f.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("features must be finite and of equal length"));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::invalid(format!("label {l} outside {n_classes} classes")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::invalid(format!("class {c} has fewer than two samples")));
    }
    let total = labels.len() as f64;
    let priors = counts.iter().map(|&n| n as f64 / total).collect();

    let densities = (0..dim)
        .into_par_iter()
        .map(|d| {
            let column: Vec<f64> = features.iter().map(|f| f[d]).collect();
            let (lo, hi) = column
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
            (0..n_classes)
                .map(|c| {
                    let v: Vec<f64> = column.iter().zip(labels).filter(|(_, &l)| l == c).map(|(&x, _)| x).collect();
                    match variant {
                        NbVariant::Ne => {
                            let (mean, sd) = mean_std(&v);
                            Density::Normal { mean, sigma: sd.max(SIGMA_FLOOR) }
                        }
                        NbVariant::He => {
                            let width = (hi - lo) / HISTOGRAM_BINS as f64;
                            let mut h = vec![1.0; HISTOGRAM_BINS];
                            for x in &v {
                                h[(((x - lo) / width) as usize).min(HISTOGRAM_BINS - 1)] += 1.0;
                            }
                            let s: f64 = h.iter().sum();
                            Density::Histogram { low: lo, high: hi, probabilities: h.iter().map(|c| c / s).collect() }
                        }
                        NbVariant::Kde => Density::Kernel { bandwidth: silverman(&v), samples: v },
                    }
                })
                .collect()
        })
        .collect();
    Ok(NBModel { variant, n_classes, priors, densities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbPrediction {
    pub class: usize,
    pub posterior: Vec<f64>,
}

pub fn nb_classify(model: &NBModel, features: &[f64]) -> Result<NbPrediction> {
    if features.len() != model.densities.len() {
        return Err(Error::invalid(format!(
            "query has {} features, model expects {}",
            features.len(),
            model.densities.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query features must be finite"));
    }
    let mut log_post: Vec<f64> = model.priors.iter().map(|p| p.ln()).collect();
    for (dens, &x) in model.densities.iter().zip(features) {
        for (lp, d) in log_post.iter_mut().zip(dens) {
            *lp += d.log_pdf(x);
        }
    }
    let m = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_post.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let posterior: Vec<f64> = unnorm.iter().map(|u| u / z).collect();
    let mut class = 0;
    for (c, p) in posterior.iter().enumerate() {
        if *p > posterior[class] {
            class = c;
        }
    }
    Ok(NbPrediction { class, posterior })
}

/// Naive Bayes over residuals at fixed defect sites.
#[derive(Debug, Clone)]
pub struct NbImageClassifier {
    pub model: NBModel,
    pub coords: Vec<PixelCoord>,
    pub kernel: usize,
}

impl NbImageClassifier {
    pub fn features(&self, image: &RasterImage) -> Result<Vec<f64>> {
        self.coords
            .iter()
            .map(|&c| residual_at(image, c, self.kernel).map(|(r, _)| f64::from(r)))
            .collect()
    }
}

impl ImageClassifier for NbImageClassifier {
    fn n_classes(&self) -> usize {
        self.model.n_classes
    }

    fn predict(&self, image: &RasterImage, _meta: &AcquisitionMeta) -> Result<usize> {
        Ok(nb_classify(&self.model, &self.features(image)?)?.class)
    }

    fn reentrant(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    const VARIANTS: [NbVariant; 3] = [NbVariant::Ne, NbVariant::He, NbVariant::Kde];

    fn separated(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::stream(seed, "nb-test");
        let noise = Normal::new(0.0, 2.0).unwrap();
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..400 {
            let c = i % 2;
            let base = if c == 0 { 0.0 } else { 150.0 };
            f.push(vec![base + noise.sample(&mut r), 10.0 + noise.sample(&mut r)]);
            l.push(c);
        }
        (f, l)
    }

    #[test]
    fn separated_clusters_confident() {
        let (f, l) = separated(1);
        for v in VARIANTS {
            let m = nb_train(v, &f, &l, 2).unwrap();
            let mut confidence = 0.0;
            for (x, &y) in f.iter().zip(&l) {
                let p = nb_classify(&m, x).unwrap();
                assert_eq!(p.class, y);
                assert!((p.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                confidence += p.posterior[y] / f.len() as f64;
            }
            // Laplace smoothing caps the histogram posterior in sparse tail bins
            let floor = if v == NbVariant::He { 0.95 } else { 0.99 };
            assert!(confidence > floor, "{v:?} {confidence}");
        }
    }

    #[test]
    fn identical_classes_give_priors() {
        let f: Vec<Vec<f64>> = (0..30).map(|i| vec![f64::from(i % 5)]).collect();
        // both classes see 0..5 repeated
        let l: Vec<usize> = (0..30).map(|i| usize::from(i >= 10)).collect();
        let m = nb_train(NbVariant::Ne, &f, &l, 2).unwrap();
        let p = nb_classify(&m, &[2.5]).unwrap();
        assert!((p.posterior[0] - m.priors[0]).abs() < 1e-6);
        assert!((m.priors[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_smoothing_has_no_zero_likelihood() {
        let (f, l) = separated(2);
        let m = nb_train(NbVariant::He, &f, &l, 2).unwrap();
        let p = nb_classify(&m, &[75.0, 10.0]).unwrap();
        assert!(p.posterior.iter().all(|&q| q > 0.0 && q.is_finite()));
        let far = nb_classify(&m, &[1e6, -1e6]).unwrap();
        assert!(far.posterior.iter().all(|q| q.is_finite()));
    }

    #[test]
    fn densities_normalised() {
        let (f, l) = separated(3);
        for v in VARIANTS {
            let m = nb_train(v, &f, &l, 2).unwrap();
            for d in m.densities.iter().flatten() {
                if let Density::Histogram { probabilities, .. } = d {
                    assert!((probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
                // histograms clamp outside the fitted range, so integrate over it only
                let (a, b, n) = match d {
                    Density::Histogram { low, high, .. } => (*low, *high, 600_000),
                    _ => (-200.0, 400.0, 600_000),
                };
                let h = (b - a) / n as f64;
                let integral: f64 = (0..n).map(|i| d.log_pdf(a + (i as f64 + 0.5) * h).exp() * h).sum();
                let tol = if matches!(d, Density::Histogram { .. }) { 1e-3 } else { 1e-6 };
                assert!((integral - 1.0).abs() < tol, "{v:?} {integral}");
            }
        }
    }

    #[test]
    fn input_validation() {
        assert!(nb_train(NbVariant::Ne, &[vec![1.0], vec![2.0]], &[0, 1], 2).is_err());
        let (f, l) = separated(4);
        let m = nb_train(NbVariant::Ne, &f, &l, 2).unwrap();
        assert!(nb_classify(&m, &[1.0]).is_err());
        let zero_var: Vec<Vec<f64>> = (0..6).map(|i| vec![f64::from(i / 3)]).collect();
        let m = nb_train(NbVariant::Ne, &zero_var, &[0, 0, 0, 1, 1, 1], 2).unwrap();
        assert!(matches!(m.densities[0][0], Density::Normal { sigma, .. } if sigma == SIGMA_FLOOR));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn posterior_invariant_to_feature_order(seed in 0u64..500, q0 in -20.0f64..170.0, q1 in 0.0f64..20.0) {
            let (f, l) = separated(seed);
            let swapped: Vec<Vec<f64>> = f.iter().map(|x| vec![x[1], x[0]]).collect();
            for v in VARIANTS {
                let a = nb_classify(&nb_train(v, &f, &l, 2).unwrap(), &[q0, q1]).unwrap();
                let b = nb_classify(&nb_train(v, &swapped, &l, 2).unwrap(), &[q1, q0]).unwrap();
                prop_assert_eq!(a.class, b.class);
                for (x, y) in a.posterior.iter().zip(&b.posterior) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}
