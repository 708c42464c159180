use serde::{Deserialize, Serialize};

use super::ImageClassifier;
use crate::detect::DefectEstimate;
use crate::error::{Error, Result};
use crate::imaging::{residual_at, AcquisitionMeta, RasterImage};

/// Fitted defects of a trusted, chronologically ordered image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodAgeModel {
    pub defects: Vec<DefectEstimate>,
    /// Number of trusted images the onsets index into.
    pub trusted_len: usize,
    /// Median kernel used to compute residuals.
    pub kernel: usize,
}

impl LikelihoodAgeModel {
    pub fn new(defects: Vec<DefectEstimate>, trusted_len: usize, kernel: usize) -> Result<Self> {
        let m = Self { defects, trusted_len, kernel };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.defects.is_empty() {
            return Err(Error::InvalidModel("likelihood model has no defects".into()));
        }
        if self.trusted_len == 0 {
            return Err(Error::InvalidModel("likelihood model has an empty trusted set".into()));
        }
        for d in &self.defects {
            if !(d.params_before.sigma > 0.0 && d.params_after.sigma > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "defect at ({}, {}) has non-positive sigma",
                    d.coord.row, d.coord.col
                )));
            }
        }
        Ok(())
    }

    /// Start indices of the intervals in which every defect keeps its state.
    pub fn interval_starts(&self) -> Vec<usize> {
        let mut s: Vec<usize> = std::iter::once(0)
            .chain(self.defects.iter().map(|d| d.onset_index_j).filter(|&j| j < self.trusted_len))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Multiply every fitted sigma by `factor`.
    pub fn with_sigma_scaled(&self, factor: f64) -> Self {
        let mut m = self.clone();
        for d in &mut m.defects {
            d.params_before.sigma *= factor;
            d.params_after.sigma *= factor;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlEstimate {
    /// Estimated trusted index: the start of the best interval.
    pub index: usize,
    pub log_likelihood: f64,
    /// `(interval start, log-likelihood)` for every candidate.
    pub candidates: Vec<(usize, f64)>,
}

/// Most likely trusted index for a query with residuals `w` and illumination
/// proxies `illumination` over the model's defects.
pub fn ml_approximate_age(
    model: &LikelihoodAgeModel,
    w: &[f64],
    illumination: &[f64],
    meta: &AcquisitionMeta,
) -> Result<MlEstimate> {
    model.validate()?;
    let n = model.defects.len();
    if w.len() != n || illumination.len() != n {
        return Err(Error::invalid(format!(
            "query covers {} residuals and {} illumination values, model has {n} defects",
            w.len(),
            illumination.len()
        )));
    }
    let tau = meta.tau();
    let mut candidates = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for start in model.interval_starts() {
        let ll: f64 = model
            .defects
            .iter()
            .zip(w.iter().zip(illumination))
            .map(|(d, (&wi, &ii))| d.params_at(start).log_density(wi, ii, tau))
            .sum();
        candidates.push((start, ll));
        if best.is_none_or(|(_, b)| ll > b) {
            best = Some((start, ll));
        }
    }
    let (index, log_likelihood) = best.expect("interval 0 always present");
    Ok(MlEstimate { index, log_likelihood, candidates })
}

/// Residuals and illumination proxies of `image` at the model's defects.
pub fn ml_query_from_image(model: &LikelihoodAgeModel, image: &RasterImage) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut w = Vec::with_capacity(model.defects.len());
    let mut illum = Vec::with_capacity(model.defects.len());
    for d in &model.defects {
        let (r, m) = residual_at(image, d.coord, model.kernel)?;
        w.push(f64::from(r));
        illum.push(f64::from(m));
    }
    Ok((w, illum))
}

/// Age-class view of the likelihood estimator.
#[derive(Debug, Clone)]
pub struct MlImageClassifier {
    pub model: LikelihoodAgeModel,
    pub class_of_index: Vec<usize>,
    pub n_classes: usize,
}

impl MlImageClassifier {
    pub fn new(model: LikelihoodAgeModel, class_of_index: Vec<usize>) -> Result<Self> {
        if class_of_index.len() != model.trusted_len {
            return Err(Error::invalid("class map length differs from the trusted set length"));
        }
        let n_classes = class_of_index.iter().max().map_or(0, |m| m + 1);
        Ok(Self { model, class_of_index, n_classes })
    }
}

impl ImageClassifier for MlImageClassifier {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict(&self, image: &RasterImage, meta: &AcquisitionMeta) -> Result<usize> {
        let (w, illum) = ml_query_from_image(&self.model, image)?;
        let est = ml_approximate_age(&self.model, &w, &illum, meta)?;
        Ok(self.class_of_index[est.index])
    }

    fn reentrant(&self) -> bool {
        true
    }
}
