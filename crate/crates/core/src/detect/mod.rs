//! Defect localisation from dark fields and onset/parameter estimation from
//! chronologically ordered residual series.

mod linfit;
mod spatial;

pub use linfit::{least_squares, LinearSolution};
pub use spatial::{
    inter_defect_distance_histogram, sector_uniformity_test, DistanceBaseline, DistanceHistogram, SectorTest,
    TestStatus,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{bayer_color, residual_at, AcquisitionMeta, PixelCoord, RasterImage};

/// Flag every site whose mean value across `dfis` exceeds `threshold`.
pub fn detect_defects_dfi(dfis: &[RasterImage], threshold: f64) -> Result<Vec<PixelCoord>> {
    let first = dfis.first().ok_or_else(|| Error::invalid("no dark-field images given"))?;
    if let Some(i) = dfis.iter().position(|d| !d.same_shape(first)) {
        return Err(Error::invalid(format!("dark-field image {i} differs in shape from image 0")));
    }
    let n = dfis.len() as f64;
    let ch = first.channels();
    let mut out = Vec::new();
    for idx in 0..first.data().len() {
        let sum: f64 = dfis.iter().map(|d| f64::from(d.data()[idx])).sum();
        if sum / n > threshold {
            let site = idx / ch;
            out.push(PixelCoord::new(site / first.width(), site % first.width(), idx % ch));
        }
    }
    Ok(out)
}

/// Map a mosaic site to the demosaiced RGB channel that carries its own
/// measurement.
pub fn rgb_site(mosaic: PixelCoord) -> PixelCoord {
    PixelCoord::new(mosaic.row, mosaic.col, bayer_color(mosaic.row, mosaic.col) as usize)
}

/// Residuals of one site over chronologically ordered images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub coord: PixelCoord,
    pub values: Vec<f64>,
    /// Median-filtered value at the site, used as the illumination proxy.
    pub illumination: Vec<f64>,
    pub metas: Vec<AcquisitionMeta>,
}

impl ResidualSeries {
    pub fn new(coord: PixelCoord, values: Vec<f64>, illumination: Vec<f64>, metas: Vec<AcquisitionMeta>) -> Result<Self> {
        if values.len() != illumination.len() || values.len() != metas.len() {
            return Err(Error::invalid("series values, illumination and metadata differ in length"));
        }
        if values.len() < 2 {
            return Err(Error::invalid("a residual series needs at least two images"));
        }
        if metas.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::invalid("series images are not in chronological order"));
        }
        Ok(Self { coord, values, illumination, metas })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn taus(&self) -> Vec<f64> {
        self.metas.iter().map(AcquisitionMeta::tau).collect()
    }
}

/// Residual series for `coords` over chronologically ordered images.
pub fn extract_residual_series(
    images: &[RasterImage],
    metas: &[AcquisitionMeta],
    coords: &[PixelCoord],
    kernel: usize,
) -> Result<Vec<ResidualSeries>> {
    if images.len() != metas.len() {
        return Err(Error::invalid(format!("{} images but {} metadata records", images.len(), metas.len())));
    }
    if metas.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::invalid("images are not in chronological order"));
    }
    if let Some(i) = images.iter().position(|im| !im.same_shape(&images[0])) {
        return Err(Error::invalid(format!("image {i} differs in shape from image 0")));
    }
    if let Some(img) = images.first() {
        if let Some(c) = coords.iter().find(|c| !img.contains(**c)) {
            return Err(Error::invalid(format!(
                "coordinate ({}, {}, {}) lies outside the {}x{}x{} image",
                c.row,
                c.col,
                c.channel,
                img.width(),
                img.height(),
                img.channels()
            )));
        }
    }
    coords
        .par_iter()
        .map(|&coord| {
            let mut values = Vec::with_capacity(images.len());
            let mut illum = Vec::with_capacity(images.len());
            for img in images {
                let (r, m) = residual_at(img, coord, kernel)?;
                values.push(f64::from(r));
                illum.push(f64::from(m));
            }
            ResidualSeries::new(coord, values, illum, metas.to_vec())
        })
        .collect()
}

/// Parameters of the residual model `I K + tau D + c` with Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectParams {
    pub k: f64,
    pub d: f64,
    pub c: f64,
    pub sigma: f64,
}

impl DefectParams {
    pub fn mean(&self, illumination: f64, tau: f64) -> f64 {
        illumination * self.k + tau * self.d + self.c
    }

    pub fn log_density(&self, w: f64, illumination: f64, tau: f64) -> f64 {
        let z = (w - self.mean(illumination, tau)) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    pub coord: PixelCoord,
    /// First index in the defective state; equal to `series_len` when the
    /// pixel never turns defective within the series.
    pub onset_index_j: usize,
    pub series_len: usize,
    pub params_before: DefectParams,
    pub params_after: DefectParams,
    /// Penalised log-likelihood of the chosen split.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_before: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_after: Vec<String>,
}

impl DefectEstimate {
    pub fn params_at(&self, index: usize) -> &DefectParams {
        if index >= self.onset_index_j {
            &self.params_after
        } else {
            &self.params_before
        }
    }
}

/// Lower bound on the fitted noise level of a side.
pub const SIGMA_FLOOR: f64 = 0.5;

/// The PRNU term is dropped on a side whose illumination proxy, after
/// removing what the other regressors explain, varies by less than this
/// many digital levels (RMS). Below that, `I*K` with an absurd `K` can
/// imitate a step in a handful of integer residuals.
pub const MIN_ILLUMINATION_RMS: f64 = 2.0;

struct SideFit {
    params: DefectParams,
    log_likelihood: f64,
    dropped: Vec<String>,
}

#[derive(Clone, Copy)]
enum Side {
    Before,
    After,
}

impl Side {
    /// Nominal parameter count: regressors plus sigma.
    fn parameters(self) -> usize {
        match self {
            Side::Before => 2,
            Side::After => 4,
        }
    }
}

fn fit_side(
    series: &ResidualSeries,
    taus: &[f64],
    range: std::ops::Range<usize>,
    side: Side,
    centre: f64,
) -> Option<SideFit> {
    let m = range.len();
    if m == 0 {
        return None;
    }
    let y = &series.values[range.clone()];
    // centring keeps the fit unchanged when every image gains the same offset
    let illum: Vec<f64> = series.illumination[range.clone()].iter().map(|i| i - centre).collect();
    let (names, mut columns): (Vec<&str>, Vec<Vec<f64>>) = match side {
        Side::Before => (vec!["K"], vec![illum]),
        Side::After => (vec!["c", "D", "K"], vec![vec![1.0; m], taus[range].to_vec(), illum]),
    };
    // Keep at least one residual degree of freedom once there are two points.
    let limit = if m == 1 { 1 } else { m - 1 };
    let mut dropped: Vec<String> = Vec::new();
    while columns.len() > limit {
        columns.pop();
    }
    let has_k = columns.len() == names.len();
    if let Some((k_col, others)) = columns.split_last_mut().filter(|_| has_k) {
        let unexplained = least_squares(others, k_col).rss;
        if (unexplained / m as f64).sqrt() < MIN_ILLUMINATION_RMS {
            k_col.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let fit = least_squares(&columns, y);
    for (i, name) in names.iter().enumerate() {
        if i >= fit.kept.len() || !fit.kept[i] {
            dropped.push((*name).to_string());
        }
    }
    let b = |i: usize| fit.coefficients.get(i).copied().unwrap_or(0.0);
    let sigma = (fit.rss / m as f64).sqrt().max(SIGMA_FLOOR);
    let log_likelihood = -0.5 * m as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - fit.rss / (2.0 * sigma * sigma);
    let params = match side {
        Side::Before => DefectParams { k: b(0), d: 0.0, c: -b(0) * centre, sigma },
        Side::After => DefectParams { k: b(2), d: b(1), c: b(0) - b(2) * centre, sigma },
    };
    Some(SideFit { params, log_likelihood, dropped })
}

/// Exhaustive search over the onset index with a per-side Gaussian fit.
///
/// Before the onset the site behaves like a good pixel (`I K`); from
/// the onset on it follows `I K + tau D + c`. Candidates are compared by
/// log-likelihood minus `0.5 p ln n`, where `p` counts the parameters of the
/// non-empty sides and the onset itself. Ties go to the smaller index.
pub fn estimate_onset_and_params(series: &ResidualSeries) -> Result<DefectEstimate> {
    let n = series.len();
    if n < 4 {
        return Err(Error::invalid(format!("onset estimation needs at least 4 images, got {n}")));
    }
    let taus = series.taus();
    let ln_n = (n as f64).ln();
    let centre = series.illumination.iter().sum::<f64>() / n as f64;
    let mut best: Option<(f64, usize, SideFit, SideFit)> = None;
    for j in 0..=n {
        let before = fit_side(series, &taus, 0..j, Side::Before, centre);
        let after = fit_side(series, &taus, j..n, Side::After, centre);
        let mut p = 0;
        let mut ll = 0.0;
        if let Some(b) = &before {
            p += Side::Before.parameters();
            ll += b.log_likelihood;
        }
        if let Some(a) = &after {
            p += Side::After.parameters();
            ll += a.log_likelihood;
        }
        if before.is_some() && after.is_some() {
            p += 1;
        }
        let score = ll - 0.5 * p as f64 * ln_n;
        if best.as_ref().is_none_or(|(s, ..)| score > *s) {
            let (b, a) = match (before, after) {
                (Some(b), Some(a)) => (b, a),
                (Some(b), None) => (clone_fit(&b), b),
                (None, Some(a)) => (clone_fit(&a), a),
                (None, None) => unreachable!("n >= 4"),
            };
            best = Some((score, j, b, a));
        }
    }
    let (score, j, b, a) = best.expect("at least one candidate");
    Ok(DefectEstimate {
        coord: series.coord,
        onset_index_j: j,
        series_len: n,
        params_before: b.params,
        params_after: a.params,
        score,
        dropped_before: b.dropped,
        dropped_after: a.dropped,
    })
}

fn clone_fit(f: &SideFit) -> SideFit {
    SideFit {
        params: f.params,
        log_likelihood: f.log_likelihood,
        dropped: f.dropped.clone(),
    }
}

/// Estimate every series independently.
pub fn estimate_all(series: &[ResidualSeries]) -> Result<Vec<DefectEstimate>> {
    series.par_iter().map(estimate_onset_and_params).collect()
}
