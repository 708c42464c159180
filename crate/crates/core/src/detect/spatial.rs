//! Spatial uniformity checks for defect positions.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::PixelCoord;
use crate::rng;
use crate::stats::{chi_square_gof, chi_square_sf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestStatus {
    Performed,
    InsufficientData,
}

/// Expected pair-distance histogram of `n` sites placed uniformly at random
/// (without replacement) on a `width x height` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBaseline {
    pub n: usize,
    pub width: usize,
    pub height: usize,
    pub bin_edges: Vec<f64>,
    pub expected: Vec<f64>,
    /// Pair distances are not independent, so the Pearson statistic is not
    /// chi-square with `bins - 1` degrees of freedom. It is approximated by
    /// `scale * chi2(effective_dof)`, matching the mean and variance of the
    /// statistic over the Monte-Carlo placements.
    pub scale: f64,
    pub effective_dof: f64,
    pub replicates: usize,
    pub seed: u64,
}

pub const DISTANCE_BINS: usize = 16;
pub const BASELINE_REPLICATES: usize = 200;
/// Seed of the Monte-Carlo baseline used when none is supplied.
pub const BASELINE_SEED: u64 = 0x5eed_d157;

fn pair_histogram(points: &[(f64, f64)], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let width = edges[bins] / bins as f64;
    let mut h = vec![0.0; bins];
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
            h[((d / width) as usize).min(bins - 1)] += 1.0;
        }
    }
    h
}

fn pearson_statistic(observed: &[f64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum()
}

impl DistanceBaseline {
    pub fn new(n: usize, width: usize, height: usize, replicates: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("distance baseline needs at least two sites"));
        }
        if n > width * height {
            return Err(Error::invalid(format!("{n} sites do not fit on a {width}x{height} grid")));
        }
        if replicates < 2 {
            return Err(Error::invalid("distance baseline needs at least two replicates"));
        }
        let diag = (((width - 1).pow(2) + (height - 1).pow(2)) as f64).sqrt().max(1.0);
        let edges: Vec<f64> = (0..=DISTANCE_BINS).map(|i| diag * i as f64 / DISTANCE_BINS as f64).collect();
        let mut r = rng::stream(seed, "distance-baseline");
        let histograms: Vec<Vec<f64>> = (0..replicates)
            .map(|_| {
                let pts: Vec<(f64, f64)> = sample(&mut r, width * height, n)
                    .into_iter()
                    .map(|s| ((s / width) as f64, (s % width) as f64))
                    .collect();
                pair_histogram(&pts, &edges)
            })
            .collect();
        let mut expected = vec![0.0; DISTANCE_BINS];
        for h in &histograms {
            for (e, v) in expected.iter_mut().zip(h) {
                *e += v / replicates as f64;
            }
        }
        let stats: Vec<f64> = histograms.iter().map(|h| pearson_statistic(h, &expected)).collect();
        let mean = stats.iter().sum::<f64>() / replicates as f64;
        let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (replicates - 1) as f64;
        let (scale, effective_dof) = if var > 0.0 && mean > 0.0 {
            (var / (2.0 * mean), 2.0 * mean * mean / var)
        } else {
            (1.0, (expected.iter().filter(|&&e| e > 0.0).count() as f64 - 1.0).max(1.0))
        };
        Ok(Self {
            n,
            width,
            height,
            bin_edges: edges,
            expected,
            scale,
            effective_dof,
            replicates,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    pub status: TestStatus,
    pub bin_edges: Vec<f64>,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    /// Pearson statistic divided by the baseline scale.
    pub statistic: Option<f64>,
    pub raw_statistic: Option<f64>,
    pub dof: Option<f64>,
    pub p_value: Option<f64>,
}

/// Compare the pairwise distance distribution of `coords` with uniform
/// placement. The Monte-Carlo baseline is built with a fixed seed unless
/// one matching the inputs is supplied.
pub fn inter_defect_distance_histogram(
    coords: &[PixelCoord],
    width: usize,
    height: usize,
    baseline: Option<&DistanceBaseline>,
) -> Result<DistanceHistogram> {
    let n = coords.len();
    if n < 2 {
        return Err(Error::invalid("distance histogram needs at least two coordinates"));
    }
    if let Some(c) = coords.iter().find(|c| c.row >= height || c.col >= width) {
        return Err(Error::invalid(format!("coordinate ({}, {}) outside {width}x{height}", c.row, c.col)));
    }
    let pairs = n * (n - 1) / 2;
    let pts: Vec<(f64, f64)> = coords.iter().map(|c| (c.row as f64, c.col as f64)).collect();
    // fewer than five pairs per bin on average is too thin for the test
    if pairs < 5 * DISTANCE_BINS {
        let diag = (((width - 1).pow(2) + (height - 1).pow(2)) as f64).sqrt().max(1.0);
        let edges: Vec<f64> = (0..=DISTANCE_BINS).map(|i| diag * i as f64 / DISTANCE_BINS as f64).collect();
        return Ok(DistanceHistogram {
            status: TestStatus::InsufficientData,
            observed: pair_histogram(&pts, &edges),
            bin_edges: edges,
            expected: Vec::new(),
            statistic: None,
            raw_statistic: None,
            dof: None,
            p_value: None,
        });
    }
    let owned;
    let base = match baseline {
        Some(b) => {
            if (b.n, b.width, b.height) != (n, width, height) {
                return Err(Error::invalid("distance baseline was built for a different count or sensor"));
            }
            b
        }
        None => {
            owned = DistanceBaseline::new(n, width, height, BASELINE_REPLICATES, BASELINE_SEED)?;
            &owned
        }
    };
    let observed = pair_histogram(&pts, &base.bin_edges);
    let raw = pearson_statistic(&observed, &base.expected);
    let dof = base.effective_dof;
    let statistic = raw / base.scale;
    Ok(DistanceHistogram {
        status: TestStatus::Performed,
        bin_edges: base.bin_edges.clone(),
        observed,
        expected: base.expected.clone(),
        statistic: Some(statistic),
        raw_statistic: Some(raw),
        dof: Some(dof),
        p_value: Some(chi_square_sf(statistic, dof)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorTest {
    pub grid: usize,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub p_value: f64,
}

/// Chi-square test of defect counts over a `grid x grid` partition of the
/// sensor, with expectations proportional to sector area.
pub fn sector_uniformity_test(coords: &[PixelCoord], width: usize, height: usize, grid: usize) -> Result<SectorTest> {
    if grid == 0 || grid > width || grid > height {
        return Err(Error::invalid(format!("a {grid}x{grid} grid does not fit a {width}x{height} sensor")));
    }
    if coords.is_empty() {
        return Err(Error::invalid("sector test needs at least one coordinate"));
    }
    let edge = |i: usize, len: usize| i * len / grid;
    let mut observed = vec![0.0; grid * grid];
    for c in coords {
        if c.row >= height || c.col >= width {
            return Err(Error::invalid(format!("coordinate ({}, {}) outside {width}x{height}", c.row, c.col)));
        }
        let gr = (0..grid).rfind(|&i| edge(i, height) <= c.row).unwrap_or(0);
        let gc = (0..grid).rfind(|&i| edge(i, width) <= c.col).unwrap_or(0);
        observed[gr * grid + gc] += 1.0;
    }
    let total = (width * height) as f64;
    let n = coords.len() as f64;
    let mut expected = Vec::with_capacity(grid * grid);
    for gr in 0..grid {
        for gc in 0..grid {
            let area = (edge(gr + 1, height) - edge(gr, height)) * (edge(gc + 1, width) - edge(gc, width));
            expected.push(n * area as f64 / total);
        }
    }
    let (statistic, p_value) = chi_square_gof(&observed, &expected)?;
    Ok(SectorTest {
        grid,
        observed,
        expected,
        statistic,
        p_value,
    })
}
