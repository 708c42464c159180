//! Synthetic sensor ageing: in-field defect growth, pixel response models,
//! frame rendering through an RGGB mosaic, sensor dust and PRNU drift.

mod dataset;
mod dust;
mod render;
mod scene;

pub use dataset::{
    synthesize, synthesize_dataset, write_dataset, DarkFieldSettings, DatasetSpec, DustSpec,
    ForcedDefect, GroundTruth, MetaRanges, ProfileSpec, SynthDataset, SynthFrame,
};
pub use dust::{dust_spot_diameter, project_dust_position, render_dust, spot_attenuation, DustParticle, DustRendering};
pub use render::{pixel_response, render_frame, render_raw, ResponseModel};
pub use scene::{Scene, SceneKind};

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{max_value, PixelCoord};
use crate::rng;

pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SensorType {
    Ccd,
    Aps,
}

impl SensorType {
    /// Empirical (A, B, C) of the defect-density power law.
    pub fn coefficients(self) -> (f64, f64, f64) {
        match self {
            SensorType::Ccd => (10f64.powf(-1.849), -2.25, 0.687),
            SensorType::Aps => (10f64.powf(-0.98), -3.03, 0.506),
        }
    }
}

/// Sampling of per-defect parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefectParamConfig {
    /// `log10` range of the dark current (intensity units per unit tau).
    pub dark_current_log10: [f64; 2],
    /// Probability that a defect carries no fixed offset (plain hot pixel).
    pub zero_offset_probability: f64,
    /// Uniform range of the offset when present.
    pub offset_range: [f64; 2],
}

impl Default for DefectParamConfig {
    fn default() -> Self {
        Self {
            dark_current_log10: [1.5, 2.5],
            zero_offset_probability: 0.35,
            offset_range: [5.0, 60.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub width: usize,
    pub height: usize,
    pub pixel_size_um: f64,
    pub sensor_type: SensorType,
    pub coeff_a: f64,
    pub coeff_b: f64,
    pub coeff_c: f64,
    /// Multiplicative photo-response deviation per mosaic site, row-major.
    #[serde(skip)]
    pub prnu_field: Vec<f64>,
    pub read_noise_sigma: f64,
    pub bit_depth: u8,
    /// Defects per day; bypasses the density law when set.
    #[serde(default)]
    pub rate_override_per_day: Option<f64>,
    #[serde(default)]
    pub defect_params: DefectParamConfig,
}

impl SensorProfile {
    pub fn new(width: usize, height: usize, pixel_size_um: f64, sensor_type: SensorType, bit_depth: u8) -> Self {
        let (a, b, c) = sensor_type.coefficients();
        Self {
            width,
            height,
            pixel_size_um,
            sensor_type,
            coeff_a: a,
            coeff_b: b,
            coeff_c: c,
            prnu_field: vec![0.0; width * height],
            read_noise_sigma: 0.0,
            bit_depth,
            rate_override_per_day: None,
            defect_params: DefectParamConfig::default(),
        }
    }

    /// Fill the PRNU field with zero-mean Gaussian values of std `sigma`.
    pub fn with_random_prnu(mut self, sigma: f64, seed: u64) -> Self {
        self.prnu_field = gaussian_field(self.width * self.height, sigma, &mut rng::stream(seed, "prnu"));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("sensor dimensions must be positive"));
        }
        if !(self.pixel_size_um > 0.0) {
            return Err(Error::invalid("pixel_size_um must be positive"));
        }
        if !(self.read_noise_sigma >= 0.0) {
            return Err(Error::invalid("read_noise_sigma must be non-negative"));
        }
        if self.bit_depth != 8 && self.bit_depth != 16 {
            return Err(Error::invalid("bit_depth must be 8 or 16"));
        }
        if self.prnu_field.len() != self.width * self.height {
            return Err(Error::invalid("prnu_field does not match sensor dimensions"));
        }
        if self.prnu_field.iter().any(|k| !(k.abs() < 1.0)) {
            return Err(Error::invalid("prnu_field values must satisfy |K| < 1"));
        }
        Ok(())
    }

    pub fn area_mm2(&self) -> f64 {
        let pitch_mm = self.pixel_size_um / 1000.0;
        (self.width * self.height) as f64 * pitch_mm * pitch_mm
    }

    pub fn max_value(&self) -> u16 {
        max_value(self.bit_depth)
    }

    /// Expected new defects per day at the nominal ISO.
    pub fn rate_per_day(&self, iso_nominal: f64) -> Result<f64> {
        match self.rate_override_per_day {
            Some(r) if r >= 0.0 => Ok(r),
            Some(_) => Err(Error::invalid("rate override must be non-negative")),
            None => Ok(defect_density(self, iso_nominal)? * self.area_mm2() / DAYS_PER_YEAR),
        }
    }
}

pub(crate) fn gaussian_field(n: usize, sigma: f64, r: &mut impl Rng) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n)
        .map(|_| normal.sample(r).clamp(-0.99, 0.99))
        .collect()
}

/// Defects per year per mm^2: `A * S^B * ISO^C`.
pub fn defect_density(profile: &SensorProfile, iso: f64) -> Result<f64> {
    if !(iso > 0.0) {
        return Err(Error::invalid("iso must be positive"));
    }
    if !(profile.pixel_size_um > 0.0) {
        return Err(Error::invalid("pixel size must be positive"));
    }
    Ok(profile.coeff_a * profile.pixel_size_um.powf(profile.coeff_b) * iso.powf(profile.coeff_c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectType {
    Hot,
    PartiallyStuckHot,
    FullyStuck,
}

/// One in-field defect on a mosaic site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub coord: PixelCoord,
    pub defect_type: DefectType,
    pub dark_current: f64,
    pub offset: f64,
    /// Days since the device epoch.
    pub onset_time: f64,
}

impl DefectRecord {
    pub fn new(coord: PixelCoord, dark_current: f64, offset: f64, onset_time: f64, bit_depth: u8) -> Self {
        Self {
            coord,
            defect_type: classify_defect(dark_current, offset, bit_depth),
            dark_current,
            offset,
            onset_time,
        }
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.onset_time <= t
    }
}

pub fn classify_defect(dark_current: f64, offset: f64, bit_depth: u8) -> DefectType {
    if offset >= f64::from(max_value(bit_depth)) {
        DefectType::FullyStuck
    } else if offset > 0.0 || dark_current <= 0.0 {
        DefectType::PartiallyStuckHot
    } else {
        DefectType::Hot
    }
}

/// Homogeneous Poisson arrival of defects over `[0, duration_days]` with
/// positions uniform over the mosaic (no site hit twice).
pub fn sample_defect_timeline(
    profile: &SensorProfile,
    duration_days: f64,
    iso_nominal: f64,
    seed: u64,
) -> Result<Vec<DefectRecord>> {
    if !(duration_days >= 0.0) {
        return Err(Error::invalid("duration must be non-negative"));
    }
    let rate = profile.rate_per_day(iso_nominal)?;
    let sites = profile.width * profile.height;
    if rate * duration_days > 0.1 * sites as f64 {
        return Err(Error::invalid(format!(
            "expected {:.0} defects exceeds 10% of the {} sites",
            rate * duration_days,
            sites
        )));
    }
    if duration_days == 0.0 || rate == 0.0 {
        return Ok(Vec::new());
    }
    let mut times_rng = rng::stream(seed, "defect-arrivals");
    let gap = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
    let mut onsets = Vec::new();
    let mut t = gap.sample(&mut times_rng);
    while t <= duration_days {
        onsets.push(t);
        t += gap.sample(&mut times_rng);
    }

    let mut pos_rng = rng::stream(seed, "defect-positions");
    let mut par_rng = rng::stream(seed, "defect-params");
    let mut taken = HashSet::with_capacity(onsets.len());
    let cfg = &profile.defect_params;
    let mut out = Vec::with_capacity(onsets.len());
    for onset in onsets {
        let site = loop {
            let s = pos_rng.random_range(0..sites);
            if taken.insert(s) {
                break s;
            }
        };
        let (dark, offset) = sample_params(cfg, &mut par_rng);
        out.push(DefectRecord::new(
            PixelCoord::new(site / profile.width, site % profile.width, 0),
            dark,
            offset,
            onset,
            profile.bit_depth,
        ));
    }
    Ok(out)
}

fn sample_params(cfg: &DefectParamConfig, r: &mut impl Rng) -> (f64, f64) {
    let [lo, hi] = cfg.dark_current_log10;
    let dark = 10f64.powf(if hi > lo { r.random_range(lo..hi) } else { lo });
    let offset = if r.random::<f64>() < cfg.zero_offset_probability {
        0.0
    } else {
        let [a, b] = cfg.offset_range;
        if b > a {
            r.random_range(a..b)
        } else {
            a
        }
    };
    (dark, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn density_law_examples() {
        let mut ccd = SensorProfile::new(10, 10, 2.0, SensorType::Ccd, 8);
        let aps = SensorProfile::new(10, 10, 2.0, SensorType::Aps, 8);
        let d_ccd = defect_density(&ccd, 400.0).unwrap();
        let d_aps = defect_density(&aps, 400.0).unwrap();
        assert!((d_ccd - 0.1825).abs() < 1e-3, "{d_ccd}");
        assert!((d_aps - 0.2657).abs() < 1e-3, "{d_aps}");
        assert!(d_aps / d_ccd < 2.0);
        ccd.pixel_size_um = 1.0;
        assert_relative_eq!(defect_density(&ccd, 1.0).unwrap(), ccd.coeff_a, max_relative = 1e-15);
        assert!(defect_density(&ccd, 0.0).is_err());
    }

    fn profile_with_rate(rate: f64) -> SensorProfile {
        let mut p = SensorProfile::new(400, 300, 4.0, SensorType::Aps, 8);
        p.rate_override_per_day = Some(rate);
        p
    }

    #[test]
    fn poisson_count_matches_expectation() {
        // lambda = 100; the mean of 1000 Poisson(100) draws has sd 0.316
        let p = profile_with_rate(2.0);
        let total: usize = (0..1000)
            .map(|s| sample_defect_timeline(&p, 50.0, 400.0, s).unwrap().len())
            .sum();
        let mean = total as f64 / 1000.0;
        assert!((mean - 100.0).abs() < 1.0, "{mean}");
    }

    #[test]
    fn timeline_basics() {
        let p = profile_with_rate(2.0);
        assert!(sample_defect_timeline(&p, 0.0, 400.0, 3).unwrap().is_empty());
        let a = sample_defect_timeline(&p, 30.0, 400.0, 3).unwrap();
        let b = sample_defect_timeline(&p, 30.0, 400.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].onset_time <= w[1].onset_time));
        let sites: HashSet<_> = a.iter().map(|d| d.coord).collect();
        assert_eq!(sites.len(), a.len());
        for d in &a {
            assert!(d.dark_current > 0.0 && d.offset >= 0.0);
            assert!(d.coord.row < 300 && d.coord.col < 400);
            match d.defect_type {
                DefectType::Hot => assert_eq!(d.offset, 0.0),
                DefectType::PartiallyStuckHot => assert!(d.offset > 0.0),
                DefectType::FullyStuck => assert!(d.offset >= 255.0),
            }
        }
        // 10% guard
        assert!(sample_defect_timeline(&profile_with_rate(1000.0), 30.0, 400.0, 3).is_err());
    }

    #[test]
    fn offset_free_share_matches_config() {
        let p = profile_with_rate(50.0);
        let d = sample_defect_timeline(&p, 100.0, 400.0, 11).unwrap();
        let partial = d.iter().filter(|d| d.defect_type != DefectType::Hot).count() as f64 / d.len() as f64;
        assert!((partial - 0.65).abs() < 0.05, "{partial}");
    }

    #[test]
    fn profile_validation() {
        let p = SensorProfile::new(4, 4, 2.0, SensorType::Ccd, 8).with_random_prnu(0.01, 1);
        assert!(p.validate().is_ok());
        let mut bad = p.clone();
        bad.prnu_field[0] = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.read_noise_sigma = -1.0;
        assert!(bad.validate().is_err());
    }
}
