use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    gaussian_field, render_dust, render_frame, render_raw, sample_defect_timeline, DefectParamConfig,
    DefectRecord, DustParticle, DustRendering, ResponseModel, Scene, SceneKind, SensorProfile, SensorType,
};
use crate::error::{Error, Result};
use crate::imaging::{io::write_png, AcquisitionMeta, FrameKind, PixelCoord, RasterImage};
use crate::manifest::{DatasetManifest, ManifestRecord, SCHEMA_VERSION};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_size_um: f64,
    pub sensor_type: SensorType,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u8,
    #[serde(default)]
    pub prnu_sigma: f64,
    #[serde(default)]
    pub read_noise_sigma: f64,
    /// Overrides the sensor type's (A, B, C).
    #[serde(default)]
    pub coefficients: Option<[f64; 3]>,
    #[serde(default)]
    pub rate_override_per_day: Option<f64>,
    #[serde(default = "default_iso_nominal")]
    pub iso_nominal: f64,
    #[serde(default)]
    pub defect_params: DefectParamConfig,
}

fn default_bit_depth() -> u8 {
    8
}

fn default_iso_nominal() -> f64 {
    400.0
}

impl ProfileSpec {
    pub fn build(&self, seed: u64) -> SensorProfile {
        let mut p = SensorProfile::new(self.width, self.height, self.pixel_size_um, self.sensor_type, self.bit_depth)
            .with_random_prnu(self.prnu_sigma, seed);
        if let Some([a, b, c]) = self.coefficients {
            p.coeff_a = a;
            p.coeff_b = b;
            p.coeff_c = c;
        }
        p.read_noise_sigma = self.read_noise_sigma;
        p.rate_override_per_day = self.rate_override_per_day;
        p.defect_params = self.defect_params.clone();
        p
    }
}

/// Per-image capture settings are drawn from these ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaRanges {
    pub iso: Vec<f64>,
    /// Log-uniform range.
    pub exposure_s: [f64; 2],
    pub focal_mm: [f64; 2],
    pub f_number: [f64; 2],
}

impl Default for MetaRanges {
    fn default() -> Self {
        Self {
            iso: vec![100.0, 200.0, 400.0],
            exposure_s: [0.1, 0.5],
            focal_mm: [35.0, 70.0],
            f_number: [4.0, 16.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarkFieldSettings {
    pub per_session: usize,
    pub iso: f64,
    pub exposure_s: f64,
}

impl Default for DarkFieldSettings {
    fn default() -> Self {
        Self {
            per_session: 0,
            iso: 400.0,
            exposure_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DustSpec {
    pub count: usize,
    pub diameter_um: [f64; 2],
    pub distance_mm: [f64; 2],
    /// Explicit particles, added to the random ones.
    pub particles: Vec<DustParticle>,
    pub alpha_max: f64,
}

impl Default for DustSpec {
    fn default() -> Self {
        Self {
            count: 0,
            diameter_um: [10.0, 40.0],
            distance_mm: [0.5, 2.0],
            particles: Vec::new(),
            alpha_max: 0.6,
        }
    }
}

/// A defect placed by hand, in addition to (or instead of) the random timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedDefect {
    pub row: usize,
    pub col: usize,
    pub dark_current: f64,
    #[serde(default)]
    pub offset: f64,
    pub onset_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    #[serde(default)]
    pub device_id: String,
    pub profile: ProfileSpec,
    /// Days since the device epoch, strictly increasing.
    pub session_times: Vec<f64>,
    pub images_per_session: usize,
    /// Extra unlabeled scene images per session.
    #[serde(default)]
    pub queries_per_session: usize,
    pub scene: SceneKind,
    #[serde(default)]
    pub meta_ranges: MetaRanges,
    #[serde(default)]
    pub dark_fields: DarkFieldSettings,
    #[serde(default)]
    pub response_model: ResponseModel,
    #[serde(default = "default_true")]
    pub random_defects: bool,
    #[serde(default)]
    pub forced_defects: Vec<ForcedDefect>,
    #[serde(default)]
    pub dust: DustSpec,
    /// Std of the independent per-session PRNU increments.
    #[serde(default)]
    pub prnu_drift_sigma: f64,
    pub rng_seed: u64,
}

fn default_dataset_id() -> String {
    "synthetic".into()
}

fn default_true() -> bool {
    true
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Error::invalid(format!("{name}: {msg}"));
        if self.session_times.is_empty() {
            return Err(field("session_times", "at least one session is required"));
        }
        if self.session_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(field("session_times", "must be strictly increasing"));
        }
        if self.session_times[0] < 0.0 {
            return Err(field("session_times", "must be non-negative"));
        }
        if self.images_per_session == 0 {
            return Err(field("images_per_session", "must be at least 1"));
        }
        let p = &self.profile;
        if p.width == 0 || p.height == 0 || p.width % 2 != 0 || p.height % 2 != 0 {
            return Err(field("profile.width/height", "must be positive and even"));
        }
        if p.bit_depth != 8 && p.bit_depth != 16 {
            return Err(field("profile.bit_depth", "must be 8 or 16"));
        }
        if !(p.pixel_size_um > 0.0) {
            return Err(field("profile.pixel_size_um", "must be positive"));
        }
        if !(p.read_noise_sigma >= 0.0) || !(p.prnu_sigma >= 0.0) || !(self.prnu_drift_sigma >= 0.0) {
            return Err(field("profile", "noise levels must be non-negative"));
        }
        let m = &self.meta_ranges;
        if m.iso.is_empty() || m.iso.iter().any(|&v| !(v > 0.0)) {
            return Err(field("meta_ranges.iso", "needs positive values"));
        }
        for (name, [lo, hi]) in [("exposure_s", m.exposure_s), ("focal_mm", m.focal_mm), ("f_number", m.f_number)] {
            if !(lo > 0.0) || hi < lo {
                return Err(field(&format!("meta_ranges.{name}"), "must be a positive [low, high] range"));
            }
        }
        let max_t = self.dust.distance_mm[1].max(
            self.dust.particles.iter().map(|p| p.sensor_distance_mm).fold(0.0, f64::max),
        );
        if (self.dust.count > 0 || !self.dust.particles.is_empty()) && max_t >= m.focal_mm[0] {
            return Err(field("dust.distance_mm", "must stay below the shortest focal length"));
        }
        for (i, f) in self.forced_defects.iter().enumerate() {
            if f.row >= p.height || f.col >= p.width || f.dark_current < 0.0 || f.offset < 0.0 {
                return Err(field(&format!("forced_defects[{i}]"), "out of bounds or negative parameters"));
            }
        }
        Ok(())
    }
}

/// Everything the simulator knows about a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub dataset_id: String,
    pub rng_seed: u64,
    pub session_times: Vec<f64>,
    pub rate_per_day: f64,
    pub defects: Vec<DefectRecord>,
    pub dust: Vec<DustParticle>,
}

#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub image: RasterImage,
    pub meta: AcquisitionMeta,
    pub session_index: usize,
    pub class_label: Option<usize>,
    pub file_name: String,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub frames: Vec<SynthFrame>,
    pub ground_truth: GroundTruth,
    /// Profile with the epoch PRNU field.
    pub profile: SensorProfile,
    /// PRNU field in effect during each session.
    pub session_prnu: Vec<Vec<f64>>,
}

impl SynthDataset {
    pub fn scenes(&self) -> impl Iterator<Item = &SynthFrame> {
        self.frames.iter().filter(|f| f.meta.kind == FrameKind::Scene)
    }

    pub fn dark_fields(&self) -> impl Iterator<Item = &SynthFrame> {
        self.frames.iter().filter(|f| f.meta.kind == FrameKind::DarkField)
    }
}

struct FramePlan {
    index: u64,
    session: usize,
    meta: AcquisitionMeta,
    class_label: Option<usize>,
    file_name: String,
}

fn sample_meta(spec: &DatasetSpec, r: &mut impl Rng, timestamp: f64) -> AcquisitionMeta {
    let m = &spec.meta_ranges;
    let uniform = |r: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| if hi > lo { r.random_range(lo..hi) } else { lo };
    let iso = m.iso[r.random_range(0..m.iso.len())];
    let [elo, ehi] = m.exposure_s;
    let exposure_s = uniform(r, [elo.ln(), ehi.ln()]).exp();
    AcquisitionMeta {
        timestamp,
        iso,
        exposure_s,
        focal_mm: uniform(r, m.focal_mm),
        f_number: uniform(r, m.f_number),
        kind: FrameKind::Scene,
        device_id: spec.device_id.clone(),
    }
}

fn dust_particles(spec: &DatasetSpec, profile: &SensorProfile) -> Vec<DustParticle> {
    let d = &spec.dust;
    let mut r = rng::stream(spec.rng_seed, "dust");
    let horizon = *spec.session_times.last().expect("validated");
    let (h, w) = (profile.height as f64, profile.width as f64);
    let mut out: Vec<DustParticle> = (0..d.count)
        .map(|_| {
            let between = |r: &mut rng::StreamRng, [a, b]: [f64; 2]| if b > a { r.random_range(a..b) } else { a };
            DustParticle {
                particle_diameter_um: between(&mut r, d.diameter_um),
                sensor_distance_mm: between(&mut r, d.distance_mm),
                row: r.random_range(0.15 * h..0.85 * h),
                col: r.random_range(0.15 * w..0.85 * w),
                deposit_time: r.random_range(0.0..=horizon),
            }
        })
        .collect();
    out.extend(d.particles.iter().cloned());
    out
}

/// Generate a dataset in memory.
pub fn synthesize(spec: &DatasetSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let seed = spec.rng_seed;
    let profile = spec.profile.build(rng::stream_seed(seed, "profile", 0));
    let horizon = *spec.session_times.last().expect("validated");

    let mut defects = if spec.random_defects {
        sample_defect_timeline(&profile, horizon, spec.profile.iso_nominal, rng::stream_seed(seed, "timeline", 0))?
    } else {
        Vec::new()
    };
    for f in &spec.forced_defects {
        defects.retain(|d| (d.coord.row, d.coord.col) != (f.row, f.col));
        defects.push(DefectRecord::new(
            PixelCoord::new(f.row, f.col, 0),
            f.dark_current,
            f.offset,
            f.onset_time,
            profile.bit_depth,
        ));
    }
    defects.sort_by(|a, b| a.onset_time.total_cmp(&b.onset_time).then(a.coord.cmp(&b.coord)));
    let dust = dust_particles(spec, &profile);

    // PRNU drift: independent increments per session
    let mut session_prnu = Vec::with_capacity(spec.session_times.len());
    let mut field = profile.prnu_field.clone();
    for s in 0..spec.session_times.len() {
        if s > 0 && spec.prnu_drift_sigma > 0.0 {
            let inc = gaussian_field(field.len(), spec.prnu_drift_sigma, &mut rng::indexed_stream(seed, "prnu-drift", s as u64));
            for (k, d) in field.iter_mut().zip(inc) {
                *k = (*k + d).clamp(-0.99, 0.99);
            }
        }
        session_prnu.push(field.clone());
    }

    let mut plans = Vec::new();
    let mut index = 0u64;
    for (s, &t) in spec.session_times.iter().enumerate() {
        let mut within = 0usize;
        let mut stamp = || {
            within += 1;
            t + (within - 1) as f64 * 1e-3
        };
        for k in 0..spec.dark_fields.per_session {
            let meta = AcquisitionMeta {
                timestamp: stamp(),
                iso: spec.dark_fields.iso,
                exposure_s: spec.dark_fields.exposure_s,
                focal_mm: spec.meta_ranges.focal_mm[0],
                f_number: spec.meta_ranges.f_number[0],
                kind: FrameKind::DarkField,
                device_id: spec.device_id.clone(),
            };
            plans.push(FramePlan { index, session: s, meta, class_label: Some(s), file_name: format!("s{s:03}_dark_{k:04}.png") });
            index += 1;
        }
        let scenes = spec.images_per_session + spec.queries_per_session;
        for k in 0..scenes {
            let mut r = rng::indexed_stream(seed, "frame-meta", index);
            let meta = sample_meta(spec, &mut r, stamp());
            let (label, tag) = if k < spec.images_per_session { (Some(s), "scene") } else { (None, "query") };
            plans.push(FramePlan { index, session: s, meta, class_label: label, file_name: format!("s{s:03}_{tag}_{k:04}.png") });
            index += 1;
        }
    }

    let frames = plans
        .into_par_iter()
        .map(|plan| {
            let t = spec.session_times[plan.session];
            let active: Vec<DefectRecord> = defects.iter().filter(|d| d.active_at(t)).cloned().collect();
            let mut sp = profile.clone();
            sp.prnu_field = session_prnu[plan.session].clone();
            let mut noise = rng::indexed_stream(seed, "frame-noise", plan.index);
            let image = if plan.meta.kind == FrameKind::DarkField {
                let dark = Scene::dark(sp.width, sp.height);
                render_raw(&sp, &active, &dark, &plan.meta, spec.response_model, Some(&mut noise))?
            } else {
                let scene = spec.scene.generate(sp.width, sp.height, plan.session, plan.index);
                let rgb = render_frame(&sp, &active, &scene, &plan.meta, spec.response_model, Some(&mut noise))?;
                let deposited: Vec<DustParticle> = dust.iter().filter(|p| p.deposit_time <= t).cloned().collect();
                let rendering = DustRendering {
                    pixel_pitch_um: sp.pixel_size_um,
                    alpha_max: spec.dust.alpha_max,
                };
                render_dust(&rgb, &deposited, &plan.meta, rendering)?
            };
            Ok(SynthFrame {
                image,
                meta: plan.meta,
                session_index: plan.session,
                class_label: plan.class_label,
                file_name: plan.file_name,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ground_truth = GroundTruth {
        schema_version: SCHEMA_VERSION,
        dataset_id: spec.dataset_id.clone(),
        rng_seed: seed,
        session_times: spec.session_times.clone(),
        rate_per_day: profile.rate_per_day(spec.profile.iso_nominal)?,
        defects,
        dust,
    };
    Ok(SynthDataset {
        frames,
        ground_truth,
        profile,
        session_prnu,
    })
}

/// Write `images/`, `manifest.jsonl`, `ground_truth.json` and `spec_echo.json`.
pub fn write_dataset(spec: &DatasetSpec, data: &SynthDataset, out_dir: &Path) -> Result<DatasetManifest> {
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(data.frames.len());
    for f in &data.frames {
        write_png(&f.image, images.join(&f.file_name))?;
        records.push(ManifestRecord::from_meta(
            format!("images/{}", f.file_name),
            &f.meta,
            f.session_index,
            f.class_label,
            &spec.dataset_id,
        ));
    }
    let manifest = DatasetManifest::new(spec.dataset_id.clone(), records, out_dir);
    manifest.write(out_dir.join("manifest.jsonl"))?;
    write_json(&out_dir.join("ground_truth.json"), &data.ground_truth)?;
    write_json(&out_dir.join("spec_echo.json"), spec)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Generate and write a dataset.
pub fn synthesize_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<(DatasetManifest, GroundTruth)> {
    let data = synthesize(spec)?;
    let manifest = write_dataset(spec, &data, out_dir)?;
    Ok((manifest, data.ground_truth))
}
