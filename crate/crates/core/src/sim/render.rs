use std::collections::HashMap;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DefectRecord, Scene, SensorProfile};
use crate::error::{Error, Result};
use crate::imaging::{bayer_color, demosaic_bilinear, max_value, quantize, AcquisitionMeta, RasterImage};

/// Pixel response model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseModel {
    /// `Y = I + I K + tau D + c + noise`
    #[default]
    Eq2,
    /// `Y = m (I T_e + D T_e + c)`; ignores PRNU and noise.
    Eq3,
}

/// Response of one site to illumination `illumination`, clipped to the
/// bit-depth range. `theta` is the additive noise sample (eq2 only).
pub fn pixel_response(
    illumination: f64,
    defect: Option<&DefectRecord>,
    meta: &AcquisitionMeta,
    prnu: f64,
    model: ResponseModel,
    theta: f64,
    bit_depth: u8,
) -> Result<f64> {
    if !(illumination >= 0.0) {
        return Err(Error::invalid("illumination must be non-negative"));
    }
    let (dark, offset) = defect.map_or((0.0, 0.0), |d| (d.dark_current, d.offset));
    let y = match model {
        ResponseModel::Eq2 => illumination + illumination * prnu + meta.tau() * dark + offset + theta,
        ResponseModel::Eq3 => {
            let te = meta.exposure_s;
            meta.gain() * (illumination * te + dark * te + offset)
        }
    };
    Ok(y.clamp(0.0, f64::from(max_value(bit_depth))))
}

/// Render the single-channel RGGB mosaic: each site sees the scene channel
/// of its colour filter.
pub fn render_raw(
    profile: &SensorProfile,
    active_defects: &[DefectRecord],
    scene: &Scene,
    meta: &AcquisitionMeta,
    model: ResponseModel,
    mut noise: Option<&mut dyn RngCore>,
) -> Result<RasterImage> {
    if scene.width != profile.width || scene.height != profile.height {
        return Err(Error::invalid(format!(
            "scene {}x{} does not match sensor {}x{}",
            scene.width, scene.height, profile.width, profile.height
        )));
    }
    if profile.prnu_field.len() != profile.width * profile.height {
        return Err(Error::invalid("prnu_field does not match sensor dimensions"));
    }
    let by_site: HashMap<(usize, usize), &DefectRecord> = active_defects
        .iter()
        .map(|d| ((d.coord.row, d.coord.col), d))
        .collect();
    let normal = (profile.read_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, profile.read_noise_sigma).expect("finite sigma"));
    let max = f64::from(profile.max_value());
    let mut data = Vec::with_capacity(profile.width * profile.height);
    for r in 0..profile.height {
        for c in 0..profile.width {
            let illum = scene.get(r, c, bayer_color(r, c) as usize);
            let theta = match (&normal, noise.as_deref_mut()) {
                (Some(n), Some(rng)) => n.sample(rng),
                _ => 0.0,
            };
            let y = pixel_response(
                illum,
                by_site.get(&(r, c)).copied(),
                meta,
                profile.prnu_field[r * profile.width + c],
                model,
                theta,
                profile.bit_depth,
            )?;
            data.push(quantize(y, max));
        }
    }
    RasterImage::new(profile.width, profile.height, 1, profile.bit_depth, data)
}

/// Render a frame and demosaic it to RGB.
pub fn render_frame(
    profile: &SensorProfile,
    active_defects: &[DefectRecord],
    scene: &Scene,
    meta: &AcquisitionMeta,
    model: ResponseModel,
    noise: Option<&mut dyn RngCore>,
) -> Result<RasterImage> {
    demosaic_bilinear(&render_raw(profile, active_defects, scene, meta, model, noise)?)
}
