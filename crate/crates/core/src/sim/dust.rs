use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{quantize, AcquisitionMeta, RasterImage};

/// A dust particle resting on the sensor's protective glass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DustParticle {
    pub particle_diameter_um: f64,
    /// Distance between the particle and the sensor plane.
    pub sensor_distance_mm: f64,
    /// Position on the sensor plane in pixel units (row, col).
    pub row: f64,
    pub col: f64,
    /// Days since the device epoch.
    pub deposit_time: f64,
}

/// Diameter of the shadow cast by `particle`, in millimetres:
/// `S = D f / (f - t) + A t / (f - t)`.
pub fn dust_spot_diameter(particle: &DustParticle, focal_mm: f64, aperture_diameter_mm: f64) -> Result<f64> {
    let d = particle.particle_diameter_um / 1000.0;
    let t = particle.sensor_distance_mm;
    if !(d > 0.0) || !(t >= 0.0) {
        return Err(Error::invalid("particle diameter must be positive and distance non-negative"));
    }
    if !(focal_mm > t) {
        return Err(Error::invalid(format!(
            "focal length {focal_mm} mm must exceed the particle distance {t} mm"
        )));
    }
    if !(aperture_diameter_mm >= 0.0) {
        return Err(Error::invalid("aperture diameter must be non-negative"));
    }
    let depth = focal_mm - t;
    Ok(d * (focal_mm / depth) + aperture_diameter_mm * (t / depth))
}

/// Rendering constants for dust shadows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DustRendering {
    pub pixel_pitch_um: f64,
    /// Peak attenuation approached at very small apertures.
    pub alpha_max: f64,
}

impl Default for DustRendering {
    fn default() -> Self {
        Self {
            pixel_pitch_um: 4.0,
            alpha_max: 0.6,
        }
    }
}

/// Peak attenuation for a given f-number.
pub fn spot_attenuation(alpha_max: f64, f_number: f64) -> f64 {
    alpha_max * (1.0 - (-f_number / 20.0).exp())
}

/// Image position of the shadow: radial shift away from the image centre by
/// `f / (f - t)`.
pub fn project_dust_position(particle: &DustParticle, focal_mm: f64, width: usize, height: usize) -> (f64, f64) {
    let (cr, cc) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let scale = focal_mm / (focal_mm - particle.sensor_distance_mm);
    (cr + (particle.row - cr) * scale, cc + (particle.col - cc) * scale)
}

/// Darken `img` with the shadows of `particles` under the capture settings of
/// `meta`. Each shadow is a disc of the projected spot diameter with a
/// Gaussian fall-off from the peak attenuation at its centre.
pub fn render_dust(
    img: &RasterImage,
    particles: &[DustParticle],
    meta: &AcquisitionMeta,
    rendering: DustRendering,
) -> Result<RasterImage> {
    if particles.is_empty() {
        return Ok(img.clone());
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut gain = vec![1.0f64; w * h];
    let alpha = spot_attenuation(rendering.alpha_max, meta.f_number);
    for p in particles {
        let diameter_mm = dust_spot_diameter(p, meta.focal_mm, meta.aperture_diameter_mm())?;
        let radius = diameter_mm * 1000.0 / rendering.pixel_pitch_um / 2.0;
        let (pr, pc) = project_dust_position(p, meta.focal_mm, w, h);
        if pr < 0.0 || pc < 0.0 || pr > (h - 1) as f64 || pc > (w - 1) as f64 {
            return Err(Error::invalid(format!(
                "dust shadow centre ({pr:.1}, {pc:.1}) falls outside the {w}x{h} image"
            )));
        }
        let sigma = (radius / 2.0).max(1e-6);
        let r0 = (pr - radius).floor().max(0.0) as usize;
        let r1 = ((pr + radius).ceil() as usize).min(h - 1);
        let c0 = (pc - radius).floor().max(0.0) as usize;
        let c1 = ((pc + radius).ceil() as usize).min(w - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
                if d2 <= radius * radius {
                    gain[r * w + c] *= 1.0 - alpha * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    let max = f64::from(img.max_value());
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| quantize(f64::from(v) * gain[i / ch], max))
        .collect();
    RasterImage::new(w, h, ch, img.bit_depth(), data)
}
