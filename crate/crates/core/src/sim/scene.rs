use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};

/// Incident illumination, RGB, in output intensity units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
}

impl Scene {
    pub fn dark(width: usize, height: usize) -> Self {
        Self::flat(width, height, 0.0)
    }

    pub fn flat(width: usize, height: usize, level: f64) -> Self {
        Self {
            width,
            height,
            rgb: vec![level; width * height * 3],
        }
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.rgb[(row * self.width + col) * 3 + channel]
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for px in self.rgb.chunks_exact(3) {
            for k in 0..3 {
                s[k] += px[k];
            }
        }
        let n = (self.width * self.height) as f64;
        s.map(|v| v / n)
    }
}

/// Scene content generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SceneKind {
    Flat {
        level: f64,
    },
    /// Horizontal ramp from `low` to `high`.
    Gradient {
        low: f64,
        high: f64,
    },
    /// Smooth random texture, different for every frame.
    Textured {
        seed: u64,
        mean: f64,
        contrast: f64,
    },
    /// Textured content tinted by a colour palette drawn once per session.
    Biased {
        palette_seed: u64,
        mean: f64,
        contrast: f64,
        /// Relative strength of the session tint.
        tint: f64,
    },
}

impl SceneKind {
    /// Content of frame `frame_index` (global, stable) in session `session`.
    pub fn generate(&self, width: usize, height: usize, session: usize, frame_index: u64) -> Scene {
        match *self {
            SceneKind::Flat { level } => Scene::flat(width, height, level.max(0.0)),
            SceneKind::Gradient { low, high } => {
                let mut rgb = Vec::with_capacity(width * height * 3);
                for _ in 0..height {
                    for c in 0..width {
                        let t = if width > 1 { c as f64 / (width - 1) as f64 } else { 0.0 };
                        let v = (low + (high - low) * t).max(0.0);
                        rgb.extend([v, v, v]);
                    }
                }
                Scene { width, height, rgb }
            }
            SceneKind::Textured { seed, mean, contrast } => {
                let mut r = rng::indexed_stream(seed, "scene-texture", frame_index);
                texture(width, height, mean, contrast, [1.0; 3], &mut r)
            }
            SceneKind::Biased {
                palette_seed,
                mean,
                contrast,
                tint,
            } => {
                let color = session_palette(palette_seed, session, tint);
                let mut r = rng::indexed_stream(palette_seed, "scene-texture", frame_index);
                texture(width, height, mean, contrast, color, &mut r)
            }
        }
    }
}

/// Per-channel multiplier of a session's palette.
pub fn session_palette(palette_seed: u64, session: usize, tint: f64) -> [f64; 3] {
    let mut r = rng::indexed_stream(palette_seed, "scene-palette", session as u64);
    [(); 3].map(|_| 1.0 + tint * (2.0 * r.random::<f64>() - 1.0))
}

/// Sum of a few random low-frequency plane waves, luminance shared by all
/// channels and scaled by `color`.
fn texture(width: usize, height: usize, mean: f64, contrast: f64, color: [f64; 3], r: &mut StreamRng) -> Scene {
    const WAVES: usize = 6;
    let waves: Vec<(f64, f64, f64, f64)> = (0..WAVES)
        .map(|_| {
            let wavelength = r.random_range(24.0..96.0);
            let angle = r.random_range(0.0..std::f64::consts::TAU);
            let phase = r.random_range(0.0..std::f64::consts::TAU);
            let amp = r.random_range(0.5..1.0);
            let k = std::f64::consts::TAU / wavelength;
            (k * angle.cos(), k * angle.sin(), phase, amp)
        })
        .collect();
    let norm: f64 = waves.iter().map(|w| w.3).sum();
    let mut rgb = Vec::with_capacity(width * height * 3);
    for row in 0..height {
        for col in 0..width {
            let s: f64 = waves
                .iter()
                .map(|&(kx, ky, ph, a)| a * (kx * col as f64 + ky * row as f64 + ph).sin())
                .sum();
            let lum = (mean * (1.0 + contrast * s / norm)).max(0.0);
            rgb.extend(color.map(|c| lum * c));
        }
    }
    Scene { width, height, rgb }
}
