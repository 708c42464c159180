//! Raster images, acquisition metadata and the pixel-level operations shared
//! by every other module: median filtering, residual extraction, bilinear
//! demosaicing and block cropping.

mod crop;
mod demosaic;
pub mod io;
mod median;

pub use crop::{block_origins, crop_blocks, Block, CropStrategy};
pub use demosaic::{bayer_color, demosaic_bilinear, BayerColor};
pub use median::{median_at, median_filter, residual, residual_at, ResidualImage};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one sample in an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelCoord {
    pub row: usize,
    pub col: usize,
    #[serde(default)]
    pub channel: usize,
}

impl PixelCoord {
    pub const fn new(row: usize, col: usize, channel: usize) -> Self {
        Self { row, col, channel }
    }
}

/// Row-major, channel-interleaved intensity raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    bit_depth: u8,
    data: Vec<u16>,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        bit_depth: u8,
        data: Vec<u16>,
    ) -> Result<Self> {
        check_shape(width, height, channels, bit_depth)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        let max = max_value(bit_depth);
        if let Some(v) = data.iter().find(|&&v| v > max) {
            return Err(Error::invalid(format!(
                "value {v} exceeds {bit_depth}-bit range"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            bit_depth,
            data,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        channels: usize,
        bit_depth: u8,
        value: u16,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            bit_depth,
            vec![value; width * height * channels],
        )
    }

    /// Build an image from real-valued samples, rounding half to even and
    /// clipping into the representable range.
    pub fn from_f64(
        width: usize,
        height: usize,
        channels: usize,
        bit_depth: u8,
        values: &[f64],
    ) -> Result<Self> {
        check_shape(width, height, channels, bit_depth)?;
        if values.len() != width * height * channels {
            return Err(Error::invalid("sample count does not match dimensions"));
        }
        let max = f64::from(max_value(bit_depth));
        let data = values
            .iter()
            .map(|&v| quantize(v, max))
            .collect::<Vec<_>>();
        Self::new(width, height, channels, bit_depth, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn max_value(&self) -> u16 {
        max_value(self.bit_depth)
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> u16 {
        self.data[self.index(row, col, channel)]
    }

    /// Sample with coordinates clamped to the image (edge replication).
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize, channel: usize) -> u16 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c, channel)
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: u16) {
        let max = self.max_value();
        let i = self.index(row, col, channel);
        self.data[i] = value.min(max);
    }

    pub fn contains(&self, coord: PixelCoord) -> bool {
        coord.row < self.height && coord.col < self.width && coord.channel < self.channels
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    /// Copy out a rectangular region.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width || width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for r in row..row + height {
            let start = self.index(r, col, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self {
            width,
            height,
            channels: self.channels,
            bit_depth: self.bit_depth,
            data,
        })
    }

    /// Per-channel spatial mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += f64::from(v);
            }
        }
        let n = (self.width * self.height) as f64;
        sums.iter().map(|s| s / n).collect()
    }

    /// Add `offset` to every sample, saturating at the range limits.
    pub fn shifted(&self, offset: i32) -> Self {
        let max = i32::from(self.max_value());
        let data = self
            .data
            .iter()
            .map(|&v| (i32::from(v) + offset).clamp(0, max) as u16)
            .collect();
        Self {
            data,
            ..self.clone()
        }
    }
}

fn check_shape(width: usize, height: usize, channels: usize, bit_depth: u8) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::invalid(format!(
            "bit depth must be 8 or 16, got {bit_depth}"
        )));
    }
    Ok(())
}

pub fn max_value(bit_depth: u8) -> u16 {
    if bit_depth >= 16 {
        u16::MAX
    } else {
        (1u16 << bit_depth) - 1
    }
}

/// Round half to even and clip to `[0, max]`.
pub fn quantize(v: f64, max: f64) -> u16 {
    if !v.is_finite() {
        return 0;
    }
    v.round_ties_even().clamp(0.0, max) as u16
}

/// What a frame depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameKind {
    DarkField,
    BrightField,
    Scene,
}

/// Capture context of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    /// Days since the device epoch.
    pub timestamp: f64,
    pub iso: f64,
    pub exposure_s: f64,
    pub focal_mm: f64,
    pub f_number: f64,
    pub kind: FrameKind,
    #[serde(default)]
    pub device_id: String,
}

impl AcquisitionMeta {
    pub fn scene(timestamp: f64, iso: f64, exposure_s: f64) -> Self {
        Self {
            timestamp,
            iso,
            exposure_s,
            focal_mm: 50.0,
            f_number: 8.0,
            kind: FrameKind::Scene,
            device_id: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.timestamp >= 0.0, "timestamp must be >= 0"),
            (self.iso > 0.0, "iso must be > 0"),
            (self.exposure_s > 0.0, "exposure_s must be > 0"),
            (self.focal_mm > 0.0, "focal_mm must be > 0"),
            (self.f_number > 0.0, "f_number must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        Ok(())
    }

    /// ISO gain normalised to ISO 100.
    pub fn gain(&self) -> f64 {
        self.iso / 100.0
    }

    /// Dark-current scale: ISO gain times exposure time, temperature held constant.
    pub fn tau(&self) -> f64 {
        self.gain() * self.exposure_s
    }

    pub fn aperture_diameter_mm(&self) -> f64 {
        self.focal_mm / self.f_number
    }
}
