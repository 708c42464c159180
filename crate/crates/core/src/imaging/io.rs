//! PNG and PGM/PPM decoding, PNG encoding.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use super::RasterImage;
use crate::error::{Error, Result};

fn codec(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Decode a PNG (8/16-bit, gray or RGB) or a PGM/PPM file.
pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynimg = image::load_from_memory(&bytes).map_err(|e| codec(path, e))?;
    from_dynamic(dynimg).map_err(|e| codec(path, e))
}

fn from_dynamic(img: DynamicImage) -> Result<RasterImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => {
            RasterImage::new(w, h, 1, 8, b.into_raw().into_iter().map(u16::from).collect())
        }
        DynamicImage::ImageRgb8(b) => {
            RasterImage::new(w, h, 3, 8, b.into_raw().into_iter().map(u16::from).collect())
        }
        DynamicImage::ImageLuma16(b) => RasterImage::new(w, h, 1, 16, b.into_raw()),
        DynamicImage::ImageRgb16(b) => RasterImage::new(w, h, 3, 16, b.into_raw()),
        other => Err(Error::invalid(format!(
            "unsupported pixel layout {:?}",
            other.color()
        ))),
    }
}

fn to_dynamic(img: &RasterImage) -> DynamicImage {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let narrow = || img.data().iter().map(|&v| v as u8).collect::<Vec<u8>>();
    let wide = || img.data().to_vec();
    match (img.channels(), img.bit_depth()) {
        (1, 8) => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, narrow()).unwrap()),
        (3, 8) => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, narrow()).unwrap()),
        (1, _) => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, wide()).unwrap()),
        _ => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, wide()).unwrap()),
    }
}

/// Encode as PNG, preserving bit depth and channel count.
pub fn write_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_dynamic(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec(path, e))
}

/// Encode as binary PGM (gray) or PPM (RGB).
pub fn write_pnm(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    to_dynamic(img)
        .save_with_format(path, ImageFormat::Pnm)
        .map_err(|e| codec(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image() -> impl Strategy<Value = RasterImage> {
        (1usize..9, 1usize..9, prop::sample::select(vec![1usize, 3]), prop::sample::select(vec![8u8, 16]))
            .prop_flat_map(|(w, h, ch, bd)| {
                let max = if bd == 8 { 255u16 } else { u16::MAX };
                prop::collection::vec(0..=max, w * h * ch)
                    .prop_map(move |d| RasterImage::new(w, h, ch, bd, d).unwrap())
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lossless_round_trip(img in arb_image()) {
            let dir = tempfile::tempdir().unwrap();
            let png = dir.path().join("a.png");
            write_png(&img, &png).unwrap();
            prop_assert_eq!(&read_image(&png).unwrap(), &img);
            let pnm = dir.path().join(if img.channels() == 1 { "a.pgm" } else { "a.ppm" });
            write_pnm(&img, &pnm).unwrap();
            prop_assert_eq!(&read_image(&pnm).unwrap(), &img);
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_image("/nonexistent/x.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
