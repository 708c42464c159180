use super::{quantize, RasterImage};
use crate::error::{Error, Result};

/// Colour filter of a Bayer site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerColor {
    Red = 0,
    Green = 1,
    Blue = 2,
}

/// Colour of site `(row, col)` in an RGGB mosaic.
#[inline]
pub fn bayer_color(row: usize, col: usize) -> BayerColor {
    match (row % 2, col % 2) {
        (0, 0) => BayerColor::Red,
        (1, 1) => BayerColor::Blue,
        _ => BayerColor::Green,
    }
}

/// Bilinear demosaicing of an RGGB mosaic.
///
/// A missing colour at a site is the mean of the same-coloured sites in its
/// 3x3 neighbourhood. For RGGB this is exactly the usual bilinear kernel set
/// (cross for green, diagonals or the horizontal/vertical pair for red and
/// blue). At the image border only in-bounds neighbours contribute.
pub fn demosaic_bilinear(bayer: &RasterImage) -> Result<RasterImage> {
    if bayer.channels() != 1 {
        return Err(Error::invalid("demosaic expects a single-channel mosaic"));
    }
    let (w, h) = (bayer.width(), bayer.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::invalid(format!(
            "mosaic dimensions must be even, got {w}x{h}"
        )));
    }
    let max = f64::from(bayer.max_value());
    let mut out = Vec::with_capacity(w * h * 3);
    for r in 0..h {
        for c in 0..w {
            let own = bayer_color(r, c) as usize;
            let mut sum = [0.0f64; 3];
            let mut cnt = [0u32; 3];
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let (rr, cc) = (rr as usize, cc as usize);
                    let col = bayer_color(rr, cc) as usize;
                    sum[col] += f64::from(bayer.get(rr, cc, 0));
                    cnt[col] += 1;
                }
            }
            for ch in 0..3 {
                let v = if ch == own {
                    f64::from(bayer.get(r, c, 0))
                } else {
                    sum[ch] / f64::from(cnt[ch])
                };
                out.push(quantize(v, max));
            }
        }
    }
    RasterImage::new(w, h, 3, bayer.bit_depth(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_rggb() {
        assert_eq!(bayer_color(0, 0), BayerColor::Red);
        assert_eq!(bayer_color(0, 1), BayerColor::Green);
        assert_eq!(bayer_color(1, 0), BayerColor::Green);
        assert_eq!(bayer_color(1, 1), BayerColor::Blue);
    }

    #[test]
    fn flat_field_is_preserved() {
        let b = RasterImage::filled(8, 6, 1, 8, 77).unwrap();
        let rgb = demosaic_bilinear(&b).unwrap();
        assert_eq!((rgb.width(), rgb.height(), rgb.channels()), (8, 6, 3));
        assert!(rgb.data().iter().all(|&v| v == 77));
    }

    #[test]
    fn hot_red_site_spreads() {
        let flat = RasterImage::filled(10, 10, 1, 8, 40).unwrap();
        let mut hot = flat.clone();
        hot.set(4, 4, 0, 240);
        let a = demosaic_bilinear(&flat).unwrap();
        let b = demosaic_bilinear(&hot).unwrap();
        let mut changed = 0;
        for r in 0..10 {
            for c in 0..10 {
                if (0..3).any(|k| a.get(r, c, k) != b.get(r, c, k)) {
                    changed += 1;
                }
            }
        }
        // the red plane of the full 3x3 neighbourhood is affected
        assert_eq!(changed, 9);
        assert_eq!(b.get(4, 4, 0), 240);
        assert_eq!(b.get(4, 5, 0), 140);
        assert_eq!(b.get(5, 5, 0), 90);
    }

    #[test]
    fn odd_dimensions_rejected() {
        let b = RasterImage::filled(7, 6, 1, 8, 0).unwrap();
        assert!(demosaic_bilinear(&b).is_err());
        let rgb = RasterImage::filled(6, 6, 3, 8, 0).unwrap();
        assert!(demosaic_bilinear(&rgb).is_err());
    }

    proptest! {
        #[test]
        fn flat_field_mean_within_one_step(v in 0u16..=65535, hw in 1usize..6) {
            let b = RasterImage::filled(hw * 2, hw * 2 + 2, 1, 16, v).unwrap();
            let rgb = demosaic_bilinear(&b).unwrap();
            for m in rgb.channel_means() {
                prop_assert!((m - f64::from(v)).abs() <= 1.0);
            }
        }
    }
}
