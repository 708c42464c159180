use super::{PixelCoord, RasterImage};
use crate::error::{Error, Result};

/// Signed residual raster: `img - median_filter(img)`, never clipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<i32>,
}

impl ResidualImage {
    pub fn get(&self, row: usize, col: usize, channel: usize) -> i32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn max_abs(&self) -> i32 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

fn check_kernel(img: &RasterImage, kernel: usize) -> Result<()> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(Error::invalid(format!(
            "median kernel must be odd and >= 3, got {kernel}"
        )));
    }
    if kernel > img.width().min(img.height()) {
        return Err(Error::invalid(format!(
            "median kernel {kernel} larger than {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

#[inline]
fn window_median(img: &RasterImage, row: usize, col: usize, channel: usize, kernel: usize, buf: &mut Vec<u16>) -> u16 {
    let half = (kernel / 2) as isize;
    buf.clear();
    for dr in -half..=half {
        for dc in -half..=half {
            buf.push(img.get_clamped(row as isize + dr, col as isize + dc, channel));
        }
    }
    let mid = buf.len() / 2;
    *buf.select_nth_unstable(mid).1
}

/// Per-channel median filter with edge replication at the borders.
pub fn median_filter(img: &RasterImage, kernel: usize) -> Result<RasterImage> {
    check_kernel(img, kernel)?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(w * h * ch);
    let mut buf = Vec::with_capacity(kernel * kernel);
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                out.push(window_median(img, r, c, k, kernel, &mut buf));
            }
        }
    }
    RasterImage::new(w, h, ch, img.bit_depth(), out)
}

/// Median-filtered value at a single sample; identical to
/// `median_filter(img, kernel)` at that position.
pub fn median_at(img: &RasterImage, coord: PixelCoord, kernel: usize) -> Result<u16> {
    check_kernel(img, kernel)?;
    if !img.contains(coord) {
        return Err(Error::invalid(format!("coordinate {coord:?} out of bounds")));
    }
    let mut buf = Vec::with_capacity(kernel * kernel);
    Ok(window_median(img, coord.row, coord.col, coord.channel, kernel, &mut buf))
}

/// Residual and median-filtered value at a single sample.
pub fn residual_at(img: &RasterImage, coord: PixelCoord, kernel: usize) -> Result<(i32, u16)> {
    let m = median_at(img, coord, kernel)?;
    let v = img.get(coord.row, coord.col, coord.channel);
    Ok((i32::from(v) - i32::from(m), m))
}

/// Median filter residual `img - median_filter(img, kernel)`.
pub fn residual(img: &RasterImage, kernel: usize) -> Result<ResidualImage> {
    let filtered = median_filter(img, kernel)?;
    let data = img
        .data()
        .iter()
        .zip(filtered.data())
        .map(|(&a, &b)| i32::from(a) - i32::from(b))
        .collect();
    Ok(ResidualImage {
        width: img.width(),
        height: img.height(),
        channels: img.channels(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> RasterImage {
        let data = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        RasterImage::new(w, h, 1, 8, data).unwrap()
    }

    /// Independent oracle: sort the full clamped window.
    fn oracle_median(img: &RasterImage, r: usize, c: usize, k: usize) -> u16 {
        let half = (k / 2) as isize;
        let mut v = Vec::new();
        for dr in -half..=half {
            for dc in -half..=half {
                v.push(img.get_clamped(r as isize + dr, c as isize + dc, 0));
            }
        }
        v.sort();
        v[v.len() / 2]
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = RasterImage::filled(7, 6, 3, 8, 50).unwrap();
        for k in [3, 5] {
            assert_eq!(median_filter(&img, k).unwrap(), img);
            assert!(residual(&img, k).unwrap().data.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn isolated_outlier_is_removed() {
        let img = gray(5, 5, |r, c| if (r, c) == (2, 2) { 200 } else { 50 });
        let f = median_filter(&img, 3).unwrap();
        assert_eq!(f.get(2, 2, 0), 50);
        let res = residual(&img, 3).unwrap();
        assert_eq!(res.get(2, 2, 0), 150);
        for r in 0..5 {
            for c in 0..5 {
                if (r, c) != (2, 2) {
                    assert_eq!(res.get(r, c, 0), 0);
                }
            }
        }
        let res_filtered = residual(&f, 3).unwrap();
        assert!(res_filtered.max_abs() < res.max_abs());
    }

    #[test]
    fn checkerboard_interior_matches_hand_evaluation() {
        // On a (r + c) parity checkerboard the 3x3 window around a 0 cell holds
        // the centre and four diagonals at 0 and the four edge neighbours at 255:
        // five zeros, so the median is 0. Around a 255 cell it is 255.
        let img = gray(8, 8, |r, c| if (r + c) % 2 == 0 { 0 } else { 255 });
        let f = median_filter(&img, 3).unwrap();
        assert_eq!(img.get(3, 3, 0), 0);
        assert_eq!(oracle_median(&img, 3, 3, 3), 0);
        assert_eq!(f.get(3, 3, 0), 0);
        assert_eq!(f.get(3, 4, 0), 255);
    }

    #[test]
    fn kernel_errors() {
        let img = RasterImage::filled(4, 4, 1, 8, 1).unwrap();
        assert!(median_filter(&img, 5).is_err());
        assert!(median_filter(&img, 4).is_err());
        assert!(median_filter(&img, 1).is_err());
        assert!(median_at(&img, PixelCoord::new(4, 0, 0), 3).is_err());
    }

    proptest! {
        #[test]
        fn matches_oracle_and_reconstructs(
            w in 5usize..12, h in 5usize..12, k in prop::sample::select(vec![3usize, 5]),
            seed in any::<u64>()
        ) {
            let img = gray(w, h, |r, c| (crate::rng::stream_seed(seed, "px", (r * 31 + c) as u64) % 256) as u16);
            let f = median_filter(&img, k).unwrap();
            let res = residual(&img, k).unwrap();
            let (lo, hi) = (*img.data().iter().min().unwrap(), *img.data().iter().max().unwrap());
            for r in 0..h {
                for c in 0..w {
                    let m = f.get(r, c, 0);
                    prop_assert_eq!(m, oracle_median(&img, r, c, k));
                    prop_assert!(m >= lo && m <= hi);
                    prop_assert_eq!(i32::from(m) + res.get(r, c, 0), i32::from(img.get(r, c, 0)));
                    prop_assert_eq!(median_at(&img, PixelCoord::new(r, c, 0), k).unwrap(), m);
                }
            }
        }
    }
}
