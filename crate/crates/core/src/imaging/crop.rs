use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PixelCoord, RasterImage};
use crate::error::{Error, Result};
use crate::rng;

/// Block placement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropStrategy {
    /// Maximal non-overlapping tiling, left-to-right then top-to-bottom.
    Grid,
    /// Four corners then the centre.
    FiveCrop,
    /// `n` seeded, non-overlapping positions.
    Random { n: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Block {
    pub image: RasterImage,
    pub origin: PixelCoord,
}

/// Block origins only; see [`crop_blocks`].
pub fn block_origins(
    width: usize,
    height: usize,
    block: usize,
    strategy: CropStrategy,
) -> Result<Vec<PixelCoord>> {
    if block == 0 || block > width.min(height) {
        return Err(Error::invalid(format!(
            "block size {block} does not fit a {width}x{height} image"
        )));
    }
    let origins = match strategy {
        CropStrategy::Grid => grid(width, height, block),
        CropStrategy::FiveCrop => {
            let (br, bc) = (height - block, width - block);
            vec![
                PixelCoord::new(0, 0, 0),
                PixelCoord::new(0, bc, 0),
                PixelCoord::new(br, 0, 0),
                PixelCoord::new(br, bc, 0),
                PixelCoord::new(br / 2, bc / 2, 0),
            ]
        }
        CropStrategy::Random { n, seed } => random(width, height, block, n, seed)?,
    };
    Ok(origins)
}

fn grid(width: usize, height: usize, block: usize) -> Vec<PixelCoord> {
    let mut v = Vec::new();
    for r in 0..height / block {
        for c in 0..width / block {
            v.push(PixelCoord::new(r * block, c * block, 0));
        }
    }
    v
}

fn overlaps(a: PixelCoord, b: PixelCoord, block: usize) -> bool {
    a.row < b.row + block && b.row < a.row + block && a.col < b.col + block && b.col < a.col + block
}

fn random(width: usize, height: usize, block: usize, n: usize, seed: u64) -> Result<Vec<PixelCoord>> {
    // Axis-aligned squares of side `block` never pack more densely than the grid.
    let capacity = (width / block) * (height / block);
    if n > capacity {
        return Err(Error::invalid(format!(
            "{n} non-overlapping {block}px blocks do not fit a {width}x{height} image (max {capacity})"
        )));
    }
    let mut rng = rng::stream(seed, "crop-blocks");
    let mut chosen: Vec<PixelCoord> = Vec::with_capacity(n);
    let budget = 200 * n.max(1);
    for _ in 0..budget {
        if chosen.len() == n {
            return Ok(chosen);
        }
        let cand = PixelCoord::new(
            rng.random_range(0..=height - block),
            rng.random_range(0..=width - block),
            0,
        );
        if chosen.iter().all(|&o| !overlaps(o, cand, block)) {
            chosen.push(cand);
        }
    }
    if chosen.len() == n {
        return Ok(chosen);
    }
    // Dense requests: fall back to a seeded choice of grid cells.
    let mut cells = grid(width, height, block);
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    cells.truncate(n);
    Ok(cells)
}

/// Cut `img` into blocks of `block_size` x `block_size`.
pub fn crop_blocks(img: &RasterImage, block_size: usize, strategy: CropStrategy) -> Result<Vec<Block>> {
    block_origins(img.width(), img.height(), block_size, strategy)?
        .into_iter()
        .map(|origin| {
            Ok(Block {
                image: img.crop(origin.row, origin.col, block_size, block_size)?,
                origin,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origins(img: (usize, usize), block: usize, s: CropStrategy) -> Vec<(usize, usize)> {
        block_origins(img.0, img.1, block, s)
            .unwrap()
            .into_iter()
            .map(|o| (o.row, o.col))
            .collect()
    }

    #[test]
    fn grid_exact_tiling() {
        assert_eq!(origins((1000, 500), 500, CropStrategy::Grid), vec![(0, 0), (0, 500)]);
    }

    #[test]
    fn five_crop_corners_and_centre() {
        assert_eq!(
            origins((1024, 768), 256, CropStrategy::FiveCrop),
            vec![(0, 0), (0, 768), (512, 0), (512, 768), (256, 384)]
        );
    }

    #[test]
    fn random_is_deterministic() {
        let s = CropStrategy::Random { n: 45, seed: 9 };
        let a = origins((2000, 1200), 200, s);
        assert_eq!(a.len(), 45);
        assert_eq!(a, origins((2000, 1200), 200, s));
        assert_ne!(a, origins((2000, 1200), 200, CropStrategy::Random { n: 45, seed: 10 }));
    }

    #[test]
    fn random_infeasible_rejected() {
        assert!(block_origins(400, 400, 200, CropStrategy::Random { n: 5, seed: 1 }).is_err());
        assert_eq!(block_origins(400, 400, 200, CropStrategy::Random { n: 4, seed: 1 }).unwrap().len(), 4);
        assert!(block_origins(100, 400, 200, CropStrategy::Grid).is_err());
    }

    #[test]
    fn crop_blocks_copies_pixels() {
        let data: Vec<u16> = (0..64).collect();
        let img = RasterImage::new(8, 8, 1, 8, data).unwrap();
        let blocks = crop_blocks(&img, 4, CropStrategy::Grid).unwrap();
        assert_eq!(blocks.len(), 4);
        assert_eq!(blocks[3].origin, PixelCoord::new(4, 4, 0));
        assert_eq!(blocks[3].image.get(0, 0, 0), 36);
    }

    proptest! {
        #[test]
        fn blocks_disjoint_and_in_bounds(
            w in 10usize..300, h in 10usize..300, b in 3usize..60, n in 1usize..12, seed in any::<u64>()
        ) {
            prop_assume!(b <= w.min(h));
            for s in [CropStrategy::Grid, CropStrategy::Random { n, seed }] {
                let Ok(os) = block_origins(w, h, b, s) else {
                    prop_assert!(n > (w / b) * (h / b));
                    continue;
                };
                for (i, a) in os.iter().enumerate() {
                    prop_assert!(a.row + b <= h && a.col + b <= w);
                    for o in &os[i + 1..] {
                        prop_assert!(!overlaps(*a, *o, b));
                    }
                }
            }
        }
    }
}
