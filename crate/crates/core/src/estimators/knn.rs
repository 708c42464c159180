use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImageClassifier;
use crate::error::{Error, Result};
use crate::imaging::{block_origins, AcquisitionMeta, CropStrategy, PixelCoord, RasterImage};

/// 27 raw values of a 3x3x3 window plus two local-variation features per
/// channel.
pub const FEATURE_DIM: usize = 33;
const WINDOW_LEN: usize = 27;

/// Features of a 3x3 RGB window given in (row, col, channel) order.
pub fn lv_features(window: &[f64]) -> Result<[f64; FEATURE_DIM]> {
    if window.len() != WINDOW_LEN {
        return Err(Error::invalid(format!(
            "expected a 3x3x3 window of {WINDOW_LEN} values, got {}",
            window.len()
        )));
    }
    let mut out = [0.0; FEATURE_DIM];
    out[..WINDOW_LEN].copy_from_slice(window);
    for ch in 0..3 {
        let centre = window[4 * 3 + ch];
        let mut neighbour_sum = 0.0;
        let mut sq = 0.0;
        for pos in 0..9 {
            let v = window[pos * 3 + ch];
            if pos != 4 {
                neighbour_sum += v;
            }
            sq += (v - centre) * (v - centre);
        }
        out[WINDOW_LEN + 2 * ch] = (centre - neighbour_sum / 8.0).abs();
        out[WINDOW_LEN + 2 * ch + 1] = (sq / 8.0).sqrt();
    }
    Ok(out)
}

fn features_f32(window: &[u16]) -> [f32; FEATURE_DIM] {
    let w: Vec<f64> = window.iter().map(|&v| f64::from(v)).collect();
    lv_features(&w).expect("window length checked by caller").map(|v| v as f32)
}

fn read_window(img: &RasterImage, row: usize, col: usize, out: &mut Vec<u16>) {
    for r in row - 1..=row + 1 {
        for c in col - 1..=col + 1 {
            for ch in 0..3 {
                out.push(img.get(r, c, ch));
            }
        }
    }
}

/// Most frequent entry of `counts`; ties go to the smallest index.
pub(crate) fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Label predicted by a k-nearest-neighbour vote. Distance ties go to the
/// earlier stored sample; among labels tied on votes, the one holding the
/// nearest neighbour wins.
fn knn_predict(store: &[f32], labels: &[usize], n_labels: usize, k: usize, query: &[f32; FEATURE_DIM]) -> usize {
    let k = k.min(labels.len()).max(1);
    let mut best: Vec<(f32, usize)> = Vec::with_capacity(k + 1);
    for (i, row) in store.chunks_exact(FEATURE_DIM).enumerate() {
        let mut d = 0.0f32;
        for (a, b) in row.iter().zip(query) {
            let t = a - b;
            d += t * t;
        }
        if best.len() < k || d < best[best.len() - 1].0 {
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
    }
    let mut counts = vec![0usize; n_labels];
    for &(_, i) in &best {
        counts[labels[i]] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    best.iter().map(|&(_, i)| labels[i]).find(|&l| counts[l] == top).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub block_size: usize,
    pub n_blocks: usize,
    /// Pixel classifiers kept per block.
    pub k_select: usize,
    pub k_neighbors: usize,
    /// Retrain the selected classifiers on two temporal halves per class.
    pub virtual_subclasses: bool,
    pub seed: u64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            block_size: 200,
            n_blocks: 45,
            k_select: 100,
            k_neighbors: 5,
            virtual_subclasses: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KnnSample<'a> {
    pub image: &'a RasterImage,
    pub class: usize,
    pub timestamp: f64,
}

/// One selected pixel location and its training store.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PixelClassifier {
    /// Position inside the block.
    pub row: usize,
    pub col: usize,
    pub validation_correct: usize,
    pub validation_total: usize,
    /// Raw 3x3x3 windows, 27 values per stored sample.
    pub windows: Vec<u16>,
    /// Sub-class label of each stored sample.
    pub labels: Vec<usize>,
    #[serde(skip)]
    features: Vec<f32>,
}

impl PixelClassifier {
    pub fn validation_accuracy(&self) -> f64 {
        self.validation_correct as f64 / self.validation_total.max(1) as f64
    }

    fn prepare(&mut self) {
        self.features = self.windows.chunks_exact(WINDOW_LEN).flat_map(features_f32).collect();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PixelwiseKNNModel {
    pub config: KnnConfig,
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
    pub subclass_to_class: Vec<usize>,
    pub block_origins: Vec<PixelCoord>,
    /// Selected classifiers of each block, best first.
    pub blocks: Vec<Vec<PixelClassifier>>,
}

impl PixelwiseKNNModel {
    /// Rebuild cached features after deserialisation.
    pub fn prepare(&mut self) {
        for c in self.blocks.iter_mut().flatten() {
            c.prepare();
        }
    }

    /// Selected pixel positions in image coordinates, per block.
    pub fn selected_pixels(&self) -> Vec<Vec<(usize, usize)>> {
        self.blocks
            .iter()
            .zip(&self.block_origins)
            .map(|(b, o)| b.iter().map(|c| (o.row + c.row, o.col + c.col)).collect())
            .collect()
    }
}

fn check_images(samples: &[KnnSample<'_>], width: usize, height: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.image.width() != width || s.image.height() != height || s.image.channels() != 3 {
            return Err(Error::invalid(format!(
                "sample {i} is {}x{}x{}, expected {width}x{height}x3",
                s.image.width(),
                s.image.height(),
                s.image.channels()
            )));
        }
    }
    Ok(())
}

/// Train one KNN per non-border pixel of each block, keep the `k_select`
/// best on the validation set (ties in raster order) and retrain those on
/// train plus validation data.
pub fn pixelwise_knn_train(
    train: &[KnnSample<'_>],
    validation: &[KnnSample<'_>],
    config: KnnConfig,
) -> Result<PixelwiseKNNModel> {
    let first = train.first().ok_or_else(|| Error::invalid("empty training set"))?;
    if validation.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let (width, height) = (first.image.width(), first.image.height());
    check_images(train, width, height)?;
    check_images(validation, width, height)?;
    let b = config.block_size;
    if b < 3 || config.k_neighbors == 0 {
        return Err(Error::invalid("block_size must be at least 3 and k_neighbors positive"));
    }
    let interior = (b - 2) * (b - 2);
    if interior < config.k_select || config.k_select == 0 {
        return Err(Error::invalid(format!(
            "a {b}x{b} block has {interior} non-border pixels, cannot select {}",
            config.k_select
        )));
    }
    let n_classes = train.iter().chain(validation).map(|s| s.class).max().expect("non-empty") + 1;
    let mut present = vec![false; n_classes];
    for s in train {
        present[s.class] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("training set must contain at least two classes"));
    }
    let origins = block_origins(width, height, b, CropStrategy::Random { n: config.n_blocks, seed: config.seed })?;

    // sub-class of every train+validation sample, split at the class median time
    let all: Vec<&KnnSample<'_>> = train.iter().chain(validation).collect();
    let (subclass, subclass_to_class) = if config.virtual_subclasses {
        let mut sub = vec![0usize; all.len()];
        for c in 0..n_classes {
            let mut members: Vec<usize> = (0..all.len()).filter(|&i| all[i].class == c).collect();
            members.sort_by(|&a, &b| all[a].timestamp.total_cmp(&all[b].timestamp).then(a.cmp(&b)));
            let half = members.len().div_ceil(2);
            for (rank, &i) in members.iter().enumerate() {
                sub[i] = 2 * c + usize::from(rank >= half);
            }
        }
        (sub, (0..2 * n_classes).map(|s| s / 2).collect::<Vec<_>>())
    } else {
        (all.iter().map(|s| s.class).collect(), (0..n_classes).collect())
    };

    let train_labels: Vec<usize> = train.iter().map(|s| s.class).collect();
    let k = config.k_neighbors;
    let mut blocks = Vec::with_capacity(origins.len());
    for o in &origins {
        let correct: Vec<usize> = (0..interior)
            .into_par_iter()
            .map(|p| {
                let (r, c) = (o.row + 1 + p / (b - 2), o.col + 1 + p % (b - 2));
                let mut win = Vec::with_capacity(WINDOW_LEN);
                let mut store = Vec::with_capacity(train.len() * FEATURE_DIM);
                for s in train {
                    win.clear();
                    read_window(s.image, r, c, &mut win);
                    store.extend(features_f32(&win));
                }
                validation
                    .iter()
                    .filter(|s| {
                        win.clear();
                        read_window(s.image, r, c, &mut win);
                        knn_predict(&store, &train_labels, n_classes, k, &features_f32(&win)) == s.class
                    })
                    .count()
            })
            .collect();
        let mut ranked: Vec<usize> = (0..interior).collect();
        ranked.sort_by(|&a, &b| correct[b].cmp(&correct[a]).then(a.cmp(&b)));
        let selected = ranked[..config.k_select]
            .iter()
            .map(|&p| {
                let (br, bc) = (1 + p / (b - 2), 1 + p % (b - 2));
                let mut windows = Vec::with_capacity(all.len() * WINDOW_LEN);
                for s in &all {
                    read_window(s.image, o.row + br, o.col + bc, &mut windows);
                }
                let mut pc = PixelClassifier {
                    row: br,
                    col: bc,
                    validation_correct: correct[p],
                    validation_total: validation.len(),
                    windows,
                    labels: subclass.clone(),
                    features: Vec::new(),
                };
                pc.prepare();
                pc
            })
            .collect();
        blocks.push(selected);
    }
    Ok(PixelwiseKNNModel {
        config,
        width,
        height,
        n_classes,
        subclass_to_class,
        block_origins: origins,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnPrediction {
    pub class: usize,
    /// Class chosen by each block.
    pub block_classes: Vec<usize>,
    /// Votes of the selected classifiers per block and class.
    pub block_votes: Vec<Vec<usize>>,
}

/// Two-level majority vote: classifiers within each block, then blocks.
pub fn pixelwise_knn_classify(model: &PixelwiseKNNModel, image: &RasterImage) -> Result<KnnPrediction> {
    if image.channels() != 3 || image.width() != model.width || image.height() != model.height {
        return Err(Error::invalid(format!(
            "image is {}x{}x{}, model expects {}x{}x3",
            image.width(),
            image.height(),
            image.channels(),
            model.width,
            model.height
        )));
    }
    let n_sub = model.subclass_to_class.len();
    let mut block_votes = Vec::with_capacity(model.blocks.len());
    let mut block_classes = Vec::with_capacity(model.blocks.len());
    let mut win = Vec::with_capacity(WINDOW_LEN);
    for (o, classifiers) in model.block_origins.iter().zip(&model.blocks) {
        let mut votes = vec![0usize; model.n_classes];
        for pc in classifiers {
            if pc.features.len() * WINDOW_LEN != pc.windows.len() * FEATURE_DIM {
                return Err(Error::InvalidModel("pixel classifier features not prepared".into()));
            }
            win.clear();
            read_window(image, o.row + pc.row, o.col + pc.col, &mut win);
            let sub = knn_predict(&pc.features, &pc.labels, n_sub, model.config.k_neighbors, &features_f32(&win));
            votes[model.subclass_to_class[sub]] += 1;
        }
        block_classes.push(majority(&votes));
        block_votes.push(votes);
    }
    let mut totals = vec![0usize; model.n_classes];
    for &c in &block_classes {
        totals[c] += 1;
    }
    Ok(KnnPrediction {
        class: majority(&totals),
        block_classes,
        block_votes,
    })
}

impl ImageClassifier for PixelwiseKNNModel {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict(&self, image: &RasterImage, _meta: &AcquisitionMeta) -> Result<usize> {
        Ok(pixelwise_knn_classify(self, image)?.class)
    }

    fn reentrant(&self) -> bool {
        true
    }
}
