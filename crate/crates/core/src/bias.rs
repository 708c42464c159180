//! Content-bias audit of age classifiers.
//!
//! A classifier that has learned the age signal should still recognise the
//! class of a per-class average image, where scene content is washed out,
//! but not of its constant colour or of its median-filtered version, where
//! the high-frequency defect signal is gone. The audit compares accuracies
//! on these variants with the accuracy on ordinary test images.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::ImageClassifier;
use crate::imaging::{median_filter, AcquisitionMeta, RasterImage};
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct LabelledImage<'a> {
    pub image: &'a RasterImage,
    pub meta: &'a AcquisitionMeta,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AverageConfig {
    /// Fraction of each class drawn into one average.
    pub fraction: f64,
    pub n_sets: usize,
    pub seed: u64,
    /// Median kernel of the filtered variant.
    pub filter_kernel: usize,
}

impl Default for AverageConfig {
    fn default() -> Self {
        Self {
            fraction: 0.8,
            n_sets: 20,
            seed: 0,
            filter_kernel: 5,
        }
    }
}

/// The four variants of one class average.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAverage {
    pub class: usize,
    pub n_samples: usize,
    /// Pixel mean of the subsample.
    pub mean: RasterImage,
    /// Per-channel spatial mean of `mean`, broadcast.
    pub constant: RasterImage,
    /// `mean - constant`, re-centred at mid-gray.
    pub structure: RasterImage,
    /// Median-filtered `mean`.
    pub filtered: RasterImage,
    /// ISO 100, the mean dark-current scale as exposure, the mean timestamp.
    pub meta: AcquisitionMeta,
}

impl ClassAverage {
    pub fn variant(&self, input: InputType) -> Option<&RasterImage> {
        match input {
            InputType::Original => None,
            InputType::Mean => Some(&self.mean),
            InputType::Constant => Some(&self.constant),
            InputType::Structure => Some(&self.structure),
            InputType::Filtered => Some(&self.filtered),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageImageSet {
    pub set_index: usize,
    pub classes: Vec<ClassAverage>,
}

fn content_hash(s: &LabelledImage<'_>) -> u64 {
    let mut bytes = Vec::with_capacity(s.image.data().len() * 2 + 32);
    for v in s.image.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&(s.class as u64).to_le_bytes());
    bytes.extend_from_slice(&s.meta.timestamp.to_bits().to_le_bytes());
    bytes.extend_from_slice(&s.meta.tau().to_bits().to_le_bytes());
    rng::fnv1a(&bytes)
}

fn class_average(members: &[&LabelledImage<'_>], class: usize, kernel: usize) -> Result<ClassAverage> {
    let first = members[0].image;
    let (w, h, ch, depth) = (first.width(), first.height(), first.channels(), first.bit_depth());
    let n = members.len() as f64;
    let mut acc = vec![0.0; first.data().len()];
    for m in members {
        for (a, &v) in acc.iter_mut().zip(m.image.data()) {
            *a += f64::from(v);
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    let mut sums = vec![0.0; ch];
    for px in acc.chunks_exact(ch) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let colour: Vec<f64> = sums.iter().map(|s| s / (w * h) as f64).collect();
    let mid = f64::from(first.max_value() / 2 + 1);
    let constant: Vec<f64> = (0..w * h).flat_map(|_| colour.iter().copied()).collect();
    let structure: Vec<f64> = acc.iter().zip(&constant).map(|(a, c)| a - c + mid).collect();
    let mean = RasterImage::from_f64(w, h, ch, depth, &acc)?;
    let filtered = median_filter(&mean, kernel)?;
    let mean_tau = members.iter().map(|m| m.meta.tau()).sum::<f64>() / n;
    let mean_time = members.iter().map(|m| m.meta.timestamp).sum::<f64>() / n;
    let mut meta = AcquisitionMeta::scene(mean_time, 100.0, mean_tau.max(f64::MIN_POSITIVE));
    meta.device_id.clone_from(&members[0].meta.device_id);
    Ok(ClassAverage {
        class,
        n_samples: members.len(),
        mean,
        constant: RasterImage::from_f64(w, h, ch, depth, &constant)?,
        structure: RasterImage::from_f64(w, h, ch, depth, &structure)?,
        filtered,
        meta,
    })
}

/// Build `n_sets` sets of class averages, each from a random `fraction` of
/// every class. The result does not depend on the order of `samples`.
pub fn average_images(samples: &[LabelledImage<'_>], n_classes: usize, config: AverageConfig) -> Result<Vec<AverageImageSet>> {
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::invalid(format!("subsample fraction {} outside (0, 1]", config.fraction)));
    }
    if config.n_sets == 0 {
        return Err(Error::invalid("n_sets must be positive"));
    }
    let first = samples.first().ok_or_else(|| Error::invalid("no samples to average"))?;
    if let Some(i) = samples.iter().position(|s| !s.image.same_shape(first.image)) {
        return Err(Error::invalid(format!("sample {i} differs in shape from sample 0")));
    }
    let mut by_class: Vec<Vec<(u64, &LabelledImage<'_>)>> = vec![Vec::new(); n_classes];
    for s in samples {
        let slot = by_class
            .get_mut(s.class)
            .ok_or_else(|| Error::invalid(format!("class {} outside {n_classes} classes", s.class)))?;
        slot.push((content_hash(s), s));
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("class {c} has no samples")));
    }
    for members in &mut by_class {
        members.sort_by_key(|(h, _)| *h);
    }
    (0..config.n_sets)
        .into_par_iter()
        .map(|set| {
            let classes = by_class
                .iter()
                .enumerate()
                .map(|(c, members)| {
                    let n = members.len();
                    let take = ((config.fraction * n as f64).round() as usize).clamp(1, n);
                    let mut r = rng::indexed_stream(config.seed, &format!("average-set-class-{c}"), set as u64);
                    let mut idx = sample(&mut r, n, take).into_vec();
                    idx.sort_unstable();
                    let chosen: Vec<&LabelledImage<'_>> = idx.iter().map(|&i| members[i].1).collect();
                    class_average(&chosen, c, config.filter_kernel)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AverageImageSet { set_index: set, classes })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputType {
    /// Held-out test images.
    Original,
    Mean,
    Constant,
    Structure,
    Filtered,
}

impl InputType {
    pub const ALL: [InputType; 5] = [
        InputType::Original,
        InputType::Mean,
        InputType::Constant,
        InputType::Structure,
        InputType::Filtered,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            InputType::Original => "S",
            InputType::Mean => "Y",
            InputType::Constant => "Y_c",
            InputType::Structure => "Y_r",
            InputType::Filtered => "Y_f",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputAccuracy {
    pub input: InputType,
    /// Mean over average-image sets; plain accuracy for the originals.
    pub accuracy: f64,
    pub per_set: Vec<f64>,
    pub n_evaluated: usize,
    /// Predictions that returned an error; excluded from the accuracy.
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub n_classes: usize,
    pub chance: f64,
    pub entries: Vec<InputAccuracy>,
}

impl AccuracyTable {
    pub fn accuracy(&self, input: InputType) -> Option<f64> {
        self.entries.iter().find(|e| e.input == input).map(|e| e.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("input,symbol,accuracy,n_evaluated,n_failed\n");
        for e in &self.entries {
            let name = serde_json::to_value(e.input).expect("enum serializes");
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                name.as_str().unwrap_or_default(),
                e.input.symbol(),
                e.accuracy,
                e.n_evaluated,
                e.n_failed
            );
        }
        out
    }
}

/// `(correct, evaluated, failed)` over `(image, meta, class)` items.
fn score<C: ImageClassifier + ?Sized>(classifier: &C, items: &[(&RasterImage, &AcquisitionMeta, usize)]) -> (usize, usize, usize) {
    let one = |&(img, meta, class): &(&RasterImage, &AcquisitionMeta, usize)| match classifier.predict(img, meta) {
        Ok(p) => (usize::from(p == class), 1, 0),
        Err(_) => (0, 0, 1),
    };
    let add = |a: (usize, usize, usize), b: (usize, usize, usize)| (a.0 + b.0, a.1 + b.1, a.2 + b.2);
    if classifier.reentrant() {
        items.par_iter().map(one).reduce(|| (0, 0, 0), add)
    } else {
        items.iter().map(one).fold((0, 0, 0), add)
    }
}

fn ratio(correct: usize, evaluated: usize) -> f64 {
    if evaluated == 0 {
        0.0
    } else {
        correct as f64 / evaluated as f64
    }
}

/// Accuracy of `classifier` on the test originals and on every average
/// variant.
pub fn evaluate_input_suite<C: ImageClassifier + ?Sized>(
    classifier: &C,
    sets: &[AverageImageSet],
    test: &[LabelledImage<'_>],
) -> Result<AccuracyTable> {
    let n_classes = classifier.n_classes();
    if n_classes == 0 {
        return Err(Error::invalid("classifier reports zero classes"));
    }
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut entries = Vec::with_capacity(InputType::ALL.len());
    let originals: Vec<_> = test.iter().map(|s| (s.image, s.meta, s.class)).collect();
    let (c, e, f) = score(classifier, &originals);
    entries.push(InputAccuracy {
        input: InputType::Original,
        accuracy: ratio(c, e),
        per_set: Vec::new(),
        n_evaluated: e,
        n_failed: f,
    });
    for input in &InputType::ALL[1..] {
        let mut per_set = Vec::with_capacity(sets.len());
        let (mut evaluated, mut failed) = (0, 0);
        for set in sets {
            let items: Vec<_> = set
                .classes
                .iter()
                .map(|a| (a.variant(*input).expect("average variant"), &a.meta, a.class))
                .collect();
            let (c, e, f) = score(classifier, &items);
            per_set.push(ratio(c, e));
            evaluated += e;
            failed += f;
        }
        let accuracy = if per_set.is_empty() { 0.0 } else { per_set.iter().sum::<f64>() / per_set.len() as f64 };
        entries.push(InputAccuracy { input: *input, accuracy, per_set, n_evaluated: evaluated, n_failed: failed });
    }
    Ok(AccuracyTable { n_classes, chance: 1.0 / n_classes as f64, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerdictThresholds {
    /// Allowed drop from the original accuracy to the mean-image accuracy.
    pub delta_mean: f64,
    /// Allowed margin over chance for the constant and filtered variants.
    pub delta_chance: f64,
    /// Margin over chance of the constant variant that signals content bias.
    pub delta_bias: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            delta_mean: 0.1,
            delta_chance: 0.1,
            delta_bias: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    AgeSignalConsistent,
    ContentBiasSuspected,
    Inconclusive,
}

const EPS: f64 = 1e-12;

pub fn bias_verdict(table: &AccuracyTable, thresholds: VerdictThresholds) -> Result<Verdict> {
    let get = |i: InputType| {
        table
            .accuracy(i)
            .ok_or_else(|| Error::invalid(format!("accuracy table lacks the {} entry", i.symbol())))
    };
    let (s, mean, constant, filtered) = (
        get(InputType::Original)?,
        get(InputType::Mean)?,
        get(InputType::Constant)?,
        get(InputType::Filtered)?,
    );
    let chance = table.chance;
    let t = thresholds;
    if mean >= s - t.delta_mean - EPS && constant <= chance + t.delta_chance + EPS && filtered <= chance + t.delta_chance + EPS {
        Ok(Verdict::AgeSignalConsistent)
    } else if constant >= chance + t.delta_bias - EPS {
        Ok(Verdict::ContentBiasSuspected)
    } else {
        Ok(Verdict::Inconclusive)
    }
}

/// Keep the pixels where `mask` is non-zero and zero the rest.
pub fn apply_mask(image: &RasterImage, mask: &RasterImage) -> Result<RasterImage> {
    if (mask.width(), mask.height()) != (image.width(), image.height()) {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    if mask.channels() != 1 && mask.channels() != image.channels() {
        return Err(Error::invalid("mask must have one channel or as many as the image"));
    }
    let ch = image.channels();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let px = i / ch;
            let m = if mask.channels() == 1 { mask.data()[px] } else { mask.data()[i] };
            if m == 0 {
                0
            } else {
                v
            }
        })
        .collect();
    RasterImage::new(image.width(), image.height(), ch, image.bit_depth(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEvaluation {
    pub unmasked_accuracy: f64,
    pub masked_accuracy: f64,
    pub n_evaluated: usize,
    pub n_failed: usize,
}

/// Accuracy on masked test inputs next to the unmasked accuracy. `masks`
/// holds one mask for every input or a single mask shared by all.
pub fn mask_evaluate<C: ImageClassifier + ?Sized>(
    classifier: &C,
    masks: &[RasterImage],
    test: &[LabelledImage<'_>],
) -> Result<MaskEvaluation> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if masks.len() != 1 && masks.len() != test.len() {
        return Err(Error::invalid(format!(
            "{} masks for {} inputs; supply one shared mask or one per input",
            masks.len(),
            test.len()
        )));
    }
    let masked: Vec<RasterImage> = test
        .iter()
        .enumerate()
        .map(|(i, s)| apply_mask(s.image, &masks[if masks.len() == 1 { 0 } else { i }]))
        .collect::<Result<_>>()?;
    let plain: Vec<_> = test.iter().map(|s| (s.image, s.meta, s.class)).collect();
    let probe: Vec<_> = masked.iter().zip(test).map(|(m, s)| (m, s.meta, s.class)).collect();
    let (cu, eu, _) = score(classifier, &plain);
    let (cm, em, fm) = score(classifier, &probe);
    Ok(MaskEvaluation {
        unmasked_accuracy: ratio(cu, eu),
        masked_accuracy: ratio(cm, em),
        n_evaluated: em,
        n_failed: fm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub accuracies: AccuracyTable,
    pub chance_level: f64,
    pub thresholds: VerdictThresholds,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskEvaluation>,
}

impl BiasReport {
    pub fn new(accuracies: AccuracyTable, thresholds: VerdictThresholds, mask: Option<MaskEvaluation>) -> Result<Self> {
        let verdict = bias_verdict(&accuracies, thresholds)?;
        Ok(Self { chance_level: accuracies.chance, accuracies, thresholds, verdict, mask })
    }
}
