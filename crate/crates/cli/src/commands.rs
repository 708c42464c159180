use std::collections::BTreeMap;
use std::path::Path;

use agetrace::bias::{average_images, evaluate_input_suite, mask_evaluate, AverageConfig, BiasReport, LabelledImage, VerdictThresholds};
use agetrace::detect::{
    detect_defects_dfi, estimate_all, extract_residual_series, inter_defect_distance_histogram, rgb_site,
    sector_uniformity_test, DefectEstimate, DistanceHistogram, SectorTest,
};
use agetrace::estimators::{
    iip_place, mi_order, ml_approximate_age, ml_query_from_image, nb_classify, nb_train, pixelwise_knn_classify,
    pixelwise_knn_train, prnu_estimate, ImageClassifier, KnnConfig, KnnSample, LikelihoodAgeModel, MlImageClassifier,
    ModelFile, NbImageClassifier, NbVariant, MODEL_FORMAT_VERSION,
};
use agetrace::imaging::io::read_image;
use agetrace::imaging::{residual_at, AcquisitionMeta, FrameKind, RasterImage};
use agetrace::manifest::{DatasetManifest, ManifestRecord};
use agetrace::rng;
use agetrace::sim::{synthesize_dataset, DatasetSpec, GroundTruth};
use agetrace::stats::{classification_report, mae, relative_estimation_error, ClassificationReport};
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::report::{write_text, Report};
use crate::{config, CliError, ConfigArgs, EstimatorKind};

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{what} {}: {e}", path.display())))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn scenes(m: &DatasetManifest, trusted: bool) -> Vec<&ManifestRecord> {
    m.chronological(FrameKind::Scene)
        .into_iter()
        .filter(|r| r.is_trusted() == trusted)
        .collect()
}

fn load_all(m: &DatasetManifest, records: &[&ManifestRecord]) -> Result<Vec<RasterImage>, CliError> {
    records.iter().map(|r| m.load_image(r).map_err(CliError::from)).collect()
}

/// Class of each session, taken from its trusted images.
fn session_classes(trusted: &[&ManifestRecord]) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for r in trusted {
        if let Some(c) = r.class_label {
            map.entry(r.session_index).or_insert(c);
        }
    }
    map
}

pub fn simulate(spec_path: &Path, out: &Path, report: Option<&Path>) -> Result<(), CliError> {
    let spec: DatasetSpec = read_json(spec_path, "dataset spec")?;
    let (manifest, truth) = synthesize_dataset(&spec, out)?;
    let count = |k: FrameKind| manifest.records.iter().filter(|r| r.kind == k).count();
    let result = json!({
        "out_dir": path_str(out),
        "n_records": manifest.records.len(),
        "n_scenes": count(FrameKind::Scene),
        "n_queries": manifest.records.iter().filter(|r| r.kind == FrameKind::Scene && !r.is_trusted()).count(),
        "n_dark_fields": count(FrameKind::DarkField),
        "n_defects": truth.defects.len(),
        "n_dust_particles": truth.dust.len(),
        "rate_per_day": truth.rate_per_day,
    });
    let config = serde_json::to_value(&spec).expect("spec serializes");
    Report::new("simulate", Some(spec.rng_seed), json!({ "spec": path_str(spec_path) }), config, result).emit(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DetectConfig {
    /// Mean dark-field value above which a site is defective.
    threshold: f64,
    /// Median kernel of the residuals.
    kernel: usize,
    /// Sector grid of the spatial uniformity test.
    sector_grid: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { threshold: 14.0, kernel: 5, sector_grid: 4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCount {
    pub session: usize,
    pub timestamp: f64,
    pub n_frames: usize,
    pub n_defects: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustedImage {
    pub path: String,
    pub timestamp: f64,
    pub class_label: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectResult {
    pub kernel: usize,
    pub sensor_width: usize,
    pub sensor_height: usize,
    /// Session whose dark fields define the defect set.
    pub dark_session: usize,
    pub per_session: Vec<SessionCount>,
    pub trusted: Vec<TrustedImage>,
    pub defects: Vec<DefectEstimate>,
    /// Timestamp of the trusted image at each defect's onset; `None` when
    /// the defect never appears in the trusted images.
    pub onset_timestamps: Vec<Option<f64>>,
    pub distance_test: Option<DistanceHistogram>,
    pub sector_test: Option<SectorTest>,
}

pub fn detect(manifest_path: &Path, out: Option<&Path>, args: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, echo): (DetectConfig, _) = config::load(args.config.as_deref(), &args.sets)?;
    let m = DatasetManifest::read(manifest_path)?;
    let mut by_session: BTreeMap<usize, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in m.chronological(FrameKind::DarkField) {
        by_session.entry(r.session_index).or_default().push(r);
    }
    if by_session.is_empty() {
        return Err(CliError::Usage("manifest has no dark-field frames".into()));
    }
    let mut per_session = Vec::new();
    let mut latest = Vec::new();
    let mut dims = (0, 0);
    let mut dark_session = 0;
    for (&session, records) in &by_session {
        let dfis = load_all(&m, records)?;
        let found = detect_defects_dfi(&dfis, cfg.threshold)?;
        dims = (dfis[0].width(), dfis[0].height());
        per_session.push(SessionCount {
            session,
            timestamp: records[0].timestamp,
            n_frames: records.len(),
            n_defects: found.len(),
        });
        latest = found;
        dark_session = session;
    }
    let trusted = scenes(&m, true);
    if trusted.len() < 4 {
        return Err(CliError::Usage(format!("onset estimation needs at least 4 trusted scenes, manifest has {}", trusted.len())));
    }
    let images = load_all(&m, &trusted)?;
    let metas: Vec<AcquisitionMeta> = trusted.iter().map(|r| r.meta()).collect();
    let sites: Vec<_> = latest.iter().map(|&c| rgb_site(c)).collect();
    let series = extract_residual_series(&images, &metas, &sites, cfg.kernel)?;
    let defects = estimate_all(&series)?;
    let onset_timestamps = defects.iter().map(|d| trusted.get(d.onset_index_j).map(|r| r.timestamp)).collect();
    let (w, h) = dims;
    let distance_test = if latest.len() >= 2 { Some(inter_defect_distance_histogram(&latest, w, h, None)?) } else { None };
    let sector_test = if !latest.is_empty() && cfg.sector_grid <= w.min(h) {
        Some(sector_uniformity_test(&latest, w, h, cfg.sector_grid)?)
    } else {
        None
    };
    let result = DetectResult {
        kernel: cfg.kernel,
        sensor_width: w,
        sensor_height: h,
        dark_session,
        per_session,
        trusted: trusted
            .iter()
            .map(|r| TrustedImage { path: r.path.clone(), timestamp: r.timestamp, class_label: r.class_label })
            .collect(),
        defects,
        onset_timestamps,
        distance_test,
        sector_test,
    };
    Report::new("detect", None, json!({ "manifest": path_str(manifest_path) }), echo, result).emit(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    /// Share of each class held out to rank KNN pixel classifiers.
    validation_fraction: f64,
    knn: KnnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { validation_fraction: 0.25, knn: KnnConfig::default() }
    }
}

fn read_detect_report(path: Option<&Path>, trusted: &[&ManifestRecord]) -> Result<DetectResult, CliError> {
    let path = path.ok_or_else(|| CliError::Usage("--defects (a detect report) is required by this estimator".into()))?;
    let v: serde_json::Value = read_json(path, "detect report")?;
    if v.get("command").and_then(|c| c.as_str()) != Some("detect") {
        return Err(CliError::Usage(format!("{} is not a detect report", path.display())));
    }
    let result: DetectResult = serde_json::from_value(v["result"].clone())
        .map_err(|e| CliError::Usage(format!("detect report {}: {e}", path.display())))?;
    let same = result.trusted.len() == trusted.len()
        && result.trusted.iter().zip(trusted).all(|(a, b)| a.path == b.path);
    if !same {
        return Err(CliError::Usage("the detect report was produced for a different set of trusted images".into()));
    }
    if result.defects.is_empty() {
        return Err(CliError::Usage("the detect report lists no defects".into()));
    }
    Ok(result)
}

pub fn train(
    manifest_path: &Path,
    estimator: EstimatorKind,
    defects: Option<&Path>,
    model_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    args: &ConfigArgs,
) -> Result<(), CliError> {
    let (mut cfg, _): (TrainConfig, _) = config::load(args.config.as_deref(), &args.sets)?;
    let m = DatasetManifest::read(manifest_path)?;
    let trusted = scenes(&m, true);
    if trusted.is_empty() {
        return Err(CliError::Usage("manifest has no labelled (trusted) scenes".into()));
    }
    let labels: Vec<usize> = trusted.iter().map(|r| r.class_label.expect("trusted")).collect();
    let n_classes = labels.iter().max().map_or(0, |c| c + 1);
    let mut class_counts = vec![0usize; n_classes];
    for &l in &labels {
        class_counts[l] += 1;
    }
    let images = load_all(&m, &trusted)?;
    let mut summary = json!({});
    let model = match estimator {
        EstimatorKind::Ml => {
            let d = read_detect_report(defects, &trusted)?;
            summary["n_defects"] = json!(d.defects.len());
            let model = LikelihoodAgeModel::new(d.defects, trusted.len(), d.kernel)?;
            summary["n_intervals"] = json!(model.interval_starts().len());
            ModelFile::Ml { format_version: MODEL_FORMAT_VERSION, model, class_of_index: labels.clone(), n_classes }
        }
        EstimatorKind::NbNe | EstimatorKind::NbHe | EstimatorKind::NbKde => {
            let d = read_detect_report(defects, &trusted)?;
            let coords: Vec<_> = d.defects.iter().map(|e| e.coord).collect();
            let features = images
                .iter()
                .map(|img| coords.iter().map(|&c| residual_at(img, c, d.kernel).map(|(r, _)| f64::from(r))).collect())
                .collect::<agetrace::Result<Vec<Vec<f64>>>>()?;
            let variant = match estimator {
                EstimatorKind::NbNe => NbVariant::Ne,
                EstimatorKind::NbHe => NbVariant::He,
                _ => NbVariant::Kde,
            };
            summary["n_features"] = json!(coords.len());
            let model = nb_train(variant, &features, &labels, n_classes)?;
            ModelFile::Nb { format_version: MODEL_FORMAT_VERSION, model, coords, kernel: d.kernel }
        }
        EstimatorKind::Knn => {
            let seed = seed.ok_or_else(|| CliError::Usage("--seed is required for the knn estimator".into()))?;
            cfg.knn.seed = seed;
            if !(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0) {
                return Err(CliError::Usage("validation_fraction must lie in (0, 1)".into()));
            }
            let mut validation = vec![false; trusted.len()];
            for c in 0..n_classes {
                let mut members: Vec<usize> = (0..trusted.len()).filter(|&i| labels[i] == c).collect();
                if members.len() < 2 {
                    continue;
                }
                members.shuffle(&mut rng::indexed_stream(seed, "knn-validation", c as u64));
                let take = ((cfg.validation_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
                for &i in &members[..take] {
                    validation[i] = true;
                }
            }
            let sample = |i: usize| KnnSample { image: &images[i], class: labels[i], timestamp: trusted[i].timestamp };
            let train: Vec<_> = (0..trusted.len()).filter(|&i| !validation[i]).map(sample).collect();
            let val: Vec<_> = (0..trusted.len()).filter(|&i| validation[i]).map(sample).collect();
            let model = pixelwise_knn_train(&train, &val, cfg.knn)?;
            let accs: Vec<f64> = model.blocks.iter().flatten().map(|c| c.validation_accuracy()).collect();
            summary["n_train"] = json!(train.len());
            summary["n_validation"] = json!(val.len());
            summary["n_blocks"] = json!(model.blocks.len());
            summary["mean_selected_validation_accuracy"] = json!(accs.iter().sum::<f64>() / accs.len().max(1) as f64);
            ModelFile::Knn { format_version: MODEL_FORMAT_VERSION, model }
        }
    };
    model.write(model_path)?;
    let result = json!({
        "estimator": model.estimator_name(),
        "model": path_str(model_path),
        "n_trusted": trusted.len(),
        "n_classes": n_classes,
        "class_counts": class_counts,
        "summary": summary,
    });
    let inputs = json!({
        "manifest": path_str(manifest_path),
        "defects": defects.map(path_str),
        "estimator": model.estimator_name(),
    });
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    let seed = if estimator == EstimatorKind::Knn { seed } else { None };
    Report::new("train", seed, inputs, echo, result).emit(out)
}

fn classifier(model: ModelFile) -> Result<Box<dyn ImageClassifier>, CliError> {
    Ok(match model {
        ModelFile::Ml { model, class_of_index, .. } => Box::new(MlImageClassifier::new(model, class_of_index)?),
        ModelFile::Nb { model, coords, kernel, .. } => Box::new(NbImageClassifier { model, coords, kernel }),
        ModelFile::Knn { model, .. } => Box::new(model),
    })
}

#[derive(Debug, Serialize)]
struct QueryEstimate {
    path: String,
    timestamp: f64,
    session_index: usize,
    class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimated_timestamp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_index: Option<usize>,
}

#[derive(Debug, Serialize)]
struct IndexMetrics {
    mae: f64,
    /// Distinct trusted indices at which ground-truth defects of the model
    /// first appear.
    onset_indices: Vec<usize>,
    relative_estimation_error: Option<f64>,
}

pub fn approximate(manifest_path: &Path, model_path: &Path, truth_path: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let m = DatasetManifest::read(manifest_path)?;
    let model = ModelFile::read(model_path)?;
    let trusted = scenes(&m, true);
    let queries = scenes(&m, false);
    if queries.is_empty() {
        return Err(CliError::Usage("manifest has no unlabelled query scenes".into()));
    }
    if let ModelFile::Ml { model: ml, .. } = &model {
        if ml.trusted_len != trusted.len() {
            return Err(CliError::Usage(format!(
                "model indexes {} trusted images, manifest has {}",
                ml.trusted_len,
                trusted.len()
            )));
        }
    }
    let truth: Option<GroundTruth> = truth_path.map(|p| read_json(p, "ground truth")).transpose()?;
    let classes = session_classes(&trusted);
    let true_index = |t: f64| trusted.iter().filter(|r| r.timestamp <= t).count().saturating_sub(1);
    let mut estimates = Vec::with_capacity(queries.len());
    for q in &queries {
        let image = m.load_image(q)?;
        let meta = q.meta();
        let mut e = QueryEstimate {
            path: q.path.clone(),
            timestamp: q.timestamp,
            session_index: q.session_index,
            class: 0,
            index: None,
            estimated_timestamp: None,
            posterior: None,
            true_class: classes.get(&q.session_index).copied(),
            true_index: None,
        };
        match &model {
            ModelFile::Ml { model, class_of_index, .. } => {
                let (w, illum) = ml_query_from_image(model, &image)?;
                let est = ml_approximate_age(model, &w, &illum, &meta)?;
                e.class = class_of_index[est.index];
                e.index = Some(est.index);
                e.estimated_timestamp = Some(trusted[est.index].timestamp);
                if truth.is_some() {
                    e.true_index = Some(true_index(q.timestamp));
                }
            }
            ModelFile::Nb { model, coords, kernel, .. } => {
                let clf = NbImageClassifier { model: model.clone(), coords: coords.clone(), kernel: *kernel };
                let p = nb_classify(model, &clf.features(&image)?)?;
                e.class = p.class;
                e.posterior = Some(p.posterior);
            }
            ModelFile::Knn { model, .. } => {
                e.class = pixelwise_knn_classify(model, &image)?.class;
            }
        }
        estimates.push(e);
    }

    let class_report: Option<ClassificationReport> = if estimates.iter().all(|e| e.true_class.is_some()) {
        let pred: Vec<usize> = estimates.iter().map(|e| e.class).collect();
        let tru: Vec<usize> = estimates.iter().map(|e| e.true_class.expect("checked")).collect();
        let n = pred.iter().chain(&tru).max().map_or(0, |c| c + 1);
        Some(classification_report(&pred, &tru, n)?)
    } else {
        None
    };

    let index_metrics = match (&model, &truth) {
        (ModelFile::Ml { model: ml, .. }, Some(gt)) => {
            let pred: Vec<f64> = estimates.iter().map(|e| e.index.expect("ml") as f64).collect();
            let tru: Vec<f64> = estimates.iter().map(|e| e.true_index.expect("truth given") as f64).collect();
            let mae_value = mae(&pred, &tru)?;
            let mut onset_indices: Vec<usize> = ml
                .defects
                .iter()
                .filter_map(|d| {
                    gt.defects
                        .iter()
                        .find(|g| (g.coord.row, g.coord.col) == (d.coord.row, d.coord.col))
                        .map(|g| trusted.iter().filter(|r| r.timestamp < g.onset_time).count())
                })
                .filter(|&j| j > 0 && j < trusted.len())
                .collect();
            onset_indices.sort_unstable();
            onset_indices.dedup();
            let times: Vec<f64> = onset_indices.iter().map(|&j| j as f64).collect();
            let rel = if times.len() >= 2 { Some(relative_estimation_error(mae_value, &times)?) } else { None };
            Some(IndexMetrics { mae: mae_value, onset_indices, relative_estimation_error: rel })
        }
        _ => None,
    };

    let result = json!({
        "estimator": model.estimator_name(),
        "n_queries": estimates.len(),
        "queries": estimates,
        "classification": class_report,
        "index_metrics": index_metrics,
    });
    let inputs = json!({
        "manifest": path_str(manifest_path),
        "model": path_str(model_path),
        "ground_truth": truth_path.map(path_str),
    });
    Report::new("approximate", None, inputs, json!({}), result).emit(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OrderConfig {
    /// Median kernel of the PRNU residuals.
    kernel: usize,
}

impl Default for OrderConfig {
    fn default() -> Self {
        Self { kernel: 3 }
    }
}

#[derive(Debug, Serialize)]
struct Placement {
    path: String,
    session_index: usize,
    placed_session: usize,
    correlations: Vec<f64>,
}

pub fn order(manifest_path: &Path, out: Option<&Path>, args: &ConfigArgs) -> Result<(), CliError> {
    let (cfg, echo): (OrderConfig, _) = config::load(args.config.as_deref(), &args.sets)?;
    let m = DatasetManifest::read(manifest_path)?;
    let mut by_session: BTreeMap<usize, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in scenes(&m, true) {
        by_session.entry(r.session_index).or_default().push(r);
    }
    let sessions: Vec<usize> = by_session.keys().copied().collect();
    let mut fields = Vec::with_capacity(sessions.len());
    let mut session_info = Vec::with_capacity(sessions.len());
    for (s, records) in &by_session {
        let images = load_all(&m, records)?;
        let refs: Vec<&RasterImage> = images.iter().collect();
        let mean_t = records.iter().map(|r| r.timestamp).sum::<f64>() / records.len() as f64;
        fields.push(prnu_estimate(&refs, cfg.kernel, Some(mean_t))?);
        session_info.push(json!({ "session": s, "timestamp": mean_t, "n_images": records.len() }));
    }
    let o = mi_order(&fields)?;
    let to_sessions = |p: &[usize]| p.iter().map(|&i| sessions[i]).collect::<Vec<_>>();
    let order_sessions = to_sessions(&o.order);
    let mut chrono: Vec<usize> = (0..sessions.len()).collect();
    chrono.sort_by(|&a, &b| fields[a].time_label.unwrap_or(0.0).total_cmp(&fields[b].time_label.unwrap_or(0.0)));
    let chrono_sessions = to_sessions(&chrono);
    let reversed: Vec<usize> = chrono_sessions.iter().rev().copied().collect();
    let matches = order_sessions == chrono_sessions || order_sessions == reversed;
    let position = |s: usize| chrono_sessions.iter().position(|&x| x == s);

    let mut placements = Vec::new();
    for q in scenes(&m, false) {
        let img = m.load_image(q)?;
        let f = prnu_estimate(&[&img], cfg.kernel, Some(q.timestamp))?;
        let p = iip_place(&f, &fields)?;
        placements.push(Placement {
            path: q.path.clone(),
            session_index: q.session_index,
            placed_session: sessions[p.cluster],
            correlations: p.correlations,
        });
    }
    let known: Vec<&Placement> = placements.iter().filter(|p| position(p.session_index).is_some()).collect();
    let rate = |ok: &dyn Fn(&Placement) -> bool| {
        (!known.is_empty()).then(|| known.iter().filter(|p| ok(p)).count() as f64 / known.len() as f64)
    };
    let exact = rate(&|p| p.placed_session == p.session_index);
    let adjacent = rate(&|p| match (position(p.placed_session), position(p.session_index)) {
        (Some(a), Some(b)) => a.abs_diff(b) <= 1,
        _ => false,
    });
    let result = json!({
        "sessions": session_info,
        "order": order_sessions,
        "score": o.score,
        "tied_orders": o.tied_orders.iter().map(|t| to_sessions(t)).collect::<Vec<_>>(),
        "correlation": o.correlation,
        "chronological": chrono_sessions,
        "matches_chronology": matches,
        "placements": placements,
        "placement_exact_rate": exact,
        "placement_adjacent_rate": adjacent,
    });
    Report::new("order", None, json!({ "manifest": path_str(manifest_path) }), echo, result).emit(out)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DiagnoseConfig {
    averages: AverageConfig,
    thresholds: VerdictThresholds,
}

pub fn diagnose(
    manifest_path: &Path,
    model_path: &Path,
    seed: Option<u64>,
    masks: &[std::path::PathBuf],
    csv: Option<&Path>,
    out: Option<&Path>,
    args: &ConfigArgs,
) -> Result<(), CliError> {
    let (mut cfg, _): (DiagnoseConfig, _) = config::load(args.config.as_deref(), &args.sets)?;
    let seed = seed.ok_or_else(|| CliError::Usage("--seed is required for diagnose".into()))?;
    cfg.averages.seed = seed;
    let m = DatasetManifest::read(manifest_path)?;
    let model = ModelFile::read(model_path)?;
    let estimator = model.estimator_name();
    let clf = classifier(model)?;
    let trusted = scenes(&m, true);
    let classes = session_classes(&trusted);
    let test_records: Vec<&ManifestRecord> =
        scenes(&m, false).into_iter().filter(|r| classes.contains_key(&r.session_index)).collect();
    if test_records.is_empty() {
        return Err(CliError::Usage(
            "no test images: diagnose needs unlabelled scenes from sessions that also have trusted scenes".into(),
        ));
    }
    let train_images = load_all(&m, &trusted)?;
    let train_metas: Vec<AcquisitionMeta> = trusted.iter().map(|r| r.meta()).collect();
    let test_images = load_all(&m, &test_records)?;
    let test_metas: Vec<AcquisitionMeta> = test_records.iter().map(|r| r.meta()).collect();
    let samples: Vec<LabelledImage<'_>> = trusted
        .iter()
        .enumerate()
        .map(|(i, r)| LabelledImage { image: &train_images[i], meta: &train_metas[i], class: r.class_label.expect("trusted") })
        .collect();
    let test: Vec<LabelledImage<'_>> = test_records
        .iter()
        .enumerate()
        .map(|(i, r)| LabelledImage { image: &test_images[i], meta: &test_metas[i], class: classes[&r.session_index] })
        .collect();
    let sets = average_images(&samples, clf.n_classes(), cfg.averages)?;
    let table = evaluate_input_suite(clf.as_ref(), &sets, &test)?;
    let mask_eval = if masks.is_empty() {
        None
    } else {
        let loaded = masks.iter().map(read_image).collect::<agetrace::Result<Vec<_>>>()?;
        Some(mask_evaluate(clf.as_ref(), &loaded, &test)?)
    };
    let report = BiasReport::new(table, cfg.thresholds, mask_eval)?;
    if let Some(p) = csv {
        write_text(p, &report.accuracies.to_csv())?;
    }
    let inputs = json!({
        "manifest": path_str(manifest_path),
        "model": path_str(model_path),
        "estimator": estimator,
        "masks": masks.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        "n_average_samples": samples.len(),
        "n_test": test.len(),
    });
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    Report::new("diagnose", Some(seed), inputs, echo, report).emit(out)
}
