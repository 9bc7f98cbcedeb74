//! End-to-end synthetic experiments.
//!
//! A run for one seed generates a world, trains a plain cross-entropy model
//! (λ = 0), fine-tunes a copy with the entropy-maximization objective, and
//! evaluates both on held-out scenes whose OoD objects come from a family the
//! proxy data never contained. Segment-level meta classification is then run
//! on the fine-tuned model's detections.
//!
//! A sweep repeats this over a list of seeds and aggregates the headline
//! metrics as mean and sample standard deviation.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::dispersion::{heatmap_with, DispersionKind};
use crate::eval::{
    auprc, auroc, fpr_at_tpr, mean_std, miou_with_ood, segment_errors, EvalImage, ErrorCounts, ScoredPixels,
    SegmentErrorRow, DEFAULT_THRESHOLDS,
};
use crate::features::{feature_names, feature_rows, DispersionMaps};
use crate::manifest::Role;
use crate::meta::{loo_cross_validate_with, remove_fp, MetaDataset, DEFAULT_L2};
use crate::par::{self, Execution};
use crate::segments::{detect, match_segments, OodSegment, Verdict};
use crate::tensor::{LabelMap, SoftmaxMap};
use crate::toy::{infer, train, Scene, ToyModel, TrainConfig, World, WorldConfig};
use crate::{Error, ErrorClass, Result};

/// Thresholds at which meta classification is evaluated.
pub const META_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub train_scenes: usize,
    pub proxy_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    /// Training of the reference model. Its `lambda` must be 0.
    #[serde(deserialize_with = "baseline_section")]
    pub baseline: TrainConfig,
    /// Fine-tuning of the reference model with proxy OoD data.
    #[serde(deserialize_with = "ood_section")]
    pub ood: TrainConfig,
    pub thresholds: Vec<f64>,
    pub meta_thresholds: Vec<f64>,
    pub cutoff: f64,
    pub l2: f64,
    pub road_classes: Vec<i32>,
}

/// A partial training section overrides the experiment's own default for
/// that section rather than the generic training default.
fn overlay<'de, D: Deserializer<'de>>(base: TrainConfig, d: D) -> std::result::Result<TrainConfig, D::Error> {
    let patch = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut v = serde_json::to_value(base).map_err(D::Error::custom)?;
    if let serde_json::Value::Object(m) = &mut v {
        m.extend(patch);
    }
    serde_json::from_value(v).map_err(D::Error::custom)
}

fn baseline_section<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    overlay(ExperimentConfig::default().baseline, d)
}

fn ood_section<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    overlay(ExperimentConfig::default().ood, d)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let baseline = TrainConfig { lambda: 0.0, ..TrainConfig::default() };
        let ood = TrainConfig { lambda: 0.9, learning_rate: 3e-3, seed: 1, ..TrainConfig::default() };
        Self {
            world: WorldConfig::default(),
            train_scenes: 40,
            proxy_scenes: 20,
            val_scenes: 10,
            test_scenes: 30,
            baseline,
            ood,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            meta_thresholds: META_THRESHOLDS.to_vec(),
            cutoff: 0.5,
            l2: DEFAULT_L2,
            road_classes: vec![0],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.baseline.lambda != 0.0 {
            return Err(Error::InvalidArgument("the baseline model must be trained with lambda = 0".into()));
        }
        self.baseline.validate()?;
        self.ood.validate()?;
        if self.train_scenes == 0 || self.test_scenes == 0 || self.val_scenes == 0 {
            return Err(Error::InvalidArgument("train, validation and test splits must be non-empty".into()));
        }
        if self.ood.lambda > 0.0 && self.proxy_scenes == 0 {
            return Err(Error::InvalidArgument("OoD fine-tuning needs proxy scenes".into()));
        }
        if !(0.0..=1.0).contains(&self.cutoff) {
            return Err(Error::InvalidArgument(format!("cutoff {} outside [0, 1]", self.cutoff)));
        }
        Ok(())
    }

    fn split_size(&self, role: Role) -> usize {
        match role {
            Role::InTrain => self.train_scenes,
            Role::OutProxy => self.proxy_scenes,
            Role::InVal => self.val_scenes,
            Role::OodTest => self.test_scenes,
        }
    }
}

/// Pixel-level results of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub auroc: f64,
    pub auprc: f64,
    pub fpr95: f64,
    /// Plain MAP mIoU on in-distribution validation scenes.
    pub miou: f64,
    pub final_loss: f64,
    pub segment_errors: Vec<SegmentErrorRow>,
}

/// Meta classification of the fine-tuned model's segments at one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRow {
    pub threshold: f64,
    /// Segments with a TP/FP verdict; fully ignored segments are left out.
    pub segments: usize,
    pub tp_segments: usize,
    pub fp_segments: usize,
    /// Leave-one-out AUROC of the logistic meta classifier, TP as positive.
    pub meta_auroc: Option<f64>,
    /// AUROC of the segment's mean `1 − max softmax` as TP score.
    pub msp_auroc: Option<f64>,
    pub single_class_folds: usize,
    pub before: ErrorCounts,
    pub after: ErrorCounts,
    pub f1_before: f64,
    pub f1_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub baseline: ModelSummary,
    pub ood: ModelSummary,
    pub meta: Vec<MetaRow>,
}

struct Split {
    scenes: Vec<Scene>,
}

fn split(world: &World, role: Role, n: usize, exec: Execution) -> Split {
    Split { scenes: par::map_range(exec, n, |i| world.scene(role, i)) }
}

/// The training config of one seeded run.
pub fn train_config_for_seed(cfg: &TrainConfig, run_seed: u64) -> TrainConfig {
    TrainConfig { seed: cfg.seed.wrapping_add(run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)), ..cfg.clone() }
}

fn softmax_maps(model: &ToyModel, scenes: &[Scene], exec: Execution) -> Result<Vec<SoftmaxMap>> {
    scenes.iter().map(|s| infer(model, &s.features, exec)).collect()
}

fn eval_images(scenes: &[Scene], softmax: Vec<SoftmaxMap>, exec: Execution) -> Vec<EvalImage> {
    scenes
        .iter()
        .zip(softmax)
        .map(|(s, p)| EvalImage {
            id: s.id.clone(),
            heat: heatmap_with(&p, DispersionKind::Entropy, exec),
            softmax: Some(p),
            labels: s.labels.clone(),
        })
        .collect()
}

fn summarize(model: &ToyModel, loss: f64, test: &[Scene], val: &[Scene], cfg: &ExperimentConfig, exec: Execution) -> Result<ModelSummary> {
    let images = eval_images(test, softmax_maps(model, test, exec)?, exec);
    let sp = ScoredPixels::from_images(&images, exec)?;
    let val_images = eval_images(val, softmax_maps(model, val, exec)?, exec);
    let segment_errors = segment_errors(&images, &cfg.thresholds, None, &cfg.road_classes, exec)?;
    Ok(ModelSummary {
        auroc: auroc(&sp)?,
        auprc: auprc(&sp)?,
        fpr95: fpr_at_tpr(&sp, 0.95)?,
        miou: miou_with_ood(&val_images, f64::INFINITY, exec)?.miou,
        final_loss: loss,
        segment_errors,
    })
}

/// Segments of every image at threshold `t` with their verdicts.
struct Detections {
    per_image: Vec<(Vec<OodSegment>, Vec<Verdict>)>,
}

fn detections(images: &[EvalImage], t: f64) -> Result<Detections> {
    let per_image = images
        .iter()
        .map(|img| {
            let (_, segs) = detect(&img.id, &img.heat, t, 1)?;
            let m = match_segments(&segs, &img.labels)?;
            Ok((segs, m.verdicts))
        })
        .collect::<Result<_>>()?;
    Ok(Detections { per_image })
}

fn mean_variation_ratio(seg: &OodSegment, s: &SoftmaxMap) -> f64 {
    let sum: f64 = seg
        .pixels
        .iter()
        .map(|&(h, w)| 1.0 - s.at(h, w).iter().fold(0.0f32, |a, &b| a.max(b)) as f64)
        .sum();
    sum / seg.pixels.len() as f64
}

fn segment_auroc(scores: Vec<f64>, labels: Vec<bool>) -> Result<Option<f64>> {
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Ok(None);
    }
    Ok(Some(auroc(&ScoredPixels::new(scores, labels)?)?))
}

fn counts_after(labels: &[&LabelMap], kept: &[Vec<OodSegment>]) -> Result<ErrorCounts> {
    let mut total = ErrorCounts::default();
    for (l, segs) in labels.iter().zip(kept) {
        total.add(ErrorCounts::from_match(&match_segments(segs, l)?));
    }
    Ok(total)
}

/// Meta classification at one threshold: leave-one-out probabilities for
/// every evaluable segment, the MSP comparison, and error counts before and
/// after removing segments predicted as false positives.
pub fn meta_row(images: &[EvalImage], t: f64, cutoff: f64, l2: f64, seed: u64, exec: Execution) -> Result<MetaRow> {
    let q = images.first().map(|i| i.labels.num_classes()).unwrap_or(0);
    let det = detections(images, t)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut msp = Vec::new();
    // Index of each evaluable segment in `rows`, per image.
    let mut slots: Vec<Vec<Option<usize>>> = Vec::with_capacity(images.len());
    for (img, (segs, verdicts)) in images.iter().zip(&det.per_image) {
        let s = img.softmax.as_ref().ok_or_else(|| Error::InvalidArgument(format!("image {} has no softmax map", img.id)))?;
        let maps = DispersionMaps::compute(s);
        let feats = feature_rows(segs, s, &maps, exec)?;
        let mut slot = Vec::with_capacity(segs.len());
        for ((seg, v), f) in segs.iter().zip(verdicts).zip(feats) {
            if *v == Verdict::Ignored {
                slot.push(None);
                continue;
            }
            slot.push(Some(rows.len()));
            msp.push(mean_variation_ratio(seg, s));
            labels.push(*v == Verdict::TruePositive);
            rows.push(f.values);
        }
        slots.push(slot);
    }
    let tp = labels.iter().filter(|&&l| l).count();
    let before = counts_after(&images.iter().map(|i| &i.labels).collect::<Vec<_>>(), &det.per_image.iter().map(|d| d.0.clone()).collect::<Vec<_>>())?;

    let both = tp > 0 && tp < labels.len();
    let (probs, single_class_folds) = if both && labels.len() >= 3 {
        let data = MetaDataset::new(feature_names(q), rows, labels.clone())?;
        let loo = loo_cross_validate_with(&data, l2, seed, exec)?;
        (Some(loo.probabilities), loo.single_class_folds.len())
    } else {
        (None, 0)
    };

    let after = match &probs {
        Some(p) => {
            let mut kept = Vec::with_capacity(images.len());
            for ((segs, _), slot) in det.per_image.iter().zip(&slots) {
                // Ignored segments have no prediction and are never removed.
                let seg_probs: Vec<f64> = slot.iter().map(|s| s.map_or(1.0, |k| p[k])).collect();
                kept.push(remove_fp(segs, &seg_probs, cutoff)?);
            }
            counts_after(&images.iter().map(|i| &i.labels).collect::<Vec<_>>(), &kept)?
        }
        None => before,
    };
    Ok(MetaRow {
        threshold: t,
        segments: labels.len(),
        tp_segments: tp,
        fp_segments: labels.len() - tp,
        meta_auroc: match probs {
            Some(p) => segment_auroc(p, labels.clone())?,
            None => None,
        },
        msp_auroc: segment_auroc(msp, labels)?,
        single_class_folds,
        before,
        after,
        f1_before: before.f1(),
        f1_after: after.f1(),
    })
}

/// One complete experiment for `seed`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<SeedReport> {
    cfg.validate()?;
    let world = World::new(cfg.world.clone(), seed)?;
    let q = world.num_classes();
    let get = |role: Role| split(&world, role, cfg.split_size(role), exec);
    let (train_split, proxy, val, test) = (get(Role::InTrain), get(Role::OutProxy), get(Role::InVal), get(Role::OodTest));

    let base = train(&train_config_for_seed(&cfg.baseline, seed), q, &train_split.scenes, &[], None)?;
    let tuned = train(&train_config_for_seed(&cfg.ood, seed), q, &train_split.scenes, &proxy.scenes, Some(base.model.clone()))?;
    let last = |trace: &[f64]| trace.last().copied().unwrap_or(f64::NAN);

    let baseline = summarize(&base.model, last(&base.loss_trace), &test.scenes, &val.scenes, cfg, exec)?;
    let ood = summarize(&tuned.model, last(&tuned.loss_trace), &test.scenes, &val.scenes, cfg, exec)?;

    let images = eval_images(&test.scenes, softmax_maps(&tuned.model, &test.scenes, exec)?, exec);
    let meta = cfg
        .meta_thresholds
        .iter()
        .map(|&t| meta_row(&images, t, cfg.cutoff, cfg.l2, seed, exec))
        .collect::<Result<_>>()?;
    log::info!("seed {seed}: AUPRC {:.4} -> {:.4}, mIoU {:.4} -> {:.4}", baseline.auprc, ood.auprc, baseline.miou, ood.miou);
    Ok(SeedReport { seed, baseline, ood, meta })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelAggregate {
    pub auroc: MeanStd,
    pub auprc: MeanStd,
    pub miou: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub baseline: ModelAggregate,
    pub ood: ModelAggregate,
    /// OoD-trained minus baseline AUPRC.
    pub auprc_gain: MeanStd,
    /// Baseline minus OoD-trained mIoU.
    pub miou_drop: MeanStd,
}

impl Aggregate {
    pub fn from_runs(runs: &[SeedReport]) -> Option<Self> {
        if runs.is_empty() {
            return None;
        }
        let col = |f: &dyn Fn(&SeedReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        let model = |pick: fn(&SeedReport) -> &ModelSummary| ModelAggregate {
            auroc: col(&|r| pick(r).auroc),
            auprc: col(&|r| pick(r).auprc),
            miou: col(&|r| pick(r).miou),
        };
        Some(Self {
            baseline: model(|r| &r.baseline),
            ood: model(|r| &r.ood),
            auprc_gain: col(&|r| r.ood.auprc - r.baseline.auprc),
            miou_drop: col(&|r| r.baseline.miou - r.ood.miou),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub seed: u64,
    pub class: ErrorClass,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// False when a run failed; `runs` then holds the results before it.
    pub complete: bool,
    pub failure: Option<SweepFailure>,
    pub runs: Vec<SeedReport>,
    pub aggregate: Option<Aggregate>,
}

/// Runs every seed (in parallel when allowed) and aggregates in seed-list order.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], exec: Execution) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("a sweep needs at least one seed".into()));
    }
    cfg.validate()?;
    let results = par::map_slice(exec, seeds, |&s| run_seed(cfg, s, exec));
    let mut runs = Vec::new();
    let mut failure = None;
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(rep) => runs.push(rep),
            Err(e) => {
                failure = Some(SweepFailure { seed, class: e.class(), error: e.to_string() });
                break;
            }
        }
    }
    Ok(SweepReport {
        config: cfg.clone(),
        seeds: seeds.to_vec(),
        complete: failure.is_none(),
        aggregate: Aggregate::from_runs(&runs),
        failure,
        runs,
    })
}
