//! File-to-file pipeline stages: gen, train, infer, detect, features, meta,
//! lars and eval.

use std::path::{Path, PathBuf};

use clap::Args;
use oodseg::dispersion::{heatmap_with, DispersionKind};
use oodseg::eval::{self, evaluate, EvalImage, EvalOptions, EvalReport, MetaFilter};
use oodseg::features::{self, feature_rows, DispersionMaps, FeatureRow};
use oodseg::manifest::{DatasetManifest, ManifestEntry, Role};
use oodseg::meta::{fit_logistic, lars_path, loo_cross_validate_with, MetaDataset, MetaModel, DEFAULT_L2};
use oodseg::pipeline::train_config_for_seed;
use oodseg::segments::{detect, match_segments, records, OodSegment, SegmentRecord, Verdict};
use oodseg::tensor::{self, HeatMap};
use oodseg::toy::{self, baseline_heatmaps, Baseline, CovarianceKind, Family, MahalanobisFit, Scene, ToyModel, World};
use oodseg::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{write_echo, write_json};
use crate::Ctx;

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn family_of(role: Role) -> Family {
    match role {
        Role::InTrain | Role::InVal => Family::InDist,
        Role::OutProxy => Family::ProxyOod,
        Role::OodTest => Family::TestOod,
    }
}

/// Scenes (features plus labels) listed in a manifest.
fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let m = DatasetManifest::load(path)?;
    m.entries
        .iter()
        .map(|e| {
            let labels = m
                .load_labels(e)?
                .ok_or_else(|| Error::Format(format!("{}: entry {} has no labels", path.display(), e.id)))?;
            Ok(Scene { id: e.id.clone(), features: m.load_features(e)?, labels, family: family_of(m.role) })
        })
        .collect()
}

/// The named heat map of an entry: stored on disk, or derived from the
/// softmax map when `kind` is a dispersion measure.
fn load_heat(m: &DatasetManifest, e: &ManifestEntry, kind: &str, ctx: &Ctx) -> Result<HeatMap> {
    if let Some(h) = m.load_heatmap(e, kind)? {
        return Ok(h);
    }
    match (DispersionKind::parse(kind), &e.softmax) {
        (Ok(k), Some(_)) => Ok(heatmap_with(&m.load_softmax(e)?, k, ctx.exec)),
        _ => Err(Error::Format(format!("entry {} has no {kind:?} heat map", e.id))),
    }
}

// ---------------------------------------------------------------- gen

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenArgs {
    /// In-distribution training scenes.
    #[arg(long)]
    pub train_scenes: Option<usize>,
    /// Proxy OoD scenes.
    #[arg(long)]
    pub proxy_scenes: Option<usize>,
    /// In-distribution validation scenes.
    #[arg(long)]
    pub val_scenes: Option<usize>,
    /// Test scenes with unseen OoD objects.
    #[arg(long)]
    pub test_scenes: Option<usize>,
}

pub fn gen(ctx: &Ctx, args: GenArgs) -> Result<()> {
    let mut a = ctx.file.merge("gen", &args)?;
    let exp = ctx.file.experiment()?;
    let counts = [
        (Role::InTrain, *a.train_scenes.get_or_insert(exp.train_scenes)),
        (Role::OutProxy, *a.proxy_scenes.get_or_insert(exp.proxy_scenes)),
        (Role::InVal, *a.val_scenes.get_or_insert(exp.val_scenes)),
        (Role::OodTest, *a.test_scenes.get_or_insert(exp.test_scenes)),
    ];
    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "gen", ctx.seed, Some(&exp), &a)?;
    let world = World::new(exp.world.clone(), ctx.seed)?;
    write_json(&ctx.out.join("world.json"), &world)?;
    for (role, n) in counts {
        let dir = ctx.out.join(role.as_str());
        create_dir(&dir)?;
        let mut manifest = DatasetManifest::new(role, world.num_classes());
        for i in 0..n {
            let s = world.scene(role, i);
            let (feat, labl) = (format!("{}.feat", s.id), format!("{}.labl", s.id));
            tensor::store_features(&s.features, dir.join(&feat))?;
            tensor::store_labels(&s.labels, dir.join(&labl))?;
            manifest.entries.push(ManifestEntry { id: s.id, features: Some(feat), labels: Some(labl), ..Default::default() });
        }
        manifest.store(dir.join("manifest.json"))?;
        ctx.say(format!("{}: {n} scenes", role.as_str()));
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model to fine-tune with proxy OoD data; trains from scratch without it.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

pub fn train(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let mut a = ctx.file.merge("train", &args)?;
    let exp = ctx.file.experiment()?;
    let data = required(&a.data, "data")?.clone();
    let mut cfg = if a.init.is_some() { exp.ood.clone() } else { exp.baseline.clone() };
    cfg.lambda = *a.lambda.get_or_insert(cfg.lambda);
    cfg.epochs = *a.epochs.get_or_insert(cfg.epochs);
    cfg.learning_rate = *a.learning_rate.get_or_insert(cfg.learning_rate);
    let cfg = train_config_for_seed(&cfg, ctx.seed);

    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "train", ctx.seed, Some(&exp), &a)?;
    let in_scenes = load_scenes(&data.join(Role::InTrain.as_str()).join("manifest.json"))?;
    let proxy = if cfg.lambda > 0.0 {
        load_scenes(&data.join(Role::OutProxy.as_str()).join("manifest.json"))?
    } else {
        Vec::new()
    };
    let init = a.init.as_ref().map(ToyModel::load).transpose()?;
    let q = in_scenes.first().map(|s| s.labels.num_classes()).unwrap_or(exp.world.num_classes);
    let outcome = toy::train(&cfg, q, &in_scenes, &proxy, init)?;
    outcome.model.save(ctx.out.join("model.json"))?;
    write_json(
        &ctx.out.join("train.json"),
        &json!({
            "config": cfg,
            "in_scenes": in_scenes.len(),
            "proxy_scenes": proxy.len(),
            "loss_trace": outcome.loss_trace,
        }),
    )?;
    ctx.say(format!(
        "trained {} epochs, final objective {:.6}",
        cfg.epochs,
        outcome.loss_trace.last().copied().unwrap_or(f64::NAN)
    ));
    Ok(())
}

// ---------------------------------------------------------------- infer

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Manifest of the scenes to run the model on.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Additional baseline heat maps: msp, odin, mahalanobis, mc_dropout.
    #[arg(long, value_delimiter = ',')]
    pub baselines: Option<Vec<String>>,
    /// Labelled in-distribution manifest for the Mahalanobis statistics.
    #[arg(long)]
    pub fit_manifest: Option<PathBuf>,
    /// Mahalanobis covariance: `shared` or `per_class`.
    #[arg(long, value_parser = parse_covariance)]
    pub covariance: Option<CovarianceKind>,
    #[arg(long)]
    pub odin_temperature: Option<f64>,
    #[arg(long)]
    pub odin_epsilon: Option<f64>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

fn parse_covariance(s: &str) -> std::result::Result<CovarianceKind, String> {
    match s {
        "shared" => Ok(CovarianceKind::Shared),
        "per_class" | "per-class" => Ok(CovarianceKind::PerClass),
        _ => Err(format!("unknown covariance {s:?}, expected shared or per_class")),
    }
}

pub fn infer(ctx: &Ctx, args: InferArgs) -> Result<()> {
    let mut a = ctx.file.merge("infer", &args)?;
    let model_path = required(&a.model, "model")?.clone();
    let manifest_path = required(&a.manifest, "manifest")?.clone();
    let names = a.baselines.get_or_insert_with(Vec::new).clone();
    let (temperature, epsilon) = match Baseline::DEFAULT_ODIN {
        Baseline::Odin { temperature, epsilon } => (temperature, epsilon),
        _ => unreachable!(),
    };
    let temperature = *a.odin_temperature.get_or_insert(temperature);
    let epsilon = *a.odin_epsilon.get_or_insert(epsilon);
    let samples = *a.mc_samples.get_or_insert(20);
    let covariance = *a.covariance.get_or_insert(CovarianceKind::Shared);
    let methods = names
        .iter()
        .map(|n| match n.as_str() {
            "msp" => Ok(Baseline::Msp),
            "odin" => Ok(Baseline::Odin { temperature, epsilon }),
            "mahalanobis" => Ok(Baseline::Mahalanobis),
            "mc_dropout" => Ok(Baseline::McDropout { samples, seed: ctx.seed }),
            other => Err(Error::InvalidArgument(format!("unknown baseline {other:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ToyModel::load(&model_path)?;
    let maha = if methods.contains(&Baseline::Mahalanobis) {
        let fit_path = required(&a.fit_manifest, "fit-manifest")?;
        let scenes = load_scenes(fit_path)?;
        let pairs: Vec<_> = scenes.iter().map(|s| (&s.features, &s.labels)).collect();
        Some(MahalanobisFit::fit(&model, &pairs, covariance, ctx.exec)?)
    } else {
        None
    };

    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "infer", ctx.seed, None, &a)?;
    let input = DatasetManifest::load(&manifest_path)?;
    let mut out = DatasetManifest::new(input.role, model.num_classes());
    let mut feats = Vec::with_capacity(input.entries.len());
    for e in &input.entries {
        let f = input.load_features(e)?;
        let softmax = toy::infer(&model, &f, ctx.exec)?;
        let mut entry = ManifestEntry { id: e.id.clone(), ..Default::default() };
        let soft = format!("{}.soft", e.id);
        tensor::store_softmax(&softmax, ctx.out.join(&soft))?;
        entry.softmax = Some(soft);
        for kind in DispersionKind::ALL {
            let name = format!("{}.{}.heat", e.id, kind.as_str());
            tensor::store_heatmap(&heatmap_with(&softmax, kind, ctx.exec), ctx.out.join(&name))?;
            entry.heatmaps.insert(kind.as_str().to_string(), name);
        }
        if let Some(l) = input.load_labels(e)? {
            let labl = format!("{}.labl", e.id);
            tensor::store_labels(&l, ctx.out.join(&labl))?;
            entry.labels = Some(labl);
        }
        out.entries.push(entry);
        feats.push(f);
    }
    let refs: Vec<_> = feats.iter().collect();
    for method in &methods {
        let maps = baseline_heatmaps(&model, &refs, method, maha.as_ref(), ctx.exec)?;
        for (entry, h) in out.entries.iter_mut().zip(maps) {
            let name = format!("{}.{}.heat", entry.id, method.name());
            tensor::store_heatmap(&h, ctx.out.join(&name))?;
            entry.heatmaps.insert(method.name().to_string(), name);
        }
    }
    out.store(ctx.out.join("manifest.json"))?;
    ctx.say(format!("inferred {} scenes", out.entries.len()));
    Ok(())
}

// ---------------------------------------------------------------- detect / features

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectArgs {
    /// Manifest written by `infer`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Heat map to threshold.
    #[arg(long)]
    pub heat: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Smallest segment size kept, in pixels.
    #[arg(long)]
    pub min_size: Option<usize>,
}

struct Detected {
    manifest: DatasetManifest,
    /// Per image: segments and, with labels, their verdicts.
    images: Vec<(Vec<OodSegment>, Option<Vec<Verdict>>)>,
    gt: Option<(usize, usize)>,
}

fn run_detect(ctx: &Ctx, a: &mut DetectArgs) -> Result<Detected> {
    let path = required(&a.manifest, "manifest")?.clone();
    let kind = a.heat.get_or_insert_with(|| "entropy".into()).clone();
    let t = *a.threshold.get_or_insert(0.5);
    let min_size = *a.min_size.get_or_insert(1);
    let manifest = DatasetManifest::load(&path)?;
    let labelled = manifest.has_labels();
    let mut images = Vec::with_capacity(manifest.entries.len());
    let (mut found, mut total) = (0, 0);
    for e in &manifest.entries {
        let heat = load_heat(&manifest, e, &kind, ctx)?;
        let (_, segs) = detect(&e.id, &heat, t, min_size)?;
        let verdicts = match manifest.load_labels(e)? {
            Some(l) if labelled => {
                let m = match_segments(&segs, &l)?;
                found += m.found();
                total += m.num_gt();
                Some(m.verdicts)
            }
            _ => None,
        };
        images.push((segs, verdicts));
    }
    Ok(Detected { manifest, images, gt: labelled.then_some((found, total)) })
}

pub fn detect_cmd(ctx: &Ctx, args: DetectArgs) -> Result<()> {
    let mut a = ctx.file.merge("detect", &args)?;
    let d = run_detect(ctx, &mut a)?;
    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "detect", ctx.seed, None, &a)?;
    let mut all: Vec<SegmentRecord> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (segs, verdicts) in &d.images {
        all.extend(records(segs, verdicts.as_deref()));
        for v in verdicts.iter().flatten() {
            tp += (*v == Verdict::TruePositive) as usize;
            fp += (*v == Verdict::FalsePositive) as usize;
        }
    }
    let summary = d.gt.map(|(found, total)| {
        json!({ "tp_segments": tp, "fp": fp, "gt_found": found, "fn": total - found, "gt_objects": total })
    });
    write_json(
        &ctx.out.join("segments.json"),
        &json!({
            "heat": a.heat,
            "threshold": a.threshold,
            "num_images": d.manifest.entries.len(),
            "num_segments": all.len(),
            "summary": summary,
            "segments": all,
        }),
    )?;
    ctx.say(format!("{} segments in {} images", all.len(), d.manifest.entries.len()));
    Ok(())
}

pub fn features_cmd(ctx: &Ctx, args: DetectArgs) -> Result<()> {
    let mut a = ctx.file.merge("features", &args)?;
    let d = run_detect(ctx, &mut a)?;
    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "features", ctx.seed, None, &a)?;
    let q = d.manifest.num_classes;
    let mut rows: Vec<FeatureRow> = Vec::new();
    let mut tp = Vec::new();
    for (e, (segs, verdicts)) in d.manifest.entries.iter().zip(&d.images) {
        let s = d.manifest.load_softmax(e)?;
        let maps = DispersionMaps::compute(&s);
        let fr = feature_rows(segs, &s, &maps, ctx.exec)?;
        match verdicts {
            Some(v) => {
                for (r, v) in fr.into_iter().zip(v) {
                    if *v != Verdict::Ignored {
                        tp.push(*v == Verdict::TruePositive);
                        rows.push(r);
                    }
                }
            }
            None => rows.extend(fr),
        }
    }
    let labels = d.gt.is_some().then_some(tp.as_slice());
    let csv = features::to_csv(q, &rows, labels);
    tensor::write_file(&ctx.out.join("features.csv"), csv.as_bytes())?;
    ctx.say(format!("{} feature rows with {} metrics", rows.len(), features::num_features(q)));
    Ok(())
}

// ---------------------------------------------------------------- meta / lars

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaArgs {
    /// Labelled feature CSV written by `features`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Also run leave-one-out cross-validation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub loo: Option<bool>,
}

fn load_dataset(path: &Path) -> Result<(MetaDataset, Vec<FeatureRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table = features::from_csv(&text)?;
    Ok((MetaDataset::from_table(&table)?, table.rows))
}

fn auroc_of(scores: Vec<f64>, labels: &[bool]) -> Result<Option<f64>> {
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Ok(None);
    }
    Ok(Some(eval::auroc(&eval::ScoredPixels::new(scores, labels.to_vec())?)?))
}

pub fn meta(ctx: &Ctx, args: MetaArgs) -> Result<()> {
    let mut a = ctx.file.merge("meta", &args)?;
    let path = required(&a.features, "features")?.clone();
    let l2 = *a.l2.get_or_insert(DEFAULT_L2);
    let loo = *a.loo.get_or_insert(false);
    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "meta", ctx.seed, None, &a)?;
    let (data, rows) = load_dataset(&path)?;
    let model = fit_logistic(&data, l2, ctx.seed)?;
    model.save(ctx.out.join("meta_model.json"))?;
    let fitted: Vec<f64> = data.rows.iter().map(|r| model.predict_proba(r)).collect();
    let mut summary = json!({
        "rows": data.len(),
        "positives": data.positives(),
        "features": data.num_features(),
        "l2": l2,
        "method": model.method,
        "iterations": model.iterations,
        "final_loss": model.final_loss,
        "train_auroc": auroc_of(fitted, &data.labels)?,
    });
    if loo {
        let res = loo_cross_validate_with(&data, l2, ctx.seed, ctx.exec)?;
        let mut csv = String::from("image_id,segment_id,tp,probability\n");
        for ((r, &l), p) in rows.iter().zip(&data.labels).zip(&res.probabilities) {
            csv.push_str(&format!("{},{},{},{}\n", r.image_id, r.segment_id, l as u8, p));
        }
        tensor::write_file(&ctx.out.join("loo.csv"), csv.as_bytes())?;
        summary["loo_auroc"] = json!(auroc_of(res.probabilities, &data.labels)?);
        summary["single_class_folds"] = json!(res.single_class_folds);
    }
    write_json(&ctx.out.join("meta.json"), &summary)?;
    ctx.say(format!(
        "meta classifier on {} segments ({} TP), {} after {} iterations, LOO AUROC {}",
        data.len(),
        data.positives(),
        model.method,
        model.iterations,
        summary.get("loo_auroc").map_or("not run".to_string(), Value::to_string)
    ));
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LarsArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Number of features allowed to enter; all by default.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

pub fn lars(ctx: &Ctx, args: LarsArgs) -> Result<()> {
    let a = ctx.file.merge("lars", &args)?;
    let path = required(&a.features, "features")?.clone();
    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "lars", ctx.seed, None, &a)?;
    let (data, _) = load_dataset(&path)?;
    let lp = lars_path(&data, a.max_steps.unwrap_or(data.num_features()))?;
    tensor::write_file(&ctx.out.join("lars.csv"), lp.to_csv().as_bytes())?;
    tensor::write_file(&ctx.out.join("lars.svg"), eval::svg::lars(&lp, "LARS coefficient paths").as_bytes())?;
    let order = lp.entering_order();
    ctx.say(format!("entering order: {}", order.join(", ")));
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub heat: Option<String>,
    /// Comma separated segment thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Meta classifier used for false-positive removal.
    #[arg(long)]
    pub meta_model: Option<PathBuf>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Comma separated classes counted by the road miss rate.
    #[arg(long, value_delimiter = ',')]
    pub road_classes: Option<Vec<i32>>,
    /// Also report mIoU with OoD overrides at this threshold.
    #[arg(long)]
    pub miou_threshold: Option<f64>,
    #[arg(long)]
    pub tpr_target: Option<f64>,
    /// Write ROC, PR and quantile SVGs next to the report.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub svg: Option<bool>,
}

pub fn eval_cmd(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let mut a = ctx.file.merge("eval", &args)?;
    let path = required(&a.manifest, "manifest")?.clone();
    let defaults = EvalOptions::default();
    let kind = a.heat.get_or_insert_with(|| defaults.heat_kind.clone()).clone();
    let thresholds = a.thresholds.get_or_insert_with(|| defaults.thresholds.clone()).clone();
    let road = a.road_classes.get_or_insert_with(|| defaults.road_classes.clone()).clone();
    let tpr = *a.tpr_target.get_or_insert(defaults.tpr_target);
    let cutoff = *a.cutoff.get_or_insert(0.5);
    let svg = *a.svg.get_or_insert(false);
    create_dir(&ctx.out)?;
    write_echo(&ctx.out, "eval", ctx.seed, None, &a)?;
    let manifest = DatasetManifest::load(&path)?;
    let meta_model = a.meta_model.as_ref().map(MetaModel::load).transpose()?;

    let report = if manifest.has_labels() {
        let mut images = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            images.push(EvalImage {
                id: e.id.clone(),
                softmax: e.softmax.as_ref().map(|_| manifest.load_softmax(e)).transpose()?,
                heat: load_heat(&manifest, e, &kind, ctx)?,
                labels: manifest.load_labels(e)?.expect("labelled manifest"),
            });
        }
        let opts = EvalOptions {
            heat_kind: kind.clone(),
            thresholds,
            road_classes: road,
            tpr_target: tpr,
            miou_threshold: a.miou_threshold,
            meta: meta_model.as_ref().map(|model| MetaFilter { model, cutoff }),
            exec: ctx.exec,
        };
        evaluate(&images, &opts)?
    } else {
        let msg = "dataset has no labels: pixel curves, segment errors and mIoU skipped";
        eprintln!("oodseg eval: {msg}");
        EvalReport {
            heat_kind: kind.clone(),
            num_images: manifest.entries.len(),
            pixel: None,
            segment_errors: Vec::new(),
            segment_errors_meta: None,
            miou: None,
            miou_with_ood: None,
            skipped: vec![msg.into()],
            curves: None,
        }
    };
    if svg {
        if let Some((roc, pr)) = &report.curves {
            tensor::write_file(&ctx.out.join("roc.svg"), eval::svg::curve(roc, &format!("ROC ({kind})")).as_bytes())?;
            tensor::write_file(&ctx.out.join("pr.svg"), eval::svg::curve(pr, &format!("PR ({kind})")).as_bytes())?;
        }
        if let Some(p) = &report.pixel {
            let title = format!("{kind} quantiles");
            tensor::write_file(&ctx.out.join("quantiles.svg"), eval::svg::quantiles(&p.quantiles, &title).as_bytes())?;
        }
    }
    let doc: Value = json!({ "seed": ctx.seed, "config": a, "report": report });
    write_json(&ctx.out.join("report.json"), &doc)?;
    if let Some(p) = &report.pixel {
        ctx.say(format!("AUROC {:.4}  AUPRC {:.4}  FPR@{:.0}% {:.4}", p.auroc, p.auprc, 100.0 * p.tpr_target, p.fpr_at_tpr));
    }
    Ok(())
}

