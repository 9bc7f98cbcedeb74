//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeSet, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use oodseg::dispersion::{self, entropy, entropy_normalized, heatmap, DispersionKind};
use oodseg::eval::{auprc, auroc, fpr_at_tpr, miou_with_ood, ErrorCounts, EvalImage, ScoredPixels};
use oodseg::features::{feature_row, DispersionMaps};
use oodseg::manifest::Role;
use oodseg::meta::{lars_path, MetaDataset};
use oodseg::par::Execution;
use oodseg::pipeline::{sweep, train_config_for_seed, ExperimentConfig, SweepReport, META_THRESHOLDS};
use oodseg::segments::{connected_components, OodMask};
use oodseg::tensor::{FeatureMap, HeatMap, LabelMap, SoftmaxMap};
use oodseg::toy::baselines::raw_scores;
use oodseg::toy::loss::{grad_out, loss_out};
use oodseg::toy::model::softmax;
use oodseg::toy::{self, baseline_heatmaps, gradient_check, Baseline, ToyModel, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Minimum mean AUPRC gain over the seeds. The first calibrated run gave
/// 0.235 (per-seed gains 0.378, 0.150, 0.177, 0.130, 0.341).
const MIN_MEAN_AUPRC_GAIN: f64 = 0.10;
const MAX_SWEEP_TIME: Duration = Duration::from_secs(120);
const MAX_MIOU_DROP: f64 = 0.03;
const MIN_FP_REDUCTION: f64 = 0.5;
const MAX_FN_INCREASE: f64 = 0.10;
const MAX_PROPERTY_TIME: Duration = Duration::from_secs(10);

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct SweepRun {
    report: SweepReport,
    json: String,
    elapsed: Duration,
}

fn shared_sweep() -> &'static SweepRun {
    static RUN: OnceLock<SweepRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let report = sweep(&ExperimentConfig::default(), &SEEDS, Execution::Parallel).expect("sweep");
        let elapsed = start.elapsed();
        let json = serde_json::to_string_pretty(&report).unwrap();
        SweepRun { report, json, elapsed }
    })
}

// ------------------------------------------------------------------ oracles

/// Probability that a positive outscores a negative, ties half, by enumerating pairs.
fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Average precision by enumerating distinct thresholds from the top.
fn enumerated_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let (mut ap, mut prev_recall) = (0.0, 0.0);
    for &t in &distinct {
        let tp = scores.iter().zip(labels).filter(|(s, &l)| **s >= t && l).count() as f64;
        let all = scores.iter().filter(|s| **s >= t).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / all);
        prev_recall = recall;
    }
    ap
}

/// 8-connected components by breadth-first flood fill.
fn flood_fill(h: usize, w: usize, mask: &[bool]) -> BTreeSet<BTreeSet<(usize, usize)>> {
    let mut seen = vec![false; h * w];
    let mut out = BTreeSet::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            comp.insert((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.insert(comp);
    }
    out
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Per-pixel recomputation of every segment metric from the softmax map.
fn naive_features(pixels: &[(usize, usize)], s: &SoftmaxMap) -> Vec<f64> {
    let (h, w, q) = (s.height(), s.width(), s.num_classes());
    let inside: BTreeSet<(usize, usize)> = pixels.iter().copied().collect();
    let near = |r: usize, c: usize| {
        let mut v = Vec::new();
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if (dr, dc) != (0, 0) {
                    v.push((r as i64 + dr, c as i64 + dc));
                }
            }
        }
        v
    };
    let interior: Vec<(usize, usize)> = pixels
        .iter()
        .copied()
        .filter(|&(r, c)| {
            near(r, c)
                .iter()
                .all(|&(a, b)| a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w && inside.contains(&(a as usize, b as usize)))
        })
        .collect();
    let boundary: Vec<(usize, usize)> = pixels.iter().copied().filter(|p| !interior.contains(p)).collect();
    let p = |&(r, c): &(usize, usize)| -> Vec<f64> { s.at(r, c).iter().map(|&v| v as f64).collect() };
    let ent = |v: &[f64]| -v.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>() / (q as f64).ln();
    let vr = |v: &[f64]| 1.0 - v.iter().cloned().fold(f64::MIN, f64::max);
    let margin = |v: &[f64]| {
        let mut sorted = v.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        1.0 - sorted[0] + sorted[1]
    };
    let stats = |xs: Vec<f64>| -> [f64; 2] {
        if xs.is_empty() {
            return [0.0, 0.0];
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        [m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64]
    };
    let mut out = Vec::new();
    let measures: [&dyn Fn(&[f64]) -> f64; 3] = [&ent, &vr, &margin];
    for f in measures {
        for region in [pixels, &interior[..], &boundary[..]] {
            out.extend(stats(region.iter().map(|x| f(&p(x))).collect()));
        }
    }
    for j in 0..q {
        out.extend(stats(pixels.iter().map(|x| p(x)[j]).collect()));
    }
    let (n, ni, nb) = (pixels.len() as f64, interior.len() as f64, boundary.len() as f64);
    out.extend([n, ni, nb, n / nb, ni / nb]);
    let mut ring = BTreeSet::new();
    for &(r, c) in pixels {
        for (a, b) in near(r, c) {
            if a >= 0 && b >= 0 && (a as usize) < h && (b as usize) < w && !inside.contains(&(a as usize, b as usize)) {
                ring.insert((a as usize, b as usize));
            }
        }
    }
    let mut counts = vec![0.0; q];
    for x in &ring {
        let v = p(x);
        let mut best = 0;
        for j in 1..q {
            if v[j] > v[best] {
                best = j;
            }
        }
        counts[best] += 1.0;
    }
    out.extend(counts.iter().map(|c| if ring.is_empty() { 0.0 } else { c / ring.len() as f64 }));
    out.push(pixels.iter().map(|&(r, _)| r as f64).sum::<f64>() / n);
    out.push(pixels.iter().map(|&(_, c)| c as f64).sum::<f64>() / n);
    out
}

fn random_softmax(h: usize, w: usize, q: usize, rng: &mut ChaCha8Rng) -> SoftmaxMap {
    let mut v = Vec::with_capacity(h * w * q);
    for _ in 0..h * w {
        let sharp = rng.random_range(0.5..6.0);
        let z: Vec<f64> = (0..q).map(|_| rng.random::<f64>() * sharp).collect();
        v.extend(softmax(&z).into_iter().map(|x| x as f32));
    }
    SoftmaxMap::new(h, w, q, v).unwrap()
}

// ------------------------------------------------------------------ criteria

fn c1_auprc_gain() -> Outcome {
    let run = shared_sweep();
    let r = &run.report;
    ensure(r.complete, || format!("sweep incomplete: {:?}", r.failure))?;
    let gains: Vec<f64> = r.runs.iter().map(|s| s.ood.auprc - s.baseline.auprc).collect();
    for s in &r.runs {
        ensure(s.ood.auprc > s.baseline.auprc, || {
            format!("seed {}: AUPRC {:.4} after OoD training, {:.4} before", s.seed, s.ood.auprc, s.baseline.auprc)
        })?;
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    ensure(mean >= MIN_MEAN_AUPRC_GAIN, || format!("mean AUPRC gain {mean:.4} < {MIN_MEAN_AUPRC_GAIN}"))?;
    ensure(run.elapsed <= MAX_SWEEP_TIME, || format!("sweep took {:.1?}", run.elapsed))?;

    // Recompute seed 0 of the OoD model from scratch and score it with the
    // enumeration oracle.
    let cfg = ExperimentConfig::default();
    let world = World::new(cfg.world.clone(), 0).unwrap();
    let q = world.num_classes();
    let scenes = |role: Role, n: usize| (0..n).map(|i| world.scene(role, i)).collect::<Vec<_>>();
    let train = scenes(Role::InTrain, cfg.train_scenes);
    let proxy = scenes(Role::OutProxy, cfg.proxy_scenes);
    let test = scenes(Role::OodTest, cfg.test_scenes);
    let base = toy::train(&train_config_for_seed(&cfg.baseline, 0), q, &train, &[], None).unwrap();
    let tuned = toy::train(&train_config_for_seed(&cfg.ood, 0), q, &train, &proxy, Some(base.model)).unwrap();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for s in &test {
        let heat = heatmap(&toy::infer(&tuned.model, &s.features, Execution::Sequential).unwrap(), DispersionKind::Entropy);
        for (i, &l) in s.labels.labels().iter().enumerate() {
            if l >= 0 {
                scores.push(heat.get(i) as f64);
                labels.push(l == q as i32);
            }
        }
    }
    let oracle = enumerated_ap(&scores, &labels);
    let reported = r.runs[0].ood.auprc;
    ensure((oracle - reported).abs() < 1e-9, || format!("seed 0 AUPRC {reported} but oracle gives {oracle}"))?;

    let per_seed: Vec<String> = r
        .runs
        .iter()
        .map(|s| format!("{}:{:.3}->{:.3}", s.seed, s.baseline.auprc, s.ood.auprc))
        .collect();
    Ok(format!("mean gain {mean:.4} [{}], sweep {:.1?}", per_seed.join(" "), run.elapsed))
}

fn c2_miou_cost() -> Outcome {
    let r = &shared_sweep().report;
    ensure(r.runs.len() == SEEDS.len(), || "sweep incomplete".into())?;
    let drops: Vec<f64> = r.runs.iter().map(|s| s.baseline.miou - s.ood.miou).collect();
    let mean = drops.iter().sum::<f64>() / drops.len() as f64;
    ensure(mean <= MAX_MIOU_DROP, || format!("mean mIoU drop {mean:.4} > {MAX_MIOU_DROP}"))?;
    Ok(format!("mean mIoU drop {mean:.4} (per seed {:?})", drops.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>()))
}

fn c3_meta_auroc() -> Outcome {
    let r = &shared_sweep().report;
    ensure(r.runs.len() == SEEDS.len(), || "sweep incomplete".into())?;
    let mut worst_margin = f64::INFINITY;
    for s in &r.runs {
        let ts: Vec<f64> = s.meta.iter().map(|m| m.threshold).collect();
        ensure(ts == META_THRESHOLDS, || format!("seed {}: meta thresholds {ts:?}", s.seed))?;
        for m in &s.meta {
            let (Some(meta), Some(msp)) = (m.meta_auroc, m.msp_auroc) else {
                return Err(format!("seed {} t={}: AUROC undefined (single-class segments)", s.seed, m.threshold));
            };
            ensure(meta > msp, || format!("seed {} t={}: meta AUROC {meta:.4} <= MSP {msp:.4}", s.seed, m.threshold))?;
            worst_margin = worst_margin.min(meta - msp);
        }
    }
    Ok(format!("meta AUROC beats MSP on all {} seed/threshold pairs, smallest margin {worst_margin:.4}", SEEDS.len() * META_THRESHOLDS.len()))
}

fn c4_fp_removal() -> Outcome {
    let r = &shared_sweep().report;
    ensure(r.runs.len() == SEEDS.len(), || "sweep incomplete".into())?;
    let (mut min_red, mut max_fn) = (f64::INFINITY, 0.0f64);
    for s in &r.runs {
        for m in &s.meta {
            let (b, a): (&ErrorCounts, &ErrorCounts) = (&m.before, &m.after);
            let tag = format!("seed {} t={}", s.seed, m.threshold);
            let gt = b.tp + b.fn_;
            ensure(a.tp + a.fn_ == gt, || format!("{tag}: GT count changed"))?;
            let reduction = if b.fp == 0 { 1.0 } else { (b.fp as f64 - a.fp as f64) / b.fp as f64 };
            let fn_increase = (a.fn_ as f64 - b.fn_ as f64) / gt.max(1) as f64;
            ensure(reduction >= MIN_FP_REDUCTION, || format!("{tag}: FP {} -> {}", b.fp, a.fp))?;
            ensure(fn_increase <= MAX_FN_INCREASE, || format!("{tag}: FN {} -> {} of {gt} objects", b.fn_, a.fn_))?;
            let (f1b, f1a) = (2.0 * b.tp as f64 / (2 * b.tp + b.fp + b.fn_) as f64, 2.0 * a.tp as f64 / (2 * a.tp + a.fp + a.fn_) as f64);
            ensure(f1a >= f1b, || format!("{tag}: F1 {f1b:.4} -> {f1a:.4}"))?;
            ensure((f1b - m.f1_before).abs() < 1e-12 && (f1a - m.f1_after).abs() < 1e-12, || format!("{tag}: reported F1 disagrees"))?;
            min_red = min_red.min(reduction);
            max_fn = max_fn.max(fn_increase);
        }
    }
    Ok(format!("FP reduced by at least {:.1}%, FN increase at most {:.1}% of GT, F1 never lower", 100.0 * min_red, 100.0 * max_fn))
}

fn c5_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut near_uniform = 0;
    for k in 0..10_000 {
        let q = rng.random_range(2..=20);
        let u = 1.0 / q as f64;
        let p: Vec<f64> = match k % 4 {
            0 => vec![u; q],
            1 => {
                let eps: Vec<f64> = (0..q).map(|_| rng.random_range(-1e-6..1e-6)).collect();
                let mean = eps.iter().sum::<f64>() / q as f64;
                eps.iter().map(|e| u + e - mean).collect()
            }
            _ => {
                let sharp = rng.random_range(0.0..20.0);
                let z: Vec<f64> = (0..q).map(|_| rng.random::<f64>() * sharp).collect();
                softmax(&z)
            }
        };
        let ln_q = (q as f64).ln();
        let (gap_out, gap_ent) = (loss_out(&p) - ln_q, ln_q - entropy(&p));
        ensure(gap_out >= -1e-12, || format!("loss_out below ln q by {gap_out:e} at {p:?}"))?;
        ensure(gap_ent >= -1e-12, || format!("entropy above ln q by {:e} at {p:?}", -gap_ent))?;
        if gap_out < 1e-9 && gap_ent < 1e-9 {
            near_uniform += 1;
            let dev = p.iter().map(|v| (v - u).abs()).fold(0.0, f64::max);
            ensure(dev < 1e-4, || format!("both gaps tiny but max deviation {dev:e}"))?;
        }
    }
    ensure(near_uniform >= 2500, || format!("only {near_uniform} near-uniform samples exercised"))?;

    for q in [2usize, 5, 19] {
        let mut z: Vec<f64> = (0..q).map(|j| (j as f64 * 1.7).sin() * 3.0).collect();
        for _ in 0..2000 {
            let g = grad_out(&softmax(&z));
            z.iter_mut().zip(&g).for_each(|(zj, gj)| *zj -= gj);
        }
        let dev = softmax(&z).iter().map(|v| (v - 1.0 / q as f64).abs()).fold(0.0, f64::max);
        ensure(dev < 1e-6, || format!("descent on loss_out left deviation {dev:e} for q={q}"))?;
    }

    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut model = ToyModel::new(3, &[6, 5], 4, 0.2, seed % 2 == 0, &mut rng).unwrap();
        let jittered: Vec<f64> = model.params().iter().map(|v| v + 0.1 * (rng.random::<f64>() - 0.5)).collect();
        model.set_params(&jittered);
        let width = model.input_width();
        let x = |rng: &mut ChaCha8Rng| (0..width).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let bin: Vec<(Vec<f64>, usize)> = (0..6).map(|_| (x(&mut rng), rng.random_range(0..4))).collect();
        let bout: Vec<Vec<f64>> = (0..4).map(|_| x(&mut rng)).collect();
        let lambda = rng.random_range(0.0..=1.0);
        worst = worst.max(gradient_check(&model, &bin, &bout, lambda));
    }
    ensure(worst < 1e-4, || format!("gradient check relative error {worst:e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < MAX_PROPERTY_TIME, || format!("property suite took {elapsed:.1?}"))?;
    Ok(format!("10^4 simplex vectors ({near_uniform} near uniform), gradient error {worst:.2e}, {elapsed:.2?}"))
}

fn c6_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut d_roc, mut d_pr) = (0.0f64, 0.0f64);
    for k in 0..200 {
        let n = rng.random_range(2..=64);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = if k % 2 == 0 {
            (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        let sp = ScoredPixels::new(scores.clone(), labels.clone()).unwrap();
        d_roc = d_roc.max((auroc(&sp).unwrap() - pairwise_auroc(&scores, &labels)).abs());
        d_pr = d_pr.max((auprc(&sp).unwrap() - enumerated_ap(&scores, &labels)).abs());
    }
    ensure(d_roc < 1e-12, || format!("AUROC deviates from pairwise oracle by {d_roc:e}"))?;
    ensure(d_pr < 1e-12, || format!("AUPRC deviates from enumeration oracle by {d_pr:e}"))?;

    for k in 0..500 {
        let density = [0.2, 0.45, 0.6, 0.8][k % 4];
        let flags: Vec<bool> = (0..256).map(|_| rng.random_bool(density)).collect();
        let mask = OodMask::from_flags(16, 16, 0.5, flags.clone()).unwrap();
        let ours: BTreeSet<BTreeSet<(usize, usize)>> =
            connected_components(&mask).into_iter().map(|s| s.pixels.into_iter().collect()).collect();
        ensure(ours == flood_fill(16, 16, &flags), || format!("mask {k}: components differ from flood fill"))?;
    }

    let (n, p) = (80, 6);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r[0] - 0.5 * r[2] + rng.random_range(-1.0..1.0) > 0.0).collect();
    let data = MetaDataset::new((0..p).map(|j| format!("x{j}")).collect(), rows.clone(), labels.clone()).unwrap();
    let path = lars_path(&data, p).unwrap();
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let sd: Vec<f64> = (0..p)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
        .collect();
    let z: Vec<Vec<f64>> = rows.iter().map(|r| (0..p).map(|j| (r[j] - mean[j]) / sd[j]).collect()).collect();
    let ybar = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
    let y: Vec<f64> = labels.iter().map(|&l| l as u8 as f64 - ybar).collect();
    let gram: Vec<Vec<f64>> = (0..p).map(|a| (0..p).map(|b| z.iter().map(|r| r[a] * r[b]).sum()).collect()).collect();
    let rhs: Vec<f64> = (0..p).map(|a| z.iter().zip(&y).map(|(r, yi)| r[a] * yi).sum()).collect();
    let ols = solve(gram, rhs);
    let d_lars = path.final_coefficients().iter().zip(&ols).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(d_lars < 1e-6, || format!("LARS final coefficients deviate from least squares by {d_lars:e}"))?;

    let mut d_feat: f64 = 0.0;
    let mut checked = 0;
    for k in 0..20 {
        let (h, w, q) = (10 + k % 3, 12, 3 + k % 3);
        let s = random_softmax(h, w, q, &mut rng);
        let maps = DispersionMaps::compute(&s);
        let flags: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.55)).collect();
        let mask = OodMask::from_flags(h, w, 0.5, flags).unwrap();
        for seg in connected_components(&mask) {
            let ours = feature_row(&seg, &s, &maps).unwrap().values;
            let naive = naive_features(&seg.pixels, &s);
            ensure(ours.len() == naive.len(), || "feature count differs".into())?;
            for (a, b) in ours.iter().zip(&naive) {
                let d = if a.is_infinite() && b.is_infinite() { 0.0 } else { (a - b).abs() };
                d_feat = d_feat.max(d);
            }
            checked += 1;
        }
    }
    ensure(d_feat < 1e-6, || format!("segment features deviate from per-pixel aggregation by {d_feat:e}"))?;
    Ok(format!(
        "AUROC dev {d_roc:.1e}, AUPRC dev {d_pr:.1e}, 500 masks exact, LARS dev {d_lars:.1e}, {checked} segments dev {d_feat:.1e}"
    ))
}

fn c7_identities() -> Outcome {
    let c = ErrorCounts { tp: 3, fp: 1, fn_: 2 };
    ensure(c.f1() == 6.0 / 9.0, || format!("F1 {} != 2/3", c.f1()))?;
    ensure(ErrorCounts::default().f1() == 0.0, || "F1 of empty counts".into())?;

    ensure(entropy_normalized(&[0.25f64; 4]).unwrap() == 1.0, || "entropy of uniform".into())?;
    ensure(entropy_normalized(&[0.0f64, 1.0, 0.0]).unwrap() == 0.0, || "entropy of one-hot".into())?;
    let e = entropy_normalized(&[0.5f64, 0.25, 0.25]).unwrap();
    let hand = 1.5 * 2f64.ln() / 3f64.ln();
    ensure((e - hand).abs() <= 4.0 * f64::EPSILON, || format!("entropy {e} vs {hand}"))?;
    ensure(dispersion::variation_ratio(&[0.5f64, 0.3, 0.2]) == 0.5, || "variation ratio".into())?;

    // 1x6 image, q = 2: labels 0,0,1,1,OoD,ignore.
    let labels = LabelMap::new(1, 6, 2, vec![0, 0, 1, 1, 2, -1]).unwrap();
    let probs = [[0.9, 0.1], [0.2, 0.8], [0.3, 0.7], [0.1, 0.9], [0.4, 0.6], [0.5, 0.5]];
    let soft = SoftmaxMap::new(1, 6, 2, probs.iter().flatten().map(|&v: &f64| v as f32).collect()).unwrap();
    let heat = HeatMap::new(1, 6, vec![0.1, 0.6, 0.2, 0.1, 0.9, 0.9]).unwrap();
    let img = [EvalImage { id: "fixture".into(), softmax: Some(soft), heat, labels }];
    // MAP: class 0 IoU 1/2, class 1 IoU 2/4 (pixels 1 and 4 are false positives).
    let plain = miou_with_ood(&img, f64::INFINITY, Execution::Sequential).unwrap().miou;
    ensure(plain == (0.5 + 0.5) / 2.0, || format!("plain mIoU {plain}"))?;
    // Overriding pixels 1 and 4 as OoD leaves class 1 with IoU 2/2.
    let ood = miou_with_ood(&img, 0.5, Execution::Sequential).unwrap().miou;
    ensure(ood == (0.5 + 1.0) / 2.0, || format!("mIoU with OoD {ood}"))?;

    // 20 positives scored 1..20, negatives 0.5, 1.5, 2.5, 10.5: reaching 19/20
    // positives needs t = 2, which admits two of four negatives.
    let mut scores: Vec<f64> = (1..=20).map(f64::from).collect();
    scores.extend([0.5, 1.5, 2.5, 10.5]);
    let lab: Vec<bool> = (0..24).map(|i| i < 20).collect();
    let fpr95 = fpr_at_tpr(&ScoredPixels::new(scores, lab).unwrap(), 0.95).unwrap();
    ensure(fpr95 == 0.5, || format!("FPR95 {fpr95}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = ToyModel::new(4, &[16], 5, 0.3, false, &mut rng).unwrap();
    let (h, w) = (12, 12);
    let f = FeatureMap::new(h, w, 4, (0..h * w * 4).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let lab: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.3)).collect();
    let odin = raw_scores(&model, &f, &Baseline::Odin { temperature: 1.0, epsilon: 0.0 }, None, Execution::Sequential).unwrap();
    let msp = raw_scores(&model, &f, &Baseline::Msp, None, Execution::Sequential).unwrap();
    let a_odin = auroc(&ScoredPixels::new(odin, lab.clone()).unwrap()).unwrap();
    let a_msp = auroc(&ScoredPixels::new(msp, lab).unwrap()).unwrap();
    ensure((a_odin - a_msp).abs() < 1e-12, || format!("ODIN AUROC {a_odin} vs MSP {a_msp}"))?;

    let mc = baseline_heatmaps(&model, &[&f], &Baseline::McDropout { samples: 1, seed: 3 }, None, Execution::Sequential).unwrap();
    ensure(mc[0].values().iter().all(|&v| v == 0.0), || "MC dropout with one sample is not all zero".into())?;
    Ok("F1, entropy, mIoU and FPR95 fixtures exact; ODIN(0,1) ranks like MSP; MC dropout S=1 is zero".into())
}

fn c8_determinism() -> Outcome {
    let first = shared_sweep();
    let again = sweep(&ExperimentConfig::default(), &SEEDS, Execution::Parallel).unwrap();
    let json = serde_json::to_string_pretty(&again).unwrap();
    ensure(json == first.json, || "second sweep produced different JSON".into())?;
    Ok(format!("two sweeps over seeds {SEEDS:?} gave identical {}-byte reports", json.len()))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // Criterion numbers given as arguments restrict the run to those criteria.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("entropy maximization improves AUPRC", c1_auprc_gain),
        ("in-distribution mIoU cost", c2_miou_cost),
        ("meta classifier beats MSP", c3_meta_auroc),
        ("false-positive removal trade-off", c4_fp_removal),
        ("entropy bounds and gradients", c5_bounds),
        ("oracle equivalence", c6_oracles),
        ("formula identities", c7_identities),
        ("sweep determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    let ran = if only.is_empty() { criteria.len() } else { only.iter().filter(|&&k| (1..=criteria.len()).contains(&k)).count() };
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
