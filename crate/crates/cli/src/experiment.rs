//! Multi-seed sweeps and markdown reports.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use oodseg::eval::{EvalReport, SegmentErrorRow};
use oodseg::pipeline::{sweep as run_sweep, SweepReport};
use oodseg::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{read_json, write_echo, write_json};
use crate::Ctx;

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    /// Comma separated world seeds; defaults to 0..5.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Entropy-maximization weight of the fine-tuning run.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fine-tuning epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Runs the sweep and returns it; an incomplete sweep is still written.
pub fn sweep(ctx: &Ctx, args: SweepArgs) -> Result<SweepReport> {
    let mut a = ctx.file.merge("sweep", &args)?;
    let mut exp = ctx.file.experiment()?;
    let seeds = a.seeds.get_or_insert_with(|| (0..5).collect()).clone();
    exp.ood.lambda = *a.lambda.get_or_insert(exp.ood.lambda);
    exp.ood.epochs = *a.epochs.get_or_insert(exp.ood.epochs);
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    write_echo(&ctx.out, "sweep", ctx.seed, Some(&exp), &a)?;
    let report = run_sweep(&exp, &seeds, ctx.exec)?;
    write_json(&ctx.out.join("sweep.json"), &report)?;
    if let Some(agg) = &report.aggregate {
        ctx.say(format!(
            "{} seeds: AUPRC gain {:.4} ± {:.4}, mIoU drop {:.4} ± {:.4}",
            report.runs.len(),
            agg.auprc_gain.mean,
            agg.auprc_gain.std,
            agg.miou_drop.mean,
            agg.miou_drop.std
        ));
    }
    Ok(report)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArgs {
    /// `sweep.json` or `report.json` to render.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

pub fn report(ctx: &Ctx, args: ReportArgs) -> Result<()> {
    let a = ctx.file.merge("report", &args)?;
    let input = a
        .input
        .clone()
        .ok_or_else(|| Error::InvalidArgument("--input is required".into()))?;
    let doc: Value = read_json(&input)?;
    let md = if doc.get("runs").is_some() {
        sweep_markdown(&serde_json::from_value(doc)?)
    } else if let Some(r) = doc.get("report") {
        eval_markdown(&serde_json::from_value(r.clone())?)
    } else {
        return Err(Error::Format(format!("{}: neither a sweep nor an eval report", input.display())));
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    write_echo(&ctx.out, "report", ctx.seed, None, &a)?;
    oodseg::tensor::write_file(&ctx.out.join("report.md"), md.as_bytes())?;
    print!("{md}");
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn error_table(out: &mut String, rows: &[SegmentErrorRow]) {
    out.push_str("| t | segments | TP | FP | FN | F1 | road miss |\n|---|---|---|---|---|---|---|\n");
    for r in rows {
        let c = &r.counts;
        let _ = writeln!(
            out,
            "| {:.2} | {} | {} | {} | {} | {:.4} | {} |",
            r.threshold,
            r.segments,
            c.tp,
            c.fp,
            c.fn_,
            r.f1,
            opt(r.road_miss_rate)
        );
    }
}

pub fn eval_markdown(r: &EvalReport) -> String {
    let mut s = format!("# Evaluation: {}\n\n{} images\n\n", r.heat_kind, r.num_images);
    if let Some(p) = &r.pixel {
        let _ = writeln!(
            s,
            "| AUROC | AUPRC | FPR@{:.0}%TPR | OoD pixels | in-dist pixels |\n|---|---|---|---|---|\n| {:.4} | {:.4} | {:.4} | {} | {} |\n",
            100.0 * p.tpr_target,
            p.auroc,
            p.auprc,
            p.fpr_at_tpr,
            p.positives,
            p.negatives
        );
    }
    if !r.segment_errors.is_empty() {
        s.push_str("## Segment errors\n\n");
        error_table(&mut s, &r.segment_errors);
        s.push('\n');
    }
    if let Some(rows) = &r.segment_errors_meta {
        s.push_str("## Segment errors after meta classification\n\n");
        error_table(&mut s, rows);
        s.push('\n');
    }
    if let Some(m) = &r.miou {
        let _ = writeln!(s, "mIoU: {:.4}\n", m.miou);
    }
    if let Some(m) = &r.miou_with_ood {
        let _ = writeln!(s, "mIoU with OoD override at t = {:.2}: {:.4}\n", m.threshold, m.result.miou);
    }
    for note in &r.skipped {
        let _ = writeln!(s, "> {note}\n");
    }
    s
}

pub fn sweep_markdown(r: &SweepReport) -> String {
    let mut s = format!("# Sweep over seeds {:?}\n\n", r.seeds);
    if let Some(f) = &r.failure {
        let _ = writeln!(s, "**Incomplete:** seed {} failed ({:?}): {}\n", f.seed, f.class, f.error);
    }
    s.push_str("| seed | AUROC base | AUROC OoD | AUPRC base | AUPRC OoD | mIoU base | mIoU OoD |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for run in &r.runs {
        let (b, o) = (&run.baseline, &run.ood);
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            run.seed, b.auroc, o.auroc, b.auprc, o.auprc, b.miou, o.miou
        );
    }
    if let Some(agg) = &r.aggregate {
        let _ = writeln!(
            s,
            "\nAUPRC gain {:.4} ± {:.4}; mIoU drop {:.4} ± {:.4}\n",
            agg.auprc_gain.mean, agg.auprc_gain.std, agg.miou_drop.mean, agg.miou_drop.std
        );
    }
    s.push_str("## Meta classification\n\n| seed | t | segments | meta AUROC | MSP AUROC | FP before | FP after | FN before | FN after | F1 before | F1 after |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for run in &r.runs {
        for m in &run.meta {
            let _ = writeln!(
                s,
                "| {} | {:.2} | {} | {} | {} | {} | {} | {} | {} | {:.4} | {:.4} |",
                run.seed,
                m.threshold,
                m.segments,
                opt(m.meta_auroc),
                opt(m.msp_auroc),
                m.before.fp,
                m.after.fp,
                m.before.fn_,
                m.after.fn_,
                m.f1_before,
                m.f1_after
            );
        }
    }
    s
}
