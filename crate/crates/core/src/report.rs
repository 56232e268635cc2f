//! Summaries of a training log: a markdown table, CSV series and an SVG
//! plot of held-out PSNR.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::train::{DensityEvent, LogRecord};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub iteration: u64,
    pub split: Split,
    pub psnr: f64,
    pub ssim: f64,
    pub loss: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRow {
    pub iteration: u64,
    pub total: f64,
    pub recon: f64,
    pub ssim: f64,
    pub smooth: f64,
    pub count: usize,
    pub elapsed_s: f64,
}

/// Net change in Gaussian count per density event kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DensityTotals {
    pub added_by_densify: usize,
    pub removed_by_opacity: usize,
    pub removed_at_random: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub evals: Vec<EvalRow>,
    pub train: Vec<TrainRow>,
    pub density: DensityTotals,
}

impl Report {
    pub fn from_records(records: &[LogRecord]) -> Self {
        let mut r = Report::default();
        for rec in records {
            match *rec {
                LogRecord::Train { iteration, loss, count, elapsed_s } => r.train.push(TrainRow {
                    iteration,
                    total: loss.total,
                    recon: loss.recon,
                    ssim: loss.ssim,
                    smooth: loss.smooth,
                    count,
                    elapsed_s,
                }),
                LogRecord::Eval { iteration, split, psnr, ssim, loss, count } => r.evals.push(EvalRow {
                    iteration,
                    split,
                    psnr,
                    ssim,
                    loss,
                    count,
                }),
                LogRecord::Density { event, before, after, .. } => {
                    let d = &mut r.density;
                    match event {
                        DensityEvent::Densify => d.added_by_densify += after.saturating_sub(before),
                        DensityEvent::PruneOpacity => d.removed_by_opacity += before.saturating_sub(after),
                        DensityEvent::PruneRandom => d.removed_at_random += before.saturating_sub(after),
                    }
                }
            }
        }
        r
    }

    pub fn final_eval(&self, split: Split) -> Option<&EvalRow> {
        self.evals.iter().rev().find(|e| e.split == split)
    }

    pub fn best_eval(&self, split: Split) -> Option<&EvalRow> {
        self.evals
            .iter()
            .filter(|e| e.split == split)
            .max_by(|a, b| a.psnr.total_cmp(&b.psnr))
    }

    pub fn markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| iteration | split | PSNR (dB) | SSIM | loss | Gaussians |\n");
        s.push_str("|---:|:---|---:|---:|---:|---:|\n");
        for e in &self.evals {
            let split = match e.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.4} | {:.5} | {} |",
                e.iteration, split, e.psnr, e.ssim, e.loss, e.count
            );
        }
        s.push('\n');
        for split in [Split::Test, Split::Train] {
            if let (Some(last), Some(best)) = (self.final_eval(split), self.best_eval(split)) {
                let name = if split == Split::Test { "test" } else { "train" };
                let _ = writeln!(
                    s,
                    "final {name}: {:.2} dB, SSIM {:.4} at iteration {} (best {:.2} dB at {})",
                    last.psnr, last.ssim, last.iteration, best.psnr, best.iteration
                );
            }
        }
        if let Some(last) = self.train.last() {
            let _ = writeln!(s, "training time: {:.1} s over {} iterations", last.elapsed_s, last.iteration);
        }
        let d = self.density;
        let _ = writeln!(
            s,
            "density control: +{} densified, -{} opacity-pruned, -{} randomly pruned",
            d.added_by_densify, d.removed_by_opacity, d.removed_at_random
        );
        s
    }

    pub fn eval_csv(&self) -> Result<String> {
        to_csv(&self.evals)
    }

    pub fn train_csv(&self) -> Result<String> {
        to_csv(&self.train)
    }

    /// Line plot of PSNR against iteration, one polyline per split.
    pub fn psnr_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 360.0;
        const M: f64 = 48.0;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        if self.evals.is_empty() {
            s.push_str("<text x=\"20\" y=\"30\">no evaluation records</text>\n</svg>\n");
            return s;
        }
        let x_max = self.evals.iter().map(|e| e.iteration).max().unwrap_or(0).max(1) as f64;
        let finite: Vec<f64> = self.evals.iter().map(|e| e.psnr).filter(|p| p.is_finite()).collect();
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min).floor();
        let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil();
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        let px = |it: u64| M + (W - 2.0 * M) * it as f64 / x_max;
        let py = |p: f64| H - M - (H - 2.0 * M) * (p - lo) / (hi - lo);
        let _ = writeln!(
            s,
            "<line x1=\"{M}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{y}\" stroke=\"black\"/>",
            y = H - M,
            x2 = W - M
        );
        let _ = writeln!(s, "<text x=\"{M}\" y=\"{}\">0</text>", H - M + 16.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x_max}</text>", W - M, H - M + 16.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo}</text>", M - 4.0, H - M);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi}</text>", M - 4.0, M + 4.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">iteration</text>", W / 2.0, H - 12.0);
        let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">PSNR (dB)</text>", H / 2.0, H / 2.0);
        for (i, (split, colour, name)) in [(Split::Train, "#1f77b4", "train"), (Split::Test, "#d62728", "test")].into_iter().enumerate() {
            let points: Vec<String> = self
                .evals
                .iter()
                .filter(|e| e.split == split && e.psnr.is_finite())
                .map(|e| format!("{:.1},{:.1}", px(e.iteration), py(e.psnr)))
                .collect();
            if points.is_empty() {
                continue;
            }
            let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>", points.join(" "));
            let ly = M + 16.0 * i as f64;
            let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{colour}\">{name}</text>", W - M - 40.0);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn to_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Report(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Report(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
