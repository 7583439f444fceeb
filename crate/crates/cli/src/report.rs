use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fsn_core::normalize::WeightStats;
use fsn_core::pipeline::Ablation;
use fsn_core::{EpisodeAggregate, EvalReport, LinearClassifier, Metric};

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Confusion counts summed over episodes, episode-local column order.
pub fn write_confusion(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let n = reports.first().map_or(0, |r| r.confusion.len());
    let mut sum = vec![vec![0u64; n]; n];
    for r in reports {
        for (row, counts) in sum.iter_mut().zip(&r.confusion) {
            for (acc, c) in row.iter_mut().zip(counts) {
                *acc += c;
            }
        }
    }
    let mut out = String::from("true");
    for j in 0..n {
        write!(out, ",pred_{j}")?;
    }
    out.push('\n');
    for (i, row) in sum.iter().enumerate() {
        write!(out, "{i}")?;
        for c in row {
            write!(out, ",{c}")?;
        }
        out.push('\n');
    }
    write(path, out)
}

pub fn write_aggregate_csv(path: &Path, rows: &[(Ablation, usize, EpisodeAggregate)]) -> Result<()> {
    let mut out = String::from(
        "ablation,shot,episodes,novel,novel_ci,base,base_ci,all_mean,all_mean_ci,all_joint,all_joint_ci,base_to_novel,novel_to_base\n",
    );
    for (ablation, shot, agg) in rows {
        write!(out, "{ablation},{shot},{}", agg.episodes)?;
        for metric in [Metric::Novel, Metric::Base, Metric::AllMean, Metric::AllJoint] {
            let m = agg.get(metric).context("missing metric")?;
            let ci = m.half_width.map(|h| format!("{h:.4}")).unwrap_or_default();
            write!(out, ",{:.4},{ci}", m.mean)?;
        }
        for metric in [Metric::BaseToNovel, Metric::NovelToBase] {
            write!(out, ",{:.6}", agg.mean(metric).context("missing metric")?)?;
        }
        out.push('\n');
    }
    write(path, out)
}

pub fn write_stats_csv(path: &Path, clf: &LinearClassifier, stats: &WeightStats) -> Result<()> {
    let mut out = String::from("column,class_id,partition,mu,sigma,norm\n");
    for (i, &class) in clf.class_map().iter().enumerate() {
        let partition = if clf.is_novel(i) { "novel" } else { "base" };
        writeln!(
            out,
            "{i},{class},{partition},{:e},{:e},{:e}",
            stats.mu[i], stats.sigma[i], stats.norms[i]
        )?;
    }
    write(path, out)
}
