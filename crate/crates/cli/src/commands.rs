use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fsn_core::dataset::Format;
use fsn_core::eval::{aggregate, restricted_accuracy, Metric};
use fsn_core::model::{load_checkpoint, save_checkpoint, train_base, TrainConfig};
use fsn_core::normalize::compute_stats;
use fsn_core::pipeline::{prepare, run_episodes, split_data, Ablation, DataSplit, PipelineConfig, PipelineData};
use fsn_core::{
    generate_synthetic, load_dataset, save_dataset, BaseMode, FeatureDataset, LinearClassifier, LogitMode,
    SyntheticConfig,
};
use log::info;
use serde::Serialize;

use crate::report;
use crate::{AnalyzeArgs, ModeArg, PretrainArgs, RunArgs, SynthArgs};

/// Invalid flags or configuration.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 1 usage, 2 data, 3 numeric failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<serde_json::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<fsn_core::Error>() {
            return match e {
                fsn_core::Error::NumericFailure(_) => 3,
                fsn_core::Error::InvalidConfig(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(path: &Path) -> Result<FeatureDataset> {
    load_dataset(path, Format::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SyntheticConfig = read_json(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let ds = generate_synthetic(&cfg)?;
    save_dataset(&ds, &args.out, Format::from_path(&args.out))
        .with_context(|| format!("writing {}", args.out.display()))?;
    info!("wrote {} samples to {}", ds.len(), args.out.display());
    Ok(())
}

fn pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PretrainSummary {
    dim: usize,
    base_classes: usize,
    train_samples: usize,
    train_accuracy: f64,
    base_test_accuracy: f64,
}

pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let mut cfg = pipeline_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seeds.pretrain = seed;
    }
    let ds = load(&args.data)?;
    let split = split_data(&ds, &cfg)?;
    let train_cfg = TrainConfig {
        seed: cfg.seeds.pretrain,
        ..cfg.pretrain.clone()
    };
    let clf = train_base(&split.base_train, &train_cfg)?;
    save_checkpoint(&clf, None, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let summary = PretrainSummary {
        dim: clf.dim(),
        base_classes: clf.class_count(),
        train_samples: split.base_train.len(),
        train_accuracy: restricted_accuracy(&clf, &split.base_train, LogitMode::Linear)?,
        base_test_accuracy: restricted_accuracy(&clf, &split.base_test, LogitMode::Linear)?,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = pipeline_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seeds.episode = seed;
    }
    if let Some(ways) = args.ways {
        cfg.episode.n_way = ways;
    }
    if args.episodes == 0 {
        bail!(Usage("--episodes must be positive".into()));
    }
    if args.shots.contains(&0) {
        bail!(Usage("--shots must be positive".into()));
    }
    let ablations = args
        .ablation
        .iter()
        .map(|s| s.parse::<Ablation>().map_err(|e| Usage(e.to_string())))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let ds = match &args.data {
        Some(p) => load(p)?,
        None => generate_synthetic(&cfg.synthetic.clone().unwrap_or_default())?,
    };
    let (split, pretrained) = prepare_or_load(&ds, &cfg, args.checkpoint.as_deref())?;
    let data = PipelineData {
        pretrained: &pretrained,
        base_train: &split.base_train,
        base_test: &split.base_test,
        novel: &split.novel,
    };

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut rows = Vec::new();
    for &ablation in &ablations {
        for &shot in &args.shots {
            let mut run_cfg = cfg.clone().with_shot(shot).for_ablation(ablation);
            match args.mode {
                Some(ModeArg::Balanced) => run_cfg.mode = BaseMode::UndersampledBalanced,
                Some(ModeArg::ZeroBase) => run_cfg.mode = BaseMode::ZeroBase,
                None => {}
            }
            info!("{ablation} {shot}-shot: {} episodes", args.episodes);
            let reports = run_episodes(&data, &run_cfg, args.episodes, args.workers)?;
            let stem = format!("{ablation}_{shot}shot");
            write_json(&args.out.join(format!("episodes_{stem}.json")), &reports)?;
            report::write_confusion(&args.out.join(format!("confusion_{stem}.csv")), &reports)?;
            rows.push((ablation, shot, aggregate(&reports, &Metric::ALL)?));
        }
    }
    report::write_aggregate_csv(&args.out.join("aggregate.csv"), &rows)?;
    let json: Vec<_> = rows
        .iter()
        .map(|(a, s, agg)| serde_json::json!({ "ablation": a.name(), "shot": s, "aggregate": agg }))
        .collect();
    write_json(&args.out.join("aggregate.json"), &json)?;
    Ok(())
}

fn prepare_or_load(
    ds: &FeatureDataset,
    cfg: &PipelineConfig,
    checkpoint: Option<&Path>,
) -> Result<(DataSplit, LinearClassifier)> {
    match checkpoint {
        None => {
            let p = prepare(ds, cfg)?;
            Ok((p.split, p.pretrained))
        }
        Some(path) => {
            let split = split_data(ds, cfg)?;
            let clf = read_classifier(path)?;
            if clf.novel_class_count() != 0 || clf.class_count() != split.base_train.class_count() {
                bail!(fsn_core::Error::ShapeMismatch(format!(
                    "checkpoint has {} base and {} novel columns, data has {} base classes",
                    clf.base_class_count(),
                    clf.novel_class_count(),
                    split.base_train.class_count()
                )));
            }
            if clf.dim() != ds.dim() {
                bail!(fsn_core::Error::ShapeMismatch(format!(
                    "checkpoint dim {} != data dim {}",
                    clf.dim(),
                    ds.dim()
                )));
            }
            let clf = clf.relabel(split.base_train.classes().to_vec())?;
            Ok((split, clf))
        }
    }
}

fn read_classifier(path: &Path) -> Result<LinearClassifier> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    ck.classifier.check_finite().with_context(|| format!("checkpoint {}", path.display()))?;
    Ok(ck.classifier)
}

#[derive(Serialize)]
struct AnalyzeSummary {
    dim: usize,
    base_classes: usize,
    novel_classes: usize,
    mu_bar_base: Option<f64>,
    mu_bar_novel: Option<f64>,
    sigma_bar_base: Option<f64>,
    sigma_bar_novel: Option<f64>,
    mean_ratio: Option<f64>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let clf = read_classifier(&args.checkpoint)?;
    let stats = compute_stats(&clf);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    report::write_stats_csv(&args.out.join("stats.csv"), &clf, &stats)?;
    let summary = AnalyzeSummary {
        dim: clf.dim(),
        base_classes: clf.base_class_count(),
        novel_classes: clf.novel_class_count(),
        mu_bar_base: stats.mu_bar_base,
        mu_bar_novel: stats.mu_bar_novel,
        sigma_bar_base: stats.sigma_bar_base,
        sigma_bar_novel: stats.sigma_bar_novel,
        mean_ratio: stats.mean_ratio(),
    };
    write_json(&args.out.join("summary.json"), &summary)
}
