use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fsn_bench::fixture;
use fsn_core::model::{batch_loss_and_gradient, extend_classifier};
use fsn_core::pipeline::{draw_episode, run_episode, Ablation, EpisodeSeeds};
use fsn_core::{finetune, LogitMode};

fn benches(c: &mut Criterion) {
    let (cfg, prepared) = fixture();
    let data = prepared.data();
    let seeds = EpisodeSeeds::derive(cfg.seeds.episode, 0);
    let episode = draw_episode(&data, &cfg, seeds).unwrap();
    let clf = extend_classifier(&prepared.pretrained, &episode.class_map, seeds.init).unwrap();
    let x = prepared.split.base_test.feature_matrix();
    let labels: Vec<usize> = (0..x.nrows()).map(|i| i % clf.class_count()).collect();

    c.bench_function("loss_and_gradient/base_test", |b| {
        b.iter(|| batch_loss_and_gradient(black_box(clf.weights().view()), x.view(), &labels, LogitMode::Linear))
    });

    let ft = cfg.finetune_config(seeds.train);
    c.bench_function("finetune/5way5shot", |b| {
        b.iter(|| finetune(black_box(&clf), &episode, &ft, &cfg.normalization).unwrap())
    });

    let mut group = c.benchmark_group("episode");
    group.sample_size(20);
    for ablation in [Ablation::None, Ablation::McVbLo] {
        let run_cfg = cfg.for_ablation(ablation);
        group.bench_function(ablation.name(), |b| {
            let mut i = 0u64;
            b.iter(|| {
                i += 1;
                run_episode(&data, &run_cfg, i).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
