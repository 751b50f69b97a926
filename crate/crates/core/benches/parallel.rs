use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use seqcritic::corpus::{generate_synthetic, Dataset, Split, SyntheticConfig};
use seqcritic::metrics::RewardIdf;
use seqcritic::par::Exec;
use seqcritic::rlcore::{advantage_stats, AdvStatsConfig, Estimator};
use seqcritic::trainer::{evaluate_sequences, init_policy, train_rl, train_xent, TrainConfig};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn corpus() -> Dataset {
    generate_synthetic(&SyntheticConfig {
        num_examples: 400,
        ..SyntheticConfig::desk()
    })
    .unwrap()
}

fn config(exec: Exec) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.exec = exec;
    cfg.xent_epochs = 1;
    cfg.rl_max_steps = 2;
    cfg.rl_eval_every = 1000;
    cfg.val_limit = 8;
    cfg
}

fn bench_training(c: &mut Criterion) {
    let data = corpus();
    let init = init_policy(&config(Exec::Sequential), &data).unwrap();
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("xent_epoch", name), &exec, |b, &exec| {
            b.iter(|| train_xent(&config(exec), &data).unwrap())
        });
        for est in [Estimator::MaxPro, Estimator::KRollout(5)] {
            let mut cfg = config(exec);
            cfg.estimator = est;
            g.bench_with_input(
                BenchmarkId::new(format!("rl_2_steps_{}", est.name()), name),
                &cfg,
                |b, cfg| b.iter(|| train_rl(cfg, &data, &init, None).unwrap()),
            );
        }
    }
    g.finish();
}

fn bench_advstats(c: &mut Criterion) {
    let data = corpus();
    let policy = init_policy(&config(Exec::Sequential), &data).unwrap();
    let train = data.split(Split::Train);
    let refs: Vec<_> = train.iter().map(|e| e.references.clone()).collect();
    let ridf = RewardIdf::fit(&refs).unwrap();
    let examples = &train[..16];
    let rewards: Vec<_> = examples
        .iter()
        .map(|e| ridf.reward(&e.references))
        .collect();
    let contexts: Vec<&[f64]> = examples.iter().map(|e| e.context.as_slice()).collect();
    let mut g = c.benchmark_group("advstats");
    g.sample_size(10);
    for (name, exec) in MODES {
        let mut cfg = AdvStatsConfig::new(vec![Estimator::MaxPro], data.max_len, 0);
        cfg.num_rollouts = 10;
        cfg.exec = exec;
        g.bench_with_input(BenchmarkId::new("maxpro", name), &cfg, |b, cfg| {
            b.iter(|| advantage_stats(&policy, &contexts, &rewards, cfg).unwrap())
        });
    }
    g.finish();
}

fn bench_cider(c: &mut Criterion) {
    let data = corpus();
    let examples = data.split(Split::Train);
    // score the first reference of every example against the full reference set
    let candidates: Vec<_> = examples.iter().map(|e| e.references[0].clone()).collect();
    let mut g = c.benchmark_group("cider_split");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_sequences(Split::Train, &examples, &candidates, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_training, bench_advstats, bench_cider);
criterion_main!(benches);
