use divgrad_core::datasets::*;
use divgrad_core::evaluation::accuracy;
use divgrad_core::rng::RngStream;
use divgrad_core::trainer::*;

fn main() {
    let seed = 1u64;
    let sources: Vec<BlockSource> = [1usize, 3, 5, 7]
        .iter()
        .enumerate()
        .map(|(i, &k)| synthetic_block_source(k, 0.02, seed, i).unwrap())
        .collect();
    let sources: [BlockSource; 4] = sources.try_into().unwrap();
    let gen = |split: SplitKind, n: usize| {
        let mut rng = RngStream::new(seed, split.stream_id());
        build_collages(&sources, split, n, BlockLayout::Ordered, &mut rng).unwrap()
    };
    let train = Dataset::Collage(gen(SplitKind::TrainAllPredictive, 12_800));
    let tests: Vec<_> = (0..4)
        .map(|b| {
            let d = gen(SplitKind::TestSingle(b), 2_560);
            (downsample_images(&d.images, 4).unwrap(), d.labels)
        })
        .collect();

    for lr in [0.001f64, 0.003] {
        for iters in [2000usize, 4000] {
            let cfg = TrainConfig {
                n_models: 4,
                learning_rate: lr,
                iterations: iters,
                seed,
                ..TrainConfig::default()
            };
            let t = std::time::Instant::now();
            let col = train_collection(&cfg, &train).unwrap();
            let mut accs = vec![];
            for (x, y) in &tests {
                let per: Vec<f64> = col.models.iter().map(|m| accuracy(m, x, y).unwrap()).collect();
                accs.push(per.iter().cloned().fold(0.0f64, f64::max));
            }
            let train_acc: Vec<f64> = (0..4).map(|m| col.log.accuracies.get(iters - 1, m)).collect();
            println!(
                "lr={lr} iters={iters}: {:?} best-per-test {:?} train acc {:?}",
                t.elapsed(),
                accs.iter().map(|a| (a * 1000.0).round() / 10.0).collect::<Vec<_>>(),
                train_acc.iter().map(|a| (a * 1000.0).round() / 10.0).collect::<Vec<_>>(),
            );
        }
    }
}
