use divgrad_core::datasets::*;
use divgrad_core::evaluation::accuracy;
use divgrad_core::regularizers::PenaltyKind;
use divgrad_core::rng::RngStream;
use divgrad_core::trainer::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let batch: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(256);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.003);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1250);
    let lambdas: Vec<f64> = args.get(4).map(|s| s.split(',').map(|v| v.parse().unwrap()).collect()).unwrap_or(vec![0.5]);
    let seed = 1u64;
    let ks = [1usize, 3, 5, 7];
    let sources: Vec<BlockSource> = ks.iter().enumerate()
        .map(|(i, &k)| synthetic_block_source(k, 0.02, seed, i).unwrap()).collect();
    let sources: [BlockSource; 4] = sources.try_into().unwrap();
    let gen = |split: SplitKind, n: usize| {
        let mut rng = RngStream::new(seed, split.stream_id());
        build_collages(&sources, split, n, BlockLayout::Ordered, &mut rng).unwrap()
    };
    let train = Dataset::Collage(gen(SplitKind::TrainAllPredictive, 12_800));
    let tests: Vec<_> = (0..4).map(|b| {
        let d = gen(SplitKind::TestSingle(b), 2_560);
        (downsample_images(&d.images, 4).unwrap(), d.labels)
    }).collect();
    let pct = |v: f64| (v * 1000.0).round() / 10.0;

    let base = TrainConfig { learning_rate: lr, batch_size: batch, iterations: iters, seed, ..TrainConfig::default() };

    // Upper bounds: one model per informative block.
    let t0 = std::time::Instant::now();
    let mut ubs = vec![];
    for b in 0..4 {
        let ub_train = Dataset::Collage(gen(SplitKind::UpperBoundTrain(b), 12_800));
        let m = train_single(&base, &ub_train).unwrap();
        ubs.push(accuracy(&m, &tests[b].0, &tests[b].1).unwrap());
    }
    println!("UB per block: {:?}  ({:?})", ubs.iter().map(|&v| pct(v)).collect::<Vec<_>>(), t0.elapsed());

    // Baseline collection.
    let t0 = std::time::Instant::now();
    let cfg = TrainConfig { n_models: 16, ..base.clone() };
    let col = train_collection(&cfg, &train).unwrap();
    let accs: Vec<Vec<f64>> = tests.iter()
        .map(|(x, y)| col.models.iter().map(|m| accuracy(m, x, y).unwrap()).collect()).collect();
    let min_k1 = accs[0].iter().cloned().fold(1.0f64, f64::min);
    let maxes: Vec<f64> = accs.iter().map(|a| a.iter().cloned().fold(0.0f64, f64::max)).collect();
    println!("baseline: min-k1 {} best-per-test {:?} ({:?})", pct(min_k1), maxes.iter().map(|&v| pct(v)).collect::<Vec<_>>(), t0.elapsed());

    // Regularized runs.
    for &lambda in &lambdas {
        let t0 = std::time::Instant::now();
        let cfg = TrainConfig { n_models: 16, lambda, penalty: PenaltyKind::DiversityDot, ..base.clone() };
        let col = train_collection(&cfg, &train).unwrap();
        let accs: Vec<Vec<f64>> = tests.iter()
            .map(|(x, y)| col.models.iter().map(|m| accuracy(m, x, y).unwrap()).collect()).collect();
        let maxes: Vec<f64> = accs.iter().map(|a| a.iter().cloned().fold(0.0f64, f64::max)).collect();
        let margins: Vec<f64> = maxes.iter().zip(&ubs).map(|(m, u)| pct(m - (u - 0.15))).collect();
        let pen0 = col.log.penalty_values[0];
        let penl = *col.log.penalty_values.last().unwrap();
        println!("lambda={lambda}: best-per-test {:?} margin-vs-UB15 {:?} pen {:.4}->{:.4} ({:?})",
            maxes.iter().map(|&v| pct(v)).collect::<Vec<_>>(), margins, pen0, penl, t0.elapsed());
    }
}
