use divgrad_core::datasets::*;
use divgrad_core::regularizers::PenaltyKind;
use divgrad_core::rng::RngStream;
use divgrad_core::trainer::*;

fn main() {
    let seed = 1u64;
    let t = std::time::Instant::now();
    let sources: Vec<BlockSource> = [1usize, 3, 5, 7]
        .iter()
        .enumerate()
        .map(|(i, &k)| synthetic_block_source(k, 0.02, seed, i).unwrap())
        .collect();
    let sources: [BlockSource; 4] = sources.try_into().unwrap();
    let split = SplitKind::TrainAllPredictive;
    let mut rng = RngStream::new(seed, split.stream_id());
    let train = build_collages(&sources, split, 12_800, BlockLayout::Ordered, &mut rng).unwrap();
    println!("gen 12800 collages: {:?}", t.elapsed());

    let data = Dataset::Collage(train);
    for (lambda, iters) in [(0.0, 200usize), (0.5, 100)] {
        let cfg = TrainConfig {
            n_models: 16,
            lambda,
            penalty: PenaltyKind::DiversityDot,
            iterations: iters,
            seed,
            ..TrainConfig::default()
        };
        let t = std::time::Instant::now();
        let col = train_collection(&cfg, &data).unwrap();
        let dt = t.elapsed();
        let last = col.log.losses.row(iters - 1).to_vec();
        println!(
            "lambda={lambda} {iters} iters: {:?} ({:.1} ms/iter), last losses {:?}",
            dt,
            dt.as_secs_f64() * 1000.0 / iters as f64,
            &last[..3]
        );
    }
}
