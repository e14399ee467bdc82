use divgrad_core::datasets::*;
use divgrad_core::evaluation::accuracy;
use divgrad_core::rng::RngStream;
use divgrad_core::trainer::*;

fn main() {
    let seed = 1u64;
    let ks = [1usize, 3, 5, 7];
    let sources: Vec<BlockSource> = ks.iter().enumerate()
        .map(|(i, &k)| synthetic_block_source(k, 0.02, seed, i).unwrap()).collect();
    let sources: [BlockSource; 4] = sources.try_into().unwrap();
    let gen = |split: SplitKind, n: usize| {
        let mut rng = RngStream::new(seed, split.stream_id());
        build_collages(&sources, split, n, BlockLayout::Ordered, &mut rng).unwrap()
    };
    for (b, lr, iters) in [
        (2usize, 0.003f64, 2000usize), (2, 0.003, 4000), (2, 0.001, 4000), (2, 0.001, 8000),
        (3, 0.003, 4000), (3, 0.001, 8000),
        (1, 0.003, 2000), (0, 0.003, 2000),
    ] {
        let test = gen(SplitKind::TestSingle(b), 2_560);
        let x = downsample_images(&test.images, 4).unwrap();
        let ub_train = Dataset::Collage(gen(SplitKind::UpperBoundTrain(b), 12_800));
        let cfg = TrainConfig { learning_rate: lr, iterations: iters, seed, ..TrainConfig::default() };
        let t = std::time::Instant::now();
        let m = train_single(&cfg, &ub_train).unwrap();
        let acc = accuracy(&m, &x, &test.labels).unwrap();
        println!("UB(block {b} = k{}) lr={lr} iters={iters}: acc {:.1}% ({:?})", ks[b], acc * 100.0, t.elapsed());
    }
}
