use divgrad_core::datasets::*;
use divgrad_core::evaluation::accuracy;
use divgrad_core::matrix::Matrix;
use divgrad_core::rng::RngStream;
use divgrad_core::trainer::*;

fn main() {
    let seed = 1u64;
    // A: standalone k5 patch task (raw 1024-dim).
    let src = synthetic_block_source(5, 0.02, seed, 2).unwrap();
    let mut rng = RngStream::new(seed, 900_000);
    let gen_feat = |n: usize, rng: &mut RngStream| {
        let mut x = Matrix::zeros(n, 1024);
        let mut y = vec![0u8; n];
        for i in 0..n {
            let label = (i % 2) as u8;
            y[i] = label;
            let patch = src.draw(label, rng).unwrap();
            x.row_mut(i).copy_from_slice(&patch);
        }
        (x, y)
    };
    let (xtr, ytr) = gen_feat(8192, &mut rng);
    let (xte, yte) = gen_feat(2048, &mut rng);
    let train = Dataset::Feature(FeatureDataset { vectors: xtr, labels: ytr, name: "k5".into(), seed });
    for iters in [2000usize, 6000] {
        let cfg = TrainConfig { learning_rate: 0.003, iterations: iters, seed, ..TrainConfig::default() };
        let t = std::time::Instant::now();
        let m = train_single(&cfg, &train).unwrap();
        let acc = accuracy(&m, &xte, &yte).unwrap();
        println!("A standalone k5 patches iters={iters}: acc {:.1}% ({:?})", acc * 100.0, t.elapsed());
        if acc > 0.9 { break; }
    }

    // B: collage UB(k5) with longer budgets.
    let ks = [1usize, 3, 5, 7];
    let sources: Vec<BlockSource> = ks.iter().enumerate()
        .map(|(i, &k)| synthetic_block_source(k, 0.02, seed, i).unwrap()).collect();
    let sources: [BlockSource; 4] = sources.try_into().unwrap();
    let gen = |split: SplitKind, n: usize| {
        let mut rng = RngStream::new(seed, split.stream_id());
        build_collages(&sources, split, n, BlockLayout::Ordered, &mut rng).unwrap()
    };
    let test5 = gen(SplitKind::TestSingle(2), 2_560);
    let x5 = downsample_images(&test5.images, 4).unwrap();
    let ub_train = Dataset::Collage(gen(SplitKind::UpperBoundTrain(2), 12_800));
    for iters in [4000usize, 8000, 13000] {
        let cfg = TrainConfig { learning_rate: 0.003, iterations: iters, seed, ..TrainConfig::default() };
        let t = std::time::Instant::now();
        let m = train_single(&cfg, &ub_train).unwrap();
        let acc = accuracy(&m, &x5, &test5.labels).unwrap();
        println!("B collage UB(k5) iters={iters}: acc {:.1}% ({:?})", acc * 100.0, t.elapsed());
        if acc > 0.85 { break; }
    }
}
