fn main() {
    let t = std::time::Instant::now();
    let report = divgrad_core::gradcheck::run(42, 100).unwrap();
    println!("{}", report.render());
    println!("elapsed: {:?}", t.elapsed());
}
