use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use posefield::corpus::generate_synthetic_corpus;
use posefield::{PoseCorpus, RobotModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_queries(robot: &RobotModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .flat_map(|_| robot.joints().iter().map(|j| rng.random_range(j.limit_lo..=j.limit_hi)).collect::<Vec<_>>())
        .collect()
}

fn nearest(c: &mut Criterion) {
    let robot = RobotModel::bundled_humanoid();
    let corpus = PoseCorpus::build(&robot, generate_synthetic_corpus(&robot, 4, 20_000, 7).unwrap()).unwrap();
    let queries = uniform_queries(&robot, 1_000, 1);
    let near: Vec<f64> = corpus.poses()[..1_000 * robot.n_joints()].iter().map(|x| x + 0.01).collect();

    let mut group = c.benchmark_group("nearest");
    group.throughput(Throughput::Elements(1_000));
    group.bench_function("uniform_queries_20k", |b| b.iter(|| corpus.nearest_batch(&queries).unwrap()));
    group.bench_function("near_manifold_queries_20k", |b| b.iter(|| corpus.nearest_batch(&near).unwrap()));
    group.finish();

    c.bench_function("build_index_20k", |b| {
        b.iter_batched(|| corpus.poses().to_vec(), |p| PoseCorpus::build(&robot, p).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group!(benches, nearest);
criterion_main!(benches);
