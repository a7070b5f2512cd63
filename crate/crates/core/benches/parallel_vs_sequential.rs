use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ris_scsi::geometry::{build_stats, sample_ue_positions, SystemGeometry};
use ris_scsi::par::Execution;
use ris_scsi::rate::{ergodic_sum_rate_mc, BeamformingSolution};
use ris_scsi::statcov::covariance_monte_carlo;

fn desk() -> SystemGeometry {
    SystemGeometry { bs_dims: [4, 2], ris_dims: [4, 2], num_users: 2, ..SystemGeometry::default() }
}

fn bench_monte_carlo(c: &mut Criterion) {
    let g = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let positions = sample_ue_positions(&g, &mut rng);
    let stats = build_stats(&g, &positions).unwrap();
    let sol = BeamformingSolution::uniform(g.num_bs_antennas(), g.num_users, g.num_ris_elements());

    let mut group = c.benchmark_group("covariance_mc");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| covariance_monte_carlo(&stats, 0, &sol.xi, 32_768, &mut ChaCha8Rng::seed_from_u64(1), exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("ergodic_rate_mc");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| ergodic_sum_rate_mc(&stats, &sol, g.tx_power_watts(), g.noise_watts(), 32_768, &mut ChaCha8Rng::seed_from_u64(1), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_monte_carlo);
criterion_main!(benches);
