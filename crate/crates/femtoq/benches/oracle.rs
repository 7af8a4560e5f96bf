//! Exhaustive-search throughput: the rayon-chunked scan (default feature
//! set) against the single-threaded scan, over growing joint action
//! spaces. Build with `--no-default-features` to confirm the sequential
//! fallback matches `exhaustive_optimal_sequential`.

use criterion::{criterion_group, criterion_main, Criterion};
use femtoq::netmodel::{evaluate, place_network, ChannelGains, PlacementBounds, PowerAllocation};
use femtoq::oracle::{exhaustive_optimal, exhaustive_optimal_sequential};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

const LEVELS: [f64; 3] = [0.0, 6.0, 12.0];
const NOISE: f64 = 1e-7;

struct Instance {
    gains: ChannelGains,
    macro_w: Vec<f64>,
    target: f64,
}

/// A random topology with a reachable aggregate target (macro-alone minus
/// two bits), sized `n_femto` x `subcarriers`.
fn instance(n_femto: usize, subcarriers: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let topo = place_network(&PlacementBounds::default(), n_femto, 2.0, &mut rng).unwrap();
    let gains = ChannelGains::from_topology(&topo, subcarriers).unwrap();
    let macro_w = PowerAllocation::equal_split_macro(43.0, subcarriers);
    let silent = PowerAllocation::new(macro_w.clone(), vec![vec![0.0; subcarriers]; n_femto]).unwrap();
    let alone = evaluate(&gains, &silent, NOISE).unwrap().macro_aggregate;
    Instance { gains, macro_w, target: alone - 2.0 }
}

fn bench_oracle(c: &mut Criterion) {
    // 3^6, 3^9, and 3^12 candidate matrices.
    for (n_femto, subcarriers) in [(2usize, 3usize), (3, 3), (4, 3)] {
        let cells = n_femto * subcarriers;
        let inst = instance(n_femto, subcarriers);
        let mut group = c.benchmark_group(format!("oracle_3pow{cells}"));
        group.sample_size(10);

        group.bench_function("default", |b| {
            b.iter(|| {
                black_box(exhaustive_optimal(
                    &inst.gains,
                    &inst.macro_w,
                    &LEVELS,
                    inst.target,
                    // A wide band keeps the argmax working on every candidate.
                    4.0,
                    15.0,
                    NOISE,
                    1 << 30,
                ))
            })
        });
        group.bench_function("sequential", |b| {
            b.iter(|| {
                black_box(exhaustive_optimal_sequential(
                    &inst.gains,
                    &inst.macro_w,
                    &LEVELS,
                    inst.target,
                    4.0,
                    15.0,
                    NOISE,
                    1 << 30,
                ))
            })
        });
        group.finish();
    }
}

criterion_group!(benches, bench_oracle);
criterion_main!(benches);
