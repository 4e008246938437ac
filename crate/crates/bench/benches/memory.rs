use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use eosguard_core::SymExpr;
use eosguard_core::SymbolicMemory;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const WIDTHS: [u64; 4] = [1, 2, 4, 8];

fn ops(n: usize, seed: u64) -> Vec<(bool, u64, u64, u64)> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = WIDTHS[rng.gen_range(0..WIDTHS.len())];
            (
                rng.gen_bool(0.5),
                rng.gen_range(0..4096 - len),
                len,
                rng.gen(),
            )
        })
        .collect()
}

fn run(ops: &[(bool, u64, u64, u64)]) -> SymbolicMemory {
    let mut m = SymbolicMemory::with_pages(1);
    for &(store, addr, len, v) in ops {
        if store {
            let mask = if len == 8 {
                u64::MAX
            } else {
                (1u64 << (len * 8)) - 1
            };
            m.store(
                addr,
                len,
                SymExpr::constant((v & mask) as u128, len as u32 * 8),
            )
            .unwrap();
        } else {
            std::hint::black_box(m.load(addr, len).unwrap());
        }
    }
    m
}

fn bench(c: &mut Criterion) {
    let concrete = ops(10_000, 7);
    c.bench_function("memory/10k_mixed_concrete", |b| b.iter(|| run(&concrete)));

    let mut sym = SymbolicMemory::with_pages(1);
    for i in 0..64u64 {
        sym.store(i * 8, 8, SymExpr::var_untainted(&format!("v{i}"), 64))
            .unwrap();
    }
    c.bench_function("memory/unaligned_symbolic_load", |b| {
        b.iter_batched(
            || sym.clone(),
            |m| {
                for a in (3..500u64).step_by(7) {
                    std::hint::black_box(m.load(a, 8).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
