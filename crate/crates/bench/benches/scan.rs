use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use eosguard_core::scanner::ScanOptions;
use eosguard_core::{parse_module, scan};

fn bench(c: &mut Criterion) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus/wasm");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "wasm"))
        .collect();
    files.sort();
    let opts = ScanOptions {
        is_gambling: true,
        ..ScanOptions::default()
    };
    let mut group = c.benchmark_group("scan");
    group.sample_size(10);
    for f in files {
        let id = f.file_stem().unwrap().to_string_lossy().into_owned();
        let module = parse_module(&std::fs::read(&f).unwrap()).unwrap();
        group.bench_function(&id, |b| b.iter(|| scan(&id, module.clone(), &opts)));
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
