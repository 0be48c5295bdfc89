use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sipsim_core::memory::{CognitiveKind, StoreKind};
use sipsim_core::{MemoryConfig, SocialMemory};

const WORDS: [&str; 8] = [
    "school", "budget", "council", "vote", "angry", "calm", "rumor", "policy",
];

fn store(n: usize) -> SocialMemory {
    let mut mem = SocialMemory::new(MemoryConfig::default());
    for i in 0..n {
        let text = format!("{} {} {}", WORDS[i % 8], WORDS[(i / 8) % 8], WORDS[(i * 5 + 3) % 8]);
        let tags: BTreeSet<String> = [WORDS[(i * 3) % 8].to_string()].into();
        mem.add_cognitive(CognitiveKind::Norm, text, tags, (i % 50) as u64);
    }
    mem
}

fn bench_rank(c: &mut Criterion) {
    let mut group = c.benchmark_group("rank");
    for n in [50usize, 500, 5000] {
        let mem = store(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                mem.rank(black_box("angry council vote"), StoreKind::Cognitive, 5, 60)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_rank);
criterion_main!(benches);
