use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use probseg_core::contour::extract_contours;
use probseg_core::model::{Model, ModelConfig, ModelParams};
use probseg_core::reconstruct::{reconstruct, Provenance};
use probseg_core::roi::{auto_roi, preprocess, segment_brain, QcPolicy};
use probseg_core::sequence::extract_sequences;
use probseg_core::volume::{generate_phantom, Gender, Hpv, NStage, PhantomSpec, TStage};
use probseg_core::{PatientMeta, Plane, ProbSequence, Slice2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const META: PatientMeta = PatientMeta {
    gender: Gender::Female,
    t_stage: TStage::T3,
    n_stage: NStage::N2b,
    hpv: Hpv::Positive,
};

fn random_sequences(n: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<ProbSequence> {
    (1..=n - 2)
        .map(|s| {
            let maps = [0; 3].map(|_| {
                Slice2D::new(side, side, (0..side * side).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()
            });
            ProbSequence::new(s, maps).unwrap()
        })
        .collect()
}

fn bench_reconstruct(c: &mut Criterion) {
    let mut group = c.benchmark_group("reconstruct");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (n, side) in [(32, 32), (144, 64)] {
        let seqs = random_sequences(n, side, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{side}")), &seqs, |b, seqs| {
            b.iter(|| reconstruct(black_box(seqs), n, Plane::Axial, Provenance::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let spec = PhantomSpec::reference(3, [64; 3], [4.0; 3]);
    let patient = generate_phantom("bench", &spec, META).unwrap();
    let roi = auto_roi(&patient, &QcPolicy::with_bbox(32)).unwrap();
    let cropped = preprocess(&patient, &roi).unwrap();
    let inputs = [
        (32, extract_sequences(&cropped, Plane::Axial).unwrap().swap_remove(16)),
        (64, extract_sequences(&patient, Plane::Axial).unwrap().swap_remove(32)),
    ];
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for (size, seq) in &inputs {
        let cfg = ModelConfig {
            image_size: *size,
            ..ModelConfig::desk()
        };
        let model = Model::new(ModelParams::init(&cfg).unwrap()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), seq, |b, seq| {
            b.iter(|| model.forward(black_box(seq)).unwrap())
        });
    }
    group.finish();
}

fn bench_segment_brain(c: &mut Criterion) {
    let spec = PhantomSpec::reference(5, [64; 3], [4.0; 3]);
    let patient = generate_phantom("bench", &spec, META).unwrap();
    c.bench_function("segment_brain/64", |b| b.iter(|| segment_brain(black_box(&patient.pet), 3.0).unwrap()));
}

fn bench_contours(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seqs = random_sequences(10, 144, &mut rng);
    let vol = reconstruct(&seqs, 10, Plane::Axial, Provenance::default()).unwrap();
    c.bench_function("contours/144", |b| b.iter(|| extract_contours(black_box(&vol), 5, 0.5).unwrap()));
}

criterion_group!(benches, bench_reconstruct, bench_forward, bench_segment_brain, bench_contours);
criterion_main!(benches);
