use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use delta_lab::expander::{exponent_fit, ExperimentSpec};
use delta_lab::frostman::GenSpec;
use delta_lab::harness::{generate_instance, measure_hypotheses, InstanceStyle};
use delta_lab::incidence::full_shading_with;
use delta_lab::{Exec, Scale};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn shading(c: &mut Criterion) {
    let inst = generate_instance(Scale::new(10).unwrap(), 0.5, InstanceStyle::Trainlike, 1).unwrap();
    let mut g = c.benchmark_group("full_shading");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, inst.tubes.len()), &exec, |b, &exec| {
            b.iter(|| full_shading_with(black_box(&inst.tubes), black_box(&inst.squares), exec).unwrap())
        });
    }
    g.finish();
}

fn hypotheses(c: &mut Criterion) {
    let inst = generate_instance(Scale::new(10).unwrap(), 0.5, InstanceStyle::Random, 3).unwrap();
    let mut g = c.benchmark_group("measure_hypotheses");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new(name, inst.tubes.len()), &exec, |b, &exec| {
            b.iter(|| measure_hypotheses(&inst.tubes, &inst.squares, &inst.shading, 0.5, exec).unwrap())
        });
    }
    g.finish();
}

fn expander_sweep(c: &mut Criterion) {
    let cantor = GenSpec::Cantor { m: None, keep: 2, of: 4, seed: None, pattern: None };
    let spec = ExperimentSpec {
        a: cantor.clone(),
        b: cantor,
        p: Default::default(),
        m_range: [6, 12],
        epsilon: 0.1,
        seed: 0,
    };
    let mut g = c.benchmark_group("exponent_fit");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| exponent_fit(black_box(&spec), exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, shading, hypotheses, expander_sweep);
criterion_main!(benches);
