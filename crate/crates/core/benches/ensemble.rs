use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nelsonlab::nelson::{advance_ensemble, sample_density_with, step_forward_sde_with, DriftTable};
use nelsonlab::phase_space::{characteristic_function_with, default_offset_grid};
use nelsonlab::schrodinger::{solve_eigenstates, VelocityFields};
use nelsonlab::{make_grid, Execution, Potential, RealField, SimUnits};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn ensemble(c: &mut Criterion) {
    let g = make_grid(-10.0, 10.0, 512).unwrap();
    let rho = RealField::from_fn(g, |x| (-x * x).exp() / std::f64::consts::PI.sqrt());
    let table = DriftTable::from_fields(&VelocityFields::from_fns(g, |_| 0.0, |x| -x)).unwrap();
    let units = SimUnits::default();
    let ens = sample_density_with(&rho, 20_000, 7, Execution::Sequential).unwrap();

    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("sample", name), &exec, |b, &exec| {
            b.iter(|| sample_density_with(&rho, black_box(20_000), 7, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("advance", name), &exec, |b, &exec| {
            b.iter(|| advance_ensemble(&ens, &table, &units, 0.01, black_box(100), exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("trajectories", name), &exec, |b, &exec| {
            b.iter(|| step_forward_sde_with(&ens, &table, &units, 0.01, black_box(50), exec).unwrap())
        });
    }
    group.finish();
}

fn wigner(c: &mut Criterion) {
    let g = make_grid(-10.0, 10.0, 256).unwrap();
    let states = solve_eigenstates(&Potential::Harmonic { omega: 1.0 }, &g, &SimUnits::default(), 2).unwrap();
    let psi = &states[1].psi;
    let offsets = default_offset_grid(&g);

    let mut group = c.benchmark_group("characteristic");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| characteristic_function_with(psi, &offsets, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ensemble, wigner);
criterion_main!(benches);
