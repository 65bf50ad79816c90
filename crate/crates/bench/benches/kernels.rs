use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use crn_bench::{bump, hamiltonian, isomerization_lattice};
use crn_core::catalog;
use crn_core::cme::build_generator;
use crn_core::hje_continuous::HamiltonianContext;
use crn_core::hje_discrete::{resolvent_solve, ResolventConfig};
use crn_core::stochastic::{simulate_path, SeedRecord};

fn resolvent(c: &mut Criterion) {
    let mut g = c.benchmark_group("resolvent_solve");
    g.sample_size(10);
    for h in [0.2, 0.1, 0.05] {
        let (net, lat) = isomerization_lattice(h, 3.0);
        let ctx = hamiltonian(&net, &lat);
        let f = bump(&lat);
        let cfg = ResolventConfig::new(h);
        g.bench_with_input(BenchmarkId::from_parameter(lat.len()), &f, |b, f| {
            b.iter(|| resolvent_solve(&ctx, &cfg, black_box(f)).unwrap())
        });
    }
    g.finish();
}

fn cme_matvec(c: &mut Criterion) {
    let mut g = c.benchmark_group("cme_matvec");
    for h in [0.1, 0.025] {
        let (net, lat) = isomerization_lattice(h, 3.0);
        let gen = build_generator(&net, &lat).unwrap();
        let p = vec![1.0 / lat.len() as f64; lat.len()];
        let mut out = vec![0.0; lat.len()];
        g.bench_function(BenchmarkId::from_parameter(lat.len()), |b| {
            b.iter(|| gen.q_star.matvec_into(black_box(&p), &mut out))
        });
    }
    g.finish();
}

fn ssa(c: &mut Criterion) {
    let net = catalog::isomerization(1.0, 1.0);
    let mut stream = 0;
    c.bench_function("ssa_path_h0.01_T1", |b| {
        b.iter(|| {
            stream += 1;
            simulate_path(&net, 0.01, &[1.0, 1.0], 1.0, SeedRecord::new(1, stream)).unwrap()
        })
    });
}

fn lagrangian(c: &mut Criterion) {
    let ctx = HamiltonianContext::new(&catalog::dimerization(1.0, 1.0));
    let s = ctx.grad_p(&[0.3, -0.2, 0.4], &[1.0, 2.0, 0.5]);
    c.bench_function("lagrangian_dimerization", |b| {
        b.iter(|| ctx.lagrangian(black_box(&s), &[1.0, 2.0, 0.5]))
    });
}

criterion_group!(benches, resolvent, cme_matvec, ssa, lagrangian);
criterion_main!(benches);
