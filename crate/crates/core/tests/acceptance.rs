//! Acceptance gate: one line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use crn_core::cme::{build_generator, check_reversibility, duality_residual, integrate_cme_observed, invariant_poisson};
use crn_core::experiments::{
    convergence_study, landscape_limit, ldp_single_time, mean_field_check, ConvergenceConfig, LandscapeConfig, LdpConfig,
    MeanFieldConfig,
};
use crn_core::hje_continuous::{HamiltonianContext, LagrangianStatus};
use crn_core::hje_discrete::{
    barriers, crandall_liggett_evolve, crandall_liggett_evolve_observed, resolvent_solve, DiscreteHamiltonian,
    ResolventConfig,
};
use crn_core::rre::{find_steady_state, integrate_rre, kl_landscape, zero_cost_check};
use crn_core::{catalog, GridFunction, Lattice, ReactionNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let elapsed = start.elapsed();
    o.detail = format!("{} [{:.2}s]", o.detail, elapsed.as_secs_f64());
    if let Some(limit) = limit {
        if elapsed > limit {
            o.pass = false;
            o.detail.push_str(&format!(" exceeds {:.0}s", limit.as_secs_f64()));
        }
    }
    o
}

/// Small lattices for the three test networks.
fn suite() -> Vec<(&'static str, ReactionNetwork, Lattice)> {
    vec![
        ("birth_death", catalog::birth_death(1.0, 1.0), Lattice::from_extent(0.1, &[3.0]).unwrap()),
        ("isomerization", catalog::isomerization(1.0, 1.0), Lattice::from_extent(0.25, &[3.0, 3.0]).unwrap()),
        ("dimerization", catalog::dimerization(1.0, 1.0), Lattice::from_extent(0.5, &[2.0, 2.0, 2.0]).unwrap()),
    ]
}

fn random_grid(lat: &Lattice, rng: &mut ChaCha8Rng, scale: f64) -> GridFunction {
    let values = (0..lat.len()).map(|_| rng.gen_range(-scale..scale)).collect();
    GridFunction::new(lat.clone(), values, 0.0).unwrap()
}

fn random_interior(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.1..3.0)).collect()
}

fn c1_conservation() -> Outcome {
    let mut worst: f64 = 0.0;
    for (net, lat) in [
        (catalog::birth_death(1.0, 1.0), Lattice::from_extent(0.05, &[10.0]).unwrap()),
        (catalog::isomerization(1.0, 1.0), Lattice::from_extent(0.1, &[3.0, 3.0]).unwrap()),
    ] {
        let gen = build_generator(&net, &lat).unwrap();
        let p0 = GridFunction::delta(&lat, &lat.position(lat.len() / 3)).unwrap();
        integrate_cme_observed(&gen, &p0, 10.0, |_, p| {
            worst = worst.max((crn_core::lattice::pairwise_sum(p) - 1.0).abs());
        })
        .unwrap();
    }
    outcome(worst <= 1e-10, format!("max |sum p - 1| = {worst:.2e}"))
}

fn c2_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for (_, net, lat) in suite() {
        let gen = build_generator(&net, &lat).unwrap();
        for _ in 0..100 {
            let w = random_grid(&lat, &mut rng, 1.0);
            let p = random_grid(&lat, &mut rng, 1.0);
            worst = worst.max(duality_residual(&gen, &w, &p));
        }
    }
    outcome(worst <= 1e-12, format!("max duality residual = {worst:.2e}"))
}

/// Criteria 3 and 4 share the solves.
fn c3_c4_resolvent() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut mono, mut nonexp, mut perron): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut solves = 0;
    for (_, net, lat) in suite() {
        let ctx = DiscreteHamiltonian::new(&net, &lat).unwrap();
        let cfg = ResolventConfig::new(0.1);
        for _ in 0..100 {
            let f = random_grid(&lat, &mut rng, 1.0);
            let bump = random_grid(&lat, &mut rng, 1.0).map(f64::abs);
            let g_above = GridFunction::new(
                lat.clone(),
                f.values.iter().zip(&bump.values).map(|(a, b)| a + b).collect(),
                0.0,
            )
            .unwrap();
            let g = random_grid(&lat, &mut rng, 1.0);
            let jf = resolvent_solve(&ctx, &cfg, &f).unwrap();
            let jg_above = resolvent_solve(&ctx, &cfg, &g_above).unwrap();
            let jg = resolvent_solve(&ctx, &cfg, &g).unwrap();
            solves += 3;
            for (a, b) in jf.values.iter().zip(&jg_above.values) {
                mono = mono.max(a - b);
            }
            nonexp = nonexp.max(jf.sup_distance(&jg) - f.sup_distance(&g));
            for (data, sol) in [(&f, &jf), (&g_above, &jg_above), (&g, &jg)] {
                perron = perron.max(data.inf() - sol.inf()).max(sol.sup() - data.sup());
            }
        }
    }
    (
        outcome(
            mono <= 1e-10 && nonexp <= 1e-10,
            format!("monotonicity violation {mono:.2e}, nonexpansiveness violation {nonexp:.2e}"),
        ),
        outcome(perron <= 1e-10, format!("{solves} solves, max bound violation {perron:.2e}")),
    )
}

fn c5_barriers() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sandwich, mut support): (f64, f64) = (0.0, 0.0);
    for (_, net, lat) in suite().into_iter().skip(1) {
        let m = net.mass_vector().unwrap().to_vec();
        let ctx = DiscreteHamiltonian::new(&net, &lat).unwrap();
        let cfg = ResolventConfig::new(0.1);
        for _ in 0..20 {
            let f = random_grid(&lat, &mut rng, 1.0);
            let (lo, hi) = barriers(&f, Some(&m)).unwrap();
            let jf = resolvent_solve(&ctx, &cfg, &f).unwrap();
            for i in 0..lat.len() {
                sandwich = sandwich.max(lo.values[i] - jf.values[i]).max(jf.values[i] - hi.values[i]);
            }
        }
        // data constant beyond a mass level stays constant there
        let mass = |x: &[f64]| x.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
        let level = 0.5 * (0..lat.len()).map(|i| mass(&lat.position(i))).fold(0.0, f64::max);
        let c = 0.37;
        let u0 = GridFunction::from_fn(&lat, c, |x| if mass(x) > level { c } else { rng.gen_range(-1.0..1.0) });
        let ev = crandall_liggett_evolve(&ctx, &u0, 50.0 * 0.1, &cfg).unwrap();
        for i in 0..lat.len() {
            if mass(&lat.position(i)) > level {
                support = support.max((ev.u.values[i] - c).abs());
            }
        }
    }
    outcome(
        sandwich <= 1e-10 && support <= 1e-10,
        format!("sandwich violation {sandwich:.2e}, drift beyond mass level {support:.2e}"),
    )
}

fn c6_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for (_, net, lat) in suite() {
        let ctx = DiscreteHamiltonian::new(&net, &lat).unwrap();
        for dt in [0.05, 0.2] {
            let u0 = random_grid(&lat, &mut rng, 1.0);
            let (lo, hi) = (u0.inf(), u0.sup());
            crandall_liggett_evolve_observed(&ctx, &u0, 1.0, &ResolventConfig::new(dt), |_, u| {
                worst = worst.max(lo - u.inf()).max(u.sup() - hi);
                steps += 1;
            })
            .unwrap();
        }
    }
    outcome(worst <= 1e-10, format!("{steps} steps, max bound violation {worst:.2e}"))
}

fn c7_detailed_balance() -> Outcome {
    let mut worst: f64 = 0.0;
    for (net, lat, anchor) in [
        (catalog::isomerization(1.0, 2.0), Lattice::from_extent(0.1, &[4.0, 4.0]).unwrap(), vec![2.0, 1.0]),
        (catalog::birth_death(2.0, 1.0), Lattice::from_extent(0.05, &[8.0]).unwrap(), vec![1.0]),
    ] {
        let xs = find_steady_state(&net, &anchor).unwrap();
        let pi = invariant_poisson(&net, &lat, &xs).unwrap();
        worst = worst.max(check_reversibility(&net, &pi));
    }
    outcome(worst <= 1e-12, format!("max relative flux imbalance {worst:.2e}"))
}

fn db_networks() -> Vec<(ReactionNetwork, Vec<f64>)> {
    vec![
        (catalog::birth_death(2.0, 1.0), vec![1.0]),
        (catalog::isomerization(1.0, 2.0), vec![1.0, 1.0]),
        (catalog::dimerization(1.5, 0.5), vec![1.0, 2.0, 0.5]),
    ]
}

fn c8_stationary_hje() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for (net, anchor) in db_networks() {
        let ctx = HamiltonianContext::new(&net);
        let xs = find_steady_state(&net, &anchor).unwrap();
        for _ in 0..50 {
            let x = random_interior(&mut rng, net.n_species());
            let (_, grad) = kl_landscape(&x, &xs);
            worst = worst.max(ctx.hamiltonian(&grad, &x).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max |H(grad KL, x)| = {worst:.2e}"))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1.0)
}

fn c9_hamiltonian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut h0, mut gp_err, mut gx_err, mut degen) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut min_eig = f64::INFINITY;
    let step = 1e-5;
    for (net, _) in db_networks() {
        let ctx = HamiltonianContext::new(&net);
        let n = net.n_species();
        for _ in 0..50 {
            let x = random_interior(&mut rng, n);
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            h0 = h0.max(ctx.hamiltonian(&vec![0.0; n], &x).abs());
            let fd = |wrt_p: bool| -> Vec<f64> {
                (0..n)
                    .map(|l| {
                        let (mut a, mut b) = if wrt_p { (p.clone(), p.clone()) } else { (x.clone(), x.clone()) };
                        a[l] += step;
                        b[l] -= step;
                        let (ha, hb) = if wrt_p {
                            (ctx.hamiltonian(&a, &x), ctx.hamiltonian(&b, &x))
                        } else {
                            (ctx.hamiltonian(&p, &a), ctx.hamiltonian(&p, &b))
                        };
                        (ha - hb) / (2.0 * step)
                    })
                    .collect()
            };
            gp_err = gp_err.max(rel_err(&fd(true), &ctx.grad_p(&p, &x)));
            gx_err = gx_err.max(rel_err(&fd(false), &ctx.grad_x(&p, &x)));
            degen = degen.max(ctx.degeneracy_check(&p, &x));
            let eig = ctx.restricted_hessian(&p, &x).symmetric_eigenvalues().min();
            min_eig = min_eig.min(eig);
        }
    }
    let pass = h0 == 0.0 && gp_err <= 1e-6 && gx_err <= 1e-6 && degen <= 1e-12 && min_eig > 0.0;
    outcome(
        pass,
        format!(
            "|H(0,x)| {h0:.1e}, grad_p err {gp_err:.1e}, grad_x err {gx_err:.1e}, degeneracy {degen:.1e}, min restricted eigenvalue {min_eig:.2e}"
        ),
    )
}

fn c10_legendre() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut min_l, mut at_rre) = (f64::INFINITY, 0.0f64);
    let mut off_ok = true;
    for (net, _) in db_networks() {
        let ctx = HamiltonianContext::new(&net);
        let n = net.n_species();
        for _ in 0..50 {
            let x = random_interior(&mut rng, n);
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // s = grad_p H(p, x) lies in G and is attained
            let s = ctx.grad_p(&p, &x);
            let l = ctx.lagrangian(&s, &x);
            min_l = min_l.min(l.value);
            at_rre = at_rre.max(ctx.lagrangian(&ctx.grad_p(&vec![0.0; n], &x), &x).value.abs());
        }
    }
    let iso = HamiltonianContext::new(&catalog::isomerization(1.0, 1.0));
    let off = iso.lagrangian(&[1.0, 1.0], &[1.0, 1.0]);
    off_ok &= off.value == f64::INFINITY && off.status == LagrangianStatus::OffSubspace;
    let bd = HamiltonianContext::new(&catalog::birth_death(1.0, 1.0));
    let closed = (bd.lagrangian(&[0.0], &[4.0]).value - 1.0).abs();
    outcome(
        min_l >= -1e-10 && at_rre <= 1e-12 && closed <= 1e-8 && off_ok,
        format!("min L {min_l:.2e}, max |L(rre velocity)| {at_rre:.1e}, |L(0,4) - 1| {closed:.1e}, off-G infinite {off_ok}"),
    )
}

fn c11_zero_cost() -> Outcome {
    let net = catalog::isomerization(1.0, 1.0);
    let ctx = HamiltonianContext::new(&net);
    let path = integrate_rre(&net, &[1.9, 0.1], 3.0, 0.01).unwrap();
    let worst = zero_cost_check(&ctx, &path).unwrap();
    outcome(worst <= 1e-8, format!("max L along relaxation {worst:.2e}"))
}

fn report_outcome(rep: &crn_core::experiments::ExperimentReport, keys: &[&str]) -> Outcome {
    let shown: Vec<String> = keys
        .iter()
        .filter_map(|k| rep.metrics.get(*k).map(|v| format!("{k}={v:.4}")))
        .collect();
    let failed: Vec<&String> = rep.checks.iter().filter(|(_, v)| !**v).map(|(k, _)| k).collect();
    let mut detail = shown.join(", ");
    if !failed.is_empty() {
        detail.push_str(&format!("; failed checks {failed:?}"));
    }
    outcome(rep.pass, detail)
}

fn c12_convergence() -> Outcome {
    let rep = convergence_study(&catalog::birth_death(1.0, 1.0), &ConvergenceConfig::default()).unwrap();
    report_outcome(&rep, &["order", "ratio_0", "ratio_1", "max_error"])
}

fn c13_ldp() -> Outcome {
    let rep = ldp_single_time(&catalog::birth_death(1.0, 1.0), &LdpConfig::default()).unwrap();
    let mut o = report_outcome(
        &rep,
        &["mc_gap_h0.1", "mc_std_error_h0.1", "lattice_extrapolated", "lax_oleinik", "lo_gap"],
    );
    o.detail.push_str(&format!(", lo tolerance={:.4}", rep.tolerances["lo_gap"]));
    o
}

fn c14_mean_field() -> Outcome {
    let rep = mean_field_check(&catalog::isomerization(1.0, 1.0), &MeanFieldConfig::default()).unwrap();
    report_outcome(
        &rep,
        &["exceedance_h0.2", "exceedance_h0.1", "exceedance_h0.05", "mean_deviation_in_tolerances"],
    )
}

fn c15_landscape() -> Outcome {
    let rep = landscape_limit(&catalog::birth_death(1.0, 1.0), &LandscapeConfig::default()).unwrap();
    report_outcome(&rep, &["max_gap_h0.1", "max_gap_h0.05", "max_gap_h0.025"])
}

fn c16_determinism() -> Outcome {
    let run = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mf = mean_field_check(
                &catalog::isomerization(1.0, 1.0),
                &MeanFieldConfig {
                    n_paths: 2000,
                    ..Default::default()
                },
            )
            .unwrap();
            let ldp = ldp_single_time(
                &catalog::birth_death(1.0, 1.0),
                &LdpConfig {
                    n_paths: 2000,
                    ..Default::default()
                },
            )
            .unwrap();
            format!("{}{}", mf.to_json(), ldp.to_json())
        })
    };
    let reference = run(1);
    let same = [2, 4, 7].iter().all(|&t| run(t) == reference);
    outcome(same, format!("reports from 1, 2, 4, 7 threads identical: {same}"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let s = |secs: u64| Some(Duration::from_secs(secs));
    results.push((1, "probability conservation", timed(s(10), c1_conservation)));
    results.push((2, "generator duality", timed(s(1), c2_duality)));
    let start = Instant::now();
    let (c3, mut c4) = c3_c4_resolvent();
    let elapsed = start.elapsed();
    let mut c3 = c3;
    c3.detail = format!("{} [{:.2}s]", c3.detail, elapsed.as_secs_f64());
    if elapsed > Duration::from_secs(30) {
        c3.pass = false;
        c3.detail.push_str(" exceeds 30s");
    }
    results.push((3, "resolvent monotone and nonexpansive", c3));
    c4.detail.push_str(" (shared with 3)");
    results.push((4, "Perron bounds", c4));
    results.push((5, "barrier sandwich and support propagation", timed(None, c5_barriers)));
    results.push((6, "semigroup contraction", timed(None, c6_contraction)));
    results.push((7, "product Poisson detailed balance", timed(None, c7_detailed_balance)));
    results.push((8, "stationary HJE at KL", timed(None, c8_stationary_hje)));
    results.push((9, "Hamiltonian identities", timed(None, c9_hamiltonian)));
    results.push((10, "Legendre consistency", timed(None, c10_legendre)));
    results.push((11, "zero-cost rate-equation path", timed(None, c11_zero_cost)));
    results.push((12, "first-order convergence", timed(s(120), c12_convergence)));
    results.push((13, "single-time LDP triangle", timed(s(300), c13_ldp)));
    results.push((14, "mean-field concentration", timed(None, c14_mean_field)));
    results.push((15, "landscape limit", timed(None, c15_landscape)));
    results.push((16, "determinism across thread counts", timed(None, c16_determinism)));

    let mut failures = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2} {name}: {}", o.detail);
        failures += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
