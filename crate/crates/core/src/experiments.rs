//! Reproducible numerical experiments with JSON-serialisable reports.
//!
//! Every report carries its parameters, the metrics it measured, the
//! tolerances those metrics were judged against, and per-check booleans.
//! `pass` is the conjunction of the checks and nothing else.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cme::{check_reversibility, invariant_poisson, wkb_landscape};
use crate::error::{CrnError, Result};
use crate::hje_continuous::{lax_oleinik, solve_by_characteristics_1d, HamiltonianContext, LoOptions};
use crate::hje_discrete::{crandall_liggett_evolve, DiscreteHamiltonian, ResolventConfig};
use crate::lattice::{GridFunction, Lattice};
use crate::network::ReactionNetwork;
use crate::rre::{find_steady_state, integrate_rre, kl_landscape};
use crate::stochastic::{final_states, varadhan_from_values, Histogram};

/// A table with named columns, written out as CSV by the CLI.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    fn new(columns: &[&str]) -> Self {
        Series {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub parameters: BTreeMap<String, Value>,
    pub metrics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
    pub series: BTreeMap<String, Series>,
    pub pass: bool,
    pub seed: Option<u64>,
}

impl ExperimentReport {
    fn new(name: &str) -> Self {
        ExperimentReport {
            name: name.to_string(),
            ..Default::default()
        }
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn check(&mut self, key: &str, ok: bool) {
        self.checks.insert(key.to_string(), ok);
    }

    fn finish(mut self) -> Self {
        self.pass = self.checks.values().all(|&c| c);
        self
    }

    /// Stable pretty JSON; non-finite numbers become `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Initial data for the Hamilton-Jacobi experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitialData {
    Constant { value: f64 },
    /// `a (1 - r^2)^k` with `r = |x - c| / w`, zero for `r >= 1`; of class
    /// `C^{k-1}`.
    Bump {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
        #[serde(default = "default_power")]
        power: i32,
    },
    /// `-s |x - c|^2`.
    Quadratic { center: Vec<f64>, scale: f64 },
}

impl InitialData {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            InitialData::Constant { value } => *value,
            InitialData::Bump {
                center,
                width,
                amplitude,
                power,
            } => {
                let r2 = dist2(x, center) / (width * width);
                if r2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - r2).powi(*power)
                }
            }
            InitialData::Quadratic { center, scale } => -scale * dist2(x, center),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            InitialData::Constant { .. } => vec![0.0; x.len()],
            InitialData::Bump {
                center,
                width,
                amplitude,
                power,
            } => {
                let w2 = width * width;
                let r2 = dist2(x, center) / w2;
                if r2 >= 1.0 {
                    return vec![0.0; x.len()];
                }
                let c = -2.0 * *power as f64 * amplitude * (1.0 - r2).powi(power - 1) / w2;
                x.iter().zip(center).map(|(a, b)| c * (a - b)).collect()
            }
            InitialData::Quadratic { center, scale } => {
                x.iter().zip(center).map(|(a, b)| -2.0 * scale * (a - b)).collect()
            }
        }
    }

    /// Value outside a truncated lattice. Finite only when the data are
    /// eventually constant.
    pub fn far_field(&self) -> f64 {
        match self {
            InitialData::Constant { value } => *value,
            InitialData::Bump { .. } => 0.0,
            InitialData::Quadratic { .. } => f64::NEG_INFINITY,
        }
    }

    pub fn on_lattice(&self, lattice: &Lattice) -> GridFunction {
        GridFunction::from_fn(lattice, self.far_field(), |x| self.value(x))
    }
}

fn default_power() -> i32 {
    3
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("parameters serialise")
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn lattice_for(net: &ReactionNetwork, h: f64, extent: f64) -> Result<Lattice> {
    Lattice::from_extent(h, &vec![extent; net.n_species()])
}

// ---------------------------------------------------------------------------

fn default_well() -> InitialData {
    InitialData::Bump {
        center: vec![1.0],
        width: 1.0,
        amplitude: -0.1,
        power: 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub u0: InitialData,
    pub t: f64,
    pub h: Vec<f64>,
    /// Largest time step as a multiple of `h`; the step is shortened so that
    /// a whole number of steps ends exactly at `t`.
    pub dt_ratio: f64,
    /// Lattice side length in concentration units.
    pub extent: f64,
    /// Errors are measured on `[0, eval_extent]` in every coordinate.
    pub eval_extent: f64,
    pub order_range: (f64, f64),
    /// Accepted error ratio between consecutive resolutions.
    pub ratio_range: (f64, f64),
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            u0: default_well(),
            t: 0.25,
            h: vec![0.1, 0.05, 0.025],
            dt_ratio: 1.0,
            extent: 5.0,
            eval_extent: 4.0,
            order_range: (0.8, 1.2),
            ratio_range: (1.6, 2.6),
        }
    }
}

/// Sup-norm error of the backward-Euler lattice scheme against a reference,
/// and its least-squares order in `h + dt`.
///
/// For one species the reference is the classical solution built from
/// characteristics. Otherwise the finest
/// lattice serves as reference and is compared on the coarse points.
pub fn convergence_study(net: &ReactionNetwork, cfg: &ConvergenceConfig) -> Result<ExperimentReport> {
    if cfg.h.len() < 2 {
        return Err(CrnError::InvalidArgument("need at least two resolutions".into()));
    }
    let mut rep = ExperimentReport::new("convergence_study");
    rep.parameters.insert("config".into(), to_value(cfg));
    let solve = |h: f64| -> Result<(GridFunction, f64)> {
        let lat = lattice_for(net, h, cfg.extent)?;
        let ctx = DiscreteHamiltonian::new(net, &lat)?;
        let steps = (cfg.t / (cfg.dt_ratio * h) - 1e-9).ceil().max(1.0);
        let dt = cfg.t / steps;
        let ev = crandall_liggett_evolve(&ctx, &cfg.u0.on_lattice(&lat), cfg.t, &ResolventConfig::new(dt))?;
        Ok((ev.u, dt))
    };
    let mut table = Series::new(&["h", "dt", "h_plus_dt", "error"]);
    let mut sizes = Vec::new();
    let mut errors = Vec::new();
    let in_window = |x: &[f64]| x.iter().all(|&v| v <= cfg.eval_extent + 1e-12);
    if net.n_species() == 1 {
        let hc = HamiltonianContext::new(net);
        let reference = solve_by_characteristics_1d(
            &hc,
            &|y| cfg.u0.value(&[y]),
            &|y| cfg.u0.gradient(&[y])[0],
            cfg.t,
            (0.0, cfg.extent + 2.0),
            801,
            400,
        )?;
        for &h in &cfg.h {
            let (u, dt) = solve(h)?;
            let mut err: f64 = 0.0;
            for i in 0..u.lattice.len() {
                let x = u.lattice.position(i);
                if !in_window(&x) {
                    continue;
                }
                if let Some(r) = reference.value(x[0]) {
                    err = err.max((u.values[i] - r).abs());
                }
            }
            table.rows.push(vec![h, dt, h + dt, err]);
            sizes.push(h + dt);
            errors.push(err);
        }
        rep.parameters.insert("reference".into(), json!("characteristics"));
    } else {
        let mut order: Vec<f64> = cfg.h.clone();
        order.sort_by(|a, b| b.total_cmp(a));
        let finest = *order.last().unwrap();
        let (uref, _) = solve(finest)?;
        for &h in &order[..order.len() - 1] {
            let (u, dt) = solve(h)?;
            let mut err: f64 = 0.0;
            for i in 0..u.lattice.len() {
                let x = u.lattice.position(i);
                if in_window(&x) {
                    err = err.max((u.values[i] - uref.at(&x)?).abs());
                }
            }
            table.rows.push(vec![h, dt, h + dt, err]);
            sizes.push(h + dt);
            errors.push(err);
        }
        rep.parameters.insert("reference".into(), json!(format!("lattice h={finest}")));
    }
    let max_err = errors.iter().copied().fold(0.0, f64::max);
    rep.metric("max_error", max_err);
    rep.series.insert("errors".into(), table);
    rep.tolerances.insert("order_min".into(), cfg.order_range.0);
    rep.tolerances.insert("order_max".into(), cfg.order_range.1);
    if max_err <= 1e-12 {
        // exact for constant data; no rate to measure
        rep.metric("order", f64::NAN);
        rep.check("exact", true);
    } else {
        let order = log_log_slope(&sizes, &errors);
        rep.metric("order", order);
        let mut ratios_ok = true;
        for (i, w) in errors.windows(2).enumerate() {
            let ratio = w[0] / w[1];
            rep.metric(format!("ratio_{i}"), ratio);
            ratios_ok &= ratio >= cfg.ratio_range.0 && ratio <= cfg.ratio_range.1;
        }
        rep.tolerances.insert("ratio_min".into(), cfg.ratio_range.0);
        rep.tolerances.insert("ratio_max".into(), cfg.ratio_range.1);
        rep.check("halving_ratios_in_range", ratios_ok);
        rep.check("order_in_range", order >= cfg.order_range.0 && order <= cfg.order_range.1);
    }
    Ok(rep.finish())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdpConfig {
    pub u0: InitialData,
    pub x0: Vec<f64>,
    pub t: f64,
    /// Resolutions, coarse to fine.
    pub h: Vec<f64>,
    /// The Monte Carlo comparison is made at these resolutions.
    pub mc_h: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub extent: f64,
    pub dt: f64,
    /// Fixed allowance on top of three standard errors.
    pub mc_slack: f64,
    /// Fails with a path-count estimate when the standard error exceeds this.
    pub mc_max_std_error: Option<f64>,
    pub lo: LoOptions,
}

impl Default for LdpConfig {
    fn default() -> Self {
        LdpConfig {
            u0: InitialData::Quadratic {
                center: vec![1.0],
                scale: 1.0,
            },
            x0: vec![2.0],
            t: 1.0,
            h: vec![0.2, 0.1, 0.05],
            mc_h: vec![0.1],
            n_paths: 100_000,
            seed: 42,
            extent: 5.0,
            dt: 1e-3,
            mc_slack: 0.05,
            mc_max_std_error: None,
            lo: LoOptions::default(),
        }
    }
}

/// Three-way comparison of `h log E[exp(u0(X_t)/h)]`: Monte Carlo, the
/// lattice semigroup, and the Lax-Oleinik variational value.
///
/// The lattice values are extrapolated to `h = 0` from the two finest
/// resolutions assuming first order. The tolerance against Lax-Oleinik adds
/// the extrapolation correction, the change from halving the path nodes, and
/// the optimiser's own gap.
pub fn ldp_single_time(net: &ReactionNetwork, cfg: &LdpConfig) -> Result<ExperimentReport> {
    if cfg.h.len() < 2 {
        return Err(CrnError::InvalidArgument("need at least two resolutions".into()));
    }
    let mut rep = ExperimentReport::new("ldp_single_time");
    rep.parameters.insert("config".into(), to_value(cfg));
    rep.seed = Some(cfg.seed);
    let u0 = |x: &[f64]| cfg.u0.value(x);

    let mut table = Series::new(&["h", "lattice", "mc", "mc_std_error", "gap"]);
    let mut lattice_values = Vec::new();
    for (k, &h) in cfg.h.iter().enumerate() {
        let lat = lattice_for(net, h, cfg.extent)?;
        let ctx = DiscreteHamiltonian::new(net, &lat)?;
        let ev = crandall_liggett_evolve(&ctx, &cfg.u0.on_lattice(&lat), cfg.t, &ResolventConfig::new(cfg.dt))?;
        let lv = ev.u.at(&cfg.x0)?;
        lattice_values.push(lv);
        let (mut mc, mut se, mut gap) = (f64::NAN, f64::NAN, f64::NAN);
        if cfg.mc_h.iter().any(|&m| (m - h).abs() <= 1e-12 * h) {
            let finals = final_states(net, h, &cfg.x0, cfg.t, cfg.n_paths, cfg.seed.wrapping_add(k as u64))?;
            let values: Vec<f64> = finals
                .iter()
                .map(|c| u0(&c.iter().map(|&v| v as f64 * h).collect::<Vec<_>>()))
                .collect();
            let est = varadhan_from_values(&values, h)?;
            if let Some(tol) = cfg.mc_max_std_error {
                if est.std_error > tol {
                    let factor = (est.std_error / tol).powi(2);
                    return Err(CrnError::McTooNoisy {
                        std_error: est.std_error,
                        tolerance: tol,
                        required_paths: (cfg.n_paths as f64 * factor).ceil() as u64,
                    });
                }
            }
            mc = est.value;
            se = est.std_error;
            gap = (mc - lv).abs();
            rep.metric(format!("mc_gap_h{h}"), gap);
            rep.metric(format!("mc_std_error_h{h}"), se);
            rep.tolerances.insert(format!("mc_gap_h{h}"), 3.0 * se + cfg.mc_slack);
            rep.check(&format!("mc_vs_lattice_h{h}"), gap <= 3.0 * se + cfg.mc_slack);
        }
        table.rows.push(vec![h, lv, mc, se, gap]);
    }
    let n = lattice_values.len();
    let (h1, h2) = (cfg.h[n - 2], cfg.h[n - 1]);
    let (v1, v2) = (lattice_values[n - 2], lattice_values[n - 1]);
    let extrapolated = v2 + (v2 - v1) * h2 / (h1 - h2);
    let richardson = (extrapolated - v2).abs();

    let hc = HamiltonianContext::new(net);
    let lo = lax_oleinik(&hc, &u0, &cfg.x0, cfg.t, &cfg.lo)?;
    let coarse_opts = LoOptions {
        nodes: (cfg.lo.nodes / 2).max(1),
        ..cfg.lo
    };
    let lo_coarse = lax_oleinik(&hc, &u0, &cfg.x0, cfg.t, &coarse_opts)?;
    let node_error = (lo.value - lo_coarse.value).abs();
    let tolerance = richardson + node_error + lo.quality.optimizer_gap + cfg.dt;
    let lo_gap = (extrapolated - lo.value).abs();

    rep.metric("lattice_extrapolated", extrapolated);
    rep.metric("lax_oleinik", lo.value);
    rep.metric("lax_oleinik_coarse", lo_coarse.value);
    rep.metric("optimizer_gap", lo.quality.optimizer_gap);
    rep.metric("richardson_correction", richardson);
    rep.metric("lo_gap", lo_gap);
    rep.metric("argmax_y", lo.argmax_y[0]);
    rep.tolerances.insert("lo_gap".into(), tolerance);
    rep.check("lattice_vs_lax_oleinik", lo_gap <= tolerance);
    rep.check("optimizer_converged", lo.quality.converged);
    rep.series.insert("resolutions".into(), table);
    let mut path = Series::new(&["s", "x"]);
    for (i, node) in lo.path.iter().enumerate() {
        let mut row = vec![cfg.t * i as f64 / (lo.path.len() - 1) as f64];
        row.extend_from_slice(node);
        path.rows.push(row);
    }
    if net.n_species() > 1 {
        path.columns = std::iter::once("s".to_string())
            .chain(net.species().iter().cloned())
            .collect();
    }
    rep.series.insert("optimal_path".into(), path);
    Ok(rep.finish())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFieldConfig {
    pub x0: Vec<f64>,
    pub t: f64,
    /// Resolutions, coarse to fine.
    pub h: Vec<f64>,
    pub epsilon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            x0: vec![2.0, 0.0],
            t: 1.0,
            h: vec![0.2, 0.1, 0.05],
            epsilon: 0.25,
            n_paths: 10_000,
            seed: 7,
        }
    }
}

/// Concentration of the jump process around the rate equation: exceedance
/// frequency of `|X^h(t) - x(t)| >= eps` per `h`, and the ensemble mean at the
/// finest `h`.
pub fn mean_field_check(net: &ReactionNetwork, cfg: &MeanFieldConfig) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("mean_field_check");
    rep.parameters.insert("config".into(), to_value(cfg));
    rep.seed = Some(cfg.seed);
    let rre_dt = (cfg.t / 1000.0).max(1e-6);
    let x_rre = integrate_rre(net, &cfg.x0, cfg.t, rre_dt)?.pop().expect("nonempty path").x;
    let mut table = Series::new(&["h", "exceedance"]);
    for (i, s) in net.species().iter().enumerate() {
        table.columns.push(format!("mean_{s}"));
        table.columns.push(format!("std_error_{s}"));
        rep.metric(format!("rre_{s}"), x_rre[i]);
    }
    let mut exceedances = Vec::new();
    let mut last = None;
    for (k, &h) in cfg.h.iter().enumerate() {
        let finals = final_states(net, h, &cfg.x0, cfg.t, cfg.n_paths, cfg.seed.wrapping_add(k as u64))?;
        let hist = Histogram::from_counts(h, finals.iter().map(|c| c.as_slice()))?;
        let exceed = hist.probability(|x| dist2(x, &x_rre).sqrt() >= cfg.epsilon);
        let mean = hist.mean();
        let se = hist.mean_std_error();
        let mut row = vec![h, exceed];
        for i in 0..mean.len() {
            row.push(mean[i]);
            row.push(se[i]);
        }
        table.rows.push(row);
        rep.metric(format!("exceedance_h{h}"), exceed);
        exceedances.push(exceed);
        last = Some((mean, se));
    }
    let decreasing = exceedances.windows(2).all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
    rep.check("exceedance_decreasing", decreasing);
    if let Some((mean, se)) = last {
        let mut worst: f64 = 0.0;
        for i in 0..mean.len() {
            let z = (mean[i] - x_rre[i]).abs();
            let allowed = 3.0 * se[i] + 1e-12;
            worst = worst.max(z / allowed);
        }
        rep.metric("mean_deviation_in_tolerances", worst);
        rep.tolerances.insert("mean_deviation_in_tolerances".into(), 1.0);
        rep.check("mean_within_3_std_error", worst <= 1.0);
    }
    rep.series.insert("exceedance".into(), table);
    Ok(rep.finish())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    /// Resolutions, coarse to fine.
    pub h: Vec<f64>,
    /// Probe points; must lie on every lattice.
    pub probes: Vec<Vec<f64>>,
    pub extent: f64,
    /// Any point of the class whose steady state is used.
    pub anchor: Vec<f64>,
    pub reversibility_tol: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            h: vec![0.1, 0.05, 0.025],
            probes: vec![vec![0.5], vec![1.0], vec![2.0], vec![3.0]],
            extent: 6.0,
            anchor: vec![1.0],
            reversibility_tol: 1e-10,
        }
    }
}

/// `-h ln pi_h`, shifted to minimum zero, against `KL(x || x_s)` at probe
/// points, plus the stationary residual `|H(grad psi_h, x)|` with a centred
/// difference gradient.
pub fn landscape_limit(net: &ReactionNetwork, cfg: &LandscapeConfig) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("landscape_limit");
    rep.parameters.insert("config".into(), to_value(cfg));
    let x_s = find_steady_state(net, &cfg.anchor)?;
    let hc = HamiltonianContext::new(net);
    let mut table = Series::new(&["h", "max_gap", "gap_at_steady_state", "max_stationary_residual"]);
    let mut gaps = Vec::new();
    for &h in &cfg.h {
        let lat = lattice_for(net, h, cfg.extent)?;
        let pi = invariant_poisson(net, &lat, &x_s)?;
        let rev = check_reversibility(net, &pi);
        if rev > cfg.reversibility_tol {
            return Err(CrnError::NotReversible(rev));
        }
        let psi = wkb_landscape(&pi, h)?;
        let shift = psi.inf();
        let mut max_gap: f64 = 0.0;
        let mut max_res: f64 = 0.0;
        for x in &cfg.probes {
            let gap = (psi.at(x)? - shift - kl_landscape(x, &x_s).0).abs();
            max_gap = max_gap.max(gap);
            let mut grad = vec![0.0; x.len()];
            let mut interior = true;
            for l in 0..x.len() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[l] += h;
                b[l] -= h;
                match (psi.at(&a), psi.at(&b)) {
                    (Ok(fa), Ok(fb)) => grad[l] = (fa - fb) / (2.0 * h),
                    _ => interior = false,
                }
            }
            if interior {
                max_res = max_res.max(hc.hamiltonian(&grad, x).abs());
            }
        }
        let at_xs = match lat.index_of_position(&x_s) {
            Ok(i) => (psi.values[i] - shift).abs(),
            Err(_) => f64::NAN,
        };
        rep.metric(format!("max_gap_h{h}"), max_gap);
        rep.metric(format!("stationary_residual_h{h}"), max_res);
        rep.metric(format!("reversibility_h{h}"), rev);
        table.rows.push(vec![h, max_gap, at_xs, max_res]);
        gaps.push(max_gap);
    }
    rep.check("gap_decreasing", gaps.windows(2).all(|w| w[1] < w[0]));
    rep.series.insert("gaps".into(), table);
    Ok(rep.finish())
}

// ---------------------------------------------------------------------------

pub const EXPERIMENTS: [&str; 4] = ["convergence_study", "ldp_single_time", "mean_field_check", "landscape_limit"];

/// Runs an experiment by name with configuration from a TOML table. Missing
/// keys take the defaults.
pub fn run_named(name: &str, net: &ReactionNetwork, config: &toml::Table, seed: Option<u64>) -> Result<ExperimentReport> {
    fn parse<T: for<'de> Deserialize<'de>>(t: &toml::Table) -> Result<T> {
        T::deserialize(toml::Value::Table(t.clone())).map_err(|e| CrnError::InvalidArgument(e.to_string()))
    }
    match name {
        "convergence_study" => convergence_study(net, &parse(config)?),
        "ldp_single_time" => {
            let mut cfg: LdpConfig = parse(config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            ldp_single_time(net, &cfg)
        }
        "mean_field_check" => {
            let mut cfg: MeanFieldConfig = parse(config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            mean_field_check(net, &cfg)
        }
        "landscape_limit" => landscape_limit(net, &parse(config)?),
        other => Err(CrnError::UnknownExperiment(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::catalog;

    #[test]
    fn bump_gradient_matches_differences() {
        let u = default_well();
        for x in [0.9, 1.2, 1.5, 2.0, 2.2] {
            let fd = (u.value(&[x + 1e-6]) - u.value(&[x - 1e-6])) / 2e-6;
            assert!((fd - u.gradient(&[x])[0]).abs() < 1e-8);
        }
        assert_eq!(u.value(&[0.5]), -0.1 * 0.75f64.powi(3));
        assert_eq!(u.value(&[2.5]), 0.0);
        assert_eq!(u.gradient(&[2.5]), vec![0.0]);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_data_has_zero_error() {
        let cfg = ConvergenceConfig {
            u0: InitialData::Constant { value: 0.3 },
            h: vec![0.2, 0.1],
            ..Default::default()
        };
        let rep = convergence_study(&catalog::birth_death(1.0, 1.0), &cfg).unwrap();
        assert!(rep.pass);
        assert!(rep.metrics["max_error"] <= 1e-12);
    }

    #[test]
    fn frozen_network_never_exceeds() {
        let net = catalog::isomerization(0.0, 0.0);
        let cfg = MeanFieldConfig {
            n_paths: 50,
            ..Default::default()
        };
        let rep = mean_field_check(&net, &cfg).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.metrics["exceedance_h0.05"], 0.0);
    }

    #[test]
    fn unknown_name() {
        let net = catalog::birth_death(1.0, 1.0);
        assert!(matches!(
            run_named("nope", &net, &toml::Table::new(), None),
            Err(CrnError::UnknownExperiment(_))
        ));
    }
}
