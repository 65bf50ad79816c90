//! Direct-method simulation of the lattice jump process and Monte Carlo
//! estimation of the nonlinear semigroup `h log E[exp(u0(X_t)/h)]`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CrnError, Result};
use crate::lattice::pairwise_sum;
use crate::network::{Direction, ReactionNetwork};

/// Default cap on the number of events along a single path.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

/// Master seed plus the stream of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedRecord {
    pub master: u64,
    pub stream: u64,
}

impl SeedRecord {
    pub fn new(master: u64, stream: u64) -> Self {
        SeedRecord { master, stream }
    }

    /// Independent generator for this path: the ChaCha stream id is the path id.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// A piecewise-constant trajectory stored as molecule counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub jump_times: Vec<f64>,
    /// `states[k]` holds on `[jump_times[k-1], jump_times[k])`.
    pub states: Vec<Vec<i64>>,
    pub h: f64,
    pub horizon: f64,
    pub seed: SeedRecord,
}

impl PathSample {
    /// Counts at time `t` (right-continuous).
    pub fn counts_at(&self, t: f64) -> &[i64] {
        let k = self.jump_times.partition_point(|&s| s <= t);
        &self.states[k]
    }

    pub fn position_at(&self, t: f64) -> Vec<f64> {
        self.counts_at(t).iter().map(|&c| c as f64 * self.h).collect()
    }

    pub fn final_counts(&self) -> &[i64] {
        self.states.last().expect("path has an initial state")
    }

    /// Time average of the position over `[a, b]`.
    pub fn time_average(&self, a: f64, b: f64) -> Vec<f64> {
        let n = self.states[0].len();
        let mut acc = vec![0.0; n];
        let mut start = a;
        let mut k = self.jump_times.partition_point(|&s| s <= a);
        while start < b {
            let end = self.jump_times.get(k).copied().unwrap_or(f64::INFINITY).min(b);
            for (l, v) in acc.iter_mut().enumerate() {
                *v += self.states[k][l] as f64 * self.h * (end - start);
            }
            start = end;
            k += 1;
        }
        acc.iter().map(|v| v / (b - a)).collect()
    }
}

/// Monte Carlo estimate with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Options for the simulator.
#[derive(Debug, Clone, Copy)]
pub struct SsaConfig {
    pub event_cap: u64,
}

impl Default for SsaConfig {
    fn default() -> Self {
        SsaConfig {
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

fn initial_counts(net: &ReactionNetwork, h: f64, x0: &[f64]) -> Result<Vec<i64>> {
    if x0.len() != net.n_species() {
        return Err(CrnError::DimensionMismatch {
            expected: net.n_species(),
            got: x0.len(),
        });
    }
    if !(h > 0.0) {
        return Err(CrnError::InvalidArgument(format!("spacing must be positive, got {h}")));
    }
    if x0.iter().any(|&v| v < 0.0) {
        return Err(CrnError::NegativeState(x0.to_vec()));
    }
    let counts: Vec<i64> = x0.iter().map(|&v| (v / h).round() as i64).collect();
    let on_grid = x0
        .iter()
        .zip(&counts)
        .all(|(&v, &c)| (v - c as f64 * h).abs() <= 1e-9 * h.max(v.abs()));
    if !on_grid {
        return Err(CrnError::OffLattice(x0.to_vec()));
    }
    Ok(counts)
}

/// Runs the direct method from `counts` over `[0, horizon]`, calling
/// `record(time, counts)` after each event.
fn run_ssa(
    net: &ReactionNetwork,
    h: f64,
    counts: &mut [i64],
    horizon: f64,
    rng: &mut ChaCha8Rng,
    cfg: SsaConfig,
    mut record: impl FnMut(f64, &[i64]),
) -> Result<()> {
    let m = net.n_reactions();
    let mut rates = vec![0.0; 2 * m];
    let mut t = 0.0;
    let mut events: u64 = 0;
    loop {
        let mut total = 0.0;
        for j in 0..m {
            let nu = net.reaction_vector(j);
            for (slot, dir, sign) in [(2 * j, Direction::Forward, 1), (2 * j + 1, Direction::Backward, -1)] {
                let admissible = counts.iter().zip(nu).all(|(&c, &v)| c + sign * v >= 0);
                let a = if admissible && nu.iter().any(|&v| v != 0) {
                    net.meso_flux_counts(j, dir, counts, h) / h
                } else {
                    0.0
                };
                rates[slot] = a;
                total += a;
            }
        }
        if total <= 0.0 {
            return Ok(());
        }
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / total;
        if t > horizon {
            return Ok(());
        }
        events += 1;
        if events > cfg.event_cap {
            return Err(CrnError::EventCapExceeded {
                cap: cfg.event_cap,
                time: t,
            });
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (slot, &a) in rates.iter().enumerate() {
            if a > 0.0 {
                acc += a;
                chosen = Some(slot);
                if target < acc {
                    break;
                }
            }
        }
        let slot = chosen.expect("positive total rate");
        let nu = net.reaction_vector(slot / 2);
        let sign = if slot % 2 == 0 { 1 } else { -1 };
        for (c, &v) in counts.iter_mut().zip(nu) {
            *c += sign * v;
        }
        record(t, counts);
    }
}

/// Simulates one trajectory of the jump process started at `x0`.
pub fn simulate_path(
    net: &ReactionNetwork,
    h: f64,
    x0: &[f64],
    horizon: f64,
    seed: SeedRecord,
) -> Result<PathSample> {
    simulate_path_with(net, h, x0, horizon, seed, SsaConfig::default())
}

pub fn simulate_path_with(
    net: &ReactionNetwork,
    h: f64,
    x0: &[f64],
    horizon: f64,
    seed: SeedRecord,
    cfg: SsaConfig,
) -> Result<PathSample> {
    if !(horizon >= 0.0) {
        return Err(CrnError::InvalidArgument(format!("horizon must be nonnegative, got {horizon}")));
    }
    let mut counts = initial_counts(net, h, x0)?;
    let mut jump_times = Vec::new();
    let mut states = vec![counts.clone()];
    let mut rng = seed.rng();
    run_ssa(net, h, &mut counts, horizon, &mut rng, cfg, |t, c| {
        jump_times.push(t);
        states.push(c.to_vec());
    })?;
    Ok(PathSample {
        jump_times,
        states,
        h,
        horizon,
        seed,
    })
}

/// Counts at `horizon` without storing the trajectory.
pub fn simulate_final_counts(
    net: &ReactionNetwork,
    h: f64,
    x0: &[f64],
    horizon: f64,
    seed: SeedRecord,
    cfg: SsaConfig,
) -> Result<Vec<i64>> {
    let mut counts = initial_counts(net, h, x0)?;
    let mut rng = seed.rng();
    run_ssa(net, h, &mut counts, horizon, &mut rng, cfg, |_, _| {})?;
    Ok(counts)
}

/// `n_paths` trajectories; path `i` uses stream `i` of the master seed.
pub fn ensemble(
    net: &ReactionNetwork,
    h: f64,
    x0: &[f64],
    horizon: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<PathSample>> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_path(net, h, x0, horizon, SeedRecord::new(master_seed, i)))
        .collect()
}

/// Final counts of `n_paths` independent paths, in path order.
pub fn final_states(
    net: &ReactionNetwork,
    h: f64,
    x0: &[f64],
    horizon: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<Vec<i64>>> {
    let cfg = SsaConfig::default();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_final_counts(net, h, x0, horizon, SeedRecord::new(master_seed, i), cfg))
        .collect()
}

/// Log-sum-exp estimator `h log mean exp(u_i / h)` with a delta-method error.
pub fn varadhan_from_values(values: &[f64], h: f64) -> Result<McEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(CrnError::TooFewPaths(n));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CrnError::NaNInput);
    }
    let umax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|&u| ((u - umax) / h).exp()).collect();
    let mean = pairwise_sum(&w) / n as f64;
    let dev: Vec<f64> = w.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    let se_mean = (var / n as f64).sqrt();
    Ok(McEstimate {
        value: umax + h * mean.ln(),
        std_error: h * se_mean / mean,
        n_paths: n,
    })
}

/// Monte Carlo estimate of `h log E[exp(u0(X^h_t)/h) | X^h_0 = x0]`.
pub fn varadhan_mc<F>(
    net: &ReactionNetwork,
    h: f64,
    x0: &[f64],
    u0: F,
    t: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n_paths < 2 {
        return Err(CrnError::TooFewPaths(n_paths));
    }
    let finals = final_states(net, h, x0, t, n_paths, master_seed)?;
    let values: Vec<f64> = finals
        .par_iter()
        .map(|c| {
            let x: Vec<f64> = c.iter().map(|&v| v as f64 * h).collect();
            u0(&x)
        })
        .collect();
    varadhan_from_values(&values, h)
}

/// Normalised histogram of lattice states.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub h: f64,
    pub mass: BTreeMap<Vec<i64>, f64>,
    pub n_samples: usize,
}

impl Histogram {
    pub fn from_counts<'a>(h: f64, samples: impl IntoIterator<Item = &'a [i64]>) -> Result<Self> {
        let mut tally: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
        let mut n = 0;
        for s in samples {
            *tally.entry(s.to_vec()).or_default() += 1;
            n += 1;
        }
        if n == 0 {
            return Err(CrnError::EmptyEnsemble);
        }
        let mass = tally.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect();
        Ok(Histogram { h, mass, n_samples: n })
    }

    /// Mean position.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.mass.keys().next().map_or(0, |k| k.len());
        let mut m = vec![0.0; dim];
        for (k, p) in &self.mass {
            for (l, &c) in k.iter().enumerate() {
                m[l] += p * c as f64 * self.h;
            }
        }
        m
    }

    /// Per-species standard error of the mean position.
    pub fn mean_std_error(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut var = vec![0.0; mean.len()];
        for (k, p) in &self.mass {
            for (l, &c) in k.iter().enumerate() {
                let d = c as f64 * self.h - mean[l];
                var[l] += p * d * d;
            }
        }
        let n = self.n_samples as f64;
        var.iter().map(|v| (v * n / (n - 1.0).max(1.0) / n).sqrt()).collect()
    }

    /// Mass of states with `pred(position)` true.
    pub fn probability(&self, mut pred: impl FnMut(&[f64]) -> bool) -> f64 {
        self.mass
            .iter()
            .filter(|(k, _)| {
                let x: Vec<f64> = k.iter().map(|&c| c as f64 * self.h).collect();
                pred(&x)
            })
            .map(|(_, p)| p)
            .sum()
    }
}

/// Empirical law of `X^h(t)` over an ensemble.
pub fn empirical_law(paths: &[PathSample], t: f64) -> Result<Histogram> {
    let first = paths.first().ok_or(CrnError::EmptyEnsemble)?;
    Histogram::from_counts(first.h, paths.iter().map(|p| p.counts_at(t)))
}
