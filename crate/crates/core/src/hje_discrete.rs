//! Monotone WKB schemes on the lattice.
//!
//! With `w = exp(u/h)` the backward equation `dw/dt = Q w` becomes
//! `du/dt = H_h(u)`, where
//!
//! ```text
//! H_h(u)(x) = sum over admissible jumps x -> y of flux(x) (exp((u(y) - u(x))/h) - 1).
//! ```
//!
//! One backward-Euler step is the resolvent problem `u - dt H_h(u) = f`. At a
//! fixed point the left side is strictly increasing in `u(x)` and
//! nonincreasing in the neighbours, so a nonlinear Gauss-Seidel sweep with a
//! scalar root find per point is monotone and converges from the supersolution
//! `u = sup f`.
//!
//! The forward scheme for `psi = -h ln p` is treated the same way.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{CrnError, Result};
use crate::lattice::{GridFunction, Jump, JumpTable, Lattice};
use crate::network::ReactionNetwork;

/// Default cap on exponent arguments.
pub const DEFAULT_CLAMP: f64 = 500.0;

/// Cached jump structure for evaluating `H_h` on one lattice.
#[derive(Debug)]
pub struct DiscreteHamiltonian {
    pub lattice: Lattice,
    pub table: JumpTable,
    pub clamp_limit: f64,
    overflow_count: AtomicU64,
}

impl Clone for DiscreteHamiltonian {
    fn clone(&self) -> Self {
        DiscreteHamiltonian {
            lattice: self.lattice.clone(),
            table: self.table.clone(),
            clamp_limit: self.clamp_limit,
            overflow_count: AtomicU64::new(self.overflow_count()),
        }
    }
}

impl DiscreteHamiltonian {
    pub fn new(net: &ReactionNetwork, lattice: &Lattice) -> Result<Self> {
        Ok(DiscreteHamiltonian {
            lattice: lattice.clone(),
            table: JumpTable::new(net, lattice)?,
            clamp_limit: DEFAULT_CLAMP,
            overflow_count: AtomicU64::new(0),
        })
    }

    pub fn with_clamp(mut self, limit: f64) -> Self {
        assert!(limit > 0.0, "clamp limit must be positive");
        self.clamp_limit = limit;
        self
    }

    pub fn h(&self) -> f64 {
        self.lattice.h()
    }

    /// Number of clamped exponent arguments seen by [`Self::eval_at`].
    pub fn overflow_count(&self) -> u64 {
        self.overflow_count.load(Ordering::Relaxed)
    }

    pub fn reset_overflow_count(&self) {
        self.overflow_count.store(0, Ordering::Relaxed);
    }

    fn clamped_exp(&self, arg: f64, count: bool) -> f64 {
        if arg.abs() > self.clamp_limit {
            if count {
                self.overflow_count.fetch_add(1, Ordering::Relaxed);
            }
            arg.signum() * self.clamp_limit
        } else {
            arg
        }
        .exp()
    }

    /// `H_h(u)` at flat index `i`.
    pub fn eval_at(&self, u: &[f64], i: usize) -> f64 {
        let h = self.h();
        self.table
            .outgoing(i)
            .iter()
            .map(|j| j.flux * (self.clamped_exp((u[j.target] - u[i]) / h, true) - 1.0))
            .sum()
    }

    /// `H_h(u)` at every point.
    pub fn eval(&self, u: &GridFunction) -> Vec<f64> {
        (0..self.lattice.len()).map(|i| self.eval_at(&u.values, i)).collect()
    }

    /// `sup |u - dt H_h(u) - f|`.
    pub fn resolvent_residual(&self, u: &[f64], f: &[f64], dt: f64) -> f64 {
        (0..u.len())
            .map(|i| (u[i] - dt * self.eval_at(u, i) - f[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Forward operator `F(psi)(x) = sum_in flux(src) exp((psi(x) - psi(src))/h) - sum_out flux(x)`,
    /// so that `dpsi/dt + F(psi) = 0`.
    pub fn psi_rhs_at(&self, psi: &[f64], i: usize) -> f64 {
        let h = self.h();
        let inflow: f64 = self
            .table
            .incoming(i)
            .iter()
            .map(|j| j.flux * self.clamped_exp((psi[i] - psi[j.target]) / h, true))
            .sum();
        let outflow: f64 = self.table.outgoing(i).iter().map(|j| j.flux).sum();
        inflow - outflow
    }

    pub fn psi_rhs(&self, psi: &GridFunction) -> Vec<f64> {
        (0..self.lattice.len()).map(|i| self.psi_rhs_at(&psi.values, i)).collect()
    }
}

/// `H_h(u)` at the lattice point `x`.
pub fn discrete_hamiltonian(ctx: &DiscreteHamiltonian, u: &GridFunction, x: &[f64]) -> Result<f64> {
    let i = ctx.lattice.index_of_position(x)?;
    Ok(ctx.eval_at(&u.values, i))
}

/// Point update order for the nonlinear solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Alternating lexicographic and reverse-lexicographic Gauss-Seidel.
    GaussSeidel,
    /// All points from the previous iterate, in parallel.
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventConfig {
    pub dt: f64,
    /// Stopping tolerance on `sup |u - dt H_h(u) - f|`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Tolerance of the scalar root find at each point.
    pub scalar_tol: f64,
    pub mode: SweepMode,
}

impl ResolventConfig {
    pub fn new(dt: f64) -> Self {
        ResolventConfig {
            dt,
            tol: 1e-12,
            max_sweeps: 200_000,
            scalar_tol: 1e-15,
            mode: SweepMode::GaussSeidel,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.tol > 0.0) || !(self.scalar_tol > 0.0) || self.max_sweeps == 0 {
            return Err(CrnError::InvalidArgument(format!("invalid resolvent configuration {self:?}")));
        }
        Ok(())
    }
}

/// Result of a resolvent solve with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub u: GridFunction,
    pub sweeps: usize,
    pub residual: f64,
}

/// Safeguarded Newton on a strictly increasing scalar function with a valid bracket.
fn monotone_root(
    mut g: impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    start: f64,
    tol: f64,
) -> f64 {
    let mut v = start.clamp(lo, hi);
    for _ in 0..200 {
        let (gv, dg) = g(v);
        if gv == 0.0 {
            return v;
        }
        if gv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let newton = v - gv / dg;
        let next = if newton > lo && newton < hi && dg.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - v).abs() <= tol * (1.0 + v.abs()) || hi - lo <= tol * (1.0 + v.abs()) {
            return next;
        }
        v = next;
    }
    v
}

/// Bracketed solve of `v - dt sum a_k (exp((u_k - v)/h) - 1) = f` at one point.
fn resolvent_point(ctx: &DiscreteHamiltonian, jumps: &[Jump], u: &[f64], fi: f64, start: f64, cfg: &ResolventConfig) -> f64 {
    if jumps.is_empty() {
        return fi;
    }
    let h = ctx.h();
    let dt = cfg.dt;
    let (mut lo, mut hi) = (fi, fi);
    for j in jumps {
        lo = lo.min(u[j.target]);
        hi = hi.max(u[j.target]);
    }
    if lo == hi {
        return fi;
    }
    let g = |v: f64| {
        let mut s = 0.0;
        let mut ds = 0.0;
        for j in jumps {
            let e = ctx.clamped_exp((u[j.target] - v) / h, false);
            s += j.flux * (e - 1.0);
            ds += j.flux * e;
        }
        (v - dt * s - fi, 1.0 + dt / h * ds)
    };
    monotone_root(g, lo, hi, start, cfg.scalar_tol)
}

/// Floating-point floor for the resolvent residual at `u`.
fn residual_floor(ctx: &DiscreteHamiltonian, u: &[f64], f: &[f64], dt: f64) -> f64 {
    let h = ctx.h();
    (0..u.len())
        .map(|i| {
            let terms: f64 = ctx
                .table
                .outgoing(i)
                .iter()
                .map(|j| j.flux * (ctx.clamped_exp((u[j.target] - u[i]) / h, false) + 1.0))
                .sum();
            // each exponential carries a relative error of about |arg| * eps
            let args: f64 = ctx
                .table
                .outgoing(i)
                .iter()
                .map(|j| ((u[j.target] - u[i]) / h).abs())
                .fold(1.0, f64::max);
            8.0 * f64::EPSILON * (u[i].abs() + f[i].abs() + dt * terms * args)
        })
        .fold(0.0, f64::max)
}

/// Solves `u - dt H_h(u) = f`.
///
/// Stops when the sup-norm residual is below `cfg.tol`, or below the
/// rounding floor of the residual evaluation when that is larger.
pub fn resolvent_solve(ctx: &DiscreteHamiltonian, cfg: &ResolventConfig, f: &GridFunction) -> Result<GridFunction> {
    resolvent_solve_from(ctx, cfg, f, None).map(|s| s.u)
}

/// As [`resolvent_solve`], optionally warm-started and with diagnostics.
///
/// A warm start must be a supersolution for the sweeps to be monotone; any
/// start converges, but `None` uses the constant `sup f`.
pub fn resolvent_solve_from(
    ctx: &DiscreteHamiltonian,
    cfg: &ResolventConfig,
    f: &GridFunction,
    start: Option<&[f64]>,
) -> Result<ResolventSolution> {
    cfg.validate()?;
    let n = ctx.lattice.len();
    if f.values.len() != n {
        return Err(CrnError::DimensionMismatch {
            expected: n,
            got: f.values.len(),
        });
    }
    if f.has_nan() {
        return Err(CrnError::NaNInput);
    }
    let fv = &f.values;
    let mut u = match start {
        Some(s) => s.to_vec(),
        None => vec![f.sup(); n],
    };
    let mut residual = ctx.resolvent_residual_quiet(&u, fv, cfg.dt);
    let mut sweeps = 0;
    while residual > cfg.tol.max(residual_floor(ctx, &u, fv, cfg.dt)) {
        if sweeps == cfg.max_sweeps {
            return Err(CrnError::ResolventNotConverged { sweeps, residual });
        }
        match cfg.mode {
            SweepMode::GaussSeidel => {
                let forward = sweeps % 2 == 0;
                for k in 0..n {
                    let i = if forward { k } else { n - 1 - k };
                    u[i] = resolvent_point(ctx, ctx.table.outgoing(i), &u, fv[i], u[i], cfg);
                }
            }
            SweepMode::Jacobi => {
                let old = u.clone();
                u.par_iter_mut().enumerate().for_each(|(i, ui)| {
                    *ui = resolvent_point(ctx, ctx.table.outgoing(i), &old, fv[i], old[i], cfg);
                });
            }
        }
        sweeps += 1;
        residual = ctx.resolvent_residual_quiet(&u, fv, cfg.dt);
    }
    Ok(ResolventSolution {
        u: GridFunction::new(ctx.lattice.clone(), u, f.far_field)?,
        sweeps,
        residual,
    })
}

impl DiscreteHamiltonian {
    /// Residual without touching the overflow counter.
    fn resolvent_residual_quiet(&self, u: &[f64], f: &[f64], dt: f64) -> f64 {
        let h = self.h();
        (0..u.len())
            .map(|i| {
                let hu: f64 = self
                    .table
                    .outgoing(i)
                    .iter()
                    .map(|j| j.flux * (self.clamped_exp((u[j.target] - u[i]) / h, false) - 1.0))
                    .sum();
                (u[i] - dt * hu - f[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Output of a backward-Euler evolution.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub u: GridFunction,
    pub steps: usize,
    /// `inf u` after every step.
    pub min_trace: Vec<f64>,
    /// `sup u` after every step.
    pub max_trace: Vec<f64>,
}

/// Number of steps of size `dt` that fit in `t`.
pub fn step_count(t: f64, dt: f64) -> usize {
    (t / dt + 1e-9).floor() as usize
}

/// `u(t) = J^n u0` with `J = (I - dt H_h)^{-1}` and `n = floor(t / dt)`.
pub fn crandall_liggett_evolve(
    ctx: &DiscreteHamiltonian,
    u0: &GridFunction,
    t: f64,
    cfg: &ResolventConfig,
) -> Result<Evolution> {
    crandall_liggett_evolve_observed(ctx, u0, t, cfg, |_, _| {})
}

/// As [`crandall_liggett_evolve`], calling `observe(step, u)` after each step.
pub fn crandall_liggett_evolve_observed(
    ctx: &DiscreteHamiltonian,
    u0: &GridFunction,
    t: f64,
    cfg: &ResolventConfig,
    mut observe: impl FnMut(usize, &GridFunction),
) -> Result<Evolution> {
    if !(t >= 0.0) {
        return Err(CrnError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    cfg.validate()?;
    let steps = step_count(t, cfg.dt);
    let mut u = u0.clone();
    let mut min_trace = Vec::with_capacity(steps);
    let mut max_trace = Vec::with_capacity(steps);
    for s in 0..steps {
        // the previous iterate is a good start but not a supersolution; sup f is
        let sol = resolvent_solve_from(ctx, cfg, &u, None)?;
        u = sol.u;
        min_trace.push(u.inf());
        max_trace.push(u.sup());
        observe(s + 1, &u);
    }
    Ok(Evolution {
        u,
        steps,
        min_trace,
        max_trace,
    })
}

/// Backward Euler for `dpsi/dt + F(psi) = 0`: each step solves
/// `psi + dt F(psi) = psi_prev` by Gauss-Seidel.
pub fn evolve_psi_forward(
    ctx: &DiscreteHamiltonian,
    psi0: &GridFunction,
    t: f64,
    cfg: &ResolventConfig,
) -> Result<GridFunction> {
    cfg.validate()?;
    if psi0.has_nan() || psi0.values.iter().any(|v| v.is_infinite()) {
        return Err(CrnError::NaNInput);
    }
    let n = ctx.lattice.len();
    let h = ctx.h();
    let dt = cfg.dt;
    let mut psi = psi0.values.clone();
    for _ in 0..step_count(t, dt) {
        let prev = psi.clone();
        let residual = |psi: &[f64]| -> f64 {
            (0..n)
                .map(|i| {
                    let inflow: f64 = ctx
                        .table
                        .incoming(i)
                        .iter()
                        .map(|j| j.flux * ctx.clamped_exp((psi[i] - psi[j.target]) / h, false))
                        .sum();
                    let outflow: f64 = ctx.table.outgoing(i).iter().map(|j| j.flux).sum();
                    (psi[i] + dt * (inflow - outflow) - prev[i]).abs()
                })
                .fold(0.0, f64::max)
        };
        let mut sweeps = 0;
        let mut res = residual(&psi);
        let scale = prev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = 64.0 * f64::EPSILON * (1.0 + scale + dt * ctx.table.max_exit_flux());
        while res > cfg.tol.max(floor) {
            if sweeps == cfg.max_sweeps {
                return Err(CrnError::ResolventNotConverged { sweeps, residual: res });
            }
            let forward = sweeps % 2 == 0;
            for k in 0..n {
                let i = if forward { k } else { n - 1 - k };
                let inc = ctx.table.incoming(i);
                let outflow: f64 = ctx.table.outgoing(i).iter().map(|j| j.flux).sum();
                let fi = prev[i];
                if inc.is_empty() {
                    psi[i] = fi + dt * outflow;
                    continue;
                }
                let total_in: f64 = inc.iter().map(|j| j.flux).sum();
                let min_src = inc.iter().map(|j| psi[j.target]).fold(f64::INFINITY, f64::min);
                let lo = fi.min(min_src) - dt * total_in;
                let hi = fi + dt * outflow;
                let cur = &psi;
                let g = |v: f64| {
                    let mut s = 0.0;
                    let mut ds = 0.0;
                    for j in inc {
                        let e = ctx.clamped_exp((v - cur[j.target]) / h, false);
                        s += j.flux * e;
                        ds += j.flux * e;
                    }
                    (v + dt * (s - outflow) - fi, 1.0 + dt / h * ds)
                };
                let v = monotone_root(g, lo, hi, psi[i], cfg.scalar_tol);
                psi[i] = v;
            }
            sweeps += 1;
            res = residual(&psi);
        }
    }
    GridFunction::new(ctx.lattice.clone(), psi, psi0.far_field)
}

/// Stationary lower and upper barriers built from `f` and a mass vector.
///
/// With `f_m(r) = min(c, inf_{|x| >= r} f)` and `f_M(r) = max(c, sup_{|x| >= r} f)`,
/// where `c` is the far-field value, the barriers are
/// `u_m(x) = f_m(m.x / |m|)` and `u_M(x) = f_M(m.x / |m|)`. Both depend on `x`
/// only through `m.x`, which every jump preserves, so `H_h` vanishes on them.
pub fn barriers(f: &GridFunction, m: Option<&[f64]>) -> Result<(GridFunction, GridFunction)> {
    let m = m.ok_or(CrnError::NoMassVector)?;
    let lat = &f.lattice;
    if m.len() != lat.dims() {
        return Err(CrnError::DimensionMismatch {
            expected: lat.dims(),
            got: m.len(),
        });
    }
    if m.iter().any(|&v| !(v > 0.0)) {
        return Err(CrnError::InvalidArgument("mass vector must be strictly positive".into()));
    }
    let norm_m = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    // (|x|, f) sorted by radius, then suffix minima and maxima
    let mut by_radius: Vec<(f64, f64)> = (0..lat.len())
        .map(|i| {
            let x = lat.position(i);
            (x.iter().map(|v| v * v).sum::<f64>().sqrt(), f.values[i])
        })
        .collect();
    by_radius.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = by_radius.len();
    let mut suffix_min = vec![f.far_field; k + 1];
    let mut suffix_max = vec![f.far_field; k + 1];
    for i in (0..k).rev() {
        suffix_min[i] = suffix_min[i + 1].min(by_radius[i].1);
        suffix_max[i] = suffix_max[i + 1].max(by_radius[i].1);
    }
    let envelope = |r: f64| {
        // first point with |x| >= r, allowing for rounding in the radius
        let idx = by_radius.partition_point(|p| p.0 < r - 1e-12 * (1.0 + r));
        (suffix_min[idx], suffix_max[idx])
    };
    let mut lower = Vec::with_capacity(lat.len());
    let mut upper = Vec::with_capacity(lat.len());
    for i in 0..lat.len() {
        let x = lat.position(i);
        let s = x.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / norm_m;
        let (lo, hi) = envelope(s);
        lower.push(lo);
        upper.push(hi);
    }
    Ok((
        GridFunction::new(lat.clone(), lower, f.far_field)?,
        GridFunction::new(lat.clone(), upper, f.far_field)?,
    ))
}
