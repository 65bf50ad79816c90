//! The limiting Hamiltonian
//!
//! ```text
//! H(p, x) = sum_j Phi+_j(x) (exp(nu_j . p) - 1) + Phi-_j(x) (exp(-nu_j . p) - 1),
//! ```
//!
//! its Legendre dual `L(s, x)`, bi-characteristics, and a discrete
//! Lax-Oleinik solver for `u(x, t) = sup_y [u0(y) - I(y; x, t)]`.
//!
//! `H` only sees `p` through `nu_j . p`, so it is constant along `ker(nu)` and
//! `L(s, x) = +inf` for `s` outside `G = span{nu_j}`. Everything that needs
//! strict convexity therefore works in coordinates `p = B q` with `B` an
//! orthonormal basis of `G`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrnError, Result};
use crate::network::{Direction, ReactionNetwork, StoichiometricStructure};
use crate::rre;

/// Network plus cached stoichiometric basis and solver tolerances.
#[derive(Debug, Clone)]
pub struct HamiltonianContext {
    pub net: ReactionNetwork,
    pub structure: StoichiometricStructure,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub membership_tol: f64,
}

/// Why a Legendre transform came back infinite (or did not).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LagrangianStatus {
    Attained,
    /// `s` is not in the stoichiometric subspace.
    OffSubspace,
    /// The supremum is not attained: singular restricted Hessian or a
    /// diverging Newton iterate, typically at boundary points.
    NotAttained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianValue {
    pub value: f64,
    /// Maximiser in `G`; empty unless attained.
    pub p_star: Vec<f64>,
    pub status: LagrangianStatus,
    pub iterations: usize,
}

impl HamiltonianContext {
    pub fn new(net: &ReactionNetwork) -> Self {
        HamiltonianContext {
            structure: StoichiometricStructure::new(net),
            net: net.clone(),
            newton_tol: 1e-13,
            newton_max_iter: 100,
            membership_tol: 1e-9,
        }
    }

    pub fn dims(&self) -> usize {
        self.net.n_species()
    }

    /// `dim G`.
    pub fn rank(&self) -> usize {
        self.structure.rank()
    }

    fn nu_dot(&self, j: usize, p: &[f64]) -> f64 {
        self.net.reaction_vector(j).iter().zip(p).map(|(&a, &b)| a as f64 * b).sum()
    }

    fn fluxes(&self, j: usize, x: &[f64]) -> (f64, f64) {
        (
            self.net.macro_flux(j, Direction::Forward, x),
            self.net.macro_flux(j, Direction::Backward, x),
        )
    }

    pub fn hamiltonian(&self, p: &[f64], x: &[f64]) -> f64 {
        (0..self.net.n_reactions())
            .map(|j| {
                let (fp, fm) = self.fluxes(j, x);
                let a = self.nu_dot(j, p);
                fp * a.exp_m1() + fm * (-a).exp_m1()
            })
            .sum()
    }

    /// `sum_j nu_j (Phi+_j e^{nu_j.p} - Phi-_j e^{-nu_j.p})`.
    pub fn grad_p(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dims()];
        for j in 0..self.net.n_reactions() {
            let (fp, fm) = self.fluxes(j, x);
            let a = self.nu_dot(j, p);
            let c = fp * a.exp() - fm * (-a).exp();
            for (gi, &v) in g.iter_mut().zip(self.net.reaction_vector(j)) {
                *gi += v as f64 * c;
            }
        }
        g
    }

    /// Gradient in `x` through the mass-action monomials; zero outside the orthant.
    pub fn grad_x(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.dims();
        let mut g = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut dm = vec![0.0; n];
        for j in 0..self.net.n_reactions() {
            let a = self.nu_dot(j, p);
            self.net.macro_flux_grad(j, Direction::Forward, x, &mut dp);
            self.net.macro_flux_grad(j, Direction::Backward, x, &mut dm);
            let (ep, em) = (a.exp_m1(), (-a).exp_m1());
            for l in 0..n {
                g[l] += dp[l] * ep + dm[l] * em;
            }
        }
        g
    }

    /// `sum_j nu_j nu_j^T (Phi+_j e^{nu_j.p} + Phi-_j e^{-nu_j.p})`.
    pub fn hessian_p(&self, p: &[f64], x: &[f64]) -> DMatrix<f64> {
        let n = self.dims();
        let mut hm = DMatrix::zeros(n, n);
        for j in 0..self.net.n_reactions() {
            let (fp, fm) = self.fluxes(j, x);
            let a = self.nu_dot(j, p);
            let w = fp * a.exp() + fm * (-a).exp();
            let nu = self.net.reaction_vector(j);
            for r in 0..n {
                for c in 0..n {
                    hm[(r, c)] += w * (nu[r] * nu[c]) as f64;
                }
            }
        }
        hm
    }

    /// `B^T (d^2 H / dp^2) B`.
    pub fn restricted_hessian(&self, p: &[f64], x: &[f64]) -> DMatrix<f64> {
        let b = &self.structure.range_basis;
        b.transpose() * self.hessian_p(p, x) * b
    }

    /// `|H(p, x) - H(P_G p, x)|`.
    pub fn degeneracy_check(&self, p: &[f64], x: &[f64]) -> f64 {
        let pg = self.structure.project(&DVector::from_column_slice(p));
        (self.hamiltonian(p, x) - self.hamiltonian(pg.as_slice(), x)).abs()
    }

    /// True when `s` lies in `G` up to `membership_tol (1 + |s|)`.
    pub fn in_subspace(&self, s: &[f64]) -> bool {
        let v = DVector::from_column_slice(s);
        self.structure.distance_to_range(&v) <= self.membership_tol * (1.0 + v.norm())
    }

    /// `L(s, x) = sup_p [s.p - H(p, x)]`, by Newton in `G` coordinates.
    pub fn lagrangian(&self, s: &[f64], x: &[f64]) -> LagrangianValue {
        self.lagrangian_from(s, x, None)
    }

    /// As [`Self::lagrangian`], starting Newton from `q0` (coordinates in `G`).
    pub fn lagrangian_from(&self, s: &[f64], x: &[f64], q0: Option<&[f64]>) -> LagrangianValue {
        let infinite = |status, iterations| LagrangianValue {
            value: f64::INFINITY,
            p_star: Vec::new(),
            status,
            iterations,
        };
        if !self.in_subspace(s) {
            return infinite(LagrangianStatus::OffSubspace, 0);
        }
        let b = &self.structure.range_basis;
        let d = b.ncols();
        let sv = DVector::from_column_slice(s);
        if d == 0 {
            return LagrangianValue {
                value: 0.0,
                p_star: vec![0.0; self.dims()],
                status: LagrangianStatus::Attained,
                iterations: 0,
            };
        }
        let bs = b.transpose() * &sv;
        let mut q = match q0 {
            Some(q0) if q0.len() == d => DVector::from_column_slice(q0),
            _ => DVector::zeros(d),
        };
        let objective = |q: &DVector<f64>| -> f64 {
            let p = b * q;
            bs.dot(q) - self.hamiltonian(p.as_slice(), x)
        };
        let mut phi = objective(&q);
        for it in 0..self.newton_max_iter {
            let p = b * &q;
            let grad = &bs - b.transpose() * DVector::from_vec(self.grad_p(p.as_slice(), x));
            let scale = 1.0 + bs.norm() + self.grad_scale(p.as_slice(), x);
            if grad.amax() <= self.newton_tol * scale {
                return LagrangianValue {
                    value: phi,
                    p_star: p.as_slice().to_vec(),
                    status: LagrangianStatus::Attained,
                    iterations: it,
                };
            }
            let hess = self.restricted_hessian(p.as_slice(), x);
            let Some(chol) = hess.clone().cholesky() else {
                return infinite(LagrangianStatus::NotAttained, it);
            };
            let step = chol.solve(&grad);
            let mut alpha = 1.0;
            loop {
                let trial = &q + alpha * &step;
                let val = objective(&trial);
                if val.is_finite() && val >= phi - 1e-15 * phi.abs().max(1.0) {
                    q = trial;
                    phi = val;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    return infinite(LagrangianStatus::NotAttained, it);
                }
            }
            if q.amax() > 700.0 {
                return infinite(LagrangianStatus::NotAttained, it);
            }
        }
        let p = b * &q;
        let grad = &bs - b.transpose() * DVector::from_vec(self.grad_p(p.as_slice(), x));
        let scale = 1.0 + bs.norm() + self.grad_scale(p.as_slice(), x);
        if grad.amax() <= 1e3 * self.newton_tol * scale {
            LagrangianValue {
                value: phi,
                p_star: p.as_slice().to_vec(),
                status: LagrangianStatus::Attained,
                iterations: self.newton_max_iter,
            }
        } else {
            infinite(LagrangianStatus::NotAttained, self.newton_max_iter)
        }
    }

    /// Size of the terms summed in `grad_p`, for relative stopping tests.
    fn grad_scale(&self, p: &[f64], x: &[f64]) -> f64 {
        (0..self.net.n_reactions())
            .map(|j| {
                let (fp, fm) = self.fluxes(j, x);
                let a = self.nu_dot(j, p);
                let norm: f64 = self.net.reaction_vector(j).iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
                norm * (fp * a.exp() + fm * (-a).exp())
            })
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Characteristics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x_values: Vec<Vec<f64>>,
    pub p_values: Vec<Vec<f64>>,
    /// Accumulated action `z0 + int L` along the flow.
    pub z_values: Vec<f64>,
    /// Set when `x` left the nonnegative orthant; integration stopped there.
    pub left_orthant: bool,
}

fn char_rhs(ctx: &HamiltonianContext, x: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let gp = ctx.grad_p(p, x);
    let gx = ctx.grad_x(p, x);
    let h = ctx.hamiltonian(p, x);
    let zdot = p.iter().zip(&gp).map(|(a, b)| a * b).sum::<f64>() - h;
    (gp, gx.into_iter().map(|v| -v).collect(), zdot)
}

/// RK4 for `x' = dH/dp`, `p' = -dH/dx`, `z' = p . dH/dp - H`.
///
/// `z' = L(x', x)` along the flow, so `z` accumulates the action. A negative
/// `horizon` integrates backward in time.
pub fn characteristics(
    ctx: &HamiltonianContext,
    x0: &[f64],
    p0: &[f64],
    z0: f64,
    horizon: f64,
    steps: usize,
) -> Result<Trajectory> {
    if x0.iter().any(|&v| v < 0.0) {
        return Err(CrnError::NegativeState(x0.to_vec()));
    }
    if steps == 0 {
        return Err(CrnError::InvalidArgument("need at least one step".into()));
    }
    let n = ctx.dims();
    let dt = horizon / steps as f64;
    let mut x = x0.to_vec();
    let mut p = p0.to_vec();
    let mut z = z0;
    let mut traj = Trajectory {
        times: vec![0.0],
        x_values: vec![x.clone()],
        p_values: vec![p.clone()],
        z_values: vec![z],
        left_orthant: false,
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u + s * v).collect() };
    for k in 0..steps {
        let (x1, p1, z1) = char_rhs(ctx, &x, &p);
        let (x2, p2, z2) = char_rhs(ctx, &axpy(&x, 0.5 * dt, &x1), &axpy(&p, 0.5 * dt, &p1));
        let (x3, p3, z3) = char_rhs(ctx, &axpy(&x, 0.5 * dt, &x2), &axpy(&p, 0.5 * dt, &p2));
        let (x4, p4, z4) = char_rhs(ctx, &axpy(&x, dt, &x3), &axpy(&p, dt, &p3));
        for l in 0..n {
            x[l] += dt / 6.0 * (x1[l] + 2.0 * x2[l] + 2.0 * x3[l] + x4[l]);
            p[l] += dt / 6.0 * (p1[l] + 2.0 * p2[l] + 2.0 * p3[l] + p4[l]);
        }
        z += dt / 6.0 * (z1 + 2.0 * z2 + 2.0 * z3 + z4);
        let t = (k + 1) as f64 * dt;
        if !z.is_finite() || x.iter().chain(&p).any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(CrnError::BlowUp(t));
        }
        traj.times.push(t);
        traj.x_values.push(x.clone());
        traj.p_values.push(p.clone());
        traj.z_values.push(z);
        if x.iter().any(|&v| v < 0.0) {
            traj.left_orthant = true;
            break;
        }
    }
    Ok(traj)
}

/// Classical solution of `u_t = H(u_x, x)` for one species, built from
/// characteristics that end at `y` with momentum `u0'(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicSolution {
    pub t: f64,
    /// Foot points `x` at time 0 of each path, increasing.
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl CharacteristicSolution {
    /// Linear interpolation; `None` outside the covered range.
    pub fn value(&self, x: f64) -> Option<f64> {
        let first = *self.xs.first()?;
        let last = *self.xs.last()?;
        let slack = 1e-9 * (1.0 + x.abs());
        if x < first - slack || x > last + slack {
            return None;
        }
        let k = self.xs.partition_point(|&v| v <= x).clamp(1, self.xs.len() - 1);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let w = if x1 > x0 { ((x - x0) / (x1 - x0)).clamp(0.0, 1.0) } else { 0.0 };
        Some(self.values[k - 1] * (1.0 - w) + self.values[k] * w)
    }
}

/// Solves `u_t = H(u_x, x)` at time `t` by characteristics, for `y` in
/// `[y_lo, y_hi]`.
///
/// Each path starts at `y` with `p = u0'(y)` and runs backward for time `t`,
/// landing at `X(y)` with `u(X(y), t) = u0(y) - int L`. Paths that leave the
/// orthant are dropped, and the edge of the admissible `y` range is located by
/// bisection so that `x = 0` is covered when reachable. Fails if `X` is not
/// strictly increasing, which signals crossing characteristics.
pub fn solve_by_characteristics_1d(
    ctx: &HamiltonianContext,
    u0: &(dyn Fn(f64) -> f64 + Sync),
    du0: &(dyn Fn(f64) -> f64 + Sync),
    t: f64,
    y_range: (f64, f64),
    n_y: usize,
    steps: usize,
) -> Result<CharacteristicSolution> {
    if ctx.dims() != 1 {
        return Err(CrnError::DimensionMismatch {
            expected: 1,
            got: ctx.dims(),
        });
    }
    let foot = |y: f64| -> Result<Option<(f64, f64)>> {
        let tr = characteristics(ctx, &[y], &[du0(y)], 0.0, -t, steps)?;
        if tr.left_orthant {
            return Ok(None);
        }
        // running backward, z ends at -int_0^t L
        Ok(Some((tr.x_values.last().unwrap()[0], u0(y) + tr.z_values.last().unwrap())))
    };
    let ys: Vec<f64> = (0..n_y)
        .map(|i| y_range.0 + (y_range.1 - y_range.0) * i as f64 / (n_y - 1) as f64)
        .collect();
    let feet: Vec<Option<(f64, f64)>> = ys.par_iter().map(|&y| foot(y)).collect::<Result<_>>()?;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    if let Some(first_ok) = feet.iter().position(|f| f.is_some()) {
        if first_ok > 0 && feet[first_ok - 1].is_none() {
            let (mut bad, mut good) = (ys[first_ok - 1], ys[first_ok]);
            for _ in 0..60 {
                let mid = 0.5 * (bad + good);
                if foot(mid)?.is_some() {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            if let Some(p) = foot(good)? {
                pts.push(p);
            }
        }
    }
    pts.extend(feet.into_iter().flatten());
    for w in pts.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(CrnError::CharacteristicCrossing(t));
        }
    }
    Ok(CharacteristicSolution {
        t,
        xs: pts.iter().map(|p| p.0).collect(),
        values: pts.iter().map(|p| p.1).collect(),
    })
}

// ---------------------------------------------------------------------------
// Lax-Oleinik

/// Options for [`lax_oleinik`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoOptions {
    /// Interior path nodes `K`; the time step is `t / (K + 1)`.
    pub nodes: usize,
    /// Half-width of the search box for the endpoint, in class coordinates.
    pub y_radius: f64,
    /// Grid points per class coordinate for the outer supremum.
    pub y_points: usize,
    /// Golden-section refinement of the best grid point.
    pub refine: bool,
    pub max_newton: usize,
    pub grad_tol: f64,
}

impl Default for LoOptions {
    fn default() -> Self {
        LoOptions {
            nodes: 32,
            y_radius: 3.0,
            y_points: 41,
            refine: true,
            max_newton: 100,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoQuality {
    /// Every inner minimisation met the gradient tolerance.
    pub converged: bool,
    /// Spread between the multistart results at the maximiser, plus the
    /// width of the final refinement bracket times the local slope.
    pub optimizer_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoResult {
    pub value: f64,
    pub argmax_y: Vec<f64>,
    /// `K + 2` nodes from `x` to `argmax_y`.
    pub path: Vec<Vec<f64>>,
    pub action: f64,
    pub quality: LoQuality,
}

/// Discrete action `sum_k L((g_{k+1} - g_k) / delta, g_k) delta` (left endpoint rule).
pub fn path_action(ctx: &HamiltonianContext, path: &[Vec<f64>], t: f64) -> f64 {
    let delta = t / (path.len() - 1) as f64;
    path.windows(2)
        .map(|w| {
            let s: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| (b - a) / delta).collect();
            ctx.lagrangian(&s, &w[0]).value * delta
        })
        .sum()
}

/// Minimum of the discrete action over paths from `x` to `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMinimum {
    pub action: f64,
    /// Interior nodes in class coordinates.
    pub q: Vec<DVector<f64>>,
    pub converged: bool,
    /// Actions reached from each start, in start order.
    pub start_actions: Vec<f64>,
}

struct PathProblem<'a> {
    ctx: &'a HamiltonianContext,
    x: DVector<f64>,
    qy: DVector<f64>,
    delta: f64,
    k: usize,
    d: usize,
}

impl PathProblem<'_> {
    fn node(&self, q: &[DVector<f64>], i: usize) -> DVector<f64> {
        let b = &self.ctx.structure.range_basis;
        if i == 0 {
            self.x.clone()
        } else if i == self.k + 1 {
            &self.x + b * &self.qy
        } else {
            &self.x + b * &q[i - 1]
        }
    }

    fn coord(&self, q: &[DVector<f64>], i: usize) -> DVector<f64> {
        if i == 0 {
            DVector::zeros(self.d)
        } else if i == self.k + 1 {
            self.qy.clone()
        } else {
            q[i - 1].clone()
        }
    }

    /// Action and, per segment, the maximising momenta in class coordinates.
    fn evaluate(&self, q: &[DVector<f64>], want_p: bool) -> (f64, Vec<DVector<f64>>) {
        let b = &self.ctx.structure.range_basis;
        let mut total = 0.0;
        let mut ps = Vec::new();
        for i in 0..=self.k {
            let g = self.node(q, i);
            if g.iter().any(|&v| v < 0.0) {
                return (f64::INFINITY, ps);
            }
            let ds = (self.coord(q, i + 1) - self.coord(q, i)) / self.delta;
            let s = b * &ds;
            let l = self.ctx.lagrangian(s.as_slice(), g.as_slice());
            if !l.value.is_finite() {
                return (f64::INFINITY, ps);
            }
            total += l.value * self.delta;
            if want_p {
                ps.push(b.transpose() * DVector::from_vec(l.p_star));
            }
        }
        (total, ps)
    }

    /// Gradient in the interior node coordinates:
    /// `p_{k-1} - p_k - delta B^T grad_x H(p_k, g_k)`.
    fn gradient(&self, q: &[DVector<f64>]) -> Option<(f64, Vec<DVector<f64>>)> {
        let b = &self.ctx.structure.range_basis;
        let (a, ps) = self.evaluate(q, true);
        if !a.is_finite() {
            return None;
        }
        let grads = (1..=self.k)
            .map(|i| {
                let g = self.node(q, i);
                let p_full = b * &ps[i];
                let gx = DVector::from_vec(self.ctx.grad_x(p_full.as_slice(), g.as_slice()));
                &ps[i - 1] - &ps[i] - self.delta * (b.transpose() * gx)
            })
            .collect();
        Some((a, grads))
    }

    fn flatten(v: &[DVector<f64>]) -> DVector<f64> {
        DVector::from_iterator(v.iter().map(|x| x.len()).sum(), v.iter().flat_map(|x| x.iter().copied()))
    }

    fn unflatten(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.k)
            .map(|i| DVector::from_iterator(self.d, v.rows(i * self.d, self.d).iter().copied()))
            .collect()
    }

    /// Block-tridiagonal Hessian by finite differences of the gradient, with
    /// every third node perturbed together.
    fn hessian(&self, q: &[DVector<f64>], g0: &[DVector<f64>]) -> Option<DMatrix<f64>> {
        let n = self.k * self.d;
        let mut hm = DMatrix::zeros(n, n);
        for colour in 0..3 {
            for a in 0..self.d {
                let mut qp = q.to_vec();
                let mut steps = vec![0.0; self.k];
                for i in (colour..self.k).step_by(3) {
                    let e = 1e-6 * (1.0 + qp[i][a].abs());
                    qp[i][a] += e;
                    steps[i] = e;
                }
                let (_, gp) = self.gradient(&qp)?;
                for i in (colour..self.k).step_by(3) {
                    let lo = i.saturating_sub(1);
                    let hi = (i + 1).min(self.k - 1);
                    for r in lo..=hi {
                        for bcomp in 0..self.d {
                            hm[(r * self.d + bcomp, i * self.d + a)] = (gp[r][bcomp] - g0[r][bcomp]) / steps[i];
                        }
                    }
                }
            }
        }
        Some(0.5 * (&hm + hm.transpose()))
    }

    /// Damped Newton with a gradient-descent fallback.
    fn minimise(&self, mut q: Vec<DVector<f64>>, opts: &LoOptions) -> (f64, Vec<DVector<f64>>, bool) {
        let Some((mut a, mut g)) = self.gradient(&q) else {
            return (f64::INFINITY, q, false);
        };
        for _ in 0..opts.max_newton {
            let gf = Self::flatten(&g);
            if gf.amax() <= opts.grad_tol * (1.0 + a.abs()) {
                return (a, q, true);
            }
            let dir = match self.hessian(&q, &g) {
                Some(hm) => {
                    let mut lambda = 0.0;
                    let mut step = None;
                    for _ in 0..20 {
                        let shifted = &hm + DMatrix::identity(hm.nrows(), hm.ncols()) * lambda;
                        if let Some(ch) = shifted.cholesky() {
                            step = Some(-ch.solve(&gf));
                            break;
                        }
                        lambda = if lambda == 0.0 { 1e-8 * (1.0 + hm.amax()) } else { lambda * 10.0 };
                    }
                    step.unwrap_or_else(|| -gf.clone())
                }
                None => -gf.clone(),
            };
            let qf = Self::flatten(&q);
            let slope = gf.dot(&dir);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-12 {
                let trial = self.unflatten(&(&qf + alpha * &dir));
                if let Some((at, gt)) = self.gradient(&trial) {
                    if at <= a + 1e-4 * alpha * slope.min(0.0) {
                        let stalled = (a - at).abs() <= 1e-15 * (1.0 + a.abs());
                        q = trial;
                        a = at;
                        g = gt;
                        accepted = true;
                        if stalled {
                            let gf = Self::flatten(&g);
                            return (a, q, gf.amax() <= 1e3 * opts.grad_tol * (1.0 + a.abs()));
                        }
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                let gf = Self::flatten(&g);
                return (a, q, gf.amax() <= 1e3 * opts.grad_tol * (1.0 + a.abs()));
            }
        }
        let gf = Self::flatten(&g);
        (a, q, gf.amax() <= opts.grad_tol * (1.0 + a.abs()))
    }
}

/// Minimises the discrete action over paths in the class of `x` ending at
/// `y = x + B qy`, from the given starting paths plus a straight line and a
/// rate-equation path bent onto `y`. The best start wins; ties go to the
/// earlier start.
pub fn min_action(
    ctx: &HamiltonianContext,
    x: &[f64],
    qy: &[f64],
    t: f64,
    opts: &LoOptions,
    warm: Option<&[DVector<f64>]>,
) -> ActionMinimum {
    let d = ctx.rank();
    let k = opts.nodes;
    let problem = PathProblem {
        ctx,
        x: DVector::from_column_slice(x),
        qy: DVector::from_column_slice(qy),
        delta: t / (k + 1) as f64,
        k,
        d,
    };
    let b = &ctx.structure.range_basis;
    let mut starts: Vec<Vec<DVector<f64>>> = Vec::new();
    starts.push((1..=k).map(|i| &problem.qy * (i as f64 / (k + 1) as f64)).collect());
    if let Ok(path) = rre::integrate_rre(&ctx.net, x, t, t / (k + 1) as f64) {
        if path.len() == k + 2 {
            let end = b.transpose() * (DVector::from_column_slice(&path[k + 1].x) - &problem.x);
            let miss = &problem.qy - end;
            starts.push(
                (1..=k)
                    .map(|i| {
                        let r = b.transpose() * (DVector::from_column_slice(&path[i].x) - &problem.x);
                        r + &miss * (i as f64 / (k + 1) as f64)
                    })
                    .collect(),
            );
        }
    }
    if let Some(w) = warm {
        if w.len() == k {
            starts.push(w.to_vec());
        }
    }
    let results: Vec<(f64, Vec<DVector<f64>>, bool)> =
        starts.into_par_iter().map(|s| problem.minimise(s, opts)).collect();
    let start_actions: Vec<f64> = results.iter().map(|r| r.0).collect();
    let best = results
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.0.total_cmp(&b.0).then(i.cmp(j)))
        .map(|(_, r)| r)
        .expect("at least one start");
    ActionMinimum {
        action: best.0,
        q: best.1,
        converged: best.2,
        start_actions,
    }
}

/// `sup_y [u0(y) - I_K(y; x, t)]` with `I_K` the minimal discrete action over
/// paths with `K` interior nodes inside the stoichiometric class of `x`.
pub fn lax_oleinik(
    ctx: &HamiltonianContext,
    u0: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    t: f64,
    opts: &LoOptions,
) -> Result<LoResult> {
    if !(t > 0.0) {
        return Err(CrnError::InvalidArgument(format!("time must be positive, got {t}")));
    }
    if x.len() != ctx.dims() {
        return Err(CrnError::DimensionMismatch {
            expected: ctx.dims(),
            got: x.len(),
        });
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(CrnError::NegativeState(x.to_vec()));
    }
    let d = ctx.rank();
    if d > 2 {
        return Err(CrnError::DimensionTooLarge(d));
    }
    if opts.nodes == 0 || opts.y_points < 3 {
        return Err(CrnError::InvalidArgument("need at least one node and three grid points".into()));
    }
    let b = ctx.structure.range_basis.clone();
    let xv = DVector::from_column_slice(x);
    let endpoint = |qy: &[f64]| -> Vec<f64> { (&xv + &b * DVector::from_column_slice(qy)).as_slice().to_vec() };

    if d == 0 {
        return Ok(LoResult {
            value: u0(x),
            argmax_y: x.to_vec(),
            path: vec![x.to_vec(); opts.nodes + 2],
            action: 0.0,
            quality: LoQuality {
                converged: true,
                optimizer_gap: 0.0,
            },
        });
    }

    // candidate endpoints on a grid, skipping those outside the orthant
    let axis: Vec<f64> = (0..opts.y_points)
        .map(|i| -opts.y_radius + 2.0 * opts.y_radius * i as f64 / (opts.y_points - 1) as f64)
        .collect();
    let grid: Vec<Vec<f64>> = if d == 1 {
        axis.iter().map(|&a| vec![a]).collect()
    } else {
        axis.iter().flat_map(|&a| axis.iter().map(move |&c| vec![a, c])).collect()
    };
    struct Eval {
        qy: Vec<f64>,
        objective: f64,
        min: ActionMinimum,
    }
    let evaluate = |qy: &[f64], warm: Option<&[DVector<f64>]>| -> Option<Eval> {
        let y = endpoint(qy);
        if y.iter().any(|&v| v < 0.0) {
            return None;
        }
        let min = min_action(ctx, x, qy, t, opts, warm);
        if !min.action.is_finite() {
            return None;
        }
        Some(Eval {
            qy: qy.to_vec(),
            objective: u0(&y) - min.action,
            min,
        })
    };
    let evals: Vec<Option<Eval>> = grid.par_iter().map(|qy| evaluate(qy, None)).collect();
    let mut all_converged = evals.iter().flatten().all(|e| e.min.converged);
    let (best_idx, best) = evals
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.as_ref().map(|e| (i, e)))
        .min_by(|(i, a), (j, b)| b.objective.total_cmp(&a.objective).then(i.cmp(j)))
        .ok_or_else(|| CrnError::InvalidArgument("no admissible endpoint in the search box".into()))?;
    let mut best = Eval {
        qy: best.qy.clone(),
        objective: best.objective,
        min: best.min.clone(),
    };
    let spacing = 2.0 * opts.y_radius / (opts.y_points - 1) as f64;
    let mut bracket_gap = 0.0;
    if opts.refine {
        // golden-section search along each class coordinate in turn
        let _ = best_idx;
        let invphi = (5f64.sqrt() - 1.0) / 2.0;
        for _round in 0..2 {
            for a in 0..d {
                let centre = best.qy[a];
                let (mut lo, mut hi) = (centre - spacing, centre + spacing);
                let at = |v: f64, warm: &[DVector<f64>]| {
                    let mut qy = best.qy.clone();
                    qy[a] = v;
                    evaluate(&qy, Some(warm))
                };
                let warm = best.min.q.clone();
                let mut c = hi - invphi * (hi - lo);
                let mut e = lo + invphi * (hi - lo);
                let mut fc = at(c, &warm);
                let mut fe = at(e, &warm);
                let score = |f: &Option<Eval>| f.as_ref().map_or(f64::NEG_INFINITY, |f| f.objective);
                for _ in 0..40 {
                    if score(&fc) >= score(&fe) {
                        hi = e;
                        e = c;
                        fe = fc;
                        c = hi - invphi * (hi - lo);
                        fc = at(c, &warm);
                    } else {
                        lo = c;
                        c = e;
                        fc = fe;
                        e = lo + invphi * (hi - lo);
                        fe = at(e, &warm);
                    }
                    if hi - lo < 1e-9 * (1.0 + centre.abs()) {
                        break;
                    }
                }
                for cand in [fc, fe].into_iter().flatten() {
                    if cand.objective > best.objective {
                        best = cand;
                    }
                }
                let span = hi - lo;
                bracket_gap = f64::max(bracket_gap, span * span);
            }
        }
        all_converged &= best.min.converged;
    }
    let spread = best
        .min
        .start_actions
        .iter()
        .filter(|a| a.is_finite())
        .map(|a| (a - best.min.action).abs())
        .fold(0.0, f64::max);
    let problem_nodes: Vec<Vec<f64>> = std::iter::once(x.to_vec())
        .chain(best.min.q.iter().map(|q| (&xv + &b * q).as_slice().to_vec()))
        .chain(std::iter::once(endpoint(&best.qy)))
        .collect();
    Ok(LoResult {
        value: best.objective,
        argmax_y: endpoint(&best.qy),
        path: problem_nodes,
        action: best.min.action,
        quality: LoQuality {
            converged: all_converged,
            optimizer_gap: spread.min(1.0) + bracket_gap,
        },
    })
}
