//! Reaction rate equation `x' = sum_j nu_j (Phi+_j(x) - Phi-_j(x))`, its
//! detailed-balance steady states and the KL landscape.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CrnError, Result};
use crate::hje_continuous::HamiltonianContext;
use crate::network::{Direction, ReactionNetwork, StoichiometricStructure};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RreState {
    pub t: f64,
    pub x: Vec<f64>,
}

/// What `integrate_rre` had to clip to keep the state nonnegative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClipReport {
    pub clipped: usize,
    /// Most negative value set to zero.
    pub worst: f64,
}

const NEGATIVE_TOLERANCE: f64 = 1e-12;
const BLOW_UP_CAP: f64 = 1e12;

pub fn rre_rhs(net: &ReactionNetwork, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; net.n_species()];
    for j in 0..net.n_reactions() {
        let rate = net.macro_flux(j, Direction::Forward, x) - net.macro_flux(j, Direction::Backward, x);
        for (o, &v) in out.iter_mut().zip(net.reaction_vector(j)) {
            *o += v as f64 * rate;
        }
    }
    out
}

/// RK4 on `[0, horizon]` with `ceil(horizon / dt)` equal steps.
pub fn integrate_rre(net: &ReactionNetwork, x0: &[f64], horizon: f64, dt: f64) -> Result<Vec<RreState>> {
    integrate_rre_clipped(net, x0, horizon, dt).map(|(path, _)| path)
}

/// As [`integrate_rre`], also reporting clipped negatives. Values below
/// `-1e-12 (1 + |x|)` are not clipped: they mean the step is too large and
/// surface as an error.
pub fn integrate_rre_clipped(
    net: &ReactionNetwork,
    x0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<(Vec<RreState>, ClipReport)> {
    if x0.len() != net.n_species() {
        return Err(CrnError::DimensionMismatch {
            expected: net.n_species(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|&v| v < 0.0) {
        return Err(CrnError::NegativeState(x0.to_vec()));
    }
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(CrnError::InvalidArgument(format!("need dt > 0 and T >= 0, got dt={dt}, T={horizon}")));
    }
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 { 0.0 } else { horizon / steps as f64 };
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(RreState { t: 0.0, x: x.clone() });
    let mut report = ClipReport::default();
    let stage = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    for step in 1..=steps {
        let k1 = rre_rhs(net, &x);
        let k2 = rre_rhs(net, &stage(&x, &k1, 0.5 * h));
        let k3 = rre_rhs(net, &stage(&x, &k2, 0.5 * h));
        let k4 = rre_rhs(net, &stage(&x, &k3, h));
        for l in 0..n {
            x[l] += h / 6.0 * (k1[l] + 2.0 * k2[l] + 2.0 * k3[l] + k4[l]);
        }
        let t = step as f64 * h;
        let norm = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !norm.is_finite() || norm > BLOW_UP_CAP {
            return Err(CrnError::BlowUp(t));
        }
        for v in x.iter_mut() {
            if *v < 0.0 {
                if *v < -NEGATIVE_TOLERANCE * (1.0 + norm) {
                    return Err(CrnError::InvalidArgument(format!(
                        "RK4 step {h} drove a concentration to {v} at t={t}; reduce dt"
                    )));
                }
                report.clipped += 1;
                report.worst = report.worst.min(*v);
                *v = 0.0;
            }
        }
        out.push(RreState { t, x: x.clone() });
    }
    Ok((out, report))
}

/// Detailed-balance steady state in the stoichiometric class of `x0`.
///
/// Detailed balance is linear in `y = ln x`: `nu_j . y = ln(k+_j / k-_j)`.
/// A least-squares solve gives a particular `y0` (failing if the system is
/// inconsistent), and the class constraint is then a strictly convex problem
/// in the conserved directions `c`: minimise
/// `sum_i exp(y0 + K c)_i - c . K^T x0`, solved by damped Newton.
pub fn find_steady_state(net: &ReactionNetwork, x0: &[f64]) -> Result<Vec<f64>> {
    let n = net.n_species();
    if x0.len() != n {
        return Err(CrnError::DimensionMismatch { expected: n, got: x0.len() });
    }
    if x0.iter().any(|&v| v < 0.0) {
        return Err(CrnError::NegativeState(x0.to_vec()));
    }
    let m = net.n_reactions();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (j, r) in net.reactions().iter().enumerate() {
        if r.k_plus <= 0.0 || r.k_minus <= 0.0 {
            return Err(CrnError::NoDetailedBalance(format!("reaction {j} is irreversible")));
        }
        for (l, &v) in net.reaction_vector(j).iter().enumerate() {
            a[(j, l)] = v as f64;
        }
        b[j] = (r.k_plus / r.k_minus).ln();
    }
    let y0 = if m == 0 {
        DVector::zeros(n)
    } else {
        a.clone()
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| CrnError::NoDetailedBalance(e.to_string()))?
    };
    let inconsistency = (&a * &y0 - &b).amax();
    if inconsistency > 1e-10 * (1.0 + b.amax()) {
        return Err(CrnError::NoDetailedBalance(format!(
            "rate constants violate the cycle conditions (residual {inconsistency:e})"
        )));
    }
    let kernel = StoichiometricStructure::new(net).kernel_basis;
    let x0v = DVector::from_column_slice(x0);
    let target = kernel.transpose() * &x0v;
    let state = |c: &DVector<f64>| (&y0 + &kernel * c).map(f64::exp);
    let objective = |c: &DVector<f64>| state(c).sum() - c.dot(&target);
    let mut c = DVector::zeros(kernel.ncols());
    let mut phi = objective(&c);
    let mut converged = kernel.ncols() == 0;
    for _ in 0..200 {
        if converged {
            break;
        }
        let x = state(&c);
        let grad = kernel.transpose() * &x - &target;
        if grad.amax() <= 1e-14 * (1.0 + target.amax()) {
            converged = true;
            break;
        }
        let hess = kernel.transpose() * DMatrix::from_diagonal(&x) * &kernel;
        let Some(chol) = hess.cholesky() else {
            break;
        };
        let step = -chol.solve(&grad);
        if step.amax() <= 1e-13 * (1.0 + c.amax()) {
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut moved = false;
        while alpha > 1e-14 {
            let trial = &c + alpha * &step;
            let val = objective(&trial);
            if val.is_finite() && val <= phi + 4.0 * f64::EPSILON * phi.abs() {
                moved = (&trial - &c).amax() > 0.0;
                c = trial;
                phi = val;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            let x = state(&c);
            let grad = kernel.transpose() * &x - &target;
            converged = grad.amax() <= 1e-10 * (1.0 + target.amax());
            break;
        }
    }
    let xs = state(&c);
    if !converged || xs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CrnError::NonPositiveSteadyState(xs.as_slice().to_vec()));
    }
    let xs = xs.as_slice().to_vec();
    let residual = detailed_balance_residual(net, &xs);
    if residual > 1e-12 {
        return Err(CrnError::NewtonFailed(format!("steady-state residual {residual:e}")));
    }
    Ok(xs)
}

/// `max_j |Phi+_j - Phi-_j| / max(1, Phi+_j)`.
pub fn detailed_balance_residual(net: &ReactionNetwork, x: &[f64]) -> f64 {
    (0..net.n_reactions())
        .map(|j| {
            let fp = net.macro_flux(j, Direction::Forward, x);
            let fm = net.macro_flux(j, Direction::Backward, x);
            (fp - fm).abs() / fp.max(1.0)
        })
        .fold(0.0, f64::max)
}

/// `KL(x || x_s)` and its gradient `ln(x / x_s)`; `0 ln 0 = 0`, so the
/// gradient is `-inf` where `x_i = 0`.
pub fn kl_landscape(x: &[f64], x_s: &[f64]) -> (f64, Vec<f64>) {
    let value = x
        .iter()
        .zip(x_s)
        .map(|(&a, &s)| if a == 0.0 { s } else { a * (a / s).ln() - a + s })
        .sum();
    let grad = x.iter().zip(x_s).map(|(&a, &s)| (a / s).ln()).collect();
    (value, grad)
}

/// Largest `L(x'(t), x(t))` along an interior rate-equation path, with the
/// velocity taken from the right-hand side.
pub fn zero_cost_check(ctx: &HamiltonianContext, path: &[RreState]) -> Result<f64> {
    path_cost(ctx, path, 1.0)
}

/// As [`zero_cost_check`] with the velocity multiplied by `speed`.
pub fn path_cost(ctx: &HamiltonianContext, path: &[RreState], speed: f64) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for s in path {
        if s.x.iter().any(|&v| v <= 0.0) {
            return Err(CrnError::InvalidArgument(format!("path leaves the interior at t={}", s.t)));
        }
        let v: Vec<f64> = rre_rhs(&ctx.net, &s.x).into_iter().map(|v| v * speed).collect();
        worst = worst.max(ctx.lagrangian(&v, &s.x).value);
    }
    Ok(worst)
}

/// Largest `d/dt KL(x(t) || x_s) = ln(x / x_s) . x'` along a path; nonpositive
/// for detailed-balance networks.
pub fn kl_dissipation(net: &ReactionNetwork, path: &[RreState], x_s: &[f64]) -> f64 {
    path.iter()
        .filter(|s| s.x.iter().all(|&v| v > 0.0))
        .map(|s| {
            let (_, g) = kl_landscape(&s.x, x_s);
            g.iter().zip(rre_rhs(net, &s.x)).map(|(a, b)| a * b).sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::catalog;
    use approx::assert_relative_eq;

    #[test]
    fn rhs_examples() {
        let net = catalog::isomerization(1.0, 1.0);
        assert_eq!(rre_rhs(&net, &[2.0, 0.0]), vec![-2.0, 2.0]);
        assert_eq!(rre_rhs(&net, &[1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn relaxation_closed_form() {
        let net = catalog::isomerization(1.0, 1.0);
        let path = integrate_rre(&net, &[2.0, 0.0], 1.0, 0.01).unwrap();
        assert_eq!(path.len(), 101);
        let last = path.last().unwrap();
        assert_relative_eq!(last.t, 1.0, epsilon = 1e-12);
        assert_relative_eq!(last.x[0], 1.0 + (-2.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn mass_is_conserved() {
        let net = catalog::dimerization(1.0, 0.5);
        let path = integrate_rre(&net, &[1.0, 2.0, 0.0], 10.0, 0.01).unwrap();
        let m = [1.0, 1.0, 2.0];
        let mass = |x: &[f64]| x.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>();
        for s in &path {
            assert!((mass(&s.x) - 3.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn steady_states() {
        let xs = find_steady_state(&catalog::isomerization(1.0, 1.0), &[2.0, 0.0]).unwrap();
        assert_relative_eq!(xs[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(xs[1], 1.0, epsilon = 1e-12);
        let xs = find_steady_state(&catalog::birth_death(1.0, 1.0), &[3.0]).unwrap();
        assert_relative_eq!(xs[0], 1.0, epsilon = 1e-12);
        let xs = find_steady_state(&catalog::isomerization(1.0, 2.0), &[0.0, 3.0]).unwrap();
        assert_relative_eq!(xs[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(xs[1], 1.0, epsilon = 1e-12);
        // A + B <=> C with class x_A + x_C = 1, x_B + x_C = 2: x_C = x_A x_B
        let xs = find_steady_state(&catalog::dimerization(1.0, 1.0), &[1.0, 2.0, 0.0]).unwrap();
        assert_relative_eq!(xs[2], xs[0] * xs[1], epsilon = 1e-12);
        assert_relative_eq!(xs[0] + xs[2], 1.0, epsilon = 1e-12);
        // Newton stalls at rounding level here; must still converge
        let xs = find_steady_state(&catalog::isomerization(1.0, 2.0), &[2.8998412594298193, 0.4889836600796574]).unwrap();
        assert_relative_eq!(xs[0], 2.0 * xs[1], epsilon = 1e-12);
    }

    #[test]
    fn irreversible_networks_have_no_db_state() {
        let net = ReactionNetwork::from_tuples(&["A"], &[(&[0], &[1], 1.0, 0.0)]).unwrap();
        assert!(matches!(find_steady_state(&net, &[1.0]), Err(CrnError::NoDetailedBalance(_))));
    }

    #[test]
    fn kl_values() {
        let (v, g) = kl_landscape(&[2.0], &[1.0]);
        assert_relative_eq!(v, 2.0 * 2f64.ln() - 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[0], 2f64.ln());
        assert_eq!(kl_landscape(&[1.5, 0.5], &[1.5, 0.5]).0, 0.0);
        assert_eq!(kl_landscape(&[0.0], &[0.7]).0, 0.7);
    }

    #[test]
    fn costs_along_rre() {
        let net = catalog::isomerization(1.0, 1.0);
        let ctx = HamiltonianContext::new(&net);
        let path = integrate_rre(&net, &[1.8, 0.2], 2.0, 0.05).unwrap();
        assert!(zero_cost_check(&ctx, &path).unwrap() <= 1e-12);
        assert!(path_cost(&ctx, &path, 2.0).unwrap() > 1e-6);
        assert!(kl_dissipation(&net, &path, &[1.0, 1.0]) <= 0.0);
    }
}
