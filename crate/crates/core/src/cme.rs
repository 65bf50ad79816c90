//! Master equation on a truncated lattice.
//!
//! `Q` is the backward generator acting on observables and `Q*` the forward
//! operator acting on probabilities. They are assembled by separate routines
//! so that their duality can be checked rather than assumed.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CrnError, Result};
use crate::lattice::{pairwise_sum, GridFunction, JumpTable, Lattice};
use crate::network::{Direction, FluxPoint, ReactionNetwork};

/// Cap on stored nonzeros per operator.
pub const MAX_ENTRIES: usize = 50_000_000;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if let Some(&last) = cols.last() {
                    if cols.len() > *row_ptr.last().unwrap() && last == c {
                        *vals.last_mut().unwrap() += v;
                        continue;
                    }
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b]
            .iter()
            .position(|&x| x == c)
            .map_or(0.0, |k| self.vals[a + k])
    }

    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().zip(&self.vals[a..b]).map(|(&c, &v)| v * x[c]).sum()
    }

    /// `y = A x`. Rows are independent, so the parallel path is deterministic.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        if self.n >= 4096 {
            y.par_iter_mut().enumerate().for_each(|(r, out)| *out = self.row_dot(r, x));
        } else {
            for (r, out) in y.iter_mut().enumerate() {
                *out = self.row_dot(r, x);
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                d[r][self.cols[k]] += self.vals[k];
            }
        }
        d
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }
}

/// Backward generator `Q` and forward operator `Q*` on a common lattice.
#[derive(Debug, Clone)]
pub struct Generator {
    pub lattice: Lattice,
    pub q: CsrMatrix,
    pub q_star: CsrMatrix,
}

/// Assembles `Q` from the jump table and `Q*` directly from the network.
///
/// `(Q w)(x) = sum_y r(x -> y) (w(y) - w(x))` and
/// `(Q* p)(x) = sum_y r(y -> x) p(y) - r(x) p(x)`, with `r = flux / h`.
/// Jumps that would leave the box are dropped on both sides.
pub fn build_generator(net: &ReactionNetwork, lattice: &Lattice) -> Result<Generator> {
    let n = lattice.len();
    let per_row = 2 * net.n_reactions() + 1;
    if n.saturating_mul(per_row) > MAX_ENTRIES {
        return Err(CrnError::LatticeTooLarge {
            states: n,
            cap: MAX_ENTRIES / per_row,
        });
    }
    let h = lattice.h();
    let table = JumpTable::new(net, lattice)?;
    let q_rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(table.outgoing(i).len() + 1);
            let mut diag = 0.0;
            for jump in table.outgoing(i) {
                let r = jump.flux / h;
                row.push((jump.target, r));
                diag -= r;
            }
            row.push((i, diag));
            row
        })
        .collect();

    let exit_rate = |counts: &[i64]| -> f64 {
        let mut total = 0.0;
        let mut target = vec![0i64; counts.len()];
        for j in 0..net.n_reactions() {
            let nu = net.reaction_vector(j);
            for (dir, sign) in [(Direction::Forward, 1), (Direction::Backward, -1)] {
                for k in 0..counts.len() {
                    target[k] = counts[k] + sign * nu[k];
                }
                if target != counts && lattice.contains(&target) {
                    total += net.meso_flux_counts(j, dir, counts, h) / h;
                }
            }
        }
        total
    };
    let q_star_rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let x = lattice.counts(i);
            let mut row = vec![(i, -exit_rate(&x))];
            let mut src = vec![0i64; x.len()];
            for j in 0..net.n_reactions() {
                let nu = net.reaction_vector(j);
                if nu.iter().all(|&v| v == 0) {
                    continue;
                }
                for (dir, sign) in [(Direction::Forward, 1), (Direction::Backward, -1)] {
                    for k in 0..x.len() {
                        src[k] = x[k] - sign * nu[k];
                    }
                    if let Some(s) = lattice.index(&src) {
                        let r = net.meso_flux_counts(j, dir, &src, h) / h;
                        if r > 0.0 {
                            row.push((s, r));
                        }
                    }
                }
            }
            row
        })
        .collect();
    Ok(Generator {
        lattice: lattice.clone(),
        q: CsrMatrix::from_rows(q_rows),
        q_star: CsrMatrix::from_rows(q_star_rows),
    })
}

/// Integrates `dp/dt = Q* p` by classical RK4 with `dt <= 0.5 / max |Q*_ii|`.
pub fn integrate_cme(gen: &Generator, p0: &GridFunction, t: f64) -> Result<GridFunction> {
    integrate_cme_observed(gen, p0, t, |_, _| {})
}

/// As [`integrate_cme`], calling `observe(time, p)` after every step.
pub fn integrate_cme_observed(
    gen: &Generator,
    p0: &GridFunction,
    t: f64,
    mut observe: impl FnMut(f64, &[f64]),
) -> Result<GridFunction> {
    let n = gen.lattice.len();
    if p0.values.len() != n {
        return Err(CrnError::DimensionMismatch {
            expected: n,
            got: p0.values.len(),
        });
    }
    if p0.has_nan() {
        return Err(CrnError::NaNInput);
    }
    if p0.values.iter().any(|&v| v < 0.0) || (p0.sum() - 1.0).abs() > 1e-9 {
        return Err(CrnError::InvalidArgument(
            "initial distribution must be nonnegative and sum to 1".into(),
        ));
    }
    if !(t >= 0.0) {
        return Err(CrnError::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let rate = gen.q_star.max_abs_diagonal();
    let mut p = p0.values.clone();
    if t == 0.0 || rate == 0.0 {
        return GridFunction::new(gen.lattice.clone(), p, 0.0);
    }
    let steps_f = (t * rate / 0.5).ceil();
    if steps_f > 1e9 {
        return Err(CrnError::StepUnderflow {
            steps: steps_f,
            horizon: t,
        });
    }
    let steps = steps_f as usize;
    let dt = t / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 0..steps {
        gen.q_star.matvec_into(&p, &mut k1);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * dt * k1[i];
        }
        gen.q_star.matvec_into(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = p[i] + 0.5 * dt * k2[i];
        }
        gen.q_star.matvec_into(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = p[i] + dt * k3[i];
        }
        gen.q_star.matvec_into(&tmp, &mut k4);
        for i in 0..n {
            p[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        observe((s + 1) as f64 * dt, &p);
    }
    GridFunction::new(gen.lattice.clone(), p, 0.0)
}

/// `|<w, Q* p> - <Q w, p>|`.
pub fn duality_residual(gen: &Generator, w: &GridFunction, p: &GridFunction) -> f64 {
    let qsp = gen.q_star.matvec(&p.values);
    let qw = gen.q.matvec(&w.values);
    let a: Vec<f64> = w.values.iter().zip(&qsp).map(|(x, y)| x * y).collect();
    let b: Vec<f64> = qw.iter().zip(&p.values).map(|(x, y)| x * y).collect();
    (pairwise_sum(&a) - pairwise_sum(&b)).abs()
}

/// How to normalise an invariant measure.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalization {
    /// Over every point of the box.
    Box,
    /// Over the stoichiometric class `{m . x = m . x0}` only; zero elsewhere.
    Class(Vec<f64>),
}

/// `ln n!` for `n = 0..=n_max`, by cumulative summation of `ln k`.
pub fn ln_factorials(n_max: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n_max + 1);
    let mut acc = 0.0;
    t.push(0.0);
    for k in 1..=n_max {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// Product-Poisson measure with intensities `x_s / h`, normalised over the box.
pub fn invariant_poisson(net: &ReactionNetwork, lattice: &Lattice, x_s: &[f64]) -> Result<GridFunction> {
    invariant_poisson_with(net, lattice, x_s, Normalization::Box)
}

pub fn invariant_poisson_with(
    net: &ReactionNetwork,
    lattice: &Lattice,
    x_s: &[f64],
    norm: Normalization,
) -> Result<GridFunction> {
    if x_s.len() != lattice.dims() {
        return Err(CrnError::DimensionMismatch {
            expected: lattice.dims(),
            got: x_s.len(),
        });
    }
    if x_s.iter().any(|&v| !(v > 0.0)) {
        return Err(CrnError::NonPositiveSteadyState(x_s.to_vec()));
    }
    let h = lattice.h();
    let lnf = ln_factorials(*lattice.bounds().iter().max().unwrap() as usize);
    let lam: Vec<f64> = x_s.iter().map(|v| v / h).collect();
    let class_level = match &norm {
        Normalization::Box => None,
        Normalization::Class(x0) => {
            let m = net.mass_vector().ok_or(CrnError::NoMassVector)?;
            Some((m.to_vec(), dot(m, x0)))
        }
    };
    let mut logs = vec![f64::NEG_INFINITY; lattice.len()];
    let mut counts = vec![0i64; lattice.dims()];
    for (i, slot) in logs.iter_mut().enumerate() {
        lattice.counts_into(i, &mut counts);
        if let Some((m, level)) = &class_level {
            let x: Vec<f64> = counts.iter().map(|&c| c as f64 * h).collect();
            if (dot(m, &x) - level).abs() > 1e-9 * (1.0 + level.abs()) {
                continue;
            }
        }
        *slot = counts
            .iter()
            .zip(&lam)
            .map(|(&c, &l)| c as f64 * l.ln() - l - lnf[c as usize])
            .sum();
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(CrnError::InvalidArgument("class does not meet the box".into()));
    }
    let mut values: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let z = pairwise_sum(&values);
    values.iter_mut().for_each(|v| *v /= z);
    GridFunction::new(lattice.clone(), values, 0.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative violation of pairwise balance,
/// `|Phi-_xi(x + xi h) pi(x + xi h) - Phi+_xi(x) pi(x)|`, over all grouped jump
/// vectors `xi` and all pairs inside the box, divided by the largest one-way
/// probability flux.
pub fn check_reversibility(net: &ReactionNetwork, pi: &GridFunction) -> f64 {
    let lattice = &pi.lattice;
    let h = lattice.h();
    let groups = net.jump_groups();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut counts = vec![0i64; lattice.dims()];
    let mut next = vec![0i64; lattice.dims()];
    for i in 0..lattice.len() {
        lattice.counts_into(i, &mut counts);
        for g in &groups {
            for k in 0..counts.len() {
                next[k] = counts[k] + g.xi[k];
            }
            let Some(t) = lattice.index(&next) else { continue };
            let a = net
                .grouped_flux(&g.xi, Direction::Forward, FluxPoint::Meso { counts: &counts, h })
                .unwrap_or(0.0)
                * pi.values[i];
            let b = net
                .grouped_flux(&g.xi, Direction::Backward, FluxPoint::Meso { counts: &next, h })
                .unwrap_or(0.0)
                * pi.values[t];
            worst = worst.max((a - b).abs());
            scale = scale.max(a).max(b);
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Channel-by-channel version of [`check_reversibility`]:
/// `|Phi-_j(x + nu_j h) pi(x + nu_j h) - Phi+_j(x) pi(x)|` for every `j`.
pub fn check_reversibility_per_reaction(net: &ReactionNetwork, pi: &GridFunction) -> f64 {
    let lattice = &pi.lattice;
    let h = lattice.h();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut counts = vec![0i64; lattice.dims()];
    let mut next = vec![0i64; lattice.dims()];
    for i in 0..lattice.len() {
        lattice.counts_into(i, &mut counts);
        for j in 0..net.n_reactions() {
            let nu = net.reaction_vector(j);
            if nu.iter().all(|&v| v == 0) {
                continue;
            }
            for k in 0..counts.len() {
                next[k] = counts[k] + nu[k];
            }
            let Some(t) = lattice.index(&next) else { continue };
            let a = net.meso_flux_counts(j, Direction::Forward, &counts, h) * pi.values[i];
            let b = net.meso_flux_counts(j, Direction::Backward, &next, h) * pi.values[t];
            worst = worst.max((a - b).abs());
            scale = scale.max(a).max(b);
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// `-h ln pi`, shifted so that its minimum is zero.
pub fn wkb_landscape(pi: &GridFunction, h: f64) -> Result<GridFunction> {
    if let Some(i) = pi.values.iter().position(|&v| !(v > 0.0)) {
        return Err(CrnError::ZeroProbability(i));
    }
    let raw: Vec<f64> = pi.values.iter().map(|&v| -h * v.ln()).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    GridFunction::new(pi.lattice.clone(), raw.iter().map(|v| v - min).collect(), f64::INFINITY)
}

/// Radius for one tightness level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TightnessRadius {
    pub level: f64,
    /// `None` when the radius exceeds the inscribed radius of the box, so the
    /// tail bound cannot be certified from data on the box.
    pub radius: Option<f64>,
}

/// Smallest Euclidean radius `R` with `sum_{|x| > R} p(x) <= exp(-level / h)`.
pub fn tightness_scan(p: &GridFunction, h: f64, levels: &[f64]) -> Vec<TightnessRadius> {
    let lattice = &p.lattice;
    let mut pts: Vec<(f64, f64)> = (0..lattice.len())
        .map(|i| {
            let r = lattice.position(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            (r, p.values[i])
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // tail[k] = mass strictly beyond radius pts[k].0
    let mut radii = Vec::new();
    let mut tails = Vec::new();
    let mut tail = 0.0;
    let mut k = pts.len();
    while k > 0 {
        let r = pts[k - 1].0;
        radii.push(r);
        tails.push(tail);
        while k > 0 && pts[k - 1].0 == r {
            tail += pts[k - 1].1;
            k -= 1;
        }
    }
    radii.reverse();
    tails.reverse();
    let inscribed = lattice.inscribed_radius();
    levels
        .iter()
        .map(|&level| {
            let bound = (-level / h).exp();
            let r = radii
                .iter()
                .zip(&tails)
                .find(|(_, &t)| t <= bound)
                .map(|(&r, _)| r)
                .unwrap_or(0.0);
            TightnessRadius {
                level,
                radius: (r <= inscribed + 1e-12).then_some(r),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::catalog;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn random_grid(lat: &Lattice, seed: u64) -> GridFunction {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GridFunction::new(lat.clone(), (0..lat.len()).map(|_| rng.gen::<f64>()).collect(), 0.0).unwrap()
    }

    #[test]
    fn zero_rates_give_zero_operators() {
        let net = catalog::isomerization(0.0, 0.0);
        let g = build_generator(&net, &Lattice::new(0.5, vec![3, 3]).unwrap()).unwrap();
        assert!(g.q.vals.iter().all(|&v| v == 0.0));
        assert!(g.q_star.vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn birth_death_three_point_matrix() {
        let (kp, km, h) = (1.5, 0.7, 0.5);
        let net = catalog::birth_death(kp, km);
        let g = build_generator(&net, &Lattice::new(h, vec![2]).unwrap()).unwrap();
        // hand assembly: column = source, row = target
        let up = kp / h;
        let down = |n: f64| km * n * h / h;
        let expect = [
            [-up, down(1.0), 0.0],
            [up, -up - down(1.0), down(2.0)],
            [0.0, up, -down(2.0)],
        ];
        let got = g.q_star.to_dense();
        for r in 0..3 {
            for c in 0..3 {
                assert_relative_eq!(got[r][c], expect[r][c], epsilon = 1e-15);
            }
        }
        // and Q is its transpose
        let q = g.q.to_dense();
        for r in 0..3 {
            for c in 0..3 {
                assert_relative_eq!(q[r][c], expect[c][r], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn column_sums_vanish() {
        for (net, bounds) in [
            (catalog::birth_death(2.0, 1.0), vec![30]),
            (catalog::isomerization(1.0, 3.0), vec![8, 8]),
            (catalog::dimerization(1.0, 2.0), vec![4, 4, 4]),
            (catalog::schlogl([1.0, 2.0, 0.5, 0.3]), vec![25]),
        ] {
            let lat = Lattice::new(0.25, bounds).unwrap();
            let g = build_generator(&net, &lat).unwrap();
            let d = g.q_star.to_dense();
            for c in 0..lat.len() {
                let s: f64 = (0..lat.len()).map(|r| d[r][c]).sum();
                assert!(s.abs() < 1e-14 * (1.0 + d[c][c].abs()), "column {c}: {s}");
            }
            let ones = vec![1.0; lat.len()];
            assert!(g.q.matvec(&ones).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn duality_on_random_pairs() {
        let net = catalog::dimerization(1.0, 2.0);
        let lat = Lattice::new(0.5, vec![3, 3, 3]).unwrap();
        let g = build_generator(&net, &lat).unwrap();
        for s in 0..20 {
            let w = random_grid(&lat, 2 * s);
            let p = random_grid(&lat, 2 * s + 1);
            assert!(duality_residual(&g, &w, &p) <= 1e-12);
        }
        let ones = GridFunction::constant(&lat, 1.0);
        let p = random_grid(&lat, 99);
        assert!(duality_residual(&g, &ones, &p) <= 1e-12);
    }

    #[test]
    fn delta_extracts_generator_column() {
        let net = catalog::schlogl([1.0, 2.0, 0.5, 0.3]);
        let lat = Lattice::new(0.25, vec![12]).unwrap();
        let g = build_generator(&net, &lat).unwrap();
        let p = GridFunction::delta(&lat, &[1.0]).unwrap();
        let col = g.q_star.matvec(&p.values);
        let i = lat.index(&[4]).unwrap();
        for r in 0..lat.len() {
            assert_eq!(col[r], g.q_star.get(r, i));
        }
    }

    fn dense_stationary(g: &Generator) -> Vec<f64> {
        let n = g.lattice.len();
        let d = g.q_star.to_dense();
        let mut a = DMatrix::from_fn(n, n, |r, c| d[r][c]);
        for c in 0..n {
            a[(n - 1, c)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn relaxes_to_truncated_poisson() {
        let net = catalog::birth_death(1.0, 1.0);
        let lat = Lattice::new(0.25, vec![16]).unwrap();
        let g = build_generator(&net, &lat).unwrap();
        let p0 = GridFunction::delta(&lat, &[0.0]).unwrap();
        let p = integrate_cme(&g, &p0, 20.0).unwrap();
        let stat = dense_stationary(&g);
        let err = p.values.iter().zip(&stat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "sup error {err}");
        // the stationary vector is the box-normalised Poisson(1/h)
        let pi = invariant_poisson(&net, &lat, &[1.0]).unwrap();
        let gap = pi.values.iter().zip(&stat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-13);
    }

    #[test]
    fn zero_time_is_identity() {
        let net = catalog::birth_death(1.0, 1.0);
        let lat = Lattice::new(0.25, vec![8]).unwrap();
        let g = build_generator(&net, &lat).unwrap();
        let p0 = GridFunction::delta(&lat, &[0.5]).unwrap();
        assert_eq!(integrate_cme(&g, &p0, 0.0).unwrap().values, p0.values);
    }

    #[test]
    fn class_is_invariant() {
        let net = catalog::dimerization(1.0, 1.0);
        let lat = Lattice::new(0.5, vec![4, 4, 4]).unwrap();
        let g = build_generator(&net, &lat).unwrap();
        let x0 = [1.0, 0.5, 0.5];
        let p0 = GridFunction::delta(&lat, &x0).unwrap();
        let p = integrate_cme(&g, &p0, 3.0).unwrap();
        let m = net.mass_vector().unwrap();
        let level = dot(m, &x0);
        for i in 0..lat.len() {
            if (dot(m, &lat.position(i)) - level).abs() > 1e-9 {
                assert_eq!(p.values[i], 0.0);
            }
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn poisson_formula_and_balance() {
        let net = catalog::birth_death(1.0, 1.0);
        let lat = Lattice::new(1.0, vec![30]).unwrap();
        let pi = invariant_poisson(&net, &lat, &[1.0]).unwrap();
        let mut fact = 1.0;
        for n in 0..10 {
            if n > 0 {
                fact *= n as f64;
            }
            assert_relative_eq!(pi.values[n] / pi.values[0], 1.0 / fact, max_relative = 1e-12);
        }
        let ab = catalog::isomerization(1.0, 1.0);
        let lat2 = Lattice::new(0.25, vec![12, 12]).unwrap();
        let pi2 = invariant_poisson(&ab, &lat2, &[1.0, 1.0]).unwrap();
        assert!(check_reversibility(&ab, &pi2) <= 1e-12);
        assert!(check_reversibility_per_reaction(&ab, &pi2) <= 1e-12);
        assert_relative_eq!(check_reversibility(&ab, &pi2), check_reversibility_per_reaction(&ab, &pi2), epsilon = 1e-15);
        let uniform = GridFunction::constant(&lat2, 1.0 / lat2.len() as f64);
        let skew = catalog::isomerization(1.0, 3.0);
        assert!(check_reversibility(&skew, &uniform) > 0.1);
    }

    #[test]
    fn class_normalisation() {
        let ab = catalog::isomerization(1.0, 1.0);
        let lat = Lattice::new(0.5, vec![6, 6]).unwrap();
        let pi = invariant_poisson_with(&ab, &lat, &[1.0, 1.0], Normalization::Class(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(pi.sum(), 1.0, epsilon = 1e-14);
        assert_eq!(pi.values[lat.index(&[0, 0]).unwrap()], 0.0);
        // binomial(4, 1/2) on the class x_A + x_B = 2
        let c = |a: i64| pi.values[lat.index(&[a, 4 - a]).unwrap()];
        assert_relative_eq!(c(2), 6.0 / 16.0, epsilon = 1e-14);
        assert_relative_eq!(c(0), 1.0 / 16.0, epsilon = 1e-14);
        assert!(invariant_poisson_with(&catalog::birth_death(1.0, 1.0), &Lattice::new(1.0, vec![3]).unwrap(), &[1.0], Normalization::Class(vec![1.0])).is_err());
    }

    #[test]
    fn landscape_shifts_to_zero() {
        let lat = Lattice::new(0.5, vec![4]).unwrap();
        let u = GridFunction::constant(&lat, 0.2);
        assert!(wkb_landscape(&u, 0.5).unwrap().values.iter().all(|&v| v == 0.0));
        let net = catalog::birth_death(1.0, 1.0);
        let lat = Lattice::new(0.1, vec![40]).unwrap();
        let pi = invariant_poisson(&net, &lat, &[1.0]).unwrap();
        let psi = wkb_landscape(&pi, 0.1).unwrap();
        let argmin = psi.values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        // Poisson(10) has equal mass at 9 and 10; the minimum sits at 1.0 or 0.9
        assert!((lat.position(argmin)[0] - 1.0).abs() <= 0.1 + 1e-12);
        let mut zero = pi.clone();
        zero.values[3] = 0.0;
        assert!(matches!(wkb_landscape(&zero, 0.1), Err(CrnError::ZeroProbability(3))));
    }

    #[test]
    fn tightness_radii() {
        let lat = Lattice::new(0.25, vec![16]).unwrap();
        let point = GridFunction::delta(&lat, &[1.5]).unwrap();
        for r in tightness_scan(&point, 0.25, &[0.5, 1.0, 3.0]) {
            assert_eq!(r.radius, Some(1.5));
        }
        let net = catalog::birth_death(1.0, 1.0);
        let pi = invariant_poisson(&net, &lat, &[1.0]).unwrap();
        let r = tightness_scan(&pi, 0.25, &[1.0])[0];
        // direct tail sum: P(N > 8) > e^-4 >= P(N > 9) for N ~ Poisson(4)
        assert_eq!(r.radius, Some(2.25));
        let uniform = GridFunction::constant(&Lattice::new(0.25, vec![16, 16]).unwrap(), 1.0 / 289.0);
        assert_eq!(tightness_scan(&uniform, 0.25, &[5.0])[0].radius, None);
    }
}
