//! Reaction networks, mass-action fluxes, and stoichiometric structure.
//!
//! A network has `N` species and `M` reversible reaction channels
//! `sum nu_plus X  <=>  sum nu_minus X` with rates `k_plus`, `k_minus`.
//! The reaction vector of channel `j` is `nu_minus[j] - nu_plus[j]`.
//!
//! Two flux laws are provided:
//!
//! * macroscopic mass action, `k * prod x^nu`, extended by zero whenever a
//!   concentration is negative;
//! * mesoscopic mass action on a lattice of spacing `h`, which uses the
//!   falling factorial of the molecule count `x / h` and is also zero when a
//!   count is negative or too small for the reaction to fire.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Deserialize;

use crate::error::{CrnError, Result};

/// Orientation of a reaction channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `nu_plus -> nu_minus` at rate `k_plus`.
    Forward,
    /// `nu_minus -> nu_plus` at rate `k_minus`.
    Backward,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub nu_plus: Vec<u32>,
    pub nu_minus: Vec<u32>,
    pub k_plus: f64,
    pub k_minus: f64,
}

impl Reaction {
    pub fn new(nu_plus: Vec<u32>, nu_minus: Vec<u32>, k_plus: f64, k_minus: f64) -> Self {
        Reaction {
            nu_plus,
            nu_minus,
            k_plus,
            k_minus,
        }
    }

    /// Reactant stoichiometry and rate constant for the given orientation.
    pub fn side(&self, dir: Direction) -> (&[u32], f64) {
        match dir {
            Direction::Forward => (&self.nu_plus, self.k_plus),
            Direction::Backward => (&self.nu_minus, self.k_minus),
        }
    }
}

/// A validated reaction network with derived reaction vectors and mass vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    reaction_vectors: Vec<Vec<i64>>,
    mass_vector: Option<Vec<f64>>,
}

/// Evaluation point for grouped fluxes.
#[derive(Debug, Clone, Copy)]
pub enum FluxPoint<'a> {
    /// Macroscopic concentrations.
    Macro(&'a [f64]),
    /// Molecule counts on a lattice of spacing `h`.
    Meso { counts: &'a [i64], h: f64 },
}

/// All channels sharing one jump vector, up to orientation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JumpGroup {
    /// Canonical jump vector: first nonzero component positive.
    pub xi: Vec<i64>,
    /// `(j, same)` where `same` is true when `nu_j == xi` and false when `nu_j == -xi`.
    pub members: Vec<(usize, bool)>,
}

impl ReactionNetwork {
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self> {
        let n = species.len();
        if n == 0 {
            return Err(CrnError::InvalidNetwork("no species".into()));
        }
        let mut seen = HashSet::new();
        for s in &species {
            if !seen.insert(s.as_str()) {
                return Err(CrnError::DuplicateSpecies(s.clone()));
            }
        }
        for (j, r) in reactions.iter().enumerate() {
            if r.nu_plus.len() != n || r.nu_minus.len() != n {
                return Err(CrnError::InvalidNetwork(format!(
                    "reaction {j} has stoichiometry of the wrong length"
                )));
            }
            for (name, k) in [("k_plus", r.k_plus), ("k_minus", r.k_minus)] {
                if !(k >= 0.0) || !k.is_finite() {
                    return Err(CrnError::NegativeRate {
                        line: 0,
                        reaction: j,
                        name,
                        value: k,
                    });
                }
            }
        }
        let reaction_vectors = reactions
            .iter()
            .map(|r| {
                r.nu_minus
                    .iter()
                    .zip(&r.nu_plus)
                    .map(|(&m, &p)| m as i64 - p as i64)
                    .collect()
            })
            .collect();
        let mut net = ReactionNetwork {
            species,
            reactions,
            reaction_vectors,
            mass_vector: None,
        };
        net.mass_vector = mass_vector(&net);
        Ok(net)
    }

    /// Convenience constructor from `(nu_plus, nu_minus, k_plus, k_minus)` tuples.
    pub fn from_tuples(species: &[&str], reactions: &[(&[u32], &[u32], f64, f64)]) -> Result<Self> {
        Self::new(
            species.iter().map(|s| s.to_string()).collect(),
            reactions
                .iter()
                .map(|(p, m, kp, km)| Reaction::new(p.to_vec(), m.to_vec(), *kp, *km))
                .collect(),
        )
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn reaction_vectors(&self) -> &[Vec<i64>] {
        &self.reaction_vectors
    }

    pub fn reaction_vector(&self, j: usize) -> &[i64] {
        &self.reaction_vectors[j]
    }

    pub fn mass_vector(&self) -> Option<&[f64]> {
        self.mass_vector.as_deref()
    }

    /// True when a strictly positive conserved mass vector exists.
    pub fn conserves_mass(&self) -> bool {
        self.mass_vector.is_some()
    }

    /// Number of species, `N`.
    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Number of reaction channels, `M`.
    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    /// Macroscopic mass-action flux `k * prod x^nu`, zero if any `x < 0`.
    pub fn macro_flux(&self, j: usize, dir: Direction, x: &[f64]) -> f64 {
        if x.iter().any(|&v| v < 0.0) {
            return 0.0;
        }
        let (nu, k) = self.reactions[j].side(dir);
        if k == 0.0 {
            return 0.0;
        }
        nu.iter()
            .zip(x)
            .fold(k, |acc, (&e, &v)| if e == 0 { acc } else { acc * v.powi(e as i32) })
    }

    /// Gradient of [`Self::macro_flux`] with respect to `x`.
    ///
    /// Zero outside the nonnegative orthant, matching the zero extension.
    pub fn macro_flux_grad(&self, j: usize, dir: Direction, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        if x.iter().any(|&v| v < 0.0) {
            return;
        }
        let (nu, k) = self.reactions[j].side(dir);
        if k == 0.0 {
            return;
        }
        for l in 0..x.len() {
            if nu[l] == 0 {
                continue;
            }
            let mut g = k * nu[l] as f64 * x[l].powi(nu[l] as i32 - 1);
            for (m, (&e, &v)) in nu.iter().zip(x).enumerate() {
                if m != l && e != 0 {
                    g *= v.powi(e as i32);
                }
            }
            out[l] = g;
        }
    }

    /// Mesoscopic flux at molecule counts `counts` (position `counts * h`).
    ///
    /// `k * prod_l (n_l)(n_l - 1)...(n_l - nu_l + 1) h^nu_l`; zero when any
    /// count is negative or smaller than the number of molecules consumed.
    pub fn meso_flux_counts(&self, j: usize, dir: Direction, counts: &[i64], h: f64) -> f64 {
        if counts.iter().any(|&n| n < 0) {
            return 0.0;
        }
        let (nu, k) = self.reactions[j].side(dir);
        if k == 0.0 {
            return 0.0;
        }
        let mut flux = k;
        for (&e, &n) in nu.iter().zip(counts) {
            let e = e as i64;
            if n < e {
                return 0.0;
            }
            for i in 0..e {
                flux *= (n - i) as f64 * h;
            }
        }
        flux
    }

    /// Mesoscopic flux at a lattice point given in concentration units.
    pub fn meso_flux(&self, j: usize, dir: Direction, x: &[f64], h: f64) -> f64 {
        let counts = to_counts(x, h);
        self.meso_flux_counts(j, dir, &counts, h)
    }

    /// Jump vectors with `xi` and `-xi` identified.
    pub fn jump_groups(&self) -> Vec<JumpGroup> {
        let mut groups: BTreeMap<Vec<i64>, Vec<(usize, bool)>> = BTreeMap::new();
        for (j, nu) in self.reaction_vectors.iter().enumerate() {
            let Some(sign) = nu.iter().find(|&&v| v != 0).map(|v| v.signum()) else {
                continue;
            };
            let xi: Vec<i64> = nu.iter().map(|v| v * sign).collect();
            groups.entry(xi).or_default().push((j, sign > 0));
        }
        groups
            .into_iter()
            .map(|(xi, members)| JumpGroup { xi, members })
            .collect()
    }

    /// Grouped flux along jump vector `xi`.
    ///
    /// Forward: `sum_{nu_j = xi} Phi+_j + sum_{nu_j = -xi} Phi-_j`, and the
    /// mirror image for backward.
    pub fn grouped_flux(&self, xi: &[i64], dir: Direction, at: FluxPoint<'_>) -> Result<f64> {
        let neg: Vec<i64> = xi.iter().map(|v| -v).collect();
        let mut total = 0.0;
        let mut found = false;
        for (j, nu) in self.reaction_vectors.iter().enumerate() {
            let d = if nu.as_slice() == xi {
                dir
            } else if *nu == neg {
                dir.flip()
            } else {
                continue;
            };
            found = true;
            total += match at {
                FluxPoint::Macro(x) => self.macro_flux(j, d, x),
                FluxPoint::Meso { counts, h } => self.meso_flux_counts(j, d, counts, h),
            };
        }
        if !found || xi.iter().all(|&v| v == 0) {
            return Err(CrnError::NotAReactionVector(xi.to_vec()));
        }
        Ok(total)
    }

    /// Wegscheider matrix `nu` (`M x N`) as floats.
    pub fn wegscheider(&self) -> DMatrix<f64> {
        let (m, n) = (self.n_reactions(), self.n_species());
        DMatrix::from_fn(m, n, |j, l| self.reaction_vectors[j][l] as f64)
    }
}

/// Rounds concentrations to molecule counts on a lattice of spacing `h`.
pub fn to_counts(x: &[f64], h: f64) -> Vec<i64> {
    x.iter().map(|&v| (v / h).round() as i64).collect()
}

/// Converts counts to concentrations.
pub fn to_position(counts: &[i64], h: f64) -> Vec<f64> {
    counts.iter().map(|&n| n as f64 * h).collect()
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    species: RawSpecies,
    #[serde(default)]
    reaction: Vec<RawReaction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpecies {
    names: Vec<toml::Spanned<String>>,
}

type StoichTable = BTreeMap<String, toml::Spanned<toml::Value>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReaction {
    #[serde(default)]
    reactants: Option<StoichTable>,
    #[serde(default)]
    products: Option<StoichTable>,
    k_plus: toml::Spanned<f64>,
    #[serde(default)]
    k_minus: Option<toml::Spanned<f64>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses a network document.
///
/// ```toml
/// [species]
/// names = ["A", "B"]
///
/// [[reaction]]
/// reactants = { A = 1 }
/// products = { B = 1 }
/// k_plus = 1.0
/// k_minus = 2.0
/// ```
///
/// An empty `reactants` or `products` table stands for the environment.
pub fn parse_network(text: &str) -> Result<ReactionNetwork> {
    let raw: RawDocument = toml::from_str(text).map_err(|e| CrnError::Syntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })?;

    let mut species = Vec::with_capacity(raw.species.names.len());
    let mut seen = HashSet::new();
    for name in &raw.species.names {
        if !seen.insert(name.get_ref().clone()) {
            return Err(CrnError::DuplicateSpecies(name.get_ref().clone()));
        }
        species.push(name.get_ref().clone());
    }
    let n = species.len();

    let stoich = |table: &Option<StoichTable>| -> Result<Vec<u32>> {
        let mut nu = vec![0u32; n];
        for (name, value) in table.iter().flatten() {
            let line = line_of(text, value.span().start);
            let idx = species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| CrnError::UnknownSpecies {
                    line,
                    species: name.clone(),
                })?;
            let coeff = match value.get_ref() {
                toml::Value::Integer(i) if *i >= 0 && *i <= u32::MAX as i64 => *i as u32,
                other => {
                    return Err(CrnError::NonIntegerStoichiometry {
                        line,
                        species: name.clone(),
                        value: other.to_string(),
                    })
                }
            };
            nu[idx] = coeff;
        }
        Ok(nu)
    };

    let mut reactions = Vec::with_capacity(raw.reaction.len());
    for (j, r) in raw.reaction.iter().enumerate() {
        let nu_plus = stoich(&r.reactants)?;
        let nu_minus = stoich(&r.products)?;
        let check = |name: &'static str, v: &toml::Spanned<f64>| -> Result<f64> {
            let k = *v.get_ref();
            if !(k >= 0.0) || !k.is_finite() {
                return Err(CrnError::NegativeRate {
                    line: line_of(text, v.span().start),
                    reaction: j,
                    name,
                    value: k,
                });
            }
            Ok(k)
        };
        let k_plus = check("k_plus", &r.k_plus)?;
        let k_minus = match &r.k_minus {
            Some(v) => check("k_minus", v)?,
            None => 0.0,
        };
        reactions.push(Reaction::new(nu_plus, nu_minus, k_plus, k_minus));
    }
    ReactionNetwork::new(species, reactions)
}

// ---------------------------------------------------------------------------
// Mass vector

/// Exact rational basis of `ker(nu)` by reduced row echelon form.
pub fn rational_kernel(nu: &[Vec<i64>], n: usize) -> Vec<Vec<BigRational>> {
    let mut rows: Vec<Vec<BigRational>> = nu
        .iter()
        .map(|r| r.iter().map(|&v| BigRational::from_integer(BigInt::from(v))).collect())
        .collect();
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        let Some(p) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let inv = BigRational::one() / rows[rank][col].clone();
        for v in rows[rank].iter_mut() {
            *v = v.clone() * inv.clone();
        }
        for r in 0..rows.len() {
            if r != rank && !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                for c in 0..n {
                    let delta = factor.clone() * rows[rank][c].clone();
                    rows[r][c] = rows[r][c].clone() - delta;
                }
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![BigRational::zero(); n];
            v[f] = BigRational::one();
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -rows[r][f].clone();
            }
            v
        })
        .collect()
}

/// Finds `y >= 0` with `a y = b` by phase-one simplex in exact arithmetic
/// (Bland's rule). Returns `None` when infeasible.
fn rational_feasible(a: &[Vec<BigRational>], b: &[BigRational]) -> Option<Vec<BigRational>> {
    let m = a.len();
    let n = a.first().map_or(0, |r| r.len());
    // tableau columns: n structural, m artificial, then rhs
    let width = n + m + 1;
    let mut t: Vec<Vec<BigRational>> = (0..m)
        .map(|i| {
            let flip = b[i].is_negative();
            let mut row = vec![BigRational::zero(); width];
            for c in 0..n {
                row[c] = if flip { -a[i][c].clone() } else { a[i][c].clone() };
            }
            row[n + i] = BigRational::one();
            row[width - 1] = if flip { -b[i].clone() } else { b[i].clone() };
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    // reduced costs of minimising the sum of artificials
    loop {
        let mut cost = vec![BigRational::zero(); width];
        for c in n..n + m {
            cost[c] = BigRational::one();
        }
        for (i, &bv) in basis.iter().enumerate() {
            if bv >= n {
                for c in 0..width {
                    cost[c] = cost[c].clone() - t[i][c].clone();
                }
            }
        }
        let Some(enter) = (0..n + m).find(|&c| cost[c].is_negative() && !basis.contains(&c)) else {
            let objective = -cost[width - 1].clone();
            if !objective.is_zero() {
                return None;
            }
            let mut y = vec![BigRational::zero(); n];
            for (i, &bv) in basis.iter().enumerate() {
                if bv < n {
                    y[bv] = t[i][width - 1].clone();
                }
            }
            return Some(y);
        };
        let mut leave: Option<(usize, BigRational)> = None;
        for i in 0..m {
            if t[i][enter].is_positive() {
                let ratio = t[i][width - 1].clone() / t[i][enter].clone();
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // phase one is bounded below by zero, so some row always qualifies
        let (r, _) = leave?;
        let piv = t[r][enter].clone();
        for v in t[r].iter_mut() {
            *v = v.clone() / piv.clone();
        }
        for i in 0..m {
            if i != r && !t[i][enter].is_zero() {
                let f = t[i][enter].clone();
                for c in 0..width {
                    let d = f.clone() * t[r][c].clone();
                    t[i][c] = t[i][c].clone() - d;
                }
            }
        }
        basis[r] = enter;
    }
}

fn gcd(a: &BigInt, b: &BigInt) -> BigInt {
    let (mut a, mut b) = (a.abs(), b.abs());
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

/// Strictly positive `m` with `nu_j . m = 0` for every channel, if one exists.
///
/// The result is the primitive integer vector returned by an exact
/// phase-one simplex on `m = 1 + y, y >= 0`.
pub fn mass_vector(net: &ReactionNetwork) -> Option<Vec<f64>> {
    let n = net.n_species();
    let nu = net.reaction_vectors();
    if rational_kernel(nu, n).is_empty() {
        return None;
    }
    let a: Vec<Vec<BigRational>> = nu
        .iter()
        .map(|r| r.iter().map(|&v| BigRational::from_integer(BigInt::from(v))).collect())
        .collect();
    let b: Vec<BigRational> = nu
        .iter()
        .map(|r| BigRational::from_integer(BigInt::from(-r.iter().sum::<i64>())))
        .collect();
    let y = if a.is_empty() {
        vec![BigRational::zero(); n]
    } else {
        rational_feasible(&a, &b)?
    };
    let m: Vec<BigRational> = y.into_iter().map(|v| v + BigRational::one()).collect();
    let lcm = m.iter().fold(BigInt::one(), |acc, v| {
        let d = v.denom().clone();
        let g = gcd(&acc, &d);
        acc * d / g
    });
    let ints: Vec<BigInt> = m.iter().map(|v| (v * BigRational::from_integer(lcm.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, v| gcd(&acc, v));
    Some(
        ints.iter()
            .map(|v| {
                let q = v / &g;
                q.to_string().parse::<f64>().unwrap_or(f64::NAN)
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Stoichiometric structure

/// Orthonormal bases of the stoichiometric subspace `G = span{nu_j}` and of
/// `ker(nu)`, its orthogonal complement.
#[derive(Debug, Clone)]
pub struct StoichiometricStructure {
    /// `N x d` matrix with orthonormal columns spanning `G`.
    pub range_basis: DMatrix<f64>,
    /// `N x (N - d)` matrix with orthonormal columns spanning `ker(nu)`.
    pub kernel_basis: DMatrix<f64>,
}

impl StoichiometricStructure {
    pub fn new(net: &ReactionNetwork) -> Self {
        let n = net.n_species();
        let nu = net.wegscheider();
        let gram = nu.transpose() * &nu;
        let eig = SymmetricEigen::new(gram);
        let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let cut = 1e-10 * scale.max(1e-300);
        let mut range = Vec::new();
        let mut kernel = Vec::new();
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            let col = eig.eigenvectors.column(i).into_owned();
            if scale > 0.0 && lam > cut {
                range.push(col);
            } else {
                kernel.push(col);
            }
        }
        let stack = |cols: Vec<DVector<f64>>| {
            if cols.is_empty() {
                DMatrix::zeros(n, 0)
            } else {
                DMatrix::from_columns(&cols)
            }
        };
        StoichiometricStructure {
            range_basis: stack(range),
            kernel_basis: stack(kernel),
        }
    }

    /// `dim G`.
    pub fn rank(&self) -> usize {
        self.range_basis.ncols()
    }

    /// Orthogonal projection onto `G`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.range_basis * (self.range_basis.transpose() * v)
    }

    /// Euclidean distance from `v` to `G`.
    pub fn distance_to_range(&self, v: &DVector<f64>) -> f64 {
        (v - self.project(v)).norm()
    }
}

/// Built-in example networks.
pub mod catalog {
    use super::*;

    /// `0 <-> A` with immigration rate `k_plus` and degradation rate `k_minus`.
    pub fn birth_death(k_plus: f64, k_minus: f64) -> ReactionNetwork {
        ReactionNetwork::from_tuples(&["A"], &[(&[0], &[1], k_plus, k_minus)]).expect("valid network")
    }

    /// `A <-> B`.
    pub fn isomerization(k_plus: f64, k_minus: f64) -> ReactionNetwork {
        ReactionNetwork::from_tuples(&["A", "B"], &[(&[1, 0], &[0, 1], k_plus, k_minus)]).expect("valid network")
    }

    /// `A + B <-> C`.
    pub fn dimerization(k_plus: f64, k_minus: f64) -> ReactionNetwork {
        ReactionNetwork::from_tuples(&["A", "B", "C"], &[(&[1, 1, 0], &[0, 0, 1], k_plus, k_minus)])
            .expect("valid network")
    }

    /// Schlogl model `0 <-> X`, `2X <-> 3X`.
    pub fn schlogl(k: [f64; 4]) -> ReactionNetwork {
        ReactionNetwork::from_tuples(&["X"], &[(&[0], &[1], k[0], k[1]), (&[2], &[3], k[2], k[3])])
            .expect("valid network")
    }

    /// Looks up a network by name.
    pub fn by_name(name: &str) -> Option<ReactionNetwork> {
        match name {
            "birth-death" | "birth_death" => Some(birth_death(1.0, 1.0)),
            "isomerization" | "ab" => Some(isomerization(1.0, 1.0)),
            "dimerization" => Some(dimerization(1.0, 1.0)),
            "schlogl" => Some(schlogl([1.0, 1.0, 1.0, 1.0])),
            _ => None,
        }
    }
}
