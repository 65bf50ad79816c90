//! Truncated lattices `{0, h, ..., b_k h}^N`, grid functions on them, and the
//! table of admissible jumps shared by the master equation and the WKB schemes.

use crate::error::{CrnError, Result};
use crate::network::{Direction, ReactionNetwork};

/// Upper limit on the number of lattice points.
pub const MAX_STATES: usize = 20_000_000;

/// A box of lattice points with spacing `h`.
///
/// Points are stored in row-major order: the last species varies fastest,
/// so flat index order coincides with lexicographic order of the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    h: f64,
    bounds: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl Lattice {
    /// Lattice with `bounds[k] + 1` points along species `k`.
    pub fn new(h: f64, bounds: Vec<i64>) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(CrnError::InvalidArgument(format!("spacing must be positive, got {h}")));
        }
        if bounds.is_empty() {
            return Err(CrnError::InvalidArgument("lattice needs at least one dimension".into()));
        }
        if let Some(b) = bounds.iter().find(|&&b| b < 0) {
            return Err(CrnError::InvalidArgument(format!("negative lattice bound {b}")));
        }
        let mut strides = vec![1usize; bounds.len()];
        let mut len: usize = 1;
        for k in (0..bounds.len()).rev() {
            strides[k] = len;
            len = len
                .checked_mul(bounds[k] as usize + 1)
                .filter(|&l| l <= MAX_STATES)
                .ok_or(CrnError::LatticeTooLarge {
                    states: usize::MAX,
                    cap: MAX_STATES,
                })?;
        }
        Ok(Lattice { h, bounds, strides, len })
    }

    /// Lattice covering `[0, extent_k]` in concentration units.
    pub fn from_extent(h: f64, extent: &[f64]) -> Result<Self> {
        let bounds = extent.iter().map(|&e| (e / h + 1e-9).floor() as i64).collect();
        Self::new(h, bounds)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    /// Maximal count along each species.
    pub fn bounds(&self) -> &[i64] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, counts: &[i64]) -> bool {
        counts.len() == self.bounds.len() && counts.iter().zip(&self.bounds).all(|(&c, &b)| c >= 0 && c <= b)
    }

    /// Flat index of a count vector, `None` outside the box.
    pub fn index(&self, counts: &[i64]) -> Option<usize> {
        if !self.contains(counts) {
            return None;
        }
        Some(counts.iter().zip(&self.strides).map(|(&c, &s)| c as usize * s).sum())
    }

    /// Flat index of a point given in concentration units.
    pub fn index_of_position(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dims() {
            return Err(CrnError::DimensionMismatch {
                expected: self.dims(),
                got: x.len(),
            });
        }
        let counts: Vec<i64> = x.iter().map(|&v| (v / self.h).round() as i64).collect();
        let on_grid = x
            .iter()
            .zip(&counts)
            .all(|(&v, &c)| (v - c as f64 * self.h).abs() <= 1e-9 * self.h.max(v.abs()));
        if !on_grid {
            return Err(CrnError::OffLattice(x.to_vec()));
        }
        self.index(&counts).ok_or_else(|| CrnError::OffLattice(x.to_vec()))
    }

    pub fn counts_into(&self, mut idx: usize, out: &mut [i64]) {
        for (k, &s) in self.strides.iter().enumerate() {
            out[k] = (idx / s) as i64;
            idx %= s;
        }
    }

    pub fn counts(&self, idx: usize) -> Vec<i64> {
        let mut out = vec![0; self.dims()];
        self.counts_into(idx, &mut out);
        out
    }

    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.counts(idx).into_iter().map(|c| c as f64 * self.h).collect()
    }

    /// Radius of the largest sup-norm ball around the origin inside the box.
    pub fn inscribed_radius(&self) -> f64 {
        self.bounds.iter().copied().min().unwrap_or(0) as f64 * self.h
    }
}

/// Values on a lattice plus one constant standing for every point outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub far_field: f64,
}

impl GridFunction {
    pub fn new(lattice: Lattice, values: Vec<f64>, far_field: f64) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(CrnError::DimensionMismatch {
                expected: lattice.len(),
                got: values.len(),
            });
        }
        Ok(GridFunction {
            lattice,
            values,
            far_field,
        })
    }

    pub fn constant(lattice: &Lattice, c: f64) -> Self {
        GridFunction {
            lattice: lattice.clone(),
            values: vec![c; lattice.len()],
            far_field: c,
        }
    }

    /// Samples `f` at every lattice point (concentration units).
    pub fn from_fn(lattice: &Lattice, far_field: f64, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..lattice.len()).map(|i| f(&lattice.position(i))).collect();
        GridFunction {
            lattice: lattice.clone(),
            values,
            far_field,
        }
    }

    /// Point mass at `x`.
    pub fn delta(lattice: &Lattice, x: &[f64]) -> Result<Self> {
        let i = lattice.index_of_position(x)?;
        let mut values = vec![0.0; lattice.len()];
        values[i] = 1.0;
        Ok(GridFunction {
            lattice: lattice.clone(),
            values,
            far_field: 0.0,
        })
    }

    /// Value at counts, falling back to the far field outside the box.
    pub fn at_counts(&self, counts: &[i64]) -> f64 {
        self.lattice.index(counts).map_or(self.far_field, |i| self.values[i])
    }

    pub fn at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.values[self.lattice.index_of_position(x)?])
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    /// `max_i |self_i - other_i|`.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            lattice: self.lattice.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            far_field: f(self.far_field),
        }
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| v.is_nan()) || self.far_field.is_nan()
    }
}

/// Pairwise summation with a fixed tree shape.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if v.len() <= LEAF {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// One admissible jump out of a lattice point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub target: usize,
    pub reaction: usize,
    pub direction: Direction,
    /// Mesoscopic flux at the source (not divided by `h`).
    pub flux: f64,
}

/// Outgoing and incoming jumps for every point, in compressed row form.
///
/// A jump is admissible when its flux is positive and its target stays in
/// the box; jumps to negative counts already have zero flux, and jumps past
/// the upper bounds are disabled the same way.
#[derive(Debug, Clone)]
pub struct JumpTable {
    out_offsets: Vec<usize>,
    out: Vec<Jump>,
    in_offsets: Vec<usize>,
    /// Incoming jumps with `target` holding the source index.
    incoming: Vec<Jump>,
}

impl JumpTable {
    pub fn new(net: &ReactionNetwork, lattice: &Lattice) -> Result<Self> {
        if net.n_species() != lattice.dims() {
            return Err(CrnError::DimensionMismatch {
                expected: net.n_species(),
                got: lattice.dims(),
            });
        }
        let h = lattice.h();
        let n = lattice.len();
        let mut out_offsets = Vec::with_capacity(n + 1);
        let mut out = Vec::new();
        let mut counts = vec![0i64; lattice.dims()];
        let mut target = vec![0i64; lattice.dims()];
        out_offsets.push(0);
        for i in 0..n {
            lattice.counts_into(i, &mut counts);
            for j in 0..net.n_reactions() {
                let nu = net.reaction_vector(j);
                if nu.iter().all(|&v| v == 0) {
                    continue;
                }
                for dir in [Direction::Forward, Direction::Backward] {
                    let sign = if dir == Direction::Forward { 1 } else { -1 };
                    for k in 0..counts.len() {
                        target[k] = counts[k] + sign * nu[k];
                    }
                    let Some(t) = lattice.index(&target) else {
                        continue;
                    };
                    let flux = net.meso_flux_counts(j, dir, &counts, h);
                    if flux > 0.0 {
                        out.push(Jump {
                            target: t,
                            reaction: j,
                            direction: dir,
                            flux,
                        });
                    }
                }
            }
            out_offsets.push(out.len());
        }
        let mut in_count = vec![0usize; n + 1];
        for jump in &out {
            in_count[jump.target + 1] += 1;
        }
        for i in 0..n {
            in_count[i + 1] += in_count[i];
        }
        let in_offsets = in_count.clone();
        let mut fill = in_count;
        let mut incoming = vec![
            Jump {
                target: 0,
                reaction: 0,
                direction: Direction::Forward,
                flux: 0.0
            };
            out.len()
        ];
        for src in 0..n {
            for jump in &out[out_offsets[src]..out_offsets[src + 1]] {
                let slot = &mut fill[jump.target];
                incoming[*slot] = Jump { target: src, ..*jump };
                *slot += 1;
            }
        }
        Ok(JumpTable {
            out_offsets,
            out,
            in_offsets,
            incoming,
        })
    }

    pub fn len(&self) -> usize {
        self.out_offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outgoing(&self, i: usize) -> &[Jump] {
        &self.out[self.out_offsets[i]..self.out_offsets[i + 1]]
    }

    /// Jumps into `i`; each entry's `target` field is the source point.
    pub fn incoming(&self, i: usize) -> &[Jump] {
        &self.incoming[self.in_offsets[i]..self.in_offsets[i + 1]]
    }

    pub fn n_jumps(&self) -> usize {
        self.out.len()
    }

    /// Largest total outgoing flux over all points.
    pub fn max_exit_flux(&self) -> f64 {
        (0..self.len())
            .map(|i| self.outgoing(i).iter().map(|j| j.flux).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::catalog;

    #[test]
    fn index_roundtrip() {
        let lat = Lattice::new(0.5, vec![2, 3, 1]).unwrap();
        assert_eq!(lat.len(), 24);
        for i in 0..lat.len() {
            let c = lat.counts(i);
            assert_eq!(lat.index(&c), Some(i));
        }
        assert_eq!(lat.index(&[3, 0, 0]), None);
        assert_eq!(lat.index(&[0, -1, 0]), None);
        // lexicographic order
        assert!(lat.index(&[0, 3, 1]).unwrap() < lat.index(&[1, 0, 0]).unwrap());
        assert_eq!(lat.index_of_position(&[1.0, 1.5, 0.5]).unwrap(), lat.index(&[2, 3, 1]).unwrap());
        assert!(lat.index_of_position(&[0.3, 0.0, 0.0]).is_err());
    }

    #[test]
    fn too_large() {
        assert!(matches!(
            Lattice::new(0.01, vec![10_000, 10_000]),
            Err(CrnError::LatticeTooLarge { .. })
        ));
    }

    #[test]
    fn jumps_stay_in_box() {
        let net = catalog::birth_death(1.0, 1.0);
        let lat = Lattice::new(1.0, vec![2]).unwrap();
        let table = JumpTable::new(&net, &lat).unwrap();
        // 0 -> 1 (birth), 1 -> 0, 1 -> 2, 2 -> 1; no birth out of the top
        assert_eq!(table.n_jumps(), 4);
        assert_eq!(table.outgoing(2).len(), 1);
        assert_eq!(table.outgoing(2)[0].target, 1);
        assert_eq!(table.incoming(0).len(), 1);
        assert_eq!(table.incoming(0)[0].target, 1);
        assert_eq!(table.incoming(1).len(), 2);
    }
}
