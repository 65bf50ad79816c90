//! Fixtures shared by the benchmarks.

use crn_core::hje_discrete::DiscreteHamiltonian;
use crn_core::{catalog, GridFunction, Lattice, ReactionNetwork};

/// `A <=> B` on a square box with `(extent / h + 1)^2` states.
pub fn isomerization_lattice(h: f64, extent: f64) -> (ReactionNetwork, Lattice) {
    let net = catalog::isomerization(1.0, 2.0);
    let lat = Lattice::from_extent(h, &[extent, extent]).expect("lattice fits");
    (net, lat)
}

/// A smooth bounded test function.
pub fn bump(lat: &Lattice) -> GridFunction {
    GridFunction::from_fn(lat, 0.0, |x| -0.2 * x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().min(4.0))
}

pub fn hamiltonian(net: &ReactionNetwork, lat: &Lattice) -> DiscreteHamiltonian {
    DiscreteHamiltonian::new(net, lat).expect("valid network")
}
