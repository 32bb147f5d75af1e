//! Fixtures shared by the benchmarks.

use clustered_sis::network::{uniform_curing, RateNetwork};

/// Complete graph with uniform rates.
pub fn complete_graph(n: usize, beta: f64, delta: f64) -> RateNetwork {
    let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, beta)));
    RateNetwork::from_edges(n, edges, uniform_curing(n, delta)).expect("valid complete graph").0
}

/// Largest component of a configuration-model graph with tail exponent 2.5, mean degree 8.
pub fn power_law(n: usize, delta: f64, seed: u64) -> RateNetwork {
    let mut p = clustered_sis::network::ConfigModelParams::new(n, 2.5, 8.0, seed);
    p.curing = delta;
    clustered_sis::network::generate_configuration_model(&p).expect("valid parameters").network
}
