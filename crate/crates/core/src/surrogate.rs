//! A deterministic stand-in for a weighted flight network.
//!
//! Nodes get heavy-tailed sizes; directed links are drawn Chung–Lu style with probability
//! proportional to the product of sizes, and carry independent lognormal weights, so rates in
//! the two directions of a route differ. Fixed fractions of nodes are isolated, only send or
//! only receive. The common rate scale is calibrated so the NIMFA prevalence hits a target.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::metastable::nimfa_steady_state;
use crate::network::{uniform_curing, InfectionRates, RateNetwork};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub n: usize,
    pub mean_out_links: f64,
    pub isolated_fraction: f64,
    pub source_fraction: f64,
    pub sink_fraction: f64,
    /// Tail index of the node sizes.
    pub size_shape: f64,
    /// Spread of the log link weights.
    pub weight_sigma: f64,
    pub curing: f64,
    /// NIMFA expected fraction of infected nodes after calibration.
    pub target_prevalence: f64,
    pub seed: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            n: 500,
            mean_out_links: 4.5,
            isolated_fraction: 0.10,
            source_fraction: 0.08,
            sink_fraction: 0.08,
            size_shape: 1.5,
            weight_sigma: 0.8,
            curing: 1.0,
            target_prevalence: 0.3317,
            seed: 20_210_301,
        }
    }
}

impl SurrogateParams {
    pub fn header(&self) -> String {
        format!(
            "surrogate n={} mean_out_links={} isolated_fraction={} source_fraction={} sink_fraction={} size_shape={} weight_sigma={} curing={} target_prevalence={} seed={}",
            self.n,
            self.mean_out_links,
            self.isolated_fraction,
            self.source_fraction,
            self.sink_fraction,
            self.size_shape,
            self.weight_sigma,
            self.curing,
            self.target_prevalence,
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub network: RateNetwork,
    pub params: SurrogateParams,
    pub rate_scale: f64,
    pub prevalence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Isolated,
    Source,
    Sink,
    Core,
}

pub fn generate_surrogate(p: &SurrogateParams) -> Result<Surrogate> {
    let n = p.n;
    if n < 10 {
        return Err(SisError::validation("surrogate needs at least 10 nodes"));
    }
    let iso = (p.isolated_fraction * n as f64).round() as usize;
    let src = (p.source_fraction * n as f64).round() as usize;
    let snk = (p.sink_fraction * n as f64).round() as usize;
    if iso + src + snk >= n {
        return Err(SisError::validation("role fractions leave no core nodes"));
    }
    let mut rng = rng_from_seed(derive_seed(p.seed, "surrogate"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut role = vec![Role::Core; n];
    for (pos, &i) in order.iter().enumerate() {
        role[i] = if pos < iso {
            Role::Isolated
        } else if pos < iso + src {
            Role::Source
        } else if pos < iso + src + snk {
            Role::Sink
        } else {
            Role::Core
        };
    }
    let pareto = Pareto::new(1.0, p.size_shape).map_err(|e| SisError::validation(e.to_string()))?;
    let size: Vec<f64> = (0..n).map(|_| pareto.sample(&mut rng)).collect();
    let sends = |i: usize| matches!(role[i], Role::Core | Role::Source);
    let receives = |j: usize| matches!(role[j], Role::Core | Role::Sink);

    // Calibrate the Chung–Lu constant to the requested expected link count.
    let senders: Vec<usize> = (0..n).filter(|&i| sends(i)).collect();
    let receivers: Vec<usize> = (0..n).filter(|&j| receives(j)).collect();
    let expected = |c: f64| -> f64 {
        senders
            .iter()
            .map(|&i| receivers.iter().filter(|&&j| j != i).map(|&j| (c * size[i] * size[j]).min(1.0)).sum::<f64>())
            .sum()
    };
    let target_links = p.mean_out_links * n as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while expected(hi) < target_links {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SisError::validation("requested link density is not attainable"));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target_links {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);

    let lognormal = LogNormal::new(0.0, p.weight_sigma).map_err(|e| SisError::validation(e.to_string()))?;
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    for &i in &senders {
        for &j in &receivers {
            if j != i && rng.random::<f64>() < (c * size[i] * size[j]).min(1.0) {
                links.push((i, j, lognormal.sample(&mut rng)));
            }
        }
    }
    // Every source sends and every sink receives at least once, through the largest core node.
    let hub = (0..n).filter(|&i| role[i] == Role::Core).max_by(|&a, &b| size[a].total_cmp(&size[b])).unwrap();
    for i in 0..n {
        if role[i] == Role::Source && !links.iter().any(|l| l.0 == i) {
            links.push((i, hub, lognormal.sample(&mut rng)));
        }
        if role[i] == Role::Sink && !links.iter().any(|l| l.1 == i) {
            links.push((hub, i, lognormal.sample(&mut rng)));
        }
    }

    let (base, _) = RateNetwork::from_edges(n, links, uniform_curing(n, p.curing))?;
    // Only the infection rates move, the curing rates stay put.
    let rescale = |kappa: f64| -> Result<RateNetwork> { base.scaled(kappa)?.with_curing(base.curing().to_vec()) };
    let prevalence = |kappa: f64| -> Result<f64> { Ok(nimfa_steady_state(&rescale(kappa)?)?.total / n as f64) };
    let (mut lo, mut hi) = (1e-6, 1.0);
    while prevalence(hi)? < p.target_prevalence {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(SisError::validation("target prevalence is not attainable"));
        }
    }
    for _ in 0..80 {
        let mid = (lo * hi).sqrt();
        if prevalence(mid)? < p.target_prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rate_scale = (lo * hi).sqrt();
    let network = rescale(rate_scale)?;
    let prev = nimfa_steady_state(&network)?.total / n as f64;
    Ok(Surrogate { network, params: *p, rate_scale, prevalence: prev })
}
