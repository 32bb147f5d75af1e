//! Quasi-stationary distributions of small SIS chains, used as exact oracles.
//!
//! Both solvers build the sub-generator `Q_T` on the transient states (the absorbing
//! all-healthy state removed) and find its left Perron vector by power iteration on the
//! uniformized matrix `I + Q_T / Λ`. The decay rate `θ` of the quasi-stationary law is the
//! probability flux into the absorbing state.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Result, SisError};
use crate::network::InfectionRates;

/// Largest network accepted by [`qsd_exact_chain`].
pub const MAX_EXACT_NODES: usize = 14;
/// Largest clustered state space accepted by [`qsd_cluster_rates`].
pub const MAX_CLUSTER_STATES: usize = 1_000_000;
const MAX_TRANSITIONS: usize = 30_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsdOptions {
    /// Stop when the L1 change of the normalized iterate drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QsdOptions {
    fn default() -> Self {
        QsdOptions { tol: 1e-14, max_iter: 20_000_000 }
    }
}

/// Quasi-stationary law of the total number of infected nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    /// Totals `1..=n`.
    pub support: Vec<usize>,
    pub probability: Vec<f64>,
    /// Decay rate of the survival probability under the quasi-stationary law.
    pub theta: f64,
    /// `‖π Q_T + θ π‖₁` at termination.
    pub residual: f64,
    pub iterations: usize,
    pub state_count: usize,
}

impl ExactDistribution {
    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probability).map(|(&s, p)| s as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support.iter().zip(&self.probability).map(|(&s, p)| (s as f64 - m).powi(2) * p).sum()
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Transient sub-generator stored by incoming transitions.
struct SubGenerator {
    exit: Vec<f64>,
    in_ptr: Vec<usize>,
    in_src: Vec<u32>,
    in_rate: Vec<f64>,
}

impl SubGenerator {
    fn from_outgoing(exit: Vec<f64>, edges: Vec<(u32, u32, f64)>) -> Self {
        let m = exit.len();
        let mut in_ptr = vec![0usize; m + 1];
        for &(_, t, _) in &edges {
            in_ptr[t as usize + 1] += 1;
        }
        for k in 0..m {
            in_ptr[k + 1] += in_ptr[k];
        }
        let mut fill = in_ptr.clone();
        let mut in_src = vec![0u32; edges.len()];
        let mut in_rate = vec![0.0; edges.len()];
        for (s, t, r) in edges {
            let p = &mut fill[t as usize];
            in_src[*p] = s;
            in_rate[*p] = r;
            *p += 1;
        }
        SubGenerator { exit, in_ptr, in_src, in_rate }
    }

    /// Left Perron vector of `Q_T`, started from the uniform law.
    fn qsd(&self, opts: &QsdOptions) -> Result<(Vec<f64>, f64, f64, usize)> {
        let m = self.exit.len();
        let lambda = 1.05 * self.exit.iter().copied().fold(0.0, f64::max);
        if lambda == 0.0 {
            return Err(SisError::numerical("sub-generator has no transitions"));
        }
        let mut x = vec![1.0 / m as f64; m];
        let mut y = vec![0.0; m];
        for it in 1..=opts.max_iter {
            y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(t, yt)| {
                let mut acc = x[t] * (1.0 - self.exit[t] / lambda);
                for p in self.in_ptr[t]..self.in_ptr[t + 1] {
                    acc += x[self.in_src[p] as usize] * self.in_rate[p] / lambda;
                }
                *yt = acc;
            });
            let mass: f64 = y.iter().sum();
            if !(mass > 0.0) {
                return Err(SisError::numerical("quasi-stationary iteration lost all mass"));
            }
            let mut change = 0.0;
            for (yt, xt) in y.iter_mut().zip(&x) {
                *yt /= mass;
                change += (*yt - xt).abs();
            }
            std::mem::swap(&mut x, &mut y);
            if change < opts.tol {
                let theta = lambda * (1.0 - mass);
                return Ok((x, theta, lambda * mass * change, it));
            }
        }
        Err(SisError::numerical(format!("quasi-stationary iteration did not converge in {} iterations", opts.max_iter)))
    }
}

/// QSD of the full `2^n`-state SIS chain, returned as the law of the total infected count.
pub fn qsd_exact_chain<R: InfectionRates>(rates: &R, opts: &QsdOptions) -> Result<ExactDistribution> {
    let n = rates.node_count();
    if n == 0 {
        return Err(SisError::validation("network has no nodes"));
    }
    if n > MAX_EXACT_NODES {
        return Err(SisError::capacity(format!("exact chain supports at most {MAX_EXACT_NODES} nodes, got {n}")));
    }
    let a: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { rates.rate(i, j) }).collect()).collect();
    let delta = rates.curing();
    let m = (1usize << n) - 1;
    // transient state `s` (bitmask, nonzero) lives at index s - 1
    let mut exit = vec![0.0; m];
    let mut edges = Vec::with_capacity(m * n);
    for s in 1..=m {
        let from = (s - 1) as u32;
        let mut out = 0.0;
        for j in 0..n {
            if s >> j & 1 == 1 {
                out += delta[j];
                let t = s & !(1 << j);
                if t != 0 {
                    edges.push((from, (t - 1) as u32, delta[j]));
                }
            } else {
                let pressure: f64 = (0..n).filter(|&i| s >> i & 1 == 1).map(|i| a[i][j]).sum();
                if pressure > 0.0 {
                    out += pressure;
                    edges.push((from, (s | 1 << j) as u32 - 1, pressure));
                }
            }
        }
        exit[s - 1] = out;
    }
    let (pi, theta, residual, iterations) = SubGenerator::from_outgoing(exit, edges).qsd(opts)?;
    let mut probability = vec![0.0; n];
    for s in 1..=m {
        probability[s.count_ones() as usize - 1] += pi[s - 1];
    }
    Ok(ExactDistribution { support: (1..=n).collect(), probability, theta, residual, iterations, state_count: m })
}

/// QSD of the clustered chain in which cluster `j` (size `sizes[j]`, infected count `N_j`)
/// gains an infected node at rate `(sizes[j] - N_j) Σ_l N_l coupling[(j, l)] / n` and loses
/// one at rate `N_j curing[j]`.
pub fn qsd_cluster_rates(
    sizes: &[usize],
    coupling: &DMatrix<f64>,
    curing: &[f64],
    n: usize,
    opts: &QsdOptions,
) -> Result<ExactDistribution> {
    let r = sizes.len();
    if r == 0 || coupling.nrows() != r || coupling.ncols() != r || curing.len() != r {
        return Err(SisError::validation("cluster chain dimensions disagree"));
    }
    let mut states: usize = 1;
    for &s in sizes {
        states = states
            .checked_mul(s + 1)
            .filter(|&v| v <= MAX_CLUSTER_STATES + 1)
            .ok_or_else(|| SisError::capacity(format!("clustered state space exceeds {MAX_CLUSTER_STATES} states")))?;
    }
    let m = states - 1;
    if m == 0 {
        return Err(SisError::validation("clusters are empty"));
    }
    if m.saturating_mul(2 * r) > MAX_TRANSITIONS {
        return Err(SisError::capacity("clustered chain has too many transitions"));
    }
    // mixed radix: N_0 varies fastest
    let mut stride = vec![1usize; r];
    for j in 1..r {
        stride[j] = stride[j - 1] * (sizes[j - 1] + 1);
    }
    let inv_n = 1.0 / n as f64;
    let mut exit = vec![0.0; m];
    let mut edges = Vec::with_capacity(m * 2 * r);
    let mut counts = vec![0usize; r];
    let mut totals = vec![0usize; m];
    for s in 1..=m {
        let mut rem = s;
        for j in 0..r {
            counts[j] = rem % (sizes[j] + 1);
            rem /= sizes[j] + 1;
        }
        totals[s - 1] = counts.iter().sum();
        let from = (s - 1) as u32;
        let mut out = 0.0;
        for j in 0..r {
            if counts[j] > 0 {
                let d = counts[j] as f64 * curing[j];
                out += d;
                let t = s - stride[j];
                if t != 0 {
                    edges.push((from, (t - 1) as u32, d));
                }
            }
            if counts[j] < sizes[j] {
                let pressure: f64 = (0..r).map(|l| counts[l] as f64 * coupling[(j, l)]).sum();
                let b = inv_n * (sizes[j] - counts[j]) as f64 * pressure;
                if b > 0.0 {
                    out += b;
                    edges.push((from, (s + stride[j] - 1) as u32, b));
                }
            }
        }
        exit[s - 1] = out;
    }
    let (pi, theta, residual, iterations) = SubGenerator::from_outgoing(exit, edges).qsd(opts)?;
    let total: usize = sizes.iter().sum();
    let mut probability = vec![0.0; total];
    for (k, p) in pi.iter().enumerate() {
        probability[totals[k] - 1] += p;
    }
    Ok(ExactDistribution { support: (1..=total).collect(), probability, theta, residual, iterations, state_count: m })
}

/// QSD of the clustered birth–death chain of `cl`.
pub fn qsd_cluster_chain(cl: &Clustering, opts: &QsdOptions) -> Result<ExactDistribution> {
    qsd_cluster_rates(&cl.sizes, &cl.coupling(), &cl.ydelta, cl.n, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{uniform_curing, RateNetwork};

    fn complete(n: usize, beta: f64, delta: f64) -> RateNetwork {
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, beta)));
        RateNetwork::from_edges(n, edges, uniform_curing(n, delta)).unwrap().0
    }

    /// Left Perron vector of a small dense birth–death sub-generator by inverse iteration
    /// through nalgebra's LU, used as an independent check.
    fn birth_death_oracle(n: usize, birth: impl Fn(usize) -> f64, death: impl Fn(usize) -> f64) -> (Vec<f64>, f64) {
        let mut q = DMatrix::<f64>::zeros(n, n);
        for k in 1..=n {
            let i = k - 1;
            q[(i, i)] = -(birth(k) + death(k));
            if k < n {
                q[(i, i + 1)] = birth(k);
            }
            if k > 1 {
                q[(i, i - 1)] = death(k);
            }
        }
        let qt = q.transpose();
        let mut v = nalgebra::DVector::from_element(n, 1.0);
        let shift = 0.0;
        let lu = (qt.clone() - DMatrix::identity(n, n) * shift).lu();
        for _ in 0..200 {
            v = lu.solve(&v).unwrap();
            let s = v.sum();
            v /= s;
        }
        let theta = -(qt * &v).sum();
        (v.iter().copied().collect(), theta)
    }

    #[test]
    fn single_node_is_concentrated_at_one() {
        let (net, _) = RateNetwork::from_edges(1, vec![], vec![1.0]).unwrap();
        let d = qsd_exact_chain(&net, &QsdOptions::default()).unwrap();
        assert_eq!(d.probability, vec![1.0]);
        assert!((d.theta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strongly_coupled_pair_is_mostly_fully_infected() {
        let net = complete(2, 10.0, 1.0);
        let d = qsd_exact_chain(&net, &QsdOptions::default()).unwrap();
        assert!(d.probability[1] > 0.8, "{:?}", d.probability);
        // States 1 (either node) and 2: sub-generator [[-11, 10], [2, -2]] on (one, both).
        // Left Perron vector of [[-11,10],[2,-2]]: eigenvalue θ solves θ² - 13θ + 2 = 0.
        let theta = (13.0 - (169.0f64 - 8.0).sqrt()) / 2.0;
        assert!((d.theta - theta).abs() < 1e-10);
        let p_one = 2.0 / (2.0 + 11.0 - theta);
        assert!((d.probability[0] - p_one).abs() < 1e-10);
    }

    #[test]
    fn complete_graph_matches_birth_death_oracle() {
        let n = 10;
        let net = complete(n, 1.0, 4.0);
        let d = qsd_exact_chain(&net, &QsdOptions::default()).unwrap();
        let (p, theta) = birth_death_oracle(n, |k| (k * (n - k)) as f64, |k| 4.0 * k as f64);
        for k in 0..n {
            assert!((d.probability[k] - p[k]).abs() < 1e-10, "{k}");
        }
        assert!((d.theta - theta).abs() < 1e-10);
        assert!(d.residual < 1e-10);
        let total: f64 = d.probability.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_equals_complete_graph() {
        let n = 10;
        let g = DMatrix::from_element(1, 1, 10.0);
        let c = qsd_cluster_rates(&[n], &g, &[4.0], n, &QsdOptions::default()).unwrap();
        let e = qsd_exact_chain(&complete(n, 1.0, 4.0), &QsdOptions::default()).unwrap();
        for k in 0..n {
            assert!((c.probability[k] - e.probability[k]).abs() < 1e-10);
        }
        assert_eq!(c.state_count, n);
    }

    #[test]
    fn one_node_cluster() {
        let g = DMatrix::from_element(1, 1, 3.0);
        let c = qsd_cluster_rates(&[1], &g, &[2.0], 1, &QsdOptions::default()).unwrap();
        assert_eq!(c.probability, vec![1.0]);
    }

    #[test]
    fn decoupled_pair_decays_like_one_cluster() {
        // With no cross infection the slowest surviving mode keeps exactly one cluster alive,
        // so the total count follows the single-cluster law and θ is unchanged.
        let m = 6;
        let n = 2 * m;
        let mut g = DMatrix::zeros(2, 2);
        g[(0, 0)] = 12.0;
        g[(1, 1)] = 12.0;
        let pair = qsd_cluster_rates(&[m, m], &g, &[3.0, 3.0], n, &QsdOptions::default()).unwrap();
        let one =
            qsd_cluster_rates(&[m], &DMatrix::from_element(1, 1, 12.0), &[3.0], n, &QsdOptions::default()).unwrap();
        assert!((pair.theta - one.theta).abs() < 1e-10);
        for k in 0..m {
            assert!((pair.probability[k] - one.probability[k]).abs() < 1e-8);
        }
        assert!(pair.probability[m..].iter().all(|&p| p.abs() < 1e-8));
    }

    #[test]
    fn capacity_limits() {
        let net = complete(15, 1.0, 1.0);
        assert!(matches!(qsd_exact_chain(&net, &QsdOptions::default()), Err(SisError::Capacity(_))));
        let g = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            qsd_cluster_rates(&[2000, 2000], &g, &[1.0, 1.0], 4000, &QsdOptions::default()),
            Err(SisError::Capacity(_))
        ));
    }
}
