//! Weighted non-negative factorization `Ã ≈ WᵀH` with the diagonal excluded from the loss.
//!
//! The loss is `F = Σ_{i≠j} ω_ij (ã_ij − W_iᵀH_j)²` with `ω_ij = e^{λ ã_ij}`. Absent links have
//! `ω = 1`, so `F` splits into a uniform term over all ordered pairs, evaluated through the
//! `k×k` Gram matrices, plus a correction over stored links. Updates are exact coordinate
//! minimizations of `F`, hence `F` never increases.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::metastable::nimfa_steady_state;
use crate::network::{InfectionRates, RateNetwork};
use crate::rng::{derive_seed, rng_from_seed};

/// Rank-`k` factors; column `i` of `w` is the infectiousness of node `i`, column `j` of `h`
/// the susceptibility of node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub k: usize,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub iterations: usize,
    pub seed: u64,
    pub symmetric: bool,
}

/// Scalar metadata of a [`FactorPair`], persisted next to the matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorHeader {
    pub k: usize,
    pub n: usize,
    pub lambda: f64,
    pub objective: f64,
    pub seed: u64,
    pub iterations: usize,
    pub symmetric: bool,
}

impl FactorPair {
    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    pub fn header(&self) -> FactorHeader {
        FactorHeader {
            k: self.k,
            n: self.n(),
            lambda: self.lambda,
            objective: self.objective,
            seed: self.seed,
            iterations: self.iterations,
            symmetric: self.symmetric,
        }
    }

    pub fn from_parts(header: &FactorHeader, w: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if w.shape() != (header.k, header.n) || h.shape() != (header.k, header.n) {
            return Err(SisError::validation("factor matrices do not match the header dimensions"));
        }
        if w.iter().chain(h.iter()).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(SisError::validation("factor entries must be finite and non-negative"));
        }
        Ok(FactorPair {
            k: header.k,
            w,
            h,
            lambda: header.lambda,
            objective: header.objective,
            iterations: header.iterations,
            seed: header.seed,
            symmetric: header.symmetric,
        })
    }

    /// `W_iᵀ H_j`.
    pub fn reconstruct(&self, i: usize, j: usize) -> f64 {
        self.w.column(i).dot(&self.h.column(j))
    }

    /// The gauge-equivalent pair `(cW, H/c)`.
    pub fn rescaled(&self, c: f64) -> FactorPair {
        let mut fp = self.clone();
        fp.w *= c;
        fp.h /= c;
        fp
    }

    /// Rates `WᵀH` with the given curing rates, usable by the simulator and NIMFA.
    pub fn low_rank_rates(&self, curing: Vec<f64>, include_diagonal: bool) -> Result<LowRankRates> {
        LowRankRates::new(self.w.clone(), self.h.clone(), curing, include_diagonal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmfOptions {
    pub max_iter: usize,
    /// Relative objective decrease below which the iteration stops.
    pub tol: f64,
    pub seed: u64,
    /// Force `H = W`; requires a symmetric rate matrix.
    pub symmetric: bool,
}

impl Default for NmfOptions {
    fn default() -> Self {
        NmfOptions { max_iter: 500, tol: 1e-6, seed: 0, symmetric: false }
    }
}

/// Dense evaluation is used up to this many nodes; larger inputs use the Gram split.
const DIRECT_OBJECTIVE_NODES: usize = 2048;

/// `Σ_{i≠j} ω_ij (ã_ij − W_iᵀH_j)²`.
pub fn weighted_objective(net: &RateNetwork, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> f64 {
    let n = net.len();
    if n <= DIRECT_OBJECTIVE_NODES {
        return (0..n)
            .into_par_iter()
            .map(|i| {
                let wi = w.column(i);
                let mut resid: Vec<f64> = (0..n).map(|j| -wi.dot(&h.column(j))).collect();
                let mut weight = vec![1.0; n];
                resid[i] = 0.0;
                for (j, a) in net.out_links(i) {
                    resid[j] += a;
                    weight[j] = (lambda * a).exp();
                }
                resid.iter().zip(&weight).map(|(e, om)| om * e * e).sum::<f64>()
            })
            .sum();
    }
    let wg = w * w.transpose();
    let hg = h * h.transpose();
    let all: f64 = wg.component_mul(&hg).sum();
    let diag: f64 = (0..n).map(|i| w.column(i).dot(&h.column(i)).powi(2)).sum();
    let links: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let wi = w.column(i);
            net.out_links(i)
                .map(|(j, a)| {
                    let p = wi.dot(&h.column(j));
                    (lambda * a).exp() * (a - p).powi(2) - p * p
                })
                .sum::<f64>()
        })
        .sum();
    all - diag + links
}

/// Objective of the all-zero factorization, used to scale round-off allowances.
fn objective_scale(net: &RateNetwork, lambda: f64) -> f64 {
    net.edges().map(|(_, _, a)| (lambda * a).exp() * a * a).sum()
}

/// Exact coordinate minimization of one column `x` of the updated factor.
///
/// `gram` holds `Σ_{j≠i} O_j O_jᵀ` over the other factor's columns and `links` the stored
/// rates `(column index, ã, ω)` of the pairs this column participates in.
fn update_column(x: &mut [f64], gram: &DMatrix<f64>, links: &[(usize, f64, f64)], other: &DMatrix<f64>) {
    let k = x.len();
    let mut gx: Vec<f64> = (0..k).map(|a| (0..k).map(|b| gram[(a, b)] * x[b]).sum()).collect();
    let mut p: Vec<f64> = links.iter().map(|&(j, _, _)| (0..k).map(|b| x[b] * other[(b, j)]).sum()).collect();
    for a in 0..k {
        let mut curv = gram[(a, a)];
        let mut slope = -gx[a];
        for (l, &(j, r, om)) in links.iter().enumerate() {
            let o = other[(a, j)];
            curv += (om - 1.0) * o * o;
            slope += om * o * r - (om - 1.0) * o * p[l];
        }
        let new = if curv > 0.0 { (x[a] + slope / curv).max(0.0) } else { 0.0 };
        let d = new - x[a];
        if d != 0.0 {
            x[a] = new;
            for (b, g) in gx.iter_mut().enumerate() {
                *g += d * gram[(b, a)];
            }
            for (l, &(j, _, _)) in links.iter().enumerate() {
                p[l] += d * other[(a, j)];
            }
        }
    }
}

fn out_link_list(net: &RateNetwork, i: usize, lambda: f64) -> Vec<(usize, f64, f64)> {
    net.out_links(i).map(|(j, a)| (j, a, (lambda * a).exp())).collect()
}

fn in_link_list(net: &RateNetwork, j: usize, lambda: f64) -> Vec<(usize, f64, f64)> {
    net.in_links(j).map(|(i, a)| (i, a, (lambda * a).exp())).collect()
}

/// Update every column of `target` with `other` fixed. Columns are independent, so they
/// are computed in parallel from the previous iterate.
fn sweep(target: &mut DMatrix<f64>, other: &DMatrix<f64>, links: impl Fn(usize) -> Vec<(usize, f64, f64)> + Sync) {
    let k = target.nrows();
    let gram = other * other.transpose();
    let cols: Vec<Vec<f64>> = (0..target.ncols())
        .into_par_iter()
        .map(|i| {
            let oi = other.column(i);
            let g = &gram - oi * oi.transpose();
            let mut x: Vec<f64> = target.column(i).iter().copied().collect();
            update_column(&mut x, &g, &links(i), other);
            x
        })
        .collect();
    for (i, c) in cols.into_iter().enumerate() {
        for a in 0..k {
            target[(a, i)] = c[a];
        }
    }
}

/// Gauss–Seidel sweep for `H = W`: each node sees the current columns of all others.
fn symmetric_sweep(w: &mut DMatrix<f64>, net: &RateNetwork, lambda: f64) {
    let k = w.nrows();
    let mut gram = &*w * w.transpose();
    for i in 0..w.ncols() {
        let old: Vec<f64> = w.column(i).iter().copied().collect();
        for a in 0..k {
            for b in 0..k {
                gram[(a, b)] -= old[a] * old[b];
            }
        }
        let mut x = old;
        update_column(&mut x, &gram, &out_link_list(net, i, lambda), w);
        for a in 0..k {
            w[(a, i)] = x[a];
            for b in 0..k {
                gram[(a, b)] += x[a] * x[b];
            }
        }
    }
}

/// Rescale each component so `‖W_a‖ = ‖H_a‖`; the product is unchanged.
fn balance(w: &mut DMatrix<f64>, h: &mut DMatrix<f64>) {
    for a in 0..w.nrows() {
        let nw = w.row(a).norm();
        let nh = h.row(a).norm();
        if nw > 0.0 && nh > 0.0 {
            let c = (nh / nw).sqrt();
            w.row_mut(a).scale_mut(c);
            h.row_mut(a).scale_mut(1.0 / c);
        }
    }
}

/// Random uniform start scaled so the mean off-diagonal reconstruction equals the mean
/// off-diagonal rate.
fn initial_factors(net: &RateNetwork, k: usize, seed: u64, symmetric: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = net.len();
    let mut rng = rng_from_seed(derive_seed(seed, "nmf-init"));
    let mut w = DMatrix::from_fn(k, n, |_, _| rng.random::<f64>());
    let mut h = if symmetric { w.clone() } else { DMatrix::from_fn(k, n, |_, _| rng.random::<f64>()) };
    let pairs = (n * n.saturating_sub(1)) as f64;
    let target = if pairs > 0.0 { net.edges().map(|e| e.2).sum::<f64>() / pairs } else { 0.0 };
    let ws: Vec<f64> = (0..k).map(|a| w.row(a).sum()).collect();
    let hs: Vec<f64> = (0..k).map(|a| h.row(a).sum()).collect();
    let total: f64 = ws.iter().zip(&hs).map(|(a, b)| a * b).sum();
    let diag: f64 = (0..n).map(|i| w.column(i).dot(&h.column(i))).sum();
    let current = if pairs > 0.0 { (total - diag) / pairs } else { 0.0 };
    let c = if current > 0.0 { (target / current).sqrt() } else { 0.0 };
    w *= c;
    h *= c;
    (w, h)
}

/// Minimize the weighted loss over non-negative `W`, `H` of inner dimension `k`.
pub fn factorize(net: &RateNetwork, k: usize, lambda: f64, opts: &NmfOptions) -> Result<FactorPair> {
    let n = net.len();
    if k == 0 || k > n {
        return Err(SisError::validation(format!("inner dimension k={k} must lie in [1, {n}]")));
    }
    if !lambda.is_finite() {
        return Err(SisError::validation("lambda must be finite"));
    }
    if opts.symmetric && !net.is_symmetric(1e-12) {
        return Err(SisError::validation("symmetric factorization requested for an asymmetric rate matrix"));
    }
    let (mut w, mut h) = initial_factors(net, k, opts.seed, opts.symmetric);
    let scale = objective_scale(net, lambda);
    let mut f = weighted_objective(net, &w, &h, lambda);
    let mut iterations = 0;
    while iterations < opts.max_iter && f > 1e-24 * scale {
        iterations += 1;
        if opts.symmetric {
            symmetric_sweep(&mut w, net, lambda);
            h.copy_from(&w);
        } else {
            sweep(&mut w, &h, |i| out_link_list(net, i, lambda));
            sweep(&mut h, &w, |j| in_link_list(net, j, lambda));
            balance(&mut w, &mut h);
        }
        let next = weighted_objective(net, &w, &h, lambda);
        if next > f + 1e-9 * f + 1e-13 * scale {
            return Err(SisError::numerical(format!(
                "factorization objective increased from {f:.12e} to {next:.12e} at iteration {iterations}"
            )));
        }
        let decrease = f - next;
        f = next;
        if decrease <= opts.tol * f.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(FactorPair { k, w, h, lambda, objective: f, iterations, seed: opts.seed, symmetric: opts.symmetric })
}

/// `W = I`, `H = Ã`: an exact factorization with `k = n`.
pub fn identity_factorization(net: &RateNetwork, dense_threshold: usize) -> Result<FactorPair> {
    let h = net.to_dense(dense_threshold)?;
    let n = net.len();
    Ok(FactorPair {
        k: n,
        w: DMatrix::identity(n, n),
        h,
        lambda: 0.0,
        objective: 0.0,
        iterations: 0,
        seed: 0,
        symmetric: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lo: f64,
    pub hi: f64,
    /// Accept `λ` once `|g(λ)| < tol·n`.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        LambdaSearch { lo: -2.0, hi: 6.0, tol: 1e-4, max_steps: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct TunedFactors {
    pub lambda: f64,
    pub factors: FactorPair,
    /// NIMFA total of the factorized network minus that of the original.
    pub gap: f64,
    /// The gap vanishes at both ends of the bracket, so `λ` has no effect.
    pub insensitive: bool,
    pub evaluations: Vec<(f64, f64)>,
}

/// Choose `λ` so the NIMFA prevalence of `WᵀH` (diagonal zeroed) matches that of `Ã`.
pub fn tune_lambda(net: &RateNetwork, k: usize, search: &LambdaSearch, opts: &NmfOptions) -> Result<TunedFactors> {
    let n = net.len() as f64;
    let threshold = crate::network::spectral_threshold(net)?;
    if threshold <= 1.0 {
        return Err(SisError::validation(format!(
            "spectral threshold {threshold:.6} ≤ 1: both prevalences vanish and lambda is not identifiable"
        )));
    }
    if !(search.lo < search.hi) {
        return Err(SisError::validation("lambda bracket must satisfy lo < hi"));
    }
    let target = nimfa_steady_state(net)?.total;
    let accept = search.tol * n;
    let mut evaluations = Vec::new();
    let mut eval = |lambda: f64| -> Result<(FactorPair, f64)> {
        let fp = factorize(net, k, lambda, opts)?;
        let rates = fp.low_rank_rates(net.curing().to_vec(), false)?;
        let g = nimfa_steady_state(&rates)?.total - target;
        evaluations.push((lambda, g));
        log::debug!("lambda {lambda:.6}: gap {g:.6e}");
        Ok((fp, g))
    };

    let (fa, ga) = eval(search.lo)?;
    let (fb, gb) = eval(search.hi)?;
    if ga.abs() < accept && gb.abs() < accept {
        return Ok(TunedFactors { lambda: search.lo, factors: fa, gap: ga, insensitive: true, evaluations });
    }
    if ga.abs() < accept {
        return Ok(TunedFactors { lambda: search.lo, factors: fa, gap: ga, insensitive: false, evaluations });
    }
    if gb.abs() < accept {
        return Ok(TunedFactors { lambda: search.hi, factors: fb, gap: gb, insensitive: false, evaluations });
    }
    if ga.signum() == gb.signum() {
        return Err(SisError::Tuning(format!(
            "no sign change of the prevalence gap on [{}, {}]: g(lo) = {ga:.6e}, g(hi) = {gb:.6e}",
            search.lo, search.hi
        )));
    }
    let (mut lo, mut hi, mut glo) = (search.lo, search.hi, ga);
    let mut best = if ga.abs() < gb.abs() { (search.lo, fa, ga) } else { (search.hi, fb, gb) };
    for _ in 0..search.max_steps {
        let mid = 0.5 * (lo + hi);
        let (fm, gm) = eval(mid)?;
        if gm.abs() < best.2.abs() {
            best = (mid, fm, gm);
        }
        if gm.abs() < accept {
            break;
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    if best.2.abs() >= accept {
        return Err(SisError::Tuning(format!(
            "bisection stopped at lambda {:.6} with gap {:.6e} above tolerance {accept:.3e}",
            best.0, best.2
        )));
    }
    Ok(TunedFactors { lambda: best.0, factors: best.1, gap: best.2, insensitive: false, evaluations })
}

/// Infection rates `ã_ij = W_iᵀH_j` held in factored form.
#[derive(Debug, Clone)]
pub struct LowRankRates {
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    curing: Vec<f64>,
    include_diagonal: bool,
    /// Row sums of `H`.
    h_total: Vec<f64>,
    /// Per component, cumulative weights over target nodes.
    h_cumulative: Vec<Vec<f64>>,
    /// Per node, cumulative weights over components.
    comp_cumulative: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl LowRankRates {
    pub fn new(w: DMatrix<f64>, h: DMatrix<f64>, curing: Vec<f64>, include_diagonal: bool) -> Result<Self> {
        let (k, n) = w.shape();
        if h.shape() != (k, n) || curing.len() != n {
            return Err(SisError::validation("factor and curing dimensions disagree"));
        }
        if curing.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(SisError::validation("curing rates must be positive and finite"));
        }
        let h_total: Vec<f64> = (0..k).map(|a| h.row(a).sum()).collect();
        let h_cumulative: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                let mut acc = 0.0;
                (0..n)
                    .map(|j| {
                        acc += h[(a, j)];
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; n];
        let comp_cumulative: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                let c = (0..k)
                    .map(|a| {
                        let mass = if include_diagonal { h_total[a] } else { (h_total[a] - h[(a, i)]).max(0.0) };
                        acc += w[(a, i)] * mass;
                        acc
                    })
                    .collect();
                out[i] = acc;
                c
            })
            .collect();
        Ok(LowRankRates { w, h, curing, include_diagonal, h_total, h_cumulative, comp_cumulative, out })
    }

    pub fn inner_dimension(&self) -> usize {
        self.w.nrows()
    }

    pub fn includes_diagonal(&self) -> bool {
        self.include_diagonal
    }
}

fn search_cumulative(cum: &[f64], u: f64) -> usize {
    let idx = cum.partition_point(|&c| c <= u);
    idx.min(cum.len() - 1)
}

impl InfectionRates for LowRankRates {
    fn node_count(&self) -> usize {
        self.w.ncols()
    }

    fn curing(&self) -> &[f64] {
        &self.curing
    }

    fn spread(&self, x: &[f64], out: &mut [f64]) {
        let k = self.w.nrows();
        let n = self.w.ncols();
        let mut wx = vec![0.0; k];
        for i in 0..n {
            if x[i] != 0.0 {
                for a in 0..k {
                    wx[a] += self.w[(a, i)] * x[i];
                }
            }
        }
        out.par_iter_mut().enumerate().with_min_len(256).for_each(|(j, o)| {
            let hj = self.h.column(j);
            let mut s: f64 = (0..k).map(|a| hj[a] * wx[a]).sum();
            if !self.include_diagonal {
                s -= x[j] * self.w.column(j).dot(&hj);
            }
            *o = s.max(0.0);
        });
    }

    fn out_strength(&self, i: usize) -> f64 {
        self.out[i]
    }

    fn sample_target<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let cum = &self.comp_cumulative[i];
        let a = search_cumulative(cum, rng.random::<f64>() * cum[cum.len() - 1]);
        let row = &self.h_cumulative[a];
        loop {
            let j = search_cumulative(row, rng.random::<f64>() * self.h_total[a]);
            if j != i || self.include_diagonal {
                return j;
            }
        }
    }

    fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j && !self.include_diagonal {
            0.0
        } else {
            self.w.column(i).dot(&self.h.column(j))
        }
    }
}
