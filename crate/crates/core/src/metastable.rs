//! Metastable cluster expectations, the existence check, NIMFA and the covariance correction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Result, SisError};
use crate::linalg::dominant_eigenvalue;
use crate::network::{spectral_threshold, uniform_curing, InfectionRates, RateNetwork};

/// NIMFA steady state: `v_i = s_i / (s_i + δ_i)` with `s = Ãᵀ v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NimfaState {
    pub v: Vec<f64>,
    pub total: f64,
    pub iterations: usize,
    /// Max-norm change of the last iteration.
    pub change: f64,
}

const NIMFA_TOL: f64 = 1e-12;
const NIMFA_MAX_ITER: usize = 1_000_000;

pub fn nimfa_steady_state<R: InfectionRates>(rates: &R) -> Result<NimfaState> {
    let n = rates.node_count();
    if spectral_threshold(rates)? <= 1.0 {
        return Ok(NimfaState { v: vec![0.0; n], total: 0.0, iterations: 0, change: 0.0 });
    }
    let delta = rates.curing();
    let mut v = vec![1.0; n];
    let mut s = vec![0.0; n];
    for it in 1..=NIMFA_MAX_ITER {
        rates.spread(&v, &mut s);
        let mut change: f64 = 0.0;
        for i in 0..n {
            let next = s[i] / (s[i] + delta[i]);
            change = change.max((next - v[i]).abs());
            v[i] = next;
        }
        if change < NIMFA_TOL {
            let total = v.iter().sum();
            return Ok(NimfaState { v, total, iterations: it, change });
        }
    }
    Err(SisError::numerical(format!("NIMFA iteration did not converge in {NIMFA_MAX_ITER} iterations")))
}

/// Uniform curing rate at which the NIMFA expected total equals `target`.
pub fn uniform_curing_for_total(net: &RateNetwork, target: f64) -> Result<f64> {
    let n = net.len();
    if !(target > 0.0 && target < n as f64) {
        return Err(SisError::validation(format!("target total {target} must lie strictly between 0 and {n}")));
    }
    let unit = net.with_curing(uniform_curing(n, 1.0))?;
    // The threshold scales as 1/δ, so every δ above the spectral radius is subcritical.
    let radius = spectral_threshold(&unit)?;
    let total = |d: f64| -> Result<f64> { Ok(nimfa_steady_state(&unit.with_curing(uniform_curing(n, d))?)?.total) };
    let (mut lo, mut hi) = (radius * 1e-9, radius);
    if total(lo)? < target {
        return Err(SisError::validation(format!("target total {target} is not reachable")));
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if total(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-13 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Dominant eigenvalue of `Ā = (1/n) diag(n_j / Y_δ,j) Y_hᵀ Y_w`.
pub fn existence_check(cl: &Clustering) -> Result<f64> {
    if let Some(j) = cl.ydelta.iter().position(|&d| !(d > 0.0)) {
        return Err(SisError::validation(format!("cluster {j} has a non-positive curing center")));
    }
    let scale: Vec<f64> = (0..cl.r()).map(|j| cl.sizes[j] as f64 / (cl.n as f64 * cl.ydelta[j])).collect();
    let eig = dominant_eigenvalue(
        cl.r(),
        |x, y| {
            let g = cl.coupling_apply(x);
            for j in 0..y.len() {
                y[j] = scale[j] * g[j];
            }
        },
        1e-10,
        1_000_000,
    )?;
    Ok(eig.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Initial weight of the new iterate in the damped update.
    pub damping: f64,
    pub min_damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { damping: 0.5, min_damping: 1.0 / 64.0, tol: 1e-12, max_iter: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastablePrediction {
    pub v: Vec<f64>,
    pub ninf: Vec<f64>,
    pub exists: bool,
    pub abar_eig: f64,
    /// `|abar_eig − 1| < 1e-3`.
    pub near_threshold: bool,
    pub balance_residual: f64,
    pub iterations: usize,
    /// Solved through the `k`-dimensional vector `V` rather than over the clusters.
    pub reduced: bool,
}

impl MetastablePrediction {
    pub fn total(&self) -> f64 {
        self.ninf.iter().sum()
    }
}

/// Damped fixed-point iteration `x ← (1 − α) x + α f(x)`; `α` halves whenever successive
/// updates point in opposite directions.
fn damped_fixed_point<F>(mut x: Vec<f64>, mut f: F, opts: &SolveOptions) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut alpha = opts.damping;
    let mut last_step: Option<Vec<f64>> = None;
    for it in 1..=opts.max_iter {
        let fx = f(&x);
        let step: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        if let Some(prev) = &last_step {
            let dot: f64 = prev.iter().zip(&step).map(|(a, b)| a * b).sum();
            if dot < 0.0 && alpha > opts.min_damping {
                alpha = (alpha * 0.5).max(opts.min_damping);
            }
        }
        let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut change: f64 = 0.0;
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi += alpha * si;
            change = change.max((alpha * si).abs());
        }
        if change <= opts.tol * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
            return Ok((x, it));
        }
        last_step = Some(step);
    }
    Err(SisError::numerical(format!(
        "metastable fixed point did not converge in {} iterations (damping {alpha})",
        opts.max_iter
    )))
}

/// `max_j |(1/n)(n_j − N_j)(G N)_j − N_j Y_δ,j|`.
pub fn balance_residual(cl: &Clustering, ninf: &[f64]) -> f64 {
    let g = cl.coupling_apply(ninf);
    let n = cl.n as f64;
    (0..cl.r()).map(|j| ((cl.sizes[j] as f64 - ninf[j]) * g[j] / n - ninf[j] * cl.ydelta[j]).abs()).fold(0.0, f64::max)
}

/// Max-norm of `diag(Y_δ)(Ā − I)N − (1/n) diag(N) Y_hᵀ Y_w N`, evaluated with explicit matrices.
pub fn matrix_form_residual(cl: &Clustering, ninf: &[f64]) -> f64 {
    let r = cl.r();
    let n = cl.n as f64;
    let g = cl.coupling();
    let abar = DMatrix::from_fn(r, r, |j, l| cl.sizes[j] as f64 / cl.ydelta[j] * g[(j, l)] / n);
    let nv = DVector::from_column_slice(ninf);
    let lhs = DMatrix::from_diagonal(&DVector::from_column_slice(&cl.ydelta)) * (abar - DMatrix::identity(r, r)) * &nv;
    let quad = DMatrix::from_diagonal(&nv) * (&g * &nv) / n;
    (lhs - quad).amax()
}

/// Solve the balance equations for `N∞`, starting from the all-infected state.
pub fn solve_v(cl: &Clustering, opts: &SolveOptions) -> Result<MetastablePrediction> {
    let r = cl.r();
    let k = cl.k;
    let n = cl.n as f64;
    let abar_eig = existence_check(cl)?;
    let exists = abar_eig > 1.0 + 1e-9;
    let near_threshold = (abar_eig - 1.0).abs() < 1e-3;
    if near_threshold {
        log::warn!("cluster system is within 1e-3 of its threshold (eigenvalue {abar_eig:.6})");
    }
    let reduced = k < r;
    if !exists {
        return Ok(MetastablePrediction {
            v: vec![0.0; k],
            ninf: vec![0.0; r],
            exists,
            abar_eig,
            near_threshold,
            balance_residual: 0.0,
            iterations: 0,
            reduced,
        });
    }
    let sizes = cl.sizes_f64();
    let ninf_from_pressure =
        |s: &[f64]| -> Vec<f64> { (0..r).map(|j| sizes[j] * s[j] / (s[j] + cl.ydelta[j])).collect() };
    let v_of = |nv: &[f64]| -> Vec<f64> { (&cl.yw * DVector::from_column_slice(nv) / n).iter().copied().collect() };
    let pressure = |v: &[f64]| -> Vec<f64> {
        (cl.yh.transpose() * DVector::from_column_slice(v)).iter().map(|x| x.max(0.0)).collect()
    };

    let (v, ninf, iterations) = if reduced {
        let (v, it) = damped_fixed_point(v_of(&sizes), |v| v_of(&ninf_from_pressure(&pressure(v))), opts)?;
        let ninf = ninf_from_pressure(&pressure(&v));
        (v, ninf, it)
    } else {
        let (ninf, it) = damped_fixed_point(
            sizes.clone(),
            |nv| {
                let s: Vec<f64> = cl.coupling_apply(nv).iter().map(|g| (g / n).max(0.0)).collect();
                ninf_from_pressure(&s)
            },
            opts,
        )?;
        (v_of(&ninf), ninf, it)
    };
    if ninf.iter().sum::<f64>() <= 1e-12 * n {
        return Err(SisError::numerical(format!(
            "iteration collapsed to the trivial root although the threshold eigenvalue is {abar_eig:.6}"
        )));
    }
    let residual = balance_residual(cl, &ninf);
    Ok(MetastablePrediction {
        v,
        ninf,
        exists,
        abar_eig,
        near_threshold,
        balance_residual: residual,
        iterations,
        reduced,
    })
}

/// How the covariance enters the corrected balance equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionScaling {
    /// `c_j = Σ_l Σ∞,jl G_jl`, i.e. `(1/n) Σ_l Cov(N_j, N_l) G_jl` with `Cov(N) = n Σ∞`.
    #[default]
    Covariance,
    /// `c_j = (1/n) Σ_l Σ∞,jl G_jl`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedPrediction {
    pub nhat: Vec<f64>,
    /// Clusters whose corrected expectation was negative and set to 0.
    pub clamped: Vec<usize>,
    pub correction: Vec<f64>,
    pub scaling: CorrectionScaling,
    pub iterations: usize,
}

impl CorrectedPrediction {
    pub fn total(&self) -> f64 {
        self.nhat.iter().sum()
    }
}

/// `c_j` for the given covariance matrix.
pub fn correction_terms(cl: &Clustering, sigma_inf: &DMatrix<f64>, scaling: CorrectionScaling) -> Vec<f64> {
    let g = cl.coupling();
    let f = match scaling {
        CorrectionScaling::Covariance => 1.0,
        CorrectionScaling::Literal => 1.0 / cl.n as f64,
    };
    (0..cl.r()).map(|j| f * sigma_inf.row(j).iter().zip(g.row(j).iter()).map(|(s, g)| s * g).sum::<f64>()).collect()
}

/// Balance equations with the covariance term: `(n_j − N̂_j) S_j − N̂_j Y_δ,j − c_j = 0`.
pub fn corrected_mean_field(
    cl: &Clustering,
    pred: &MetastablePrediction,
    sigma_inf: &DMatrix<f64>,
    scaling: CorrectionScaling,
    opts: &SolveOptions,
) -> Result<CorrectedPrediction> {
    let r = cl.r();
    if sigma_inf.shape() != (r, r) {
        return Err(SisError::validation("covariance dimension differs from the cluster count"));
    }
    let asym = (sigma_inf - sigma_inf.transpose()).amax();
    if asym > 1e-9 * sigma_inf.amax().max(f64::MIN_POSITIVE) {
        return Err(SisError::validation("covariance matrix is not symmetric"));
    }
    let correction = correction_terms(cl, sigma_inf, scaling);
    if !pred.exists || correction.iter().all(|&c| c == 0.0) {
        return Ok(CorrectedPrediction {
            nhat: pred.ninf.clone(),
            clamped: vec![],
            correction,
            scaling,
            iterations: 0,
        });
    }
    let n = cl.n as f64;
    let sizes = cl.sizes_f64();
    let (mut nhat, iterations) = damped_fixed_point(
        pred.ninf.clone(),
        |x| {
            let g = cl.coupling_apply(x);
            (0..r)
                .map(|j| {
                    let s = g[j] / n;
                    (sizes[j] * s - correction[j]) / (s + cl.ydelta[j])
                })
                .collect()
        },
        opts,
    )?;
    let mut clamped = Vec::new();
    for (j, x) in nhat.iter_mut().enumerate() {
        if *x < 0.0 {
            *x = 0.0;
            clamped.push(j);
        }
    }
    Ok(CorrectedPrediction { nhat, clamped, correction, scaling, iterations })
}
