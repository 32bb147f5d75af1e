//! Linear fluctuations around the metastable state and the resulting normal prediction.
//!
//! With `N = N∞ + √n D`, the deviation process has drift `(M − diag(Y_δ)) D − n^{-1/2} diag(D) G D`
//! and conditional variance `n^{-1/2}(M + diag(Y_δ)) D − n^{-1} diag(D) G D + Σ`, where
//! `G = Y_hᵀ Y_w`. Dropping the `D`-dependent noise and the quadratic drift gives an
//! Ornstein–Uhlenbeck process whose stationary covariance `Σ∞` solves `K Σ∞ + Σ∞ Kᵀ + Σ = 0`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Result, SisError};
use crate::linalg::{complex_eigen, invert_with_condition, ComplexEigen, C64};
use crate::metastable::MetastablePrediction;
use crate::rng::rng_from_seed;
use crate::stats::normal_cdf;

/// Eigenbases with a larger condition estimate are not trusted for `Σ∞`.
pub const EIGEN_CONDITION_CAP: f64 = 1e8;
/// Largest symmetric unknown count of the dense Kronecker solver.
pub const MAX_KRONECKER_UNKNOWNS: usize = 4096;
/// Largest dimension handed to the triangular fallback solver.
pub const MAX_FALLBACK_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LyapunovMethod {
    Eigen,
    Kronecker,
    Schur,
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub x: DMatrix<f64>,
    /// Max-norm of `K X + X Kᵀ + Σ`.
    pub residual: f64,
    pub method: LyapunovMethod,
    /// Condition estimate of the eigenvector matrix, when it was formed.
    pub condition: Option<f64>,
}

fn lyapunov_residual(k: &DMatrix<f64>, x: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    k * x + x * k.transpose() + sigma
}

/// `−V[(V⁻¹ R V⁻ᵀ) ⊘ (Λ_i + Λ_j)]Vᵀ`, returning the real part and the largest imaginary part.
fn eigen_apply(eig: &ComplexEigen, inv: &DMatrix<C64>, rhs: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let r = rhs.nrows();
    let rc: DMatrix<C64> = rhs.map(|v| C64::new(v, 0.0));
    let mut c = inv * rc * inv.transpose();
    for i in 0..r {
        for j in 0..r {
            c[(i, j)] /= eig.values[i] + eig.values[j];
        }
    }
    let x = -(&eig.vectors * c * eig.vectors.transpose());
    let imag = x.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    (x.map(|z| z.re), imag)
}

/// Solve `K X + X Kᵀ + Σ = 0` through the eigen-decomposition of `K`, with up to three steps
/// of iterative refinement in the same basis.
pub fn lyapunov_eigen(k: &DMatrix<f64>, sigma: &DMatrix<f64>, eig: &ComplexEigen) -> Result<LyapunovSolution> {
    let (inv, cond) =
        invert_with_condition(&eig.vectors).ok_or_else(|| SisError::numerical("eigenvector matrix is singular"))?;
    if cond > EIGEN_CONDITION_CAP {
        return Err(SisError::numerical(format!("eigenbasis condition {cond:.3e} exceeds {EIGEN_CONDITION_CAP:.0e}")));
    }
    let (mut x, imag) = eigen_apply(eig, &inv, sigma);
    let scale = x.amax().max(sigma.amax());
    if imag > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(SisError::numerical(format!("imaginary residue {imag:.3e} in the eigen solution")));
    }
    let mut res = lyapunov_residual(k, &x, sigma);
    for _ in 0..3 {
        let before = res.amax();
        if before == 0.0 {
            break;
        }
        let (dx, _) = eigen_apply(eig, &inv, &res);
        let candidate = &x + dx;
        let cres = lyapunov_residual(k, &candidate, sigma);
        if cres.amax() >= before {
            break;
        }
        x = candidate;
        res = cres;
    }
    Ok(LyapunovSolution { residual: res.amax(), x, method: LyapunovMethod::Eigen, condition: Some(cond) })
}

fn sym_index(i: usize, j: usize, r: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * r - a * (a + 1) / 2 + b
}

/// Solve `K X + X Kᵀ + Σ = 0` as a dense linear system in the `r(r+1)/2` entries of `X`.
pub fn lyapunov_kronecker(k: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<LyapunovSolution> {
    let r = k.nrows();
    let p = r * (r + 1) / 2;
    if p > MAX_KRONECKER_UNKNOWNS {
        return Err(SisError::capacity(format!(
            "dense Lyapunov solve needs {p} unknowns, limit is {MAX_KRONECKER_UNKNOWNS}"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for i in 0..r {
        for j in i..r {
            let row = sym_index(i, j, r);
            for m in 0..r {
                a[(row, sym_index(m, j, r))] += k[(i, m)];
                a[(row, sym_index(i, m, r))] += k[(j, m)];
            }
            b[row] = -0.5 * (sigma[(i, j)] + sigma[(j, i)]);
        }
    }
    let sol = a.lu().solve(&b).ok_or_else(|| SisError::numerical("Lyapunov system is singular"))?;
    let x = DMatrix::from_fn(r, r, |i, j| sol[sym_index(i, j, r)]);
    let residual = lyapunov_residual(k, &x, sigma).amax();
    Ok(LyapunovSolution { x, residual, method: LyapunovMethod::Kronecker, condition: None })
}

/// Solve `K X + X Kᵀ + Σ = 0` in the Schur basis `K = Q T Qᴴ`: with `Y = Qᴴ X Q` the equation
/// becomes `T Y + Y Tᴴ = −Qᴴ Σ Q`, solved column by column from the last one by back
/// substitution. No eigenvectors are needed, so defective `K` is handled.
pub fn lyapunov_schur(k: &DMatrix<f64>, sigma: &DMatrix<f64>, eig: &ComplexEigen) -> Result<LyapunovSolution> {
    let r = k.nrows();
    if r > MAX_FALLBACK_DIM {
        return Err(SisError::capacity(format!(
            "triangular Lyapunov solve limited to r ≤ {MAX_FALLBACK_DIM}, got {r}"
        )));
    }
    let q = &eig.schur_q;
    let t = &eig.schur_t;
    let sc: DMatrix<C64> = sigma.map(|v| C64::new(v, 0.0));
    let c = q.adjoint() * sc * q;
    let mut y = DMatrix::<C64>::zeros(r, r);
    let mut rhs = vec![C64::new(0.0, 0.0); r];
    for j in (0..r).rev() {
        for i in 0..r {
            rhs[i] = -c[(i, j)];
        }
        for m in (j + 1)..r {
            let f = t[(j, m)].conj();
            if f != C64::new(0.0, 0.0) {
                for (acc, v) in rhs.iter_mut().zip(y.column(m).iter()) {
                    *acc -= f * v;
                }
            }
        }
        let shift = t[(j, j)].conj();
        for m in (0..r).rev() {
            let d = t[(m, m)] + shift;
            if d.norm() == 0.0 {
                return Err(SisError::numerical("Lyapunov operator is singular (eigenvalues sum to zero)"));
            }
            let ym = rhs[m] / d;
            y[(m, j)] = ym;
            for i in 0..m {
                rhs[i] -= t[(i, m)] * ym;
            }
        }
    }
    let xc = q * y * q.adjoint();
    let scale = xc.iter().fold(0.0_f64, |m, z| m.max(z.re.abs())).max(sigma.amax());
    let imag = xc.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    if imag > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(SisError::numerical(format!("imaginary residue {imag:.3e} in the Schur solution")));
    }
    let x = xc.map(|z| z.re);
    let x = (&x + x.transpose()) * 0.5;
    let residual = lyapunov_residual(k, &x, sigma).amax();
    Ok(LyapunovSolution { x, residual, method: LyapunovMethod::Schur, condition: None })
}

/// Symmetrize and truncate round-off negative eigenvalues.
pub fn psd_repair(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = (x + x.transpose()) * 0.5;
    let trace = s.trace();
    if s.nrows() == 0 {
        return Ok(s);
    }
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(s);
    }
    if min < -1e-9 * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(SisError::numerical(format!(
            "stationary covariance has eigenvalue {min:.3e}, below the round-off band of trace {trace:.3e}"
        )));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let rec = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((&rec + rec.transpose()) * 0.5)
}

/// Stationary covariance: eigen path first, the triangular Schur-basis solve when the
/// eigenbasis is unusable; the result is symmetrized and PSD-repaired.
pub fn sigma_infinity(k: &DMatrix<f64>, sigma: &DMatrix<f64>, eig: Option<&ComplexEigen>) -> Result<LyapunovSolution> {
    let owned;
    let eig = match eig {
        Some(e) => e,
        None => {
            owned = complex_eigen(k)?;
            &owned
        }
    };
    let tol = 1e-8 * sigma.amax();
    let sol = match lyapunov_eigen(k, sigma, eig) {
        Ok(s) if s.residual <= tol => s,
        first => {
            let why = match &first {
                Ok(s) => format!("residual {:.3e}", s.residual),
                Err(e) => e.to_string(),
            };
            log::info!("eigen path for the stationary covariance rejected ({why}); solving in the Schur basis");
            match lyapunov_schur(k, sigma, eig) {
                Ok(s) => s,
                Err(e) => match first {
                    Ok(s) => {
                        log::warn!("Lyapunov fallback unavailable ({e}); keeping the eigen solution");
                        s
                    }
                    Err(_) => return Err(e),
                },
            }
        }
    };
    let x = psd_repair(&sol.x)?;
    let residual = lyapunov_residual(k, &x, sigma).amax();
    Ok(LyapunovSolution { x, residual, ..sol })
}

/// Linearized fluctuation model of a metastable prediction.
#[derive(Debug, Clone)]
pub struct FluctuationModel {
    pub n: usize,
    pub m: DMatrix<f64>,
    pub k: DMatrix<f64>,
    /// Diagonal of `Σ = (2/n) diag(Y_δ) N∞`.
    pub sigma: Vec<f64>,
    pub coupling: DMatrix<f64>,
    pub ninf: Vec<f64>,
    pub ydelta: Vec<f64>,
    pub eigenvalues: Vec<C64>,
    pub sigma_inf: DMatrix<f64>,
    pub lyap_residual: f64,
    pub method: LyapunovMethod,
    pub condition: Option<f64>,
}

impl FluctuationModel {
    pub fn r(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.sigma))
    }

    /// Largest `|Re Λ|`, the fastest relaxation rate.
    pub fn fastest_rate(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |m, z| f64::max(m, z.re.abs()))
    }

    pub fn summary(&self) -> FluctuationSummary {
        FluctuationSummary {
            r: self.r(),
            n: self.n,
            sigma: self.sigma.clone(),
            eigenvalues_re: self.eigenvalues.iter().map(|z| z.re).collect(),
            eigenvalues_im: self.eigenvalues.iter().map(|z| z.im).collect(),
            lyap_residual: self.lyap_residual,
            method: self.method,
            condition: self.condition,
            total_variance: self.sigma_inf.sum(),
        }
    }
}

/// JSON view of a [`FluctuationModel`]; the matrices go to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSummary {
    pub r: usize,
    pub n: usize,
    pub sigma: Vec<f64>,
    pub eigenvalues_re: Vec<f64>,
    pub eigenvalues_im: Vec<f64>,
    pub lyap_residual: f64,
    pub method: LyapunovMethod,
    pub condition: Option<f64>,
    /// `uᵀ Σ∞ u`.
    pub total_variance: f64,
}

/// `M`, `K`, `Σ`, the spectrum of `K` and `Σ∞` for an existing metastable state.
pub fn build_fluctuation(cl: &Clustering, pred: &MetastablePrediction) -> Result<FluctuationModel> {
    if !pred.exists {
        return Err(SisError::Subcritical("no metastable state to linearize around".into()));
    }
    let r = cl.r();
    if pred.ninf.len() != r {
        return Err(SisError::validation("prediction and clustering disagree on r"));
    }
    let n = cl.n as f64;
    let g = cl.coupling();
    let gn = &g * DVector::from_column_slice(&pred.ninf);
    let m = DMatrix::from_fn(r, r, |j, l| {
        let mut v = (cl.sizes[j] as f64 - pred.ninf[j]) * g[(j, l)] / n;
        if j == l {
            v -= gn[j] / n;
        }
        v
    });
    let mut k = m.clone();
    for j in 0..r {
        k[(j, j)] -= cl.ydelta[j];
    }
    let sigma: Vec<f64> = (0..r).map(|j| 2.0 / n * cl.ydelta[j] * pred.ninf[j]).collect();
    let eig = complex_eigen(&k)?;
    if let Some(bad) = eig.values.iter().find(|z| z.re >= 0.0) {
        return Err(SisError::numerical(format!(
            "non-contracting linearization: eigenvalue {:.6e}{:+.6e}i has non-negative real part",
            bad.re, bad.im
        )));
    }
    let sm = DMatrix::from_diagonal(&DVector::from_column_slice(&sigma));
    let sol = sigma_infinity(&k, &sm, Some(&eig))?;
    Ok(FluctuationModel {
        n: cl.n,
        m,
        k,
        sigma,
        coupling: g,
        ninf: pred.ninf.clone(),
        ydelta: cl.ydelta.clone(),
        eigenvalues: eig.values,
        sigma_inf: sol.x,
        lyap_residual: sol.residual,
        method: sol.method,
        condition: sol.condition,
    })
}

/// Normal law of the total number of infected nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDistribution {
    pub mean_total: f64,
    pub std_total: f64,
    pub per_cluster_mean: Vec<f64>,
    pub corrected: bool,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
}

impl PredictedDistribution {
    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf(x, self.mean_total, self.std_total)
    }

    /// `(total, CDF)` on the integer grid `0..=n`.
    pub fn cdf_grid(&self, n: usize) -> Vec<(usize, f64)> {
        (0..=n).map(|t| (t, self.cdf(t as f64))).collect()
    }
}

/// Mean `uᵀN` and standard deviation `√(n uᵀΣ∞u)` of the total.
pub fn predicted_distribution(
    means: &[f64],
    sigma_inf: &DMatrix<f64>,
    n: usize,
    corrected: bool,
) -> Result<PredictedDistribution> {
    if sigma_inf.shape() != (means.len(), means.len()) {
        return Err(SisError::validation("covariance dimension differs from the mean vector"));
    }
    let mut var = sigma_inf.sum();
    if var < -1e-12 {
        return Err(SisError::numerical(format!("total variance {var:.3e} is negative")));
    }
    var = var.max(0.0);
    Ok(PredictedDistribution {
        mean_total: means.iter().sum(),
        std_total: (n as f64 * var).sqrt(),
        per_cluster_mean: means.to_vec(),
        corrected,
        covariance: sigma_inf * n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdeOptions {
    /// Step size; `None` means `0.01 / max |Re Λ|`.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub seed: u64,
    /// Linear drift `K D` with constant diffusion `√Σ` instead of the full equation.
    pub linear: bool,
    /// Switch the Brownian forcing off.
    pub noise: bool,
    /// Initial deviation; zero when absent.
    pub d0: Option<Vec<f64>>,
    /// Time between recorded states.
    pub record_interval: f64,
}

impl SvdeOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        SvdeOptions { dt: None, horizon, seed, linear: false, noise: true, d0: None, record_interval: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdeTrajectory {
    pub dt: f64,
    pub steps: u64,
    pub times: Vec<f64>,
    /// Recorded deviations `D(t)`, one vector per entry of `times`.
    pub states: Vec<Vec<f64>>,
    /// Steps in which some `N_j` left `[0, n_j]` and was clipped.
    pub clipped_steps: u64,
    /// Steps in which some variance argument was negative and set to 0.
    pub clamped_variance_steps: u64,
}

impl SvdeTrajectory {
    /// Sample covariance of `√n D` over records with `t ≥ burn_in`.
    pub fn covariance(&self, n: usize, burn_in: f64) -> DMatrix<f64> {
        let rows: Vec<&Vec<f64>> =
            self.times.iter().zip(&self.states).filter(|(t, _)| **t >= burn_in).map(|x| x.1).collect();
        let r = rows.first().map_or(0, |v| v.len());
        let m = rows.len() as f64;
        let mut mean = DVector::<f64>::zeros(r);
        for v in &rows {
            mean += DVector::from_column_slice(v);
        }
        mean /= m;
        let mut cov = DMatrix::<f64>::zeros(r, r);
        for v in &rows {
            let d = DVector::from_column_slice(v) - &mean;
            cov += &d * d.transpose();
        }
        cov * (n as f64 / (m - 1.0))
    }
}

/// Euler–Maruyama integration of the deviation process.
pub fn simulate_svde(cl: &Clustering, fm: &FluctuationModel, opts: &SvdeOptions) -> Result<SvdeTrajectory> {
    let r = fm.r();
    let n = cl.n as f64;
    let sqrt_n = n.sqrt();
    let dt = opts.dt.unwrap_or(0.01 / fm.fastest_rate());
    if !(dt > 0.0) || !(opts.horizon >= dt) {
        return Err(SisError::validation("SVDE needs dt > 0 and horizon ≥ dt"));
    }
    if !(opts.record_interval > 0.0) {
        return Err(SisError::validation("record interval must be positive"));
    }
    let mut d = match &opts.d0 {
        Some(v) if v.len() == r => DVector::from_column_slice(v),
        Some(_) => return Err(SisError::validation("initial deviation has the wrong dimension")),
        None => DVector::zeros(r),
    };
    let mpd = {
        let mut a = fm.m.clone();
        for j in 0..r {
            a[(j, j)] += fm.ydelta[j];
        }
        a
    };
    let steps = (opts.horizon / dt).round() as u64;
    let stride = ((opts.record_interval / dt).round() as u64).max(1);
    let mut rng = rng_from_seed(opts.seed);
    let mut times = vec![0.0];
    let mut states = vec![d.iter().copied().collect::<Vec<f64>>()];
    let mut clipped_steps = 0u64;
    let mut clamped_variance_steps = 0u64;
    let sqrt_dt = dt.sqrt();
    for step in 1..=steps {
        let kd = &fm.k * &d;
        let (drift, var) = if opts.linear {
            (kd, DVector::from_column_slice(&fm.sigma))
        } else {
            let gd = &fm.coupling * &d;
            let quad = d.component_mul(&gd);
            let drift = kd - &quad / sqrt_n;
            let var = (&mpd * &d) / sqrt_n - &quad / n + DVector::from_column_slice(&fm.sigma);
            (drift, var)
        };
        let mut clamped = false;
        let mut next = &d + drift * dt;
        if opts.noise {
            for j in 0..r {
                let mut v = var[j];
                if v < 0.0 {
                    v = 0.0;
                    clamped = true;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                next[j] += (v).sqrt() * sqrt_dt * z;
            }
        }
        if clamped {
            clamped_variance_steps += 1;
        }
        if !opts.linear {
            let mut clipped = false;
            for j in 0..r {
                let nj = fm.ninf[j] + sqrt_n * next[j];
                let bound = cl.sizes[j] as f64;
                if nj < 0.0 || nj > bound {
                    next[j] = (nj.clamp(0.0, bound) - fm.ninf[j]) / sqrt_n;
                    clipped = true;
                }
            }
            if clipped {
                clipped_steps += 1;
            }
        }
        d = next;
        if step % stride == 0 {
            times.push(step as f64 * dt);
            states.push(d.iter().copied().collect());
        }
    }
    let frac = clipped_steps as f64 / steps.max(1) as f64;
    if frac > 0.10 {
        return Err(SisError::numerical(format!(
            "{:.1}% of SVDE steps were clipped to the cluster bounds; reduce dt",
            100.0 * frac
        )));
    }
    if frac > 0.01 {
        log::warn!("{:.2}% of SVDE steps were clipped to the cluster bounds", 100.0 * frac);
    }
    Ok(SvdeTrajectory { dt, steps, times, states, clipped_steps, clamped_variance_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metastable::{solve_v, SolveOptions};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn single_cluster(n: usize, beta: f64, delta: f64) -> Clustering {
        let s = (n as f64 * beta).sqrt();
        Clustering {
            n,
            k: 1,
            assignment: vec![0; n],
            sizes: vec![n],
            yw: DMatrix::from_element(1, 1, s),
            yh: DMatrix::from_element(1, 1, s),
            ydelta: vec![delta],
        }
    }

    fn random_stable(r: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = rng_from_seed(seed);
        let a = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>() - 0.5);
        let shift = a.clone().complex_eigenvalues().iter().fold(f64::MIN, |m, z| m.max(z.re));
        let k = a - DMatrix::identity(r, r) * (shift + 0.5);
        let b = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>());
        (k, &b * b.transpose())
    }

    #[test]
    fn complete_graph_model() {
        let cl = single_cluster(10, 1.0, 4.0);
        let p = solve_v(&cl, &SolveOptions::default()).unwrap();
        let fm = build_fluctuation(&cl, &p).unwrap();
        assert!((fm.m[(0, 0)] + 2.0).abs() < 1e-9);
        assert!((fm.k[(0, 0)] + 6.0).abs() < 1e-9);
        assert!((fm.sigma[0] - 4.8).abs() < 1e-9);
        assert!((fm.sigma_inf[(0, 0)] - 0.4).abs() < 1e-9);
        let d = predicted_distribution(&p.ninf, &fm.sigma_inf, 10, false).unwrap();
        assert!((d.mean_total - 6.0).abs() < 1e-9);
        assert!((d.std_total - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_and_zero_noise_cases() {
        let k = DMatrix::from_element(1, 1, -6.0);
        let s = sigma_infinity(&k, &DMatrix::from_element(1, 1, 4.8), None).unwrap();
        assert!((s.x[(0, 0)] - 0.4).abs() < 1e-12);
        let (k, _) = random_stable(4, 1);
        let s = sigma_infinity(&k, &DMatrix::zeros(4, 4), None).unwrap();
        assert_eq!(s.x.amax(), 0.0);
    }

    #[test]
    fn eigen_and_kronecker_paths_agree() {
        for seed in 0..10 {
            let r = 2 + seed as usize;
            let (k, sigma) = random_stable(r, seed);
            let eig = complex_eigen(&k).unwrap();
            let a = lyapunov_eigen(&k, &sigma, &eig).unwrap();
            let b = lyapunov_kronecker(&k, &sigma).unwrap();
            let rel = (&a.x - &b.x).norm() / b.x.norm();
            assert!(rel < 1e-8, "seed {seed}: {rel}");
            assert!(a.residual <= 1e-8 * sigma.amax());
        }
    }

    #[test]
    fn schur_path_matches_kronecker() {
        for seed in 0..10 {
            let r = 2 + seed as usize;
            let (k, sigma) = random_stable(r, seed + 100);
            let eig = complex_eigen(&k).unwrap();
            let a = lyapunov_schur(&k, &sigma, &eig).unwrap();
            let b = lyapunov_kronecker(&k, &sigma).unwrap();
            let rel = (&a.x - &b.x).norm() / b.x.norm();
            assert!(rel < 1e-9, "seed {seed}: {rel}");
        }
    }

    #[test]
    fn kronecker_capacity_is_enforced() {
        let k = DMatrix::<f64>::identity(91, 91) * -1.0;
        assert!(matches!(lyapunov_kronecker(&k, &DMatrix::identity(91, 91)), Err(SisError::Capacity(_))));
    }

    #[test]
    fn defective_matrix_falls_back() {
        // Jordan block: a single eigenvector
        let k = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let sigma = DMatrix::identity(2, 2);
        let s = sigma_infinity(&k, &sigma, None).unwrap();
        assert_eq!(s.method, LyapunovMethod::Schur);
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn psd_repair_bands() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-12]);
        let y = psd_repair(&x).unwrap();
        assert!(SymmetricEigen::new(y).eigenvalues.min() >= -1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(psd_repair(&bad).is_err());
    }

    #[test]
    fn zero_noise_keeps_equilibrium() {
        let cl = single_cluster(10, 1.0, 4.0);
        let p = solve_v(&cl, &SolveOptions::default()).unwrap();
        let fm = build_fluctuation(&cl, &p).unwrap();
        let mut o = SvdeOptions::new(10.0, 1);
        o.noise = false;
        let t = simulate_svde(&cl, &fm, &o).unwrap();
        assert!(t.states.iter().all(|s| s.iter().all(|&x| x.abs() < 1e-12)));
    }

    #[test]
    fn linear_svde_variance_matches_sigma_infinity() {
        let cl = single_cluster(10, 1.0, 4.0);
        let p = solve_v(&cl, &SolveOptions::default()).unwrap();
        let fm = build_fluctuation(&cl, &p).unwrap();
        let mut o = SvdeOptions::new(4000.0, 3);
        o.linear = true;
        o.dt = Some(1e-3);
        let t = simulate_svde(&cl, &fm, &o).unwrap();
        let c = t.covariance(10, 10.0)[(0, 0)];
        assert!((c - 4.0).abs() < 0.15 * 4.0, "{c}");
    }

    #[test]
    fn predicted_distribution_rejects_negative_variance() {
        let s = DMatrix::from_element(1, 1, -1e-6);
        assert!(predicted_distribution(&[1.0], &s, 10, false).is_err());
        let s = DMatrix::from_element(1, 1, -1e-14);
        assert_eq!(predicted_distribution(&[1.0], &s, 10, false).unwrap().std_total, 0.0);
    }
}
