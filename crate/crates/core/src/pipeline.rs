//! End-to-end prediction: factorize, cluster, solve the balance equations, linearize.

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_nodes, singleton_clustering, ClusterPolicy, Clustering, NodeProfiles};
use crate::error::{Result, SisError};
use crate::fluctuation::{build_fluctuation, predicted_distribution, FluctuationModel, PredictedDistribution};
use crate::metastable::{
    corrected_mean_field, nimfa_steady_state, solve_v, CorrectedPrediction, CorrectionScaling, MetastablePrediction,
    SolveOptions,
};
use crate::network::{InfectionRates, RateNetwork};
use crate::nmf::{factorize, identity_factorization, tune_lambda, FactorPair, LambdaSearch, NmfOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LambdaChoice {
    Fixed { lambda: f64 },
    Tuned { search: LambdaSearch },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum FactorMode {
    /// `W = I`, `H = Ã`.
    Identity,
    Rank {
        k: usize,
        lambda: LambdaChoice,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ClusterMode {
    Singleton,
    KMeans { r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub factor: FactorMode,
    pub nmf: NmfOptions,
    pub cluster: ClusterMode,
    pub policy: ClusterPolicy,
    pub solve: SolveOptions,
    /// `None` skips the corrected mean field.
    pub correction: Option<CorrectionScaling>,
    pub dense_threshold: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            factor: FactorMode::Identity,
            nmf: NmfOptions::default(),
            cluster: ClusterMode::Singleton,
            policy: ClusterPolicy::default(),
            solve: SolveOptions::default(),
            correction: None,
            dense_threshold: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub lambda: f64,
    pub gap: f64,
    pub insensitive: bool,
    pub evaluations: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub factors: FactorPair,
    pub tuning: Option<TuningReport>,
    pub clustering: Clustering,
    pub prediction: MetastablePrediction,
    /// Absent below the threshold.
    pub fluctuation: Option<FluctuationModel>,
    pub distribution: Option<PredictedDistribution>,
    pub corrected: Option<CorrectedPrediction>,
    pub corrected_distribution: Option<PredictedDistribution>,
    /// NIMFA total of the original network.
    pub nimfa_total: f64,
}

pub fn factor_network(net: &RateNetwork, opts: &PipelineOptions) -> Result<(FactorPair, Option<TuningReport>)> {
    match opts.factor {
        FactorMode::Identity => Ok((identity_factorization(net, opts.dense_threshold)?, None)),
        FactorMode::Rank { k, lambda: LambdaChoice::Fixed { lambda } } => {
            Ok((factorize(net, k, lambda, &opts.nmf)?, None))
        }
        FactorMode::Rank { k, lambda: LambdaChoice::Tuned { search } } => {
            let t = tune_lambda(net, k, &search, &opts.nmf)?;
            let report =
                TuningReport { lambda: t.lambda, gap: t.gap, insensitive: t.insensitive, evaluations: t.evaluations };
            Ok((t.factors, Some(report)))
        }
    }
}

pub fn cluster_factors(fp: &FactorPair, curing: &[f64], opts: &PipelineOptions) -> Result<Clustering> {
    let profiles = NodeProfiles::new(fp, curing)?;
    match opts.cluster {
        ClusterMode::Singleton => Ok(singleton_clustering(&profiles)),
        ClusterMode::KMeans { r } => cluster_nodes(&profiles, r, &opts.policy),
    }
}

/// Metastable mean and fluctuations for one clustering.
#[derive(Debug, Clone)]
pub struct ClusteredPrediction {
    pub prediction: MetastablePrediction,
    /// Absent below the threshold.
    pub fluctuation: Option<FluctuationModel>,
    pub distribution: Option<PredictedDistribution>,
    pub corrected: Option<CorrectedPrediction>,
    pub corrected_distribution: Option<PredictedDistribution>,
}

/// Metastable mean, covariance and (optionally) the corrected mean for a given clustering.
pub fn predict_clustered(cl: &Clustering, opts: &PipelineOptions) -> Result<ClusteredPrediction> {
    let prediction = solve_v(cl, &opts.solve)?;
    if !prediction.exists {
        return Ok(ClusteredPrediction {
            prediction,
            fluctuation: None,
            distribution: None,
            corrected: None,
            corrected_distribution: None,
        });
    }
    let fm = build_fluctuation(cl, &prediction)?;
    let dist = predicted_distribution(&prediction.ninf, &fm.sigma_inf, cl.n, false)?;
    let (corrected, corrected_distribution) = match opts.correction {
        Some(scaling) => {
            let c = corrected_mean_field(cl, &prediction, &fm.sigma_inf, scaling, &opts.solve)?;
            let d = predicted_distribution(&c.nhat, &fm.sigma_inf, cl.n, true)?;
            (Some(c), Some(d))
        }
        None => (None, None),
    };
    Ok(ClusteredPrediction {
        prediction,
        fluctuation: Some(fm),
        distribution: Some(dist),
        corrected,
        corrected_distribution,
    })
}

pub fn run_prediction(net: &RateNetwork, opts: &PipelineOptions) -> Result<PipelineResult> {
    if net.is_empty() {
        return Err(SisError::validation("network has no nodes"));
    }
    let (factors, tuning) = factor_network(net, opts)?;
    let clustering = cluster_factors(&factors, net.curing(), opts)?;
    let ClusteredPrediction { prediction, fluctuation, distribution, corrected, corrected_distribution } =
        predict_clustered(&clustering, opts)?;
    let nimfa_total = nimfa_steady_state(net)?.total;
    Ok(PipelineResult {
        factors,
        tuning,
        clustering,
        prediction,
        fluctuation,
        distribution,
        corrected,
        corrected_distribution,
        nimfa_total,
    })
}
