//! Pipeline configuration: a TOML file, overridden field by field from the command line.

use std::path::{Path, PathBuf};

use clustered_sis::clustering::ClusterPolicy;
use clustered_sis::metastable::{CorrectionScaling, SolveOptions};
use clustered_sis::nmf::{LambdaSearch, NmfOptions};
use clustered_sis::pipeline::{ClusterMode, FactorMode, LambdaChoice, PipelineOptions};
use clustered_sis::rng::derive_seed;
use clustered_sis::sim::MetastableOptions;
use clustered_sis::SisError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every component seed is derived from it by label.
    pub seed: u64,
    pub output: PathBuf,
    /// Largest `n` for which dense `n × n` matrices are formed.
    pub dense_threshold: usize,
    pub input: InputConfig,
    pub generate: GenerateConfig,
    pub factor: FactorConfig,
    pub cluster: ClusterConfig,
    pub simulation: SimulationConfig,
    pub correction: CorrectionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            output: PathBuf::from("out"),
            dense_threshold: 4096,
            input: InputConfig::default(),
            generate: GenerateConfig::default(),
            factor: FactorConfig::default(),
            cluster: ClusterConfig::default(),
            simulation: SimulationConfig::default(),
            correction: CorrectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curing: Option<PathBuf>,
    /// Curing rate of every node when no curing file is given.
    pub default_curing: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig { edges: None, curing: None, default_curing: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    ConfigModel,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub kind: GeneratorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub exponent: f64,
    pub mean_degree: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_degree: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<usize>,
    pub curing: f64,
    /// Target NIMFA prevalence of the surrogate.
    pub prevalence: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            kind: GeneratorKind::ConfigModel,
            n: None,
            exponent: 2.0,
            mean_degree: 15.0,
            min_degree: None,
            max_degree: None,
            curing: 1.0,
            prevalence: 0.3317,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    /// Inner dimension; absent means the identity factorization `W = I`, `H = Ã`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub lambda: f64,
    /// Choose `λ` by matching NIMFA prevalences instead of using `lambda`.
    pub tune: bool,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_tol: f64,
    pub lambda_steps: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub symmetric: bool,
}

impl Default for FactorConfig {
    fn default() -> Self {
        let s = LambdaSearch::default();
        let o = NmfOptions::default();
        FactorConfig {
            k: None,
            lambda: 0.0,
            tune: false,
            lambda_lo: s.lo,
            lambda_hi: s.hi,
            lambda_tol: s.tol,
            lambda_steps: s.max_steps,
            max_iter: o.max_iter,
            tol: o.tol,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Number of clusters; absent means one cluster per node.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outliers: Option<usize>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let p = ClusterPolicy::default();
        ClusterConfig { r: None, restarts: p.restarts, max_iter: p.max_iter, outliers: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    pub window: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<f64>,
    pub replicas: usize,
    pub max_restarts: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { burn_in: None, window: 1e4, interval: None, replicas: 1, max_restarts: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionConfig {
    pub enabled: bool,
    pub scaling: CorrectionScaling,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig { enabled: false, scaling: CorrectionScaling::Covariance }
    }
}

fn invalid(msg: impl Into<String>) -> SisError {
    SisError::validation(msg)
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, SisError> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Write the resolved configuration next to the outputs.
    pub fn persist(&self, dir: &Path) -> Result<(), SisError> {
        std::fs::write(dir.join("config.resolved.toml"), self.to_toml())?;
        Ok(())
    }

    pub fn edges_path(&self) -> Result<&Path, SisError> {
        self.input.edges.as_deref().ok_or_else(|| invalid("no edge file given (--edges or [input].edges)"))
    }

    /// Range checks shared by every command, plus existence of the configured input files.
    pub fn validate(&self) -> Result<(), SisError> {
        for p in [&self.input.edges, &self.input.curing].into_iter().flatten() {
            if !p.is_file() {
                return Err(invalid(format!("input file {} does not exist", p.display())));
            }
        }
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.input.default_curing, "default curing rate")?;
        positive(self.generate.curing, "generator curing rate")?;
        positive(self.simulation.window, "simulation window")?;
        if let Some(b) = self.simulation.burn_in {
            if !(b.is_finite() && b >= 0.0) {
                return Err(invalid(format!("burn-in must be non-negative, got {b}")));
            }
        }
        if let Some(i) = self.simulation.interval {
            positive(i, "sample interval")?;
        }
        if self.simulation.replicas == 0 {
            return Err(invalid("at least one replica is required"));
        }
        if self.factor.k == Some(0) {
            return Err(invalid("k must be at least 1"));
        }
        if self.cluster.r == Some(0) {
            return Err(invalid("r must be at least 1"));
        }
        if !(self.factor.lambda_lo < self.factor.lambda_hi) {
            return Err(invalid("lambda search needs lo < hi"));
        }
        positive(self.factor.lambda_tol, "lambda tolerance")?;
        if !(self.factor.tol >= 0.0) {
            return Err(invalid("factorization tolerance must be non-negative"));
        }
        if !(self.generate.prevalence > 0.0 && self.generate.prevalence < 1.0) {
            return Err(invalid("surrogate prevalence must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        let f = &self.factor;
        let factor = match f.k {
            None => FactorMode::Identity,
            Some(k) if f.tune => FactorMode::Rank {
                k,
                lambda: LambdaChoice::Tuned {
                    search: LambdaSearch {
                        lo: f.lambda_lo,
                        hi: f.lambda_hi,
                        tol: f.lambda_tol,
                        max_steps: f.lambda_steps,
                    },
                },
            },
            Some(k) => FactorMode::Rank { k, lambda: LambdaChoice::Fixed { lambda: f.lambda } },
        };
        PipelineOptions {
            factor,
            nmf: NmfOptions {
                max_iter: f.max_iter,
                tol: f.tol,
                seed: derive_seed(self.seed, "nmf"),
                symmetric: f.symmetric,
            },
            cluster: match self.cluster.r {
                None => ClusterMode::Singleton,
                Some(r) => ClusterMode::KMeans { r },
            },
            policy: ClusterPolicy {
                seed: derive_seed(self.seed, "cluster"),
                restarts: self.cluster.restarts,
                max_iter: self.cluster.max_iter,
                outlier_singletons: self.cluster.outliers,
            },
            solve: SolveOptions::default(),
            correction: self.correction.enabled.then_some(self.correction.scaling),
            dense_threshold: self.dense_threshold,
        }
    }

    pub fn metastable_options(&self) -> MetastableOptions {
        let s = &self.simulation;
        MetastableOptions {
            burn_in: s.burn_in,
            window: s.window,
            sample_interval: s.interval,
            seed: derive_seed(self.seed, "simulation"),
            max_restarts: s.max_restarts,
        }
    }
}
