//! Side-by-side comparison of simulated and predicted metastable distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::stats::{ks_ecdf_normal, mean_std, normal_cdf, Ecdf};

/// Normal summary of one prediction method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// KS distance to the simulated ECDF.
    pub ks: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub rows: Vec<MethodRow>,
    /// Mean absolute difference of per-node probabilities, predicted vs simulated.
    pub node_mae: Option<f64>,
    pub node_mae_corrected: Option<f64>,
    pub simulated_window: Option<f64>,
    pub simulated_samples: Option<usize>,
}

/// One row of the CDF overlay table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub total: usize,
    pub ecdf: Option<f64>,
    pub mean_field: Option<f64>,
    pub corrected: Option<f64>,
}

/// One row of the per-node scatter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub node: usize,
    pub predicted: f64,
    pub corrected: Option<f64>,
    pub simulated: Option<f64>,
}

/// Simulated side of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedInput<'a> {
    pub samples: &'a [u32],
    pub node_frequency: &'a [f64],
    pub window: f64,
}

/// Predicted side of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct PredictedInput<'a> {
    pub n: usize,
    pub mean_field: Option<NormalSummary>,
    pub corrected: Option<NormalSummary>,
    /// Per-node infection probability `N_j / n_j` of the node's cluster.
    pub node_probability: &'a [f64],
    pub node_probability_corrected: Option<&'a [f64]>,
}

pub struct Comparison {
    pub report: ComparisonReport,
    pub cdf: Vec<CdfRow>,
    pub nodes: Vec<NodeRow>,
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

pub fn compare(pred: &PredictedInput<'_>, sim: Option<&SimulatedInput<'_>>) -> Result<Comparison> {
    let n = pred.n;
    if pred.node_probability.len() != n {
        return Err(SisError::validation("per-node prediction does not cover every node"));
    }
    if let Some(s) = sim {
        if s.node_frequency.len() != n {
            return Err(SisError::validation("simulated node frequencies do not match the predicted network"));
        }
        if s.samples.is_empty() {
            return Err(SisError::validation("simulation has no samples"));
        }
    }
    let xs: Option<Vec<f64>> = sim.map(|s| s.samples.iter().map(|&v| f64::from(v)).collect());
    let ecdf = xs.as_ref().map(|x| Ecdf::from_samples(x));
    let ks = |m: Option<NormalSummary>| match (m, &ecdf) {
        (Some(m), Some(e)) if m.std > 0.0 => Some(ks_ecdf_normal(e, m.mean, m.std)),
        _ => None,
    };
    let mut rows = Vec::new();
    let (sm, ss) = match &xs {
        Some(x) => {
            let (m, s) = mean_std(x);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    rows.push(MethodRow { method: "Simulated".into(), mean: sm, std: ss, ks: None });
    rows.push(MethodRow {
        method: "Mean-field".into(),
        mean: pred.mean_field.map(|m| m.mean),
        std: pred.mean_field.map(|m| m.std),
        ks: ks(pred.mean_field),
    });
    rows.push(MethodRow {
        method: "Corrected".into(),
        mean: pred.corrected.map(|m| m.mean),
        std: pred.corrected.map(|m| m.std),
        ks: ks(pred.corrected),
    });

    let cdf_of = |m: Option<NormalSummary>, t: usize| m.map(|m| normal_cdf(t as f64, m.mean, m.std));
    let cdf = (0..=n)
        .map(|t| CdfRow {
            total: t,
            ecdf: ecdf.as_ref().map(|e| e.eval(t as f64)),
            mean_field: cdf_of(pred.mean_field, t),
            corrected: cdf_of(pred.corrected, t),
        })
        .collect();
    let nodes = (0..n)
        .map(|i| NodeRow {
            node: i,
            predicted: pred.node_probability[i],
            corrected: pred.node_probability_corrected.map(|c| c[i]),
            simulated: sim.map(|s| s.node_frequency[i]),
        })
        .collect();
    let report = ComparisonReport {
        n,
        rows,
        node_mae: sim.map(|s| mae(pred.node_probability, s.node_frequency)),
        node_mae_corrected: match (pred.node_probability_corrected, sim) {
            (Some(c), Some(s)) => Some(mae(c, s.node_frequency)),
            _ => None,
        },
        simulated_window: sim.map(|s| s.window),
        simulated_samples: sim.map(|s| s.samples.len()),
    };
    Ok(Comparison { report, cdf, nodes })
}

impl ComparisonReport {
    /// Markdown table with one column per method.
    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>, digits: usize| v.map_or_else(|| "–".to_string(), |x| format!("{x:.digits$}"));
        let mut out = String::new();
        out.push_str("| | ");
        out.push_str(&self.rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>().join(" | "));
        out.push_str(" |\n|---|");
        out.push_str(&"---|".repeat(self.rows.len()));
        out.push('\n');
        for (label, get, digits) in [
            ("Expectation", (|r: &MethodRow| r.mean) as fn(&MethodRow) -> Option<f64>, 1),
            ("Standard deviation", |r: &MethodRow| r.std, 2),
            ("KS distance", |r: &MethodRow| r.ks, 4),
        ] {
            out.push_str(&format!("| {label} | "));
            out.push_str(&self.rows.iter().map(|r| cell(get(r), digits)).collect::<Vec<_>>().join(" | "));
            out.push_str(" |\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_report_without_simulation() {
        let probs = vec![0.5; 4];
        let pred = PredictedInput {
            n: 4,
            mean_field: Some(NormalSummary { mean: 2.0, std: 1.0 }),
            corrected: None,
            node_probability: &probs,
            node_probability_corrected: None,
        };
        let c = compare(&pred, None).unwrap();
        assert_eq!(c.report.rows[0].mean, None);
        assert_eq!(c.report.rows[1].mean, Some(2.0));
        assert!(c.report.node_mae.is_none());
        assert_eq!(c.cdf.len(), 5);
        assert!(c.cdf.iter().all(|r| r.ecdf.is_none()));
        assert!(c.report.to_markdown().contains("| Expectation | – | 2.0 | – |"));
    }

    #[test]
    fn full_report_numbers() {
        let probs = vec![0.25, 0.75];
        let freq = vec![0.5, 0.5];
        let samples = [1u32, 1, 2, 0];
        let pred = PredictedInput {
            n: 2,
            mean_field: Some(NormalSummary { mean: 1.0, std: 0.5 }),
            corrected: Some(NormalSummary { mean: 1.0, std: 0.5 }),
            node_probability: &probs,
            node_probability_corrected: Some(&freq),
        };
        let sim = SimulatedInput { samples: &samples, node_frequency: &freq, window: 4.0 };
        let c = compare(&pred, Some(&sim)).unwrap();
        assert_eq!(c.report.rows[0].mean, Some(1.0));
        assert_eq!(c.report.node_mae, Some(0.25));
        assert_eq!(c.report.node_mae_corrected, Some(0.0));
        assert_eq!(c.cdf[1].ecdf, Some(0.75));
        assert_eq!(c.nodes[1].simulated, Some(0.5));
    }
}
