//! One function per subcommand. Each reads its inputs, writes artifacts into the output
//! directory and returns an error whose exit code the caller reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use clustered_sis::clustering::Clustering;
use clustered_sis::fluctuation::{predicted_distribution, PredictedDistribution};
use clustered_sis::io::{
    load_clustering, load_factor_pair, read_json, read_matrix_csv, save_clustering, save_factor_pair, write_json,
    write_matrix_csv,
};
use clustered_sis::metastable::{corrected_mean_field, nimfa_steady_state, CorrectedPrediction, MetastablePrediction};
use clustered_sis::network::{
    generate_configuration_model, load_network_files, write_curing, write_edges, ConfigModelParams, LoadOptions,
};
use clustered_sis::pipeline::{cluster_factors, factor_network, predict_clustered, ClusteredPrediction};
use clustered_sis::report::{compare as compare_artifacts, NormalSummary, PredictedInput, SimulatedInput};
use clustered_sis::rng::derive_seed;
use clustered_sis::sim::{
    metastable_replicas, read_node_frequency_csv, read_samples_csv, simulate_sis_with, write_event,
    write_node_frequency_csv, write_samples_csv, SimulationSummary,
};
use clustered_sis::surrogate::{generate_surrogate, SurrogateParams};
use clustered_sis::{InfectionRates, RateNetwork, SisError};
use serde::{Deserialize, Serialize};

use crate::config::{GeneratorKind, PipelineConfig};

type Res = anyhow::Result<()>;

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn require(path: &Path) -> Result<(), SisError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(SisError::validation(format!("missing artifact {}", path.display())))
    }
}

fn load_input(cfg: &PipelineConfig) -> anyhow::Result<RateNetwork> {
    let edges = cfg.edges_path()?;
    let opts = LoadOptions { nodes: None, default_curing: cfg.input.default_curing };
    let (net, report) = load_network_files(edges, cfg.input.curing.as_deref(), opts)?;
    log::info!("loaded {} nodes, {} links ({:?})", net.len(), net.link_count(), report);
    Ok(net)
}

/// Accumulates wall-clock seconds per command in `timing.json`.
pub fn write_timing(dir: &Path, command: &str, elapsed: Duration) -> Res {
    let path = dir.join("timing.json");
    let mut t: BTreeMap<String, f64> =
        if path.is_file() { read_json(&path).unwrap_or_default() } else { BTreeMap::new() };
    t.insert(command.to_string(), elapsed.as_secs_f64());
    write_json(&t, &path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// generate

#[derive(Serialize)]
struct GenerateMeta<'a, P: Serialize> {
    kind: GeneratorKind,
    nodes: usize,
    links: usize,
    params: &'a P,
    #[serde(skip_serializing_if = "Option::is_none")]
    self_loops_removed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    multi_edges_collapsed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_scale: Option<f64>,
    nimfa_prevalence: f64,
}

pub fn generate(cfg: &PipelineConfig) -> Res {
    let g = &cfg.generate;
    let out = &cfg.output;
    let seed = derive_seed(cfg.seed, "generate");
    cfg.persist(out)?;
    match g.kind {
        GeneratorKind::ConfigModel => {
            let n = g.n.ok_or_else(|| SisError::validation("the configuration model needs --n"))?;
            let mut p = ConfigModelParams::new(n, g.exponent, g.mean_degree, seed);
            p.min_degree = g.min_degree;
            p.max_degree = g.max_degree;
            p.curing = g.curing;
            let gen = generate_configuration_model(&p)?;
            let net = &gen.network;
            write_edges(net, &[p.header()], create(&out.join("edges.csv"))?)?;
            write_curing(net, create(&out.join("curing.csv"))?)?;
            let mut w = csv::Writer::from_writer(create(&out.join("original_ids.csv"))?);
            w.write_record(["node", "original"])?;
            for (i, o) in gen.original_ids.iter().enumerate() {
                w.write_record([i.to_string(), o.to_string()])?;
            }
            w.flush()?;
            let mut w = csv::Writer::from_writer(create(&out.join("degree_sequence.csv"))?);
            w.write_record(["original", "degree"])?;
            for (i, d) in gen.degree_sequence.iter().enumerate() {
                w.write_record([i.to_string(), d.to_string()])?;
            }
            w.flush()?;
            let meta = GenerateMeta {
                kind: g.kind,
                nodes: net.len(),
                links: net.link_count(),
                params: &p,
                self_loops_removed: Some(gen.self_loops_removed),
                multi_edges_collapsed: Some(gen.multi_edges_collapsed),
                rate_scale: None,
                nimfa_prevalence: nimfa_steady_state(net)?.total / net.len() as f64,
            };
            write_json(&meta, out.join("generate.json"))?;
        }
        GeneratorKind::Surrogate => {
            let p = SurrogateParams {
                n: g.n.unwrap_or(SurrogateParams::default().n),
                curing: g.curing,
                target_prevalence: g.prevalence,
                seed,
                ..SurrogateParams::default()
            };
            let s = generate_surrogate(&p)?;
            write_edges(&s.network, &[p.header()], create(&out.join("edges.csv"))?)?;
            write_curing(&s.network, create(&out.join("curing.csv"))?)?;
            let meta = GenerateMeta {
                kind: g.kind,
                nodes: s.network.len(),
                links: s.network.link_count(),
                params: &p,
                self_loops_removed: None,
                multi_edges_collapsed: None,
                rate_scale: Some(s.rate_scale),
                nimfa_prevalence: s.prevalence,
            };
            write_json(&meta, out.join("generate.json"))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// factorize / cluster

pub fn factorize(cfg: &PipelineConfig) -> Res {
    let net = load_input(cfg)?;
    let opts = cfg.pipeline_options();
    cfg.persist(&cfg.output)?;
    let (fp, tuning) = factor_network(&net, &opts)?;
    save_factor_pair(&fp, &cfg.output)?;
    if let Some(t) = tuning {
        write_json(&t, cfg.output.join("tuning.json"))?;
    }
    Ok(())
}

pub fn cluster(cfg: &PipelineConfig, factors: &Path) -> Res {
    let net = load_input(cfg)?;
    let fp = load_factor_pair(factors).with_context(|| format!("loading factors from {}", factors.display()))?;
    if fp.n() != net.len() {
        return Err(SisError::validation("factors and network have different node counts").into());
    }
    cfg.persist(&cfg.output)?;
    let cl = cluster_factors(&fp, net.curing(), &cfg.pipeline_options())?;
    save_clustering(&cl, &cfg.output)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// predict / correct

/// Headline numbers of a prediction, in `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub exists: bool,
    pub abar_eig: f64,
    pub mean_total: f64,
    pub std_total: Option<f64>,
    pub corrected_mean_total: Option<f64>,
    pub nimfa_total: Option<f64>,
}

fn write_node_probabilities(cl: &Clustering, ninf: &[f64], corrected: Option<&[f64]>, path: &Path) -> Res {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["node", "cluster", "predicted", "corrected"])?;
    for (i, &c) in cl.assignment.iter().enumerate() {
        let size = cl.sizes[c] as f64;
        let corr = corrected.map(|v| (v[c] / size).to_string()).unwrap_or_default();
        w.write_record([i.to_string(), c.to_string(), (ninf[c] / size).to_string(), corr])?;
    }
    w.flush()?;
    Ok(())
}

fn read_node_probabilities(path: &Path) -> anyhow::Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(File::open(path)?);
    let (mut pred, mut corr) = (Vec::new(), Vec::new());
    let mut all_corrected = true;
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = || SisError::Parse { line: line + 2, message: "expected node,cluster,predicted,corrected".into() };
        pred.push(rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        match rec.get(3).filter(|s| !s.is_empty()) {
            Some(s) => corr.push(s.parse::<f64>().map_err(|_| bad())?),
            None => all_corrected = false,
        }
    }
    Ok((pred, all_corrected.then_some(corr).filter(|c| !c.is_empty())))
}

fn write_corrected(dir: &Path, c: &CorrectedPrediction, d: &PredictedDistribution) -> Res {
    write_json(c, dir.join("corrected.json"))?;
    write_json(d, dir.join("corrected_distribution.json"))?;
    Ok(())
}

pub fn predict(cfg: &PipelineConfig) -> Res {
    let net = load_input(cfg)?;
    let opts = cfg.pipeline_options();
    let out = &cfg.output;
    cfg.persist(out)?;
    let (fp, tuning) = factor_network(&net, &opts)?;
    save_factor_pair(&fp, out)?;
    if let Some(t) = &tuning {
        write_json(t, out.join("tuning.json"))?;
    }
    let cl = cluster_factors(&fp, net.curing(), &opts)?;
    save_clustering(&cl, out)?;
    let ClusteredPrediction {
        prediction: pred,
        fluctuation: fm,
        distribution: dist,
        corrected,
        corrected_distribution: corrected_dist,
    } = predict_clustered(&cl, &opts)?;
    write_json(&pred, out.join("prediction.json"))?;
    write_node_probabilities(
        &cl,
        &pred.ninf,
        corrected.as_ref().map(|c| c.nhat.as_slice()),
        &out.join("node_probability.csv"),
    )?;
    if let (Some(fm), Some(d)) = (&fm, &dist) {
        write_json(&fm.summary(), out.join("fluctuation.json"))?;
        write_matrix_csv(&fm.sigma_inf, "cluster", create(&out.join("sigma_inf.csv"))?)?;
        write_matrix_csv(&fm.k, "cluster", create(&out.join("K.csv"))?)?;
        write_matrix_csv(&fm.m, "cluster", create(&out.join("M.csv"))?)?;
        write_json(d, out.join("distribution.json"))?;
    }
    if let (Some(c), Some(d)) = (&corrected, &corrected_dist) {
        write_corrected(out, c, d)?;
    }
    let summary = PredictionSummary {
        n: cl.n,
        k: cl.k,
        r: cl.r(),
        exists: pred.exists,
        abar_eig: pred.abar_eig,
        mean_total: pred.total(),
        std_total: dist.as_ref().map(|d| d.std_total),
        corrected_mean_total: corrected.as_ref().map(|c| c.total()),
        nimfa_total: Some(nimfa_steady_state(&net)?.total),
    };
    write_json(&summary, out.join("summary.json"))?;
    if !pred.exists {
        return Err(SisError::Subcritical(format!(
            "dominant eigenvalue {:.6} of the clustered system is at most 1; no metastable state",
            pred.abar_eig
        ))
        .into());
    }
    log::info!("predicted total {:.3} ± {:.3}", summary.mean_total, summary.std_total.unwrap_or(0.0));
    Ok(())
}

pub fn correct(cfg: &PipelineConfig, prediction: &Path) -> Res {
    for f in ["prediction.json", "sigma_inf.csv", "clusters.csv", "centers.json", "summary.json"] {
        require(&prediction.join(f))?;
    }
    let cl = load_clustering(prediction)?;
    let pred: MetastablePrediction = read_json(prediction.join("prediction.json"))?;
    let mut summary: PredictionSummary = read_json(prediction.join("summary.json"))?;
    if !pred.exists {
        return Err(SisError::Subcritical("stored prediction has no metastable state".into()).into());
    }
    let sigma_inf = read_matrix_csv(File::open(prediction.join("sigma_inf.csv"))?)?;
    let opts = cfg.pipeline_options();
    let out = &cfg.output;
    cfg.persist(out)?;
    let c = corrected_mean_field(&cl, &pred, &sigma_inf, cfg.correction.scaling, &opts.solve)?;
    let d = predicted_distribution(&c.nhat, &sigma_inf, cl.n, true)?;
    write_corrected(out, &c, &d)?;
    write_node_probabilities(&cl, &pred.ninf, Some(&c.nhat), &out.join("node_probability.csv"))?;
    summary.corrected_mean_total = Some(c.total());
    write_json(&summary, out.join("summary.json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn event_log<R: InfectionRates>(rates: &R, horizon: f64, seed: u64, path: &Path) -> Res {
    let mut w = create(path)?;
    let mut failure = None;
    let all: Vec<usize> = (0..rates.node_count()).collect();
    simulate_sis_with(rates, &all, horizon, seed, |e| {
        if failure.is_none() {
            if let Err(err) = write_event(&mut w, e) {
                failure = Some(err);
            }
        }
    })?;
    if let Some(err) = failure {
        return Err(err.into());
    }
    w.flush()?;
    Ok(())
}

fn run_simulation<R: InfectionRates + Sync>(
    cfg: &PipelineConfig,
    rates: &R,
    log: Option<(f64, &Path)>,
) -> anyhow::Result<SimulationSummary> {
    let opts = cfg.metastable_options();
    let summary = metastable_replicas(rates, &opts, cfg.simulation.replicas, opts.seed)?;
    if let Some((horizon, path)) = log {
        event_log(rates, horizon, derive_seed(cfg.seed, "event-log"), path)?;
    }
    Ok(summary)
}

pub fn simulate(cfg: &PipelineConfig, wth: Option<&Path>, log: Option<(f64, &Path)>) -> Res {
    let net = load_input(cfg)?;
    let out = &cfg.output;
    cfg.persist(out)?;
    let summary = match wth {
        None => run_simulation(cfg, &net, log)?,
        Some(dir) => {
            let fp = load_factor_pair(dir).with_context(|| format!("loading factors from {}", dir.display()))?;
            if fp.n() != net.len() {
                return Err(SisError::validation("factors and network have different node counts").into());
            }
            let rates = fp.low_rank_rates(net.curing().to_vec(), false)?;
            run_simulation(cfg, &rates, log)?
        }
    };
    write_json(&summary, out.join("simulation.json"))?;
    write_samples_csv(&summary, create(&out.join("samples.csv"))?)?;
    write_node_frequency_csv(&summary, create(&out.join("node_frequency.csv"))?)?;
    log::info!("simulated mean {:.3}, std {:.3}, {} samples", summary.mean, summary.std, summary.samples.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// compare / report

fn normal(d: &PredictedDistribution) -> NormalSummary {
    NormalSummary { mean: d.mean_total, std: d.std_total }
}

pub fn compare(cfg: &PipelineConfig, prediction: &Path, simulation: Option<&Path>) -> Res {
    require(&prediction.join("summary.json"))?;
    require(&prediction.join("node_probability.csv"))?;
    let summary: PredictionSummary = read_json(prediction.join("summary.json"))?;
    let load_dist = |name: &str| -> anyhow::Result<Option<PredictedDistribution>> {
        let p = prediction.join(name);
        Ok(if p.is_file() { Some(read_json(p)?) } else { None })
    };
    let dist = load_dist("distribution.json")?;
    let corrected = load_dist("corrected_distribution.json")?;
    let (probs, probs_corrected) = read_node_probabilities(&prediction.join("node_probability.csv"))?;
    // A subcritical prediction is a point mass at zero.
    let mean_field = dist.as_ref().map(normal).or((!summary.exists).then_some(NormalSummary { mean: 0.0, std: 0.0 }));
    let pred = PredictedInput {
        n: summary.n,
        mean_field,
        corrected: corrected.as_ref().map(normal),
        node_probability: &probs,
        node_probability_corrected: probs_corrected.as_deref(),
    };
    let sim_data = match simulation {
        None => None,
        Some(dir) => {
            for f in ["samples.csv", "node_frequency.csv", "simulation.json"] {
                require(&dir.join(f))?;
            }
            let samples = read_samples_csv(File::open(dir.join("samples.csv"))?)?;
            let freq = read_node_frequency_csv(File::open(dir.join("node_frequency.csv"))?)?;
            let meta: serde_json::Value = read_json(dir.join("simulation.json"))?;
            let window = meta.get("window_time").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            Some((samples, freq, window))
        }
    };
    let sim = sim_data.as_ref().map(|(samples, freq, window)| SimulatedInput {
        samples,
        node_frequency: freq,
        window: *window,
    });
    let cmp = compare_artifacts(&pred, sim.as_ref())?;
    let out = &cfg.output;
    write_json(&cmp.report, out.join("comparison.json"))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(create(&out.join("cdf.csv"))?);
    w.write_record(["total", "ecdf", "mean_field", "corrected"])?;
    for r in &cmp.cdf {
        w.write_record([r.total.to_string(), opt(r.ecdf), opt(r.mean_field), opt(r.corrected)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&out.join("nodes.csv"))?);
    w.write_record(["node", "predicted", "corrected", "simulated"])?;
    for r in &cmp.nodes {
        w.write_record([r.node.to_string(), r.predicted.to_string(), opt(r.corrected), opt(r.simulated)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn report(cfg: &PipelineConfig, comparison: &Path) -> Res {
    require(&comparison.join("comparison.json"))?;
    let rep: clustered_sis::report::ComparisonReport = read_json(comparison.join("comparison.json"))?;
    let mut md = format!("# Metastable comparison (n = {})\n\n", rep.n);
    md.push_str(&rep.to_markdown());
    let mut extra = Vec::new();
    if let (Some(w), Some(s)) = (rep.simulated_window, rep.simulated_samples) {
        extra.push(format!("Simulation window {w} with {s} samples."));
    }
    if let Some(m) = rep.node_mae {
        extra.push(format!("Mean absolute per-node error, mean field: {m:.4}."));
    }
    if let Some(m) = rep.node_mae_corrected {
        extra.push(format!("Mean absolute per-node error, corrected: {m:.4}."));
    }
    if !extra.is_empty() {
        md.push('\n');
        md.push_str(&extra.join("\n"));
        md.push('\n');
    }
    std::fs::write(cfg.output.join("report.md"), &md)?;
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(md.as_bytes())?;
    Ok(())
}
