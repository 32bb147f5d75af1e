//! Heterogeneous SIS networks: the infection-rate matrix `Ã` and curing rates `δ`.
//!
//! `ã_ij` is the Poisson rate at which an infected node `i` infects a healthy node `j`.
//! Storage is compressed-row in both directions so that outgoing sampling and incoming
//! pressure sums are both linear in the number of links.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::linalg::dominant_eigenvalue;
use crate::rng::rng_from_seed;

/// Default cut-over below which dense `n × n` algebra is permitted.
pub const DEFAULT_DENSE_THRESHOLD: usize = 4096;

/// Anything that can play the role of an infection-rate matrix.
///
/// Implemented by the sparse [`RateNetwork`] and by the low-rank `WᵀH` operator of the
/// factorization module, so the simulator and the mean-field solvers run on either.
pub trait InfectionRates: Sync {
    fn node_count(&self) -> usize;

    fn curing(&self) -> &[f64];

    /// `out[j] = Σ_i ã_ij x[i]` (i.e. `Ãᵀ x`).
    fn spread(&self, x: &[f64], out: &mut [f64]);

    /// Total outgoing infection rate `Σ_j ã_ij` of node `i`.
    fn out_strength(&self, i: usize) -> f64;

    /// Draw a target `j` of node `i` with probability `ã_ij / out_strength(i)`.
    fn sample_target<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize;

    /// Single entry `ã_ij`; `O(deg)` or `O(k)`, intended for small oracles.
    fn rate(&self, i: usize, j: usize) -> f64;
}

/// Counts of records rewritten while building a network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub self_loops_dropped: usize,
    pub duplicates_merged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateNetwork {
    n: usize,
    out_offsets: Vec<usize>,
    out_targets: Vec<u32>,
    out_rates: Vec<f64>,
    out_cumulative: Vec<f64>,
    out_strength: Vec<f64>,
    in_offsets: Vec<usize>,
    in_sources: Vec<u32>,
    in_rates: Vec<f64>,
    curing: Vec<f64>,
}

impl RateNetwork {
    /// Build from `(src, dst, rate)` records. Duplicates are summed, self-loops dropped.
    pub fn from_edges<I>(n: usize, edges: I, curing: Vec<f64>) -> Result<(Self, BuildReport)>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if n == 0 {
            return Err(SisError::validation("network must have at least one node"));
        }
        if n > u32::MAX as usize {
            return Err(SisError::capacity(format!("{n} nodes exceed the 32-bit node index")));
        }
        if curing.len() != n {
            return Err(SisError::validation(format!(
                "curing vector has length {} but the network has {n} nodes",
                curing.len()
            )));
        }
        if let Some((i, d)) = curing.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d > 0.0)) {
            return Err(SisError::validation(format!("curing rate of node {i} must be positive, got {d}")));
        }

        let mut report = BuildReport::default();
        let mut records = Vec::new();
        for (src, dst, rate) in edges {
            if src >= n || dst >= n {
                return Err(SisError::validation(format!("edge ({src},{dst}) outside node range [0,{n})")));
            }
            if !(rate.is_finite() && rate > 0.0) {
                return Err(SisError::validation(format!("edge ({src},{dst}) has non-positive rate {rate}")));
            }
            if src == dst {
                report.self_loops_dropped += 1;
                continue;
            }
            records.push((src, dst, rate));
        }
        records.sort_by_key(|&(s, d, _)| (s, d));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(records.len());
        for (s, d, r) in records {
            match merged.last_mut() {
                Some(last) if last.0 == s && last.1 == d => {
                    last.2 += r;
                    report.duplicates_merged += 1;
                }
                _ => merged.push((s, d, r)),
            }
        }
        Ok((Self::from_sorted_unique(n, &merged, curing), report))
    }

    fn from_sorted_unique(n: usize, edges: &[(usize, usize, f64)], curing: Vec<f64>) -> Self {
        let m = edges.len();
        let mut out_offsets = vec![0usize; n + 1];
        let mut in_offsets = vec![0usize; n + 1];
        for &(s, d, _) in edges {
            out_offsets[s + 1] += 1;
            in_offsets[d + 1] += 1;
        }
        for i in 0..n {
            out_offsets[i + 1] += out_offsets[i];
            in_offsets[i + 1] += in_offsets[i];
        }
        let out_targets: Vec<u32> = edges.iter().map(|e| e.1 as u32).collect();
        let out_rates: Vec<f64> = edges.iter().map(|e| e.2).collect();

        let mut out_cumulative = vec![0.0; m];
        let mut out_strength = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for e in out_offsets[i]..out_offsets[i + 1] {
                acc += out_rates[e];
                out_cumulative[e] = acc;
            }
            out_strength[i] = acc;
        }

        // Edges are sorted by source, so filling in-lists in edge order keeps them sorted by source.
        let mut fill = in_offsets.clone();
        let mut in_sources = vec![0u32; m];
        let mut in_rates = vec![0.0; m];
        for &(s, d, r) in edges {
            in_sources[fill[d]] = s as u32;
            in_rates[fill[d]] = r;
            fill[d] += 1;
        }

        RateNetwork {
            n,
            out_offsets,
            out_targets,
            out_rates,
            out_cumulative,
            out_strength,
            in_offsets,
            in_sources,
            in_rates,
            curing,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of stored (strictly positive, off-diagonal) rates.
    pub fn link_count(&self) -> usize {
        self.out_targets.len()
    }

    pub fn out_links(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.out_offsets[i]..self.out_offsets[i + 1];
        self.out_targets[r.clone()].iter().map(|t| *t as usize).zip(self.out_rates[r].iter().copied())
    }

    pub fn in_links(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.in_offsets[j]..self.in_offsets[j + 1];
        self.in_sources[r.clone()].iter().map(|t| *t as usize).zip(self.in_rates[r].iter().copied())
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.out_offsets[i + 1] - self.out_offsets[i]
    }

    pub fn in_degree(&self, j: usize) -> usize {
        self.in_offsets[j + 1] - self.in_offsets[j]
    }

    /// All links in `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.out_links(i).map(move |(j, r)| (i, j, r)))
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.edges().all(|(i, j, r)| {
            let back = self.rate(j, i);
            (back - r).abs() <= rel_tol * r.abs().max(back.abs())
        })
    }

    /// Same topology with a new curing vector.
    pub fn with_curing(&self, curing: Vec<f64>) -> Result<Self> {
        let edges: Vec<_> = self.edges().collect();
        Self::from_edges(self.n, edges, curing).map(|(net, _)| net)
    }

    /// Multiply every infection and curing rate by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(SisError::validation(format!("scale factor must be positive, got {c}")));
        }
        let edges: Vec<_> = self.edges().map(|(i, j, r)| (i, j, r * c)).collect();
        let curing = self.curing.iter().map(|d| d * c).collect();
        Self::from_edges(self.n, edges, curing).map(|(net, _)| net)
    }

    /// Dense `Ã` (zero diagonal), refused above `dense_threshold` nodes.
    pub fn to_dense(&self, dense_threshold: usize) -> Result<nalgebra::DMatrix<f64>> {
        if self.n > dense_threshold {
            return Err(SisError::capacity(format!(
                "dense {0}x{0} rate matrix exceeds the dense threshold {dense_threshold}",
                self.n
            )));
        }
        let mut a = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, j, r) in self.edges() {
            a[(i, j)] = r;
        }
        Ok(a)
    }

    pub fn min_curing(&self) -> f64 {
        self.curing.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn uniform_curing(n: usize, delta: f64) -> Vec<f64> {
    vec![delta; n]
}

impl InfectionRates for RateNetwork {
    fn node_count(&self) -> usize {
        self.n
    }

    fn curing(&self) -> &[f64] {
        &self.curing
    }

    fn spread(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.in_links(j).map(|(i, r)| r * x[i]).sum();
        }
    }

    fn out_strength(&self, i: usize) -> f64 {
        self.out_strength[i]
    }

    fn sample_target<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let (lo, hi) = (self.out_offsets[i], self.out_offsets[i + 1]);
        debug_assert!(hi > lo, "sampling a target of a node without out-links");
        let u = rng.random::<f64>() * self.out_strength[i];
        let row = &self.out_cumulative[lo..hi];
        let k = row.partition_point(|c| *c <= u).min(row.len() - 1);
        self.out_targets[lo + k] as usize
    }

    fn rate(&self, i: usize, j: usize) -> f64 {
        let r = self.out_offsets[i]..self.out_offsets[i + 1];
        match self.out_targets[r.clone()].binary_search(&(j as u32)) {
            Ok(k) => self.out_rates[r.start + k],
            Err(_) => 0.0,
        }
    }
}

/// Dominant eigenvalue of `diag(1/δ)·Ãᵀ`; a value above 1 predicts a metastable state.
pub fn spectral_threshold<R: InfectionRates>(rates: &R) -> Result<f64> {
    let n = rates.node_count();
    let curing = rates.curing().to_vec();
    let e = dominant_eigenvalue(
        n,
        |x, y| {
            rates.spread(x, y);
            for (v, d) in y.iter_mut().zip(&curing) {
                *v /= d;
            }
        },
        1e-10,
        200_000,
    )?;
    Ok(e.value)
}

// ---------------------------------------------------------------------------
// Text formats

/// Parsed contents of an edge file.
#[derive(Debug, Clone, Default)]
pub struct EdgeRecords {
    pub edges: Vec<(usize, usize, f64)>,
    /// Node count declared by a `# nodes=N` directive, if present.
    pub declared_nodes: Option<usize>,
}

fn parse_field<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> Result<T> {
    let s = s.ok_or_else(|| SisError::Parse { line, message: format!("missing {what}") })?;
    s.trim().parse().map_err(|_| SisError::Parse { line, message: format!("cannot parse {what} from {:?}", s.trim()) })
}

/// Read `src,dst,rate` records. `#` lines are comments; `# nodes=N` declares the node count.
pub fn read_edges<R: BufRead>(reader: R) -> Result<EdgeRecords> {
    let mut out = EdgeRecords::default();
    let mut seen_data = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(comment) = t.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("nodes=") {
                out.declared_nodes = Some(parse_field(Some(v), lineno, "node count")?);
            }
            continue;
        }
        if !seen_data && t.eq_ignore_ascii_case("src,dst,rate") {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let mut parts = t.split(',');
        let src: usize = parse_field(parts.next(), lineno, "source node")?;
        let dst: usize = parse_field(parts.next(), lineno, "target node")?;
        let rate: f64 = parse_field(parts.next(), lineno, "rate")?;
        if parts.next().is_some() {
            return Err(SisError::Parse { line: lineno, message: "expected exactly three fields".into() });
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(SisError::validation(format!("line {lineno}: rate must be positive, got {rate}")));
        }
        out.edges.push((src, dst, rate));
    }
    Ok(out)
}

/// Read `node,delta` records.
pub fn read_curing<R: BufRead>(reader: R) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    let mut seen_data = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if !seen_data && t.eq_ignore_ascii_case("node,delta") {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let mut parts = t.split(',');
        let node: usize = parse_field(parts.next(), lineno, "node")?;
        let delta: f64 = parse_field(parts.next(), lineno, "curing rate")?;
        if parts.next().is_some() {
            return Err(SisError::Parse { line: lineno, message: "expected exactly two fields".into() });
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(SisError::validation(format!("line {lineno}: curing rate must be positive, got {delta}")));
        }
        out.push((node, delta));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Explicit node count; otherwise the largest of the declared count and the largest id + 1.
    pub nodes: Option<usize>,
    /// Curing rate used when no curing records are given.
    pub default_curing: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { nodes: None, default_curing: 1.0 }
    }
}

pub fn load_network<R1: BufRead, R2: BufRead>(
    edges: R1,
    curing: Option<R2>,
    opts: LoadOptions,
) -> Result<(RateNetwork, BuildReport)> {
    let records = read_edges(edges)?;
    let curing_records = curing.map(read_curing).transpose()?;
    let max_edge = records.edges.iter().map(|&(s, d, _)| s.max(d) + 1).max().unwrap_or(0);
    let max_cure = curing_records.iter().flatten().map(|&(i, _)| i + 1).max().unwrap_or(0);
    let n = match opts.nodes {
        Some(n) => n,
        None => records.declared_nodes.unwrap_or(0).max(max_edge).max(max_cure),
    };
    if n == 0 {
        return Err(SisError::validation("network has no nodes"));
    }
    let delta = match curing_records {
        None => uniform_curing(n, opts.default_curing),
        Some(recs) => {
            let mut delta = vec![f64::NAN; n];
            for (i, d) in recs {
                if i >= n {
                    return Err(SisError::validation(format!("curing record for node {i} outside [0,{n})")));
                }
                if !delta[i].is_nan() {
                    return Err(SisError::validation(format!("duplicate curing record for node {i}")));
                }
                delta[i] = d;
            }
            if let Some(i) = delta.iter().position(|d| d.is_nan()) {
                return Err(SisError::validation(format!("no curing record for node {i}")));
            }
            delta
        }
    };
    let (net, report) = RateNetwork::from_edges(n, records.edges, delta)?;
    if report.self_loops_dropped > 0 {
        log::warn!("dropped {} self-loop records", report.self_loops_dropped);
    }
    Ok((net, report))
}

pub fn load_network_files(
    edges: &Path,
    curing: Option<&Path>,
    opts: LoadOptions,
) -> Result<(RateNetwork, BuildReport)> {
    let e = BufReader::new(File::open(edges)?);
    let c = curing.map(|p| File::open(p).map(BufReader::new)).transpose()?;
    load_network(e, c, opts)
}

/// Write the edge file: header comments, a `# nodes=N` directive, then sorted records.
pub fn write_edges<W: Write>(net: &RateNetwork, header: &[String], mut w: W) -> Result<()> {
    for h in header {
        writeln!(w, "# {h}")?;
    }
    writeln!(w, "# nodes={}", net.len())?;
    for (i, j, r) in net.edges() {
        writeln!(w, "{i},{j},{r}")?;
    }
    Ok(())
}

pub fn write_curing<W: Write>(net: &RateNetwork, mut w: W) -> Result<()> {
    writeln!(w, "node,delta")?;
    for (i, d) in net.curing().iter().enumerate() {
        writeln!(w, "{i},{d}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Configuration model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigModelParams {
    /// Number of nodes before the largest component is extracted.
    pub n: usize,
    /// `α` in `Pr(D > x) ~ x^(-α)`.
    pub tail_exponent: f64,
    /// Target mean degree; sets the Pareto scale when `min_degree` is absent.
    pub mean_degree: f64,
    /// Pareto scale `x_min` of the degree law.
    pub min_degree: Option<f64>,
    /// Degree cutoff; defaults to `n - 1`.
    pub max_degree: Option<usize>,
    /// Uniform curing rate of the generated network.
    pub curing: f64,
    pub seed: u64,
}

impl ConfigModelParams {
    pub fn new(n: usize, tail_exponent: f64, mean_degree: f64, seed: u64) -> Self {
        ConfigModelParams { n, tail_exponent, mean_degree, min_degree: None, max_degree: None, curing: 1.0, seed }
    }

    /// Pareto scale: `x_min = (mean + ½)(α − 1)/α` compensates the flooring of a continuous Pareto draw.
    pub fn pareto_scale(&self) -> f64 {
        self.min_degree.unwrap_or((self.mean_degree + 0.5) * (self.tail_exponent - 1.0) / self.tail_exponent)
    }

    pub fn header(&self) -> String {
        format!(
            "configuration-model n={} tail_exponent={} mean_degree={} min_degree={} max_degree={} curing={} seed={}",
            self.n,
            self.tail_exponent,
            self.mean_degree,
            self.pareto_scale(),
            self.max_degree.unwrap_or(self.n.saturating_sub(1)),
            self.curing,
            self.seed
        )
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedNetwork {
    pub network: RateNetwork,
    pub params: ConfigModelParams,
    /// Sampled degree sequence of all `params.n` stubs owners.
    pub degree_sequence: Vec<usize>,
    /// Original index of every node retained in the largest component.
    pub original_ids: Vec<usize>,
    pub self_loops_removed: usize,
    pub multi_edges_collapsed: usize,
}

const DEGREE_RESAMPLE_BUDGET: usize = 1000;

/// Draw a degree sequence with an even sum.
pub fn sample_degree_sequence<R: Rng + ?Sized>(params: &ConfigModelParams, rng: &mut R) -> Result<Vec<usize>> {
    let alpha = params.tail_exponent;
    let xmin = params.pareto_scale();
    let cap = params.max_degree.unwrap_or(params.n - 1).max(1);
    let draw = |rng: &mut R| -> usize {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let x = (xmin * u.powf(-1.0 / alpha)).floor();
        if x >= cap as f64 {
            cap
        } else {
            (x as usize).max(1)
        }
    };
    let mut degrees: Vec<usize> = (0..params.n).map(|_| draw(rng)).collect();
    let mut budget = DEGREE_RESAMPLE_BUDGET;
    while degrees.iter().sum::<usize>() % 2 == 1 {
        if budget == 0 {
            return Err(SisError::Generation(format!(
                "degree sum stayed odd after {DEGREE_RESAMPLE_BUDGET} resamples"
            )));
        }
        budget -= 1;
        let i = rng.random_range(0..params.n);
        degrees[i] = draw(rng);
    }
    Ok(degrees)
}

/// Configuration-model graph with power-law degrees, restricted to its largest connected
/// component. Links carry rate 1 in both directions.
pub fn generate_configuration_model(params: &ConfigModelParams) -> Result<GeneratedNetwork> {
    if params.n < 2 {
        return Err(SisError::validation("configuration model needs n >= 2"));
    }
    if !(params.tail_exponent > 1.0) {
        return Err(SisError::validation("tail exponent must exceed 1"));
    }
    if !(params.curing > 0.0) {
        return Err(SisError::validation("curing rate must be positive"));
    }
    let mut rng = rng_from_seed(params.seed);
    let degrees = sample_degree_sequence(params, &mut rng)?;

    let mut stubs: Vec<u32> = degrees.iter().enumerate().flat_map(|(i, d)| std::iter::repeat_n(i as u32, *d)).collect();
    stubs.shuffle(&mut rng);

    let mut self_loops = 0;
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(stubs.len() / 2);
    for pair in stubs.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        if a == b {
            self_loops += 1;
        } else {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    let before = pairs.len();
    pairs.dedup();
    let multi = before - pairs.len();

    // Largest component by union-find; ties go to the component with the smallest node id.
    let n = params.n;
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in &pairs {
        let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    for &r in &roots {
        *sizes.entry(r).or_default() += 1;
    }
    let best = sizes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(r, _)| *r).expect("n >= 2");

    let original_ids: Vec<usize> = (0..n).filter(|&i| roots[i] == best).collect();
    let mut relabel = vec![usize::MAX; n];
    for (new, &old) in original_ids.iter().enumerate() {
        relabel[old] = new;
    }
    let m = original_ids.len();
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for &(a, b) in &pairs {
        let (a, b) = (relabel[a as usize], relabel[b as usize]);
        if a != usize::MAX {
            edges.push((a, b, 1.0));
            edges.push((b, a, 1.0));
        }
    }
    let (network, _) = RateNetwork::from_edges(m, edges, uniform_curing(m, params.curing))?;
    Ok(GeneratedNetwork {
        network,
        params: params.clone(),
        degree_sequence: degrees,
        original_ids,
        self_loops_removed: self_loops,
        multi_edges_collapsed: multi,
    })
}

/// Hill estimator of the tail exponent from the `k` largest values.
pub fn hill_estimator(values: &[usize], k: usize) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|v| *v as f64).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = k.min(sorted.len() - 1);
    let threshold = sorted[k];
    let mean_log = sorted[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    1.0 / mean_log
}
