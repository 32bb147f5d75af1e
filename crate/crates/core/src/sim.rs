//! Exact continuous-time simulation of heterogeneous SIS dynamics.
//!
//! Each infected node `i` fires at total rate `δ_i + Σ_j ã_ij`. A firing is a curing with
//! probability `δ_i / (δ_i + Σ_j ã_ij)`; otherwise a target `j` is drawn with probability
//! `ã_ij / Σ_j ã_ij` and infected if healthy. Draws that hit an already infected target
//! change nothing, which thins the candidate stream to exactly the SIS generator: node `j`
//! is infected at rate `Σ_{i infected} ã_ij` and cures at rate `δ_j`. No neighbour rates are
//! updated on an event, so hubs cost `O(log n)` like every other node.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::network::InfectionRates;
use crate::rng::{derive_indexed, rng_from_seed, SimRng};
use crate::stats::{mean_std, Ecdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum EventKind {
    Heal = 0,
    Infect = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub node: u32,
    pub kind: EventKind,
}

/// Binary tree of partial sums over node firing rates.
#[derive(Debug, Clone)]
struct SumTree {
    leaves: usize,
    tree: Vec<f64>,
}

impl SumTree {
    fn new(n: usize) -> Self {
        let leaves = n.next_power_of_two().max(1);
        SumTree { leaves, tree: vec![0.0; 2 * leaves] }
    }

    fn set(&mut self, i: usize, value: f64) {
        let mut k = i + self.leaves;
        self.tree[k] = value;
        while k > 1 {
            k /= 2;
            self.tree[k] = self.tree[2 * k] + self.tree[2 * k + 1];
        }
    }

    fn total(&self) -> f64 {
        self.tree[1]
    }

    /// Leaf whose cumulative interval contains `u ∈ [0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.tree[2 * k];
            if u < left || self.tree[2 * k + 1] == 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }
}

/// Outcome of advancing the process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Event(Event),
    /// The horizon was reached without a further event; `time()` equals the horizon.
    Horizon,
    /// All nodes are healthy.
    Absorbed,
}

/// Running SIS process over any [`InfectionRates`].
pub struct SisProcess<'a, R: InfectionRates> {
    rates: &'a R,
    infected: Vec<bool>,
    count: usize,
    time: f64,
    tree: SumTree,
    fire_rate: Vec<f64>,
    rng: SimRng,
    candidates: u64,
}

impl<'a, R: InfectionRates> SisProcess<'a, R> {
    pub fn new(rates: &'a R, initial: &[usize], seed: u64) -> Result<Self> {
        let n = rates.node_count();
        let fire_rate: Vec<f64> = (0..n).map(|i| rates.curing()[i] + rates.out_strength(i)).collect();
        let mut p = SisProcess {
            rates,
            infected: vec![false; n],
            count: 0,
            time: 0.0,
            tree: SumTree::new(n),
            fire_rate,
            rng: rng_from_seed(seed),
            candidates: 0,
        };
        for &i in initial {
            if i >= n {
                return Err(SisError::validation(format!("initial node {i} outside [0,{n})")));
            }
            p.set_infected(i, true);
        }
        Ok(p)
    }

    fn set_infected(&mut self, i: usize, on: bool) {
        if self.infected[i] == on {
            return;
        }
        self.infected[i] = on;
        if on {
            self.count += 1;
            self.tree.set(i, self.fire_rate[i]);
        } else {
            self.count -= 1;
            self.tree.set(i, 0.0);
        }
    }

    /// Restart from a new infected set at time 0 with a fresh stream.
    pub fn reset(&mut self, initial: &[usize], seed: u64) {
        for i in 0..self.infected.len() {
            self.set_infected(i, false);
        }
        for &i in initial {
            self.set_infected(i, true);
        }
        self.time = 0.0;
        self.rng = rng_from_seed(seed);
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn infected_count(&self) -> usize {
        self.count
    }

    pub fn is_infected(&self, i: usize) -> bool {
        self.infected[i]
    }

    pub fn infected_nodes(&self) -> Vec<usize> {
        (0..self.infected.len()).filter(|&i| self.infected[i]).collect()
    }

    /// Candidate firings drawn so far, including rejected infection attempts.
    pub fn candidates(&self) -> u64 {
        self.candidates
    }

    /// Advance to the next state change, stopping at `horizon`.
    pub fn advance(&mut self, horizon: f64) -> Step {
        loop {
            if self.count == 0 {
                return Step::Absorbed;
            }
            let total = self.tree.total();
            let u: f64 = 1.0 - self.rng.random::<f64>();
            let next = self.time - u.ln() / total;
            if next > horizon {
                self.time = horizon;
                return Step::Horizon;
            }
            self.time = next;
            self.candidates += 1;
            let i = self.tree.find(self.rng.random::<f64>() * total);
            // Guard the measure-zero case of landing on an empty leaf through round-off.
            if !self.infected[i] {
                continue;
            }
            let delta = self.rates.curing()[i];
            if self.rng.random::<f64>() * self.fire_rate[i] < delta {
                self.set_infected(i, false);
                return Step::Event(Event { time: next, node: i as u32, kind: EventKind::Heal });
            }
            let j = self.rates.sample_target(i, &mut self.rng);
            if !self.infected[j] {
                self.set_infected(j, true);
                return Step::Event(Event { time: next, node: j as u32, kind: EventKind::Infect });
            }
        }
    }
}

/// Event-ordered record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub events: Vec<Event>,
    pub final_infected: Vec<usize>,
    pub absorbed_at: Option<f64>,
    pub horizon: f64,
}

/// Simulate from `initial` up to `horizon`, passing each event to `on_event`.
pub fn simulate_sis_with<R, F>(
    rates: &R,
    initial: &[usize],
    horizon: f64,
    seed: u64,
    mut on_event: F,
) -> Result<(Vec<usize>, Option<f64>)>
where
    R: InfectionRates,
    F: FnMut(&Event),
{
    if !(horizon >= 0.0) {
        return Err(SisError::validation("horizon must be non-negative"));
    }
    if initial.is_empty() && horizon > 0.0 {
        return Err(SisError::validation("initial infected set is empty"));
    }
    let mut p = SisProcess::new(rates, initial, seed)?;
    let absorbed = loop {
        match p.advance(horizon) {
            Step::Event(e) => on_event(&e),
            Step::Horizon => break None,
            Step::Absorbed => break Some(p.time()),
        }
    };
    Ok((p.infected_nodes(), absorbed))
}

pub fn simulate_sis<R: InfectionRates>(rates: &R, initial: &[usize], horizon: f64, seed: u64) -> Result<Trajectory> {
    let mut events = Vec::new();
    let (final_infected, absorbed_at) = simulate_sis_with(rates, initial, horizon, seed, |e| events.push(*e))?;
    Ok(Trajectory { events, final_infected, absorbed_at, horizon })
}

/// Record size of the binary event log: `f64` time, `u32` node, `u8` kind, little endian.
pub const EVENT_RECORD_BYTES: usize = 13;

pub fn write_event<W: Write>(w: &mut W, e: &Event) -> std::io::Result<()> {
    w.write_all(&e.time.to_le_bytes())?;
    w.write_all(&e.node.to_le_bytes())?;
    w.write_all(&[e.kind as u8])
}

pub fn read_event_log<R: Read>(mut r: R) -> Result<Vec<Event>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % EVENT_RECORD_BYTES != 0 {
        return Err(SisError::validation("event log length is not a multiple of the record size"));
    }
    buf.chunks_exact(EVENT_RECORD_BYTES)
        .map(|c| {
            let time = f64::from_le_bytes(c[0..8].try_into().unwrap());
            let node = u32::from_le_bytes(c[8..12].try_into().unwrap());
            let kind = match c[12] {
                0 => EventKind::Heal,
                1 => EventKind::Infect,
                k => return Err(SisError::validation(format!("unknown event kind {k}"))),
            };
            Ok(Event { time, node, kind })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Metastable sampling

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetastableOptions {
    /// Discarded start-up time of every run; defaults to `10 / δ_min`.
    pub burn_in: Option<f64>,
    /// Total observed time, accumulated over restarts.
    pub window: f64,
    /// Spacing of the total-infected samples; defaults to `1 / δ_min`.
    pub sample_interval: Option<f64>,
    pub seed: u64,
    /// Consecutive runs dying out during burn-in tolerated before the regime is declared subcritical.
    pub max_restarts: usize,
}

impl MetastableOptions {
    pub fn new(window: f64, seed: u64) -> Self {
        MetastableOptions { burn_in: None, window, sample_interval: None, seed, max_restarts: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub first_half_mean: f64,
    pub second_half_mean: f64,
    pub std_error: f64,
    /// Halves differ by less than one standard error.
    pub passed: bool,
}

impl Stationarity {
    fn from_samples(samples: &[f64]) -> Self {
        let half = samples.len() / 2;
        if half == 0 {
            return Stationarity {
                first_half_mean: f64::NAN,
                second_half_mean: f64::NAN,
                std_error: f64::NAN,
                passed: false,
            };
        }
        let (a, _) = mean_std(&samples[..half]);
        let (b, _) = mean_std(&samples[half..]);
        let (_, s) = mean_std(samples);
        let se = s * (2.0 / half as f64).sqrt();
        Stationarity { first_half_mean: a, second_half_mean: b, std_error: se, passed: (a - b).abs() < se }
    }
}

/// Aggregates of the total number of infected nodes over a metastable window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n: usize,
    #[serde(skip)]
    pub samples: Vec<u32>,
    /// Fraction of the observed time each node spent infected.
    #[serde(skip)]
    pub node_frequency: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub ecdf: Ecdf,
    pub burn_in_time: f64,
    pub window_time: f64,
    pub sample_interval: f64,
    pub seed: u64,
    pub restarts: usize,
    pub absorbed: bool,
    /// Absorption times, measured from the start of the run in which they occurred.
    pub absorption_times: Vec<f64>,
    pub stationarity: Stationarity,
    pub events: u64,
}

impl SimulationSummary {
    fn finish(mut self) -> Self {
        let xs: Vec<f64> = self.samples.iter().map(|&s| f64::from(s)).collect();
        let (mean, std) = mean_std(&xs);
        self.mean = mean;
        self.std = std;
        self.ecdf = Ecdf::from_samples(&xs);
        self.stationarity = Stationarity::from_samples(&xs);
        self.absorbed = !self.absorption_times.is_empty();
        self
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    /// Merge replicas in the given order; the result does not depend on how replicas were grouped.
    pub fn merge(parts: &[SimulationSummary]) -> Result<SimulationSummary> {
        let first = parts.first().ok_or_else(|| SisError::validation("nothing to merge"))?;
        if parts.iter().any(|p| p.n != first.n) {
            return Err(SisError::validation("cannot merge summaries of different networks"));
        }
        let window: f64 = parts.iter().map(|p| p.window_time).sum();
        let mut node_frequency = vec![0.0; first.n];
        for p in parts {
            for (acc, f) in node_frequency.iter_mut().zip(&p.node_frequency) {
                *acc += f * p.window_time;
            }
        }
        node_frequency.iter_mut().for_each(|f| *f /= window);
        let merged = SimulationSummary {
            n: first.n,
            samples: parts.iter().flat_map(|p| p.samples.iter().copied()).collect(),
            node_frequency,
            mean: 0.0,
            std: 0.0,
            ecdf: Ecdf { values: vec![], cumulative: vec![] },
            burn_in_time: first.burn_in_time,
            window_time: window,
            sample_interval: first.sample_interval,
            seed: first.seed,
            restarts: parts.iter().map(|p| p.restarts).sum(),
            absorbed: false,
            absorption_times: parts.iter().flat_map(|p| p.absorption_times.iter().copied()).collect(),
            stationarity: first.stationarity,
            events: parts.iter().map(|p| p.events).sum(),
        };
        Ok(merged.finish())
    }
}

/// Start all-infected, discard the burn-in, then sample the number of infected nodes at
/// fixed intervals until `window` time units have been observed. Absorbed runs are
/// restarted (with burn-in) from a fresh seed; their pre-absorption samples are kept.
pub fn metastable_sample<R: InfectionRates>(rates: &R, opts: &MetastableOptions) -> Result<SimulationSummary> {
    let n = rates.node_count();
    if !(opts.window > 0.0) {
        return Err(SisError::validation("window must be positive"));
    }
    let dmin = rates.curing().iter().copied().fold(f64::INFINITY, f64::min);
    let burn_in = opts.burn_in.unwrap_or(10.0 / dmin);
    let interval = opts.sample_interval.unwrap_or(1.0 / dmin);
    if !(interval > 0.0) || !(burn_in >= 0.0) {
        return Err(SisError::validation("sample interval must be positive and burn-in non-negative"));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut process = SisProcess::new(rates, &all, derive_indexed(opts.seed, "run", 0))?;

    let mut samples: Vec<u32> = Vec::with_capacity((opts.window / interval) as usize + 1);
    let mut infected_time = vec![0.0; n];
    let mut since = vec![0.0; n];
    let mut observed = 0.0;
    let mut restarts = 0;
    let mut failed_burn_ins = 0;
    let mut absorption_times = Vec::new();
    let mut events = 0u64;
    let mut run = 0u64;

    while observed < opts.window {
        if run > 0 {
            process.reset(&all, derive_indexed(opts.seed, "run", run));
        }
        run += 1;

        let burned = loop {
            match process.advance(burn_in) {
                Step::Event(_) => events += 1,
                Step::Horizon => break true,
                Step::Absorbed => break false,
            }
        };
        if !burned {
            absorption_times.push(process.time());
            restarts += 1;
            failed_burn_ins += 1;
            if failed_burn_ins > opts.max_restarts {
                return Err(subcritical(failed_burn_ins));
            }
            continue;
        }
        failed_burn_ins = 0;

        let start = process.time();
        let stop = start + (opts.window - observed);
        for (i, s) in since.iter_mut().enumerate() {
            if process.is_infected(i) {
                *s = start;
            }
        }
        let mut next_sample = start;
        let end = loop {
            let step = process.advance(stop);
            let t = process.time();
            while next_sample < t || (matches!(step, Step::Horizon) && next_sample <= t && next_sample < stop) {
                // The state is constant on [previous event, t): record it at the sample time.
                let before = match step {
                    Step::Event(e) => match e.kind {
                        EventKind::Infect => process.infected_count() - 1,
                        EventKind::Heal => process.infected_count() + 1,
                    },
                    _ => process.infected_count(),
                };
                samples.push(before as u32);
                next_sample += interval;
            }
            match step {
                Step::Event(e) => {
                    events += 1;
                    let i = e.node as usize;
                    match e.kind {
                        EventKind::Infect => since[i] = t,
                        EventKind::Heal => infected_time[i] += t - since[i],
                    }
                }
                Step::Horizon => break t,
                Step::Absorbed => {
                    absorption_times.push(t);
                    restarts += 1;
                    break t;
                }
            }
        };
        for (i, s) in since.iter().enumerate() {
            if process.is_infected(i) {
                infected_time[i] += end - s;
            }
        }
        observed += end - start;
    }

    let node_frequency = infected_time.iter().map(|t| t / observed).collect();
    Ok(SimulationSummary {
        n,
        samples,
        node_frequency,
        mean: 0.0,
        std: 0.0,
        ecdf: Ecdf { values: vec![], cumulative: vec![] },
        burn_in_time: burn_in,
        window_time: observed,
        sample_interval: interval,
        seed: opts.seed,
        restarts,
        absorbed: false,
        absorption_times,
        stationarity: Stationarity::from_samples(&[]),
        events,
    }
    .finish())
}

fn subcritical(runs: usize) -> SisError {
    SisError::Subcritical(format!(
        "{runs} consecutive runs died out during burn-in; check the spectral threshold of the network"
    ))
}

/// Independent replicas with seeds derived from `master_seed`, run in parallel and merged in
/// replica order.
pub fn metastable_replicas<R: InfectionRates>(
    rates: &R,
    opts: &MetastableOptions,
    replicas: usize,
    master_seed: u64,
) -> Result<SimulationSummary> {
    if replicas == 0 {
        return Err(SisError::validation("at least one replica is required"));
    }
    let parts: Vec<SimulationSummary> = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut o = *opts;
            o.seed = derive_indexed(master_seed, "replica", k as u64);
            metastable_sample(rates, &o)
        })
        .collect::<Result<_>>()?;
    let mut merged = SimulationSummary::merge(&parts)?;
    merged.seed = master_seed;
    Ok(merged)
}

// ---------------------------------------------------------------------------
// Persistence

pub fn write_samples_csv<W: Write>(summary: &SimulationSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["index", "infected"])?;
    for (k, s) in summary.samples.iter().enumerate() {
        wr.write_record([k.to_string(), s.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_node_frequency_csv<W: Write>(summary: &SimulationSummary, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["node", "frequency"])?;
    for (i, f) in summary.node_frequency.iter().enumerate() {
        wr.write_record([i.to_string(), f.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<u32>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| SisError::validation("malformed samples record"))
        })
        .collect()
}

pub fn read_node_frequency_csv<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| SisError::validation("malformed node frequency record"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{uniform_curing, RateNetwork};

    fn complete(n: usize, beta: f64, delta: f64) -> RateNetwork {
        let edges = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, beta)));
        RateNetwork::from_edges(n, edges, uniform_curing(n, delta)).unwrap().0
    }

    #[test]
    fn sum_tree_search() {
        let mut t = SumTree::new(5);
        t.set(0, 1.0);
        t.set(3, 2.0);
        t.set(4, 1.0);
        assert_eq!(t.total(), 4.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 3);
        assert_eq!(t.find(3.5), 4);
        t.set(3, 0.0);
        assert_eq!(t.find(1.5), 4);
    }

    #[test]
    fn without_links_only_healing_happens() {
        let (net, _) = RateNetwork::from_edges(6, vec![], uniform_curing(6, 1.0)).unwrap();
        let all: Vec<usize> = (0..6).collect();
        let tr = simulate_sis(&net, &all, 1e6, 4).unwrap();
        assert!(tr.events.iter().all(|e| e.kind == EventKind::Heal));
        assert_eq!(tr.events.len(), 6);
        assert!(tr.final_infected.is_empty());
        assert!(tr.absorbed_at.is_some());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let net = complete(8, 1.0, 2.0);
        let a = simulate_sis(&net, &[0, 1], 20.0, 99).unwrap();
        let b = simulate_sis(&net, &[0, 1], 20.0, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_sis(&net, &[0, 1], 20.0, 100).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn empty_initial_set_rejected() {
        let net = complete(3, 1.0, 1.0);
        assert!(simulate_sis(&net, &[], 1.0, 0).is_err());
        assert!(simulate_sis(&net, &[], 0.0, 0).is_ok());
    }

    #[test]
    fn single_node_absorption_time_is_exponential() {
        let (net, _) = RateNetwork::from_edges(1, vec![], vec![2.0]).unwrap();
        let runs = 10_000;
        let total: f64 =
            (0..runs).map(|s| simulate_sis(&net, &[0], f64::INFINITY, s).unwrap().absorbed_at.unwrap()).sum();
        let mean = total / runs as f64;
        // Exp(2): mean 0.5, sd 0.5 → standard error 0.005
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / 100.0, "{mean}");
    }

    #[test]
    fn first_event_frequencies_match_generator_rates() {
        // state {0, 2} infected on a weighted digraph
        let (net, _) = RateNetwork::from_edges(
            4,
            vec![(0, 1, 1.5), (0, 3, 0.5), (2, 1, 1.0), (2, 0, 4.0), (1, 3, 9.0), (3, 2, 1.0)],
            vec![1.0, 2.0, 0.5, 1.0],
        )
        .unwrap();
        // Heal 0: 1.0, heal 2: 0.5, infect 1: 1.5 + 1.0, infect 3: 0.5
        let expected = [
            ((0u32, EventKind::Heal), 1.0),
            ((2, EventKind::Heal), 0.5),
            ((1, EventKind::Infect), 2.5),
            ((3, EventKind::Infect), 0.5),
        ];
        let total: f64 = expected.iter().map(|e| e.1).sum();
        let trials = 40_000u64;
        let mut counts = [0usize; 4];
        for s in 0..trials {
            let mut p = SisProcess::new(&net, &[0, 2], s).unwrap();
            let Step::Event(e) = p.advance(f64::INFINITY) else { panic!("no event") };
            let k = expected.iter().position(|x| x.0 == (e.node, e.kind)).expect("unexpected transition");
            counts[k] += 1;
        }
        for (k, (_, rate)) in expected.iter().enumerate() {
            let p = rate / total;
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            let freq = counts[k] as f64 / trials as f64;
            assert!((freq - p).abs() < 3.0 * se, "transition {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn event_log_round_trip() {
        let net = complete(5, 1.0, 1.0);
        let tr = simulate_sis(&net, &[0], 5.0, 3).unwrap();
        let mut buf = Vec::new();
        for e in &tr.events {
            write_event(&mut buf, e).unwrap();
        }
        assert_eq!(buf.len(), tr.events.len() * EVENT_RECORD_BYTES);
        assert_eq!(read_event_log(buf.as_slice()).unwrap(), tr.events);
    }

    #[test]
    fn subcritical_network_is_reported() {
        // threshold (n-1)β/δ = 0.5
        let net = complete(5, 0.5, 4.0);
        let opts = MetastableOptions {
            burn_in: Some(5.0),
            window: 100.0,
            sample_interval: Some(0.5),
            seed: 1,
            max_restarts: 20,
        };
        assert!(matches!(metastable_sample(&net, &opts), Err(SisError::Subcritical(_))));
    }

    #[test]
    fn summary_is_consistent_with_samples() {
        let net = complete(10, 1.0, 2.0);
        let opts = MetastableOptions {
            burn_in: Some(2.0),
            window: 200.0,
            sample_interval: Some(0.5),
            seed: 8,
            max_restarts: 100,
        };
        let s = metastable_sample(&net, &opts).unwrap();
        assert!((s.window_time - 200.0).abs() < 1e-9);
        assert!(s.samples.iter().all(|&x| x as usize <= 10));
        assert!(s.node_frequency.iter().all(|&f| (0.0..=1.0).contains(&f)));
        let (m, sd) = mean_std(&s.samples_f64());
        assert_eq!((m, sd), (s.mean, s.std));
        // time-averaged node frequencies sum to the time-averaged total
        let total: f64 = s.node_frequency.iter().sum();
        assert!((total - s.mean).abs() < 0.5, "{total} vs {}", s.mean);
    }

    #[test]
    fn replicas_merge_deterministically() {
        let net = complete(10, 1.0, 2.0);
        let opts = MetastableOptions {
            burn_in: Some(2.0),
            window: 50.0,
            sample_interval: Some(0.5),
            seed: 0,
            max_restarts: 100,
        };
        let a = metastable_replicas(&net, &opts, 4, 77).unwrap();
        let b = metastable_replicas(&net, &opts, 4, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples, b.samples);
        assert!((a.window_time - 200.0).abs() < 1e-9);
    }
}
