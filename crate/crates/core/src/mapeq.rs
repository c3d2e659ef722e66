//! Two-level map equation on weighted directed networks.
//!
//! A random walker moves along arcs in proportion to their weight and, with
//! probability `τ`, teleports according to a per-node distribution. Its
//! stationary visit rates `p_v` give the flow. For a partition into modules,
//! module `i` exits at rate
//!
//! ```text
//! q_i = Σ_{u∈i} Σ_{v∉i} p_u (1 - τ_rec) w_uv / w_u   [+ T_i (1 - W_i) if teleports are recorded]
//! ```
//!
//! where `τ_rec` is `τ` when teleportation is recorded and 0 otherwise, `T_i`
//! is the teleporting flow leaving `i` and `W_i` the teleport weight inside
//! it. The codelength in bits is
//!
//! ```text
//! L = q H(Q) + Σ_i p_i↻ H(P^i)
//!   = plogp(q) - 2 Σ plogp(q_i) - Σ_v plogp(p_v) + Σ plogp(q_i + p_i)
//! ```
//!
//! with `q = Σ q_i`, `p_i = Σ_{v∈i} p_v` and `p_i↻ = q_i + p_i`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{CellId, Fishnet};
use crate::numeric::{child_seed, plogp};

/// Upper bound on nodes accepted by [`brute_force_optimum`].
pub const BRUTE_FORCE_MAX_NODES: usize = 12;

const WALKER_TOL: f64 = 1e-12;
const WALKER_MAX_ITER: usize = 100_000;
const MIN_IMPROVEMENT: f64 = 1e-12;

/// Directed network on nodes `0..n` with positive arc weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    arcs: Vec<(usize, usize, f64)>,
}

impl Network {
    pub fn new(n: usize, arcs: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(a, b, w) in &arcs {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("arc ({a}, {b}) references a node >= {n}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("arc ({a}, {b}) has non-positive weight {w}")));
            }
        }
        Ok(Network { n, arcs })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn arcs(&self) -> &[(usize, usize, f64)] {
        &self.arcs
    }

    pub fn scaled(&self, c: f64) -> Network {
        Network {
            n: self.n,
            arcs: self.arcs.iter().map(|&(a, b, w)| (a, b, w * c)).collect(),
        }
    }

    pub fn out_strength(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(a, _, w) in &self.arcs {
            s[a] += w;
        }
        s
    }

    pub fn in_strength(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(_, b, w) in &self.arcs {
            s[b] += w;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TeleportMode {
    Uniform,
    #[default]
    InStrength,
}

impl std::str::FromStr for TeleportMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TeleportMode::Uniform),
            "in_strength" => Ok(TeleportMode::InStrength),
            other => Err(Error::invalid(format!("unknown teleport mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkerRates {
    /// Stationary visit rate per node; sums to 1.
    pub visit: Vec<f64>,
    pub teleport_prob: f64,
    pub teleport_weights: Vec<f64>,
    /// Whether teleportation steps are encoded in the codelength.
    pub recorded_teleport: bool,
    pub iterations: usize,
}

impl WalkerRates {
    pub fn with_recorded_teleport(mut self, recorded: bool) -> Self {
        self.recorded_teleport = recorded;
        self
    }
}

/// Stationary visit rates of the teleporting walker by power iteration.
/// Dangling nodes redistribute their mass through the teleport distribution.
pub fn walker_rates(net: &Network, tau: f64, mode: TeleportMode) -> Result<WalkerRates> {
    let n = net.len();
    if n == 0 {
        return Err(Error::invalid("walker rates of an empty network"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("teleport probability {tau} outside [0, 1]")));
    }
    let mut teleport = match mode {
        TeleportMode::Uniform => vec![1.0; n],
        TeleportMode::InStrength => net.in_strength(),
    };
    let total: f64 = teleport.iter().sum();
    if !(total > 0.0) {
        teleport = vec![1.0; n];
    }
    let total: f64 = teleport.iter().sum();
    teleport.iter_mut().for_each(|w| *w /= total);

    let out = net.out_strength();
    let shares: Vec<(usize, usize, f64)> = net.arcs().iter().map(|&(a, b, w)| (a, b, w / out[a])).collect();
    let dangling: Vec<usize> = (0..n).filter(|&v| out[v] == 0.0).collect();
    // τ = 0 on a periodic graph oscillates; the lazy chain has the same fixed point.
    let lazy = tau == 0.0;

    let mut p = teleport.clone();
    let mut next = vec![0.0; n];
    for iteration in 1..=WALKER_MAX_ITER {
        let dangling_mass: f64 = dangling.iter().map(|&v| p[v]).sum();
        for (v, x) in next.iter_mut().enumerate() {
            *x = (tau + (1.0 - tau) * dangling_mass) * teleport[v];
        }
        for &(a, b, s) in &shares {
            next[b] += (1.0 - tau) * p[a] * s;
        }
        if lazy {
            for (x, old) in next.iter_mut().zip(&p) {
                *x = 0.5 * (*x + old);
            }
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        let residual: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if residual < WALKER_TOL {
            return Ok(WalkerRates {
                visit: p,
                teleport_prob: tau,
                teleport_weights: teleport,
                recorded_teleport: false,
                iterations: iteration,
            });
        }
        if iteration == WALKER_MAX_ITER {
            return Err(Error::NoConvergence {
                what: "walker rates",
                iterations: iteration,
                residual,
                last: p,
            });
        }
    }
    unreachable!()
}

/// Dense module assignment `node -> 0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    assignment: Vec<usize>,
    modules: usize,
}

impl Partition {
    /// Relabels arbitrary module labels to `0..m` in order of first appearance.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignment: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Partition {
            modules: map.len(),
            assignment,
        }
    }

    pub fn single_module(n: usize) -> Self {
        Partition::from_labels(&vec![0; n])
    }

    pub fn singletons(n: usize) -> Self {
        Partition::from_labels(&(0..n).collect::<Vec<_>>())
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn module_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn module_count(&self) -> usize {
        self.modules
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleTerm {
    pub module: usize,
    /// Exit rate `q_i`.
    pub exit: f64,
    /// Summed visit rate of the module's nodes.
    pub flow: f64,
    /// `p_i↻ H(P^i)` in bits.
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodelengthBreakdown {
    pub total_bits: f64,
    /// `q H(Q)`.
    pub index_bits: f64,
    /// `Σ p_i↻ H(P^i)`.
    pub module_bits: f64,
    /// Total exit rate `q`.
    pub exit_rate: f64,
    pub modules: Vec<ModuleTerm>,
}

/// Flow-level view of a network: node flows and aggregated inter-node link
/// flows (self links dropped, as they never cross a module boundary).
#[derive(Debug, Clone)]
struct FlowGraph {
    flow: Vec<f64>,
    tele_src: Vec<f64>,
    tele_w: Vec<f64>,
    out: Vec<Vec<(usize, f64)>>,
    inc: Vec<Vec<(usize, f64)>>,
}

impl FlowGraph {
    fn new(net: &Network, rates: &WalkerRates) -> Result<Self> {
        let n = net.len();
        if rates.visit.len() != n || rates.teleport_weights.len() != n {
            return Err(Error::invalid("walker rates do not match the network size"));
        }
        let tau = rates.teleport_prob;
        let link_scale = if rates.recorded_teleport { 1.0 - tau } else { 1.0 };
        let out_w = net.out_strength();
        let mut pairs: Vec<(usize, usize, f64)> = net
            .arcs()
            .iter()
            .filter(|&&(a, b, _)| a != b)
            .map(|&(a, b, w)| (a, b, rates.visit[a] * link_scale * w / out_w[a]))
            .collect();
        pairs.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        let mut i = 0;
        while i < pairs.len() {
            let (a, b, mut f) = pairs[i];
            i += 1;
            while i < pairs.len() && pairs[i].0 == a && pairs[i].1 == b {
                f += pairs[i].2;
                i += 1;
            }
            out[a].push((b, f));
            inc[b].push((a, f));
        }
        for l in &mut inc {
            l.sort_by_key(|x| x.0);
        }
        // Dangling nodes always move by the teleport distribution, and that
        // move is a real step of the walk; recorded teleports add `τ p_v`.
        let tele_src = (0..n)
            .map(|v| {
                if out_w[v] == 0.0 {
                    rates.visit[v]
                } else if rates.recorded_teleport {
                    tau * rates.visit[v]
                } else {
                    0.0
                }
            })
            .collect();
        Ok(FlowGraph {
            flow: rates.visit.clone(),
            tele_src,
            tele_w: rates.teleport_weights.clone(),
            out,
            inc,
        })
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    /// Module graph for `assignment` (dense ids `0..m`).
    fn aggregate(&self, assignment: &[usize], m: usize) -> FlowGraph {
        let mut flow = vec![0.0; m];
        let mut tele_src = vec![0.0; m];
        let mut tele_w = vec![0.0; m];
        let mut links: Vec<(usize, usize, f64)> = Vec::new();
        for v in 0..self.len() {
            let a = assignment[v];
            flow[a] += self.flow[v];
            tele_src[a] += self.tele_src[v];
            tele_w[a] += self.tele_w[v];
            for &(u, f) in &self.out[v] {
                let b = assignment[u];
                if a != b {
                    links.push((a, b, f));
                }
            }
        }
        links.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut out = vec![Vec::new(); m];
        let mut inc = vec![Vec::new(); m];
        let mut i = 0;
        while i < links.len() {
            let (a, b, mut f) = links[i];
            i += 1;
            while i < links.len() && links[i].0 == a && links[i].1 == b {
                f += links[i].2;
                i += 1;
            }
            out[a].push((b, f));
            inc[b].push((a, f));
        }
        for l in &mut inc {
            l.sort_by_key(|x| x.0);
        }
        FlowGraph {
            flow,
            tele_src,
            tele_w,
            out,
            inc,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ModuleStats {
    flow: f64,
    link_exit: f64,
    tele_src: f64,
    tele_w: f64,
}

impl ModuleStats {
    #[inline]
    fn exit(&self) -> f64 {
        (self.link_exit + self.tele_src * (1.0 - self.tele_w)).max(0.0)
    }
}

fn module_stats(g: &FlowGraph, assignment: &[usize], m: usize) -> Vec<ModuleStats> {
    let mut stats = vec![ModuleStats::default(); m];
    for v in 0..g.len() {
        let s = &mut stats[assignment[v]];
        s.flow += g.flow[v];
        s.tele_src += g.tele_src[v];
        s.tele_w += g.tele_w[v];
        for &(u, f) in &g.out[v] {
            if assignment[u] != assignment[v] {
                stats[assignment[v]].link_exit += f;
            }
        }
    }
    stats
}

/// Codelength minus the constant node-entropy term.
fn partial_codelength(stats: &[ModuleStats]) -> f64 {
    let mut sum_q = 0.0;
    let mut sum_plogp_q = 0.0;
    let mut sum_plogp_qp = 0.0;
    for s in stats {
        let q = s.exit();
        sum_q += q;
        sum_plogp_q += plogp(q);
        sum_plogp_qp += plogp(q + s.flow);
    }
    plogp(sum_q) - 2.0 * sum_plogp_q + sum_plogp_qp
}

fn check_cover(net: &Network, partition: &Partition) -> Result<()> {
    if partition.len() != net.len() {
        return Err(Error::Uncovered(partition.len().min(net.len())));
    }
    Ok(())
}

/// Map-equation codelength of `partition` with its index/module breakdown.
pub fn codelength(net: &Network, partition: &Partition, rates: &WalkerRates) -> Result<CodelengthBreakdown> {
    check_cover(net, partition)?;
    let g = FlowGraph::new(net, rates)?;
    let stats = module_stats(&g, partition.assignment(), partition.module_count());
    let mut node_plogp = vec![0.0; partition.module_count()];
    for (v, &p) in g.flow.iter().enumerate() {
        node_plogp[partition.module_of(v)] += plogp(p);
    }
    let exits: Vec<f64> = stats.iter().map(|s| s.exit()).collect();
    let q: f64 = exits.iter().sum();
    let index_bits = (plogp(q) - exits.iter().map(|&x| plogp(x)).sum::<f64>()).max(0.0);
    let modules: Vec<ModuleTerm> = stats
        .iter()
        .enumerate()
        .map(|(i, s)| ModuleTerm {
            module: i,
            exit: exits[i],
            flow: s.flow,
            bits: (plogp(exits[i] + s.flow) - plogp(exits[i]) - node_plogp[i]).max(0.0),
        })
        .collect();
    let module_bits: f64 = modules.iter().map(|t| t.bits).sum();
    Ok(CodelengthBreakdown {
        total_bits: index_bits + module_bits,
        index_bits,
        module_bits,
        exit_rate: q,
        modules,
    })
}

/// Greedy node moves on one level. `modules[v]` holds each node's starting
/// module (any ids below `g.len()`); returns the improved assignment.
fn local_moves(g: &FlowGraph, mut modules: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.len();
    let mut members = vec![0usize; n];
    for &m in &modules {
        members[m] += 1;
    }
    let mut out_to = vec![0.0; n];
    let mut in_from = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    for _sweep in 0..200 {
        // Re-derive aggregates every sweep so rounding never accumulates.
        let mut stats = module_stats(g, &modules, n);
        let mut sum_q = 0.0;
        let mut sum_plogp_q = 0.0;
        let mut sum_plogp_qp = 0.0;
        for s in &stats {
            let q = s.exit();
            sum_q += q;
            sum_plogp_q += plogp(q);
            sum_plogp_qp += plogp(q + s.flow);
        }
        let mut empty: Vec<usize> = (0..n).filter(|&m| members[m] == 0).rev().collect();

        order.shuffle(rng);
        let mut moved = 0usize;
        for &v in &order {
            let a = modules[v];
            touched.clear();
            let mut out_total = 0.0;
            for &(u, f) in &g.out[v] {
                let m = modules[u];
                if out_to[m] == 0.0 && in_from[m] == 0.0 {
                    touched.push(m);
                }
                out_to[m] += f;
                out_total += f;
            }
            for &(u, f) in &g.inc[v] {
                let m = modules[u];
                if out_to[m] == 0.0 && in_from[m] == 0.0 {
                    touched.push(m);
                }
                in_from[m] += f;
            }
            touched.sort_unstable();
            touched.dedup();

            let p_v = g.flow[v];
            let t_v = g.tele_src[v];
            let w_v = g.tele_w[v];
            let old_a = stats[a];
            let new_a = ModuleStats {
                flow: old_a.flow - p_v,
                link_exit: old_a.link_exit - (out_total - out_to[a]) + in_from[a],
                tele_src: old_a.tele_src - t_v,
                tele_w: old_a.tele_w - w_v,
            };
            let q_a_old = old_a.exit();
            let q_a_new = if members[a] == 1 { 0.0 } else { new_a.exit() };
            let flow_a_new = if members[a] == 1 { 0.0 } else { new_a.flow };
            let current = plogp(sum_q) - 2.0 * sum_plogp_q + sum_plogp_qp;

            let mut candidates: Vec<usize> = touched.iter().copied().filter(|&m| m != a).collect();
            if members[a] > 1 {
                if let Some(&e) = empty.last() {
                    candidates.push(e);
                }
            }
            candidates.sort_unstable();

            let mut best: Option<(usize, f64, ModuleStats)> = None;
            for &b in &candidates {
                let old_b = stats[b];
                let new_b = ModuleStats {
                    flow: old_b.flow + p_v,
                    link_exit: old_b.link_exit + (out_total - out_to[b]) - in_from[b],
                    tele_src: old_b.tele_src + t_v,
                    tele_w: old_b.tele_w + w_v,
                };
                let q_b_old = old_b.exit();
                let q_b_new = new_b.exit();
                let s_q = sum_q - q_a_old - q_b_old + q_a_new + q_b_new;
                let s_pq = sum_plogp_q - plogp(q_a_old) - plogp(q_b_old) + plogp(q_a_new) + plogp(q_b_new);
                let s_pqp = sum_plogp_qp - plogp(q_a_old + old_a.flow) - plogp(q_b_old + old_b.flow)
                    + plogp(q_a_new + flow_a_new)
                    + plogp(q_b_new + new_b.flow);
                let delta = plogp(s_q) - 2.0 * s_pq + s_pqp - current;
                if best.as_ref().is_none_or(|(_, d, _)| delta < *d) {
                    best = Some((b, delta, new_b));
                }
            }

            if let Some((b, delta, new_b)) = best {
                if delta < -MIN_IMPROVEMENT {
                    let q_b_old = stats[b].exit();
                    let q_b_new = new_b.exit();
                    sum_q += q_a_new + q_b_new - q_a_old - q_b_old;
                    sum_plogp_q += plogp(q_a_new) + plogp(q_b_new) - plogp(q_a_old) - plogp(q_b_old);
                    sum_plogp_qp += plogp(q_a_new + flow_a_new) + plogp(q_b_new + new_b.flow)
                        - plogp(q_a_old + old_a.flow)
                        - plogp(q_b_old + stats[b].flow);
                    stats[a] = if members[a] == 1 { ModuleStats::default() } else { new_a };
                    stats[b] = new_b;
                    if members[b] == 0 {
                        empty.retain(|&e| e != b);
                    }
                    members[a] -= 1;
                    members[b] += 1;
                    if members[a] == 0 {
                        empty.push(a);
                        empty.sort_unstable_by(|x, y| y.cmp(x));
                    }
                    modules[v] = b;
                    moved += 1;
                }
            }

            for &m in &touched {
                out_to[m] = 0.0;
                in_from[m] = 0.0;
            }
            out_to[a] = 0.0;
            in_from[a] = 0.0;
        }
        if moved == 0 {
            break;
        }
    }
    modules
}

fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let p = Partition::from_labels(labels);
    let m = p.module_count();
    (p.assignment, m)
}

/// One seeded optimization run: leaf-level moves, repeated aggregation, and
/// fine-tuning from the current partition until the codelength settles.
fn trial(g: &FlowGraph, seed: u64) -> (Vec<usize>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.len();
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut best = partial_codelength(&module_stats(g, &assignment, n));

    for _round in 0..50 {
        let moved = local_moves(g, assignment.clone(), &mut rng);
        let (mut current, mut m) = dense(&moved);
        loop {
            if m <= 1 {
                break;
            }
            let level = g.aggregate(&current, m);
            let level_modules = local_moves(&level, (0..m).collect(), &mut rng);
            let (level_dense, level_m) = dense(&level_modules);
            if level_m == m {
                break;
            }
            current = current.iter().map(|&x| level_dense[x]).collect();
            m = level_m;
        }
        let value = partial_codelength(&module_stats(g, &current, m));
        if value < best - MIN_IMPROVEMENT {
            best = value;
            assignment = current;
        } else {
            break;
        }
    }
    let (assignment, _) = dense(&assignment);
    (assignment, best)
}

/// Minimizes the codelength over partitions of `net`.
///
/// Each of `restarts` runs shuffles node order with its own seed derived from
/// `seed`; the best run wins, ties going to the lower run index. The one-module
/// and all-singleton partitions are always considered as well.
pub fn optimize(
    net: &Network,
    rates: &WalkerRates,
    seed: u64,
    restarts: usize,
) -> Result<(Partition, CodelengthBreakdown)> {
    if net.is_empty() {
        return Err(Error::invalid("cannot partition an empty network"));
    }
    let g = FlowGraph::new(net, rates)?;
    let n = g.len();
    let restarts = restarts.max(1);
    let mut runs: Vec<(f64, usize, Vec<usize>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let (assignment, value) = trial(&g, child_seed(seed, r as u64));
            (value, r, assignment)
        })
        .collect();
    for (i, fixed) in [vec![0usize; n], (0..n).collect()].into_iter().enumerate() {
        let m = if i == 0 { 1 } else { n };
        runs.push((partial_codelength(&module_stats(&g, &fixed, m)), restarts + i, fixed));
    }
    let (_, _, mut assignment) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one run");
    attach_weightless(net, &g.flow, &mut assignment);
    let partition = Partition::from_labels(&assignment);
    let breakdown = codelength(net, &partition, rates)?;
    Ok((partition, breakdown))
}

/// Nodes the walker never visits leave the codelength unchanged wherever
/// they sit; a singleton of such a node joins the module it shares the most
/// arc weight with (lowest id on ties) instead of standing alone.
fn attach_weightless(net: &Network, flow: &[f64], assignment: &mut [usize]) {
    let mut size = vec![0usize; assignment.len()];
    for &m in assignment.iter() {
        size[m] += 1;
    }
    let mut links: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.len()];
    for &(a, b, w) in net.arcs() {
        if a != b {
            links[a].push((b, w));
            links[b].push((a, w));
        }
    }
    for v in 0..assignment.len() {
        if flow[v] != 0.0 || size[assignment[v]] != 1 {
            continue;
        }
        let mut weight: BTreeMap<usize, f64> = BTreeMap::new();
        for &(u, w) in &links[v] {
            if flow[u] > 0.0 {
                *weight.entry(assignment[u]).or_insert(0.0) += w;
            }
        }
        let best = weight
            .into_iter()
            .fold(None, |best: Option<(usize, f64)>, (m, w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((m, w)),
            });
        if let Some((m, _)) = best {
            size[assignment[v]] -= 1;
            assignment[v] = m;
            size[m] += 1;
        }
    }
}

/// Exhaustive minimum over all set partitions (restricted growth strings).
pub fn brute_force_optimum(net: &Network, rates: &WalkerRates) -> Result<(Partition, CodelengthBreakdown)> {
    let n = net.len();
    if n == 0 {
        return Err(Error::invalid("cannot partition an empty network"));
    }
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::invalid(format!(
            "brute force supports at most {BRUTE_FORCE_MAX_NODES} nodes, got {n}"
        )));
    }
    let g = FlowGraph::new(net, rates)?;
    let mut labels = vec![0usize; n];
    let mut maxes = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let m = maxes[n - 1] + 1;
        let value = partial_codelength(&module_stats(&g, &labels, m));
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, labels.clone()));
        }
        // Next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                let (_, labels) = best.expect("visited at least one partition");
                let partition = Partition::from_labels(&labels);
                let breakdown = codelength(net, &partition, rates)?;
                return Ok((partition, breakdown));
            }
            let limit = maxes[i - 1] + 1;
            if labels[i] < limit {
                labels[i] += 1;
                maxes[i] = maxes[i - 1].max(labels[i]);
                for j in i + 1..n {
                    labels[j] = 0;
                    maxes[j] = maxes[i];
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Normalized mutual information `2 I(A;B) / (H(A) + H(B))` between two
/// labelings of the same items; 1 when both are trivial.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("labelings differ in length"));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty labelings"));
    }
    let (a, ma) = dense(a);
    let (b, mb) = dense(b);
    let n = a.len() as f64;
    let mut joint = std::collections::HashMap::<(usize, usize), f64>::new();
    let mut pa = vec![0.0; ma];
    let mut pb = vec![0.0; mb];
    for (&x, &y) in a.iter().zip(&b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0 / n;
        pa[x] += 1.0 / n;
        pb[y] += 1.0 / n;
    }
    let h = |p: &[f64]| -p.iter().map(|&x| plogp(x)).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha + hb == 0.0 {
        return Ok(1.0);
    }
    let mut entries: Vec<((usize, usize), f64)> = joint.into_iter().collect();
    entries.sort_by(|x, y| x.0.cmp(&y.0));
    let mi: f64 = entries
        .iter()
        .map(|&((x, y), pxy)| pxy * (pxy / (pa[x] * pb[y])).log2())
        .sum();
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

/// Orders breakdowns by total codelength.
pub fn compare_codelength(a: &CodelengthBreakdown, b: &CodelengthBreakdown) -> Ordering {
    a.total_bits.total_cmp(&b.total_bits)
}

/// Writes `col,row,module` rows, one per cell in `cells` order.
pub fn write_partition_csv<W: Write>(mut out: W, cells: &[CellId], partition: &Partition) -> Result<()> {
    if cells.len() != partition.len() {
        return Err(Error::Uncovered(cells.len().min(partition.len())));
    }
    writeln!(out, "col,row,module")?;
    for (c, m) in cells.iter().zip(partition.assignment()) {
        writeln!(out, "{},{},{}", c.col, c.row, m)?;
    }
    Ok(())
}

/// Reads a partition written by [`write_partition_csv`].
pub fn read_partition_csv<R: BufRead>(input: R) -> Result<(Vec<CellId>, Partition)> {
    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("col")) {
            continue;
        }
        let bad = || Error::format("partition", format!("line {}: `{line}`", i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let col = f[0].parse().map_err(|_| bad())?;
        let row = f[1].parse().map_err(|_| bad())?;
        labels.push(f[2].parse::<usize>().map_err(|_| bad())?);
        cells.push(CellId::new(col, row));
    }
    Ok((cells, Partition::from_labels(&labels)))
}

/// FeatureCollection of cell squares carrying a `module` property.
pub fn partition_geojson(grid: &Fishnet, cells: &[CellId], partition: &Partition) -> Value {
    let features: Vec<Value> = cells
        .iter()
        .zip(partition.assignment())
        .map(|(&c, &m)| {
            json!({
                "type": "Feature",
                "properties": {"cell_id": c.to_string(), "col": c.col, "row": c.row, "module": m},
                "geometry": grid.cell_geometry(c),
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle() -> Network {
        Network::new(2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    #[test]
    fn two_cycle_rates_and_codelengths() {
        let net = two_cycle();
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
        assert!((rates.visit[0] - 0.5).abs() < 1e-12);
        let one = codelength(&net, &Partition::single_module(2), &rates).unwrap();
        assert!((one.total_bits - 1.0).abs() < 1e-12);
        assert_eq!(one.index_bits, 0.0);
        let two = codelength(&net, &Partition::singletons(2), &rates).unwrap();
        assert!((two.total_bits - 3.0).abs() < 1e-12);
        assert!((two.index_bits - 1.0).abs() < 1e-12);
        assert!((two.exit_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_loop_single_node_is_free() {
        let net = Network::new(1, vec![(0, 0, 3.0)]).unwrap();
        let rates = walker_rates(&net, 0.15, TeleportMode::InStrength).unwrap();
        let c = codelength(&net, &Partition::single_module(1), &rates).unwrap();
        assert_eq!(c.total_bits, 0.0);
    }

    #[test]
    fn full_teleport_returns_teleport_distribution() {
        let net = Network::new(3, vec![(0, 1, 1.0), (1, 2, 3.0), (2, 2, 1.0)]).unwrap();
        let rates = walker_rates(&net, 1.0, TeleportMode::InStrength).unwrap();
        assert_eq!(rates.visit, rates.teleport_weights);
        assert_eq!(rates.teleport_weights, vec![0.0, 0.2, 0.8]);
    }

    #[test]
    fn star_into_dangling_hub() {
        // k leaves -> hub, hub dangling, uniform teleport, τ = 0:
        // p_hub = (k + 1) / (2k + 1).
        let k = 4;
        let arcs = (1..=k).map(|i| (i, 0, 1.0)).collect();
        let net = Network::new(k + 1, arcs).unwrap();
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
        let expect = (k as f64 + 1.0) / (2.0 * k as f64 + 1.0);
        assert!((rates.visit[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn uncovered_partition_rejected() {
        let net = two_cycle();
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
        assert!(matches!(
            codelength(&net, &Partition::single_module(1), &rates),
            Err(Error::Uncovered(_))
        ));
    }

    #[test]
    fn breakdown_terms_add_up() {
        let net = Network::new(
            4,
            vec![(0, 1, 2.0), (1, 0, 1.0), (1, 2, 0.5), (2, 3, 2.0), (3, 2, 1.0), (3, 0, 0.2)],
        )
        .unwrap();
        for recorded in [false, true] {
            let rates = walker_rates(&net, 0.15, TeleportMode::Uniform)
                .unwrap()
                .with_recorded_teleport(recorded);
            let c = codelength(&net, &Partition::from_labels(&[0, 0, 1, 1]), &rates).unwrap();
            let sum: f64 = c.modules.iter().map(|m| m.bits).sum();
            assert!((c.total_bits - c.index_bits - sum).abs() < 1e-12);
            assert!(c.modules.iter().all(|m| m.bits >= 0.0 && m.exit >= 0.0));
            let one = codelength(&net, &Partition::single_module(4), &rates).unwrap();
            assert!(one.index_bits.abs() < 1e-15);
        }
    }

    #[test]
    fn optimizer_agrees_with_brute_force_on_recorded_teleport() {
        let net = Network::new(
            6,
            vec![
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 0, 1.0),
                (3, 4, 1.0),
                (4, 5, 1.0),
                (5, 3, 1.0),
                (2, 3, 0.1),
                (5, 0, 0.1),
            ],
        )
        .unwrap();
        let rates = walker_rates(&net, 0.15, TeleportMode::Uniform)
            .unwrap()
            .with_recorded_teleport(true);
        let (_, opt) = optimize(&net, &rates, 3, 10).unwrap();
        let (_, bf) = brute_force_optimum(&net, &rates).unwrap();
        assert!((opt.total_bits - bf.total_bits).abs() < 1e-9);
    }

    #[test]
    fn brute_force_single_node_and_limits() {
        let net = Network::new(1, vec![(0, 0, 1.0)]).unwrap();
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
        let (p, c) = brute_force_optimum(&net, &rates).unwrap();
        assert_eq!(p.module_count(), 1);
        assert_eq!(c.total_bits, 0.0);

        let big = Network::new(13, vec![(0, 1, 1.0)]).unwrap();
        let rates = walker_rates(&big, 0.15, TeleportMode::Uniform).unwrap();
        assert!(brute_force_optimum(&big, &rates).is_err());
    }

    #[test]
    fn brute_force_two_cycle_prefers_one_module() {
        let net = two_cycle();
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).unwrap();
        let (p, c) = brute_force_optimum(&net, &rates).unwrap();
        assert_eq!(p.module_count(), 1);
        assert!((c.total_bits - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_basics() {
        assert_eq!(normalized_mutual_information(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert_eq!(normalized_mutual_information(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(normalized_mutual_information(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        let v = normalized_mutual_information(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!(v > 0.7 && v < 1.0);
        assert!(normalized_mutual_information(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn partition_csv_roundtrip() {
        let cells = vec![CellId::new(0, 0), CellId::new(3, 1)];
        let p = Partition::from_labels(&[4, 2]);
        let mut buf = Vec::new();
        write_partition_csv(&mut buf, &cells, &p).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "col,row,module\n0,0,0\n3,1,1\n");
        assert_eq!(read_partition_csv(buf.as_slice()).unwrap(), (cells, p));
    }

    #[test]
    fn partition_relabels_densely() {
        let p = Partition::from_labels(&[7, 3, 7, 9]);
        assert_eq!(p.assignment(), &[0, 1, 0, 2]);
        assert_eq!(p.module_count(), 3);
    }
}
