//! Gravity model of interaction between delineated regions.
//!
//! `T̂(i, j) = k · P_i · P_j / d_ij^β` with `β` fixed and `ln k` fitted by
//! least squares with unit slope in log space.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geo::planar_distance;
use crate::mapeq::Partition;
use crate::numeric::mean_var;
use crate::odgraph::OdGraph;

pub const DEFAULT_BETA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub region: usize,
    /// Movement events touching the region's cells.
    pub mass: f64,
    /// Flow-weighted mean of member-cell centroids.
    pub centroid: (f64, f64),
    pub cells: usize,
}

fn check_partition(graph: &OdGraph, partition: &Partition) -> Result<usize> {
    let n = graph.nodes().len();
    if partition.len() != n {
        return Err(Error::Uncovered(partition.len().min(n)));
    }
    Ok(n)
}

/// Region masses and centroids. `partition` is indexed like
/// [`OdGraph::nodes`]. Each edge adds its weight to both endpoint cells,
/// a self-loop once.
pub fn summarize_regions(graph: &OdGraph, partition: &Partition) -> Result<Vec<RegionSummary>> {
    check_partition(graph, partition)?;
    let nodes = graph.nodes();
    let index: BTreeMap<_, _> = nodes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut cell_flow = vec![0.0; nodes.len()];
    for (a, b, w) in graph.edges() {
        cell_flow[index[&a]] += w;
        if a != b {
            cell_flow[index[&b]] += w;
        }
    }
    let m = partition.module_count();
    let mut out: Vec<RegionSummary> = (0..m)
        .map(|region| RegionSummary {
            region,
            mass: 0.0,
            centroid: (0.0, 0.0),
            cells: 0,
        })
        .collect();
    for (i, &c) in nodes.iter().enumerate() {
        let r = &mut out[partition.module_of(i)];
        let (x, y) = graph.grid.cell_centroid(c)?;
        r.mass += cell_flow[i];
        r.centroid.0 += cell_flow[i] * x;
        r.centroid.1 += cell_flow[i] * y;
        r.cells += 1;
    }
    for r in &mut out {
        if r.mass > 0.0 {
            r.centroid = (r.centroid.0 / r.mass, r.centroid.1 / r.mass);
        }
    }
    Ok(out)
}

/// Symmetrized inter-region flow keyed by `(i, j)` with `i < j`; zero pairs
/// are absent.
pub fn observed_interactions(graph: &OdGraph, partition: &Partition) -> Result<BTreeMap<(usize, usize), f64>> {
    check_partition(graph, partition)?;
    if partition.module_count() < 2 {
        return Err(Error::InsufficientData(format!(
            "gravity needs at least 2 regions, got {}",
            partition.module_count()
        )));
    }
    let nodes = graph.nodes();
    let index: BTreeMap<_, _> = nodes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut out = BTreeMap::new();
    for (a, b, w) in graph.edges() {
        let (ra, rb) = (partition.module_of(index[&a]), partition.module_of(index[&b]));
        if ra != rb {
            *out.entry((ra.min(rb), ra.max(rb))).or_insert(0.0) += w;
        }
    }
    Ok(out)
}

/// One region pair entering the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairInput {
    pub i: usize,
    pub j: usize,
    pub d: f64,
    pub p_i: f64,
    pub p_j: f64,
    pub t_obs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityPair {
    pub i: usize,
    pub j: usize,
    pub d: f64,
    pub p_i: f64,
    pub p_j: f64,
    pub t_obs: f64,
    pub t_est: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityFit {
    pub beta: f64,
    pub k: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub n_pairs: usize,
    pub excluded_pairs: usize,
    /// Free slope of `ln T_obs` on `ln(P_i P_j / d^β)`.
    pub unconstrained_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityReport {
    pub fit: GravityFit,
    pub pairs: Vec<GravityPair>,
    pub warnings: Vec<String>,
}

/// Fits `k` for fixed `β` on explicit pairs. Pairs with `d = 0`, or with a
/// non-positive mass or flow, are excluded with a warning.
pub fn fit_gravity_pairs(inputs: &[PairInput], beta: f64) -> Result<GravityReport> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid(format!("distance decay exponent must be >= 0, got {beta}")));
    }
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for p in inputs {
        if !(p.d > 0.0) {
            warnings.push(format!("pair ({}, {}) excluded: coincident centroids", p.i, p.j));
        } else if !(p.p_i > 0.0 && p.p_j > 0.0 && p.t_obs > 0.0) {
            warnings.push(format!("pair ({}, {}) excluded: non-positive mass or flow", p.i, p.j));
        } else {
            kept.push(*p);
        }
    }
    let excluded = inputs.len() - kept.len();
    if kept.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "gravity fit needs at least 3 usable pairs, got {} ({excluded} excluded)",
            kept.len()
        )));
    }
    let x: Vec<f64> = kept.iter().map(|p| p.p_i.ln() + p.p_j.ln() - beta * p.d.ln()).collect();
    let y: Vec<f64> = kept.iter().map(|p| p.t_obs.ln()).collect();
    let n = kept.len();
    let ln_k = y.iter().zip(&x).map(|(a, b)| a - b).sum::<f64>() / n as f64;
    let (mx, vx) = mean_var(&x);
    let (my, vy) = mean_var(&y);
    if !(vx > 0.0) || !(vy > 0.0) {
        return Err(Error::InsufficientData("gravity fit needs spread in flows and predictors".into()));
    }
    let cov = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n as f64;
    let r = (cov / (vx * vy).sqrt()).clamp(-1.0, 1.0);
    let r_squared = r * r;
    let dof = (n - 2) as f64;
    let p_value = if r_squared >= 1.0 {
        0.0
    } else if dof == 0.0 {
        1.0
    } else {
        let t = r.abs() * (dof / (1.0 - r_squared)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::invalid(e.to_string()))?;
        (2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0)
    };
    let k = ln_k.exp();
    let pairs = kept
        .iter()
        .zip(&x)
        .map(|(p, xi)| GravityPair {
            i: p.i,
            j: p.j,
            d: p.d,
            p_i: p.p_i,
            p_j: p.p_j,
            t_obs: p.t_obs,
            t_est: (ln_k + xi).exp(),
        })
        .collect();
    Ok(GravityReport {
        fit: GravityFit {
            beta,
            k,
            r_squared,
            p_value,
            n_pairs: n,
            excluded_pairs: excluded,
            unconstrained_slope: cov / vx,
        },
        pairs,
        warnings,
    })
}

fn pair_inputs(summaries: &[RegionSummary], observations: &BTreeMap<(usize, usize), f64>) -> Result<Vec<PairInput>> {
    let by_id: BTreeMap<usize, &RegionSummary> = summaries.iter().map(|s| (s.region, s)).collect();
    observations
        .iter()
        .map(|(&(i, j), &t)| {
            let (a, b) = match (by_id.get(&i), by_id.get(&j)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::invalid(format!("no summary for region pair ({i}, {j})"))),
            };
            Ok(PairInput {
                i,
                j,
                d: planar_distance(a.centroid, b.centroid),
                p_i: a.mass,
                p_j: b.mass,
                t_obs: t,
            })
        })
        .collect()
}

pub fn fit_gravity(
    summaries: &[RegionSummary],
    observations: &BTreeMap<(usize, usize), f64>,
    beta: f64,
) -> Result<GravityReport> {
    fit_gravity_pairs(&pair_inputs(summaries, observations)?, beta)
}

/// `(β, r²)` over a grid of exponents; exponents where the fit fails are
/// skipped.
pub fn beta_sweep(
    summaries: &[RegionSummary],
    observations: &BTreeMap<(usize, usize), f64>,
    betas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let inputs = pair_inputs(summaries, observations)?;
    Ok(betas
        .iter()
        .filter_map(|&b| fit_gravity_pairs(&inputs, b).ok().map(|r| (b, r.fit.r_squared)))
        .collect())
}

pub fn write_pairs_csv<W: Write>(mut out: W, pairs: &[GravityPair]) -> Result<()> {
    writeln!(out, "i,j,d,P_i,P_j,T_obs,T_est")?;
    for p in pairs {
        writeln!(out, "{},{},{},{},{},{},{}", p.i, p.j, p.d, p.p_i, p.p_j, p.t_obs, p.t_est)?;
    }
    Ok(())
}
