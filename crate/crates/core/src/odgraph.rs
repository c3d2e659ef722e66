//! Origin–destination graphs over fishnet cells.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{planar_distance, CellId, Fishnet};
use crate::ingest::Trajectory;
use crate::mapeq::Network;
use crate::mobility::Displacement;

/// Displacement-length filter `[min_d, max_d)`; either side may be open.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RangeFilter {
    pub min_d: Option<f64>,
    pub max_d: Option<f64>,
}

impl RangeFilter {
    pub fn new(min_d: Option<f64>, max_d: Option<f64>) -> Result<Self> {
        if let (Some(a), Some(b)) = (min_d, max_d) {
            if !(a < b) {
                return Err(Error::invalid(format!("range filter needs min < max, got [{a}, {b})")));
            }
        }
        if min_d.is_some_and(|a| !(a >= 0.0)) || max_d.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::invalid("range filter bounds must be non-negative"));
        }
        Ok(RangeFilter { min_d, max_d })
    }

    pub fn all() -> Self {
        RangeFilter::default()
    }

    pub fn at_least(d: f64) -> Self {
        RangeFilter {
            min_d: Some(d),
            max_d: None,
        }
    }

    pub fn below(d: f64) -> Self {
        RangeFilter {
            min_d: None,
            max_d: Some(d),
        }
    }

    #[inline]
    pub fn accepts(&self, d: f64) -> bool {
        self.min_d.is_none_or(|a| d >= a) && self.max_d.is_none_or(|b| d < b)
    }

    /// File-system friendly label, e.g. `all`, `lt4000`, `ge10000`, `4000-10000`.
    pub fn label(&self) -> String {
        match (self.min_d, self.max_d) {
            (None, None) => "all".into(),
            (None, Some(b)) => format!("lt{b}"),
            (Some(a), None) => format!("ge{a}"),
            (Some(a), Some(b)) => format!("{a}-{b}"),
        }
    }
}

impl fmt::Display for RangeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.min_d, self.max_d) {
            (None, None) => write!(f, "all"),
            (None, Some(b)) => write!(f, "<{b}"),
            (Some(a), None) => write!(f, ">{a}"),
            (Some(a), Some(b)) => write!(f, "{a}..{b}"),
        }
    }
}

impl FromStr for RangeFilter {
    type Err = Error;

    /// Accepts `all`, `<4000`, `>4000` (inclusive lower bound) and `4000..10000`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad distance `{v}` in range filter `{s}`")))
        };
        if s == "all" || s == "none" || s.is_empty() {
            Ok(RangeFilter::all())
        } else if let Some(v) = s.strip_prefix('<') {
            RangeFilter::new(None, Some(num(v)?))
        } else if let Some(v) = s.strip_prefix(">=").or_else(|| s.strip_prefix('>')) {
            RangeFilter::new(Some(num(v)?), None)
        } else if let Some((a, b)) = s.split_once("..") {
            RangeFilter::new(Some(num(a)?), Some(num(b)?))
        } else {
            Err(Error::invalid(format!("unrecognized range filter `{s}`")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub input: u64,
    pub kept: u64,
    pub dropped_range: u64,
    pub dropped_outside: u64,
}

/// Weighted OD graph. Undirected graphs key edges by the ordered pair
/// `(min, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdGraph {
    pub directed: bool,
    pub grid: Fishnet,
    edges: BTreeMap<(CellId, CellId), f64>,
}

impl OdGraph {
    pub fn new(grid: Fishnet, directed: bool) -> Self {
        OdGraph {
            directed,
            grid,
            edges: BTreeMap::new(),
        }
    }

    fn key(&self, a: CellId, b: CellId) -> (CellId, CellId) {
        if self.directed || a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Adds `w` to edge `a -> b`. Cells must be active in the grid.
    pub fn add(&mut self, a: CellId, b: CellId, w: f64) -> Result<()> {
        for c in [a, b] {
            if !self.grid.is_active(c) {
                return Err(Error::OutsideGrid {
                    col: c.col as i64,
                    row: c.row as i64,
                });
            }
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::invalid(format!("edge weight must be positive, got {w}")));
        }
        let k = self.key(a, b);
        *self.edges.entry(k).or_insert(0.0) += w;
        Ok(())
    }

    pub fn weight(&self, a: CellId, b: CellId) -> f64 {
        self.edges.get(&self.key(a, b)).copied().unwrap_or(0.0)
    }

    /// Edges in `(from, to)` order.
    pub fn edges(&self) -> impl Iterator<Item = (CellId, CellId, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    /// Sorted union of edge endpoints.
    pub fn nodes(&self) -> Vec<CellId> {
        let set: BTreeSet<CellId> = self.edges.keys().flat_map(|&(a, b)| [a, b]).collect();
        set.into_iter().collect()
    }

    /// Copy with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> OdGraph {
        OdGraph {
            directed: self.directed,
            grid: self.grid.clone(),
            edges: self.edges.iter().map(|(&k, &w)| (k, w * c)).collect(),
        }
    }

    /// Index network for the map-equation solver, with nodes in
    /// [`OdGraph::nodes`] order. Undirected edges become a pair of arcs.
    pub fn to_network(&self) -> (Vec<CellId>, Network) {
        let nodes = self.nodes();
        let index: HashMap<CellId, usize> = nodes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut arcs = Vec::with_capacity(self.edges.len() * if self.directed { 1 } else { 2 });
        for (a, b, w) in self.edges() {
            let (i, j) = (index[&a], index[&b]);
            arcs.push((i, j, w));
            if !self.directed && i != j {
                arcs.push((j, i, w));
            }
        }
        (nodes, Network::new(self.len_nodes(), arcs).expect("indices are in range"))
    }

    fn len_nodes(&self) -> usize {
        self.nodes().len()
    }
}

fn check_compatible(a: &OdGraph, b: &OdGraph) -> Result<()> {
    if a.directed != b.directed {
        return Err(Error::Mismatch("directed and undirected graphs".into()));
    }
    if !a.grid.same_grid(&b.grid) {
        return Err(Error::Mismatch("graphs were built on different fishnets".into()));
    }
    Ok(())
}

/// Sums edge weights of graphs built on the same fishnet.
pub fn merge(graphs: &[OdGraph]) -> Result<OdGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::invalid("merge needs at least one graph"))?;
    let mut out = OdGraph::new(first.grid.clone(), first.directed);
    for g in graphs {
        check_compatible(first, g)?;
        for (&k, &w) in &g.edges {
            *out.edges.entry(k).or_insert(0.0) += w;
        }
    }
    Ok(out)
}

/// Counts each accepted displacement on the edge between its endpoint cells.
pub fn build_od(displacements: &[Displacement], net: &Fishnet, filter: RangeFilter, directed: bool) -> (OdGraph, BuildReport) {
    let mut graph = OdGraph::new(net.clone(), directed);
    let mut report = BuildReport {
        input: displacements.len() as u64,
        ..Default::default()
    };
    for d in displacements {
        if !filter.accepts(d.d) {
            report.dropped_range += 1;
            continue;
        }
        match (net.cell_of(d.from.0, d.from.1), net.cell_of(d.to.0, d.to.1)) {
            (Some(a), Some(b)) => {
                let k = graph.key(a, b);
                *graph.edges.entry(k).or_insert(0.0) += 1.0;
                report.kept += 1;
            }
            _ => report.dropped_outside += 1,
        }
    }
    (graph, report)
}

/// [`build_od`] over the consecutive pairs of every trajectory, without
/// materializing displacement records. Trajectories are processed in
/// parallel; counts are exact so the result does not depend on scheduling.
pub fn build_od_from_trajectories(
    trajectories: &[Trajectory],
    net: &Fishnet,
    filter: RangeFilter,
    directed: bool,
) -> (OdGraph, BuildReport) {
    let template = OdGraph::new(net.clone(), directed);
    let (counts, report) = trajectories
        .par_iter()
        .fold(
            || (HashMap::<(CellId, CellId), u64>::new(), BuildReport::default()),
            |(mut counts, mut report), t| {
                for w in t.points.windows(2) {
                    report.input += 1;
                    let d = planar_distance(w[0].xy(), w[1].xy());
                    if !filter.accepts(d) {
                        report.dropped_range += 1;
                        continue;
                    }
                    match (net.cell_of(w[0].x, w[0].y), net.cell_of(w[1].x, w[1].y)) {
                        (Some(a), Some(b)) => {
                            *counts.entry(template.key(a, b)).or_insert(0) += 1;
                            report.kept += 1;
                        }
                        _ => report.dropped_outside += 1,
                    }
                }
                (counts, report)
            },
        )
        .reduce(
            || (HashMap::new(), BuildReport::default()),
            |(mut a, ra), (b, rb)| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                (
                    a,
                    BuildReport {
                        input: ra.input + rb.input,
                        kept: ra.kept + rb.kept,
                        dropped_range: ra.dropped_range + rb.dropped_range,
                        dropped_outside: ra.dropped_outside + rb.dropped_outside,
                    },
                )
            },
        );
    let mut graph = template;
    graph.edges = counts.into_iter().map(|(k, v)| (k, v as f64)).collect();
    (graph, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub from: CellId,
    pub to: CellId,
    pub from_xy: (f64, f64),
    pub to_xy: (f64, f64),
    pub weight: f64,
}

/// One record per edge with cell-centroid endpoints, ordered by `(from, to)`.
pub fn flow_export(graph: &OdGraph) -> Vec<FlowRecord> {
    graph
        .edges()
        .map(|(a, b, w)| FlowRecord {
            from: a,
            to: b,
            from_xy: graph.grid.cell_centroid(a).expect("edge cells lie in the grid"),
            to_xy: graph.grid.cell_centroid(b).expect("edge cells lie in the grid"),
            weight: w,
        })
        .collect()
}

pub fn write_flow_csv<W: Write>(mut out: W, flows: &[FlowRecord]) -> Result<()> {
    writeln!(out, "from_col,from_row,to_col,to_row,from_x,from_y,to_x,to_y,weight")?;
    for f in flows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            f.from.col, f.from.row, f.to.col, f.to.row, f.from_xy.0, f.from_xy.1, f.to_xy.0, f.to_xy.1, f.weight
        )?;
    }
    Ok(())
}

pub fn write_edges_csv<W: Write>(mut out: W, graph: &OdGraph) -> Result<()> {
    writeln!(out, "from_col,from_row,to_col,to_row,weight")?;
    for (a, b, w) in graph.edges() {
        writeln!(out, "{},{},{},{},{}", a.col, a.row, b.col, b.row, w)?;
    }
    Ok(())
}

/// Reads an edge-list CSV written by [`write_edges_csv`].
pub fn read_edges_csv<R: BufRead>(input: R, grid: &Fishnet, directed: bool) -> Result<OdGraph> {
    let mut graph = OdGraph::new(grid.clone(), directed);
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("from_col")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::format("edge list", format!("line {}: `{line}`", i + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let u = |s: &str| s.parse::<u32>().map_err(|_| bad());
        let a = CellId::new(u(f[0])?, u(f[1])?);
        let b = CellId::new(u(f[2])?, u(f[3])?);
        let w: f64 = f[4].parse().map_err(|_| bad())?;
        graph.add(a, b, w)?;
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Fishnet {
        Fishnet::new(0.0, 0.0, 10.0, 4, 4).unwrap()
    }

    fn disp(from: (f64, f64), to: (f64, f64)) -> Displacement {
        Displacement {
            user_id: "u".into(),
            from,
            to,
            d: planar_distance(from, to),
            t_from: 0.0,
            t_to: 1.0,
        }
    }

    const A: (f64, f64) = (5.0, 5.0);
    const B: (f64, f64) = (15.0, 5.0);

    #[test]
    fn single_edge() {
        let (g, r) = build_od(&[disp(A, B)], &grid(), RangeFilter::all(), true);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(CellId::new(0, 0), CellId::new(1, 0), 1.0)]);
        assert_eq!(r.kept, 1);
    }

    #[test]
    fn directed_and_undirected_counting() {
        let ds = [disp(A, B), disp(B, A), disp(A, A)];
        let (a, b) = (CellId::new(0, 0), CellId::new(1, 0));
        let (g, _) = build_od(&ds, &grid(), RangeFilter::all(), true);
        assert_eq!(g.edge_count(), 3);
        assert_eq!((g.weight(a, b), g.weight(b, a), g.weight(a, a)), (1.0, 1.0, 1.0));
        let (u, _) = build_od(&ds, &grid(), RangeFilter::all(), false);
        assert_eq!(u.edge_count(), 2);
        assert_eq!((u.weight(a, b), u.weight(b, a), u.weight(a, a)), (2.0, 2.0, 1.0));
    }

    #[test]
    fn outside_and_range_drops_are_reported() {
        let ds = [disp(A, B), disp(A, (100.0, 5.0)), disp(A, (6.0, 5.0))];
        let (g, r) = build_od(&ds, &grid(), RangeFilter::at_least(5.0), true);
        assert_eq!(r, BuildReport { input: 3, kept: 1, dropped_range: 1, dropped_outside: 1 });
        assert_eq!(g.total_weight(), 1.0);
    }

    #[test]
    fn merge_identity_and_doubling() {
        let (g, _) = build_od(&[disp(A, B), disp(B, B)], &grid(), RangeFilter::all(), true);
        let empty = OdGraph::new(grid(), true);
        assert_eq!(merge(&[g.clone(), empty]).unwrap(), g);
        let doubled = merge(&[g.clone(), g.clone()]).unwrap();
        assert_eq!(doubled, g.scaled(2.0));
    }

    #[test]
    fn merge_rejects_mismatch() {
        let g = OdGraph::new(grid(), true);
        let h = OdGraph::new(grid(), false);
        assert!(matches!(merge(&[g.clone(), h]), Err(Error::Mismatch(_))));
        let other = OdGraph::new(Fishnet::new(0.0, 0.0, 5.0, 4, 4).unwrap(), true);
        assert!(merge(&[g, other]).is_err());
    }

    #[test]
    fn flow_export_records() {
        let mut g = OdGraph::new(grid(), true);
        g.add(CellId::new(0, 0), CellId::new(1, 0), 3.0).unwrap();
        let f = flow_export(&g);
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].from_xy, f[0].to_xy, f[0].weight), ((5.0, 5.0), (15.0, 5.0), 3.0));

        let mut s = OdGraph::new(grid(), true);
        s.add(CellId::new(2, 2), CellId::new(2, 2), 1.0).unwrap();
        let f = flow_export(&s);
        assert_eq!(f[0].from_xy, f[0].to_xy);

        assert!(flow_export(&OdGraph::new(grid(), true)).is_empty());
    }

    #[test]
    fn edge_csv_roundtrip() {
        let (g, _) = build_od(&[disp(A, B), disp(B, A), disp(B, A)], &grid(), RangeFilter::all(), true);
        let mut buf = Vec::new();
        write_edges_csv(&mut buf, &g).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "from_col,from_row,to_col,to_row,weight\n0,0,1,0,1\n1,0,0,0,2\n"
        );
        assert_eq!(read_edges_csv(buf.as_slice(), &grid(), true).unwrap(), g);
    }

    #[test]
    fn range_filter_parsing() {
        assert_eq!("all".parse::<RangeFilter>().unwrap(), RangeFilter::all());
        assert_eq!("<4000".parse::<RangeFilter>().unwrap(), RangeFilter::below(4000.0));
        assert_eq!(">10000".parse::<RangeFilter>().unwrap(), RangeFilter::at_least(10000.0));
        let b: RangeFilter = "4000..10000".parse().unwrap();
        assert_eq!(b.label(), "4000-10000");
        assert!("10..5".parse::<RangeFilter>().is_err());
        assert!("~5".parse::<RangeFilter>().is_err());
        assert!(RangeFilter::below(4000.0).accepts(3999.9));
        assert!(!RangeFilter::below(4000.0).accepts(4000.0));
        assert!(RangeFilter::at_least(4000.0).accepts(4000.0));
    }

    #[test]
    fn undirected_network_expands_arcs() {
        let (u, _) = build_od(&[disp(A, B), disp(A, A)], &grid(), RangeFilter::all(), false);
        let (nodes, net) = u.to_network();
        assert_eq!(nodes.len(), 2);
        assert_eq!(net.arcs().len(), 3);
    }
}
