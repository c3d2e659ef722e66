//! End-to-end runs: configuration, per-stage entry points and artifacts.
//!
//! Every stage reads its inputs from the output directory written by the
//! stages before it, so a run split into separate stage invocations produces
//! the same files as a single [`run_pipeline`] call.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{masked_fishnet, Boundary, CellId, Fishnet, Projection, ProjectionKind};
use crate::gravity::{
    beta_sweep, fit_gravity, observed_interactions, summarize_regions, write_pairs_csv, GravityReport, RegionSummary,
    DEFAULT_BETA,
};
use crate::ingest::{
    filter_records, parse_records, parse_timestamp, read_trajectories, write_trajectories, CoordCheck, DedupKey,
    FilterConfig, FilterReport, InputFormat, RawRecord, Trajectory,
};
use crate::mapeq::{
    optimize, partition_geojson, read_partition_csv, walker_rates, write_partition_csv, CodelengthBreakdown,
    Partition, TeleportMode,
};
use crate::mobility::{
    default_displacement_segments, default_double_power_segments, default_gyration_segments, distinct_locations,
    empirical_ccdf, fit_distribution, gyration_cell_size, radius_of_gyration, validate_segments, write_ccdf_csv,
    FitRange, FitResult, Model, SegmentSpec,
};
use crate::odgraph::{
    build_od_from_trajectories, flow_export, read_edges_csv, write_edges_csv, write_flow_csv, BuildReport, OdGraph,
    RangeFilter,
};
use crate::BUILD_ID;

pub const CONFIG_FILE: &str = "config.txt";
pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const FILTER_REPORT: &str = "filter_report.json";
pub const FISHNET_JSON: &str = "fishnet.json";
pub const FISHNET_GEOJSON: &str = "fishnet.geojson";
pub const STATS: &str = "stats.json";
pub const CCDF_DISPLACEMENT: &str = "ccdf_displacement.csv";
pub const CCDF_GYRATION: &str = "ccdf_gyration.csv";
pub const EDGES: &str = "edges.csv";
pub const FLOWS: &str = "flows.csv";
pub const GRAPH_REPORT: &str = "graph_report.json";
pub const PARTITION_CSV: &str = "partition.csv";
pub const PARTITION_GEOJSON: &str = "partition.geojson";
pub const CODELENGTH: &str = "codelength.json";
pub const GRAVITY: &str = "gravity.json";
pub const GRAVITY_PAIRS: &str = "gravity_pairs.csv";
pub const RUN_REPORT: &str = "run_report.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    /// `None` picks the format from each file's extension.
    pub format: Option<InputFormat>,
    pub projection: ProjectionKind,
    /// `(lat0, lon0)` of the local projection.
    pub origin: (f64, f64),
    pub boundary: Option<PathBuf>,
    pub cell_size: f64,
    pub filter: FilterConfig,
    pub range_filters: Vec<RangeFilter>,
    pub directed: bool,
    pub tau: f64,
    pub teleport: TeleportMode,
    pub recorded_teleport: bool,
    pub seed: u64,
    pub restarts: usize,
    pub beta: f64,
    pub beta_sweep: Vec<f64>,
    pub displacement_segments: Vec<SegmentSpec>,
    pub double_power_segments: Vec<SegmentSpec>,
    pub gyration_segments: Vec<SegmentSpec>,
    pub out: PathBuf,
    /// Worker threads; not part of the echoed configuration.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            format: None,
            projection: ProjectionKind::LocalEquirectangular,
            origin: (54.0, -2.0),
            boundary: None,
            cell_size: 10_000.0,
            filter: FilterConfig::default(),
            range_filters: ["all", "<4000", ">4000", ">10000"]
                .iter()
                .map(|s| s.parse().expect("valid range filter"))
                .collect(),
            directed: true,
            tau: 0.15,
            teleport: TeleportMode::InStrength,
            recorded_teleport: false,
            seed: 42,
            restarts: 8,
            beta: DEFAULT_BETA,
            beta_sweep: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.5, 2.0],
            displacement_segments: default_displacement_segments(),
            double_power_segments: default_double_power_segments(),
            gyration_segments: default_gyration_segments(),
            out: PathBuf::from("out"),
            threads: None,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn model_name(m: Model) -> &'static str {
    match m {
        Model::Exponential => "exponential",
        Model::StretchedExponential => "stretched_exponential",
        Model::PowerLaw => "power_law",
        Model::TruncatedPowerLaw => "truncated_power_law",
    }
}

/// `model:lo:hi` segments joined by `;`, with `inf` for an open end.
fn parse_segments(v: &str) -> Result<Vec<SegmentSpec>> {
    let segs = v
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let parts: Vec<&str> = s.split(':').map(str::trim).collect();
            let bad = || Error::invalid(format!("bad segment `{s}`, expected model:lo:hi"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let num = |x: &str| {
                if x == "inf" {
                    Ok(f64::INFINITY)
                } else {
                    x.parse::<f64>().map_err(|_| bad())
                }
            };
            Ok(SegmentSpec::new(num(parts[1])?, num(parts[2])?, parts[0].parse()?))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_segments(&segs)?;
    Ok(segs)
}

fn echo_segments(segs: &[SegmentSpec]) -> String {
    segs.iter()
        .map(|s| {
            let hi = if s.range.hi.is_finite() { s.range.hi.to_string() } else { "inf".into() };
            format!("{}:{}:{}", model_name(s.model), s.range.lo, hi)
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn echo_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        let bad = || Error::invalid(format!("bad value `{value}` for `{key}`"));
        let f = || value.parse::<f64>().map_err(|_| bad());
        let b = || parse_bool(value).ok_or_else(bad);
        match key {
            "input" => {
                self.inputs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "format" => {
                self.format = match value {
                    "auto" | "" => None,
                    other => Some(other.parse()?),
                }
            }
            "projection" => {
                self.projection = match value {
                    "passthrough" => ProjectionKind::Passthrough,
                    "local_equirectangular" => ProjectionKind::LocalEquirectangular,
                    _ => return Err(bad()),
                }
            }
            "origin" => {
                let (a, c) = value.split_once(',').ok_or_else(bad)?;
                self.origin = (a.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
            }
            "boundary" => self.boundary = (!value.is_empty() && value != "none").then(|| PathBuf::from(value)),
            "cell_size" => self.cell_size = f()?,
            "max_speed" => self.filter.max_speed = f()?,
            "min_residency_days" => self.filter.min_residency_days = f()?,
            "keep_geocoded" => self.filter.keep_geocoded = b()?,
            "keep_unknown" => self.filter.keep_unknown = b()?,
            "dedup_key" => self.filter.dedup_key = value.parse()?,
            "time_window" => {
                self.filter.time_window = if value.is_empty() || value == "none" {
                    None
                } else {
                    let (a, c) = value.split_once(',').ok_or_else(bad)?;
                    Some((
                        parse_timestamp(a.trim()).ok_or_else(bad)?,
                        parse_timestamp(c.trim()).ok_or_else(bad)?,
                    ))
                }
            }
            "range_filters" => {
                self.range_filters = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "directed" => self.directed = b()?,
            "tau" => self.tau = f()?,
            "teleport" => self.teleport = value.parse()?,
            "recorded_teleport" => self.recorded_teleport = b()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "restarts" => self.restarts = value.parse().map_err(|_| bad())?,
            "beta" => self.beta = f()?,
            "beta_sweep" => {
                self.beta_sweep = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            }
            "displacement_segments" => self.displacement_segments = parse_segments(value)?,
            "double_power_segments" => self.double_power_segments = parse_segments(value)?,
            "gyration_segments" => self.gyration_segments = parse_segments(value)?,
            "out" => self.out = PathBuf::from(value),
            "threads" => self.threads = Some(value.parse().map_err(|_| bad())?),
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("config", format!("line {}: `{raw}`", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::invalid(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        self.filter.validate()?;
        if self.range_filters.is_empty() {
            return Err(Error::invalid("at least one range filter is required"));
        }
        let mut labels: Vec<String> = self.range_filters.iter().map(RangeFilter::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.range_filters.len() {
            return Err(Error::invalid("range filters repeat"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta must be >= 0"));
        }
        self.projection()?;
        Ok(())
    }

    pub fn projection(&self) -> Result<Projection> {
        match self.projection {
            ProjectionKind::Passthrough => Ok(Projection::passthrough()),
            ProjectionKind::LocalEquirectangular => Projection::local_equirectangular(self.origin.0, self.origin.1),
        }
    }

    /// Canonical settings in a fixed order, without `out` and `threads`.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let (w0, w1) = match self.filter.time_window {
            Some((a, b)) => (a.to_string(), b.to_string()),
            None => (String::new(), String::new()),
        };
        vec![
            ("input", echo_list(&self.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())),
            (
                "format",
                match self.format {
                    None => "auto".into(),
                    Some(InputFormat::Csv) => "csv".into(),
                    Some(InputFormat::Jsonl) => "jsonl".into(),
                },
            ),
            (
                "projection",
                match self.projection {
                    ProjectionKind::Passthrough => "passthrough".into(),
                    ProjectionKind::LocalEquirectangular => "local_equirectangular".into(),
                },
            ),
            ("origin", format!("{},{}", self.origin.0, self.origin.1)),
            (
                "boundary",
                self.boundary.as_ref().map_or("none".into(), |p| p.display().to_string()),
            ),
            ("cell_size", self.cell_size.to_string()),
            ("max_speed", self.filter.max_speed.to_string()),
            ("min_residency_days", self.filter.min_residency_days.to_string()),
            ("keep_geocoded", self.filter.keep_geocoded.to_string()),
            ("keep_unknown", self.filter.keep_unknown.to_string()),
            (
                "dedup_key",
                match self.filter.dedup_key {
                    DedupKey::UserTime => "user_time".into(),
                    DedupKey::UserTimeLoc => "user_time_loc".into(),
                },
            ),
            (
                "time_window",
                if w0.is_empty() { "none".into() } else { format!("{w0},{w1}") },
            ),
            ("range_filters", echo_list(&self.range_filters)),
            ("directed", self.directed.to_string()),
            ("tau", self.tau.to_string()),
            (
                "teleport",
                match self.teleport {
                    TeleportMode::Uniform => "uniform".into(),
                    TeleportMode::InStrength => "in_strength".into(),
                },
            ),
            ("recorded_teleport", self.recorded_teleport.to_string()),
            ("seed", self.seed.to_string()),
            ("restarts", self.restarts.to_string()),
            ("beta", self.beta.to_string()),
            ("beta_sweep", echo_list(&self.beta_sweep)),
            ("displacement_segments", echo_segments(&self.displacement_segments)),
            ("double_power_segments", echo_segments(&self.double_power_segments)),
            ("gyration_segments", echo_segments(&self.gyration_segments)),
        ]
    }

    pub fn echo(&self) -> String {
        self.key_values().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn range_dir(&self, filter: &RangeFilter) -> PathBuf {
        PathBuf::from(format!("range_{}", filter.label()))
    }
}

/// Files written under an output root, removable as a unit when a stage fails.
pub struct ArtifactWriter {
    root: PathBuf,
    written: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        let mut w = ArtifactWriter {
            root: root.to_path_buf(),
            written: Vec::new(),
            created_dirs: Vec::new(),
        };
        w.ensure_dir(root)?;
        Ok(w)
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut d = dir.to_path_buf();
        while !d.as_os_str().is_empty() && !d.exists() {
            missing.push(d.clone());
            match d.parent() {
                Some(p) => d = p.to_path_buf(),
                None => break,
            }
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        missing.reverse();
        self.created_dirs.extend(missing);
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `rel` through a buffered writer.
    pub fn write<F>(&mut self, rel: impl AsRef<Path>, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(rel.as_ref());
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        self.write(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::format("json", e.to_string()))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    /// Removes everything this writer created.
    pub fn rollback(self) {
        for p in self.written.iter().rev() {
            let _ = fs::remove_file(p);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn open_artifact(path: &Path) -> Result<BufReader<File>> {
    require(path)?;
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open_artifact(path)?).map_err(|e| Error::format("json", format!("{}: {e}", path.display())))
}

fn infer_format(path: &Path) -> InputFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") | Some("ndjson") => InputFormat::Jsonl,
        _ => InputFormat::Csv,
    }
}

fn load_boundary(cfg: &PipelineConfig) -> Result<Option<Boundary>> {
    let Some(path) = &cfg.boundary else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format("boundary", e.to_string()))?;
    Ok(Some(Boundary::from_geojson(&value, &cfg.projection()?)?))
}

/// Parses every configured input file.
pub fn load_records(cfg: &PipelineConfig) -> Result<(Vec<RawRecord>, u64)> {
    if cfg.inputs.is_empty() {
        return Err(Error::invalid("no input files configured"));
    }
    let check = match cfg.projection {
        ProjectionKind::Passthrough => CoordCheck::None,
        ProjectionKind::LocalEquirectangular => CoordCheck::Wgs84,
    };
    let mut records = Vec::new();
    let mut errors = 0;
    for path in &cfg.inputs {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let format = cfg.format.unwrap_or_else(|| infer_format(path));
        let parsed = parse_records(BufReader::with_capacity(1 << 20, file), format, check)?;
        records.extend(parsed.records);
        errors += parsed.errors;
    }
    if records.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no records parsed from the input ({errors} malformed lines)"
        )));
    }
    Ok((records, errors))
}

/// Parsing and cleaning.
pub fn filter_stage(cfg: &PipelineConfig) -> Result<(Vec<Trajectory>, FilterReport)> {
    let (records, errors) = load_records(cfg)?;
    let boundary = load_boundary(cfg)?;
    let (trajectories, mut report) = filter_records(records, &cfg.filter, &cfg.projection()?, boundary.as_ref())?;
    report.parse_errors += errors;
    report.parsed += errors;
    if trajectories.is_empty() {
        return Err(Error::InsufficientData("no trajectories survived filtering".into()));
    }
    Ok((trajectories, report))
}

/// Fishnet over the boundary when one is configured, else over the data.
pub fn grid_stage(cfg: &PipelineConfig, trajectories: &[Trajectory]) -> Result<Fishnet> {
    match load_boundary(cfg)? {
        Some(b) => masked_fishnet(&b, cfg.cell_size),
        None => Fishnet::covering(
            trajectories.iter().flat_map(|t| t.points.iter().map(|p| p.xy())),
            cfg.cell_size,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub model: Model,
    pub range: FitRange,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub n_samples: usize,
    pub segments: Vec<SegmentOutcome>,
    /// Share of samples inside successfully fitted segments.
    pub covered_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub users: usize,
    pub displacements: usize,
    pub displacement: SegmentReport,
    pub displacement_two_regime: SegmentReport,
    pub gyration: SegmentReport,
    pub suggested_cell_size: Option<f64>,
    pub locations: SegmentReport,
}

fn segment_report(samples: &[f64], segments: &[SegmentSpec]) -> SegmentReport {
    let outcomes: Vec<SegmentOutcome> = segments
        .par_iter()
        .map(|s| match fit_distribution(samples, s.model, s.range) {
            Ok(fit) => SegmentOutcome {
                model: s.model,
                range: s.range,
                fit: Some(fit),
                error: None,
            },
            Err(e) => SegmentOutcome {
                model: s.model,
                range: s.range,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    SegmentReport {
        n_samples: samples.len(),
        covered_fraction: outcomes
            .iter()
            .filter_map(|o| o.fit.as_ref())
            .map(|f| f.fraction_of_population)
            .sum(),
        segments: outcomes,
    }
}

pub struct StatsOutput {
    pub report: StatsReport,
    pub displacement_ccdf: Vec<(f64, f64)>,
    pub gyration_ccdf: Vec<(f64, f64)>,
}

/// Displacement, radius-of-gyration and location-count statistics. Fit
/// failures are recorded per segment instead of failing the stage.
pub fn stats_stage(cfg: &PipelineConfig, trajectories: &[Trajectory]) -> StatsOutput {
    let displacements: Vec<f64> = trajectories
        .par_iter()
        .flat_map_iter(|t| {
            t.points
                .windows(2)
                .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
                .filter(|&d| d > 0.0)
                .collect::<Vec<_>>()
        })
        .collect();
    let gyration: Vec<f64> = trajectories
        .par_iter()
        .map(radius_of_gyration)
        .filter(|&r| r > 0.0)
        .collect();
    let locations: Vec<f64> = trajectories.par_iter().map(|t| distinct_locations(t) as f64).collect();
    let location_segments = [SegmentSpec {
        range: FitRange::unbounded(1.0),
        model: Model::TruncatedPowerLaw,
    }];
    let report = StatsReport {
        users: trajectories.len(),
        displacements: displacements.len(),
        displacement: segment_report(&displacements, &cfg.displacement_segments),
        displacement_two_regime: segment_report(&displacements, &cfg.double_power_segments),
        gyration: segment_report(&gyration, &cfg.gyration_segments),
        suggested_cell_size: gyration_cell_size(&cfg.gyration_segments),
        locations: segment_report(&locations, &location_segments),
    };
    StatsOutput {
        report,
        displacement_ccdf: empirical_ccdf(&displacements).unwrap_or_default(),
        gyration_ccdf: empirical_ccdf(&gyration).unwrap_or_default(),
    }
}

pub fn graph_stage(
    cfg: &PipelineConfig,
    trajectories: &[Trajectory],
    grid: &Fishnet,
    filter: RangeFilter,
) -> (OdGraph, BuildReport) {
    build_od_from_trajectories(trajectories, grid, filter, cfg.directed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodelengthReport {
    pub range: String,
    pub nodes: usize,
    pub edges: usize,
    pub modules: usize,
    pub tau: f64,
    pub teleport: TeleportMode,
    pub recorded_teleport: bool,
    pub seed: u64,
    pub restarts: usize,
    pub walker_iterations: usize,
    pub codelength: CodelengthBreakdown,
}

pub struct Communities {
    pub cells: Vec<CellId>,
    pub partition: Partition,
    pub report: CodelengthReport,
}

pub fn communities_stage(cfg: &PipelineConfig, graph: &OdGraph, label: &str) -> Result<Communities> {
    if graph.is_empty() {
        return Err(Error::InsufficientData(format!("OD graph `{label}` has no edges")));
    }
    let (cells, net) = graph.to_network();
    let rates = walker_rates(&net, cfg.tau, cfg.teleport)?.with_recorded_teleport(cfg.recorded_teleport);
    let (partition, codelength) = optimize(&net, &rates, cfg.seed, cfg.restarts)?;
    let report = CodelengthReport {
        range: label.to_string(),
        nodes: cells.len(),
        edges: graph.edge_count(),
        modules: partition.module_count(),
        tau: cfg.tau,
        teleport: cfg.teleport,
        recorded_teleport: cfg.recorded_teleport,
        seed: cfg.seed,
        restarts: cfg.restarts,
        walker_iterations: rates.iterations,
        codelength,
    };
    Ok(Communities {
        cells,
        partition,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityOutcome {
    pub range: String,
    pub regions: Vec<RegionSummary>,
    pub report: Option<GravityReport>,
    pub sweep: Vec<(f64, f64)>,
    pub error: Option<String>,
}

/// Gravity fit between the delineated regions. A partition that cannot
/// support the fit (too few regions or pairs) is recorded, not raised.
pub fn gravity_stage(cfg: &PipelineConfig, graph: &OdGraph, partition: &Partition, label: &str) -> Result<GravityOutcome> {
    let regions = summarize_regions(graph, partition)?;
    let attempt = observed_interactions(graph, partition).and_then(|obs| {
        let report = fit_gravity(&regions, &obs, cfg.beta)?;
        let sweep = beta_sweep(&regions, &obs, &cfg.beta_sweep)?;
        Ok((report, sweep))
    });
    Ok(match attempt {
        Ok((report, sweep)) => GravityOutcome {
            range: label.to_string(),
            regions,
            report: Some(report),
            sweep,
            error: None,
        },
        Err(e @ (Error::InsufficientData(_) | Error::InvalidArgument(_))) => GravityOutcome {
            range: label.to_string(),
            regions,
            report: None,
            sweep: Vec::new(),
            error: Some(e.to_string()),
        },
        Err(e) => return Err(e),
    })
}

fn write_filter(w: &mut ArtifactWriter, trajectories: &[Trajectory], report: &FilterReport) -> Result<()> {
    w.write(TRAJECTORIES, |f| write_trajectories(f, trajectories))?;
    w.write_json(FILTER_REPORT, report)
}

fn write_grid(w: &mut ArtifactWriter, grid: &Fishnet) -> Result<()> {
    w.write_json(FISHNET_JSON, grid)?;
    w.write_json(FISHNET_GEOJSON, &grid.to_geojson())
}

fn write_stats(w: &mut ArtifactWriter, stats: &StatsOutput) -> Result<()> {
    w.write_json(STATS, &stats.report)?;
    w.write(CCDF_DISPLACEMENT, |f| write_ccdf_csv(f, &stats.displacement_ccdf))?;
    w.write(CCDF_GYRATION, |f| write_ccdf_csv(f, &stats.gyration_ccdf))
}

fn write_graph(w: &mut ArtifactWriter, dir: &Path, graph: &OdGraph, report: &BuildReport) -> Result<()> {
    w.write(dir.join(EDGES), |f| write_edges_csv(f, graph))?;
    w.write(dir.join(FLOWS), |f| write_flow_csv(f, &flow_export(graph)))?;
    w.write_json(dir.join(GRAPH_REPORT), report)
}

fn write_communities(w: &mut ArtifactWriter, dir: &Path, grid: &Fishnet, c: &Communities) -> Result<()> {
    w.write(dir.join(PARTITION_CSV), |f| write_partition_csv(f, &c.cells, &c.partition))?;
    w.write_json(dir.join(PARTITION_GEOJSON), &partition_geojson(grid, &c.cells, &c.partition))?;
    w.write_json(dir.join(CODELENGTH), &c.report)
}

fn write_gravity(w: &mut ArtifactWriter, dir: &Path, g: &GravityOutcome) -> Result<()> {
    w.write_json(dir.join(GRAVITY), g)?;
    let pairs = g.report.as_ref().map(|r| r.pairs.as_slice()).unwrap_or(&[]);
    w.write(dir.join(GRAVITY_PAIRS), |f| write_pairs_csv(f, pairs))
}

fn write_config(w: &mut ArtifactWriter, cfg: &PipelineConfig) -> Result<()> {
    let text = cfg.echo();
    w.write(CONFIG_FILE, |f| Ok(f.write_all(text.as_bytes())?))
}

/// Values reported for the nationwide 2014 geotagged-tweet corpus; they
/// need that corpus to reproduce and are carried in run reports for comparison.
pub fn published_reference() -> Value {
    json!({
        "corpus": "69M geotagged tweets, Great Britain, 2014 (not bundled)",
        "codelength_bits": {"all": 7.8, "ge10000": 8.5, "lt4000": 4.5, "ge4000": 8.1, "london_1km_all": 8.1},
        "fishnet_cells_10km": 2784,
        "displacement_truncated_power_law": {"alpha": 1.24, "lambda": 0.00132},
        "displacement_tail_power_law_alpha": 3.2,
        "displacement_segment_fractions": {"exponential": 0.03, "stretched_exponential": 0.93, "power_law": 0.04},
        "displacement_two_regime_fractions": {"below_4km": 0.55, "4km_to_100km": 0.40},
        "gyration_covered_fraction": 0.92,
        "gravity": {"beta": 0.8, "r_squared": 0.89, "p_value_below": 0.01}
    })
}

fn hash_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok((digest.iter().map(|b| format!("{b:02x}")).collect(), bytes.len() as u64))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub build: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub artifacts: Vec<ManifestEntry>,
}

fn expected_artifacts(cfg: &PipelineConfig) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = [
        CONFIG_FILE,
        TRAJECTORIES,
        FILTER_REPORT,
        FISHNET_JSON,
        FISHNET_GEOJSON,
        STATS,
        CCDF_DISPLACEMENT,
        CCDF_GYRATION,
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    for f in &cfg.range_filters {
        let d = cfg.range_dir(f);
        for name in [EDGES, FLOWS, GRAPH_REPORT, PARTITION_CSV, PARTITION_GEOJSON, CODELENGTH, GRAVITY, GRAVITY_PAIRS] {
            out.push(d.join(name));
        }
    }
    out
}

fn summarize_run(cfg: &PipelineConfig, root: &Path) -> Result<Value> {
    let filter: FilterReport = read_json(&root.join(FILTER_REPORT))?;
    let stats: StatsReport = read_json(&root.join(STATS))?;
    let grid: Fishnet = read_json(&root.join(FISHNET_JSON))?;
    let mut ranges = Vec::new();
    for f in &cfg.range_filters {
        let d = root.join(cfg.range_dir(f));
        let c: CodelengthReport = read_json(&d.join(CODELENGTH))?;
        let g: GravityOutcome = read_json(&d.join(GRAVITY))?;
        let b: BuildReport = read_json(&d.join(GRAPH_REPORT))?;
        ranges.push(json!({
            "range": f.to_string(),
            "label": f.label(),
            "displacements_kept": b.kept,
            "nodes": c.nodes,
            "edges": c.edges,
            "modules": c.modules,
            "codelength_bits": c.codelength.total_bits,
            "index_bits": c.codelength.index_bits,
            "module_bits": c.codelength.module_bits,
            "gravity": g.report.as_ref().map(|r| json!({
                "beta": r.fit.beta, "k": r.fit.k, "r_squared": r.fit.r_squared,
                "p_value": r.fit.p_value, "n_pairs": r.fit.n_pairs,
            })),
            "gravity_error": g.error,
        }));
    }
    let fit_summary = |r: &SegmentReport| -> Value {
        Value::Array(
            r.segments
                .iter()
                .map(|s| {
                    json!({
                        "model": model_name(s.model),
                        "lo": s.range.lo,
                        "hi": if s.range.hi.is_finite() { json!(s.range.hi) } else { Value::Null },
                        "params": s.fit.as_ref().map(|f| &f.params),
                        "fraction": s.fit.as_ref().map(|f| f.fraction_of_population),
                        "error": s.error,
                    })
                })
                .collect(),
        )
    };
    Ok(json!({
        "build": BUILD_ID,
        "seed": cfg.seed,
        "config": cfg.key_values().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect::<serde_json::Map<_, _>>(),
        "filter": filter,
        "fishnet": {"cell_size": grid.cell_size, "n_cols": grid.n_cols, "n_rows": grid.n_rows, "active_cells": grid.active_count()},
        "stats": {
            "users": stats.users,
            "displacements": stats.displacements,
            "displacement_fits": fit_summary(&stats.displacement),
            "displacement_covered_fraction": stats.displacement.covered_fraction,
            "two_regime_fits": fit_summary(&stats.displacement_two_regime),
            "gyration_fits": fit_summary(&stats.gyration),
            "gyration_covered_fraction": stats.gyration.covered_fraction,
            "suggested_cell_size": stats.suggested_cell_size,
        },
        "ranges": ranges,
        "published_reference": published_reference(),
    }))
}

/// Writes the run report and the manifest from the artifacts on disk.
fn finalize(cfg: &PipelineConfig, w: &mut ArtifactWriter) -> Result<Manifest> {
    let root = w.root().to_path_buf();
    for p in expected_artifacts(cfg) {
        require(&root.join(p))?;
    }
    let report = summarize_run(cfg, &root)?;
    w.write_json(RUN_REPORT, &report)?;
    let mut files = Vec::new();
    collect_files(&root, &root, &mut files)?;
    let expected = {
        let mut e = expected_artifacts(cfg);
        e.push(PathBuf::from(RUN_REPORT));
        e
    };
    let mut artifacts = Vec::new();
    for rel in expected.iter().filter(|p| files.contains(p)) {
        let (sha256, bytes) = hash_file(&root.join(rel))?;
        artifacts.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256,
            bytes,
        });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        build: BUILD_ID.to_string(),
        seed: cfg.seed,
        config: cfg.key_values().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        artifacts,
    };
    w.write_json(MANIFEST, &manifest)?;
    Ok(manifest)
}

fn staged<T>(cfg: &PipelineConfig, body: impl FnOnce(&mut ArtifactWriter) -> Result<T>) -> Result<T> {
    cfg.validate()?;
    let mut w = ArtifactWriter::new(&cfg.out)?;
    match body(&mut w) {
        Ok(v) => Ok(v),
        Err(e) => {
            w.rollback();
            Err(e)
        }
    }
}

fn tag<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

fn read_stored_trajectories(root: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories(open_artifact(&root.join(TRAJECTORIES))?)
}

fn read_grid(root: &Path) -> Result<Fishnet> {
    read_json(&root.join(FISHNET_JSON))
}

fn read_graph(cfg: &PipelineConfig, root: &Path, grid: &Fishnet, filter: &RangeFilter) -> Result<OdGraph> {
    read_edges_csv(open_artifact(&root.join(cfg.range_dir(filter)).join(EDGES))?, grid, cfg.directed)
}

/// `filter` subcommand: inputs to trajectories and a filter report.
pub fn run_filter(cfg: &PipelineConfig) -> Result<FilterReport> {
    staged(cfg, |w| {
        let (trajectories, report) = tag("ingest", filter_stage(cfg))?;
        write_config(w, cfg)?;
        write_filter(w, &trajectories, &report)?;
        Ok(report)
    })
}

/// `grid` subcommand.
pub fn run_grid(cfg: &PipelineConfig) -> Result<Fishnet> {
    staged(cfg, |w| {
        tag("grid", (|| {
            let trajectories = read_stored_trajectories(&cfg.out)?;
            let grid = grid_stage(cfg, &trajectories)?;
            write_grid(w, &grid)?;
            Ok(grid)
        })())
    })
}

/// `stats` subcommand.
pub fn run_stats(cfg: &PipelineConfig) -> Result<StatsReport> {
    staged(cfg, |w| {
        tag("stats", (|| {
            let trajectories = read_stored_trajectories(&cfg.out)?;
            let stats = stats_stage(cfg, &trajectories);
            write_stats(w, &stats)?;
            Ok(stats.report)
        })())
    })
}

/// `graph` subcommand: one OD graph per range filter.
pub fn run_graph(cfg: &PipelineConfig) -> Result<Vec<BuildReport>> {
    staged(cfg, |w| {
        tag("graph", (|| {
            let trajectories = read_stored_trajectories(&cfg.out)?;
            let grid = read_grid(&cfg.out)?;
            let mut out = Vec::new();
            for f in &cfg.range_filters {
                let (graph, report) = graph_stage(cfg, &trajectories, &grid, *f);
                write_graph(w, &cfg.range_dir(f), &graph, &report)?;
                out.push(report);
            }
            Ok(out)
        })())
    })
}

/// `communities` subcommand over every range's stored edge list.
pub fn run_communities(cfg: &PipelineConfig) -> Result<Vec<CodelengthReport>> {
    staged(cfg, |w| {
        tag("communities", (|| {
            let grid = read_grid(&cfg.out)?;
            let mut out = Vec::new();
            for f in &cfg.range_filters {
                let graph = read_graph(cfg, &cfg.out, &grid, f)?;
                let c = communities_stage(cfg, &graph, &f.label())?;
                write_communities(w, &cfg.range_dir(f), &grid, &c)?;
                out.push(c.report);
            }
            Ok(out)
        })())
    })
}

/// `communities` on a standalone edge list; writes partition and codelength
/// files into the output directory.
pub fn run_communities_on_edges(cfg: &PipelineConfig, edges: &Path, grid: &Path) -> Result<CodelengthReport> {
    staged(cfg, |w| {
        tag("communities", (|| {
            let grid: Fishnet = read_json(grid)?;
            let graph = read_edges_csv(open_artifact(edges)?, &grid, cfg.directed)?;
            let c = communities_stage(cfg, &graph, "edges")?;
            write_communities(w, Path::new(""), &grid, &c)?;
            Ok(c.report)
        })())
    })
}

/// `gravity` subcommand over every range's graph and partition.
pub fn run_gravity(cfg: &PipelineConfig) -> Result<Vec<GravityOutcome>> {
    staged(cfg, |w| {
        tag("gravity", (|| {
            let grid = read_grid(&cfg.out)?;
            let mut out = Vec::new();
            for f in &cfg.range_filters {
                let graph = read_graph(cfg, &cfg.out, &grid, f)?;
                let (cells, partition) =
                    read_partition_csv(open_artifact(&cfg.out.join(cfg.range_dir(f)).join(PARTITION_CSV))?)?;
                if cells != graph.nodes() {
                    return Err(Error::Mismatch(format!("partition of `{}` does not match its graph", f.label())));
                }
                let g = gravity_stage(cfg, &graph, &partition, &f.label())?;
                write_gravity(w, &cfg.range_dir(f), &g)?;
                out.push(g);
            }
            Ok(out)
        })())
    })
}

/// `report` subcommand: writes the run report and manifest if the run has
/// not been finalized yet, then renders the manifest as text.
pub fn run_report(cfg: &PipelineConfig) -> Result<String> {
    let manifest_path = cfg.out.join(MANIFEST);
    if !manifest_path.exists() {
        staged(cfg, |w| tag("report", finalize(cfg, w)))?;
    }
    tag("report", render_report(&cfg.out))
}

/// Full run: ingest, grid, stats, then graph, communities and gravity for
/// every range filter, then the run report and manifest. On failure every
/// file written by the run is removed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    staged(cfg, |w| {
        let (trajectories, report) = tag("ingest", filter_stage(cfg))?;
        write_config(w, cfg)?;
        write_filter(w, &trajectories, &report)?;
        let grid = tag("grid", grid_stage(cfg, &trajectories))?;
        write_grid(w, &grid)?;
        let stats = stats_stage(cfg, &trajectories);
        tag("stats", write_stats(w, &stats))?;
        for f in &cfg.range_filters {
            let dir = cfg.range_dir(f);
            let (graph, build) = graph_stage(cfg, &trajectories, &grid, *f);
            tag("graph", write_graph(w, &dir, &graph, &build))?;
            let c = tag("communities", communities_stage(cfg, &graph, &f.label()))?;
            tag("communities", write_communities(w, &dir, &grid, &c))?;
            let g = tag("gravity", gravity_stage(cfg, &graph, &c.partition, &f.label()))?;
            tag("gravity", write_gravity(w, &dir, &g))?;
        }
        tag("report", finalize(cfg, w))
    })
}

/// Human-readable summary of a finalized run directory.
pub fn render_report(root: &Path) -> Result<String> {
    let manifest: Manifest = read_json(&root.join(MANIFEST))?;
    let report: Value = read_json(&root.join(RUN_REPORT))?;
    let mut s = String::new();
    s.push_str(&format!("build      {}\nseed       {}\n", manifest.build, manifest.seed));
    if let Some(f) = report.get("filter") {
        s.push_str(&format!(
            "records    parsed {} retained {} users {}\n",
            f["parsed"], f["retained_records"], f["retained_users"]
        ));
        s.push_str(&format!(
            "dropped    geocoded {} outside {} duplicate {} window {} speed {} residency {}\n",
            f["dropped_geocoded"],
            f["dropped_outside"],
            f["dropped_duplicate"],
            f["dropped_window"],
            f["dropped_speed"],
            f["dropped_residency"]
        ));
    }
    if let Some(g) = report.get("fishnet") {
        s.push_str(&format!("fishnet    {} m cells, {} active\n", g["cell_size"], g["active_cells"]));
    }
    s.push_str("ranges\n");
    for r in report["ranges"].as_array().into_iter().flatten() {
        let gravity = match r.get("gravity").filter(|g| !g.is_null()) {
            Some(g) => format!("k {:.4e} r2 {:.3}", g["k"].as_f64().unwrap_or(f64::NAN), g["r_squared"].as_f64().unwrap_or(f64::NAN)),
            None => "gravity n/a".into(),
        };
        s.push_str(&format!(
            "  {:<12} nodes {:>5} modules {:>4} L {:.3} bits  {}\n",
            r["range"].as_str().unwrap_or(""),
            r["nodes"],
            r["modules"],
            r["codelength_bits"].as_f64().unwrap_or(f64::NAN),
            gravity
        ));
    }
    s.push_str(&format!("artifacts  {}\n", manifest.artifacts.len()));
    for a in &manifest.artifacts {
        s.push_str(&format!("  {}  {}\n", &a.sha256[..16], a.path));
    }
    Ok(s)
}

/// Reads a config file when given, then applies `key=value` overrides.
pub fn load_config<I, S>(file: Option<&Path>, overrides: I) -> Result<PipelineConfig>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut cfg = match file {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for o in overrides {
        let o = o.as_ref();
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{o}` is not key=value")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Lines of a text artifact, for tests and tools that compare runs.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    open_artifact(path)?
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .collect()
}
