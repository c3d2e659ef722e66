//! Synthetic corpora: truncated-Lévy-walk agents anchored to planted cities.
//!
//! Agents live in the local projected frame around `origin` and are emitted
//! as WGS84 records through the inverse local equirectangular projection.
//! Every agent draws from its own RNG stream, so generation parallelizes
//! without changing the output.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{planar_distance, CellId, Fishnet, Projection};
use crate::ingest::{RawRecord, SourceTag, SECONDS_PER_DAY};
use crate::mapeq::Partition;
use crate::numeric::child_seed;

/// 2014-06-01T00:00:00Z.
pub const DEFAULT_START: f64 = 1_401_580_800.0;
const MIN_GAP: f64 = 7_200.0;
const CLEAN_MIN_SPAN_DAYS: f64 = 31.0;
const DIRECTION_TRIES: usize = 8;
const SPEED_LIMIT: f64 = 240.0;

/// Step lengths: with probability `short_share` a bounded power law on
/// `[d_min, d_cut)` with exponent `alpha_short`, otherwise one on
/// `[d_cut, d_max)` with exponent `alpha_long`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpLaw {
    pub d_min: f64,
    pub d_cut: f64,
    pub d_max: f64,
    pub alpha_short: f64,
    pub alpha_long: f64,
    pub short_share: f64,
}

impl Default for JumpLaw {
    fn default() -> Self {
        JumpLaw {
            d_min: 100.0,
            d_cut: 4_000.0,
            d_max: 40_000.0,
            alpha_short: 1.3,
            alpha_long: 1.2,
            short_share: 0.15,
        }
    }
}

impl JumpLaw {
    /// Single bounded power law on `[d_min, d_max)`.
    pub fn pure(alpha: f64, d_min: f64, d_max: f64) -> Self {
        JumpLaw {
            d_min,
            d_cut: d_max,
            d_max,
            alpha_short: alpha,
            alpha_long: alpha,
            short_share: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min < self.d_cut && self.d_cut <= self.d_max && self.d_max.is_finite()) {
            return Err(Error::invalid(format!(
                "jump law needs 0 < d_min < d_cut <= d_max, got {} / {} / {}",
                self.d_min, self.d_cut, self.d_max
            )));
        }
        if !(self.alpha_short > 1.0 && self.alpha_long > 1.0) {
            return Err(Error::invalid("jump exponents must exceed 1"));
        }
        if !(0.0..=1.0).contains(&self.short_share) {
            return Err(Error::invalid("short_share must lie in [0, 1]"));
        }
        if self.short_share < 1.0 && self.d_cut == self.d_max {
            return Err(Error::invalid("long jump piece is empty (d_cut = d_max)"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.short_share >= 1.0 || rng.gen::<f64>() < self.short_share {
            bounded_power_law(rng, self.alpha_short, self.d_min, self.d_cut)
        } else {
            bounded_power_law(rng, self.alpha_long, self.d_cut, self.d_max)
        }
    }
}

/// Inverse-CDF draw from density ∝ x^-α on `[a, b)`.
fn bounded_power_law<R: Rng>(rng: &mut R, alpha: f64, a: f64, b: f64) -> f64 {
    let u: f64 = rng.gen();
    let e = 1.0 - alpha;
    let (lo, hi) = (a.powf(e), b.powf(e));
    (lo + u * (hi - lo)).powf(1.0 / e).clamp(a, b.next_down())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Planted city centers in the local frame, meters.
    pub city_centers: Vec<(f64, f64)>,
    pub city_sigma: f64,
    pub n_agents: usize,
    /// Records per agent before corruption.
    pub points_per_agent: usize,
    pub jump: JumpLaw,
    pub inter_city_prob: f64,
    /// Typical first-to-last span of a clean agent.
    pub residency_days: f64,
    pub short_stay_days: f64,
    pub speed_violator_rate: f64,
    pub short_stay_rate: f64,
    /// Per-record probability of an exact duplicate.
    pub duplicate_rate: f64,
    /// Per-record probability of an extra geocoded-source record.
    pub geocoded_rate: f64,
    /// Projection origin `(lat0, lon0)`.
    pub origin: (f64, f64),
    pub start_time: f64,
    /// Cell size of the OD tally kept in the ground truth.
    pub tally_cell_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            city_centers: grid_cities(3, 2, 150_000.0),
            city_sigma: 8_000.0,
            n_agents: 10_000,
            points_per_agent: 100,
            jump: JumpLaw::default(),
            inter_city_prob: 0.03,
            residency_days: 60.0,
            short_stay_days: 10.0,
            speed_violator_rate: 0.0,
            short_stay_rate: 0.0,
            duplicate_rate: 0.0,
            geocoded_rate: 0.0,
            origin: (54.0, -2.0),
            start_time: DEFAULT_START,
            tally_cell_size: 10_000.0,
        }
    }
}

/// `cols × rows` city centers spaced `spacing` apart, starting at the origin.
pub fn grid_cities(cols: usize, rows: usize, spacing: f64) -> Vec<(f64, f64)> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c as f64 * spacing, r as f64 * spacing)))
        .collect()
}

fn prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.jump.validate()?;
        if self.city_centers.is_empty() {
            return Err(Error::invalid("at least one city center is required"));
        }
        if !(self.city_sigma > 0.0) {
            return Err(Error::invalid("city_sigma must be positive"));
        }
        if self.points_per_agent < 2 {
            return Err(Error::invalid("points_per_agent must be at least 2"));
        }
        prob("inter_city_prob", self.inter_city_prob)?;
        prob("speed_violator_rate", self.speed_violator_rate)?;
        prob("short_stay_rate", self.short_stay_rate)?;
        prob("duplicate_rate", self.duplicate_rate)?;
        prob("geocoded_rate", self.geocoded_rate)?;
        if self.speed_violator_rate + self.short_stay_rate > 1.0 {
            return Err(Error::invalid("corrupted cohorts exceed the agent population"));
        }
        if !(self.short_stay_days > 0.0 && self.short_stay_days < 30.0) {
            return Err(Error::invalid("short_stay_days must lie in (0, 30)"));
        }
        if !(self.residency_days > 0.0) {
            return Err(Error::invalid("residency_days must be positive"));
        }
        if !(self.tally_cell_size > 0.0) {
            return Err(Error::invalid("tally_cell_size must be positive"));
        }
        Projection::local_equirectangular(self.origin.0, self.origin.1)?;
        // Clean moves must stay under the speed rule so only planted agents trip it.
        let mut spread: f64 = 0.0;
        for a in &self.city_centers {
            for b in &self.city_centers {
                spread = spread.max(planar_distance(*a, *b));
            }
        }
        if spread + 12.0 * self.city_sigma + self.jump.d_max > SPEED_LIMIT * MIN_GAP {
            return Err(Error::invalid("cities are too far apart for the minimum record gap"));
        }
        let short_gap = self.short_stay_days * SECONDS_PER_DAY / (self.points_per_agent - 1) as f64 * 0.5;
        if self.jump.d_max / short_gap > 0.8 * SPEED_LIMIT {
            return Err(Error::invalid("too many points for the short-stay span at this jump range"));
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::invalid(format!("bad value `{value}` for synth key `{key}`"));
        let f = || value.trim().parse::<f64>().map_err(|_| bad());
        let u = || value.trim().parse::<usize>().map_err(|_| bad());
        match key.trim() {
            "seed" => self.seed = value.trim().parse().map_err(|_| bad())?,
            "n_agents" => self.n_agents = u()?,
            "points_per_agent" => self.points_per_agent = u()?,
            "city_sigma" => self.city_sigma = f()?,
            "inter_city_prob" => self.inter_city_prob = f()?,
            "residency_days" => self.residency_days = f()?,
            "short_stay_days" => self.short_stay_days = f()?,
            "speed_violator_rate" => self.speed_violator_rate = f()?,
            "short_stay_rate" => self.short_stay_rate = f()?,
            "duplicate_rate" => self.duplicate_rate = f()?,
            "geocoded_rate" => self.geocoded_rate = f()?,
            "start_time" => self.start_time = f()?,
            "tally_cell_size" => self.tally_cell_size = f()?,
            "d_min" => self.jump.d_min = f()?,
            "d_cut" => self.jump.d_cut = f()?,
            "d_max" => self.jump.d_max = f()?,
            "alpha_short" => self.jump.alpha_short = f()?,
            "alpha_long" => self.jump.alpha_long = f()?,
            "short_share" => self.jump.short_share = f()?,
            "origin" => {
                let (a, b) = value.split_once(',').ok_or_else(bad)?;
                self.origin = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            }
            "city_grid" => {
                // cols x rows @ spacing, e.g. 3x2@150000
                let (dims, spacing) = value.split_once('@').ok_or_else(bad)?;
                let (c, r) = dims.split_once('x').ok_or_else(bad)?;
                self.city_centers = grid_cities(
                    c.trim().parse().map_err(|_| bad())?,
                    r.trim().parse().map_err(|_| bad())?,
                    spacing.trim().parse().map_err(|_| bad())?,
                );
            }
            "city_centers" => {
                self.city_centers = value
                    .split(';')
                    .map(|p| {
                        let (x, y) = p.split_once(',').ok_or_else(bad)?;
                        Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
                    })
                    .collect::<Result<_>>()?;
            }
            other => return Err(Error::invalid(format!("unknown synth key `{other}`"))),
        }
        Ok(())
    }

    pub fn projection(&self) -> Projection {
        Projection::local_equirectangular(self.origin.0, self.origin.1).expect("origin validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Clean,
    SpeedViolator,
    ShortStay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyEntry {
    /// Absolute cell indices `(floor(x / s), floor(y / s))`.
    pub from: (i64, i64),
    pub to: (i64, i64),
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// Starting city of every agent, by user id.
    pub home_city: BTreeMap<String, usize>,
    pub speed_violators: Vec<String>,
    pub short_stay: Vec<String>,
    pub speed_violator_records: u64,
    pub short_stay_records: u64,
    pub duplicate_records: u64,
    pub geocoded_records: u64,
    /// Records of clean agents that survive every filter.
    pub clean_records: u64,
    pub clean_agents: u64,
    /// Walk steps over all agents, and how many of them were city relocations.
    pub steps: u64,
    pub relocations: u64,
    /// Directed consecutive-pair counts of clean agents on `tally_cell_size` cells.
    pub od_tally: Vec<TallyEntry>,
}

impl GroundTruth {
    pub fn tally_map(&self) -> BTreeMap<((i64, i64), (i64, i64)), u64> {
        self.od_tally.iter().map(|e| ((e.from, e.to), e.count)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<RawRecord>,
    pub truth: GroundTruth,
}

struct AgentOutput {
    records: Vec<RawRecord>,
    primary: usize,
    duplicates: u64,
    geocoded: u64,
    steps: u64,
    relocations: u64,
    tally: BTreeMap<((i64, i64), (i64, i64)), u64>,
}

fn gaussian_around<R: Rng>(rng: &mut R, c: (f64, f64), sigma: f64) -> (f64, f64) {
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    (c.0 + n.sample(rng), c.1 + n.sample(rng))
}

fn walk<R: Rng>(cfg: &SynthConfig, rng: &mut R, home: usize, allow_relocation: bool) -> (Vec<(f64, f64)>, u64) {
    let mut anchor = home;
    let mut pos = gaussian_around(rng, cfg.city_centers[anchor], cfg.city_sigma);
    let mut out = Vec::with_capacity(cfg.points_per_agent);
    out.push(pos);
    let two_var = 2.0 * cfg.city_sigma * cfg.city_sigma;
    let n_cities = cfg.city_centers.len();
    let mut relocations = 0;
    for _ in 1..cfg.points_per_agent {
        if allow_relocation && n_cities > 1 && rng.gen::<f64>() < cfg.inter_city_prob {
            let mut next = rng.gen_range(0..n_cities - 1);
            if next >= anchor {
                next += 1;
            }
            anchor = next;
            pos = gaussian_around(rng, cfg.city_centers[anchor], cfg.city_sigma);
            relocations += 1;
        } else {
            let c = cfg.city_centers[anchor];
            let d = cfg.jump.sample(rng);
            let here = (pos.0 - c.0).powi(2) + (pos.1 - c.1).powi(2);
            let mut moved = None;
            for _ in 0..DIRECTION_TRIES {
                let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                let cand = (pos.0 + d * theta.cos(), pos.1 + d * theta.sin());
                let there = (cand.0 - c.0).powi(2) + (cand.1 - c.1).powi(2);
                if rng.gen::<f64>() < ((here - there) / two_var).exp() {
                    moved = Some(cand);
                    break;
                }
            }
            pos = moved.unwrap_or_else(|| {
                let (dx, dy) = (c.0 - pos.0, c.1 - pos.1);
                let r = (dx * dx + dy * dy).sqrt();
                if r > 0.0 {
                    (pos.0 + d * dx / r, pos.1 + d * dy / r)
                } else {
                    (pos.0 + d, pos.1)
                }
            });
        }
        out.push(pos);
    }
    (out, relocations)
}

fn timestamps<R: Rng>(cfg: &SynthConfig, rng: &mut R, role: AgentRole) -> Vec<f64> {
    let n = cfg.points_per_agent;
    let gaps: Vec<f64> = match role {
        AgentRole::ShortStay => {
            let raw: Vec<f64> = (1..n).map(|_| 0.5 + rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|g| g / total * cfg.short_stay_days * SECONDS_PER_DAY).collect()
        }
        _ => {
            let mean = (cfg.residency_days * SECONDS_PER_DAY / (n - 1) as f64 - MIN_GAP).max(60.0);
            let exp = Exp::new(1.0 / mean).expect("positive mean");
            let mut g: Vec<f64> = (1..n).map(|_| MIN_GAP + exp.sample(rng)).collect();
            let span: f64 = g.iter().sum();
            let floor = (CLEAN_MIN_SPAN_DAYS + 0.5) * SECONDS_PER_DAY;
            if span < floor {
                g.iter_mut().for_each(|x| *x *= floor / span);
            }
            g
        }
    };
    let start = cfg.start_time + rng.gen_range(0..86_400) as f64;
    let mut t = vec![start];
    let mut acc = 0.0;
    for g in gaps {
        acc += g;
        t.push((start + acc).round());
    }
    t
}

fn cell_key(p: (f64, f64), s: f64) -> (i64, i64) {
    ((p.0 / s).floor() as i64, (p.1 / s).floor() as i64)
}

fn agent(cfg: &SynthConfig, index: usize, role: AgentRole, proj: &Projection) -> AgentOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, index as u64));
    let user = user_id(index);
    let home = index % cfg.city_centers.len();
    let (path, relocations) = walk(cfg, &mut rng, home, role != AgentRole::ShortStay);
    let times = timestamps(cfg, &mut rng, role);
    let primary: Vec<RawRecord> = path
        .iter()
        .zip(&times)
        .map(|(&(x, y), &t)| {
            let (lat, lon) = proj.unproject(x, y);
            RawRecord {
                user_id: user.clone(),
                lat,
                lon,
                t,
                source: SourceTag::Gps,
            }
        })
        .collect();

    let mut out = AgentOutput {
        records: Vec::with_capacity(primary.len() + 4),
        primary: primary.len(),
        duplicates: 0,
        geocoded: 0,
        steps: (primary.len() - 1) as u64,
        relocations,
        tally: BTreeMap::new(),
    };
    match role {
        AgentRole::Clean => {
            let cells: Vec<(i64, i64)> = primary
                .iter()
                .map(|r| cell_key(proj.project(r.lat, r.lon), cfg.tally_cell_size))
                .collect();
            for w in cells.windows(2) {
                *out.tally.entry((w[0], w[1])).or_insert(0) += 1;
            }
            for r in primary {
                let dup = rng.gen::<f64>() < cfg.duplicate_rate;
                let geo = rng.gen::<f64>() < cfg.geocoded_rate;
                out.records.push(r.clone());
                if dup {
                    out.records.push(r.clone());
                    out.duplicates += 1;
                }
                if geo {
                    out.records.push(RawRecord {
                        t: r.t + 60.0,
                        source: SourceTag::Geocoded,
                        ..r
                    });
                    out.geocoded += 1;
                }
            }
        }
        AgentRole::SpeedViolator => {
            // A 5 km hop one second after a regular record.
            let k = rng.gen_range(0..primary.len() - 1);
            let (x, y) = proj.project(primary[k].lat, primary[k].lon);
            let (lat, lon) = proj.unproject(x, y + 5_000.0);
            let extra = RawRecord {
                lat,
                lon,
                t: primary[k].t + 1.0,
                ..primary[k].clone()
            };
            out.records = primary;
            out.records.insert(k + 1, extra);
        }
        AgentRole::ShortStay => out.records = primary,
    }
    out
}

pub fn user_id(index: usize) -> String {
    format!("a{index:06}")
}

/// Generates the record stream and its ground truth. Deterministic in the
/// configuration, independent of thread count.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let proj = cfg.projection();
    let n = cfg.n_agents;
    let mut roles = vec![AgentRole::Clean; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut role_rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, u64::MAX));
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut role_rng);
    let n_speed = (cfg.speed_violator_rate * n as f64).round() as usize;
    let n_short = ((cfg.short_stay_rate * n as f64).round() as usize).min(n - n_speed);
    for &i in &order[..n_speed] {
        roles[i] = AgentRole::SpeedViolator;
    }
    for &i in &order[n_speed..n_speed + n_short] {
        roles[i] = AgentRole::ShortStay;
    }

    let agents: Vec<AgentOutput> = (0..n).into_par_iter().map(|i| agent(cfg, i, roles[i], &proj)).collect();

    let mut truth = GroundTruth {
        config: cfg.clone(),
        home_city: BTreeMap::new(),
        speed_violators: Vec::new(),
        short_stay: Vec::new(),
        speed_violator_records: 0,
        short_stay_records: 0,
        duplicate_records: 0,
        geocoded_records: 0,
        clean_records: 0,
        clean_agents: 0,
        steps: 0,
        relocations: 0,
        od_tally: Vec::new(),
    };
    let mut tally = BTreeMap::new();
    let mut records = Vec::with_capacity(agents.iter().map(|a| a.records.len()).sum());
    for (i, a) in agents.into_iter().enumerate() {
        let user = user_id(i);
        truth.home_city.insert(user.clone(), i % cfg.city_centers.len());
        truth.steps += a.steps;
        truth.relocations += a.relocations;
        match roles[i] {
            AgentRole::Clean => {
                truth.clean_agents += 1;
                truth.clean_records += a.primary as u64;
                truth.duplicate_records += a.duplicates;
                truth.geocoded_records += a.geocoded;
                for (k, v) in a.tally {
                    *tally.entry(k).or_insert(0) += v;
                }
            }
            AgentRole::SpeedViolator => {
                truth.speed_violators.push(user);
                truth.speed_violator_records += a.records.len() as u64;
            }
            AgentRole::ShortStay => {
                truth.short_stay.push(user);
                truth.short_stay_records += a.records.len() as u64;
            }
        }
        records.extend(a.records);
    }
    truth.od_tally = tally
        .into_iter()
        .map(|((from, to), count)| TallyEntry { from, to, count })
        .collect();
    Ok(SynthCorpus { records, truth })
}

/// Index of the nearest city center; ties go to the lower index.
pub fn nearest_city(centers: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, &c) in centers.iter().enumerate() {
        let d = planar_distance(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Nearest-city labels for `cells`, as a partition in `cells` order.
pub fn planted_labels(cfg: &SynthConfig, grid: &Fishnet, cells: &[CellId]) -> Result<Partition> {
    let labels = cells
        .iter()
        .map(|&c| Ok(nearest_city(&cfg.city_centers, grid.cell_centroid(c)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition::from_labels(&labels))
}

/// Nearest-city partition over the active cells of `grid`.
pub fn planted_partition(cfg: &SynthConfig, grid: &Fishnet) -> Result<Partition> {
    planted_labels(cfg, grid, &grid.active_cells())
}
