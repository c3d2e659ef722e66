//! Acceptance criteria 1-10, one PASS/FAIL/SKIP line each.
//!
//! Every oracle here is computed independently of the library: samplers,
//! brute-force sums and generators live in this file. Tolerances are pinned
//! as constants next to each check.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mobnet::geo::{masked_fishnet, Boundary, Fishnet, Projection};
use mobnet::gravity::{fit_gravity_pairs, PairInput};
use mobnet::ingest::{
    filter_records, filter_residency, filter_speed, write_records, FilterConfig, InputFormat, TrackPoint, Trajectory,
};
use mobnet::mapeq::{
    brute_force_optimum, codelength, normalized_mutual_information, optimize, walker_rates, Network, Partition,
    TeleportMode,
};
use mobnet::mobility::{fit_distribution, radius_of_gyration, FitRange, Model};
use mobnet::odgraph::build_od_from_trajectories;
use mobnet::pipeline::{run_pipeline, PipelineConfig, MANIFEST};
use mobnet::synth::{generate, planted_labels, SynthConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

const C1_GRAPHS: u64 = 100;
const C1_MAX_NODES: usize = 8;
const C1_RESTARTS: usize = 20;
const C1_TOL: f64 = 1e-9;
const C1_MIN_MATCHES: usize = 95;
const C1_BUDGET: Duration = Duration::from_secs(60);

/// Strongly connected: a shuffled Hamiltonian cycle plus random extra arcs.
fn strong_digraph(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=C1_MAX_NODES);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut arcs: Vec<(usize, usize, f64)> =
        (0..n).map(|i| (order[i], order[(i + 1) % n], rng.gen_range(0.1..10.0))).collect();
    let density = rng.gen_range(0.1..0.6);
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.gen_bool(density) {
                arcs.push((a, b, rng.gen_range(0.05..10.0)));
            }
        }
    }
    Network::new(n, arcs).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut matches = 0;
    for g in 0..C1_GRAPHS {
        let net = strong_digraph(0xC1 * 1000 + g);
        let rates = walker_rates(&net, 0.0, TeleportMode::Uniform).map_err(|e| e.to_string())?;
        let (_, opt) = optimize(&net, &rates, g, C1_RESTARTS).map_err(|e| e.to_string())?;
        let (_, best) = brute_force_optimum(&net, &rates).map_err(|e| e.to_string())?;
        if (opt.total_bits - best.total_bits).abs() <= C1_TOL {
            matches += 1;
        }
    }
    let cycle = Network::new(2, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    let rates = walker_rates(&cycle, 0.0, TeleportMode::Uniform).unwrap();
    let one = codelength(&cycle, &Partition::single_module(2), &rates).unwrap().total_bits;
    let two = codelength(&cycle, &Partition::singletons(2), &rates).unwrap().total_bits;
    let elapsed = start.elapsed();
    check(matches >= C1_MIN_MATCHES, || format!("{matches}/{C1_GRAPHS} graphs matched the exhaustive optimum"))?;
    check(one == 1.0, || format!("2-cycle one module: {one} bits, want exactly 1"))?;
    check(two == 3.0, || format!("2-cycle singletons: {two} bits, want exactly 3"))?;
    check(elapsed < C1_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{matches}/{C1_GRAPHS} matched; 2-cycle {one} / {two} bits; {elapsed:.1?}"))
}

// ---------------------------------------------------------------- 2 and 7

const C2_MIN_NMI: f64 = 0.9;
const C2_BUDGET: Duration = Duration::from_secs(120);
const CELL: f64 = 10_000.0;
const TAU: f64 = 0.15;
const SEED: u64 = 42;
const RESTARTS: usize = 8;

struct SynthRun {
    cfg: SynthConfig,
    trajectories: Vec<Trajectory>,
    grid: Fishnet,
}

fn synth_run() -> SynthRun {
    let cfg = SynthConfig {
        n_agents: 10_000,
        inter_city_prob: 0.03,
        ..SynthConfig::default()
    };
    assert_eq!(cfg.city_centers.len(), 6);
    let corpus = generate(&cfg).unwrap();
    let (trajectories, _) = filter_records(corpus.records, &FilterConfig::default(), &cfg.projection(), None).unwrap();
    let grid = Fishnet::covering(trajectories.iter().flat_map(|t| t.points.iter().map(|p| p.xy())), CELL).unwrap();
    SynthRun {
        cfg,
        trajectories,
        grid,
    }
}

struct RangeResult {
    modules: usize,
    bits: f64,
    nmi: f64,
}

fn delineate(run: &SynthRun, filter: &str) -> RangeResult {
    let (graph, _) = build_od_from_trajectories(&run.trajectories, &run.grid, filter.parse().unwrap(), true);
    let (cells, net) = graph.to_network();
    let rates = walker_rates(&net, TAU, TeleportMode::InStrength).unwrap();
    let (p, c) = optimize(&net, &rates, SEED, RESTARTS).unwrap();
    let planted = planted_labels(&run.cfg, &run.grid, &cells).unwrap();
    RangeResult {
        modules: p.module_count(),
        bits: c.total_bits,
        nmi: normalized_mutual_information(p.assignment(), planted.assignment()).unwrap(),
    }
}

fn criterion_2(run: &SynthRun, build_time: Duration) -> Outcome {
    let start = Instant::now();
    let r = delineate(run, "all");
    let elapsed = build_time + start.elapsed();
    check(r.nmi >= C2_MIN_NMI, || format!("NMI {:.4} < {C2_MIN_NMI}", r.nmi))?;
    check(elapsed < C2_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("NMI {:.4} with {} modules; {elapsed:.1?}", r.nmi, r.modules))
}

fn criterion_7(run: &SynthRun) -> Outcome {
    let short = delineate(run, "<4000");
    let mid = delineate(run, ">4000");
    let long = delineate(run, ">10000");
    let detail = format!(
        "modules <4km {} >4km {} >10km {}; L {:.3} < {:.3} < {:.3} bits",
        short.modules, mid.modules, long.modules, short.bits, mid.bits, long.bits
    );
    check(long.modules <= mid.modules && mid.modules <= short.modules, || format!("module counts not coarsening: {detail}"))?;
    check(short.bits < mid.bits && mid.bits < long.bits, || format!("codelengths not ascending: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

const C3_TRAJECTORIES: usize = 1_000;
const C3_REL_TOL: f64 = 1e-9;

/// Mean half squared pairwise distance, an identity for the squared radius
/// of gyration that never forms the centroid.
fn gyration_pairwise(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mut s = 0.0;
    for a in pts {
        for b in pts {
            s += (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
        }
    }
    (s / (2.0 * n * n)).sqrt()
}

fn traj(pts: &[(f64, f64)]) -> Trajectory {
    Trajectory::new(
        "u",
        pts.iter()
            .enumerate()
            .map(|(i, &(x, y))| TrackPoint { x, y, t: i as f64 })
            .collect(),
    )
    .unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_oracle, mut worst_motion) = (0.0f64, 0.0f64);
    for _ in 0..C3_TRAJECTORIES {
        let n = rng.gen_range(2..200);
        let scale = 10f64.powf(rng.gen_range(1.0..5.0));
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale))
            .collect();
        let rg = radius_of_gyration(&traj(&pts));
        worst_oracle = worst_oracle.max(rel_err(rg, gyration_pairwise(&pts)));
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = (rng.gen_range(-1e5..1e5), rng.gen_range(-1e5..1e5));
        let moved: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (x * theta.cos() - y * theta.sin() + dx, x * theta.sin() + y * theta.cos() + dy))
            .collect();
        worst_motion = worst_motion.max(rel_err(rg, radius_of_gyration(&traj(&moved))));
    }
    check(worst_oracle < C3_REL_TOL, || format!("oracle relative error {worst_oracle:e}"))?;
    check(worst_motion < C3_REL_TOL, || format!("rigid-motion relative error {worst_motion:e}"))?;
    Ok(format!("{C3_TRAJECTORIES} trajectories; max rel err {worst_oracle:.1e} (oracle), {worst_motion:.1e} (rigid motion)"))
}

// ---------------------------------------------------------------- 4

const C4_N: usize = 100_000;
const C4_BUDGET: Duration = Duration::from_secs(30);
const C4_EXP_LAMBDA: f64 = 0.01;
const C4_EXP_BAND: (f64, f64) = (0.0098, 0.0102);
const C4_PL_ALPHA: f64 = 3.2;
const C4_PL_XMIN: f64 = 70_000.0;
const C4_PL_BAND: (f64, f64) = (3.1, 3.3);
const C4_TPL: (f64, f64) = (1.24, 0.00132);
const C4_TPL_XMIN: f64 = 10.0;
const C4_TPL_ALPHA_BAND: (f64, f64) = (1.19, 1.29);
const C4_TPL_LAMBDA_BAND: (f64, f64) = (0.0012, 0.0015);

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Density proportional to x^-α e^-λx on [x_min, ∞): exponential proposals
/// accepted with probability (x / x_min)^-α.
fn truncated_power_law<R: Rng>(rng: &mut R, alpha: f64, lambda: f64, x_min: f64) -> f64 {
    loop {
        let x = x_min - open_unit(rng).ln() / lambda;
        if rng.gen::<f64>() < (x / x_min).powf(-alpha) {
            return x;
        }
    }
}

fn within(x: f64, band: (f64, f64)) -> bool {
    x >= band.0 && x <= band.1
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let exp: Vec<f64> = (0..C4_N).map(|_| -open_unit(&mut rng).ln() / C4_EXP_LAMBDA).collect();
    let pl: Vec<f64> = (0..C4_N)
        .map(|_| C4_PL_XMIN * open_unit(&mut rng).powf(-1.0 / (C4_PL_ALPHA - 1.0)))
        .collect();
    let tpl: Vec<f64> = (0..C4_N)
        .map(|_| truncated_power_law(&mut rng, C4_TPL.0, C4_TPL.1, C4_TPL_XMIN))
        .collect();
    let fit = |xs: &[f64], m, lo| fit_distribution(xs, m, FitRange::unbounded(lo)).map_err(|e| e.to_string());
    let e = fit(&exp, Model::Exponential, 0.0)?.params.lambda.unwrap();
    let a = fit(&pl, Model::PowerLaw, C4_PL_XMIN)?.params.alpha.unwrap();
    let t = fit(&tpl, Model::TruncatedPowerLaw, C4_TPL_XMIN)?.params;
    let (ta, tl) = (t.alpha.unwrap(), t.lambda.unwrap());
    let elapsed = start.elapsed();
    let detail = format!("λ̂ {e:.5}; α̂ {a:.3}; truncated α̂ {ta:.3} λ̂ {tl:.5}; {elapsed:.1?}");
    check(within(e, C4_EXP_BAND), || format!("exponential out of band: {detail}"))?;
    check(within(a, C4_PL_BAND), || format!("power law out of band: {detail}"))?;
    check(within(ta, C4_TPL_ALPHA_BAND) && within(tl, C4_TPL_LAMBDA_BAND), || {
        format!("truncated power law out of band: {detail}")
    })?;
    check(elapsed < C4_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let cfg = SynthConfig {
        n_agents: 3_000,
        speed_violator_rate: 0.04,
        short_stay_rate: 0.05,
        duplicate_rate: 0.01,
        geocoded_rate: 0.02,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg).unwrap();
    let t = corpus.truth.clone();
    let (trajs, r) =
        filter_records(corpus.records, &FilterConfig::default(), &cfg.projection(), None).map_err(|e| e.to_string())?;
    let pairs = [
        ("dropped_speed", r.dropped_speed, t.speed_violator_records),
        ("dropped_speed_users", r.dropped_speed_users, t.speed_violators.len() as u64),
        ("dropped_residency", r.dropped_residency, t.short_stay_records),
        ("dropped_residency_users", r.dropped_residency_users, t.short_stay.len() as u64),
        ("dropped_duplicate", r.dropped_duplicate, t.duplicate_records),
        ("dropped_geocoded", r.dropped_geocoded, t.geocoded_records),
        ("dropped_outside", r.dropped_outside, 0),
        ("retained_records", r.retained_records, t.clean_records),
        ("retained_users", r.retained_users, t.clean_agents),
        ("trajectories", trajs.len() as u64, t.clean_agents),
    ];
    for (name, got, planted) in pairs {
        check(got == planted, || format!("{name}: report {got}, planted {planted}"))?;
    }

    let pair = |d: f64, dt: f64| traj_with_times(&[(0.0, 0.0, 0.0), (d, 0.0, dt)]);
    check(filter_speed(&pair(240_000.0, 1_000.0), 240.0).is_none(), || "240 m/s dropped".into())?;
    check(filter_speed(&pair(300_000.0, 1_000.0), 240.0) == Some(0), || "300 m/s kept".into())?;
    let day = 86_400.0;
    check(!filter_residency(&pair(0.0, 30.0 * day), 30.0), || "30.0-day span kept".into())?;
    check(filter_residency(&pair(0.0, 31.0 * day), 30.0), || "31-day span dropped".into())?;
    Ok(format!(
        "speed {} rec / {} users, residency {} / {}, duplicate {}, geocoded {} all exact; boundary cases hold",
        r.dropped_speed, r.dropped_speed_users, r.dropped_residency, r.dropped_residency_users, r.dropped_duplicate,
        r.dropped_geocoded
    ))
}

fn traj_with_times(pts: &[(f64, f64, f64)]) -> Trajectory {
    Trajectory::new("u", pts.iter().map(|&(x, y, t)| TrackPoint { x, y, t }).collect()).unwrap()
}

// ---------------------------------------------------------------- 6

const C6_K: f64 = 2.5;
const C6_BETA: f64 = 0.8;
const C6_NOISE_SIGMA: f64 = 0.1;
const C6_REGIONS: usize = 20;
const C6_K_REL: f64 = 0.10;
const C6_MIN_R2: f64 = 0.95;
const C6_NOISE_FREE_R2: f64 = 1.0 - 1e-9;

fn gravity_pairs(noise: f64, seed: u64) -> Vec<PairInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions: Vec<((f64, f64), f64)> = (0..C6_REGIONS)
        .map(|_| {
            let pos = (rng.gen_range(0.0..500_000.0), rng.gen_range(0.0..800_000.0));
            (pos, 10f64.powf(rng.gen_range(2.0..5.0)))
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..C6_REGIONS {
        for j in i + 1..C6_REGIONS {
            let ((a, pa), (b, pb)) = (regions[i], regions[j]);
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            // Box-Muller standard normal.
            let z = (-2.0 * open_unit(&mut rng).ln()).sqrt() * (std::f64::consts::TAU * rng.gen::<f64>()).cos();
            let t = C6_K * pa * pb / d.powf(C6_BETA) * (noise * z).exp();
            out.push(PairInput {
                i,
                j,
                d,
                p_i: pa,
                p_j: pb,
                t_obs: t,
            });
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let noisy = fit_gravity_pairs(&gravity_pairs(C6_NOISE_SIGMA, 6), C6_BETA).map_err(|e| e.to_string())?.fit;
    let clean = fit_gravity_pairs(&gravity_pairs(0.0, 6), C6_BETA).map_err(|e| e.to_string())?.fit;
    let detail = format!(
        "{C6_REGIONS} regions; noisy k̂ {:.4} r² {:.4}; noise-free k̂ {:.6} r² 1-{:.1e}",
        noisy.k,
        noisy.r_squared,
        clean.k,
        1.0 - clean.r_squared
    );
    check((noisy.k - C6_K).abs() <= C6_K_REL * C6_K, || format!("k̂ off: {detail}"))?;
    check(noisy.r_squared >= C6_MIN_R2, || format!("noisy r² low: {detail}"))?;
    check(clean.r_squared >= C6_NOISE_FREE_R2, || format!("noise-free r² low: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

const C8_SCALE: f64 = 7.0;
const C8_TOL: f64 = 1e-9;

fn write_corpus(cfg: &SynthConfig, path: &Path) {
    let corpus = generate(cfg).unwrap();
    let f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    write_records(f, &corpus.records, InputFormat::Csv).unwrap();
}

fn pipeline_config(input: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        inputs: vec![input.to_path_buf()],
        out: out.to_path_buf(),
        seed: SEED,
        restarts: RESTARTS,
        ..PipelineConfig::default()
    }
}

fn criterion_8(run: &SynthRun) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("records.csv");
    write_corpus(
        &SynthConfig {
            n_agents: 1_500,
            seed: 8,
            ..SynthConfig::default()
        },
        &input,
    );
    let mut manifests = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        run_pipeline(&pipeline_config(&input, &out)).map_err(|e| e.to_string())?;
        manifests.push(std::fs::read(out.join(MANIFEST)).map_err(|e| e.to_string())?);
    }
    check(manifests[0] == manifests[1], || "manifests differ between identical runs".into())?;

    let mut worst = 0.0f64;
    for filter in ["all", ">4000"] {
        let (graph, _) = build_od_from_trajectories(&run.trajectories, &run.grid, filter.parse().unwrap(), true);
        let (_, net) = graph.to_network();
        let (_, scaled) = graph.scaled(C8_SCALE).to_network();
        let r1 = walker_rates(&net, TAU, TeleportMode::InStrength).unwrap();
        let r2 = walker_rates(&scaled, TAU, TeleportMode::InStrength).unwrap();
        let (p1, c1) = optimize(&net, &r1, SEED, RESTARTS).unwrap();
        let (p2, c2) = optimize(&scaled, &r2, SEED, RESTARTS).unwrap();
        check(p1 == p2, || format!("partition changed under x{C8_SCALE} weights ({filter})"))?;
        worst = worst.max((c1.total_bits - c2.total_bits).abs());
        for (a, b) in c1.modules.iter().zip(&c2.modules) {
            worst = worst.max((a.bits - b.bits).abs()).max((a.exit - b.exit).abs());
        }
    }
    check(worst <= C8_TOL, || format!("codelength moved by {worst:e}"))?;
    Ok(format!("manifests byte-identical ({} bytes); x{C8_SCALE} weights: same partitions, max Δ {worst:.1e}", manifests[0].len()))
}

// ---------------------------------------------------------------- 9

const C9_RECORDS: usize = 1_000_000;
const C9_BUDGET: Duration = Duration::from_secs(60);

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("records.csv");
    let cfg = SynthConfig {
        n_agents: 10_000,
        points_per_agent: 100,
        seed: 9,
        ..SynthConfig::default()
    };
    write_corpus(&cfg, &input);
    let out = dir.path().join("run");
    let start = Instant::now();
    let manifest = run_pipeline(&pipeline_config(&input, &out)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let lines = std::fs::read_to_string(&input).map_err(|e| e.to_string())?.lines().count() - 1;
    check(lines == C9_RECORDS, || format!("corpus has {lines} records"))?;
    check(out.join(MANIFEST).exists(), || "no manifest".into())?;
    check(elapsed < C9_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{lines} records, {} ranges, {} artifacts in {elapsed:.1?} on {} threads",
        manifest.config.iter().find(|(k, _)| k == "range_filters").map_or(0, |(_, v)| v.split(',').count()),
        manifest.artifacts.len(),
        rayon::current_num_threads()
    ))
}

// ---------------------------------------------------------------- 10

const C10_CELLS: f64 = 2784.0;
const C10_REL: f64 = 0.02;

/// `MOBNET_GB_BOUNDARY` names a GeoJSON polygon; coordinates are lon/lat
/// unless `MOBNET_GB_PROJECTED=1` marks them as planar meters.
fn criterion_10() -> Option<Outcome> {
    let path = std::env::var_os("MOBNET_GB_BOUNDARY")?;
    Some((|| {
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        let proj = if std::env::var("MOBNET_GB_PROJECTED").as_deref() == Ok("1") {
            Projection::passthrough()
        } else {
            Projection::local_equirectangular(54.0, -2.0).map_err(|e| e.to_string())?
        };
        let boundary = Boundary::from_geojson(&value, &proj).map_err(|e| e.to_string())?;
        let n = masked_fishnet(&boundary, CELL).map_err(|e| e.to_string())?.active_count();
        check(((n as f64) - C10_CELLS).abs() <= C10_REL * C10_CELLS, || format!("{n} active cells"))?;
        Ok(format!("{n} active cells"))
    })())
}

// ---------------------------------------------------------------- main

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() -> ExitCode {
    let names = [
        "map-equation optimizer matches exhaustive search",
        "planted-community recovery",
        "radius-of-gyration oracle",
        "distribution-fit recovery",
        "filter-rule conformance",
        "gravity closed loop",
        "coarsening with displacement range",
        "determinism and scale invariance",
        "throughput on 10^6 records",
        "fishnet cell count on the GB boundary",
    ];
    let mut results: BTreeMap<usize, Option<Outcome>> = BTreeMap::new();
    results.insert(1, Some(guarded(criterion_1)));
    let build = Instant::now();
    let run = catch_unwind(synth_run);
    let build_time = build.elapsed();
    match &run {
        Ok(run) => {
            results.insert(2, Some(guarded(|| criterion_2(run, build_time))));
            results.insert(7, Some(guarded(|| criterion_7(run))));
            results.insert(8, Some(guarded(|| criterion_8(run))));
        }
        Err(_) => {
            for c in [2, 7, 8] {
                results.insert(c, Some(Err("synthetic corpus could not be built".into())));
            }
        }
    }
    results.insert(3, Some(guarded(criterion_3)));
    results.insert(4, Some(guarded(criterion_4)));
    results.insert(5, Some(guarded(criterion_5)));
    results.insert(6, Some(guarded(criterion_6)));
    results.insert(9, Some(guarded(criterion_9)));
    results.insert(10, criterion_10().map(|o| guarded(|| o)));

    let mut failed = 0;
    for (c, outcome) in &results {
        let name = names[c - 1];
        match outcome {
            Some(Ok(detail)) => println!("PASS criterion {c:>2}: {name}: {detail}"),
            Some(Err(why)) => {
                failed += 1;
                println!("FAIL criterion {c:>2}: {name}: {why}");
            }
            None => println!("SKIP criterion {c:>2}: {name}: MOBNET_GB_BOUNDARY not set"),
        }
    }
    println!("{} passed, {failed} failed, {} skipped", results.values().filter(|o| matches!(o, Some(Ok(_)))).count(), results.values().filter(|o| o.is_none()).count());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
