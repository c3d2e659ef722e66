//! Displacement and radius-of-gyration statistics, and maximum-likelihood
//! fits of the piecewise distance laws.
//!
//! Every family is fitted in density form, conditioned on the sample lying in
//! `[lo, hi)` (`hi` may be infinite) with `x_min = lo`:
//!
//! | model | density on `[lo, hi)` up to normalization |
//! |---|---|
//! | exponential | `λ e^{-λ (x - lo)}` |
//! | stretched exponential | `β λ x^{β-1} e^{-λ (x^β - lo^β)}` |
//! | power law | `x^{-α}` |
//! | truncated power law | `x^{-α} e^{-λ x}` |
//!
//! Unbounded exponential and power-law fits use their closed forms; the rest
//! maximize the log-likelihood numerically.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::planar_distance;
use crate::ingest::Trajectory;
use crate::numeric::{golden_max, integrate, nelder_mead_max};

/// Minimum number of in-range samples for a fit.
pub const MIN_FIT_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub user_id: String,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub d: f64,
    pub t_from: f64,
    pub t_to: f64,
}

/// One displacement per consecutive pair whose length is at least `min_d`.
pub fn displacements(traj: &Trajectory, min_d: f64) -> Vec<Displacement> {
    traj.points
        .windows(2)
        .filter_map(|w| {
            let d = planar_distance(w[0].xy(), w[1].xy());
            (d >= min_d).then(|| Displacement {
                user_id: traj.user_id.clone(),
                from: w[0].xy(),
                to: w[1].xy(),
                d,
                t_from: w[0].t,
                t_to: w[1].t,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GyrationSample {
    pub user_id: String,
    pub r_g: f64,
    pub n_points: usize,
}

/// Root-mean-square distance of the points from their centroid.
pub fn radius_of_gyration_points(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (cx, cy) = (sx / n, sy / n);
    let ss: f64 = points.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum();
    (ss / n).sqrt()
}

pub fn radius_of_gyration(traj: &Trajectory) -> f64 {
    let pts: Vec<(f64, f64)> = traj.points.iter().map(|p| p.xy()).collect();
    radius_of_gyration_points(&pts)
}

pub fn gyration_sample(traj: &Trajectory) -> GyrationSample {
    GyrationSample {
        user_id: traj.user_id.clone(),
        r_g: radius_of_gyration(traj),
        n_points: traj.len(),
    }
}

/// Number of distinct locations in a trajectory.
pub fn distinct_locations(traj: &Trajectory) -> usize {
    let mut xy: Vec<(u64, u64)> = traj.points.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
    xy.sort_unstable();
    xy.dedup();
    xy.len()
}

/// `(x, P(X >= x))` at every distinct sample value, ascending in `x`.
pub fn empirical_ccdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("empirical CCDF of an empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        out.push((x, (xs.len() - i) as f64 / n));
        while i < xs.len() && xs[i] == x {
            i += 1;
        }
    }
    Ok(out)
}

/// Two-column CSV (`x,p_ge`) of a CCDF table.
pub fn write_ccdf_csv<W: Write>(mut out: W, ccdf: &[(f64, f64)]) -> Result<()> {
    writeln!(out, "x,p_ge")?;
    for (x, p) in ccdf {
        writeln!(out, "{x},{p}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Exponential,
    StretchedExponential,
    PowerLaw,
    TruncatedPowerLaw,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "exp" => Ok(Model::Exponential),
            "stretched_exponential" | "stretched" => Ok(Model::StretchedExponential),
            "power_law" | "power" => Ok(Model::PowerLaw),
            "truncated_power_law" | "truncated" => Ok(Model::TruncatedPowerLaw),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Half-open fit range `[lo, hi)`; `hi` may be `+inf` (serialized as null).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRange {
    pub lo: f64,
    #[serde(with = "infinite_as_null")]
    pub hi: f64,
}

impl FitRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0) || !(lo < hi) {
            return Err(Error::invalid(format!("fit range [{lo}, {hi}) is invalid")));
        }
        Ok(FitRange { lo, hi })
    }

    pub fn unbounded(lo: f64) -> Self {
        FitRange { lo, hi: f64::INFINITY }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.hi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct FitParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Stretching exponent of the stretched exponential.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub x_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub params: FitParams,
    pub range: FitRange,
    pub n_samples: usize,
    pub log_likelihood: f64,
    pub fraction_of_population: f64,
}

/// Sufficient statistics of the in-range samples.
struct InRange {
    xs: Vec<f64>,
    ln_xs: Vec<f64>,
    sum_x: f64,
    sum_ln: f64,
}

impl InRange {
    fn new(samples: &[f64], range: FitRange) -> Self {
        let xs: Vec<f64> = samples.iter().copied().filter(|&x| range.contains(x)).collect();
        let ln_xs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        InRange {
            sum_x: xs.iter().sum(),
            sum_ln: ln_xs.iter().sum(),
            xs,
            ln_xs,
        }
    }

    fn n(&self) -> f64 {
        self.xs.len() as f64
    }
}

/// `ln(1 - e^{-z})` for `z > 0`.
fn ln_one_minus_exp_neg(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-(-z).exp_m1()).ln()
    }
}

fn exponential_ll(d: &InRange, range: FitRange, lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = d.n();
    let mut ll = n * lambda.ln() - lambda * (d.sum_x - n * range.lo);
    if range.is_bounded() {
        ll -= n * ln_one_minus_exp_neg(lambda * (range.hi - range.lo));
    }
    ll
}

fn stretched_ll(d: &InRange, range: FitRange, lambda: f64, beta: f64) -> f64 {
    if !(lambda > 0.0) || !(beta > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = d.n();
    let lo_b = range.lo.powf(beta);
    let s: f64 = d.ln_xs.iter().map(|l| (beta * l).exp() - lo_b).sum();
    let mut ll = n * beta.ln() + n * lambda.ln() + (beta - 1.0) * d.sum_ln - lambda * s;
    if range.is_bounded() {
        ll -= n * ln_one_minus_exp_neg(lambda * (range.hi.powf(beta) - lo_b));
    }
    ll
}

/// `ln ∫_lo^hi x^{-α} dx`.
fn ln_power_norm(alpha: f64, lo: f64, hi: f64) -> f64 {
    let e = alpha - 1.0;
    if hi.is_infinite() {
        return if e > 0.0 { -e * lo.ln() - e.ln() } else { f64::INFINITY };
    }
    let span = (hi / lo).ln();
    let shape = if (e * span).abs() < 1e-12 {
        span
    } else {
        -(-e * span).exp_m1() / e
    };
    -e * lo.ln() + shape.ln()
}

fn power_ll(d: &InRange, range: FitRange, alpha: f64) -> f64 {
    -alpha * d.sum_ln - d.n() * ln_power_norm(alpha, range.lo, range.hi)
}

/// `ln ∫_lo^hi x^{-α} e^{-λx} dx`, integrated in `u = ln x`.
fn ln_truncated_norm(alpha: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    let a = 1.0 - alpha;
    let g = |u: f64| a * u - lambda * u.exp();
    let peak_x = if a > 0.0 { a / lambda } else { lo };
    let upper = hi.min(peak_x.max(lo) + 80.0 / lambda);
    let (u0, u1) = (lo.ln(), upper.ln());
    let mut m = g(u0).max(g(u1));
    if peak_x > lo && peak_x < upper {
        m = m.max(g(peak_x.ln()));
    }
    m + integrate(|u| (g(u) - m).exp(), u0, u1, 0.05).ln()
}

fn truncated_ll(d: &InRange, range: FitRange, alpha: f64, lambda: f64) -> f64 {
    if !(lambda > 0.0) || !alpha.is_finite() {
        return f64::NEG_INFINITY;
    }
    -alpha * d.sum_ln - lambda * d.sum_x - d.n() * ln_truncated_norm(alpha, lambda, range.lo, range.hi)
}

/// Log-likelihood of the in-range samples under `model` with `params`.
pub fn log_likelihood(samples: &[f64], model: Model, params: &FitParams, range: FitRange) -> f64 {
    let d = InRange::new(samples, range);
    ll_of(&d, model, params, range)
}

fn ll_of(d: &InRange, model: Model, p: &FitParams, range: FitRange) -> f64 {
    match model {
        Model::Exponential => exponential_ll(d, range, p.lambda.unwrap_or(f64::NAN)),
        Model::StretchedExponential => {
            stretched_ll(d, range, p.lambda.unwrap_or(f64::NAN), p.beta.unwrap_or(f64::NAN))
        }
        Model::PowerLaw => power_ll(d, range, p.alpha.unwrap_or(f64::NAN)),
        Model::TruncatedPowerLaw => {
            truncated_ll(d, range, p.alpha.unwrap_or(f64::NAN), p.lambda.unwrap_or(f64::NAN))
        }
    }
}

/// Maximum-likelihood fit of `model` to the samples inside `range`.
pub fn fit_distribution(samples: &[f64], model: Model, range: FitRange) -> Result<FitResult> {
    FitRange::new(range.lo, range.hi)?;
    if matches!(
        model,
        Model::PowerLaw | Model::TruncatedPowerLaw | Model::StretchedExponential
    ) && !(range.lo > 0.0)
    {
        return Err(Error::invalid(format!("{model:?} needs a positive lower bound")));
    }
    let d = InRange::new(samples, range);
    if d.xs.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples in [{}, {}), need at least {MIN_FIT_SAMPLES}",
            d.xs.len(),
            range.lo,
            range.hi
        )));
    }
    let n = d.n();
    let params = match model {
        Model::Exponential => {
            let excess = d.sum_x - n * range.lo;
            let lambda = if !range.is_bounded() {
                if !(excess > 0.0) {
                    return Err(Error::InsufficientData("all samples equal the lower bound".into()));
                }
                n / excess
            } else {
                let width = range.hi - range.lo;
                let (u, _) = golden_max(
                    "exponential fit",
                    |u| exponential_ll(&d, range, u.exp()),
                    (1e-6 / width).ln(),
                    (1e6 / width).ln(),
                    1e-13,
                )?;
                u.exp()
            };
            FitParams {
                lambda: Some(lambda),
                x_min: range.lo,
                ..Default::default()
            }
        }
        Model::PowerLaw => {
            let alpha = if !range.is_bounded() {
                let s = d.sum_ln - n * range.lo.ln();
                if !(s > 0.0) {
                    return Err(Error::InsufficientData("all samples equal the lower bound".into()));
                }
                1.0 + n / s
            } else {
                golden_max("power-law fit", |a| power_ll(&d, range, a), 1e-3, 20.0, 1e-13)?.0
            };
            FitParams {
                alpha: Some(alpha),
                x_min: range.lo,
                ..Default::default()
            }
        }
        Model::StretchedExponential => {
            let (lambda, beta) = fit_stretched(&d, range)?;
            FitParams {
                lambda: Some(lambda),
                beta: Some(beta),
                x_min: range.lo,
                ..Default::default()
            }
        }
        Model::TruncatedPowerLaw => {
            let (alpha, lambda) = fit_truncated(&d, range)?;
            FitParams {
                alpha: Some(alpha),
                lambda: Some(lambda),
                x_min: range.lo,
                ..Default::default()
            }
        }
    };
    let log_likelihood = ll_of(&d, model, &params, range);
    Ok(FitResult {
        model,
        params,
        range,
        n_samples: d.xs.len(),
        log_likelihood,
        fraction_of_population: d.n() / samples.len() as f64,
    })
}

/// Mean of `x^β - lo^β`, the natural scale of `1/λ` at a given `β`.
fn stretched_scale(d: &InRange, lo: f64, beta: f64) -> f64 {
    let lo_b = lo.powf(beta);
    d.ln_xs.iter().map(|l| (beta * l).exp() - lo_b).sum::<f64>() / d.n()
}

fn fit_stretched(d: &InRange, range: FitRange) -> Result<(f64, f64)> {
    // λ = c / scale(β) decouples the two parameters along the likelihood ridge.
    let objective = |p: &[f64]| {
        let beta = p[1].exp();
        let lambda = p[0].exp() / stretched_scale(d, range.lo, beta);
        stretched_ll(d, range, lambda, beta)
    };
    let grid: [f64; 10] = [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0];
    let beta0 = grid
        .iter()
        .copied()
        .max_by(|a: &f64, b: &f64| objective(&[0.0, a.ln()]).total_cmp(&objective(&[0.0, b.ln()])))
        .unwrap_or(1.0);
    let (p, _) = polish("stretched-exponential fit", objective, &[0.0, beta0.ln()], &[0.3, 0.3])?;
    let beta = p[1].exp();
    Ok((p[0].exp() / stretched_scale(d, range.lo, beta), beta))
}

fn fit_truncated(d: &InRange, range: FitRange) -> Result<(f64, f64)> {
    let n = d.n();
    let objective = |p: &[f64]| truncated_ll(d, range, p[0], p[1].exp());
    let s = d.sum_ln - n * range.lo.ln();
    let alpha0 = if s > 0.0 { (1.0 + n / s).clamp(0.2, 5.0) } else { 1.5 };
    let lambda0 = n / d.sum_x;
    let (p, _) = polish("truncated power-law fit", objective, &[alpha0, lambda0.ln()], &[0.2, 1.0])?;
    Ok((p[0], p[1].exp()))
}

/// Nelder–Mead followed by restarts from the incumbent until it stops moving.
fn polish<F>(what: &'static str, f: F, start: &[f64], scale: &[f64]) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let (mut best, mut value) = nelder_mead_max(what, &f, start, scale, 1e-13, 20_000)?;
    for _ in 0..4 {
        let small: Vec<f64> = scale.iter().map(|s| s * 0.1).collect();
        let (p, v) = nelder_mead_max(what, &f, &best, &small, 1e-14, 20_000)?;
        let moved = p.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if v >= value {
            best = p;
            value = v;
        }
        if moved < 1e-9 {
            break;
        }
    }
    Ok((best, value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub range: FitRange,
    pub model: Model,
}

impl SegmentSpec {
    pub fn new(lo: f64, hi: f64, model: Model) -> Self {
        SegmentSpec {
            range: FitRange { lo, hi },
            model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedFit {
    pub fits: Vec<FitResult>,
    pub breakpoints: Vec<f64>,
}

impl SegmentedFit {
    pub fn covered_fraction(&self) -> f64 {
        self.fits.iter().map(|f| f.fraction_of_population).sum()
    }
}

pub fn validate_segments(segments: &[SegmentSpec]) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::invalid("no segments given"));
    }
    for s in segments {
        FitRange::new(s.range.lo, s.range.hi)?;
    }
    for w in segments.windows(2) {
        if w[0].range.hi > w[1].range.lo {
            return Err(Error::invalid(format!(
                "segments [{}, {}) and [{}, {}) overlap or are out of order",
                w[0].range.lo, w[0].range.hi, w[1].range.lo, w[1].range.hi
            )));
        }
    }
    Ok(())
}

/// Fits each `(range, model)` segment independently.
pub fn segmented_fit(samples: &[f64], segments: &[SegmentSpec]) -> Result<SegmentedFit> {
    validate_segments(segments)?;
    let fits = segments
        .iter()
        .map(|s| fit_distribution(samples, s.model, s.range))
        .collect::<Result<Vec<_>>>()?;
    Ok(SegmentedFit {
        fits,
        breakpoints: segments.iter().skip(1).map(|s| s.range.lo).collect(),
    })
}

/// Default displacement regimes: exponential on [10 m, 70 m), stretched
/// exponential on [100 m, 70 km), power law beyond 70 km.
pub fn default_displacement_segments() -> Vec<SegmentSpec> {
    vec![
        SegmentSpec::new(10.0, 70.0, Model::Exponential),
        SegmentSpec::new(100.0, 70_000.0, Model::StretchedExponential),
        SegmentSpec::new(70_000.0, f64::INFINITY, Model::PowerLaw),
    ]
}

/// Intra/inter-city split of displacements at 4 km, each a bounded power law.
pub fn default_double_power_segments() -> Vec<SegmentSpec> {
    vec![
        SegmentSpec::new(70.0, 4_000.0, Model::PowerLaw),
        SegmentSpec::new(4_000.0, 100_000.0, Model::PowerLaw),
    ]
}

/// Default radius-of-gyration regimes: exponential on [10 m, 30 m), stretched
/// exponential on [50 m, 10 km), power law on [10 km, 100 km).
pub fn default_gyration_segments() -> Vec<SegmentSpec> {
    vec![
        SegmentSpec::new(10.0, 30.0, Model::Exponential),
        SegmentSpec::new(50.0, 10_000.0, Model::StretchedExponential),
        SegmentSpec::new(10_000.0, 100_000.0, Model::PowerLaw),
    ]
}

/// Cell size read off the gyration segments: the lower bound of the first
/// power-law segment that follows a stretched-exponential one.
pub fn gyration_cell_size(segments: &[SegmentSpec]) -> Option<f64> {
    segments
        .windows(2)
        .find(|w| w[0].model == Model::StretchedExponential && w[1].model == Model::PowerLaw)
        .map(|w| w[1].range.lo)
}
