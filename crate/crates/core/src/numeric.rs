//! Small numerical kernels shared by the fitting code.

use crate::error::{Error, Result};

/// `x * log2(x)` with the `0 log 0 = 0` convention.
#[inline]
pub(crate) fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a unimodal function on `[lo, hi]` by golden-section search.
///
/// Returns `(argmax, value)`. Fails if the maximum sits on either end of the
/// bracket, which means the true optimum lies outside it.
pub(crate) fn golden_max<F>(what: &'static str, mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a).abs() > tol * (1.0 + c.abs().max(d.abs())) {
        iterations += 1;
        if iterations > 500 {
            return Err(Error::NoConvergence {
                what,
                iterations,
                residual: b - a,
                last: vec![c],
            });
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let (x, fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    let edge = 1e-6 * (hi - lo);
    if !fx.is_finite() || x - lo < edge || hi - x < edge {
        return Err(Error::NoConvergence {
            what,
            iterations,
            residual: f64::NAN,
            last: vec![x],
        });
    }
    Ok((x, fx))
}

/// Nelder–Mead maximization in `n` dimensions.
///
/// `scale` sets the initial simplex edge per coordinate. Non-finite objective
/// values are treated as `-inf`, so constraints can be expressed by returning
/// NaN or `-inf` outside the feasible set.
pub(crate) fn nelder_mead_max<F>(
    what: &'static str,
    mut f: F,
    start: &[f64],
    scale: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = start.len();
    let mut eval = |x: &[f64]| {
        let v = -f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += scale[i];
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

    for iteration in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let size = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if values[0].is_finite() && spread <= tol * (1.0 + values[0].abs()) && size <= tol.sqrt() {
            return Ok((simplex[0].clone(), -values[0]));
        }
        if iteration + 1 == max_iter {
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = eval(&contracted);
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    for (x, b) in simplex[i].iter_mut().zip(&best) {
                        *x = b + 0.5 * (*x - b);
                    }
                    values[i] = eval(&simplex[i]);
                }
            }
        }
    }
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Err(Error::NoConvergence {
        what,
        iterations: max_iter,
        residual: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - values[best],
        last: simplex[best].clone(),
    })
}

// 8-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Composite 8-point Gauss–Legendre quadrature of `f` over `[a, b]` using
/// panels no wider than `max_width`.
pub(crate) fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, max_width: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += s * half;
    }
    total
}

/// Mean and population variance.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for child stream `index` of `seed`.
pub(crate) fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}
