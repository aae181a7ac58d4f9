use crate::error::{Error, Result};

const SAMPLES: usize = 300;
const MAX_ITERATIONS: usize = 500;

/// Parameters of the low-dimensional membership curve `1 / (1 + a·d^(2b))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
    /// Root-mean-square residual against the target curve.
    pub rms: f64,
    pub iterations: usize,
}

impl CurveFit {
    pub fn eval(&self, d: f64) -> f64 {
        1.0 / (1.0 + self.a * d.powf(2.0 * self.b))
    }
}

fn target(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

fn sum_sq(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
            r * r
        })
        .sum()
}

/// Levenberg–Marquardt least squares of `1 / (1 + a·d^(2b))` against the
/// offset exponential target sampled at 300 points on `[0, 3·spread]`.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<CurveFit> {
    if !(min_dist > 0.0 && spread > 0.0 && min_dist < 10.0 * spread) {
        return Err(Error::invalid(format!(
            "need 0 < min_dist < 10·spread, got min_dist={min_dist}, spread={spread}"
        )));
    }
    let xs: Vec<f64> = (0..SAMPLES)
        .map(|i| 3.0 * spread * i as f64 / (SAMPLES - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target(x, min_dist, spread)).collect();

    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut cost = sum_sq(&xs, &ys, a, b);
    let mut lambda = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        // normal equations J^T J and J^T r
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue; // f(0) = 1 regardless of (a, b)
            }
            let p = x.powf(2.0 * b);
            let denom = 1.0 + a * p;
            let f = 1.0 / denom;
            let r = f - y;
            let da = -p / (denom * denom);
            let db = -2.0 * a * p * x.ln() / (denom * denom);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let new_cost = sum_sq(&xs, &ys, na, nb);
                if new_cost < cost {
                    let rel_step = (step_a / a).abs().max((step_b / b).abs());
                    let rel_gain = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                    a = na;
                    b = nb;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel_step < 1e-12 || rel_gain < 1e-15 {
                        return Ok(done(a, b, cost, iteration));
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left: at a minimum
            return Ok(done(a, b, cost, iteration));
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

fn done(a: f64, b: f64, cost: f64, iterations: usize) -> CurveFit {
    CurveFit {
        a,
        b,
        rms: (cost / SAMPLES as f64).sqrt(),
        iterations,
    }
}
