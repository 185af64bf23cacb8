//! Reference solution of the linear-quadratic game through its Riccati system.
//!
//! With `V(t, x) = ½ A x² + B x + C` and the optimal feedback
//! `a* = -(q/n)(A x + B)`, the coefficients solve, backward from `T`,
//!
//! ```text
//! A' = -2pA + (q²/n) A² - m²
//! B' = -cA - pB + (q²/n) A B - m m̂ z
//! C' = -cB + (q²/2n) B² - ½ m̂² z² - ½ σ² A
//! ```
//!
//! with `A(T) = h²`, `B(T) = h ĥ z_T`, `C(T) = ½ ĥ² z_T²`, where `z` is the
//! population mean. The mean of the controlled state then solves
//! `m̄' = c + p m̄ - (q²/n)(A m̄ + B)` and `z = m̄` is found by a damped fixed
//! point. The variance follows `v' = 2(p - q² A / n) v + σ²`.

use crate::error::{Error, Result};
use crate::measures::TimeGrid;
use crate::mfg::MfgSolution;
use crate::model::LqParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub steps: usize,
    /// Sup-norm tolerance on `|m̄(z) - z|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Controls must stay inside these bounds on `m̄ ± band · sd`.
    pub control_bounds: Option<(f64, f64)>,
    pub band: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            steps: 4000,
            tol: 1e-11,
            max_iter: 500,
            control_bounds: None,
            band: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Damped fixed-point steps after the initial sweep.
    pub iterations: usize,
    pub gap: f64,
    params: LqParams,
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len() - 1;
    let h = times[n] / n as f64;
    let mut s = (t / h).clamp(0.0, n as f64);
    if (s - s.round()).abs() < 1e-9 {
        s = s.round();
    }
    let k = (s.floor() as usize).min(n.saturating_sub(1));
    let r = s - k as f64;
    if r == 0.0 {
        values[k]
    } else {
        (1.0 - r) * values[k] + r * values[k + 1]
    }
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        interp(&self.times, &self.mean, t)
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        interp(&self.times, &self.variance, t)
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        let a = interp(&self.times, &self.a, t);
        let b = interp(&self.times, &self.b, t);
        let c = interp(&self.times, &self.c, t);
        0.5 * a * x * x + b * x + c
    }

    pub fn control(&self, t: f64, x: f64) -> f64 {
        let a = interp(&self.times, &self.a, t);
        let b = interp(&self.times, &self.b, t);
        -(self.params.q.at(t) / self.params.cost.n.at(t)) * (a * x + b)
    }

    /// Sup distance between the mean paths of two solutions, compared at the
    /// nodes of `self`.
    pub fn mean_gap(&self, other: &RiccatiSolution) -> f64 {
        self.times
            .iter()
            .zip(&self.mean)
            .map(|(&t, &m)| (m - other.mean_at(t)).abs())
            .fold(0.0, f64::max)
    }
}

struct Sweep {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    mean: Vec<f64>,
    mean_dot: Vec<f64>,
    variance: Vec<f64>,
}

/// Cubic Hermite midpoint of a step with end values and derivatives.
fn hermite_mid(y0: f64, y1: f64, d0: f64, d1: f64, h: f64) -> f64 {
    0.5 * (y0 + y1) + h * (d0 - d1) / 8.0
}

fn sweep(p: &LqParams, horizon: f64, steps: usize, z: &[f64], z_dot: &[f64], mean0: f64, var0: f64) -> Sweep {
    let h = horizon / steps as f64;
    let t_of = |k: usize| if k == steps { horizon } else { k as f64 * h };
    let qq = |t: f64| p.q.at(t).powi(2) / p.cost.n.at(t);
    let back = |t: f64, y: [f64; 3], z: f64| -> [f64; 3] {
        let (a, b) = (y[0], y[1]);
        let (c, pp, m, mh) = (p.c.at(t), p.p.at(t), p.cost.m.at(t), p.cost.m_hat.at(t));
        [
            -2.0 * pp * a + qq(t) * a * a - m * m,
            -c * a - pp * b + qq(t) * a * b - m * mh * z,
            -c * b + 0.5 * qq(t) * b * b - 0.5 * mh * mh * z * z - 0.5 * p.sigma * p.sigma * a,
        ]
    };

    let mut a = vec![0.0; steps + 1];
    let mut b = vec![0.0; steps + 1];
    let mut c = vec![0.0; steps + 1];
    let (hh, hhat) = (p.cost.h.at(horizon), p.cost.h_hat.at(horizon));
    let zt = z[steps];
    let mut y = [hh * hh, hh * hhat * zt, 0.5 * hhat * hhat * zt * zt];
    a[steps] = y[0];
    b[steps] = y[1];
    c[steps] = y[2];
    for k in (0..steps).rev() {
        let (t1, t0) = (t_of(k + 1), t_of(k));
        let tm = 0.5 * (t0 + t1);
        let zm = hermite_mid(z[k], z[k + 1], z_dot[k], z_dot[k + 1], h);
        let step = |y: [f64; 3], d: [f64; 3], s: f64| [y[0] - s * d[0], y[1] - s * d[1], y[2] - s * d[2]];
        let k1 = back(t1, y, z[k + 1]);
        let k2 = back(tm, step(y, k1, 0.5 * h), zm);
        let k3 = back(tm, step(y, k2, 0.5 * h), zm);
        let k4 = back(t0, step(y, k3, h), z[k]);
        for j in 0..3 {
            y[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        a[k] = y[0];
        b[k] = y[1];
        c[k] = y[2];
    }

    // derivatives of A and B at the nodes, for midpoint interpolation
    let dy: Vec<[f64; 3]> = (0..=steps).map(|k| back(t_of(k), [a[k], b[k], c[k]], z[k])).collect();
    let fwd = |t: f64, s: [f64; 2], a: f64, b: f64| -> [f64; 2] {
        let drift = p.p.at(t) - qq(t) * a;
        [
            p.c.at(t) + p.p.at(t) * s[0] - qq(t) * (a * s[0] + b),
            2.0 * drift * s[1] + p.sigma * p.sigma,
        ]
    };
    let mut mean = vec![mean0; steps + 1];
    let mut variance = vec![var0; steps + 1];
    let mut mean_dot = vec![0.0; steps + 1];
    let mut s = [mean0, var0];
    for k in 0..steps {
        let (t0, t1) = (t_of(k), t_of(k + 1));
        let tm = 0.5 * (t0 + t1);
        let am = hermite_mid(a[k], a[k + 1], dy[k][0], dy[k + 1][0], h);
        let bm = hermite_mid(b[k], b[k + 1], dy[k][1], dy[k + 1][1], h);
        let add = |s: [f64; 2], d: [f64; 2], w: f64| [s[0] + w * d[0], s[1] + w * d[1]];
        let k1 = fwd(t0, s, a[k], b[k]);
        mean_dot[k] = k1[0];
        let k2 = fwd(tm, add(s, k1, 0.5 * h), am, bm);
        let k3 = fwd(tm, add(s, k2, 0.5 * h), am, bm);
        let k4 = fwd(t1, add(s, k3, h), a[k + 1], b[k + 1]);
        for j in 0..2 {
            s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        mean[k + 1] = s[0];
        variance[k + 1] = s[1];
    }
    mean_dot[steps] = fwd(horizon, s, a[steps], b[steps])[0];
    Sweep {
        a,
        b,
        c,
        mean,
        mean_dot,
        variance,
    }
}

/// Solves the coupled Riccati system for an initial law with the given mean
/// and variance. No sign conditions are imposed.
pub fn solve_riccati(
    params: &LqParams,
    horizon: f64,
    initial_mean: f64,
    initial_variance: f64,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    let time = TimeGrid::new(horizon, opts.steps)?;
    let steps = opts.steps;
    for k in [0, steps] {
        let t = time.time(k);
        if params.cost.n.at(t) <= 0.0 {
            return Err(Error::InvalidModel("need n > 0 for the Riccati system".into()));
        }
    }
    // first sweep against the constant mean
    let mut z = vec![initial_mean; steps + 1];
    let mut z_dot = vec![0.0; steps + 1];
    let first = sweep(params, horizon, steps, &z, &z_dot, initial_mean, initial_variance);
    z = first.mean;
    z_dot = first.mean_dot;

    let mut gap = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let out = sweep(params, horizon, steps, &z, &z_dot, initial_mean, initial_variance);
        gap = out.mean.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap <= opts.tol {
            let solution = RiccatiSolution {
                times: time.times().collect(),
                a: out.a,
                b: out.b,
                c: out.c,
                mean: out.mean,
                variance: out.variance,
                iterations: iteration,
                gap,
                params: *params,
            };
            if let Some(bounds) = opts.control_bounds {
                check_clipping(&solution, bounds, opts.band)?;
            }
            return Ok(solution);
        }
        for k in 0..=steps {
            z[k] = 0.5 * (z[k] + out.mean[k]);
            z_dot[k] = 0.5 * (z_dot[k] + out.mean_dot[k]);
        }
    }
    Err(Error::RiccatiNotConverged {
        iterations: opts.max_iter,
        gap,
    })
}

/// Fails when the unconstrained feedback leaves `[lo, hi]` anywhere on
/// `m̄(t) ± band · sd(t)`. The feedback is affine in `x`, so the band ends
/// suffice.
pub fn check_clipping(solution: &RiccatiSolution, (lo, hi): (f64, f64), band: f64) -> Result<()> {
    const SLACK: f64 = 1e-9;
    for (k, &t) in solution.times.iter().enumerate() {
        let sd = solution.variance[k].max(0.0).sqrt();
        for x in [solution.mean[k] - band * sd, solution.mean[k] + band * sd] {
            let control = solution.control(t, x);
            if control < lo - SLACK || control > hi + SLACK {
                return Err(Error::ClippingActive { t, x, control });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqComparison {
    /// `max_k |E[X_{t_k}] - m̄(t_k)|`.
    pub mean_error: f64,
    /// Largest value gap on the nodes within `band` standard deviations (plus
    /// one cell) of the reference mean.
    pub value_error: f64,
    pub value_points: usize,
}

/// Compares a grid equilibrium against the reference solution.
pub fn compare_to_grid(oracle: &RiccatiSolution, solution: &MfgSolution, time: &TimeGrid, band: f64) -> LqComparison {
    let grid = solution.flow.grid();
    let mut mean_error: f64 = 0.0;
    let mut value_error: f64 = 0.0;
    let mut value_points = 0;
    for (k, m) in solution.flow.means().into_iter().enumerate() {
        let t = time.time(k);
        let center = oracle.mean_at(t);
        mean_error = mean_error.max((m - center).abs());
        let radius = band * oracle.variance_at(t).max(0.0).sqrt() + grid.dx();
        for (i, &x) in grid.points().iter().enumerate() {
            if (x - center).abs() <= radius {
                value_points += 1;
                value_error = value_error.max((solution.value.at(k, i) - oracle.value(t, x)).abs());
            }
        }
    }
    LqComparison {
        mean_error,
        value_error,
        value_points,
    }
}
