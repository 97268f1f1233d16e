//! Huber loss with an ℓ1 penalty, solved by accelerated proximal gradient
//! with backtracking and soft-thresholding.
//!
//! The objective is
//!
//! ```text
//! F(b, β) = (1/n) Σᵢ H_δ(yᵢ − b − xᵢᵀβ) + λ‖β‖₁
//! H_δ(r)  = r²/2            if |r| ≤ δ
//!         = δ|r| − δ²/2     otherwise
//! ```
//!
//! with the intercept `b` left unpenalized. Momentum is reset whenever a step
//! would increase `F`, so the recorded objective trace never goes up.

use ndarray::{ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * a - 0.5 * delta * delta
    }
}

/// Derivative of the Huber loss: `r` clipped to `[-δ, δ]`.
pub fn huber_psi(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Exact minimizer of `Σ H_δ(yᵢ − b)` over `b`.
///
/// `g(b) = Σ ψ(yᵢ − b)` is non-increasing and piecewise linear with kinks at
/// `yᵢ ± δ`, so the root is found by scanning the kinks and interpolating
/// within the bracketing segment. When `g` vanishes on a whole segment the
/// midpoint is returned.
pub fn huber_location(y: &[f64], delta: f64) -> f64 {
    match y.len() {
        0 => return 0.0,
        1 => return y[0],
        _ => {}
    }
    let g = |b: f64| y.iter().map(|&v| huber_psi(v - b, delta)).sum::<f64>();
    let mut knots: Vec<f64> = y.iter().flat_map(|&v| [v - delta, v + delta]).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut prev = (knots[0], g(knots[0]));
    if prev.1 <= 0.0 {
        // g(min knot) = n·δ > 0 always, kept for safety
        return prev.0;
    }
    for &k in &knots[1..] {
        let gk = g(k);
        if gk == 0.0 {
            // extend over a flat zero segment
            let end = knots
                .iter()
                .rev()
                .find(|&&e| e >= k && g(e) == 0.0)
                .copied()
                .unwrap_or(k);
            return 0.5 * (k + end);
        }
        if gk < 0.0 {
            let (a, ga) = prev;
            return a + ga * (k - a) / (ga - gk);
        }
        prev = (k, gk);
    }
    prev.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HuberFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Objective after every accepted iterate, starting with the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl HuberFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

fn check_inputs(x: &ArrayView2<f64>, y: &[f64], delta: f64, lambda: f64) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "design has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("cannot fit on zero rows"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in design or target"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("Huber delta must be positive, got {delta}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    Ok(())
}

fn residuals(x: &ArrayView2<f64>, y: &[f64], intercept: f64, beta: &[f64]) -> Vec<f64> {
    let beta = ArrayView1::from(beta);
    x.outer_iter()
        .zip(y)
        .map(|(row, &yi)| yi - intercept - row.dot(&beta))
        .collect()
}

fn smooth_loss(res: &[f64], delta: f64) -> f64 {
    res.iter().map(|&r| huber(r, delta)).sum::<f64>() / res.len() as f64
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Full objective `F(b, β)`.
pub fn objective(x: ArrayView2<f64>, y: &[f64], intercept: f64, beta: &[f64], delta: f64, lambda: f64) -> f64 {
    smooth_loss(&residuals(&x, y, intercept, beta), delta) + lambda * l1(beta)
}

/// Gradient of the smooth part: `(∂b, ∂β)`.
fn gradient(x: &ArrayView2<f64>, res: &[f64], delta: f64) -> (f64, Vec<f64>) {
    let n = res.len() as f64;
    let psi: Vec<f64> = res.iter().map(|&r| huber_psi(r, delta)).collect();
    let g0 = -psi.iter().sum::<f64>() / n;
    let gb = x
        .axis_iter(Axis(1))
        .map(|col| -col.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>() / n)
        .collect();
    (g0, gb)
}

/// Smallest λ at which the all-zero coefficient vector is optimal:
/// `max_j |(1/n) Σᵢ ψ_δ(yᵢ − b_H) x_ij|` with `b_H` the Huber location of `y`.
pub fn lambda_max(x: ArrayView2<f64>, y: &[f64], delta: f64) -> f64 {
    if x.ncols() == 0 || y.is_empty() {
        return 0.0;
    }
    let b = huber_location(y, delta);
    let res: Vec<f64> = y.iter().map(|&v| v - b).collect();
    let (_, g) = gradient(&x, &res, delta);
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Minimizes `F(b, β)` for a column-standardized design `x`.
pub fn fit_huber_l1(x: ArrayView2<f64>, y: &[f64], delta: f64, lambda: f64, opts: &SolverOptions) -> Result<HuberFit> {
    check_inputs(&x, y, delta, lambda)?;
    let p = x.ncols();

    // Start at the optimum of the intercept-only model. When λ ≥ λ_max that
    // point satisfies the optimality conditions and is returned unchanged.
    let mut b = huber_location(y, delta);
    let mut beta = vec![0.0; p];
    let mut res = residuals(&x, y, b, &beta);
    let mut f_cur = smooth_loss(&res, delta);
    let mut trace = vec![f_cur];
    if lambda >= lambda_max(x, y, delta) {
        return Ok(HuberFit {
            intercept: b,
            coefficients: beta,
            objective_trace: trace,
            iterations: 0,
        });
    }

    let mut step = 1.0;
    let mut momentum = 1.0f64;
    // extrapolated point
    let mut yb = b;
    let mut ybeta = beta.clone();
    let mut yres = res.clone();
    let mut small_steps = 0;

    for iter in 1..=opts.max_iter {
        let (g0, gb) = gradient(&x, &yres, delta);
        let fy = smooth_loss(&yres, delta);
        let (zb, zbeta, zres, fz) = loop {
            let zb = yb - step * g0;
            let zbeta: Vec<f64> = ybeta
                .iter()
                .zip(&gb)
                .map(|(&v, &g)| soft_threshold(v - step * g, step * lambda))
                .collect();
            let zres = residuals(&x, y, zb, &zbeta);
            let fz = smooth_loss(&zres, delta);
            let mut lin = g0 * (zb - yb);
            let mut sq = (zb - yb).powi(2);
            for j in 0..p {
                let d = zbeta[j] - ybeta[j];
                lin += gb[j] * d;
                sq += d * d;
            }
            if fz <= fy + lin + sq / (2.0 * step) || step < 1e-20 {
                break (zb, zbeta, zres, fz);
            }
            step *= 0.5;
        };

        let f_new = fz + lambda * l1(&zbeta);
        let f_old = *trace.last().unwrap();
        let extrapolated = momentum > 1.0;
        if f_new > f_old {
            if extrapolated {
                // restart from the last accepted iterate without momentum
                momentum = 1.0;
                yb = b;
                ybeta.clone_from(&beta);
                yres.clone_from(&res);
                continue;
            }
            // a plain proximal step cannot increase F except through rounding
            return Ok(HuberFit {
                intercept: b,
                coefficients: beta,
                objective_trace: trace,
                iterations: iter,
            });
        }

        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let w = (momentum - 1.0) / next_momentum;
        yb = zb + w * (zb - b);
        for j in 0..p {
            ybeta[j] = zbeta[j] + w * (zbeta[j] - beta[j]);
        }
        momentum = next_momentum;
        b = zb;
        beta = zbeta;
        res = zres;
        yres = if w == 0.0 {
            res.clone()
        } else {
            residuals(&x, y, yb, &ybeta)
        };
        f_cur = f_new;
        trace.push(f_cur);

        let rel = (f_old - f_new) / f_old.abs().max(f64::MIN_POSITIVE);
        if rel < opts.tol {
            small_steps += 1;
            if small_steps >= 2 || f_new == 0.0 {
                return Ok(HuberFit {
                    intercept: b,
                    coefficients: beta,
                    objective_trace: trace,
                    iterations: iter,
                });
            }
        } else {
            small_steps = 0;
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        last: trace.last().copied(),
        trace,
    })
}
