//! The contact angle of the planar minimizing cone: the root in θ of
//! `sin(θ)^s M(θ, s) / M(π/2, s) = 1 + σ`, where
//! `M(θ, s) = 2 ∫_0^θ ∫_0^∞ r (r² + 2r cos t + 1)^{-(2+s)/2} dr dt`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::quad::{self, Estimate, Tolerance};

fn check_order(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return invalid(format!("fractional order s = {s} is not in (0, 1)"));
    }
    Ok(())
}

/// Integrand on `r ∈ [0, 1]`.
fn near(r: f64, c: f64, s: f64) -> f64 {
    r * (r * r + 2.0 * r * c + 1.0).powf(-0.5 * (2.0 + s))
}

/// Integrand of the part `r > 1` after `r = w^{-1/s}`, without the `1/s`.
fn far(w: f64, c: f64, s: f64) -> f64 {
    let v = w.powf(1.0 / s);
    (1.0 + 2.0 * c * v + v * v).powf(-0.5 * (2.0 + s))
}

/// `∫_0^∞ r (r² + 2r cos t + 1)^{-(2+s)/2} dr` with its error.
fn radial(t: f64, s: f64, rel: f64) -> (f64, f64) {
    let c = t.cos();
    let tol = Tolerance::new(1e-300, rel);
    let mut breaks = vec![0.0, 1.0];
    if c < 0.0 && -c < 1.0 {
        // the denominator is smallest at r = -cos t
        breaks.insert(1, -c);
    }
    let a = quad::integrate(|r| near(r, c, s), &breaks, tol);
    let b = quad::integrate(|w| far(w, c, s), &[0.0, 1.0], tol);
    (a.value + b.value / s, a.error + b.error / s)
}

/// `M(θ, s)` to relative tolerance `tol`, for `0 ≤ θ < π`.
pub fn m_value(theta: f64, s: f64, tol: f64) -> Result<Estimate> {
    check_order(s)?;
    if !(theta >= 0.0) {
        return invalid("angle must be nonnegative");
    }
    if theta >= PI {
        return invalid("M diverges at θ = π");
    }
    if !(tol > 0.0 && tol < 1.0) {
        return invalid("tolerance must lie in (0, 1)");
    }
    if theta == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let inner = 0.01 * tol;
    let mut breaks = vec![0.0, theta];
    if theta > 0.5 * PI {
        breaks.insert(1, 0.5 * PI);
    }
    let est = quad::integrate_nested(|t| radial(t, s, inner), &breaks, Tolerance::new(1e-300, 0.1 * tol));
    Ok(Estimate { value: 2.0 * est.value, error: 2.0 * est.error, converged: est.converged })
}

/// Independent estimate of `M(θ, s)` by jittered sampling of `strata²`
/// cells of `[0, θ] × [0, 1]` for each of the two radial pieces. The error
/// is three standard errors over `replicates` independent repetitions.
pub fn m_monte_carlo(theta: f64, s: f64, strata: usize, replicates: usize, seed: u64) -> Result<Estimate> {
    check_order(s)?;
    if !(0.0..PI).contains(&theta) {
        return invalid("angle must lie in [0, π)");
    }
    if strata == 0 || replicates < 2 {
        return invalid("need at least one stratum and two replicates");
    }
    let vals: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let cell = 1.0 / strata as f64;
            let mut acc = 0.0;
            for i in 0..strata {
                for j in 0..strata {
                    let t = theta * (i as f64 + rng.gen::<f64>()) * cell;
                    let x = (j as f64 + rng.gen::<f64>()) * cell;
                    let c = t.cos();
                    acc += near(x, c, s) + far(x, c, s) / s;
                }
            }
            2.0 * theta * acc * cell * cell
        })
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Estimate { value: mean, error: 3.0 * (var / n).sqrt(), converged: true })
}

/// Scan resolution: the bracket search uses `θ = kπ/64`.
pub const SCAN_STEPS: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct YoungLawSolution {
    pub sigma: f64,
    pub s: f64,
    pub theta: f64,
    /// `|sin(θ)^s M(θ)/M(π/2) - (1 + σ)|` at the returned angle.
    pub residual: f64,
    pub m_theta: f64,
    pub m_half_pi: f64,
    /// Width of the final bisection interval.
    pub bracket: f64,
    /// Scan angles at which `g` failed to increase strictly.
    pub scan_anomalies: Vec<f64>,
}

struct Balance {
    s: f64,
    sigma: f64,
    tol: f64,
    m_half: f64,
}

impl Balance {
    fn eval(&self, theta: f64) -> Result<(f64, f64)> {
        let m = m_value(theta, self.s, 0.1 * self.tol)?;
        Ok((theta.sin().powf(self.s) * m.value / self.m_half - (1.0 + self.sigma), m.value))
    }
}

/// Contact angle for adhesion `sigma`, found by bisection inside the first
/// sign change of the scan.
pub fn contact_angle(sigma: f64, s: f64, tol: f64) -> Result<YoungLawSolution> {
    check_order(s)?;
    if !(sigma > -1.0 && sigma < 1.0) {
        return invalid("sigma must lie in (-1, 1)");
    }
    if !(tol > 0.0 && tol < 0.1) {
        return invalid("tolerance must lie in (0, 0.1)");
    }
    let m_half = m_value(0.5 * PI, s, 0.1 * tol)?.value;
    let bal = Balance { s, sigma, tol, m_half };
    let angles: Vec<f64> = (1..SCAN_STEPS).map(|k| PI * k as f64 / SCAN_STEPS as f64).collect();
    let scan: Vec<(f64, f64)> = angles.par_iter().map(|&a| bal.eval(a)).collect::<Result<_>>()?;
    let scan_anomalies = (1..scan.len()).filter(|&k| scan[k].0 <= scan[k - 1].0).map(|k| angles[k]).collect();

    let solution = |theta: f64, g: f64, m: f64, bracket: f64, scan_anomalies: Vec<f64>| YoungLawSolution {
        sigma,
        s,
        theta,
        residual: g.abs(),
        m_theta: m,
        m_half_pi: m_half,
        bracket,
        scan_anomalies,
    };
    if let Some(k) = scan.iter().position(|(g, _)| *g == 0.0) {
        return Ok(solution(angles[k], 0.0, scan[k].1, 0.0, scan_anomalies));
    }
    let Some(k) = (1..scan.len()).find(|&k| scan[k - 1].0.signum() != scan[k].0.signum()) else {
        return Err(Error::NoBracket(format!("no sign change of the balance for sigma = {sigma}, s = {s}")));
    };
    let (mut lo, mut hi) = (angles[k - 1], angles[k]);
    let rising = scan[k].0 > 0.0;
    let mut best = (0.5 * (lo + hi), f64::INFINITY, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (g, m) = bal.eval(mid)?;
        if g.abs() < best.1.abs() {
            best = (mid, g, m);
        }
        if g.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON {
            break;
        }
        if (g > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(solution(best.0, best.1, best.2, hi - lo, scan_anomalies))
}

/// Contact angles over a grid of adhesion coefficients and orders.
#[derive(Debug, Clone, Serialize)]
pub struct YoungTable {
    pub sigmas: Vec<f64>,
    pub s_values: Vec<f64>,
    /// `theta[i][j]` for `sigmas[i]`, `s_values[j]`; failures carry their message.
    pub theta: Vec<Vec<std::result::Result<f64, String>>>,
    /// Per order: whether θ increases with σ over the computed cells.
    pub increasing_in_sigma: Vec<bool>,
}

pub fn young_table(sigmas: &[f64], s_values: &[f64], tol: f64) -> YoungTable {
    let cells: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|i| (0..s_values.len()).map(move |j| (i, j))).collect();
    let solved: Vec<std::result::Result<f64, String>> = cells
        .par_iter()
        .map(|&(i, j)| contact_angle(sigmas[i], s_values[j], tol).map(|sol| sol.theta).map_err(|e| e.to_string()))
        .collect();
    let mut theta = vec![Vec::with_capacity(s_values.len()); sigmas.len()];
    for (&(i, _), v) in cells.iter().zip(solved) {
        theta[i].push(v);
    }
    let mut order: Vec<usize> = (0..sigmas.len()).collect();
    order.sort_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b]));
    let increasing_in_sigma = (0..s_values.len())
        .map(|j| {
            let col: Vec<f64> = order.iter().filter_map(|&i| theta[i][j].as_ref().ok().copied()).collect();
            col.windows(2).all(|w| w[1] >= w[0])
        })
        .collect();
    YoungTable { sigmas: sigmas.to_vec(), s_values: s_values.to_vec(), theta, increasing_in_sigma }
}

impl YoungTable {
    /// `sigma,s,theta` rows; failed cells have an empty angle.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,s,theta\n");
        for (i, row) in self.theta.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let cell = v.as_ref().map(|t| format!("{t:.12}")).unwrap_or_default();
                out.push_str(&format!("{},{},{}\n", self.sigmas[i], self.s_values[j], cell));
            }
        }
        out
    }
}
