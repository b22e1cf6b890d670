//! Independent constraint checker for finished solutions.
//!
//! Gains are recomputed here from the geometry rather than taken from the
//! channel module, so a bug there cannot hide a violation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{Scenario, Solution};
use crate::C64;

/// Which trajectory constraints apply. Hovering benchmarks drop the end
/// points and speed, the unconstrained-speed benchmark drops only the speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub endpoints: bool,
    pub speed: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { endpoints: true, speed: true }
    }
}

/// Largest violation of each constraint family. Distances are in metres,
/// powers in watts, energy relative to the threshold; everything else is
/// dimensionless.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Violations {
    pub shape: f64,
    pub endpoints: f64,
    pub speed: f64,
    pub altitude: f64,
    pub phase: f64,
    pub power_sign: f64,
    pub power_budget: f64,
    pub split: f64,
    pub decoding_binary: f64,
    pub decoding_sum: f64,
    pub power_order: f64,
    pub energy: f64,
    /// Distance-rule mismatch of the decoding order (m). Reported, not part
    /// of [`max`](Self::max).
    pub distance_order: f64,
}

impl Violations {
    fn entries(&self) -> [(&'static str, f64); 12] {
        [
            ("shape", self.shape),
            ("endpoints", self.endpoints),
            ("speed", self.speed),
            ("altitude", self.altitude),
            ("phase", self.phase),
            ("power_sign", self.power_sign),
            ("power_budget", self.power_budget),
            ("split", self.split),
            ("decoding_binary", self.decoding_binary),
            ("decoding_sum", self.decoding_sum),
            ("power_order", self.power_order),
            ("energy", self.energy),
        ]
    }

    pub fn max(&self) -> f64 {
        self.entries().iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> (&'static str, f64) {
        self.entries().into_iter().fold(("none", 0.0), |a, e| if e.1 > a.1 { e } else { a })
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

fn d3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Expected gain `E|h_UU + h_IUᴴ Θ h_UI|²` from first principles.
pub fn expected_gain(sc: &Scenario, q: &[f64; 3], theta: &[f64], k: usize) -> f64 {
    let w = &sc.user_pos[k];
    let r = &sc.irs_pos;
    let (d_uu, d_ui, d_iu) = (d3(q, w), d3(q, r), d3(r, w));
    let los1 = sc.beta0 * sc.kappa1 / (1.0 + sc.kappa1);
    let los2 = sc.beta0 * sc.kappa2 / (1.0 + sc.kappa2);
    let tau = std::f64::consts::TAU;
    let cos_in = (r[0] - q[0]) / d_ui;
    let cos_out = (w[0] - r[0]) / d_iu;
    let mut refl = C64::new(0.0, 0.0);
    for (m, th) in theta.iter().enumerate().take(sc.m) {
        let h_ui = C64::from_polar(sc.beta0.sqrt() / d_ui, -tau * sc.d_over_lambda * m as f64 * cos_in);
        let h_iu = C64::from_polar((los2 / d_iu.powf(sc.gamma)).sqrt(), tau * sc.d_over_lambda * m as f64 * cos_out);
        refl += h_iu.conj() * C64::from_polar(1.0, *th) * h_ui;
    }
    let direct = (los1 / d_uu.powf(sc.alpha)).sqrt();
    let scatter = (sc.beta0 - los1) / d_uu.powf(sc.alpha)
        + sc.m as f64 * sc.beta0 * (sc.beta0 - los2) / (d_ui * d_ui * d_iu.powf(sc.gamma));
    (refl + direct).norm_sqr() + scatter
}

/// Checks every constraint of the joint problem.
pub fn check(sc: &Scenario, sol: &Solution, opts: CheckOptions) -> Result<Violations> {
    let mut v = Violations::default();
    let (n, k) = (sc.n, sc.k);
    let shape_ok = sol.q.len() == n
        && sol.p.len() == n
        && sol.rho.len() == n
        && sol.theta.len() == n
        && sol.psi.len() == n
        && sol.p.iter().all(|r| r.len() == k)
        && sol.rho.iter().all(|r| r.len() == k)
        && sol.theta.iter().all(|r| r.len() == sc.m)
        && sol.psi.iter().all(|m| m.len() == k && m.iter().all(|r| r.len() == k));
    if !shape_ok {
        v.shape = f64::INFINITY;
        return Ok(v);
    }
    let up = |slot: &mut f64, x: f64| {
        if x.is_nan() {
            *slot = f64::INFINITY;
        } else if x > *slot {
            *slot = x;
        }
    };

    if opts.endpoints {
        up(&mut v.endpoints, d3(&sol.q[0], &sc.q_init));
        up(&mut v.endpoints, d3(&sol.q[n - 1], &sc.q_final));
    }
    if opts.speed {
        for w in sol.q.windows(2) {
            up(&mut v.speed, d3(&w[0], &w[1]) - sc.v_max * sc.delta);
        }
    }
    for (slot, q) in sol.q.iter().enumerate() {
        up(&mut v.altitude, (q[2] - sc.h_u).abs());
        for th in &sol.theta[slot] {
            up(&mut v.phase, (-th).max(th - std::f64::consts::TAU));
        }
        let p = &sol.p[slot];
        let total: f64 = p.iter().sum();
        up(&mut v.power_budget, total - sc.p_max);
        let psi = &sol.psi[slot];
        let d: Vec<f64> = sc.user_pos.iter().map(|w| d3(q, w)).collect();
        for i in 0..k {
            up(&mut v.power_sign, -p[i]);
            up(&mut v.split, (-sol.rho[slot][i]).max(sol.rho[slot][i] - 1.0));
            for j in 0..k {
                if i == j {
                    continue;
                }
                let s = psi[i][j];
                up(&mut v.decoding_binary, s.min(1.0 - s).max(s - 1.0).max(-s));
                up(&mut v.decoding_sum, (s + psi[j][i] - 1.0).abs());
                // user j needs at least the power of anyone decoded before it
                up(&mut v.power_order, s * p[i] - p[j]);
                if s > 0.5 {
                    up(&mut v.distance_order, d[i] - d[j]);
                }
            }
            let xi = expected_gain(sc, q, &sol.theta[slot], i);
            let received = sol.rho[slot][i] * (total * xi + sc.sigma2[i]);
            let energy = sc.delta * sc.eh[i].harvest(received);
            if sc.chi_th > 0.0 {
                up(&mut v.energy, (sc.chi_th - energy) / sc.chi_th);
            }
        }
    }
    Ok(v)
}

/// Like [`check`] but turns a violation above `tol` into an error.
pub fn certify(sc: &Scenario, sol: &Solution, opts: CheckOptions, tol: f64) -> Result<Violations> {
    let v = check(sc, sol, opts)?;
    let (name, worst) = v.worst();
    if worst > tol {
        return Err(Error::Validation(format!("constraint `{name}` violated by {worst:.3e}")));
    }
    Ok(v)
}
