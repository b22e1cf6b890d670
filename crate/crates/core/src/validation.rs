//! Self-contained numerical verification suite.
//!
//! Every check compares production code against something computed a
//! different way: brute-force grids, Monte Carlo sampling, finite
//! differences or eigen-decompositions. Nothing here is called by the
//! optimizer.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{sample_channels, sampled_gain, LinkGeometry};
use crate::convex::{self, check_gradient, principal_eigen, trace_product, HMat};
use crate::error::Result;
use crate::irs::{self, SlotIrs};
use crate::power::{self, SlotInput};
use crate::rng::{substream, Stream};
use crate::scenario::{dist, Params, Scenario};
use crate::swipt::{decoding_order, expected_rate, harvest_demand, order_from_distances, Noise};
use crate::trajectory::{self, Fixed, Point, TrajectoryOptions};
use crate::{ChannelMeans, C64};

/// Outcome of one check. `measured` is an error that passes when it is at
/// most `tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    fn new(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: measured.is_finite() && measured <= tolerance,
            measured,
            tolerance,
            detail,
            seconds: 0.0,
        }
    }

    fn failed(name: &str, tolerance: f64, err: impl std::fmt::Display) -> Self {
        Self::new(name, f64::NAN, tolerance, format!("error: {err}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn timed(f: impl FnOnce() -> Vec<Check>) -> Vec<Check> {
    let t = Instant::now();
    let mut out = f();
    let s = t.elapsed().as_secs_f64();
    for c in &mut out {
        c.seconds = s;
    }
    out
}

fn unwrap_check(name: &str, tol: f64, r: Result<Check>) -> Check {
    r.unwrap_or_else(|e| Check::failed(name, tol, e))
}

/// Two users, three slots, four elements, with a 30 m hop between slots.
pub fn small_scenario() -> Result<Scenario> {
    let mut params = Params::default()
        .with("K", 2.0)?
        .with("M", 4.0)?
        .with("N", 3.0)?
        .with("T", 3.0)?
        .with("v_max", 40.0)?;
    params.q_init = [200.0, 250.0];
    params.q_final = [260.0, 250.0];
    params.users = Some(vec![[230.0, 300.0], [260.0, 180.0]]);
    crate::generate_scenario(5, &params)
}

/// Runs every check. `sc` drives the SCA-bound and gradient checks and must
/// be small (K ≤ 2, N ≤ 3, M ≤ 4 keeps the runtime low); the other checks
/// build their own instances. Checks run in parallel, the report order is
/// fixed.
pub fn verify_all(sc: &Scenario, seed: u64) -> Report {
    let t = Instant::now();
    type Job<'a> = Box<dyn Fn() -> Vec<Check> + Send + Sync + 'a>;
    let jobs: Vec<Job> = vec![
        Box::new(eh_exactness),
        Box::new(move || lemma1_monte_carlo(seed, 100_000, 10)),
        Box::new(move || sca_bounds(sc, seed, 100)),
        Box::new(|| vec![power_oracle()]),
        Box::new(move || vec![ps_oracle(seed)]),
        Box::new(irs_oracle),
        Box::new(|| vec![trajectory_oracle()]),
        Box::new(move || vec![lemma2_hessian(seed, 1000)]),
        Box::new(move || vec![rank_one_identity(seed, 200)]),
        Box::new(move || vec![gradient_check(sc, seed)]),
    ];
    let checks = jobs.par_iter().map(timed).collect::<Vec<_>>().into_iter().flatten().collect();
    Report { seed, checks, seconds: t.elapsed().as_secs_f64() }
}

/// EH curve endpoints and inverse round trip with the default parameters.
pub fn eh_exactness() -> Vec<Check> {
    let sc = match Scenario::from_params(&Params::default()) {
        Ok(s) => s,
        Err(e) => return vec![Check::failed("eh_exactness", 1e-9, e)],
    };
    let eh = sc.eh[0];
    let zero = eh.harvest(0.0).abs() / eh.xi;
    let sat = (eh.harvest(1e3) - eh.xi).abs() / eh.xi;
    let mut inv = 0.0f64;
    for i in 0..=1000 {
        let p = 0.1 * i as f64 / 1000.0;
        let err = match eh.inverse(eh.harvest(p)) {
            Ok(back) if p == 0.0 => back.abs(),
            Ok(back) => (back - p).abs() / p,
            Err(_) => f64::INFINITY,
        };
        inv = inv.max(err);
    }
    vec![
        Check::new("eh_zero", zero, 1e-9, format!("|Ξ(0)|/ξ with ξ={} W", eh.xi)),
        Check::new("eh_saturation", sat, 1e-9, "|Ξ(1 kW) − ξ|/ξ".into()),
        Check::new("eh_inverse_round_trip", inv, 1e-9, "max relative error on 1001 points in [0, 0.1] W".into()),
    ]
}

/// Rate of user `k` for one fading draw, straight from the SINR.
fn instantaneous_rate(k: usize, p: &[f64], rho: f64, psi: &[Vec<f64>], h: f64, noise: Noise) -> f64 {
    let interf: f64 = (0..p.len()).filter(|&i| i != k).map(|i| psi[i][k] * p[i] * h).sum();
    let sinr = (1.0 - rho) * p[k] * h / ((1.0 - rho) * (interf + noise.sigma2) + noise.delta2);
    (1.0 + sinr).log2()
}

/// Sample-average rate against the closed-form expected rate, default
/// parameters, `geometries` random UAV positions and phase vectors. The
/// first check is per user, the second per geometry on the sum-rate.
pub fn lemma1_monte_carlo(seed: u64, draws: usize, geometries: usize) -> Vec<Check> {
    const TOL: f64 = 0.05;
    let run = || -> Result<Vec<Check>> {
        let sc = crate::generate_scenario(seed, &Params::default())?;
        let per_geometry: Vec<Result<Vec<(f64, f64)>>> = (0..geometries)
            .into_par_iter()
            .map(|g| {
                let mut rng = substream(seed, Stream::Validation, 1000 + g as u64);
                let q = [rng.random::<f64>() * 500.0, rng.random::<f64>() * 500.0, sc.h_u];
                let theta: Vec<f64> = (0..sc.m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
                let rho: Vec<f64> = (0..sc.k).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
                let p = random_simplex(&mut rng, sc.k, sc.p_max);
                let d: Vec<f64> = sc.user_pos.iter().map(|w| dist(&q, w)).collect();
                let psi = order_from_distances(&d);
                let geo = LinkGeometry::new(&sc, &q)?;
                let mut acc = vec![0.0; sc.k];
                for _ in 0..draws {
                    let draw = sample_channels(&sc, &q, &mut rng);
                    for (k, a) in acc.iter_mut().enumerate() {
                        let h = sampled_gain(&draw, &geo.h_ui, &theta, k);
                        *a += instantaneous_rate(k, &p, rho[k], &psi, h, sc.noise(k));
                    }
                }
                // (Monte Carlo, closed form) per user
                Ok(acc
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let xi = geo.terms(&sc, &theta, k).xi;
                        (a / draws as f64, expected_rate(k, &p, rho[k], &psi, xi, sc.noise(k)))
                    })
                    .collect())
            })
            .collect();
        let (mut worst, mut at, mut mean, mut count, mut sum_worst) = (0.0f64, 0.0, 0.0, 0usize, 0.0f64);
        for g in per_geometry {
            let g = g?;
            for (mc, closed) in &g {
                let e = (mc - closed).abs() / mc.abs().max(1e-12);
                mean += e;
                count += 1;
                if e > worst {
                    worst = e;
                    at = *mc;
                }
            }
            let mc: f64 = g.iter().map(|v| v.0).sum();
            let closed: f64 = g.iter().map(|v| v.1).sum();
            sum_worst = sum_worst.max((mc - closed).abs() / mc.abs().max(1e-12));
        }
        mean /= count.max(1) as f64;
        Ok(vec![
            Check::new(
                "lemma1_monte_carlo",
                worst,
                TOL,
                format!(
                    "{geometries} geometries × {} users, {draws} draws; mean {mean:.4}, worst at E{{R}} = {at:.3} bits",
                    sc.k
                ),
            ),
            Check::new("lemma1_monte_carlo_sum_rate", sum_worst, TOL, "worst geometry, slot sum-rate".into()),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::failed("lemma1_monte_carlo", TOL, e)])
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize, total: f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v *= total / s);
    p
}

fn random_elliptope(rng: &mut ChaCha8Rng, d: usize) -> HMat {
    let h = HMat::from_fn(d, d, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    convex::project_unit_diag_psd(&(&h + h.adjoint())).unwrap_or_else(|_| HMat::identity(d, d))
}

/// Tightness and one-sidedness of all four SCA bounds over `states` random
/// expansion points.
pub fn sca_bounds(sc: &Scenario, seed: u64, states: usize) -> Vec<Check> {
    const TIGHT: f64 = 1e-8;
    const SIDE: f64 = 1e-12;
    let mut out = Vec::new();

    // trajectory: surrogate ≤ exact, equal at the expansion point
    let traj = || -> Result<(f64, f64)> {
        let mut tight = 0.0f64;
        let mut side = f64::NEG_INFINITY;
        let opts = TrajectoryOptions::default();
        for s in 0..states {
            let mut rng = substream(seed, Stream::Validation, 2000 + s as u64);
            let mut q = trajectory::straight_line(sc);
            for row in q.iter_mut().take(sc.n.saturating_sub(1)).skip(1) {
                row[0] += 15.0 * (rng.random::<f64>() - 0.5);
                row[1] += 15.0 * (rng.random::<f64>() - 0.5);
            }
            trajectory::repair_speed(&mut q, sc.q_init, sc.q_final, sc.step_len());
            let mut psi = decoding_order(sc, &q);
            for m in psi.iter_mut() {
                for i in 0..sc.k {
                    for k in i + 1..sc.k {
                        let v: f64 = rng.random();
                        m[i][k] = v;
                        m[k][i] = 1.0 - v;
                    }
                }
            }
            let p: Vec<Vec<f64>> = (0..sc.n).map(|_| random_simplex(&mut rng, sc.k, sc.p_max)).collect();
            let rho: Vec<Vec<f64>> = (0..sc.n).map(|_| (0..sc.k).map(|_| 0.1 + 0.5 * rng.random::<f64>()).collect()).collect();
            let theta: Vec<Vec<f64>> =
                (0..sc.n).map(|_| (0..sc.m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect()).collect();
            let tau = 5.0 * rng.random::<f64>();
            let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
            let point = Point { q, psi };
            let p23 = trajectory::build_p23(sc, fixed, &point, tau, &opts)?;
            let exact0 = p23.exact_value(&p23.x0);
            let truth = trajectory::penalized_objective(sc, fixed, &point, tau)?;
            let scale = exact0.abs().max(1.0);
            tight = tight.max((p23.surrogate_value(&p23.x0) - exact0).abs() / scale);
            tight = tight.max((truth - exact0).abs() / scale);
            let mut x: Vec<f64> = p23.x0.iter().map(|v| v * (1.0 + 0.3 * (rng.random::<f64>() - 0.5))).collect();
            for n in 0..sc.n {
                for i in 0..sc.k {
                    for k in i + 1..sc.k {
                        x[p23.layout.pair(n, i, k)] = rng.random();
                    }
                }
            }
            side = side.max(p23.surrogate_value(&x) - p23.exact_value(&x));
        }
        Ok((tight, side))
    };
    match traj() {
        Ok((t, s)) => {
            out.push(Check::new("trajectory_surrogate_tangent", t, TIGHT, format!("{states} states, relative")));
            out.push(Check::new("trajectory_surrogate_minorant", s, SIDE, "max surrogate − exact (bits)".into()));
        }
        Err(e) => out.push(Check::failed("trajectory_surrogate", TIGHT, e)),
    }

    // power: tangent of the interference log is an upper bound
    let mut tight = 0.0f64;
    let mut side = f64::NEG_INFINITY;
    for s in 0..states {
        let mut rng = substream(seed, Stream::Validation, 3000 + s as u64);
        let k_users = 3;
        let d: Vec<f64> = (0..k_users).map(|_| 50.0 + 200.0 * rng.random::<f64>()).collect();
        let psi = order_from_distances(&d);
        let (f1, f2): (f64, f64) = (rng.random(), rng.random());
        let p_r = random_simplex(&mut rng, k_users, sc.p_max * f1);
        let p = random_simplex(&mut rng, k_users, sc.p_max * f2);
        let rho = 0.9 * rng.random::<f64>();
        let xi = 1e-9 * (1.0 + 10.0 * rng.random::<f64>());
        for k in 0..k_users {
            let noise = Noise { sigma2: sc.sigma2[0], delta2: sc.delta2[0] };
            let lin = power::linearize_interference(k, &p_r, rho, &psi, xi, noise);
            let at = power::interference_term(k, &p_r, rho, &psi, xi, noise);
            tight = tight.max((lin.eval(&p_r) - at).abs() / at.abs().max(1.0));
            side = side.max(power::interference_term(k, &p, rho, &psi, xi, noise) - lin.eval(&p));
        }
    }
    out.push(Check::new("power_interference_tangent", tight, TIGHT, format!("{states} states, relative")));
    out.push(Check::new("power_interference_majorant", side, SIDE, "max exact − bound (bits)".into()));

    // IRS: interference-log majorant and spectral-norm minorant
    let irs_checks = || -> Result<[f64; 4]> {
        let (mut t1, mut s1, mut t2, mut s2) = (0.0f64, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
        for s in 0..states {
            let mut rng = substream(seed, Stream::Validation, 4000 + s as u64);
            let q = vec![[500.0 * rng.random::<f64>(), 500.0 * rng.random::<f64>(), sc.h_u]; 1];
            let means = ChannelMeans::compute(sc, &q, &[vec![0.0; sc.m]])?;
            let psi = decoding_order(sc, &q);
            let p = random_simplex(&mut rng, sc.k, sc.p_max);
            let rho: Vec<f64> = (0..sc.k).map(|_| 0.9 * rng.random::<f64>()).collect();
            let slot = SlotIrs::new(&means, 0, &p, &rho, &psi[0]);
            let b_r = random_elliptope(&mut rng, slot.dim());
            let b = random_elliptope(&mut rng, slot.dim());
            for k in 0..sc.k {
                let (v, g) = irs::linearize_interference(sc, &slot, k, &b_r);
                let at = slot.interference_log(sc, k, &b_r);
                t1 = t1.max((v - at).abs() / at.abs().max(1.0));
                let ub = v + trace_product(&g, &b) - trace_product(&g, &b_r);
                s1 = s1.max(slot.interference_log(sc, k, &b) - ub);
            }
            let (lam, uu) = irs::spectral_lower_bound(&b_r);
            let top = top_eigenvalue(&b_r);
            t2 = t2.max((lam - top).abs() / top);
            t2 = t2.max((trace_product(&uu, &b_r) - top).abs() / top);
            s2 = s2.max(trace_product(&uu, &b) - top_eigenvalue(&b));
        }
        Ok([t1, s1, t2, s2])
    };
    match irs_checks() {
        Ok([t1, s1, t2, s2]) => {
            out.push(Check::new("irs_interference_tangent", t1, TIGHT, format!("{states} states, relative")));
            out.push(Check::new("irs_interference_majorant", s1, SIDE, "max exact − bound (bits)".into()));
            out.push(Check::new("spectral_norm_tangent", t2, TIGHT, "relative to the largest eigenvalue".into()));
            out.push(Check::new("spectral_norm_minorant", s2, 1e-10, "max bound − ‖B‖₂".into()));
        }
        Err(e) => out.push(Check::failed("irs_bounds", TIGHT, e)),
    }
    out
}

/// Largest eigenvalue by a full Hermitian eigen-decomposition.
fn top_eigenvalue(b: &HMat) -> f64 {
    b.clone().symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn power_scenario() -> Result<Scenario> {
    let mut params = Params::default().with("K", 2.0)?.with("N", 1.0)?.with("T", 1.0)?.with("chi_th", 1e-10)?;
    params.q_init = [240.0, 250.0];
    params.q_final = [240.0, 250.0];
    crate::generate_scenario(1, &params)
}

/// Two-user single-slot power step against a 200×200 grid.
pub fn power_oracle() -> Check {
    const NAME: &str = "power_grid_oracle";
    const TOL: f64 = 0.01;
    let run = || -> Result<Check> {
        let sc = power_scenario()?;
        let psi = order_from_distances(&[100.0, 160.0]);
        let xi = [4e-8, 1.2e-8];
        let rho = [0.1, 0.2];
        let s = SlotInput { rho: &rho, psi: &psi, xi: &xi };
        let got = power::solve_slot(&sc, &s, &[sc.p_max / 2.0; 2], 0)?;
        let rate = |p: &[f64]| -> f64 {
            (0..2).map(|k| instantaneous_rate(k, p, rho[k], &psi, xi[k], sc.noise(k))).sum()
        };
        let need: Vec<f64> = (0..2).map(|k| harvest_demand(&sc, k)).collect::<Result<_>>()?;
        let ok = |p: &[f64]| {
            let tot = p[0] + p[1];
            tot <= sc.p_max * (1.0 + 1e-12)
                && p[1] >= psi[0][1] * p[0]
                && p[0] >= psi[1][0] * p[1]
                && (0..2).all(|k| rho[k] * (tot * xi[k] + sc.sigma2[k]) >= need[k])
        };
        let g = 200;
        let mut best = f64::NEG_INFINITY;
        for a in 0..=g {
            for b in 0..=g {
                let p = [sc.p_max * a as f64 / g as f64, sc.p_max * b as f64 / g as f64];
                if ok(&p) {
                    best = best.max(rate(&p));
                }
            }
        }
        let mine = rate(&got.p);
        Ok(Check::new(NAME, ((best - mine) / best).max(0.0), TOL, format!("solver {mine:.6} vs grid {best:.6} bits")))
    };
    unwrap_check(NAME, TOL, run())
}

/// Closed-form split ratio against golden-section search of the rate over
/// the energy-feasible interval, whose left end is found by bisection on the
/// forward EH curve.
pub fn ps_oracle(seed: u64) -> Check {
    const NAME: &str = "ps_golden_section";
    const TOL: f64 = 1e-6;
    let run = || -> Result<Check> {
        let base = power_scenario()?;
        let mut worst = 0.0f64;
        for s in 0..50 {
            let mut rng = substream(seed, Stream::Validation, 5000 + s);
            let mut sc = base.clone();
            let xi = 1e-9 * (1.0 + 20.0 * rng.random::<f64>());
            let frac = 0.2 + 0.8 * rng.random::<f64>();
            let p = random_simplex(&mut rng, 2, sc.p_max * frac);
            let tot: f64 = p.iter().sum();
            let psi = order_from_distances(&[100.0, 100.0 + 50.0 * rng.random::<f64>()]);
            // pick a threshold that makes the target ratio active
            let target = 0.05 + 0.9 * rng.random::<f64>();
            let k = (s % 2) as usize;
            sc.chi_th = sc.delta * sc.eh[k].harvest(target * (tot * xi + sc.sigma2[k]));
            let closed = crate::ps::optimal_ratio(&sc, k, tot, xi)?;

            let energy = |r: f64| sc.delta * sc.eh[k].harvest(r * (tot * xi + sc.sigma2[k]));
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if energy(mid) >= sc.chi_th {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let rate = |r: f64| expected_rate(k, &p, r, &psi, xi, sc.noise(k));
            let (mut a, mut b) = (hi, 1.0);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            while b - a > 1e-12 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if rate(c) >= rate(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            worst = worst.max((closed - 0.5 * (a + b)).abs());
        }
        Ok(Check::new(NAME, worst, TOL, "max |ρ* − ρ_search| over 50 states".into()))
    };
    unwrap_check(NAME, TOL, run())
}

fn irs_slot(k: usize, m: usize) -> Result<(Scenario, SlotIrs)> {
    let mut params = Params::default().with("M", m as f64)?.with("N", 1.0)?.with("T", 1.0)?;
    params.q_init = [250.0, 80.0];
    params.q_final = [250.0, 80.0];
    params.num_users = k;
    params.users = Some(vec![[250.0, 60.0], [320.0, 120.0]][..k].to_vec());
    let sc = crate::generate_scenario(1, &params)?;
    let q = vec![[250.0, 80.0, sc.h_u]];
    let means = ChannelMeans::compute(&sc, &q, &[vec![0.0; m]])?;
    let psi = decoding_order(&sc, &q);
    let p: Vec<f64> = (0..k).map(|i| sc.p_max * (i + 1) as f64 / (k * (k + 1) / 2) as f64).collect();
    let slot = SlotIrs::new(&means, 0, &p, &vec![0.1; k], &psi[0]);
    Ok((sc, slot))
}

/// Sum-rate of one slot from first principles.
fn irs_slot_rate(sc: &Scenario, slot: &SlotIrs, theta: &[f64]) -> f64 {
    let q = [250.0, 80.0, sc.h_u];
    (0..sc.k)
        .map(|k| {
            let xi = crate::feasibility::expected_gain(sc, &q, theta, k);
            instantaneous_rate(k, &slot.p, slot.rho[k], &slot.psi, xi, sc.noise(k))
        })
        .sum()
}

/// Phase step with one and two elements against exhaustive phase grids.
pub fn irs_oracle() -> Vec<Check> {
    const TOL: f64 = 0.01;
    let cases: [(&str, usize, usize); 3] = [("irs_grid_m1", 1, 1), ("irs_grid_m2", 1, 2), ("irs_grid_m2_two_users", 2, 2)];
    cases
        .iter()
        .map(|&(name, k, m)| {
            let run = || -> Result<Check> {
                let (sc, slot) = irs_slot(k, m)?;
                let start = vec![0.5; m];
                let (th, _) = irs::solve_slot(&sc, &slot, &start, 0, 0, &irs::IrsOptions::default())?;
                let (g, best) = if m == 1 {
                    (360, (0..360).map(|i| irs_slot_rate(&sc, &slot, &[(i as f64).to_radians()])).fold(f64::MIN, f64::max))
                } else {
                    let step = std::f64::consts::TAU / 64.0;
                    let mut best = f64::MIN;
                    for i in 0..64 {
                        for j in 0..64 {
                            best = best.max(irs_slot_rate(&sc, &slot, &[i as f64 * step, j as f64 * step]));
                        }
                    }
                    (64, best)
                };
                let got = irs_slot_rate(&sc, &slot, &th);
                Ok(Check::new(name, ((best - got) / best).max(0.0), TOL, format!("{got:.6} vs {g}-point grid {best:.6}")))
            };
            unwrap_check(name, TOL, run())
        })
        .collect()
}

/// Two users, three slots: the trajectory step against a 21×21 grid of the
/// middle position with both decoding orders.
pub fn trajectory_oracle() -> Check {
    const NAME: &str = "trajectory_grid_oracle";
    const TOL: f64 = 0.02;
    let run = || -> Result<Check> {
        let sc = small_scenario()?;
        let p = vec![vec![sc.p_max / 2.0; 2]; sc.n];
        let rho = vec![vec![0.2; 2]; sc.n];
        let theta: Vec<Vec<f64>> = (0..sc.n).map(|n| (0..sc.m).map(|m| 0.4 * (m + n) as f64).collect()).collect();
        let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
        let q = trajectory::straight_line(&sc);
        let start = Point { psi: decoding_order(&sc, &q), q };
        let (out, _) = trajectory::solve_trajectory_sic(&sc, fixed, &start, &TrajectoryOptions::default())?;
        let need: Vec<f64> = (0..2).map(|k| harvest_demand(&sc, k)).collect::<Result<_>>()?;

        let total = |q: &[[f64; 3]], psi: &[Vec<Vec<f64>>]| -> Option<f64> {
            let mut r = 0.0;
            for n in 0..sc.n {
                for k in 0..2 {
                    let xi = crate::feasibility::expected_gain(&sc, &q[n], &theta[n], k);
                    if rho[n][k] * (p[n].iter().sum::<f64>() * xi + sc.sigma2[k]) < need[k] {
                        return None;
                    }
                    r += instantaneous_rate(k, &p[n], rho[n][k], &psi[n], xi, sc.noise(k));
                }
            }
            Some(r)
        };
        let got = total(&out.q, &out.psi).unwrap_or(f64::NEG_INFINITY);

        let r = sc.step_len();
        let (a, b) = (sc.q_init, sc.q_final);
        let mut best = f64::NEG_INFINITY;
        let g = 20;
        for ix in 0..=g {
            for iy in 0..=g {
                let x = 0.5 * (a[0] + b[0]) - r + 2.0 * r * ix as f64 / g as f64;
                let y = 0.5 * (a[1] + b[1]) - r + 2.0 * r * iy as f64 / g as f64;
                let mid = [x, y, sc.h_u];
                if dist(&mid, &a) > r || dist(&mid, &b) > r {
                    continue;
                }
                let q = vec![a, mid, b];
                let (d0, d1) = (dist(&mid, &sc.user_pos[0]), dist(&mid, &sc.user_pos[1]));
                for first in 0..2 {
                    // user `first` is decoded first, which needs it no farther away
                    let (df, ds) = if first == 0 { (d0, d1) } else { (d1, d0) };
                    if df > ds {
                        continue;
                    }
                    let mut psi = decoding_order(&sc, &q);
                    psi[1][first][1 - first] = 1.0;
                    psi[1][1 - first][first] = 0.0;
                    if let Some(v) = total(&q, &psi) {
                        best = best.max(v);
                    }
                }
            }
        }
        Ok(Check::new(NAME, ((best - got) / best).max(0.0), TOL, format!("{got:.6} vs grid {best:.6} bits")))
    };
    unwrap_check(NAME, TOL, run())
}

/// Central-difference Hessian in log-scaled coordinates: entry `(i, j)` is
/// `x_i x_j ∂²f/∂x_i∂x_j`, which has the same inertia as the Hessian.
fn scaled_hessian(f: &dyn Fn(f64, f64) -> f64, x: [f64; 2]) -> [[f64; 2]; 2] {
    let eta = 1e-4;
    let at = |u: f64, v: f64| f(x[0] * (1.0 + u * eta), x[1] * (1.0 + v * eta));
    let h00 = (at(1.0, 0.0) - 2.0 * at(0.0, 0.0) + at(-1.0, 0.0)) / (eta * eta);
    let h11 = (at(0.0, 1.0) - 2.0 * at(0.0, 0.0) + at(0.0, -1.0)) / (eta * eta);
    let h01 = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * eta * eta);
    [[h00, h01], [h01, h11]]
}

fn min_eig_normalized(h: [[f64; 2]; 2]) -> f64 {
    let (a, b, c) = (h[0][0], h[0][1], h[1][1]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let norm = (a * a + 2.0 * b * b + c * c).sqrt();
    (mean - rad) / norm.max(1e-300)
}

/// Joint convexity of `g1 = a1 x1^{−α} + a2 x2^{−2}` and
/// `g2 = a3 x1^{−α/2} x2^{−1}` on random positive points.
pub fn lemma2_hessian(seed: u64, samples: usize) -> Check {
    let alpha = Params::default().alpha;
    let mut rng = substream(seed, Stream::Validation, 6000);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let mut u = || 0.5 + 1.5 * rng.random::<f64>();
        let (a1, a2, a3) = (u(), u(), u());
        let x = [u(), u()];
        let g1 = move |x1: f64, x2: f64| a1 * x1.powf(-alpha) + a2 * x2.powi(-2);
        let g2 = move |x1: f64, x2: f64| a3 * x1.powf(-alpha / 2.0) * x2.powi(-1);
        worst = worst.min(min_eig_normalized(scaled_hessian(&g1, x)));
        worst = worst.min(min_eig_normalized(scaled_hessian(&g2, x)));
    }
    Check::new(
        "lemma2_hessian",
        -worst,
        1e-10,
        format!("min normalized Hessian eigenvalue {worst:.3e} over {samples} points, α = {alpha}"),
    )
}

fn random_unitary(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<C64> {
    let g = DMatrix::from_fn(d, d, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    g.qr().q()
}

/// `tr B − ‖B‖₂ = 0` exactly for rank-one PSD matrices, checked against the
/// numeric rank from the eigenvalues.
pub fn rank_one_identity(seed: u64, samples: usize) -> Check {
    let mut rng = substream(seed, Stream::Validation, 7000);
    let d = 5;
    let mut mismatches = 0usize;
    let (mut max_one, mut min_many) = (0.0f64, f64::INFINITY);
    for s in 0..samples {
        let rank = 1 + s % 4;
        let u = random_unitary(&mut rng, d);
        let lam: Vec<f64> = (0..d).map(|i| if i < rank { 0.5 + 1.5 * rng.random::<f64>() } else { 0.0 }).collect();
        let diag = DMatrix::from_fn(d, d, |i, j| if i == j { C64::new(lam[i], 0.0) } else { C64::new(0.0, 0.0) });
        let b = &u * diag * u.adjoint();
        let b = (&b + b.adjoint()) * C64::new(0.5, 0.0);
        let eig = b.clone().symmetric_eigenvalues();
        let top = eig.iter().cloned().fold(0.0, f64::max);
        let numeric_rank = eig.iter().filter(|e| **e > 1e-9 * top).count();
        let tr: f64 = (0..d).map(|i| b[(i, i)].re).sum();
        let gap = (tr - principal_eigen(&b).0) / tr;
        let says_one = gap.abs() <= 1e-9;
        if says_one != (numeric_rank == 1) {
            mismatches += 1;
        }
        if numeric_rank == 1 {
            max_one = max_one.max(gap.abs());
        } else {
            min_many = min_many.min(gap);
        }
    }
    Check::new(
        "rank_one_trace_gap",
        mismatches as f64,
        0.0,
        format!("{samples} samples of rank 1..4; max gap at rank 1 {max_one:.2e}, min gap above {min_many:.2e}"),
    )
}

/// Analytic gradients of the trajectory and phase programs against finite
/// differences.
pub fn gradient_check(sc: &Scenario, seed: u64) -> Check {
    const NAME: &str = "gradient_check";
    const TOL: f64 = 1e-5;
    let run = || -> Result<Check> {
        let mut rng = substream(seed, Stream::Validation, 8000);
        let q = trajectory::straight_line(sc);
        let p = vec![vec![sc.p_max / sc.k as f64; sc.k]; sc.n];
        let rho = vec![vec![0.3; sc.k]; sc.n];
        let theta: Vec<Vec<f64>> =
            (0..sc.n).map(|_| (0..sc.m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect()).collect();
        let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
        let point = Point { psi: decoding_order(sc, &q), q };
        let p23 = trajectory::build_p23(sc, fixed, &point, 1.0, &TrajectoryOptions::default())?;
        let e1 = check_gradient(&p23.program, &p23.x0, None);

        let means = ChannelMeans::compute(sc, &point.q, &theta)?;
        let slot = SlotIrs::new(&means, 0, &p[0], &rho[0], &point.psi[0]);
        let b_r = random_elliptope(&mut rng, slot.dim());
        let (prog, _) = irs::build_p52(sc, &slot, &b_r, 0.1)?;
        let e2 = check_gradient(&prog, &[], Some(&b_r));
        Ok(Check::new(NAME, e1.max(e2), TOL, format!("trajectory {e1:.2e}, phases {e2:.2e}")))
    };
    unwrap_check(NAME, TOL, run())
}
