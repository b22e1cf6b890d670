//! Transmit power allocation by difference-of-concave SCA.
//!
//! Per slot the rate of user `k` is `ℓ̄_k − ℓ̃_k` with
//! `ℓ̄_k = log2((1−ρ_k)(Σ_i ψ_ik p_i ξ_k + σ²) + δ²)` (with `ψ_kk = 1`) and
//! `ℓ̃_k` the same expression without the own-signal term. Replacing `ℓ̃_k` by
//! its tangent gives a concave program; slots are independent.

use rayon::prelude::*;

use crate::convex::{self, Affine, Constraint, ConvexProgram, Start, Status, Tolerances};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::swipt::{expected_rate, harvest_demand, Noise};
use crate::ChannelMeans;

const REL_STOP: f64 = 1e-4;
const MAX_SCA: usize = 50;

/// Tangent of `ℓ̃_k` at `p_r` in the form `value + Σ_i grad_i (p_i − p_r,i)`,
/// in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBound {
    pub value: f64,
    pub grad: Vec<f64>,
    pub at: Vec<f64>,
}

impl LinearBound {
    pub fn eval(&self, p: &[f64]) -> f64 {
        self.value + self.grad.iter().zip(p.iter().zip(&self.at)).map(|(g, (p, r))| g * (p - r)).sum::<f64>()
    }
}

/// Interference term `ℓ̃_k` of one slot, in bits.
pub fn interference_term(k: usize, p: &[f64], rho: f64, psi: &[Vec<f64>], xi: f64, noise: Noise) -> f64 {
    let inner: f64 = (0..p.len()).filter(|&i| i != k).map(|i| psi[i][k] * p[i] * xi).sum();
    ((1.0 - rho) * (inner + noise.sigma2) + noise.delta2).log2()
}

/// First-order upper bound of `ℓ̃_k` around `p_r`.
pub fn linearize_interference(k: usize, p_r: &[f64], rho: f64, psi: &[Vec<f64>], xi: f64, noise: Noise) -> LinearBound {
    let inner: f64 = (0..p_r.len()).filter(|&i| i != k).map(|i| psi[i][k] * p_r[i] * xi).sum();
    let den = ((1.0 - rho) * (inner + noise.sigma2) + noise.delta2) * std::f64::consts::LN_2;
    let grad = (0..p_r.len())
        .map(|i| if i == k { 0.0 } else { (1.0 - rho) * psi[i][k] * xi / den })
        .collect();
    LinearBound { value: interference_term(k, p_r, rho, psi, xi, noise), grad, at: p_r.to_vec() }
}

/// Per-slot data the power step needs.
#[derive(Debug, Clone)]
pub struct SlotInput<'a> {
    pub rho: &'a [f64],
    pub psi: &'a [Vec<f64>],
    pub xi: &'a [f64],
}

fn slot_rate(sc: &Scenario, s: &SlotInput<'_>, p: &[f64]) -> f64 {
    (0..sc.k).map(|k| expected_rate(k, p, s.rho[k], s.psi, s.xi[k], sc.noise(k))).sum()
}

/// Convex surrogate of one slot in the scaled variables `x = p / P_max`.
/// The objective is in nats of the surrogate minus constants, so only its
/// maximiser matters.
fn build_slot(sc: &Scenario, s: &SlotInput<'_>, p_r: &[f64]) -> Result<ConvexProgram> {
    let kk = sc.k;
    let pm = sc.p_max;
    let mut prog = ConvexProgram::new(kk);
    let mut linear = Affine::default();
    for k in 0..kk {
        let rho = s.rho[k];
        if rho >= 1.0 {
            continue;
        }
        let noise = sc.noise(k);
        let base = (1.0 - rho) * noise.sigma2 + noise.delta2;
        // ln(1 + (1−ρ)ξ P Σ ψ x / base)
        let mut arg = Affine::constant(1.0);
        for i in 0..kk {
            let w = if i == k { 1.0 } else { s.psi[i][k] };
            if w != 0.0 {
                arg = arg.plus(i, (1.0 - rho) * w * s.xi[k] * pm / base);
            }
        }
        prog.objective.logs.push((1.0, arg));
        let lin = linearize_interference(k, p_r, rho, s.psi, s.xi[k], noise);
        for (i, g) in lin.grad.iter().enumerate() {
            if *g != 0.0 {
                linear = linear.plus(i, -g * std::f64::consts::LN_2 * pm);
            }
        }
    }
    prog.objective.linear = linear;

    let mut budget = Affine::constant(-1.0);
    for k in 0..kk {
        prog.add(Constraint::lower(k, 0.0));
        budget = budget.plus(k, 1.0);
        for i in 0..kk {
            if i != k && s.psi[i][k] > 0.0 {
                // ψ_ik x_i − x_k ≤ 0
                prog.add(Constraint::Affine(Affine::term(i, s.psi[i][k]).plus(k, -1.0)));
            }
        }
        let need = harvest_demand(sc, k)?;
        if need > 0.0 {
            if s.rho[k] <= 0.0 {
                return Err(Error::Infeasible {
                    slot: usize::MAX,
                    user: k,
                    reason: "energy demand with a zero split ratio".into(),
                });
            }
            // ρ(P ξ Σx + σ²) ≥ need, divided through by `need`
            let mut c = Affine::constant(1.0 - s.rho[k] * sc.sigma2[k] / need);
            for i in 0..kk {
                c = c.plus(i, -s.rho[k] * pm * s.xi[k] / need);
            }
            prog.add(Constraint::Affine(c));
        }
    }
    prog.add(Constraint::Affine(budget));
    Ok(prog)
}

/// Whether `p` satisfies the slot constraints within `tol` (relative for
/// energy and budget, absolute watts for ordering).
pub fn slot_feasible(sc: &Scenario, s: &SlotInput<'_>, p: &[f64], tol: f64) -> Result<bool> {
    let total: f64 = p.iter().sum();
    if p.iter().any(|v| *v < -tol) || total > sc.p_max * (1.0 + tol) {
        return Ok(false);
    }
    for k in 0..sc.k {
        for i in 0..sc.k {
            if i != k && s.psi[i][k] * p[i] > p[k] + tol * sc.p_max {
                return Ok(false);
            }
        }
        let need = harvest_demand(sc, k)?;
        if s.rho[k] * (total * s.xi[k] + sc.sigma2[k]) < need * (1.0 - tol) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outcome of the SCA loop of one slot.
#[derive(Debug, Clone)]
pub struct SlotPower {
    pub p: Vec<f64>,
    pub rate: f64,
    pub sca_iters: usize,
    pub solver_iters: usize,
}

pub fn solve_slot(sc: &Scenario, s: &SlotInput<'_>, start: &[f64], n: usize) -> Result<SlotPower> {
    let tol = Tolerances::default();
    let start_ok = slot_feasible(sc, s, start, 1e-9)?;
    let mut best_p = start.to_vec();
    let mut best = if start_ok { slot_rate(sc, s, start) } else { f64::NEG_INFINITY };
    let mut point = start.to_vec();
    let mut out = SlotPower { p: best_p.clone(), rate: best, sca_iters: 0, solver_iters: 0 };
    for _ in 0..MAX_SCA {
        let prog = build_slot(sc, s, &point).map_err(|e| tag_slot(e, n))?;
        let x0: Vec<f64> = point.iter().map(|v| v / sc.p_max).collect();
        let rep = convex::solve(&prog, Start::Scalars(&x0), &tol)?;
        out.sca_iters += 1;
        out.solver_iters += rep.iterations;
        if rep.status == Status::Infeasible {
            if best.is_finite() {
                break;
            }
            return Err(Error::Infeasible { slot: n, user: usize::MAX, reason: "power budget cannot meet the energy demand".into() });
        }
        let p: Vec<f64> = rep.x.iter().map(|x| (x * sc.p_max).max(0.0)).collect();
        let p = fit_budget(sc, p);
        let rate = slot_rate(sc, s, &p);
        let feasible = slot_feasible(sc, s, &p, 1e-7)?;
        if !feasible && best.is_finite() {
            break;
        }
        let improved = rate - best;
        if rate > best || !best.is_finite() {
            best = rate;
            best_p = p.clone();
        }
        point = p;
        if improved.is_finite() && improved <= REL_STOP * best.abs().max(1e-12) {
            break;
        }
    }
    out.p = best_p;
    out.rate = best;
    Ok(out)
}

/// Rescales `p` when solver round-off pushes it slightly over the budget.
fn fit_budget(sc: &Scenario, mut p: Vec<f64>) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    if total > sc.p_max {
        let s = sc.p_max / total;
        p.iter_mut().for_each(|v| *v *= s);
    }
    p
}

fn tag_slot(e: Error, n: usize) -> Error {
    match e {
        Error::Infeasible { user, reason, .. } => Error::Infeasible { slot: n, user, reason },
        e => e,
    }
}

/// Summary of a full power step.
#[derive(Debug, Clone, Default)]
pub struct PowerReport {
    pub sca_iters: usize,
    pub solver_iters: usize,
}

/// Optimises powers in every slot, starting from `start` (indexed `[n][k]`).
pub fn solve_power(
    sc: &Scenario,
    means: &ChannelMeans,
    psi: &[Vec<Vec<f64>>],
    rho: &[Vec<f64>],
    start: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, PowerReport)> {
    let slots: Vec<Result<SlotPower>> = (0..sc.n)
        .into_par_iter()
        .map(|n| {
            let s = SlotInput { rho: &rho[n], psi: &psi[n], xi: &means.xi[n] };
            solve_slot(sc, &s, &start[n], n)
        })
        .collect();
    let mut p = Vec::with_capacity(sc.n);
    let mut report = PowerReport::default();
    for s in slots {
        let s = s?;
        report.sca_iters += s.sca_iters;
        report.solver_iters += s.solver_iters;
        p.push(s.p);
    }
    Ok((p, report))
}

/// Equal split of the budget, the cold start.
pub fn equal_power(sc: &Scenario) -> Vec<Vec<f64>> {
    vec![vec![sc.p_max / sc.k as f64; sc.k]; sc.n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Params;
    use crate::swipt::order_from_distances;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn scenario(k: usize, chi: f64) -> Scenario {
        let params = Params::default()
            .with("K", k as f64)
            .unwrap()
            .with("N", 1.0)
            .unwrap()
            .with("T", 1.0)
            .unwrap()
            .with("chi_th", chi)
            .unwrap();
        let mut params = params;
        params.q_init = [240.0, 250.0];
        params.q_final = [240.0, 250.0];
        crate::generate_scenario(1, &params).unwrap()
    }

    fn noise() -> Noise {
        Noise { sigma2: 1e-11, delta2: 1e-11 }
    }

    #[test]
    fn tangent_is_tight_and_above() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let psi = order_from_distances(&[100.0, 120.0, 150.0]);
        for _ in 0..100 {
            let pr: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let rho = rng.random::<f64>() * 0.9;
            let xi = 1e-9 * (1.0 + rng.random::<f64>());
            for k in 0..3 {
                let lin = linearize_interference(k, &pr, rho, &psi, xi, noise());
                assert_relative_eq!(lin.eval(&pr), interference_term(k, &pr, rho, &psi, xi, noise()), epsilon = 1e-12);
                let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                assert!(lin.eval(&p) >= interference_term(k, &p, rho, &psi, xi, noise()) - 1e-12);
            }
        }
    }

    #[test]
    fn no_interferers_give_constant() {
        let psi = order_from_distances(&[300.0, 100.0]);
        let lin = linearize_interference(1, &[0.3, 0.5], 0.2, &psi, 1e-9, noise());
        assert!(lin.grad.iter().all(|g| *g == 0.0));
        assert_relative_eq!(lin.value, (0.8 * 1e-11 + 1e-11f64).log2(), max_relative = 1e-14);
    }

    #[test]
    fn single_user_takes_full_budget() {
        let sc = scenario(1, 1e-10);
        let psi = vec![vec![1.0]];
        let s = SlotInput { rho: &[0.3], psi: &psi, xi: &[4e-8] };
        let out = solve_slot(&sc, &s, &[sc.p_max * 0.5], 0).unwrap();
        assert_relative_eq!(out.p[0], sc.p_max, max_relative = 1e-6);
    }

    #[test]
    fn tied_pair_uses_full_budget() {
        let sc = scenario(2, 1e-10);
        // with equal gains the sum-rate depends only on the total power
        let psi = order_from_distances(&[100.0, 100.0]);
        let s = SlotInput { rho: &[0.2, 0.2], psi: &psi, xi: &[4e-8, 4e-8] };
        let out = solve_slot(&sc, &s, &[sc.p_max / 2.0; 2], 0).unwrap();
        assert!(out.p[1] >= out.p[0] - 1e-9);
        assert_relative_eq!(out.p[0] + out.p[1], sc.p_max, max_relative = 1e-6);
    }

    #[test]
    fn two_users_match_power_grid() {
        let sc = scenario(2, 1e-10);
        let psi = order_from_distances(&[100.0, 160.0]);
        let xi = [4e-8, 1.2e-8];
        let rho = [0.1, 0.2];
        let s = SlotInput { rho: &rho, psi: &psi, xi: &xi };
        let out = solve_slot(&sc, &s, &[sc.p_max / 2.0; 2], 0).unwrap();
        let mut best = f64::NEG_INFINITY;
        let g = 200;
        for a in 0..=g {
            for b in 0..=g {
                let p = [sc.p_max * a as f64 / g as f64, sc.p_max * b as f64 / g as f64];
                if slot_feasible(&sc, &s, &p, 0.0).unwrap() {
                    best = best.max(slot_rate(&sc, &s, &p));
                }
            }
        }
        assert!(out.rate >= best * 0.99, "{} vs grid {}", out.rate, best);
    }

    #[test]
    fn rate_never_drops_from_feasible_start() {
        let sc = scenario(3, 1e-10);
        let psi = order_from_distances(&[120.0, 100.0, 200.0]);
        let s = SlotInput { rho: &[0.05, 0.05, 0.3], psi: &psi, xi: &[2e-8, 3e-8, 1e-8] };
        let start = [sc.p_max / 3.0; 3];
        let before = slot_rate(&sc, &s, &start);
        let out = solve_slot(&sc, &s, &start, 0).unwrap();
        assert!(out.rate >= before - 1e-12);
        assert!(slot_feasible(&sc, &s, &out.p, 1e-7).unwrap());
    }

    #[test]
    fn unreachable_energy_is_reported() {
        let sc = scenario(1, 5e-8);
        let psi = vec![vec![1.0]];
        let s = SlotInput { rho: &[1e-3], psi: &psi, xi: &[1e-9] };
        assert!(matches!(solve_slot(&sc, &s, &[1.0], 4), Err(Error::Infeasible { slot: 4, .. })));
    }
}
