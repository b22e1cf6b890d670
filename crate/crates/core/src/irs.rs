//! IRS reflection phases.
//!
//! The direct link is folded into the reflection vector as an extra element
//! with fixed phase, `b̄ = [1; e^{jθ}]` and `ā_k = [ĥ_UU,k; a_k]`, so the gain
//! is `ξ_k = ϖ_k + tr(Ā_k B̄)` with `B̄ = b̄ b̄ᴴ`. Each slot is relaxed to the
//! unit-diagonal PSD cone, the rank-one requirement becomes the penalty
//! `ς (tr B̄ − ‖B̄‖₂)`, and the interference log and spectral norm are
//! linearised around the current matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::convex::{self, principal_eigen, Affine, Constraint, ConvexProgram, HMat, Start, Status, Tolerances};
use crate::error::Result;
use crate::rng::{substream, Stream};
use crate::scenario::Scenario;
use crate::swipt::{expected_rate, harvest_demand};
use crate::{ChannelMeans, C64};

const RANDOMIZATIONS: usize = 50;

/// Everything one slot's phase problem depends on.
#[derive(Debug, Clone)]
pub struct SlotIrs {
    /// `ā_k` for each user, length `M + 1`.
    pub abar: Vec<Vec<C64>>,
    pub varpi: Vec<f64>,
    pub p: Vec<f64>,
    pub rho: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
}

impl SlotIrs {
    pub fn new(means: &ChannelMeans, n: usize, p: &[f64], rho: &[f64], psi: &[Vec<f64>]) -> Self {
        let abar = (0..p.len())
            .map(|k| {
                let mut v = Vec::with_capacity(means.h_ui[n].len() + 1);
                v.push(C64::new(means.h_uu[n][k], 0.0));
                v.extend(means.h_iu[k].iter().zip(&means.h_ui[n]).map(|(g, h)| g * h.conj()));
                v
            })
            .collect();
        Self { abar, varpi: means.varpi[n].clone(), p: p.to_vec(), rho: rho.to_vec(), psi: psi.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.abar[0].len()
    }

    /// `Ā_k = ā_k ā_kᴴ`.
    pub fn gain_matrix(&self, k: usize) -> HMat {
        let a = &self.abar[k];
        HMat::from_fn(a.len(), a.len(), |i, j| a[i] * a[j].conj())
    }

    pub fn xi(&self, k: usize, theta: &[f64]) -> f64 {
        let a = &self.abar[k];
        let amp: C64 = a[0].conj() + a[1..].iter().zip(theta).map(|(a, t)| a.conj() * C64::from_polar(1.0, *t)).sum::<C64>();
        self.varpi[k] + amp.norm_sqr()
    }

    pub fn xi_relaxed(&self, k: usize, b: &HMat) -> f64 {
        self.varpi[k] + convex::trace_product(&self.gain_matrix(k), b)
    }

    fn rate_from(&self, sc: &Scenario, xi: impl Fn(usize) -> f64) -> f64 {
        (0..self.p.len()).map(|k| expected_rate(k, &self.p, self.rho[k], &self.psi, xi(k), sc.noise(k))).sum()
    }

    /// Slot sum-rate (bits) with phases `theta`.
    pub fn rate(&self, sc: &Scenario, theta: &[f64]) -> f64 {
        self.rate_from(sc, |k| self.xi(k, theta))
    }

    pub fn rate_relaxed(&self, sc: &Scenario, b: &HMat) -> f64 {
        self.rate_from(sc, |k| self.xi_relaxed(k, b))
    }

    fn energy_from(&self, sc: &Scenario, xi: impl Fn(usize) -> f64, slack: f64) -> Result<bool> {
        let total: f64 = self.p.iter().sum();
        for k in 0..self.p.len() {
            let need = harvest_demand(sc, k)?;
            if self.rho[k] * (total * xi(k) + sc.sigma2[k]) < need * (1.0 - slack) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn energy_ok(&self, sc: &Scenario, theta: &[f64]) -> Result<bool> {
        self.energy_from(sc, |k| self.xi(k, theta), 1e-9)
    }

    /// Interference log `ῑ̃_k` in bits at a relaxed point.
    pub fn interference_log(&self, sc: &Scenario, k: usize, b: &HMat) -> f64 {
        let (c1, c0) = self.interference_coeffs(sc, k);
        (c1 * convex::trace_product(&self.gain_matrix(k), b) + c0).log2()
    }

    /// `(c1, c0)` with `ῑ̃_k = log2(c1 tr(Ā_k B̄) + c0)`.
    fn interference_coeffs(&self, sc: &Scenario, k: usize) -> (f64, f64) {
        let noise = sc.noise(k);
        let one_m = 1.0 - self.rho[k];
        let c1 = one_m * (0..self.p.len()).filter(|&i| i != k).map(|i| self.psi[i][k] * self.p[i]).sum::<f64>();
        (c1, c1 * self.varpi[k] + one_m * noise.sigma2 + noise.delta2)
    }

    fn signal_coeffs(&self, sc: &Scenario, k: usize) -> (f64, f64) {
        let noise = sc.noise(k);
        let one_m = 1.0 - self.rho[k];
        let c1 = one_m * (0..self.p.len()).map(|i| if i == k { self.p[k] } else { self.psi[i][k] * self.p[i] }).sum::<f64>();
        (c1, c1 * self.varpi[k] + one_m * noise.sigma2 + noise.delta2)
    }
}

/// First-order upper bound of `ῑ̃_k` around `b_r` as `value + tr(G (B − B_r))`.
pub fn linearize_interference(sc: &Scenario, slot: &SlotIrs, k: usize, b_r: &HMat) -> (f64, HMat) {
    let (c1, c0) = slot.interference_coeffs(sc, k);
    let a = slot.gain_matrix(k);
    let t = convex::trace_product(&a, b_r);
    let g = a * C64::new(c1 / ((c1 * t + c0) * std::f64::consts::LN_2), 0.0);
    ((c1 * t + c0).log2(), g)
}

/// Tangent minorant of the spectral norm: `‖B_r‖₂ + uᴴ (B − B_r) u = uᴴ B u`.
pub fn spectral_lower_bound(b_r: &HMat) -> (f64, HMat) {
    let (lambda, u) = principal_eigen(b_r);
    (lambda, &u * u.adjoint())
}

/// Rank-one gap `tr B − ‖B‖₂`.
pub fn rank_gap(b: &HMat) -> f64 {
    let tr: f64 = (0..b.nrows()).map(|i| b[(i, i)].re).sum();
    tr - principal_eigen(b).0
}

/// Convex surrogate of one slot, in bits. Returns the program and the
/// constant dropped from its objective.
pub fn build_p52(sc: &Scenario, slot: &SlotIrs, b_r: &HMat, varsigma: f64) -> Result<(ConvexProgram, f64)> {
    let d = slot.dim();
    let mut prog = ConvexProgram::with_psd(d);
    let inv_ln2 = 1.0 / std::f64::consts::LN_2;
    let mut linear = HMat::zeros(d, d);
    let mut constant = 0.0;
    let total: f64 = slot.p.iter().sum();
    for k in 0..slot.p.len() {
        let a = slot.gain_matrix(k);
        let (s1, s0) = slot.signal_coeffs(sc, k);
        if s1 > 0.0 {
            // log2(s0 + s1 t) = log2(s0) + log2(1 + (s1/s0) t)
            constant += s0.log2();
            prog.objective.logs.push((inv_ln2, Affine::matrix(&a * C64::new(s1 / s0, 0.0), 1.0)));
        } else {
            constant += s0.log2();
        }
        let (value, g) = linearize_interference(sc, slot, k, b_r);
        constant -= value - convex::trace_product(&g, b_r);
        linear -= g;
        let need = harvest_demand(sc, k)?;
        if need > 0.0 {
            let rho = slot.rho[k];
            prog.add(Constraint::Affine(Affine::matrix(
                &a * C64::new(-rho * total / need, 0.0),
                1.0 - rho * (total * slot.varpi[k] + sc.sigma2[k]) / need,
            )));
        }
    }
    // −ς (tr B − uᴴ B u) with tr B = d on the feasible set
    let (_, uu) = spectral_lower_bound(b_r);
    linear += uu * C64::new(varsigma, 0.0);
    constant -= varsigma * d as f64;
    prog.objective.linear = Affine::matrix(linear, 0.0);
    Ok((prog, constant))
}

/// Phases from the principal eigenvector, relative to the direct-link
/// element.
pub fn principal_phases(b: &HMat) -> Vec<f64> {
    let (_, u) = principal_eigen(b);
    phases_of(u.as_slice())
}

fn phases_of(v: &[C64]) -> Vec<f64> {
    let r = v[0].arg();
    v[1..].iter().map(|z| (z.arg() - r).rem_euclid(std::f64::consts::TAU)).collect()
}

/// Eigenvector phases, plus Gaussian randomisation when there is more than
/// one user; returns the candidate with the largest slot rate among those
/// meeting the energy demand, or `None` if none does.
pub fn recover_phases(sc: &Scenario, slot: &SlotIrs, b: &HMat, rng: &mut ChaCha8Rng) -> Result<Option<Vec<f64>>> {
    let mut cands = vec![principal_phases(b)];
    if slot.p.len() > 1 {
        let eig = b.clone().symmetric_eigen();
        let d = b.nrows();
        let roots: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
        for _ in 0..RANDOMIZATIONS {
            let g: Vec<C64> = (0..d)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                })
                .collect();
            let z: Vec<C64> = (0..d)
                .map(|i| (0..d).map(|j| eig.eigenvectors[(i, j)] * C64::new(roots[j], 0.0) * g[j]).sum())
                .collect();
            if z[0].norm() > 0.0 {
                cands.push(phases_of(&z));
            }
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for th in cands {
        if !slot.energy_ok(sc, &th)? {
            continue;
        }
        let r = slot.rate(sc, &th);
        if best.as_ref().is_none_or(|(v, _)| r > *v) {
            best = Some((r, th));
        }
    }
    Ok(best.map(|b| b.1))
}

#[derive(Debug, Clone)]
pub struct IrsOptions {
    /// Penalty of the first penalised round as a fraction of the slot rate.
    pub varsigma_start: f64,
    pub varsigma_growth: f64,
    pub max_rounds: usize,
    pub max_sca: usize,
    pub rel_stop: f64,
    /// Rank gap tolerance per dimension of `B̄`.
    pub gap_tol: f64,
}

impl Default for IrsOptions {
    fn default() -> Self {
        Self { varsigma_start: 0.1, varsigma_growth: 5.0, max_rounds: 12, max_sca: 30, rel_stop: 1e-4, gap_tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SlotReport {
    pub sca_iters: usize,
    pub rounds: usize,
    pub solver_iters: usize,
    pub rank_gap: f64,
    pub kept_start: bool,
}

/// Phase optimisation of one slot. Never returns phases with a lower slot
/// rate than `start` when `start` meets the energy demand.
pub fn solve_slot(sc: &Scenario, slot: &SlotIrs, start: &[f64], seed: u64, n: usize, opts: &IrsOptions) -> Result<(Vec<f64>, SlotReport)> {
    let mut report = SlotReport::default();
    if slot.dim() <= 1 {
        return Ok((start.to_vec(), report));
    }
    let tol = Tolerances::default();
    let mut bvec = vec![C64::new(1.0, 0.0)];
    bvec.extend(start.iter().map(|t| C64::from_polar(1.0, *t)));
    let mut b = HMat::from_fn(bvec.len(), bvec.len(), |i, j| bvec[i] * bvec[j].conj());
    let d = slot.dim() as f64;
    let start_rate = slot.rate(sc, start);
    // plain relaxation first; the penalty only enters if it is not rank one
    let mut varsigma = 0.0;
    let penalized = |b: &HMat, s: f64| slot.rate_relaxed(sc, b) - s * rank_gap(b);
    for _ in 0..opts.max_rounds {
        report.rounds += 1;
        let mut f = penalized(&b, varsigma);
        for _ in 0..opts.max_sca {
            let (prog, _) = build_p52(sc, slot, &b, varsigma)?;
            let rep = convex::solve(&prog, Start::Matrix(&b), &tol)?;
            report.sca_iters += 1;
            report.solver_iters += rep.iterations;
            let Some(nb) = rep.b.filter(|_| rep.status != Status::Infeasible) else { break };
            let nf = penalized(&nb, varsigma);
            if nf < f - 1e-9 * f.abs().max(1.0) {
                break;
            }
            let gain = nf - f;
            b = nb;
            f = nf;
            if gain <= opts.rel_stop * f.abs().max(1e-12) {
                break;
            }
        }
        report.rank_gap = rank_gap(&b);
        if report.rank_gap <= opts.gap_tol * d {
            break;
        }
        varsigma = if varsigma == 0.0 { opts.varsigma_start * start_rate.abs().max(1e-3) } else { varsigma * opts.varsigma_growth };
    }
    let mut rng = substream(seed, Stream::Rounding, n as u64);
    let cand = recover_phases(sc, slot, &b, &mut rng)?;
    let start_ok = slot.energy_ok(sc, start)?;
    match cand {
        Some(th) if !start_ok || slot.rate(sc, &th) >= start_rate => Ok((th, report)),
        _ => {
            report.kept_start = true;
            Ok((start.to_vec(), report))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IrsReport {
    pub sca_iters: usize,
    pub solver_iters: usize,
    /// Largest rank gap over slots before recovery.
    pub rank_gap: f64,
    pub slots_kept: usize,
}

/// Optimises the phases of every slot independently.
pub fn solve_irs(
    sc: &Scenario,
    means: &ChannelMeans,
    p: &[Vec<f64>],
    rho: &[Vec<f64>],
    psi: &[Vec<Vec<f64>>],
    theta_start: &[Vec<f64>],
    opts: &IrsOptions,
) -> Result<(Vec<Vec<f64>>, IrsReport)> {
    if sc.m == 0 {
        return Ok((theta_start.to_vec(), IrsReport::default()));
    }
    let results: Vec<Result<(Vec<f64>, SlotReport)>> = (0..sc.n)
        .into_par_iter()
        .map(|n| {
            let slot = SlotIrs::new(means, n, &p[n], &rho[n], &psi[n]);
            solve_slot(sc, &slot, &theta_start[n], sc.seed, n, opts)
        })
        .collect();
    let mut theta = Vec::with_capacity(sc.n);
    let mut report = IrsReport::default();
    for r in results {
        let (th, s) = r?;
        report.sca_iters += s.sca_iters;
        report.solver_iters += s.solver_iters;
        report.rank_gap = report.rank_gap.max(s.rank_gap);
        report.slots_kept += s.kept_start as usize;
        theta.push(th);
    }
    Ok((theta, report))
}

/// Uniform random phases, one row per slot.
pub fn random_phases(sc: &Scenario, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    (0..sc.n).map(|_| (0..sc.m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect()).collect()
}

/// Deterministic RNG for tests and callers without a stream of their own.
pub fn default_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Params;
    use crate::swipt::decoding_order;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn setup(k: usize, m: usize) -> (Scenario, ChannelMeans, SlotIrs) {
        let mut params = Params::default().with("M", m as f64).unwrap().with("N", 1.0).unwrap().with("T", 1.0).unwrap();
        params.q_init = [250.0, 80.0];
        params.q_final = [250.0, 80.0];
        params.num_users = k;
        params.users = Some(vec![[250.0, 60.0], [320.0, 120.0], [180.0, 90.0]][..k].to_vec());
        let sc = crate::generate_scenario(1, &params).unwrap();
        let q = vec![[250.0, 80.0, sc.h_u]; sc.n];
        let theta = vec![vec![0.0; sc.m]; sc.n];
        let means = ChannelMeans::compute(&sc, &q, &theta).unwrap();
        let psi = decoding_order(&sc, &q);
        let p: Vec<f64> = (0..k).map(|i| sc.p_max * (i + 1) as f64 / (k * (k + 1) / 2) as f64).collect();
        let slot = SlotIrs::new(&means, 0, &p, &vec![0.1; k], &psi[0]);
        (sc, means, slot)
    }

    fn rank_one(theta: &[f64]) -> HMat {
        let mut v = vec![C64::new(1.0, 0.0)];
        v.extend(theta.iter().map(|t| C64::from_polar(1.0, *t)));
        HMat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
    }

    #[test]
    fn augmented_gain_matches_channel_module() {
        let (sc, means, slot) = setup(2, 6);
        let theta: Vec<f64> = (0..6).map(|m| 0.7 * m as f64).collect();
        let means_t = ChannelMeans::compute(&sc, &vec![[250.0, 80.0, sc.h_u]; sc.n], &vec![theta.clone(); sc.n]).unwrap();
        for k in 0..2 {
            assert_relative_eq!(slot.xi(k, &theta), means_t.xi[0][k], max_relative = 1e-12);
            assert_relative_eq!(slot.xi_relaxed(k, &rank_one(&theta)), means_t.xi[0][k], max_relative = 1e-9);
        }
        let _ = means;
    }

    #[test]
    fn penalty_values() {
        let b = rank_one(&[0.3, 1.2, 2.0]);
        assert!(rank_gap(&b).abs() < 1e-10);
        assert_relative_eq!(rank_gap(&HMat::identity(4, 4)), 3.0, max_relative = 1e-10);
        let (v, uu) = spectral_lower_bound(&b);
        assert_relative_eq!(v, convex::trace_product(&uu, &b), max_relative = 1e-10);
    }

    #[test]
    fn bounds_hold_on_random_states() {
        let (sc, _, slot) = setup(3, 4);
        let mut rng = default_rng(4);
        let rand_b = |rng: &mut ChaCha8Rng| {
            let h = HMat::from_fn(5, 5, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            convex::project_unit_diag_psd(&(&h + h.adjoint())).unwrap()
        };
        for _ in 0..100 {
            let b_r = rand_b(&mut rng);
            let b = rand_b(&mut rng);
            let (lam, uu) = spectral_lower_bound(&b_r);
            assert!(convex::trace_product(&uu, &b) <= principal_eigen(&b).0 + 1e-10);
            assert_relative_eq!(convex::trace_product(&uu, &b_r), lam, max_relative = 1e-8);
            for k in 0..3 {
                let (v, g) = linearize_interference(&sc, &slot, k, &b_r);
                let ub = v + convex::trace_product(&g, &b) - convex::trace_product(&g, &b_r);
                assert!(ub >= slot.interference_log(&sc, k, &b) - 1e-12);
                assert_relative_eq!(v, slot.interference_log(&sc, k, &b_r), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn single_element_matches_phase_grid() {
        let (sc, _, slot) = setup(1, 1);
        let (th, _) = solve_slot(&sc, &slot, &[2.0], 0, 0, &IrsOptions::default()).unwrap();
        let best = (0..360).map(|i| slot.rate(&sc, &[(i as f64).to_radians()])).fold(f64::MIN, f64::max);
        assert!(slot.rate(&sc, &th) >= best * (1.0 - 1e-6));
    }

    #[test]
    fn two_elements_match_phase_grid() {
        let (sc, _, slot) = setup(1, 2);
        let (th, _) = solve_slot(&sc, &slot, &[0.5, 4.0], 0, 0, &IrsOptions::default()).unwrap();
        let mut best = f64::MIN;
        for i in 0..64 {
            for j in 0..64 {
                let t = [i as f64 * std::f64::consts::TAU / 64.0, j as f64 * std::f64::consts::TAU / 64.0];
                best = best.max(slot.rate(&sc, &t));
            }
        }
        assert!(slot.rate(&sc, &th) >= 0.99 * best);
    }

    #[test]
    fn rank_one_input_is_recovered() {
        let theta = [0.4, 5.0, 2.2];
        let got = principal_phases(&rank_one(&theta));
        for (a, b) in got.iter().zip(&theta) {
            assert_relative_eq!(*a, *b, epsilon = 1e-8);
        }
        assert_eq!(principal_phases(&HMat::identity(4, 4)), vec![0.0; 3]);
    }

    #[test]
    fn multi_user_slot_never_gets_worse() {
        let (sc, _, slot) = setup(3, 8);
        let start: Vec<f64> = (0..8).map(|m| 1.3 * m as f64).collect();
        let before = slot.rate(&sc, &start);
        let (th, rep) = solve_slot(&sc, &slot, &start, 3, 0, &IrsOptions::default()).unwrap();
        assert!(slot.rate(&sc, &th) >= before);
        assert!(rep.sca_iters > 0);
    }
}
