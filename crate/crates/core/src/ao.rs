//! Alternating optimisation over the four blocks: trajectory with decoding
//! order, split ratios, powers and IRS phases, plus the benchmark schemes
//! that switch individual blocks off.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feasibility::{check, CheckOptions, Violations};
use crate::irs::{solve_irs, IrsOptions};
use crate::power::{equal_power, solve_power};
use crate::ps::{optimal_ratio, solve_ps};
use crate::rng::{stream, Stream};
use crate::scenario::{Scenario, Solution};
use crate::swipt::{decoding_order, sum_rate};
use crate::trajectory::{repair_speed, solve_trajectory_sic, speed_violation, straight_line, Fixed, Point, TrajectoryOptions};
use crate::ChannelMeans;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Proposed,
    EquPower,
    NoOptTrajectory,
    NoOptPhase,
    ComOpt,
    RanOpt,
    StaticOpt,
    StaticRan,
    NonMaxRate,
    StrTrajectory,
    NoIrs,
}

impl Variant {
    pub const ALL: [Variant; 11] = [
        Variant::Proposed,
        Variant::EquPower,
        Variant::NoOptTrajectory,
        Variant::NoOptPhase,
        Variant::ComOpt,
        Variant::RanOpt,
        Variant::StaticOpt,
        Variant::StaticRan,
        Variant::NonMaxRate,
        Variant::StrTrajectory,
        Variant::NoIrs,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Proposed => "proposed",
            Variant::EquPower => "equ-power",
            Variant::NoOptTrajectory => "no-opt-trajectory",
            Variant::NoOptPhase => "no-opt-phase",
            Variant::ComOpt => "com-opt",
            Variant::RanOpt => "ran-opt",
            Variant::StaticOpt => "static-opt",
            Variant::StaticRan => "static-ran",
            Variant::NonMaxRate => "non-max-rate",
            Variant::StrTrajectory => "str-trajectory",
            Variant::NoIrs => "no-irs",
        }
    }

    /// The instance this variant actually solves.
    pub fn scenario(self, sc: &Scenario) -> Scenario {
        match self {
            Variant::NoIrs => sc.without_irs(),
            _ => sc.clone(),
        }
    }

    /// Trajectory constraints that apply to this variant's output.
    pub fn check_options(self) -> CheckOptions {
        match self {
            Variant::StaticOpt | Variant::StaticRan => CheckOptions { endpoints: false, speed: false },
            Variant::NonMaxRate => CheckOptions { endpoints: true, speed: false },
            _ => CheckOptions::default(),
        }
    }

    fn moves_uav(self) -> bool {
        !matches!(
            self,
            Variant::NoOptTrajectory | Variant::StaticOpt | Variant::StaticRan | Variant::StrTrajectory | Variant::RanOpt
        )
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == s).ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct AoOptions {
    /// Fractional increase below which the outer loop stops.
    pub tol: f64,
    pub max_iters: usize,
    pub trajectory: TrajectoryOptions,
    pub irs: IrsOptions,
}

impl AoOptions {
    pub fn for_scenario(sc: &Scenario) -> Self {
        Self { tol: sc.ao_tol, ..Self::default() }
    }
}

impl Default for AoOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_iters: 50, trajectory: TrajectoryOptions::default(), irs: IrsOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Stopped on the fractional-increase rule.
    Optimal,
    MaxIters,
}

impl RunStatus {
    pub fn tag(self) -> &'static str {
        match self {
            RunStatus::Optimal => "optimal",
            RunStatus::MaxIters => "max-iters",
        }
    }
}

/// One outer iteration. Block deltas are the change in sum-rate (bits/s/Hz)
/// caused by that block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub trajectory_delta: f64,
    pub ps_delta: f64,
    pub power_delta: f64,
    pub irs_delta: f64,
    /// `max ψ(1 − ψ)` before rounding.
    pub binary_residual: f64,
    /// Largest `tr B − ‖B‖₂` before phase recovery.
    pub rank_gap: f64,
    pub max_violation: f64,
    pub seconds: f64,
}

impl IterationRecord {
    /// Smallest block delta; negative means a block lost rate.
    pub fn worst_delta(&self) -> f64 {
        [self.trajectory_delta, self.ps_delta, self.power_delta, self.irs_delta].into_iter().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunHistory {
    pub variant: Variant,
    pub initial_objective: f64,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    pub violations: Violations,
    pub seconds: f64,
}

impl RunHistory {
    pub fn objective(&self) -> f64 {
        self.records.last().map_or(self.initial_objective, |r| r.objective)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Fractional increase of the last iteration.
    pub fn final_increase(&self) -> f64 {
        let objs: Vec<f64> =
            std::iter::once(self.initial_objective).chain(self.records.iter().map(|r| r.objective)).collect();
        match objs.len() {
            0 | 1 => 0.0,
            n => fractional(objs[n - 2], objs[n - 1]),
        }
    }
}

fn fractional(before: f64, after: f64) -> f64 {
    (after - before) / before.abs().max(1e-12)
}

/// Runs the proposed scheme.
pub fn run(sc: &Scenario, opts: &AoOptions) -> Result<(Solution, RunHistory)> {
    run_benchmark(sc, Variant::Proposed, opts)
}

/// Area used for random positions: the box around users and end points.
fn bounding_box(sc: &Scenario) -> ([f64; 2], [f64; 2]) {
    let mut lo = [sc.q_init[0].min(sc.q_final[0]), sc.q_init[1].min(sc.q_final[1])];
    let mut hi = [sc.q_init[0].max(sc.q_final[0]), sc.q_init[1].max(sc.q_final[1])];
    for w in &sc.user_pos {
        for d in 0..2 {
            lo[d] = lo[d].min(w[d]);
            hi[d] = hi[d].max(w[d]);
        }
    }
    (lo, hi)
}

fn random_point(sc: &Scenario, rng: &mut impl Rng) -> [f64; 3] {
    let (lo, hi) = bounding_box(sc);
    [lo[0] + rng.random::<f64>() * (hi[0] - lo[0]), lo[1] + rng.random::<f64>() * (hi[1] - lo[1]), sc.h_u]
}

/// Random per-slot positions, pulled toward the straight line until the
/// speed repair succeeds.
pub fn random_trajectory(sc: &Scenario, rng: &mut impl Rng) -> Result<Vec<[f64; 3]>> {
    let raw: Vec<[f64; 3]> = (0..sc.n).map(|_| random_point(sc, rng)).collect();
    let line = straight_line(sc);
    if speed_violation(&line, sc.step_len()) > 1e-9 {
        return Err(Error::Geometry("end point unreachable within the flight time".into()));
    }
    let mut weight = 1.0;
    for _ in 0..40 {
        let mut q: Vec<[f64; 3]> = raw
            .iter()
            .zip(&line)
            .map(|(r, l)| [l[0] + weight * (r[0] - l[0]), l[1] + weight * (r[1] - l[1]), sc.h_u])
            .collect();
        if sc.n == 1 {
            q[0] = sc.q_init;
            return Ok(q);
        }
        if repair_speed(&mut q, sc.q_init, sc.q_final, sc.step_len()) <= 1e-9 {
            return Ok(q);
        }
        weight *= 0.5;
    }
    Ok(line)
}

/// Start and end pinned, interior slots split into one hover block per
/// user in order of the users' x coordinate.
pub fn hover_schedule(sc: &Scenario) -> Vec<[f64; 3]> {
    let mut order: Vec<usize> = (0..sc.k).collect();
    order.sort_by(|a, b| sc.user_pos[*a][0].total_cmp(&sc.user_pos[*b][0]));
    let interior = sc.n.saturating_sub(2);
    (0..sc.n)
        .map(|n| {
            if n == 0 {
                sc.q_init
            } else if n + 1 == sc.n {
                sc.q_final
            } else {
                let w = sc.user_pos[order[((n - 1) * sc.k / interior.max(1)).min(sc.k - 1)]];
                [w[0], w[1], sc.h_u]
            }
        })
        .collect()
}

/// Hover point with the best sum-rate on a 26×26 grid over the area.
fn best_hover_point(sc: &Scenario, p: &[Vec<f64>], theta: &[Vec<f64>]) -> Result<[f64; 3]> {
    let (lo, hi) = bounding_box(sc);
    let mut best: Option<(f64, [f64; 3])> = None;
    for i in 0..26 {
        for j in 0..26 {
            let pt = [lo[0] + (hi[0] - lo[0]) * i as f64 / 25.0, lo[1] + (hi[1] - lo[1]) * j as f64 / 25.0, sc.h_u];
            let q = vec![pt; sc.n];
            let sol = assemble(sc, q, p.to_vec(), theta.to_vec(), None)?;
            let Ok(sol) = sol else { continue };
            let means = ChannelMeans::compute(sc, &sol.q, &sol.theta)?;
            let r = sum_rate(sc, &sol, &means);
            if best.is_none_or(|(b, _)| r > b) {
                best = Some((r, pt));
            }
        }
    }
    best.map(|b| b.1).ok_or_else(|| Error::Infeasible {
        slot: 0,
        user: 0,
        reason: "no hover point meets the energy demand".into(),
    })
}

/// Fills in distance-rule decoding and split ratios for the other blocks.
/// `rho_draw` gives random ratios that are raised where harvesting needs
/// more; `None` uses the smallest feasible ratios. The inner result is an
/// infeasibility that callers may want to skip rather than report.
fn assemble(
    sc: &Scenario,
    q: Vec<[f64; 3]>,
    p: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
    rho_draw: Option<&[Vec<f64>]>,
) -> Result<std::result::Result<Solution, Error>> {
    let psi = decoding_order(sc, &q);
    let means = ChannelMeans::compute(sc, &q, &theta)?;
    let mut rho = vec![vec![0.0; sc.k]; sc.n];
    for n in 0..sc.n {
        let total: f64 = p[n].iter().sum();
        for k in 0..sc.k {
            let need = optimal_ratio(sc, k, total, means.xi[n][k])?;
            if need > 1.0 {
                return Ok(Err(Error::Infeasible {
                    slot: n,
                    user: k,
                    reason: format!("harvesting needs a split ratio of {need:.4} > 1"),
                }));
            }
            rho[n][k] = rho_draw.map_or(need, |r| r[n][k].max(need));
        }
    }
    Ok(Ok(Solution { q, psi, p, rho, theta }))
}

/// Random powers over the full budget, ordered so that users decoded later
/// get more.
fn random_power(sc: &Scenario, psi: &[Vec<Vec<f64>>], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    psi.iter()
        .map(|m| {
            let mut w: Vec<f64> = (0..sc.k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x *= sc.p_max / s);
            w.sort_by(f64::total_cmp);
            let mut rank: Vec<(usize, usize)> =
                (0..sc.k).map(|k| ((0..sc.k).filter(|&i| i != k && m[i][k] > 0.5).count(), k)).collect();
            rank.sort();
            let mut p = vec![0.0; sc.k];
            for (slot, (_, k)) in rank.into_iter().enumerate() {
                p[k] = w[slot];
            }
            p
        })
        .collect()
}

fn random_phases(sc: &Scenario) -> Vec<Vec<f64>> {
    let mut rng = stream(sc.seed, Stream::InitPhase);
    (0..sc.n).map(|_| (0..sc.m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect()).collect()
}

fn random_split(sc: &Scenario) -> Vec<Vec<f64>> {
    let mut rng = stream(sc.seed, Stream::InitSplit);
    (0..sc.n).map(|_| (0..sc.k).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Starting point of a variant.
pub fn initial_solution(sc: &Scenario, variant: Variant) -> Result<Solution> {
    let theta = random_phases(sc);
    let p = equal_power(sc);
    let rho_draw = random_split(sc);
    let q = match variant {
        Variant::StrTrajectory => straight_line(sc),
        Variant::NonMaxRate => hover_schedule(sc),
        Variant::StaticOpt => vec![best_hover_point(sc, &p, &theta)?; sc.n],
        Variant::StaticRan => {
            let mut rng = stream(sc.seed, Stream::Hover);
            vec![random_point(sc, &mut rng); sc.n]
        }
        _ => random_trajectory(sc, &mut stream(sc.seed, Stream::InitTrajectory))?,
    };
    let mut sol = assemble(sc, q, p, theta, Some(&rho_draw))??;
    if variant == Variant::RanOpt {
        let mut rng = stream(sc.seed, Stream::RandomVariant);
        sol.p = random_power(sc, &sol.psi, &mut rng);
        sol = assemble(sc, sol.q, sol.p, sol.theta, Some(&rho_draw))??;
    }
    Ok(sol)
}

/// Runs one scheme from its own starting point.
pub fn run_benchmark(sc: &Scenario, variant: Variant, opts: &AoOptions) -> Result<(Solution, RunHistory)> {
    let sc = variant.scenario(sc);
    let sol = initial_solution(&sc, variant)?;
    run_from(&sc, variant, sol, opts)
}

/// Runs the outer loop of `variant` from `sol`.
pub fn run_from(sc: &Scenario, variant: Variant, mut sol: Solution, opts: &AoOptions) -> Result<(Solution, RunHistory)> {
    let clock = Instant::now();
    let rate = |sol: &Solution| -> Result<f64> {
        let means = ChannelMeans::compute(sc, &sol.q, &sol.theta)?;
        Ok(sum_rate(sc, sol, &means))
    };
    let initial = rate(&sol)?;
    let mut history = RunHistory {
        variant,
        initial_objective: initial,
        records: Vec::new(),
        status: RunStatus::MaxIters,
        violations: check(sc, &sol, variant.check_options())?,
        seconds: 0.0,
    };
    if variant == Variant::RanOpt {
        history.status = RunStatus::Optimal;
        history.seconds = clock.elapsed().as_secs_f64();
        return Ok((sol, history));
    }

    let mut t_opts = opts.trajectory.clone();
    t_opts.move_uav = variant.moves_uav();
    t_opts.speed_limit = variant != Variant::NonMaxRate;
    let max_iters = if variant == Variant::ComOpt { 1 } else { opts.max_iters };
    let mut obj = initial;
    for iter in 1..=max_iters {
        let started = Instant::now();
        let before = obj;

        let fixed = Fixed { p: &sol.p, rho: &sol.rho, theta: &sol.theta };
        let start = Point { q: sol.q.clone(), psi: sol.psi.clone() };
        let (point, t_rep) = solve_trajectory_sic(sc, fixed, &start, &t_opts)?;
        sol.q = point.q;
        sol.psi = point.psi;
        let after_t = rate(&sol)?;

        let means = ChannelMeans::compute(sc, &sol.q, &sol.theta)?;
        sol.rho = solve_ps(sc, &means, &sol.p)?;
        let after_ps = rate(&sol)?;

        if variant != Variant::EquPower {
            let (p, _) = solve_power(sc, &means, &sol.psi, &sol.rho, &sol.p)?;
            sol.p = p;
        }
        let after_p = rate(&sol)?;

        let mut rank_gap = 0.0;
        if variant != Variant::NoOptPhase && sc.m > 0 {
            let (theta, i_rep) = solve_irs(sc, &means, &sol.p, &sol.rho, &sol.psi, &sol.theta, &opts.irs)?;
            sol.theta = theta;
            rank_gap = i_rep.rank_gap;
        }
        obj = rate(&sol)?;

        let violations = check(sc, &sol, variant.check_options())?;
        history.records.push(IterationRecord {
            iter,
            objective: obj,
            trajectory_delta: after_t - before,
            ps_delta: after_ps - after_t,
            power_delta: after_p - after_ps,
            irs_delta: obj - after_p,
            binary_residual: t_rep.binary_residual,
            rank_gap,
            max_violation: violations.max(),
            seconds: started.elapsed().as_secs_f64(),
        });
        history.violations = violations;
        if fractional(before, obj) < opts.tol {
            history.status = RunStatus::Optimal;
            break;
        }
    }
    if variant == Variant::ComOpt {
        history.status = RunStatus::Optimal;
    }
    history.seconds = clock.elapsed().as_secs_f64();
    Ok((sol, history))
}
