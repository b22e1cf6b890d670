//! UAV trajectory and SIC decoding order.
//!
//! The decoding indicators are relaxed to `[0, 1]` and pushed back to binary
//! values by a penalty `τ Σ ψ(1 − ψ)`. Every nonconvex piece is replaced by a
//! local bound around the current point and the resulting convex program is
//! solved inside a trust region of radius `δ_max`.
//!
//! Scaling: distances are divided by the altitude `L = h_u`, each gain bound
//! by its value at the expansion point and each denominator bound likewise,
//! so all program variables are of order one.

use std::f64::consts::LN_2;

use crate::convex::{self, Affine, Constraint, ConvexProgram, Start, Status, Tolerances};
use crate::error::{Error, Result};
use crate::scenario::{dist, Scenario};
use crate::swipt::{expected_rate, harvest_demand};
use crate::ChannelMeans;

const GUARD_TRIES: usize = 6;

/// Blocks that stay fixed while the trajectory is optimised, indexed `[n][k]`
/// (phases `[n][m]`).
#[derive(Debug, Clone, Copy)]
pub struct Fixed<'a> {
    pub p: &'a [Vec<f64>],
    pub rho: &'a [Vec<f64>],
    pub theta: &'a [Vec<f64>],
}

/// Trajectory with (possibly fractional) decoding indicators `psi[n][i][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub q: Vec<[f64; 3]>,
    pub psi: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryOptions {
    /// Enforce the per-slot speed limit.
    pub speed_limit: bool,
    /// Optimise positions; when false only the decoding order moves.
    pub move_uav: bool,
    pub tau0: f64,
    pub tau_growth: f64,
    pub tau_max: f64,
    /// Penalty residual `max ψ(1 − ψ)` that ends the penalty schedule.
    pub binary_tol: f64,
    pub rel_stop: f64,
    pub max_sca: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            speed_limit: true,
            move_uav: true,
            tau0: 1.0,
            tau_growth: 10.0,
            tau_max: 1e6,
            binary_tol: 1e-4,
            rel_stop: 1e-4,
            max_sca: 60,
        }
    }
}

/// Variable layout, slot-major so that only neighbouring slots couple.
#[derive(Debug, Clone)]
pub struct Layout {
    k: usize,
    free: Vec<bool>,
    off: Vec<usize>,
    pub num_vars: usize,
}

impl Layout {
    fn new(k: usize, free: Vec<bool>) -> Self {
        let pairs = k * (k - 1) / 2;
        let mut off = Vec::with_capacity(free.len());
        let mut acc = 0;
        for f in &free {
            off.push(acc);
            acc += if *f { 2 } else { 0 } + 4 * k + 1 + pairs;
        }
        Self { k, free, off, num_vars: acc }
    }

    fn base(&self, n: usize) -> usize {
        self.off[n] + if self.free[n] { 2 } else { 0 }
    }

    pub fn pos(&self, n: usize) -> Option<usize> {
        self.free[n].then_some(self.off[n])
    }

    pub fn uk(&self, n: usize, k: usize) -> usize {
        self.base(n) + k
    }

    pub fn u(&self, n: usize) -> usize {
        self.base(n) + self.k
    }

    pub fn xi(&self, n: usize, k: usize) -> usize {
        self.base(n) + self.k + 1 + k
    }

    pub fn lam(&self, n: usize, k: usize) -> usize {
        self.base(n) + 2 * self.k + 1 + k
    }

    pub fn pi(&self, n: usize, k: usize) -> usize {
        self.base(n) + 3 * self.k + 1 + k
    }

    /// Index of the variable `ψ_ik` for `i < k`; `ψ_ki = 1 − ψ_ik`.
    pub fn pair(&self, n: usize, i: usize, k: usize) -> usize {
        debug_assert!(i < k);
        self.base(n) + 4 * self.k + 1 + i * self.k - i * (i + 1) / 2 + (k - i - 1)
    }

    fn psi(&self, n: usize, i: usize, k: usize) -> Affine {
        if i < k {
            Affine::var(self.pair(n, i, k))
        } else {
            Affine::constant(1.0).plus(self.pair(n, k, i), -1.0)
        }
    }
}

/// The convex surrogate around one expansion point.
#[derive(Debug, Clone)]
pub struct P23 {
    pub program: ConvexProgram,
    pub layout: Layout,
    /// The expansion point in program variables.
    pub x0: Vec<f64>,
    /// Constant part of the surrogate objective (in bits).
    constant: f64,
    scale: f64,
    tau: f64,
    /// `(1 − ρ) p_k` and the reference denominator, per `[n][k]`.
    signal: Vec<Vec<f64>>,
    lam_ref: Vec<Vec<f64>>,
}

impl P23 {
    /// Surrogate objective (the tangent minorant), in bits.
    pub fn surrogate_value(&self, x: &[f64]) -> f64 {
        self.constant + self.program.objective.linear.eval(x, None)
    }

    /// Penalised objective of the same auxiliary point before any bound is
    /// applied: `Σ log2(1 + (1−ρ)p/Λ) − τ Σ ψ(1 − ψ)`.
    pub fn exact_value(&self, x: &[f64]) -> f64 {
        let l = &self.layout;
        let mut v = 0.0;
        for (n, row) in self.signal.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                if *c > 0.0 {
                    v += (1.0 + c / (self.lam_ref[n][k] * x[l.lam(n, k)])).log2();
                }
            }
            for i in 0..l.k {
                for k in i + 1..l.k {
                    let s = x[l.pair(n, i, k)];
                    v -= 2.0 * self.tau * s * (1.0 - s);
                }
            }
        }
        v
    }

    /// Trajectory encoded in `x`, with fixed slots taken from `anchor`.
    pub fn positions(&self, x: &[f64], anchor: &[[f64; 3]]) -> Vec<[f64; 3]> {
        anchor
            .iter()
            .enumerate()
            .map(|(n, a)| match self.layout.pos(n) {
                Some(j) => [x[j] * self.scale, x[j + 1] * self.scale, a[2]],
                None => *a,
            })
            .collect()
    }

    pub fn decoding(&self, x: &[f64]) -> Vec<Vec<Vec<f64>>> {
        let l = &self.layout;
        (0..self.signal.len())
            .map(|n| {
                let mut psi = vec![vec![1.0; l.k]; l.k];
                for i in 0..l.k {
                    for k in i + 1..l.k {
                        let s = x[l.pair(n, i, k)];
                        psi[i][k] = s;
                        psi[k][i] = 1.0 - s;
                    }
                }
                psi
            })
            .collect()
    }
}

/// Which slots may move.
fn free_slots(n: usize, opts: &TrajectoryOptions) -> Vec<bool> {
    (0..n).map(|i| opts.move_uav && i > 0 && i + 1 < n).collect()
}

/// Builds the convex surrogate around `point` with penalty weight `tau`.
pub fn build_p23(
    sc: &Scenario,
    fixed: Fixed<'_>,
    point: &Point,
    tau: f64,
    opts: &TrajectoryOptions,
) -> Result<P23> {
    build_guarded(sc, fixed, point, tau, opts, &[])
}

/// [`build_p23`] with a guard on the harvesting constraints. The gain bound
/// keeps the IRS cascade frozen at `point`, which is not conservative once
/// the arrival angle moves; `guard[n][k]` (gain per metre) subtracts
/// `guard · ‖q[n] − q_r[n]‖₁` from the bound inside the energy constraint.
fn build_guarded(
    sc: &Scenario,
    fixed: Fixed<'_>,
    point: &Point,
    tau: f64,
    opts: &TrajectoryOptions,
    guard: &[Vec<f64>],
) -> Result<P23> {
    let means = ChannelMeans::compute(sc, &point.q, fixed.theta)?;
    let kk = sc.k;
    let big_l = sc.h_u;
    let layout = Layout::new(kk, free_slots(sc.n, opts));
    let mut prog = ConvexProgram::new(layout.num_vars);
    let mut x0 = vec![0.0; layout.num_vars];
    let mut linear = Affine::default();
    let mut constant = 0.0;
    let mut signal = vec![vec![0.0; kk]; sc.n];
    let mut lam_ref = vec![vec![0.0; kk]; sc.n];
    let reach = sc.delta_max / big_l;
    let step = sc.step_len() / big_l;
    let (alpha, beta0) = (sc.alpha, sc.beta0);

    // scaled coordinate `c` of slot `n`
    let coord = |n: usize, c: usize| -> Affine {
        match layout.pos(n) {
            Some(j) => Affine::var(j + c),
            None => Affine::constant(point.q[n][c] / big_l),
        }
    };

    for n in 0..sc.n {
        let q = &point.q[n];
        if let Some(j) = layout.pos(n) {
            x0[j] = q[0] / big_l;
            x0[j + 1] = q[1] / big_l;
            // trust region
            prog.add(Constraint::Quadratic {
                v: vec![coord(n, 0).offset(-q[0] / big_l), coord(n, 1).offset(-q[1] / big_l)],
                r: Affine::constant(reach * reach),
            });
        }
        let offset_to = |w: &[f64; 3]| -> Vec<Affine> {
            vec![
                coord(n, 0).offset(-w[0] / big_l),
                coord(n, 1).offset(-w[1] / big_l),
                Affine::constant((q[2] - w[2]) / big_l),
            ]
        };
        let d_ui = means.d_ui[n] / big_l;
        x0[layout.u(n)] = d_ui;
        // ‖q − w_r‖² ≤ 2 u_r u − u_r²
        prog.add(Constraint::Quadratic {
            v: offset_to(&sc.irs_pos),
            r: Affine::term(layout.u(n), 2.0 * d_ui).offset(-d_ui * d_ui),
        });
        prog.add(Constraint::upper(layout.u(n), d_ui + 2.0 * reach));
        prog.add(Constraint::lower(layout.u(n), 0.5 * (q[2] - sc.irs_pos[2]).abs() / big_l));

        for k in 0..kk {
            let w = &sc.user_pos[k];
            let dk = means.d_uu[n][k] / big_l;
            x0[layout.uk(n, k)] = dk;
            x0[layout.pi(n, k)] = dk;
            prog.add(Constraint::Quadratic {
                v: offset_to(w),
                r: Affine::term(layout.uk(n, k), 2.0 * dk).offset(-dk * dk),
            });
            prog.add(Constraint::upper(layout.uk(n, k), dk + 2.0 * reach));
            prog.add(Constraint::lower(layout.uk(n, k), 0.5 * q[2] / big_l));
            // π_k ≥ ‖q − w_k‖
            prog.add(Constraint::Soc { v: offset_to(w), t: Affine::var(layout.pi(n, k)) });
            prog.add(Constraint::upper(layout.pi(n, k), dk + 2.0 * reach));
        }

        for k in 0..kk {
            let noise = sc.noise(k);
            let rho = fixed.rho[n][k];
            let p = &fixed.p[n];
            let xi_r = means.xi[n][k];
            let interference: f64 = (0..kk).filter(|&i| i != k).map(|i| point.psi[n][i][k] * p[i]).sum();
            let floor = (1.0 - rho) * noise.sigma2 + noise.delta2;
            let lr = (1.0 - rho) * interference + floor / xi_r;
            lam_ref[n][k] = lr;
            let c = (1.0 - rho) * p[k];
            signal[n][k] = c;
            x0[layout.xi(n, k)] = 1.0;
            x0[layout.lam(n, k)] = 1.0;
            if c > 0.0 {
                // log2(1 + c/Λ) ≥ value at Λ_r + slope (Λ − Λ_r), Λ = Λ_r λ
                let w = -c / ((lr + c) * LN_2);
                constant += (1.0 + c / lr).log2() - w;
                linear = linear.plus(layout.lam(n, k), w);
            }
            // Λ ≥ (1−ρ) Σ ψ_ik p_i + floor / ξ̲, divided by Λ_r
            let mut r = Affine::var(layout.lam(n, k));
            for i in 0..kk {
                if i != k && p[i] > 0.0 {
                    r = r.add(&layout.psi(n, i, k).scale(-(1.0 - rho) * p[i] / lr));
                }
            }
            prog.add(Constraint::Reciprocal { c: floor / (xi_r * lr), d: Affine::var(layout.xi(n, k)), r });
            prog.add(Constraint::upper(layout.lam(n, k), 1e3));
            prog.add(Constraint::upper(layout.xi(n, k), 1e3));

            let need = harvest_demand(sc, k)?;
            if need > 0.0 {
                let total: f64 = p.iter().sum();
                let slack = Affine::term(layout.xi(n, k), rho * total * xi_r / need).offset(rho * sc.sigma2[k] / need - 1.0);
                match (layout.pos(n), guard.get(n).map_or(0.0, |g| g[k])) {
                    (Some(j), l) if l > 0.0 => {
                        // ρ P L ‖q − q_r‖ / need ≤ slack, with the norm bounded
                        // by |Δx| + |Δy| so the start may sit on the boundary
                        let c = rho * total * l * big_l / need;
                        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                            let dev = Affine::term(j, sx * c)
                                .offset(-sx * c * q[0] / big_l)
                                .plus(j + 1, sy * c)
                                .offset(-sy * c * q[1] / big_l);
                            prog.add(Constraint::Affine(dev.add(&slack.clone().neg())));
                        }
                    }
                    _ => prog.add(Constraint::Affine(slack.neg())),
                }
            }

            // ξ̲ ≤ (β0 u_k^{-α} + A u^{-2} + B u_k^{-α/2} u^{-1})^lb, physical
            // units first, then rescaled
            let uk = means.d_uu[n][k];
            let u = means.d_ui[n];
            let (a, b) = (means.a[n][k], means.b[n][k]);
            let g = beta0 * uk.powf(-alpha) + a * u.powi(-2);
            let g_uk = -alpha * beta0 * uk.powf(-alpha - 1.0);
            let g_u = -2.0 * a * u.powi(-3);
            let h = uk.powf(-alpha / 2.0) / u;
            let h_uk = -0.5 * alpha * h / uk;
            let h_u = -h / u;
            let mut lb = Affine::constant(g / xi_r)
                .plus(layout.uk(n, k), g_uk * big_l / xi_r)
                .offset(-g_uk * uk / xi_r)
                .plus(layout.u(n), g_u * big_l / xi_r)
                .offset(-g_u * u / xi_r);
            if b > 0.0 {
                lb = lb
                    .offset(b * h / xi_r)
                    .plus(layout.uk(n, k), b * h_uk * big_l / xi_r)
                    .offset(-b * h_uk * uk / xi_r)
                    .plus(layout.u(n), b * h_u * big_l / xi_r)
                    .offset(-b * h_u * u / xi_r);
            }
            let r = lb.plus(layout.xi(n, k), -1.0);
            if b < 0.0 {
                let coef = -b * big_l.powf(-alpha / 2.0 - 1.0) / xi_r;
                prog.add(Constraint::PowerProduct {
                    c: coef,
                    a: (layout.uk(n, k), alpha / 2.0),
                    b: (layout.u(n), 1.0),
                    r,
                });
            } else {
                prog.add(Constraint::Affine(r.neg()));
            }
        }

        // decoding order
        for i in 0..kk {
            for k in i + 1..kk {
                let j = layout.pair(n, i, k);
                let s_r = point.psi[n][i][k];
                x0[j] = s_r;
                prog.add(Constraint::lower(j, 0.0));
                prog.add(Constraint::upper(j, 1.0));
                // −τ Σ_{i≠k} ψ(1−ψ) ≥ −2τ [s_r(1−s_r) + (1−2 s_r)(s − s_r)]
                constant -= 2.0 * tau * (s_r * (1.0 - s_r) - (1.0 - 2.0 * s_r) * s_r);
                linear = linear.plus(j, -2.0 * tau * (1.0 - 2.0 * s_r));
            }
        }
        for i in 0..kk {
            for k in 0..kk {
                if i == k {
                    continue;
                }
                let p = &fixed.p[n];
                if p[i] > p[k] {
                    // ψ_ik p_i ≤ p_k
                    prog.add(Constraint::Affine(layout.psi(n, i, k).scale(p[i] / sc.p_max).offset(-p[k] / sc.p_max)));
                }
                // ψ_ik π_i ≤ d_k via (ψ+π)²/4 − (ψ−π)²/4, the concave part and
                // d_k linearised
                let psi = layout.psi(n, i, k);
                let pi = Affine::var(layout.pi(n, i));
                let a_r = point.psi[n][i][k] - means.d_uu[n][i] / big_l;
                let dk = means.d_uu[n][k] / big_l;
                let mut lin_d = Affine::constant(dk);
                if let Some(jpos) = layout.pos(n) {
                    let w = &sc.user_pos[k];
                    for c in 0..2 {
                        let gc = (point.q[n][c] - w[c]) / big_l / dk;
                        lin_d = lin_d.plus(jpos + c, gc).offset(-gc * point.q[n][c] / big_l);
                    }
                }
                let a = psi.clone().add(&pi.clone().neg());
                let r = lin_d.offset(-a_r * a_r / 4.0).add(&a.scale(a_r / 2.0));
                prog.add(Constraint::Quadratic { v: vec![psi.add(&pi).scale(0.5)], r });
            }
        }

        if n + 1 < sc.n && opts.speed_limit && (layout.free[n] || layout.free[n + 1]) {
            prog.add(Constraint::Quadratic {
                v: vec![coord(n + 1, 0).add(&coord(n, 0).neg()), coord(n + 1, 1).add(&coord(n, 1).neg())],
                r: Affine::constant(step * step),
            });
        }
    }
    prog.objective.linear = linear;
    Ok(P23 { program: prog, layout, x0, constant, scale: big_l, tau, signal, lam_ref })
}

/// Penalised objective with true channel gains:
/// `Σ R̃(q, ψ) − τ Σ_{i≠k} ψ(1 − ψ)`.
pub fn penalized_objective(sc: &Scenario, fixed: Fixed<'_>, point: &Point, tau: f64) -> Result<f64> {
    let means = ChannelMeans::compute(sc, &point.q, fixed.theta)?;
    Ok(rate_with(sc, fixed, &point.psi, &means) - tau * binary_residual_sum(&point.psi))
}

fn rate_with(sc: &Scenario, fixed: Fixed<'_>, psi: &[Vec<Vec<f64>>], means: &ChannelMeans) -> f64 {
    (0..sc.n)
        .map(|n| {
            (0..sc.k)
                .map(|k| expected_rate(k, &fixed.p[n], fixed.rho[n][k], &psi[n], means.xi[n][k], sc.noise(k)))
                .sum::<f64>()
        })
        .sum()
}

fn binary_residual_sum(psi: &[Vec<Vec<f64>>]) -> f64 {
    psi.iter()
        .flat_map(|m| m.iter().enumerate().flat_map(move |(i, r)| r.iter().enumerate().filter(move |(k, _)| *k != i)))
        .map(|(_, v)| v * (1.0 - v))
        .sum()
}

/// `max ψ(1 − ψ)` over all off-diagonal indicators.
pub fn binary_residual(psi: &[Vec<Vec<f64>>]) -> f64 {
    psi.iter()
        .flat_map(|m| m.iter().enumerate().flat_map(move |(i, r)| r.iter().enumerate().filter(move |(k, _)| *k != i)))
        .map(|(_, v)| v * (1.0 - v))
        .fold(0.0, f64::max)
}

/// Whether every user meets its energy demand (relative slack `1e-9`).
pub fn energy_feasible(sc: &Scenario, fixed: Fixed<'_>, means: &ChannelMeans) -> Result<bool> {
    for n in 0..sc.n {
        let total: f64 = fixed.p[n].iter().sum();
        for k in 0..sc.k {
            let need = harvest_demand(sc, k)?;
            if fixed.rho[n][k] * (total * means.xi[n][k] + sc.sigma2[k]) < need * (1.0 - 1e-9) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Slots and users whose energy demand fails, with the shortfall in gain.
fn energy_misses(sc: &Scenario, fixed: Fixed<'_>, means: &ChannelMeans) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for n in 0..sc.n {
        let total: f64 = fixed.p[n].iter().sum();
        for k in 0..sc.k {
            let need = harvest_demand(sc, k)?;
            let rho = fixed.rho[n][k];
            if rho * (total * means.xi[n][k] + sc.sigma2[k]) < need * (1.0 - 1e-9) {
                let want = if rho > 0.0 && total > 0.0 { (need / rho - sc.sigma2[k]) / total } else { f64::INFINITY };
                out.push((n, k, want - means.xi[n][k]));
            }
        }
    }
    Ok(out)
}

fn lerp_point(a: &Point, b: &Point, t: f64) -> Point {
    let q = a
        .q
        .iter()
        .zip(&b.q)
        .map(|(x, y)| [x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1]), x[2]])
        .collect();
    let psi = a
        .psi
        .iter()
        .zip(&b.psi)
        .map(|(ma, mb)| {
            ma.iter()
                .zip(mb)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(u, v)| u + t * (v - u)).collect())
                .collect()
        })
        .collect();
    Point { q, psi }
}

/// Projects `p` onto the intersection of two discs of radius `r`.
fn project_two_discs(p: [f64; 2], c1: [f64; 2], c2: [f64; 2], r: f64) -> [f64; 2] {
    let inside = |x: [f64; 2], c: [f64; 2]| (x[0] - c[0]).hypot(x[1] - c[1]) <= r;
    if inside(p, c1) && inside(p, c2) {
        return p;
    }
    let onto = |c: [f64; 2]| {
        let d = (p[0] - c[0]).hypot(p[1] - c[1]);
        if d <= r {
            p
        } else {
            [c[0] + (p[0] - c[0]) * r / d, c[1] + (p[1] - c[1]) * r / d]
        }
    };
    let sq = |x: [f64; 2]| (x[0] - p[0]).powi(2) + (x[1] - p[1]).powi(2);
    let mut best: Option<[f64; 2]> = None;
    for (x, other) in [(onto(c1), c2), (onto(c2), c1)] {
        if inside(x, other) && best.is_none_or(|b| sq(x) < sq(b)) {
            best = Some(x);
        }
    }
    if let Some(b) = best {
        return b;
    }
    let d = (c2[0] - c1[0]).hypot(c2[1] - c1[1]);
    let mid = [0.5 * (c1[0] + c2[0]), 0.5 * (c1[1] + c2[1])];
    if d >= 2.0 * r || d == 0.0 {
        return mid;
    }
    let h = (r * r - 0.25 * d * d).max(0.0).sqrt();
    let e = [-(c2[1] - c1[1]) / d, (c2[0] - c1[0]) / d];
    let a = [mid[0] + h * e[0], mid[1] + h * e[1]];
    let b = [mid[0] - h * e[0], mid[1] - h * e[1]];
    if sq(a) <= sq(b) {
        a
    } else {
        b
    }
}

/// Largest amount by which a step exceeds `step` (m).
pub fn speed_violation(q: &[[f64; 3]], step: f64) -> f64 {
    q.windows(2).map(|w| dist(&w[0], &w[1]) - step).fold(0.0, f64::max)
}

/// Pins the end points and nudges interior points until no step exceeds the
/// speed limit. Returns the remaining violation.
pub fn repair_speed(q: &mut [[f64; 3]], start: [f64; 3], end: [f64; 3], step: f64) -> f64 {
    let n = q.len();
    q[0] = start;
    q[n - 1] = end;
    let r = step * (1.0 - 1e-10);
    for sweep in 0..200 {
        if speed_violation(q, step) <= 0.0 {
            break;
        }
        let order: Vec<usize> = if sweep % 2 == 0 { (1..n - 1).collect() } else { (1..n - 1).rev().collect() };
        for i in order {
            let p = project_two_discs([q[i][0], q[i][1]], [q[i - 1][0], q[i - 1][1]], [q[i + 1][0], q[i + 1][1]], r);
            q[i][0] = p[0];
            q[i][1] = p[1];
        }
    }
    speed_violation(q, step)
}

/// Rounds fractional indicators at 1/2, keeps `ψ_ik + ψ_ki = 1`, and flips
/// any indicator that would break the power ordering `p_k ≥ ψ_ik p_i`.
pub fn round_decoding(psi: &[Vec<Vec<f64>>], p: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    psi.iter()
        .zip(p)
        .map(|(m, p)| {
            let k = m.len();
            let mut out = vec![vec![1.0; k]; k];
            for i in 0..k {
                for j in i + 1..k {
                    let mut ij = m[i][j] >= m[j][i];
                    if ij && p[i] > p[j] {
                        ij = false;
                    } else if !ij && p[j] > p[i] {
                        ij = true;
                    }
                    out[i][j] = if ij { 1.0 } else { 0.0 };
                    out[j][i] = 1.0 - out[i][j];
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryReport {
    pub sca_iters: usize,
    pub tau_rounds: usize,
    pub solver_iters: usize,
    pub restorations: usize,
    /// Re-solves after a candidate missed an energy demand.
    pub guard_updates: usize,
    /// `max ψ(1 − ψ)` before rounding.
    pub binary_residual: f64,
    pub final_tau: f64,
    /// Whether the optimised point replaced the start.
    pub improved: bool,
}

/// Runs the penalty/SCA scheme from `start` and returns a trajectory with
/// binary decoding indicators. The result never has a lower sum-rate than
/// `start`, which must be feasible.
pub fn solve_trajectory_sic(
    sc: &Scenario,
    fixed: Fixed<'_>,
    start: &Point,
    opts: &TrajectoryOptions,
) -> Result<(Point, TrajectoryReport)> {
    let tol = Tolerances::default();
    let mut report = TrajectoryReport::default();
    let mut cur = start.clone();
    let mut tau = opts.tau0;
    let mut guard = vec![vec![0.0; sc.k]; sc.n];
    loop {
        report.tau_rounds += 1;
        let mut f_cur = penalized_objective(sc, fixed, &cur, tau)?;
        for _ in 0..opts.max_sca {
            let mut accepted = None;
            let mut cand = None;
            for _ in 0..GUARD_TRIES {
                let p23 = build_guarded(sc, fixed, &cur, tau, opts, &guard)?;
                let rep = convex::solve(&p23.program, Start::Scalars(&p23.x0), &tol)?;
                report.sca_iters += 1;
                report.solver_iters += rep.iterations;
                if rep.status == Status::Infeasible {
                    break;
                }
                let mut q = p23.positions(&rep.x, &cur.q);
                if opts.move_uav && opts.speed_limit {
                    repair_speed(&mut q, sc.q_init, sc.q_final, sc.step_len());
                }
                let mut psi = p23.decoding(&rep.x);
                for m in &mut psi {
                    for row in m.iter_mut() {
                        for v in row.iter_mut() {
                            *v = v.clamp(0.0, 1.0);
                        }
                    }
                }
                let trial = Point { q, psi };
                let means = ChannelMeans::compute(sc, &trial.q, fixed.theta)?;
                let f = rate_with(sc, fixed, &trial.psi, &means) - tau * binary_residual_sum(&trial.psi);
                let misses = energy_misses(sc, fixed, &means)?;
                if misses.is_empty() {
                    if f >= f_cur - 1e-9 * f_cur.abs().max(1.0) {
                        accepted = Some((trial, f));
                    } else {
                        cand = Some(trial);
                    }
                    break;
                }
                for (n, k, short) in misses {
                    let moved = dist(&trial.q[n], &cur.q[n]);
                    if moved > 0.0 {
                        guard[n][k] = (2.0 * guard[n][k]).max(2.0 * short / moved);
                    }
                }
                report.guard_updates += 1;
                cand = Some(trial);
            }
            // shrink toward the current point
            if accepted.is_none() {
                if let Some(cand) = cand {
                    let mut t = 0.5;
                    for _ in 0..10 {
                        report.restorations += 1;
                        let trial = lerp_point(&cur, &cand, t);
                        let means = ChannelMeans::compute(sc, &trial.q, fixed.theta)?;
                        let f = rate_with(sc, fixed, &trial.psi, &means) - tau * binary_residual_sum(&trial.psi);
                        if f >= f_cur - 1e-9 * f_cur.abs().max(1.0) && energy_feasible(sc, fixed, &means)? {
                            accepted = Some((trial, f));
                            break;
                        }
                        t *= 0.5;
                    }
                }
            }
            let Some((next, f_next)) = accepted else { break };
            let gain = f_next - f_cur;
            cur = next;
            f_cur = f_next;
            if gain <= opts.rel_stop * f_cur.abs().max(1e-12) {
                break;
            }
        }
        report.binary_residual = binary_residual(&cur.psi);
        report.final_tau = tau;
        if report.binary_residual <= opts.binary_tol || tau >= opts.tau_max {
            break;
        }
        tau = (tau * opts.tau_growth).min(opts.tau_max);
    }

    let rounded = Point { q: cur.q.clone(), psi: round_decoding(&cur.psi, fixed.p) };
    let before = penalized_objective(sc, fixed, start, 0.0)?;
    let after_means = ChannelMeans::compute(sc, &rounded.q, fixed.theta)?;
    let after = rate_with(sc, fixed, &rounded.psi, &after_means);
    if after >= before && energy_feasible(sc, fixed, &after_means)? {
        report.improved = after > before;
        Ok((rounded, report))
    } else {
        Ok((start.clone(), report))
    }
}

/// Straight flight from start to end at constant speed.
pub fn straight_line(sc: &Scenario) -> Vec<[f64; 3]> {
    let n = sc.n;
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            [
                sc.q_init[0] + t * (sc.q_final[0] - sc.q_init[0]),
                sc.q_init[1] + t * (sc.q_final[1] - sc.q_init[1]),
                sc.h_u,
            ]
        })
        .collect()
}

/// Maps an infeasibility from a slot-agnostic check onto an error.
pub fn infeasible(reason: &str) -> Error {
    Error::Infeasible { slot: usize::MAX, user: usize::MAX, reason: reason.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Params;
    use crate::swipt::decoding_order;
    use rand::{Rng, SeedableRng};

    fn toy(k: usize, n: usize) -> Scenario {
        let mut params = Params::default()
            .with("K", k as f64)
            .unwrap()
            .with("M", 4.0)
            .unwrap()
            .with("N", n as f64)
            .unwrap()
            .with("T", n as f64)
            .unwrap()
            .with("v_max", 40.0)
            .unwrap();
        params.q_init = [200.0, 250.0];
        params.q_final = [200.0 + 30.0 * (n - 1) as f64, 250.0];
        params.users = Some(vec![[230.0, 300.0], [260.0, 180.0], [120.0, 260.0]][..k].to_vec());
        crate::generate_scenario(5, &params).unwrap()
    }

    fn blocks(sc: &Scenario) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = vec![vec![sc.p_max / sc.k as f64; sc.k]; sc.n];
        let rho = vec![vec![0.2; sc.k]; sc.n];
        let theta: Vec<Vec<f64>> = (0..sc.n).map(|n| (0..sc.m).map(|m| 0.4 * (m + n) as f64).collect()).collect();
        (p, rho, theta)
    }

    #[test]
    fn layout_indices_are_distinct() {
        let l = Layout::new(4, vec![false, true, true, false]);
        let mut seen = std::collections::HashSet::new();
        for n in 0..4 {
            if let Some(j) = l.pos(n) {
                assert!(seen.insert(j) && seen.insert(j + 1));
            }
            assert!(seen.insert(l.u(n)));
            for k in 0..4 {
                for idx in [l.uk(n, k), l.xi(n, k), l.lam(n, k), l.pi(n, k)] {
                    assert!(seen.insert(idx));
                }
                for i in 0..k {
                    assert!(seen.insert(l.pair(n, i, k)));
                }
            }
        }
        assert_eq!(seen.len(), l.num_vars);
    }

    #[test]
    fn surrogate_is_tight_at_expansion_point() {
        let sc = toy(3, 4);
        let (p, rho, theta) = blocks(&sc);
        let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
        let q = straight_line(&sc);
        let mut psi = decoding_order(&sc, &q);
        psi[1][0][1] = 0.7;
        psi[1][1][0] = 0.3;
        let point = Point { q, psi };
        let p23 = build_p23(&sc, fixed, &point, 3.0, &TrajectoryOptions::default()).unwrap();
        let exact = p23.exact_value(&p23.x0);
        assert!((p23.surrogate_value(&p23.x0) - exact).abs() <= 1e-8 * exact.abs().max(1.0));
        let true_f = penalized_objective(&sc, fixed, &point, 3.0).unwrap();
        assert!((true_f - exact).abs() <= 1e-8 * exact.abs().max(1.0));
        // the expansion point satisfies every constraint
        assert!(p23.program.max_violation(&p23.x0, None) <= 1e-9);
    }

    #[test]
    fn surrogate_is_a_minorant() {
        let sc = toy(3, 4);
        let (p, rho, theta) = blocks(&sc);
        let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
        let q = straight_line(&sc);
        let point = Point { psi: decoding_order(&sc, &q), q };
        let p23 = build_p23(&sc, fixed, &point, 2.0, &TrajectoryOptions::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x: Vec<f64> = p23.x0.iter().map(|v| v * (1.0 + 0.3 * (rng.random::<f64>() - 0.5))).collect();
            let mut x = x;
            for n in 0..sc.n {
                for i in 0..sc.k {
                    for k in i + 1..sc.k {
                        x[p23.layout.pair(n, i, k)] = rng.random();
                    }
                }
            }
            assert!(p23.surrogate_value(&x) <= p23.exact_value(&x) + 1e-12);
        }
    }

    #[test]
    fn two_disc_projection() {
        let p = project_two_discs([0.0, 5.0], [-1.0, 0.0], [1.0, 0.0], 2.0);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(project_two_discs([0.1, 0.1], [-1.0, 0.0], [1.0, 0.0], 2.0), [0.1, 0.1]);
    }

    #[test]
    fn repair_reaches_speed_limit() {
        let sc = toy(2, 6);
        let mut q = straight_line(&sc);
        q[2][1] += 35.0;
        q[3][0] -= 20.0;
        let v = repair_speed(&mut q, sc.q_init, sc.q_final, sc.step_len());
        assert!(v <= 1e-6);
        assert_eq!(q[0], sc.q_init);
        assert_eq!(q[5], sc.q_final);
    }

    #[test]
    fn sca_ascends_and_respects_constraints() {
        let sc = toy(3, 5);
        let (p, rho, theta) = blocks(&sc);
        let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
        let q = straight_line(&sc);
        let start = Point { psi: decoding_order(&sc, &q), q };
        let before = penalized_objective(&sc, fixed, &start, 0.0).unwrap();
        let (out, rep) = solve_trajectory_sic(&sc, fixed, &start, &TrajectoryOptions::default()).unwrap();
        let after = penalized_objective(&sc, fixed, &out, 0.0).unwrap();
        assert!(after >= before, "{after} < {before}");
        assert!(rep.sca_iters >= 1);
        assert!(speed_violation(&out.q, sc.step_len()) <= 1e-6);
        assert_eq!(out.q[0], sc.q_init);
        assert_eq!(out.q[sc.n - 1], sc.q_final);
        assert_eq!(binary_residual(&out.psi), 0.0);
    }

    #[test]
    fn small_instance_matches_grid_search() {
        let sc = toy(2, 3);
        let (p, rho, theta) = blocks(&sc);
        let fixed = Fixed { p: &p, rho: &rho, theta: &theta };
        let q = straight_line(&sc);
        let start = Point { psi: decoding_order(&sc, &q), q };
        let (out, _) = solve_trajectory_sic(&sc, fixed, &start, &TrajectoryOptions::default()).unwrap();
        let got = penalized_objective(&sc, fixed, &out, 0.0).unwrap();

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
                let order = decoding_order(&sc, &q);
                for flip in [false, true] {
                    let mut psi = order.clone();
                    if flip {
                        psi[1][0][1] = 1.0 - psi[1][0][1];
                        psi[1][1][0] = 1.0 - psi[1][1][0];
                        let d0 = dist(&mid, &sc.user_pos[0]);
                        let d1 = dist(&mid, &sc.user_pos[1]);
                        // the flipped order must still satisfy ψ_ik d_i ≤ d_k
                        if (psi[1][0][1] == 1.0 && d0 > d1) || (psi[1][1][0] == 1.0 && d1 > d0) {
                            continue;
                        }
                    }
                    let pt = Point { q: q.clone(), psi };
                    let means = ChannelMeans::compute(&sc, &pt.q, fixed.theta).unwrap();
                    if energy_feasible(&sc, fixed, &means).unwrap() {
                        best = best.max(penalized_objective(&sc, fixed, &pt, 0.0).unwrap());
                    }
                }
            }
        }
        assert!(got >= 0.98 * best, "{got} vs grid {best}");
    }

    #[test]
    fn rounding_respects_power_order() {
        let psi = vec![vec![vec![1.0, 0.8], vec![0.2, 1.0]]];
        assert_eq!(round_decoding(&psi, &[vec![1.0, 1.0]])[0][0][1], 1.0);
        // user 0 transmits more, so it cannot be decoded as the stronger one
        assert_eq!(round_decoding(&psi, &[vec![2.0, 1.0]])[0][0][1], 0.0);
    }
}
