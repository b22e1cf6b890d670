//! Infeasible-start primal-dual interior-point method for scalar programs.
//!
//! Inequalities `g_i(x) ≤ 0` get slacks `s_i > 0` and multipliers `z_i > 0`;
//! equalities are eliminated through a small Schur complement. The reduced
//! Newton matrix `∇²L + Jᵀ Z S⁻¹ J` is factored in envelope storage, which
//! keeps slot-major trajectory programs close to banded.

use nalgebra::{DMatrix, DVector};

use super::program::{Affine, Constraint, ConvexProgram};
use super::skyline::Skyline;
use super::{SolveReport, Status, Tolerances};

type Sparse = Vec<(usize, f64)>;

fn dot_sparse(a: &Sparse, x: &[f64]) -> f64 {
    a.iter().map(|&(i, c)| c * x[i]).sum()
}

fn push_affine(out: &mut Sparse, a: &Affine, s: f64) {
    out.extend(a.terms.iter().map(|&(i, c)| (i, c * s)));
}

/// Adds `s·u uᵀ` to the lower envelope.
fn outer(h: &mut Skyline, u: &Sparse, s: f64) {
    for &(i, a) in u {
        for &(j, b) in u {
            if i >= j {
                h.add(i, j, s * a * b);
            }
        }
    }
}

/// Value, gradient and (weighted) Hessian of one constraint.
struct Local<'a> {
    c: &'a Constraint,
}

impl<'a> Local<'a> {
    fn grad(&self, x: &[f64]) -> Sparse {
        let mut g = Sparse::new();
        match self.c {
            Constraint::Affine(a) => push_affine(&mut g, a, 1.0),
            Constraint::Soc { v, t } => {
                let tv = t.eval(x, None);
                let mut ss = 0.0;
                for a in v {
                    let vi = a.eval(x, None);
                    ss += vi * vi;
                    push_affine(&mut g, a, 2.0 * vi / tv);
                }
                push_affine(&mut g, t, -(ss / (tv * tv) + 1.0));
            }
            Constraint::Quadratic { v, r } => {
                for a in v {
                    let vi = a.eval(x, None);
                    push_affine(&mut g, a, 2.0 * vi);
                }
                push_affine(&mut g, r, -1.0);
            }
            Constraint::Reciprocal { c, d, r } => {
                let dv = d.eval(x, None);
                push_affine(&mut g, d, -c / (dv * dv));
                push_affine(&mut g, r, -1.0);
            }
            Constraint::PowerProduct { c, a, b, r } => {
                let f = c * x[a.0].powf(-a.1) * x[b.0].powf(-b.1);
                g.push((a.0, -a.1 * f / x[a.0]));
                g.push((b.0, -b.1 * f / x[b.0]));
                push_affine(&mut g, r, -1.0);
            }
        }
        g
    }

    fn hess(&self, x: &[f64], w: f64, h: &mut Skyline) {
        match self.c {
            Constraint::Affine(_) => {}
            Constraint::Soc { v, t } => {
                let tv = t.eval(x, None);
                for a in v {
                    let vi = a.eval(x, None);
                    let mut u = Sparse::new();
                    push_affine(&mut u, a, 1.0);
                    push_affine(&mut u, t, -vi / tv);
                    outer(h, &u, 2.0 * w / tv);
                }
            }
            Constraint::Quadratic { v, .. } => {
                for a in v {
                    let mut u = Sparse::new();
                    push_affine(&mut u, a, 1.0);
                    outer(h, &u, 2.0 * w);
                }
            }
            Constraint::Reciprocal { c, d, .. } => {
                let dv = d.eval(x, None);
                let mut u = Sparse::new();
                push_affine(&mut u, d, 1.0);
                outer(h, &u, 2.0 * w * c / (dv * dv * dv));
            }
            Constraint::PowerProduct { c, a, b, .. } => {
                let (xa, xb) = (x[a.0], x[b.0]);
                let f = c * xa.powf(-a.1) * xb.powf(-b.1);
                h.add(a.0, a.0, w * a.1 * (a.1 + 1.0) * f / (xa * xa));
                h.add(b.0, b.0, w * b.1 * (b.1 + 1.0) * f / (xb * xb));
                h.add(a.0, b.0, w * a.1 * b.1 * f / (xa * xb));
            }
        }
    }
}

struct State {
    x: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
}

struct Residuals {
    f0: f64,
    g0: Vec<f64>,
    fi: Vec<f64>,
    gi: Vec<Sparse>,
    rd: Vec<f64>,
    rp: Vec<f64>,
    re: Vec<f64>,
}

impl Residuals {
    fn merit(&self, st: &State) -> f64 {
        norm2(&self.rd) + norm2(&self.rp) + norm2(&self.re) + dot(&st.s, &st.z)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

struct Solver<'a> {
    p: &'a ConvexProgram,
    eq_rows: Vec<Sparse>,
    first: Vec<usize>,
}

impl<'a> Solver<'a> {
    fn new(p: &'a ConvexProgram) -> Self {
        let n = p.num_vars;
        let mut first: Vec<usize> = (0..n).collect();
        let mut couple = |vars: &[usize]| {
            if let Some(&lo) = vars.iter().min() {
                for &v in vars {
                    first[v] = first[v].min(lo);
                }
            }
        };
        for c in &p.constraints {
            couple(&c.variables());
        }
        for (_, a) in &p.objective.logs {
            couple(&a.terms.iter().map(|t| t.0).collect::<Vec<_>>());
        }
        let eq_rows = p
            .equalities
            .iter()
            .map(|e| {
                let mut r = Sparse::new();
                push_affine(&mut r, e, 1.0);
                r
            })
            .collect();
        Self { p, eq_rows, first }
    }

    /// Objective to minimise: `-(linear + Σ w ln arg)`.
    fn eval(&self, st: &State) -> Option<Residuals> {
        let p = self.p;
        let x = &st.x;
        let n = p.num_vars;
        let mut g0 = vec![0.0; n];
        let mut f0 = -p.objective.linear.eval(x, None);
        for &(i, c) in &p.objective.linear.terms {
            g0[i] -= c;
        }
        for (w, a) in &p.objective.logs {
            let v = a.eval(x, None);
            if !(v > 0.0) {
                return None;
            }
            f0 -= w * v.ln();
            for &(i, c) in &a.terms {
                g0[i] -= w * c / v;
            }
        }
        let mut fi = Vec::with_capacity(p.constraints.len());
        let mut gi = Vec::with_capacity(p.constraints.len());
        for c in &p.constraints {
            let v = c.value(x, None)?;
            if !v.is_finite() {
                return None;
            }
            fi.push(v);
            gi.push(Local { c }.grad(x));
        }
        let mut rd = g0.clone();
        for (g, z) in gi.iter().zip(&st.z) {
            for &(i, c) in g {
                rd[i] += z * c;
            }
        }
        for (row, y) in self.eq_rows.iter().zip(&st.y) {
            for &(i, c) in row {
                rd[i] += y * c;
            }
        }
        let rp = fi.iter().zip(&st.s).map(|(f, s)| f + s).collect();
        let re = p.equalities.iter().map(|e| e.eval(x, None)).collect();
        Some(Residuals { f0, g0, fi, gi, rd, rp, re })
    }

    fn assemble(&self, st: &State, res: &Residuals, reg: f64) -> Skyline {
        let p = self.p;
        let x = &st.x;
        let mut h = Skyline::new(self.first.clone());
        for (w, a) in &p.objective.logs {
            let v = a.eval(x, None);
            let mut u = Sparse::new();
            push_affine(&mut u, a, 1.0);
            outer(&mut h, &u, w / (v * v));
        }
        for (idx, c) in p.constraints.iter().enumerate() {
            let z = st.z[idx];
            Local { c }.hess(x, z, &mut h);
            outer(&mut h, &res.gi[idx], z / st.s[idx]);
        }
        let scale = h.max_diag().max(1.0);
        for i in 0..p.num_vars {
            h.add(i, i, reg * scale);
        }
        h
    }

    fn factor(&self, st: &State, res: &Residuals) -> Option<Skyline> {
        let mut reg = 0.0;
        for _ in 0..8 {
            let mut h = self.assemble(st, res, reg);
            if h.factor().is_ok() {
                return Some(h);
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
        }
        None
    }

    /// Newton direction for complementarity target `rc = s∘z - target`.
    fn direction(
        &self,
        h: &Skyline,
        schur: &Option<(Vec<Vec<f64>>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
        st: &State,
        res: &Residuals,
        rc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.p.num_vars;
        let mut rhs: Vec<f64> = res.rd.iter().map(|v| -v).collect();
        for (idx, g) in res.gi.iter().enumerate() {
            let w = (st.z[idx] * res.rp[idx] - rc[idx]) / st.s[idx];
            for &(i, c) in g {
                rhs[i] -= c * w;
            }
        }
        let mut dx = rhs.clone();
        h.solve(&mut dx);
        let mut dy = vec![0.0; self.eq_rows.len()];
        if let Some((hinv_at, lu)) = schur {
            // A dx = -re with dx = H⁻¹(rhs - Aᵀ dy)
            let t: Vec<f64> = self
                .eq_rows
                .iter()
                .zip(&res.re)
                .map(|(row, re)| dot_sparse(row, &dx) + re)
                .collect();
            let sol = lu.solve(&DVector::from_vec(t)).unwrap_or_else(|| DVector::zeros(dy.len()));
            for (j, v) in sol.iter().enumerate() {
                dy[j] = *v;
                for i in 0..n {
                    dx[i] -= hinv_at[j][i] * v;
                }
            }
        }
        let ds: Vec<f64> = res.gi.iter().zip(&res.rp).map(|(g, rp)| -rp - dot_sparse(g, &dx)).collect();
        let dz: Vec<f64> = (0..st.s.len()).map(|i| (-rc[i] - st.z[i] * ds[i]) / st.s[i]).collect();
        (dx, ds, dz, dy)
    }

    fn schur(&self, h: &Skyline) -> Option<(Vec<Vec<f64>>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)> {
        if self.eq_rows.is_empty() {
            return None;
        }
        let n = self.p.num_vars;
        let me = self.eq_rows.len();
        let cols: Vec<Vec<f64>> = self
            .eq_rows
            .iter()
            .map(|row| {
                let mut c = vec![0.0; n];
                for &(i, v) in row {
                    c[i] += v;
                }
                h.solve(&mut c);
                c
            })
            .collect();
        let mut s = DMatrix::<f64>::zeros(me, me);
        for i in 0..me {
            for j in 0..me {
                s[(i, j)] = dot_sparse(&self.eq_rows[i], &cols[j]);
            }
        }
        Some((cols, s.lu()))
    }
}

/// Analytic gradient of a constraint over the scalar variables.
pub(super) fn constraint_grad(c: &Constraint, x: &[f64]) -> Vec<(usize, f64)> {
    Local { c }.grad(x)
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

fn advance(st: &State, d: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>), a: f64) -> State {
    let lin = |v: &[f64], dv: &[f64]| v.iter().zip(dv).map(|(x, d)| x + a * d).collect();
    State { x: lin(&st.x, &d.0), s: lin(&st.s, &d.1), z: lin(&st.z, &d.2), y: lin(&st.y, &d.3) }
}

pub fn solve(p: &ConvexProgram, x0: &[f64], tol: &Tolerances) -> Result<SolveReport, String> {
    let m = p.constraints.len();
    let solver = Solver::new(p);
    let mut st = State { x: x0.to_vec(), s: vec![1.0; m], z: vec![1.0; m], y: vec![0.0; p.equalities.len()] };
    let init = solver.eval(&st).ok_or("warm start outside the domain of the program")?;
    for (i, f) in init.fi.iter().enumerate() {
        st.s[i] = (-f).max(1e-2 * f.abs().max(1.0));
    }
    let mut res = solver.eval(&st).expect("domain unchanged");
    let mut merit = vec![res.merit(&st)];
    let mut status = Status::MaxIters;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    while iterations < tol.max_iters {
        let gap = dot(&st.s, &st.z);
        let dual = amax(&res.rd) / amax(&res.g0).max(1.0);
        let primal = amax(&res.rp).max(amax(&res.re));
        let natural = res.fi.iter().fold(0.0f64, |a, f| a.max(*f)).max(amax(&res.re));
        kkt = dual.max(gap / res.f0.abs().max(1.0));
        if dual <= tol.opt_tol
            && gap <= tol.opt_tol * res.f0.abs().max(1.0)
            && primal <= tol.feas_tol
            && natural <= tol.feas_tol
        {
            status = Status::Optimal;
            break;
        }
        if amax(&st.z) > 1e14 && primal > tol.feas_tol {
            status = Status::Infeasible;
            break;
        }
        iterations += 1;
        let Some(h) = solver.factor(&st, &res) else { break };
        let schur = solver.schur(&h);
        let mu = if m > 0 { gap / m as f64 } else { 0.0 };
        let sz: Vec<f64> = st.s.iter().zip(&st.z).map(|(s, z)| s * z).collect();
        let aff = solver.direction(&h, &schur, &st, &res, &sz);
        let a_aff = max_step(&st.s, &aff.1).min(max_step(&st.z, &aff.2));
        let mu_aff = if m > 0 {
            (0..m).map(|i| (st.s[i] + a_aff * aff.1[i]) * (st.z[i] + a_aff * aff.2[i])).sum::<f64>() / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };
        let corr: Vec<f64> = (0..m).map(|i| sz[i] + aff.1[i] * aff.2[i] - sigma * mu).collect();
        let plain: Vec<f64> = (0..m).map(|i| sz[i] - sigma.max(0.1) * mu).collect();
        let phi0 = *merit.last().unwrap();
        let mut accepted = None;
        for rc in [&corr, &plain] {
            let d = solver.direction(&h, &schur, &st, &res, rc);
            let mut a = 0.995 * max_step(&st.s, &d.1).min(max_step(&st.z, &d.2));
            a = a.min(1.0);
            while a > 1e-12 {
                let cand = advance(&st, &d, a);
                if let Some(r) = solver.eval(&cand) {
                    let phi = r.merit(&cand);
                    if phi.is_finite() && phi <= phi0 * (1.0 - 1e-4 * a) {
                        accepted = Some((cand, r, phi));
                        break;
                    }
                }
                a *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((cand, r, phi)) = accepted else { break };
        debug_assert!(phi <= phi0, "merit increased: {phi0} -> {phi}");
        st = cand;
        res = r;
        merit.push(phi);
    }
    let viol = p.max_violation(&st.x, None);
    if status != Status::Optimal && viol > tol.feas_tol * 10.0 {
        status = Status::Infeasible;
    }
    Ok(SolveReport {
        status,
        objective: p.objective_value(&st.x, None).unwrap_or(f64::NEG_INFINITY),
        x: st.x,
        b: None,
        max_violation: viol,
        iterations,
        kkt_residual: kkt,
        merit,
    })
}
