//! Barrier method over the elliptope `{B ⪰ 0, diag(B) = 1}`.
//!
//! Programs here have a single Hermitian variable, affine inequality
//! constraints `⟨G_j, B⟩ + h_j ≤ 0` and a concave objective made of an affine
//! part and weighted logs of affine forms. Newton systems use the operator
//! `X ↦ B⁻¹ X B⁻¹` of `-log det` as a base and fold every other curvature
//! term in as a low-rank update (Woodbury), so one step costs a handful of
//! dense `d×d` products. The unit diagonal is enforced exactly through a
//! `d×d` Schur system on its multipliers.
//!
//! A phase-I problem with one extra scalar finds a strictly feasible start
//! when the warm start is not one.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::program::{trace_product, ConvexProgram, HMat};
use super::{SolveReport, Status, Tolerances};
use crate::C64;

struct Lin {
    m: Option<Arc<HMat>>,
    c: f64,
}

impl Lin {
    fn eval(&self, b: &HMat) -> f64 {
        self.c + self.m.as_ref().map_or(0.0, |m| trace_product(m, b))
    }
}

struct Data {
    d: usize,
    obj: Lin,
    logs: Vec<(f64, Lin)>,
    cons: Vec<Lin>,
}

/// Tangent-space vector: a Hermitian matrix and an optional scalar.
#[derive(Clone)]
struct Vecx {
    m: HMat,
    s: f64,
}

impl Vecx {
    fn inner(&self, o: &Vecx) -> f64 {
        trace_product(&self.m, &o.m) + self.s * o.s
    }
}

/// Low-rank curvature term `d · c cᵀ`.
struct Rank1 {
    c: Vecx,
    d: f64,
}

struct Eval {
    value: f64,
    grad: Vecx,
    terms: Vec<Rank1>,
    /// Base curvature on the scalar, if present.
    hs: f64,
}

/// Lower Cholesky factor of a Hermitian matrix (reads the lower triangle),
/// or `None` unless the matrix is numerically positive definite.
struct Chol {
    l: HMat,
}

impl Chol {
    fn inverse(&self) -> HMat {
        let d = self.l.nrows();
        // L⁻¹ column by column, then B⁻¹ = L⁻ᴴ L⁻¹
        let mut linv = HMat::zeros(d, d);
        for j in 0..d {
            linv[(j, j)] = C64::new(1.0, 0.0) / self.l[(j, j)];
            for i in j + 1..d {
                let mut acc = C64::new(0.0, 0.0);
                for k in j..i {
                    acc += self.l[(i, k)] * linv[(k, j)];
                }
                linv[(i, j)] = -acc / self.l[(i, i)];
            }
        }
        linv.adjoint() * linv
    }
}

fn chol(b: &HMat) -> Option<Chol> {
    let d = b.nrows();
    let mut l = HMat::zeros(d, d);
    for j in 0..d {
        let mut piv = b[(j, j)].re;
        for k in 0..j {
            piv -= l[(j, k)].norm_sqr();
        }
        if !(piv > 0.0) || !piv.is_finite() {
            return None;
        }
        let ljj = piv.sqrt();
        l[(j, j)] = C64::new(ljj, 0.0);
        for i in j + 1..d {
            let mut acc = b[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Some(Chol { l })
}

fn logdet(c: &Chol) -> f64 {
    (0..c.l.nrows()).map(|i| 2.0 * c.l[(i, i)].re.ln()).sum()
}

fn zero(d: usize) -> HMat {
    HMat::zeros(d, d)
}

fn axpy(acc: &mut HMat, a: f64, m: &Option<Arc<HMat>>) {
    if let Some(m) = m {
        *acc += m.as_ref() * C64::new(a, 0.0);
    }
}

fn matrix_or_zero(m: &Option<Arc<HMat>>, d: usize) -> HMat {
    m.as_ref().map_or_else(|| zero(d), |m| m.as_ref().clone())
}

/// Phase II barrier `t·F0 − Σ ln(−g_j) − ln det B` with F0 the negated
/// objective, or the phase-I barrier when `phase1` is set
/// (`t·s − Σ ln(s − g_j/n_j) − ln(s + 1) − ln det B`).
fn evaluate(data: &Data, b: &HMat, s: f64, t: f64, phase1: Option<&[f64]>, want_grad: bool) -> Option<Eval> {
    let d = data.d;
    let ch = chol(b)?;
    let mut value = -logdet(&ch);
    let mut grad = Vecx { m: zero(d), s: 0.0 };
    let mut terms = Vec::new();
    let mut hs = 0.0;
    match phase1 {
        None => {
            value -= t * data.obj.eval(b);
            if want_grad {
                axpy(&mut grad.m, -t, &data.obj.m);
            }
            for (w, l) in &data.logs {
                let v = l.eval(b);
                if !(v > 0.0) {
                    return None;
                }
                value -= t * w * v.ln();
                if want_grad {
                    axpy(&mut grad.m, -t * w / v, &l.m);
                    terms.push(Rank1 { c: Vecx { m: matrix_or_zero(&l.m, d), s: 0.0 }, d: t * w / (v * v) });
                }
            }
            for l in &data.cons {
                let g = l.eval(b);
                if !(g < 0.0) {
                    return None;
                }
                value -= (-g).ln();
                if want_grad {
                    axpy(&mut grad.m, -1.0 / g, &l.m);
                    terms.push(Rank1 { c: Vecx { m: matrix_or_zero(&l.m, d), s: 0.0 }, d: 1.0 / (g * g) });
                }
            }
        }
        Some(norms) => {
            if !(s + 1.0 > 0.0) {
                return None;
            }
            value += t * s - (s + 1.0).ln();
            grad.s = t - 1.0 / (s + 1.0);
            hs = 1.0 / ((s + 1.0) * (s + 1.0));
            for (l, nj) in data.cons.iter().zip(norms) {
                let slack = s - l.eval(b) / nj;
                if !(slack > 0.0) {
                    return None;
                }
                value -= slack.ln();
                if want_grad {
                    axpy(&mut grad.m, 1.0 / (slack * nj), &l.m);
                    grad.s -= 1.0 / slack;
                    let mut c = matrix_or_zero(&l.m, d);
                    c *= C64::new(-1.0 / nj, 0.0);
                    terms.push(Rank1 { c: Vecx { m: c, s: 1.0 }, d: 1.0 / (slack * slack) });
                }
            }
        }
    }
    if want_grad {
        grad.m -= ch.inverse();
    }
    Some(Eval { value, grad, terms, hs })
}

/// Newton step `Δ` (with zero diagonal on the matrix part) and `λ²`.
fn newton(b: &HMat, ev: &Eval, phase1: bool) -> Option<(Vecx, f64)> {
    let d = b.nrows();
    let base_inv = |v: &Vecx| -> Vecx {
        Vecx { m: b * &v.m * b, s: if phase1 { v.s / ev.hs } else { 0.0 } }
    };
    let r = ev.terms.len();
    let hc: Vec<Vecx> = ev.terms.iter().map(|t| base_inv(&t.c)).collect();
    let mut kmat = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let v = ev.terms[i].c.inner(&hc[j]);
            kmat[(i, j)] = v;
            kmat[(j, i)] = v;
        }
        kmat[(i, i)] += 1.0 / ev.terms[i].d;
    }
    let klu = kmat.lu();
    let hinv = |v: &Vecx| -> Option<Vecx> {
        let mut out = base_inv(v);
        if r > 0 {
            let proj = DVector::from_iterator(r, ev.terms.iter().map(|t| t.c.inner(&out)));
            let coef = klu.solve(&proj)?;
            for (l, h) in hc.iter().enumerate() {
                out.m -= &h.m * C64::new(coef[l], 0.0);
                out.s -= h.s * coef[l];
            }
        }
        Some(out)
    };
    // diag-multiplier Schur complement S = E H⁻¹ Eᵀ
    let mut s = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            s[(i, j)] = b[(i, j)].norm_sqr();
        }
    }
    if r > 0 {
        let v = DMatrix::from_fn(r, d, |l, m| hc[l].m[(m, m)].re);
        let kv = klu.solve(&v)?;
        s -= v.transpose() * kv;
    }
    let hg = hinv(&ev.grad)?;
    let rhs = DVector::from_iterator(d, (0..d).map(|m| -hg.m[(m, m)].re));
    let nu = s.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| s.lu().solve(&rhs))?;
    let mut g = ev.grad.clone();
    for m in 0..d {
        g.m[(m, m)] += C64::new(nu[m], 0.0);
    }
    let mut step = hinv(&g)?;
    step.m *= C64::new(-1.0, 0.0);
    step.s = -step.s;
    for m in 0..d {
        step.m[(m, m)] = C64::new(0.0, 0.0);
    }
    // keep the step exactly Hermitian
    let herm = (&step.m + step.m.adjoint()) * C64::new(0.5, 0.0);
    step.m = herm;
    let lambda2 = -ev.grad.inner(&step);
    Some((step, lambda2))
}

struct Center {
    b: HMat,
    s: f64,
    steps: usize,
}

/// Damped Newton centering at fixed `t`.
fn center(data: &Data, b: HMat, s: f64, t: f64, phase1: Option<&[f64]>, max_steps: usize) -> Center {
    let mut b = b;
    let mut s = s;
    let mut steps = 0;
    while steps < max_steps {
        let Some(ev) = evaluate(data, &b, s, t, phase1, true) else { break };
        let Some((dir, lambda2)) = newton(&b, &ev, phase1.is_some()) else { break };
        if !(lambda2 > 1e-10) {
            break;
        }
        steps += 1;
        let mut a = 1.0;
        let mut moved = false;
        while a > 1e-10 {
            let nb = &b + &dir.m * C64::new(a, 0.0);
            let ns = s + a * dir.s;
            if let Some(nv) = evaluate(data, &nb, ns, t, phase1, false) {
                if nv.value <= ev.value - 0.25 * a * lambda2 {
                    b = nb;
                    s = ns;
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            break;
        }
        if phase1.is_some() && s < 0.0 {
            break;
        }
    }
    Center { b, s, steps }
}

pub fn solve(p: &ConvexProgram, b0: &HMat, tol: &Tolerances) -> Result<SolveReport, String> {
    let d = p.psd_dim.ok_or("program has no PSD block")?;
    if b0.nrows() != d || b0.ncols() != d {
        return Err("warm start has the wrong size".into());
    }
    let lin = |a: &super::program::Affine| Lin { m: a.matrix.clone(), c: a.constant };
    let data = Data {
        d,
        obj: lin(&p.objective.linear),
        logs: p.objective.logs.iter().map(|(w, a)| (*w, lin(a))).collect(),
        cons: p
            .constraints
            .iter()
            .map(|c| match c {
                super::program::Constraint::Affine(a) => lin(a),
                _ => unreachable!("validated"),
            })
            .collect(),
    };
    let nu = (data.cons.len() + d) as f64;
    let mut steps = 0;
    let mut merit = Vec::new();

    // interior start: shrink towards the identity, keeping the diagonal
    let mut b = b0 * C64::new(0.99, 0.0);
    for i in 0..d {
        b[(i, i)] = C64::new(1.0, 0.0);
    }
    let strictly_ok = |b: &HMat| chol(b).is_some() && data.cons.iter().all(|l| l.eval(b) < 0.0);
    if !strictly_ok(&b) {
        if chol(&b).is_none() {
            b = HMat::identity(d, d);
        }
        let norms: Vec<f64> = data
            .cons
            .iter()
            .map(|l| {
                let m = l.m.as_ref().map_or(0.0, |m| m.iter().map(|v| v.norm()).fold(0.0, f64::max));
                m.max(l.c.abs()).max(1e-300)
            })
            .collect();
        let worst = data.cons.iter().zip(&norms).map(|(l, n)| l.eval(&b) / n).fold(f64::NEG_INFINITY, f64::max);
        let mut s = worst.max(0.0) + 1.0;
        let mut t = 1.0;
        let mut found = false;
        while t < 1e12 && steps < tol.max_iters {
            let c = center(&data, b.clone(), s, t, Some(&norms), 100);
            steps += c.steps;
            b = c.b;
            s = c.s;
            merit.push(s);
            if s < -1e-9 && strictly_ok(&b) {
                found = true;
                break;
            }
            if s - nu / t > 0.0 {
                break;
            }
            t *= 20.0;
        }
        if !found {
            return Ok(SolveReport {
                status: Status::Infeasible,
                objective: p.objective_value(&[], Some(b0)).unwrap_or(f64::NEG_INFINITY),
                x: Vec::new(),
                b: Some(b0.clone()),
                max_violation: p.max_violation(&[], Some(b0)),
                iterations: steps,
                kkt_residual: f64::INFINITY,
                merit,
            });
        }
    }

    let f_scale = |b: &HMat| p.objective_value(&[], Some(b)).unwrap_or(0.0).abs().max(1.0);
    let mut t = nu / f_scale(&b);
    let mut status = Status::MaxIters;
    loop {
        let c = center(&data, b.clone(), 0.0, t, None, 100);
        steps += c.steps;
        b = c.b;
        merit.push(nu / t);
        if nu / t <= tol.opt_tol * f_scale(&b) {
            status = Status::Optimal;
            break;
        }
        if steps >= tol.max_iters {
            break;
        }
        t *= 20.0;
    }
    let gap = nu / t / f_scale(&b);
    Ok(SolveReport {
        status,
        objective: p.objective_value(&[], Some(&b)).unwrap_or(f64::NEG_INFINITY),
        x: Vec::new(),
        max_violation: p.max_violation(&[], Some(&b)),
        b: Some(b),
        iterations: steps,
        kkt_residual: gap,
        merit,
    })
}
