use std::sync::Arc;

use nalgebra::DMatrix;

use crate::C64;

pub type HMat = DMatrix<C64>;

/// `Σ coef·x_i + constant (+ Re tr(C·B))`.
#[derive(Debug, Clone, Default)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
    pub matrix: Option<Arc<HMat>>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, ..Default::default() }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], ..Default::default() }
    }

    pub fn term(i: usize, coef: f64) -> Self {
        Self { terms: vec![(i, coef)], ..Default::default() }
    }

    pub fn matrix(c: HMat, constant: f64) -> Self {
        Self { matrix: Some(Arc::new(c)), constant, ..Default::default() }
    }

    pub fn plus(mut self, i: usize, coef: f64) -> Self {
        self.terms.push((i, coef));
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn add(mut self, other: &Affine) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        if let Some(m) = &other.matrix {
            self.matrix = Some(match self.matrix.take() {
                Some(own) => Arc::new(own.as_ref() + m.as_ref()),
                None => m.clone(),
            });
        }
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        if let Some(m) = self.matrix.take() {
            self.matrix = Some(Arc::new(m.as_ref() * C64::new(s, 0.0)));
        }
        self
    }

    pub fn neg(self) -> Self {
        self.scale(-1.0)
    }

    pub fn eval(&self, x: &[f64], b: Option<&HMat>) -> f64 {
        let mut v = self.constant;
        for &(i, c) in &self.terms {
            v += c * x[i];
        }
        if let (Some(m), Some(b)) = (&self.matrix, b) {
            v += trace_product(m, b);
        }
        v
    }
}

/// `Re tr(C·B)` for square matrices of equal size.
pub fn trace_product(c: &HMat, b: &HMat) -> f64 {
    let n = c.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (c[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Convex constraint `g(x) ≤ 0`.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// `a(x) ≤ 0`.
    Affine(Affine),
    /// Second-order cone `‖v(x)‖ ≤ t(x)`, handled as `‖v‖²/t − t ≤ 0`, `t > 0`.
    Soc { v: Vec<Affine>, t: Affine },
    /// `‖v(x)‖² ≤ r(x)`.
    Quadratic { v: Vec<Affine>, r: Affine },
    /// `c / d(x) ≤ r(x)` with `c > 0`, `d > 0`.
    Reciprocal { c: f64, d: Affine, r: Affine },
    /// `c · x_a^{-e_a} · x_b^{-e_b} ≤ r(x)` with `c, e_a, e_b > 0` and `a ≠ b`.
    PowerProduct { c: f64, a: (usize, f64), b: (usize, f64), r: Affine },
}

impl Constraint {
    pub fn le(lhs: Affine, rhs: Affine) -> Self {
        Constraint::Affine(lhs.add(&rhs.neg()))
    }

    pub fn lower(i: usize, lo: f64) -> Self {
        Constraint::Affine(Affine::term(i, -1.0).offset(lo))
    }

    pub fn upper(i: usize, hi: f64) -> Self {
        Constraint::Affine(Affine::var(i).offset(-hi))
    }

    /// Value of `g`, or `None` outside its domain.
    pub fn value(&self, x: &[f64], b: Option<&HMat>) -> Option<f64> {
        match self {
            Constraint::Affine(a) => Some(a.eval(x, b)),
            Constraint::Soc { v, t } => {
                let t = t.eval(x, b);
                if t <= 0.0 {
                    return None;
                }
                let s: f64 = v.iter().map(|a| a.eval(x, b).powi(2)).sum();
                Some(s / t - t)
            }
            Constraint::Quadratic { v, r } => {
                let s: f64 = v.iter().map(|a| a.eval(x, b).powi(2)).sum();
                Some(s - r.eval(x, b))
            }
            Constraint::Reciprocal { c, d, r } => {
                let d = d.eval(x, b);
                if d <= 0.0 {
                    return None;
                }
                Some(c / d - r.eval(x, b))
            }
            Constraint::PowerProduct { c, a, b: bb, r } => {
                let (xa, xb) = (x[a.0], x[bb.0]);
                if xa <= 0.0 || xb <= 0.0 {
                    return None;
                }
                Some(c * xa.powf(-a.1) * xb.powf(-bb.1) - r.eval(x, b))
            }
        }
    }

    /// Value in the natural sense of the constraint, i.e. for a cone
    /// `‖v‖ − t` rather than the barrier-friendly `‖v‖²/t − t`.
    pub fn violation(&self, x: &[f64], b: Option<&HMat>) -> f64 {
        match self {
            Constraint::Soc { v, t } => {
                let s: f64 = v.iter().map(|a| a.eval(x, b).powi(2)).sum();
                (s.sqrt() - t.eval(x, b)).max(0.0)
            }
            _ => self.value(x, b).map_or(f64::INFINITY, |v| v.max(0.0)),
        }
    }

    pub fn affine_parts(&self) -> Vec<&Affine> {
        match self {
            Constraint::Affine(a) => vec![a],
            Constraint::Soc { v, t } => v.iter().chain(std::iter::once(t)).collect(),
            Constraint::Quadratic { v, r } => v.iter().chain(std::iter::once(r)).collect(),
            Constraint::Reciprocal { d, r, .. } => vec![d, r],
            Constraint::PowerProduct { r, .. } => vec![r],
        }
    }

    /// Scalar variables the constraint touches (may repeat).
    pub fn variables(&self) -> Vec<usize> {
        let mut v: Vec<usize> =
            self.affine_parts().iter().flat_map(|a| a.terms.iter().map(|t| t.0)).collect();
        if let Constraint::PowerProduct { a, b, .. } = self {
            v.push(a.0);
            v.push(b.0);
        }
        v
    }
}

/// Concave objective `linear + Σ w·ln(arg)`, maximised.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub linear: Affine,
    pub logs: Vec<(f64, Affine)>,
}

impl Objective {
    pub fn value(&self, x: &[f64], b: Option<&HMat>) -> Option<f64> {
        let mut v = self.linear.eval(x, b);
        for (w, a) in &self.logs {
            let arg = a.eval(x, b);
            if arg <= 0.0 {
                return None;
            }
            v += w * arg.ln();
        }
        Some(v)
    }
}

/// A concave maximisation problem over scalar variables, or over a single
/// Hermitian matrix `B ⪰ 0` with unit diagonal (never both).
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub num_vars: usize,
    /// Size of the unit-diagonal PSD block, if any.
    pub psd_dim: Option<usize>,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
    pub equalities: Vec<Affine>,
}

impl ConvexProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, ..Default::default() }
    }

    pub fn with_psd(dim: usize) -> Self {
        Self { psd_dim: Some(dim), ..Default::default() }
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.num_vars;
        let check_affine = |a: &Affine| -> Result<(), String> {
            if let Some(&(i, _)) = a.terms.iter().find(|t| t.0 >= n) {
                return Err(format!("variable {i} out of range (program has {n})"));
            }
            if a.terms.iter().any(|t| !t.1.is_finite()) || !a.constant.is_finite() {
                return Err("non-finite coefficient".into());
            }
            match (&a.matrix, self.psd_dim) {
                (Some(_), None) => Err("matrix term without a PSD block".into()),
                (Some(m), Some(d)) if m.nrows() != d || m.ncols() != d => {
                    Err(format!("matrix term is {}x{}, block is {d}", m.nrows(), m.ncols()))
                }
                _ => Ok(()),
            }
        };
        check_affine(&self.objective.linear)?;
        for (w, a) in &self.objective.logs {
            if !(*w > 0.0) {
                return Err("log weights must be positive".into());
            }
            check_affine(a)?;
        }
        for c in &self.constraints {
            for a in c.affine_parts() {
                check_affine(a)?;
            }
            match c {
                Constraint::Reciprocal { c, .. } if !(*c > 0.0) => {
                    return Err("reciprocal numerator must be positive".into())
                }
                Constraint::PowerProduct { c, a, b, .. } => {
                    if !(*c > 0.0 && a.1 > 0.0 && b.1 > 0.0) || a.0 == b.0 || a.0 >= n || b.0 >= n {
                        return Err("malformed power-product constraint".into());
                    }
                }
                _ => {}
            }
            if self.psd_dim.is_some() && !matches!(c, Constraint::Affine(_)) {
                return Err("PSD programs support affine constraints only".into());
            }
        }
        for e in &self.equalities {
            check_affine(e)?;
        }
        if self.psd_dim.is_some() && (n > 0 || !self.equalities.is_empty()) {
            return Err("PSD programs may not mix in scalar variables or equalities".into());
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64], b: Option<&HMat>) -> Option<f64> {
        self.objective.value(x, b)
    }

    pub fn max_violation(&self, x: &[f64], b: Option<&HMat>) -> f64 {
        let ineq = self.constraints.iter().map(|c| c.violation(x, b)).fold(0.0, f64::max);
        let eq = self.equalities.iter().map(|e| e.eval(x, b).abs()).fold(0.0, f64::max);
        ineq.max(eq)
    }
}
