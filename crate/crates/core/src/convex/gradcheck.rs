use super::ipm::constraint_grad;
use super::program::{trace_product, Affine, Constraint, ConvexProgram, HMat};
use crate::C64;

/// Hermitian basis directions used to probe matrix terms.
fn directions(d: usize) -> Vec<HMat> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut re = HMat::zeros(d, d);
            re[(i, j)] = C64::new(1.0, 0.0);
            re[(j, i)] = C64::new(1.0, 0.0);
            out.push(re);
            if i != j {
                let mut im = HMat::zeros(d, d);
                im[(i, j)] = C64::new(0.0, 1.0);
                im[(j, i)] = C64::new(0.0, -1.0);
                out.push(im);
            }
        }
    }
    out
}

struct Term<'a> {
    value: Box<dyn Fn(&[f64], Option<&HMat>) -> Option<f64> + 'a>,
    scalar_grad: Vec<(usize, f64)>,
    /// Matrix gradient scaled by `matrix_weight`.
    matrix: Option<&'a HMat>,
    matrix_weight: f64,
}

/// Largest relative mismatch between analytic gradients and central finite
/// differences (step `1e-6` relative) over every objective and constraint
/// term of `p` at `(x, b)`.
pub fn check_gradient(p: &ConvexProgram, x: &[f64], b: Option<&HMat>) -> f64 {
    let mut terms: Vec<Term> = Vec::new();
    let lin = &p.objective.linear;
    terms.push(Term {
        value: Box::new(move |x, b| Some(lin.eval(x, b))),
        scalar_grad: lin.terms.clone(),
        matrix: lin.matrix.as_deref(),
        matrix_weight: 1.0,
    });
    for (w, a) in &p.objective.logs {
        let v = a.eval(x, b);
        let w = *w;
        terms.push(Term {
            value: Box::new(move |x, b| {
                let v = a.eval(x, b);
                (v > 0.0).then(|| w * v.ln())
            }),
            scalar_grad: a.terms.iter().map(|&(i, c)| (i, w * c / v)).collect(),
            matrix: a.matrix.as_deref(),
            matrix_weight: w / v,
        });
    }
    for c in &p.constraints {
        let (matrix, matrix_weight) = match c {
            Constraint::Affine(Affine { matrix: Some(m), .. }) => (Some(m.as_ref()), 1.0),
            _ => (None, 0.0),
        };
        terms.push(Term {
            value: Box::new(move |x, b| c.value(x, b)),
            scalar_grad: constraint_grad(c, x),
            matrix,
            matrix_weight,
        });
    }
    let mut worst: f64 = 0.0;
    for t in &terms {
        let mut dense = vec![0.0; x.len()];
        for &(i, c) in &t.scalar_grad {
            dense[i] += c;
        }
        let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let (Some(fp), Some(fm)) = ((t.value)(&xp, b), (t.value)(&xm, b)) else { continue };
            let fd = (fp - fm) / (2.0 * h);
            let denom = dense[i].abs().max(fd.abs()).max(scale).max(1e-300);
            worst = worst.max((fd - dense[i]).abs() / denom);
        }
        if let (Some(m), Some(b)) = (t.matrix, b) {
            let d = b.nrows();
            let dirs = directions(d);
            let an: Vec<f64> = dirs.iter().map(|e| t.matrix_weight * trace_product(m, e)).collect();
            let scale = an.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let h = 1e-6;
            for (e, a) in dirs.iter().zip(&an) {
                let bp = b + e * C64::new(h, 0.0);
                let bm = b - e * C64::new(h, 0.0);
                let (Some(fp), Some(fm)) = ((t.value)(x, Some(&bp)), (t.value)(x, Some(&bm))) else { continue };
                let fd = (fp - fm) / (2.0 * h);
                let denom = a.abs().max(fd.abs()).max(scale).max(1e-300);
                worst = worst.max((fd - a).abs() / denom);
            }
        }
    }
    worst
}
