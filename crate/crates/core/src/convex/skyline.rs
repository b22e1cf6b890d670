//! Symmetric positive definite matrices in envelope (skyline) storage.
//!
//! Row `i` stores columns `first[i]..=i` contiguously. Cholesky fill stays
//! inside the envelope, so factorisation is in place.

#[derive(Debug, Clone)]
pub struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl Skyline {
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope must start at or before the diagonal");
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Self { first, start, data: vec![0.0; acc] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j >= self.first[i] && j <= i, "entry ({i},{j}) outside envelope");
        self.start[i] + j - self.first[i]
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[self.idx(i, i)].abs()).fold(0.0, f64::max)
    }

    /// In-place Cholesky `A = L Lᵀ`; fails on a non-positive pivot.
    pub fn factor(&mut self) -> Result<(), usize> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let ri = self.start[i] + k0 - fi;
                let rj = self.start[j] + k0 - fj;
                let len = j - k0;
                let mut dot = 0.0;
                for t in 0..len {
                    dot += self.data[ri + t] * self.data[rj + t];
                }
                let pos = self.start[i] + j - fi;
                let v = self.data[pos] - dot;
                if j < i {
                    let djj = self.data[self.start[j] + j - fj];
                    self.data[pos] = v / djj;
                } else {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(i);
                    }
                    self.data[pos] = v.sqrt();
                }
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` in place after [`factor`](Self::factor).
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let mut v = b[i];
            for (t, l) in row[..i - fi].iter().enumerate() {
                v -= l * b[fi + t];
            }
            b[i] = v / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            b[i] /= row[i - fi];
            let xi = b[i];
            for (t, l) in row[..i - fi].iter().enumerate() {
                b[fi + t] -= l * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn matches_dense_cholesky() {
        // banded SPD matrix with an irregular envelope
        let n = 7;
        let first = vec![0, 0, 1, 0, 2, 4, 3];
        let mut sky = Skyline::new(first.clone());
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in first[i]..=i {
                let v = if i == j { 10.0 + i as f64 } else { 0.3 * ((i * 7 + j * 3) % 5) as f64 - 0.6 };
                sky.add(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let mut x = b.clone();
        sky.factor().unwrap();
        sky.solve(&mut x);
        let r = &dense * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let mut sky = Skyline::new(vec![0, 0]);
        sky.add(0, 0, 1.0);
        sky.add(1, 0, 2.0);
        sky.add(1, 1, 1.0);
        assert!(sky.factor().is_err());
    }
}
