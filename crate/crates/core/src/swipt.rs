//! Rate and energy-harvesting formulas shared by every subproblem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{dist, Scenario, Solution};
use crate::ChannelMeans;

/// Sigmoidal (logistic) energy-harvesting transfer function.
///
/// `xi` is the saturation power in W, `a` the steepness in 1/W and `b` the
/// turn-on point in W. The normalising constants `X` and `Y` are always
/// derived from these three numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhModel {
    pub xi: f64,
    pub a: f64,
    pub b: f64,
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl EhModel {
    pub fn new(xi: f64, a: f64, b: f64) -> Self {
        Self { xi, a, b }
    }

    /// `X = e^{ab} / (1 + e^{ab})`.
    pub fn x_factor(&self) -> f64 {
        logistic(self.a * self.b)
    }

    /// `Y = xi / e^{ab}`.
    pub fn y_offset(&self) -> f64 {
        self.xi * (-self.a * self.b).exp()
    }

    /// Harvested power for input power `p` (W).
    pub fn harvest(&self, p: f64) -> f64 {
        let (a, b) = (self.a, self.b);
        let scale = self.xi / self.x_factor();
        if a * p > 1.0 {
            scale * (logistic(a * (p - b)) - logistic(-a * b))
        } else {
            // difference of two nearby logistics, written to avoid cancellation
            let u = a * (p - b);
            let v = -a * b;
            let num = v.exp() * (a * p).exp_m1();
            scale * num / ((1.0 + u.exp()) * (1.0 + v.exp()))
        }
    }

    /// Input power needed to harvest `x` watts. Errors when `x` is at or
    /// beyond saturation.
    pub fn inverse(&self, x: f64) -> std::result::Result<f64, f64> {
        if !(x >= 0.0) || x >= self.xi {
            return Err(self.xi);
        }
        let s = logistic(-self.a * self.b);
        let eps = x * self.x_factor() / self.xi;
        let r = ((eps / s).ln_1p() - (-eps / (1.0 - s)).ln_1p()) / self.a;
        Ok(r)
    }

    /// Derivative of [`harvest`](Self::harvest).
    pub fn harvest_slope(&self, p: f64) -> f64 {
        let g = logistic(self.a * (p - self.b));
        self.xi / self.x_factor() * self.a * g * (1.0 - g)
    }
}

/// Receiver noise of one user.
#[derive(Debug, Clone, Copy)]
pub struct Noise {
    pub sigma2: f64,
    pub delta2: f64,
}

/// Expected rate of user `k` in one slot (bits/s/Hz).
///
/// `p` holds every user's power in the slot and `psi[i][k]` the decoding
/// indicators of that slot; `psi[k][k]` is ignored.
pub fn expected_rate(k: usize, p: &[f64], rho: f64, psi: &[Vec<f64>], xi: f64, noise: Noise) -> f64 {
    if rho >= 1.0 || p[k] <= 0.0 {
        return 0.0;
    }
    let one_m = 1.0 - rho;
    let interference: f64 = (0..p.len()).filter(|&i| i != k).map(|i| psi[i][k] * p[i]).sum();
    let denom = one_m * interference + (one_m * noise.sigma2 + noise.delta2) / xi;
    (one_m * p[k] / denom).ln_1p() / std::f64::consts::LN_2
}

/// Expected sum-rate over all users and slots.
pub fn sum_rate(sc: &Scenario, sol: &Solution, means: &ChannelMeans) -> f64 {
    (0..sc.n).map(|n| slot_rate(sc, sol, means, n)).sum()
}

pub fn slot_rate(sc: &Scenario, sol: &Solution, means: &ChannelMeans, n: usize) -> f64 {
    (0..sc.k)
        .map(|k| {
            expected_rate(k, &sol.p[n], sol.rho[n][k], &sol.psi[n], means.xi[n][k], sc.noise(k))
        })
        .sum()
}

/// Power that user `k` must feed its harvester each slot, `Ξ⁻¹(χ/δ)`.
pub fn harvest_demand(sc: &Scenario, k: usize) -> Result<f64> {
    let target = sc.chi_th / sc.delta;
    sc.eh[k].inverse(target).map_err(|saturation| Error::HarvestDomain {
        user: k,
        demand: target,
        saturation,
    })
}

/// Energy constraint `ρ(Σ p ξ + σ²) ≥ Ξ⁻¹(χ/δ)`.
pub fn energy_ok(sc: &Scenario, k: usize, rho: f64, p: &[f64], xi: f64) -> Result<bool> {
    let need = harvest_demand(sc, k)?;
    let total: f64 = p.iter().sum();
    Ok(rho * (total * xi + sc.sigma2[k]) >= need)
}

/// Distance-based decoding order: `psi[n][i][k] = 1` iff user `i` is closer
/// to the UAV than user `k` (ties go to the lower index).
pub fn decoding_order(sc: &Scenario, q: &[[f64; 3]]) -> Vec<Vec<Vec<f64>>> {
    q.iter()
        .map(|qn| {
            let d: Vec<f64> = sc.user_pos.iter().map(|w| dist(qn, w)).collect();
            order_from_distances(&d)
        })
        .collect()
}

pub fn order_from_distances(d: &[f64]) -> Vec<Vec<f64>> {
    let k = d.len();
    let mut psi = vec![vec![0.0; k]; k];
    for i in 0..k {
        psi[i][i] = 1.0;
        for j in 0..k {
            if i != j && (d[i] < d[j] || (d[i] == d[j] && i < j)) {
                psi[i][j] = 1.0;
            }
        }
    }
    psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper_eh() -> EhModel {
        EhModel::new(0.024, 150.0, 0.024)
    }

    #[test]
    fn harvest_limits() {
        let eh = paper_eh();
        assert_eq!(eh.harvest(0.0), 0.0);
        assert_relative_eq!(eh.harvest(1e3), 0.024, max_relative = 1e-12);
        // direct evaluation of the logistic form at the turn-on point
        assert_relative_eq!(eh.harvest(0.024), 0.011_672, max_relative = 1e-4);
    }

    #[test]
    fn textbook_form_agrees() {
        let eh = paper_eh();
        let (x, y) = (eh.x_factor(), eh.y_offset());
        for &p in &[1e-6, 1e-3, 0.01, 0.05, 0.2] {
            let direct = eh.xi / (x * (1.0 + (-eh.a * (p - eh.b)).exp())) - y;
            assert_relative_eq!(eh.harvest(p), direct, max_relative = 1e-9);
            let inv = eh.b - (eh.xi / ((direct + y) * x) - 1.0).ln() / eh.a;
            assert_relative_eq!(eh.inverse(direct).unwrap(), inv, max_relative = 1e-6);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let eh = paper_eh();
        for i in 0..=200 {
            let p = 0.1 * i as f64 / 200.0;
            let back = eh.inverse(eh.harvest(p)).unwrap();
            assert!((back - p).abs() <= 1e-9 * p.max(1e-300), "p={p} back={back}");
        }
        assert_eq!(eh.inverse(0.0).unwrap(), 0.0);
        assert!(eh.inverse(0.024).is_err());
        assert!(eh.inverse(-1.0).is_err());
    }

    #[test]
    fn slope_matches_finite_difference() {
        let eh = paper_eh();
        for &p in &[0.0, 0.01, 0.03] {
            let h = 1e-7;
            let fd = (eh.harvest(p + h) - eh.harvest((p - h).max(0.0))) / (p + h - (p - h).max(0.0));
            assert_relative_eq!(eh.harvest_slope(p), fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn rate_examples() {
        let noise = Noise { sigma2: 1e-11, delta2: 1e-11 };
        let psi = vec![vec![1.0]];
        let r = expected_rate(0, &[1e-2], 0.0, &psi, 1e-9, noise);
        assert_relative_eq!(r, (1.5f64).log2(), max_relative = 1e-12);
        assert_relative_eq!(r, 0.585, max_relative = 1e-3);
        assert_eq!(expected_rate(0, &[0.0], 0.0, &psi, 1e-9, noise), 0.0);
        assert_eq!(expected_rate(0, &[1.0], 1.0, &psi, 1e-9, noise), 0.0);
        let quiet = Noise { sigma2: 1e-11, delta2: 0.0 };
        let a = expected_rate(0, &[1e-2], 0.3, &psi, 1e-9, quiet);
        let b = expected_rate(0, &[1e-2], 0.9, &psi, 1e-9, quiet);
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert_relative_eq!(a, (1.0 + 1e-2 * 1e-9 / 1e-11f64).log2(), max_relative = 1e-12);
    }

    #[test]
    fn rate_decreases_in_split() {
        let noise = Noise { sigma2: 1e-11, delta2: 1e-11 };
        let psi = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        let mut last = f64::INFINITY;
        for i in 0..20 {
            let r = expected_rate(1, &[0.3, 0.7], i as f64 / 20.0, &psi, 1e-8, noise);
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn distance_order() {
        let psi = order_from_distances(&[100.0, 200.0]);
        assert_eq!(psi[0][1], 1.0);
        assert_eq!(psi[1][0], 0.0);
        let tie = order_from_distances(&[50.0, 50.0]);
        assert_eq!(tie[0][1], 1.0);
        assert_eq!(tie[1][0], 0.0);
        let chain = order_from_distances(&[1.0, 2.0, 3.0, 4.0]);
        for i in 0..4 {
            for k in 0..4 {
                if i != k {
                    assert_eq!(chain[i][k], if i < k { 1.0 } else { 0.0 });
                }
            }
        }
    }
}
