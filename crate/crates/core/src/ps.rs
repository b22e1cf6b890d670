//! Power-splitting ratios.
//!
//! For fixed powers the rate of user `k` strictly decreases in `ρ_k`, so the
//! best feasible ratio makes the harvesting constraint active:
//! `ρ* = Ξ⁻¹(χ/δ) / (Σ_i p_i ξ_k + σ_k²)`.

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::swipt::harvest_demand;
use crate::ChannelMeans;

/// Smallest ratio meeting the harvesting demand of user `k` in one slot.
pub fn optimal_ratio(sc: &Scenario, k: usize, total_power: f64, xi: f64) -> Result<f64> {
    let need = harvest_demand(sc, k)?;
    let rho = need / (total_power * xi + sc.sigma2[k]);
    Ok(rho.max(0.0))
}

/// Optimal ratios for every user and slot, indexed `[n][k]`.
pub fn solve_ps(sc: &Scenario, means: &ChannelMeans, p: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    (0..sc.n)
        .map(|n| {
            let total: f64 = p[n].iter().sum();
            (0..sc.k)
                .map(|k| {
                    let rho = optimal_ratio(sc, k, total, means.xi[n][k])?;
                    if rho > 1.0 {
                        return Err(Error::Infeasible {
                            slot: n,
                            user: k,
                            reason: format!("harvesting needs a split ratio of {rho:.4} > 1"),
                        });
                    }
                    Ok(rho)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, Params};
    use crate::swipt::{energy_ok, expected_rate};
    use approx::assert_relative_eq;

    fn setup(chi: f64) -> (Scenario, ChannelMeans, Vec<Vec<f64>>) {
        let params = Params::default().with("K", 3.0).unwrap().with("M", 4.0).unwrap().with("chi_th", chi).unwrap();
        let sc = generate_scenario(2, &params).unwrap();
        let q: Vec<[f64; 3]> = (0..sc.n)
            .map(|n| {
                let t = n as f64 / (sc.n - 1) as f64;
                [500.0 * t, 250.0, sc.h_u]
            })
            .collect();
        let theta = vec![vec![0.3; sc.m]; sc.n];
        let means = ChannelMeans::compute(&sc, &q, &theta).unwrap();
        let p = vec![vec![sc.p_max / 3.0; 3]; sc.n];
        (sc, means, p)
    }

    #[test]
    fn zero_threshold_gives_zero_split() {
        let (sc, means, p) = setup(0.0);
        let rho = solve_ps(&sc, &means, &p).unwrap();
        assert!(rho.iter().flatten().all(|r| *r == 0.0));
    }

    #[test]
    fn constraint_is_active() {
        let (sc, means, p) = setup(1e-10);
        let rho = solve_ps(&sc, &means, &p).unwrap();
        for n in 0..sc.n {
            for k in 0..sc.k {
                let total: f64 = p[n].iter().sum();
                let lhs = rho[n][k] * (total * means.xi[n][k] + sc.sigma2[k]);
                let need = harvest_demand(&sc, k).unwrap();
                assert_relative_eq!(lhs, need, max_relative = 1e-9);
                assert!(energy_ok(&sc, k, rho[n][k] * (1.0 + 1e-12), &p[n], means.xi[n][k]).unwrap());
            }
        }
    }

    #[test]
    fn golden_section_agrees() {
        let (sc, means, p) = setup(1e-9);
        let rho = solve_ps(&sc, &means, &p).unwrap();
        let psi = crate::swipt::decoding_order(&sc, &vec![[250.0, 250.0, 100.0]; 1]);
        for k in 0..sc.k {
            let xi = means.xi[0][k];
            let f = |r: f64| expected_rate(k, &p[0], r, &psi[0], xi, sc.noise(k));
            let feasible = |r: f64| energy_ok(&sc, k, r, &p[0], xi).unwrap();
            // bisect the feasibility boundary, then golden-section on [lo, 1]
            let (mut a, mut b) = (0.0, 1.0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if feasible(m) {
                    b = m;
                } else {
                    a = m;
                }
            }
            let (mut lo, mut hi) = (b, 1.0);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let x1 = hi - g * (hi - lo);
                let x2 = lo + g * (hi - lo);
                if f(x1) >= f(x2) {
                    hi = x2;
                } else {
                    lo = x1;
                }
            }
            assert!((0.5 * (lo + hi) - rho[0][k]).abs() <= 1e-6);
        }
    }

    #[test]
    fn unreachable_demand_is_an_error() {
        let (sc, means, p) = setup(1e-6);
        assert!(matches!(solve_ps(&sc, &means, &p), Err(Error::Infeasible { .. })));
    }
}
