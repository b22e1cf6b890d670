//! Problem instances: parameters, configuration files and seeded generation.
//!
//! # Configuration format
//!
//! A configuration is a TOML file. Keys may sit at the top level or inside
//! any section (`[geometry]`, `[radio]`, ... are only for readability). Every
//! physical quantity accepts either a linear key or a logarithmic one:
//!
//! | key | unit | log variant |
//! |-----|------|-------------|
//! | `p_max` | W | `p_max_dbm` |
//! | `beta0` | linear gain | `beta0_db` |
//! | `kappa1`, `kappa2` | linear | `kappa1_db`, `kappa2_db` |
//! | `sigma2`, `delta2` | W | `sigma2_dbm`, `delta2_dbm` |
//! | `eh_xi` | W | `eh_xi_dbm` |
//!
//! Remaining keys: `num_users` (`K`), `num_elements` (`M`), `num_slots`
//! (`N`), `duration` (`T`, s), `altitude` (`h_u`, m), `v_max`, `alpha`,
//! `gamma`, `eh_a`, `eh_b`, `chi_th` (J per slot), `d_over_lambda`,
//! `eps_max`, `delta_max`, `ao_tol`, `seed`, `irs_pos = [x, y, z]`,
//! `q_init = [x, y]`, `q_final = [x, y]`, `area_center = [x, y]`,
//! `area_radius`, and optionally `users = [[x, y], ...]` to pin the user
//! layout instead of drawing it from the seed.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::swipt::{EhModel, Noise};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Resolved parameter set in linear units. `Params::default()` is the
/// reference setup; [`Params::set`] applies one configuration key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub num_users: usize,
    pub num_elements: usize,
    pub num_slots: usize,
    pub duration: f64,
    pub altitude: f64,
    pub v_max: f64,
    pub p_max: f64,
    pub beta0: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub sigma2: f64,
    pub delta2: f64,
    pub eh_xi: f64,
    pub eh_a: f64,
    pub eh_b: f64,
    pub chi_th: f64,
    pub d_over_lambda: f64,
    pub eps_max: f64,
    pub delta_max: f64,
    pub ao_tol: f64,
    pub seed: u64,
    pub irs_pos: [f64; 3],
    pub q_init: [f64; 2],
    pub q_final: [f64; 2],
    pub area_center: [f64; 2],
    pub area_radius: f64,
    pub users: Option<Vec<[f64; 2]>>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            num_users: 6,
            num_elements: 20,
            num_slots: 30,
            duration: 30.0,
            altitude: 100.0,
            v_max: 20.0,
            p_max: dbm_to_watts(43.0),
            beta0: db_to_linear(-30.0),
            alpha: 2.2,
            gamma: 2.2,
            kappa1: db_to_linear(3.0),
            kappa2: db_to_linear(3.0),
            sigma2: dbm_to_watts(-80.0),
            delta2: dbm_to_watts(-80.0),
            eh_xi: 0.024,
            eh_a: 150.0,
            eh_b: 0.024,
            // per-slot energy; the harvester sees well under a microwatt at
            // 100 m, so larger thresholds make every instance infeasible
            chi_th: 1e-10,
            d_over_lambda: 0.5,
            eps_max: 0.1,
            delta_max: 5.0,
            ao_tol: 1e-3,
            seed: 0,
            irs_pos: [250.0, 0.0, 30.0],
            q_init: [0.0, 250.0],
            q_final: [500.0, 250.0],
            area_center: [250.0, 250.0],
            area_radius: 250.0,
            users: None,
        }
    }
}

fn num(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        _ => Err(Error::Validation(format!("`{key}` must be a number"))),
    }
}

fn count(key: &str, v: &toml::Value) -> Result<usize> {
    let x = num(key, v)?;
    if x < 0.0 || x.fract() != 0.0 {
        return Err(Error::Validation(format!("`{key}` must be a non-negative integer")));
    }
    Ok(x as usize)
}

fn vector<const D: usize>(key: &str, v: &toml::Value) -> Result<[f64; D]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == D)
        .ok_or_else(|| Error::Validation(format!("`{key}` must be an array of {D} numbers")))?;
    let mut out = [0.0; D];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = num(key, x)?;
    }
    Ok(out)
}

impl Params {
    /// Applies one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "num_users" | "K" => self.num_users = count(key, v)?,
            "num_elements" | "M" => self.num_elements = count(key, v)?,
            "num_slots" | "N" => self.num_slots = count(key, v)?,
            "duration" | "T" => self.duration = num(key, v)?,
            "altitude" | "h_u" => self.altitude = num(key, v)?,
            "v_max" => self.v_max = num(key, v)?,
            "p_max" => self.p_max = num(key, v)?,
            "p_max_dbm" => self.p_max = dbm_to_watts(num(key, v)?),
            "beta0" => self.beta0 = num(key, v)?,
            "beta0_db" => self.beta0 = db_to_linear(num(key, v)?),
            "alpha" => self.alpha = num(key, v)?,
            "gamma" => self.gamma = num(key, v)?,
            "kappa1" => self.kappa1 = num(key, v)?,
            "kappa1_db" => self.kappa1 = db_to_linear(num(key, v)?),
            "kappa2" => self.kappa2 = num(key, v)?,
            "kappa2_db" => self.kappa2 = db_to_linear(num(key, v)?),
            "sigma2" => self.sigma2 = num(key, v)?,
            "sigma2_dbm" => self.sigma2 = dbm_to_watts(num(key, v)?),
            "delta2" => self.delta2 = num(key, v)?,
            "delta2_dbm" => self.delta2 = dbm_to_watts(num(key, v)?),
            "eh_xi" => self.eh_xi = num(key, v)?,
            "eh_xi_dbm" => self.eh_xi = dbm_to_watts(num(key, v)?),
            "eh_a" => self.eh_a = num(key, v)?,
            "eh_b" => self.eh_b = num(key, v)?,
            "chi_th" => self.chi_th = num(key, v)?,
            "d_over_lambda" => self.d_over_lambda = num(key, v)?,
            "eps_max" => self.eps_max = num(key, v)?,
            "delta_max" => self.delta_max = num(key, v)?,
            "ao_tol" => self.ao_tol = num(key, v)?,
            "seed" => self.seed = count(key, v)? as u64,
            "irs_pos" => self.irs_pos = vector::<3>(key, v)?,
            "q_init" => self.q_init = vector::<2>(key, v)?,
            "q_final" => self.q_final = vector::<2>(key, v)?,
            "area_center" => self.area_center = vector::<2>(key, v)?,
            "area_radius" => self.area_radius = num(key, v)?,
            "users" => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| Error::Validation("`users` must be an array of [x, y]".into()))?;
                let pts = arr.iter().map(|p| vector::<2>(key, p)).collect::<Result<Vec<_>>>()?;
                self.num_users = pts.len();
                self.users = Some(pts);
            }
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Numeric convenience wrapper around [`set`](Self::set).
    pub fn with(mut self, key: &str, value: f64) -> Result<Self> {
        self.set(key, &toml::Value::Float(value))?;
        Ok(self)
    }

    /// Applies every key of a parsed TOML table, descending into sections.
    pub fn apply_table(&mut self, table: &toml::Table) -> Result<()> {
        for (key, v) in table {
            match v {
                toml::Value::Table(inner) => self.apply_table(inner)?,
                _ => self.set(key, v)?,
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut params = Params::default();
        params.apply_table(&table).map_err(|e| e.to_string())?;
        Ok(params)
    }
}

/// Immutable problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub t: f64,
    /// Slot length `t / n`.
    pub delta: f64,
    pub user_pos: Vec<[f64; 3]>,
    pub irs_pos: [f64; 3],
    pub q_init: [f64; 3],
    pub q_final: [f64; 3],
    pub h_u: f64,
    pub v_max: f64,
    pub p_max: f64,
    pub beta0: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub sigma2: Vec<f64>,
    pub delta2: Vec<f64>,
    pub eh: Vec<EhModel>,
    pub chi_th: f64,
    pub d_over_lambda: f64,
    pub eps_max: f64,
    pub delta_max: f64,
    pub ao_tol: f64,
    pub seed: u64,
}

impl Scenario {
    /// Builds and validates an instance; the user layout comes from
    /// `params.users` or is drawn uniformly on the service disk.
    pub fn from_params(params: &Params) -> Result<Self> {
        let p = params;
        let users: Vec<[f64; 3]> = match &p.users {
            Some(pts) => pts.iter().map(|u| [u[0], u[1], 0.0]).collect(),
            None => {
                let mut rng = stream(p.seed, Stream::Users);
                (0..p.num_users)
                    .map(|_| {
                        let r = p.area_radius * rng.random::<f64>().sqrt();
                        let phi = std::f64::consts::TAU * rng.random::<f64>();
                        [p.area_center[0] + r * phi.cos(), p.area_center[1] + r * phi.sin(), 0.0]
                    })
                    .collect()
            }
        };
        let sc = Scenario {
            k: users.len(),
            m: p.num_elements,
            n: p.num_slots,
            t: p.duration,
            delta: p.duration / p.num_slots as f64,
            user_pos: users,
            irs_pos: p.irs_pos,
            q_init: [p.q_init[0], p.q_init[1], p.altitude],
            q_final: [p.q_final[0], p.q_final[1], p.altitude],
            h_u: p.altitude,
            v_max: p.v_max,
            p_max: p.p_max,
            beta0: p.beta0,
            alpha: p.alpha,
            gamma: p.gamma,
            kappa1: p.kappa1,
            kappa2: p.kappa2,
            sigma2: vec![p.sigma2; p.num_users],
            delta2: vec![p.delta2; p.num_users],
            eh: vec![EhModel::new(p.eh_xi, p.eh_a, p.eh_b); p.num_users],
            chi_th: p.chi_th,
            d_over_lambda: p.d_over_lambda,
            eps_max: p.eps_max,
            delta_max: p.delta_max,
            ao_tol: p.ao_tol,
            seed: p.seed,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n == 0 {
            return bad("at least one slot is needed".into());
        }
        if self.k == 0 {
            return bad("at least one user is needed".into());
        }
        if self.sigma2.len() != self.k || self.delta2.len() != self.k || self.eh.len() != self.k {
            return bad("per-user parameter lists must have one entry per user".into());
        }
        if (self.delta - self.t / self.n as f64).abs() > 0.0 {
            return bad("slot length must equal duration / slots".into());
        }
        let positive = [
            ("duration", self.t),
            ("altitude", self.h_u),
            ("v_max", self.v_max),
            ("p_max", self.p_max),
            ("beta0", self.beta0),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("d_over_lambda", self.d_over_lambda),
            ("eps_max", self.eps_max),
            ("delta_max", self.delta_max),
            ("ao_tol", self.ao_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("`{name}` must be strictly positive, got {v}"));
            }
        }
        if self.chi_th < 0.0 || !self.chi_th.is_finite() {
            return bad("`chi_th` must be non-negative".into());
        }
        for k in 0..self.k {
            if !(self.sigma2[k] > 0.0) || self.delta2[k] < 0.0 {
                return bad(format!("noise powers of user {k} must be positive"));
            }
            let eh = &self.eh[k];
            if !(eh.xi > 0.0 && eh.a > 0.0 && eh.b > 0.0) {
                return bad(format!("harvester parameters of user {k} must be positive"));
            }
            if self.user_pos[k][2] != 0.0 {
                return bad(format!("user {k} must sit on the ground"));
            }
            if dist(&self.user_pos[k], &self.irs_pos) == 0.0 {
                return bad(format!("user {k} coincides with the IRS"));
            }
        }
        if self.delta_max > self.h_u * self.eps_max * (1.0 + 1e-12) {
            return bad(format!(
                "delta_max = {} exceeds h_u * eps_max = {}",
                self.delta_max,
                self.h_u * self.eps_max
            ));
        }
        if self.irs_pos[2] == self.h_u {
            return bad("IRS height equals flight altitude".into());
        }
        let span = dist(&self.q_init, &self.q_final);
        let reach = self.v_max * self.delta * (self.n - 1) as f64;
        if span > reach * (1.0 + 1e-12) {
            return Err(Error::Geometry(format!(
                "end points are {span:.3} m apart but only {reach:.3} m can be flown in {} slots",
                self.n
            )));
        }
        Ok(())
    }

    /// Maximum distance flown in one slot.
    pub fn step_len(&self) -> f64 {
        self.v_max * self.delta
    }

    pub fn noise(&self, k: usize) -> Noise {
        Noise { sigma2: self.sigma2[k], delta2: self.delta2[k] }
    }

    /// LoS power share of the UAV-user link.
    pub fn vartheta1(&self) -> f64 {
        self.beta0 * self.kappa1 / (1.0 + self.kappa1)
    }

    /// LoS power share of the IRS-user link.
    pub fn vartheta2(&self) -> f64 {
        self.beta0 * self.kappa2 / (1.0 + self.kappa2)
    }

    /// Same instance with the IRS removed.
    pub fn without_irs(&self) -> Scenario {
        Scenario { m: 0, ..self.clone() }
    }
}

/// Loads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let params = Params::from_toml_str(&text)
        .map_err(|msg| Error::Parse { path: path.to_path_buf(), msg })?;
    Scenario::from_params(&params)
}

/// Draws an instance from `params` with the given seed.
pub fn generate_scenario(seed: u64, params: &Params) -> Result<Scenario> {
    let mut p = params.clone();
    p.seed = seed;
    Scenario::from_params(&p)
}

/// One value of every optimization block.
///
/// All blocks are indexed slot first: `q[n]`, `psi[n][i][k]`, `p[n][k]`,
/// `rho[n][k]`, `theta[n][m]`. `psi[n][i][k] = 1` means user `i` is decoded
/// before `k` by user `k`'s SIC receiver (user `i` is the stronger one);
/// the diagonal is fixed to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub q: Vec<[f64; 3]>,
    pub psi: Vec<Vec<Vec<f64>>>,
    pub p: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_conversions() {
        assert_relative_eq!(dbm_to_watts(43.0), 19.953, max_relative = 1e-4);
        assert_relative_eq!(db_to_linear(-30.0), 1.0e-3, max_relative = 1e-12);
        assert_relative_eq!(db_to_linear(3.0), 1.9953, max_relative = 1e-4);
        assert_relative_eq!(dbm_to_watts(-80.0), 1e-11, max_relative = 1e-12);
    }

    #[test]
    fn defaults_validate() {
        let sc = generate_scenario(3, &Params::default()).unwrap();
        assert_eq!(sc.k, 6);
        assert_eq!(sc.m, 20);
        assert!(sc.delta_max <= sc.h_u * sc.eps_max);
        assert_eq!(sc.delta, 1.0);
        assert_eq!(sc, generate_scenario(3, &Params::default()).unwrap());
        assert_ne!(sc.user_pos, generate_scenario(4, &Params::default()).unwrap().user_pos);
        for u in &sc.user_pos {
            assert!(((u[0] - 250.0).powi(2) + (u[1] - 250.0).powi(2)).sqrt() <= 250.0);
        }
    }

    #[test]
    fn config_keys() {
        let text = r#"
            seed = 9
            [radio]
            p_max_dbm = 43
            beta0_db = -30
            kappa1_db = 3
            [scenario]
            M = 8
            num_users = 2
        "#;
        let p = Params::from_toml_str(text).unwrap();
        assert_relative_eq!(p.p_max, 19.953, max_relative = 1e-4);
        assert_relative_eq!(p.beta0, 1e-3, max_relative = 1e-12);
        assert_relative_eq!(p.kappa1, 1.9953, max_relative = 1e-4);
        assert_eq!(p.num_elements, 8);
        assert_eq!(p.seed, 9);
        assert!(Params::from_toml_str("bogus = 1").is_err());
        assert!(Params::from_toml_str("p_max = [").is_err());
        assert!(Params::from_toml_str("M = 2.5").is_err());
    }

    #[test]
    fn pinned_users() {
        let p = Params::from_toml_str("users = [[10, 20], [30, 40]]").unwrap();
        let sc = Scenario::from_params(&p).unwrap();
        assert_eq!(sc.k, 2);
        assert_eq!(sc.user_pos[1], [30.0, 40.0, 0.0]);
    }

    #[test]
    fn rejects_bad_instances() {
        let short = Params::default().with("N", 5.0).unwrap();
        assert!(matches!(Scenario::from_params(&short), Err(Error::Geometry(_))));
        let wide = Params::default().with("delta_max", 20.0).unwrap();
        assert!(matches!(Scenario::from_params(&wide), Err(Error::Validation(_))));
        let neg = Params::default().with("p_max", -1.0).unwrap();
        assert!(Scenario::from_params(&neg).is_err());
    }

    proptest! {
        #[test]
        fn db_round_trip(x in 1e-15f64..1e6) {
            prop_assert!((db_to_linear(linear_to_db(x)) - x).abs() <= 1e-12 * x);
        }
    }

    #[test]
    fn generated_instances_are_valid() {
        for seed in 0..100 {
            let sc = generate_scenario(seed, &Params::default()).unwrap();
            sc.validate().unwrap();
            assert_eq!(sc.user_pos.len(), sc.k);
        }
    }
}
