//! Channel models: ULA steering vectors, Rician links and the expected
//! combined gain used by every subproblem.
//!
//! The UAV-IRS link uses steering phases `e^{-j2π(d/λ)(m-1)cosφ}` while the
//! IRS-user LoS component uses `e^{+j2π(d/λ)(m-1)cosϕ}`; both signs are kept
//! as modelled.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scenario::{dist, Scenario};
use crate::C64;

/// Array response of the IRS seen from `q`. Entry `m` is
/// `exp(-j 2π (d/λ) m cosφ)` with `cosφ = (x_r - x) / ‖q - w_r‖`.
pub fn ula_response(q: &[f64; 3], w_r: &[f64; 3], m: usize, d_over_lambda: f64) -> Result<Vec<C64>> {
    let d = dist(q, w_r);
    if d == 0.0 {
        return Err(Error::Geometry("UAV coincides with the IRS".into()));
    }
    let cos_phi = (w_r[0] - q[0]) / d;
    Ok(steering(m, -std::f64::consts::TAU * d_over_lambda * cos_phi))
}

/// LoS response of the IRS towards a user, entries `exp(+j 2π (d/λ) m cosϕ)`
/// with `cosϕ = (x_k - x_r) / ‖w_r - w_k‖`.
pub fn iu_response(w_r: &[f64; 3], w_k: &[f64; 3], m: usize, d_over_lambda: f64) -> Vec<C64> {
    let d = dist(w_r, w_k);
    let cos = (w_k[0] - w_r[0]) / d;
    steering(m, std::f64::consts::TAU * d_over_lambda * cos)
}

fn steering(m: usize, step: f64) -> Vec<C64> {
    (0..m).map(|i| C64::from_polar(1.0, step * i as f64)).collect()
}

/// Expected-gain decomposition of one user in one slot.
///
/// `xi = beta0/d^α + a/d_UI² + b/(d^{α/2} d_UI)` and
/// `xi = varpi + |ĥ_UU + cascade|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainTerms {
    pub xi: f64,
    pub a: f64,
    pub b: f64,
    pub varpi: f64,
}

/// Deterministic per-link quantities for a UAV position.
#[derive(Debug, Clone)]
pub struct LinkGeometry {
    pub d_uu: Vec<f64>,
    pub d_ui: f64,
    pub d_iu: Vec<f64>,
    pub cos_phi: f64,
    /// Scaled UAV-IRS channel `√(β0)/d_UI · ula_response`.
    pub h_ui: Vec<C64>,
    /// LoS means of the UAV-user links (positive reals).
    pub h_uu: Vec<f64>,
    /// LoS means of the IRS-user links.
    pub h_iu: Vec<Vec<C64>>,
}

impl LinkGeometry {
    pub fn new(sc: &Scenario, q: &[f64; 3]) -> Result<Self> {
        let d_ui = dist(q, &sc.irs_pos);
        let ula = ula_response(q, &sc.irs_pos, sc.m, sc.d_over_lambda)?;
        let scale = sc.beta0.sqrt() / d_ui;
        let h_ui = ula.iter().map(|h| h * scale).collect();
        let d_uu: Vec<f64> = sc.user_pos.iter().map(|w| dist(q, w)).collect();
        let d_iu: Vec<f64> = sc.user_pos.iter().map(|w| dist(&sc.irs_pos, w)).collect();
        let t1 = sc.vartheta1();
        let t2 = sc.vartheta2();
        let h_uu = d_uu.iter().map(|d| (t1 / d.powf(sc.alpha)).sqrt()).collect();
        let h_iu = sc
            .user_pos
            .iter()
            .zip(&d_iu)
            .map(|(w, d)| {
                let amp = (t2 / d.powf(sc.gamma)).sqrt();
                iu_response(&sc.irs_pos, w, sc.m, sc.d_over_lambda).into_iter().map(|h| h * amp).collect()
            })
            .collect();
        Ok(Self { d_uu, d_ui, d_iu, cos_phi: (sc.irs_pos[0] - q[0]) / d_ui, h_ui, h_uu, h_iu })
    }

    /// Cascade coefficients `a_m = ĥ_IU,m · conj(h_UI,m)`, so that the
    /// reflected LoS amplitude is `aᴴ b` with `b_m = e^{jθ_m}`.
    pub fn cascade(&self, k: usize) -> Vec<C64> {
        self.h_iu[k].iter().zip(&self.h_ui).map(|(g, h)| g * h.conj()).collect()
    }

    /// Scattering-only part of the expected gain.
    pub fn varpi(&self, sc: &Scenario, k: usize) -> f64 {
        let t1 = sc.vartheta1();
        let t2 = sc.vartheta2();
        (sc.beta0 - t1) / self.d_uu[k].powf(sc.alpha)
            + sc.m as f64 * sc.beta0 * (sc.beta0 - t2) / (self.d_ui.powi(2) * self.d_iu[k].powf(sc.gamma))
    }

    pub fn terms(&self, sc: &Scenario, theta: &[f64], k: usize) -> GainTerms {
        let reflected = reflected_amplitude(&self.cascade(k), theta);
        let direct = self.h_uu[k];
        let varpi = self.varpi(sc, k);
        let t1 = sc.vartheta1();
        let t2 = sc.vartheta2();
        let xi = (reflected + direct).norm_sqr() + varpi;
        let d_ui2 = self.d_ui.powi(2);
        let a = d_ui2 * reflected.norm_sqr()
            + sc.m as f64 * sc.beta0 * (sc.beta0 - t2) / self.d_iu[k].powf(sc.gamma);
        // 2 Re{√(ϑ1 β0) ĥ_IUᴴ Θ h}, where h is the unscaled steering vector
        let b = 2.0 * t1.sqrt() * self.d_ui * reflected.re;
        GainTerms { xi, a, b, varpi }
    }
}

/// `Σ_m conj(a_m) e^{jθ_m}`.
pub fn reflected_amplitude(a: &[C64], theta: &[f64]) -> C64 {
    a.iter().zip(theta).map(|(a, t)| a.conj() * C64::from_polar(1.0, *t)).sum()
}

/// Expected combined gain and its decomposition for user `k` at `q`.
pub fn expected_combined_gain(sc: &Scenario, q: &[f64; 3], theta: &[f64], k: usize) -> Result<GainTerms> {
    Ok(LinkGeometry::new(sc, q)?.terms(sc, theta, k))
}

/// Per-slot channel state for a trajectory and phase schedule, indexed
/// `[n][k]` (or `[n]` / `[k]` where a quantity only depends on one index).
#[derive(Debug, Clone)]
pub struct ChannelMeans {
    pub xi: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub varpi: Vec<Vec<f64>>,
    pub d_uu: Vec<Vec<f64>>,
    pub d_ui: Vec<f64>,
    pub d_iu: Vec<f64>,
    pub cos_phi: Vec<f64>,
    pub cos_varphi: Vec<f64>,
    pub h_ui: Vec<Vec<C64>>,
    pub h_uu: Vec<Vec<f64>>,
    pub h_iu: Vec<Vec<C64>>,
}

impl ChannelMeans {
    pub fn compute(sc: &Scenario, q: &[[f64; 3]], theta: &[Vec<f64>]) -> Result<Self> {
        let n = q.len();
        let mut out = ChannelMeans {
            xi: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
            varpi: Vec::with_capacity(n),
            d_uu: Vec::with_capacity(n),
            d_ui: Vec::with_capacity(n),
            d_iu: Vec::new(),
            cos_phi: Vec::with_capacity(n),
            cos_varphi: sc
                .user_pos
                .iter()
                .map(|w| (w[0] - sc.irs_pos[0]) / dist(&sc.irs_pos, w))
                .collect(),
            h_ui: Vec::with_capacity(n),
            h_uu: Vec::with_capacity(n),
            h_iu: Vec::new(),
        };
        for (qn, th) in q.iter().zip(theta) {
            let geo = LinkGeometry::new(sc, qn)?;
            let terms: Vec<GainTerms> = (0..sc.k).map(|k| geo.terms(sc, th, k)).collect();
            out.xi.push(terms.iter().map(|t| t.xi).collect());
            out.a.push(terms.iter().map(|t| t.a).collect());
            out.b.push(terms.iter().map(|t| t.b).collect());
            out.varpi.push(terms.iter().map(|t| t.varpi).collect());
            out.d_ui.push(geo.d_ui);
            out.cos_phi.push(geo.cos_phi);
            if out.h_iu.is_empty() {
                out.h_iu = geo.h_iu.clone();
                out.d_iu = geo.d_iu.clone();
            }
            out.d_uu.push(geo.d_uu);
            out.h_ui.push(geo.h_ui);
            out.h_uu.push(geo.h_uu);
        }
        Ok(out)
    }
}

/// One random channel realisation: per user the UAV-user gain and the
/// IRS-user vector.
pub struct ChannelDraw {
    pub h_uu: Vec<C64>,
    pub h_iu: Vec<Vec<C64>>,
}

fn cn01<R: Rng>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws Rician UAV-user and IRS-user channels at `q`.
pub fn sample_channels<R: Rng>(sc: &Scenario, q: &[f64; 3], rng: &mut R) -> ChannelDraw {
    let los1 = (sc.kappa1 / (1.0 + sc.kappa1)).sqrt();
    let nlos1 = (1.0 / (1.0 + sc.kappa1)).sqrt();
    let los2 = (sc.kappa2 / (1.0 + sc.kappa2)).sqrt();
    let nlos2 = (1.0 / (1.0 + sc.kappa2)).sqrt();
    let mut h_uu = Vec::with_capacity(sc.k);
    let mut h_iu = Vec::with_capacity(sc.k);
    for w in &sc.user_pos {
        let pl = (sc.beta0 / dist(q, w).powf(sc.alpha)).sqrt();
        h_uu.push((C64::new(los1, 0.0) + cn01(rng) * nlos1) * pl);
        let d = dist(&sc.irs_pos, w);
        let pl2 = (sc.beta0 / d.powf(sc.gamma)).sqrt();
        let los = iu_response(&sc.irs_pos, w, sc.m, sc.d_over_lambda);
        h_iu.push(los.into_iter().map(|h| (h * los2 + cn01(rng) * nlos2) * pl2).collect());
    }
    ChannelDraw { h_uu, h_iu }
}

/// Instantaneous combined gain `|h_UU + h_IUᴴ Θ h_UI|²` for one draw.
pub fn sampled_gain(draw: &ChannelDraw, h_ui: &[C64], theta: &[f64], k: usize) -> f64 {
    let refl: C64 = draw.h_iu[k]
        .iter()
        .zip(h_ui)
        .zip(theta)
        .map(|((g, h), t)| g.conj() * C64::from_polar(1.0, *t) * h)
        .sum();
    (draw.h_uu[k] + refl).norm_sqr()
}
