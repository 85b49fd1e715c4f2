//! The three-factor prior over (tau, Lambda, theta) and the resulting
//! unnormalized log posterior.
//!
//! The template prior is uniform on the neighborhood size 0..=|tau0| and then
//! uniform over templates of that size. Interactions enter level by level:
//! given the active (k-1)-interactions, each possible k-interaction (one whose
//! every (k-1)-subset is active) is active independently with a probability
//! p_k that caps the expected growth per level. Each theta parameter gets an
//! independent logistic-times-Gaussian prior with scale sigma.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use crate::lattice::Offset;
use crate::lattice::Scene;
use crate::model::{softplus, Mmm};
use crate::pbf::{Interaction, InteractionSet};

#[derive(Clone, Debug)]
pub struct PriorConfig {
    tau0: Vec<Offset>,
    p_star: f64,
    sigma: f64,
}

impl PriorConfig {
    pub fn new(tau0: Vec<Offset>, p_star: f64, sigma: f64) -> Self {
        assert!(p_star > 0.0 && p_star < 1.0, "p_star must lie in (0,1)");
        assert!(sigma > 0.0, "sigma must be positive");
        let mut tau0 = tau0;
        tau0.sort();
        tau0.dedup();
        for t in &tau0 {
            assert!(
                t.in_psi(),
                "candidate offset {t} is not in the past half-plane"
            );
        }
        PriorConfig {
            tau0,
            p_star,
            sigma,
        }
    }

    pub fn tau0(&self) -> &[Offset] {
        &self.tau0
    }

    pub fn p_star(&self) -> f64 {
        self.p_star
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// ln C(n, k) via a sum of logs; exact enough for n up to 64.
fn ln_binomial(n: usize, k: usize) -> f64 {
    assert!(k <= n);
    let k = k.min(n - k);
    let mut acc = 0.0;
    for i in 1..=k {
        acc += ((n - k + i) as f64).ln() - (i as f64).ln();
    }
    acc
}

/// log f(tau): uniform over sizes 0..=|tau0|, then uniform over the
/// C(|tau0|, |tau|) templates of that size.
pub fn log_prior_template(tau: &[Offset], cfg: &PriorConfig) -> f64 {
    for t in tau {
        assert!(cfg.tau0.contains(t), "template offset {t} is outside tau0");
    }
    let n0 = cfg.tau0.len();
    -(((n0 + 1) as f64).ln()) - ln_binomial(n0, tau.len())
}

/// log f(Lambda | tau): the level-by-level product over k = 2..=|tau|.
pub fn log_prior_interactions(support: &InteractionSet, cfg: &PriorConfig) -> f64 {
    let template = support.template();
    let mut acc = 0.0;
    for k in 2..=template.len() {
        let prev: Vec<&Interaction> = support
            .members()
            .iter()
            .filter(|m| m.len() == k - 1)
            .collect();
        if prev.is_empty() {
            break;
        }
        // The pool of possible k-interactions: every (k-1)-subset active.
        let mut pool: Vec<Interaction> = Vec::new();
        for m in &prev {
            for &t in template {
                if m.contains(t) {
                    continue;
                }
                let cand = m.with_offset(t);
                if pool.contains(&cand) {
                    continue;
                }
                let ok = cand
                    .offsets()
                    .iter()
                    .all(|&u| support.contains(&cand.without_offset(u)));
                if ok {
                    pool.push(cand);
                }
            }
        }
        if pool.is_empty() {
            continue;
        }
        let pool_len = pool.len() as f64;
        let prev_len = prev.len() as f64;
        let p_k = if pool.len() <= prev.len() {
            cfg.p_star
        } else {
            cfg.p_star * prev_len / pool_len
        };
        let active = support.level_len(k);
        debug_assert!(pool.iter().filter(|c| support.contains(c)).count() == active);
        acc += active as f64 * p_k.ln() + (pool.len() - active) as f64 * (-p_k).ln_1p();
    }
    acc
}

/// The logistic-times-Gaussian integrand of the per-parameter prior, without
/// the normalizing constant.
fn theta_prior_kernel(t: f64, sigma: f64) -> f64 {
    (t - 2.0 * softplus(t) - t * t / (2.0 * sigma * sigma)).exp()
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    // Coarse pass to scale the absolute tolerance, then adaptive refinement.
    let panels = 256;
    let h = (b - a) / panels as f64;
    let mut coarse = 0.0;
    for i in 0..panels {
        let x0 = a + i as f64 * h;
        coarse += h / 6.0 * (f(x0) + 4.0 * f(x0 + 0.5 * h) + f(x0 + h));
    }
    let tol = coarse.abs().max(1e-300) * rel_tol;
    let mut total = 0.0;
    for i in 0..panels {
        let x0 = a + i as f64 * h;
        let x1 = x0 + h;
        let fa = f(x0);
        let fm = f(0.5 * (x0 + x1));
        let fb = f(x1);
        let whole = h / 6.0 * (fa + 4.0 * fm + fb);
        total += adaptive_simpson(&f, x0, x1, fa, fm, fb, whole, tol / panels as f64, 40);
    }
    total
}

/// log c(sigma) = -ln of the per-parameter prior's normalizing integral,
/// memoized per sigma. The integrand is below exp(-|t|), so truncating at
/// |t| = 80 leaves a tail under 1e-34 relative to any sigma's total.
pub fn log_c(sigma: f64) -> f64 {
    assert!(sigma > 0.0);
    static MEMO: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let memo = MEMO.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = memo.lock().unwrap().get(&sigma.to_bits()) {
        return v;
    }
    // The integrand is symmetric in t, so integrate the right half and double.
    let half = integrate(|t| theta_prior_kernel(t, sigma), 0.0, 80.0, 1e-12);
    let v = -(2.0 * half).ln();
    memo.lock().unwrap().insert(sigma.to_bits(), v);
    v
}

/// log f(theta | tau, Lambda): independent terms, one per parameter.
pub fn log_prior_theta(theta: &[f64], cfg: &PriorConfig) -> f64 {
    let lc = log_c(cfg.sigma);
    let s2 = 2.0 * cfg.sigma * cfg.sigma;
    theta
        .iter()
        .map(|&t| lc + t - 2.0 * softplus(t) - t * t / s2)
        .sum()
}

/// The unnormalized log posterior of a model given a fully valued scene
/// (observed cells plus the current fill-in).
pub fn log_posterior(model: &Mmm, scene: &Scene, cfg: &PriorConfig) -> f64 {
    log_prior_template(model.tau(), cfg)
        + log_prior_interactions(model.pbf().support(), cfg)
        + log_prior_theta(model.pbf().theta(), cfg)
        + model.log_likelihood(scene)
}

/// Prior part only; the sampler pairs it with a counts-based likelihood.
pub fn log_prior(model: &Mmm, cfg: &PriorConfig) -> f64 {
    log_prior_template(model.tau(), cfg)
        + log_prior_interactions(model.pbf().support(), cfg)
        + log_prior_theta(model.pbf().theta(), cfg)
}
