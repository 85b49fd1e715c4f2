//! Adaptive rejection sampling for log-concave densities, and the log-concave
//! full conditional of the direction coefficient alpha used by the parameter
//! moves.
//!
//! The sampler keeps a set of support points with tangent lines; the pointwise
//! minimum of the tangents is an upper hull of the log-density and the chords
//! between support points are a lower squeeze. Draws come from the normalized
//! exponentiated hull; rejected points refine the hull, so the procedure is
//! exact and typically needs only a handful of target evaluations.

use rand::Rng;
use thiserror::Error;

use crate::lattice::Scene;
use crate::model::{active_counts, ActiveCounts, Mmm};
use crate::pbf::Pbf;
use crate::prior::PriorConfig;

#[derive(Error, Debug, PartialEq)]
pub enum ArsError {
    #[error(
        "could not bracket the mode: derivative sign did not change within the expansion budget"
    )]
    Bracketing,
    #[error("target is not concave near x = {at}: evaluated point lies above the upper hull")]
    Concavity { at: f64 },
    #[error("target returned a non-finite value or derivative at x = {at}")]
    NonFinite { at: f64 },
}

/// A univariate log-density known up to an additive constant, with analytic
/// derivative. The value component must be concave on the domain.
pub struct LogDensity {
    eval: Box<dyn Fn(f64) -> (f64, f64)>,
    domain: (f64, f64),
}

impl LogDensity {
    pub fn new(domain: (f64, f64), eval: impl Fn(f64) -> (f64, f64) + 'static) -> Self {
        assert!(domain.0 < domain.1);
        LogDensity {
            eval: Box::new(eval),
            domain,
        }
    }

    pub fn on_reals(eval: impl Fn(f64) -> (f64, f64) + 'static) -> Self {
        LogDensity::new((f64::NEG_INFINITY, f64::INFINITY), eval)
    }

    pub fn eval(&self, x: f64) -> (f64, f64) {
        (self.eval)(x)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }
}

#[derive(Clone, Copy, Debug)]
struct SupportPoint {
    x: f64,
    h: f64,
    d: f64,
}

/// Tangent hull over the current support points. Piece i lives between the
/// tangent intersections z[i-1] and z[i] (domain bounds at the ends).
struct Hull {
    pts: Vec<SupportPoint>,
    z: Vec<f64>,
    log_mass: Vec<f64>,
    domain: (f64, f64),
}

/// log integral of exp(linear piece) over [a, b], where u_a and u_b are the
/// tangent values at the (possibly infinite) endpoints.
fn piece_log_mass(u_a: f64, u_b: f64, a: f64, b: f64, d: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        debug_assert!(d > 0.0);
        return u_b - d.ln();
    }
    if b == f64::INFINITY {
        debug_assert!(d < 0.0);
        return u_a - (-d).ln();
    }
    if b <= a {
        return f64::NEG_INFINITY;
    }
    let delta = u_b - u_a;
    if delta.abs() < 1e-12 {
        u_a.max(u_b) + (b - a).ln()
    } else if delta > 0.0 {
        u_b + (-(-delta).exp()).ln_1p() - delta.ln() + (b - a).ln()
    } else {
        u_a + (-delta.exp()).ln_1p() - (-delta).ln() + (b - a).ln()
    }
}

impl Hull {
    fn build(mut pts: Vec<SupportPoint>, domain: (f64, f64)) -> Result<Hull, ArsError> {
        pts.sort_by(|a, b| a.x.total_cmp(&b.x));
        let n = pts.len();
        let mut z = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let (p, q) = (pts[i], pts[i + 1]);
            let denom = p.d - q.d;
            if denom < -1e-8 {
                // Derivatives must be non-increasing under concavity.
                return Err(ArsError::Concavity { at: q.x });
            }
            let zi = if denom.abs() < 1e-13 {
                0.5 * (p.x + q.x)
            } else {
                ((q.h - p.h - q.x * q.d + p.x * p.d) / denom).clamp(p.x, q.x)
            };
            z.push(zi);
        }
        let mut log_mass = Vec::with_capacity(n);
        for i in 0..n {
            let a = if i == 0 { domain.0 } else { z[i - 1] };
            let b = if i == n - 1 { domain.1 } else { z[i] };
            let p = pts[i];
            if a == f64::NEG_INFINITY && p.d <= 0.0 || b == f64::INFINITY && p.d >= 0.0 {
                return Err(ArsError::Bracketing);
            }
            let u_a = if a == f64::NEG_INFINITY {
                f64::NAN
            } else {
                p.h + p.d * (a - p.x)
            };
            let u_b = if b == f64::INFINITY {
                f64::NAN
            } else {
                p.h + p.d * (b - p.x)
            };
            log_mass.push(piece_log_mass(u_a, u_b, a, b, p.d));
        }
        Ok(Hull {
            pts,
            z,
            log_mass,
            domain,
        })
    }

    fn piece_bounds(&self, i: usize) -> (f64, f64) {
        let a = if i == 0 { self.domain.0 } else { self.z[i - 1] };
        let b = if i == self.pts.len() - 1 {
            self.domain.1
        } else {
            self.z[i]
        };
        (a, b)
    }

    /// Upper hull value: the tangent of the piece containing x.
    fn upper(&self, x: f64) -> f64 {
        let mut i = 0;
        while i < self.z.len() && x > self.z[i] {
            i += 1;
        }
        let p = self.pts[i];
        p.h + p.d * (x - p.x)
    }

    /// Lower squeeze value: the chord between the bracketing support points,
    /// or -inf outside the support range.
    fn lower(&self, x: f64) -> f64 {
        let n = self.pts.len();
        if x < self.pts[0].x || x > self.pts[n - 1].x {
            return f64::NEG_INFINITY;
        }
        let mut i = 0;
        while i + 1 < n && x > self.pts[i + 1].x {
            i += 1;
        }
        let (p, q) = (self.pts[i], self.pts[i + 1]);
        if q.x == p.x {
            return p.h.min(q.h);
        }
        p.h + (q.h - p.h) * (x - p.x) / (q.x - p.x)
    }

    fn total_log_mass(&self) -> f64 {
        let m = self
            .log_mass
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        let sum: f64 = self.log_mass.iter().map(|&lm| (lm - m).exp()).sum();
        m + sum.ln()
    }

    /// Draws one point from the normalized exponentiated hull. Consumes two
    /// uniforms: piece selection, then the within-piece inverse CDF.
    fn sample(&self, rng: &mut impl Rng, total: f64) -> f64 {
        let u: f64 = rng.random();
        let mut i = self.pts.len() - 1;
        let mut acc = 0.0;
        for (k, &lm) in self.log_mass.iter().enumerate() {
            acc += (lm - total).exp();
            if acc > u {
                i = k;
                break;
            }
        }
        let (a, b) = self.piece_bounds(i);
        let d = self.pts[i].d;
        let x = if a == f64::NEG_INFINITY {
            let p: f64 = 1.0 - rng.random::<f64>();
            b + p.ln() / d
        } else if b == f64::INFINITY {
            let p: f64 = rng.random();
            a + (-p).ln_1p() / d
        } else {
            let p: f64 = rng.random();
            let delta = d * (b - a);
            if delta.abs() < 1e-12 {
                a + p * (b - a)
            } else if delta > 0.0 {
                a + (delta + (p + (1.0 - p) * (-delta).exp()).ln()) / d
            } else {
                a + (p * delta.exp_m1()).ln_1p() / d
            }
        };
        x.clamp(
            if a == f64::NEG_INFINITY { x } else { a },
            if b == f64::INFINITY { x } else { b },
        )
    }
}

const MAX_EXPANSIONS: u32 = 60;
const MAX_SUPPORT: usize = 64;
const CONCAVITY_SLACK: f64 = 1e-8;

fn checked_eval(target: &LogDensity, x: f64) -> Result<SupportPoint, ArsError> {
    let (h, d) = target.eval(x);
    if !h.is_finite() || !d.is_finite() {
        return Err(ArsError::NonFinite { at: x });
    }
    Ok(SupportPoint { x, h, d })
}

/// Expands an endpoint geometrically until the derivative has the wanted sign,
/// clamping toward a finite domain bound if there is one.
fn expand(
    target: &LogDensity,
    mut p: SupportPoint,
    leftward: bool,
) -> Result<SupportPoint, ArsError> {
    let bound = if leftward {
        target.domain().0
    } else {
        target.domain().1
    };
    let mut step = 1.0f64;
    for _ in 0..MAX_EXPANSIONS {
        let ok = if leftward { p.d > 0.0 } else { p.d < 0.0 };
        if ok {
            return Ok(p);
        }
        let x = if bound.is_infinite() {
            if leftward {
                p.x - step
            } else {
                p.x + step
            }
        } else {
            0.5 * (p.x + bound)
        };
        step *= 2.0;
        p = checked_eval(target, x)?;
    }
    Err(ArsError::Bracketing)
}

/// One exact draw from the density proportional to exp(target). `init` is a
/// pair of starting abscissae; they are pushed outward until the derivative is
/// strictly positive on the left and strictly negative on the right.
pub fn ars_sample(
    target: &LogDensity,
    init: (f64, f64),
    rng: &mut impl Rng,
) -> Result<f64, ArsError> {
    assert!(init.0 < init.1);
    let left = expand(target, checked_eval(target, init.0)?, true)?;
    let right = expand(target, checked_eval(target, init.1)?, false)?;
    let mut pts = vec![left, right];
    let mut hull = Hull::build(pts.clone(), target.domain())?;
    let mut total = hull.total_log_mass();
    if !total.is_finite() {
        return Err(ArsError::NonFinite { at: left.x });
    }
    for _ in 0..10_000_000u64 {
        let x = hull.sample(rng, total);
        let w: f64 = rng.random();
        let log_w = w.ln();
        let upper = hull.upper(x);
        if log_w <= hull.lower(x) - upper {
            return Ok(x);
        }
        let p = checked_eval(target, x)?;
        if p.h > upper + CONCAVITY_SLACK {
            return Err(ArsError::Concavity { at: x });
        }
        if log_w <= p.h - upper {
            return Ok(x);
        }
        if pts.len() < MAX_SUPPORT {
            pts.push(p);
            hull = Hull::build(pts.clone(), target.domain())?;
            total = hull.total_log_mass();
            if !total.is_finite() {
                return Err(ArsError::NonFinite { at: x });
            }
        }
    }
    Err(ArsError::NonFinite { at: init.0 })
}

/// The log full conditional g(alpha) of the scalar alpha in the line update
/// theta <- theta + alpha * delta, up to an additive constant, together with
/// its analytic derivative. The likelihood part is aggregated per distinct
/// active mask; `counts` must have been computed under the model's template.
pub fn alpha_conditional_from_counts(
    model: &Mmm,
    delta: &[f64],
    counts: &ActiveCounts,
    cfg: &PriorConfig,
) -> LogDensity {
    let support = model.pbf().support();
    assert_eq!(
        delta.len(),
        support.len(),
        "delta must be keyed by the support"
    );
    let theta: Vec<f64> = model.pbf().theta().to_vec();
    let dvec: Vec<f64> = delta.to_vec();
    // Direction evaluated at each distinct mask, by linearity of evaluation.
    let dir = Pbf::from_theta(support.clone(), dvec.clone());
    let t_mask: Vec<f64> = counts
        .masks
        .iter()
        .map(|&m| model.pbf().evaluate_mask(m))
        .collect();
    let d_mask: Vec<f64> = counts.masks.iter().map(|&m| dir.evaluate_mask(m)).collect();
    let n: Vec<f64> = counts.n.iter().map(|&v| v as f64).collect();
    let s: Vec<f64> = counts.s.iter().map(|&v| v as f64).collect();
    let inv_s2 = 1.0 / (cfg.sigma() * cfg.sigma());
    LogDensity::on_reals(move |alpha| {
        let mut g = 0.0;
        let mut dg = 0.0;
        for (th, de) in theta.iter().zip(&dvec) {
            let t = th + alpha * de;
            g += t - 2.0 * crate::model::softplus(t) - 0.5 * t * t * inv_s2;
            dg += de * (1.0 - 2.0 * crate::model::logistic(t) - t * inv_s2);
        }
        for k in 0..t_mask.len() {
            let t = t_mask[k] + alpha * d_mask[k];
            g += s[k] * t - n[k] * crate::model::softplus(t);
            dg += d_mask[k] * (s[k] - n[k] * crate::model::logistic(t));
        }
        (g, dg)
    })
}

/// Same conditional, aggregating the scene on the fly.
pub fn alpha_full_conditional(
    model: &Mmm,
    delta: &[f64],
    scene: &Scene,
    cfg: &PriorConfig,
) -> LogDensity {
    let counts = active_counts(scene, model.tau());
    alpha_conditional_from_counts(model, delta, &counts, cfg)
}
