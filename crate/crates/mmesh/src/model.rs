//! The homogeneous binary Markov mesh model.
//!
//! The joint density factorizes over nodes in raster order: each node v holds a
//! Bernoulli variable whose log-odds is theta evaluated at the active
//! interaction, the set of template offsets whose translated node is inside the
//! lattice and carries value one. Off-lattice neighbors count as zero, so the
//! model is well defined on the bare lattice without padding.

use rand::Rng;

use crate::lattice::{active_offsets, LatticeDims, NodeId, Offset, Scene};
use crate::pbf::{Interaction, Pbf};

/// Numerically stable logistic function 1/(1+e^-t). Saturates to exactly 0 or
/// 1 once the true value is within one ulp, which happens near |t| = 37.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1+e^t); linear for large t instead of overflowing.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// The active interaction at v as a first-class value.
pub fn active_interaction(scene: &Scene, tau: &[Offset], v: NodeId) -> Interaction {
    Interaction::new(active_offsets(scene, tau, v))
}

/// The active interaction at v as a bit mask over the sorted template.
pub fn active_mask(scene: &Scene, template: &[Offset], v: NodeId) -> u64 {
    debug_assert!(template.windows(2).all(|w| w[0] < w[1]));
    let mut mask = 0u64;
    for (k, t) in template.iter().enumerate() {
        let i = v.i as i64 + t.row as i64;
        let j = v.j as i64 + t.col as i64;
        if scene.dims().contains(i, j) && scene.value(NodeId::new(i as usize, j as usize)) == 1 {
            mask |= 1 << k;
        }
    }
    mask
}

/// Aggregated likelihood statistics of a scene under a template: for each
/// distinct active mask, how many nodes realize it (n) and how many of those
/// hold value one (s). Masks are listed in increasing numeric order so the
/// aggregation never depends on hash iteration order.
#[derive(Clone, Debug)]
pub struct ActiveCounts {
    pub masks: Vec<u64>,
    pub n: Vec<u64>,
    pub s: Vec<u64>,
}

impl ActiveCounts {
    pub fn total_nodes(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn total_ones(&self) -> u64 {
        self.s.iter().sum()
    }
}

/// Scans the scene once and aggregates counts per distinct active mask.
pub fn active_counts(scene: &Scene, template: &[Offset]) -> ActiveCounts {
    if template.len() <= 16 {
        let mut n = vec![0u64; 1 << template.len()];
        let mut s = vec![0u64; 1 << template.len()];
        for v in scene.nodes() {
            let mask = active_mask(scene, template, v);
            n[mask as usize] += 1;
            s[mask as usize] += scene.value(v) as u64;
        }
        let mut out = ActiveCounts {
            masks: Vec::new(),
            n: Vec::new(),
            s: Vec::new(),
        };
        for mask in 0..n.len() {
            if n[mask] > 0 {
                out.masks.push(mask as u64);
                out.n.push(n[mask]);
                out.s.push(s[mask]);
            }
        }
        out
    } else {
        let mut map = std::collections::HashMap::new();
        for v in scene.nodes() {
            let mask = active_mask(scene, template, v);
            let e = map.entry(mask).or_insert((0u64, 0u64));
            e.0 += 1;
            e.1 += scene.value(v) as u64;
        }
        let mut masks: Vec<u64> = map.keys().copied().collect();
        masks.sort_unstable();
        let n = masks.iter().map(|m| map[m].0).collect();
        let s = masks.iter().map(|m| map[m].1).collect();
        ActiveCounts { masks, n, s }
    }
}

/// The model proper: a pseudo-Boolean function whose template is the
/// sequential neighborhood.
#[derive(Clone, Debug)]
pub struct Mmm {
    pbf: Pbf,
}

impl Mmm {
    pub fn new(pbf: Pbf) -> Self {
        Mmm { pbf }
    }

    pub fn pbf(&self) -> &Pbf {
        &self.pbf
    }

    pub fn pbf_mut(&mut self) -> &mut Pbf {
        &mut self.pbf
    }

    pub fn into_pbf(self) -> Pbf {
        self.pbf
    }

    pub fn tau(&self) -> &[Offset] {
        self.pbf.support().template()
    }

    /// P(x_v = 1 | neighborhood values).
    pub fn conditional_prob(&self, scene: &Scene, v: NodeId) -> f64 {
        let mask = active_mask(scene, self.tau(), v);
        logistic(self.pbf.evaluate_mask(mask))
    }

    /// Joint log-density of the whole scene, observed or not: the sum over all
    /// nodes of x_v * theta(lambda_v) - ln(1+exp theta(lambda_v)).
    pub fn log_likelihood(&self, scene: &Scene) -> f64 {
        let tau = self.tau();
        let mut acc = 0.0;
        for v in scene.nodes() {
            let theta = self.pbf.evaluate_mask(active_mask(scene, tau, v));
            acc += scene.value(v) as f64 * theta - softplus(theta);
        }
        acc
    }

    /// Same likelihood from pre-aggregated counts.
    pub fn log_likelihood_from_counts(&self, counts: &ActiveCounts) -> f64 {
        let mut acc = 0.0;
        for ((&mask, &n), &s) in counts.masks.iter().zip(&counts.n).zip(&counts.s) {
            let theta = self.pbf.evaluate_mask(mask);
            acc += s as f64 * theta - n as f64 * softplus(theta);
        }
        acc
    }

    /// log f(x with x_v=1) - log f(x with x_v=0), touching only the factor at v
    /// and the factors at nodes whose neighborhood contains v. The current
    /// value of x_v does not influence the result; P(x_v=1 | rest) is the
    /// logistic of the returned value.
    pub fn flip_log_ratio(&self, scene: &Scene, v: NodeId) -> f64 {
        let tau = self.tau();
        let mut acc = self.pbf.evaluate_mask(active_mask(scene, tau, v));
        for (bit, t) in tau.iter().enumerate() {
            let i = v.i as i64 - t.row as i64;
            let j = v.j as i64 - t.col as i64;
            if !scene.dims().contains(i, j) {
                continue;
            }
            let u = NodeId::new(i as usize, j as usize);
            let base = active_mask(scene, tau, u) & !(1 << bit);
            let theta1 = self.pbf.evaluate_mask(base | (1 << bit));
            let theta0 = self.pbf.evaluate_mask(base);
            acc +=
                scene.value(u) as f64 * (theta1 - theta0) - (softplus(theta1) - softplus(theta0));
        }
        acc
    }

    /// Ancestral simulation: visits nodes in raster order and draws each value
    /// from its conditional given the already-drawn past. Returns a fully
    /// observed scene.
    pub fn simulate(&self, dims: LatticeDims, rng: &mut impl Rng) -> Scene {
        let mut scene = Scene::filled(dims, 0, true);
        let tau = self.tau();
        let nodes: Vec<NodeId> = scene.nodes().collect();
        for v in nodes {
            let p = logistic(self.pbf.evaluate_mask(active_mask(&scene, tau, v)));
            let x = if rng.random::<f64>() < p { 1 } else { 0 };
            scene.set_value(v, x);
        }
        scene
    }
}
