//! Posterior summaries computed from a recorded trace: subsampling,
//! inclusion marginals for neighbors and interactions, parameter histograms,
//! structure clustering, and 2x2 block densities.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::lattice::{LatticeDims, NodeId, Offset, Scene};
use crate::model::Mmm;
use crate::pbf::{Interaction, PbfError};
use crate::rjmcmc::{ChainTrace, TraceRecord};

#[derive(Error, Debug)]
pub enum AnalysisError {
    #[error("no records left after burn-in")]
    EmptyTrace,
    #[error("no fully observed 2x2 block")]
    NoBlocks,
    #[error(transparent)]
    Model(#[from] PbfError),
}

/// Thins a trace. With a zero burn-in every record is eligible; otherwise
/// only records strictly past the burn-in iteration are. Of the eligible
/// records the first is kept, then every stride-th after it, so thinning by
/// a and then by b equals thinning by a*b.
pub fn subsample(trace: &ChainTrace, burnin: u64, stride: u64) -> ChainTrace {
    assert!(stride >= 1, "stride must be at least 1");
    let records = trace
        .records
        .iter()
        .filter(|r| burnin == 0 || r.it > burnin)
        .enumerate()
        .filter(|(k, _)| (*k as u64).is_multiple_of(stride))
        .map(|(_, r)| r.clone())
        .collect();
    ChainTrace { records }
}

/// Inclusion probability of each neighborhood offset, over the offsets that
/// occur at least once, in canonical order.
pub fn neighbor_marginals(records: &[TraceRecord]) -> Result<Vec<(Offset, f64)>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut counts: HashMap<Offset, usize> = HashMap::new();
    for rec in records {
        for t in rec.tau_offsets() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let total = records.len() as f64;
    let mut out: Vec<(Offset, f64)> = counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 / total))
        .collect();
    out.sort_by_key(|(t, _)| *t);
    Ok(out)
}

/// Inclusion probability of each interaction, ranked by decreasing
/// probability with canonical order breaking ties. The empty interaction is
/// in every model, so it leads with probability one.
pub fn interaction_marginals(
    records: &[TraceRecord],
) -> Result<Vec<(Interaction, f64)>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut counts: HashMap<Interaction, usize> = HashMap::new();
    for rec in records {
        for m in rec.interactions() {
            *counts.entry(m).or_insert(0) += 1;
        }
    }
    let total = records.len() as f64;
    let mut out: Vec<(Interaction, f64)> = counts
        .into_iter()
        .map(|(m, c)| (m, c as f64 / total))
        .collect();
    out.sort_by(|(ma, pa), (mb, pb)| pb.partial_cmp(pa).unwrap().then_with(|| ma.cmp(mb)));
    Ok(out)
}

/// The per-record value of theta(lambda). The value is defined for every
/// record, member or not: coefficients vanish off the active set, so it is
/// the sum of beta over active subsets of lambda.
pub fn theta_histogram(
    records: &[TraceRecord],
    lambda: &Interaction,
) -> Result<Vec<f64>, AnalysisError> {
    let mut values = Vec::with_capacity(records.len());
    for rec in records {
        values.push(rec.pbf()?.evaluate(lambda));
    }
    Ok(values)
}

/// One group of structurally similar visited models.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub id: usize,
    /// Fraction of all records whose model falls in this cluster.
    pub mass: f64,
    pub n_models: usize,
    /// The most frequent member structure, used as the cluster label.
    pub seed: Vec<Interaction>,
}

fn one_member_apart(a: &[Interaction], b: &[Interaction]) -> bool {
    // Members are canonically sorted, so a merge pass counts the symmetric
    // difference.
    let (mut i, mut j, mut diff) = (0usize, 0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                i += 1;
                diff += 1;
            }
            std::cmp::Ordering::Greater => {
                j += 1;
                diff += 1;
            }
        }
        if diff > 1 {
            return false;
        }
    }
    diff + (a.len() - i) + (b.len() - j) == 1
}

/// Groups the distinct visited structures into clusters. Each cluster grows
/// from the most frequent unassigned structure by flood fill over the
/// "differs by one interaction" relation, restricted to structures that were
/// actually visited; its mass is the summed visit frequency. Empty input
/// yields no clusters.
pub fn model_clusters(records: &[TraceRecord], max_clusters: usize) -> Vec<Cluster> {
    if records.is_empty() {
        return Vec::new();
    }
    let mut counts: HashMap<Vec<Interaction>, usize> = HashMap::new();
    for rec in records {
        *counts.entry(rec.interactions()).or_insert(0) += 1;
    }
    // Deterministic ordering: by count descending, canonical key ascending.
    let mut models: Vec<(Vec<Interaction>, usize)> = counts.into_iter().collect();
    models.sort_by(|(ka, ca), (kb, cb)| cb.cmp(ca).then_with(|| ka.cmp(kb)));

    let total = records.len() as f64;
    let mut assigned = vec![false; models.len()];
    let mut clusters = Vec::new();
    for seed_idx in 0..models.len() {
        if clusters.len() >= max_clusters {
            break;
        }
        if assigned[seed_idx] {
            continue;
        }
        let mut queue = vec![seed_idx];
        assigned[seed_idx] = true;
        let mut member_count = 0usize;
        let mut mass = 0.0;
        while let Some(k) = queue.pop() {
            member_count += 1;
            mass += models[k].1 as f64 / total;
            for (other, flag) in assigned.iter_mut().enumerate() {
                if !*flag && one_member_apart(&models[k].0, &models[other].0) {
                    *flag = true;
                    queue.push(other);
                }
            }
        }
        clusters.push(Cluster {
            id: clusters.len(),
            mass,
            n_models: member_count,
            seed: models[seed_idx].0.clone(),
        });
    }
    clusters
}

/// Code of a 2x2 block: top-left, top-right, bottom-left, bottom-right cells
/// contribute bits 3, 2, 1, 0.
pub fn block_code(tl: u8, tr: u8, bl: u8, br: u8) -> usize {
    ((tl as usize) << 3) | ((tr as usize) << 2) | ((bl as usize) << 1) | br as usize
}

/// Empirical distribution of the 16 block configurations over every fully
/// observed 2x2 block of the scene.
pub fn block_fractions(scene: &Scene) -> Result<[f64; 16], AnalysisError> {
    let d = scene.dims();
    let mut counts = [0u64; 16];
    let mut total = 0u64;
    for i in 1..d.m {
        for j in 1..d.n {
            let cells = [
                NodeId::new(i, j),
                NodeId::new(i, j + 1),
                NodeId::new(i + 1, j),
                NodeId::new(i + 1, j + 1),
            ];
            if cells.iter().any(|&v| !scene.is_observed(v)) {
                continue;
            }
            let code = block_code(
                scene.value(cells[0]),
                scene.value(cells[1]),
                scene.value(cells[2]),
                scene.value(cells[3]),
            );
            counts[code] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(AnalysisError::NoBlocks);
    }
    let mut out = [0.0; 16];
    for (o, c) in out.iter_mut().zip(counts) {
        *o = c as f64 / total as f64;
    }
    Ok(out)
}

/// Posterior predictive block densities: draws `n_realizations` records
/// uniformly with replacement, simulates a scene from each record's model,
/// and collects the block fractions into one sample vector per
/// configuration code.
pub fn posterior_block_densities(
    records: &[TraceRecord],
    dims: LatticeDims,
    n_realizations: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut out: Vec<Vec<f64>> = (0..16)
        .map(|_| Vec::with_capacity(n_realizations))
        .collect();
    for _ in 0..n_realizations {
        let rec = &records[rng.random_range(0..records.len())];
        let model = Mmm::new(rec.pbf()?);
        let scene = model.simulate(dims, rng);
        let f = block_fractions(&scene)?;
        for (samples, value) in out.iter_mut().zip(f) {
            samples.push(value);
        }
    }
    Ok(out)
}

/// The headline posterior summary: neighbor and interaction inclusion
/// probabilities, visited-structure frequencies, and per-record scalars
/// (iteration, active-set size, log posterior).
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub neighbor_prob: Vec<(Offset, f64)>,
    pub interaction_prob: Vec<(Interaction, f64)>,
    pub model_freq: Vec<(Vec<Interaction>, f64)>,
    pub scalars: Vec<(u64, usize, f64)>,
}

pub fn summarize(records: &[TraceRecord]) -> Result<PosteriorSummary, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut freq: HashMap<Vec<Interaction>, usize> = HashMap::new();
    for rec in records {
        *freq.entry(rec.interactions()).or_insert(0) += 1;
    }
    let total = records.len() as f64;
    let mut model_freq: Vec<(Vec<Interaction>, f64)> = freq
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total))
        .collect();
    model_freq.sort_by(|(ka, pa), (kb, pb)| pb.partial_cmp(pa).unwrap().then_with(|| ka.cmp(kb)));
    Ok(PosteriorSummary {
        neighbor_prob: neighbor_marginals(records)?,
        interaction_prob: interaction_marginals(records)?,
        model_freq,
        scalars: records
            .iter()
            .map(|r| (r.it, r.lambda.len(), r.logp))
            .collect(),
    })
}
