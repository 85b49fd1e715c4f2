//! Pseudo-Boolean functions over dense interaction sets.
//!
//! An interaction is a subset of template offsets. The conditional log-odds at a
//! node is theta(lambda) where lambda is the set of active (value 1) neighbor
//! offsets. Only a dense set Lambda of interactions carries free parameters:
//! dense means subset-closed with the empty interaction always present, and the
//! template tau is exactly the union of member offsets (equivalently, the
//! singletons of Lambda).
//!
//! Two equivalent parameterizations are linked by Moebius inversion:
//!   theta(lambda) = sum of beta(mu) over mu in Lambda with mu subset of lambda,
//!   beta(lambda)  = theta(lambda) - sum of beta(mu) over proper subsets in Lambda.
//! Coefficients beta vanish off Lambda, which defines theta(lambda) for every
//! subset of the template, member or not.

use std::fmt;

use thiserror::Error;

use crate::lattice::Offset;

/// A set of template offsets, canonically sorted. Orders by (size, offsets) so
/// that sorting a collection lists interactions level by level.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Interaction {
    offsets: Vec<Offset>,
}

impl Interaction {
    /// Builds an interaction; offsets are sorted and deduplicated and must lie
    /// in the past half-plane.
    pub fn new(mut offsets: Vec<Offset>) -> Self {
        offsets.sort();
        offsets.dedup();
        for t in &offsets {
            assert!(
                t.in_psi(),
                "interaction offset {t} is not in the past half-plane"
            );
        }
        Interaction { offsets }
    }

    pub fn empty() -> Self {
        Interaction {
            offsets: Vec::new(),
        }
    }

    pub fn singleton(t: Offset) -> Self {
        Interaction::new(vec![t])
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, t: Offset) -> bool {
        self.offsets.binary_search(&t).is_ok()
    }

    pub fn is_subset_of(&self, other: &Interaction) -> bool {
        self.offsets.iter().all(|t| other.contains(*t))
    }

    /// The interaction extended by one offset.
    pub fn with_offset(&self, t: Offset) -> Interaction {
        let mut offsets = self.offsets.clone();
        offsets.push(t);
        Interaction::new(offsets)
    }

    /// The interaction with one offset removed.
    pub fn without_offset(&self, t: Offset) -> Interaction {
        Interaction {
            offsets: self.offsets.iter().copied().filter(|&u| u != t).collect(),
        }
    }
}

impl PartialOrd for Interaction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Interaction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.offsets
            .len()
            .cmp(&other.offsets.len())
            .then_with(|| self.offsets.cmp(&other.offsets))
    }
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, t) in self.offsets.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "}}")
    }
}

/// True iff the collection is subset-closed and contains the empty interaction.
pub fn is_dense(members: &[Interaction]) -> bool {
    if !members.iter().any(|m| m.is_empty()) {
        return false;
    }
    for m in members {
        for &t in m.offsets() {
            let sub = m.without_offset(t);
            if !members.contains(&sub) {
                return false;
            }
        }
    }
    true
}

#[derive(Error, Debug)]
pub enum PbfError {
    #[error("interaction set is not dense: {0}")]
    NotDense(String),
    #[error("support has {members} members but {values} parameter values")]
    LengthMismatch { members: usize, values: usize },
    #[error("duplicate interaction {0}")]
    Duplicate(String),
    #[error("model file is not valid JSON: {0}")]
    Json(String),
    #[error("offset ({0}, {1}) is not in the past half-plane")]
    OffsetOutsidePsi(i32, i32),
    #[error("declared template does not match the union of the interactions")]
    TemplateMismatch,
}

/// A dense interaction set in canonical order, with its derived template and
/// per-member bit masks (bit k of a mask marks template offset k).
#[derive(Clone, PartialEq, Debug)]
pub struct InteractionSet {
    members: Vec<Interaction>,
    template: Vec<Offset>,
    masks: Vec<u64>,
}

impl InteractionSet {
    pub fn new(mut members: Vec<Interaction>) -> Result<Self, PbfError> {
        members.sort();
        for w in members.windows(2) {
            if w[0] == w[1] {
                return Err(PbfError::Duplicate(w[0].to_string()));
            }
        }
        if !is_dense(&members) {
            let missing = members
                .iter()
                .flat_map(|m| m.offsets().iter().map(|&t| (m.clone(), t)))
                .find(|(m, t)| !members.contains(&m.without_offset(*t)))
                .map(|(m, t)| format!("{} is missing subset {}", m, m.without_offset(t)))
                .unwrap_or_else(|| "empty interaction missing".into());
            return Err(PbfError::NotDense(missing));
        }
        let mut template: Vec<Offset> = members
            .iter()
            .flat_map(|m| m.offsets().iter().copied())
            .collect();
        template.sort();
        template.dedup();
        assert!(
            template.len() <= 64,
            "templates beyond 64 offsets are unsupported"
        );
        let masks = members
            .iter()
            .map(|m| mask_over(m, &template).expect("member offsets are in the template"))
            .collect();
        Ok(InteractionSet {
            members,
            template,
            masks,
        })
    }

    /// The one-member set {empty}.
    pub fn minimal() -> Self {
        InteractionSet::new(vec![Interaction::empty()]).expect("the empty-only set is dense")
    }

    pub fn members(&self) -> &[Interaction] {
        &self.members
    }

    pub fn template(&self) -> &[Offset] {
        &self.template
    }

    pub fn masks(&self) -> &[u64] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn index_of(&self, lambda: &Interaction) -> Option<usize> {
        self.members.binary_search(lambda).ok()
    }

    pub fn contains(&self, lambda: &Interaction) -> bool {
        self.index_of(lambda).is_some()
    }

    /// Mask of `lambda` over this set's template; offsets outside the template
    /// are dropped (they cannot intersect any member).
    pub fn mask_of_clipped(&self, lambda: &Interaction) -> u64 {
        let mut mask = 0u64;
        for &t in lambda.offsets() {
            if let Ok(k) = self.template.binary_search(&t) {
                mask |= 1 << k;
            }
        }
        mask
    }

    /// Number of members of the given cardinality.
    pub fn level_len(&self, k: usize) -> usize {
        self.members.iter().filter(|m| m.len() == k).count()
    }
}

/// Mask of an interaction over an explicit sorted template; None if some offset
/// is not a template member.
pub fn mask_over(lambda: &Interaction, template: &[Offset]) -> Option<u64> {
    let mut mask = 0u64;
    for &t in lambda.offsets() {
        let k = template.binary_search(&t).ok()?;
        mask |= 1 << k;
    }
    Some(mask)
}

#[inline]
fn is_submask(sub: u64, sup: u64) -> bool {
    sub & !sup == 0
}

/// Solves for coefficients given values: a triangular pass in level order.
pub fn beta_from_theta(support: &InteractionSet, theta: &[f64]) -> Vec<f64> {
    assert_eq!(
        theta.len(),
        support.len(),
        "theta must be keyed exactly by the support"
    );
    let masks = support.masks();
    let mut beta = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let mut acc = theta[i];
        for j in 0..i {
            if masks[j] != masks[i] && is_submask(masks[j], masks[i]) {
                acc -= beta[j];
            }
        }
        beta[i] = acc;
    }
    beta
}

/// Values from coefficients: theta(lambda) sums beta over member subsets.
pub fn theta_from_beta(support: &InteractionSet, beta: &[f64]) -> Vec<f64> {
    assert_eq!(
        beta.len(),
        support.len(),
        "beta must be keyed exactly by the support"
    );
    let masks = support.masks();
    let mut theta = vec![0.0; beta.len()];
    for i in 0..beta.len() {
        let mut acc = 0.0;
        for j in 0..=i {
            if is_submask(masks[j], masks[i]) {
                acc += beta[j];
            }
        }
        theta[i] = acc;
    }
    theta
}

/// Non-empty members whose removal keeps the set dense: exactly the members
/// that are not a proper subset of another member.
pub fn removable(support: &InteractionSet) -> Vec<Interaction> {
    let masks = support.masks();
    support
        .members()
        .iter()
        .enumerate()
        .filter(|(i, m)| {
            !m.is_empty()
                && !masks
                    .iter()
                    .any(|&other| other != masks[*i] && is_submask(masks[*i], other))
        })
        .map(|(_, m)| m.clone())
        .collect()
}

/// Candidate extensions of a dense set: template offsets not yet used
/// (first-order) and absent interactions of size >= 2 whose every
/// one-smaller subset is a member (higher-order). Candidates are produced by
/// extending members with single template offsets, never by scanning the
/// full power set.
pub fn addable(support: &InteractionSet, tau0: &[Offset]) -> (Vec<Offset>, Vec<Interaction>) {
    let tau = support.template();
    for t in tau {
        assert!(
            tau0.contains(t),
            "template offset {t} is outside the candidate pool"
        );
    }
    let mut first: Vec<Offset> = tau0.iter().copied().filter(|t| !tau.contains(t)).collect();
    first.sort();

    let mut higher: Vec<Interaction> = Vec::new();
    for m in support.members() {
        if m.is_empty() {
            continue;
        }
        for &t in tau {
            if m.contains(t) {
                continue;
            }
            let cand = m.with_offset(t);
            if support.contains(&cand) || higher.contains(&cand) {
                continue;
            }
            let all_subsets_present = cand
                .offsets()
                .iter()
                .all(|&u| support.contains(&cand.without_offset(u)));
            if all_subsets_present {
                higher.push(cand);
            }
        }
    }
    higher.sort();
    (first, higher)
}

/// DOT digraph of the interaction lattice: an edge joins each member to the
/// members one offset larger.
pub fn to_dot(support: &InteractionSet) -> String {
    let mut out = String::from("digraph interactions {\n");
    for (i, m) in support.members().iter().enumerate() {
        out.push_str(&format!("  n{} [label=\"{}\"];\n", i, m));
    }
    let masks = support.masks();
    for i in 0..support.len() {
        for j in 0..support.len() {
            if support.members()[j].len() == support.members()[i].len() + 1
                && is_submask(masks[i], masks[j])
            {
                out.push_str(&format!("  n{} -> n{};\n", i, j));
            }
        }
    }
    out.push_str("}\n");
    out
}

/// A pseudo-Boolean function: a dense support with parallel theta values and
/// the cached coefficients implied by Moebius inversion.
#[derive(Clone, PartialEq, Debug)]
pub struct Pbf {
    support: InteractionSet,
    theta: Vec<f64>,
    beta: Vec<f64>,
}

impl Pbf {
    pub fn from_theta(support: InteractionSet, theta: Vec<f64>) -> Self {
        let beta = beta_from_theta(&support, &theta);
        Pbf {
            support,
            theta,
            beta,
        }
    }

    pub fn from_beta(support: InteractionSet, beta: Vec<f64>) -> Self {
        let theta = theta_from_beta(&support, &beta);
        Pbf {
            support,
            theta,
            beta,
        }
    }

    /// The one-parameter function on support {empty}.
    pub fn constant(theta_empty: f64) -> Self {
        Pbf::from_theta(InteractionSet::minimal(), vec![theta_empty])
    }

    pub fn support(&self) -> &InteractionSet {
        &self.support
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn theta_of(&self, lambda: &Interaction) -> Option<f64> {
        self.support.index_of(lambda).map(|i| self.theta[i])
    }

    /// Replaces the values and refreshes the coefficient cache.
    pub fn set_theta(&mut self, theta: Vec<f64>) {
        assert_eq!(theta.len(), self.support.len());
        self.beta = beta_from_theta(&self.support, &theta);
        self.theta = theta;
    }

    /// Evaluates at any interaction: the sum of coefficients over member
    /// subsets. Offsets outside the template contribute nothing.
    pub fn evaluate(&self, lambda: &Interaction) -> f64 {
        let mask = self.support.mask_of_clipped(lambda);
        let clipped = lambda
            .offsets()
            .iter()
            .filter(|t| self.support.template().contains(t))
            .count();
        debug_assert_eq!(mask.count_ones() as usize, clipped);
        self.evaluate_mask(mask)
    }

    /// Evaluates at a template mask (bit k = template offset k active).
    pub fn evaluate_mask(&self, mask: u64) -> f64 {
        let mut acc = 0.0;
        for (i, &m) in self.support.masks().iter().enumerate() {
            if is_submask(m, mask) {
                acc += self.beta[i];
            }
        }
        acc
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelFile {
    template: Vec<[i32; 2]>,
    interactions: Vec<Vec<[i32; 2]>>,
    theta: Vec<f64>,
}

/// Serializes a model as JSON with parallel "interactions" and "theta".
pub fn model_to_json(pbf: &Pbf) -> String {
    let file = ModelFile {
        template: pbf
            .support()
            .template()
            .iter()
            .map(|t| [t.row, t.col])
            .collect(),
        interactions: pbf
            .support()
            .members()
            .iter()
            .map(|m| m.offsets().iter().map(|t| [t.row, t.col]).collect())
            .collect(),
        theta: pbf.theta().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

/// Parses and validates a model file: well-formed JSON, past-half-plane
/// offsets, a dense interaction set, theta keyed by the interactions, and a
/// template matching the union of the interactions.
pub fn model_from_json(text: &str) -> Result<Pbf, PbfError> {
    let raw: ModelFile = serde_json::from_str(text).map_err(|e| PbfError::Json(e.to_string()))?;
    for &[r, c] in raw.template.iter().chain(raw.interactions.iter().flatten()) {
        let t = Offset::new(r, c);
        if !t.in_psi() {
            return Err(PbfError::OffsetOutsidePsi(r, c));
        }
    }
    if raw.interactions.len() != raw.theta.len() {
        return Err(PbfError::LengthMismatch {
            members: raw.interactions.len(),
            values: raw.theta.len(),
        });
    }
    let members: Vec<Interaction> = raw
        .interactions
        .iter()
        .map(|m| Interaction::new(m.iter().map(|&[r, c]| Offset::new(r, c)).collect()))
        .collect();
    // Keep theta aligned with the canonical member order the set will use.
    let mut pairs: Vec<(Interaction, f64)> = members.into_iter().zip(raw.theta).collect();
    pairs.sort_by(|(a, _), (b, _)| a.cmp(b));
    let support = InteractionSet::new(pairs.iter().map(|(m, _)| m.clone()).collect())?;
    let mut declared: Vec<Offset> = raw
        .template
        .iter()
        .map(|&[r, c]| Offset::new(r, c))
        .collect();
    declared.sort();
    declared.dedup();
    if declared.as_slice() != support.template() {
        return Err(PbfError::TemplateMismatch);
    }
    let theta = pairs.into_iter().map(|(_, v)| v).collect();
    Ok(Pbf::from_theta(support, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn off(r: i32, c: i32) -> Offset {
        Offset::new(r, c)
    }

    fn ix(offsets: &[(i32, i32)]) -> Interaction {
        Interaction::new(offsets.iter().map(|&(r, c)| off(r, c)).collect())
    }

    fn set(members: &[&[(i32, i32)]]) -> InteractionSet {
        InteractionSet::new(members.iter().map(|m| ix(m)).collect()).unwrap()
    }

    /// Dense sets over a fixed small template, built by downward-closing an
    /// arbitrary selection of power-set masks. Used by the property tests.
    fn closure_set(tau: &[Offset], chosen: u32) -> InteractionSet {
        let full = 1u32 << tau.len();
        let mut present = vec![false; full as usize];
        present[0] = true;
        for mask in 0..full {
            if chosen & (1 << (mask % 32)) != 0 || mask == 0 {
                // Include this mask and every submask.
                let mut sub = mask;
                loop {
                    present[sub as usize] = true;
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & mask;
                }
            }
        }
        let members = present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(mask, _)| {
                Interaction::new(
                    tau.iter()
                        .enumerate()
                        .filter(|(k, _)| mask & (1 << k) != 0)
                        .map(|(_, &t)| t)
                        .collect(),
                )
            })
            .collect();
        InteractionSet::new(members).unwrap()
    }

    const TAU5: [(i32, i32); 5] = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, -2)];

    #[test]
    fn density_check_examples() {
        let a = (0, -1);
        let b = (-1, 0);
        assert!(is_dense(&[ix(&[])]));
        assert!(is_dense(&[ix(&[]), ix(&[a]), ix(&[b]), ix(&[a, b])]));
        assert!(!is_dense(&[ix(&[]), ix(&[a]), ix(&[a, b])]));
        assert!(!is_dense(&[ix(&[a])]));
    }

    #[test]
    fn canonical_order_is_level_then_lex() {
        let s = set(&[&[(0, -1), (-1, 0)], &[], &[(0, -1)], &[(-1, 0)]]);
        let rendered: Vec<String> = s.members().iter().map(|m| m.to_string()).collect();
        assert_eq!(
            rendered,
            vec!["{}", "{(-1,0)}", "{(0,-1)}", "{(-1,0),(0,-1)}"]
        );
        assert_eq!(s.template(), &[off(-1, 0), off(0, -1)]);
        assert_eq!(s.masks(), &[0b00, 0b01, 0b10, 0b11]);
    }

    #[test]
    fn moebius_single_parameter() {
        let s = InteractionSet::minimal();
        assert_eq!(beta_from_theta(&s, &[2.5]), vec![2.5]);
        assert_eq!(theta_from_beta(&s, &[2.5]), vec![2.5]);
    }

    #[test]
    fn moebius_two_by_two_example() {
        // Canonical order: {}, {a}, {b}, {a,b} with a = (-1,0), b = (0,-1).
        let s = set(&[&[], &[(-1, 0)], &[(0, -1)], &[(-1, 0), (0, -1)]]);
        let theta = vec![0.5, 1.5, -1.5, -0.25];
        let beta = beta_from_theta(&s, &theta);
        assert_eq!(beta, vec![0.5, 1.0, -2.0, 0.25]);
        let back = theta_from_beta(&s, &beta);
        for (t, b) in theta.iter().zip(back.iter()) {
            assert!((t - b).abs() < 1e-15);
        }
        // theta({a,b}) from the coefficient side.
        let p = Pbf::from_beta(s, vec![0.5, 1.0, -2.0, 0.25]);
        assert!((p.theta()[3] - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn theta_from_beta_examples() {
        let s = set(&[&[], &[(-1, 0)]]);
        assert_eq!(theta_from_beta(&s, &[1.0, 2.0]), vec![1.0, 3.0]);
        let s4 = set(&[&[], &[(-1, 0)], &[(0, -1)], &[(-1, 0), (0, -1)]]);
        assert_eq!(theta_from_beta(&s4, &[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn beta_matches_alternating_sum_on_power_sets() {
        // On a full power set the triangular solve must agree with the direct
        // inclusion-exclusion formula.
        let tau: Vec<Offset> = TAU5[..4].iter().map(|&(r, c)| off(r, c)).collect();
        let s = closure_set(&tau, u32::MAX);
        assert_eq!(s.len(), 16);
        let theta: Vec<f64> = (0..16)
            .map(|i| ((i * 37 % 23) as f64 - 11.0) / 3.0)
            .collect();
        let beta = beta_from_theta(&s, &theta);
        for (i, lam) in s.members().iter().enumerate() {
            let mut acc = 0.0;
            for (j, mu) in s.members().iter().enumerate() {
                if mu.is_subset_of(lam) {
                    let sign = if (lam.len() - mu.len()) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    acc += sign * theta[j];
                }
            }
            assert!(
                (beta[i] - acc).abs() < 1e-12,
                "alternating sum mismatch at {lam}: {} vs {acc}",
                beta[i]
            );
        }
    }

    #[test]
    fn evaluate_examples() {
        let a = (0, -1);
        let b = (-1, 0);
        let s = set(&[&[], &[a], &[b]]);
        // theta(empty)=0, and the singleton thetas equal their betas here.
        let p = Pbf::from_theta(s, vec![0.0, 1.0, 2.0]);
        assert_eq!(p.evaluate(&ix(&[])), 0.0);
        assert_eq!(p.evaluate(&ix(&[a, b])), 3.0);
        for (i, lam) in p.support().members().iter().enumerate() {
            assert_eq!(p.evaluate(lam), p.theta()[i]);
        }
        // Offsets outside the template are ignored.
        assert_eq!(p.evaluate(&ix(&[a, (-2, 0)])), p.evaluate(&ix(&[a])));
    }

    #[test]
    fn removable_examples() {
        let a = (0, -1);
        let b = (-1, 0);
        assert!(removable(&InteractionSet::minimal()).is_empty());
        let s = set(&[&[], &[a], &[b], &[a, b]]);
        assert_eq!(removable(&s), vec![ix(&[a, b])]);
        let s2 = set(&[&[], &[a], &[b]]);
        assert_eq!(removable(&s2), vec![ix(&[b]), ix(&[a])]);
    }

    #[test]
    fn removing_any_removable_member_keeps_density() {
        let tau: Vec<Offset> = TAU5[..4].iter().map(|&(r, c)| off(r, c)).collect();
        for chosen in [0x13u32, 0xfe, 0xbeef, 0x1001, u32::MAX] {
            let s = closure_set(&tau, chosen);
            let rem = removable(&s);
            assert!(!rem.iter().any(|m| m.is_empty()));
            for m in s.members() {
                if m.is_empty() {
                    continue;
                }
                let rest: Vec<Interaction> =
                    s.members().iter().filter(|&x| x != m).cloned().collect();
                assert_eq!(
                    is_dense(&rest),
                    rem.contains(m),
                    "density after removing {m} from {chosen:#x}"
                );
            }
        }
    }

    #[test]
    fn addable_examples() {
        let tau0 = crate::lattice::disk_template(5.0);
        let (first, higher) = addable(&InteractionSet::minimal(), &tau0);
        assert_eq!(first.len(), 34);
        assert!(higher.is_empty());

        let a = (0, -1);
        let b = (-1, 0);
        let s = set(&[&[], &[a], &[b]]);
        let (_, higher) = addable(&s, &tau0);
        assert_eq!(higher, vec![ix(&[a, b])]);

        let full = closure_set(&[off(-1, 0), off(0, -1)], u32::MAX);
        let (first, higher) = addable(&full, &[off(-1, 0), off(0, -1)]);
        assert!(first.is_empty());
        assert!(higher.is_empty());
    }

    #[test]
    fn addable_is_exhaustive_on_small_templates() {
        let tau: Vec<Offset> = TAU5[..4].iter().map(|&(r, c)| off(r, c)).collect();
        for chosen in [0u32, 0x5, 0x2f, 0x113, 0xffff] {
            let s = closure_set(&tau, chosen);
            let (_, higher) = addable(&s, &tau);
            // Every returned candidate keeps density after insertion.
            for cand in &higher {
                let mut grown = s.members().to_vec();
                grown.push(cand.clone());
                assert!(is_dense(&grown), "candidate {cand} breaks density");
            }
            // Every omitted size >= 2 subset of the current template is either
            // present already or breaks density.
            let current_tau = s.template().to_vec();
            for mask in 1u32..(1 << current_tau.len()) {
                if mask.count_ones() < 2 {
                    continue;
                }
                let cand = Interaction::new(
                    current_tau
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| mask & (1 << k) != 0)
                        .map(|(_, &t)| t)
                        .collect(),
                );
                if higher.contains(&cand) {
                    continue;
                }
                let mut grown = s.members().to_vec();
                grown.push(cand.clone());
                grown.sort();
                grown.dedup();
                assert!(
                    s.contains(&cand) || !is_dense(&grown),
                    "candidate {cand} omitted but addable"
                );
            }
        }
    }

    #[test]
    fn dot_export_counts() {
        let count_edges = |dot: &str| dot.matches("->").count();
        let count_nodes = |dot: &str| dot.matches("label=").count();

        let single = to_dot(&InteractionSet::minimal());
        assert_eq!(count_nodes(&single), 1);
        assert_eq!(count_edges(&single), 0);

        let two = to_dot(&set(&[&[], &[(0, -1)]]));
        assert_eq!(count_nodes(&two), 2);
        assert_eq!(count_edges(&two), 1);

        // Seven members over a four-offset template: the two pairs each link to
        // both of their singletons, and the empty set links to each singleton.
        let seven = set(&[
            &[],
            &[(0, -1)],
            &[(-1, 0)],
            &[(-1, -1)],
            &[(-1, 1)],
            &[(0, -1), (-1, 0)],
            &[(0, -1), (-1, 1)],
        ]);
        let dot = to_dot(&seven);
        assert_eq!(count_nodes(&dot), 7);
        assert_eq!(count_edges(&dot), 8);
    }

    #[test]
    fn non_dense_sets_are_rejected() {
        let err = InteractionSet::new(vec![ix(&[]), ix(&[(0, -1), (-1, 0)])]);
        assert!(matches!(err, Err(PbfError::NotDense(_))));
        let dup = InteractionSet::new(vec![ix(&[]), ix(&[(0, -1)]), ix(&[(0, -1)])]);
        assert!(matches!(dup, Err(PbfError::Duplicate(_))));
    }

    #[test]
    fn model_file_round_trips() {
        let s = set(&[&[], &[(0, -1)], &[(-1, 0)], &[(0, -1), (-1, 0)]]);
        let pbf = Pbf::from_theta(s, vec![0.5, 1.5, -1.5, -0.25]);
        let json = model_to_json(&pbf);
        let back = model_from_json(&json).unwrap();
        assert_eq!(back.support(), pbf.support());
        assert_eq!(back.theta(), pbf.theta());
    }

    #[test]
    fn model_file_reorders_by_canonical_member_order() {
        // theta follows its interaction wherever the member sorts to.
        let json = r#"{
            "template": [[-1, 0], [0, -1]],
            "interactions": [[[0, -1]], [], [[-1, 0]]],
            "theta": [2.0, 1.0, 3.0]
        }"#;
        let pbf = model_from_json(json).unwrap();
        assert_eq!(pbf.theta_of(&ix(&[])), Some(1.0));
        assert_eq!(pbf.theta_of(&ix(&[(-1, 0)])), Some(3.0));
        assert_eq!(pbf.theta_of(&ix(&[(0, -1)])), Some(2.0));
    }

    #[test]
    fn model_file_validation_errors() {
        assert!(matches!(
            model_from_json("not json"),
            Err(PbfError::Json(_))
        ));
        let not_dense = r#"{"template": [[0,-1],[-1,0]],
            "interactions": [[], [[0,-1],[-1,0]]], "theta": [0.0, 1.0]}"#;
        assert!(matches!(
            model_from_json(not_dense),
            Err(PbfError::NotDense(_))
        ));
        let wrong_len = r#"{"template": [[0,-1]],
            "interactions": [[], [[0,-1]]], "theta": [0.0]}"#;
        assert!(matches!(
            model_from_json(wrong_len),
            Err(PbfError::LengthMismatch {
                members: 2,
                values: 1
            })
        ));
        let future = r#"{"template": [[0,1]],
            "interactions": [[], [[0,1]]], "theta": [0.0, 1.0]}"#;
        assert!(matches!(
            model_from_json(future),
            Err(PbfError::OffsetOutsidePsi(0, 1))
        ));
        let bad_template = r#"{"template": [[0,-1],[-1,-1]],
            "interactions": [[], [[0,-1]]], "theta": [0.0, 1.0]}"#;
        assert!(matches!(
            model_from_json(bad_template),
            Err(PbfError::TemplateMismatch)
        ));
    }

    proptest! {
        #[test]
        fn moebius_round_trip(
            tau_size in 1usize..=5,
            chosen in any::<u32>(),
            raw in proptest::collection::vec(-5.0f64..5.0, 32),
        ) {
            let tau: Vec<Offset> = TAU5[..tau_size].iter().map(|&(r, c)| off(r, c)).collect();
            let s = closure_set(&tau, chosen);
            let theta: Vec<f64> = raw[..s.len()].to_vec();
            let beta = beta_from_theta(&s, &theta);
            let back = theta_from_beta(&s, &beta);
            for (t, b) in theta.iter().zip(back.iter()) {
                prop_assert!((t - b).abs() < 1e-12, "round trip drift {t} vs {b}");
            }
        }

        #[test]
        fn evaluate_is_linear_in_theta(
            chosen in any::<u32>(),
            raw1 in proptest::collection::vec(-5.0f64..5.0, 32),
            raw2 in proptest::collection::vec(-5.0f64..5.0, 32),
            probe in any::<u32>(),
        ) {
            let tau: Vec<Offset> = TAU5[..4].iter().map(|&(r, c)| off(r, c)).collect();
            let s = closure_set(&tau, chosen);
            let t1: Vec<f64> = raw1[..s.len()].to_vec();
            let t2: Vec<f64> = raw2[..s.len()].to_vec();
            let sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
            let lam = Interaction::new(
                tau.iter().enumerate()
                    .filter(|(k, _)| probe & (1 << k) != 0)
                    .map(|(_, &t)| t)
                    .collect(),
            );
            let p1 = Pbf::from_theta(s.clone(), t1);
            let p2 = Pbf::from_theta(s.clone(), t2);
            let ps = Pbf::from_theta(s, sum);
            prop_assert!(
                (p1.evaluate(&lam) + p2.evaluate(&lam) - ps.evaluate(&lam)).abs() < 1e-12
            );
        }
    }
}
