//! Selection and histogram mechanisms in the central and local models.
//!
//! Approximate-DP selection is the stability-based noisy histogram over the
//! data support: Laplace(2/eps) on each voted element's count, a release
//! threshold `1 + 2 ln(1/(2 delta)) / eps`, and a fixed fallback element when
//! nothing clears it. Pure-DP selection is the exponential mechanism with the
//! raw count as score (sensitivity 1 under user add/remove), sampled in two
//! phases so the running time is polynomial in `(n, log |U|)` rather than
//! `|U|`. The local protocol is unary randomized response with per-element
//! debiasing.
//!
//! All argmax ties break toward the lowest canonical index.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::randomness::RandomStream;
use crate::sampling::OutcomeSpace;

/// An `(epsilon, delta)` pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParam(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidParam(format!("delta must be in [0, 1), got {delta}")));
        }
        Ok(PrivacyParams { epsilon, delta })
    }
}

/// Group privacy under `k` user additions/removals:
/// `(k eps, delta (e^{k eps} - 1) / (e^eps - 1))`.
pub fn group_privacy(params: &PrivacyParams, k: u32) -> PrivacyParams {
    assert!(k >= 1);
    let eps = params.epsilon;
    let k = k as f64;
    PrivacyParams {
        epsilon: k * eps,
        delta: params.delta * ((k * eps).exp_m1()) / eps.exp_m1(),
    }
}

/// Test hook: `Disabled` zeroes every mechanism's noise so that selection
/// degenerates to the exact plurality vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Noise {
    #[default]
    Standard,
    Disabled,
}

/// One vote per user over a shared universe.
#[derive(Clone, Debug)]
pub struct VoteSet<S: OutcomeSpace> {
    universe: S,
    votes: Vec<S::Elem>,
}

impl<S: OutcomeSpace> VoteSet<S> {
    pub fn new(universe: S, votes: Vec<S::Elem>) -> Result<Self> {
        for v in &votes {
            if !universe.contains(v) {
                return Err(Error::DomainMismatch(format!("vote {v} outside the universe")));
            }
        }
        Ok(VoteSet { universe, votes })
    }

    pub fn universe(&self) -> &S {
        &self.universe
    }

    pub fn votes(&self) -> &[S::Elem] {
        &self.votes
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Multiplicities `c_u`, in canonical element order.
    pub fn counts(&self) -> BTreeMap<S::Elem, u64> {
        let mut counts = BTreeMap::new();
        for v in &self.votes {
            *counts.entry(v.clone()).or_insert(0u64) += 1;
        }
        counts
    }

    /// Largest vote fraction; 0 for an empty vote set.
    pub fn concentration(&self) -> f64 {
        if self.votes.is_empty() {
            return 0.0;
        }
        let max = self.counts().values().copied().max().unwrap_or(0);
        max as f64 / self.votes.len() as f64
    }
}

/// Inverse-CDF Laplace draw with the given scale.
pub fn laplace(stream: &mut RandomStream, scale: f64) -> f64 {
    let u = stream.uniform_unit() - 0.5;
    let t = (1.0 - 2.0 * u.abs()).max(1e-300);
    -scale * u.signum() * t.ln()
}

/// Everything the approximate-DP selection decided, exportable for audits.
#[derive(Clone, Debug, Serialize)]
pub struct SelectTranscript {
    pub counts: Vec<(String, u64)>,
    pub noise: Vec<f64>,
    pub threshold: f64,
    pub chosen: String,
    pub fallback_used: bool,
}

/// Stability-based `(eps, delta)`-DP selection over the vote support.
pub fn approx_select<S: OutcomeSpace>(
    votes: &VoteSet<S>,
    params: &PrivacyParams,
    stream: &mut RandomStream,
    noise: Noise,
) -> Result<(S::Elem, SelectTranscript)> {
    if params.delta == 0.0 {
        return Err(Error::ZeroDelta);
    }
    let eps = params.epsilon;
    let threshold = 1.0 + 2.0 * (1.0 / (2.0 * params.delta)).ln() / eps;
    let counts = votes.counts();

    let mut best: Option<(&S::Elem, f64)> = None;
    let mut transcript_counts = Vec::with_capacity(counts.len());
    let mut transcript_noise = Vec::with_capacity(counts.len());
    for (elem, count) in &counts {
        let draw = match noise {
            Noise::Standard => laplace(stream, 2.0 / eps),
            Noise::Disabled => 0.0,
        };
        let noisy = *count as f64 + draw;
        transcript_counts.push((elem.to_string(), *count));
        transcript_noise.push(draw);
        if best.as_ref().map_or(true, |(_, b)| noisy > *b) {
            best = Some((elem, noisy));
        }
    }

    let passes = match (noise, &best) {
        (Noise::Disabled, Some(_)) => true,
        (_, Some((_, noisy))) => *noisy >= threshold,
        (_, None) => false,
    };
    let chosen = if passes {
        best.unwrap().0.clone()
    } else {
        votes.universe().first()
    };
    let transcript = SelectTranscript {
        counts: transcript_counts,
        noise: transcript_noise,
        threshold,
        chosen: chosen.to_string(),
        fallback_used: !passes,
    };
    Ok((chosen, transcript))
}

/// The exact output law of the exponential mechanism on these votes, over the
/// whole universe. `half_exponent` selects the correct `eps c / 2` scoring; a
/// `false` value reproduces a broken `eps c` variant for negative audits.
///
/// Only usable when the universe is enumerable.
pub fn exponential_mechanism_law<S: OutcomeSpace>(
    votes: &VoteSet<S>,
    epsilon: f64,
    half_exponent: bool,
) -> Vec<(S::Elem, f64)> {
    let universe = votes.universe();
    let n = universe.cardinality().expect("enumerable universe") as usize;
    let counts = votes.counts();
    let scale = if half_exponent { epsilon / 2.0 } else { epsilon };
    let weights: Vec<(S::Elem, f64)> = (0..n)
        .map(|i| {
            let e = universe.elem_at(i as u64).unwrap();
            let c = counts.get(&e).copied().unwrap_or(0);
            let w = (scale * c as f64).exp();
            (e, w)
        })
        .collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    weights.into_iter().map(|(e, w)| (e, w / total)).collect()
}

/// Pure-DP selection: output `u` with probability proportional to
/// `exp(eps c_u / 2)`.
pub fn pure_select<S: OutcomeSpace>(
    votes: &VoteSet<S>,
    epsilon: f64,
    stream: &mut RandomStream,
    noise: Noise,
) -> S::Elem {
    assert!(epsilon > 0.0);
    let counts = votes.counts();

    if noise == Noise::Disabled {
        return counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1))
            .map(|(e, _)| e.clone())
            .unwrap_or_else(|| votes.universe().first());
    }

    // Work relative to the top count so the weights never overflow.
    let c_max = counts.values().copied().max().unwrap_or(0) as f64;
    let in_weights: Vec<(&S::Elem, f64)> = counts
        .iter()
        .map(|(e, c)| (e, (epsilon * (*c as f64 - c_max) / 2.0).exp()))
        .collect();
    let w_in: f64 = in_weights.iter().map(|(_, w)| w).sum();
    let outsiders = votes.universe().cardinality_f64() - counts.len() as f64;
    let w_out = outsiders * (epsilon * (0.0 - c_max) / 2.0).exp();

    let u = stream.uniform_unit() * (w_in + w_out);
    if u < w_in || w_out == 0.0 {
        let mut acc = 0.0;
        for (e, w) in &in_weights {
            acc += w;
            if u < acc {
                return (*e).clone();
            }
        }
        return in_weights.last().expect("nonempty support").0.clone();
    }
    // Uniform over the elements that received no votes.
    for _ in 0..100_000_000u64 {
        let candidate = votes.universe().sample_uniform(stream);
        if !counts.contains_key(&candidate) {
            return candidate;
        }
    }
    unreachable!("rejection over outsiders failed to terminate");
}

/// A one-hot vote pushed through per-bit randomized response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalMessage {
    pub bits: Vec<bool>,
}

/// Per-element histogram estimates.
#[derive(Clone, Debug)]
pub struct HistogramEstimate<E: Ord> {
    pub estimates: BTreeMap<E, f64>,
}

impl<E: Ord> HistogramEstimate<E> {
    pub fn get(&self, e: &E) -> f64 {
        self.estimates.get(e).copied().unwrap_or(0.0)
    }
}

const MAX_UNARY_UNIVERSE: u64 = 1 << 20;

fn unary_universe_size<S: OutcomeSpace>(universe: &S) -> Result<u64> {
    match universe.cardinality() {
        Some(n) if n <= MAX_UNARY_UNIVERSE => Ok(n),
        _ => Err(Error::InvalidParam(format!(
            "unary local protocol needs |U| <= {MAX_UNARY_UNIVERSE}, got 2^{:.1}",
            universe.log2_cardinality()
        ))),
    }
}

/// Flip probability of the local randomizer: each of the two bits that change
/// when the item changes moves by a likelihood ratio of `e^{eps/2}`, so the
/// whole message is `eps`-DP.
pub fn local_flip_probability(epsilon: f64) -> f64 {
    1.0 / (1.0 + (epsilon / 2.0).exp())
}

/// One user's `eps`-DP unary randomized-response message.
pub fn local_randomize<S: OutcomeSpace>(
    item: &S::Elem,
    universe: &S,
    epsilon: f64,
    stream: &mut RandomStream,
    noise: Noise,
) -> Result<LocalMessage> {
    if !(epsilon > 0.0 && epsilon <= 8.0) {
        return Err(Error::InvalidParam(format!(
            "local randomizer supports epsilon in (0, 8], got {epsilon}"
        )));
    }
    let n = unary_universe_size(universe)?;
    let item_idx = universe
        .index_of(item)
        .ok_or_else(|| Error::DomainMismatch(format!("item {item} outside the universe")))?;
    let q = match noise {
        Noise::Standard => local_flip_probability(epsilon),
        Noise::Disabled => 0.0,
    };
    let bits = (0..n)
        .map(|idx| (idx == item_idx) ^ (stream.uniform_unit() < q))
        .collect();
    Ok(LocalMessage { bits })
}

/// Debiased per-element counts from the collected messages, plus the argmax.
pub fn local_aggregate<S: OutcomeSpace>(
    messages: &[LocalMessage],
    universe: &S,
    epsilon: f64,
    noise: Noise,
) -> Result<(HistogramEstimate<S::Elem>, S::Elem)> {
    let n_elems = unary_universe_size(universe)? as usize;
    for m in messages {
        if m.bits.len() != n_elems {
            return Err(Error::MessageLength { got: m.bits.len(), expected: n_elems });
        }
    }
    let q = match noise {
        Noise::Standard => local_flip_probability(epsilon),
        Noise::Disabled => 0.0,
    };
    let n_users = messages.len() as f64;
    let mut estimates = BTreeMap::new();
    let mut best: Option<(S::Elem, f64)> = None;
    for idx in 0..n_elems {
        let ones = messages.iter().filter(|m| m.bits[idx]).count() as f64;
        let debiased = (ones - n_users * q) / (1.0 - 2.0 * q);
        let elem = universe.elem_at(idx as u64).unwrap();
        if best.as_ref().map_or(true, |(_, b)| debiased > *b) {
            best = Some((elem.clone(), debiased));
        }
        estimates.insert(elem, debiased);
    }
    let argmax = best.expect("universe is nonempty").0;
    Ok((HistogramEstimate { estimates }, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use crate::randomness::{derive, label, tags, SeedRoot};
    use crate::sampling::UnitGrid;

    fn grid_votes(size: u32, votes: &[u32]) -> VoteSet<UnitGrid> {
        let space = UnitGrid::new(size - 1).unwrap();
        VoteSet::new(space, votes.iter().map(|v| space.point(*v)).collect()).unwrap()
    }

    #[test]
    fn group_privacy_cases() {
        let p = PrivacyParams::new(1.0, 0.0).unwrap();
        let g = group_privacy(&p, 1);
        assert_eq!((g.epsilon, g.delta), (1.0, 0.0));
        let g = group_privacy(&p, 5);
        assert_eq!((g.epsilon, g.delta), (5.0, 0.0));

        let p = PrivacyParams::new(0.1, 1e-6).unwrap();
        let g = group_privacy(&p, 10);
        assert!((g.epsilon - 1.0).abs() < 1e-12);
        let expected = 1e-6 * (1.0f64.exp() - 1.0) / (0.1f64.exp() - 1.0);
        assert!((g.delta - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn approx_select_empty_votes_falls_back() {
        let votes = grid_votes(4, &[]);
        let params = PrivacyParams::new(1.0, 1e-6).unwrap();
        let mut s = derive(&SeedRoot::from_u64(1), &label(&[(tags::SELECT, 0)]));
        let (chosen, tr) = approx_select(&votes, &params, &mut s, Noise::Standard).unwrap();
        assert_eq!(chosen.numer, 0);
        assert!(tr.fallback_used);
    }

    #[test]
    fn approx_select_rejects_zero_delta() {
        let votes = grid_votes(4, &[1]);
        let params = PrivacyParams { epsilon: 1.0, delta: 0.0 };
        let mut s = derive(&SeedRoot::from_u64(1), &label(&[(tags::SELECT, 0)]));
        assert!(matches!(
            approx_select(&votes, &params, &mut s, Noise::Standard),
            Err(Error::ZeroDelta)
        ));
    }

    #[test]
    fn approx_select_unanimous_votes() {
        let votes = grid_votes(4, &[2; 200]);
        let params = PrivacyParams::new(1.0, 1e-6).unwrap();
        let root = SeedRoot::from_u64(7);
        let hits = (0..1000)
            .filter(|i| {
                let mut s = derive(&root, &label(&[(tags::SELECT, *i)]));
                let (chosen, _) = approx_select(&votes, &params, &mut s, Noise::Standard).unwrap();
                chosen.numer == 2
            })
            .count();
        assert!(hits >= 990, "hits {hits}");
    }

    #[test]
    fn approx_select_margin_sweep_matches_laplace_oracle() {
        // Two candidates with a count gap g: the loser wins only if its noise
        // beats the leader's by more than g. Oracle: closed-form tail of the
        // difference of two Laplace(2/eps) draws.
        let eps = 1.0;
        let params = PrivacyParams::new(eps, 1e-6).unwrap();
        let root = SeedRoot::from_u64(8);
        let trials = 1000u64;
        for (sweep, gap) in [(0u64, 0u32), (1, 4), (2, 10), (3, 24)] {
            let mut votes = vec![0u32; 100];
            votes.extend(std::iter::repeat_n(1u32, 100 - gap as usize));
            let votes = grid_votes(4, &votes);
            let mut loser_wins = 0u64;
            for i in 0..trials {
                let mut s = derive(&root, &label(&[(tags::SELECT, sweep * trials + i)]));
                let (chosen, _) = approx_select(&votes, &params, &mut s, Noise::Standard).unwrap();
                if chosen.numer == 1 {
                    loser_wins += 1;
                }
            }
            let expected = oracles::laplace_diff_tail(2.0 / eps, gap as f64);
            let rate = loser_wins as f64 / trials as f64;
            let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
            assert!(
                (rate - expected).abs() <= 4.0 * sigma + 0.01,
                "gap {gap}: rate {rate} vs oracle {expected}"
            );
        }
    }

    #[test]
    fn pure_select_two_element_closed_form() {
        let votes = grid_votes(2, &[0, 0, 0, 0, 0]);
        let root = SeedRoot::from_u64(9);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|i| {
                let mut s = derive(&root, &label(&[(tags::SELECT, *i)]));
                pure_select(&votes, 1.0, &mut s, Noise::Standard).numer == 0
            })
            .count();
        let expected = (2.5f64).exp() / ((2.5f64).exp() + 1.0);
        let rate = hits as f64 / trials as f64;
        assert!((rate - expected).abs() < 0.005, "rate {rate} vs {expected}");
    }

    #[test]
    fn pure_select_uniform_on_equal_counts() {
        let votes = grid_votes(4, &[0, 1, 2, 3]);
        let law = exponential_mechanism_law(&votes, 1.0, true);
        for (_, p) in law {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_mechanism_exhaustive_dp_audit() {
        // Every neighboring vote-set pair over |U| = 4, n <= 4: the exact
        // output law moves by at most e^eps pointwise.
        let space = UnitGrid::new(3).unwrap();
        let eps = 1.0;
        let mut checked = 0;
        for n in 0..4usize {
            let mut assignments = vec![vec![]];
            for _ in 0..n {
                assignments = assignments
                    .into_iter()
                    .flat_map(|v: Vec<u32>| {
                        (0..4u32).map(move |x| {
                            let mut v = v.clone();
                            v.push(x);
                            v
                        })
                    })
                    .collect();
            }
            for base in assignments {
                for extra in 0..4u32 {
                    let mut bigger = base.clone();
                    bigger.push(extra);
                    let v1 = grid_votes(4, &base);
                    let v2 = grid_votes(4, &bigger);
                    let law1 = exponential_mechanism_law(&v1, eps, true);
                    let law2 = exponential_mechanism_law(&v2, eps, true);
                    for ((_, p1), (_, p2)) in law1.iter().zip(law2.iter()) {
                        assert!(p1 / p2 <= eps.exp() + 1e-12);
                        assert!(p2 / p1 <= eps.exp() + 1e-12);
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 300);
        let _ = space;
    }

    #[test]
    fn broken_exponent_fails_the_audit() {
        // Under add/remove alone the full-exponent variant still satisfies
        // e^eps (count scores are monotone); a replacement pair exposes it.
        let v1 = grid_votes(4, &[0, 0, 0, 0, 0]);
        let v2 = grid_votes(4, &[0, 0, 0, 0, 1]);
        let eps = 1.0;
        let law1 = exponential_mechanism_law(&v1, eps, false);
        let law2 = exponential_mechanism_law(&v2, eps, false);
        let max_ratio = law1
            .iter()
            .zip(law2.iter())
            .map(|((_, p1), (_, p2))| (p1 / p2).max(p2 / p1))
            .fold(0.0f64, f64::max);
        assert!(max_ratio > eps.exp() + 1e-12, "ratio {max_ratio}");

        // The correct eps/2 exponent keeps the same pair within e^eps.
        let law1 = exponential_mechanism_law(&v1, eps, true);
        let law2 = exponential_mechanism_law(&v2, eps, true);
        for ((_, p1), (_, p2)) in law1.iter().zip(law2.iter()) {
            assert!((p1 / p2).max(p2 / p1) <= eps.exp() + 1e-12);
        }
    }

    #[test]
    fn local_randomizer_exhaustive_message_audit() {
        // |U| = 3: enumerate all 8 messages and compare their probabilities
        // under two different items; every ratio is exactly <= e^eps.
        let eps = 2.0;
        let q: f64 = local_flip_probability(eps);
        let msg_prob = |item: usize, bits: &[bool; 3]| -> f64 {
            (0..3)
                .map(|i| {
                    let onehot = i == item;
                    if bits[i] != onehot {
                        q
                    } else {
                        1.0 - q
                    }
                })
                .product()
        };
        for a in 0..3 {
            for b in 0..3 {
                for pattern in 0..8u32 {
                    let bits = [pattern & 1 == 1, pattern & 2 == 2, pattern & 4 == 4];
                    let ratio = msg_prob(a, &bits) / msg_prob(b, &bits);
                    assert!(ratio <= eps.exp() * (1.0 + 1e-12), "ratio {ratio}");
                }
            }
        }
    }

    #[test]
    fn local_high_epsilon_single_user() {
        let space = UnitGrid::new(4).unwrap();
        let item = space.point(2);
        let eps = 8.0;
        let root = SeedRoot::from_u64(10);
        let trials = 1000;
        let mut sums = vec![0.0; 5];
        for i in 0..trials {
            let mut s = derive(&root, &label(&[(tags::LOCAL, i)]));
            let msg = local_randomize(&item, &space, eps, &mut s, Noise::Standard).unwrap();
            let (hist, _) =
                local_aggregate(&[msg], &space, eps, Noise::Standard).unwrap();
            for (k, sum) in sums.iter_mut().enumerate() {
                *sum += hist.get(&space.point(k as u32));
            }
        }
        for (k, sum) in sums.iter().enumerate() {
            let mean = sum / trials as f64;
            let expected = if k == 2 { 1.0 } else { 0.0 };
            assert!((mean - expected).abs() < 0.1, "element {k}: {mean}");
        }
    }

    #[test]
    fn local_debias_concentrates() {
        let space = UnitGrid::new(2).unwrap();
        let item = space.point(1);
        let eps = 1.0;
        let n = 10_000u64;
        let root = SeedRoot::from_u64(11);
        let messages: Vec<LocalMessage> = (0..n)
            .map(|i| {
                let mut s = derive(&root, &label(&[(tags::LOCAL, i)]));
                local_randomize(&item, &space, eps, &mut s, Noise::Standard).unwrap()
            })
            .collect();
        let (hist, argmax) = local_aggregate(&messages, &space, eps, Noise::Standard).unwrap();
        let frac = hist.get(&item) / n as f64;
        assert!((0.95..=1.05).contains(&frac), "frac {frac}");
        assert_eq!(argmax, item);
    }

    #[test]
    fn local_message_length_mismatch_errors() {
        let space = UnitGrid::new(2).unwrap();
        let bad = LocalMessage { bits: vec![true, false] };
        assert!(matches!(
            local_aggregate(&[bad], &space, 1.0, Noise::Standard),
            Err(Error::MessageLength { .. })
        ));
    }

    #[test]
    fn disabled_noise_degenerates_to_plurality() {
        let votes = grid_votes(4, &[1, 1, 2]);
        let params = PrivacyParams::new(1.0, 1e-6).unwrap();
        let mut s = derive(&SeedRoot::from_u64(12), &label(&[(tags::SELECT, 0)]));
        let (a, _) = approx_select(&votes, &params, &mut s, Noise::Disabled).unwrap();
        assert_eq!(a.numer, 1);
        let p = pure_select(&votes, 1.0, &mut s, Noise::Disabled);
        assert_eq!(p.numer, 1);
    }
}
