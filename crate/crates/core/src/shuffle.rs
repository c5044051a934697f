//! Shuffle-model protocols built on infinitely divisible negative-binomial
//! noise.
//!
//! For binary summation each user sends `x_i + Z_i` indistinguishable
//! messages with `Z_i ~ NB(r/n, p)`; because the sum of `n` such draws is
//! `NB(r, p)`, the analyzer's total is the true sum plus one central noise
//! draw, and the estimate never undershoots. Running the same protocol on
//! complemented bits gives the mirror-image underestimating variant.
//! Selection and histogram run one (under-estimating) summation per bucket.
//!
//! The simulated wire format is `(bucket_id: u32, payload = 1)`; the shuffler
//! is simulated by keeping only order-free message counts. Transcripts retain
//! pre-shuffle per-user counts for tests.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Gamma, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::randomness::{derive, label, tags, RandomStream, SeedRoot};
use crate::sampling::OutcomeSpace;
use crate::select::{HistogramEstimate, Noise, VoteSet};

/// Negative binomial parameters; the distribution has mean `p r / (1 - p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NBParams {
    pub r: f64,
    pub p: f64,
}

impl NBParams {
    pub fn new(r: f64, p: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidParam(format!("NB r must be positive, got {r}")));
        }
        if !(0.0 < p && p < 1.0) {
            return Err(Error::InvalidParam(format!("NB p must be in (0,1), got {p}")));
        }
        Ok(NBParams { r, p })
    }
}

/// A draw from NB(r, p) for real `r`, via the gamma-Poisson mixture:
/// `lambda ~ Gamma(shape r, scale p/(1-p))`, then `Poisson(lambda)`.
pub fn nb_sample(params: &NBParams, stream: &mut RandomStream) -> u64 {
    let scale = params.p / (1.0 - params.p);
    let gamma = Gamma::new(params.r, scale).expect("validated parameters");
    let lambda: f64 = gamma.sample(stream);
    if !(lambda > 0.0) {
        return 0;
    }
    let poisson = Poisson::new(lambda).expect("positive lambda");
    poisson.sample(stream) as u64
}

/// Caller-side knobs for the summation protocols.
#[derive(Clone, Copy, Debug)]
pub struct ShuffleOptions {
    /// Tail failure probability used in the noise size formula.
    pub beta: f64,
    /// Multiplier on the noise-size constant 1000. The default honors the
    /// paper-scale constant; desk-scale demos of selection need it well below
    /// 1 because the full-size noise dwarfs any desk-size vote margin.
    pub r_scale: f64,
    pub noise: Noise,
}

impl Default for ShuffleOptions {
    fn default() -> Self {
        ShuffleOptions { beta: 0.1, r_scale: 1.0, noise: Noise::Standard }
    }
}

/// The noise parameters used for one summation: `p = e^{-0.2 eps}` and
/// `r = ceil(1000 * r_scale * (1 + ln(1/(beta delta))))`.
pub fn summation_nb_params(epsilon: f64, delta: f64, opts: &ShuffleOptions) -> Result<NBParams> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParam(format!("epsilon must be in (0, 1], got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParam(format!("delta must be in (0, 1), got {delta}")));
    }
    if !(opts.beta > 0.0 && opts.beta < 1.0) {
        return Err(Error::InvalidParam(format!("beta must be in (0, 1), got {}", opts.beta)));
    }
    let r = (1000.0 * opts.r_scale * (1.0 + (1.0 / (opts.beta * delta)).ln())).ceil();
    NBParams::new(r, (-0.2 * epsilon).exp())
}

/// Order-free view of the messages, plus pre-shuffle counts for tests only.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ShuffleTranscript {
    pub message_count_per_bucket: BTreeMap<u32, u64>,
    pub user_message_counts: Vec<BTreeMap<u32, u64>>,
}

impl ShuffleTranscript {
    fn record(&mut self, user: usize, bucket: u32, count: u64) {
        if self.user_message_counts.len() <= user {
            self.user_message_counts.resize(user + 1, BTreeMap::new());
        }
        *self.user_message_counts[user].entry(bucket).or_insert(0) += count;
        *self.message_count_per_bucket.entry(bucket).or_insert(0) += count;
    }

    /// Materializes the message multiset (bucket ids; every payload is 1).
    pub fn to_messages(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for user in &self.user_message_counts {
            for (bucket, count) in user {
                out.extend(std::iter::repeat_n(*bucket, *count as usize));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }
}

/// What the analyzer computes from an arbitrary ordering of the messages.
/// Used by tests to confirm the output is shuffle-invariant.
pub fn analyze_messages(messages: &[u32]) -> BTreeMap<u32, u64> {
    let mut counts = BTreeMap::new();
    for bucket in messages {
        *counts.entry(*bucket).or_insert(0u64) += 1;
    }
    counts
}

fn sum_over_in_bucket(
    bits: &[bool],
    epsilon: f64,
    delta: f64,
    root: &SeedRoot,
    bucket: u32,
    opts: &ShuffleOptions,
    transcript: &mut ShuffleTranscript,
) -> Result<i64> {
    let params = summation_nb_params(epsilon, delta, opts)?;
    let per_user = NBParams::new(params.r / bits.len().max(1) as f64, params.p)?;
    let mut total: u64 = 0;
    for (i, x) in bits.iter().enumerate() {
        let z = match opts.noise {
            Noise::Standard => {
                let mut stream =
                    derive(root, &label(&[(tags::SHUFFLE, bucket as u64), (tags::USER, i as u64)]));
                nb_sample(&per_user, &mut stream)
            }
            Noise::Disabled => 0,
        };
        let sent = *x as u64 + z;
        transcript.record(i, bucket, sent);
        total += sent;
    }
    Ok(total as i64)
}

/// Overestimating binary summation: the estimate is always at least the true
/// sum, and exceeds it by more than the NB(r, p) beta-quantile with
/// probability at most beta.
pub fn shuffle_sum_over(
    bits: &[bool],
    epsilon: f64,
    delta: f64,
    root: &SeedRoot,
    opts: &ShuffleOptions,
) -> Result<(i64, ShuffleTranscript)> {
    let mut transcript = ShuffleTranscript::default();
    let est = sum_over_in_bucket(bits, epsilon, delta, root, 0, opts, &mut transcript)?;
    Ok((est, transcript))
}

/// Underestimating variant: runs the overestimator on complemented bits and
/// returns `n - estimate`. May go negative; callers clamp where their use
/// case demands it.
pub fn shuffle_sum_under(
    bits: &[bool],
    epsilon: f64,
    delta: f64,
    root: &SeedRoot,
    opts: &ShuffleOptions,
) -> Result<(i64, ShuffleTranscript)> {
    let complement: Vec<bool> = bits.iter().map(|b| !b).collect();
    let mut transcript = ShuffleTranscript::default();
    let est = sum_over_in_bucket(&complement, epsilon, delta, root, 0, opts, &mut transcript)?;
    Ok((bits.len() as i64 - est, transcript))
}

fn universe_indices<S: OutcomeSpace>(votes: &VoteSet<S>) -> Result<(u64, Vec<u64>)> {
    let universe = votes.universe();
    let size = match universe.cardinality() {
        Some(n) if n <= (1 << 20) => n,
        _ => {
            return Err(Error::InvalidParam(format!(
                "per-bucket shuffle protocols need |U| <= 2^20, got 2^{:.1}",
                universe.log2_cardinality()
            )))
        }
    };
    let indices = votes
        .votes()
        .iter()
        .map(|v| universe.index_of(v).expect("vote is a universe member"))
        .collect();
    Ok((size, indices))
}

/// Selection: one `(eps/2, delta/2)` under-estimating summation per bucket,
/// argmax of the estimates (lowest canonical index on ties).
pub fn shuffle_select<S: OutcomeSpace>(
    votes: &VoteSet<S>,
    epsilon: f64,
    delta: f64,
    root: &SeedRoot,
    opts: &ShuffleOptions,
) -> Result<(S::Elem, ShuffleTranscript)> {
    let (size, indices) = universe_indices(votes)?;
    let mut transcript = ShuffleTranscript::default();
    let mut best: Option<(u64, i64)> = None;
    for bucket in 0..size {
        let complement: Vec<bool> = indices.iter().map(|i| *i != bucket).collect();
        let over = sum_over_in_bucket(
            &complement,
            epsilon / 2.0,
            delta / 2.0,
            root,
            bucket as u32,
            opts,
            &mut transcript,
        )?;
        let estimate = votes.len() as i64 - over;
        if best.map_or(true, |(_, b)| estimate > b) {
            best = Some((bucket, estimate));
        }
    }
    let bucket = best.expect("nonempty universe").0;
    Ok((votes.universe().elem_at(bucket).unwrap(), transcript))
}

/// Histogram: per-bucket under-estimating summations at failure probability
/// `beta / n`, with negative estimates clamped to zero. Buckets with true
/// count zero report exactly zero.
pub fn shuffle_histogram<S: OutcomeSpace>(
    votes: &VoteSet<S>,
    epsilon: f64,
    delta: f64,
    root: &SeedRoot,
    opts: &ShuffleOptions,
) -> Result<(HistogramEstimate<S::Elem>, ShuffleTranscript)> {
    let (size, indices) = universe_indices(votes)?;
    let per_bucket_opts = ShuffleOptions {
        beta: opts.beta / votes.len().max(1) as f64,
        ..*opts
    };
    let mut transcript = ShuffleTranscript::default();
    let mut estimates = BTreeMap::new();
    for bucket in 0..size {
        let complement: Vec<bool> = indices.iter().map(|i| *i != bucket).collect();
        let over = sum_over_in_bucket(
            &complement,
            epsilon / 2.0,
            delta / 2.0,
            root,
            bucket as u32,
            &per_bucket_opts,
            &mut transcript,
        )?;
        let estimate = (votes.len() as i64 - over).max(0);
        estimates.insert(votes.universe().elem_at(bucket).unwrap(), estimate as f64);
    }
    Ok((HistogramEstimate { estimates }, transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use crate::randomness::{derive, label, tags, SeedRoot};
    use crate::sampling::UnitGrid;

    fn stream(seed: u64, idx: u64) -> RandomStream {
        derive(&SeedRoot::from_u64(seed), &label(&[(tags::GEN, idx)]))
    }

    #[test]
    fn nb_small_p_is_almost_surely_zero() {
        let params = NBParams::new(5.0, 1e-12).unwrap();
        let mut s = stream(1, 0);
        for _ in 0..1000 {
            assert_eq!(nb_sample(&params, &mut s), 0);
        }
    }

    #[test]
    fn nb_mean_matches() {
        let params = NBParams::new(5.0, 0.5).unwrap();
        let mut s = stream(2, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| nb_sample(&params, &mut s) as f64).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.15, "mean {mean}");
    }

    #[test]
    fn nb_additivity_of_shares() {
        // Sum of 10 draws of NB(0.5, 0.5) against NB(5, 0.5) moments.
        let share = NBParams::new(0.5, 0.5).unwrap();
        let mut s = stream(3, 0);
        let n = 100_000;
        let sums: Vec<f64> = (0..n)
            .map(|_| (0..10).map(|_| nb_sample(&share, &mut s) as f64).sum())
            .collect();
        let mean = sums.iter().sum::<f64>() / n as f64;
        let var = sums.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (m, v, mu4) = oracles::nb_moments(5.0, 0.5);
        let se_mean = (v / n as f64).sqrt();
        let se_var = ((mu4 - v * v) / n as f64).sqrt();
        assert!((mean - m).abs() <= 3.0 * se_mean, "mean {mean} vs {m}");
        assert!((var - v).abs() <= 3.0 * se_var, "var {var} vs {v}");
    }

    #[test]
    fn overestimation_holds_on_every_trial() {
        let opts = ShuffleOptions { r_scale: 0.001, ..Default::default() };
        let root = SeedRoot::from_u64(4);
        for trial in 0..200u64 {
            let bits: Vec<bool> = (0..50).map(|i| (i + trial) % 3 == 0).collect();
            let truth = bits.iter().filter(|b| **b).count() as i64;
            let trial_root = root.child(&label(&[(tags::TRIAL, trial)]));
            let (est, _) = shuffle_sum_over(&bits, 0.5, 1e-6, &trial_root, &opts).unwrap();
            assert!(est >= truth);
            let (est, _) = shuffle_sum_under(&bits, 0.5, 1e-6, &trial_root, &opts).unwrap();
            assert!(est <= truth);
        }
    }

    #[test]
    fn noise_free_hook_is_exact() {
        let bits = [true, false, true, true, false];
        let opts = ShuffleOptions { noise: Noise::Disabled, ..Default::default() };
        let root = SeedRoot::from_u64(5);
        let (est, _) = shuffle_sum_over(&bits, 1.0, 1e-6, &root, &opts).unwrap();
        assert_eq!(est, 3);
        let (est, _) = shuffle_sum_under(&bits, 1.0, 1e-6, &root, &opts).unwrap();
        assert_eq!(est, 3);
    }

    #[test]
    fn tail_matches_nb_quantile_oracle() {
        let opts = ShuffleOptions { r_scale: 0.002, ..Default::default() };
        let (eps, delta) = (1.0, 1e-4);
        let params = summation_nb_params(eps, delta, &opts).unwrap();
        let quantile = oracles::nb_quantile(params.r, params.p, opts.beta) as i64;
        let bits = vec![true; 20];
        let root = SeedRoot::from_u64(6);
        let trials = 2000u64;
        let exceed = (0..trials)
            .filter(|t| {
                let trial_root = root.child(&label(&[(tags::TRIAL, *t)]));
                let (est, _) = shuffle_sum_over(&bits, eps, delta, &trial_root, &opts).unwrap();
                est - 20 > quantile
            })
            .count();
        let rate = exceed as f64 / trials as f64;
        assert!(rate <= opts.beta + 0.03, "rate {rate}");
    }

    #[test]
    fn select_unanimous_and_singleton() {
        let space = UnitGrid::new(7).unwrap();
        // Desk-scale noise profile: the paper-scale constant would swamp any
        // margin a 200-user demo can produce.
        let opts = ShuffleOptions { r_scale: 0.0005, ..Default::default() };
        let root = SeedRoot::from_u64(7);
        let votes =
            VoteSet::new(space, std::iter::repeat_n(space.point(5), 200).collect()).unwrap();
        let hits = (0..200u64)
            .filter(|t| {
                let trial_root = root.child(&label(&[(tags::TRIAL, *t)]));
                let (chosen, _) =
                    shuffle_select(&votes, 1.0, 1e-6, &trial_root, &opts).unwrap();
                chosen.numer == 5
            })
            .count();
        assert!(hits >= 198, "hits {hits}");

        // A one-element universe always returns that element.
        let domain = crate::concepts::Domain::new(4).unwrap();
        let only = crate::concepts::Hypothesis::zeros(domain);
        let single = crate::sampling::HypothesisList::new(vec![only.clone()]).unwrap();
        let votes = VoteSet::new(single, vec![only.clone(); 3]).unwrap();
        let (chosen, _) = shuffle_select(&votes, 1.0, 1e-6, &root, &opts).unwrap();
        assert_eq!(chosen, only);
    }

    #[test]
    fn histogram_properties() {
        let space = UnitGrid::new(3).unwrap();
        let opts = ShuffleOptions { r_scale: 0.001, ..Default::default() };
        let root = SeedRoot::from_u64(8);
        let n = 40;
        let votes = VoteSet::new(space, vec![space.point(1); n]).unwrap();
        for t in 0..100u64 {
            let trial_root = root.child(&label(&[(tags::TRIAL, t)]));
            let (hist, _) = shuffle_histogram(&votes, 1.0, 1e-6, &trial_root, &opts).unwrap();
            // Empty buckets report exactly zero; occupied ones never overshoot.
            assert_eq!(hist.get(&space.point(0)), 0.0);
            assert_eq!(hist.get(&space.point(2)), 0.0);
            assert_eq!(hist.get(&space.point(3)), 0.0);
            let est = hist.get(&space.point(1));
            assert!(est <= n as f64);
            assert!(est >= 0.0);
        }
    }

    #[test]
    fn analyzer_is_shuffle_invariant() {
        let space = UnitGrid::new(5).unwrap();
        let opts = ShuffleOptions { r_scale: 0.001, ..Default::default() };
        let root = SeedRoot::from_u64(9);
        let votes = VoteSet::new(
            space,
            (0..30u32).map(|i| space.point(i % 6)).collect(),
        )
        .unwrap();
        let (_, transcript) = shuffle_select(&votes, 1.0, 1e-5, &root, &opts).unwrap();
        let mut messages = transcript.to_messages();
        let counts_before = analyze_messages(&messages);
        assert_eq!(counts_before, transcript.message_count_per_bucket);
        // An adversarial permutation of the multiset.
        messages.reverse();
        let mid = messages.len() / 2;
        messages.rotate_left(mid / 2);
        let counts_after = analyze_messages(&messages);
        assert_eq!(counts_before, counts_after);
    }

    #[test]
    fn privacy_smoke_test_message_count_ratios() {
        // Two users, inputs (0,1) vs (1,1): the total-count laws should be
        // close in likelihood ratio. With NB noise the pointwise ratio on
        // well-populated bins approaches 1/p = e^{0.2 eps} << e^eps.
        let eps = 1.0;
        let opts = ShuffleOptions { r_scale: 0.0002, beta: 0.1, noise: Noise::Standard };
        let params = summation_nb_params(eps, 1e-3, &opts).unwrap();
        let sims = 1_000_000;
        let mut s = stream(10, 0);
        let mut hist_a = BTreeMap::new();
        let mut hist_b = BTreeMap::new();
        for _ in 0..sims {
            let noise: u64 = (0..2)
                .map(|_| nb_sample(&NBParams::new(params.r / 2.0, params.p).unwrap(), &mut s))
                .sum();
            *hist_a.entry(1 + noise).or_insert(0u64) += 1;
        }
        for _ in 0..sims {
            let noise: u64 = (0..2)
                .map(|_| nb_sample(&NBParams::new(params.r / 2.0, params.p).unwrap(), &mut s))
                .sum();
            *hist_b.entry(2 + noise).or_insert(0u64) += 1;
        }
        let mut max_ratio = 0.0f64;
        for (k, ca) in &hist_a {
            if let Some(cb) = hist_b.get(k) {
                if *ca >= 1000 && *cb >= 1000 {
                    let ratio = (*ca as f64 / *cb as f64).max(*cb as f64 / *ca as f64);
                    max_ratio = max_ratio.max(ratio);
                }
            }
        }
        assert!(max_ratio > 0.0, "histograms never overlapped");
        assert!(max_ratio <= eps.exp() * 1.2, "max ratio {max_ratio}");
    }
}
