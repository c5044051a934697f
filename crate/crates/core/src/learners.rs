//! End-to-end user-level learners in the four privacy models.
//!
//! Every model follows one template: `n` users each run the shared
//! pseudo-stable learner on their own `m` samples with the common public
//! root, then a DP selection mechanism picks the plurality hypothesis. The
//! models differ only in the selection mechanism and the user-count formula:
//!
//! - central approximate: stability-based selection,
//!   `n = ceil(K ln(1/(delta beta)) / eps)` (never reads the class size);
//! - central pure: exponential mechanism over the publicly sampled class,
//!   `n = ceil(K (d + ln(1/beta)) / eps)`;
//! - local: unary randomized response, same numerator over `eps^2`;
//! - shuffle: per-bucket negative-binomial summation, approximate-DP count.

use std::borrow::Cow;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::concepts::{
    draw_samples, err_dist, ConceptClass, Domain, Hypothesis, LabeledSample,
    RealizableDistribution,
};
use crate::error::{Error, Result};
use crate::randomness::{derive, label, tags, RandomStream, SeedRoot};
use crate::select::{approx_select, local_aggregate, local_randomize, pure_select, Noise,
    PrivacyParams, VoteSet};
use crate::shuffle::{shuffle_select, ShuffleOptions};
use crate::stability::{rep_stable_learner, ConstantProfile, ProbabilisticRepresentation,
    PseudoStableLearner};

/// `n` users with `m` samples each, all drawn from one realizable source.
#[derive(Clone, Debug)]
pub struct UserDataset {
    pub users: Vec<Vec<LabeledSample>>,
    pub source: RealizableDistribution,
}

impl UserDataset {
    /// Draws `users x samples_per_user` fresh examples.
    pub fn simulate(
        source: &RealizableDistribution,
        users: usize,
        samples_per_user: usize,
        root: &SeedRoot,
    ) -> Self {
        let users = (0..users)
            .map(|i| {
                let mut stream =
                    derive(root, &label(&[(tags::USER, i as u64), (tags::DATA, 0)]));
                draw_samples(source, samples_per_user, &mut stream)
            })
            .collect();
        UserDataset { users, source: source.clone() }
    }

    pub fn to_json(&self) -> String {
        let users: Vec<Vec<(u32, u8)>> = self
            .users
            .iter()
            .map(|u| u.iter().map(|s| (s.x, s.y as u8)).collect())
            .collect();
        serde_json::to_string_pretty(&json!({
            "source": serde_json::from_str::<serde_json::Value>(&self.source.to_json()).unwrap(),
            "users": users,
        }))
        .expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let source = RealizableDistribution::from_json(&doc["source"].to_string())?;
        let users_doc = doc["users"]
            .as_array()
            .ok_or_else(|| Error::Parse("dataset needs a users array".into()))?;
        let mut users = Vec::with_capacity(users_doc.len());
        for u in users_doc {
            let samples = u
                .as_array()
                .ok_or_else(|| Error::Parse("each user must be an array of samples".into()))?
                .iter()
                .map(|s| {
                    let x = s[0].as_u64().ok_or_else(|| Error::Parse("bad x".into()))? as u32;
                    let y = s[1].as_u64().ok_or_else(|| Error::Parse("bad y".into()))?;
                    if x >= source.domain().size() || y > 1 {
                        return Err(Error::Parse(format!("sample ({x}, {y}) out of range")));
                    }
                    Ok(LabeledSample { x, y: y == 1 })
                })
                .collect::<Result<Vec<_>>>()?;
            users.push(samples);
        }
        Ok(UserDataset { users, source })
    }
}

/// Where per-user samples come from: fresh simulation draws, or a
/// pre-materialized dataset file.
pub enum DataSource<'a> {
    Simulated(&'a RealizableDistribution),
    Materialized(&'a UserDataset),
}

impl DataSource<'_> {
    pub fn source(&self) -> &RealizableDistribution {
        match self {
            DataSource::Simulated(d) => d,
            DataSource::Materialized(ds) => &ds.source,
        }
    }

    fn samples_for(&self, user: usize, m: usize, root: &SeedRoot) -> Result<Cow<'_, [LabeledSample]>> {
        match self {
            DataSource::Simulated(dist) => {
                let mut stream =
                    derive(root, &label(&[(tags::USER, user as u64), (tags::DATA, 0)]));
                Ok(Cow::Owned(draw_samples(dist, m, &mut stream)))
            }
            DataSource::Materialized(ds) => {
                let samples = ds.users.get(user).ok_or_else(|| {
                    Error::ConfigRejected(format!("dataset has no user {user}"))
                })?;
                if samples.len() < m {
                    return Err(Error::ConfigRejected(format!(
                        "user {user} holds {} samples, learner needs {m}",
                        samples.len()
                    )));
                }
                Ok(Cow::Borrowed(&samples[..m]))
            }
        }
    }
}

/// Which model produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerModel {
    CentralApprox,
    CentralPure,
    Local,
    Shuffle,
}

impl std::fmt::Display for LearnerModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LearnerModel::CentralApprox => "central-approx",
            LearnerModel::CentralPure => "central-pure",
            LearnerModel::Local => "local",
            LearnerModel::Shuffle => "shuffle",
        };
        f.write_str(s)
    }
}

/// Outcome of one end-to-end run.
#[derive(Clone, Debug)]
pub struct LearnerReport {
    pub output: Hypothesis,
    pub err: f64,
    pub per_user_votes: Vec<Hypothesis>,
    pub model: LearnerModel,
    /// Largest vote fraction; below 0.8 the stability premise looks shaky.
    pub vote_concentration: f64,
    pub low_concentration: bool,
    pub n_users: usize,
    pub params: serde_json::Value,
}

impl LearnerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&json!({
            "model": self.model,
            "output": self.output.to_hex(),
            "err": self.err,
            "vote_concentration": self.vote_concentration,
            "low_concentration": self.low_concentration,
            "n_users": self.n_users,
            "per_user_votes": self.per_user_votes.iter().map(|h| h.to_hex()).collect::<Vec<_>>(),
            "params": self.params,
        }))
        .expect("report serializes")
    }
}

/// Extra knobs shared by the end-to-end learners.
#[derive(Clone, Copy, Debug)]
pub struct LearnOptions {
    pub noise: Noise,
    /// Force a user count instead of the model formula (tests and the
    /// empty-dataset construction).
    pub users_override: Option<usize>,
    /// Forwarded to the shuffle summations.
    pub shuffle_r_scale: f64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions { noise: Noise::Standard, users_override: None, shuffle_r_scale: 1.0 }
    }
}

/// `n = ceil(K ln(1/(delta beta)) / eps)`; reads nothing about the class.
pub fn approx_user_count(k: f64, epsilon: f64, delta: f64, beta: f64) -> usize {
    (k * (1.0 / (delta * beta)).ln() / epsilon).ceil() as usize
}

/// `n = ceil(K (d + ln(1/beta)) / eps)`.
pub fn pure_user_count(k: f64, dimension: f64, beta: f64, epsilon: f64) -> usize {
    (k * (dimension + (1.0 / beta).ln()) / epsilon).ceil() as usize
}

/// `n = ceil(K (d + ln(1/beta)) / eps^2)`.
pub fn local_user_count(k: f64, dimension: f64, beta: f64, epsilon: f64) -> usize {
    (k * (dimension + (1.0 / beta).ln()) / (epsilon * epsilon)).ceil() as usize
}

fn collect_votes(
    learner: &PseudoStableLearner,
    data: &DataSource<'_>,
    n: usize,
    root: &SeedRoot,
) -> Result<Vec<Hypothesis>> {
    (0..n)
        .map(|i| {
            let samples = data.samples_for(i, learner.samples_required, root)?;
            learner.run(&samples, root)
        })
        .collect()
}

fn build_report(
    model: LearnerModel,
    output: Hypothesis,
    votes: Vec<Hypothesis>,
    source: &RealizableDistribution,
    params: serde_json::Value,
) -> LearnerReport {
    let n = votes.len();
    let mut max_count = 0usize;
    for v in &votes {
        let c = votes.iter().filter(|w| *w == v).count();
        max_count = max_count.max(c);
    }
    let concentration = if n == 0 { 0.0 } else { max_count as f64 / n as f64 };
    LearnerReport {
        err: err_dist(&output, source),
        output,
        per_user_votes: votes,
        model,
        vote_concentration: concentration,
        low_concentration: concentration < 0.8,
        n_users: n,
        params,
    }
}

/// `(eps, delta)`-DP learner in the central model: one vote per user, then
/// stability-based selection over the learner's hypothesis universe.
#[allow(clippy::too_many_arguments)]
pub fn learn_central_approx(
    learner: &PseudoStableLearner,
    data: &DataSource<'_>,
    epsilon: f64,
    delta: f64,
    beta: f64,
    root: &SeedRoot,
    k: f64,
    opts: &LearnOptions,
) -> Result<LearnerReport> {
    let n = opts.users_override.unwrap_or_else(|| approx_user_count(k, epsilon, delta, beta));
    let votes = collect_votes(learner, data, n, root)?;
    let universe = learner.universe_for(root);
    let vote_set = VoteSet::new(universe, votes.clone())?;
    let params = PrivacyParams::new(epsilon, delta)?;
    let mut stream = derive(root, &label(&[(tags::SELECT, 0)]));
    let (chosen, _) = approx_select(&vote_set, &params, &mut stream, opts.noise)?;
    Ok(build_report(
        LearnerModel::CentralApprox,
        chosen,
        votes,
        data.source(),
        json!({"epsilon": epsilon, "delta": delta, "beta": beta, "k": k, "n": n}),
    ))
}

/// Pure-DP learner in the central model over a probabilistic representation.
#[allow(clippy::too_many_arguments)]
pub fn learn_central_pure(
    rep: ProbabilisticRepresentation,
    profile: &ConstantProfile,
    data: &DataSource<'_>,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    root: &SeedRoot,
    k: f64,
    opts: &LearnOptions,
) -> Result<LearnerReport> {
    let dimension = rep.dimension;
    let learner = rep_stable_learner(rep, alpha, beta / 3.0, profile);
    let n = opts.users_override.unwrap_or_else(|| pure_user_count(k, dimension, beta, epsilon));
    let votes = collect_votes(&learner, data, n, root)?;
    let universe = learner.universe_for(root);
    let vote_set = VoteSet::new(universe, votes.clone())?;
    let mut stream = derive(root, &label(&[(tags::SELECT, 0)]));
    let chosen = pure_select(&vote_set, epsilon, &mut stream, opts.noise);
    Ok(build_report(
        LearnerModel::CentralPure,
        chosen,
        votes,
        data.source(),
        json!({"epsilon": epsilon, "alpha": alpha, "beta": beta, "k": k, "n": n,
               "dimension": dimension}),
    ))
}

/// Pure-DP learner in the local model: votes pass through unary randomized
/// response, so each user's transmitted message is `eps`-DP on its own.
#[allow(clippy::too_many_arguments)]
pub fn learn_local(
    rep: ProbabilisticRepresentation,
    profile: &ConstantProfile,
    data: &DataSource<'_>,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    root: &SeedRoot,
    k: f64,
    opts: &LearnOptions,
) -> Result<LearnerReport> {
    let dimension = rep.dimension;
    let learner = rep_stable_learner(rep, alpha, beta / 3.0, profile);
    let n = opts.users_override.unwrap_or_else(|| local_user_count(k, dimension, beta, epsilon));
    let votes = collect_votes(&learner, data, n, root)?;
    let universe = learner.universe_for(root);
    let messages = votes
        .iter()
        .enumerate()
        .map(|(i, vote)| {
            let mut stream = derive(root, &label(&[(tags::LOCAL, i as u64)]));
            local_randomize(vote, &universe, epsilon, &mut stream, opts.noise)
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, chosen) = local_aggregate(&messages, &universe, epsilon, opts.noise)?;
    Ok(build_report(
        LearnerModel::Local,
        chosen,
        votes,
        data.source(),
        json!({"epsilon": epsilon, "alpha": alpha, "beta": beta, "k": k, "n": n,
               "dimension": dimension}),
    ))
}

/// `(eps, delta)`-shuffle-DP learner: selection via per-bucket
/// negative-binomial summation.
#[allow(clippy::too_many_arguments)]
pub fn learn_shuffle(
    learner: &PseudoStableLearner,
    data: &DataSource<'_>,
    epsilon: f64,
    delta: f64,
    beta: f64,
    root: &SeedRoot,
    k: f64,
    opts: &LearnOptions,
) -> Result<LearnerReport> {
    let n = opts.users_override.unwrap_or_else(|| approx_user_count(k, epsilon, delta, beta));
    let votes = collect_votes(learner, data, n, root)?;
    let universe = learner.universe_for(root);
    let vote_set = VoteSet::new(universe, votes.clone())?;
    let shuffle_opts =
        ShuffleOptions { beta, r_scale: opts.shuffle_r_scale, noise: opts.noise };
    let (chosen, _) = shuffle_select(&vote_set, epsilon, delta, root, &shuffle_opts)?;
    Ok(build_report(
        LearnerModel::Shuffle,
        chosen,
        votes,
        data.source(),
        json!({"epsilon": epsilon, "delta": delta, "beta": beta, "k": k, "n": n,
               "r_scale": opts.shuffle_r_scale}),
    ))
}

/// Cap on empty-dataset runs in the representation construction.
pub const MAX_REP_RUNS: u64 = 10_000_000;

/// Builds a hypothesis class by running a learner `T = 100 ceil(exp(eps n))`
/// times on the empty dataset and collecting the distinct outputs. For a DP
/// learner this covers every fixed distribution with a good hypothesis with
/// high probability, by group privacy over its `n` users.
pub fn representation_from_learner(
    domain: Domain,
    run_on_empty: impl Fn(&SeedRoot) -> Result<Hypothesis>,
    epsilon: f64,
    n_users: usize,
    stream: &mut RandomStream,
) -> Result<ConceptClass> {
    let runs = 100u64.saturating_mul((epsilon * n_users as f64).exp().ceil() as u64);
    if runs > MAX_REP_RUNS {
        return Err(Error::Infeasible(format!(
            "representation construction needs {runs} runs (eps * n too large)"
        )));
    }
    let mut outputs = BTreeSet::new();
    for _ in 0..runs {
        let mut bytes = [0u8; 32];
        stream.fill_bytes(&mut bytes);
        let h = run_on_empty(&SeedRoot(bytes))?;
        if h.len() != domain.size() {
            return Err(Error::DomainMismatch("empty-run learner output".into()));
        }
        outputs.insert(h);
    }
    ConceptClass::new(domain, outputs.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{standard_class, StandardClass};
    use crate::sampling::HypothesisSpace;
    use crate::stability::{trivial_representation, DeclaredStability};

    fn constant_learner(domain: Domain, h: Hypothesis) -> PseudoStableLearner {
        PseudoStableLearner::new(
            move |_s: &[LabeledSample], _r: &SeedRoot| Ok(h.clone()),
            move |_| HypothesisSpace::full(domain),
            4,
            DeclaredStability { alpha: 0.1, beta: 0.1, eta: 1.0, nu: 1.0 },
        )
    }

    #[test]
    fn unanimous_votes_win_and_report_is_consistent() {
        let domain = Domain::new(8).unwrap();
        let target = Hypothesis::from_fn(domain, |x| x < 2);
        let dist = RealizableDistribution::uniform(domain, target.clone()).unwrap();
        let learner = constant_learner(domain, target.clone());
        let report = learn_central_approx(
            &learner,
            &DataSource::Simulated(&dist),
            1.0,
            1e-6,
            0.1,
            &SeedRoot::from_u64(1),
            20.0,
            &LearnOptions::default(),
        )
        .unwrap();
        assert_eq!(report.output, target);
        assert_eq!(report.err, 0.0);
        assert_eq!(report.vote_concentration, 1.0);
        assert!(!report.low_concentration);
        assert_eq!(report.n_users, approx_user_count(20.0, 1.0, 1e-6, 0.1));
        assert!(report.to_json().contains("central-approx"));
    }

    #[test]
    fn approx_user_count_ignores_class_size() {
        // The formula's only inputs are (K, eps, delta, beta).
        let n = approx_user_count(20.0, 1.0, 1e-6, 0.1);
        assert_eq!(n, (20.0f64 * (1e7f64).ln()).ceil() as usize);
        // Monotone: shrinking eps or delta never shrinks n.
        assert!(approx_user_count(20.0, 0.5, 1e-6, 0.1) >= n);
        assert!(approx_user_count(20.0, 1.0, 1e-8, 0.1) >= n);
    }

    #[test]
    fn materialized_dataset_round_trips_and_feeds_learners() {
        let class = standard_class(StandardClass::Points { points: 8 }).unwrap();
        let domain = class.domain();
        let target = class.members()[3].clone();
        let dist = RealizableDistribution::uniform(domain, target.clone()).unwrap();
        let ds = UserDataset::simulate(&dist, 60, 16, &SeedRoot::from_u64(2));
        let back = UserDataset::from_json(&ds.to_json()).unwrap();
        assert_eq!(back.users, ds.users);

        // 60 unanimous votes clear the release threshold (~27 at these params).
        let learner = constant_learner(domain, target.clone());
        let report = learn_central_approx(
            &learner,
            &DataSource::Materialized(&back),
            1.0,
            1e-6,
            0.1,
            &SeedRoot::from_u64(3),
            20.0,
            &LearnOptions { users_override: Some(60), ..Default::default() },
        )
        .unwrap();
        assert_eq!(report.output, target);

        // Too few users in the dataset is a config rejection.
        let err = learn_central_approx(
            &learner,
            &DataSource::Materialized(&back),
            1.0,
            1e-6,
            0.1,
            &SeedRoot::from_u64(3),
            20.0,
            &LearnOptions::default(),
        );
        assert!(matches!(err, Err(Error::ConfigRejected(_))));
    }

    #[test]
    fn pure_and_local_on_singleton_class() {
        let domain = Domain::new(8).unwrap();
        let target = Hypothesis::from_fn(domain, |x| x >= 6);
        let dist = RealizableDistribution::uniform(domain, target.clone()).unwrap();
        let single = ConceptClass::new(domain, vec![target.clone()]).unwrap();
        let profile = ConstantProfile::desk(1.0);
        for model in 0..2 {
            let rep = trivial_representation(&single);
            let report = if model == 0 {
                learn_central_pure(
                    rep,
                    &profile,
                    &DataSource::Simulated(&dist),
                    0.1,
                    0.1,
                    1.0,
                    &SeedRoot::from_u64(4),
                    20.0,
                    &LearnOptions::default(),
                )
                .unwrap()
            } else {
                learn_local(
                    rep,
                    &profile,
                    &DataSource::Simulated(&dist),
                    0.1,
                    0.1,
                    1.0,
                    &SeedRoot::from_u64(4),
                    20.0,
                    &LearnOptions::default(),
                )
                .unwrap()
            };
            assert_eq!(report.output, target);
        }
    }

    #[test]
    fn degenerate_stability_flags_low_concentration() {
        // A learner that answers with the user's own data pattern never
        // concentrates; the report must flag it.
        let domain = Domain::new(8).unwrap();
        let target = Hypothesis::zeros(domain);
        let dist = RealizableDistribution::uniform(domain, target).unwrap();
        let scatter = PseudoStableLearner::new(
            move |samples: &[LabeledSample], _r: &SeedRoot| {
                let acc = samples.iter().fold(7u64, |a, s| {
                    a.wrapping_mul(31).wrapping_add((s.x as u64) << 1 | s.y as u64)
                });
                Ok(Hypothesis::from_fn(domain, |x| (acc >> (x % 8)) & 1 == 1))
            },
            move |_| HypothesisSpace::full(domain),
            8,
            DeclaredStability { alpha: 0.5, beta: 0.5, eta: 0.0, nu: 0.0 },
        );
        let report = learn_central_approx(
            &scatter,
            &DataSource::Simulated(&dist),
            1.0,
            1e-6,
            0.1,
            &SeedRoot::from_u64(5),
            20.0,
            &LearnOptions::default(),
        )
        .unwrap();
        assert!(report.low_concentration);
        assert!(report.vote_concentration < 0.8);
    }

    #[test]
    fn representation_from_learner_edges() {
        let domain = Domain::new(8).unwrap();
        let fixed = Hypothesis::from_fn(domain, |x| x == 1);

        // Deterministic learner: one hypothesis.
        let mut stream =
            derive(&SeedRoot::from_u64(6), &label(&[(tags::GEN, 0)]));
        let class = representation_from_learner(
            domain,
            |_root| Ok(fixed.clone()),
            0.5,
            10,
            &mut stream,
        )
        .unwrap();
        assert_eq!(class.members(), &[fixed.clone()]);

        // eps = 0 means exactly 100 runs.
        let count = std::cell::Cell::new(0u32);
        let class = representation_from_learner(
            domain,
            |_root| {
                count.set(count.get() + 1);
                Ok(fixed.clone())
            },
            0.0,
            1_000_000,
            &mut stream,
        )
        .unwrap();
        assert_eq!(count.get(), 100);
        assert_eq!(class.len(), 1);

        // Infeasible eps * n errors out.
        let r = representation_from_learner(domain, |_r| Ok(fixed.clone()), 1.0, 50, &mut stream);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
