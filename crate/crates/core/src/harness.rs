//! Experiment orchestration: JSON configs, trial loops, CSV/JSON reports, and
//! the exact DP audit for enumerable mechanisms.
//!
//! Trials parallelize over a worker pool; every trial's randomness derives
//! from `(seed, trial index)`, so results are byte-identical regardless of
//! scheduling. CSV is the interchange format; summaries are recomputable from
//! the CSV rows (wall-clock statistics live only in the JSON summary).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::concepts::{standard_class, ConceptClass, Hypothesis, RealizableDistribution,
    StandardClass};
use crate::error::{Error, Result};
use crate::learners::{
    learn_central_approx, learn_central_pure, learn_local, learn_shuffle,
    representation_from_learner, DataSource, LearnOptions, LearnerModel, LearnerReport,
};
use crate::oracles;
use crate::randomness::{derive, label, tags, SeedRoot};
use crate::sampling::{cs_sample, tv_distance, CsOptions, UnitGrid};
use crate::select::{exponential_mechanism_law, local_flip_probability, Noise, VoteSet};
use crate::shuffle::{shuffle_sum_over, shuffle_sum_under, summation_nb_params, ShuffleOptions};
use crate::stability::{
    boost_to_pseudo_stable, consistent_list_learner, measure_stability, rep_stable_learner,
    trivial_representation, ConstantProfile, ProfileKind, PseudoStableLearner, StabilityReport,
};

fn default_k() -> f64 {
    20.0
}
fn default_c0() -> f64 {
    10.0
}
fn default_trials() -> usize {
    50
}
fn default_list_samples() -> usize {
    200
}
fn default_r_scale() -> f64 {
    1.0
}
fn default_roots() -> usize {
    50
}
fn default_redraws() -> usize {
    200
}
fn default_rep_users() -> usize {
    10
}
fn default_threads() -> usize {
    0
}

/// Point weights of the data distribution.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightSpec {
    #[default]
    Uniform,
    Explicit(Vec<f64>),
}

/// One JSON document drives every subcommand; unused fields are ignored by
/// the others.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub class: StandardClass,
    pub model: LearnerModel,
    /// Index of the target in the canonical class order; defaults to the
    /// middle member.
    #[serde(default)]
    pub target_index: Option<usize>,
    #[serde(default)]
    pub weights: WeightSpec,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default)]
    pub profile: Option<ProfileKind>,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Root seed in hex.
    pub seed: String,
    /// Inner list-learner samples per run (booster models).
    #[serde(default = "default_list_samples")]
    pub list_samples: usize,
    /// Empirical-error cutoff of the inner list learner; defaults to
    /// `0.75 * alpha`, which bakes the accuracy restriction into the runs.
    #[serde(default)]
    pub list_threshold: Option<f64>,
    #[serde(default)]
    pub list_cap: Option<usize>,
    #[serde(default = "default_r_scale")]
    pub shuffle_r_scale: f64,
    /// Stability measurement shape.
    #[serde(default = "default_roots")]
    pub roots: usize,
    #[serde(default = "default_redraws")]
    pub redraws: usize,
    /// Representation-construction user count.
    #[serde(default = "default_rep_users")]
    pub rep_users: usize,
    /// Worker threads (0 = library default).
    #[serde(default = "default_threads")]
    pub threads: usize,
}

/// Paper-profile runs refuse configurations whose per-run sample demands
/// exceed this.
pub const PAPER_FEASIBILITY_CAP: f64 = 1e9;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn seed_root(&self) -> Result<SeedRoot> {
        SeedRoot::from_hex(&self.seed)
    }

    pub fn profile(&self) -> ConstantProfile {
        match self.profile.unwrap_or(ProfileKind::Desk) {
            ProfileKind::Paper => ConstantProfile::paper(),
            ProfileKind::Desk => ConstantProfile::desk(self.c0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let reject = |msg: String| Err(Error::ConfigRejected(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return reject(format!("alpha must be in (0,1), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return reject(format!("beta must be in (0,1), got {}", self.beta));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 8.0) {
            return reject(format!("epsilon must be in (0,8], got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return reject(format!("delta must be in [0,1), got {}", self.delta));
        }
        if matches!(self.model, LearnerModel::CentralApprox | LearnerModel::Shuffle)
            && self.delta == 0.0
        {
            return reject("approximate-DP models need delta > 0".into());
        }
        if self.trials == 0 || self.roots == 0 || self.redraws == 0 {
            return reject("trials, roots, and redraws must be positive".into());
        }
        self.seed_root().map_err(|e| Error::ConfigRejected(e.to_string()))?;
        let class = self.build_class()?;

        // Infeasible paper-profile demands are rejected up front.
        let profile = self.profile();
        if profile.kind == ProfileKind::Paper {
            let d = class.log2_size();
            let m = profile.rep_sample_count(d, self.alpha, self.beta) as f64;
            let boost = profile.boost_params(class.len(), 1.0, self.beta / 3.0);
            let boost_total =
                (boost.k1 as f64 + boost.k2 as f64) * self.list_samples as f64;
            if m > PAPER_FEASIBILITY_CAP || boost_total > PAPER_FEASIBILITY_CAP {
                return reject(format!(
                    "paper profile demands {m:.2e} rep samples / {boost_total:.2e} booster \
                     samples per run; cap is {PAPER_FEASIBILITY_CAP:.0e}"
                ));
            }
        }
        Ok(())
    }

    pub fn build_class(&self) -> Result<ConceptClass> {
        standard_class(self.class)
    }

    pub fn build_distribution(&self) -> Result<RealizableDistribution> {
        let class = self.build_class()?;
        let target_index = self.target_index.unwrap_or(class.len() / 2);
        let target = class
            .members()
            .get(target_index)
            .ok_or_else(|| {
                Error::ConfigRejected(format!(
                    "target index {target_index} out of range for class of {}",
                    class.len()
                ))
            })?
            .clone();
        match &self.weights {
            WeightSpec::Uniform => RealizableDistribution::uniform(class.domain(), target),
            WeightSpec::Explicit(w) => {
                RealizableDistribution::new(class.domain(), w.clone(), target)
            }
        }
    }

    /// The pseudo-stable learner this config's model runs on each user.
    pub fn build_pseudo_stable(&self) -> Result<PseudoStableLearner> {
        let class = self.build_class()?;
        match self.model {
            LearnerModel::CentralApprox | LearnerModel::Shuffle => {
                let threshold = self.list_threshold.unwrap_or(0.75 * self.alpha);
                let cap = self.list_cap.unwrap_or(class.len());
                let list =
                    consistent_list_learner(&class, threshold, cap, self.list_samples);
                let params =
                    self.profile().boost_params(list.list_bound, list.stability, self.beta / 3.0);
                Ok(boost_to_pseudo_stable(
                    list,
                    self.alpha,
                    self.beta / 3.0,
                    params,
                    CsOptions::default(),
                ))
            }
            LearnerModel::CentralPure | LearnerModel::Local => Ok(rep_stable_learner(
                trivial_representation(&class),
                self.alpha,
                self.beta / 3.0,
                &self.profile(),
            )),
        }
    }

    fn run_trial(&self, trial: usize, dist: &RealizableDistribution,
        learner: Option<&PseudoStableLearner>) -> Result<LearnerReport> {
        let root = self.seed_root()?.child(&label(&[(tags::TRIAL, trial as u64)]));
        let opts = LearnOptions {
            noise: Noise::Standard,
            users_override: None,
            shuffle_r_scale: self.shuffle_r_scale,
        };
        let data = DataSource::Simulated(dist);
        match self.model {
            LearnerModel::CentralApprox => learn_central_approx(
                learner.expect("booster built"),
                &data,
                self.epsilon,
                self.delta,
                self.beta,
                &root,
                self.k,
                &opts,
            ),
            LearnerModel::Shuffle => learn_shuffle(
                learner.expect("booster built"),
                &data,
                self.epsilon,
                self.delta,
                self.beta,
                &root,
                self.k,
                &opts,
            ),
            LearnerModel::CentralPure => learn_central_pure(
                trivial_representation(&self.build_class()?),
                &self.profile(),
                &data,
                self.alpha,
                self.beta,
                self.epsilon,
                &root,
                self.k,
                &opts,
            ),
            LearnerModel::Local => learn_local(
                trivial_representation(&self.build_class()?),
                &self.profile(),
                &data,
                self.alpha,
                self.beta,
                self.epsilon,
                &root,
                self.k,
                &opts,
            ),
        }
    }
}

/// One row of the learn CSV.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub root: String,
    pub n_users: usize,
    pub err: f64,
    pub success: bool,
    pub vote_concentration: f64,
}

/// Aggregates recomputable from the CSV rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub success_rate: f64,
    /// min / median / max.
    pub err_quantiles: [f64; 3],
    pub concentration_quantiles: [f64; 3],
}

/// Everything a learn run produces. Wall-clock stats are reported separately
/// so the CSV and the summary stay reproducible byte for byte.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: TrialSummary,
    pub csv: String,
    pub summary_json: String,
    pub wall_ms: u128,
}

pub const LEARN_CSV_HEADER: &str = "trial,root,n_users,err,success,vote_concentration";

fn three_point(mut values: Vec<f64>) -> [f64; 3] {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    [values[0], values[values.len() / 2], values[values.len() - 1]]
}

/// Recomputes the summary from rows alone; the emitted JSON must match this.
pub fn summarize_records(records: &[TrialRecord]) -> TrialSummary {
    assert!(!records.is_empty());
    TrialSummary {
        trials: records.len(),
        success_rate: records.iter().filter(|r| r.success).count() as f64 / records.len() as f64,
        err_quantiles: three_point(records.iter().map(|r| r.err).collect()),
        concentration_quantiles: three_point(
            records.iter().map(|r| r.vote_concentration).collect(),
        ),
    }
}

pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut csv = String::from(LEARN_CSV_HEADER);
    csv.push('\n');
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.trial, r.root, r.n_users, r.err, r.success, r.vote_concentration
        ));
    }
    csv
}

pub fn records_from_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(LEARN_CSV_HEADER) {
        return Err(Error::Parse("unexpected learn CSV header".into()));
    }
    lines
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(Error::Parse(format!("bad CSV row {line:?}")));
            }
            let fail = |field: &str| Error::Parse(format!("bad {field} in {line:?}"));
            Ok(TrialRecord {
                trial: parts[0].parse().map_err(|_| fail("trial"))?,
                root: parts[1].to_string(),
                n_users: parts[2].parse().map_err(|_| fail("n_users"))?,
                err: parts[3].parse().map_err(|_| fail("err"))?,
                success: parts[4].parse().map_err(|_| fail("success"))?,
                vote_concentration: parts[5].parse().map_err(|_| fail("concentration"))?,
            })
        })
        .collect()
}

/// Runs `config.trials` independent learner executions in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let start = std::time::Instant::now();
    let dist = config.build_distribution()?;
    // Booster models share one learner object; representation models rebuild
    // per trial (construction is cheap and keeps the closure simple).
    let shared_learner = match config.model {
        LearnerModel::CentralApprox | LearnerModel::Shuffle => {
            Some(config.build_pseudo_stable()?)
        }
        _ => None,
    };
    let records: Vec<TrialRecord> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let report = config.run_trial(trial, &dist, shared_learner.as_ref())?;
            Ok(TrialRecord {
                trial,
                root: config
                    .seed_root()?
                    .child(&label(&[(tags::TRIAL, trial as u64)]))
                    .to_hex(),
                n_users: report.n_users,
                err: report.err,
                success: report.err <= config.alpha,
                vote_concentration: report.vote_concentration,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_records(&records);
    let wall_ms = start.elapsed().as_millis();
    let summary_json = serde_json::to_string_pretty(&json!({
        "summary": summary,
        "wall_ms": wall_ms,
        "config": config,
    }))
    .expect("summary serializes");
    Ok(ExperimentOutput { csv: records_to_csv(&records), records, summary, summary_json, wall_ms })
}

/// Stability measurement for the configured model.
pub fn run_stability(config: &ExperimentConfig) -> Result<(StabilityReport, String)> {
    config.validate()?;
    let dist = config.build_distribution()?;
    let learner = config.build_pseudo_stable()?;
    let report =
        measure_stability(&learner, &dist, config.roots, config.redraws, &config.seed_root()?)?;
    let mut csv = String::from("root,eta_hat,modal,modal_err\n");
    for r in &report.per_root {
        csv.push_str(&format!("{},{},{},{}\n", r.root, r.eta_hat, r.modal, r.modal_err));
    }
    Ok((report, csv))
}

pub const CS_TEST_CSV_HEADER: &str = "kind,index,d_tv,statistic,bound,pass";

/// Marginal correctness of the correlated sampler over an 8-point space:
/// independent-stream draws must land within total variation 0.02 of each
/// random target distribution. Returns (csv rows, all_pass).
pub fn run_cs_marginal(seed: &SeedRoot, dists: usize, draws: u64) -> Result<(String, bool)> {
    let space = UnitGrid::new(7).unwrap();
    let opts = CsOptions::default();
    let mut csv = format!("{CS_TEST_CSV_HEADER}\n");
    let mut all_pass = true;
    let mut gen = derive(seed, &label(&[(tags::GEN, 0)]));
    for index in 0..dists {
        let p = oracles::random_distribution(space, &mut gen, 2);
        let mut counts = vec![0u64; 8];
        for i in 0..draws {
            let mut s = derive(seed, &label(&[(tags::CS, (index as u64) << 32 | i)]));
            counts[cs_sample(&p, &mut s, &opts).unwrap().numer as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .enumerate()
            .map(|(i, c)| (*c as f64 / draws as f64 - p.mass(&space.point(i as u32))).abs())
            .sum::<f64>()
            / 2.0;
        let pass = tv <= 0.02;
        all_pass &= pass;
        csv.push_str(&format!("marginal,{index},0,{tv},0.02,{pass}\n"));
    }
    Ok((csv, all_pass))
}

/// Coupling bound: for random pairs with TV distance in [0.05, 0.9], two
/// callers sharing a stream disagree at most `2 d_TV + 0.03` of the time.
pub fn run_cs_coupling(seed: &SeedRoot, pairs: usize, draws: u64) -> Result<(String, bool)> {
    let space = UnitGrid::new(7).unwrap();
    let opts = CsOptions::default();
    let mut csv = format!("{CS_TEST_CSV_HEADER}\n");
    let mut all_pass = true;
    let mut gen = derive(seed, &label(&[(tags::GEN, 1)]));
    let mut accepted = 0usize;
    let mut attempt = 0u64;
    while accepted < pairs {
        attempt += 1;
        if attempt > 10_000 {
            return Err(Error::Infeasible("could not find enough coupling pairs".into()));
        }
        let p = oracles::random_distribution(space, &mut gen, 3);
        let q = oracles::random_distribution(space, &mut gen, 3);
        let dtv = tv_distance(&p, &q)?;
        if !(0.05..=0.9).contains(&dtv) {
            continue;
        }
        let mut disagree = 0u64;
        for i in 0..draws {
            let shared = label(&[(tags::CS, (accepted as u64 + 100) << 32 | i)]);
            let mut s1 = derive(seed, &shared);
            let mut s2 = derive(seed, &shared);
            let a = cs_sample(&p, &mut s1, &opts).unwrap();
            let b = cs_sample(&q, &mut s2, &opts).unwrap();
            disagree += (a != b) as u64;
        }
        let rate = disagree as f64 / draws as f64;
        let bound = 2.0 * dtv + 0.03;
        let pass = rate <= bound;
        all_pass &= pass;
        csv.push_str(&format!("coupling,{accepted},{dtv},{rate},{bound},{pass}\n"));
        accepted += 1;
    }
    Ok((csv, all_pass))
}

/// Combined diagnostics for the CLI `cs-test` subcommand.
pub fn run_cs_test(
    seed: &SeedRoot,
    cases: usize,
    marginal_draws: u64,
    coupling_draws: u64,
) -> Result<(String, bool)> {
    let (marginal_csv, marginal_pass) = run_cs_marginal(seed, cases, marginal_draws)?;
    let (coupling_csv, coupling_pass) = run_cs_coupling(seed, cases, coupling_draws)?;
    let mut csv = marginal_csv;
    csv.push_str(coupling_csv.strip_prefix(&format!("{CS_TEST_CSV_HEADER}\n")).unwrap());
    Ok((csv, marginal_pass && coupling_pass))
}

/// Over/under summation sweep against the NB quantile oracle.
/// Returns (csv, zero_violations, exceed_rate).
#[allow(clippy::too_many_arguments)]
pub fn run_shuffle_sum(
    seed: &SeedRoot,
    epsilon: f64,
    delta: f64,
    beta: f64,
    users: usize,
    true_ones: usize,
    trials: usize,
    r_scale: f64,
) -> Result<(String, bool, f64)> {
    let opts = ShuffleOptions { beta, r_scale, noise: Noise::Standard };
    let params = summation_nb_params(epsilon, delta, &opts)?;
    let quantile = oracles::nb_quantile(params.r, params.p, beta) as i64;
    let bits: Vec<bool> = (0..users).map(|i| i < true_ones).collect();
    let truth = true_ones as i64;
    let mut csv = String::from("trial,estimate_over,estimate_under,true_sum,quantile\n");
    let mut violations = 0usize;
    let mut exceed = 0usize;
    for t in 0..trials {
        let root = seed.child(&label(&[(tags::TRIAL, t as u64)]));
        let (over, _) = shuffle_sum_over(&bits, epsilon, delta, &root, &opts)?;
        let under_root = seed.child(&label(&[(tags::TRIAL, (t + trials) as u64)]));
        let (under, _) = shuffle_sum_under(&bits, epsilon, delta, &under_root, &opts)?;
        violations += (over < truth || under > truth) as usize;
        exceed += (over - truth > quantile) as usize + (truth - under > quantile) as usize;
        csv.push_str(&format!("{t},{over},{under},{truth},{quantile}\n"));
    }
    Ok((csv, violations == 0, exceed as f64 / (2 * trials) as f64))
}

/// Builds a hypothesis class out of the configured pure-DP learner run on the
/// empty dataset.
pub fn run_build_rep(config: &ExperimentConfig) -> Result<ConceptClass> {
    config.validate()?;
    let class = config.build_class()?;
    let profile = config.profile();
    let (alpha, beta, epsilon, k) = (config.alpha, config.beta, config.epsilon, config.k);
    let run_on_empty = |root: &SeedRoot| -> Result<Hypothesis> {
        let placeholder_target = class.members()[0].clone();
        let dist = RealizableDistribution::uniform(class.domain(), placeholder_target)?;
        let report = learn_central_pure(
            trivial_representation(&class),
            &profile,
            &DataSource::Simulated(&dist),
            alpha,
            beta,
            epsilon,
            root,
            k,
            &LearnOptions { users_override: Some(0), ..Default::default() },
        )?;
        Ok(report.output)
    };
    let mut stream = derive(&config.seed_root()?, &label(&[(tags::EMPTY_RUN, 0)]));
    representation_from_learner(
        class.domain(),
        run_on_empty,
        config.epsilon,
        config.rep_users,
        &mut stream,
    )
}

/// Mechanisms the exact audit can enumerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMechanism {
    /// Exponential mechanism with the correct `eps c / 2` exponent.
    PureSelect,
    /// Deliberately wrong `eps c` exponent; must fail the audit.
    PureSelectBrokenExponent,
    /// Ignores the votes entirely (an `eps = 0` mechanism): max ratio 1.
    UniformBaseline,
    /// Per-message unary randomized response.
    LocalRandomizer,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub mechanism: AuditMechanism,
    pub epsilon: f64,
    pub pairs_checked: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit serializes")
    }
}

fn count_vectors(universe: usize, total: usize) -> Vec<Vec<u32>> {
    if universe == 1 {
        return vec![vec![total as u32]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in count_vectors(universe - 1, total - first) {
            let mut v = vec![first as u32];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

fn votes_from_counts(space: UnitGrid, counts: &[u32]) -> VoteSet<UnitGrid> {
    let votes = counts
        .iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(space.point(i as u32), *c as usize))
        .collect();
    VoteSet::new(space, votes).expect("counts index the universe")
}

/// Exhaustively verifies the pointwise `e^eps` bound over every neighboring
/// pair of vote sets with at most `max_users` users over a `universe`-element
/// set. Neighbors cover add/remove and one-vote replacement (replacement is
/// remove-plus-add; the half exponent keeps even that within `e^eps`, and it
/// is what exposes a broken full-exponent variant).
pub fn audit_mechanism(
    mechanism: AuditMechanism,
    universe: u32,
    max_users: u32,
    epsilon: f64,
) -> Result<AuditReport> {
    if !(1..=6).contains(&universe) || max_users > 6 {
        return Err(Error::InvalidParam(
            "exact audit supports universes and user counts up to 6".into(),
        ));
    }
    if mechanism == AuditMechanism::LocalRandomizer {
        return audit_local(universe, epsilon);
    }
    let space = UnitGrid::new(universe - 1).unwrap();
    let law = |counts: &[u32]| -> Vec<f64> {
        match mechanism {
            AuditMechanism::PureSelect => {
                exponential_mechanism_law(&votes_from_counts(space, counts), epsilon, true)
                    .into_iter()
                    .map(|(_, p)| p)
                    .collect()
            }
            AuditMechanism::PureSelectBrokenExponent => {
                exponential_mechanism_law(&votes_from_counts(space, counts), epsilon, false)
                    .into_iter()
                    .map(|(_, p)| p)
                    .collect()
            }
            AuditMechanism::UniformBaseline => {
                vec![1.0 / universe as f64; universe as usize]
            }
            AuditMechanism::LocalRandomizer => unreachable!(),
        }
    };

    let mut max_ratio = 0.0f64;
    let mut pairs_checked = 0usize;
    let mut check = |a: &[u32], b: &[u32]| {
        let pa = law(a);
        let pb = law(b);
        for (x, y) in pa.iter().zip(pb.iter()) {
            max_ratio = max_ratio.max(x / y).max(y / x);
        }
        pairs_checked += 1;
    };

    for n in 0..=max_users as usize {
        for counts in count_vectors(universe as usize, n) {
            for i in 0..universe as usize {
                // Add one vote on element i.
                if n < max_users as usize {
                    let mut bigger = counts.clone();
                    bigger[i] += 1;
                    check(&counts, &bigger);
                }
                // Replace one vote on i by one on j.
                if counts[i] > 0 {
                    for j in 0..universe as usize {
                        if i != j {
                            let mut replaced = counts.clone();
                            replaced[i] -= 1;
                            replaced[j] += 1;
                            check(&counts, &replaced);
                        }
                    }
                }
            }
        }
    }
    let bound = epsilon.exp();
    Ok(AuditReport {
        mechanism,
        epsilon,
        pairs_checked,
        max_ratio,
        bound,
        pass: max_ratio <= bound + 1e-12,
    })
}

fn audit_local(universe: u32, epsilon: f64) -> Result<AuditReport> {
    let q = local_flip_probability(epsilon);
    let n = universe as usize;
    let msg_prob = |item: usize, pattern: u32| -> f64 {
        (0..n)
            .map(|bit| {
                let onehot = bit == item;
                let sent = (pattern >> bit) & 1 == 1;
                if sent != onehot {
                    q
                } else {
                    1.0 - q
                }
            })
            .product()
    };
    let mut max_ratio = 0.0f64;
    let mut pairs_checked = 0usize;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            for pattern in 0..(1u32 << n) {
                let ratio = msg_prob(a, pattern) / msg_prob(b, pattern);
                max_ratio = max_ratio.max(ratio);
            }
            pairs_checked += 1;
        }
    }
    let bound = epsilon.exp();
    Ok(AuditReport {
        mechanism: AuditMechanism::LocalRandomizer,
        epsilon,
        pairs_checked,
        max_ratio,
        bound,
        pass: max_ratio <= bound * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            class: StandardClass::Thresholds { points: 16 },
            model: LearnerModel::CentralApprox,
            target_index: None,
            weights: WeightSpec::Uniform,
            alpha: 0.15,
            beta: 0.1,
            epsilon: 1.0,
            delta: 1e-6,
            k: 20.0,
            profile: Some(ProfileKind::Desk),
            c0: 0.5,
            trials: 3,
            seed: "ab".into(),
            list_samples: 60,
            list_threshold: None,
            list_cap: None,
            shuffle_r_scale: 1.0,
            roots: 3,
            redraws: 5,
            rep_users: 5,
            threads: 0,
        }
    }

    #[test]
    fn experiment_is_deterministic_and_summary_matches_csv() {
        let config = small_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.summary, b.summary);

        let records = records_from_csv(&a.csv).unwrap();
        assert_eq!(summarize_records(&records), a.summary);

        // One trial: the summary equals the single record.
        let mut single = config;
        single.trials = 1;
        let out = run_experiment(&single).unwrap();
        assert_eq!(out.summary.trials, 1);
        assert_eq!(out.summary.err_quantiles[0], out.records[0].err);
        assert_eq!(out.summary.err_quantiles[2], out.records[0].err);
    }

    #[test]
    fn config_validation_rejections() {
        let mut config = small_config();
        config.alpha = 0.0;
        assert!(matches!(config.validate(), Err(Error::ConfigRejected(_))));

        let mut config = small_config();
        config.delta = 0.0;
        assert!(matches!(config.validate(), Err(Error::ConfigRejected(_))));

        let mut config = small_config();
        config.seed = "not-hex".into();
        assert!(matches!(config.validate(), Err(Error::ConfigRejected(_))));

        // Paper profile at this scale demands astronomically many samples.
        let mut config = small_config();
        config.profile = Some(ProfileKind::Paper);
        assert!(matches!(config.validate(), Err(Error::ConfigRejected(_))));
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let text = r#"{
            "class": {"kind": "points", "points": 8},
            "model": "central-pure",
            "alpha": 0.1, "beta": 0.1, "epsilon": 1.0,
            "seed": "0f"
        }"#;
        let config = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(config.k, 20.0);
        assert_eq!(config.trials, 50);
        assert_eq!(config.c0, 10.0);
        assert!(matches!(config.weights, WeightSpec::Uniform));
    }

    #[test]
    fn audit_pure_select_passes_and_broken_fails() {
        for eps in [0.5, 1.0, 2.0] {
            let report = audit_mechanism(AuditMechanism::PureSelect, 4, 4, eps).unwrap();
            assert!(report.pass, "eps {eps}: ratio {}", report.max_ratio);
            assert!(report.max_ratio <= report.bound + 1e-12);
        }
        let report =
            audit_mechanism(AuditMechanism::PureSelectBrokenExponent, 4, 4, 1.0).unwrap();
        assert!(!report.pass, "broken mechanism must fail, got {}", report.max_ratio);

        let report = audit_mechanism(AuditMechanism::UniformBaseline, 4, 4, 1.0).unwrap();
        assert!(report.pass);
        assert!((report.max_ratio - 1.0).abs() < 1e-15);

        let report = audit_mechanism(AuditMechanism::LocalRandomizer, 4, 4, 2.0).unwrap();
        assert!(report.pass);
        // The two flipped-bit ratio achieves the bound exactly.
        assert!((report.max_ratio - 2.0f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn cs_test_and_shuffle_sum_smoke() {
        let seed = SeedRoot::from_u64(1);
        let (csv, pass) = run_cs_test(&seed, 3, 20_000, 2_000).unwrap();
        assert!(pass, "{csv}");
        assert!(csv.lines().count() > 6);

        let (csv, no_violations, exceed) =
            run_shuffle_sum(&seed, 1.0, 1e-4, 0.1, 20, 7, 200, 0.002).unwrap();
        assert!(no_violations);
        assert!(exceed <= 0.13, "exceed {exceed}");
        assert!(csv.lines().count() == 201);
    }

    #[test]
    fn build_rep_covers_the_class() {
        let mut config = small_config();
        config.class = StandardClass::Points { points: 4 };
        config.model = LearnerModel::CentralPure;
        config.epsilon = 0.5;
        config.rep_users = 10;
        let class = run_build_rep(&config).unwrap();
        // The empty-vote exponential mechanism is uniform over the class, and
        // T = 100 * ceil(e^5) runs at |C| = 5 hit everything.
        assert_eq!(class.len(), 5);
    }
}
