//! Statistical-query learning and its reduction to pseudo-global stability.
//!
//! A statistical query asks for `E[phi(x, y)]` within tolerance `tau`. The
//! reduction simulates the oracle so that two users sharing public randomness
//! almost always hand their learner identical answers: per query, the
//! empirical mean over a fresh chunk of samples is rescaled to `[0, 1]`,
//! spread over the two neighboring points of the grid `{0, 1/I, ..., 1}`
//! (mass proportional to the fractional position), and resolved by correlated
//! sampling with a per-query substream. Close means give close two-point
//! distributions, so the coupled answers rarely differ.
//!
//! `phi` ranges over `[-1, 1]` while the grid covers `[0, 1]`, so means map
//! through `v = (u + 1) / 2` and the resolution is `I = ceil(6 / tau)`,
//! keeping the rounding error after un-rescaling at most `tau / 3`.

use std::sync::Arc;

use crate::concepts::{
    point_bit, standard_class, Domain, Hypothesis, LabeledSample, RealizableDistribution,
    StandardClass,
};
use crate::error::{Error, Result};
use crate::randomness::{derive, label, tags, RandomStream, SeedRoot};
use crate::sampling::{cs_sample, CsOptions, FiniteDistribution, HypothesisSpace, UnitGrid};
use crate::stability::{ConstantProfile, DeclaredStability, PseudoStableLearner};

/// A bounded query function over labeled examples.
pub struct StatisticalQuery {
    phi: Box<dyn Fn(u32, bool) -> f64 + Send + Sync>,
    pub description: String,
}

impl StatisticalQuery {
    pub fn new(
        description: impl Into<String>,
        phi: impl Fn(u32, bool) -> f64 + Send + Sync + 'static,
    ) -> Self {
        StatisticalQuery { phi: Box::new(phi), description: description.into() }
    }

    pub fn eval(&self, x: u32, y: bool) -> f64 {
        let v = (self.phi)(x, y);
        debug_assert!((-1.0..=1.0).contains(&v), "phi out of range: {v}");
        v
    }
}

/// Answers statistical queries within the tolerance its clients declare.
pub trait SqOracle {
    fn answer(&mut self, query: &StatisticalQuery) -> Result<f64>;
}

/// An interactive learner issuing at most `query_budget` queries.
pub struct SqLearner {
    run: Box<dyn Fn(&mut dyn SqOracle, &mut RandomStream) -> Result<Hypothesis> + Send + Sync>,
    pub query_budget: usize,
    pub tolerance: f64,
    pub hypothesis_bits: usize,
    /// Error level the learner achieves given tolerance-respecting answers.
    pub target_error: f64,
    /// Space its outputs live in.
    pub universe: HypothesisSpace,
}

impl SqLearner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        run: impl Fn(&mut dyn SqOracle, &mut RandomStream) -> Result<Hypothesis>
            + Send
            + Sync
            + 'static,
        query_budget: usize,
        tolerance: f64,
        hypothesis_bits: usize,
        target_error: f64,
        universe: HypothesisSpace,
    ) -> Self {
        SqLearner {
            run: Box::new(run),
            query_budget,
            tolerance,
            hypothesis_bits,
            target_error,
            universe,
        }
    }

    pub fn run(&self, oracle: &mut dyn SqOracle, coins: &mut RandomStream) -> Result<Hypothesis> {
        (self.run)(oracle, coins)
    }
}

/// The answer grid for tolerance `tau`: `I = ceil(6 / tau)` points spacing
/// `1/I` over the rescaled range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnswerGrid {
    resolution: u32,
}

impl AnswerGrid {
    pub fn for_tolerance(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 2.0) {
            return Err(Error::InvalidParam(format!("tolerance must be in (0, 2], got {tau}")));
        }
        let resolution = (6.0 / tau).ceil() as u32;
        debug_assert!(resolution >= 3);
        Ok(AnswerGrid { resolution })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn space(&self) -> UnitGrid {
        UnitGrid::new(self.resolution).expect("positive resolution")
    }

    /// Two-point rounding distribution of a rescaled mean `v` in `[0, 1]`:
    /// mass `v*I - floor(v*I)` on the next grid point up, remainder on the
    /// one below. An on-grid `v` becomes a point mass.
    pub fn round_distribution(&self, v: f64) -> FiniteDistribution<UnitGrid> {
        let space = self.space();
        let scaled = (v.clamp(0.0, 1.0)) * self.resolution as f64;
        let lo = (scaled.floor() as u32).min(self.resolution);
        let frac = (scaled - lo as f64).clamp(0.0, 1.0);
        let mut pairs = vec![(space.point(lo), 1.0 - frac)];
        if lo < self.resolution {
            pairs.push((space.point(lo + 1), frac));
        }
        FiniteDistribution::new(space, pairs).expect("two-point mass is normalized")
    }
}

/// Where the per-query means come from: fresh sample chunks, or the exact
/// expectations (the reference run whose outputs define `h_r`).
enum MeanSource<'a> {
    Empirical(Vec<&'a [LabeledSample]>),
    Exact(&'a RealizableDistribution),
}

/// Oracle that answers by grid-rounding the mean through correlated sampling.
struct RoundingOracle<'a> {
    source: MeanSource<'a>,
    grid: AnswerGrid,
    root: SeedRoot,
    budget: usize,
    next_query: usize,
    cs_opts: CsOptions,
}

impl RoundingOracle<'_> {
    fn mean(&self, index: usize, query: &StatisticalQuery) -> f64 {
        match &self.source {
            MeanSource::Empirical(chunks) => {
                let chunk = chunks[index];
                if chunk.is_empty() {
                    return 0.0;
                }
                chunk.iter().map(|s| query.eval(s.x, s.y)).sum::<f64>() / chunk.len() as f64
            }
            MeanSource::Exact(dist) => exact_mean(dist, query),
        }
    }
}

impl SqOracle for RoundingOracle<'_> {
    fn answer(&mut self, query: &StatisticalQuery) -> Result<f64> {
        if self.next_query >= self.budget {
            return Err(Error::QueryBudgetExceeded { budget: self.budget });
        }
        let index = self.next_query;
        self.next_query += 1;
        let mean = self.mean(index, query);
        let rounded = self.grid.round_distribution((mean + 1.0) / 2.0);
        let mut stream = derive(&self.root, &label(&[(tags::SQ_QUERY, index as u64)]));
        let point = cs_sample(&rounded, &mut stream, &self.cs_opts)?;
        Ok(point.value() * 2.0 - 1.0)
    }
}

/// `E[phi]` under the distribution, by full enumeration.
pub fn exact_mean(dist: &RealizableDistribution, query: &StatisticalQuery) -> f64 {
    dist.domain()
        .points()
        .map(|x| dist.point_weights()[x as usize] * query.eval(x, dist.label(x)))
        .sum()
}

/// An oracle answering every query with its exact expectation (no rounding,
/// no budget). The reference tool in agreement tests.
pub struct ExactOracle<'a> {
    dist: &'a RealizableDistribution,
}

impl<'a> ExactOracle<'a> {
    pub fn new(dist: &'a RealizableDistribution) -> Self {
        ExactOracle { dist }
    }
}

impl SqOracle for ExactOracle<'_> {
    fn answer(&mut self, query: &StatisticalQuery) -> Result<f64> {
        Ok(exact_mean(self.dist, query))
    }
}

/// Turns an SQ learner into a pseudo-globally stable learner consuming
/// `query_budget * m'` samples per run. Public randomness carries one
/// correlated-sampling substream per query plus a coin stream for randomized
/// learners.
pub fn sq_to_pseudo_stable(
    learner: SqLearner,
    beta: f64,
    profile: &ConstantProfile,
) -> Result<PseudoStableLearner> {
    let per_query = profile.sq_sample_count(learner.query_budget, learner.tolerance, beta) as usize;
    let grid = AnswerGrid::for_tolerance(learner.tolerance)?;
    let total = learner.query_budget * per_query;
    let budget = learner.query_budget;
    let alpha = learner.target_error;
    let universe = learner.universe.clone();
    let learner = Arc::new(learner);
    Ok(PseudoStableLearner::new(
        move |samples, root| {
            assert_eq!(samples.len(), total, "reduction needs q * m' samples");
            let chunks: Vec<&[LabeledSample]> = if per_query == 0 {
                vec![&[]; budget]
            } else {
                samples.chunks(per_query).collect()
            };
            let mut oracle = RoundingOracle {
                source: MeanSource::Empirical(chunks),
                grid,
                root: *root,
                budget,
                next_query: 0,
                cs_opts: CsOptions::default(),
            };
            let mut coins = derive(root, &label(&[(tags::SQ_COINS, 0)]));
            learner.run(&mut oracle, &mut coins)
        },
        move |_| universe.clone(),
        total,
        DeclaredStability { alpha, beta, eta: 1.0 - beta, nu: 1.0 - beta },
    ))
}

/// The reference run: same rounding oracle, but fed exact expectations. Its
/// output is the canonical hypothesis `h_r` the empirical runs chase.
pub fn distributional_run(
    learner: &SqLearner,
    dist: &RealizableDistribution,
    root: &SeedRoot,
) -> Result<Hypothesis> {
    let grid = AnswerGrid::for_tolerance(learner.tolerance)?;
    let mut oracle = RoundingOracle {
        source: MeanSource::Exact(dist),
        grid,
        root: *root,
        budget: learner.query_budget,
        next_query: 0,
        cs_opts: CsOptions::default(),
    };
    let mut coins = derive(root, &label(&[(tags::SQ_COINS, 0)]));
    learner.run(&mut oracle, &mut coins)
}

/// The per-variable membership query of the monotone-conjunction learner:
/// `phi_j = 1 iff x_j = 0 and y = 1`, whose mean is structurally zero exactly
/// when variable `j` belongs to the target conjunction.
pub fn conjunction_query(var: u32) -> StatisticalQuery {
    StatisticalQuery::new(format!("var{var}-zero-and-positive"), move |x, y| {
        if !point_bit(x, var) && y {
            1.0
        } else {
            0.0
        }
    })
}

/// SQ learner for monotone conjunctions over `{0,1}^vars`: one query per
/// variable, include the variable iff the answer is at most `2 tau`. Learns
/// to error `O(vars * tau)` under any distribution.
pub fn conjunction_sq_learner(vars: u32, tau: f64) -> Result<SqLearner> {
    if vars == 0 || vars > 24 {
        return Err(Error::InvalidParam(format!("need 1..=24 variables, got {vars}")));
    }
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::InvalidParam(format!("need tolerance in (0, 0.5), got {tau}")));
    }
    let domain = Domain::new(1 << vars)?;
    let class = standard_class(StandardClass::Conjunctions { vars })?;
    Ok(SqLearner::new(
        move |oracle, _coins| {
            let mut included = Vec::new();
            for j in 0..vars {
                let answer = oracle.answer(&conjunction_query(j))?;
                if answer <= 2.0 * tau {
                    included.push(j);
                }
            }
            Ok(Hypothesis::from_fn(domain, |x| {
                included.iter().all(|j| point_bit(x, *j))
            }))
        },
        vars as usize,
        tau,
        vars as usize,
        3.0 * vars as f64 * tau,
        HypothesisSpace::list(&class),
    ))
}
