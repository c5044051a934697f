//! Correlated sampling over enumerable finite outcome spaces.
//!
//! The strategy is the uniform-proposal rejection coupling: from the shared
//! stream draw pairs `(w_t, u_t)` with `w_t` uniform on the space and `u_t`
//! uniform on `[0, 1)`, and return the first `w_t` with `u_t < P(w_t)`. Each
//! iteration accepts with probability `1/|Omega|`, so the output marginal is
//! exactly `P`, and two callers sharing a stream disagree with probability at
//! most `2 * d_TV(P, Q)` (the realized rate is the sharper
//! `2 d_TV / (1 + d_TV)`; only the factor-2 bound is promised).
//!
//! Expected iteration count is `|Omega|`, which is why the full hypothesis
//! space is gated behind [`CsOptions::max_log2_cardinality`].

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hash;
use std::sync::Arc;

use crate::concepts::{ConceptClass, Domain, Hypothesis};
use crate::error::{Error, Result};
use crate::randomness::RandomStream;

/// A finite set with a bijection to `0..cardinality` and cheap uniform
/// sampling.
pub trait OutcomeSpace: Clone + PartialEq + fmt::Debug {
    type Elem: Clone + Eq + Ord + Hash + fmt::Debug + fmt::Display;

    fn log2_cardinality(&self) -> f64;
    /// Exact cardinality when it fits in a `u64`.
    fn cardinality(&self) -> Option<u64>;
    fn cardinality_f64(&self) -> f64;
    fn sample_uniform(&self, stream: &mut RandomStream) -> Self::Elem;
    /// The element of canonical index 0 (the designated fallback element).
    fn first(&self) -> Self::Elem;
    fn contains(&self, elem: &Self::Elem) -> bool;
    fn index_of(&self, elem: &Self::Elem) -> Option<u64>;
    fn elem_at(&self, index: u64) -> Option<Self::Elem>;
}

/// The space of all `2^N` labelings of a domain.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct FullHypothesisSpace {
    domain: Domain,
}

impl FullHypothesisSpace {
    pub fn new(domain: Domain) -> Self {
        FullHypothesisSpace { domain }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }
}

impl OutcomeSpace for FullHypothesisSpace {
    type Elem = Hypothesis;

    fn log2_cardinality(&self) -> f64 {
        self.domain.size() as f64
    }

    fn cardinality(&self) -> Option<u64> {
        if self.domain.size() <= 63 {
            Some(1u64 << self.domain.size())
        } else {
            None
        }
    }

    fn cardinality_f64(&self) -> f64 {
        2f64.powi(self.domain.size() as i32)
    }

    fn sample_uniform(&self, stream: &mut RandomStream) -> Hypothesis {
        Hypothesis::random(self.domain, stream)
    }

    fn first(&self) -> Hypothesis {
        Hypothesis::zeros(self.domain)
    }

    fn contains(&self, elem: &Hypothesis) -> bool {
        elem.len() == self.domain.size()
    }

    fn index_of(&self, elem: &Hypothesis) -> Option<u64> {
        if self.domain.size() > 63 || !self.contains(elem) {
            return None;
        }
        // The lex rank of a bit string is its big-endian integer value.
        let mut idx = 0u64;
        for x in self.domain.points() {
            idx = idx << 1 | elem.get(x) as u64;
        }
        Some(idx)
    }

    fn elem_at(&self, index: u64) -> Option<Hypothesis> {
        if self.domain.size() > 63 || index >= (1u64 << self.domain.size()) {
            return None;
        }
        let n = self.domain.size();
        Some(Hypothesis::from_fn(self.domain, |x| {
            (index >> (n - 1 - x)) & 1 == 1
        }))
    }
}

/// An explicit, canonically ordered list of hypotheses.
#[derive(Clone, PartialEq, Debug)]
pub struct HypothesisList {
    members: Arc<Vec<Hypothesis>>,
}

impl HypothesisList {
    /// Canonicalizes (sorts, dedups). Errors on an empty list.
    pub fn new(mut members: Vec<Hypothesis>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyClass);
        }
        members.sort_unstable();
        members.dedup();
        Ok(HypothesisList { members: Arc::new(members) })
    }

    pub fn from_class(class: &ConceptClass) -> Self {
        HypothesisList { members: class.members_arc() }
    }

    pub fn members(&self) -> &[Hypothesis] {
        &self.members
    }
}

impl OutcomeSpace for HypothesisList {
    type Elem = Hypothesis;

    fn log2_cardinality(&self) -> f64 {
        (self.members.len() as f64).log2()
    }

    fn cardinality(&self) -> Option<u64> {
        Some(self.members.len() as u64)
    }

    fn cardinality_f64(&self) -> f64 {
        self.members.len() as f64
    }

    fn sample_uniform(&self, stream: &mut RandomStream) -> Hypothesis {
        let i = stream.uniform_index(self.members.len() as u64) as usize;
        self.members[i].clone()
    }

    fn first(&self) -> Hypothesis {
        self.members[0].clone()
    }

    fn contains(&self, elem: &Hypothesis) -> bool {
        self.members.binary_search(elem).is_ok()
    }

    fn index_of(&self, elem: &Hypothesis) -> Option<u64> {
        self.members.binary_search(elem).ok().map(|i| i as u64)
    }

    fn elem_at(&self, index: u64) -> Option<Hypothesis> {
        self.members.get(index as usize).cloned()
    }
}

/// A point on the grid `{0, 1/I, ..., 1}`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct GridPoint {
    pub numer: u32,
    pub denom: u32,
}

impl GridPoint {
    pub fn value(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}

/// The numeric grid `{0, 1/I, ..., 1}` with `I + 1` points.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct UnitGrid {
    resolution: u32,
}

impl UnitGrid {
    pub fn new(resolution: u32) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidParam("grid resolution must be positive".into()));
        }
        Ok(UnitGrid { resolution })
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn point(&self, numer: u32) -> GridPoint {
        debug_assert!(numer <= self.resolution);
        GridPoint { numer, denom: self.resolution }
    }
}

impl OutcomeSpace for UnitGrid {
    type Elem = GridPoint;

    fn log2_cardinality(&self) -> f64 {
        (self.resolution as f64 + 1.0).log2()
    }

    fn cardinality(&self) -> Option<u64> {
        Some(self.resolution as u64 + 1)
    }

    fn cardinality_f64(&self) -> f64 {
        self.resolution as f64 + 1.0
    }

    fn sample_uniform(&self, stream: &mut RandomStream) -> GridPoint {
        self.point(stream.uniform_index(self.resolution as u64 + 1) as u32)
    }

    fn first(&self) -> GridPoint {
        self.point(0)
    }

    fn contains(&self, elem: &GridPoint) -> bool {
        elem.denom == self.resolution && elem.numer <= self.resolution
    }

    fn index_of(&self, elem: &GridPoint) -> Option<u64> {
        self.contains(elem).then_some(elem.numer as u64)
    }

    fn elem_at(&self, index: u64) -> Option<GridPoint> {
        (index <= self.resolution as u64).then(|| self.point(index as u32))
    }
}

/// Either hypothesis-valued outcome space. Learners declare one of these as
/// their vote universe; proper learners over a known class use the list form,
/// which keeps rejection sampling and selection cheap.
#[derive(Clone, PartialEq, Debug)]
pub enum HypothesisSpace {
    Full(FullHypothesisSpace),
    List(HypothesisList),
}

impl HypothesisSpace {
    pub fn full(domain: Domain) -> Self {
        HypothesisSpace::Full(FullHypothesisSpace::new(domain))
    }

    pub fn list(class: &ConceptClass) -> Self {
        HypothesisSpace::List(HypothesisList::from_class(class))
    }
}

impl OutcomeSpace for HypothesisSpace {
    type Elem = Hypothesis;

    fn log2_cardinality(&self) -> f64 {
        match self {
            HypothesisSpace::Full(s) => s.log2_cardinality(),
            HypothesisSpace::List(s) => s.log2_cardinality(),
        }
    }

    fn cardinality(&self) -> Option<u64> {
        match self {
            HypothesisSpace::Full(s) => s.cardinality(),
            HypothesisSpace::List(s) => s.cardinality(),
        }
    }

    fn cardinality_f64(&self) -> f64 {
        match self {
            HypothesisSpace::Full(s) => s.cardinality_f64(),
            HypothesisSpace::List(s) => s.cardinality_f64(),
        }
    }

    fn sample_uniform(&self, stream: &mut RandomStream) -> Hypothesis {
        match self {
            HypothesisSpace::Full(s) => s.sample_uniform(stream),
            HypothesisSpace::List(s) => s.sample_uniform(stream),
        }
    }

    fn first(&self) -> Hypothesis {
        match self {
            HypothesisSpace::Full(s) => s.first(),
            HypothesisSpace::List(s) => s.first(),
        }
    }

    fn contains(&self, elem: &Hypothesis) -> bool {
        match self {
            HypothesisSpace::Full(s) => s.contains(elem),
            HypothesisSpace::List(s) => s.contains(elem),
        }
    }

    fn index_of(&self, elem: &Hypothesis) -> Option<u64> {
        match self {
            HypothesisSpace::Full(s) => s.index_of(elem),
            HypothesisSpace::List(s) => s.index_of(elem),
        }
    }

    fn elem_at(&self, index: u64) -> Option<Hypothesis> {
        match self {
            HypothesisSpace::Full(s) => s.elem_at(index),
            HypothesisSpace::List(s) => s.elem_at(index),
        }
    }
}

/// Normalized nonnegative mass over an outcome space, stored sparsely on its
/// support in canonical order.
#[derive(Clone, Debug)]
pub struct FiniteDistribution<S: OutcomeSpace> {
    space: S,
    mass: BTreeMap<S::Elem, f64>,
}

impl<S: OutcomeSpace> FiniteDistribution<S> {
    /// Validates membership, nonnegativity, and normalization (1e-9).
    pub fn new(space: S, pairs: impl IntoIterator<Item = (S::Elem, f64)>) -> Result<Self> {
        let mut mass = BTreeMap::new();
        for (elem, w) in pairs {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParam(format!("mass {w} for {elem}")));
            }
            if !space.contains(&elem) {
                return Err(Error::DomainMismatch(format!("{elem} outside the outcome space")));
            }
            if w > 0.0 && mass.insert(elem, w).is_some() {
                return Err(Error::InvalidParam("duplicate support element".into()));
            }
        }
        let total: f64 = mass.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { total, tolerance: 1e-9 });
        }
        Ok(FiniteDistribution { space, mass })
    }

    /// Normalizes arbitrary nonnegative weights by their sum.
    pub fn from_weights(space: S, pairs: impl IntoIterator<Item = (S::Elem, f64)>) -> Result<Self> {
        let pairs: Vec<(S::Elem, f64)> = pairs.into_iter().collect();
        let total: f64 = pairs.iter().map(|(_, w)| *w).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParam(format!("weights sum to {total}")));
        }
        FiniteDistribution::new(space, pairs.into_iter().map(|(e, w)| (e, w / total)))
    }

    pub fn point_mass(space: S, elem: S::Elem) -> Result<Self> {
        FiniteDistribution::new(space, [(elem, 1.0)])
    }

    pub fn space(&self) -> &S {
        &self.space
    }

    pub fn mass(&self, elem: &S::Elem) -> f64 {
        self.mass.get(elem).copied().unwrap_or(0.0)
    }

    /// Support in canonical element order.
    pub fn support(&self) -> impl Iterator<Item = (&S::Elem, f64)> {
        self.mass.iter().map(|(e, w)| (e, *w))
    }

    pub fn support_len(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }
}

/// Knobs for the rejection loop.
#[derive(Clone, Copy, Debug)]
pub struct CsOptions {
    /// Hard stop; exceeding it reports an infeasible space rather than hanging.
    pub max_iterations: u64,
    /// Spaces with more than `2^this` elements are refused up front. Raise it
    /// only when you can afford the rejections.
    pub max_log2_cardinality: f64,
}

impl Default for CsOptions {
    fn default() -> Self {
        CsOptions { max_iterations: 100_000_000, max_log2_cardinality: 20.0 }
    }
}

/// Correlated sampling. Two calls with the same stream and close
/// distributions usually return the same element.
pub fn cs_sample<S: OutcomeSpace>(
    dist: &FiniteDistribution<S>,
    stream: &mut RandomStream,
    opts: &CsOptions,
) -> Result<S::Elem> {
    let space = dist.space();
    if space.log2_cardinality() > opts.max_log2_cardinality {
        return Err(Error::SpaceTooLarge {
            log2_card: space.log2_cardinality(),
            limit: opts.max_log2_cardinality,
        });
    }
    for _ in 0..opts.max_iterations {
        let w = space.sample_uniform(stream);
        let u = stream.uniform_unit();
        if u < dist.mass(&w) {
            return Ok(w);
        }
    }
    Err(Error::IterationCapExceeded { cap: opts.max_iterations })
}

/// Total variation distance, computed over the union of supports.
pub fn tv_distance<S: OutcomeSpace>(
    p: &FiniteDistribution<S>,
    q: &FiniteDistribution<S>,
) -> Result<f64> {
    if p.space() != q.space() {
        return Err(Error::DomainMismatch("tv_distance across different spaces".into()));
    }
    let mut acc = 0.0;
    for (e, w) in p.support() {
        acc += (w - q.mass(e)).abs();
    }
    for (e, w) in q.support() {
        if p.mass(e) == 0.0 {
            acc += w;
        }
    }
    Ok(acc / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use crate::randomness::{derive, label, tags, SeedRoot};

    fn grid_dist(space: UnitGrid, weights: &[f64]) -> FiniteDistribution<UnitGrid> {
        FiniteDistribution::new(
            space,
            weights
                .iter()
                .enumerate()
                .map(|(i, w)| (space.point(i as u32), *w)),
        )
        .unwrap()
    }

    #[test]
    fn singleton_space_returns_immediately() {
        let space = UnitGrid::new(1).unwrap();
        let p = FiniteDistribution::point_mass(space, space.point(0)).unwrap();
        let mut s = derive(&SeedRoot::from_u64(1), &label(&[(tags::CS, 0)]));
        assert_eq!(cs_sample(&p, &mut s, &CsOptions::default()).unwrap().numer, 0);
    }

    #[test]
    fn identical_distributions_always_agree() {
        let space = UnitGrid::new(7).unwrap();
        let p = grid_dist(space, &[0.1, 0.2, 0.05, 0.15, 0.1, 0.1, 0.2, 0.1]);
        let root = SeedRoot::from_u64(2);
        for i in 0..500 {
            let mut a = derive(&root, &label(&[(tags::CS, i)]));
            let mut b = derive(&root, &label(&[(tags::CS, i)]));
            let opts = CsOptions::default();
            assert_eq!(
                cs_sample(&p, &mut a, &opts).unwrap(),
                cs_sample(&p, &mut b, &opts).unwrap()
            );
        }
    }

    #[test]
    fn disagreement_matches_coupling_oracle() {
        // P puts everything on one point, Q is uniform over two: the exact
        // rejection-coupling disagreement is 0.5 and the bound is 2*0.5 = 1.
        let space = UnitGrid::new(1).unwrap();
        let p = grid_dist(space, &[1.0, 0.0]);
        let q = grid_dist(space, &[0.5, 0.5]);
        let exact = oracles::coupling_disagreement_exact(&p, &q).unwrap();
        assert!((exact - 0.5).abs() < 1e-12);

        let root = SeedRoot::from_u64(3);
        let trials = 100_000;
        let opts = CsOptions::default();
        let mut disagree = 0u32;
        for i in 0..trials {
            let mut sa = derive(&root, &label(&[(tags::CS, i)]));
            let mut sb = derive(&root, &label(&[(tags::CS, i)]));
            if cs_sample(&p, &mut sa, &opts).unwrap() != cs_sample(&q, &mut sb, &opts).unwrap() {
                disagree += 1;
            }
        }
        let rate = disagree as f64 / trials as f64;
        let dtv = tv_distance(&p, &q).unwrap();
        assert!(rate <= 2.0 * dtv, "rate {rate}");
        assert!((rate - exact).abs() < 0.006, "rate {rate} vs exact {exact}");
    }

    #[test]
    fn marginal_correctness_small_space() {
        let space = UnitGrid::new(3).unwrap();
        let p = grid_dist(space, &[0.4, 0.3, 0.2, 0.1]);
        let root = SeedRoot::from_u64(4);
        let draws = 100_000;
        let mut counts = [0u64; 4];
        let opts = CsOptions::default();
        for i in 0..draws {
            let mut s = derive(&root, &label(&[(tags::CS, i)]));
            counts[cs_sample(&p, &mut s, &opts).unwrap().numer as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .enumerate()
            .map(|(i, c)| (*c as f64 / draws as f64 - p.mass(&space.point(i as u32))).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv {tv}");
    }

    #[test]
    fn tv_distance_cases() {
        let space = UnitGrid::new(1).unwrap();
        let p = grid_dist(space, &[0.7, 0.3]);
        let q = grid_dist(space, &[0.4, 0.6]);
        assert!((tv_distance(&p, &q).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let a = grid_dist(space, &[1.0, 0.0]);
        let b = grid_dist(space, &[0.0, 1.0]);
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);

        let other = UnitGrid::new(2).unwrap();
        let r = grid_dist(other, &[0.5, 0.5, 0.0]);
        assert!(tv_distance(&p, &r).is_err());
    }

    #[test]
    fn rejects_bad_distributions() {
        let space = UnitGrid::new(2).unwrap();
        let r = FiniteDistribution::new(space, [(space.point(0), 0.5), (space.point(1), 0.4)]);
        assert!(matches!(r, Err(Error::NotNormalized { .. })));
        let r = FiniteDistribution::new(space, [(space.point(0), -0.1), (space.point(1), 1.1)]);
        assert!(r.is_err());
        let foreign = UnitGrid::new(5).unwrap().point(3);
        let r = FiniteDistribution::new(space, [(foreign, 1.0)]);
        assert!(matches!(r, Err(Error::DomainMismatch(_))));
    }

    #[test]
    fn full_space_gate_and_cap() {
        let domain = Domain::new(25).unwrap();
        let space = FullHypothesisSpace::new(domain);
        let h = Hypothesis::zeros(domain);
        let p = FiniteDistribution::point_mass(space, h).unwrap();
        let mut s = derive(&SeedRoot::from_u64(5), &label(&[(tags::CS, 0)]));
        let r = cs_sample(&p, &mut s, &CsOptions::default());
        assert!(matches!(r, Err(Error::SpaceTooLarge { .. })));

        // Tiny iteration cap on a feasible space still errors out loudly.
        let domain = Domain::new(10).unwrap();
        let space = FullHypothesisSpace::new(domain);
        let p = FiniteDistribution::point_mass(space, Hypothesis::zeros(domain)).unwrap();
        let opts = CsOptions { max_iterations: 2, ..CsOptions::default() };
        let r = cs_sample(&p, &mut s, &opts);
        assert!(matches!(r, Err(Error::IterationCapExceeded { .. })));
    }

    #[test]
    fn full_space_index_bijection() {
        let domain = Domain::new(6).unwrap();
        let space = FullHypothesisSpace::new(domain);
        assert_eq!(space.cardinality(), Some(64));
        for idx in 0..64u64 {
            let h = space.elem_at(idx).unwrap();
            assert_eq!(space.index_of(&h), Some(idx));
        }
        // Index order is the canonical lexicographic order.
        let a = space.elem_at(5).unwrap();
        let b = space.elem_at(9).unwrap();
        assert!(a < b);
    }

    #[test]
    fn full_space_uniform_sampling_reaches_tail_bits() {
        // Domains wider than one word exercise the tail-word masking.
        let domain = Domain::new(70).unwrap();
        let space = FullHypothesisSpace::new(domain);
        let mut s = derive(&SeedRoot::from_u64(6), &label(&[(tags::CS, 0)]));
        let mut seen_high = 0;
        for _ in 0..200 {
            let h = space.sample_uniform(&mut s);
            assert_eq!(h.len(), 70);
            if h.get(69) {
                seen_high += 1;
            }
        }
        assert!(seen_high > 50 && seen_high < 150, "tail bit count {seen_high}");
    }

    #[test]
    fn hypothesis_list_space() {
        let domain = Domain::new(4).unwrap();
        let members: Vec<Hypothesis> = (0..5u64)
            .map(|i| FullHypothesisSpace::new(domain).elem_at(i * 3).unwrap())
            .collect();
        let space = HypothesisList::new(members.clone()).unwrap();
        assert_eq!(space.cardinality(), Some(5));
        assert!(space.contains(&members[2]));
        assert_eq!(space.index_of(&members[0]), Some(0));
        let outside = FullHypothesisSpace::new(domain).elem_at(1).unwrap();
        assert!(!space.contains(&outside));
    }
}
