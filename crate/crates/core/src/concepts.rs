//! Finite domains, hypotheses, concept classes, and realizable data.
//!
//! Domain points are dense integers `0..N-1` and a hypothesis is a total
//! boolean labeling stored as a bit vector, so evaluation is O(1) and
//! equality/hashing are exact. Hypotheses order lexicographically by their
//! bit string (point 0 first), which is the canonical order used everywhere
//! indices must be stable across processes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::RandomStream;

/// Hard cap on domain size. A full-hypothesis-space correlated-sampling pass
/// costs ~2^N rejections, so anything close to the cap is only usable through
/// the explicit-list paths.
pub const MAX_DOMAIN_SIZE: u32 = 1 << 24;

/// A finite input set, points identified with `0..size-1`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Domain {
    size: u32,
}

impl Domain {
    pub fn new(size: u32) -> Result<Self> {
        if size == 0 || size > MAX_DOMAIN_SIZE {
            return Err(Error::InvalidParam(format!(
                "domain size must be in 1..={MAX_DOMAIN_SIZE}, got {size}"
            )));
        }
        Ok(Domain { size })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn points(&self) -> impl Iterator<Item = u32> {
        0..self.size
    }
}

/// A total labeling of a domain. Bit `x` is `h(x)`.
///
/// Bits are packed big-endian (point 0 in the most significant position of
/// word 0) so that word-wise comparison equals lexicographic order on the bit
/// string, and so the hex rendering reads left to right from point 0.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Hypothesis {
    len: u32,
    words: Vec<u64>,
}

impl Hypothesis {
    fn word_count(len: u32) -> usize {
        len.div_ceil(64) as usize
    }

    /// Mask keeping only the bits that belong to the labeling in the last word.
    fn tail_mask(len: u32) -> u64 {
        let rem = len % 64;
        if rem == 0 {
            u64::MAX
        } else {
            !0u64 << (64 - rem)
        }
    }

    pub fn from_fn(domain: Domain, mut f: impl FnMut(u32) -> bool) -> Self {
        let mut words = vec![0u64; Self::word_count(domain.size)];
        for x in 0..domain.size {
            if f(x) {
                words[(x / 64) as usize] |= 1u64 << (63 - (x % 64));
            }
        }
        Hypothesis { len: domain.size, words }
    }

    pub fn zeros(domain: Domain) -> Self {
        Hypothesis {
            len: domain.size,
            words: vec![0u64; Self::word_count(domain.size)],
        }
    }

    /// Uniformly random labeling: one fresh bit per point.
    pub fn random(domain: Domain, stream: &mut RandomStream) -> Self {
        let n = Self::word_count(domain.size);
        let mut words: Vec<u64> = (0..n).map(|_| stream.next_u64()).collect();
        if let Some(last) = words.last_mut() {
            *last &= Self::tail_mask(domain.size);
        }
        Hypothesis { len: domain.size, words }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, x: u32) -> bool {
        debug_assert!(x < self.len);
        (self.words[(x / 64) as usize] >> (63 - (x % 64))) & 1 == 1
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= Self::tail_mask(self.len);
        }
        Hypothesis { len: self.len, words }
    }

    pub(crate) fn word_slice(&self) -> &[u64] {
        &self.words
    }

    /// Big-endian hex over point indices, zero-padded to `ceil(N/4)` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4) as usize;
        let mut out = String::with_capacity(digits);
        for w in &self.words {
            out.push_str(&format!("{w:016x}"));
        }
        out.truncate(digits);
        out
    }

    pub fn from_hex(domain: Domain, s: &str) -> Result<Self> {
        let digits = domain.size.div_ceil(4) as usize;
        if s.len() != digits || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Parse(format!(
                "hypothesis hex must be exactly {digits} hex digits, got {s:?}"
            )));
        }
        let mut words = vec![0u64; Self::word_count(domain.size)];
        for (i, c) in s.chars().enumerate() {
            let nibble = c.to_digit(16).unwrap() as u64;
            words[i / 16] |= nibble << (60 - 4 * (i % 16));
        }
        let h = Hypothesis { len: domain.size, words };
        if *h.words.last().unwrap() & !Self::tail_mask(domain.size) != 0 {
            return Err(Error::Parse(format!(
                "hex {s:?} sets padding bits beyond the domain"
            )));
        }
        Ok(h)
    }
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A labeled example `(x, y)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LabeledSample {
    pub x: u32,
    pub y: bool,
}

/// An ordered, duplicate-free set of hypotheses over one domain.
#[derive(Clone, PartialEq, Debug)]
pub struct ConceptClass {
    domain: Domain,
    members: Arc<Vec<Hypothesis>>,
}

impl ConceptClass {
    /// Canonicalizes: sorts lexicographically and removes duplicates.
    pub fn new(domain: Domain, mut members: Vec<Hypothesis>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyClass);
        }
        for h in &members {
            if h.len() != domain.size() {
                return Err(Error::DomainMismatch(format!(
                    "hypothesis of length {} in class over domain of size {}",
                    h.len(),
                    domain.size()
                )));
            }
        }
        members.sort_unstable();
        members.dedup();
        Ok(ConceptClass { domain, members: Arc::new(members) })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn members(&self) -> &[Hypothesis] {
        &self.members
    }

    pub fn members_arc(&self) -> Arc<Vec<Hypothesis>> {
        Arc::clone(&self.members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// log2 of the class size; the bit-size reading of a class's "size".
    pub fn log2_size(&self) -> f64 {
        (self.members.len() as f64).log2()
    }
}

/// Built-in example classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StandardClass {
    /// `h_t(x) = 1 iff x < t` for `t = 0..=points`; `t = 0` is all-zeros.
    Thresholds { points: u32 },
    /// One singleton per point, plus the all-zeros hypothesis.
    Points { points: u32 },
    /// All XOR masks over `{0,1}^vars`, including the all-zeros parity.
    Parities { vars: u32 },
    /// All monotone conjunctions over `{0,1}^vars`; the empty conjunction is
    /// the all-ones hypothesis.
    Conjunctions { vars: u32 },
}

/// Bit `j` of a packed point `x` in `{0,1}^d`.
#[inline]
pub fn point_bit(x: u32, j: u32) -> bool {
    (x >> j) & 1 == 1
}

pub fn standard_class(spec: StandardClass) -> Result<ConceptClass> {
    match spec {
        StandardClass::Thresholds { points } => {
            let domain = Domain::new(points)?;
            let members = (0..=points)
                .map(|t| Hypothesis::from_fn(domain, |x| x < t))
                .collect();
            ConceptClass::new(domain, members)
        }
        StandardClass::Points { points } => {
            let domain = Domain::new(points)?;
            let mut members: Vec<Hypothesis> = (0..points)
                .map(|z| Hypothesis::from_fn(domain, |x| x == z))
                .collect();
            members.push(Hypothesis::zeros(domain));
            ConceptClass::new(domain, members)
        }
        StandardClass::Parities { vars } => {
            if vars == 0 || vars > 24 {
                return Err(Error::InvalidParam(format!(
                    "parities need 1..=24 variables, got {vars}"
                )));
            }
            let domain = Domain::new(1 << vars)?;
            let members = (0u32..1 << vars)
                .map(|mask| Hypothesis::from_fn(domain, |x| (x & mask).count_ones() % 2 == 1))
                .collect();
            ConceptClass::new(domain, members)
        }
        StandardClass::Conjunctions { vars } => {
            if vars == 0 || vars > 24 {
                return Err(Error::InvalidParam(format!(
                    "conjunctions need 1..=24 variables, got {vars}"
                )));
            }
            let domain = Domain::new(1 << vars)?;
            let members = (0u32..1 << vars)
                .map(|mask| Hypothesis::from_fn(domain, |x| x & mask == mask))
                .collect();
            ConceptClass::new(domain, members)
        }
    }
}

/// Normalization tolerance for distribution weights. Inputs outside it are
/// rejected rather than silently renormalized.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// A distribution over labeled examples whose labels come from a target
/// concept with probability 1.
#[derive(Clone, Debug)]
pub struct RealizableDistribution {
    domain: Domain,
    point_weights: Arc<Vec<f64>>,
    cdf: Arc<Vec<f64>>,
    last_positive: u32,
    /// Exactly-uniform weights over a power-of-two domain: `floor(u * N)` is
    /// bit-identical to the inverse-CDF search (every partial sum is an exact
    /// dyadic), so drawing takes the cheap route.
    uniform_pow2: bool,
    target: Hypothesis,
}

impl RealizableDistribution {
    pub fn new(domain: Domain, point_weights: Vec<f64>, target: Hypothesis) -> Result<Self> {
        if point_weights.len() != domain.size() as usize {
            return Err(Error::DomainMismatch(format!(
                "{} weights for domain of size {}",
                point_weights.len(),
                domain.size()
            )));
        }
        if target.len() != domain.size() {
            return Err(Error::DomainMismatch("target over a different domain".into()));
        }
        if point_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParam("negative or non-finite weight".into()));
        }
        let total: f64 = point_weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::NotNormalized { total, tolerance: WEIGHT_TOLERANCE });
        }
        let mut cdf = Vec::with_capacity(point_weights.len());
        let mut acc = 0.0;
        let mut last_positive = 0u32;
        for (x, w) in point_weights.iter().enumerate() {
            acc += w;
            cdf.push(acc);
            if *w > 0.0 {
                last_positive = x as u32;
            }
        }
        let n = domain.size();
        let uniform_pow2 =
            n.is_power_of_two() && point_weights.iter().all(|w| *w == 1.0 / n as f64);
        Ok(RealizableDistribution {
            domain,
            point_weights: Arc::new(point_weights),
            cdf: Arc::new(cdf),
            last_positive,
            uniform_pow2,
            target,
        })
    }

    pub fn uniform(domain: Domain, target: Hypothesis) -> Result<Self> {
        let w = 1.0 / domain.size() as f64;
        RealizableDistribution::new(domain, vec![w; domain.size() as usize], target)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn point_weights(&self) -> &[f64] {
        &self.point_weights
    }

    pub fn target(&self) -> &Hypothesis {
        &self.target
    }

    pub fn label(&self, x: u32) -> bool {
        self.target.get(x)
    }

    fn draw_point(&self, stream: &mut RandomStream) -> u32 {
        let u = stream.uniform_unit();
        if self.uniform_pow2 {
            return (u * self.domain.size() as f64) as u32;
        }
        self.draw_point_general(u)
    }

    fn draw_point_general(&self, u: f64) -> u32 {
        let idx = self.cdf.partition_point(|&c| c <= u) as u32;
        idx.min(self.last_positive)
    }
}

/// Distributional error `Pr[h(x) != target(x)]`.
///
/// Panics on a domain mismatch; the operands came from different worlds.
pub fn err_dist(h: &Hypothesis, dist: &RealizableDistribution) -> f64 {
    assert_eq!(h.len(), dist.domain().size(), "err_dist across domains");
    let mut err = 0.0;
    for x in dist.domain().points() {
        if h.get(x) != dist.target.get(x) {
            err += dist.point_weights[x as usize];
        }
    }
    err
}

/// Empirical error: the fraction of samples with `h(x) != y`.
pub fn err_emp(h: &Hypothesis, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mistakes = samples.iter().filter(|s| h.get(s.x) != s.y).count();
    Ok(mistakes as f64 / samples.len() as f64)
}

/// `m` i.i.d. draws by inverse CDF, labeled by the target.
pub fn draw_samples(
    dist: &RealizableDistribution,
    m: usize,
    stream: &mut RandomStream,
) -> Vec<LabeledSample> {
    (0..m)
        .map(|_| {
            let x = dist.draw_point(stream);
            LabeledSample { x, y: dist.target.get(x) }
        })
        .collect()
}

/// Per-point label counts of a sample sequence. Turns empirical-error
/// evaluation over a whole class into one pass over the samples plus O(N) per
/// hypothesis, which is what the learner inner loops use.
pub struct LabelHistogram {
    count_y0: Vec<u32>,
    count_y1: Vec<u32>,
    total: usize,
}

impl LabelHistogram {
    pub fn from_samples(domain: Domain, samples: &[LabeledSample]) -> Self {
        let mut count_y0 = vec![0u32; domain.size() as usize];
        let mut count_y1 = vec![0u32; domain.size() as usize];
        for s in samples {
            if s.y {
                count_y1[s.x as usize] += 1;
            } else {
                count_y0[s.x as usize] += 1;
            }
        }
        LabelHistogram { count_y0, count_y1, total: samples.len() }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Matches `err_emp` exactly on the samples the histogram was built from.
    pub fn err_emp(&self, h: &Hypothesis) -> f64 {
        debug_assert!(self.total > 0);
        let mut mistakes = 0u64;
        for x in 0..self.count_y0.len() {
            let c = if h.get(x as u32) { self.count_y0[x] } else { self.count_y1[x] };
            mistakes += c as u64;
        }
        mistakes as f64 / self.total as f64
    }

    /// Mistake count, abandoning the scan once it exceeds `cap`. Word-wise
    /// over the packed labeling; the learner inner loops live here.
    pub fn mistakes_capped(&self, h: &Hypothesis, cap: u32) -> Option<u32> {
        let n = self.count_y0.len();
        let mut mistakes = 0u32;
        for (w, &word) in h.word_slice().iter().enumerate() {
            let base = w * 64;
            let upto = (n - base).min(64);
            let mut b = 0;
            while b < upto {
                let chunk_end = (b + 16).min(upto);
                while b < chunk_end {
                    let x = base + b;
                    mistakes += if (word >> (63 - b)) & 1 == 1 {
                        self.count_y0[x]
                    } else {
                        self.count_y1[x]
                    };
                    b += 1;
                }
                if mistakes > cap {
                    return None;
                }
            }
        }
        Some(mistakes)
    }

    /// Largest mistake count still within an `err_emp <= threshold` filter.
    pub fn mistake_cap(total: usize, threshold: f64) -> u32 {
        if total == 0 {
            return u32::MAX;
        }
        let mut cap = (threshold * total as f64).floor() as u32;
        while ((cap + 1) as f64 / total as f64) <= threshold {
            cap += 1;
        }
        while cap > 0 && (cap as f64 / total as f64) > threshold {
            cap -= 1;
        }
        cap.min(total as u32)
    }
}

#[derive(Serialize, Deserialize)]
struct ClassDoc {
    domain_size: u32,
    members: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DistributionDoc {
    domain_size: u32,
    weights: Vec<f64>,
    target: String,
}

impl ConceptClass {
    pub fn to_json(&self) -> String {
        let doc = ClassDoc {
            domain_size: self.domain.size(),
            members: self.members.iter().map(Hypothesis::to_hex).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("class serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ClassDoc = serde_json::from_str(s)?;
        let domain = Domain::new(doc.domain_size)?;
        let members = doc
            .members
            .iter()
            .map(|m| Hypothesis::from_hex(domain, m))
            .collect::<Result<Vec<_>>>()?;
        ConceptClass::new(domain, members)
    }
}

impl RealizableDistribution {
    pub fn to_json(&self) -> String {
        let doc = DistributionDoc {
            domain_size: self.domain.size(),
            weights: self.point_weights.to_vec(),
            target: self.target.to_hex(),
        };
        serde_json::to_string_pretty(&doc).expect("distribution serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: DistributionDoc = serde_json::from_str(s)?;
        let domain = Domain::new(doc.domain_size)?;
        let target = Hypothesis::from_hex(domain, &doc.target)?;
        RealizableDistribution::new(domain, doc.weights, target)
    }
}
