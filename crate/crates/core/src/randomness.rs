//! Deterministic public-randomness substreams.
//!
//! Every random quantity in the toolkit is drawn from a [`RandomStream`]
//! derived from a 256-bit root seed and a [`SubstreamLabel`]. Derivation is a
//! pure function: two simulated users holding the same root reconstruct
//! bit-identical streams with zero communication, which is what lets
//! correlated sampling couple their outputs.
//!
//! The derivation contract is fixed so that other implementations can
//! reproduce it: the label is encoded as a 4-byte big-endian element count
//! followed by, per element, a 1-byte tag length, the tag bytes, and an
//! 8-byte big-endian index. SHA-256 over (root bytes || encoding) seeds a
//! ChaCha12 generator. The encoding is injective, so distinct labels never
//! collide (in particular a path is never confused with an extension of
//! itself).

use rand_core::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Registry of substream tags. `derive` rejects anything else so that label
/// typos fail loudly instead of silently forking the randomness.
pub mod tags {
    /// Correlated-sampling proposal stream.
    pub const CS: &str = "cs";
    /// Representation-class selection (the public H draw).
    pub const REP_H: &str = "rep-H";
    /// Per-query correlated-sampling streams of the SQ reduction.
    pub const SQ_QUERY: &str = "sq-query";
    /// Private coins handed to a randomized SQ learner.
    pub const SQ_COINS: &str = "sq-coins";
    /// Data draws (indexed by user / redraw as needed).
    pub const DATA: &str = "data";
    /// Per-user scoping component.
    pub const USER: &str = "user";
    /// Batch runs inside the stability booster (candidate phase).
    pub const BOOST_S: &str = "boost-s";
    /// Batch runs inside the stability booster (frequency phase).
    pub const BOOST_T: &str = "boost-t";
    /// Central selection mechanism noise.
    pub const SELECT: &str = "select";
    /// Local randomizer bit flips.
    pub const LOCAL: &str = "local";
    /// Shuffle-model randomizer noise (indexed by bucket and user).
    pub const SHUFFLE: &str = "shuffle";
    /// Per-trial root derivation in the harness.
    pub const TRIAL: &str = "trial";
    /// Per-root derivation in stability measurement.
    pub const ROOT: &str = "root";
    /// Synthetic-input generation in tests and the harness.
    pub const GEN: &str = "gen";
    /// Empty-dataset learner runs in the representation construction.
    pub const EMPTY_RUN: &str = "empty-run";

    pub(super) const ALL: &[&str] = &[
        CS, REP_H, SQ_QUERY, SQ_COINS, DATA, USER, BOOST_S, BOOST_T, SELECT, LOCAL, SHUFFLE,
        TRIAL, ROOT, GEN, EMPTY_RUN,
    ];
}

fn tag_registered(tag: &str) -> bool {
    tags::ALL.contains(&tag)
}

/// A 256-bit root seed.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SeedRoot(pub [u8; 32]);

impl SeedRoot {
    /// Expands a small integer into a root; convenient in tests.
    pub fn from_u64(x: u64) -> Self {
        let mut bytes = [0u8; 32];
        bytes[24..].copy_from_slice(&x.to_be_bytes());
        SeedRoot(bytes)
    }

    /// Parses a hex string of at most 64 digits, left-padded with zeros.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches("0x");
        if s.is_empty() || s.len() > 64 || !s.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Parse(format!("invalid seed hex {s:?}")));
        }
        let padded = format!("{s:0>64}");
        let mut bytes = [0u8; 32];
        for (i, chunk) in padded.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16).unwrap() as u8;
            let lo = (chunk[1] as char).to_digit(16).unwrap() as u8;
            bytes[i] = hi << 4 | lo;
        }
        Ok(SeedRoot(bytes))
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Derives a child root, e.g. one root per harness trial.
    pub fn child(&self, label: &SubstreamLabel) -> SeedRoot {
        let mut stream = derive(self, label);
        let mut bytes = [0u8; 32];
        stream.fill_bytes(&mut bytes);
        SeedRoot(bytes)
    }
}

/// An ordered path of (tag, index) components naming a substream.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SubstreamLabel {
    path: Vec<(&'static str, u64)>,
}

impl SubstreamLabel {
    pub fn of(path: &[(&'static str, u64)]) -> Self {
        SubstreamLabel { path: path.to_vec() }
    }

    pub fn child(mut self, tag: &'static str, index: u64) -> Self {
        self.path.push((tag, index));
        self
    }

    /// Canonical injective encoding; see the module docs.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.path.len() * 16);
        out.extend_from_slice(&(self.path.len() as u32).to_be_bytes());
        for (tag, index) in &self.path {
            debug_assert!(tag.len() <= u8::MAX as usize);
            out.push(tag.len() as u8);
            out.extend_from_slice(tag.as_bytes());
            out.extend_from_slice(&index.to_be_bytes());
        }
        out
    }

    fn validate(&self) {
        for (tag, _) in &self.path {
            assert!(
                tag_registered(tag),
                "unregistered substream tag {tag:?}; add it to randomness::tags"
            );
        }
    }
}

/// Shorthand for `SubstreamLabel::of`.
pub fn label(path: &[(&'static str, u64)]) -> SubstreamLabel {
    SubstreamLabel::of(path)
}

/// A deterministic generator owned by a single caller. Streams must not be
/// shared between concurrent users; each derives its own.
pub struct RandomStream {
    rng: rand_chacha::ChaCha12Rng,
}

/// Derives the stream for `(root, label)`. Panics on a tag that is not in the
/// registry.
pub fn derive(root: &SeedRoot, label: &SubstreamLabel) -> RandomStream {
    label.validate();
    let mut hasher = Sha256::new();
    hasher.update(root.0);
    hasher.update(label.encode());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    RandomStream {
        rng: <rand_chacha::ChaCha12Rng as rand_core::SeedableRng>::from_seed(seed),
    }
}

impl RandomStream {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest);
    }

    /// Unbiased draw from `[0, n)` by rejection over the enclosing power of
    /// two. Panics if `n == 0`.
    pub fn uniform_index(&mut self, n: u64) -> u64 {
        assert!(n >= 1, "uniform_index over an empty range");
        let bits = 64 - (n - 1).leading_zeros();
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let v = self.rng.next_u64() & mask;
            if v < n {
                return v;
            }
        }
    }

    /// Uniform in `[0, 1)` with a full 53-bit mantissa.
    pub fn uniform_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

// rand_distr integration (gamma and Poisson draws in the shuffle module).
impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest);
    }
}
