//! Shared fixtures for the benchmark targets.

use userdp_core::concepts::{standard_class, RealizableDistribution, StandardClass};
use userdp_core::randomness::{derive, label, tags, RandomStream, SeedRoot};

pub fn bench_stream(idx: u64) -> RandomStream {
    derive(&SeedRoot::from_u64(99), &label(&[(tags::GEN, idx)]))
}

pub fn points_distribution(points: u32) -> RealizableDistribution {
    let class = standard_class(StandardClass::Points { points }).unwrap();
    let target = class.members()[class.len() / 2].clone();
    RealizableDistribution::uniform(class.domain(), target).unwrap()
}
