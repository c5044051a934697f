//! Independent reference computations for the test suites.
//!
//! Everything here is derived from first principles (closed forms, direct
//! summation, enumeration) and deliberately shares no code with the sampling
//! paths it is used to check.

use crate::error::Result;
use crate::randomness::RandomStream;
use crate::sampling::{FiniteDistribution, OutcomeSpace};

/// Exact disagreement probability of the uniform-proposal rejection coupling
/// run on `p` and `q` with a shared stream.
///
/// Per iteration both callers see the same `(w, u)`. With probability
/// `min(p(w), q(w))` both accept `w` (agree); if exactly one accepts, the
/// other finishes later with its own marginal law, so it lands on `w` with
/// that law's mass at `w`. Conditioning away the both-reject iterations gives
///
/// ```text
/// D = [sum (p-q)+ (1-q) + sum (q-p)+ (1-p)] / sum max(p, q)
/// ```
pub fn coupling_disagreement_exact<S: OutcomeSpace>(
    p: &FiniteDistribution<S>,
    q: &FiniteDistribution<S>,
) -> Result<f64> {
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (e, pw) in p.support() {
        let qw = q.mass(e);
        numer += (pw - qw).max(0.0) * (1.0 - qw) + (qw - pw).max(0.0) * (1.0 - pw);
        denom += pw.max(qw);
    }
    for (e, qw) in q.support() {
        if p.mass(e) == 0.0 {
            numer += qw * 1.0;
            denom += qw;
        }
    }
    Ok(numer / denom)
}

/// Log pmf of the negative binomial NB(r, p) with mean `p r / (1 - p)`:
/// `pmf(k) = C(k + r - 1, k) (1 - p)^r p^k` for real `r > 0`.
pub fn nb_log_pmf(r: f64, p: f64, k: u64) -> f64 {
    let k = k as f64;
    ln_gamma(k + r) - ln_gamma(k + 1.0) - ln_gamma(r) + r * (1.0 - p).ln() + k * p.ln()
}

/// Smallest `t` with `Pr[NB(r, p) <= t] >= 1 - beta`, by direct summation of
/// the pmf from zero.
pub fn nb_quantile(r: f64, p: f64, beta: f64) -> u64 {
    assert!(r > 0.0 && (0.0..1.0).contains(&p) && (0.0..1.0).contains(&beta));
    let target = 1.0 - beta;
    let mut cdf = 0.0;
    let mut k = 0u64;
    // Generous stop far beyond the mean plus many standard deviations.
    let mean = p * r / (1.0 - p);
    let sd = (p * r).sqrt() / (1.0 - p);
    let stop = (mean + 30.0 * sd + 1000.0) as u64;
    loop {
        cdf += nb_log_pmf(r, p, k).exp();
        if cdf >= target || k >= stop {
            return k;
        }
        k += 1;
    }
}

/// Mean, variance, and fourth central moment of NB(r, p), from the cumulants
/// of the gamma-Poisson mixture.
pub fn nb_moments(r: f64, p: f64) -> (f64, f64, f64) {
    let theta = p / (1.0 - p);
    let k2 = r * theta * (1.0 + theta);
    let k4 = r * theta * (1.0 + theta) * (1.0 + 6.0 * theta + 6.0 * theta * theta);
    let mu4 = k4 + 3.0 * k2 * k2;
    (r * theta, k2, mu4)
}

/// `Pr[L1 - L2 > g]` for independent `Laplace(scale)` noise, `g >= 0`.
/// The difference has density `exp(-|z|/b) (1 + |z|/b) / (4b)`.
pub fn laplace_diff_tail(scale: f64, gap: f64) -> f64 {
    assert!(scale > 0.0 && gap >= 0.0);
    (-gap / scale).exp() * (2.0 + gap / scale) / 4.0
}

/// A random normalized distribution over the whole space, for test sweeps.
/// Masses are i.i.d. uniforms raised to `sharpness` (higher = more peaked).
pub fn random_distribution<S: OutcomeSpace>(
    space: S,
    stream: &mut RandomStream,
    sharpness: i32,
) -> FiniteDistribution<S> {
    let n = space.cardinality().expect("enumerable space") as usize;
    let pairs: Vec<(S::Elem, f64)> = (0..n)
        .map(|i| {
            let e = space.elem_at(i as u64).expect("index in range");
            (e, stream.uniform_unit().powi(sharpness))
        })
        .collect();
    FiniteDistribution::from_weights(space, pairs).expect("positive total")
}

/// Lanczos log-gamma, good to ~1e-13 relative error over the positive reals.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0);
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the small-argument range accurate.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::{derive, label, tags, SeedRoot};
    use crate::sampling::UnitGrid;

    #[test]
    fn ln_gamma_reference_values() {
        // Gamma(n) = (n-1)! for integers; Gamma(0.5) = sqrt(pi).
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((ln_gamma(10.5) - 13.940_625_219_403_763).abs() < 1e-9);
    }

    #[test]
    fn nb_pmf_matches_binomial_coefficient_form() {
        // Integer r: pmf(k) = C(k + r - 1, k) (1-p)^r p^k.
        let (r, p) = (3.0, 0.4);
        let choose = |n: u64, k: u64| -> f64 {
            (ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0)
                - ln_gamma((n - k) as f64 + 1.0))
                .exp()
        };
        for k in 0..10u64 {
            let direct = choose(k + 2, k) * (1.0f64 - p).powi(3) * p.powi(k as i32);
            let via_log = nb_log_pmf(r, p, k).exp();
            assert!((direct - via_log).abs() < 1e-12, "k={k}");
        }
        // The pmf sums to 1.
        let total: f64 = (0..200).map(|k| nb_log_pmf(r, p, k).exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nb_quantile_sane() {
        let q = nb_quantile(5.0, 0.5, 0.1);
        // Mean 5; the 90% quantile sits a few sd above.
        assert!(q >= 5 && q <= 20, "q {q}");
        let mut cdf = 0.0;
        for k in 0..=q {
            cdf += nb_log_pmf(5.0, 0.5, k).exp();
        }
        assert!(cdf >= 0.9);
    }

    #[test]
    fn laplace_diff_tail_matches_quadrature() {
        // Independent numeric route: integrate Pr[L1 > x + g] dF(L2 = x).
        let b = 2.0;
        for g in [0.0, 1.0, 5.0, 12.0] {
            let mut acc = 0.0;
            let step = 1e-3;
            let mut x: f64 = -60.0;
            while x < 60.0 {
                let dens = (-(x.abs()) / b).exp() / (2.0 * b);
                let z: f64 = x + g;
                let tail_l1 = if z >= 0.0 {
                    0.5 * (-z / b).exp()
                } else {
                    1.0 - 0.5 * (z / b).exp()
                };
                acc += dens * tail_l1 * step;
                x += step;
            }
            let closed = laplace_diff_tail(b, g);
            assert!((acc - closed).abs() < 1e-4, "g={g}: {acc} vs {closed}");
        }
    }

    #[test]
    fn random_distribution_is_normalized() {
        let space = UnitGrid::new(7).unwrap();
        let mut s = derive(&SeedRoot::from_u64(11), &label(&[(tags::GEN, 0)]));
        let d = random_distribution(space, &mut s, 2);
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
    }
}
