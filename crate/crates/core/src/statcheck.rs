//! Randomness-quality checks over shot histograms and q_num samples.

use serde::{Deserialize, Serialize};

use crate::backend::bell_seed;
use crate::qsim::{self, Circuit, QsimError, RotationAngles, ShotHistogram};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatError {
    #[error("need at least two bins, got {0}")]
    TooFewBins(usize),
    #[error("histogram outcome {0:?} does not fit in {1} bins")]
    OutcomeOutOfRange(String, usize),
    #[error("no samples")]
    Empty,
    #[error(transparent)]
    Qsim(#[from] QsimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of `hist` against the uniform distribution over
/// `bins` outcomes, where each bitstring names bin `int(bits, 2)`.
pub fn chi_square_uniformity(hist: &ShotHistogram, bins: usize) -> Result<ChiSquare, StatError> {
    if bins < 2 {
        return Err(StatError::TooFewBins(bins));
    }
    let shots = hist.shots();
    if shots == 0 {
        return Err(StatError::Empty);
    }
    let mut observed = vec![0u64; bins];
    for (bits, &count) in hist.counts() {
        let idx = usize::from_str_radix(bits, 2)
            .ok()
            .filter(|&i| i < bins)
            .ok_or_else(|| StatError::OutcomeOutOfRange(bits.clone(), bins))?;
        observed[idx] += count;
    }
    let expected = shots as f64 / bins as f64;
    let statistic = observed
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let dof = bins - 1;
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

/// Upper-tail probability of a chi-square variate with `dof` degrees of freedom.
pub fn chi_square_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(dof as f64 / 2.0, x / 2.0)
}

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_q domain: a > 0, x >= 0");
    if x == 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

const EPS: f64 = 1e-15;
const MAX_ITER: usize = 10_000;

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Most-common-value min-entropy: −log2(max empirical frequency).
pub fn min_entropy_estimate(samples: &[u16]) -> Result<f64, StatError> {
    if samples.is_empty() {
        return Err(StatError::Empty);
    }
    let mut counts = std::collections::HashMap::new();
    for &s in samples {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let max = *counts.values().max().expect("non-empty");
    Ok(-(max as f64 / samples.len() as f64).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellSymmetry {
    pub p00: f64,
    pub p11: f64,
    /// P(01) + P(10); zero for a noiseless simulator.
    pub cross_mass: f64,
}

pub fn bell_symmetry_report(hist_b: &ShotHistogram) -> Result<BellSymmetry, StatError> {
    let [p00, p01, p10, p11] = qsim::bell_probabilities(hist_b)?;
    Ok(BellSymmetry {
        p00,
        p11,
        cross_mass: p01 + p10,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub shots: u32,
    pub seed: u64,
    pub rng_uniformity: ChiSquare,
    pub bell: BellSymmetry,
    pub qnum_runs: usize,
    pub qnum_min_entropy_bits: f64,
}

/// Circuit A with θ = 0 and Circuit B at `shots` each, plus the min-entropy
/// of q_num across `qnum_runs` standard 100-shot Circuit A runs.
pub fn run_report(shots: u32, seed: u64, qnum_runs: usize) -> Result<StatsReport, StatError> {
    let rng = Circuit::rng(&RotationAngles::ZERO);
    let hist_a = qsim::run_circuit(&rng.clone().with_shots(shots), seed)?;
    let hist_b = qsim::run_circuit(&Circuit::bell().with_shots(shots), bell_seed(seed))?;
    let qnums = (0..qnum_runs as u64)
        .map(|i| {
            let h = qsim::run_circuit(&rng, seed.wrapping_add(1 + i))?;
            qsim::extract_qnum(&h)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StatsReport {
        shots,
        seed,
        rng_uniformity: chi_square_uniformity(&hist_a, 16)?,
        bell: bell_symmetry_report(&hist_b)?,
        qnum_runs,
        qnum_min_entropy_bits: min_entropy_estimate(&qnums)?,
    })
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        format!(
            "shots: {}\nseed: {}\ncircuit A (theta=0) chi-square: {:.6} (dof {}), p = {:.6}\n\
             circuit B: P(00) = {:.6}, P(11) = {:.6}, cross mass = {:.6}\n\
             q_num min-entropy over {} runs: {:.6} bits\n",
            self.shots,
            self.seed,
            self.rng_uniformity.statistic,
            self.rng_uniformity.dof,
            self.rng_uniformity.p_value,
            self.bell.p00,
            self.bell.p11,
            self.bell.cross_mass,
            self.qnum_runs,
            self.qnum_min_entropy_bits,
        )
    }
}
