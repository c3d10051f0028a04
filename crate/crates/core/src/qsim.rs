//! Exact state-vector simulation of the two fixed badge circuits.
//!
//! Bitstrings are written with qubit 0 as the most-significant (leftmost)
//! character, so basis index `i` renders as `format!("{i:0n$b}")`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub const MAX_QUBITS: usize = 4;
/// Shots for the 4-qubit RNG circuit.
pub const RNG_SHOTS: u32 = 100;
/// Shots for the 2-qubit Bell circuit.
pub const BELL_SHOTS: u32 = 200;
/// q_num values are reduced modulo this.
pub const QNUM_MODULUS: u32 = 1001;

const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QsimError {
    #[error("qubit count {0} outside 1..={MAX_QUBITS}")]
    QubitCount(usize),
    #[error("qubit index {index} out of range for {num_qubits}-qubit state")]
    IndexOutOfRange { index: usize, num_qubits: usize },
    #[error("CNOT control and target are both qubit {0}")]
    ControlEqualsTarget(usize),
    #[error("rotation angle is not finite")]
    NonFiniteAngle,
    #[error("circuit must take at least one shot")]
    ZeroShots,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("histogram key {0:?} is not a {1}-bit bitstring")]
    BadBitstring(String, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gate {
    #[serde(rename = "h")]
    Hadamard { target: usize },
    #[serde(rename = "cnot")]
    CNot { control: usize, target: usize },
    #[serde(rename = "ry")]
    RotY { target: usize, theta: f64 },
}

impl Gate {
    fn validate(&self, num_qubits: usize) -> Result<(), QsimError> {
        let check = |index: usize| {
            if index < num_qubits {
                Ok(())
            } else {
                Err(QsimError::IndexOutOfRange { index, num_qubits })
            }
        };
        match *self {
            Gate::Hadamard { target } => check(target),
            Gate::CNot { control, target } => {
                check(control)?;
                check(target)?;
                if control == target {
                    return Err(QsimError::ControlEqualsTarget(control));
                }
                Ok(())
            }
            Gate::RotY { target, theta } => {
                check(target)?;
                if !theta.is_finite() {
                    return Err(QsimError::NonFiniteAngle);
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// The all-zeros basis state |0…0⟩.
    pub fn zero(num_qubits: usize) -> Result<Self, QsimError> {
        if !(1..=MAX_QUBITS).contains(&num_qubits) {
            return Err(QsimError::QubitCount(num_qubits));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    /// The computational basis state labelled by `bits` (qubit 0 leftmost).
    pub fn basis(bits: &str) -> Result<Self, QsimError> {
        let n = bits.len();
        let index = parse_bitstring(bits, n)?;
        let mut state = Self::zero(n)?;
        state.amplitudes[0] = Complex64::new(0.0, 0.0);
        state.amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(state)
    }

    /// Builds a state from raw amplitudes, normalising them.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self, QsimError> {
        let len = amplitudes.len();
        if !len.is_power_of_two() {
            return Err(QsimError::QubitCount(0));
        }
        let num_qubits = len.trailing_zeros() as usize;
        if !(1..=MAX_QUBITS).contains(&num_qubits) {
            return Err(QsimError::QubitCount(num_qubits));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let amplitudes = amplitudes.into_iter().map(|a| a / norm).collect();
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Born-rule probabilities indexed by basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Bit mask selecting `qubit` inside a basis index.
    fn mask(&self, qubit: usize) -> usize {
        1 << (self.num_qubits - 1 - qubit)
    }
}

/// Applies `gate` to `state` and returns the transformed state.
pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector, QsimError> {
    gate.validate(state.num_qubits)?;
    let mut next = state.clone();
    let amps = &mut next.amplitudes;
    match *gate {
        Gate::Hadamard { target } => {
            let m = state.mask(target);
            for i in (0..amps.len()).filter(|i| i & m == 0) {
                let (a0, a1) = (amps[i], amps[i | m]);
                amps[i] = (a0 + a1) * FRAC_1_SQRT_2;
                amps[i | m] = (a0 - a1) * FRAC_1_SQRT_2;
            }
        }
        Gate::CNot { control, target } => {
            let (mc, mt) = (state.mask(control), state.mask(target));
            for i in (0..amps.len()).filter(|i| i & mc != 0 && i & mt == 0) {
                amps.swap(i, i | mt);
            }
        }
        Gate::RotY { target, theta } => {
            let m = state.mask(target);
            let (s, c) = (theta / 2.0).sin_cos();
            for i in (0..amps.len()).filter(|i| i & m == 0) {
                let (a0, a1) = (amps[i], amps[i | m]);
                amps[i] = a0 * c - a1 * s;
                amps[i | m] = a0 * s + a1 * c;
            }
        }
    }
    debug_assert!((next.norm_sqr() - 1.0).abs() <= NORM_TOLERANCE * 10.0);
    Ok(next)
}

/// Per-qubit Ry angles seeded from a username.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationAngles(pub [f64; 4]);

impl RotationAngles {
    pub const ZERO: RotationAngles = RotationAngles([0.0; 4]);
}

/// θ_i = π·(code(username[i mod len]) mod 128)/128; an empty username gives all zeros.
pub fn derive_rotation_angles(username: &str) -> RotationAngles {
    let chars: Vec<char> = username.chars().collect();
    if chars.is_empty() {
        return RotationAngles::ZERO;
    }
    let mut thetas = [0.0; 4];
    for (i, theta) in thetas.iter_mut().enumerate() {
        let code = u32::from(chars[i % chars.len()]) % 128;
        *theta = PI * f64::from(code) / 128.0;
    }
    RotationAngles(thetas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub num_qubits: usize,
    pub gates: Vec<Gate>,
    pub shots: u32,
}

impl Circuit {
    /// Circuit A: H on every qubit, CNOT chain 0→1→2→3, then Ry(θ_i) per qubit.
    pub fn rng(angles: &RotationAngles) -> Self {
        let mut gates: Vec<Gate> = (0..4).map(|target| Gate::Hadamard { target }).collect();
        gates.extend((0..3).map(|q| Gate::CNot {
            control: q,
            target: q + 1,
        }));
        gates.extend(
            angles
                .0
                .iter()
                .enumerate()
                .map(|(target, &theta)| Gate::RotY { target, theta }),
        );
        Self {
            num_qubits: 4,
            gates,
            shots: RNG_SHOTS,
        }
    }

    /// Circuit B: H(0), CNOT(0→1), preparing |Φ⁺⟩.
    pub fn bell() -> Self {
        Self {
            num_qubits: 2,
            gates: vec![
                Gate::Hadamard { target: 0 },
                Gate::CNot {
                    control: 0,
                    target: 1,
                },
            ],
            shots: BELL_SHOTS,
        }
    }

    pub fn with_shots(mut self, shots: u32) -> Self {
        self.shots = shots;
        self
    }

    pub fn validate(&self) -> Result<(), QsimError> {
        if !(1..=MAX_QUBITS).contains(&self.num_qubits) {
            return Err(QsimError::QubitCount(self.num_qubits));
        }
        if self.shots == 0 {
            return Err(QsimError::ZeroShots);
        }
        self.gates
            .iter()
            .try_for_each(|g| g.validate(self.num_qubits))
    }

    /// Final pre-measurement state starting from |0…0⟩.
    pub fn final_state(&self) -> Result<StateVector, QsimError> {
        self.validate()?;
        self.gates
            .iter()
            .try_fold(StateVector::zero(self.num_qubits)?, |s, g| {
                apply_gate(&s, g)
            })
    }
}

/// Measurement counts keyed by bitstring.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShotHistogram {
    counts: BTreeMap<String, u64>,
}

impl ShotHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a histogram, checking every key is an `num_qubits`-bit string.
    pub fn from_counts<I, K>(num_qubits: usize, counts: I) -> Result<Self, QsimError>
    where
        I: IntoIterator<Item = (K, u64)>,
        K: Into<String>,
    {
        let mut hist = Self::new();
        for (key, count) in counts {
            let key = key.into();
            parse_bitstring(&key, num_qubits)?;
            if count > 0 {
                *hist.counts.entry(key).or_insert(0) += count;
            }
        }
        Ok(hist)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn get(&self, bits: &str) -> u64 {
        self.counts.get(bits).copied().unwrap_or(0)
    }

    pub fn shots(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.shots() == 0
    }

    /// Width of the stored bitstrings, if any are present.
    pub fn width(&self) -> Option<usize> {
        self.counts.keys().next().map(String::len)
    }

    /// Most frequent bitstring; ties go to the lexicographically smallest.
    pub fn mode(&self) -> Option<&str> {
        // BTreeMap iterates in ascending key order, so a strict `>` keeps the first maximum.
        let mut best: Option<(&str, u64)> = None;
        for (k, &c) in &self.counts {
            if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
                best = Some((k, c));
            }
        }
        best.map(|(k, _)| k)
    }

    fn record(&mut self, index: usize, num_qubits: usize) {
        *self
            .counts
            .entry(format!("{index:0num_qubits$b}"))
            .or_insert(0) += 1;
    }
}

pub(crate) fn parse_bitstring(bits: &str, num_qubits: usize) -> Result<usize, QsimError> {
    if bits.len() != num_qubits || !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(QsimError::BadBitstring(bits.to_owned(), num_qubits));
    }
    usize::from_str_radix(bits, 2).map_err(|_| QsimError::BadBitstring(bits.to_owned(), num_qubits))
}

/// Runs `circuit` from |0…0⟩ and samples `circuit.shots` outcomes from the
/// Born distribution with a ChaCha20 stream seeded by `rng_seed`.
pub fn run_circuit(circuit: &Circuit, rng_seed: u64) -> Result<ShotHistogram, QsimError> {
    let state = circuit.final_state()?;
    let probs = state.probabilities();
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let last_nonzero = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);

    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let mut hist = ShotHistogram::new();
    for _ in 0..circuit.shots {
        let u: f64 = rng.random::<f64>() * acc;
        let index = cumulative
            .iter()
            .zip(&probs)
            .position(|(&c, &p)| p > 0.0 && u < c)
            .unwrap_or(last_nonzero);
        hist.record(index, circuit.num_qubits);
    }
    Ok(hist)
}

/// q_num = int(mode, 2) mod 1001.
pub fn extract_qnum(hist: &ShotHistogram) -> Result<u16, QsimError> {
    let top = hist.mode().ok_or(QsimError::EmptyHistogram)?;
    let value = u64::from_str_radix(top, 2)
        .map_err(|_| QsimError::BadBitstring(top.to_owned(), top.len()))?;
    Ok((value % u64::from(QNUM_MODULUS)) as u16)
}

/// Empirical [P(00), P(01), P(10), P(11)] of a 2-qubit histogram.
pub fn bell_probabilities(hist: &ShotHistogram) -> Result<[f64; 4], QsimError> {
    let shots = hist.shots();
    if shots == 0 {
        return Err(QsimError::EmptyHistogram);
    }
    if let Some(w) = hist.width().filter(|&w| w != 2) {
        return Err(QsimError::BadBitstring(
            hist.counts.keys().next().cloned().unwrap_or_default(),
            w,
        ));
    }
    let total = shots as f64;
    Ok(["00", "01", "10", "11"].map(|k| hist.get(k) as f64 / total))
}
