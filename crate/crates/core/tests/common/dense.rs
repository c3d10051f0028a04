//! Dense-matrix reference simulator: every gate becomes a full 2^n × 2^n
//! unitary built from Kronecker products, qubit 0 as the leftmost factor.

use num_complex::Complex64 as C;

use qsign_core::qsim::{Circuit, Gate};

pub type Mat = Vec<Vec<C>>;

fn c(re: f64) -> C {
    C::new(re, 0.0)
}

fn kron(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn identity() -> Mat {
    vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)]]
}

/// Embeds single-qubit operators; qubit 0 is the leftmost Kronecker factor.
fn embed(n: usize, ops: &[(usize, Mat)]) -> Mat {
    let mut out: Mat = vec![vec![c(1.0)]];
    for q in 0..n {
        let op = ops
            .iter()
            .find(|(t, _)| *t == q)
            .map(|(_, m)| m.clone())
            .unwrap_or_else(identity);
        out = kron(&out, &op);
    }
    out
}

pub fn unitary(n: usize, gate: &Gate) -> Mat {
    let h = 1.0 / 2f64.sqrt();
    match *gate {
        Gate::Hadamard { target } => {
            embed(n, &[(target, vec![vec![c(h), c(h)], vec![c(h), c(-h)]])])
        }
        Gate::RotY { target, theta } => {
            let (s, co) = (theta / 2.0).sin_cos();
            embed(n, &[(target, vec![vec![c(co), c(-s)], vec![c(s), c(co)]])])
        }
        Gate::CNot { control, target } => {
            let p0 = vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(0.0)]];
            let p1 = vec![vec![c(0.0), c(0.0)], vec![c(0.0), c(1.0)]];
            let x = vec![vec![c(0.0), c(1.0)], vec![c(1.0), c(0.0)]];
            add(
                &embed(n, &[(control, p0)]),
                &embed(n, &[(control, p1), (target, x)]),
            )
        }
    }
}

pub fn mat_vec(m: &Mat, v: &[C]) -> Vec<C> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn oracle_final_state(circuit: &Circuit) -> Vec<C> {
    let mut v = vec![c(0.0); 1 << circuit.num_qubits];
    v[0] = c(1.0);
    for g in &circuit.gates {
        v = mat_vec(&unitary(circuit.num_qubits, g), &v);
    }
    v
}
