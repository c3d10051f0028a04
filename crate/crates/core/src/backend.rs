//! Quantum execution: runs both circuits on a backend, races the run
//! against a timeout, and falls back to a SHAKE-256 derivation when the
//! backend fails or stalls. The outcome is always a [`QuantumResult`];
//! which path produced it is recorded in `device` / `algorithm`.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake256;

use crate::qsim::{self, Circuit, QsimError, ShotHistogram, QNUM_MODULUS};
use crate::sig::NONCE_LEN;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub const DEVICE_EMBEDDED: &str = "SV1-embedded";
pub const DEVICE_FALLBACK: &str = "local-fallback";
pub const ALGORITHM_SV1: &str = "ToyLWE-Braket-SV1";
pub const ALGORITHM_FALLBACK: &str = "ToyLWE-local-fallback";

const BELL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellVector {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl BellVector {
    /// The ideal |Φ⁺⟩ distribution, also used for degenerate fallback input.
    pub const PHI_PLUS: BellVector = BellVector {
        p00: 0.5,
        p01: 0.0,
        p10: 0.0,
        p11: 0.5,
    };

    pub fn from_array([p00, p01, p10, p11]: [f64; 4]) -> Self {
        Self { p00, p01, p10, p11 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.p00, self.p01, self.p10, self.p11]
    }

    /// Scales non-negative weights to sum to one; all-zero maps to [`Self::PHI_PLUS`].
    pub fn normalize(weights: [f64; 4]) -> Self {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Self::PHI_PLUS;
        }
        Self::from_array(weights.map(|w| w / total))
    }

    pub fn is_valid(&self) -> bool {
        let arr = self.to_array();
        arr.iter().all(|p| (0.0..=1.0).contains(p))
            && (arr.iter().sum::<f64>() - 1.0).abs() <= BELL_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumResult {
    pub q_num: u16,
    pub bell: BellVector,
    /// Circuit A counts; absent on the fallback path.
    pub hist_a: Option<ShotHistogram>,
    /// Circuit B counts; absent on the fallback path.
    pub hist_b: Option<ShotHistogram>,
    pub device: String,
    pub algorithm: String,
    pub duration_ms: u64,
    pub rng_seed: u64,
}

impl QuantumResult {
    pub fn is_fallback(&self) -> bool {
        self.device == DEVICE_FALLBACK
    }

    /// A result with no histograms, for badge and colour computations
    /// that only need `q_num` and the Bell vector.
    pub fn synthetic(q_num: u16, bell: BellVector) -> Self {
        Self {
            q_num,
            bell,
            hist_a: None,
            hist_b: None,
            device: DEVICE_EMBEDDED.into(),
            algorithm: ALGORITHM_SV1.into(),
            duration_ms: 0,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Simulation(#[from] QsimError),
    #[error("remote backend: {0}")]
    Remote(String),
    #[error("backend unavailable")]
    Unavailable,
}

impl From<reqwest::Error> for BackendError {
    fn from(e: reqwest::Error) -> Self {
        BackendError::Remote(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LocalSimulator,
    RemoteClient,
    AlwaysFail,
    Hanging,
    Delayed,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::LocalSimulator => "local_simulator",
            BackendKind::RemoteClient => "remote_client",
            BackendKind::AlwaysFail => "always_fail",
            BackendKind::Hanging => "hanging",
            BackendKind::Delayed => "delayed",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where circuits run. `AlwaysFail`, `Hanging` and `Delayed` are test doubles.
#[derive(Debug, Clone)]
pub enum QuantumBackend {
    LocalSimulator,
    Remote(RemoteClient),
    AlwaysFail,
    /// Never completes.
    Hanging,
    /// Local simulation that completes only after the given delay.
    Delayed(Duration),
}

impl QuantumBackend {
    pub fn kind(&self) -> BackendKind {
        match self {
            QuantumBackend::LocalSimulator => BackendKind::LocalSimulator,
            QuantumBackend::Remote(_) => BackendKind::RemoteClient,
            QuantumBackend::AlwaysFail => BackendKind::AlwaysFail,
            QuantumBackend::Hanging => BackendKind::Hanging,
            QuantumBackend::Delayed(_) => BackendKind::Delayed,
        }
    }

    /// Device id recorded on successful runs.
    pub fn device(&self) -> &str {
        match self {
            QuantumBackend::Remote(client) => &client.device_id,
            _ => DEVICE_EMBEDDED,
        }
    }

    pub async fn run(&self, circuit: &Circuit, seed: u64) -> Result<ShotHistogram, BackendError> {
        match self {
            QuantumBackend::LocalSimulator => Ok(qsim::run_circuit(circuit, seed)?),
            QuantumBackend::Remote(client) => client.run(circuit).await,
            QuantumBackend::AlwaysFail => Err(BackendError::Unavailable),
            QuantumBackend::Hanging => std::future::pending().await,
            QuantumBackend::Delayed(delay) => {
                tokio::time::sleep(*delay).await;
                Ok(qsim::run_circuit(circuit, seed)?)
            }
        }
    }
}

/// Inputs to one badge pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineRequest {
    pub username: String,
    pub rng_seed: u64,
    pub nonce: [u8; NONCE_LEN],
    pub timestamp_ms: u64,
}

/// Seed for the Bell circuit, decorrelated from the RNG circuit's seed.
pub fn bell_seed(rng_seed: u64) -> u64 {
    rng_seed.rotate_left(32) ^ 0x9E37_79B9_7F4A_7C15
}

/// Runs Circuit A then Circuit B within `timeout`. Never fails: a backend
/// error, malformed counts, or an expired timeout yields [`fallback_result`].
pub async fn execute_pipeline(
    req: &PipelineRequest,
    backend: &QuantumBackend,
    timeout: Duration,
) -> QuantumResult {
    let started = Instant::now();
    let angles = qsim::derive_rotation_angles(&req.username);
    let rng_circuit = Circuit::rng(&angles);
    let bell_circuit = Circuit::bell();

    let run = async {
        let hist_a = backend.run(&rng_circuit, req.rng_seed).await?;
        let hist_b = backend.run(&bell_circuit, bell_seed(req.rng_seed)).await?;
        let q_num = qsim::extract_qnum(&hist_a)?;
        let bell = BellVector::from_array(qsim::bell_probabilities(&hist_b)?);
        Ok::<_, BackendError>((hist_a, hist_b, q_num, bell))
    };

    let mut result = match tokio::time::timeout(timeout, run).await {
        Ok(Ok((hist_a, hist_b, q_num, bell))) => QuantumResult {
            q_num,
            bell,
            hist_a: Some(hist_a),
            hist_b: Some(hist_b),
            device: backend.device().to_owned(),
            algorithm: ALGORITHM_SV1.to_owned(),
            duration_ms: 0,
            rng_seed: req.rng_seed,
        },
        Ok(Err(err)) => {
            tracing::warn!(backend = %backend.kind(), error = %err, "quantum run failed, using fallback");
            fallback_result(&req.username, &req.nonce, req.timestamp_ms)
        }
        Err(_) => {
            tracing::warn!(backend = %backend.kind(), ?timeout, "quantum run timed out, using fallback");
            fallback_result(&req.username, &req.nonce, req.timestamp_ms)
        }
    };
    result.rng_seed = req.rng_seed;
    result.duration_ms = started.elapsed().as_millis() as u64;
    result
}

/// D = SHAKE-256(username ‖ be64(timestamp) ‖ nonce)[0..64];
/// q_num = (D[0]·256 + D[1]) mod 1001; bell = normalize(D[2..6]).
pub fn fallback_result(
    username: &str,
    nonce: &[u8; NONCE_LEN],
    timestamp_ms: u64,
) -> QuantumResult {
    let mut xof = Shake256::default();
    xof.update(username.as_bytes());
    xof.update(&timestamp_ms.to_be_bytes());
    xof.update(nonce);
    let mut d = [0u8; 64];
    xof.finalize_xof().read(&mut d);

    let q_num = ((u32::from(d[0]) << 8 | u32::from(d[1])) % QNUM_MODULUS) as u16;
    let bell = BellVector::normalize([d[2], d[3], d[4], d[5]].map(f64::from));
    QuantumResult {
        q_num,
        bell,
        hist_a: None,
        hist_b: None,
        device: DEVICE_FALLBACK.to_owned(),
        algorithm: ALGORITHM_FALLBACK.to_owned(),
        duration_ms: 0,
        rng_seed: 0,
    }
}

/// JSON bodies for the remote job-submit / poll contract.
pub mod wire {
    use super::*;

    /// `POST {endpoint}/tasks` body is a [`Circuit`]; this is the reply.
    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct SubmitResponse {
        pub task_id: String,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    pub enum TaskState {
        Queued,
        Running,
        Completed,
        Failed,
    }

    /// `GET {endpoint}/tasks/{task_id}` reply.
    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct TaskStatus {
        pub status: TaskState,
        #[serde(default)]
        pub counts: BTreeMap<String, u64>,
    }
}

/// HTTP client for a remote circuit-execution service.
#[derive(Clone)]
pub struct RemoteClient {
    endpoint: String,
    device_id: String,
    credentials: Option<String>,
    poll_interval: Duration,
    http: reqwest::Client,
}

impl fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteClient")
            .field("endpoint", &self.endpoint)
            .field("device_id", &self.device_id)
            .field(
                "credentials",
                &self.credentials.as_ref().map(|_| "<redacted>"),
            )
            .finish()
    }
}

impl RemoteClient {
    pub fn new(endpoint: impl Into<String>, device_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            device_id: device_id.into(),
            credentials: None,
            poll_interval: Duration::from_millis(250),
            http: reqwest::Client::new(),
        }
    }

    /// Sent as a bearer token on every request.
    pub fn with_credentials(mut self, token: impl Into<String>) -> Self {
        self.credentials = Some(token.into());
        self
    }

    pub fn with_poll_interval(mut self, interval: Duration) -> Self {
        self.poll_interval = interval;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn authorize(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.credentials {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }

    async fn run(&self, circuit: &Circuit) -> Result<ShotHistogram, BackendError> {
        let submitted: wire::SubmitResponse = self
            .authorize(self.http.post(format!("{}/tasks", self.endpoint)))
            .json(circuit)
            .send()
            .await?
            .error_for_status()?
            .json()
            .await?;
        let status_url = format!("{}/tasks/{}", self.endpoint, submitted.task_id);
        loop {
            let status: wire::TaskStatus = self
                .authorize(self.http.get(&status_url))
                .send()
                .await?
                .error_for_status()?
                .json()
                .await?;
            match status.status {
                wire::TaskState::Completed => {
                    let hist = ShotHistogram::from_counts(circuit.num_qubits, status.counts)?;
                    if hist.shots() != u64::from(circuit.shots) {
                        return Err(BackendError::Remote(format!(
                            "task {} returned {} shots, expected {}",
                            submitted.task_id,
                            hist.shots(),
                            circuit.shots
                        )));
                    }
                    return Ok(hist);
                }
                wire::TaskState::Failed => {
                    return Err(BackendError::Remote(format!(
                        "task {} failed",
                        submitted.task_id
                    )))
                }
                wire::TaskState::Queued | wire::TaskState::Running => {
                    tokio::time::sleep(self.poll_interval).await
                }
            }
        }
    }
}
