//! Python bindings for the `nppsim` simulator.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ::nppsim::chacha::{self, ChaChaKey, NonceLedger, KEY_LEN, NONCE_LEN};
use ::nppsim::coverage::{self, GeoBoundingBox, GeoPoint, Orientation};
use ::nppsim::fedlearn::{self, Dataset, LocalUpdate, ModelWeights, Sample};
use ::nppsim::orchestrator::{self, report, SimConfig, SimulationReport};
use ::nppsim::qkd::{self, EvePolicy, GateDecision};
use ::nppsim::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::DimensionMismatch { .. }
        | Error::KeyExhausted { .. }
        | Error::NonceReuse
        | Error::Decoding(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn orientation(name: &str) -> PyResult<Orientation> {
    match name {
        "vertical" => Ok(Orientation::Vertical),
        "horizontal" => Ok(Orientation::Horizontal),
        other => Err(PyValueError::new_err(format!("unknown orientation {other:?}"))),
    }
}

fn fixed<const N: usize>(bytes: &[u8], what: &str) -> PyResult<[u8; N]> {
    bytes
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("{what} must be {N} bytes, got {}", bytes.len())))
}

/// Distance in meters between two (lat, lon) points.
#[pyfunction]
fn geo_distance(p1: (f64, f64), p2: (f64, f64)) -> PyResult<f64> {
    let a = GeoPoint::new(p1.0, p1.1).map_err(py_err)?;
    let b = GeoPoint::new(p2.0, p2.1).map_err(py_err)?;
    Ok(coverage::geo_distance(a, b))
}

#[pyfunction]
fn num_strips(width_m: f64, strip_width_m: f64) -> PyResult<usize> {
    coverage::num_strips(width_m, strip_width_m).map_err(py_err)
}

#[pyfunction]
fn total_distance(n_strips: usize, strip_length_m: f64, turn_distance_m: f64) -> PyResult<f64> {
    coverage::total_distance(n_strips, strip_length_m, turn_distance_m).map_err(py_err)
}

#[pyclass(frozen, get_all)]
struct CoveragePlan {
    strips: usize,
    strip_width_m: f64,
    waypoints: Vec<(f64, f64)>,
    total_distance_m: f64,
    width_m: f64,
    length_m: f64,
}

#[pymethods]
impl CoveragePlan {
    fn __repr__(&self) -> String {
        format!(
            "CoveragePlan(strips={}, waypoints={}, total_distance_m={:.3})",
            self.strips,
            self.waypoints.len(),
            self.total_distance_m
        )
    }
}

/// Lawnmower plan over the box spanned by south-west and north-east
/// (lat, lon) corners. Waypoints are local meters from the south-west corner.
#[pyfunction]
#[pyo3(signature = (south_west, north_east, strip_width_m, orientation="vertical", turn_distance_m=None))]
fn plan_lawnmower(
    south_west: (f64, f64),
    north_east: (f64, f64),
    strip_width_m: f64,
    orientation: &str,
    turn_distance_m: Option<f64>,
) -> PyResult<CoveragePlan> {
    let sw = GeoPoint::new(south_west.0, south_west.1).map_err(py_err)?;
    let ne = GeoPoint::new(north_east.0, north_east.1).map_err(py_err)?;
    let bbox = GeoBoundingBox::new(sw, ne).map_err(py_err)?;
    let plan = coverage::plan_lawnmower(&bbox, strip_width_m, self::orientation(orientation)?, turn_distance_m)
        .map_err(py_err)?;
    Ok(CoveragePlan {
        strips: plan.strips,
        strip_width_m: plan.strip_width_m,
        waypoints: plan.waypoints,
        total_distance_m: plan.total_distance_m,
        width_m: plan.width_m,
        length_m: plan.length_m,
    })
}

#[pyfunction]
fn chacha20_block<'py>(py: Python<'py>, key: &[u8], counter: u32, nonce: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let key: [u8; KEY_LEN] = fixed(key, "key")?;
    let nonce: [u8; NONCE_LEN] = fixed(nonce, "nonce")?;
    Ok(PyBytes::new(py, &chacha::chacha20_block(&key, counter, &nonce)))
}

/// Encrypts into a wire frame `0x01 || nonce || ciphertext`.
#[pyfunction]
fn chacha20_encrypt<'py>(py: Python<'py>, key: &[u8], nonce: &[u8], plaintext: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let k = ChaChaKey::new(fixed(key, "key")?, fixed(nonce, "nonce")?);
    let frame = NonceLedger::new().encrypt(&k, plaintext).map_err(py_err)?;
    Ok(PyBytes::new(py, &frame.to_bytes()))
}

#[pyfunction]
fn chacha20_decrypt<'py>(py: Python<'py>, key: &[u8], frame: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let frame = chacha::CipherFrame::from_bytes(frame).map_err(py_err)?;
    let k = ChaChaKey::new(fixed(key, "key")?, frame.nonce);
    Ok(PyBytes::new(py, &chacha::decrypt(&k, &frame).map_err(py_err)?))
}

#[pyfunction]
fn otp_xor<'py>(py: Python<'py>, message: &[u8], key: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    Ok(PyBytes::new(py, &qkd::otp_xor(message, key).map_err(py_err)?))
}

#[pyfunction]
fn qber(errors: usize, total: usize) -> PyResult<f64> {
    qkd::qber(errors, total).map_err(py_err)
}

#[pyclass(frozen, get_all)]
struct Bb84Result {
    qber: f64,
    errors: usize,
    checked: usize,
    sifted_fraction: f64,
    eve_information: f64,
    accepted: bool,
    key_bits: usize,
}

#[pymethods]
impl Bb84Result {
    fn __repr__(&self) -> String {
        format!(
            "Bb84Result(qber={:.4}, sifted_fraction={:.4}, eve_information={:.4}, accepted={}, key_bits={})",
            self.qber, self.sifted_fraction, self.eve_information, self.accepted, self.key_bits
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n_qubits, eve=0.0, flip=0.0, seed=0, abort_threshold=qkd::DEFAULT_ABORT_THRESHOLD))]
fn bb84(n_qubits: usize, eve: f64, flip: f64, seed: u64, abort_threshold: f64) -> PyResult<Bb84Result> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = EvePolicy::new(eve).map_err(py_err)?;
    let out = qkd::bb84_exchange(n_qubits, &policy, flip, &mut rng).map_err(py_err)?;
    let accepted = qkd::keygate(&out.estimate, abort_threshold) == GateDecision::Accept;
    Ok(Bb84Result {
        qber: out.estimate.ratio,
        errors: out.estimate.errors,
        checked: out.estimate.total,
        sifted_fraction: out.sifted_fraction(),
        eve_information: out.eve_information(),
        accepted,
        key_bits: if accepted { qkd::reconcile(&out).0.len() } else { 0 },
    })
}

/// Sample-weighted average of flat weight vectors given as
/// `[(values, n_samples), ...]`.
#[pyfunction]
fn fedavg(updates: Vec<(Vec<f64>, usize)>) -> PyResult<Vec<f64>> {
    let ups = updates
        .into_iter()
        .enumerate()
        .map(|(i, (values, n))| {
            let f = values.len().saturating_sub(1).max(1);
            let weights = ModelWeights::from_values(1, f, values).map_err(py_err)?;
            Ok(LocalUpdate {
                weights,
                n_samples: n,
                robot_id: i as u32,
                session_index: 0,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(fedlearn::fedavg(&ups).map_err(py_err)?.values)
}

/// Metrics of a softmax model (`classes x features` weights then biases)
/// on rows `x` with labels `y`. `roc_auc` is None for a single-class set.
#[pyfunction]
fn evaluate(
    values: Vec<f64>,
    classes: usize,
    features: usize,
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
) -> PyResult<BTreeMap<String, Option<f64>>> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y lengths differ"));
    }
    let w = ModelWeights::from_values(classes, features, values).map_err(py_err)?;
    let test = Dataset::new(
        x.into_iter()
            .zip(y)
            .map(|(features, label)| Sample { features, label })
            .collect(),
    );
    let (acc, f1, p, r, auc) = match fedlearn::evaluate(&w, &test) {
        Ok(m) => (m.accuracy, m.f1, m.precision, m.recall, Some(m.roc_auc)),
        Err(Error::RocAucUndefined(m)) => (m.accuracy, m.f1, m.precision, m.recall, None),
        Err(e) => return Err(py_err(e)),
    };
    Ok(BTreeMap::from([
        ("accuracy".to_string(), Some(acc)),
        ("f1".to_string(), Some(f1)),
        ("precision".to_string(), Some(p)),
        ("recall".to_string(), Some(r)),
        ("roc_auc".to_string(), auc),
    ]))
}

#[pyfunction]
fn default_config() -> String {
    SimConfig::default().to_json()
}

#[pyclass(frozen)]
struct Simulation {
    inner: SimulationReport,
}

#[pymethods]
impl Simulation {
    #[getter]
    fn sessions(&self) -> usize {
        self.inner.rounds.len()
    }

    #[getter]
    fn model_version(&self) -> u64 {
        self.inner.final_model.version
    }

    #[getter]
    fn final_weights(&self) -> Vec<f64> {
        self.inner.final_model.values.clone()
    }

    #[getter]
    fn plant_ids(&self) -> Vec<u32> {
        self.inner.plants.iter().map(|p| p.plant_id).collect()
    }

    /// Per-session metrics for one plant as a list of dicts.
    fn metrics(&self, plant_id: u32) -> Vec<BTreeMap<String, Option<f64>>> {
        self.inner
            .metrics_for(plant_id)
            .into_iter()
            .map(|m| {
                BTreeMap::from([
                    ("session".to_string(), Some(m.session as f64)),
                    ("accuracy".to_string(), Some(m.accuracy)),
                    ("f1".to_string(), Some(m.f1)),
                    ("precision".to_string(), Some(m.precision)),
                    ("recall".to_string(), Some(m.recall)),
                    ("roc_auc".to_string(), m.roc_auc),
                ])
            })
            .collect()
    }

    /// `(aborted, total)` key-exchange attempts over the run.
    fn gate_counts(&self) -> (usize, usize) {
        self.inner.gate_counts()
    }

    fn event_lines(&self, plant_id: u32) -> Vec<String> {
        self.inner
            .plants
            .iter()
            .filter(|p| p.plant_id == plant_id)
            .flat_map(|p| p.events.iter().map(|e| e.log_line()))
            .collect()
    }

    fn table(&self) -> String {
        let rows: Vec<_> = self.inner.rounds.iter().flat_map(|r| r.plant_metrics.clone()).collect();
        report::render_table(&rows)
    }

    fn write_report(&self, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        report::emit_report(&self.inner, &out_dir).map_err(py_err)
    }
}

/// Runs a full simulation from a JSON config (the built-in scenario when
/// omitted). `seed` overrides the config's master seed.
#[pyfunction]
#[pyo3(signature = (config_json=None, seed=None))]
fn run_simulation(py: Python<'_>, config_json: Option<&str>, seed: Option<u64>) -> PyResult<Simulation> {
    let mut cfg = match config_json {
        Some(text) => SimConfig::from_json(text).map_err(py_err)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let inner = py.detach(|| orchestrator::run_simulation(&cfg)).map_err(py_err)?;
    Ok(Simulation { inner })
}

#[pymodule(name = "nppsim")]
fn nppsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(geo_distance, m)?)?;
    m.add_function(wrap_pyfunction!(num_strips, m)?)?;
    m.add_function(wrap_pyfunction!(total_distance, m)?)?;
    m.add_function(wrap_pyfunction!(plan_lawnmower, m)?)?;
    m.add_function(wrap_pyfunction!(chacha20_block, m)?)?;
    m.add_function(wrap_pyfunction!(chacha20_encrypt, m)?)?;
    m.add_function(wrap_pyfunction!(chacha20_decrypt, m)?)?;
    m.add_function(wrap_pyfunction!(otp_xor, m)?)?;
    m.add_function(wrap_pyfunction!(qber, m)?)?;
    m.add_function(wrap_pyfunction!(bb84, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_class::<CoveragePlan>()?;
    m.add_class::<Bb84Result>()?;
    m.add_class::<Simulation>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
