//! Python bindings: the pose math, metrics and the file-based pipeline
//! (dataset → training → index → retrieval), plus a reusable `Retriever`
//! handle for repeated queries. Structured results cross the boundary as
//! JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use poseret_core::dataset::{
    build_reference_poses, generate_dataset, read_jsonl, write_jsonl, DatasetConfig,
    ReferenceSetDesign, ViewingSphere,
};
use poseret_core::experiment::{evaluate_queries, EvalConditions};
use poseret_core::index::{load_index, save_index, ReferenceIndex};
use poseret_core::pose::{EulerPose, Quat};
use poseret_core::train::{load_checkpoint, save_checkpoint, EncoderPair, TrainConfig};

fn py_err(e: poseret_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Unit quaternion (w, x, y, z) of the pose given as azimuth/elevation/
/// in-plane angles in radians.
#[pyfunction]
fn euler_to_quat(azimuth: f64, elevation: f64, inplane: f64) -> (f64, f64, f64, f64) {
    let q = poseret_core::pose::euler_to_quat(&EulerPose::new(azimuth, elevation, inplane));
    (q.w, q.x, q.y, q.z)
}

/// Geodesic distance (radians) between two quaternions given as
/// (w, x, y, z) tuples.
#[pyfunction]
fn geodesic_distance(q1: (f64, f64, f64, f64), q2: (f64, f64, f64, f64)) -> f64 {
    let mk = |q: (f64, f64, f64, f64)| Quat::new(q.0, q.1, q.2, q.3);
    poseret_core::pose::geodesic_distance(&mk(q1), &mk(q2))
}

/// Geodesic error in degrees between two poses given as
/// (azimuth, elevation, inplane) tuples in radians.
#[pyfunction]
fn pose_error_deg(pred: (f64, f64, f64), gt: (f64, f64, f64)) -> f64 {
    let mk = |p: (f64, f64, f64)| EulerPose::new(p.0, p.1, p.2);
    poseret_core::metrics::pose_error_deg(&mk(pred), &mk(gt))
}

/// Maximum bounding-box corner deviation n for noise scale beta = 1 − IoU_min.
#[pyfunction]
fn max_corner_deviation(w: f64, h: f64, beta: f64) -> PyResult<f64> {
    poseret_core::augment::max_corner_deviation(w, h, beta).map_err(py_err)
}

/// ACC_π/6, ACC_π/18 and median error of a list of errors in degrees.
#[pyfunction]
fn compute_metrics(errors_deg: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let m = poseret_core::metrics::compute_metrics(&errors_deg).map_err(py_err)?;
    Ok((m.acc_pi6, m.acc_pi18, m.med_err_deg))
}

/// Generate a synthetic dataset. `config_json` holds a DatasetConfig
/// (missing fields take defaults); returns the sample count written as
/// JSON Lines.
#[pyfunction]
fn generate_dataset_jsonl(config_json: &str, out_path: &str) -> PyResult<usize> {
    let cfg: DatasetConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let samples = generate_dataset(&cfg).map_err(py_err)?;
    write_jsonl(out_path, &samples).map_err(py_err)?;
    Ok(samples.len())
}

/// Train the encoder pair on a JSONL dataset and write a checkpoint.
/// Returns the per-epoch mean loss. `config_json` holds a TrainConfig.
#[pyfunction]
fn train(config_json: &str, data_path: &str, model_path: &str) -> PyResult<Vec<f64>> {
    let cfg: TrainConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let samples = read_jsonl(data_path).map_err(py_err)?;
    let outcome = poseret_core::train::train(&samples, &cfg).map_err(py_err)?;
    save_checkpoint(model_path, &outcome.encoders, &cfg).map_err(py_err)?;
    Ok(outcome.loss_history)
}

/// Embed a reference set and write a frozen index. `design` is one of
/// traindb/coarsedb/finedb, `backend` linear/kdtree. Returns the row count.
#[pyfunction]
fn build_index(
    model_path: &str,
    data_path: &str,
    design: &str,
    backend: &str,
    out_path: &str,
) -> PyResult<usize> {
    let (encoders, _) = load_checkpoint(model_path).map_err(py_err)?;
    let samples = read_jsonl(data_path).map_err(py_err)?;
    let design = ReferenceSetDesign {
        kind: design.parse().map_err(py_err)?,
        renderings_per_pose: 1,
    };
    let refs = build_reference_poses(
        &design,
        &samples,
        &ViewingSphere::default(),
        encoders.feat_dim(),
    )
    .map_err(py_err)?;
    let index =
        poseret_core::index::build_index(&refs, &encoders.render, backend.parse().map_err(py_err)?)
            .map_err(py_err)?;
    save_index(out_path, &index).map_err(py_err)?;
    Ok(index.len())
}

/// Evaluate retrieval accuracy of a model/index pair on a JSONL query set.
/// Returns the report as a JSON string (rows plus weighted averages).
#[pyfunction]
#[pyo3(signature = (model_path, index_path, queries_path, level = "L0", beta_test = 0.0, eval_seed = 9000))]
fn evaluate(
    model_path: &str,
    index_path: &str,
    queries_path: &str,
    level: &str,
    beta_test: f64,
    eval_seed: u64,
) -> PyResult<String> {
    let (encoders, _) = load_checkpoint(model_path).map_err(py_err)?;
    let index = load_index(index_path).map_err(py_err)?;
    let queries = read_jsonl(queries_path).map_err(py_err)?;
    let conditions = EvalConditions {
        occlusion_level: level.parse().map_err(py_err)?,
        beta_test,
        eval_seed,
    };
    let report = evaluate_queries(&encoders, &index, &queries, &conditions).map_err(py_err)?;
    let weighted: serde_json::Map<String, serde_json::Value> = report
        .levels()
        .into_iter()
        .filter_map(|l| {
            report
                .weighted(l)
                .map(|m| (l.to_string(), serde_json::json!(m)))
        })
        .collect();
    serde_json::to_string(&serde_json::json!({ "rows": report.rows, "weighted": weighted }))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A loaded encoder pair plus frozen reference index for repeated queries.
#[pyclass]
struct Retriever {
    encoders: EncoderPair,
    index: ReferenceIndex,
}

#[pymethods]
impl Retriever {
    #[new]
    fn new(model_path: &str, index_path: &str) -> PyResult<Self> {
        let (encoders, _) = load_checkpoint(model_path).map_err(py_err)?;
        let index = load_index(index_path).map_err(py_err)?;
        Ok(Self { encoders, index })
    }

    /// Retrieve the nearest reference pose for a raw camera feature vector.
    /// Returns ((azimuth, elevation, inplane) in radians, L2 distance,
    /// source id).
    fn query(&self, camera_feat: Vec<f64>) -> PyResult<((f64, f64, f64), f64, u64)> {
        let hit = poseret_core::index::query(&self.index, &camera_feat, &self.encoders.camera)
            .map_err(py_err)?;
        Ok((
            (hit.pose.azimuth, hit.pose.elevation, hit.pose.inplane),
            hit.distance,
            hit.source_id,
        ))
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.index.dim()
    }

    #[getter]
    fn feat_dim(&self) -> usize {
        self.encoders.feat_dim()
    }
}

#[pymodule]
fn poseret(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(euler_to_quat, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(pose_error_deg, m)?)?;
    m.add_function(wrap_pyfunction!(max_corner_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(build_index, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Retriever>()?;
    Ok(())
}
