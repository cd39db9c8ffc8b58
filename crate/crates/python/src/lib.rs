//! Python bindings for `corrinit-core`.
//!
//! Structured results (dynamics trajectories, propagation reports,
//! correlation profiles, training reports) are returned as plain Python
//! dicts and lists built from their JSON form.

use corrinit_core::correlation::{self, CorrelationProfile};
use corrinit_core::dynamics::{self, DynamicsConfig, StepMode, TwoSampleSystem};
use corrinit_core::init::{self, DecayProfile, LocationStrategy, Scaling, StrengthDraw};
use corrinit_core::propagation::{self, ClosedFormVariant, PropagationConfig, PropagationMode};
use corrinit_core::rng::stream_rng;
use corrinit_core::trainer::{
    make_teacher_task, train as train_net, DatasetSpec, InitMode, Loss, ToyNetConfig, TrainConfig,
};
use corrinit_core::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn decay_from(values: Option<Vec<f64>>) -> PyResult<DecayProfile> {
    match values {
        None => Ok(DecayProfile::default()),
        Some(v) if v.len() == 6 => Ok(DecayProfile {
            a1: v[0],
            a_sqrt2: v[1],
            a2: v[2],
            a_sqrt5: v[3],
            a_sqrt8: v[4],
            a_other: v[5],
        }),
        Some(v) => Err(PyValueError::new_err(format!("decay needs 6 values, got {}", v.len()))),
    }
}

fn scaling_from(s: &str) -> PyResult<Scaling> {
    match s {
        "as_written" | "as-written" => Ok(Scaling::AsWritten),
        "variance_corrected" | "variance-corrected" => Ok(Scaling::VarianceCorrected),
        other => Err(PyValueError::new_err(format!("unknown scaling `{other}`"))),
    }
}

fn strength_from(s: &str) -> PyResult<StrengthDraw> {
    match s {
        "uniform" => Ok(StrengthDraw::Uniform),
        "two_point" | "two-point" => Ok(StrengthDraw::TwoPoint),
        other => Err(PyValueError::new_err(format!("unknown strength draw `{other}`"))),
    }
}

fn propagation_mode_from(s: &str) -> PyResult<PropagationMode> {
    match s {
        "correlated" => Ok(PropagationMode::Correlated),
        "uncorrelated" => Ok(PropagationMode::Uncorrelated),
        other => Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    }
}

/// Recipe for one layer's correlated initialization.
#[pyclass(name = "InitSpec", module = "corrinit")]
struct PyInitSpec {
    inner: init::InitSpec,
}

#[pymethods]
impl PyInitSpec {
    #[new]
    #[pyo3(signature = (k=3, n_l=None, strategy="nei", alpha=0.05, scaling="as_written", strength="uniform", decay=None, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: usize,
        n_l: Option<usize>,
        strategy: &str,
        alpha: f64,
        scaling: &str,
        strength: &str,
        decay: Option<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = init::InitSpec {
            k,
            n_l: n_l.unwrap_or(k * k),
            strategy: strategy.parse::<LocationStrategy>().map_err(to_py_err)?,
            decay: decay_from(decay)?,
            alpha,
            scaling: scaling_from(scaling)?,
            strength: strength_from(strength)?,
            seed,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn n_l(&self) -> usize {
        self.inner.n_l
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.strategy.short_name()
    }

    fn strength_bound(&self) -> PyResult<f64> {
        self.inner.strength_bound().map_err(to_py_err)
    }

    fn layer_variance_factor(&self) -> PyResult<f64> {
        init::layer_variance_factor(&self.inner).map_err(to_py_err)
    }

    /// Draws one filter from stream `stream` of the spec's seed, as rows.
    #[pyo3(signature = (stream=0))]
    fn sample_filter(&self, stream: u64) -> PyResult<Vec<Vec<f64>>> {
        let mut rng = stream_rng(self.inner.seed, stream);
        let kernel = init::single_filter_corr_init(&self.inner, &mut rng).map_err(to_py_err)?;
        Ok(kernel.rows())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "InitSpec(k={}, n_l={}, strategy='{}', alpha={}, seed={})",
            self.inner.k, self.inner.n_l, self.inner.strategy, self.inner.alpha, self.inner.seed
        )
    }
}

/// A `[filters, channels, k, k]` weight tensor.
#[pyclass(name = "LayerTensor", module = "corrinit")]
struct PyLayerTensor {
    inner: corrinit_core::LayerTensor,
}

#[pymethods]
impl PyLayerTensor {
    #[new]
    fn new(shape: [usize; 4], data: Vec<f64>) -> PyResult<Self> {
        let inner = corrinit_core::LayerTensor::new(shape, data).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = corrinit_core::LayerTensor::from_json_str(text).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = corrinit_core::LayerTensor::load(path).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(to_py_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let [f, c, k, k2] = self.inner.shape();
        (f, c, k, k2)
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed()
    }

    /// Flat row-major weights.
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn kernel(&self, filter: usize, channel: usize) -> PyResult<Vec<f64>> {
        if filter >= self.inner.n_filters() || channel >= self.inner.in_channels() {
            return Err(PyValueError::new_err(format!(
                "kernel ({filter}, {channel}) out of range for shape {:?}",
                self.inner.shape()
            )));
        }
        Ok(self.inner.kernel(filter, channel).to_vec())
    }

    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    fn empirical_variance(&self) -> PyResult<f64> {
        init::empirical_layer_variance(&self.inner).map_err(to_py_err)
    }

    /// Mean Pearson coefficient per distance, as `(distance, mean, n_pairs)` rows.
    fn distance_profile(&self) -> PyResult<Vec<(f64, f64, usize)>> {
        let profile = correlation::distance_profile(&self.inner).map_err(to_py_err)?;
        Ok(profile_rows(&profile))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("LayerTensor(shape={:?})", self.inner.shape())
    }
}

fn profile_rows(profile: &CorrelationProfile) -> Vec<(f64, f64, usize)> {
    profile
        .entries
        .values()
        .map(|e| (e.distance, e.mean_pearson, e.n_pairs))
        .collect()
}

/// Correlated layer of `n_filters x in_channels` kernels. `spec.n_l` is
/// replaced by the layer's weight count.
#[pyfunction]
fn layer_init(n_filters: usize, in_channels: usize, spec: PyRef<'_, PyInitSpec>) -> PyResult<PyLayerTensor> {
    let spec = init::InitSpec {
        n_l: n_filters * in_channels * spec.inner.k * spec.inner.k,
        ..spec.inner
    };
    let inner = init::layer_init(n_filters, in_channels, &spec).map_err(to_py_err)?;
    Ok(PyLayerTensor { inner })
}

#[pyfunction]
#[pyo3(signature = (n_filters, in_channels, k=3, seed=0))]
fn uncorrelated_layer(n_filters: usize, in_channels: usize, k: usize, seed: u64) -> PyResult<PyLayerTensor> {
    let inner = init::uncorrelated_layer(n_filters, in_channels, k, seed).map_err(to_py_err)?;
    Ok(PyLayerTensor { inner })
}

#[pyfunction]
#[pyo3(signature = (k=3, decay=None))]
fn center_variance_factor(k: usize, decay: Option<Vec<f64>>) -> PyResult<f64> {
    Ok(init::center_variance_factor(&decay_from(decay)?, k))
}

#[pyfunction]
fn scaling_constant(k: usize, n_l: usize, var_w: f64) -> PyResult<f64> {
    init::scaling_constant(k, n_l, var_w).map_err(to_py_err)
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    correlation::pearson(&xs, &ys).map_err(to_py_err)
}

/// Gradient descent on the two-sample ReLU system. Returns the trajectory
/// as a dict with `records`, `converged`, `iterations_to_convergence`,
/// `zigzags` and `dead`.
#[pyfunction]
#[pyo3(signature = (d0=0.2, d1=0.1, w_star0=1.0, w0=0.5, w1=0.5, lam=0.05, mode="generic", max_iters=100_000, eps=1e-3))]
#[allow(clippy::too_many_arguments)]
fn run_dynamics<'py>(
    py: Python<'py>,
    d0: f64,
    d1: f64,
    w_star0: f64,
    w0: f64,
    w1: f64,
    lam: f64,
    mode: &str,
    max_iters: usize,
    eps: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = match mode {
        "generic" => StepMode::GenericGradient,
        "corrected" => StepMode::CorrectedRecurrence,
        "paper" => StepMode::PaperRecurrence,
        other => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    };
    let system = TwoSampleSystem::new(d0, d1, w_star0).map_err(to_py_err)?;
    let config = DynamicsConfig {
        max_iters,
        convergence_eps: eps,
        ..DynamicsConfig::new(system, [w0, w1], lam).with_mode(mode)
    };
    let trajectory = dynamics::run(&config).map_err(to_py_err)?;
    json_to_py(py, &trajectory)
}

/// Monte Carlo estimate of the output magnitude of `l` constant-input
/// convolutions of width `k`, with closed-form and exact references.
#[pyfunction]
#[pyo3(signature = (k, l, u=1.0, mode="uncorrelated", trials=100_000, seed=0))]
fn propagate<'py>(
    py: Python<'py>,
    k: usize,
    l: usize,
    u: f64,
    mode: &str,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = PropagationConfig {
        k,
        l,
        u,
        mode: propagation_mode_from(mode)?,
        trials,
        seed,
    };
    let report = py
        .detach(|| propagation::monte_carlo_expectation_par(&config))
        .map_err(to_py_err)?;
    json_to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (k, l, u=1.0, mode="uncorrelated", corrected=true))]
fn closed_form(k: usize, l: usize, u: f64, mode: &str, corrected: bool) -> PyResult<f64> {
    let variant = if corrected {
        ClosedFormVariant::Corrected
    } else {
        ClosedFormVariant::PaperAsWritten
    };
    Ok(propagation::closed_form(k, l, u, propagation_mode_from(mode)?, variant))
}

/// Exact `E[|w_1 + ... + w_k|]` for i.i.d. `U(-u, u)` weights.
#[pyfunction]
#[pyo3(signature = (k, u=1.0))]
fn exact_abs_sum_expectation(k: usize, u: f64) -> PyResult<f64> {
    propagation::exact_abs_sum_expectation(k, u).map_err(to_py_err)
}

/// Trains a student CNN on a teacher task and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (
    widths=vec![6, 6, 6, 6], init="correlated", spec=None, epochs=10, batch_size=16, lr=0.01,
    momentum=0.9, l2=0.0, size=16, smooth=1.5, n_train=256, n_eval=256, seed=0, teacher_seed=None,
    cross_entropy=false, outputs=1
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    widths: Vec<usize>,
    init: &str,
    spec: Option<PyRef<'_, PyInitSpec>>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    momentum: f64,
    l2: f64,
    size: usize,
    smooth: f64,
    n_train: usize,
    n_eval: usize,
    seed: u64,
    teacher_seed: Option<u64>,
    cross_entropy: bool,
    outputs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let template = spec.map(|s| s.inner).unwrap_or_default();
    let student_init = match init {
        "correlated" => InitMode::Correlated(template),
        "uncorrelated" => InitMode::Uncorrelated,
        other => return Err(PyValueError::new_err(format!("unknown init `{other}`"))),
    };
    let teacher = ToyNetConfig {
        widths: widths.clone(),
        outputs,
        init: InitMode::Correlated(template),
        seed: teacher_seed.unwrap_or(1000 + seed),
        ..ToyNetConfig::default()
    };
    let student = ToyNetConfig {
        init: student_init,
        seed,
        ..teacher.clone()
    };
    let data = DatasetSpec {
        n: n_train,
        height: size,
        width: size,
        smooth_len: smooth,
        seed,
        ..DatasetSpec::default()
    };
    let config = TrainConfig {
        epochs,
        batch_size,
        lr,
        momentum,
        l2_lambda: l2,
        loss: if cross_entropy { Loss::CrossEntropy } else { Loss::Quadratic },
        seed,
        ..TrainConfig::default()
    };
    let report = py
        .detach(|| {
            let (train_set, eval_set) = make_teacher_task(&data, n_eval, &teacher)?;
            train_net(&student, &train_set, &eval_set, &config)
        })
        .map_err(to_py_err)?;
    let json = report.to_json_string().map_err(to_py_err)?;
    py.import("json")?.call_method1("loads", (json,))
}

#[pymodule]
fn corrinit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CSV_SCHEMA_LINE", corrinit_core::CSV_SCHEMA_LINE)?;
    m.add_class::<PyInitSpec>()?;
    m.add_class::<PyLayerTensor>()?;
    m.add_function(wrap_pyfunction!(layer_init, m)?)?;
    m.add_function(wrap_pyfunction!(uncorrelated_layer, m)?)?;
    m.add_function(wrap_pyfunction!(center_variance_factor, m)?)?;
    m.add_function(wrap_pyfunction!(scaling_constant, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(run_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(exact_abs_sum_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
