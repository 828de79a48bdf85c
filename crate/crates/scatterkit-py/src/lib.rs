//! Python bindings: phase-function evaluation and sampling, Mie reference
//! tables, phase fitting, slab rendering, and parameter estimation.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use scatterkit::fitting::{fit, FitFamily, FitProblem};
use scatterkit::inverse::{
    ingest_profiles, invert, InversePhaseFamily, InversionConfig, SlabGeometry,
};
use scatterkit::mie::{mie_mono, mie_poly, MieConfig};
use scatterkit::phase::{PhaseModel, TabulatedPhase};
use scatterkit::render::{render, SlabScene};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A normalized scattering phase function over the sphere (per steradian).
#[pyclass(name = "Phase")]
#[derive(Clone)]
struct PyPhase {
    model: PhaseModel,
}

#[pymethods]
impl PyPhase {
    #[staticmethod]
    fn isotropic() -> Self {
        Self { model: PhaseModel::Isotropic }
    }

    #[staticmethod]
    fn rayleigh() -> Self {
        Self { model: PhaseModel::Rayleigh }
    }

    #[staticmethod]
    fn hg(g: f64) -> PyResult<Self> {
        Ok(Self { model: PhaseModel::hg(g).map_err(err)? })
    }

    #[staticmethod]
    fn two_term_hg(g1: f64, g2: f64, w: f64) -> PyResult<Self> {
        Ok(Self { model: PhaseModel::two_term_hg(g1, g2, w).map_err(err)? })
    }

    /// exp(b0 + sum b_i mu^i) with b0 fixed by normalization; coeffs = (b1..bM).
    #[staticmethod]
    fn exponential(coeffs: Vec<f64>) -> PyResult<Self> {
        Ok(Self { model: PhaseModel::exponential(coeffs).normalize().map_err(err)? })
    }

    /// sum a_i mu^i rescaled to unit solid-angle integral; coeffs = (a0..aN).
    #[staticmethod]
    fn raw_polynomial(coeffs: Vec<f64>) -> PyResult<Self> {
        Ok(Self { model: PhaseModel::raw_polynomial(coeffs).normalize().map_err(err)? })
    }

    /// Linear interpolation over a tabulated (mu, density) grid.
    #[staticmethod]
    fn tabulated(mu: Vec<f64>, values: Vec<f64>) -> PyResult<Self> {
        let t = TabulatedPhase::new(mu, values, "python").map_err(err)?;
        Ok(Self { model: PhaseModel::Tabulated(t.normalize().map_err(err)?) })
    }

    fn eval(&self, mu: f64) -> PyResult<f64> {
        self.model.eval(mu).map_err(err)
    }

    fn log_eval(&self, mu: f64) -> PyResult<f64> {
        self.model.log_eval(mu).map_err(err)
    }

    fn asymmetry(&self) -> PyResult<f64> {
        self.model.asymmetry().map_err(err)
    }

    /// Inverse-CDF sample; returns (cos_theta, phi) for uniforms (u1, u2).
    fn sample(&self, u1: f64, u2: f64) -> PyResult<(f64, f64)> {
        let s = self.model.sampler().map_err(err)?;
        Ok(s.sample(u1, u2))
    }

    /// Uniform-cosine tabulation; returns (mu, densities).
    fn tabulate(&self, n: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let t = self.model.tabulate(n, "python").map_err(err)?;
        Ok((t.mu, t.values))
    }

    fn __repr__(&self) -> String {
        format!("Phase({:?})", self.model)
    }
}

/// Single-scattering reference table for spherical particles.
/// Returns {"mu", "values", "g", "qsca", "qext"}; sd > 0 averages over a
/// log-normal diameter distribution with scattering-cross-section weights.
#[pyfunction]
#[pyo3(signature = (diameter, sd=0.0, wavelength=0.6, n_particle=1.59, n_particle_imag=0.0, n_medium=1.33, angles=1801, nodes=21))]
#[allow(clippy::too_many_arguments)]
fn mie<'py>(
    py: Python<'py>,
    diameter: f64,
    sd: f64,
    wavelength: f64,
    n_particle: f64,
    n_particle_imag: f64,
    n_medium: f64,
    angles: usize,
    nodes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = MieConfig {
        diameter_mean: diameter,
        diameter_sd: sd,
        wavelength,
        n_particle: num_complex::Complex64::new(n_particle, n_particle_imag),
        n_medium,
        n_angles: angles,
        n_quad_sizes: nodes,
    };
    let r = if sd > 0.0 { mie_poly(&cfg) } else { mie_mono(diameter, &cfg) }.map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("mu", r.phase.mu)?;
    out.set_item("values", r.phase.values)?;
    out.set_item("g", r.g)?;
    out.set_item("qsca", r.qsca)?;
    out.set_item("qext", r.qext)?;
    Ok(out)
}

fn parse_family(s: &str) -> PyResult<FitFamily> {
    let norm = s.to_ascii_lowercase();
    if let Some(m) = norm.strip_prefix("exponential").or_else(|| norm.strip_prefix("exp")) {
        return Ok(FitFamily::Exponential(m.parse().map_err(err)?));
    }
    if let Some(n) = norm.strip_prefix("polynomial").or_else(|| norm.strip_prefix("poly")) {
        return Ok(FitFamily::RawPolynomial(n.parse().map_err(err)?));
    }
    match norm.as_str() {
        "hg" => Ok(FitFamily::Hg),
        "tthg" | "two-term-hg" => Ok(FitFamily::TwoTermHg),
        _ => Err(PyValueError::new_err(format!("unknown family {s:?}"))),
    }
}

/// Fits one family to a tabulated target by log-SAD with multi-start
/// Nelder-Mead. Returns {"family", "params", "sad", "per_restart_losses",
/// "failure_reason"}.
#[pyfunction]
#[pyo3(signature = (mu, values, family, restarts=16, seed=0))]
fn fit_phase<'py>(
    py: Python<'py>,
    mu: Vec<f64>,
    values: Vec<f64>,
    family: &str,
    restarts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let target = TabulatedPhase::new(mu, values, "python")
        .map_err(err)?
        .normalize()
        .map_err(err)?;
    let fam = parse_family(family)?;
    let report = fit(&FitProblem::new(target, fam, restarts, seed)).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("family", fam.label())?;
    out.set_item("params", report.best_params)?;
    out.set_item("sad", report.sad)?;
    out.set_item("per_restart_losses", report.per_restart_losses)?;
    out.set_item("failure_reason", report.failure_reason)?;
    Ok(out)
}

/// Renders a slab scene described in TOML. Returns {"x_mm", "intensity",
/// "variance", "escaped_front", "escaped_back", "absorbed", "scene_hash"}.
#[pyfunction]
#[pyo3(signature = (scene_toml, seed=None))]
fn render_scene<'py>(py: Python<'py>, scene_toml: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut scene = SlabScene::from_toml_str(scene_toml).map_err(err)?;
    if let Some(s) = seed {
        scene.seed = s;
    }
    let profile = render(&scene).map_err(err)?;
    let x: Vec<f64> = (0..profile.line.count).map(|i| profile.line.center_x(i)).collect();
    let out = PyDict::new_bound(py);
    out.set_item("x_mm", x)?;
    out.set_item("intensity", profile.pixels)?;
    out.set_item("variance", profile.variance)?;
    out.set_item("escaped_front", profile.stats.escaped_front)?;
    out.set_item("escaped_back", profile.stats.escaped_back)?;
    out.set_item("absorbed", profile.stats.absorbed)?;
    out.set_item("scene_hash", profile.scene_hash)?;
    Ok(out)
}

/// Estimates slab parameters from a profile manifest on disk (the same
/// format the CLI reads). Returns the full report as a JSON-compatible dict.
#[pyfunction]
#[pyo3(signature = (manifest_path, family="exp3", seed=0, thickness=1.0, beam_radius=0.2, max_bounces=1000, max_outer_iters=40, spp_schedule=None, delta_pool=None))]
#[allow(clippy::too_many_arguments)]
fn invert_profiles<'py>(
    py: Python<'py>,
    manifest_path: &str,
    family: &str,
    seed: u64,
    thickness: f64,
    beam_radius: f64,
    max_bounces: usize,
    max_outer_iters: usize,
    spp_schedule: Option<Vec<usize>>,
    delta_pool: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let observed = ingest_profiles(manifest_path).map_err(err)?;
    let fam = match family.to_ascii_lowercase().as_str() {
        "exp3" | "exponential3" => InversePhaseFamily::Exponential3,
        "tthg" | "two-term-hg" => InversePhaseFamily::TwoTermHg,
        other => return Err(PyValueError::new_err(format!("unknown family {other:?}"))),
    };
    let geometry = SlabGeometry {
        thickness,
        beam_radius,
        pixel_line: observed.profiles[0].line.clone(),
        max_bounces,
    };
    let mut cfg = InversionConfig { family: fam, seed, max_outer_iters, ..Default::default() };
    if let Some(s) = spp_schedule {
        cfg.spp_schedule = s;
    }
    if let Some(d) = delta_pool {
        cfg.delta_pool = d;
    }
    let report = invert(&observed, &geometry, &cfg).map_err(err)?;
    let json = serde_json::to_value(&report).map_err(err)?;
    json_to_pydict(py, &json)
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(a) => {
            let items: Vec<PyObject> =
                a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<_>>()?;
            items.into_py(py)
        }
        serde_json::Value::Object(_) => json_to_pydict(py, v)?.into_py(py),
    })
}

fn json_to_pydict<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new_bound(py);
    if let serde_json::Value::Object(map) = v {
        for (k, val) in map {
            dict.set_item(k, json_to_py(py, val)?)?;
        }
    }
    Ok(dict)
}

#[pymodule]
fn scatterkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhase>()?;
    m.add_function(wrap_pyfunction!(mie, m)?)?;
    m.add_function(wrap_pyfunction!(fit_phase, m)?)?;
    m.add_function(wrap_pyfunction!(render_scene, m)?)?;
    m.add_function(wrap_pyfunction!(invert_profiles, m)?)?;
    Ok(())
}
