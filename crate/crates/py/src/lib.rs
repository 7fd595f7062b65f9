//! Python bindings for the gaterace toolkit.
//!
//! Vectors cross the boundary as tuples and configs as TOML text, so the
//! module has no Python-side dependencies.

use std::path::PathBuf;

use gaterace::camera::{Attitude, CameraModel, Pixel};
use gaterace::config::RunConfig;
use gaterace::control::feasibility_region;
use gaterace::corpus::{generate_corpus, read_ppm, write_ppm};
use gaterace::detect::{snake_gate_detect, GateDetection};
use gaterace::ekf::ImuInput;
use gaterace::imaging;
use gaterace::pose::{self, GateGeometry, PoseEstimate};
use gaterace::racesim::{self, SimLog};
use nalgebra::Vector3;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

type Xy = (f64, f64);
type Xyz = (f64, f64, f64);

fn err(e: gaterace::Error) -> PyErr {
    match e {
        gaterace::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn v3(p: Xyz) -> Vector3<f64> {
    Vector3::new(p.0, p.1, p.2)
}

fn t3(v: &Vector3<f64>) -> Xyz {
    (v.x, v.y, v.z)
}

fn px(p: Xy) -> Pixel {
    Pixel::new(p.0, p.1)
}

fn corners4(c: &[Pixel; 4]) -> Vec<Xy> {
    c.iter().map(|p| (p.x, p.y)).collect()
}

fn to_corners(c: Vec<Xy>) -> PyResult<[Pixel; 4]> {
    let arr: [Xy; 4] = c
        .try_into()
        .map_err(|_| PyValueError::new_err("expected four corners"))?;
    Ok(arr.map(px))
}

fn cfg_or_default(cfg: Option<&Config>) -> RunConfig {
    cfg.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Full run configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct Config {
    inner: RunConfig,
}

#[pymethods]
impl Config {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    /// Parse and validate TOML text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = RunConfig::from_toml(text, "<string>".as_ref()).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn violations(&self) -> Vec<String> {
        self.inner.violations()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn camera(&self) -> Camera {
        Camera {
            inner: self.inner.camera.model(),
        }
    }
}

/// RGB frame.
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: imaging::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: u32, height: u32) -> Self {
        Self {
            inner: imaging::Image::new(width, height),
        }
    }

    /// Build from packed RGB rows.
    #[staticmethod]
    fn from_bytes(width: u32, height: u32, data: &[u8]) -> PyResult<Self> {
        imaging::Image::from_raw(width, height, data.to_vec())
            .map(|inner| Self { inner })
            .ok_or_else(|| PyValueError::new_err("buffer length is not width * height * 3"))
    }

    #[staticmethod]
    fn read_ppm(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_ppm(&path).map_err(err)?,
        })
    }

    fn write_ppm(&self, path: PathBuf) -> PyResult<()> {
        write_ppm(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    fn pixel(&self, x: u32, y: u32) -> PyResult<(u8, u8, u8)> {
        if x >= self.inner.width || y >= self.inner.height {
            return Err(PyValueError::new_err("pixel outside the image"));
        }
        let [r, g, b] = self.inner.get(x, y);
        Ok((r, g, b))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.pixels)
    }
}

#[pyclass(name = "Detection", skip_from_py_object)]
struct Detection {
    inner: GateDetection,
}

#[pymethods]
impl Detection {
    #[getter]
    fn cf(&self) -> f64 {
        self.inner.cf
    }

    /// Refined corners: top-left, top-right, bottom-left, bottom-right.
    #[getter]
    fn corners(&self) -> Vec<Xy> {
        corners4(&self.inner.refined)
    }

    #[getter]
    fn square(&self) -> Vec<Xy> {
        corners4(&self.inner.square)
    }

    #[getter]
    fn raw(&self) -> Vec<Xy> {
        corners4(&self.inner.raw)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.centroid();
        format!("Detection(cf={:.3}, center=({:.1}, {:.1}))", self.inner.cf, c.x, c.y)
    }
}

#[pyclass(name = "Camera", from_py_object)]
#[derive(Clone)]
struct Camera {
    inner: CameraModel,
}

#[pymethods]
impl Camera {
    #[new]
    fn new() -> Self {
        Self {
            inner: CameraModel::default(),
        }
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.inner.width, self.inner.height)
    }

    /// Raw pixel of a camera-frame point, or None when behind or outside.
    fn project(&self, p: Xyz) -> Option<Xy> {
        self.inner.project(&v3(p)).map(|q| (q.x, q.y))
    }

    fn undistort(&self, raw: Xy) -> Xy {
        let q = self.inner.undistort_pixel(&px(raw));
        (q.x, q.y)
    }

    fn distort(&self, ideal: Xy) -> Xy {
        let q = self.inner.distort_pixel(&px(ideal));
        (q.x, q.y)
    }

    /// Unit camera-frame bearing through a raw pixel.
    fn bearing(&self, raw: Xy) -> Xyz {
        t3(&self.inner.bearing_from_raw_pixel(&px(raw)))
    }
}

/// Gate corners placed from a center, heading and side length.
#[pyclass(name = "Gate", from_py_object)]
#[derive(Clone)]
struct Gate {
    inner: GateGeometry,
}

#[pymethods]
impl Gate {
    #[new]
    #[pyo3(signature = (center, yaw, side = 1.0))]
    fn new(center: Xyz, yaw: f64, side: f64) -> Self {
        Self {
            inner: GateGeometry::from_placement(v3(center), yaw, side),
        }
    }

    #[getter]
    fn corners(&self) -> Vec<Xyz> {
        self.inner.corners.iter().map(t3).collect()
    }

    #[getter]
    fn center(&self) -> Xyz {
        t3(&self.inner.center())
    }
}

fn pose_out(p: PoseEstimate) -> (Xyz, f64) {
    (t3(&p.t), p.residual)
}

/// Detect gates in a frame; `seed` overrides the detector sampling seed.
#[pyfunction]
#[pyo3(signature = (image, config = None, seed = None))]
fn detect_gates(image: &PyImage, config: Option<&Config>, seed: Option<u64>) -> Vec<Detection> {
    let cfg = cfg_or_default(config);
    let mut params = cfg.detector;
    if let Some(s) = seed {
        params.seed = s;
    }
    snake_gate_detect(&image.inner, &params, &cfg.bounds)
        .into_iter()
        .map(|inner| Detection { inner })
        .collect()
}

/// Camera position from undistorted corner pixels and the attitude
/// `(phi, theta, psi)`; returns `(position, mean ray distance)`.
#[pyfunction]
fn ls_position(
    corners: Vec<Xy>,
    gate: &Gate,
    attitude: Xyz,
    camera: &Camera,
) -> PyResult<(Xyz, f64)> {
    let att = Attitude::new(attitude.0, attitude.1, attitude.2);
    pose::ls_position(&to_corners(corners)?, &gate.inner, &att, &camera.inner)
        .map(pose_out)
        .map_err(err)
}

/// Attitude-free camera position from the four corners.
#[pyfunction]
fn pnp_position(corners: Vec<Xy>, gate: &Gate, camera: &Camera) -> PyResult<(Xyz, f64)> {
    pose::pnp_position(&to_corners(corners)?, &gate.inner, &camera.inner)
        .map(pose_out)
        .map_err(err)
}

/// Drag-model position filter.
#[pyclass(name = "Ekf", skip_from_py_object)]
struct Ekf {
    inner: gaterace::ekf::Ekf,
}

#[pymethods]
impl Ekf {
    #[new]
    #[pyo3(signature = (position, config = None))]
    fn new(position: Xyz, config: Option<&Config>) -> Self {
        let cfg = cfg_or_default(config);
        Self {
            inner: gaterace::ekf::Ekf::new(v3(position), &cfg.ekf, cfg.drag),
        }
    }

    /// Propagate by `dt` with attitude, specific force and roll/pitch rates.
    #[pyo3(signature = (dt, attitude, accel, rates = (0.0, 0.0)))]
    fn predict(&mut self, dt: f64, attitude: Xyz, accel: Xyz, rates: Xy) {
        let u = ImuInput {
            phi: attitude.0,
            theta: attitude.1,
            psi: attitude.2,
            ax: accel.0,
            ay: accel.1,
            az: accel.2,
            p: rates.0,
            q: rates.1,
        };
        self.inner.predict(&u, dt);
    }

    /// Fuse a position fix; returns the position correction.
    fn update(&mut self, z: Xyz) -> PyResult<Xyz> {
        self.inner.update(&v3(z)).map(|d| t3(&d)).map_err(err)
    }

    #[getter]
    fn position(&self) -> Xyz {
        t3(&self.inner.state.position())
    }

    #[getter]
    fn vz(&self) -> f64 {
        self.inner.state.vz()
    }

    #[getter]
    fn bias(&self) -> Xyz {
        t3(&self.inner.state.bias())
    }

    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        let p = &self.inner.state.p;
        (0..p.nrows())
            .map(|i| p.row(i).iter().copied().collect())
            .collect()
    }
}

/// Start positions that reach the gate at forward speed `vx`:
/// `(xs, ys, feasible[iy][ix])`.
#[pyfunction]
#[pyo3(signature = (vx, config = None))]
fn feasibility(vx: f64, config: Option<&Config>) -> (Vec<f64>, Vec<f64>, Vec<Vec<bool>>) {
    let mut fc = cfg_or_default(config).feasibility_config();
    fc.vx = vx;
    let g = feasibility_region(&fc);
    (g.xs, g.ys, g.feasible)
}

#[pyclass(name = "RaceResult", skip_from_py_object)]
struct RaceResult {
    log: SimLog,
}

#[pymethods]
impl RaceResult {
    #[getter]
    fn completed(&self) -> bool {
        self.log.summary.completed
    }

    #[getter]
    fn gates_passed(&self) -> usize {
        self.log.summary.gates_passed
    }

    #[getter]
    fn avg_speed(&self) -> f64 {
        self.log.summary.avg_speed
    }

    #[getter]
    fn jumps(&self) -> Vec<f64> {
        self.log.summary.jumps.clone()
    }

    /// Summary as a JSON object.
    fn summary_json(&self) -> String {
        serde_json::to_string(&self.log.summary).expect("summary serializes")
    }

    /// Per-tick log in CSV form.
    fn csv(&self) -> String {
        let mut buf = Vec::new();
        self.log.write_csv(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Events, one JSON object per line.
    fn events(&self) -> String {
        let mut buf = Vec::new();
        self.log.write_events(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("events are utf-8")
    }
}

/// Fly the configured track once with vision in the loop.
#[pyfunction]
#[pyo3(signature = (config = None, seed = None))]
fn run_race(py: Python<'_>, config: Option<&Config>, seed: Option<u64>) -> PyResult<RaceResult> {
    let cfg = cfg_or_default(config);
    let track = cfg.track().map_err(err)?;
    let race = cfg.race_config();
    let seed = seed.unwrap_or(cfg.seed);
    py.detach(|| racesim::run_race(&track, &race, seed))
        .map(|log| RaceResult { log })
        .map_err(err)
}

/// Render `n` labeled frames; labels are `(gate_id, [corner or None; 4])`.
#[pyfunction]
#[pyo3(signature = (n, config = None, seed = None))]
#[allow(clippy::type_complexity)]
fn render_corpus(
    py: Python<'_>,
    n: usize,
    config: Option<&Config>,
    seed: Option<u64>,
) -> Vec<(PyImage, Vec<(usize, Vec<Option<Xy>>)>)> {
    let cfg = cfg_or_default(config);
    let seed = seed.unwrap_or(cfg.seed);
    let items = py.detach(|| {
        generate_corpus(&cfg.corpus.spec, &cfg.camera.model(), &cfg.bounds, n, seed)
    });
    items
        .into_iter()
        .map(|it| {
            let labels = it
                .labels
                .iter()
                .map(|l| {
                    let cs = l
                        .corners
                        .iter()
                        .map(|c| c.visible.then_some((c.px.x, c.px.y)))
                        .collect();
                    (l.gate_id, cs)
                })
                .collect();
            (PyImage { inner: it.image }, labels)
        })
        .collect()
}

#[pymodule]
fn gaterace_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<Detection>()?;
    m.add_class::<Camera>()?;
    m.add_class::<Gate>()?;
    m.add_class::<Ekf>()?;
    m.add_class::<RaceResult>()?;
    m.add_function(wrap_pyfunction!(detect_gates, m)?)?;
    m.add_function(wrap_pyfunction!(ls_position, m)?)?;
    m.add_function(wrap_pyfunction!(pnp_position, m)?)?;
    m.add_function(wrap_pyfunction!(feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(run_race, m)?)?;
    m.add_function(wrap_pyfunction!(render_corpus, m)?)?;
    m.add("GRAVITY", gaterace::GRAVITY)?;
    Ok(())
}
