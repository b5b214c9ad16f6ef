//! Python bindings. Matrices cross the boundary as nested lists `[[f64; 3]; 3]`,
//! vectors as `[f64; 3]`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kgas_core::cloud::{self, Gaussian3D};
use kgas_core::fisher::FisherParams;
use kgas_core::metrics::{self, S3imParams};
use kgas_core::pipeline::{self, ExperimentConfig};
use kgas_core::render::{self, Camera as CoreCamera, ImageRGBA};
use kgas_core::so3::{self, AxisAngle, Mat3, RotationMatrix, Vec3};
use kgas_core::uid::{self, DetectParams, PointSet};

type M3 = [[f64; 3]; 3];

fn err(e: kgas_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_mat(m: M3) -> Mat3 {
    Mat3::from_fn(|i, j| m[i][j])
}

fn from_mat(m: &Mat3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn to_vec(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn from_vec(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[pyclass(frozen, from_py_object, module = "kgas")]
#[derive(Clone, Copy)]
struct Rotation(RotationMatrix);

#[pymethods]
impl Rotation {
    /// Validates orthonormality and a positive determinant.
    #[new]
    fn new(matrix: M3) -> PyResult<Self> {
        RotationMatrix::new(to_mat(matrix)).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(RotationMatrix::identity())
    }

    /// Rodrigues map of a rotation vector.
    #[staticmethod]
    fn exp(w: [f64; 3]) -> Self {
        Self(so3::exp_so3(&AxisAngle::from_rotation_vector(&to_vec(w))))
    }

    /// `(w, x, y, z)`; normalized before conversion.
    #[staticmethod]
    fn from_quaternion(q: [f64; 4]) -> Self {
        Self(RotationMatrix::from_quaternion(q))
    }

    fn log(&self) -> [f64; 3] {
        from_vec(&so3::log_so3(&self.0).rotation_vector())
    }

    fn quaternion(&self) -> [f64; 4] {
        self.0.to_quaternion()
    }

    fn matrix(&self) -> M3 {
        from_mat(self.0.matrix())
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        from_vec(&self.0.rotate(&to_vec(v)))
    }

    fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    fn __mul__(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }

    fn __repr__(&self) -> String {
        format!("Rotation({:?})", self.matrix())
    }
}

/// Proper SVD `m = U diag(s) Vᵀ` with `U, V` in SO(3); returns `(U, s, V)`.
#[pyfunction]
fn proper_svd(m: M3) -> (M3, [f64; 3], M3) {
    let d = so3::proper_svd(&to_mat(m));
    (from_mat(d.u.matrix()), d.s, from_mat(d.v.matrix()))
}

#[pyclass(frozen, module = "kgas")]
struct MatrixFisher(FisherParams);

#[pymethods]
impl MatrixFisher {
    #[new]
    fn new(f: M3) -> PyResult<Self> {
        FisherParams::new(to_mat(f)).map(Self).map_err(err)
    }

    fn parameter(&self) -> M3 {
        from_mat(self.0.matrix())
    }

    fn singular_values(&self) -> [f64; 3] {
        self.0.singular_values()
    }

    fn mode(&self) -> Rotation {
        Rotation(self.0.mode())
    }

    fn log_normalizer(&self) -> PyResult<f64> {
        self.0.log_normalizer().map_err(err)
    }

    fn density(&self, r: &Rotation) -> PyResult<f64> {
        self.0.density(&r.0).map_err(err)
    }

    fn nll(&self, r: &Rotation) -> PyResult<f64> {
        self.0.nll(&r.0).map_err(err)
    }

    fn nll_grad(&self, r: &Rotation) -> PyResult<M3> {
        self.0.nll_grad(&r.0).map(|g| from_mat(&g)).map_err(err)
    }

    /// Per-axis concentrations `(s2+s3, s3+s1, s1+s2)`.
    fn concentrations(&self) -> [f64; 3] {
        self.0.concentration_profile().kappas
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<Rotation>> {
        let draws = py.detach(|| self.0.sample(seed, n)).map_err(err)?;
        Ok(draws.into_iter().map(Rotation).collect())
    }
}

#[pyclass(frozen, from_py_object, module = "kgas")]
#[derive(Clone, Copy)]
struct Gaussian(Gaussian3D);

#[pymethods]
impl Gaussian {
    #[new]
    #[pyo3(signature = (position, scale, opacity, color, rotation = None))]
    fn new(
        position: [f64; 3],
        scale: [f64; 3],
        opacity: f64,
        color: [f64; 3],
        rotation: Option<Rotation>,
    ) -> PyResult<Self> {
        let r = rotation.map_or(RotationMatrix::identity(), |r| r.0);
        Gaussian3D::new(to_vec(position), r, to_vec(scale), opacity, color).map(Self).map_err(err)
    }

    #[getter]
    fn position(&self) -> [f64; 3] {
        from_vec(&self.0.position)
    }

    #[getter]
    fn rotation(&self) -> Rotation {
        Rotation(self.0.rotation)
    }

    #[getter]
    fn scale(&self) -> [f64; 3] {
        from_vec(&self.0.scale)
    }

    #[getter]
    fn opacity(&self) -> f64 {
        self.0.opacity
    }

    #[getter]
    fn color(&self) -> [f64; 3] {
        self.0.color
    }

    fn covariance(&self) -> M3 {
        from_mat(&self.0.covariance())
    }

    /// `R diag(|f| ⊙ s)² Rᵀ`.
    fn adjusted_covariance(&self, factor: [f64; 3]) -> M3 {
        from_mat(&self.0.adjusted_covariance(factor))
    }

    fn sample_offset(&self, factor: [f64; 3], seed: u64) -> [f64; 3] {
        from_vec(&cloud::density_perceptual_sample(&self.0, factor, seed))
    }

    fn clone_with_motion(&self, factor: [f64; 3], mode: &Rotation, seed: u64) -> Self {
        Self(cloud::clone_with_motion(&self.0, factor, &mode.0, seed))
    }

    fn __repr__(&self) -> String {
        format!("Gaussian(position={:?}, scale={:?}, opacity={})", self.position(), self.scale(), self.0.opacity)
    }
}

#[pyclass(frozen, skip_from_py_object, module = "kgas")]
#[derive(Clone, Copy)]
struct Camera(CoreCamera);

#[pymethods]
impl Camera {
    #[staticmethod]
    fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> PyResult<Self> {
        CoreCamera::look_at(to_vec(eye), to_vec(target), to_vec(up), focal, width, height).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        render::load_camera(path).map(Self).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }
}

/// Premultiplied RGB, alpha and depth in row-major order.
#[pyclass(frozen, module = "kgas")]
struct Image(ImageRGBA);

#[pymethods]
impl Image {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        render::read_image(path).map(Self).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    fn rgb(&self) -> Vec<[f64; 3]> {
        self.0.rgb.clone()
    }

    fn alpha(&self) -> Vec<f64> {
        self.0.alpha.clone()
    }

    fn depth(&self) -> Vec<f64> {
        self.0.depth.clone()
    }

    /// Writes the PPM plus its mask and depth siblings.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        render::write_image_set(&self.0, path).map_err(err)
    }
}

#[pyfunction]
fn render_gaussians(py: Python<'_>, gaussians: Vec<Gaussian>, camera: &Camera) -> Image {
    let gs: Vec<Gaussian3D> = gaussians.iter().map(|g| g.0).collect();
    let cam = camera.0;
    Image(py.detach(|| render::render(&gs, &cam)))
}

#[pyfunction]
fn ssim(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::ssim(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn psnr(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::psnr(&a.0, &b.0).map_err(err)
}

#[pyfunction]
fn color_loss(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::color_loss(&a.0, &b.0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, b, seed = 0, patches = 10, kernel = 4, stride = 4))]
fn s3im(a: &Image, b: &Image, seed: u64, patches: usize, kernel: usize, stride: usize) -> PyResult<f64> {
    metrics::s3im(&a.0, &b.0, S3imParams { patches, kernel, stride }, seed).map_err(err)
}

/// Indices of points whose normal differs from a neighbor's by more than
/// `threshold` radians.
#[pyfunction]
#[pyo3(signature = (points, k = 16, threshold = 30f64.to_radians()))]
fn detect(points: Vec<[f64; 3]>, k: usize, threshold: f64) -> PyResult<Vec<usize>> {
    let set = PointSet::new(points.into_iter().map(to_vec).collect()).map_err(err)?;
    uid::detect(&set, DetectParams::new(k, threshold)).map(|r| r.flagged).map_err(err)
}

/// Writes a synthetic scene's files into `out`.
#[pyfunction]
#[pyo3(signature = (name, out, seed = 0))]
fn scene_gen(name: &str, out: PathBuf, seed: u64) -> PyResult<()> {
    pipeline::scene_gen(name, seed).and_then(|s| s.write(out)).map_err(err)
}

/// Runs the densification loop on a named scene and returns the manifest JSON.
#[pyfunction]
#[pyo3(signature = (scene, output, iterations = None, seed = 0))]
fn run_scene(py: Python<'_>, scene: &str, output: PathBuf, iterations: Option<usize>, seed: u64) -> PyResult<String> {
    let mut cfg = ExperimentConfig::for_scene(scene, output);
    cfg.seed = seed;
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    run(py, cfg)
}

/// Runs the loop from a TOML config file and returns the manifest JSON.
#[pyfunction]
fn run_config(py: Python<'_>, path: PathBuf) -> PyResult<String> {
    run(py, ExperimentConfig::load(path).map_err(err)?)
}

fn run(py: Python<'_>, cfg: ExperimentConfig) -> PyResult<String> {
    py.detach(|| pipeline::run_pipeline(&cfg)).map(|out| out.manifest.to_json()).map_err(err)
}

#[pymodule]
fn kgas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Rotation>()?;
    m.add_class::<MatrixFisher>()?;
    m.add_class::<Gaussian>()?;
    m.add_class::<Camera>()?;
    m.add_class::<Image>()?;
    m.add_function(wrap_pyfunction!(proper_svd, m)?)?;
    m.add_function(wrap_pyfunction!(render_gaussians, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(color_loss, m)?)?;
    m.add_function(wrap_pyfunction!(s3im, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(scene_gen, m)?)?;
    m.add_function(wrap_pyfunction!(run_scene, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
