//! Python module `bsde_lab`.

use std::sync::Arc;

use clap::Parser;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use bsde_lab::analysis as an;
use bsde_lab::cli::{execute, Cli};
use bsde_lab::generator::{self as gn, CustomGenerator, GeneratorRegistry, GeneratorSpec};
use bsde_lab::modulus::{self as md, ModulusSpec, Tabulated, TransformKind};
use bsde_lab::oracle::{compare_to_oracle, OracleInstance, OracleKind};
use bsde_lab::paths;
use bsde_lab::solver::{self as sv, BasisSpec, PicardConfig, PicardInit, TerminalSpec};
use bsde_lab::LabError;

fn err(e: LabError) -> PyErr {
    match e {
        LabError::Parameter(_) | LabError::Dimension(_) | LabError::Domain(_) | LabError::Config(_) => {
            PyValueError::new_err(e.to_string())
        }
        LabError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn callback(func: Py<PyAny>, k: usize) -> impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync {
    move |t, b, y, z, out| {
        let vals = Python::attach(|py| {
            func.call1(py, (t, b.to_vec(), y.to_vec(), z.to_vec()))
                .ok()
                .and_then(|r| r.bind(py).extract::<Vec<f64>>().ok())
        });
        // a failing callback poisons the output so the solver reports a non-finite value
        match vals {
            Some(v) if v.len() == k => out.copy_from_slice(&v),
            _ => out.fill(f64::NAN),
        }
    }
}

#[pyclass(frozen, module = "bsde_lab")]
struct PathEnsemble(paths::PathEnsemble);

#[pymethods]
impl PathEnsemble {
    #[new]
    #[pyo3(signature = (paths, steps, dim=1, horizon=1.0, seed=0, antithetic=false))]
    fn new(paths: usize, steps: usize, dim: usize, horizon: f64, seed: u64, antithetic: bool) -> PyResult<Self> {
        paths::PathEnsemble::generate_with(paths, steps, dim, horizon, seed, antithetic).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        paths::PathEnsemble::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn paths(&self) -> usize {
        self.0.paths()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.grid().steps()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.grid().horizon()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed()
    }

    fn times(&self) -> Vec<f64> {
        self.0.grid().times()
    }

    /// `B_{t_i}` on path `m`.
    fn value(&self, m: usize, i: usize) -> PyResult<Vec<f64>> {
        if m >= self.0.paths() || i > self.0.grid().steps() {
            return Err(PyValueError::new_err("path or step index out of range"));
        }
        Ok(self.0.value(m, i).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "PathEnsemble(paths={}, steps={}, dim={}, horizon={}, seed={})",
            self.0.paths(),
            self.0.grid().steps(),
            self.0.dim(),
            self.0.grid().horizon(),
            self.0.seed()
        )
    }
}

#[pyclass(frozen, module = "bsde_lab")]
struct Modulus(ModulusSpec);

#[pymethods]
impl Modulus {
    #[staticmethod]
    #[pyo3(signature = (mu, domain_cap=100.0))]
    fn linear(mu: f64, domain_cap: f64) -> PyResult<Self> {
        ModulusSpec::linear(mu, domain_cap).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (c, alpha, domain_cap=100.0))]
    fn power(c: f64, alpha: f64, domain_cap: f64) -> PyResult<Self> {
        ModulusSpec::power(c, alpha, domain_cap).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (p, delta=None, domain_cap=100.0))]
    fn example1_h(p: f64, delta: Option<f64>, domain_cap: f64) -> PyResult<Self> {
        match delta {
            Some(d) => ModulusSpec::example1_h(p, d, domain_cap),
            None => ModulusSpec::example1_h_default(p, domain_cap),
        }
        .map(Self)
        .map_err(err)
    }

    #[staticmethod]
    fn tabulated(u: Vec<f64>, v: Vec<f64>) -> PyResult<Self> {
        Tabulated::new(u, v).map(|t| Self(ModulusSpec::tabulated(t))).map_err(err)
    }

    #[staticmethod]
    fn concave_majorant(samples: Vec<(f64, f64)>) -> PyResult<Self> {
        md::concave_majorant(&samples).map(Self).map_err(err)
    }

    #[getter]
    fn domain_cap(&self) -> f64 {
        self.0.domain_cap
    }

    fn __call__(&self, u: f64) -> PyResult<f64> {
        self.0.eval(u).map_err(err)
    }

    fn power_root(&self, r: f64) -> PyResult<Self> {
        md::transform_modulus(&self.0, TransformKind::PowerRoot { r }).map(|o| Self(o.modulus)).map_err(err)
    }

    fn h1star_to_h1(&self, p: f64) -> PyResult<Self> {
        md::transform_modulus(&self.0, TransformKind::H1StarToH1 { p }).map(|o| Self(o.modulus)).map_err(err)
    }

    fn h1pp_to_h1(&self, p: f64, q: f64) -> PyResult<Self> {
        md::transform_modulus(&self.0, TransformKind::H1ppToH1 { p, q }).map(|o| Self(o.modulus)).map_err(err)
    }

    #[pyo3(signature = (grid_size=1000, tol=1e-9))]
    fn check_shape<'py>(&self, py: Python<'py>, grid_size: usize, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let s = md::check_shape(&self.0, grid_size, tol).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("nondecreasing", s.is_nondecreasing)?;
        out.set_item("concave", s.is_concave)?;
        out.set_item("zero_at_zero", s.zero_at_zero)?;
        out.set_item("positive_on_positive", s.positive_on_positive)?;
        out.set_item("worst_violation", s.worst_violation)?;
        out.set_item("admissible", s.is_admissible())?;
        Ok(out)
    }

    /// `"divergent"`, `"convergent"` or `"inconclusive"`.
    #[pyo3(signature = (weight_exponent=1.0, u0=None, decades=8))]
    fn osgood(&self, weight_exponent: f64, u0: Option<f64>, decades: usize) -> PyResult<&'static str> {
        let u0 = u0.unwrap_or(self.0.domain_cap.min(1.0));
        md::osgood_classify(&self.0, weight_exponent, u0, decades).map(|r| r.verdict.as_str()).map_err(err)
    }

    #[pyo3(signature = (grid_size=10000))]
    fn linear_growth(&self, grid_size: usize) -> PyResult<f64> {
        md::linear_growth_coefficient(&self.0, grid_size).map_err(err)
    }
}

#[pyclass(frozen, module = "bsde_lab")]
struct Generator(GeneratorSpec);

#[pymethods]
impl Generator {
    #[staticmethod]
    #[pyo3(signature = (k=1, d=1))]
    fn zero(k: usize, d: usize) -> PyResult<Self> {
        GeneratorSpec::zero(k, d).map(Self).map_err(err)
    }

    /// `g = a y + c` in one dimension of `y`.
    #[staticmethod]
    #[pyo3(signature = (a, c=0.0, d=1))]
    fn linear(a: f64, c: f64, d: usize) -> PyResult<Self> {
        GeneratorSpec::scalar_linear(a, c, d).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (p=2.0, delta=0.1353352832366127, d=1))]
    fn example1(p: f64, delta: f64, d: usize) -> PyResult<Self> {
        GeneratorSpec::example1(p, delta, d).map(Self).map_err(err)
    }

    /// `func(t, b, y, z) -> list[float]` of length `k`; `z` is row-major `k x d`.
    #[staticmethod]
    #[pyo3(signature = (name, func, k=1, d=1, lipschitz_z=None))]
    fn custom(name: String, func: Py<PyAny>, k: usize, d: usize, lipschitz_z: Option<f64>) -> PyResult<Self> {
        let cg = CustomGenerator { name, func: Arc::new(callback(func, k)), lipschitz_z };
        GeneratorSpec::custom(cg, k, d).map(Self).map_err(err)
    }

    fn __call__(&self, t: f64, b: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.eval(t, &b, &y, &z).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }

    #[pyo3(signature = (modulus, p=2.0, count=20000, horizon=1.0, seed=0))]
    fn check_h1<'py>(
        &self,
        py: Python<'py>,
        modulus: &Modulus,
        p: f64,
        count: usize,
        horizon: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut s = gn::Sampler::new(count, horizon, seed);
        s.tol = self.0.check_tolerance().max(modulus.0.as_tabulated().map_or(0.0, |_| 1e-6));
        let r = py.detach(|| gn::check_h1(&self.0, &modulus.0, p, &s)).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("max_ratio", r.max_ratio)?;
        out.set_item("passed", r.passed)?;
        Ok(out)
    }

    #[pyo3(signature = (count=20000, horizon=1.0, seed=0))]
    fn lipschitz_z(&self, py: Python<'_>, count: usize, horizon: f64, seed: u64) -> PyResult<(f64, Option<f64>)> {
        let s = gn::Sampler::new(count, horizon, seed);
        let r = py.detach(|| gn::estimate_lipschitz_z(&self.0, &s)).map_err(err)?;
        Ok((r.sampled, r.analytic))
    }

    /// `(estimate, std_error)` of `E (int |g(t,0,0)| dt)^p`.
    #[pyo3(signature = (ensemble, p=2.0))]
    fn h3(&self, py: Python<'_>, ensemble: &PathEnsemble, p: f64) -> PyResult<(f64, f64)> {
        let r = py.detach(|| gn::check_h3(&self.0, &ensemble.0, p)).map_err(err)?;
        Ok((r.estimate, r.std_error))
    }
}

#[pyclass(frozen, module = "bsde_lab")]
struct Terminal(TerminalSpec);

#[pymethods]
impl Terminal {
    #[staticmethod]
    fn coordinate(j: usize) -> Self {
        Self(TerminalSpec::Coordinate(j))
    }

    #[staticmethod]
    fn square_norm() -> Self {
        Self(TerminalSpec::SquareNorm)
    }

    #[staticmethod]
    fn constant(value: Vec<f64>) -> Self {
        Self(TerminalSpec::Constant(value))
    }
}

#[pyclass(frozen, module = "bsde_lab")]
struct Solution(sv::DiscreteSolution);

#[pymethods]
impl Solution {
    #[getter]
    fn paths(&self) -> usize {
        self.0.paths()
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    fn times(&self) -> Vec<f64> {
        self.0.grid().times()
    }

    fn y(&self, m: usize, i: usize) -> PyResult<Vec<f64>> {
        if m >= self.0.paths() || i > self.0.grid().steps() {
            return Err(PyValueError::new_err("path or step index out of range"));
        }
        Ok(self.0.y(m, i).to_vec())
    }

    fn z(&self, m: usize, i: usize) -> PyResult<Vec<f64>> {
        if m >= self.0.paths() || i >= self.0.grid().steps() {
            return Err(PyValueError::new_err("path or step index out of range"));
        }
        Ok(self.0.z(m, i).to_vec())
    }

    /// Path average of `y` at `t_0`.
    fn y0(&self) -> Vec<f64> {
        let k = self.0.k();
        let mut acc = vec![0.0; k];
        for m in 0..self.0.paths() {
            for (a, v) in acc.iter_mut().zip(self.0.y(m, 0)) {
                *a += v;
            }
        }
        acc.iter().map(|a| a / self.0.paths() as f64).collect()
    }

    /// `(S^p norm, M^p norm)`.
    #[pyo3(signature = (p=2.0))]
    fn norms(&self, p: f64) -> PyResult<(f64, f64)> {
        an::lp_norms(&self.0, p).map(|n| (n.sp, n.mp)).map_err(err)
    }

    /// `(dy, dz)` as raw p-th moments.
    #[pyo3(signature = (other, p=2.0))]
    fn distance(&self, other: &Solution, p: f64) -> PyResult<(f64, f64)> {
        an::picard_distance(&self.0, &other.0, p).map(|d| (d.dy, d.dz)).map_err(err)
    }

    #[pyo3(signature = (path, max_paths=100))]
    fn write_csv(&self, path: &str, max_paths: usize) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.0.write_csv(std::io::BufWriter::new(f), max_paths).map_err(err)
    }
}

#[pyclass(frozen, get_all, module = "bsde_lab")]
struct PicardReport {
    iterations: usize,
    converged: bool,
    dist_y: Vec<f64>,
    dist_z: Vec<f64>,
    sp_norm: Vec<f64>,
    warnings: Vec<String>,
}

/// Picard iteration; returns `(Solution, PicardReport)`.
#[pyfunction]
#[pyo3(signature = (
    generator, terminal, ensemble, *, p=2.0, tol=1e-4, max_iter=25, degree=3, ridge=None,
    init=None, split=None, deterministic=true
))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    generator: &Generator,
    terminal: &Terminal,
    ensemble: &PathEnsemble,
    p: f64,
    tol: f64,
    max_iter: usize,
    degree: usize,
    ridge: Option<f64>,
    init: Option<Vec<f64>>,
    split: Option<f64>,
    deterministic: bool,
) -> PyResult<(Solution, PicardReport)> {
    let cfg = PicardConfig {
        basis: BasisSpec::new(degree, ridge).map_err(err)?,
        p,
        tol,
        max_iter,
        init: init.map_or(PicardInit::Zero, PicardInit::ConstantField),
        split,
        deterministic_reduction: deterministic,
    };
    let (sol, rep) = py.detach(|| sv::picard_solve(&generator.0, &terminal.0, &ensemble.0, &cfg)).map_err(err)?;
    let report = PicardReport {
        iterations: rep.iterations(),
        converged: rep.converged,
        dist_y: rep.rows.iter().map(|r| r.dist_y).collect(),
        dist_z: rep.rows.iter().map(|r| r.dist_z).collect(),
        sp_norm: rep.rows.iter().map(|r| r.sp_norm).collect(),
        warnings: rep.warnings,
    };
    Ok((Solution(sol), report))
}

/// Errors against a closed form: `kind` is `"coordinate"`, `"square"` or `"linear"`.
#[pyfunction]
#[pyo3(signature = (solution, ensemble, kind, j=0, a=0.0, c=0.0, v=1.0, p=2.0))]
#[allow(clippy::too_many_arguments)]
fn oracle_errors<'py>(
    py: Python<'py>,
    solution: &Solution,
    ensemble: &PathEnsemble,
    kind: &str,
    j: usize,
    a: f64,
    c: f64,
    v: f64,
    p: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match kind {
        "coordinate" => OracleKind::MartingaleCoordinate { j },
        "square" => OracleKind::MartingaleSquare,
        "linear" => OracleKind::LinearDrift { a, c, v },
        other => return Err(PyValueError::new_err(format!("unknown oracle `{other}`"))),
    };
    let inst = OracleInstance::new(kind, ensemble.0.grid().horizon(), ensemble.0.dim()).map_err(err)?;
    let e = compare_to_oracle(&solution.0, &inst, &ensemble.0, p).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("sp_error", e.sp_error)?;
    out.set_item("z_rms_error", e.z_rms_error)?;
    out.set_item("oracle_sp", e.oracle_sp)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (
    *, p=2.0, lambda_=1.0, horizon=1.0, a=0.0, k_prime_p=2.0, k_doubleprime_p=2.0,
    c1=None, c2=None, c3=None, terminal_moment=0.0, h3_moment=0.0
))]
#[allow(clippy::too_many_arguments)]
fn constants<'py>(
    py: Python<'py>,
    p: f64,
    lambda_: f64,
    horizon: f64,
    a: f64,
    k_prime_p: f64,
    k_doubleprime_p: f64,
    c1: Option<f64>,
    c2: Option<f64>,
    c3: Option<f64>,
    terminal_moment: f64,
    h3_moment: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cb = an::compute_constants(&an::ConstantInputs {
        p,
        lambda: lambda_,
        horizon,
        a,
        k_prime_p,
        k_doubleprime_p,
        c1,
        c2,
        c3,
        terminal_moment,
        h3_moment,
    })
    .map_err(err)?;
    let out = PyDict::new(py);
    for (name, value) in cb.entries() {
        out.set_item(name, value)?;
    }
    Ok(out)
}

/// `(times, phi)` with `phi[n][i] = phi_n(times[i])`.
#[pyfunction]
#[pyo3(signature = (modulus, m_bound, horizon, t1, n_max, quad_steps=an::DEFAULT_QUAD_STEPS))]
fn bihari(
    modulus: &Modulus,
    m_bound: f64,
    horizon: f64,
    t1: f64,
    n_max: usize,
    quad_steps: usize,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let c = an::bihari_recursion(&modulus.0, m_bound, horizon, t1, n_max, quad_steps).map_err(err)?;
    Ok((c.times, c.phi))
}

/// `(lhs, rhs, slack, std_error)` at grid index `t_index`.
#[pyfunction]
#[pyo3(signature = (solution, generator, ensemble, t_index=0, p=2.0))]
fn energy_check(
    solution: &Solution,
    generator: &Generator,
    ensemble: &PathEnsemble,
    t_index: usize,
    p: f64,
) -> PyResult<(f64, f64, f64, f64)> {
    let r = an::check_lemma1(&solution.0, &generator.0, &ensemble.0, p, t_index).map_err(err)?;
    Ok((r.lhs, r.rhs, r.slack, r.std_error))
}

/// Runs the command line tool in-process and returns its exit code.
/// `generators` maps names used by `family = "custom"` to `(func, k)` pairs.
#[pyfunction]
#[pyo3(signature = (args, generators=None))]
fn run_cli(py: Python<'_>, args: Vec<String>, generators: Option<Vec<(String, Py<PyAny>, usize)>>) -> PyResult<i32> {
    let cli = match Cli::try_parse_from(std::iter::once("bsde-lab".to_string()).chain(args)) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return Ok(code);
        }
    };
    let mut registry = GeneratorRegistry::new();
    for (name, func, k) in generators.unwrap_or_default() {
        registry.register(&name, None, callback(func, k));
    }
    Ok(py.detach(|| execute(&cli, &registry)))
}

#[pymodule]
#[pyo3(name = "bsde_lab")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PathEnsemble>()?;
    m.add_class::<Modulus>()?;
    m.add_class::<Generator>()?;
    m.add_class::<Terminal>()?;
    m.add_class::<Solution>()?;
    m.add_class::<PicardReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_errors, m)?)?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(bihari, m)?)?;
    m.add_function(wrap_pyfunction!(energy_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
