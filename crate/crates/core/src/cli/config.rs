//! TOML run configuration with strict key checking.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{LabError, Result};
use crate::generator::{
    EnvelopeA, GeneratorRegistry, GeneratorSpec, ProcessKind, YCoefficient, ZCoupling,
};
use crate::modulus::{transform_modulus, ModulusSpec, Tabulated, TransformKind};
use crate::solver::{BasisSpec, PicardConfig, PicardInit, TerminalSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub terminal: Option<TerminalConfig>,
    #[serde(default)]
    pub modulus: ModuliConfig,
    #[serde(default)]
    pub envelope: Option<EnvelopeConfig>,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub bihari: BihariConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(rename = "M", default = "d_m")]
    pub m: usize,
    #[serde(rename = "N", default = "d_n")]
    pub n: usize,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(rename = "T", default = "one_f")]
    pub t: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    pub paths_file: Option<PathBuf>,
}

fn d_m() -> usize {
    16384
}
fn d_n() -> usize {
    50
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { m: d_m(), n: d_n(), d: 1, t: 1.0, seed: 0, antithetic: false, paths_file: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "d_degree")]
    pub basis_degree: usize,
    pub ridge: Option<f64>,
    #[serde(default = "d_tol")]
    pub picard_tol: f64,
    #[serde(default = "d_iter")]
    pub picard_max_iter: usize,
    #[serde(default)]
    pub init: InitConfig,
    /// `false`, `true` (T1 from the constants), or an explicit T1.
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "yes")]
    pub deterministic_reduction: bool,
    /// Paths written to `solution.csv`.
    #[serde(default = "d_export")]
    pub export_paths: usize,
}

fn two() -> f64 {
    2.0
}
fn d_degree() -> usize {
    3
}
fn d_tol() -> f64 {
    1e-4
}
fn d_iter() -> usize {
    25
}
fn yes() -> bool {
    true
}
fn d_export() -> usize {
    100
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            basis_degree: 3,
            ridge: None,
            picard_tol: 1e-4,
            picard_max_iter: 25,
            init: InitConfig::default(),
            split: SplitConfig::default(),
            deterministic_reduction: true,
            export_paths: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
pub enum SplitConfig {
    #[default]
    #[serde(skip)]
    Off,
    Flag(bool),
    At(f64),
}

#[derive(Debug, Clone, Deserialize, Default, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    #[default]
    Zero,
    Constant(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub family: String,
    #[serde(default = "one")]
    pub k: usize,
    /// Defaults to `paths.d`.
    pub d: Option<usize>,
    #[serde(default)]
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVector {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub a: Option<ScalarOrMatrix>,
    /// Coefficient on `|z|`.
    pub b: Option<f64>,
    /// `k x (k d)` form acting on `vec(z)`.
    pub z_form: Option<Vec<Vec<f64>>>,
    pub c: Option<ScalarOrVector>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
    /// Registry key of a custom generator.
    pub name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalConfig {
    pub kind: String,
    pub index: Option<usize>,
    pub value: Option<ScalarOrVector>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModuliConfig {
    /// Modulus of the `y`-increments of the generator.
    pub rho: Option<ModulusConfig>,
    /// The `psi` of the growth envelope.
    pub psi: Option<ModulusConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub family: String,
    #[serde(default)]
    pub params: ModulusParams,
    pub domain_cap: Option<f64>,
    /// CSV with header `u,v`, for `family = "tabulated"`. Relative to the config file.
    pub file: Option<PathBuf>,
    pub transform: Option<TransformConfig>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModulusParams {
    pub mu: Option<f64>,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    pub kind: String,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub lambda: f64,
    #[serde(default)]
    pub phi: ProcessConfig,
    #[serde(default)]
    pub f: ProcessConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub kind: String,
    pub value: Option<f64>,
    pub index: Option<usize>,
    pub exponent: Option<f64>,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self { kind: "zero".into(), value: None, index: None, exponent: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default = "two")]
    pub k_prime_p: f64,
    #[serde(default = "two")]
    pub k_doubleprime_p: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    /// Overrides the `z`-Lipschitz constant of the generator.
    pub lambda: Option<f64>,
    /// Overrides the linear-growth coefficient of `rho`.
    #[serde(rename = "A")]
    pub a: Option<f64>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self { k_prime_p: 2.0, k_doubleprime_p: 2.0, c1: None, c2: None, c3: None, lambda: None, a: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default = "d_radius")]
    pub radius: f64,
    pub seed: Option<u64>,
    #[serde(default = "one_f")]
    pub weight_exponent: f64,
    #[serde(default = "d_decades")]
    pub decades: usize,
    pub u0: Option<f64>,
    #[serde(default = "d_grid")]
    pub grid_size: usize,
}

fn d_count() -> usize {
    20_000
}
fn d_radius() -> f64 {
    5.0
}
fn d_decades() -> usize {
    8
}
fn d_grid() -> usize {
    10_000
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            count: d_count(),
            radius: d_radius(),
            seed: None,
            weight_exponent: 1.0,
            decades: d_decades(),
            u0: None,
            grid_size: d_grid(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BihariConfig {
    #[serde(default = "d_nmax")]
    pub n_max: usize,
    #[serde(default = "d_quad")]
    pub quad_steps: usize,
    #[serde(rename = "M_bound")]
    pub m_bound: Option<f64>,
    #[serde(rename = "T1")]
    pub t1: Option<f64>,
}

fn d_nmax() -> usize {
    60
}
fn d_quad() -> usize {
    crate::analysis::DEFAULT_QUAD_STEPS
}

impl Default for BihariConfig {
    fn default() -> Self {
        Self { n_max: d_nmax(), quad_steps: d_quad(), m_bound: None, t1: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(rename = "M", default = "d_study_m")]
    pub m: Vec<usize>,
    #[serde(rename = "N", default = "d_study_n")]
    pub n: Vec<usize>,
}

fn d_study_m() -> Vec<usize> {
    vec![1024, 4096, 16384]
}
fn d_study_n() -> Vec<usize> {
    vec![10, 25, 50]
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { m: d_study_m(), n: d_study_n() }
    }
}

fn cfg_err(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| cfg_err(e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let inner = inner.trim_end();
        if path.is_empty() || path == "." {
            cfg_err(inner.to_string())
        } else {
            cfg_err(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let gen = self.generator.as_ref().ok_or_else(|| cfg_err("generator required"))?;
        let p = &self.paths;
        if p.m == 0 || p.n == 0 || p.d == 0 || gen.k == 0 {
            return Err(cfg_err("paths.M, paths.N, paths.d and generator.k must be >= 1"));
        }
        if !(p.t > 0.0 && p.t.is_finite()) {
            return Err(cfg_err(format!("paths.T must be positive, got {}", p.t)));
        }
        let s = &self.solver;
        if !(s.p > 1.0) {
            return Err(cfg_err(format!("solver.p must exceed 1, got {}", s.p)));
        }
        if !(s.picard_tol > 0.0) || s.picard_max_iter == 0 {
            return Err(cfg_err("solver.picard_tol must be > 0 and solver.picard_max_iter >= 1"));
        }
        if let Some(d) = gen.d {
            if d != p.d {
                return Err(cfg_err(format!("generator.d = {d} differs from paths.d = {}", p.d)));
            }
        }
        if self.check.count == 0 || self.check.grid_size < 3 || self.bihari.quad_steps < 2 {
            return Err(cfg_err("check.count >= 1, check.grid_size >= 3 and bihari.quad_steps >= 2 required"));
        }
        if self.study.m.is_empty() || self.study.n.is_empty() {
            return Err(cfg_err("study.M and study.N must be non-empty"));
        }
        Ok(())
    }

    pub fn generator_config(&self) -> &GeneratorConfig {
        self.generator.as_ref().expect("validated")
    }

    pub fn generator(&self, registry: &GeneratorRegistry) -> Result<GeneratorSpec> {
        let g = self.generator_config();
        let (k, d) = (g.k, self.paths.d);
        let pr = &g.params;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| cfg_err(format!("generator.params.{name} required")));
        match g.family.as_str() {
            "zero" => GeneratorSpec::zero(k, d),
            "linear" => {
                let a = match &pr.a {
                    None => YCoefficient::Scalar(0.0),
                    Some(ScalarOrMatrix::Scalar(s)) => YCoefficient::Scalar(*s),
                    Some(ScalarOrMatrix::Matrix(rows)) => YCoefficient::Matrix(rows.concat()),
                };
                let b = match (pr.b, &pr.z_form) {
                    (Some(_), Some(_)) => return Err(cfg_err("generator.params: give either b or z_form")),
                    (Some(b), None) => ZCoupling::Norm(b),
                    (None, Some(rows)) => ZCoupling::Form(rows.concat()),
                    (None, None) => ZCoupling::None,
                };
                let c = match &pr.c {
                    None => vec![0.0; k],
                    Some(ScalarOrVector::Scalar(s)) => vec![*s; k],
                    Some(ScalarOrVector::Vector(v)) => v.clone(),
                };
                GeneratorSpec::linear(k, d, a, b, c)
            }
            "example1" => {
                if k != 1 {
                    return Err(cfg_err("the example1 generator is scalar (k = 1)"));
                }
                GeneratorSpec::example1(need(pr.p, "p")?, pr.delta.unwrap_or((-2.0f64).exp()), d)
            }
            "custom" => {
                let name = pr.name.as_deref().ok_or_else(|| cfg_err("generator.params.name required"))?;
                let c = registry.get(name).ok_or_else(|| cfg_err(format!("no custom generator named `{name}`")))?;
                GeneratorSpec::custom(c.clone(), k, d)
            }
            other => Err(cfg_err(format!("unknown generator family `{other}`"))),
        }
    }

    pub fn terminal(&self) -> Result<TerminalSpec> {
        let t = self.terminal.as_ref().ok_or_else(|| cfg_err("terminal required"))?;
        let spec = match t.kind.as_str() {
            "coordinate" => TerminalSpec::Coordinate(t.index.unwrap_or(0)),
            "square_norm" => TerminalSpec::SquareNorm,
            "constant" => TerminalSpec::Constant(match &t.value {
                None => return Err(cfg_err("terminal.value required")),
                Some(ScalarOrVector::Scalar(s)) => vec![*s; self.generator_config().k],
                Some(ScalarOrVector::Vector(v)) => v.clone(),
            }),
            other => return Err(cfg_err(format!("unknown terminal kind `{other}`"))),
        };
        spec.validate(self.paths.d)?;
        Ok(spec)
    }

    pub fn picard(&self, split: Option<f64>) -> Result<PicardConfig> {
        let s = &self.solver;
        Ok(PicardConfig {
            basis: BasisSpec::new(s.basis_degree, s.ridge)?,
            p: s.p,
            tol: s.picard_tol,
            max_iter: s.picard_max_iter,
            init: match &s.init {
                InitConfig::Zero => PicardInit::Zero,
                InitConfig::Constant(v) => PicardInit::ConstantField(v.clone()),
            },
            split,
            deterministic_reduction: s.deterministic_reduction,
        })
    }

    /// The `y`-modulus: configured, or derived from the builtin generator.
    pub fn rho(&self, gen: &GeneratorSpec, base: &Path) -> Result<ModulusSpec> {
        if let Some(m) = &self.modulus.rho {
            return m.build(base);
        }
        let p = self.solver.p;
        let g = self.generator_config();
        match g.family.as_str() {
            "example1" => {
                let delta = g.params.delta.unwrap_or((-2.0f64).exp());
                let kappa = ModulusSpec::example1_h(g.params.p.unwrap_or(p), delta, 100.0)?;
                Ok(transform_modulus(&kappa, TransformKind::H1StarToH1 { p })?.modulus)
            }
            _ => match gen.analytic_lipschitz_y() {
                Some(l) if l > 0.0 => ModulusSpec::linear(l.powf(p), 100.0),
                Some(_) => ModulusSpec::linear(1.0, 100.0),
                None => Err(cfg_err("modulus.rho required for this generator")),
            },
        }
    }

    /// The growth envelope: configured, or derived from the builtin generator.
    pub fn envelope(&self, gen: &GeneratorSpec, base: &Path) -> Result<Option<EnvelopeA>> {
        let p = self.solver.p;
        if let Some(e) = &self.envelope {
            let psi = match &self.modulus.psi {
                Some(m) => m.build(base)?,
                None => return Err(cfg_err("modulus.psi required with an envelope block")),
            };
            let rho = self.modulus.rho.as_ref().map(|m| m.build(base)).transpose()?;
            let phi = e.phi.build(rho.as_ref())?;
            let f = e.f.build(rho.as_ref())?;
            return EnvelopeA::new(psi, e.lambda, phi, f).map(Some);
        }
        let g = self.generator_config();
        let lz = gen.analytic_lipschitz_z().unwrap_or(0.0);
        let env = match (&g.family[..], &g.params) {
            ("zero", _) => EnvelopeA::new(ModulusSpec::linear(0.0, 1.0)?, 0.0, ProcessKind::Zero, ProcessKind::Zero)?,
            ("example1", pr) => {
                let h = ModulusSpec::example1_h(pr.p.unwrap_or(p), pr.delta.unwrap_or((-2.0f64).exp()), 100.0)?;
                let psi = transform_modulus(&h, TransformKind::PowerRoot { r: p })?.modulus;
                EnvelopeA::new(psi, 1.0, ProcessKind::Zero, ProcessKind::AbsBrownianNorm)?
            }
            ("linear", pr) => {
                let ly = gen.analytic_lipschitz_y().unwrap_or(0.0);
                let c = match &pr.c {
                    None => 0.0,
                    Some(ScalarOrVector::Scalar(s)) => s.abs() * (g.k as f64).sqrt(),
                    Some(ScalarOrVector::Vector(v)) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
                };
                // |a y + b(z) + c| <= |a| |y| + lambda |z| + |c|
                EnvelopeA::new(ModulusSpec::linear(ly.powf(p), 100.0)?, lz, ProcessKind::ConstantValue(c), ProcessKind::Zero)?
            }
            _ => return Ok(None),
        };
        Ok(Some(env))
    }
}

impl ModulusConfig {
    pub fn build(&self, base: &Path) -> Result<ModulusSpec> {
        let cap = self.domain_cap.unwrap_or(100.0);
        let pr = &self.params;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| cfg_err(format!("modulus params.{name} required")));
        let m = match self.family.as_str() {
            "linear" => ModulusSpec::linear(need(pr.mu, "mu")?, cap)?,
            "power" => ModulusSpec::power(need(pr.c, "c")?, need(pr.alpha, "alpha")?, cap)?,
            "example1_h" => ModulusSpec::example1_h(need(pr.p, "p")?, pr.delta.unwrap_or((-2.0f64).exp()), cap)?,
            "tabulated" => {
                let file = self.file.as_ref().ok_or_else(|| cfg_err("tabulated modulus needs `file`"))?;
                let text = std::fs::read_to_string(base.join(file))?;
                ModulusSpec::tabulated(Tabulated::from_csv(&text)?)
            }
            other => return Err(cfg_err(format!("unknown modulus family `{other}`"))),
        };
        match &self.transform {
            None => Ok(m),
            Some(t) => {
                let need = |v: Option<f64>, name: &str| v.ok_or_else(|| cfg_err(format!("transform.{name} required")));
                let kind = match t.kind.as_str() {
                    "power_root" => TransformKind::PowerRoot { r: need(t.r, "r")? },
                    "h1star_to_h1" => TransformKind::H1StarToH1 { p: need(t.p, "p")? },
                    "h1pp_to_h1" => TransformKind::H1ppToH1 { p: need(t.p, "p")?, q: need(t.q, "q")? },
                    other => return Err(cfg_err(format!("unknown transform `{other}`"))),
                };
                Ok(transform_modulus(&m, kind)?.modulus)
            }
        }
    }
}

impl ProcessConfig {
    fn build(&self, rho: Option<&ModulusSpec>) -> Result<ProcessKind> {
        Ok(match self.kind.as_str() {
            "zero" => ProcessKind::Zero,
            "constant" => ProcessKind::ConstantValue(self.value.ok_or_else(|| cfg_err("process value required"))?),
            "abs_coordinate" => ProcessKind::AbsBrownianCoordinate(self.index.unwrap_or(0)),
            "abs_norm" => ProcessKind::AbsBrownianNorm,
            "frozen_modulus" => ProcessKind::ModulusOfFrozenPath(
                rho.cloned().ok_or_else(|| cfg_err("frozen_modulus processes use modulus.rho, which is missing"))?,
                self.exponent.unwrap_or(1.0),
            ),
            other => return Err(cfg_err(format!("unknown process kind `{other}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[generator]
family = "zero"

[terminal]
kind = "constant"
value = 1.0

[paths]
T = 1.0
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!((cfg.paths.m, cfg.paths.n), (16384, 50));
        assert_eq!(cfg.solver.basis_degree, 3);
        assert_eq!(cfg.solver.p, 2.0);
        assert_eq!(cfg.solver.picard_tol, 1e-4);
        assert_eq!(cfg.solver.picard_max_iter, 25);
        assert_eq!((cfg.constants.k_prime_p, cfg.constants.k_doubleprime_p), (2.0, 2.0));
        assert!(matches!(cfg.terminal().unwrap(), TerminalSpec::Constant(v) if v == vec![1.0]));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{MINIMAL}\n[solver]\nstepz = 3\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("stepz"), "{err}");
    }

    #[test]
    fn missing_generator() {
        let err = parse_config("[paths]\nT = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("generator required"), "{err}");
    }

    #[test]
    fn type_mismatch_names_field() {
        let text = MINIMAL.replace("T = 1.0", "T = 1.0\nM = \"many\"");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("paths.M"), "{err}");
    }

    #[test]
    fn split_and_init_forms() {
        let text = format!("{MINIMAL}\n[solver]\nsplit = 0.4\ninit = {{ constant = [1.0] }}\n");
        let cfg = parse_config(&text).unwrap();
        assert!(matches!(cfg.solver.split, SplitConfig::At(t) if t == 0.4));
        assert_eq!(cfg.solver.init, InitConfig::Constant(vec![1.0]));
        let text = format!("{MINIMAL}\n[solver]\nsplit = true\n");
        assert!(matches!(parse_config(&text).unwrap().solver.split, SplitConfig::Flag(true)));
    }

    #[test]
    fn linear_generator_params() {
        let text = r#"
[generator]
family = "linear"
params = { a = 0.5, c = 0.2 }
[terminal]
kind = "constant"
value = [1.0]
"#;
        let cfg = parse_config(text).unwrap();
        let g = cfg.generator(&GeneratorRegistry::new()).unwrap();
        assert_eq!(g.eval(0.0, &[0.0], &[2.0], &[0.0]).unwrap(), vec![1.2]);
    }
}
