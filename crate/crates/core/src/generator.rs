//! BSDE generators `g(t, B_t, y, z)` and sampling checks of the regularity
//! hypotheses: the y-modulus bound, the z-Lipschitz bound, integrability of
//! `g(t, 0, 0)`, and the growth envelope `|g| <= psi^{1/p}(|y|^p) + lambda|z| + phi_t + f_t`.
//!
//! `z` is always passed flattened row-major as a `k x d` matrix.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param, LabError, Result};
use crate::modulus::{check_shape, ModulusSpec};
use crate::paths::PathEnsemble;
use crate::quad::trapezoid;
use crate::solver::DiscreteSolution;

pub type GeneratorFn = dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;

/// A run-time registered generator. The callback receives
/// `(t, brownian_state, y, z, out)` and must fill `out` (length `k`).
#[derive(Clone)]
pub struct CustomGenerator {
    pub name: String,
    pub func: Arc<GeneratorFn>,
    /// Known Lipschitz constant in `z`, if any.
    pub lipschitz_z: Option<f64>,
}

impl fmt::Debug for CustomGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomGenerator")
            .field("name", &self.name)
            .field("lipschitz_z", &self.lipschitz_z)
            .finish()
    }
}

/// Named-callback table used to resolve `family = "custom"` config blocks.
#[derive(Default, Clone, Debug)]
pub struct GeneratorRegistry {
    table: HashMap<String, CustomGenerator>,
}

impl GeneratorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, lipschitz_z: Option<f64>, func: F)
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.table.insert(
            name.to_string(),
            CustomGenerator { name: name.to_string(), func: Arc::new(func), lipschitz_z },
        );
    }

    pub fn get(&self, name: &str) -> Option<&CustomGenerator> {
        self.table.get(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum YCoefficient {
    Scalar(f64),
    /// `k x k`, row-major.
    Matrix(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZCoupling {
    None,
    /// Adds `b |z|` to every component.
    Norm(f64),
    /// `k x (k d)` row-major matrix acting on `vec(z)`.
    Form(Vec<f64>),
}

#[derive(Debug, Clone)]
pub enum GeneratorFamily {
    Zero,
    /// `a y + coupling(z) + c`
    Linear { a: YCoefficient, b: ZCoupling, c: Vec<f64> },
    /// `h(|y|) + |z| + |B_t|`, scalar.
    Example1 { h: ModulusSpec },
    Custom(CustomGenerator),
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub family: GeneratorFamily,
    pub k: usize,
    pub d: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn spectral_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

impl GeneratorSpec {
    pub fn zero(k: usize, d: usize) -> Result<Self> {
        check_dims(k, d)?;
        Ok(Self { family: GeneratorFamily::Zero, k, d })
    }

    pub fn linear(k: usize, d: usize, a: YCoefficient, b: ZCoupling, c: Vec<f64>) -> Result<Self> {
        check_dims(k, d)?;
        if let YCoefficient::Matrix(m) = &a {
            if m.len() != k * k {
                return Err(LabError::Dimension(format!("y-coefficient matrix needs {} entries", k * k)));
            }
        }
        if let ZCoupling::Form(w) = &b {
            if w.len() != k * k * d {
                return Err(LabError::Dimension(format!("z-form needs {} entries", k * k * d)));
            }
        }
        if c.len() != k {
            return Err(LabError::Dimension(format!("constant term needs {k} entries, got {}", c.len())));
        }
        Ok(Self { family: GeneratorFamily::Linear { a, b, c }, k, d })
    }

    /// Scalar `a y + c` generator.
    pub fn scalar_linear(a: f64, c: f64, d: usize) -> Result<Self> {
        Self::linear(1, d, YCoefficient::Scalar(a), ZCoupling::None, vec![c])
    }

    pub fn example1(p: f64, delta: f64, d: usize) -> Result<Self> {
        check_dims(1, d)?;
        // the tangent continuation is unbounded, so the cap only bounds shape scans
        let h = ModulusSpec::example1_h(p, delta, 100.0)?;
        Ok(Self { family: GeneratorFamily::Example1 { h }, k: 1, d })
    }

    pub fn custom(generator: CustomGenerator, k: usize, d: usize) -> Result<Self> {
        check_dims(k, d)?;
        Ok(Self { family: GeneratorFamily::Custom(generator), k, d })
    }

    pub fn eval_into(&self, t: f64, b: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.family {
            GeneratorFamily::Zero => out.fill(0.0),
            GeneratorFamily::Linear { a, b: zc, c } => {
                let k = self.k;
                match a {
                    YCoefficient::Scalar(s) => {
                        for i in 0..k {
                            out[i] = s * y[i];
                        }
                    }
                    YCoefficient::Matrix(m) => {
                        for i in 0..k {
                            out[i] = (0..k).map(|j| m[i * k + j] * y[j]).sum();
                        }
                    }
                }
                match zc {
                    ZCoupling::None => {}
                    ZCoupling::Norm(bn) => {
                        let zn = bn * norm(z);
                        out.iter_mut().for_each(|o| *o += zn);
                    }
                    ZCoupling::Form(w) => {
                        let kd = z.len();
                        for i in 0..k {
                            out[i] += (0..kd).map(|j| w[i * kd + j] * z[j]).sum::<f64>();
                        }
                    }
                }
                for i in 0..k {
                    out[i] += c[i];
                }
            }
            GeneratorFamily::Example1 { h } => {
                out[0] = h.value(y[0].abs()) + norm(z) + norm(b);
            }
            GeneratorFamily::Custom(cg) => (cg.func)(t, b, y, z, out),
        }
    }

    pub fn eval(&self, t: f64, b: &[f64], y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.d || y.len() != self.k || z.len() != self.k * self.d {
            return Err(LabError::Dimension(format!(
                "generator expects B in R^{}, y in R^{}, z in R^{}x{}; got {}, {}, {}",
                self.d,
                self.k,
                self.k,
                self.d,
                b.len(),
                y.len(),
                z.len()
            )));
        }
        let mut out = vec![0.0; self.k];
        self.eval_into(t, b, y, z, &mut out);
        Ok(out)
    }

    /// Pass threshold for the sampled checks: tight for builtin families.
    pub fn check_tolerance(&self) -> f64 {
        match self.family {
            GeneratorFamily::Custom(_) => 1e-6,
            _ => 1e-9,
        }
    }

    /// Closed-form Lipschitz constant in `z`, when known.
    pub fn analytic_lipschitz_z(&self) -> Option<f64> {
        match &self.family {
            GeneratorFamily::Zero => Some(0.0),
            GeneratorFamily::Linear { b, .. } => Some(match b {
                ZCoupling::None => 0.0,
                ZCoupling::Norm(bn) => bn.abs() * (self.k as f64).sqrt(),
                ZCoupling::Form(w) => spectral_norm(self.k, self.k * self.d, w),
            }),
            GeneratorFamily::Example1 { .. } => Some(1.0),
            GeneratorFamily::Custom(c) => c.lipschitz_z,
        }
    }

    /// Closed-form Lipschitz constant in `y`, when the generator is Lipschitz.
    pub fn analytic_lipschitz_y(&self) -> Option<f64> {
        match &self.family {
            GeneratorFamily::Zero => Some(0.0),
            GeneratorFamily::Linear { a, .. } => Some(match a {
                YCoefficient::Scalar(s) => s.abs(),
                YCoefficient::Matrix(m) => spectral_norm(self.k, self.k, m),
            }),
            _ => None,
        }
    }
}

fn check_dims(k: usize, d: usize) -> Result<()> {
    if k == 0 || d == 0 {
        Err(LabError::Dimension("generator needs k >= 1 and d >= 1".into()))
    } else {
        Ok(())
    }
}

/// Uniform sampling box `[0,T] x [-3 sqrt(T), 3 sqrt(T)]^d x [-R,R]^k x [-R,R]^{k x d}`.
#[derive(Debug, Clone, Copy)]
pub struct Sampler {
    pub count: usize,
    pub radius: f64,
    pub horizon: f64,
    pub seed: u64,
    pub tol: f64,
}

impl Sampler {
    pub fn new(count: usize, horizon: f64, seed: u64) -> Self {
        Self { count, radius: 5.0, horizon, seed, tol: 1e-6 }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.radius > 0.0) || !(self.horizon > 0.0) || !(self.tol >= 0.0) {
            return Err(param("sampler needs count >= 1, radius > 0, horizon > 0, tol >= 0"));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn fill(&self, rng: &mut ChaCha8Rng, out: &mut [f64], half_width: f64) {
        for x in out.iter_mut() {
            *x = rng.random_range(-half_width..=half_width);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct H1Witness {
    pub t: f64,
    pub brownian: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct H1Report {
    /// `max |g(y1,z) - g(y2,z)|^p / mod(|y1 - y2|^p)`; `+inf` when the modulus vanishes.
    pub max_ratio: f64,
    pub witness: Option<H1Witness>,
    pub passed: bool,
}

pub fn check_h1(gen: &GeneratorSpec, modulus: &ModulusSpec, p: f64, sampler: &Sampler) -> Result<H1Report> {
    sampler.validate()?;
    if !(p > 1.0) {
        return Err(param(format!("p must exceed 1, got {p}")));
    }
    let scale = modulus.value(modulus.domain_cap).abs().max(1.0);
    if !check_shape(modulus, 512, 1e-9 * scale)?.is_admissible() {
        return Err(param("check_h1 needs a nondecreasing concave modulus with mod(0) = 0"));
    }
    let (k, d) = (gen.k, gen.d);
    let mut rng = sampler.rng();
    let bw = 3.0 * sampler.horizon.sqrt();
    let (mut b, mut y1, mut y2, mut z) = (vec![0.0; d], vec![0.0; k], vec![0.0; k], vec![0.0; k * d]);
    let (mut g1, mut g2) = (vec![0.0; k], vec![0.0; k]);
    let mut best = 0.0;
    let mut witness = None;
    for _ in 0..sampler.count {
        let t = rng.random_range(0.0..=sampler.horizon);
        sampler.fill(&mut rng, &mut b, bw);
        sampler.fill(&mut rng, &mut y1, sampler.radius);
        sampler.fill(&mut rng, &mut y2, sampler.radius);
        sampler.fill(&mut rng, &mut z, sampler.radius);
        let dy: f64 = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dy == 0.0 {
            continue;
        }
        gen.eval_into(t, &b, &y1, &z, &mut g1);
        gen.eval_into(t, &b, &y2, &z, &mut g2);
        let num = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt().powf(p);
        let den = modulus.value(dy.powf(p));
        let ratio = if num == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        };
        if ratio > best || (witness.is_none() && ratio > 0.0) {
            best = ratio;
            witness = Some(H1Witness { t, brownian: b.clone(), y1: y1.clone(), y2: y2.clone(), z: z.clone() });
        }
    }
    Ok(H1Report { max_ratio: best, witness, passed: best <= 1.0 + sampler.tol })
}

#[derive(Debug, Clone)]
pub struct LipschitzZReport {
    pub sampled: f64,
    pub analytic: Option<f64>,
}

pub fn estimate_lipschitz_z(gen: &GeneratorSpec, sampler: &Sampler) -> Result<LipschitzZReport> {
    sampler.validate()?;
    let (k, d) = (gen.k, gen.d);
    let mut rng = sampler.rng();
    let bw = 3.0 * sampler.horizon.sqrt();
    let (mut b, mut y, mut z1, mut z2) = (vec![0.0; d], vec![0.0; k], vec![0.0; k * d], vec![0.0; k * d]);
    let (mut g1, mut g2) = (vec![0.0; k], vec![0.0; k]);
    let mut best = 0.0f64;
    for i in 0..sampler.count {
        let t = rng.random_range(0.0..=sampler.horizon);
        sampler.fill(&mut rng, &mut b, bw);
        sampler.fill(&mut rng, &mut y, sampler.radius);
        sampler.fill(&mut rng, &mut z1, sampler.radius);
        if i % 2 == 0 {
            sampler.fill(&mut rng, &mut z2, sampler.radius);
        } else {
            // z2 on the ray through z1, where norm-type couplings attain their constant
            let s: f64 = rng.random_range(0.0..1.0);
            for (a, b) in z2.iter_mut().zip(&z1) {
                *a = s * b;
            }
        }
        let dz: f64 = z1.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dz == 0.0 {
            continue;
        }
        gen.eval_into(t, &b, &y, &z1, &mut g1);
        gen.eval_into(t, &b, &y, &z2, &mut g2);
        let num = g1.iter().zip(&g2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        best = best.max(num / dz);
    }
    Ok(LipschitzZReport { sampled: best, analytic: gen.analytic_lipschitz_z() })
}

#[derive(Debug, Clone)]
pub struct H3Report {
    /// Estimate of `E[(int_0^T |g(t, B_t, 0, 0)| dt)^p]`.
    pub estimate: f64,
    pub std_error: f64,
    /// Same estimate on the first half of the paths.
    pub half_estimate: f64,
    /// The two estimates differ by more than 5 standard errors.
    pub unstable: bool,
}

/// Per-path `(int_0^T |g(t, B_t, 0, 0)| dt)^p` by the trapezoid rule on the ensemble grid.
pub fn h3_path_values(gen: &GeneratorSpec, ens: &PathEnsemble, p: f64) -> Result<Vec<f64>> {
    if ens.dim() != gen.d {
        return Err(LabError::Dimension(format!("ensemble has d={}, generator d={}", ens.dim(), gen.d)));
    }
    let grid = ens.grid();
    let n = grid.steps();
    let y0 = vec![0.0; gen.k];
    let z0 = vec![0.0; gen.k * gen.d];
    let mut g = vec![0.0; gen.k];
    let mut row = vec![0.0; n + 1];
    let mut out = Vec::with_capacity(ens.paths());
    for m in 0..ens.paths() {
        for (i, r) in row.iter_mut().enumerate() {
            gen.eval_into(grid.time(i), ens.value(m, i), &y0, &z0, &mut g);
            *r = norm(&g);
            if !r.is_finite() {
                return Err(LabError::NonFinite { step: i, what: format!("|g(t,0,0)| on path {m}") });
            }
        }
        out.push(trapezoid(&row, grid.dt()).powf(p));
    }
    Ok(out)
}

pub fn check_h3(gen: &GeneratorSpec, ens: &PathEnsemble, p: f64) -> Result<H3Report> {
    let vals = h3_path_values(gen, ens, p)?;
    let (estimate, std_error) = mean_and_se(&vals);
    let half = &vals[..(vals.len() / 2).max(1)];
    let (half_estimate, half_se) = mean_and_se(half);
    let unstable = (half_estimate - estimate).abs() > 5.0 * half_se.max(std_error) + 1e-12 * estimate.abs();
    Ok(H3Report { estimate, std_error, half_estimate, unstable })
}

pub(crate) fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Nonnegative processes `phi_t`, `f_t` of the growth envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessKind {
    Zero,
    ConstantValue(f64),
    AbsBrownianCoordinate(usize),
    /// `|B_t|` (Euclidean norm over all coordinates).
    AbsBrownianNorm,
    /// `mod(|y_t|^e)^{1/e}` along a frozen solution.
    ModulusOfFrozenPath(ModulusSpec, f64),
}

impl ProcessKind {
    pub(crate) fn value(&self, b: &[f64], frozen_y: Option<&[f64]>) -> Result<f64> {
        Ok(match self {
            Self::Zero => 0.0,
            Self::ConstantValue(v) => *v,
            Self::AbsBrownianCoordinate(j) => b
                .get(*j)
                .ok_or_else(|| LabError::Dimension(format!("Brownian coordinate {j} out of range")))?
                .abs(),
            Self::AbsBrownianNorm => norm(b),
            Self::ModulusOfFrozenPath(m, e) => {
                let y = frozen_y.ok_or_else(|| param("frozen-path process needs a frozen solution"))?;
                m.value(norm(y).powf(*e)).powf(1.0 / e)
            }
        })
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::ConstantValue(v) if !(*v >= 0.0) => Err(param("envelope processes must be nonnegative")),
            Self::ModulusOfFrozenPath(_, e) if !(*e > 0.0) => Err(param("frozen-path exponent must be positive")),
            _ => Ok(()),
        }
    }
}

/// `|g(t,y,z)| <= psi^{1/p}(|y|^p) + lambda |z| + phi_t + f_t`.
#[derive(Debug, Clone)]
pub struct EnvelopeA {
    pub psi: ModulusSpec,
    pub lambda: f64,
    pub phi: ProcessKind,
    pub f: ProcessKind,
}

impl EnvelopeA {
    pub fn new(psi: ModulusSpec, lambda: f64, phi: ProcessKind, f: ProcessKind) -> Result<Self> {
        let env = Self { psi, lambda, phi, f };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(param(format!("envelope lambda must be >= 0, got {}", self.lambda)));
        }
        let scale = self.psi.value(self.psi.domain_cap).abs().max(1.0);
        if !check_shape(&self.psi, 512, 1e-9 * scale)?.is_admissible() {
            return Err(param("envelope psi must be nondecreasing, concave and vanish at 0"));
        }
        self.phi.validate()?;
        self.f.validate()
    }

    pub fn bound(&self, p: f64, b: &[f64], y: &[f64], z: &[f64], frozen: Option<&[f64]>) -> Result<f64> {
        Ok(self.psi.value(norm(y).powf(p)).powf(1.0 / p)
            + self.lambda * norm(z)
            + self.phi.value(b, frozen)?
            + self.f.value(b, frozen)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeWitness {
    pub path: usize,
    pub step: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnvelopeReport {
    pub max_defect: f64,
    pub witness: Option<EnvelopeWitness>,
    pub passed: bool,
}

/// Samples `(t_i, path, y, z)` and reports the largest `|g| - bound`.
/// `frozen` supplies `y` values for frozen-path processes.
pub fn verify_envelope(
    gen: &GeneratorSpec,
    env: &EnvelopeA,
    p: f64,
    ens: &PathEnsemble,
    sampler: &Sampler,
    frozen: Option<&DiscreteSolution>,
) -> Result<EnvelopeReport> {
    sampler.validate()?;
    env.validate()?;
    if ens.dim() != gen.d {
        return Err(LabError::Dimension(format!("ensemble has d={}, generator d={}", ens.dim(), gen.d)));
    }
    let (k, d) = (gen.k, gen.d);
    let grid = ens.grid();
    let mut rng = sampler.rng();
    let (mut y, mut z, mut g) = (vec![0.0; k], vec![0.0; k * d], vec![0.0; k]);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for _ in 0..sampler.count {
        let m = rng.random_range(0..ens.paths());
        let i = rng.random_range(0..=grid.steps());
        sampler.fill(&mut rng, &mut y, sampler.radius);
        sampler.fill(&mut rng, &mut z, sampler.radius);
        let b = ens.value(m, i);
        gen.eval_into(grid.time(i), b, &y, &z, &mut g);
        let fy = frozen.map(|s| s.y(m, i));
        let defect = norm(&g) - env.bound(p, b, &y, &z, fy)?;
        if defect > worst {
            worst = defect;
            witness = Some(EnvelopeWitness { path: m, step: i, y: y.clone(), z: z.clone() });
        }
    }
    Ok(EnvelopeReport { max_defect: worst, witness, passed: worst <= sampler.tol })
}
