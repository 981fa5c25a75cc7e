//! Backward regression Monte Carlo for `y_t = xi + int_t^T g ds - int_t^T z dB`,
//! wrapped in a Picard loop that freezes the `y` argument of `g` at the
//! previous iterate.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{param, zeroed, LabError, Result};
use crate::generator::GeneratorSpec;
use crate::paths::{PathEnsemble, TimeGrid};

pub type TerminalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// `xi` as a function of `B_T`.
#[derive(Clone)]
pub enum TerminalSpec {
    Coordinate(usize),
    SquareNorm,
    Constant(Vec<f64>),
    Custom { name: String, k: usize, func: Arc<TerminalFn> },
}

impl fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Coordinate(j) => write!(f, "Coordinate({j})"),
            Self::SquareNorm => write!(f, "SquareNorm"),
            Self::Constant(v) => write!(f, "Constant({v:?})"),
            Self::Custom { name, k, .. } => write!(f, "Custom({name}, k={k})"),
        }
    }
}

impl TerminalSpec {
    pub fn k(&self) -> usize {
        match self {
            Self::Coordinate(_) | Self::SquareNorm => 1,
            Self::Constant(v) => v.len(),
            Self::Custom { k, .. } => *k,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Coordinate(j) if *j >= d => {
                Err(LabError::Dimension(format!("terminal coordinate {j} out of range for d={d}")))
            }
            Self::Constant(v) if v.is_empty() => Err(param("constant terminal needs at least one entry")),
            Self::Custom { k: 0, .. } => Err(param("custom terminal needs k >= 1")),
            _ => Ok(()),
        }
    }

    pub fn eval_into(&self, b: &[f64], out: &mut [f64]) {
        match self {
            Self::Coordinate(j) => out[0] = b[*j],
            Self::SquareNorm => out[0] = b.iter().map(|x| x * x).sum(),
            Self::Constant(v) => out.copy_from_slice(v),
            Self::Custom { func, .. } => func(b, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSpec {
    /// Total degree of the Hermite polynomial basis.
    pub degree: usize,
    /// `None` selects `1e-10 * M`.
    pub ridge: Option<f64>,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { degree: 3, ridge: None }
    }
}

impl BasisSpec {
    pub fn new(degree: usize, ridge: Option<f64>) -> Result<Self> {
        if let Some(r) = ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(param(format!("ridge must be finite and >= 0, got {r}")));
            }
        }
        Ok(Self { degree, ridge })
    }

    pub fn size(&self, d: usize) -> usize {
        binomial(d + self.degree, self.degree)
    }

    fn ridge_for(&self, paths: usize) -> f64 {
        self.ridge.unwrap_or(1e-10 * paths as f64)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Exponent tuples of total degree `<= q` in graded order.
fn multi_indices(d: usize, q: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; d]];
    for total in 1..=q {
        let mut cur = vec![0; d];
        fill_degree(&mut cur, 0, total, &mut out);
    }
    out
}

fn fill_degree(cur: &mut Vec<usize>, pos: usize, left: usize, out: &mut Vec<Vec<usize>>) {
    if pos == cur.len() - 1 {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill_degree(cur, pos + 1, left - e, out);
    }
    cur[pos] = 0;
}

const BLOCK: usize = 512;

/// Sums per-block contributions. With `ordered`, blocks are combined in index
/// order so the result does not depend on scheduling.
fn blocked_sum<F>(rows: usize, len: usize, ordered: bool, f: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>) -> Vec<f64> + Sync,
{
    let ranges: Vec<_> = (0..rows.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(rows))
        .collect();
    let add = |mut a: Vec<f64>, b: Vec<f64>| {
        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        a
    };
    if ordered {
        let parts: Vec<Vec<f64>> = ranges.into_par_iter().map(&f).collect();
        parts.into_iter().fold(vec![0.0; len], add)
    } else {
        ranges.into_par_iter().map(&f).reduce(|| vec![0.0; len], add)
    }
}

/// Feature matrix and factorized normal equations for one regression state.
struct Projector {
    rows: usize,
    width: usize,
    features: Vec<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ordered: bool,
}

impl Projector {
    fn new(state: &[f64], d: usize, basis: &BasisSpec, ordered: bool) -> Result<Self> {
        let rows = state.len() / d;
        let full = basis.size(d);
        if rows <= full {
            return Err(param(format!("regression needs more samples ({rows}) than basis functions ({full})")));
        }
        // standardize each coordinate; constant coordinates carry no information
        let mut shift = vec![0.0; d];
        let mut scale = vec![0.0; d];
        let mut live = vec![false; d];
        for c in 0..d {
            let mean = (0..rows).map(|m| state[m * d + c]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|m| (state[m * d + c] - mean).powi(2)).sum::<f64>() / rows as f64;
            let sd = var.sqrt();
            shift[c] = mean;
            live[c] = sd > 1e-12 * (1.0 + mean.abs());
            scale[c] = if live[c] { 1.0 / sd } else { 0.0 };
        }
        let terms: Vec<Vec<usize>> = multi_indices(d, basis.degree)
            .into_iter()
            .filter(|e| e.iter().zip(&live).all(|(&p, &l)| l || p == 0))
            .collect();
        let width = terms.len();
        let q = basis.degree;
        let mut features = zeroed(rows * width)?;
        features.par_chunks_mut(width).enumerate().for_each(|(m, row)| {
            // probabilists' Hermite values He_0..He_q per coordinate
            let mut he = vec![0.0; d * (q + 1)];
            for c in 0..d {
                let x = (state[m * d + c] - shift[c]) * scale[c];
                let h = &mut he[c * (q + 1)..(c + 1) * (q + 1)];
                h[0] = 1.0;
                if q >= 1 {
                    h[1] = x;
                }
                for n in 2..=q {
                    h[n] = x * h[n - 1] - (n - 1) as f64 * h[n - 2];
                }
            }
            for (f, e) in row.iter_mut().zip(&terms) {
                *f = e.iter().enumerate().map(|(c, &p)| he[c * (q + 1) + p]).product();
            }
        });
        let gram = blocked_sum(rows, width * width, ordered, |r| {
            let mut g = vec![0.0; width * width];
            for m in r {
                let f = &features[m * width..(m + 1) * width];
                for a in 0..width {
                    for b in a..width {
                        g[a * width + b] += f[a] * f[b];
                    }
                }
            }
            g
        });
        let ridge = basis.ridge_for(rows);
        let mut a = DMatrix::from_fn(width, width, |i, j| {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            gram[lo * width + hi]
        });
        // the intercept is never penalized, so constants are reproduced exactly
        for j in 1..width {
            a[(j, j)] += ridge;
        }
        let max_diag = (0..width).map(|j| a[(j, j)]).fold(0.0, f64::max);
        let chol = a
            .clone()
            .cholesky()
            .filter(|c| {
                let l = c.l_dirty();
                (0..width).all(|j| l[(j, j)] * l[(j, j)] > 1e-13 * max_diag)
            })
            .ok_or_else(|| LabError::Singular(format!("{width} x {width} system with ridge {ridge:e}")))?;
        Ok(Self { rows, width, features, chol, ordered })
    }

    /// Returns `(fitted rows x m, coefficients width x m)`.
    fn project(&self, targets: &[f64], m: usize) -> (Vec<f64>, Vec<f64>) {
        let w = self.width;
        let rhs = blocked_sum(self.rows, w * m, self.ordered, |r| {
            let mut acc = vec![0.0; w * m];
            for s in r {
                let f = &self.features[s * w..(s + 1) * w];
                let t = &targets[s * m..(s + 1) * m];
                for a in 0..w {
                    for j in 0..m {
                        acc[a * m + j] += f[a] * t[j];
                    }
                }
            }
            acc
        });
        let mut coef = vec![0.0; w * m];
        for j in 0..m {
            let col = self.chol.solve(&DVector::from_fn(w, |a, _| rhs[a * m + j]));
            for a in 0..w {
                coef[a * m + j] = col[a];
            }
        }
        let mut fitted = vec![0.0; self.rows * m];
        fitted.par_chunks_mut(m).enumerate().for_each(|(s, out)| {
            let f = &self.features[s * w..(s + 1) * w];
            for (j, o) in out.iter_mut().enumerate() {
                *o = (0..w).map(|a| f[a] * coef[a * m + j]).sum();
            }
        });
        (fitted, coef)
    }
}

#[derive(Debug, Clone)]
pub struct Regression {
    /// `M x m`, row-major.
    pub fitted: Vec<f64>,
    /// `basis x m`, row-major, in graded Hermite order of the standardized state.
    pub coefficients: Vec<f64>,
    pub basis_size: usize,
}

/// Least-squares projection of `targets` (`M x m`) onto Hermite polynomials
/// of the standardized `state` (`M x d`).
pub fn regress_conditional_expectation(
    targets: &[f64],
    m: usize,
    state: &[f64],
    d: usize,
    basis: &BasisSpec,
) -> Result<Regression> {
    if m == 0 || d == 0 || !state.len().is_multiple_of(d) || targets.len() != state.len() / d * m {
        return Err(LabError::Dimension(format!(
            "targets ({}) and state ({}) do not describe the same samples for m={m}, d={d}",
            targets.len(),
            state.len()
        )));
    }
    let proj = Projector::new(state, d, basis, true)?;
    let (fitted, coefficients) = proj.project(targets, m);
    Ok(Regression { fitted, coefficients, basis_size: proj.width })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    paths: usize,
    k: usize,
    d: usize,
    grid: TimeGrid,
    /// `M x (N+1) x k`
    y: Vec<f64>,
    /// `M x N x (k d)`
    z: Vec<f64>,
}

impl DiscreteSolution {
    pub fn zeros(paths: usize, k: usize, d: usize, grid: TimeGrid) -> Result<Self> {
        let n = grid.steps();
        Ok(Self { paths, k, d, grid, y: zeroed(paths * (n + 1) * k)?, z: zeroed(paths * n * k * d)? })
    }

    pub fn from_parts(paths: usize, k: usize, d: usize, grid: TimeGrid, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        let n = grid.steps();
        if y.len() != paths * (n + 1) * k || z.len() != paths * n * k * d {
            return Err(LabError::Dimension(format!(
                "solution arrays have {} / {} entries, expected {} / {}",
                y.len(),
                z.len(),
                paths * (n + 1) * k,
                paths * n * k * d
            )));
        }
        Ok(Self { paths, k, d, grid, y, z })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn y_data(&self) -> &[f64] {
        &self.y
    }
    pub fn z_data(&self) -> &[f64] {
        &self.z
    }
    pub fn y_data_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }
    pub fn z_data_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    pub fn y(&self, m: usize, i: usize) -> &[f64] {
        let at = (m * (self.grid.steps() + 1) + i) * self.k;
        &self.y[at..at + self.k]
    }

    /// Row-major `k x d` block at step `i < N`.
    pub fn z(&self, m: usize, i: usize) -> &[f64] {
        let w = self.k * self.d;
        let at = (m * self.grid.steps() + i) * w;
        &self.z[at..at + w]
    }

    fn y_mut(&mut self, m: usize, i: usize) -> &mut [f64] {
        let at = (m * (self.grid.steps() + 1) + i) * self.k;
        &mut self.y[at..at + self.k]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.paths == other.paths && self.k == other.k && self.d == other.d && self.grid == other.grid
    }

    /// CSV `path,step,t,y_1..y_k,z_11..z_kd` for the first `max_paths` paths.
    /// `z` is left empty at the terminal step.
    pub fn write_csv<W: Write>(&self, mut w: W, max_paths: usize) -> Result<()> {
        let mut header = String::from("path,step,t");
        for a in 1..=self.k {
            header += &format!(",y_{a}");
        }
        for a in 1..=self.k {
            for j in 1..=self.d {
                header += &format!(",z_{a}{j}");
            }
        }
        writeln!(w, "{header}")?;
        let n = self.grid.steps();
        for m in 0..self.paths.min(max_paths) {
            for i in 0..=n {
                let mut line = format!("{m},{i},{:.16e}", self.grid.time(i));
                for v in self.y(m, i) {
                    line += &format!(",{v:.16e}");
                }
                if i < n {
                    for v in self.z(m, i) {
                        line += &format!(",{v:.16e}");
                    }
                } else {
                    line += &",".repeat(self.k * self.d);
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

fn gather_state(ens: &PathEnsemble, i: usize) -> Vec<f64> {
    ens.state_at(i)
}

fn check_inputs(gen: &GeneratorSpec, terminal: &TerminalSpec, ens: &PathEnsemble) -> Result<()> {
    if gen.d != ens.dim() {
        return Err(LabError::Dimension(format!("generator d={} but ensemble d={}", gen.d, ens.dim())));
    }
    if gen.k != terminal.k() {
        return Err(LabError::Dimension(format!("generator k={} but terminal k={}", gen.k, terminal.k())));
    }
    terminal.validate(ens.dim())
}

/// Backward sweep over steps `lo..hi`, with `y` at `hi` already in `sol`.
#[allow(clippy::too_many_arguments)]
fn sweep(
    gen: &GeneratorSpec,
    frozen: &DiscreteSolution,
    ens: &PathEnsemble,
    basis: &BasisSpec,
    ordered: bool,
    lo: usize,
    hi: usize,
    sol: &mut DiscreteSolution,
) -> Result<()> {
    let (mm, k, d) = (ens.paths(), gen.k, gen.d);
    let kd = k * d;
    let n = ens.grid().steps();
    let dt = ens.grid().dt();
    for i in (lo..hi).rev() {
        let state = gather_state(ens, i);
        let proj = Projector::new(&state, d, basis, ordered)?;
        let next: Vec<f64> = (0..mm).flat_map(|m| sol.y(m, i + 1).to_vec()).collect();
        let (yhat, _) = proj.project(&next, k);
        let mut ztarget = vec![0.0; mm * kd];
        ztarget.par_chunks_mut(kd).enumerate().for_each(|(m, row)| {
            let db = ens.increment(m, i);
            for a in 0..k {
                let resid = next[m * k + a] - yhat[m * k + a];
                for j in 0..d {
                    row[a * d + j] = resid * db[j] / dt;
                }
            }
        });
        let (zhat, _) = proj.project(&ztarget, kd);
        let t = ens.grid().time(i);
        let mut ynew = vec![0.0; mm * k];
        ynew.par_chunks_mut(k).enumerate().for_each(|(m, out)| {
            gen.eval_into(t, ens.value(m, i), frozen.y(m, i), &zhat[m * kd..(m + 1) * kd], out);
            for a in 0..k {
                out[a] = yhat[m * k + a] + out[a] * dt;
            }
        });
        if let Some(bad) = ynew.iter().chain(&zhat).position(|v| !v.is_finite()) {
            let what = if bad < ynew.len() { "y" } else { "z" };
            return Err(LabError::NonFinite { step: i, what: format!("{what} after regression") });
        }
        for m in 0..mm {
            sol.y_mut(m, i).copy_from_slice(&ynew[m * k..(m + 1) * k]);
            let at = (m * n + i) * kd;
            sol.z[at..at + kd].copy_from_slice(&zhat[m * kd..(m + 1) * kd]);
        }
    }
    Ok(())
}

fn pin_terminal(terminal: &TerminalSpec, ens: &PathEnsemble, sol: &mut DiscreteSolution) {
    let n = ens.grid().steps();
    for m in 0..ens.paths() {
        let b = ens.value(m, n).to_vec();
        terminal.eval_into(&b, sol.y_mut(m, n));
    }
}

/// One Picard step: solves the BSDE with `g(t, B_t, frozen_y_t, z_t)`.
/// `frozen_y = None` means the zero process.
pub fn solve_frozen_bsde(
    gen: &GeneratorSpec,
    frozen_y: Option<&DiscreteSolution>,
    terminal: &TerminalSpec,
    ens: &PathEnsemble,
    basis: &BasisSpec,
    deterministic_reduction: bool,
) -> Result<DiscreteSolution> {
    check_inputs(gen, terminal, ens)?;
    let zero;
    let frozen = match frozen_y {
        Some(f) => f,
        None => {
            zero = DiscreteSolution::zeros(ens.paths(), gen.k, gen.d, *ens.grid())?;
            &zero
        }
    };
    let mut sol = DiscreteSolution::zeros(ens.paths(), gen.k, gen.d, *ens.grid())?;
    if !sol.same_shape(frozen) {
        return Err(LabError::Dimension("frozen iterate does not match the ensemble".into()));
    }
    pin_terminal(terminal, ens, &mut sol);
    sweep(gen, frozen, ens, basis, deterministic_reduction, 0, ens.grid().steps(), &mut sol)?;
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PicardInit {
    Zero,
    ConstantField(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub basis: BasisSpec,
    pub p: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: PicardInit,
    /// Split point `T1`; windows of length `T - T1` are solved backward from `T`.
    pub split: Option<f64>,
    pub deterministic_reduction: bool,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            basis: BasisSpec::default(),
            p: 2.0,
            tol: 1e-4,
            max_iter: 25,
            init: PicardInit::Zero,
            split: None,
            deterministic_reduction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardRow {
    pub iter: usize,
    pub dist_y: f64,
    pub dist_z: f64,
    pub sp_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub t_start: f64,
    pub t_end: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub rows: Vec<PicardRow>,
    pub converged: bool,
    /// One entry per window, latest time window first.
    pub windows: Vec<WindowReport>,
    pub warnings: Vec<String>,
}

impl PicardReport {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn dist_y(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.dist_y).collect()
    }

    /// CSV `iter,dist_y,dist_z,sp_norm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,dist_y,dist_z,sp_norm")?;
        for r in &self.rows {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e}", r.iter, r.dist_y, r.dist_z, r.sp_norm)?;
        }
        Ok(())
    }
}

/// `E sup_{lo<=i<=hi} |a - b|^p` and `E (sum_{lo<=i<hi} |za - zb|^2 dt)^{p/2}`.
pub(crate) fn window_distance(
    a: &DiscreteSolution,
    b: &DiscreteSolution,
    p: f64,
    lo: usize,
    hi: usize,
) -> (f64, f64) {
    let dt = a.grid.steps() as f64;
    let dt = a.grid.horizon() / dt;
    let mut dy = 0.0;
    let mut dz = 0.0;
    for m in 0..a.paths {
        let mut sup = 0.0f64;
        for i in lo..=hi {
            let s: f64 = a.y(m, i).iter().zip(b.y(m, i)).map(|(x, y)| (x - y).powi(2)).sum();
            sup = sup.max(s.sqrt());
        }
        let mut q = 0.0;
        for i in lo..hi {
            q += a.z(m, i).iter().zip(b.z(m, i)).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * dt;
        }
        dy += sup.powf(p);
        dz += q.powf(p / 2.0);
    }
    let n = a.paths as f64;
    (dy / n, dz / n)
}

fn window_sp(sol: &DiscreteSolution, p: f64, lo: usize, hi: usize) -> f64 {
    let mut acc = 0.0;
    for m in 0..sol.paths {
        let sup = (lo..=hi)
            .map(|i| sol.y(m, i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        acc += sup.powf(p);
    }
    (acc / sol.paths as f64).powf(1.0 / p)
}

/// Picard iteration `y^{n+1} = Phi(y^n)` on the shared ensemble.
/// `dist_y(n)` compares `y^{n+1}` with `y^n`; the iteration stops once it is
/// at most `tol`. Running out of iterations is reported, not raised.
pub fn picard_solve(
    gen: &GeneratorSpec,
    terminal: &TerminalSpec,
    ens: &PathEnsemble,
    cfg: &PicardConfig,
) -> Result<(DiscreteSolution, PicardReport)> {
    check_inputs(gen, terminal, ens)?;
    if !(cfg.p > 1.0) {
        return Err(param(format!("p must exceed 1, got {}", cfg.p)));
    }
    if !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(param("picard needs tol > 0 and max_iter >= 1"));
    }
    let grid = *ens.grid();
    let n = grid.steps();
    let mut warnings = Vec::new();
    match gen.analytic_lipschitz_z() {
        Some(c) if grid.dt() * c > 0.5 => warnings.push(format!(
            "explicit z step may be unstable: dt*C = {:.3} > 0.5",
            grid.dt() * c
        )),
        None => warnings.push("no Lipschitz constant in z available for the step-size check".into()),
        _ => {}
    }

    let mut init = DiscreteSolution::zeros(ens.paths(), gen.k, gen.d, grid)?;
    if let PicardInit::ConstantField(v) = &cfg.init {
        if v.len() != gen.k {
            return Err(LabError::Dimension(format!("initial field needs {} entries", gen.k)));
        }
        for chunk in init.y.chunks_mut(gen.k) {
            chunk.copy_from_slice(v);
        }
    }

    // window boundaries, from T backward
    let mut bounds = vec![n];
    if let Some(t1) = cfg.split {
        let t = grid.horizon();
        let t1 = if t1 > 0.0 && t1 < t { t1 } else { t / 2.0 };
        let len = (((t - t1) / grid.dt()).round() as usize).clamp(1, n);
        let mut hi = n;
        while hi > 0 {
            hi = hi.saturating_sub(len);
            bounds.push(hi);
        }
    } else {
        bounds.push(0);
    }

    let mut current = init.clone();
    pin_terminal(terminal, ens, &mut current);
    let mut rows = Vec::new();
    let mut windows = Vec::new();
    let mut all_converged = true;
    for w in bounds.windows(2) {
        let (hi, lo) = (w[0], w[1]);
        // y^1 on this window, frozen at the initial field
        let mut prev = current.clone();
        sweep(gen, &init, ens, &cfg.basis, cfg.deterministic_reduction, lo, hi, &mut prev)?;
        let mut converged = false;
        let mut increases = 0;
        let mut last = f64::INFINITY;
        let mut used = 0;
        for _ in 0..cfg.max_iter {
            let mut next = prev.clone();
            sweep(gen, &prev, ens, &cfg.basis, cfg.deterministic_reduction, lo, hi, &mut next)?;
            let (dy, dz) = window_distance(&next, &prev, cfg.p, lo, hi);
            used += 1;
            rows.push(PicardRow { iter: rows.len() + 1, dist_y: dy, dist_z: dz, sp_norm: window_sp(&next, cfg.p, lo, hi) });
            prev = next;
            if !dy.is_finite() {
                return Err(LabError::Divergence(format!("dist_y is not finite at iteration {used}")));
            }
            if dy <= cfg.tol {
                converged = true;
                break;
            }
            increases = if dy > last { increases + 1 } else { 0 };
            if increases >= 5 {
                return Err(LabError::Divergence(format!(
                    "dist_y increased 5 times in a row, reaching {dy:e} at iteration {used}"
                )));
            }
            last = dy;
        }
        all_converged &= converged;
        windows.push(WindowReport { t_start: grid.time(lo), t_end: grid.time(hi), iterations: used, converged });
        current = prev;
    }
    Ok((current, PicardReport { rows, converged: all_converged, windows, warnings }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_count() {
        for (d, q) in [(1, 3), (2, 3), (3, 2), (2, 0)] {
            assert_eq!(multi_indices(d, q).len(), BasisSpec { degree: q, ridge: None }.size(d));
        }
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let ens = PathEnsemble::generate(400, 2, 2, 1.0, 3).unwrap();
        let state = ens.state_at(1);
        let targets: Vec<f64> = (0..400).flat_map(|_| [2.5, -1.0]).collect();
        let r = regress_conditional_expectation(&targets, 2, &state, 2, &BasisSpec::default()).unwrap();
        for (f, t) in r.fitted.iter().zip(&targets) {
            assert!((f - t).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_targets_are_exact() {
        let ens = PathEnsemble::generate(300, 1, 1, 1.0, 5).unwrap();
        let state = ens.state_at(1);
        let targets: Vec<f64> = state.iter().map(|x| 3.0 * x).collect();
        let basis = BasisSpec::new(2, Some(0.0)).unwrap();
        let r = regress_conditional_expectation(&targets, 1, &state, 1, &basis).unwrap();
        for (f, t) in r.fitted.iter().zip(&targets) {
            assert!((f - t).abs() < 1e-10);
        }
    }

    #[test]
    fn martingale_projection() {
        let m = 1 << 14;
        let ens = PathEnsemble::generate(m, 2, 1, 1.0, 11).unwrap();
        let bt = ens.state_at(2);
        let bs = ens.state_at(1);
        let r = regress_conditional_expectation(&bt, 1, &bs, 1, &BasisSpec::default()).unwrap();
        let rms = (r.fitted.iter().zip(&bs).map(|(f, b)| (f - b).powi(2)).sum::<f64>() / m as f64).sqrt();
        // sd of B_T - B_t is sqrt(1/2)
        assert!(rms <= 3.0 * (m as f64).powf(-0.5) * 0.5f64.sqrt() * 2.0, "rms {rms}");
    }

    #[test]
    fn singular_without_ridge() {
        let state: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let targets = state.clone();
        let basis = BasisSpec::new(3, Some(0.0)).unwrap();
        let err = regress_conditional_expectation(&targets, 1, &state, 1, &basis).unwrap_err();
        assert!(matches!(err, LabError::Singular(_)));
        assert!(err.to_string().contains("ridge > 0"));
        let basis = BasisSpec::new(3, Some(1e-6)).unwrap();
        assert!(regress_conditional_expectation(&targets, 1, &state, 1, &basis).is_ok());
    }

    #[test]
    fn too_few_samples() {
        let state = vec![0.1, 0.2, 0.3];
        assert!(regress_conditional_expectation(&state, 1, &state, 1, &BasisSpec::default()).is_err());
    }

    #[test]
    fn zero_generator_constant_terminal() {
        let ens = PathEnsemble::generate(256, 10, 1, 1.0, 2).unwrap();
        let gen = GeneratorSpec::zero(1, 1).unwrap();
        let sol =
            solve_frozen_bsde(&gen, None, &TerminalSpec::Constant(vec![1.5]), &ens, &BasisSpec::default(), true)
                .unwrap();
        assert!(sol.y_data().iter().all(|v| (v - 1.5).abs() < 1e-12));
        assert!(sol.z_data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_generator_coordinate_terminal() {
        let ens = PathEnsemble::generate(4096, 10, 1, 1.0, 8).unwrap();
        let gen = GeneratorSpec::zero(1, 1).unwrap();
        let sol =
            solve_frozen_bsde(&gen, None, &TerminalSpec::Coordinate(0), &ens, &BasisSpec::default(), true).unwrap();
        for m in 0..ens.paths() {
            assert_eq!(sol.y(m, 10)[0], ens.value(m, 10)[0]);
        }
        let err: f64 = (0..ens.paths()).map(|m| (sol.y(m, 5)[0] - ens.value(m, 5)[0]).abs()).sum::<f64>()
            / ens.paths() as f64;
        assert!(err < 0.05, "{err}");
        let zmean = sol.z_data().iter().sum::<f64>() / sol.z_data().len() as f64;
        assert!((zmean - 1.0).abs() < 0.02, "{zmean}");
    }

    #[test]
    fn deterministic_drift() {
        let ens = PathEnsemble::generate(512, 20, 1, 1.0, 2).unwrap();
        let gen = GeneratorSpec::scalar_linear(0.0, 0.2, 1).unwrap();
        let sol = solve_frozen_bsde(&gen, None, &TerminalSpec::Constant(vec![0.0]), &ens, &BasisSpec::default(), true)
            .unwrap();
        for i in 0..=20 {
            let t = ens.grid().time(i);
            assert!((sol.y(7, i)[0] - 0.2 * (1.0 - t)).abs() < 1e-9);
        }
        assert!(sol.z_data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn picard_zero_generator_stops_after_one() {
        let ens = PathEnsemble::generate(512, 10, 1, 1.0, 2).unwrap();
        let gen = GeneratorSpec::zero(1, 1).unwrap();
        let (_, rep) = picard_solve(&gen, &TerminalSpec::Coordinate(0), &ens, &PicardConfig::default()).unwrap();
        assert_eq!(rep.iterations(), 1);
        assert!(rep.converged);
        assert_eq!(rep.rows[0].dist_y, 0.0);
    }

    #[test]
    fn picard_linear_limit() {
        let ens = PathEnsemble::generate(256, 100, 1, 1.0, 2).unwrap();
        let gen = GeneratorSpec::scalar_linear(0.5, 0.0, 1).unwrap();
        let cfg = PicardConfig { tol: 1e-10, ..Default::default() };
        let (sol, rep) = picard_solve(&gen, &TerminalSpec::Constant(vec![1.0]), &ens, &cfg).unwrap();
        assert!(rep.converged);
        assert!((sol.y(0, 0)[0] - 0.5f64.exp()).abs() < 0.01, "{}", sol.y(0, 0)[0]);
    }

    #[test]
    fn picard_budget_exhaustion_is_not_an_error() {
        let ens = PathEnsemble::generate(128, 10, 1, 1.0, 2).unwrap();
        let gen = GeneratorSpec::scalar_linear(0.5, 0.0, 1).unwrap();
        let cfg = PicardConfig { tol: 1e-30, max_iter: 2, ..Default::default() };
        let (_, rep) = picard_solve(&gen, &TerminalSpec::Constant(vec![1.0]), &ens, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations(), 2);
    }

    #[test]
    fn split_matches_unsplit_for_linear() {
        let ens = PathEnsemble::generate(128, 20, 1, 1.0, 2).unwrap();
        let gen = GeneratorSpec::scalar_linear(0.5, 0.1, 1).unwrap();
        let term = TerminalSpec::Constant(vec![1.0]);
        let base = PicardConfig { tol: 1e-14, max_iter: 60, ..Default::default() };
        let (a, _) = picard_solve(&gen, &term, &ens, &base).unwrap();
        let split = PicardConfig { split: Some(0.5), ..base };
        let (b, rep) = picard_solve(&gen, &term, &ens, &split).unwrap();
        assert_eq!(rep.windows.len(), 2);
        assert!((a.y(3, 0)[0] - b.y(3, 0)[0]).abs() < 1e-6);
    }

    #[test]
    fn csv_layout() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let sol = DiscreteSolution::zeros(3, 1, 2, grid).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path,step,t,y_1,z_11,z_12");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert_eq!(lines[3].split(',').count(), 6);
    }
}
