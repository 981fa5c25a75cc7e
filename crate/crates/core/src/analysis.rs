//! Norms, Picard distances, the Bihari recursion, closed-form constants and
//! Monte Carlo evaluations of the energy and a priori inequalities.

use std::io::Write;

use crate::error::{param, LabError, Result};
use crate::generator::{mean_and_se, EnvelopeA, GeneratorSpec};
use crate::modulus::{check_shape, ModulusSpec};
use crate::paths::PathEnsemble;
use crate::quad::trapezoid;
use crate::solver::{window_distance, DiscreteSolution};

pub const DEFAULT_QUAD_STEPS: usize = 2048;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(param(format!("p must exceed 1, got {p}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    /// `(E sup_t |y_t|^p)^{1/p}`
    pub sp: f64,
    /// `(E (int |z|^2 dt)^{p/2})^{1/p}`
    pub mp: f64,
}

pub fn lp_norms(sol: &DiscreteSolution, p: f64) -> Result<Norms> {
    check_p(p)?;
    if sol.y_data().iter().chain(sol.z_data()).any(|v| !v.is_finite()) {
        return Err(param("solution contains non-finite entries"));
    }
    let grid = sol.grid();
    let n = grid.steps();
    let dt = grid.dt();
    let (mut sy, mut sz) = (0.0, 0.0);
    for m in 0..sol.paths() {
        let sup = (0..=n).map(|i| norm(sol.y(m, i))).fold(0.0, f64::max);
        let q: f64 = (0..n).map(|i| sol.z(m, i).iter().map(|x| x * x).sum::<f64>() * dt).sum();
        sy += sup.powf(p);
        sz += q.powf(p / 2.0);
    }
    let mm = sol.paths() as f64;
    Ok(Norms { sp: (sy / mm).powf(1.0 / p), mp: (sz / mm).powf(1.0 / p) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    /// `E sup_t |a_t - b_t|^p`
    pub dy: f64,
    /// `E (int |za - zb|^2 dt)^{p/2}`
    pub dz: f64,
}

pub fn picard_distance(a: &DiscreteSolution, b: &DiscreteSolution, p: f64) -> Result<Distance> {
    check_p(p)?;
    if !a.same_shape(b) {
        return Err(LabError::Dimension("solutions differ in shape or grid".into()));
    }
    let (dy, dz) = window_distance(a, b, p, 0, a.grid().steps());
    Ok(Distance { dy, dz })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BihariCurve {
    pub times: Vec<f64>,
    /// `phi[n][j]` is `phi_n(times[j])`.
    pub phi: Vec<Vec<f64>>,
}

impl BihariCurve {
    /// `phi_n` at the left end `T1`.
    pub fn at_start(&self) -> Vec<f64> {
        self.phi.iter().map(|row| row[0]).collect()
    }

    /// Wide CSV `t,phi_0..phi_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t");
        for n in 0..self.phi.len() {
            header += &format!(",phi_{n}");
        }
        writeln!(w, "{header}")?;
        for (j, t) in self.times.iter().enumerate() {
            let mut line = format!("{t:.16e}");
            for row in &self.phi {
                line += &format!(",{:.16e}", row[j]);
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// `phi_0(t) = (T - t) mod(M)`, `phi_{n+1}(t) = int_t^T mod(phi_n(s)) ds` on
/// `quad_steps` equally spaced points of `[T1, T]`.
pub fn bihari_recursion(
    modulus: &ModulusSpec,
    m_bound: f64,
    horizon: f64,
    t1: f64,
    n_max: usize,
    quad_steps: usize,
) -> Result<BihariCurve> {
    if !(m_bound >= 0.0 && m_bound.is_finite()) {
        return Err(param(format!("M bound must be finite and >= 0, got {m_bound}")));
    }
    if !(t1 >= 0.0 && t1 < horizon) {
        return Err(param(format!("need 0 <= T1 < T, got T1={t1}, T={horizon}")));
    }
    if quad_steps < 2 {
        return Err(param("quad_steps must be at least 2"));
    }
    let scale = modulus.value(modulus.domain_cap).abs().max(1.0);
    if !check_shape(modulus, 512, 1e-9 * scale)?.is_admissible() {
        return Err(param("the recursion needs a nondecreasing concave modulus with mod(0) = 0"));
    }
    let h = (horizon - t1) / (quad_steps - 1) as f64;
    let times: Vec<f64> = (0..quad_steps)
        .map(|j| if j + 1 == quad_steps { horizon } else { t1 + j as f64 * h })
        .collect();
    let top = modulus.value(m_bound);
    let mut phi = vec![times.iter().map(|t| (horizon - t) * top).collect::<Vec<f64>>()];
    let tol = 1e-9 * phi[0][0].max(1e-300);
    for n in 0..n_max {
        let prev = &phi[n];
        let g: Vec<f64> = prev.iter().map(|&v| modulus.value(v)).collect();
        let mut next = vec![0.0; quad_steps];
        for j in (0..quad_steps - 1).rev() {
            next[j] = next[j + 1] + 0.5 * h * (g[j] + g[j + 1]);
        }
        if let Some(j) = (0..quad_steps).find(|&j| next[j] > prev[j] + tol || next[j] < 0.0) {
            return Err(LabError::Consistency(format!(
                "phi_{} exceeds phi_{} at t={}: {} > {}",
                n + 1,
                n,
                times[j],
                next[j],
                prev[j]
            )));
        }
        phi.push(next);
    }
    Ok(BihariCurve { times, phi })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInputs {
    pub p: f64,
    pub lambda: f64,
    pub horizon: f64,
    /// Linear-growth coefficient `A` of the modulus.
    pub a: f64,
    pub k_prime_p: f64,
    pub k_doubleprime_p: f64,
    /// `None` derives `2 k'_p d`.
    pub c1: Option<f64>,
    /// `None` uses 1.
    pub c2: Option<f64>,
    /// `None` derives `2 k'_p d`.
    pub c3: Option<f64>,
    /// Estimate of `E|xi|^p`.
    pub terminal_moment: f64,
    /// Estimate of `E (int_0^T |g(t,0,0)| dt)^p`.
    pub h3_moment: f64,
}

impl Default for ConstantInputs {
    fn default() -> Self {
        Self {
            p: 2.0,
            lambda: 0.0,
            horizon: 1.0,
            a: 0.0,
            k_prime_p: 2.0,
            k_doubleprime_p: 2.0,
            c1: None,
            c2: None,
            c3: None,
            terminal_moment: 0.0,
            h3_moment: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsBundle {
    pub p: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub a: f64,
    pub k_prime_p: f64,
    pub k_doubleprime_p: f64,
    pub theta: f64,
    pub c_p: f64,
    pub c_lambda_p_t: f64,
    pub d_lambda_p_theta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub mu0: f64,
    pub m_bound: f64,
    pub t1: f64,
}

impl ConstantsBundle {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("p", self.p),
            ("lambda", self.lambda),
            ("T", self.horizon),
            ("A", self.a),
            ("k_prime_p", self.k_prime_p),
            ("k_doubleprime_p", self.k_doubleprime_p),
            ("theta", self.theta),
            ("c_p", self.c_p),
            ("c_lambda_p_T", self.c_lambda_p_t),
            ("d_lambda_p_theta", self.d_lambda_p_theta),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("mu0", self.mu0),
            ("M_bound", self.m_bound),
            ("T1", self.t1),
        ]
    }

    /// CSV `name,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "name,value")?;
        for (k, v) in self.entries() {
            writeln!(w, "{k},{v:.16e}")?;
        }
        Ok(())
    }
}

pub fn compute_constants(inp: &ConstantInputs) -> Result<ConstantsBundle> {
    let p = inp.p;
    check_p(p)?;
    for (name, v) in [
        ("lambda", inp.lambda),
        ("A", inp.a),
        ("terminal moment", inp.terminal_moment),
        ("h3 moment", inp.h3_moment),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(param(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if !(inp.horizon > 0.0) || !(inp.k_prime_p > 0.0) || !(inp.k_doubleprime_p > 0.0) {
        return Err(param("T, k'_p and k''_p must be positive"));
    }
    let lam = inp.lambda;
    let t = inp.horizon;
    let c_p = p * (p - 1.0).min(1.0) / 2.0;
    let c_lambda_p_t = 2f64.powf(p + 4.0) * (3.0 + 2.0 * lam * lam * t + t.powf(p));
    let theta = 2f64.powf(p + 2.0) * inp.k_prime_p;
    let d = (p - 1.0) * theta.powf(1.0 / (p - 1.0)) + p * lam * lam / (p - 1.0).min(1.0);
    let derived = 2.0 * inp.k_prime_p * d;
    let c1 = inp.c1.unwrap_or(derived);
    let c3 = inp.c3.unwrap_or(derived);
    let c2 = inp.c2.unwrap_or(1.0);
    if !(c1 > 0.0) || !(c3 > 0.0) {
        return Err(param(format!("c1 and c3 must be positive, got c1={c1}, c3={c3}")));
    }
    if !(c2 > 0.0) {
        return Err(param(format!("c2 must be positive, got {c2}")));
    }
    let mu0 = c2 * (c3 * t).exp() * (inp.terminal_moment + inp.h3_moment);
    let m_bound = 2.0 * mu0 + 2.0 * inp.a * t;
    let growth = if inp.a > 0.0 { t - 1.0 / (2.0 * inp.a) } else { f64::NEG_INFINITY };
    let ln2 = std::f64::consts::LN_2;
    let t1 = (t - ln2 / c1).max(t - ln2 / c3).max(growth).max(0.0);
    Ok(ConstantsBundle {
        p,
        lambda: lam,
        horizon: t,
        a: inp.a,
        k_prime_p: inp.k_prime_p,
        k_doubleprime_p: inp.k_doubleprime_p,
        theta,
        c_p,
        c_lambda_p_t,
        d_lambda_p_theta: d,
        c1,
        c2,
        c3,
        mu0,
        m_bound,
        t1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`
    pub slack: f64,
    pub std_error: f64,
}

fn check_solution(sol: &DiscreteSolution, gen: &GeneratorSpec, ens: &PathEnsemble, t_index: usize) -> Result<()> {
    if sol.paths() != ens.paths() || sol.grid() != ens.grid() || sol.d() != ens.dim() {
        return Err(LabError::Dimension("solution was not computed on this ensemble".into()));
    }
    if sol.k() != gen.k || sol.d() != gen.d {
        return Err(LabError::Dimension("solution and generator dimensions differ".into()));
    }
    if t_index > sol.grid().steps() {
        return Err(param(format!("time index {t_index} beyond N={}", sol.grid().steps())));
    }
    Ok(())
}

/// Expectation form of the energy inequality from `t_index` to `T`, with
/// left-point time sums.
pub fn check_lemma1(
    sol: &DiscreteSolution,
    gen: &GeneratorSpec,
    ens: &PathEnsemble,
    p: f64,
    t_index: usize,
) -> Result<Lemma1Report> {
    check_p(p)?;
    check_solution(sol, gen, ens, t_index)?;
    let grid = sol.grid();
    let (n, dt) = (grid.steps(), grid.dt());
    let c_p = p * (p - 1.0).min(1.0) / 2.0;
    let mut g = vec![0.0; gen.k];
    let mut lhs = Vec::with_capacity(sol.paths());
    let mut rhs = Vec::with_capacity(sol.paths());
    for m in 0..sol.paths() {
        let (mut zz, mut yg) = (0.0, 0.0);
        for i in t_index..n {
            let y = sol.y(m, i);
            let ny = norm(y);
            if ny == 0.0 {
                continue;
            }
            let w = ny.powf(p - 2.0);
            let z = sol.z(m, i);
            zz += w * z.iter().map(|x| x * x).sum::<f64>() * dt;
            gen.eval_into(grid.time(i), ens.value(m, i), y, z, &mut g);
            yg += w * y.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() * dt;
        }
        lhs.push(norm(sol.y(m, t_index)).powf(p) + c_p * zz);
        rhs.push(norm(sol.y(m, n)).powf(p) + p * yg);
    }
    let slack: Vec<f64> = rhs.iter().zip(&lhs).map(|(r, l)| r - l).collect();
    let (s, se) = mean_and_se(&slack);
    Ok(Lemma1Report { lhs: mean_and_se(&lhs).0, rhs: mean_and_se(&rhs).0, slack: s, std_error: se })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriReport {
    pub prop1_lhs: f64,
    pub prop1_rhs: f64,
    pub prop1_holds: bool,
    pub prop2_lhs: f64,
    pub prop2_rhs: f64,
    pub prop2_holds: bool,
}

/// Both a priori bounds as Monte Carlo estimates from `t_index` to `T`:
/// the `z` bound with constant `c_{lambda,p,T}` and the `y` bound with
/// `K = 2 k'_p d`. Advisory only. Frozen-path envelope processes are
/// evaluated along the solution itself.
pub fn check_apriori_bounds(
    sol: &DiscreteSolution,
    env: &EnvelopeA,
    cb: &ConstantsBundle,
    p: f64,
    t_index: usize,
    ens: &PathEnsemble,
) -> Result<AprioriReport> {
    check_p(p)?;
    env.validate()?;
    if sol.paths() != ens.paths() || sol.grid() != ens.grid() || sol.d() != ens.dim() {
        return Err(LabError::Dimension("solution was not computed on this ensemble".into()));
    }
    let grid = sol.grid();
    let (n, dt) = (grid.steps(), grid.dt());
    if t_index > n {
        return Err(param(format!("time index {t_index} beyond N={n}")));
    }
    let mm = sol.paths() as f64;
    let (mut sup_y, mut zint, mut phi_p, mut f_int_p, mut xi_p) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut y_moment = vec![0.0; n + 1];
    for m in 0..sol.paths() {
        let mut sup = 0.0f64;
        for (i, moment) in y_moment.iter_mut().enumerate().skip(t_index) {
            let ny = norm(sol.y(m, i));
            sup = sup.max(ny);
            *moment += ny.powf(p) / mm;
        }
        let (mut q, mut ph, mut fi) = (0.0, 0.0, 0.0);
        for i in t_index..n {
            q += sol.z(m, i).iter().map(|x| x * x).sum::<f64>() * dt;
            let b = ens.value(m, i);
            let y = Some(sol.y(m, i));
            ph += env.phi.value(b, y)?.powf(p) * dt;
            fi += env.f.value(b, y)? * dt;
        }
        sup_y += sup.powf(p) / mm;
        zint += q.powf(p / 2.0) / mm;
        phi_p += ph / mm;
        f_int_p += fi.powf(p) / mm;
        xi_p += norm(sol.y(m, n)).powf(p) / mm;
    }
    let prop1_rhs = cb.c_lambda_p_t * (sup_y + env.psi.value(sup_y) + phi_p + f_int_p);
    let psi_int = if t_index < n {
        let vals: Vec<f64> = y_moment[t_index..=n].iter().map(|&v| env.psi.value(v)).collect();
        trapezoid(&vals, dt)
    } else {
        0.0
    };
    let k = 2.0 * cb.k_prime_p * cb.d_lambda_p_theta;
    let span = grid.horizon() - grid.time(t_index);
    let prop2_rhs = (k * span).exp()
        * (2.0 * cb.k_prime_p * xi_p + cb.k_doubleprime_p * f_int_p + 0.5 * phi_p + 0.5 * psi_int);
    Ok(AprioriReport {
        prop1_lhs: zint,
        prop1_rhs,
        prop1_holds: zint <= prop1_rhs,
        prop2_lhs: sup_y,
        prop2_rhs,
        prop2_holds: sup_y <= prop2_rhs,
    })
}
