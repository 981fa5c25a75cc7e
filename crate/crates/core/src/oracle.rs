//! Closed-form BSDE solutions used to validate the solver.

use crate::error::{param, LabError, Result};
use crate::generator::GeneratorSpec;
use crate::paths::PathEnsemble;
use crate::solver::{DiscreteSolution, TerminalSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum OracleKind {
    /// `g = 0`, `xi = B_T^{(j)}`.
    MartingaleCoordinate { j: usize },
    /// `g = 0`, `xi = |B_T|^2`, `d = 1`.
    MartingaleSquare,
    /// `g = a y + c`, deterministic `xi = v`, scalar.
    LinearDrift { a: f64, c: f64, v: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleInstance {
    pub kind: OracleKind,
    pub horizon: f64,
    pub d: usize,
}

impl OracleInstance {
    pub fn new(kind: OracleKind, horizon: f64, d: usize) -> Result<Self> {
        if !(horizon > 0.0) || d == 0 {
            return Err(param("oracle needs T > 0 and d >= 1"));
        }
        match kind {
            OracleKind::MartingaleCoordinate { j } if j >= d => {
                return Err(LabError::Dimension(format!("coordinate {j} out of range for d={d}")))
            }
            OracleKind::MartingaleSquare if d != 1 => {
                return Err(LabError::Dimension("the square oracle is one-dimensional".into()))
            }
            _ => {}
        }
        Ok(Self { kind, horizon, d })
    }

    pub fn generator(&self) -> Result<GeneratorSpec> {
        match self.kind {
            OracleKind::LinearDrift { a, c, .. } => GeneratorSpec::scalar_linear(a, c, self.d),
            _ => GeneratorSpec::zero(1, self.d),
        }
    }

    pub fn terminal(&self) -> TerminalSpec {
        match self.kind {
            OracleKind::MartingaleCoordinate { j } => TerminalSpec::Coordinate(j),
            OracleKind::MartingaleSquare => TerminalSpec::SquareNorm,
            OracleKind::LinearDrift { v, .. } => TerminalSpec::Constant(vec![v]),
        }
    }

    /// `(y, z)` at time `t` given `B_t`; `z` is the `1 x d` row.
    pub fn solution(&self, t: f64, b: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tt = self.horizon;
        if !(0.0..=tt).contains(&t) {
            return Err(param(format!("t={t} outside [0, {tt}]")));
        }
        if b.len() != self.d {
            return Err(LabError::Dimension(format!("Brownian state has {} entries, expected {}", b.len(), self.d)));
        }
        let mut z = vec![0.0; self.d];
        let y = match self.kind {
            OracleKind::MartingaleCoordinate { j } => {
                z[j] = 1.0;
                b[j]
            }
            OracleKind::MartingaleSquare => {
                z[0] = 2.0 * b[0];
                b[0] * b[0] + (tt - t)
            }
            OracleKind::LinearDrift { a, c, v } => {
                let s = tt - t;
                let growth = (a * s).exp();
                let drift = if a.abs() < 1e-12 { c * s } else { c / a * (growth - 1.0) };
                growth * v + drift
            }
        };
        Ok((y, z))
    }
}

pub fn oracle_solution(inst: &OracleInstance, t: f64, b: &[f64]) -> Result<(f64, Vec<f64>)> {
    inst.solution(t, b)
}

/// The oracle evaluated along every path of the ensemble.
pub fn oracle_on_ensemble(inst: &OracleInstance, ens: &PathEnsemble) -> Result<DiscreteSolution> {
    if ens.dim() != inst.d {
        return Err(LabError::Dimension(format!("ensemble d={} but oracle d={}", ens.dim(), inst.d)));
    }
    let grid = *ens.grid();
    let n = grid.steps();
    let mut sol = DiscreteSolution::zeros(ens.paths(), 1, inst.d, grid)?;
    let d = inst.d;
    for m in 0..ens.paths() {
        for i in 0..=n {
            let (y, z) = inst.solution(grid.time(i), ens.value(m, i))?;
            sol.y_data_mut()[m * (n + 1) + i] = y;
            if i < n {
                sol.z_data_mut()[(m * n + i) * d..(m * n + i + 1) * d].copy_from_slice(&z);
            }
        }
    }
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleErrors {
    /// `(E sup_t |y - y_oracle|^p)^{1/p}`
    pub sp_error: f64,
    /// Root mean square of `z - z_oracle` over paths and steps.
    pub z_rms_error: f64,
    /// S^p norm of the oracle itself, for relative errors.
    pub oracle_sp: f64,
}

pub fn compare_to_oracle(
    sol: &DiscreteSolution,
    inst: &OracleInstance,
    ens: &PathEnsemble,
    p: f64,
) -> Result<OracleErrors> {
    if !(p > 1.0) {
        return Err(param(format!("p must exceed 1, got {p}")));
    }
    if sol.k() != 1 || sol.d() != inst.d || sol.paths() != ens.paths() || sol.grid() != ens.grid() {
        return Err(LabError::Dimension("solution does not match the oracle ensemble".into()));
    }
    let grid = *ens.grid();
    let n = grid.steps();
    let (mut sp, mut osp, mut zsq) = (0.0, 0.0, 0.0);
    for m in 0..ens.paths() {
        let (mut sup, mut osup) = (0.0f64, 0.0f64);
        for i in 0..=n {
            let (y, z) = inst.solution(grid.time(i), ens.value(m, i))?;
            sup = sup.max((sol.y(m, i)[0] - y).abs());
            osup = osup.max(y.abs());
            if i < n {
                zsq += sol.z(m, i).iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        sp += sup.powf(p);
        osp += osup.powf(p);
    }
    let mm = ens.paths() as f64;
    Ok(OracleErrors {
        sp_error: (sp / mm).powf(1.0 / p),
        z_rms_error: (zsq / (mm * n as f64)).sqrt(),
        oracle_sp: (osp / mm).powf(1.0 / p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{regress_conditional_expectation, BasisSpec};

    #[test]
    fn pointwise_values() {
        let mc = OracleInstance::new(OracleKind::MartingaleCoordinate { j: 0 }, 1.0, 1).unwrap();
        assert_eq!(mc.solution(1.0, &[0.7]).unwrap(), (0.7, vec![1.0]));
        let sq = OracleInstance::new(OracleKind::MartingaleSquare, 1.0, 1).unwrap();
        assert_eq!(sq.solution(0.0, &[0.0]).unwrap().0, 1.0);
        let ld = OracleInstance::new(OracleKind::LinearDrift { a: 0.5, c: 0.0, v: 1.0 }, 1.0, 1).unwrap();
        assert!((ld.solution(0.0, &[0.0]).unwrap().0 - 0.5f64.exp()).abs() < 1e-15);
        let flat = OracleInstance::new(OracleKind::LinearDrift { a: 0.0, c: 0.2, v: 0.0 }, 1.0, 1).unwrap();
        assert!((flat.solution(0.25, &[0.0]).unwrap().0 - 0.15).abs() < 1e-15);
        assert!(mc.solution(1.5, &[0.0]).is_err());
        assert!(OracleInstance::new(OracleKind::MartingaleSquare, 1.0, 2).is_err());
    }

    #[test]
    fn exact_and_shifted_comparisons() {
        let ens = PathEnsemble::generate(50, 8, 1, 1.0, 2).unwrap();
        let inst = OracleInstance::new(OracleKind::MartingaleSquare, 1.0, 1).unwrap();
        let mut sol = oracle_on_ensemble(&inst, &ens).unwrap();
        let e = compare_to_oracle(&sol, &inst, &ens, 2.0).unwrap();
        assert_eq!((e.sp_error, e.z_rms_error), (0.0, 0.0));
        sol.y_data_mut().iter_mut().for_each(|v| *v += 0.01);
        let e = compare_to_oracle(&sol, &inst, &ens, 2.0).unwrap();
        assert!((e.sp_error - 0.01).abs() < 1e-12);
    }

    #[test]
    fn discrete_residual_is_small() {
        // y_i - y_{i+1} - g dt + z_i dB_i should have conditional mean O(dt^2)
        let ens = PathEnsemble::generate(20_000, 10, 1, 1.0, 9).unwrap();
        let inst = OracleInstance::new(OracleKind::MartingaleSquare, 1.0, 1).unwrap();
        let sol = oracle_on_ensemble(&inst, &ens).unwrap();
        let i = 4;
        let resid: Vec<f64> = (0..ens.paths())
            .map(|m| sol.y(m, i)[0] - sol.y(m, i + 1)[0] + sol.z(m, i)[0] * ens.increment(m, i)[0])
            .collect();
        let state = ens.state_at(i);
        let r = regress_conditional_expectation(&resid, 1, &state, 1, &BasisSpec::default()).unwrap();
        let rms = (r.fitted.iter().map(|v| v * v).sum::<f64>() / r.fitted.len() as f64).sqrt();
        assert!(rms < 0.01, "{rms}");
    }
}
