use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{bihari_recursion, compute_constants, lp_norms, ConstantInputs, ConstantsBundle};
use crate::error::{LabError, Result};
use crate::generator::{
    check_h1, check_h3, estimate_lipschitz_z, verify_envelope, GeneratorFamily, GeneratorRegistry, GeneratorSpec,
    ProcessKind, Sampler, YCoefficient, ZCoupling,
};
use crate::modulus::{check_shape, linear_growth_coefficient, osgood_classify, ModulusSpec, OsgoodVerdict};
use crate::oracle::{compare_to_oracle, OracleInstance, OracleKind};
use crate::paths::PathEnsemble;
use crate::solver::{picard_solve, TerminalSpec};

use super::config::{RunConfig, SplitConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Solve,
    OracleCompare,
    Bihari,
    Constants,
    GenPaths,
    ConvergenceStudy,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    /// Warnings and failure notes for stderr.
    pub messages: Vec<String>,
}

/// Process exit code for an error: 2 for usage and configuration problems.
pub fn exit_code_for(err: &LabError) -> i32 {
    match err {
        LabError::Config(_) | LabError::Parameter(_) | LabError::Dimension(_) => 2,
        _ => 1,
    }
}

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    /// Directory that relative paths in the config refer to.
    pub base: PathBuf,
    pub registry: &'a GeneratorRegistry,
    pub paths_file: Option<PathBuf>,
}

impl Context<'_> {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.base.join(&self.cfg.output_dir);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn paths_file(&self) -> Option<PathBuf> {
        self.paths_file.clone().or_else(|| self.cfg.paths.paths_file.as_ref().map(|p| self.base.join(p)))
    }

    fn ensemble(&self) -> Result<PathEnsemble> {
        let p = &self.cfg.paths;
        match self.paths_file() {
            Some(file) if file.exists() => {
                let ens = PathEnsemble::load(&file)?;
                if ens.dim() != p.d {
                    return Err(LabError::Config(format!(
                        "{} holds d={} paths but paths.d = {}",
                        file.display(),
                        ens.dim(),
                        p.d
                    )));
                }
                Ok(ens)
            }
            _ => PathEnsemble::generate_with(p.m, p.n, p.d, p.t, p.seed, p.antithetic),
        }
    }
}

fn write_csv<F>(dir: &Path, name: &str, files: &mut Vec<PathBuf>, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    f(&mut w)?;
    w.flush()?;
    files.push(path);
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn run(cmd: Command, ctx: &Context<'_>) -> Result<RunOutcome> {
    match cmd {
        Command::Check => run_check(ctx),
        Command::Solve => run_solve(ctx),
        Command::OracleCompare => run_oracle(ctx),
        Command::Bihari => run_bihari(ctx),
        Command::Constants => run_constants(ctx),
        Command::GenPaths => run_gen_paths(ctx),
        Command::ConvergenceStudy => run_study(ctx),
    }
}

fn terminal_moment(term: &TerminalSpec, ens: &PathEnsemble, p: f64) -> f64 {
    let n = ens.grid().steps();
    let mut out = vec![0.0; term.k()];
    let mut acc = 0.0;
    for m in 0..ens.paths() {
        term.eval_into(ens.value(m, n), &mut out);
        acc += out.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p);
    }
    acc / ens.paths() as f64
}

/// Tabulated moduli carry interpolation error, so they get the loose threshold.
fn sampler(ctx: &Context<'_>, gen: &GeneratorSpec, modulus: Option<&ModulusSpec>) -> Sampler {
    let c = &ctx.cfg.check;
    let tol = match modulus {
        Some(m) if m.as_tabulated().is_some() => gen.check_tolerance().max(1e-6),
        _ => gen.check_tolerance(),
    };
    Sampler { count: c.count, radius: c.radius, horizon: ctx.cfg.paths.t, seed: c.seed.unwrap_or(ctx.cfg.paths.seed), tol }
}

/// Constants bundle with `lambda`, `A` and the moments estimated from the run.
pub fn derive_constants(ctx: &Context<'_>, gen: &GeneratorSpec, ens: &PathEnsemble) -> Result<ConstantsBundle> {
    let cfg = ctx.cfg;
    let p = cfg.solver.p;
    let lambda = match cfg.constants.lambda.or(gen.analytic_lipschitz_z()) {
        Some(l) => l,
        None => estimate_lipschitz_z(gen, &sampler(ctx, gen, None))?.sampled,
    };
    let a = match cfg.constants.a {
        Some(a) => a,
        None => linear_growth_coefficient(&cfg.rho(gen, &ctx.base)?, 4096)?,
    };
    let terminal_moment = match &cfg.terminal {
        Some(_) => terminal_moment(&cfg.terminal()?, ens, p),
        None => 0.0,
    };
    compute_constants(&ConstantInputs {
        p,
        lambda,
        horizon: ens.grid().horizon(),
        a,
        k_prime_p: cfg.constants.k_prime_p,
        k_doubleprime_p: cfg.constants.k_doubleprime_p,
        c1: cfg.constants.c1,
        c2: cfg.constants.c2,
        c3: cfg.constants.c3,
        terminal_moment,
        h3_moment: check_h3(gen, ens, p)?.estimate,
    })
}

fn run_constants(ctx: &Context<'_>) -> Result<RunOutcome> {
    let gen = ctx.cfg.generator(ctx.registry)?;
    let ens = ctx.ensemble()?;
    let cb = derive_constants(ctx, &gen, &ens)?;
    let mut out = RunOutcome::default();
    write_csv(&ctx.out_dir()?, "constants.csv", &mut out.files, |w| cb.write_csv(w))?;
    Ok(out)
}

fn run_bihari(ctx: &Context<'_>) -> Result<RunOutcome> {
    let cfg = ctx.cfg;
    let gen = cfg.generator(ctx.registry)?;
    let rho = cfg.rho(&gen, &ctx.base)?;
    let b = &cfg.bihari;
    let (m_bound, t1) = match (b.m_bound, b.t1) {
        (Some(m), Some(t)) => (m, t),
        (m, t) => {
            let ens = ctx.ensemble()?;
            let cb = derive_constants(ctx, &gen, &ens)?;
            (m.unwrap_or(cb.m_bound), t.unwrap_or(cb.t1))
        }
    };
    let curve = bihari_recursion(&rho, m_bound, cfg.paths.t, t1, b.n_max, b.quad_steps)?;
    let mut out = RunOutcome::default();
    write_csv(&ctx.out_dir()?, "bihari.csv", &mut out.files, |w| curve.write_csv(w))?;
    Ok(out)
}

fn run_gen_paths(ctx: &Context<'_>) -> Result<RunOutcome> {
    let p = &ctx.cfg.paths;
    let ens = PathEnsemble::generate_with(p.m, p.n, p.d, p.t, p.seed, p.antithetic)?;
    let target = match ctx.paths_file() {
        Some(f) => f,
        None => ctx.out_dir()?.join("paths.bin"),
    };
    if let Some(parent) = target.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    ens.save(&target)?;
    Ok(RunOutcome { files: vec![target], ..Default::default() })
}

fn split_point(ctx: &Context<'_>, gen: &GeneratorSpec, ens: &PathEnsemble) -> Result<Option<f64>> {
    Ok(match ctx.cfg.solver.split {
        SplitConfig::Off | SplitConfig::Flag(false) => None,
        SplitConfig::At(t) => Some(t),
        SplitConfig::Flag(true) => Some(derive_constants(ctx, gen, ens)?.t1),
    })
}

fn run_solve(ctx: &Context<'_>) -> Result<RunOutcome> {
    let cfg = ctx.cfg;
    let gen = cfg.generator(ctx.registry)?;
    let term = cfg.terminal()?;
    let ens = ctx.ensemble()?;
    let pc = cfg.picard(split_point(ctx, &gen, &ens)?)?;
    let (sol, rep) = picard_solve(&gen, &term, &ens, &pc)?;
    let norms = lp_norms(&sol, pc.p)?;
    let y0 = (0..sol.paths()).map(|m| sol.y(m, 0)[0]).sum::<f64>() / sol.paths() as f64;
    let dir = ctx.out_dir()?;
    let mut out = RunOutcome { messages: rep.warnings.clone(), ..Default::default() };
    write_csv(&dir, "solution.csv", &mut out.files, |w| sol.write_csv(w, cfg.solver.export_paths))?;
    write_csv(&dir, "picard_report.csv", &mut out.files, |w| rep.write_csv(w))?;
    write_csv(&dir, "solve_summary.csv", &mut out.files, |w| {
        writeln!(w, "name,value")?;
        writeln!(w, "iterations,{}", rep.iterations())?;
        writeln!(w, "converged,{}", rep.converged)?;
        writeln!(w, "windows,{}", rep.windows.len())?;
        writeln!(w, "y0_mean_1,{}", num(y0))?;
        writeln!(w, "sp_norm,{}", num(norms.sp))?;
        writeln!(w, "mp_norm,{}", num(norms.mp))?;
        Ok(())
    })?;
    if !rep.converged {
        out.exit_code = 1;
        out.messages.push(format!("picard did not converge in {} iterations", rep.iterations()));
    }
    Ok(out)
}

/// Closed-form instance matching the configured generator and terminal.
pub fn infer_oracle(gen: &GeneratorSpec, term: &TerminalSpec, horizon: f64) -> Result<OracleInstance> {
    let kind = match (&gen.family, term) {
        (GeneratorFamily::Zero, TerminalSpec::Coordinate(j)) if gen.k == 1 => OracleKind::MartingaleCoordinate { j: *j },
        (GeneratorFamily::Zero, TerminalSpec::SquareNorm) if gen.k == 1 && gen.d == 1 => OracleKind::MartingaleSquare,
        (GeneratorFamily::Zero, TerminalSpec::Constant(v)) if v.len() == 1 => {
            OracleKind::LinearDrift { a: 0.0, c: 0.0, v: v[0] }
        }
        (GeneratorFamily::Linear { a, b: ZCoupling::None, c }, TerminalSpec::Constant(v)) if gen.k == 1 => {
            let a = match a {
                YCoefficient::Scalar(s) => *s,
                YCoefficient::Matrix(m) => m[0],
            };
            OracleKind::LinearDrift { a, c: c[0], v: v[0] }
        }
        _ => {
            return Err(LabError::Config(
                "no closed-form oracle for this generator/terminal pair (supported: zero with coordinate, \
                 square_norm or constant terminal; scalar linear without z term with constant terminal)"
                    .into(),
            ))
        }
    };
    OracleInstance::new(kind, horizon, gen.d)
}

fn run_oracle(ctx: &Context<'_>) -> Result<RunOutcome> {
    let cfg = ctx.cfg;
    let gen = cfg.generator(ctx.registry)?;
    let term = cfg.terminal()?;
    let ens = ctx.ensemble()?;
    let inst = infer_oracle(&gen, &term, ens.grid().horizon())?;
    let pc = cfg.picard(split_point(ctx, &gen, &ens)?)?;
    let (sol, rep) = picard_solve(&gen, &term, &ens, &pc)?;
    let e = compare_to_oracle(&sol, &inst, &ens, pc.p)?;
    let rel = if e.oracle_sp > 0.0 { e.sp_error / e.oracle_sp } else { f64::NAN };
    let mut out = RunOutcome { messages: rep.warnings.clone(), ..Default::default() };
    write_csv(&ctx.out_dir()?, "oracle_errors.csv", &mut out.files, |w| {
        writeln!(w, "sp_error,z_rms_error,relative_sp_error,iters,converged")?;
        writeln!(w, "{},{},{},{},{}", num(e.sp_error), num(e.z_rms_error), num(rel), rep.iterations(), rep.converged)?;
        Ok(())
    })?;
    Ok(out)
}

fn run_study(ctx: &Context<'_>) -> Result<RunOutcome> {
    let cfg = ctx.cfg;
    let gen = cfg.generator(ctx.registry)?;
    let term = cfg.terminal()?;
    let p = &cfg.paths;
    let inst = infer_oracle(&gen, &term, p.t)?;
    let mut rows = Vec::new();
    for &m in &cfg.study.m {
        for &n in &cfg.study.n {
            let ens = PathEnsemble::generate_with(m, n, p.d, p.t, p.seed, p.antithetic)?;
            let pc = cfg.picard(split_point(ctx, &gen, &ens)?)?;
            let (sol, rep) = picard_solve(&gen, &term, &ens, &pc)?;
            let e = compare_to_oracle(&sol, &inst, &ens, pc.p)?;
            rows.push(format!("{m},{n},{},{},{}", num(e.sp_error), num(e.z_rms_error), rep.iterations()));
        }
    }
    let mut out = RunOutcome::default();
    write_csv(&ctx.out_dir()?, "convergence.csv", &mut out.files, |w| {
        writeln!(w, "M,N,sp_error,z_rms_error,iters")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    Ok(out)
}

struct CheckRow {
    check: &'static str,
    value: f64,
    passed: bool,
    detail: String,
}

fn run_check(ctx: &Context<'_>) -> Result<RunOutcome> {
    let cfg = ctx.cfg;
    let gen = cfg.generator(ctx.registry)?;
    let p = cfg.solver.p;
    let rho = cfg.rho(&gen, &ctx.base)?;
    let ens = ctx.ensemble()?;
    let mut rows = Vec::new();

    let scale = rho.eval(rho.domain_cap)?.abs().max(1.0);
    let shape = check_shape(&rho, cfg.check.grid_size, 1e-9 * scale)?;
    rows.push(CheckRow {
        check: "rho_shape",
        value: shape.worst_violation,
        passed: shape.is_admissible(),
        detail: format!(
            "nondecreasing={};concave={};zero_at_zero={};positive={}",
            shape.is_nondecreasing, shape.is_concave, shape.zero_at_zero, shape.positive_on_positive
        ),
    });

    let u0 = cfg.check.u0.unwrap_or(rho.domain_cap.min(1.0));
    let os = osgood_classify(&rho, cfg.check.weight_exponent, u0, cfg.check.decades)?;
    rows.push(CheckRow {
        check: "rho_osgood",
        value: os.samples.last().map_or(f64::NAN, |s| s.1),
        passed: os.verdict == OsgoodVerdict::Divergent,
        detail: format!("verdict={}", os.verdict.as_str()),
    });

    let h1 = check_h1(&gen, &rho, p, &sampler(ctx, &gen, Some(&rho)))?;
    rows.push(CheckRow { check: "h1", value: h1.max_ratio, passed: h1.passed, detail: String::new() });

    let smp = sampler(ctx, &gen, None);
    let lz = estimate_lipschitz_z(&gen, &smp)?;
    let lz_ok = lz.sampled.is_finite() && lz.analytic.is_none_or(|a| lz.sampled <= a + smp.tol * a.max(1.0));
    rows.push(CheckRow {
        check: "lipschitz_z",
        value: lz.sampled,
        passed: lz_ok,
        detail: lz.analytic.map_or_else(String::new, |a| format!("analytic={}", num(a))),
    });

    let h3 = check_h3(&gen, &ens, p)?;
    rows.push(CheckRow {
        check: "h3",
        value: h3.estimate,
        passed: h3.estimate.is_finite(),
        detail: format!("std_error={};unstable={}", num(h3.std_error), h3.unstable),
    });

    match cfg.envelope(&gen, &ctx.base)? {
        Some(env) => {
            let needs_frozen = matches!(env.phi, ProcessKind::ModulusOfFrozenPath(..))
                || matches!(env.f, ProcessKind::ModulusOfFrozenPath(..));
            let frozen = if needs_frozen {
                let term = cfg.terminal()?;
                Some(picard_solve(&gen, &term, &ens, &cfg.picard(None)?)?.0)
            } else {
                None
            };
            let smp = sampler(ctx, &gen, Some(&env.psi));
            let r = verify_envelope(&gen, &env, p, &ens, &smp, frozen.as_ref())?;
            rows.push(CheckRow { check: "envelope", value: r.max_defect, passed: r.passed, detail: String::new() });
        }
        None => rows.push(CheckRow {
            check: "envelope",
            value: f64::NAN,
            passed: true,
            detail: "skipped: no envelope configured".into(),
        }),
    }

    let mut out = RunOutcome::default();
    write_csv(&ctx.out_dir()?, "check_report.csv", &mut out.files, |w| {
        writeln!(w, "check,value,passed,detail")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.check, num(r.value), r.passed, r.detail)?;
        }
        Ok(())
    })?;
    for r in rows.iter().filter(|r| !r.passed) {
        out.messages.push(format!("check {} failed (value {})", r.check, num(r.value)));
    }
    if !out.messages.is_empty() {
        out.exit_code = 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_inference() {
        let g = GeneratorSpec::scalar_linear(0.5, 0.2, 1).unwrap();
        let inst = infer_oracle(&g, &TerminalSpec::Constant(vec![1.0]), 1.0).unwrap();
        assert_eq!(inst.kind, OracleKind::LinearDrift { a: 0.5, c: 0.2, v: 1.0 });
        let e = GeneratorSpec::example1(2.0, 0.1, 1).unwrap();
        assert!(infer_oracle(&e, &TerminalSpec::Coordinate(0), 1.0).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&LabError::Config("x".into())), 2);
        assert_eq!(exit_code_for(&LabError::Divergence("x".into())), 1);
    }
}
