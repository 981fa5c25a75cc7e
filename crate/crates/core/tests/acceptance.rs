//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bsde_lab::analysis::{
    bihari_recursion, check_lemma1, compute_constants, lp_norms, picard_distance, ConstantInputs,
    DEFAULT_QUAD_STEPS,
};
use bsde_lab::generator::{check_h3, GeneratorSpec};
use bsde_lab::modulus::{
    check_shape, linear_growth_coefficient, osgood_classify, transform_modulus, ModulusSpec, OsgoodVerdict,
    Tabulated, TransformKind,
};
use bsde_lab::oracle::{compare_to_oracle, OracleInstance, OracleKind};
use bsde_lab::paths::PathEnsemble;
use bsde_lab::solver::{picard_solve, DiscreteSolution, PicardConfig, PicardInit, PicardReport, TerminalSpec};

const M: usize = 1 << 14;
const N: usize = 50;
const SEED: u64 = 20240917;
const DELTA: f64 = 0.1353352832366127; // e^-2

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensemble() -> PathEnsemble {
    PathEnsemble::generate(M, N, 1, 1.0, SEED).unwrap()
}

fn example1() -> GeneratorSpec {
    GeneratorSpec::example1(2.0, DELTA, 1).unwrap()
}

fn solve(gen: &GeneratorSpec, term: &TerminalSpec, ens: &PathEnsemble, cfg: &PicardConfig) -> (DiscreteSolution, PicardReport) {
    picard_solve(gen, term, ens, cfg).unwrap()
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn martingale_oracle() -> Outcome {
    let ens = ensemble();
    let start = Instant::now();
    let (sol, rep) = solve(&GeneratorSpec::zero(1, 1).unwrap(), &TerminalSpec::Coordinate(0), &ens, &PicardConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let inst = OracleInstance::new(OracleKind::MartingaleCoordinate { j: 0 }, 1.0, 1).unwrap();
    let e = compare_to_oracle(&sol, &inst, &ens, 2.0).unwrap();
    verdict(
        e.sp_error <= 0.05 && e.z_rms_error <= 0.10 && secs <= 60.0 && rep.converged,
        format!("S2 error {:.4} (<= 0.05), z rms {:.4} (<= 0.10), {secs:.2}s", e.sp_error, e.z_rms_error),
    )
}

fn quadratic_oracle() -> Outcome {
    let ens = ensemble();
    let (sol, _) = solve(&GeneratorSpec::zero(1, 1).unwrap(), &TerminalSpec::SquareNorm, &ens, &PicardConfig::default());
    let inst = OracleInstance::new(OracleKind::MartingaleSquare, 1.0, 1).unwrap();
    let e = compare_to_oracle(&sol, &inst, &ens, 2.0).unwrap();
    let rel = e.sp_error / e.oracle_sp;
    verdict(rel <= 0.05, format!("relative S2 error {:.4} (<= 0.05)", rel))
}

fn linear_drift_oracle() -> Outcome {
    let ens = ensemble();
    let gen = GeneratorSpec::scalar_linear(0.5, 0.2, 1).unwrap();
    let cfg = PicardConfig { tol: 1e-4, ..Default::default() };
    let (sol, rep) = solve(&gen, &TerminalSpec::Constant(vec![1.0]), &ens, &cfg);
    let target = 0.5f64.exp() + 0.4 * (0.5f64.exp() - 1.0);
    let y0 = sol.y(0, 0)[0];
    let rel = (y0 - target).abs() / target;
    verdict(
        rel <= 0.02 && rep.converged && rep.iterations() <= 10,
        format!("y0 {y0:.5} vs {target:.5} (rel {rel:.4} <= 0.02), {} iterations (<= 10)", rep.iterations()),
    )
}

fn example1_runs(ens: &PathEnsemble, init: PicardInit) -> (DiscreteSolution, PicardReport) {
    let cfg = PicardConfig { tol: 1e-12, max_iter: 25, init, ..Default::default() };
    solve(&example1(), &TerminalSpec::Coordinate(0), ens, &cfg)
}

fn example1_contraction() -> Outcome {
    let ens = ensemble();
    let (_, rep) = example1_runs(&ens, PicardInit::Zero);
    let d = rep.dist_y();
    if d.len() < 5 {
        return Err(format!("only {} Picard distances recorded", d.len()));
    }
    let monotone = d[1..].windows(2).all(|w| w[1] <= w[0]);
    let ratio = d[4] / d[0];
    verdict(
        monotone && ratio <= 0.1,
        format!("dist_y nonincreasing from n=2: {monotone}; dist_y(5)/dist_y(1) = {ratio:.3e} (<= 0.1)"),
    )
}

fn uniqueness() -> Outcome {
    let ens = ensemble();
    let (a, ra) = example1_runs(&ens, PicardInit::Zero);
    let (b, rb) = example1_runs(&ens, PicardInit::ConstantField(vec![1.0]));
    let dist = picard_distance(&a, &b, 2.0).unwrap().dy.sqrt();
    // standard error of the S^2 norm estimate, by the delta method on E sup|y|^2
    let sups: Vec<f64> = (0..ens.paths())
        .map(|m| (0..=N).map(|i| a.y(m, i)[0].powi(2)).fold(0.0, f64::max))
        .collect();
    let mean = sups.iter().sum::<f64>() / M as f64;
    let var = sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (M as f64 - 1.0);
    let se = (var / M as f64).sqrt() / (2.0 * lp_norms(&a, 2.0).unwrap().sp);
    verdict(
        ra.converged && rb.converged && dist <= 3.0 * se,
        format!("S2 distance {dist:.3e} vs 3 SE = {:.3e}", 3.0 * se),
    )
}

fn bihari() -> Outcome {
    let lin = ModulusSpec::linear(1.0, 10.0).unwrap();
    let curve = bihari_recursion(&lin, 1.0, 1.0, 0.0, 10, DEFAULT_QUAD_STEPS).unwrap();
    let mut fact = 1.0;
    let mut worst = 0.0f64;
    for (n, v) in curve.at_start().iter().enumerate() {
        fact *= (n + 1) as f64;
        worst = worst.max((v - 1.0 / fact).abs());
    }

    let ens = ensemble();
    let kappa = ModulusSpec::example1_h(2.0, DELTA, 100.0).unwrap();
    let rho = transform_modulus(&kappa, TransformKind::H1StarToH1 { p: 2.0 }).unwrap().modulus;
    let cb = compute_constants(&ConstantInputs {
        p: 2.0,
        lambda: 1.0,
        horizon: 1.0,
        a: linear_growth_coefficient(&rho, 4096).unwrap(),
        terminal_moment: 1.0,
        h3_moment: check_h3(&example1(), &ens, 2.0).unwrap().estimate,
        ..Default::default()
    })
    .unwrap();
    let chain = bihari_recursion(&rho, cb.m_bound, 1.0, cb.t1, 60, DEFAULT_QUAD_STEPS).unwrap();
    let phi = chain.at_start();
    let decreasing = phi.windows(2).all(|w| w[1] <= w[0]);
    let last = phi[60];
    verdict(
        worst <= 1e-6 && decreasing && last <= 1e-3,
        format!("max |phi_n(0) - 1/(n+1)!| = {worst:.2e}; chain phi_60(T1) = {last:.2e}, decreasing: {decreasing}"),
    )
}

fn osgood() -> Outcome {
    let lin = ModulusSpec::linear(1.0, 1.0).unwrap();
    let sqrt = ModulusSpec::power(1.0, 0.5, 1.0).unwrap();
    let h = ModulusSpec::example1_h(2.0, DELTA, 1.0).unwrap();
    let got = [
        osgood_classify(&lin, 1.0, 1.0, 8).unwrap().verdict,
        osgood_classify(&sqrt, 1.0, 1.0, 8).unwrap().verdict,
        osgood_classify(&h, 2.0, DELTA, 8).unwrap().verdict,
        osgood_classify(&h, 3.0, DELTA, 8).unwrap().verdict,
    ];
    use OsgoodVerdict::*;
    let want = [Divergent, Convergent, Divergent, Convergent];
    let names: Vec<&str> = got.iter().map(|v| v.as_str()).collect();
    verdict(got == want, format!("linear, power 1/2, h weight p, h weight p+1 -> {}", names.join(", ")))
}

fn random_concave(rng: &mut ChaCha8Rng) -> ModulusSpec {
    let n = rng.random_range(3..12);
    let mut u = vec![0.0];
    let mut v = vec![0.0];
    let mut slope = rng.random_range(0.5..5.0);
    for _ in 0..n {
        let du = rng.random_range(0.05..2.0);
        u.push(u.last().unwrap() + du);
        v.push(v.last().unwrap() + slope * du);
        slope *= rng.random_range(0.2..1.0);
    }
    ModulusSpec::tabulated(Tabulated::new(u, v).unwrap())
}

fn power_root_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut shape_fail = 0;
    let mut osgood_fail = 0;
    for _ in 0..50 {
        let m = random_concave(&mut rng);
        for r in [1.5, 2.0, 3.0] {
            let out = transform_modulus(&m, TransformKind::PowerRoot { r }).unwrap().modulus;
            let s = check_shape(&out, 2000, 1e-9).unwrap();
            if !(s.is_nondecreasing && s.is_concave && s.zero_at_zero) {
                shape_fail += 1;
            }
        }
        for r in [0.5, 0.75] {
            let out = transform_modulus(&m, TransformKind::PowerRoot { r }).unwrap().modulus;
            let u0 = out.domain_cap.min(1.0);
            if osgood_classify(&out, 1.0, u0, 8).unwrap().verdict != OsgoodVerdict::Divergent {
                osgood_fail += 1;
            }
        }
    }
    verdict(
        shape_fail == 0 && osgood_fail == 0,
        format!("shape failures {shape_fail}/150, Osgood failures {osgood_fail}/100"),
    )
}

fn energy_inequality() -> Outcome {
    let ens = ensemble();
    let zero = GeneratorSpec::zero(1, 1).unwrap();
    let (sol, _) = solve(&zero, &TerminalSpec::Coordinate(0), &ens, &PicardConfig::default());
    let mut notes = Vec::new();
    let mut ok = true;
    for t in [0, N / 2] {
        let r = check_lemma1(&sol, &zero, &ens, 2.0, t).unwrap();
        ok &= r.slack.abs() <= 3.0 * r.std_error;
        notes.push(format!("martingale t_{t}: {:.2e} (se {:.2e})", r.slack, r.std_error));
    }
    let (sol, _) = example1_runs(&ens, PicardInit::Zero);
    let mut worst = f64::INFINITY;
    for t in 0..=N {
        let r = check_lemma1(&sol, &example1(), &ens, 2.0, t).unwrap();
        if r.std_error > 0.0 {
            worst = worst.min(r.slack / r.std_error);
        } else if r.slack < 0.0 {
            worst = f64::NEG_INFINITY;
        }
    }
    ok &= worst >= -3.0;
    notes.push(format!("example 1 min slack/se {worst:.2}"));
    verdict(ok, notes.join("; "))
}

fn constants() -> Outcome {
    let cb = compute_constants(&ConstantInputs { p: 2.0, lambda: 0.0, horizon: 1.0, ..Default::default() }).unwrap();
    let ln2 = std::f64::consts::LN_2;
    let t1 = compute_constants(&ConstantInputs { horizon: 2.0, a: 0.5, c1: Some(ln2), c3: Some(ln2), ..Default::default() })
        .unwrap()
        .t1;
    verdict(
        cb.c_p == 1.0 && cb.c_lambda_p_t == 256.0 && t1 == 1.0,
        format!("c(2) = {}, c_(0,2,1) = {}, T1 = {t1}", cb.c_p, cb.c_lambda_p_t),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "[paths]\nM = {M}\nN = {N}\nT = 1.0\nseed = {SEED}\n[solver]\ndeterministic_reduction = true\n\
         [generator]\nfamily = \"zero\"\n[terminal]\nkind = \"coordinate\"\n"
    );
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, cfg).unwrap();
    let run = |out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_bsde-lab"))
            .args(["solve", "--config"])
            .arg(&cfg_path)
            .arg("--output-dir")
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    run("a");
    run("b");
    let mut same = true;
    for f in ["solution.csv", "picard_report.csv", "solve_summary.csv"] {
        let read = |d: &str| std::fs::read(Path::new(&dir.path().join(d)).join(f)).unwrap();
        same &= read("a") == read("b");
    }
    verdict(same, "solution.csv, picard_report.csv, solve_summary.csv identical across runs".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("martingale oracle", martingale_oracle),
        ("quadratic oracle", quadratic_oracle),
        ("linear-drift oracle", linear_drift_oracle),
        ("example-1 contraction", example1_contraction),
        ("uniqueness across initializations", uniqueness),
        ("bihari recursion", bihari),
        ("osgood truth table", osgood),
        ("power-root transform properties", power_root_properties),
        ("energy inequality in expectation", energy_inequality),
        ("constants", constants),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
