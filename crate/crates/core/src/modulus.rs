//! Moduli of continuity: the nondecreasing functions that bound how fast a
//! generator may vary in `y` (ρ, κ) or how large it may be (ψ).
//!
//! A [`ModulusSpec`] is a family plus an evaluation domain `[0, U]`. Shape
//! properties are checked numerically by [`check_shape`], the Osgood
//! integral `∫₀ u^{w-1}/ρ(u)^w du` is classified by [`osgood_classify`], and
//! the power and majorant transforms used to move between hypothesis
//! variants are provided by [`transform_modulus`] and [`concave_majorant`].

use std::fmt::Write as _;

use crate::error::{param, LabError, Result};
use crate::quad;

/// Piecewise-linear modulus through `(u_i, v_i)` with `u_0 = 0, v_0 = 0`,
/// continued past the last breakpoint with the final slope.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Tabulated {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() {
            return Err(param("tabulated modulus needs equally many u and v values"));
        }
        if u.len() < 2 {
            return Err(param("tabulated modulus needs at least 2 breakpoints"));
        }
        if u[0] != 0.0 || v[0] != 0.0 {
            return Err(param("tabulated modulus must start at (0, 0)"));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(param("tabulated modulus has non-finite breakpoints"));
        }
        if u.windows(2).any(|w| w[1] <= w[0]) {
            return Err(param("tabulated breakpoints must be strictly ascending in u"));
        }
        if v.iter().any(|&x| x < 0.0) {
            return Err(param("tabulated modulus values must be nonnegative"));
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn last_u(&self) -> f64 {
        *self.u.last().unwrap()
    }

    /// Slope of the first segment, which governs the behaviour near zero.
    pub fn initial_slope(&self) -> f64 {
        (self.v[1] - self.v[0]) / (self.u[1] - self.u[0])
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.u.len();
        let j = match self.u.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(j) => return self.v[j],
            Err(j) => j,
        };
        let (a, b) = if j >= n { (n - 2, n - 1) } else { (j - 1, j) };
        let slope = (self.v[b] - self.v[a]) / (self.u[b] - self.u[a]);
        self.v[a] + slope * (x - self.u[a])
    }

    /// Two-column CSV with header `u,v`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,v\n");
        for (u, v) in self.u.iter().zip(&self.v) {
            let _ = writeln!(out, "{u:.16e},{v:.16e}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("u,v") => {}
            other => return Err(LabError::Format(format!("expected header `u,v`, found {other:?}"))),
        }
        let (mut u, mut v) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let mut cols = line.split(',').map(str::trim);
            let mut next = |name: &str| -> Result<f64> {
                cols.next()
                    .ok_or_else(|| LabError::Format(format!("row {}: missing column {name}", i + 1)))?
                    .parse::<f64>()
                    .map_err(|e| LabError::Format(format!("row {}: column {name}: {e}", i + 1)))
            };
            u.push(next("u")?);
            v.push(next("v")?);
        }
        Self::new(u, v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModulusFamily {
    /// `mu * u`
    Linear { mu: f64 },
    /// `c * u^alpha`
    Power { c: f64, alpha: f64 },
    /// `h(x) = x |ln x|^{1/p}` on `(0, delta]`, tangent line beyond.
    Example1H { p: f64, delta: f64 },
    Tabulated(Tabulated),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusSpec {
    pub family: ModulusFamily,
    pub domain_cap: f64,
}

fn check_cap(domain_cap: f64) -> Result<()> {
    if domain_cap.is_finite() && domain_cap > 0.0 {
        Ok(())
    } else {
        Err(param(format!("domain_cap must be positive and finite, got {domain_cap}")))
    }
}

impl ModulusSpec {
    pub fn linear(mu: f64, domain_cap: f64) -> Result<Self> {
        check_cap(domain_cap)?;
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(param(format!("linear modulus needs mu >= 0, got {mu}")));
        }
        Ok(Self { family: ModulusFamily::Linear { mu }, domain_cap })
    }

    pub fn power(c: f64, alpha: f64, domain_cap: f64) -> Result<Self> {
        check_cap(domain_cap)?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(param(format!("power modulus needs c > 0, got {c}")));
        }
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(param(format!("power modulus needs alpha in (0, 2], got {alpha}")));
        }
        Ok(Self { family: ModulusFamily::Power { c, alpha }, domain_cap })
    }

    /// `delta` must keep `h` increasing on `(0, delta]`, i.e. `delta < e^{-1/p}`.
    pub fn example1_h(p: f64, delta: f64, domain_cap: f64) -> Result<Self> {
        check_cap(domain_cap)?;
        if !(p > 1.0 && p.is_finite()) {
            return Err(param(format!("example-1 modulus needs p > 1, got {p}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(param(format!("example-1 modulus needs delta in (0, 1), got {delta}")));
        }
        if example1_slope(p, delta) <= 0.0 {
            return Err(param(format!(
                "delta = {delta} is too large: h is not increasing on (0, delta] (need delta < {})",
                (-1.0 / p).exp()
            )));
        }
        Ok(Self { family: ModulusFamily::Example1H { p, delta }, domain_cap })
    }

    /// Default `delta = e^{-2}`.
    pub fn example1_h_default(p: f64, domain_cap: f64) -> Result<Self> {
        Self::example1_h(p, (-2.0f64).exp(), domain_cap)
    }

    /// Evaluation domain is taken from the last breakpoint.
    pub fn tabulated(tab: Tabulated) -> Self {
        let domain_cap = tab.last_u();
        Self { family: ModulusFamily::Tabulated(tab), domain_cap }
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        if u < 0.0 || u.is_nan() {
            return Err(LabError::Domain(format!("modulus evaluated at negative argument {u}")));
        }
        Ok(self.value(u))
    }

    /// Evaluation without the sign check; callers guarantee `u >= 0`.
    pub(crate) fn value(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        match &self.family {
            ModulusFamily::Linear { mu } => mu * u,
            ModulusFamily::Power { c, alpha } => c * u.powf(*alpha),
            ModulusFamily::Example1H { p, delta } => example1_h(*p, *delta, u),
            ModulusFamily::Tabulated(t) => t.eval(u),
        }
    }

    pub fn as_tabulated(&self) -> Option<&Tabulated> {
        match &self.family {
            ModulusFamily::Tabulated(t) => Some(t),
            _ => None,
        }
    }
}

fn example1_slope(p: f64, delta: f64) -> f64 {
    let l = -delta.ln();
    l.powf(1.0 / p) - l.powf(1.0 / p - 1.0) / p
}

fn example1_h(p: f64, delta: f64, x: f64) -> f64 {
    if x <= delta {
        x * (-x.ln()).powf(1.0 / p)
    } else {
        let hd = delta * (-delta.ln()).powf(1.0 / p);
        example1_slope(p, delta) * (x - delta) + hd
    }
}

/// Points in `(0, cap]`: half log-spaced from `cap * 1e-12`, half uniform.
pub(crate) fn sample_grid(cap: f64, size: usize) -> Vec<f64> {
    let n_geo = size / 2;
    let n_uni = size - n_geo;
    let lo = (cap * 1e-12).ln();
    let hi = cap.ln();
    let mut g: Vec<f64> = (0..n_geo)
        .map(|i| (lo + (hi - lo) * i as f64 / (n_geo.max(2) - 1) as f64).exp())
        .chain((1..=n_uni).map(|i| cap * i as f64 / n_uni as f64))
        .filter(|&x| x > 0.0 && x <= cap)
        .collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeReport {
    pub is_nondecreasing: bool,
    pub is_concave: bool,
    pub zero_at_zero: bool,
    pub positive_on_positive: bool,
    /// Largest monotonicity/concavity/zero defect minus the tolerance;
    /// `<= 0` exactly when those three checks pass.
    pub worst_violation: f64,
    pub grid_size: usize,
}

impl ShapeReport {
    /// Nondecreasing, concave and zero at zero: the shape every modulus
    /// argument in the hypothesis hierarchy requires.
    pub fn is_admissible(&self) -> bool {
        self.is_nondecreasing && self.is_concave && self.zero_at_zero
    }

    pub fn all_pass(&self) -> bool {
        self.is_admissible() && self.positive_on_positive
    }
}

pub fn check_shape(modulus: &ModulusSpec, grid_size: usize, tol: f64) -> Result<ShapeReport> {
    if grid_size < 3 {
        return Err(param("check_shape needs grid_size >= 3"));
    }
    if !(tol > 0.0) {
        return Err(param("check_shape needs tol > 0"));
    }
    let mut grid = vec![0.0];
    grid.extend(sample_grid(modulus.domain_cap, grid_size));
    let vals: Vec<f64> = grid.iter().map(|&u| modulus.value(u)).collect();

    let zero_defect = vals[0].abs();
    let mut mono = f64::NEG_INFINITY;
    let mut conc = f64::NEG_INFINITY;
    let mut positive = true;
    for i in 0..grid.len() - 1 {
        let (a, b) = (grid[i], grid[i + 1]);
        mono = mono.max(vals[i] - vals[i + 1]);
        let mid = modulus.value(0.5 * (a + b));
        conc = conc.max(0.5 * (vals[i] + vals[i + 1]) - mid);
        if !(vals[i + 1] > 0.0) {
            positive = false;
        }
    }
    let worst = zero_defect.max(mono).max(conc);
    Ok(ShapeReport {
        is_nondecreasing: mono <= tol,
        is_concave: conc <= tol,
        zero_at_zero: zero_defect <= tol,
        positive_on_positive: positive,
        worst_violation: worst - tol,
        grid_size: grid.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OsgoodVerdict {
    Divergent,
    Convergent,
    Inconclusive,
}

impl OsgoodVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Divergent => "divergent",
            Self::Convergent => "convergent",
            Self::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OsgoodOptions {
    pub weight_exponent: f64,
    pub u0: f64,
    pub decades: usize,
    /// Divergence threshold on increments relative to the first increment.
    pub threshold: f64,
    /// Replace the numerical verdict by the closed-form one for builtin families.
    pub use_analytic: bool,
}

impl OsgoodOptions {
    pub fn new(weight_exponent: f64, u0: f64, decades: usize) -> Self {
        Self { weight_exponent, u0, decades, threshold: 0.1, use_analytic: false }
    }
}

#[derive(Debug, Clone)]
pub struct OsgoodReport {
    pub verdict: OsgoodVerdict,
    /// `(eps, I(eps))` with `eps = u0 * 10^-j`, `j = 0..=decades`.
    pub samples: Vec<(f64, f64)>,
    /// `I(eps_j) - I(eps_{j-1})`, `j = 1..=decades`.
    pub increments: Vec<f64>,
    pub integrand_unbounded: bool,
    /// Closed-form verdict when the family admits one.
    pub analytic: Option<OsgoodVerdict>,
}

pub fn osgood_classify(
    modulus: &ModulusSpec,
    weight_exponent: f64,
    u0: f64,
    eps_decades: usize,
) -> Result<OsgoodReport> {
    osgood_classify_with(modulus, &OsgoodOptions::new(weight_exponent, u0, eps_decades))
}

pub fn osgood_classify_with(modulus: &ModulusSpec, opts: &OsgoodOptions) -> Result<OsgoodReport> {
    let w = opts.weight_exponent;
    if !(w >= 1.0 && w.is_finite()) {
        return Err(param(format!("weight exponent must be >= 1, got {w}")));
    }
    if !(opts.u0 > 0.0 && opts.u0 <= modulus.domain_cap) {
        return Err(param(format!("u0 = {} must lie in (0, {}]", opts.u0, modulus.domain_cap)));
    }
    if opts.decades < 3 {
        return Err(param("osgood_classify needs at least 3 decades"));
    }
    let analytic = analytic_osgood(modulus, w);

    // Substituting u = e^s turns u^{w-1}/mod(u)^w du into (u/mod(u))^w ds.
    let integrand = |s: f64| {
        let u = s.exp();
        (u / modulus.value(u)).powf(w)
    };
    let mut samples = vec![(opts.u0, 0.0)];
    let mut increments = Vec::with_capacity(opts.decades);
    let mut total = 0.0;
    let mut unbounded = false;
    let mut hi = opts.u0;
    for j in 1..=opts.decades {
        let lo = opts.u0 * 10f64.powi(-(j as i32));
        let r = quad::integrate(integrand, lo.ln(), hi.ln(), 1e-300, 1e-11);
        if !r.finite {
            unbounded = true;
            break;
        }
        total += r.value;
        increments.push(r.value);
        samples.push((lo, total));
        hi = lo;
    }

    let numeric = if unbounded {
        OsgoodVerdict::Divergent
    } else {
        classify_increments(&increments, opts.threshold)
    };
    let verdict = match (opts.use_analytic, analytic) {
        (true, Some(a)) => a,
        _ => numeric,
    };
    Ok(OsgoodReport { verdict, samples, increments, integrand_unbounded: unbounded, analytic })
}

/// Divergent when every increment over the last half of the decades stays
/// above `threshold` times the first one (the integral keeps growing linearly
/// in `log(1/eps)` or faster). Convergent when those increments are strictly
/// shrinking and the last one has fallen below the threshold.
fn classify_increments(inc: &[f64], threshold: f64) -> OsgoodVerdict {
    let first = inc[0];
    if !(first > 0.0) {
        return OsgoodVerdict::Inconclusive;
    }
    let tail = &inc[inc.len() / 2..];
    let floor = threshold * first;
    if tail.iter().all(|&d| d >= floor) {
        return OsgoodVerdict::Divergent;
    }
    let shrinking = tail.windows(2).all(|w| w[1] < w[0]);
    if shrinking && *tail.last().unwrap() < floor {
        OsgoodVerdict::Convergent
    } else {
        OsgoodVerdict::Inconclusive
    }
}

fn analytic_osgood(modulus: &ModulusSpec, w: f64) -> Option<OsgoodVerdict> {
    use OsgoodVerdict::*;
    Some(match &modulus.family {
        // mu = 0 makes the integrand infinite, which also counts as divergent.
        ModulusFamily::Linear { .. } => Divergent,
        ModulusFamily::Power { alpha, .. } => {
            if *alpha >= 1.0 {
                Divergent
            } else {
                Convergent
            }
        }
        // integrand ~ 1 / (u |ln u|^{w/p}) near zero
        ModulusFamily::Example1H { p, .. } => {
            if w <= *p {
                Divergent
            } else {
                Convergent
            }
        }
        // linear on the first segment
        ModulusFamily::Tabulated(_) => Divergent,
    })
}

/// Returns `A = max mod(u)/(u+1)` over a uniform grid on `[0, U]`.
pub fn linear_growth_coefficient(modulus: &ModulusSpec, grid_size: usize) -> Result<f64> {
    if grid_size < 3 {
        return Err(param("linear_growth_coefficient needs grid_size >= 3"));
    }
    let cap = modulus.domain_cap;
    let scale = modulus.value(cap).abs().max(1.0);
    let shape = check_shape(modulus, grid_size, 1e-9 * scale)?;
    if !shape.is_admissible() {
        return Err(param(format!(
            "linear growth bound needs a nondecreasing concave modulus vanishing at 0 (worst violation {:e})",
            shape.worst_violation
        )));
    }
    let n = grid_size - 1;
    Ok((0..=n)
        .map(|i| {
            let u = cap * i as f64 / n as f64;
            modulus.value(u) / (u + 1.0)
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    /// `u -> mod(u^{1/r})^r`
    PowerRoot { r: f64 },
    /// `rho(u) = kappa(u^{1/p})^p`
    H1StarToH1 { p: f64 },
    /// `rho1(u) = kappa(u^q)^{1/q}`, `rho2` its concave majorant,
    /// `rho_bar(u) = rho2(u^{1/p})^p + u`.
    H1ppToH1 { p: f64, q: f64 },
}

/// Sampling grid used to tabulate transformed moduli.
#[derive(Debug, Clone, Copy)]
pub struct TransformGrid {
    pub decades: usize,
    pub points_per_decade: usize,
    pub uniform_points: usize,
}

impl Default for TransformGrid {
    fn default() -> Self {
        Self { decades: 14, points_per_decade: 200, uniform_points: 4096 }
    }
}

impl TransformGrid {
    fn points(&self, cap: f64) -> Vec<f64> {
        let n_geo = self.decades * self.points_per_decade;
        let lo = cap.ln() - self.decades as f64 * std::f64::consts::LN_10;
        let hi = cap.ln();
        let mut g = vec![0.0];
        g.extend((0..=n_geo).map(|i| (lo + (hi - lo) * i as f64 / n_geo as f64).exp()));
        g.extend((1..=self.uniform_points).map(|i| cap * i as f64 / self.uniform_points as f64));
        g.retain(|&x| x <= cap);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }
}

#[derive(Debug, Clone)]
pub struct DominationReport {
    /// Measured `sup rho2 / rho1` over the sampled points with `rho1 > 0`.
    pub majorant_ratio: f64,
    pub rho2_at_one: f64,
    /// `K = 1 + 1/rho2(1)^p`; `None` when `rho2(1)` vanishes.
    pub k_constant: Option<f64>,
    /// `max(rho_bar(u) - K 2^p kappa(u^{q/p})^{p/q})` over the grid.
    pub max_excess: Option<f64>,
    pub holds: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TransformOutput {
    pub modulus: ModulusSpec,
    pub domination: Option<DominationReport>,
}

pub fn transform_modulus(modulus: &ModulusSpec, kind: TransformKind) -> Result<TransformOutput> {
    transform_modulus_with(modulus, kind, &TransformGrid::default())
}

pub fn transform_modulus_with(
    modulus: &ModulusSpec,
    kind: TransformKind,
    grid: &TransformGrid,
) -> Result<TransformOutput> {
    match kind {
        TransformKind::PowerRoot { r } => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(param(format!("power-root exponent must be positive, got {r}")));
            }
            Ok(TransformOutput { modulus: power_root(modulus, r, grid)?, domination: None })
        }
        TransformKind::H1StarToH1 { p } => {
            if !(p > 1.0) {
                return Err(param(format!("H1* conversion needs p > 1, got {p}")));
            }
            Ok(TransformOutput { modulus: power_root(modulus, p, grid)?, domination: None })
        }
        TransformKind::H1ppToH1 { p, q } => {
            if !(p > 1.0) || !(q >= p) {
                return Err(param(format!("H1'' conversion needs q >= p > 1, got p={p}, q={q}")));
            }
            h1pp_to_h1(modulus, p, q, grid)
        }
    }
}

fn tabulate(points: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<ModulusSpec> {
    if points.len() < 3 {
        return Err(param("transform grid degenerated to fewer than 3 distinct samples"));
    }
    let v: Vec<f64> = points.iter().map(|&u| if u == 0.0 { 0.0 } else { f(u) }).collect();
    Ok(ModulusSpec::tabulated(Tabulated::new(points, v)?))
}

fn power_root(modulus: &ModulusSpec, r: f64, grid: &TransformGrid) -> Result<ModulusSpec> {
    let cap = modulus.domain_cap.powf(r);
    if !(cap.is_finite() && cap > 0.0) {
        return Err(param("transformed domain is degenerate"));
    }
    tabulate(grid.points(cap), |u| modulus.value(u.powf(1.0 / r)).powf(r))
}

fn h1pp_to_h1(kappa: &ModulusSpec, p: f64, q: f64, grid: &TransformGrid) -> Result<TransformOutput> {
    let cap1 = kappa.domain_cap.powf(1.0 / q).max(1.0);
    let pts = grid.points(cap1);
    if pts.len() < 3 {
        return Err(param("transform grid degenerated to fewer than 3 distinct samples"));
    }
    let rho1 = |u: f64| kappa.value(u.powf(q)).powf(1.0 / q);
    let samples: Vec<(f64, f64)> = pts.iter().map(|&u| (u, rho1(u))).collect();
    let rho2 = concave_majorant(&samples)?;

    let majorant_ratio = samples
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|&(u, v)| rho2.value(u) / v)
        .fold(0.0, f64::max);

    let out = tabulate(grid.points(cap1.powf(p)), |u| rho2.value(u.powf(1.0 / p)).powf(p) + u)?;

    let rho2_at_one = rho2.value(1.0);
    let mut report = DominationReport {
        majorant_ratio,
        rho2_at_one,
        k_constant: None,
        max_excess: None,
        holds: None,
        note: None,
    };
    if rho2_at_one.abs() <= 1e-12 {
        report.note = Some("rho2(1) = 0: rho_bar(u) = u near zero, domination check skipped".into());
    } else {
        let k = 1.0 + 1.0 / rho2_at_one.powf(p);
        let tab = out.as_tabulated().unwrap();
        let mut excess = f64::NEG_INFINITY;
        let mut scale = 1.0f64;
        for (&u, &v) in tab.u().iter().zip(tab.v()).skip(1) {
            let bound = k * 2f64.powf(p) * kappa.value(u.powf(q / p)).powf(p / q);
            excess = excess.max(v - bound);
            scale = scale.max(v.abs());
        }
        report.k_constant = Some(k);
        report.max_excess = Some(excess);
        report.holds = Some(excess <= 1e-9 * scale);
    }
    Ok(TransformOutput { modulus: out, domination: Some(report) })
}

/// Least concave nondecreasing majorant of `(u, v)` samples on `[0, u_max]`.
pub fn concave_majorant(samples: &[(f64, f64)]) -> Result<ModulusSpec> {
    if samples.len() < 2 {
        return Err(param("concave majorant needs at least 2 samples"));
    }
    if samples[0] != (0.0, 0.0) {
        return Err(param("concave majorant samples must start at (0, 0)"));
    }
    for w in samples.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(param("concave majorant samples must be strictly ascending in u"));
        }
    }
    if samples.iter().any(|&(u, v)| !(v >= 0.0) || !u.is_finite() || !v.is_finite()) {
        return Err(param("concave majorant samples must be finite with v >= 0"));
    }

    // upper hull, left to right; collinear and lower points are dropped
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(samples.len());
    for &pt in samples {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (a.0 - o.0) * (pt.1 - o.1) - (a.1 - o.1) * (pt.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(pt);
    }

    // flatten after the maximum to make it nondecreasing
    let u_max = samples.last().unwrap().0;
    let top = hull
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.1 > hull[best].1 { i } else { best });
    hull.truncate(top + 1);
    let v_top = hull[top].1;
    if hull[top].0 < u_max {
        hull.push((u_max, v_top));
    }
    let (u, v) = hull.into_iter().unzip();
    Ok(ModulusSpec::tabulated(Tabulated::new(u, v)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    fn ex1(cap: f64) -> ModulusSpec {
        ModulusSpec::example1_h_default(2.0, cap).unwrap()
    }

    #[test]
    fn eval_examples() {
        let lin = ModulusSpec::linear(3.0, 10.0).unwrap();
        assert_eq!(lin.eval(2.0).unwrap(), 6.0);
        let h = ex1(1.0);
        let x = E.powi(-4);
        assert!((h.eval(x).unwrap() - 2.0 * x).abs() < 1e-15);
        assert!((h.eval(x).unwrap() - 0.036_631).abs() < 1e-6);
        let tab = Tabulated::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 3.0]).unwrap();
        for m in [lin, h, ModulusSpec::power(1.0, 0.5, 1.0).unwrap(), ModulusSpec::tabulated(tab)] {
            assert_eq!(m.eval(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_argument_is_domain_error() {
        let m = ModulusSpec::linear(1.0, 1.0).unwrap();
        assert!(matches!(m.eval(-1e-3), Err(LabError::Domain(_))));
    }

    #[test]
    fn tabulated_exact_at_breakpoints_and_extends_linearly() {
        let tab = Tabulated::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 3.0]).unwrap();
        let m = ModulusSpec::tabulated(tab);
        assert_eq!(m.eval(1.0).unwrap(), 2.0);
        assert_eq!(m.eval(3.0).unwrap(), 3.0);
        assert!((m.eval(2.0).unwrap() - 2.5).abs() < 1e-15);
        assert!((m.eval(5.0).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn example1_h_is_continuous_at_delta() {
        let d = E.powi(-2);
        let h = ex1(1.0);
        let left = h.eval(d * (1.0 - 1e-12)).unwrap();
        let right = h.eval(d * (1.0 + 1e-12)).unwrap();
        assert!((left - right).abs() < 1e-11);
    }

    #[test]
    fn example1_h_rejects_large_delta() {
        assert!(ModulusSpec::example1_h(2.0, 0.7, 1.0).is_err());
        assert!(ModulusSpec::example1_h(1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn shape_examples() {
        let r = check_shape(&ModulusSpec::linear(1.0, 10.0).unwrap(), 1000, 1e-12).unwrap();
        assert!(r.all_pass() && r.worst_violation <= 0.0);
        let sq = check_shape(&ModulusSpec::power(1.0, 2.0, 1.0).unwrap(), 1000, 1e-12).unwrap();
        assert!(!sq.is_concave && sq.is_nondecreasing);
        let h = check_shape(&ex1(1.0), 10_000, 1e-12).unwrap();
        assert!(h.all_pass(), "{h:?}");
        let zero = check_shape(&ModulusSpec::linear(0.0, 1.0).unwrap(), 100, 1e-12).unwrap();
        assert!(zero.is_admissible() && !zero.positive_on_positive);
        assert!(check_shape(&ModulusSpec::linear(1.0, 1.0).unwrap(), 2, 1e-3).is_err());
    }

    #[test]
    fn osgood_truth_table() {
        let lin = ModulusSpec::linear(1.0, 1.0).unwrap();
        assert_eq!(osgood_classify(&lin, 1.0, 1.0, 8).unwrap().verdict, OsgoodVerdict::Divergent);
        let sqrt = ModulusSpec::power(1.0, 0.5, 1.0).unwrap();
        assert_eq!(osgood_classify(&sqrt, 1.0, 1.0, 8).unwrap().verdict, OsgoodVerdict::Convergent);
        let h = ex1(1.0);
        let u0 = E.powi(-2);
        assert_eq!(osgood_classify(&h, 2.0, u0, 8).unwrap().verdict, OsgoodVerdict::Divergent);
        assert_eq!(osgood_classify(&h, 3.0, u0, 8).unwrap().verdict, OsgoodVerdict::Convergent);
    }

    #[test]
    fn osgood_increments_match_closed_form() {
        // du/u: every decade contributes ln 10
        let lin = ModulusSpec::linear(1.0, 1.0).unwrap();
        let rep = osgood_classify(&lin, 1.0, 1.0, 5).unwrap();
        for d in &rep.increments {
            assert!((d - std::f64::consts::LN_10).abs() < 1e-9);
        }
        assert_eq!(rep.samples.len(), 6);
    }

    #[test]
    fn osgood_flags_vanishing_modulus() {
        let zero = ModulusSpec::linear(0.0, 1.0).unwrap();
        let rep = osgood_classify(&zero, 1.0, 1.0, 4).unwrap();
        assert!(rep.integrand_unbounded);
        assert_eq!(rep.verdict, OsgoodVerdict::Divergent);
    }

    #[test]
    fn osgood_analytic_override() {
        let sqrt = ModulusSpec::power(1.0, 0.5, 1.0).unwrap();
        let mut o = OsgoodOptions::new(1.0, 1.0, 8);
        o.use_analytic = true;
        let rep = osgood_classify_with(&sqrt, &o).unwrap();
        assert_eq!(rep.analytic, Some(OsgoodVerdict::Convergent));
        assert_eq!(rep.verdict, OsgoodVerdict::Convergent);
    }

    #[test]
    fn linear_growth_examples() {
        let a = linear_growth_coefficient(&ModulusSpec::linear(1.0, 10.0).unwrap(), 1001).unwrap();
        assert!((a - 10.0 / 11.0).abs() < 1e-15);
        let b = linear_growth_coefficient(&ModulusSpec::power(1.0, 0.5, 10.0).unwrap(), 1001).unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        assert_eq!(linear_growth_coefficient(&ModulusSpec::linear(0.0, 10.0).unwrap(), 101).unwrap(), 0.0);
        assert!(linear_growth_coefficient(&ModulusSpec::power(1.0, 2.0, 10.0).unwrap(), 101).is_err());
    }

    #[test]
    fn transform_identities() {
        let lin = ModulusSpec::linear(1.0, 4.0).unwrap();
        let pr = transform_modulus(&lin, TransformKind::PowerRoot { r: 2.0 }).unwrap().modulus;
        let hs = transform_modulus(&lin, TransformKind::H1StarToH1 { p: 2.0 }).unwrap().modulus;
        let pp = transform_modulus(&lin, TransformKind::H1ppToH1 { p: 2.0, q: 2.0 }).unwrap();
        for u in [1e-9, 0.01, 0.3, 1.0, 2.5, 3.9] {
            assert!((pr.eval(u).unwrap() - u).abs() < 1e-12 * u.max(1.0));
            assert!((hs.eval(u).unwrap() - u).abs() < 1e-12 * u.max(1.0));
            assert!((pp.modulus.eval(u).unwrap() - 2.0 * u).abs() < 1e-12 * u.max(1.0));
        }
        let dom = pp.domination.unwrap();
        assert!((dom.majorant_ratio - 1.0).abs() < 1e-12);
        assert_eq!(dom.k_constant, Some(2.0));
        assert_eq!(dom.holds, Some(true));
        assert!(transform_modulus(&lin, TransformKind::PowerRoot { r: 0.0 }).is_err());
    }

    #[test]
    fn h1pp_reports_skip_when_rho2_vanishes_at_one() {
        // kappa = 0 everywhere on the sampled range
        let zero = ModulusSpec::linear(0.0, 1.0).unwrap();
        let out = transform_modulus(&zero, TransformKind::H1ppToH1 { p: 2.0, q: 3.0 }).unwrap();
        let dom = out.domination.unwrap();
        assert!(dom.holds.is_none() && dom.note.is_some());
        assert!((out.modulus.eval(0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn majorant_examples() {
        let sq: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 / 10.0, (i as f64 / 10.0).powi(2))).collect();
        let m = concave_majorant(&sq).unwrap();
        let t = m.as_tabulated().unwrap();
        assert_eq!(t.u(), &[0.0, 1.0]);
        assert_eq!(t.v(), &[0.0, 1.0]);

        let hinge: Vec<(f64, f64)> =
            (0..=10).map(|i| (i as f64 / 10.0, (2.0 * (i as f64 / 10.0 - 0.5)).max(0.0))).collect();
        let m = concave_majorant(&hinge).unwrap();
        for &(u, _) in &hinge {
            assert!((m.eval(u).unwrap() - u).abs() < 1e-12);
        }

        let tab = Tabulated::new(vec![0.0, 1.0, 2.0, 4.0], vec![0.0, 3.0, 5.0, 6.0]).unwrap();
        let pts: Vec<_> = tab.u().iter().copied().zip(tab.v().iter().copied()).collect();
        let again = concave_majorant(&pts).unwrap();
        assert_eq!(again.as_tabulated().unwrap(), &tab);
    }

    #[test]
    fn majorant_flattens_after_peak() {
        let pts = [(0.0, 0.0), (1.0, 2.0), (2.0, 1.0), (3.0, 0.5)];
        let m = concave_majorant(&pts).unwrap();
        assert_eq!(m.as_tabulated().unwrap().v(), &[0.0, 2.0, 2.0]);
        assert_eq!(m.eval(10.0).unwrap(), 2.0);
    }

    #[test]
    fn majorant_rejects_bad_input() {
        assert!(concave_majorant(&[(0.0, 0.0)]).is_err());
        assert!(concave_majorant(&[(0.0, 0.0), (2.0, 1.0), (1.0, 1.0)]).is_err());
        assert!(concave_majorant(&[(0.0, 0.0), (1.0, -1.0)]).is_err());
        assert!(concave_majorant(&[(0.1, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tab = Tabulated::new(vec![0.0, 0.5, 2.0], vec![0.0, 1.0 / 3.0, 0.9]).unwrap();
        let back = Tabulated::from_csv(&tab.to_csv()).unwrap();
        assert_eq!(back, tab);
        assert!(Tabulated::from_csv("x,y\n0,0\n1,1\n").is_err());
    }
}
