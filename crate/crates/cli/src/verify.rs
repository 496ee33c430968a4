//! Identity and kernel-property checks behind `gfdrift verify`.

use gfdrift::{
    drifting_field, kde_log_density, kde_score, velocity, AssumptionReport, DivergenceSpec, Ensemble, FieldContext, Geometry,
    KernelFamily, KernelSpec, SeededStream,
};
use serde::Serialize;

use crate::config::{VerifyKernel, VerifySection};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub kernel: String,
    pub check: &'static str,
    /// `pass`, `fail`, or `not applicable: <reason>`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    pub fn failed(&self) -> bool {
        self.status == "fail"
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub all_passed: bool,
    pub assumption_reports: Vec<(String, AssumptionReport<f64>)>,
    pub checks: Vec<CheckResult>,
}

fn status(ok: bool) -> String {
    if ok { "pass" } else { "fail" }.to_string()
}

fn not_applicable(reason: &str) -> String {
    format!("not applicable: {reason}")
}

fn unit(rng: &mut SeededStream, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let n = norm(&v);
    v.into_iter().map(|a| a / n).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_point(rng: &mut SeededStream, g: Geometry, scale: f64) -> Vec<f64> {
    match g {
        Geometry::Sphere { dim } => unit(rng, dim),
        Geometry::Euclidean { dim } => (0..dim).map(|_| scale * rng.normal()).collect(),
    }
}

fn random_ensemble(rng: &mut SeededStream, g: Geometry, n: usize, shift: f64) -> Result<Ensemble<f64>, CliError> {
    let pts: Vec<f64> = (0..n)
        .flat_map(|_| {
            let mut p = random_point(rng, g, 1.0);
            if !g.is_sphere() {
                p.iter_mut().for_each(|v| *v += shift);
            }
            p
        })
        .collect();
    Ensemble::new(g, pts).map_err(CliError::from)
}

fn fd_score(k: &KernelSpec<f64>, support: &Ensemble<f64>, x: &[f64], rng: &mut SeededStream) -> Result<Vec<f64>, CliError> {
    let h = 1e-5;
    let d = x.len();
    let lp = |p: &[f64]| kde_log_density(k, support, p).map_err(CliError::from);
    let mut g = vec![0.0; d];
    if !k.geometry().is_sphere() {
        for j in 0..d {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            g[j] = (lp(&a)? - lp(&b)?) / (2.0 * h);
        }
        return Ok(g);
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d - 1 {
        let mut u = unit(rng, d);
        for b in basis.iter().chain(std::iter::once(&x.to_vec())) {
            let c: f64 = u.iter().zip(b).map(|(p, q)| p * q).sum();
            u.iter_mut().zip(b).for_each(|(ui, bi)| *ui -= c * bi);
        }
        let n = norm(&u);
        if n > 1e-3 {
            basis.push(u.into_iter().map(|a| a / n).collect());
        }
    }
    for u in &basis {
        let along = |t: f64| -> Vec<f64> {
            let p: Vec<f64> = x.iter().zip(u).map(|(a, b)| t.cos() * a + t.sin() * b).collect();
            let n = norm(&p);
            p.into_iter().map(|a| a / n).collect()
        };
        let dir = (lp(&along(h))? - lp(&along(-h))?) / (2.0 * h);
        g.iter_mut().zip(u).for_each(|(gi, ui)| *gi += dir * ui);
    }
    Ok(g)
}

fn equivalence_scale(family: &KernelFamily<f64>) -> Option<f64> {
    match *family {
        KernelFamily::Gaussian { h } => Some(h * h),
        KernelFamily::VonMisesFisher { kappa } => Some(1.0 / kappa),
        _ => None,
    }
}

fn core_equivalence(k: &KernelSpec<f64>, cfg: &VerifySection, rng: &mut SeededStream) -> Result<CheckResult, CliError> {
    let name = k.to_string();
    let report = k.assumption_report();
    let mut result = CheckResult {
        kernel: name,
        check: "core_equivalence",
        status: String::new(),
        max_error: None,
        tolerance: Some(cfg.equivalence_tolerance),
        detail: None,
    };
    if !report.k4_c1 {
        result.status = not_applicable("K4 fails");
        result.tolerance = None;
        return Ok(result);
    }
    let Some(scale) = equivalence_scale(k.family()) else {
        result.status = not_applicable("the drifting-field identity is specific to gaussian and vmf kernels");
        result.tolerance = None;
        return Ok(result);
    };
    let g = k.geometry();
    let mut worst = 0.0f64;
    for _ in 0..cfg.instances {
        let ctx = FieldContext::new(*k, random_ensemble(rng, g, 32, 0.0)?, random_ensemble(rng, g, 32, 0.5)?)?;
        for _ in 0..20 {
            let x = random_point(rng, g, 1.5);
            let v = drifting_field(&ctx, &x)?;
            let f: Vec<f64> = velocity(&DivergenceSpec::ForwardKl, &ctx, &x)?.iter().map(|a| scale * a).collect();
            worst = worst.max(max_abs_diff(&v, &f) / norm(&f).max(f64::MIN_POSITIVE));
        }
    }
    result.status = status(worst < cfg.equivalence_tolerance);
    result.max_error = Some(worst);
    result.detail = Some(format!("{} instances x 20 queries, relative error", cfg.instances));
    Ok(result)
}

fn score_check(k: &KernelSpec<f64>, cfg: &VerifySection, rng: &mut SeededStream) -> Result<CheckResult, CliError> {
    let mut result = CheckResult {
        kernel: k.to_string(),
        check: "finite_difference_score",
        status: String::new(),
        max_error: None,
        tolerance: Some(cfg.score_tolerance),
        detail: None,
    };
    if !k.assumption_report().k4_c1 {
        result.status = not_applicable("K4 fails");
        result.tolerance = None;
        return Ok(result);
    }
    let g = k.geometry();
    let mut worst = 0.0f64;
    for _ in 0..cfg.instances {
        let support = random_ensemble(rng, g, 16, 0.0)?;
        let x = random_point(rng, g, 1.5);
        let s = kde_score(k, &support, &x)?;
        worst = worst.max(max_abs_diff(&s, &fd_score(k, &support, &x, rng)?));
    }
    result.status = status(worst < cfg.score_tolerance);
    result.max_error = Some(worst);
    result.detail = Some(format!("{} instances, absolute error", cfg.instances));
    Ok(result)
}

fn bound_check(k: &KernelSpec<f64>, cfg: &VerifySection, rng: &mut SeededStream) -> Result<CheckResult, CliError> {
    let bound = k.gradient_bound();
    let g = k.geometry();
    let width = match *k.family() {
        KernelFamily::Gaussian { h } | KernelFamily::Laplace { h } | KernelFamily::Imq { h, .. } => 3.0 * h,
        KernelFamily::Matern { length_scale, .. } => 3.0 * length_scale,
        _ => 1.0,
    };
    let mut empirical = 0.0f64;
    for _ in 0..cfg.bound_pairs {
        let (x, y) = (random_point(rng, g, width), random_point(rng, g, width));
        match k.grad(&x, &y) {
            Ok(v) => empirical = empirical.max(norm(&v)),
            Err(gfdrift::Error::UndefinedGradient(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let (st, detail) = match bound {
        Some(m) => (status(empirical <= m + 1e-9), format!("{} pairs, empirical max {empirical:.6e}, analytic bound {m:.6e}", cfg.bound_pairs)),
        None => (not_applicable("no analytic bound"), String::new()),
    };
    Ok(CheckResult {
        kernel: k.to_string(),
        check: "gradient_bound",
        status: st,
        max_error: None,
        tolerance: None,
        detail: Some(detail),
    })
}

pub fn run_checks(cfg: &VerifySection, seed: u64) -> Result<VerifyReport, CliError> {
    if cfg.kernels.is_empty() {
        return Err(CliError::usage("verify.kernels must list at least one kernel"));
    }
    let mut rng = SeededStream::new(seed);
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for VerifyKernel { family, dim } in &cfg.kernels {
        let geometry = if family.is_spherical() { Geometry::sphere(*dim)? } else { Geometry::euclidean(*dim)? };
        let k = KernelSpec::new(*family, geometry)?;
        let report = k.assumption_report();
        let consistent = report.overall
            == (report.k1_characteristic && report.k2_gradient_bound.is_some() && report.k3_strictly_positive && report.k4_c1);
        checks.push(CheckResult {
            kernel: k.to_string(),
            check: "assumption_report",
            status: status(consistent),
            max_error: None,
            tolerance: None,
            detail: Some(format!(
                "k1 {} k2 {:?} k3 {} k4 {} overall {}",
                report.k1_characteristic, report.k2_gradient_bound, report.k3_strictly_positive, report.k4_c1, report.overall
            )),
        });
        reports.push((k.to_string(), report));
        checks.push(core_equivalence(&k, cfg, &mut rng)?);
        checks.push(bound_check(&k, cfg, &mut rng)?);
        checks.push(score_check(&k, cfg, &mut rng)?);
    }
    Ok(VerifyReport { all_passed: !checks.iter().any(CheckResult::failed), assumption_reports: reports, checks })
}
