use anyhow::{anyhow, bail, Context, Result};
use langevin_core::friction::FrictionSpec;
use langevin_core::gaussian::{
    diagonal_system_rate, fit_decay_rate, ou_chi2_series, ou_rate_closed_form, propagate,
    GaussianMoments, LinearDynamics,
};
use langevin_core::linalg::SymMatrix;
use langevin_core::lyapunov::{audit_certificate, build_s_rescaled, decay_audit, AuditReport};
use langevin_core::potentials::{estimate_constants, scaled, AssumptionConstants, ConstantsProvenance, Potential, SampleBox};
use langevin_core::rate_bounds::{
    certificate, compare_to_constant_friction, canonical_coefficients, diag_quadratic_certificate, log_grid,
    optimize_m1, ComparisonReport, LyapunovCoefficients, M1Sweep, RateCertificate,
};
use langevin_core::sde_sim::{chi2_proxy_from_moments, DynamicsForm, Ensemble, SimConfig, Simulator};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Form, Kind, PotentialConfig};
use crate::output::{num, opt, OutputDir};

pub fn run(kind: Kind, cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate(kind)?;
    let out = OutputDir::create(&cfg.out, kind)?;
    let echo = out.echo_config(cfg)?;
    let result = match kind {
        Kind::OracleOu => oracle_ou(cfg, &out),
        Kind::Simulate => simulate(cfg, &out),
        Kind::Certify => certify(cfg, &out),
        Kind::Compare => compare(cfg, &out),
        Kind::Audit => audit(cfg, &out),
    };
    result.with_context(|| format!("{} failed (resolved config: {})", kind.name(), echo.display()))
}

#[derive(Serialize)]
struct OuRow {
    w: f64,
    friction: &'static str,
    lambda: f64,
    closed_form_rate: f64,
    fitted_rate: f64,
    relative_gap: f64,
    window: [f64; 2],
}

#[derive(Serialize)]
struct DominanceRow {
    friction: &'static str,
    lambda: Option<f64>,
    rate: f64,
}

#[derive(Serialize)]
struct Dominance {
    v: Vec<f64>,
    rows: Vec<DominanceRow>,
    hessian_maximal: bool,
}

#[derive(Serialize)]
struct OuReport {
    rows: Vec<OuRow>,
    max_relative_gap: f64,
    dominance: Option<Dominance>,
}

fn oracle_ou(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    let o = &cfg.oracle;
    let mut cells: Vec<(f64, &'static str, f64)> = Vec::new();
    for &w in &o.w {
        for &lambda in &o.lambda {
            cells.push((w, "constant_scalar", lambda));
        }
        // Γ = 2√(Hess V) = 2w in one dimension.
        cells.push((w, "hessian_sqrt", 2.0 * w));
    }
    let results: Vec<(OuRow, Vec<f64>, Vec<f64>)> = cells
        .par_iter()
        .map(|&(w, friction, lambda)| {
            let r = ou_rate_closed_form(w, lambda);
            let (t, chi2) = ou_chi2_series(w, lambda, 0.0, 20.0 / r, o.n_times)?;
            let fitted = fit_decay_rate(&t, &chi2, 0.5)?;
            let row = OuRow {
                w,
                friction,
                lambda,
                closed_form_rate: r,
                fitted_rate: fitted,
                relative_gap: (fitted - r).abs() / r,
                window: [t[t.len() - (t.len() as f64 * 0.5).ceil() as usize], 20.0 / r],
            };
            Ok((row, t, chi2))
        })
        .collect::<langevin_core::Result<_>>()?;

    let header = ["w", "friction", "lambda", "t", "chi2"].map(String::from);
    let mut rows = Vec::new();
    for (row, t, chi2) in &results {
        for (ti, ci) in t.iter().zip(chi2) {
            rows.push(vec![num(row.w), row.friction.to_string(), num(row.lambda), num(*ti), num(*ci)]);
        }
    }
    out.table("oracle_ou.csv", &header, &rows)?;

    let dominance = match &o.v {
        Some(v) => {
            let vmax = v.iter().cloned().fold(0.0, f64::max);
            let grid = o.dominance_lambda.clone().unwrap_or_else(|| log_grid(0.1, 10.0 * vmax, 50));
            let hess = diagonal_system_rate(v, &FrictionSpec::HessianSqrt { s: 2.0 })?;
            let mut rows = vec![DominanceRow {
                friction: "hessian_sqrt",
                lambda: None,
                rate: hess,
            }];
            for lambda in grid {
                rows.push(DominanceRow {
                    friction: "constant_scalar",
                    lambda: Some(lambda),
                    rate: diagonal_system_rate(v, &FrictionSpec::ConstantScalar { lambda })?,
                });
            }
            let hessian_maximal = rows.iter().all(|r| r.rate <= hess);
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.friction.to_string(), opt(r.lambda), num(r.rate)])
                .collect();
            out.table("dominance.csv", &["friction", "lambda", "rate"].map(String::from), &table)?;
            Some(Dominance {
                v: v.clone(),
                rows,
                hessian_maximal,
            })
        }
        None => None,
    };

    let report = OuReport {
        max_relative_gap: results.iter().map(|r| r.0.relative_gap).fold(0.0, f64::max),
        rows: results.into_iter().map(|r| r.0).collect(),
        dominance,
    };
    for r in &report.rows {
        println!(
            "w={} {} lambda={}: fitted {:.6} closed-form {:.6} gap {:.2e}",
            r.w, r.friction, r.lambda, r.fitted_rate, r.closed_form_rate, r.relative_gap
        );
    }
    out.report(cfg, &report)?;
    Ok(())
}

fn constants_for(cfg: &ExperimentConfig, p: &dyn Potential) -> Result<AssumptionConstants> {
    let c = &cfg.certificate;
    if let Some(k) = c.constants {
        return Ok(AssumptionConstants::with_provenance(
            k.alpha,
            k.beta,
            k.gamma,
            p.dim(),
            ConstantsProvenance::UserSupplied,
        )?);
    }
    if let Some(k) = p.closed_form_constants() {
        return Ok(k);
    }
    let sample_box = SampleBox::cube(p.dim(), -c.estimate_half_width, c.estimate_half_width);
    Ok(estimate_constants(p, &sample_box, c.estimate_samples, cfg.seed.unwrap_or(0))?)
}

#[derive(Serialize)]
struct CertifyReport {
    constants: AssumptionConstants,
    certificate: RateCertificate,
    best_index: usize,
    comparison: ComparisonReport,
}

fn certify_core(cfg: &ExperimentConfig) -> Result<(AssumptionConstants, M1Sweep, ComparisonReport)> {
    let p = cfg.potential.build()?;
    let k = constants_for(cfg, p.as_ref())?;
    let c = &cfg.certificate;
    let sweep = optimize_m1(&k, &c.s_grid, &c.x0_grid)?;
    let comparison = compare_to_constant_friction(&k, &sweep.best, &c.lambda_grid)?;
    Ok((k, sweep, comparison))
}

fn print_certificate(cert: &RateCertificate, comparison: &ComparisonReport) {
    println!(
        "certificate: valid={} rate={:.6} (rescaled {:.6}, m1={:.6}, m2={:.6e})",
        cert.valid, cert.original_rate, cert.rescaled_rate, cert.m1, cert.m2
    );
    if comparison.applicable {
        println!(
            "comparison: dominates all {} lambdas: {} (min margin {:.6})",
            comparison.rows.len(),
            comparison.all_dominate,
            comparison.min_margin.unwrap_or(f64::NAN)
        );
    } else {
        println!("comparison: not applicable (certificate rate is not positive)");
    }
    println!("beta^2 gamma^2 d / alpha^3 = {:.3e}", comparison.sufficient_ratio);
}

fn certify(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    let (constants, sweep, comparison) = certify_core(cfg)?;
    let header = ["s", "x0", "m1", "m2", "rescaled_rate", "original_rate", "valid", "error"].map(String::from);
    let rows: Vec<Vec<String>> = sweep
        .table
        .iter()
        .map(|e| match &e.certificate {
            Some(c) => vec![
                num(e.s),
                num(e.x0),
                num(c.m1),
                num(c.m2),
                num(c.rescaled_rate),
                num(c.original_rate),
                c.valid.to_string(),
                String::new(),
            ],
            None => vec![
                num(e.s),
                num(e.x0),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.error.clone().unwrap_or_default(),
            ],
        })
        .collect();
    out.table("certify_sweep.csv", &header, &rows)?;
    print_certificate(&sweep.best, &comparison);
    out.report(
        cfg,
        &CertifyReport {
            constants,
            certificate: sweep.best,
            best_index: sweep.best_index,
            comparison,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ExactRow {
    lambda: f64,
    constant_rate: f64,
    hessian_rate: f64,
}

#[derive(Serialize)]
struct CompareReport {
    constants: AssumptionConstants,
    certificate: RateCertificate,
    comparison: ComparisonReport,
    /// Exact rates for diagonal quadratic potentials.
    exact: Option<Vec<ExactRow>>,
}

fn compare(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    let (constants, sweep, comparison) = certify_core(cfg)?;
    let header = ["lambda", "baseline_rate", "certificate_rate", "dominates", "margin"].map(String::from);
    let rows: Vec<Vec<String>> = comparison
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.lambda),
                num(r.baseline_rate),
                num(r.certificate_rate),
                r.dominates.to_string(),
                num(r.margin),
            ]
        })
        .collect();
    out.table("compare.csv", &header, &rows)?;

    let exact = match &cfg.potential {
        PotentialConfig::QuadraticDiagonal { v } => {
            let hess = diagonal_system_rate(v, &FrictionSpec::HessianSqrt { s: 2.0 })?;
            let rows = cfg
                .certificate
                .lambda_grid
                .iter()
                .map(|&lambda| {
                    Ok(ExactRow {
                        lambda,
                        constant_rate: diagonal_system_rate(v, &FrictionSpec::ConstantScalar { lambda })?,
                        hessian_rate: hess,
                    })
                })
                .collect::<langevin_core::Result<Vec<_>>>()?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![num(r.lambda), num(r.constant_rate), num(r.hessian_rate)])
                .collect();
            out.table(
                "compare_exact.csv",
                &["lambda", "constant_rate", "hessian_rate"].map(String::from),
                &table,
            )?;
            Some(rows)
        }
        _ => None,
    };
    print_certificate(&sweep.best, &comparison);
    out.report(
        cfg,
        &CompareReport {
            constants,
            certificate: sweep.best,
            comparison,
            exact,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct OracleRow {
    time: f64,
    max_mean_z: f64,
    max_cov_relative_error: f64,
}

#[derive(Serialize)]
struct SimulateReport {
    form: Form,
    alpha: Option<f64>,
    stability_warning: Option<String>,
    records: usize,
    final_time: f64,
    final_mean: Vec<f64>,
    final_cov: SymMatrix,
    final_chi2_proxy: Option<f64>,
    /// `None` when no exact oracle is available (non-quadratic potential or
    /// rescaled form).
    oracle: Option<Vec<OracleRow>>,
}

/// Block-diagonal phase-space Gaussian with position part `(mean, cov)` and
/// momentum covariance `p_var · I`.
fn phase_gaussian(mean: &[f64], cov: &SymMatrix, p_var: f64) -> Result<GaussianMoments> {
    let d = mean.len();
    let mut m = vec![0.0; 2 * d];
    m[..d].copy_from_slice(mean);
    let mut rows = vec![vec![0.0; 2 * d]; 2 * d];
    for (i, r) in cov.to_rows().into_iter().enumerate() {
        rows[i][..d].copy_from_slice(&r);
    }
    for (i, r) in rows.iter_mut().enumerate().skip(d) {
        r[i] = p_var;
    }
    Ok(GaussianMoments::new(m, SymMatrix::from_rows(&rows)?)?)
}

fn simulate(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    let s = &cfg.simulation;
    let seed = cfg.seed.ok_or_else(|| anyhow!("seed: required for simulate"))?;
    let p = cfg.potential.build()?;
    let spec = cfg.friction.build()?;
    let d = p.dim();

    let mut mean = s.init_mean.clone().unwrap_or_else(|| {
        let mut m = vec![0.0; 2 * d];
        m[0] = 1.0;
        m
    });
    let cov = match &s.init_cov {
        Some(rows) => SymMatrix::from_rows(rows).context("simulation.init_cov")?,
        None => SymMatrix::zeros(2 * d),
    };

    let alpha = match s.form {
        Form::Original => None,
        Form::Rescaled => Some(constants_for(cfg, p.as_ref())?.alpha),
    };
    let scaled_potential;
    let (potential, spec, form, p_scale): (&dyn Potential, FrictionSpec, DynamicsForm, f64) = match alpha {
        None => (p.as_ref(), spec, DynamicsForm::Original, 1.0),
        Some(a) => {
            scaled_potential = scaled(p.as_ref(), 1.0 / a)?;
            (&scaled_potential, spec.rescaled(a)?, DynamicsForm::Rescaled { alpha: a }, 1.0 / a.sqrt())
        }
    };
    // Rescaled momenta p̃ = p/√α.
    for m in &mut mean[d..] {
        *m *= p_scale;
    }
    let mut cov_m = cov.as_matrix().clone();
    for i in 0..2 * d {
        for j in 0..2 * d {
            let f = if i >= d { p_scale } else { 1.0 } * if j >= d { p_scale } else { 1.0 };
            cov_m[(i, j)] *= f;
        }
    }
    let init_law = GaussianMoments::new(mean.clone(), SymMatrix::symmetrize(cov_m))?;
    let init = if s.init_cov.is_some() {
        Ensemble::from_gaussian(&init_law, s.n_particles, seed)?
    } else {
        Ensemble::from_point(&mean[..d], &mean[d..], s.n_particles, seed)?
    };

    let mut sim_cfg = SimConfig::new(s.dt, s.n_steps, s.n_particles, seed);
    sim_cfg.form = form;
    sim_cfg.noise_refinement = s.noise_refinement;
    let sim = Simulator::new(potential, &spec, sim_cfg)?;
    let warning = sim.stability_warning(&init);
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    let traj = sim.run(&init, s.record_every)?;

    // Reference law for the χ² proxy: the Gibbs law (temperature α⁻¹ in the
    // rescaled form), moment-matched when the potential is not quadratic.
    let temperature = alpha.map_or(1.0, |a| 1.0 / a);
    let pi = match potential.gibbs_position_moments() {
        Some((m, c)) => Some(phase_gaussian(&m, &c.scale(temperature), temperature)?),
        None => None,
    };

    let oracle_dyn = match (alpha, potential.constant_hessian()) {
        (None, Some(_)) if spec.is_constant() || matches!(spec, FrictionSpec::HessianSqrt { .. }) => {
            Some(LinearDynamics::from_potential(potential, &spec)?)
        }
        _ => None,
    };

    let big = 2 * d;
    let mut header = vec!["time".to_string()];
    header.extend((1..=big).map(|i| format!("mean_{i}")));
    for i in 1..=big {
        for j in 1..=big {
            header.push(format!("cov_{i}_{j}"));
        }
    }
    header.push("chi2_proxy".into());
    let mut rows = Vec::with_capacity(traj.records.len());
    let mut oracle_rows = Vec::new();
    let mut last_proxy = None;
    for rec in &traj.records {
        let proxy = pi.as_ref().and_then(|pi| chi2_proxy_from_moments(rec, pi).ok());
        last_proxy = proxy;
        let mut row = vec![num(rec.time)];
        row.extend(rec.mean.iter().map(|&x| num(x)));
        for i in 0..big {
            for j in 0..big {
                row.push(num(rec.cov[(i, j)]));
            }
        }
        row.push(opt(proxy));
        rows.push(row);

        if let Some(dynamics) = &oracle_dyn {
            if rec.time > 0.0 {
                let exact = propagate(dynamics, &init_law, rec.time)?;
                let se = rec.standard_errors();
                let max_mean_z = (0..big)
                    .map(|k| (rec.mean[k] - exact.mean[k]).abs() / se[k])
                    .fold(0.0, f64::max);
                let mut max_cov = 0.0_f64;
                for i in 0..big {
                    for j in 0..big {
                        let e = exact.cov[(i, j)];
                        if e.abs() > 1e-12 {
                            max_cov = max_cov.max(((rec.cov[(i, j)] - e) / e).abs());
                        }
                    }
                }
                oracle_rows.push(OracleRow {
                    time: rec.time,
                    max_mean_z,
                    max_cov_relative_error: max_cov,
                });
            }
        }
    }
    out.table("simulate_trajectory.csv", &header, &rows)?;

    let last = traj.records.last().ok_or_else(|| anyhow!("no records"))?;
    println!(
        "simulated {} particles to t={} ({} records)",
        s.n_particles,
        last.time,
        traj.records.len()
    );
    if let Some(r) = oracle_rows.last() {
        println!(
            "oracle at t={}: max mean z {:.3}, max cov relative error {:.3e}",
            r.time, r.max_mean_z, r.max_cov_relative_error
        );
    }
    out.report(
        cfg,
        &SimulateReport {
            form: s.form,
            alpha,
            stability_warning: warning,
            records: traj.records.len(),
            final_time: last.time,
            final_mean: last.mean.clone(),
            final_cov: last.cov.clone(),
            final_chi2_proxy: last_proxy,
            oracle: oracle_dyn.is_some().then_some(oracle_rows),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct WitnessRow {
    eps_rate: f64,
    a: f64,
    x: f64,
    y: f64,
    rescaled_rate: f64,
    original_rate: f64,
    audit_passed: bool,
}

#[derive(Serialize)]
struct AuditOutput {
    certificate: RateCertificate,
    audit: AuditReport,
    witnesses: Option<Vec<WitnessRow>>,
}

fn audit(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    let a = &cfg.audit;
    let p = cfg.potential.build()?;
    if p.constant_hessian().is_none() {
        bail!(
            "unsupported potential: the audit needs a quadratic potential, got {}",
            cfg.potential.family()
        );
    }
    let spec = cfg.friction.build()?;
    if spec != (FrictionSpec::HessianSqrt { s: 2.0 }) {
        bail!("friction: the audit certifies Gamma = 2 sqrt(Hess V); set kind = \"hessian_sqrt\", s = 2");
    }
    let d = p.dim();
    let dynamics = LinearDynamics::from_potential(p.as_ref(), &spec)?;
    let k = p
        .closed_form_constants()
        .ok_or_else(|| anyhow!("quadratic potential without closed-form constants"))?;
    let cert = certificate(&k, &canonical_coefficients(&k, a.x0)?)?;
    let root = k.alpha.sqrt();
    let s = build_s_rescaled(&cert.rescaled_coefficients, &dynamics.friction().scale(1.0 / root), k.alpha)?;

    let mean = a.init_mean.clone().unwrap_or_else(|| {
        let mut m = vec![0.0; 2 * d];
        m[0] = 0.5;
        m
    });
    if mean.len() != 2 * d {
        bail!("audit.init_mean: expected {} entries, got {}", 2 * d, mean.len());
    }
    let init = GaussianMoments::new(mean, SymMatrix::identity(2 * d).scale(a.init_cov_scale))?;
    let times: Vec<f64> = (0..a.n_times)
        .map(|i| a.t_max * i as f64 / (a.n_times - 1) as f64)
        .collect();
    let report = audit_certificate(&dynamics, &init, &s, &cert, &times, a.tol)?;
    println!(
        "certificate audit at rate {:.6}: monotone={} bound={} derivative={} divergent points={}",
        report.rate, report.monotone, report.bound_holds, report.derivative_holds, report.divergent_points
    );

    let witnesses = match &cfg.potential {
        PotentialConfig::QuadraticDiagonal { v } if !a.eps_rates.is_empty() => {
            let mut rows = Vec::new();
            for &eps in &a.eps_rates {
                let w = diag_quadratic_certificate(v, eps)?;
                let co = LyapunovCoefficients::new(2.0, w.a, w.b, w.c)?;
                let gamma_t: Vec<f64> = w.normalized_v.iter().map(|x| 2.0 * x).collect();
                let ws = build_s_rescaled(&co, &SymMatrix::from_diagonal(&gamma_t), w.alpha)?;
                let r = decay_audit(&dynamics, &init, &ws, w.original_rate, &times, a.tol)?;
                println!(
                    "witness eps={eps}: rescaled rate {:.6}, original rate {:.6}, audit passed={}",
                    w.rescaled_rate, w.original_rate, r.passed
                );
                rows.push(WitnessRow {
                    eps_rate: eps,
                    a: w.a,
                    x: w.x,
                    y: w.y,
                    rescaled_rate: w.rescaled_rate,
                    original_rate: w.original_rate,
                    audit_passed: r.passed,
                });
            }
            Some(rows)
        }
        _ => None,
    };

    let header = ["t", "value", "chi2", "bound_margin", "derivative_margin"].map(String::from);
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|pt| {
            vec![
                num(pt.t),
                opt(pt.value),
                opt(pt.chi2),
                opt(pt.bound_margin),
                opt(pt.derivative_margin),
            ]
        })
        .collect();
    out.table("audit.csv", &header, &rows)?;
    out.report(
        cfg,
        &AuditOutput {
            certificate: cert,
            audit: report,
            witnesses,
        },
    )?;
    Ok(())
}
