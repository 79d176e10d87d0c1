//! Per-subcommand experiment runners. Each writes CSV artifacts plus a JSON
//! report and prints one line per checked quantity.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use roughfbm::cmspace::{projected_inner, StepFunction};
use roughfbm::fbm::{
    conditional_cov_qs, conditional_structure_checks, covariance_representation_residual,
    sample_fbm_cholesky, FbmParams, VolterraKernel,
};
use roughfbm::grid::{SampledPath, TimeGrid};
use roughfbm::rde::{
    self, exp_bounded, jacobian_consistency, sin_plus_two, solve_jacobian, solve_with_drift,
    ConstSigma, DiffusionCoeff, Drift, DriftScheme,
};
use roughfbm::regularise::{
    besov_neg_norm, uniqueness_experiment, DriftSpec, FlowGermFamily, GermKind, GridFn1,
    UniquenessConfig,
};
use roughfbm::report::{Cmp, Report};
use roughfbm::roughpath::{chen_defect, geometric_defect, lift_piecewise_linear, RoughPath};
use roughfbm::sewing::{mc_rate_beta1, mc_rate_beta2, IncrementGerm, PlantedGerm, RateFit};

use crate::config::{resolve, CommonOpts, GermChoice, RunConfig};

type Outcome = Result<bool, String>;

fn ensure_out(cfg: &RunConfig) -> Result<(), String> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| format!("create {:?}: {e}", cfg.out_dir))
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), String> {
    fs::write(dir.join(name), content).map_err(|e| format!("write {name}: {e}"))
}

fn finish(cfg: &RunConfig, name: &str, report: &Report) -> Outcome {
    print!("{}", report.render_lines());
    write_file(&cfg.out_dir, &format!("{name}.json"), &report.to_json())?;
    Ok(report.passed)
}

fn config_json(cfg: &RunConfig, extra: &[(&str, serde_json::Value)]) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    map.insert("exponents".into(), serde_json::to_value(cfg.exponents).unwrap());
    map.insert("level".into(), cfg.level.into());
    map.insert("seed".into(), cfg.seed.into());
    for (k, v) in extra {
        map.insert((*k).into(), v.clone());
    }
    serde_json::Value::Object(map)
}

fn rate_fit_csv(fit: &RateFit) -> String {
    let mut out = String::from("scale,lp_norm,stderr\n");
    for i in 0..fit.scales.len() {
        out.push_str(&format!("{},{},{}\n", fit.scales[i], fit.lp_norms[i], fit.stderrs[i]));
    }
    out
}

/// Areas as CSV (i, j, components...) with i < j row-major.
fn area_csv(rp: &RoughPath) -> String {
    let n = rp.grid().len();
    let m = rp.dim();
    let mut out = String::from("i,j");
    for k in 1..=m * m {
        out.push_str(&format!(",c{k}"));
    }
    out.push('\n');
    for i in 0..n {
        for j in i + 1..n {
            out.push_str(&format!("{i},{j}"));
            for v in rp.area.entry(i, j) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn run_fbm(common: &CommonOpts, samples: usize) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let mut report = Report::new("fbm", config_json(&cfg, &[("samples", samples.into())]));
    let h = cfg.exponents.h;
    let p = FbmParams::new(h, 1).map_err(|e| e.to_string())?;

    // sample paths, one column per seed-derived sample
    let grid = Arc::new(TimeGrid::dyadic(cfg.level, 0.0, 1.0).map_err(|e| e.to_string())?);
    let mut cols = Vec::new();
    for k in 0..samples {
        let b = sample_fbm_cholesky(&grid, &p, roughfbm::seedmix::mix2(cfg.seed, k as u64))
            .map_err(|e| e.to_string())?;
        cols.push(b);
    }
    let packed = SampledPath::from_fn(grid.clone(), samples, |t| {
        let i = grid.index_of(t).unwrap();
        cols.iter().map(|c| c.at(i)).collect()
    });
    write_file(&cfg.out_dir, "fbm_samples.csv", &packed.to_csv())?;

    // covariance representation residual on a 32-point grid
    let check_grid =
        TimeGrid::new((0..32).map(|k| k as f64 / 31.0).collect()).map_err(|e| e.to_string())?;
    let resid = covariance_representation_residual(&check_grid, &p);
    report.check("covariance representation residual", resid, 1e-3, Cmp::AbsLe, "quadrature");

    // conditional structure at s = 1/4 on a 17-point grid
    let sgrid = TimeGrid::dyadic(4, 0.0, 1.0).map_err(|e| e.to_string())?;
    let s_idx = sgrid.index_of(0.25).unwrap();
    let rep = conditional_structure_checks(&p, &sgrid, s_idx).map_err(|e| e.to_string())?;
    report.check("increment covariance off-diagonal max", rep.max_offdiag, 1e-10, Cmp::Le, "closed-form");
    report.check("diagonal dominance slack", rep.min_diag_dominance, -1e-10, Cmp::Ge, "closed-form");
    report.info("conditional covariance ratio max", rep.max_fv_ratio, "closed-form");
    report.check("conditional variance min", rep.min_condvar, 0.0, Cmp::Ge, "closed-form");
    report.info("conditional variance scaling exponent", rep.theta_fit, "fit");

    finish(&cfg, "fbm_report", &report)
}

pub fn run_cmspace(common: &CommonOpts, s: f64) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let mut report = Report::new("cmspace", config_json(&cfg, &[("s", s.into())]));
    let p = FbmParams::new(cfg.exponents.h, 1).map_err(|e| e.to_string())?;

    let mut csv = String::from("u,v,projected_inner,q_s,abs_diff\n");
    let mut worst: f64 = 0.0;
    let step = (1.0 - s) / 4.0;
    for iu in 1..=4 {
        for iv in iu..=4 {
            let u = s + step * iu as f64;
            let v = s + step * iv as f64;
            let f = StepFunction::indicator_on(s, u).map_err(|e| e.to_string())?;
            let g = StepFunction::indicator_on(s, v).map_err(|e| e.to_string())?;
            let lhs = projected_inner(&f, &g, s, &p).map_err(|e| e.to_string())?;
            let rhs = conditional_cov_qs(s, u, v, &p);
            let diff = (lhs - rhs).abs();
            worst = worst.max(diff);
            csv.push_str(&format!("{u},{v},{lhs},{rhs},{diff}\n"));
        }
    }
    write_file(&cfg.out_dir, "cmspace_projection.csv", &csv)?;
    report.check("projected inner vs conditional covariance", worst, 2e-3, Cmp::AbsLe, "quadrature");
    finish(&cfg, "cmspace_report", &report)
}

pub fn run_lift(common: &CommonOpts) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let mut report = Report::new("lift", config_json(&cfg, &[]));
    let p = FbmParams::new(cfg.exponents.h, 1).map_err(|e| e.to_string())?;
    let level = cfg.level.min(8); // the defect scan is cubic in grid size
    let grid = Arc::new(TimeGrid::dyadic(level, 0.0, 1.0).map_err(|e| e.to_string())?);
    let b = sample_fbm_cholesky(&grid, &p, cfg.seed).map_err(|e| e.to_string())?;
    let rp = lift_piecewise_linear(&b, cfg.exponents.h_minus);
    write_file(&cfg.out_dir, "lift_area.csv", &area_csv(&rp))?;
    report.check("Chen defect of the lift", chen_defect(&rp), 1e-12, Cmp::AbsLe, "exact");
    report.check("geometric symmetry defect", geometric_defect(&rp), 1e-12, Cmp::AbsLe, "exact");
    finish(&cfg, "lift_report", &report)
}

struct BumpDrift;
impl Drift for BumpDrift {
    fn d(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.4 * x[0] * (-x[0] * x[0]).exp();
    }
}

pub fn run_flow(common: &CommonOpts, sigma: &str, b: &str) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let mut report = Report::new(
        "flow",
        config_json(&cfg, &[("sigma", sigma.into()), ("b", b.into())]),
    );
    let p = FbmParams::new(cfg.exponents.h, 1).map_err(|e| e.to_string())?;
    let coeff: Box<dyn DiffusionCoeff> = match sigma {
        "const" => Box::new(ConstSigma { mat: vec![1.0], d: 1, d0: 1, lambda: 1.0 }),
        "sin" => Box::new(sin_plus_two()),
        "exp-bounded" => Box::new(exp_bounded()),
        other => return Err(format!("unknown sigma '{other}' (const | sin | exp-bounded)")),
    };
    let gamma = cfg.exponents.h - 0.01;
    let grid = Arc::new(TimeGrid::dyadic(cfg.level, 0.0, 1.0).map_err(|e| e.to_string())?);
    let bpath = sample_fbm_cholesky(&grid, &p, cfg.seed).map_err(|e| e.to_string())?;
    let rp = lift_piecewise_linear(&bpath, gamma);

    match b {
        "none" => {
            let sol = solve_jacobian(coeff.as_ref(), &rp, 0, &[0.2]).map_err(|e| e.to_string())?;
            write_file(&cfg.out_dir, "flow_phi.csv", &sol.phi.to_csv())?;
            write_file(&cfg.out_dir, "flow_jacobian.csv", &sol.jac.as_ref().unwrap().to_csv())?;
            let jk = jacobian_consistency(&sol).map_err(|e| e.to_string())?;
            // scheme error against a finer solve on the same path restricted
            let mid = grid.len() / 2;
            let ident = rde::flow_identity_residual(coeff.as_ref(), &rp, mid, &[0.2])
                .map_err(|e| e.to_string())?;
            report.info("product J Jinv deviation from identity", jk, "scheme");
            report.info("flow identity residual at s = 1/2", ident, "scheme");
            report.check(
                "flow identity within 10x inverse consistency",
                ident,
                10.0 * jk.max(1e-14),
                Cmp::Le,
                "scheme",
            );
        }
        "quadratic-bump" => {
            let (x, drift) =
                solve_with_drift(&BumpDrift, coeff.as_ref(), &rp, &[0.2], DriftScheme::BasePoint)
                    .map_err(|e| e.to_string())?;
            write_file(&cfg.out_dir, "flow_phi.csv", &x.to_csv())?;
            write_file(&cfg.out_dir, "flow_drift_component.csv", &drift.to_csv())?;
            report.info("drift component sup", drift.sup_norm(), "scheme");
        }
        other => return Err(format!("unknown drift '{other}' (none | quadratic-bump)")),
    }
    finish(&cfg, "flow_report", &report)
}

pub fn run_germ_rate(
    common: &CommonOpts,
    germ: GermChoice,
    scales: &str,
    replicas: usize,
    inner: usize,
) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let scale_cells: Vec<usize> = scales
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("scales: {e}")))
        .collect::<Result<_, _>>()?;
    let mut report = Report::new(
        "germ-rate",
        config_json(
            &cfg,
            &[
                ("germ", format!("{germ:?}").to_lowercase().into()),
                ("scales", scales.into()),
                ("replicas", replicas.into()),
                ("inner", inner.into()),
            ],
        ),
    );
    let h = cfg.exponents.h;
    let alpha = cfg.exponents.alpha;
    let n = 1usize << cfg.level;
    let anchors: Vec<usize> = vec![0, n / 8, n / 4, n / 2];
    let eps = 0.5f64.powi(8);

    let (fit, name): (RateFit, &str) = match germ {
        GermChoice::L | GermChoice::K => {
            let kind = if matches!(germ, GermChoice::L) {
                GermKind::Occupation
            } else {
                GermKind::DriverWeighted
            };
            let fam = FlowGermFamily::standard(h, alpha, cfg.level, eps, 2024, kind)
                .map_err(|e| e.to_string())?;
            let fit = mc_rate_beta1(&fam, 2.0, &anchors, &scale_cells, replicas, inner, cfg.seed)
                .map_err(|e| e.to_string())?;
            // second exponent on the wider scales
            let b2_scales: Vec<usize> =
                scale_cells.iter().copied().filter(|&c| c >= 16 && c % 2 == 0).collect();
            if b2_scales.len() >= 3 && matches!(germ, GermChoice::L) {
                let fit2 = mc_rate_beta2(
                    &fam,
                    2.0,
                    &anchors,
                    &b2_scales,
                    replicas,
                    inner.max(100),
                    roughfbm::seedmix::mix2(cfg.seed, 2),
                )
                .map_err(|e| e.to_string())?;
                report.check("conditional defect exponent", fit2.slope, 1.0, Cmp::Ge, "fit");
                report.check(
                    "conditional defect fit reliable",
                    if fit2.reliable { 1.0 } else { 0.0 },
                    1.0,
                    Cmp::Ge,
                    "monte-carlo",
                );
            }
            let floor = 1.0 + (alpha - 1.0) * h - 0.15
                + if matches!(germ, GermChoice::K) { h - 0.15 } else { 0.0 };
            report.check("first exponent", fit.slope, floor, Cmp::Ge, "fit");
            (fit, if matches!(germ, GermChoice::L) { "germ_l" } else { "germ_k" })
        }
        GermChoice::Increment => {
            let grid = Arc::new(TimeGrid::dyadic(cfg.level, 0.0, 1.0).map_err(|e| e.to_string())?);
            let kernel = Arc::new(
                VolterraKernel::build(grid, FbmParams::new(h, 1).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?,
            );
            let fam = IncrementGerm { kernel };
            let fit = mc_rate_beta1(&fam, 2.0, &anchors, &scale_cells, replicas, 1, cfg.seed)
                .map_err(|e| e.to_string())?;
            report.check("increment exponent vs Hurst index", (fit.slope - h).abs(), 0.05, Cmp::Le, "fit");
            (fit, "germ_increment")
        }
        GermChoice::Planted => {
            let grid = Arc::new(TimeGrid::dyadic(cfg.level, 0.0, 1.0).map_err(|e| e.to_string())?);
            let fam = PlantedGerm { grid, q: 1.5, noise: 0.15 };
            let fit = mc_rate_beta2(
                &fam,
                2.0,
                &anchors,
                &scale_cells,
                replicas,
                inner.max(100),
                cfg.seed,
            )
            .map_err(|e| e.to_string())?;
            report.check("planted exponent recovery", (fit.slope - 1.5).abs(), 0.1, Cmp::Le, "fit");
            (fit, "germ_planted")
        }
    };
    report.info("fitted slope", fit.slope, "fit");
    report.info("slope standard error", fit.slope_stderr, "fit");
    write_file(&cfg.out_dir, &format!("{name}.csv"), &rate_fit_csv(&fit))?;
    write_file(
        &cfg.out_dir,
        &format!("{name}_fit.json"),
        &serde_json::to_string_pretty(&fit).unwrap(),
    )?;
    finish(&cfg, &format!("{name}_report"), &report)
}

pub fn run_besov(common: &CommonOpts) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let mut report = Report::new("besov", config_json(&cfg, &[]));
    let alpha = cfg.exponents.alpha;
    let gamma_neg = cfg.exponents.gamma_neg;
    let spec = DriftSpec::lacunary(alpha.max(0.05), 8, 2024);

    let mut csv = String::from("resolution,norm\n");
    let mut norms = Vec::new();
    for npts in [1025usize, 2049] {
        let f = GridFn1::from_fn(-1.0, 1.0, npts, |x| spec.db_at(x, 0.0));
        let norm = besov_neg_norm(&f, gamma_neg, 10);
        csv.push_str(&format!("{npts},{norm}\n"));
        norms.push(norm);
    }
    write_file(&cfg.out_dir, "besov_norms.csv", &csv)?;
    let rel = (norms[0] - norms[1]).abs() / norms[1];
    report.info("negative-regularity norm (coarse)", norms[0], "quadrature");
    report.info("negative-regularity norm (fine)", norms[1], "quadrature");
    report.check("norm stability under refinement", rel, 0.1, Cmp::AbsLe, "quadrature");
    finish(&cfg, "besov_report", &report)
}

pub fn run_regularise(common: &CommonOpts, eps_levels: &str, replicas: usize) -> Outcome {
    let cfg = resolve(common)?;
    ensure_out(&cfg)?;
    let eps_exponents: Vec<i32> = eps_levels
        .split(',')
        .map(|s| s.trim().parse::<i32>().map_err(|e| format!("eps-levels: {e}")))
        .collect::<Result<_, _>>()?;
    let mut report = Report::new(
        "regularise",
        config_json(
            &cfg,
            &[("eps_levels", eps_levels.into()), ("replicas", replicas.into())],
        ),
    );
    let ucfg = UniquenessConfig {
        h: cfg.exponents.h,
        alpha: cfg.exponents.alpha.max(0.05),
        level: cfg.level,
        eps_exponents,
        seed: cfg.seed,
        n_theta: 16,
        replicas,
    };
    let rep = uniqueness_experiment(&ucfg).map_err(|e| e.to_string())?;
    let mut csv = String::from("eps,level,gap\n");
    for (e, gaps) in rep.eps_values.iter().zip(&rep.scheme_gaps) {
        for (lv, gap) in rep.levels.iter().zip(gaps) {
            csv.push_str(&format!("{e},{lv},{gap}\n"));
        }
    }
    write_file(&cfg.out_dir, "uniqueness_gaps.csv", &csv)?;
    write_file(
        &cfg.out_dir,
        "uniqueness_report.json",
        &serde_json::to_string_pretty(&rep).unwrap(),
    )?;
    let mut worst_ratio = f64::INFINITY;
    for gaps in &rep.scheme_gaps {
        for w in gaps.windows(2) {
            worst_ratio = worst_ratio.min(w[0] / w[1]);
        }
    }
    report.check("per-level scheme-gap contraction", worst_ratio, 1.5, Cmp::Ge, "monte-carlo");
    for (k, (rel, tol)) in rep.drift_identity_rel.iter().zip(&rep.combined_tol).enumerate() {
        report.check(
            &format!("drift identity residual (eps index {k})"),
            *rel,
            5.0 * tol,
            Cmp::Le,
            "quadrature",
        );
    }
    finish(&cfg, "regularise_report", &report)
}

pub fn run_all(common: &CommonOpts) -> Outcome {
    let mut small = common.clone();
    small.n = Some(common.n.unwrap_or(7).min(7));
    let mut ok = run_fbm(&small, 2)?;
    ok &= run_cmspace(&small, 0.25)?;
    ok &= run_lift(&small)?;
    ok &= run_flow(&small, "sin", "none")?;
    ok &= run_germ_rate(&small, GermChoice::Increment, "32,16,8,4", 2000, 1)?;
    ok &= run_besov(&small)?;
    ok &= run_regularise(&small, "4,6", 4)?;
    Ok(ok)
}
