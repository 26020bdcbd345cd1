use std::path::Path;

use rigid_core::bv::{bv_table, convergence_rate, prop_check, FitChoice};
use rigid_core::cz::{cz_decompose_field, find_level, split_i_ii, tail_integral_check};
use rigid_core::fields::{random_smooth_form, rescale_family, FamilySpec};
use rigid_core::grid::{make_domain, MatrixField};
use rigid_core::homotopy::{interior_l1, HomotopyOperator, KernelMode, KernelSpec, Method};
use rigid_core::rigidity::{
    estimate_constant, lp_rigidity_check_with, scaling_sweep, weak_rigidity_check, CheckOptions, RigidityReport,
    DEFAULT_M,
};
use rigid_core::table::{sci, Table};
use rigid_core::Error;
use serde_json::{json, Value};

use crate::config::{CubeFit, Experiment, ExperimentConfig};
use crate::error::LabResult;

/// Support radius of the random test forms.
const FORM_SUPPORT: f64 = 0.7;

/// What an experiment produced: CSV tables keyed by file name, a summary,
/// and the first violated invariant, if any.
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub results: Value,
    pub violation: Option<String>,
}

pub fn run_experiment(exp: Experiment, cfg: &ExperimentConfig) -> LabResult<Outcome> {
    match exp {
        Experiment::VerifyHomotopy => verify_homotopy(cfg),
        Experiment::RigidityWeak => rigidity_weak(cfg),
        Experiment::RigidityLp => rigidity_lp(cfg),
        Experiment::CzDemo => cz_demo(cfg),
        Experiment::BvCheck => bv_check(cfg),
    }
}

fn family(cfg: &ExperimentConfig) -> &FamilySpec {
    cfg.family.as_ref().expect("validated")
}

fn verify_homotopy(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let op = HomotopyOperator::default();
    let literal = HomotopyOperator::new(KernelSpec {
        mode: KernelMode::Literal,
        ..KernelSpec::default()
    })?;
    let degrees: Vec<usize> = (0..cfg.forms)
        .map(|k| cfg.degree.unwrap_or(1 + k % (cfg.n - 1)))
        .collect();
    let resolutions = cfg.resolutions();
    let mut table = Table::new(["res", "form", "degree", "residual"]);
    let mut residuals = vec![Vec::new(); cfg.forms];
    for &res in &resolutions {
        let d = make_domain(cfg.n, res, cfg.radius)?;
        for (k, &deg) in degrees.iter().enumerate() {
            let w = random_smooth_form(&d, deg, cfg.seed + k as u64, Some(FORM_SUPPORT))?;
            let r = op.homotopy_residual(&w, Method::Kernel)?;
            residuals[k].push(r);
            table.push(vec![res.to_string(), k.to_string(), deg.to_string(), sci(r)]);
        }
    }

    // Kernel forms against the direct operator on the coarsest grid.
    let d = make_domain(cfg.n, resolutions[0], cfg.radius)?;
    let mut kernels = Table::new(["form", "degree", "kernel_gap", "literal_gap"]);
    let mut gaps = Vec::new();
    for (k, &deg) in degrees.iter().enumerate() {
        let w = random_smooth_form(&d, deg, cfg.seed + k as u64, Some(FORM_SUPPORT))?;
        let direct = op.t_direct(&w)?;
        let base = interior_l1(&direct);
        let gap = |t: &rigid_core::FormField| interior_l1(&direct.combine(1.0, t, -1.0)) / base;
        let kg = gap(&op.t_kernel(&w)?);
        let lg = gap(&literal.t_kernel(&w)?);
        kernels.push(vec![k.to_string(), deg.to_string(), sci(kg), sci(lg)]);
        gaps.push(json!({"form": k, "kernel_gap": kg, "literal_gap": lg}));
    }

    let violation = residuals.iter().enumerate().find_map(|(k, r)| {
        r.windows(2)
            .any(|w| w[1] >= w[0])
            .then(|| format!("residual of form {k} does not decrease under refinement: {r:?}"))
    });
    Ok(Outcome {
        tables: vec![
            ("verify-homotopy.csv".into(), table),
            ("verify-homotopy-kernels.csv".into(), kernels),
        ],
        results: json!({
            "resolutions": resolutions,
            "residuals": residuals,
            "decreasing": violation.is_none(),
            "kernel_comparison": gaps,
        }),
        violation,
    })
}

fn rigidity_table(rows: &[(f64, &RigidityReport)]) -> Table {
    let mut header = vec!["strength"];
    header.extend(RigidityReport::CSV_HEADER);
    let mut t = Table::new(header);
    for (s, r) in rows {
        let mut row = vec![sci(*s)];
        row.extend(r.csv_row());
        t.push(row);
    }
    t
}

fn report_json(strength: f64, r: &RigidityReport) -> Value {
    json!({
        "strength": strength,
        "lhs": r.lhs,
        "rhs": r.rhs,
        "ratio": r.ratio,
        "degenerate": r.degenerate,
        "degenerate_mean": r.degenerate_mean,
        "lhs_with_l2_fit": r.lhs_with_l2_fit,
    })
}

fn rigidity_weak(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let d = make_domain(cfg.n, cfg.working_res(), cfg.radius)?;
    let spec = family(cfg);
    let mut reports = Vec::new();
    for &f in &cfg.factors {
        let g = rescale_family(spec, f).generate(&d)?;
        reports.push((spec.strength() * f, weak_rigidity_check(&g.a, &g.curl)?));
    }
    let rows: Vec<(f64, &RigidityReport)> = reports.iter().map(|(s, r)| (*s, r)).collect();
    let plain: Vec<RigidityReport> = reports.iter().map(|(_, r)| r.clone()).collect();
    let constant = estimate_constant(&plain).ok();
    Ok(Outcome {
        tables: vec![("rigidity-weak.csv".into(), rigidity_table(&rows))],
        results: json!({
            "family": spec.name(),
            "constant": constant,
            "degenerate": reports.iter().filter(|(_, r)| r.degenerate).count(),
            "reports": reports.iter().map(|(s, r)| report_json(*s, r)).collect::<Vec<_>>(),
        }),
        violation: None,
    })
}

fn rigidity_lp(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let d = make_domain(cfg.n, cfg.working_res(), cfg.radius)?;
    let spec = family(cfg);
    let opts = CheckOptions {
        log_factor: cfg.log_factor,
        ..CheckOptions::default()
    };
    let base = spec.strength();
    let fields = cfg
        .factors
        .iter()
        .map(|&f| rescale_family(spec, f).generate(&d))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut per_p = Vec::new();
    for p in cfg.exponents() {
        let reports = fields
            .iter()
            .map(|g| lp_rigidity_check_with(&g.a, &g.curl, p, DEFAULT_M, &opts))
            .collect::<Result<Vec<_>, _>>()?;
        let slope = if base > 0.0 {
            let params: Vec<f64> = cfg.factors.iter().map(|f| f * base.abs()).collect();
            let mut i = 0;
            match scaling_sweep(&params, |_| {
                i += 1;
                Ok(reports[i - 1].clone())
            }) {
                Ok(s) => Some(s.slope),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        per_p.push(json!({
            "p": p,
            "slope": slope,
            "constant": estimate_constant(&reports).ok(),
            "reports": cfg.factors.iter().zip(&reports).map(|(f, r)| report_json(f * base, r)).collect::<Vec<_>>(),
        }));
        for (f, r) in cfg.factors.iter().zip(reports) {
            rows.push((f * base, r));
        }
    }
    let refs: Vec<(f64, &RigidityReport)> = rows.iter().map(|(s, r)| (*s, r)).collect();
    Ok(Outcome {
        tables: vec![("rigidity-lp.csv".into(), rigidity_table(&refs))],
        results: json!({
            "family": spec.name(),
            "log_factor": cfg.log_factor,
            "sweeps": per_p,
        }),
        violation: None,
    })
}

fn cz_demo(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let d = make_domain(cfg.n, cfg.working_res(), cfg.radius)?;
    let g = family(cfg).generate(&d)?;
    let op = HomotopyOperator::default();
    let t_curl = MatrixField::from_rows(&op.t_measure(&g.curl)?)?;
    let mut table = Table::new([
        "p",
        "level",
        "cubes",
        "union_measure",
        "integral",
        "i",
        "i_prime",
        "i_prime_unscaled",
        "ii",
        "identity_gap",
        "bmo",
    ]);
    let mut runs = Vec::new();
    let mut violation = None;
    for p in cfg.exponents() {
        let level = match cfg.level {
            Some(l) => l,
            None => find_level(&t_curl, p, 0.5)?,
        };
        let cz = cz_decompose_field(&t_curl, level, p)?;
        let split = split_i_ii(&t_curl, level, p)?;
        if !cz.checks.all_hold() && violation.is_none() {
            violation = Some(format!("decomposition invariants fail at p = {p}: {:?}", cz.checks));
        }
        if split.identity_gap > 1e-10 && violation.is_none() {
            violation = Some(format!("level split identity off by {} at p = {p}", split.identity_gap));
        }
        table.push(vec![
            sci(p),
            sci(level),
            cz.cubes.len().to_string(),
            sci(cz.union_measure),
            sci(cz.integral),
            sci(split.i),
            sci(split.i_prime),
            sci(split.i_prime_unscaled),
            sci(split.ii),
            sci(split.identity_gap),
            sci(split.bmo),
        ]);
        runs.push(json!({"decomposition": cz.summary(), "split": split}));
    }

    let mut tail = Table::new(["x", "q", "lhs", "rhs", "margin"]);
    for i in 0..10 {
        for j in 0..10 {
            let x = 1.0 + 4.0 * i as f64 / 9.0;
            let q = j as f64 / 9.0;
            match tail_integral_check(x, q) {
                Ok(c) => tail.push(vec![sci(x), sci(q), sci(c.lhs), sci(c.rhs), sci(c.margin)]),
                Err(Error::Invariant(m)) => {
                    violation.get_or_insert(m);
                    tail.push(vec![sci(x), sci(q), "nan".into(), "nan".into(), "nan".into()]);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(Outcome {
        tables: vec![("cz-demo.csv".into(), table), ("cz-demo-tail.csv".into(), tail)],
        results: json!({
            "family": family(cfg).name(),
            "runs": runs,
            "tail_checks": 100,
        }),
        violation,
    })
}

fn bv_check(cfg: &ExperimentConfig) -> LabResult<Outcome> {
    let d = make_domain(cfg.n, cfg.working_res(), cfg.radius)?;
    let g = family(cfg).generate(&d)?;
    let fit = match cfg.fit {
        CubeFit::Weak => FitChoice::weak(cfg.n),
        CubeFit::L2 => FitChoice::l2(),
    };
    let reports = cfg
        .rho
        .iter()
        .map(|&rho| prop_check(&g.a, &g.curl, rho, fit))
        .collect::<Result<Vec<_>, _>>()?;
    let (rate, violation) = match convergence_rate(&reports) {
        Ok(r) => (r, None),
        Err(Error::Invariant(m)) => (None, Some(m)),
        Err(e) => return Err(e.into()),
    };
    Ok(Outcome {
        tables: vec![("bv-check.csv".into(), bv_table(&reports))],
        results: json!({
            "family": family(cfg).name(),
            "fit": fit,
            "rate": rate,
            "tv_ratios": reports.iter().map(|r| r.tv_ratio).collect::<Vec<_>>(),
            "ratios": reports.iter().map(|r| r.ratio).collect::<Vec<_>>(),
            "inherited_cubes": reports.iter().map(|r| r.inherited).collect::<Vec<_>>(),
            "so_valued": reports.iter().all(|r| r.so_valued),
        }),
        violation,
    })
}

/// Writes the tables of an outcome into `dir`.
pub fn write_tables(dir: &Path, outcome: &Outcome) -> LabResult<()> {
    for (name, table) in &outcome.tables {
        std::fs::write(dir.join(name), table.to_csv())?;
    }
    Ok(())
}
