//! Rotation fitting and the empirical rigidity checks.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::critical_exponent;
use crate::error::{invalid, Error, Result};
use crate::fields::{rescale_family, FamilySpec, SUPPORT_RADIUS};
use crate::grid::norms::{lp_from_magnitudes, weak_lp_from_magnitudes};
use crate::grid::{dist_so, project_to_so, total_variation, GridDomain, MatrixField, MeasureDensity, Region, Rotation};
use crate::homotopy::HomotopyOperator;
use crate::sum::Accumulator;
use crate::table::{sci, Table};

/// Right-hand sides below this are treated as zero.
pub const DEGENERATE_RHS: f64 = 1e-12;

/// Default bound on `‖A‖_∞`.
pub const DEFAULT_M: f64 = 10.0;

const FIT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "Lp")]
    Lp,
    #[serde(rename = "weak-Lp")]
    WeakLp,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::Lp => "Lp",
            NormKind::WeakLp => "weak-Lp",
        }
    }
}

/// Which rotation a report used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitPath {
    /// Minimize `‖A − R‖` directly.
    Direct,
    /// Minimize `‖dg − R‖` for the recovered potential `g`.
    Potential,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationFit {
    pub rotation: Rotation,
    pub objective: f64,
    /// The mean matrix had a vanishing singular value; the fit started from
    /// the identity instead of the polar projection.
    pub degenerate_mean: bool,
    pub evaluations: usize,
}

/// `|A(x) − R|` at the given nodes.
fn deviations(a: &MatrixField, nodes: &[usize], r: &DMatrix<f64>) -> Vec<f64> {
    let n = a.n();
    nodes
        .iter()
        .map(|&node| {
            let e = a.entries(node);
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += (e[i * n + j] - r[(i, j)]).powi(2);
                }
            }
            s.sqrt()
        })
        .collect()
}

fn objective(a: &MatrixField, nodes: &[usize], r: &DMatrix<f64>, kind: NormKind, p: f64) -> Result<f64> {
    let dev = deviations(a, nodes, r);
    let cv = a.domain_arc().cell_volume();
    match kind {
        NormKind::Lp => lp_from_magnitudes(&dev, cv, p),
        NormKind::WeakLp => weak_lp_from_magnitudes(&dev, cv, p),
    }
}

/// Fits a rotation on the whole mask.
pub fn fit_rotation(a: &MatrixField, kind: NormKind, p: f64) -> Result<RotationFit> {
    fit_rotation_on(a, a.domain_arc().masked_nodes(), kind, p)
}

/// Fits a rotation on a set of nodes.
///
/// The L² fit is the polar projection of the mean; every other objective
/// is minimized by pattern search over plane rotations, started at the L²
/// answer and stopped once the step falls below `1e−8`.
pub fn fit_rotation_on(a: &MatrixField, nodes: &[usize], kind: NormKind, p: f64) -> Result<RotationFit> {
    if nodes.is_empty() {
        return Err(invalid("nodes", "cannot fit a rotation on an empty set"));
    }
    let mean = a.mean_over(nodes);
    let (start, degenerate_mean) = match project_to_so(&mean) {
        Some(r) => (r, false),
        None => (Rotation::identity(a.n()), true),
    };
    if kind == NormKind::Lp && p == 2.0 && !degenerate_mean {
        let objective = objective(a, nodes, start.matrix(), kind, p)?;
        return Ok(RotationFit {
            rotation: start,
            objective,
            degenerate_mean,
            evaluations: 1,
        });
    }
    let mut fit = descend(a, nodes, kind, p, start)?;
    fit.degenerate_mean = degenerate_mean;
    Ok(fit)
}

/// Pattern search `R ← R·G(a, b, ±step)` over coordinate planes.
pub fn descend(a: &MatrixField, nodes: &[usize], kind: NormKind, p: f64, start: Rotation) -> Result<RotationFit> {
    let n = a.n();
    let mut r = start.into_matrix();
    let mut best = objective(a, nodes, &r, kind, p)?;
    let mut evaluations = 1;
    let mut step = 0.1;
    while step >= FIT_TOL {
        let mut improved = false;
        for pa in 0..n {
            for pb in pa + 1..n {
                for sign in [1.0, -1.0] {
                    let cand = &r * Rotation::plane(n, pa, pb, sign * step).matrix();
                    let val = objective(a, nodes, &cand, kind, p)?;
                    evaluations += 1;
                    if val < best {
                        best = val;
                        r = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
        if evaluations > 200_000 {
            return Err(Error::Numerical("rotation search did not converge".into()));
        }
    }
    let rotation = project_to_so(&r).ok_or_else(|| Error::Numerical("fit left SO(n)".into()))?;
    Ok(RotationFit {
        rotation,
        objective: best,
        degenerate_mean: false,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhsTerms {
    pub dist_term: f64,
    pub curl_term: f64,
    /// `|log |Curl A|(B)| + 1`, present on the critical-exponent path.
    pub log_factor: Option<f64>,
}

/// Both sides of one rigidity inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityReport {
    pub rotation: Rotation,
    pub fit_path: FitPath,
    pub fit_objective: NormKind,
    pub p: f64,
    pub norm_kind: NormKind,
    pub lhs: f64,
    pub rhs_terms: RhsTerms,
    pub rhs: f64,
    /// `lhs / rhs`; absent when `rhs` vanishes.
    pub ratio: Option<f64>,
    pub degenerate: bool,
    /// The mean matrix was singular and the fit fell back to the identity.
    pub degenerate_mean: bool,
    /// The left side evaluated with the L² rotation, for comparison.
    pub lhs_with_l2_fit: f64,
}

impl RigidityReport {
    pub const CSV_HEADER: [&'static str; 7] =
        ["p", "norm_kind", "lhs", "dist_term", "curl_term", "log_factor", "ratio"];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            sci(self.p),
            self.norm_kind.as_str().into(),
            sci(self.lhs),
            sci(self.rhs_terms.dist_term),
            sci(self.rhs_terms.curl_term),
            self.rhs_terms.log_factor.map_or_else(|| "none".into(), sci),
            self.ratio.map_or_else(|| "degenerate".into(), sci),
        ]
    }
}

pub fn reports_table(reports: &[RigidityReport]) -> Table {
    let mut t = Table::new(RigidityReport::CSV_HEADER);
    for r in reports {
        t.push(r.csv_row());
    }
    t
}

fn ratio_of(lhs: f64, rhs: f64) -> Option<f64> {
    (rhs >= DEGENERATE_RHS).then(|| lhs / rhs)
}

/// Options shared by the two checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub fit_path: FitPath,
    /// Apply the logarithmic factor on the critical-exponent path.
    pub log_factor: bool,
    pub operator: HomotopyOperator,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            fit_path: FitPath::Direct,
            log_factor: true,
            operator: HomotopyOperator::default(),
        }
    }
}

fn fit_for(a: &MatrixField, kind: NormKind, p: f64, opts: &CheckOptions) -> Result<RotationFit> {
    match opts.fit_path {
        FitPath::Direct => fit_rotation(a, kind, p),
        FitPath::Potential => {
            let pot = opts.operator.recover_potential(a)?;
            fit_rotation(&pot.gradient, kind, p)
        }
    }
}

/// Largest radius allowed for the support of the curl: the generators'
/// support radius plus one spacing of stencil reach.
pub fn support_limit(d: &GridDomain) -> f64 {
    SUPPORT_RADIUS * d.radius() + d.h() * (1.0 + 1e-9)
}

/// Weak-L^{1*} rigidity: `‖A − R‖_{1*,∞}` against
/// `‖dist(A, SO(n))‖_{1*,∞} + |Curl A|(B)`.
pub fn weak_rigidity_check(a: &MatrixField, curl: &MeasureDensity) -> Result<RigidityReport> {
    weak_rigidity_check_with(a, curl, &CheckOptions::default())
}

pub fn weak_rigidity_check_with(a: &MatrixField, curl: &MeasureDensity, opts: &CheckOptions) -> Result<RigidityReport> {
    let d = Arc::clone(a.domain_arc());
    let support = curl.support_radius(DEGENERATE_RHS);
    if support > support_limit(&d) {
        return Err(Error::Support(format!(
            "curl reaches |x| = {support:.4}, beyond {:.4}",
            support_limit(&d)
        )));
    }
    let p = critical_exponent(d.n());
    let fit = fit_for(a, NormKind::WeakLp, p, opts)?;
    let l2 = fit_rotation(a, NormKind::Lp, 2.0)?;
    let masked = d.masked_nodes();
    let cv = d.cell_volume();
    let lhs = weak_lp_from_magnitudes(&deviations(a, masked, fit.rotation.matrix()), cv, p)?;
    let lhs_l2 = weak_lp_from_magnitudes(&deviations(a, masked, l2.rotation.matrix()), cv, p)?;
    let dist: Vec<f64> = masked.iter().map(|&i| dist_so(&a.at(i))).collect();
    let dist_term = weak_lp_from_magnitudes(&dist, cv, p)?;
    let curl_term = total_variation(curl, Region::Mask);
    let rhs = dist_term + curl_term;
    let ratio = ratio_of(lhs, rhs);
    Ok(RigidityReport {
        rotation: fit.rotation,
        fit_path: opts.fit_path,
        fit_objective: NormKind::WeakLp,
        p,
        norm_kind: NormKind::WeakLp,
        lhs,
        rhs_terms: RhsTerms {
            dist_term,
            curl_term,
            log_factor: None,
        },
        rhs,
        ratio,
        degenerate: ratio.is_none(),
        degenerate_mean: fit.degenerate_mean,
        lhs_with_l2_fit: lhs_l2,
    })
}

/// L^p rigidity for `p ∈ [1*, 2]`: `∫|A − R|^p` against
/// `∫dist^p(A, SO(n)) + |Curl A|(B)^{1*}`, the curl term carrying
/// `|log |Curl A|(B)| + 1` at `p = 1*`.
pub fn lp_rigidity_check(a: &MatrixField, curl: &MeasureDensity, p: f64, m: f64) -> Result<RigidityReport> {
    lp_rigidity_check_with(a, curl, p, m, &CheckOptions::default())
}

/// Whether `p` is the critical exponent up to rounding.
pub fn is_critical(n: usize, p: f64) -> bool {
    (p - critical_exponent(n)).abs() <= 1e-12
}

pub fn lp_rigidity_check_with(
    a: &MatrixField,
    curl: &MeasureDensity,
    p: f64,
    m: f64,
    opts: &CheckOptions,
) -> Result<RigidityReport> {
    let d = Arc::clone(a.domain_arc());
    let n = d.n();
    if n < 3 {
        return Err(invalid("n", "the L^p estimate needs n ≥ 3"));
    }
    let critical = critical_exponent(n);
    if !(p >= critical - 1e-12 && p <= 2.0) {
        return Err(invalid("p", format!("{p} outside [{critical}, 2]")));
    }
    let sup = a.sup_norm();
    if sup > m {
        return Err(invalid("M", format!("‖A‖_∞ = {sup} exceeds {m}")));
    }
    let fit = fit_for(a, NormKind::Lp, p, opts)?;
    let l2 = fit_rotation(a, NormKind::Lp, 2.0)?;
    let masked = d.masked_nodes();
    let cv = d.cell_volume();
    let integral = |mags: &[f64]| {
        let mut acc = Accumulator::new();
        for v in mags {
            acc.add(v.powf(p) * cv);
        }
        acc.value()
    };
    let lhs = integral(&deviations(a, masked, fit.rotation.matrix()));
    let lhs_l2 = integral(&deviations(a, masked, l2.rotation.matrix()));
    let dist: Vec<f64> = masked.iter().map(|&i| dist_so(&a.at(i))).collect();
    let dist_term = integral(&dist);
    let tv = total_variation(curl, Region::Mask);
    let curl_term = tv.powf(critical);
    let log_factor = (is_critical(n, p) && opts.log_factor)
        .then(|| if tv > 0.0 { tv.ln().abs() + 1.0 } else { 1.0 });
    let rhs = dist_term + curl_term * log_factor.unwrap_or(1.0);
    let ratio = ratio_of(lhs, rhs);
    Ok(RigidityReport {
        rotation: fit.rotation,
        fit_path: opts.fit_path,
        fit_objective: NormKind::Lp,
        p,
        norm_kind: NormKind::Lp,
        lhs,
        rhs_terms: RhsTerms {
            dist_term,
            curl_term,
            log_factor,
        },
        rhs,
        ratio,
        degenerate: ratio.is_none(),
        degenerate_mean: fit.degenerate_mean,
        lhs_with_l2_fit: lhs_l2,
    })
}

/// Largest ratio over the non-degenerate reports.
pub fn estimate_constant(reports: &[RigidityReport]) -> Result<f64> {
    reports
        .iter()
        .filter_map(|r| r.ratio)
        .reduce(f64::max)
        .ok_or_else(|| Error::Degenerate("every report is degenerate".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSweepResult {
    pub parameters: Vec<f64>,
    pub reports: Vec<RigidityReport>,
    /// Least-squares slope of `log ratio` against `log parameter`.
    pub slope: f64,
    pub intercept: f64,
}

/// Fits the growth exponent of `ratio` over a parameter sweep.
///
/// Parameters must be strictly monotone, or all equal (slope 0).
pub fn scaling_sweep<F>(parameters: &[f64], mut report: F) -> Result<ScalingSweepResult>
where
    F: FnMut(f64) -> Result<RigidityReport>,
{
    if parameters.len() < 4 {
        return Err(invalid("parameters", "a sweep needs at least 4 values"));
    }
    if parameters.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("parameters", "values must be positive"));
    }
    let constant = parameters.windows(2).all(|w| w[0] == w[1]);
    let increasing = parameters.windows(2).all(|w| w[0] < w[1]);
    let decreasing = parameters.windows(2).all(|w| w[0] > w[1]);
    if !(constant || increasing || decreasing) {
        return Err(invalid("parameters", "values must be strictly monotone"));
    }
    let reports = parameters
        .iter()
        .map(|&v| report(v))
        .collect::<Result<Vec<_>>>()?;
    let (slope, intercept) = if constant {
        (0.0, 0.0)
    } else {
        let pts: Vec<(f64, f64)> = parameters
            .iter()
            .zip(&reports)
            .filter_map(|(v, r)| r.ratio.filter(|x| *x > 0.0).map(|x| (v.ln(), x.ln())))
            .collect();
        if pts.len() < 2 {
            return Err(Error::Degenerate("fewer than two usable ratios in the sweep".into()));
        }
        fit_line(&pts)
    };
    Ok(ScalingSweepResult {
        parameters: parameters.to_vec(),
        reports,
        slope,
        intercept,
    })
}

/// Least-squares line `(slope, intercept)`.
pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// L^p sweep over `strength × factor` for a generated family.
pub fn family_sweep(
    domain: &Arc<GridDomain>,
    spec: &FamilySpec,
    factors: &[f64],
    p: f64,
    opts: &CheckOptions,
) -> Result<ScalingSweepResult> {
    let base = spec.strength();
    let params: Vec<f64> = factors.iter().map(|f| f * base).collect();
    let mut i = 0;
    scaling_sweep(&params, |_| {
        let g = rescale_family(spec, factors[i]).generate(domain)?;
        i += 1;
        lp_rigidity_check_with(&g.a, &g.curl, p, DEFAULT_M, opts)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::gen_perturbed_rotation;
    use crate::grid::make_domain;

    #[test]
    fn constant_rotation_is_recovered() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let r0 = Rotation::plane(3, 0, 1, 0.8).compose(&Rotation::plane(3, 1, 2, -0.3));
        let a = MatrixField::constant(&d, r0.matrix()).unwrap();
        for (kind, p) in [(NormKind::Lp, 2.0), (NormKind::WeakLp, 1.5), (NormKind::Lp, 1.5)] {
            let fit = fit_rotation(&a, kind, p).unwrap();
            assert!((fit.rotation.matrix() - r0.matrix()).amax() < 1e-10, "{kind:?}");
        }
    }

    #[test]
    fn reflection_field_is_at_distance_two() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let refl = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]));
        let a = MatrixField::constant(&d, &refl).unwrap();
        let fit = fit_rotation(&a, NormKind::Lp, 2.0).unwrap();
        assert!(((&refl - fit.rotation.matrix()).norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_agrees_with_descent() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let base = Rotation::plane(3, 0, 2, 1.1);
        let a = gen_perturbed_rotation(&d, &base, 0.4, 3, 4, 0.9).unwrap();
        let closed = fit_rotation(&a, NormKind::Lp, 2.0).unwrap();
        let searched = descend(&a, d.masked_nodes(), NormKind::Lp, 2.0, Rotation::identity(3)).unwrap();
        assert!((closed.rotation.matrix() - searched.rotation.matrix()).amax() < 1e-6);
    }

    #[test]
    fn zero_mean_falls_back_to_identity() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::constant(&d, &DMatrix::zeros(3, 3)).unwrap();
        let fit = fit_rotation(&a, NormKind::Lp, 2.0).unwrap();
        assert!(fit.degenerate_mean);
    }

    #[test]
    fn constant_rotation_reports_are_degenerate() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let a = MatrixField::constant(&d, Rotation::plane(3, 0, 1, 0.2).matrix()).unwrap();
        let curl = MeasureDensity::zero(&d, 3).unwrap();
        let w = weak_rigidity_check(&a, &curl).unwrap();
        assert!(w.degenerate && w.ratio.is_none() && w.lhs < 1e-12);
        let l = lp_rigidity_check(&a, &curl, 2.0, DEFAULT_M).unwrap();
        assert!(l.degenerate && l.rhs == 0.0);
        assert!(estimate_constant(&[w, l]).is_err());
    }

    #[test]
    fn preconditions_are_enforced() {
        let d2 = make_domain(2, 9, 1.0).unwrap();
        let a2 = MatrixField::constant(&d2, &DMatrix::identity(2, 2)).unwrap();
        let c2 = MeasureDensity::zero(&d2, 2).unwrap();
        assert!(lp_rigidity_check(&a2, &c2, 2.0, DEFAULT_M).is_err());
        let d = make_domain(3, 9, 1.0).unwrap();
        let a = MatrixField::constant(&d, &(DMatrix::identity(3, 3) * 7.0)).unwrap();
        let c = MeasureDensity::zero(&d, 3).unwrap();
        assert!(lp_rigidity_check(&a, &c, 1.2, DEFAULT_M).is_err());
        assert!(lp_rigidity_check(&a, &c, 2.0, 10.0).is_err());
    }

    #[test]
    fn log_factor_is_one_at_unit_mass() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::constant(&d, &DMatrix::identity(3, 3)).unwrap();
        let seg = crate::grid::Segment {
            start: [0.0, 0.0, -0.25, 0.0],
            end: [0.0, 0.0, 0.25, 0.0],
            weight: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        };
        let curl = MeasureDensity::zero(&d, 3).unwrap().with_segments(vec![seg]).unwrap();
        let r = lp_rigidity_check(&a, &curl, 1.5, DEFAULT_M).unwrap();
        assert!((r.rhs_terms.log_factor.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_takes_largest_ratio() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::constant(&d, &DMatrix::identity(3, 3)).unwrap();
        let curl = MeasureDensity::zero(&d, 3).unwrap();
        let mut base = lp_rigidity_check(&a, &curl, 2.0, DEFAULT_M).unwrap();
        let mut reports = Vec::new();
        for r in [Some(1.7), None, Some(0.4)] {
            base.ratio = r;
            reports.push(base.clone());
        }
        assert_eq!(estimate_constant(&reports).unwrap(), 1.7);
        assert_eq!(estimate_constant(&reports[..1]).unwrap(), 1.7);
    }

    #[test]
    fn sweep_validation_and_constant_family() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::constant(&d, &DMatrix::identity(3, 3)).unwrap();
        let curl = MeasureDensity::zero(&d, 3).unwrap();
        let mut rep = lp_rigidity_check(&a, &curl, 2.0, DEFAULT_M).unwrap();
        rep.ratio = Some(2.0);
        let res = scaling_sweep(&[0.1; 4], |_| Ok(rep.clone())).unwrap();
        assert_eq!(res.slope, 0.0);
        assert!(scaling_sweep(&[0.1, 0.2, 0.3], |_| Ok(rep.clone())).is_err());
        assert!(scaling_sweep(&[0.1, 0.3, 0.2, 0.4], |_| Ok(rep.clone())).is_err());
        let mut k = 0.0;
        let res = scaling_sweep(&[1.0, 2.0, 4.0, 8.0], |v| {
            k += 1.0;
            let mut r = rep.clone();
            r.ratio = Some(3.0 * v * v);
            Ok(r)
        })
        .unwrap();
        assert!((res.slope - 2.0).abs() < 1e-12 && k == 4.0);
    }

    #[test]
    fn csv_row_marks_degenerate_ratio() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::constant(&d, &DMatrix::identity(3, 3)).unwrap();
        let curl = MeasureDensity::zero(&d, 3).unwrap();
        let rep = lp_rigidity_check(&a, &curl, 2.0, DEFAULT_M).unwrap();
        let row = rep.csv_row();
        assert_eq!(row[1], "Lp");
        assert_eq!(row[6], "degenerate");
        assert_eq!(row[5], "none");
    }
}
