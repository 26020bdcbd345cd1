//! Piecewise-constant rotation approximations on cube tessellations.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::critical_exponent;
use crate::error::{invalid, Error, Result};
use crate::grid::{total_variation, Region};
use crate::grid::norms::lp_from_magnitudes;
use crate::grid::{GridDomain, MatrixField, MeasureDensity, Point, Rotation, MAX_DIM};
use crate::rigidity::{fit_line, fit_rotation_on, NormKind, DEGENERATE_RHS};
use crate::sum::Accumulator;
use crate::table::{sci, Table};

/// Samples per axis when measuring a face inside the ball.
const FACE_SAMPLES: usize = 64;
/// Radius of the fitting ball in units of the cube side.
pub const FIT_BALL: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cube {
    pub index: [usize; MAX_DIM],
    pub center: Point,
}

/// Two cubes sharing a face normal to `axis`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub axis: usize,
    /// Face area inside the ball.
    pub area: f64,
}

/// Axis-aligned cubes of side `ρ` on the lattice anchored at the box corner,
/// restricted to those meeting the ball.
#[derive(Debug, Clone)]
pub struct Tessellation {
    domain: Arc<GridDomain>,
    rho: f64,
    cubes: Vec<Cube>,
    faces: Vec<Face>,
    node_cube: Vec<Option<usize>>,
}

impl Tessellation {
    pub fn domain_arc(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Cube holding each node (`None` off the mask).
    pub fn cube_of(&self, node: usize) -> Option<usize> {
        self.node_cube[node]
    }

    pub fn cube_volume(&self) -> f64 {
        self.rho.powi(self.domain.n() as i32)
    }

    /// Masked nodes in `B(center, 3ρ/2)`.
    pub fn fitting_nodes(&self, cube: usize) -> Vec<usize> {
        let c = &self.cubes[cube].center;
        let r2 = (FIT_BALL * self.rho).powi(2);
        self.domain
            .masked_nodes()
            .iter()
            .copied()
            .filter(|&node| {
                let p = self.domain.point(node);
                (0..self.domain.n()).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>() <= r2
            })
            .collect()
    }
}

fn lattice_count(radius: f64, rho: f64) -> usize {
    ((2.0 * radius / rho) - 1e-9).ceil().max(1.0) as usize
}

fn lattice_index(x: f64, radius: f64, rho: f64, count: usize) -> usize {
    let k = ((x + radius) / rho + 1e-9).floor();
    (k.max(0.0) as usize).min(count - 1)
}

pub fn tessellate(domain: &Arc<GridDomain>, rho: f64) -> Result<Tessellation> {
    let n = domain.n();
    let h = domain.h();
    if !(rho >= 2.0 * h * (1.0 - 1e-12)) || !rho.is_finite() {
        return Err(invalid("rho", format!("cube side {rho} is below 2h = {}", 2.0 * h)));
    }
    let r = domain.radius();
    let count = lattice_count(r, rho);
    let total = count.pow(n as u32);
    let unflatten = |mut flat: usize| {
        let mut idx = [0usize; MAX_DIM];
        for k in (0..n).rev() {
            idx[k] = flat % count;
            flat /= count;
        }
        idx
    };
    let flatten = |idx: &[usize; MAX_DIM]| (0..n).fold(0, |acc, k| acc * count + idx[k]);

    let mut slot = vec![usize::MAX; total];
    let mut cubes = Vec::new();
    for flat in 0..total {
        let idx = unflatten(flat);
        let mut center = [0.0; MAX_DIM];
        let mut dist2 = 0.0;
        for k in 0..n {
            let lo = -r + idx[k] as f64 * rho;
            let hi = lo + rho;
            center[k] = 0.5 * (lo + hi);
            let nearest = 0f64.clamp(lo, hi);
            dist2 += nearest * nearest;
        }
        if dist2 <= r * r * (1.0 + 1e-12) {
            slot[flat] = cubes.len();
            cubes.push(Cube { index: idx, center });
        }
    }

    let mut node_cube = vec![None; domain.len()];
    for &node in domain.masked_nodes() {
        let p = domain.point(node);
        let mut idx = [0usize; MAX_DIM];
        for k in 0..n {
            idx[k] = lattice_index(p[k], r, rho, count);
        }
        let c = slot[flatten(&idx)];
        if c == usize::MAX {
            return Err(Error::Invariant(format!("masked node {node} lies in no cube")));
        }
        node_cube[node] = Some(c);
    }

    let mut faces = Vec::new();
    for (a, cube) in cubes.iter().enumerate() {
        for axis in 0..n {
            if cube.index[axis] + 1 >= count {
                continue;
            }
            let mut idx = cube.index;
            idx[axis] += 1;
            let b = slot[flatten(&idx)];
            if b == usize::MAX {
                continue;
            }
            let area = face_area(n, r, rho, &cube.index, axis);
            if area > 0.0 {
                faces.push(Face { a, b, axis, area });
            }
        }
    }
    Ok(Tessellation {
        domain: domain.clone(),
        rho,
        cubes,
        faces,
        node_cube,
    })
}

/// Area of the face `x_axis = upper edge of cube idx` inside the ball:
/// midpoint sampling over all but the last face axis, exact chord along it.
fn face_area(n: usize, r: f64, rho: f64, idx: &[usize; MAX_DIM], axis: usize) -> f64 {
    let plane = -r + (idx[axis] + 1) as f64 * rho;
    let others: Vec<usize> = (0..n).filter(|&k| k != axis).collect();
    let Some((&last, sampled)) = others.split_last() else {
        return if plane.abs() <= r { 1.0 } else { 0.0 };
    };
    let cell = rho / FACE_SAMPLES as f64;
    let lo = -r + idx[last] as f64 * rho;
    let hi = lo + rho;
    let mut acc = Accumulator::new();
    for s in 0..FACE_SAMPLES.pow(sampled.len() as u32) {
        let mut rest = s;
        let mut d2 = plane * plane;
        for &k in sampled {
            let j = rest % FACE_SAMPLES;
            rest /= FACE_SAMPLES;
            let x = -r + idx[k] as f64 * rho + (j as f64 + 0.5) * cell;
            d2 += x * x;
        }
        if d2 < r * r {
            let half = (r * r - d2).sqrt();
            acc.add((hi.min(half) - lo.max(-half)).max(0.0));
        }
    }
    acc.value() * cell.powi(sampled.len() as i32)
}

/// Fitting objective for the per-cube rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitChoice {
    pub kind: NormKind,
    pub p: f64,
}

impl FitChoice {
    /// Weak-`L^{1*}` fit started from the `L²` rotation.
    pub fn weak(n: usize) -> Self {
        Self {
            kind: NormKind::WeakLp,
            p: critical_exponent(n),
        }
    }

    /// Polar projection of the local mean.
    pub fn l2() -> Self {
        Self { kind: NormKind::Lp, p: 2.0 }
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseRotationField {
    pub tessellation: Tessellation,
    pub rotations: Vec<Rotation>,
    /// Cubes whose fitting ball held no masked node.
    pub inherited: Vec<usize>,
    pub fit: FitChoice,
}

impl PiecewiseRotationField {
    /// The field as node values.
    pub fn to_matrix_field(&self) -> Result<MatrixField> {
        let t = &self.tessellation;
        let d = t.domain_arc();
        let n = d.n();
        let mut values = vec![0.0; d.len() * n * n];
        for node in 0..d.len() {
            if let Some(c) = t.cube_of(node) {
                let r = self.rotations[c].matrix();
                for i in 0..n {
                    for j in 0..n {
                        values[node * n * n + i * n + j] = r[(i, j)];
                    }
                }
            }
        }
        MatrixField::from_values(d, values)
    }
}

/// Fits one rotation per cube on its enlarged ball.
pub fn build_a_rho(a: &MatrixField, rho: f64, fit: FitChoice) -> Result<PiecewiseRotationField> {
    let tessellation = tessellate(a.domain_arc(), rho)?;
    let fitted: Vec<Option<Rotation>> = (0..tessellation.cubes.len())
        .into_par_iter()
        .map(|c| {
            let nodes = tessellation.fitting_nodes(c);
            if nodes.is_empty() {
                return Ok(None);
            }
            fit_rotation_on(a, &nodes, fit.kind, fit.p).map(|f| Some(f.rotation))
        })
        .collect::<Result<_>>()?;
    if fitted.iter().all(Option::is_none) {
        return Err(Error::Degenerate("no cube has a nonempty fitting ball".into()));
    }
    let mut inherited = Vec::new();
    let rotations = (0..fitted.len())
        .map(|c| match &fitted[c] {
            Some(r) => r.clone(),
            None => {
                inherited.push(c);
                let here = &tessellation.cubes[c].center;
                let nearest = (0..fitted.len())
                    .filter(|&o| fitted[o].is_some())
                    .min_by(|&x, &y| {
                        let dx = dist2(here, &tessellation.cubes[x].center);
                        let dy = dist2(here, &tessellation.cubes[y].center);
                        dx.total_cmp(&dy).then(x.cmp(&y))
                    })
                    .expect("some cube was fitted");
                fitted[nearest].clone().expect("filtered")
            }
        })
        .collect();
    Ok(PiecewiseRotationField {
        tessellation,
        rotations,
        inherited,
        fit,
    })
}

fn dist2(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `Σ_faces area · |R_a − R_b|`.
pub fn tv_piecewise(field: &PiecewiseRotationField) -> f64 {
    let mut acc = Accumulator::new();
    for face in field.tessellation.faces() {
        let jump = (field.rotations[face.a].matrix() - field.rotations[face.b].matrix()).norm();
        acc.add(face.area * jump);
    }
    acc.value()
}

/// `‖A − A_ρ‖_{L¹}`.
pub fn l1_gap(a: &MatrixField, field: &PiecewiseRotationField) -> Result<f64> {
    let approx = field.to_matrix_field()?;
    let diff = a.combine(1.0, &approx, -1.0);
    let d = a.domain_arc();
    let mags: Vec<f64> = d
        .masked_nodes()
        .iter()
        .map(|&node| diff.entries(node).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    lp_from_magnitudes(&mags, d.cell_volume(), 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BvReport {
    pub rho: f64,
    pub l1_gap: f64,
    pub tv: f64,
    pub lhs: f64,
    /// `ρ^{(n−2)/2} ‖dist(A, SO(n))‖_{L²}`.
    pub dist_term: f64,
    pub curl_term: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    /// `tv / curl_term`.
    pub tv_ratio: Option<f64>,
    /// The distance term vanished, so the report checks the jump bound alone.
    pub so_valued: bool,
    pub cubes: usize,
    pub inherited: usize,
    pub fit: FitChoice,
}

pub const BV_CSV_HEADER: [&str; 6] = ["rho", "l1_gap", "tv", "dist_term", "curl_term", "ratio"];

impl BvReport {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            sci(self.rho),
            sci(self.l1_gap),
            sci(self.tv),
            sci(self.dist_term),
            sci(self.curl_term),
            self.ratio.map_or_else(|| "degenerate".to_string(), sci),
        ]
    }
}

pub fn bv_table(reports: &[BvReport]) -> Table {
    let mut t = Table::new(BV_CSV_HEADER);
    for r in reports {
        t.push(r.csv_row());
    }
    t
}

pub fn prop_check(a: &MatrixField, curl: &MeasureDensity, rho: f64, fit: FitChoice) -> Result<BvReport> {
    let field = build_a_rho(a, rho, fit)?;
    report_for(a, curl, &field)
}

fn report_for(a: &MatrixField, curl: &MeasureDensity, field: &PiecewiseRotationField) -> Result<BvReport> {
    let d = a.domain_arc();
    let rho = field.tessellation.rho();
    let n = d.n();
    let l1 = l1_gap(a, field)?;
    let tv = tv_piecewise(field);
    let dist = lp_from_magnitudes(
        &d.masked_nodes()
            .iter()
            .map(|&node| crate::grid::dist_so(&a.at(node)))
            .collect::<Vec<_>>(),
        d.cell_volume(),
        2.0,
    )?;
    let dist_term = rho.powf((n as f64 - 2.0) / 2.0) * dist;
    let curl_term = total_variation(curl, Region::Mask);
    let lhs = l1 / rho + tv;
    let rhs = dist_term + curl_term;
    let ratio = (rhs >= DEGENERATE_RHS).then(|| lhs / rhs);
    let tv_ratio = (curl_term >= DEGENERATE_RHS).then(|| tv / curl_term);
    Ok(BvReport {
        rho,
        l1_gap: l1,
        tv,
        lhs,
        dist_term,
        curl_term,
        rhs,
        ratio,
        tv_ratio,
        so_valued: dist_term < DEGENERATE_RHS,
        cubes: field.tessellation.cubes().len(),
        inherited: field.inherited.len(),
        fit: field.fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceResult {
    pub reports: Vec<BvReport>,
    /// Exponent `s` in `‖A − A_ρ‖ ≈ c ρ^s`; absent when a gap vanishes.
    pub rate: Option<f64>,
}

/// `‖A − A_ρ‖_{L¹}` along a decreasing list of cube sides.
///
/// Fails with an invariant error when a gap exceeds its predecessor by more
/// than 20%.
pub fn l1_convergence(a: &MatrixField, curl: &MeasureDensity, rhos: &[f64], fit: FitChoice) -> Result<ConvergenceResult> {
    if rhos.len() < 3 {
        return Err(invalid("rho_list", "at least 3 cube sides are required"));
    }
    if rhos.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("rho_list", "cube sides must be strictly decreasing"));
    }
    let reports = rhos
        .iter()
        .map(|&rho| prop_check(a, curl, rho, fit))
        .collect::<Result<Vec<_>>>()?;
    let rate = convergence_rate(&reports)?;
    Ok(ConvergenceResult { reports, rate })
}

/// Checks the monotone-up-to-20% decrease of the L¹ gaps and fits their
/// rate against `ρ`.
pub fn convergence_rate(reports: &[BvReport]) -> Result<Option<f64>> {
    for w in reports.windows(2) {
        if w[1].l1_gap > 1.2 * w[0].l1_gap + 1e-14 {
            return Err(Error::Invariant(format!(
                "L1 gap grew from {} at rho = {} to {} at rho = {}",
                w[0].l1_gap, w[0].rho, w[1].l1_gap, w[1].rho
            )));
        }
    }
    if reports.len() < 2 || reports.iter().any(|r| r.l1_gap <= 0.0) {
        return Ok(None);
    }
    let pts: Vec<(f64, f64)> = reports.iter().map(|r| (r.rho.ln(), r.l1_gap.ln())).collect();
    Ok(Some(fit_line(&pts).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gen_rotation_jump, plane_generator};
    use crate::grid::{curl_of_matrix, expm, make_domain};
    use nalgebra::DMatrix;

    #[test]
    fn single_cube_and_quadrants() {
        let d = make_domain(2, 17, 1.0).unwrap();
        let t = tessellate(&d, 2.0).unwrap();
        assert_eq!(t.cubes().len(), 1);
        assert!(t.faces().is_empty());
        let t = tessellate(&d, 1.0).unwrap();
        assert_eq!(t.cubes().len(), 4);
        assert_eq!(t.faces().len(), 4);
        // Each quadrant face is a unit segment inside the disk.
        for f in t.faces() {
            assert!((f.area - 1.0).abs() < 1e-12);
        }
        assert!(tessellate(&d, 0.1).is_err());
    }

    #[test]
    fn cubes_cover_the_ball() {
        let d = make_domain(3, 17, 1.0).unwrap();
        for rho in [0.5, 0.3, 0.25] {
            let t = tessellate(&d, rho).unwrap();
            assert!(t.cubes().len() as f64 * t.cube_volume() >= d.masked_volume());
            assert!(d.masked_nodes().iter().all(|&i| t.cube_of(i).is_some()));
            assert!((0..t.cubes().len()).all(|c| !t.fitting_nodes(c).is_empty() || rho < 0.3));
        }
    }

    #[test]
    fn face_area_matches_the_disk_chord() {
        // Octant cubes: twelve quarter disks of radius 1.
        let d = make_domain(3, 17, 1.0).unwrap();
        let t = tessellate(&d, 1.0).unwrap();
        let total: f64 = t.faces().iter().map(|f| f.area).sum();
        // Three coordinate disks of area π inside the unit ball.
        assert!((total - 3.0 * std::f64::consts::PI).abs() < 5e-3, "{total}");
    }

    #[test]
    fn constant_rotation_is_reproduced() {
        let d = make_domain(3, 17, 1.0).unwrap();
        let r0 = Rotation::exp_skew(&(0.4 * plane_generator(3, 0, 2))).unwrap();
        let a = MatrixField::constant(&d, r0.matrix()).unwrap();
        let field = build_a_rho(&a, 0.5, FitChoice::weak(3)).unwrap();
        for r in &field.rotations {
            assert!((r.matrix() - r0.matrix()).norm() < 1e-10);
        }
        assert!(tv_piecewise(&field) < 1e-9);
        let curl = curl_of_matrix(&a).unwrap();
        let rep = prop_check(&a, &curl, 0.5, FitChoice::weak(3)).unwrap();
        assert!(rep.lhs < 1e-8);
        assert!(rep.ratio.is_none());
    }

    #[test]
    fn sharp_interface_is_recovered_away_from_it() {
        let d = make_domain(3, 17, 1.0).unwrap();
        let angle = 0.6;
        let base = Rotation::identity(3);
        let g = gen_rotation_jump(&d, &base, [0, 1], angle, &[1.0, 0.0, 0.0], 2.0 * d.h(), None).unwrap();
        let r2 = expm(&(angle * plane_generator(3, 0, 1)));
        let field = build_a_rho(&g.a, 0.25, FitChoice::weak(3)).unwrap();
        for (c, cube) in field.tessellation.cubes().iter().enumerate() {
            let x = cube.center[0];
            if x.abs() < FIT_BALL * 0.25 + d.h() + 0.01 || field.tessellation.fitting_nodes(c).is_empty() {
                continue;
            }
            let want: DMatrix<f64> = if x > 0.0 { r2.clone() } else { DMatrix::identity(3, 3) };
            assert!((field.rotations[c].matrix() - want).norm() < 1e-6, "cube at {x}");
        }
    }

    #[test]
    fn frame_invariance_on_the_l2_path() {
        let d = make_domain(3, 17, 1.0).unwrap();
        let a = MatrixField::from_fn(&d, |p, out| {
            let m = expm(&((0.5 * p[0] + 0.3 * p[2]) * plane_generator(3, 0, 1)));
            for i in 0..3 {
                for j in 0..3 {
                    out[i * 3 + j] = m[(i, j)] * (1.0 + 0.1 * p[1]);
                }
            }
        })
        .unwrap();
        let q = Rotation::exp_skew(&(0.7 * plane_generator(3, 1, 2))).unwrap();
        let qa = a.left_mul(q.matrix());
        let f1 = build_a_rho(&a, 0.5, FitChoice::l2()).unwrap();
        let f2 = build_a_rho(&qa, 0.5, FitChoice::l2()).unwrap();
        for (r1, r2) in f1.rotations.iter().zip(&f2.rotations) {
            assert!((q.matrix() * r1.matrix() - r2.matrix()).norm() < 1e-10);
        }
        assert!((tv_piecewise(&f1) - tv_piecewise(&f2)).abs() < 1e-10);
    }

    #[test]
    fn smooth_rotation_field_converges_at_first_order() {
        let d = make_domain(3, 33, 1.0).unwrap();
        let a = MatrixField::from_fn(&d, |p, out| {
            let m = expm(&((0.8 * p[0] - 0.4 * p[1] * p[2]) * plane_generator(3, 0, 1)));
            out.copy_from_slice(m.transpose().as_slice());
        })
        .unwrap();
        let curl = curl_of_matrix(&a).unwrap();
        let res = l1_convergence(&a, &curl, &[0.5, 0.25, 0.125], FitChoice::l2()).unwrap();
        assert!(res.rate.unwrap() >= 0.8, "rate {:?}", res.rate);
        assert!(res.reports.iter().all(|r| r.so_valued));
    }

    #[test]
    fn convergence_needs_three_decreasing_sides() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let a = MatrixField::constant(&d, &DMatrix::identity(3, 3)).unwrap();
        let curl = curl_of_matrix(&a).unwrap();
        assert!(l1_convergence(&a, &curl, &[1.0, 0.5], FitChoice::l2()).is_err());
        assert!(l1_convergence(&a, &curl, &[1.0, 0.5, 0.5], FitChoice::l2()).is_err());
        let res = l1_convergence(&a, &curl, &[2.0, 1.0, 0.5], FitChoice::l2()).unwrap();
        assert!(res.reports.iter().all(|r| r.l1_gap < 1e-12));
        assert!(res.rate.is_none());
    }
}
