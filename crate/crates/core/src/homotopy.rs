//! The averaged linear homotopy operator on the ball.
//!
//! `k_y ω(x) = ∫₀¹ s^{r−1} ω(y + s(x−y)) ⌟ (x−y) ds` is averaged over `y ∈ B`
//! against a cut-off weight `φ` normalized to unit mass, which gives
//! `ω = T dω + d Tω`. Two evaluations are provided: the direct y-average
//! (slow, used as an oracle on coarse grids) and the kernel form obtained by
//! substituting `z = y + s(x−y)`, which is a weakly singular sum over source
//! nodes `z`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{
    exterior_derivative, norm, unit_ball_volume, unit_sphere_area, FormField, GridDomain,
    MatrixField, MeasureDensity, NodeField, Point,
};
use crate::multiindex::{binomial, contraction_table, ContractionTerm};
use crate::quadrature::GaussLegendre;
use crate::sum::Accumulator;

/// Radius of the interior ball on which residuals are measured.
pub const INTERIOR_RADIUS: f64 = 0.8;

/// Radial cut-off: 1 on `|y| ≤ 1`, a cubic smoothstep down to 0 at `|y| = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CutoffWeight;

impl CutoffWeight {
    pub const INNER: f64 = 1.0;
    pub const OUTER: f64 = 2.0;

    pub fn value(&self, r: f64) -> f64 {
        if r <= Self::INNER {
            1.0
        } else if r >= Self::OUTER {
            0.0
        } else {
            let t = r - Self::INNER;
            1.0 - t * t * (3.0 - 2.0 * t)
        }
    }

    /// `|dφ/dr|`.
    pub fn slope(&self, r: f64) -> f64 {
        if r <= Self::INNER || r >= Self::OUTER {
            0.0
        } else {
            let t = r - Self::INNER;
            6.0 * t * (1.0 - t)
        }
    }

    /// `∫_{|y| ≤ radius} φ(|y|) dy` in dimension `n`.
    pub fn mass(&self, n: usize, radius: f64) -> f64 {
        let inner = radius.min(Self::INNER);
        let mut m = unit_ball_volume(n) * inner.powi(n as i32);
        if radius > Self::INNER {
            let outer = radius.min(Self::OUTER);
            let gl = GaussLegendre::new(16);
            m += unit_sphere_area(n)
                * gl.integrate(Self::INNER, outer, |r| self.value(r) * r.powi(n as i32 - 1));
        }
        m
    }
}

/// Which kernel shape the kernel form evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// The change of variables carried out exactly: the ray parameter runs
    /// over the part of the ray inside the ball and the radial factor is
    /// `σ^{r−1}(|h| + σ)^{n−r}`.
    Exact,
    /// `σ^{r−1}(1 + σ)^{n−r}` integrated over `σ ∈ [0, 2]` with `φ` as the
    /// only cut-off, as the kernel is usually displayed.
    Literal,
}

/// Treatment of the source cell that contains the evaluation node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularCell {
    /// Integrate the kernel over a ball of volume `cell_volume` with the
    /// form frozen at the node.
    EquivalentBall,
    /// Drop the cell.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Gauss–Legendre nodes for every one-dimensional integral.
    pub quad_nodes: usize,
    pub singular: SingularCell,
    pub mode: KernelMode,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            quad_nodes: 16,
            singular: SingularCell::EquivalentBall,
            mode: KernelMode::Exact,
        }
    }
}

/// How `T` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Kernel,
}

/// A point mass of forms: location, volume (or length) weight and the
/// coefficient vectors of every form being transformed.
struct Source {
    point: Point,
    node: Option<usize>,
    volume: f64,
    values: Vec<f64>,
}

/// Radial kernel factor along rays, for one degree.
struct RayIntegral<'a> {
    n: usize,
    r: usize,
    radius: f64,
    weight: CutoffWeight,
    mode: KernelMode,
    gl: &'a GaussLegendre,
    binom: Vec<f64>,
}

impl<'a> RayIntegral<'a> {
    fn new(n: usize, r: usize, radius: f64, spec: &KernelSpec, gl: &'a GaussLegendre) -> Self {
        Self {
            n,
            r,
            radius,
            weight: CutoffWeight,
            mode: spec.mode,
            gl,
            binom: (0..=n - r).map(|j| binomial(n - r, j) as f64).collect(),
        }
    }

    /// `∫ σ^{r−1} (ρ+σ)^{n−r} φ(z + σu) dσ` over the admissible ray.
    fn eval(&self, z: &Point, u: &Point, rho: f64) -> f64 {
        match self.mode {
            KernelMode::Exact => self.exact(z, u, rho),
            KernelMode::Literal => self.literal(z, u),
        }
    }

    fn exact(&self, z: &Point, u: &Point, rho: f64) -> f64 {
        let Some((s1, s2)) = ray_in_ball(z, u, self.radius) else {
            return 0.0;
        };
        if self.radius <= CutoffWeight::INNER {
            return self.polynomial(rho, s1, s2);
        }
        let mut cuts = vec![s1];
        for level in [CutoffWeight::INNER, CutoffWeight::OUTER] {
            if let Some((a, b)) = ray_in_ball(z, u, level) {
                cuts.extend([a, b].into_iter().filter(|&s| s > s1 && s < s2));
            }
        }
        cuts.push(s2);
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2)
            .map(|w| {
                self.gl.integrate(w[0], w[1], |s| {
                    self.radial(rho, s) * self.weight.value(norm(&along(z, u, s)))
                })
            })
            .sum()
    }

    fn literal(&self, z: &Point, u: &Point) -> f64 {
        let s_max = CutoffWeight::OUTER;
        self.gl.integrate(0.0, s_max, |s| {
            s.powi(self.r as i32 - 1)
                * (1.0 + s).powi((self.n - self.r) as i32)
                * self.weight.value(norm(&along(z, u, s)))
        })
    }

    fn radial(&self, rho: f64, s: f64) -> f64 {
        s.powi(self.r as i32 - 1) * (rho + s).powi((self.n - self.r) as i32)
    }

    /// Closed form of `∫_{s1}^{s2} σ^{r−1}(ρ+σ)^{n−r} dσ`.
    fn polynomial(&self, rho: f64, s1: f64, s2: f64) -> f64 {
        let m = self.n - self.r;
        let mut acc = 0.0;
        for (j, c) in self.binom.iter().enumerate() {
            let e = (self.r + j) as i32;
            acc += c * rho.powi((m - j) as i32) * (s2.powi(e) - s1.powi(e)) / e as f64;
        }
        acc
    }
}

fn along(z: &Point, u: &Point, s: f64) -> Point {
    let mut p = [0.0; 4];
    for k in 0..4 {
        p[k] = z[k] + s * u[k];
    }
    p
}

/// Parameter interval `σ ≥ 0` with `|z + σu| ≤ radius`, for unit `u`.
fn ray_in_ball(z: &Point, u: &Point, radius: f64) -> Option<(f64, f64)> {
    let b: f64 = (0..4).map(|k| z[k] * u[k]).sum();
    let c = norm(z).powi(2) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let q = disc.sqrt();
    let (lo, hi) = ((-b - q).max(0.0), -b + q);
    (hi > lo).then_some((lo, hi))
}

/// Unit directions sampled uniformly from the midpoints of a `k^n` grid
/// inside the unit ball; symmetric under `v → −v`.
fn ball_directions(n: usize, k: usize) -> Vec<Point> {
    let mut out = Vec::new();
    let total = k.pow(n as u32);
    for idx in 0..total {
        let mut p = [0.0; 4];
        let mut rest = idx;
        for c in p.iter_mut().take(n) {
            *c = -1.0 + (2 * (rest % k) + 1) as f64 / k as f64;
            rest /= k;
        }
        let r = norm(&p);
        if r <= 1.0 {
            out.push(p.map(|c| c / r));
        }
    }
    out
}

/// The averaged homotopy operator with a fixed cut-off and kernel rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HomotopyOperator {
    pub weight: CutoffWeight,
    pub spec: KernelSpec,
}

impl HomotopyOperator {
    pub fn new(spec: KernelSpec) -> Result<Self> {
        if spec.quad_nodes < 4 {
            return Err(invalid("quad_nodes", "at least 4 quadrature nodes are required"));
        }
        Ok(Self {
            weight: CutoffWeight,
            spec,
        })
    }

    /// `k_y ω(x)` for masked `x`, `y`.
    pub fn k_point(&self, y: &Point, omega: &FormField, x: &Point) -> Result<Vec<f64>> {
        let d = omega.domain_arc();
        for (name, p) in [("y", y), ("x", x)] {
            if !d.in_ball(p) {
                return Err(Error::OutsideMask(format!("{name} = {:?}", &p[..d.n()])));
            }
        }
        if omega.degree() == 0 {
            return Err(invalid("degree", "k_y needs a form of degree ≥ 1"));
        }
        let gl = GaussLegendre::new(self.spec.quad_nodes);
        let table = contraction_table(d.n(), omega.degree());
        Ok(self.k_point_unchecked(&gl, &table, y, omega, x))
    }

    fn k_point_unchecked(
        &self,
        gl: &GaussLegendre,
        table: &[ContractionTerm],
        y: &Point,
        omega: &FormField,
        x: &Point,
    ) -> Vec<f64> {
        let d = omega.domain_arc();
        let r = omega.degree();
        let mut out = vec![0.0; binomial(d.n(), r - 1)];
        let mut v = [0.0; 4];
        for k in 0..d.n() {
            v[k] = x[k] - y[k];
        }
        for (s, w) in gl.on_interval(0.0, 1.0) {
            let p = along(y, &v, s);
            let vals = omega.interpolate(&p);
            let ws = w * s.powi(r as i32 - 1);
            for t in table {
                out[t.output] += ws * t.sign * v[t.axis] * vals[t.input];
            }
        }
        out
    }

    /// Normalization of the discrete y-average: `Σ_y φ(y)·cell_volume`.
    fn direct_mass(&self, d: &GridDomain) -> f64 {
        let mut acc = Accumulator::new();
        for &node in d.masked_nodes() {
            acc.add(self.weight.value(norm(&d.point(node))) * d.cell_volume());
        }
        acc.value()
    }

    /// `Tω` by averaging `k_y ω` over masked `y`; values on masked and halo
    /// nodes, zero elsewhere.
    pub fn t_direct(&self, omega: &FormField) -> Result<FormField> {
        let d = Arc::clone(omega.domain_arc());
        let r = omega.degree();
        if r == 0 {
            return Err(invalid("degree", "T needs a form of degree ≥ 1"));
        }
        let gl = GaussLegendre::new(self.spec.quad_nodes);
        let table = contraction_table(d.n(), r);
        let z = self.direct_mass(&d);
        let ys: Vec<(Point, f64)> = d
            .masked_nodes()
            .iter()
            .map(|&i| {
                let p = d.point(i);
                (p, self.weight.value(norm(&p)) * d.cell_volume() / z)
            })
            .collect();
        let eval = d.halo_nodes();
        let rows: Vec<Vec<f64>> = eval
            .par_iter()
            .map(|&node| {
                let x = d.point(node);
                let mut acc = vec![Accumulator::new(); binomial(d.n(), r - 1)];
                for (y, w) in &ys {
                    let k = self.k_point_unchecked(&gl, &table, y, omega, &x);
                    for (a, v) in acc.iter_mut().zip(k) {
                        a.add(w * v);
                    }
                }
                acc.iter().map(Accumulator::value).collect()
            })
            .collect();
        scatter(&d, r - 1, &eval, rows, 1).map(|mut v| v.remove(0))
    }

    /// `Tω` through the kernel form.
    pub fn t_kernel(&self, omega: &FormField) -> Result<FormField> {
        self.t_kernel_many(std::slice::from_ref(omega))
            .map(|mut v| v.remove(0))
    }

    /// `T` applied to several forms of one degree, sharing kernel evaluations.
    pub fn t_kernel_many(&self, forms: &[FormField]) -> Result<Vec<FormField>> {
        let first = forms.first().ok_or_else(|| invalid("forms", "empty"))?;
        let d = Arc::clone(first.domain_arc());
        let r = first.degree();
        if r == 0 {
            return Err(invalid("degree", "T needs a form of degree ≥ 1"));
        }
        if forms.iter().any(|f| f.degree() != r || f.domain() != &*d) {
            return Err(invalid("forms", "all forms must share degree and domain"));
        }
        let sources = grid_sources(&d, forms);
        self.apply_kernel(&d, r, forms.len(), &sources)
    }

    /// `T` of a measure, row by row: density cells plus segment quadrature.
    pub fn t_measure(&self, mu: &MeasureDensity) -> Result<Vec<FormField>> {
        let d = Arc::clone(mu.domain_arc());
        let mut sources = grid_sources(&d, mu.ac_part());
        let comps = binomial(d.n(), 2);
        for seg in mu.segments() {
            let pieces = ((seg.length() / d.h()).ceil() as usize).max(1);
            let gl = GaussLegendre::new(2);
            for piece in 0..pieces {
                let (a, b) = (piece as f64 / pieces as f64, (piece + 1) as f64 / pieces as f64);
                for (t, w) in gl.on_interval(a, b) {
                    let p = seg.at(t);
                    if !d.in_ball(&p) {
                        continue;
                    }
                    sources.push(Source {
                        point: p,
                        node: None,
                        volume: w * seg.length(),
                        values: seg.weight.clone(),
                    });
                }
            }
        }
        debug_assert!(sources.iter().all(|s| s.values.len() == mu.rows() * comps));
        self.apply_kernel(&d, 2, mu.rows(), &sources)
    }

    fn apply_kernel(
        &self,
        d: &Arc<GridDomain>,
        r: usize,
        nforms: usize,
        sources: &[Source],
    ) -> Result<Vec<FormField>> {
        let n = d.n();
        let gl = GaussLegendre::new(self.spec.quad_nodes);
        let ray = RayIntegral::new(n, r, d.radius(), &self.spec, &gl);
        let table = contraction_table(n, r);
        let cin = binomial(n, r);
        let cout = binomial(n, r - 1);
        let z = self.weight.mass(n, d.radius());
        let by_node = source_index(d, sources);
        let singular = SingularRule::new(d, self.spec.singular);
        let near = NearField::new(d, SUBCELLS);
        let eval = d.halo_nodes();
        let rows: Vec<Vec<f64>> = eval
            .par_iter()
            .map(|&node| {
                let x = d.point(node);
                let mut acc = vec![Accumulator::new(); nforms * cout];
                let mut kvec = [0.0; 4];
                for (idx, s) in sources.iter().enumerate() {
                    if by_node[node] == Some(idx) {
                        continue;
                    }
                    let mut h = [0.0; 4];
                    let mut u = [0.0; 4];
                    for k in 0..n {
                        h[k] = x[k] - s.point[k];
                    }
                    let rho = norm(&h);
                    if rho < 1e-12 * d.h() {
                        continue;
                    }
                    for k in 0..n {
                        u[k] = -h[k] / rho;
                    }
                    if s.node.is_some() && rho < NEAR_FIELD * d.h() {
                        kvec = near.cell_average(&ray, &x, &s.point, n, z);
                        for v in kvec.iter_mut() {
                            *v *= s.volume;
                        }
                    } else {
                        let g = ray.eval(&s.point, &u, rho) / (rho.powi(n as i32) * z);
                        for k in 0..n {
                            kvec[k] = h[k] * g * s.volume;
                        }
                    }
                    contract_into(&mut acc, &table, &kvec, &s.values, nforms, cin, cout);
                }
                if let (Some(idx), Some(rule)) = (by_node[node], singular.as_ref()) {
                    let s = &sources[idx];
                    let v = rule.cell_vector(&ray, &x, n, z);
                    contract_into(&mut acc, &table, &v, &s.values, nforms, cin, cout);
                }
                acc.iter().map(Accumulator::value).collect()
            })
            .collect();
        scatter(d, r - 1, &eval, rows, nforms)
    }

    /// `Σ_y |ω(y)| / |x−y|^{n−1} · cell_volume` at every masked node, with the
    /// own cell replaced by its equivalent-ball integral.
    pub fn riesz_envelope(&self, omega: &impl NodeField) -> Vec<f64> {
        let d = omega.domain();
        let n = d.n();
        let a = (d.cell_volume() / unit_ball_volume(n)).powf(1.0 / n as f64);
        let own = unit_sphere_area(n) * a;
        let src: Vec<(Point, f64, usize)> = d
            .masked_nodes()
            .iter()
            .map(|&i| (d.point(i), omega.magnitude(i), i))
            .filter(|s| s.1 != 0.0)
            .collect();
        let vals: Vec<f64> = d
            .masked_nodes()
            .par_iter()
            .map(|&node| {
                let x = d.point(node);
                let mut acc = Accumulator::new();
                for (y, m, i) in &src {
                    if *i == node {
                        acc.add(m * own);
                        continue;
                    }
                    let mut h = [0.0; 4];
                    for k in 0..n {
                        h[k] = x[k] - y[k];
                    }
                    acc.add(m * d.cell_volume() / norm(&h).powi(n as i32 - 1));
                }
                acc.value()
            })
            .collect();
        let mut out = vec![0.0; d.len()];
        for (&node, v) in d.masked_nodes().iter().zip(vals) {
            out[node] = v;
        }
        out
    }

    pub fn apply(&self, omega: &FormField, method: Method) -> Result<FormField> {
        match method {
            Method::Direct => self.t_direct(omega),
            Method::Kernel => self.t_kernel(omega),
        }
    }

    /// `‖ω − T dω − d Tω‖₁ / ‖ω‖₁` over masked nodes with `|x| ≤ 0.8`.
    pub fn homotopy_residual(&self, omega: &FormField, method: Method) -> Result<f64> {
        let d = omega.domain_arc();
        let r = omega.degree();
        if r == 0 || r >= d.n() {
            return Err(invalid("degree", format!("residual needs 1 ≤ r ≤ n−1, got {r}")));
        }
        let t_omega = self.apply(omega, method)?;
        let d_t = exterior_derivative(&t_omega)?;
        let t_d = self.apply(&exterior_derivative(omega)?, method)?;
        let gap = omega.combine(1.0, &t_d, -1.0).combine(1.0, &d_t, -1.0);
        let denom = interior_l1(omega);
        if denom == 0.0 {
            return Err(Error::Degenerate("‖ω‖₁ vanishes on the interior ball".into()));
        }
        Ok(interior_l1(&gap) / denom)
    }

    /// Splits `A` into its compatible part `C = A − T(Curl A)` and a potential
    /// `g^i = T C^i` with `dg ≈ C`.
    pub fn recover_potential(&self, a: &MatrixField) -> Result<Potential> {
        let rows = a.rows();
        let curls = rows
            .iter()
            .map(exterior_derivative)
            .collect::<Result<Vec<_>>>()?;
        let t_curl = self.t_kernel_many(&curls)?;
        let compatible: Vec<FormField> = rows
            .iter()
            .zip(&t_curl)
            .map(|(w, t)| w.combine(1.0, t, -1.0))
            .collect();
        let potential = self.t_kernel_many(&compatible)?;
        let dg = potential
            .iter()
            .map(exterior_derivative)
            .collect::<Result<Vec<_>>>()?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (c, g) in compatible.iter().zip(&dg) {
            num += interior_l1(&c.combine(1.0, g, -1.0));
            den += interior_l1(c);
        }
        let closure_gap = if den > 0.0 { num / den } else { 0.0 };
        Ok(Potential {
            compatible: MatrixField::from_rows(&compatible)?,
            gradient: MatrixField::from_rows(&dg)?,
            potential,
            closure_gap,
        })
    }
}

/// Output of [`HomotopyOperator::recover_potential`].
#[derive(Debug, Clone)]
pub struct Potential {
    /// `A − T(Curl A)`, row by row.
    pub compatible: MatrixField,
    /// One 0-form per row.
    pub potential: Vec<FormField>,
    /// `dg`, row by row.
    pub gradient: MatrixField,
    /// `‖dg − C‖₁ / ‖C‖₁` on the interior ball (0 when `C` vanishes there).
    pub closure_gap: f64,
}

/// L¹ norm of the pointwise magnitude over masked nodes with `|x| ≤ 0.8`.
pub fn interior_l1(f: &impl NodeField) -> f64 {
    let d = f.domain();
    let mut acc = Accumulator::new();
    for &node in d.masked_nodes() {
        if norm(&d.point(node)) <= INTERIOR_RADIUS * d.radius() {
            acc.add(f.magnitude(node) * d.cell_volume());
        }
    }
    acc.value()
}

/// Source cells closer than this many spacings are integrated on sub-points.
const NEAR_FIELD: f64 = 1.8;
const SUBCELLS: usize = 4;

/// Cell average of the kernel for source cells next to the evaluation node.
struct NearField {
    offsets: Vec<Point>,
}

impl NearField {
    fn new(d: &GridDomain, m: usize) -> Self {
        let n = d.n();
        let mut offsets = Vec::new();
        for idx in 0..m.pow(n as u32) {
            let mut p = [0.0; 4];
            let mut rest = idx;
            for c in p.iter_mut().take(n) {
                *c = d.h() * (-0.5 + (2 * (rest % m) + 1) as f64 / (2 * m) as f64);
                rest /= m;
            }
            offsets.push(p);
        }
        Self { offsets }
    }

    /// `⨍_cell K(z', x − z') dz'` for the cell centred at `z`.
    fn cell_average(&self, ray: &RayIntegral, x: &Point, z: &Point, n: usize, norm_z: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for o in &self.offsets {
            let mut zp = [0.0; 4];
            let mut h = [0.0; 4];
            let mut u = [0.0; 4];
            for k in 0..n {
                zp[k] = z[k] + o[k];
                h[k] = x[k] - zp[k];
            }
            let rho = norm(&h);
            for k in 0..n {
                u[k] = -h[k] / rho;
            }
            let g = ray.eval(&zp, &u, rho) / (rho.powi(n as i32) * norm_z);
            for k in 0..n {
                out[k] += h[k] * g;
            }
        }
        let m = self.offsets.len() as f64;
        out.map(|v| v / m)
    }
}

/// Equivalent-ball integral of the kernel over the cell holding `x`.
struct SingularRule {
    radial: Vec<(f64, f64)>,
    dirs: Vec<Point>,
    dir_weight: f64,
}

impl SingularRule {
    fn new(d: &GridDomain, mode: SingularCell) -> Option<Self> {
        if mode == SingularCell::Skip {
            return None;
        }
        let n = d.n();
        let a = (d.cell_volume() / unit_ball_volume(n)).powf(1.0 / n as f64);
        let dirs = ball_directions(n, 8);
        Some(Self {
            radial: GaussLegendre::new(4).on_interval(0.0, a).collect(),
            dir_weight: unit_sphere_area(n) / dirs.len() as f64,
            dirs,
        })
    }

    /// `∫_{|z−x|<a} K(z, x−z) dz = −∫₀^a ∫_{S} v·S(x+ρv, v, ρ) dv dρ / Z`.
    fn cell_vector(&self, ray: &RayIntegral, x: &Point, n: usize, z: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for v in &self.dirs {
            let mut s = 0.0;
            for &(rho, w) in &self.radial {
                s += w * ray.eval(&along(x, v, rho), v, rho);
            }
            for k in 0..n {
                out[k] -= self.dir_weight * v[k] * s / z;
            }
        }
        out
    }
}

fn grid_sources(d: &GridDomain, forms: &[FormField]) -> Vec<Source> {
    d.masked_nodes()
        .iter()
        .filter_map(|&node| {
            let values: Vec<f64> = forms.iter().flat_map(|f| f.value_at(node)).collect();
            values.iter().any(|v| *v != 0.0).then(|| Source {
                point: d.point(node),
                node: Some(node),
                volume: d.cell_volume(),
                values,
            })
        })
        .collect()
}

fn source_index(d: &GridDomain, sources: &[Source]) -> Vec<Option<usize>> {
    let mut out = vec![None; d.len()];
    for (i, s) in sources.iter().enumerate() {
        if let Some(node) = s.node {
            out[node] = Some(i);
        }
    }
    out
}

fn contract_into(
    acc: &mut [Accumulator],
    table: &[ContractionTerm],
    kvec: &[f64; 4],
    values: &[f64],
    nforms: usize,
    cin: usize,
    cout: usize,
) {
    for f in 0..nforms {
        for t in table {
            let v = values[f * cin + t.input];
            if v != 0.0 {
                acc[f * cout + t.output].add(t.sign * kvec[t.axis] * v);
            }
        }
    }
}

/// Builds `nforms` forms of `degree` from per-node rows laid out form-major.
fn scatter(
    d: &Arc<GridDomain>,
    degree: usize,
    eval: &[usize],
    rows: Vec<Vec<f64>>,
    nforms: usize,
) -> Result<Vec<FormField>> {
    let cout = binomial(d.n(), degree);
    let mut coeffs = vec![vec![vec![0.0; d.len()]; cout]; nforms];
    for (&node, row) in eval.iter().zip(rows) {
        for f in 0..nforms {
            for c in 0..cout {
                coeffs[f][c][node] = row[f * cout + c];
            }
        }
    }
    coeffs
        .into_iter()
        .map(|c| FormField::from_coeffs(d, degree, c))
        .collect()
}

pub fn k_point(y: &Point, omega: &FormField, x: &Point) -> Result<Vec<f64>> {
    HomotopyOperator::default().k_point(y, omega, x)
}

pub fn t_direct(omega: &FormField) -> Result<FormField> {
    HomotopyOperator::default().t_direct(omega)
}

pub fn t_kernel(omega: &FormField) -> Result<FormField> {
    HomotopyOperator::default().t_kernel(omega)
}

pub fn riesz_envelope(omega: &impl NodeField) -> Vec<f64> {
    HomotopyOperator::default().riesz_envelope(omega)
}

pub fn homotopy_residual(omega: &FormField) -> Result<f64> {
    HomotopyOperator::default().homotopy_residual(omega, Method::Kernel)
}

pub fn recover_potential(a: &MatrixField) -> Result<Potential> {
    HomotopyOperator::default().recover_potential(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_domain;

    #[test]
    fn cutoff_profile_bounds() {
        let w = CutoffWeight;
        assert_eq!(w.value(0.3), 1.0);
        assert_eq!(w.value(2.5), 0.0);
        let max_slope = (0..=1000)
            .map(|i| w.slope(1.0 + i as f64 / 1000.0))
            .fold(0.0, f64::max);
        assert!((max_slope - 1.5).abs() < 1e-12);
        assert!((w.mass(3, 1.0) - unit_ball_volume(3)).abs() < 1e-12);
    }

    #[test]
    fn k_point_of_constant_and_exact_forms() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let c = FormField::from_fn(&d, 1, |_, i| if i == 0 { 2.5 } else { 0.0 }).unwrap();
        let x = [0.25, -0.5, 0.0, 0.0];
        let y = [-0.5, 0.25, 0.5, 0.0];
        let v = k_point(&y, &c, &x).unwrap();
        assert!((v[0] - 2.5 * 0.75).abs() < 1e-13);

        // ω = df for affine f = 1 + 2x₁ − x₂ + 3x₃
        let df = FormField::from_fn(&d, 1, |_, i| [2.0, -1.0, 3.0][i]).unwrap();
        let f = |p: &Point| 1.0 + 2.0 * p[0] - p[1] + 3.0 * p[2];
        let v = k_point(&y, &df, &x).unwrap();
        assert!((v[0] - (f(&x) - f(&y))).abs() < 1e-12);
        assert!(k_point(&[0.9, 0.9, 0.0, 0.0], &df, &x).is_err());
    }

    #[test]
    fn ray_interval_matches_geometry() {
        let (a, b) = ray_in_ball(&[0.0; 4], &[1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!((a, b), (0.0, 1.0));
        let (a, b) = ray_in_ball(&[-2.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && (b - 3.0).abs() < 1e-15);
        assert!(ray_in_ball(&[2.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], 1.0).is_none());
    }

    #[test]
    fn closed_form_ray_integral_matches_quadrature() {
        let gl = GaussLegendre::new(16);
        for (n, r) in [(2, 1), (3, 1), (3, 2), (3, 3), (4, 2)] {
            let ray = RayIntegral::new(n, r, 1.0, &KernelSpec::default(), &gl);
            let exact = ray.polynomial(0.3, 0.1, 1.4);
            let quad = gl.integrate(0.1, 1.4, |s| ray.radial(0.3, s));
            assert!((exact - quad).abs() < 1e-12 * exact.abs(), "{n} {r}");
        }
    }

    #[test]
    fn direct_form_of_constant_one_form() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let c = FormField::from_fn(&d, 1, |_, i| if i == 0 { 1.5 } else { 0.0 }).unwrap();
        let t = t_direct(&c).unwrap();
        for &node in d.masked_nodes() {
            let x = d.point(node);
            assert!((t.coeff(0)[node] - 1.5 * x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_form_maps_to_zero() {
        let d = make_domain(2, 9, 1.0).unwrap();
        let z = FormField::zeros(&d, 1).unwrap();
        assert!(t_kernel(&z).unwrap().coeff(0).iter().all(|v| *v == 0.0));
        assert!(riesz_envelope(&z).iter().all(|v| *v == 0.0));
        assert!(t_kernel(&FormField::zeros(&d, 0).unwrap()).is_err());
    }

    #[test]
    fn envelope_of_unit_density_at_origin() {
        let d = make_domain(3, 33, 1.0).unwrap();
        let one = FormField::scalar(&d, vec![1.0; d.len()]).unwrap();
        let env = riesz_envelope(&one);
        let origin = d.node_at(&[16, 16, 16]);
        let expected = 4.0 * std::f64::consts::PI;
        assert!((env[origin] / expected - 1.0).abs() < 0.05, "{}", env[origin]);
    }
}
