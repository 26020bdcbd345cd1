use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FormField, GridDomain, NodeField, Point};
use crate::error::{invalid, Error, Result};

/// An n×n matrix at every node; row i is the 1-form `ω^i = A^i_j dx^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    domain: Arc<GridDomain>,
    /// Per node, n² entries in (row, column) order.
    values: Vec<f64>,
}

impl MatrixField {
    pub fn from_values(domain: &Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        let n = domain.n();
        if values.len() != domain.len() * n * n {
            return Err(invalid("values", "length must be nodes × n²"));
        }
        let out = Self {
            domain: Arc::clone(domain),
            values,
        };
        for &node in domain.masked_nodes() {
            if out.entries(node).iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite entry at node {node}")));
            }
        }
        Ok(out)
    }

    /// Fills each node through `f(point, entries)`, entries row-major.
    pub fn from_fn<F>(domain: &Arc<GridDomain>, f: F) -> Result<Self>
    where
        F: Fn(&Point, &mut [f64]),
    {
        let nn = domain.n() * domain.n();
        let mut values = vec![0.0; domain.len() * nn];
        for (node, chunk) in values.chunks_mut(nn).enumerate() {
            f(&domain.point(node), chunk);
        }
        Self::from_values(domain, values)
    }

    pub fn constant(domain: &Arc<GridDomain>, m: &DMatrix<f64>) -> Result<Self> {
        let n = domain.n();
        if m.nrows() != n || m.ncols() != n {
            return Err(invalid("matrix", format!("expected {n}×{n}")));
        }
        Self::from_fn(domain, |_, e| {
            for i in 0..n {
                for j in 0..n {
                    e[i * n + j] = m[(i, j)];
                }
            }
        })
    }

    pub fn domain_arc(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self, node: usize) -> &[f64] {
        let nn = self.n() * self.n();
        &self.values[node * nn..(node + 1) * nn]
    }

    pub fn entries_mut(&mut self, node: usize) -> &mut [f64] {
        let nn = self.n() * self.n();
        &mut self.values[node * nn..(node + 1) * nn]
    }

    pub fn at(&self, node: usize) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_row_slice(n, n, self.entries(node))
    }

    /// Row `i` as a 1-form.
    pub fn row_form(&self, i: usize) -> FormField {
        let n = self.n();
        let coeffs = (0..n)
            .map(|j| {
                (0..self.domain.len())
                    .map(|node| self.values[node * n * n + i * n + j])
                    .collect()
            })
            .collect();
        FormField::from_coeffs(&self.domain, 1, coeffs).expect("rows of a valid field are valid")
    }

    pub fn rows(&self) -> Vec<FormField> {
        (0..self.n()).map(|i| self.row_form(i)).collect()
    }

    /// Stacks n 1-forms as the rows of a matrix field.
    pub fn from_rows(rows: &[FormField]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| invalid("rows", "empty"))?;
        let domain = Arc::clone(first.domain_arc());
        let n = domain.n();
        if rows.len() != n || rows.iter().any(|r| r.degree() != 1) {
            return Err(invalid("rows", format!("need {n} one-forms")));
        }
        let mut values = vec![0.0; domain.len() * n * n];
        for (i, row) in rows.iter().enumerate() {
            for j in 0..n {
                for (node, v) in row.coeff(j).iter().enumerate() {
                    values[node * n * n + i * n + j] = *v;
                }
            }
        }
        Self::from_values(&domain, values)
    }

    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            domain: Arc::clone(&self.domain),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// `A - M` at every node.
    pub fn sub_constant(&self, m: &DMatrix<f64>) -> Self {
        let n = self.n();
        let mut out = self.clone();
        for chunk in out.values.chunks_mut(n * n) {
            for i in 0..n {
                for j in 0..n {
                    chunk[i * n + j] -= m[(i, j)];
                }
            }
        }
        out
    }

    /// `Q·A` at every node.
    pub fn left_mul(&self, q: &DMatrix<f64>) -> Self {
        let n = self.n();
        let mut out = self.clone();
        for (node, chunk) in out.values.chunks_mut(n * n).enumerate() {
            let a = DMatrix::from_row_slice(n, n, &self.values[node * n * n..(node + 1) * n * n]);
            let qa = q * a;
            for i in 0..n {
                for j in 0..n {
                    chunk[i * n + j] = qa[(i, j)];
                }
            }
        }
        out
    }

    /// Pointwise distance to SO(n) as a 0-form (zero off the mask).
    pub fn dist_so_field(&self) -> FormField {
        let mut vals = vec![0.0; self.domain.len()];
        for &node in self.domain.masked_nodes() {
            vals[node] = dist_so(&self.at(node));
        }
        FormField::scalar(&self.domain, vals).expect("distances are finite")
    }

    /// Largest Frobenius norm over masked nodes.
    pub fn sup_norm(&self) -> f64 {
        self.domain
            .masked_nodes()
            .iter()
            .map(|&i| self.magnitude(i))
            .fold(0.0, f64::max)
    }

    /// Mean matrix over the given nodes.
    pub fn mean_over(&self, nodes: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        let mut acc = vec![crate::sum::Accumulator::new(); n * n];
        for &node in nodes {
            for (a, v) in acc.iter_mut().zip(self.entries(node)) {
                a.add(*v);
            }
        }
        let k = nodes.len().max(1) as f64;
        DMatrix::from_row_slice(n, n, &acc.iter().map(|a| a.value() / k).collect::<Vec<_>>())
    }
}

impl NodeField for MatrixField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }

    fn num_components(&self) -> usize {
        self.n() * self.n()
    }

    fn component(&self, node: usize, c: usize) -> f64 {
        self.values[node * self.n() * self.n() + c]
    }
}

/// An n×n orthogonal matrix with determinant +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Rotation(DMatrix<f64>);

impl Rotation {
    pub const ORTHOGONALITY_TOL: f64 = 1e-10;

    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid("rotation", "matrix must be square"));
        }
        let n = m.nrows();
        let defect = (m.transpose() * &m - DMatrix::identity(n, n)).amax();
        if !(defect <= Self::ORTHOGONALITY_TOL) {
            return Err(invalid("rotation", format!("‖mᵀm − I‖∞ = {defect:e}")));
        }
        if m.determinant() <= 0.0 {
            return Err(invalid("rotation", "determinant must be positive"));
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Rotation by `angle` in the coordinate plane `(a, b)`.
    pub fn plane(n: usize, a: usize, b: usize, angle: f64) -> Self {
        let mut m = DMatrix::identity(n, n);
        let (s, c) = angle.sin_cos();
        m[(a, a)] = c;
        m[(b, b)] = c;
        m[(a, b)] = -s;
        m[(b, a)] = s;
        Self(m)
    }

    /// `exp(W)` for a skew-symmetric `W`.
    pub fn exp_skew(w: &DMatrix<f64>) -> Result<Self> {
        let skew_defect = (w + w.transpose()).amax();
        if skew_defect > 1e-12 * (1.0 + w.amax()) {
            return Err(invalid("generator", "matrix is not skew-symmetric"));
        }
        Self::new(expm(w))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(&self.0 * &other.0)
    }
}

impl TryFrom<Vec<Vec<f64>>> for Rotation {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("rotation", "rows must form a square matrix"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Rotation::new(DMatrix::from_row_slice(n, n, &flat))
    }
}

impl From<Rotation> for Vec<Vec<f64>> {
    fn from(r: Rotation) -> Self {
        let n = r.n();
        (0..n).map(|i| (0..n).map(|j| r.0[(i, j)]).collect()).collect()
    }
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=18 {
        term = &term * &x / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Singular values and the sign of the determinant.
fn signed_singular_values(m: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let svd = m.clone().svd(false, false);
    let det = m.determinant();
    (svd.singular_values.iter().copied().collect(), det)
}

/// Frobenius distance from `m` to SO(n).
///
/// With singular values σ_i: `√Σ(σ_i − 1)²` when det ≥ 0, otherwise the
/// smallest singular value enters with a negative sign.
pub fn dist_so(m: &DMatrix<f64>) -> f64 {
    let (mut sv, det) = signed_singular_values(m);
    if det < 0.0 {
        let (imin, _) = sv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        sv[imin] = -sv[imin];
    }
    sv.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>().sqrt()
}

/// Nearest rotation to `m` (polar projection onto SO(n)).
///
/// Returns `None` when the smallest singular value vanishes relative to the
/// largest, where the projection is not unique.
pub fn project_to_so(m: &DMatrix<f64>) -> Option<Rotation> {
    let n = m.nrows();
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let (imin, smin) = sv
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, s)| (i, *s))?;
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return None;
    }
    if m.determinant() > 0.0 {
        if let Some(r) = newton_polar(m) {
            return Rotation::new(r).ok();
        }
    }
    let mut d = DMatrix::identity(n, n);
    if (&u * &vt).determinant() < 0.0 {
        d[(imin, imin)] = -1.0;
    }
    let r = &u * d * &vt;
    Rotation::new(r).ok()
}

/// Orthogonal polar factor by the scaled Newton iteration
/// `X ← ½(γX + (γX)^{−T})`, which commutes with left rotations and reaches
/// rounding accuracy where the SVD factors of nearly equal singular values do
/// not.
fn newton_polar(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut x = m.clone();
    for _ in 0..100 {
        let inv_t = x.clone().try_inverse()?.transpose();
        let gamma = (inv_t.norm() / x.norm()).sqrt();
        let next = (&x * gamma + &inv_t / gamma) * 0.5;
        let change = (&next - &x).norm();
        x = next;
        if change <= 4.0 * f64::EPSILON * x.norm() {
            // One more unscaled step settles the last bits.
            let inv_t = x.clone().try_inverse()?.transpose();
            return Some((&x + inv_t) * 0.5);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_domain;

    #[test]
    fn distance_of_rotations_vanishes() {
        let r = Rotation::plane(3, 0, 2, 0.7).compose(&Rotation::plane(3, 1, 2, -1.3));
        assert!(dist_so(r.matrix()) < 1e-10);
    }

    #[test]
    fn distance_of_scaled_identity_and_reflection() {
        let two = DMatrix::<f64>::identity(3, 3) * 2.0;
        assert!((dist_so(&two) - 3f64.sqrt()).abs() < 1e-12);
        let refl = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]));
        assert!((dist_so(&refl) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_handles_negative_determinant() {
        let refl = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]));
        let r = project_to_so(&refl).unwrap();
        assert!(((&refl - r.matrix()).norm() - 2.0).abs() < 1e-12);
        assert!(project_to_so(&DMatrix::zeros(3, 3)).is_none());
    }

    #[test]
    fn exp_of_skew_is_rotation() {
        let mut w = DMatrix::zeros(4, 4);
        w[(0, 3)] = 1.7;
        w[(3, 0)] = -1.7;
        w[(1, 2)] = -0.4;
        w[(2, 1)] = 0.4;
        let r = Rotation::exp_skew(&w).unwrap();
        let expected = Rotation::plane(4, 0, 3, -1.7).compose(&Rotation::plane(4, 1, 2, 0.4));
        assert!((r.matrix() - expected.matrix()).amax() < 1e-13);
    }

    #[test]
    fn rows_round_trip() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let a = MatrixField::from_fn(&d, |p, e| {
            for (k, v) in e.iter_mut().enumerate() {
                *v = p[k % 3] * k as f64;
            }
        })
        .unwrap();
        let b = MatrixField::from_rows(&a.rows()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_rejects_reflections() {
        let refl = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert!(Rotation::new(refl).is_err());
    }
}
