use std::sync::Arc;

use super::{GridDomain, NodeField, Point};
use crate::error::{invalid, Error, Result};
use crate::multiindex::{binomial, derivative_table};

/// A degree-r differential form with one node-collocated coefficient array
/// per increasing multi-index (lexicographic order).
#[derive(Debug, Clone, PartialEq)]
pub struct FormField {
    domain: Arc<GridDomain>,
    degree: usize,
    coeffs: Vec<Vec<f64>>,
}

impl FormField {
    pub fn zeros(domain: &Arc<GridDomain>, degree: usize) -> Result<Self> {
        if degree > domain.n() {
            return Err(invalid("degree", format!("{degree} exceeds n = {}", domain.n())));
        }
        let m = binomial(domain.n(), degree);
        Ok(Self {
            domain: Arc::clone(domain),
            degree,
            coeffs: vec![vec![0.0; domain.len()]; m],
        })
    }

    /// Samples `f(point, component)` at every node of the box.
    pub fn from_fn<F>(domain: &Arc<GridDomain>, degree: usize, f: F) -> Result<Self>
    where
        F: Fn(&Point, usize) -> f64,
    {
        let mut out = Self::zeros(domain, degree)?;
        for (c, arr) in out.coeffs.iter_mut().enumerate() {
            for (i, v) in arr.iter_mut().enumerate() {
                *v = f(&domain.point(i), c);
            }
        }
        out.check_finite()?;
        Ok(out)
    }

    pub fn from_coeffs(domain: &Arc<GridDomain>, degree: usize, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if degree > domain.n() {
            return Err(invalid("degree", format!("{degree} exceeds n = {}", domain.n())));
        }
        if coeffs.len() != binomial(domain.n(), degree) {
            return Err(invalid(
                "coeffs",
                format!("expected {} arrays, got {}", binomial(domain.n(), degree), coeffs.len()),
            ));
        }
        if coeffs.iter().any(|c| c.len() != domain.len()) {
            return Err(invalid("coeffs", "array length differs from node count"));
        }
        let out = Self {
            domain: Arc::clone(domain),
            degree,
            coeffs,
        };
        out.check_finite()?;
        Ok(out)
    }

    /// Zero-form from node values.
    pub fn scalar(domain: &Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        Self::from_coeffs(domain, 0, vec![values])
    }

    pub fn domain_arc(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeff(&self, c: usize) -> &[f64] {
        &self.coeffs[c]
    }

    pub fn coeff_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.coeffs[c]
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Vec<f64>> {
        self.coeffs
    }

    fn check_finite(&self) -> Result<()> {
        for &node in self.domain.masked_nodes() {
            if self.coeffs.iter().any(|c| !c[node].is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite coefficient at masked node {node}"
                )));
            }
        }
        Ok(())
    }

    fn assert_compatible(&self, other: &Self) {
        assert_eq!(self.degree, other.degree, "degree mismatch");
        assert!(Arc::ptr_eq(&self.domain, &other.domain) || self.domain == other.domain);
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        self.assert_compatible(other);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect())
            .collect();
        Self {
            domain: Arc::clone(&self.domain),
            degree: self.degree,
            coeffs,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|x| x.iter().map(|u| a * u).collect())
            .collect();
        Self {
            domain: Arc::clone(&self.domain),
            degree: self.degree,
            coeffs,
        }
    }

    /// Component vector at a node.
    pub fn value_at(&self, node: usize) -> Vec<f64> {
        self.coeffs.iter().map(|c| c[node]).collect()
    }

    /// Interpolated component vector at an arbitrary point of the box.
    pub fn interpolate(&self, p: &Point) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|c| self.domain.interpolate(c, p))
            .collect()
    }

    pub fn exterior_derivative(&self) -> Result<FormField> {
        exterior_derivative(self)
    }
}

impl NodeField for FormField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }

    fn num_components(&self) -> usize {
        self.coeffs.len()
    }

    fn component(&self, node: usize, c: usize) -> f64 {
        self.coeffs[c][node]
    }
}

/// Centered first difference along `axis`, one-sided on the box faces.
pub(crate) fn partial(domain: &GridDomain, values: &[f64], node: usize, axis: usize) -> f64 {
    let h = domain.h();
    match (domain.neighbor(node, axis, -1), domain.neighbor(node, axis, 1)) {
        (Some(m), Some(p)) => (values[p] - values[m]) / (2.0 * h),
        (None, Some(p)) => (values[p] - values[node]) / h,
        (Some(m), None) => (values[node] - values[m]) / h,
        (None, None) => 0.0,
    }
}

/// Discrete exterior derivative `(dω)_γ = Σ_k (-1)^k ∂_{γ_k} ω_{γ∖γ_k}`.
///
/// For a 1-form `a dx^j + b dx^k` (j < k) the `dx^j∧dx^k` coefficient is
/// `∂_j b − ∂_k a`.
pub fn exterior_derivative(omega: &FormField) -> Result<FormField> {
    let domain = &omega.domain;
    let n = domain.n();
    let r = omega.degree;
    if r >= n {
        return Err(invalid("degree", format!("d of an {r}-form in dimension {n} is undefined")));
    }
    let table = derivative_table(n, r);
    let mut out = FormField::zeros(domain, r + 1)?;
    for term in &table {
        let src = &omega.coeffs[term.input];
        let dst = &mut out.coeffs[term.output];
        for (node, v) in dst.iter_mut().enumerate() {
            *v += term.sign * partial(domain, src, node, term.axis);
        }
    }
    Ok(out)
}
