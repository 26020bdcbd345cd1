//! Uniform grids clipped to a ball, and the fields that live on them.
//!
//! Nodes are stored for the whole bounding box `[-radius, radius]^n` in
//! row-major order (first axis slowest); the mask selects the nodes with
//! `|x| ≤ radius`. Integrals and norms run over masked nodes only, while
//! difference stencils may read unmasked neighbours.

mod form;
pub mod io;
mod matrix;
mod measure;
pub mod norms;

use std::sync::Arc;

use crate::error::{invalid, Result};

pub use form::{exterior_derivative, FormField};
pub use matrix::{dist_so, expm, project_to_so, MatrixField, Rotation};
pub use measure::{curl_of_matrix, total_variation, MeasureDensity, Region, Segment};
pub use norms::{bmo_seminorm, lp_norm, weak_lp_norm};

pub const MAX_DIM: usize = 4;

/// A point of R^n padded with zeros to [`MAX_DIM`] coordinates.
pub type Point = [f64; MAX_DIM];

/// Uniform Cartesian grid of `res^n` nodes on `[-radius, radius]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    n: usize,
    res: usize,
    radius: f64,
    h: f64,
    cell_volume: f64,
    strides: [usize; MAX_DIM],
    mask: Vec<bool>,
    masked: Vec<usize>,
}

/// Builds a grid domain; `res` must be odd so the origin is a node.
pub fn make_domain(n: usize, res: usize, radius: f64) -> Result<Arc<GridDomain>> {
    GridDomain::new(n, res, radius).map(Arc::new)
}

impl GridDomain {
    pub fn new(n: usize, res: usize, radius: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(invalid("n", format!("dimension {n} outside 2..=4")));
        }
        if res < 3 || res.is_multiple_of(2) {
            return Err(invalid("res", format!("{res} must be odd and at least 3")));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid("radius", format!("{radius} must be positive")));
        }
        let h = 2.0 * radius / (res - 1) as f64;
        let mut strides = [0usize; MAX_DIM];
        for (k, s) in strides.iter_mut().enumerate().take(n) {
            *s = res.pow((n - 1 - k) as u32);
        }
        let total = res.pow(n as u32);
        let mut dom = GridDomain {
            n,
            res,
            radius,
            h,
            cell_volume: h.powi(n as i32),
            strides,
            mask: Vec::new(),
            masked: Vec::new(),
        };
        let tol = 1e-12 * radius;
        dom.mask = (0..total)
            .map(|i| norm(&dom.point(i)) <= radius + tol)
            .collect();
        dom.masked = (0..total).filter(|&i| dom.mask[i]).collect();
        Ok(dom)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Total number of nodes in the bounding box.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_masked(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Masked node indices in increasing order.
    pub fn masked_nodes(&self) -> &[usize] {
        &self.masked
    }

    pub fn masked_volume(&self) -> f64 {
        self.masked.len() as f64 * self.cell_volume
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Per-axis integer coordinates of a node.
    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.n {
            m[k] = (node / self.strides[k]) % self.res;
        }
        m
    }

    pub fn node_at(&self, multi: &[usize]) -> usize {
        (0..self.n).map(|k| multi[k] * self.strides[k]).sum()
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.h
    }

    pub fn point(&self, node: usize) -> Point {
        let m = self.multi_index(node);
        let mut p = [0.0; MAX_DIM];
        for k in 0..self.n {
            p[k] = self.coordinate(m[k]);
        }
        p
    }

    /// Axis neighbour at offset `delta`, if it stays inside the box.
    pub fn neighbor(&self, node: usize, axis: usize, delta: isize) -> Option<usize> {
        let i = ((node / self.strides[axis]) % self.res) as isize + delta;
        if i < 0 || i >= self.res as isize {
            None
        } else {
            Some((node as isize + delta * self.strides[axis] as isize) as usize)
        }
    }

    /// Whether the node is at least `margin` nodes away from every box face.
    pub fn is_interior(&self, node: usize, margin: usize) -> bool {
        let m = self.multi_index(node);
        (0..self.n).all(|k| m[k] >= margin && m[k] + margin < self.res)
    }

    /// Masked nodes together with their unmasked axis neighbours, sorted.
    ///
    /// Operators evaluate on this set so that centered differences at
    /// masked nodes never read unevaluated values.
    pub fn halo_nodes(&self) -> Vec<usize> {
        let mut flag = self.mask.clone();
        for &node in &self.masked {
            for axis in 0..self.n {
                for d in [-1isize, 1] {
                    if let Some(nb) = self.neighbor(node, axis, d) {
                        flag[nb] = true;
                    }
                }
            }
        }
        (0..self.len()).filter(|&i| flag[i]).collect()
    }

    /// Whether a point lies in the closed bounding box.
    pub fn in_box(&self, p: &Point) -> bool {
        let tol = 1e-12 * self.radius;
        (0..self.n).all(|k| p[k].abs() <= self.radius + tol)
    }

    /// Whether a point lies in the closed ball of radius `radius`.
    pub fn in_ball(&self, p: &Point) -> bool {
        norm(p) <= self.radius * (1.0 + 1e-12)
    }

    /// Multilinear interpolation of node values at a point of the box.
    pub fn interpolate(&self, values: &[f64], p: &Point) -> f64 {
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.n {
            let t = ((p[k] + self.radius) / self.h).clamp(0.0, (self.res - 1) as f64);
            let i0 = (t.floor() as usize).min(self.res - 2);
            base[k] = i0;
            frac[k] = t - i0 as f64;
        }
        let base_node = self.node_at(&base);
        let mut acc = 0.0;
        for corner in 0..(1usize << self.n) {
            let mut w = 1.0;
            let mut node = base_node;
            for k in 0..self.n {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    node += self.strides[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                acc += w * values[node];
            }
        }
        acc
    }
}

/// Euclidean norm of a padded point.
pub fn norm(p: &Point) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Volume of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        _ => {
            // ω_n = 2π/n · ω_{n-2}
            2.0 * PI / n as f64 * unit_ball_volume(n - 2)
        }
    }
}

/// Surface area of the unit sphere S^{n-1}.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Read access shared by all node-collocated fields.
pub trait NodeField {
    fn domain(&self) -> &GridDomain;
    fn num_components(&self) -> usize;
    fn component(&self, node: usize, c: usize) -> f64;

    /// Pointwise Euclidean (Frobenius for matrices) magnitude.
    fn magnitude(&self, node: usize) -> f64 {
        (0..self.num_components())
            .map(|c| self.component(node, c).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Magnitudes at masked nodes, in node order.
    fn masked_magnitudes(&self) -> Vec<f64> {
        self.domain()
            .masked_nodes()
            .iter()
            .map(|&i| self.magnitude(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_by_three_square() {
        let d = GridDomain::new(2, 3, 1.0).unwrap();
        assert_eq!(d.len(), 9);
        assert_eq!(d.masked_nodes().len(), 5);
        assert_eq!(d.point(4)[..2], [0.0, 0.0]);
    }

    #[test]
    fn masked_fraction_approximates_ball() {
        let d = GridDomain::new(3, 17, 1.0).unwrap();
        // 17 nodes per axis span 16 cells, so compare volumes, not counts
        let frac = d.masked_volume() / 8.0;
        let expected = std::f64::consts::PI / 6.0;
        assert!((frac / expected - 1.0).abs() < 0.1, "{frac} vs {expected}");
    }

    #[test]
    fn rejects_even_resolution_and_bad_dimension() {
        assert!(GridDomain::new(3, 4, 1.0).is_err());
        assert!(GridDomain::new(5, 5, 1.0).is_err());
        assert!(GridDomain::new(1, 5, 1.0).is_err());
    }

    #[test]
    fn interpolation_reproduces_affine_functions() {
        let d = GridDomain::new(3, 5, 1.0).unwrap();
        let vals: Vec<f64> = (0..d.len())
            .map(|i| {
                let p = d.point(i);
                1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2]
            })
            .collect();
        let p = [0.13, -0.71, 0.4, 0.0];
        let v = d.interpolate(&vals, &p);
        assert!((v - (1.0 + 0.26 + 0.71 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(3) - 4.18879).abs() < 1e-4);
        assert!((unit_ball_volume(4) - 4.9348).abs() < 1e-4);
        assert!((unit_sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
