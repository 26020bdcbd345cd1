use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{exterior_derivative, norm, FormField, GridDomain, MatrixField, NodeField, Point};
use crate::error::{invalid, Result};
use crate::multiindex::binomial;
use crate::quadrature::GaussLegendre;
use crate::sum::Accumulator;

/// A straight segment carrying a constant vector of 2-forms per unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
    /// One 2-form per row, flattened as `row * binomial(n, 2) + component`.
    pub weight: Vec<f64>,
}

impl Segment {
    pub fn length(&self) -> f64 {
        let mut d = [0.0; 4];
        for k in 0..4 {
            d[k] = self.end[k] - self.start[k];
        }
        norm(&d)
    }

    pub fn weight_norm(&self) -> f64 {
        self.weight.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn at(&self, t: f64) -> Point {
        let mut p = [0.0; 4];
        for k in 0..4 {
            p[k] = self.start[k] + t * (self.end[k] - self.start[k]);
        }
        p
    }

    /// Gauss–Legendre points `(position, length weight)` along the segment.
    pub fn quadrature(&self, m: usize) -> Vec<(Point, f64)> {
        let len = self.length();
        GaussLegendre::new(m)
            .on_interval(0.0, 1.0)
            .map(|(t, w)| (self.at(t), w * len))
            .collect()
    }
}

/// Where a total variation is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// The whole masked ball.
    Mask,
    /// Masked nodes with `|x| ≤ r`.
    Ball(f64),
    /// Half-open box `lo ≤ x < hi`, intersected with the mask.
    Box { lo: Point, hi: Point },
}

impl Region {
    pub fn contains(&self, domain: &GridDomain, p: &Point) -> bool {
        match self {
            Region::Mask => domain.in_ball(p),
            Region::Ball(r) => domain.in_ball(p) && norm(p) <= r * (1.0 + 1e-12),
            Region::Box { lo, hi } => {
                domain.in_ball(p) && (0..domain.n()).all(|k| lo[k] <= p[k] && p[k] < hi[k])
            }
        }
    }

    /// Length fraction of a segment inside the region.
    fn segment_fraction(&self, domain: &GridDomain, s: &Segment) -> f64 {
        let (mut t0, mut t1) = ball_interval(s, domain.radius());
        if let Region::Ball(r) = self {
            let (a, b) = ball_interval(s, *r);
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        if let Region::Box { lo, hi } = self {
            for k in 0..domain.n() {
                let d = s.end[k] - s.start[k];
                if d == 0.0 {
                    if s.start[k] < lo[k] || s.start[k] >= hi[k] {
                        return 0.0;
                    }
                    continue;
                }
                let (a, b) = ((lo[k] - s.start[k]) / d, (hi[k] - s.start[k]) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t1 - t0).max(0.0)
    }
}

/// Parameter interval of `s` inside the closed ball of radius `r`.
fn ball_interval(s: &Segment, r: f64) -> (f64, f64) {
    let mut d = [0.0; 4];
    for k in 0..4 {
        d[k] = s.end[k] - s.start[k];
    }
    let a: f64 = d.iter().map(|v| v * v).sum();
    let b: f64 = 2.0 * (0..4).map(|k| d[k] * s.start[k]).sum::<f64>();
    let c = norm(&s.start).powi(2) - r * r;
    if a == 0.0 {
        return if c <= 0.0 { (0.0, 1.0) } else { (1.0, 0.0) };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return (1.0, 0.0);
    }
    let q = disc.sqrt();
    (((-b - q) / (2.0 * a)).max(0.0), ((-b + q) / (2.0 * a)).min(1.0))
}

/// Vector of 2-form valued measures: a node density plus line segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureDensity {
    domain: Arc<GridDomain>,
    ac: Vec<FormField>,
    segments: Vec<Segment>,
}

impl MeasureDensity {
    pub fn new(ac: Vec<FormField>, segments: Vec<Segment>) -> Result<Self> {
        let first = ac.first().ok_or_else(|| invalid("ac_part", "needs at least one row"))?;
        let domain = Arc::clone(first.domain_arc());
        let n = domain.n();
        if ac.iter().any(|f| f.degree() != 2 || f.domain() != &*domain) {
            return Err(invalid("ac_part", "rows must be 2-forms on one domain"));
        }
        let width = ac.len() * binomial(n, 2);
        for s in &segments {
            if s.weight.len() != width {
                return Err(invalid("segment", format!("weight needs {width} entries")));
            }
            if s.weight.iter().chain(&s.start).chain(&s.end).any(|v| !v.is_finite()) {
                return Err(invalid("segment", "non-finite data"));
            }
        }
        Ok(Self {
            domain,
            ac,
            segments,
        })
    }

    pub fn zero(domain: &Arc<GridDomain>, rows: usize) -> Result<Self> {
        let ac = (0..rows)
            .map(|_| FormField::zeros(domain, 2))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ac, Vec::new())
    }

    pub fn domain_arc(&self) -> &Arc<GridDomain> {
        &self.domain
    }

    pub fn rows(&self) -> usize {
        self.ac.len()
    }

    pub fn ac_part(&self) -> &[FormField] {
        &self.ac
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn with_segments(mut self, segments: Vec<Segment>) -> Result<Self> {
        self.segments = segments;
        Self::new(self.ac, self.segments)
    }

    /// Same segments, no density.
    pub fn singular_only(&self) -> Result<Self> {
        Self::zero(&self.domain, self.rows())?.with_segments(self.segments.clone())
    }

    /// Same density, no segments.
    pub fn without_segments(&self) -> Self {
        Self {
            domain: Arc::clone(&self.domain),
            ac: self.ac.clone(),
            segments: Vec::new(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            domain: Arc::clone(&self.domain),
            ac: self.ac.iter().map(|f| f.scaled(a)).collect(),
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    weight: s.weight.iter().map(|w| a * w).collect(),
                    ..s.clone()
                })
                .collect(),
        }
    }

    /// Largest `|x|` over nodes with density above `threshold` and over
    /// segment endpoints; zero for the empty measure.
    pub fn support_radius(&self, threshold: f64) -> f64 {
        let nodes = self.domain.masked_nodes().iter().copied();
        let ac = nodes
            .filter(|&i| self.magnitude(i) > threshold)
            .map(|i| norm(&self.domain.point(i)))
            .fold(0.0, f64::max);
        self.segments
            .iter()
            .filter(|s| s.weight_norm() > 0.0)
            .flat_map(|s| [norm(&s.start), norm(&s.end)])
            .fold(ac, f64::max)
    }
}

impl NodeField for MeasureDensity {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }

    fn num_components(&self) -> usize {
        self.ac.len() * binomial(self.domain.n(), 2)
    }

    fn component(&self, node: usize, c: usize) -> f64 {
        let per = binomial(self.domain.n(), 2);
        self.ac[c / per].coeff(c % per)[node]
    }
}

/// Row-wise exterior derivative of a matrix field.
pub fn curl_of_matrix(a: &MatrixField) -> Result<MeasureDensity> {
    let ac = a
        .rows()
        .iter()
        .map(exterior_derivative)
        .collect::<Result<Vec<_>>>()?;
    MeasureDensity::new(ac, Vec::new())
}

/// Mass of the measure inside `region`.
pub fn total_variation(mu: &MeasureDensity, region: Region) -> f64 {
    let d = &*mu.domain;
    let mut acc = Accumulator::new();
    for &node in d.masked_nodes() {
        if region.contains(d, &d.point(node)) {
            acc.add(mu.magnitude(node) * d.cell_volume());
        }
    }
    for s in &mu.segments {
        acc.add(region.segment_fraction(d, s) * s.length() * s.weight_norm());
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_domain;

    fn axis_segment(weight: f64) -> Segment {
        Segment {
            start: [0.0, 0.0, -0.5, 0.0],
            end: [0.0, 0.0, 0.5, 0.0],
            weight: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, weight, 0.0, 0.0],
        }
    }

    #[test]
    fn zero_and_constant_fields_have_no_mass() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let mu = MeasureDensity::zero(&d, 3).unwrap();
        assert_eq!(total_variation(&mu, Region::Mask), 0.0);
        let r = crate::Rotation::plane(3, 0, 1, 0.3);
        let a = MatrixField::constant(&d, r.matrix()).unwrap();
        assert!(total_variation(&curl_of_matrix(&a).unwrap(), Region::Mask) < 1e-12);
    }

    #[test]
    fn unit_segment_mass_is_its_weight() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let mu = MeasureDensity::zero(&d, 3)
            .unwrap()
            .with_segments(vec![axis_segment(-2.5)])
            .unwrap();
        assert!((total_variation(&mu, Region::Mask) - 2.5).abs() < 1e-14);
        let lo = [-1.0, -1.0, -1.0, 0.0];
        let mid = [1.0, 1.0, 0.0, 0.0];
        let top = [-1.0, -1.0, 0.0, 0.0];
        let hi = [1.0, 1.0, 1.0, 0.0];
        let a = total_variation(&mu, Region::Box { lo, hi: mid });
        let b = total_variation(&mu, Region::Box { lo: top, hi });
        assert!((a - 1.25).abs() < 1e-14 && (b - 1.25).abs() < 1e-14);
        assert!((total_variation(&mu, Region::Ball(0.25)) - 1.25).abs() < 1e-14);
    }

    #[test]
    fn segments_are_clipped_to_the_ball() {
        let d = make_domain(3, 5, 1.0).unwrap();
        let s = Segment {
            start: [0.0, 0.0, -3.0, 0.0],
            end: [0.0, 0.0, 3.0, 0.0],
            ..axis_segment(1.0)
        };
        let mu = MeasureDensity::zero(&d, 3).unwrap().with_segments(vec![s]).unwrap();
        assert!((total_variation(&mu, Region::Mask) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_fields_are_nearly_curl_free() {
        let d = make_domain(3, 17, 1.0).unwrap();
        // u = (x² y, y z, x + z²): exact gradient sampled analytically
        let a = MatrixField::from_fn(&d, |p, e| {
            let (x, y, z) = (p[0], p[1], p[2]);
            e.copy_from_slice(&[2.0 * x * y, x * x, 0.0, 0.0, z, y, 1.0, 0.0, 2.0 * z]);
        })
        .unwrap();
        let tv = total_variation(&curl_of_matrix(&a).unwrap(), Region::Mask);
        assert!(tv < d.h().powi(2), "{tv}");
    }
}
