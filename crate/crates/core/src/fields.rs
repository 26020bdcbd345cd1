//! Deterministic generators for the test-field families.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{
    curl_of_matrix, expm, norm, FormField, GridDomain, MatrixField, MeasureDensity, Point,
    Rotation, Segment,
};
use crate::multiindex::binomial;

/// Radius inside which every generated curl is supported.
pub const SUPPORT_RADIUS: f64 = 0.9;

/// Bound on `‖A‖_∞` guaranteed for the documented parameter ranges.
pub const SUP_BOUND: f64 = 10.0;

/// One monomial `coeff · Π x_k^{powers[k]}` of component `component` of `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub component: usize,
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    ConstantRotation {
        rotation: Rotation,
    },
    /// `u(x) = L x + ε q(x)` with `q` a polynomial map of degree ≤ 3.
    Gradient {
        linear: Vec<Vec<f64>>,
        terms: Vec<Monomial>,
        strength: f64,
    },
    /// Screw dislocation along `e₃` with a smooth radial taper.
    ScrewDislocation {
        burgers: f64,
        core_radius: f64,
        strength: f64,
        #[serde(default = "default_support")]
        taper_radius: f64,
    },
    /// `R₁ exp(s(x·ν/w) θ K)` with `K` the unit generator of the plane
    /// `(axes[0], axes[1])` and `s` a smooth step across the band `|x·ν| < w/2`.
    RotationJump {
        base: Rotation,
        axes: [usize; 2],
        angle: f64,
        normal: Vec<f64>,
        width: f64,
        /// When set, the angle is tapered to zero outside this radius.
        #[serde(default)]
        support_radius: Option<f64>,
    },
    /// `R₀ exp(ε W(x))` with `W` a random smooth skew field.
    PerturbedRotation {
        base: Rotation,
        strength: f64,
        seed: u64,
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default = "default_support")]
        support_radius: f64,
    },
}

fn default_support() -> f64 {
    SUPPORT_RADIUS
}

fn default_modes() -> usize {
    4
}

/// A generated field with its Curl.
#[derive(Debug, Clone)]
pub struct GeneratedField {
    pub a: MatrixField,
    pub curl: MeasureDensity,
}

impl FamilySpec {
    /// Incompatibility strength, the parameter scaled by [`rescale_family`].
    pub fn strength(&self) -> f64 {
        match self {
            FamilySpec::ConstantRotation { .. } => 0.0,
            FamilySpec::Gradient { strength, .. }
            | FamilySpec::ScrewDislocation { strength, .. }
            | FamilySpec::PerturbedRotation { strength, .. } => *strength,
            FamilySpec::RotationJump { angle, .. } => *angle,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::ConstantRotation { .. } => "constant_rotation",
            FamilySpec::Gradient { .. } => "gradient",
            FamilySpec::ScrewDislocation { .. } => "screw_dislocation",
            FamilySpec::RotationJump { .. } => "rotation_jump",
            FamilySpec::PerturbedRotation { .. } => "perturbed_rotation",
        }
    }

    /// Checks parameter ranges that do not depend on the grid.
    pub fn validate(&self, n: usize) -> Result<()> {
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, "must be finite"))
            }
        };
        match self {
            FamilySpec::ConstantRotation { rotation } => {
                if rotation.n() != n {
                    return Err(invalid("rotation", format!("expected {n}×{n}")));
                }
            }
            FamilySpec::Gradient { linear, terms, strength } => {
                finite("strength", *strength)?;
                if linear.len() != n || linear.iter().any(|r| r.len() != n) {
                    return Err(invalid("linear", format!("expected {n}×{n}")));
                }
                for t in terms {
                    finite("coeff", t.coeff)?;
                    if t.component >= n || t.powers.len() != n {
                        return Err(invalid("terms", "component or exponent count out of range"));
                    }
                    if t.powers.iter().sum::<u32>() > 3 {
                        return Err(invalid("terms", "polynomial degree must be at most 3"));
                    }
                }
            }
            FamilySpec::ScrewDislocation { burgers, core_radius, strength, taper_radius } => {
                if n != 3 {
                    return Err(invalid("n", "screw dislocations need n = 3"));
                }
                finite("burgers", *burgers)?;
                finite("strength", *strength)?;
                if !(*core_radius > 0.0) {
                    return Err(invalid("core_radius", "must be positive"));
                }
                if !(*taper_radius > 0.0 && *taper_radius <= SUPPORT_RADIUS) {
                    return Err(invalid("taper_radius", "must lie in (0, 0.9]"));
                }
                if (strength * burgers).abs() / (2.0 * PI * core_radius) > SUP_BOUND - 1.0 {
                    return Err(invalid("strength", "‖A‖_∞ would exceed 10"));
                }
            }
            FamilySpec::RotationJump { base, axes, angle, normal, width, support_radius } => {
                finite("angle", *angle)?;
                if base.n() != n {
                    return Err(invalid("base", format!("expected {n}×{n}")));
                }
                if axes[0] == axes[1] || axes.iter().any(|&a| a >= n) {
                    return Err(invalid("axes", "need two distinct axes below n"));
                }
                if normal.len() != n || normal.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                    return Err(invalid("normal", format!("need a nonzero vector of length {n}")));
                }
                if !(*width > 0.0) {
                    return Err(invalid("width", "must be positive"));
                }
                if let Some(r) = support_radius {
                    if !(*r > 0.0 && *r <= SUPPORT_RADIUS) {
                        return Err(invalid("support_radius", "must lie in (0, 0.9]"));
                    }
                }
            }
            FamilySpec::PerturbedRotation { base, strength, modes, support_radius, .. } => {
                finite("strength", *strength)?;
                if base.n() != n {
                    return Err(invalid("base", format!("expected {n}×{n}")));
                }
                if *modes == 0 {
                    return Err(invalid("modes", "need at least one mode"));
                }
                if !(*support_radius > 0.0 && *support_radius <= SUPPORT_RADIUS) {
                    return Err(invalid("support_radius", "must lie in (0, 0.9]"));
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self, domain: &Arc<GridDomain>) -> Result<GeneratedField> {
        self.validate(domain.n())?;
        match self {
            FamilySpec::ConstantRotation { rotation } => gen_constant_rotation(domain, rotation),
            FamilySpec::Gradient { linear, terms, strength } => {
                let n = domain.n();
                let flat: Vec<f64> = linear.iter().flatten().copied().collect();
                let l = DMatrix::from_row_slice(n, n, &flat);
                let a = gen_gradient(domain, &l, terms, *strength)?;
                Ok(GeneratedField {
                    a,
                    curl: MeasureDensity::zero(domain, n)?,
                })
            }
            FamilySpec::ScrewDislocation { burgers, core_radius, strength, taper_radius } => {
                let s = ScrewDislocation {
                    burgers: *burgers,
                    core_radius: *core_radius,
                    strength: *strength,
                    taper_radius: *taper_radius,
                };
                Ok(GeneratedField {
                    a: s.field(domain)?,
                    curl: s.curl(domain)?,
                })
            }
            FamilySpec::RotationJump { base, axes, angle, normal, width, support_radius } => {
                gen_rotation_jump(domain, base, *axes, *angle, normal, *width, *support_radius)
            }
            FamilySpec::PerturbedRotation { base, strength, seed, modes, support_radius } => {
                let a = gen_perturbed_rotation(domain, base, *strength, *seed, *modes, *support_radius)?;
                let curl = curl_of_matrix(&a)?;
                Ok(GeneratedField { a, curl })
            }
        }
    }
}

/// Multiplies the incompatibility strength by `lambda`.
pub fn rescale_family(spec: &FamilySpec, lambda: f64) -> FamilySpec {
    let mut out = spec.clone();
    match &mut out {
        FamilySpec::ConstantRotation { .. } => {}
        FamilySpec::Gradient { strength, .. }
        | FamilySpec::ScrewDislocation { strength, .. }
        | FamilySpec::PerturbedRotation { strength, .. } => *strength *= lambda,
        FamilySpec::RotationJump { angle, .. } => *angle *= lambda,
    }
    out
}

pub fn gen_constant_rotation(domain: &Arc<GridDomain>, r: &Rotation) -> Result<GeneratedField> {
    if r.n() != domain.n() {
        return Err(invalid("rotation", format!("expected {0}×{0}", domain.n())));
    }
    Ok(GeneratedField {
        a: MatrixField::constant(domain, r.matrix())?,
        curl: MeasureDensity::zero(domain, domain.n())?,
    })
}

/// `A = L + ε ∇q`, sampled analytically.
pub fn gen_gradient(
    domain: &Arc<GridDomain>,
    linear: &DMatrix<f64>,
    terms: &[Monomial],
    strength: f64,
) -> Result<MatrixField> {
    let n = domain.n();
    MatrixField::from_fn(domain, |p, e| {
        for i in 0..n {
            for j in 0..n {
                e[i * n + j] = linear[(i, j)];
            }
        }
        for t in terms {
            for j in 0..n {
                let pj = t.powers[j];
                if pj == 0 {
                    continue;
                }
                let mut v = strength * t.coeff * pj as f64;
                for k in 0..n {
                    let e = if k == j { pj - 1 } else { t.powers[k] };
                    v *= p[k].powi(e as i32);
                }
                e[t.component * n + j] += v;
            }
        }
    })
}

/// Quintic step: 0 below 0, 1 above 1, `C²` in between.
fn smoother_step(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        let v = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
        let dv = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        (v, dv)
    }
}

/// Radial taper equal to 1 on `|x| ≤ 2R/3` and 0 on `|x| ≥ R`; returns the
/// value and its radial derivative.
pub fn taper(rho: f64, outer: f64) -> (f64, f64) {
    let inner = 2.0 * outer / 3.0;
    let (s, ds) = smoother_step((rho - inner) / (outer - inner));
    (1.0 - s, -ds / (outer - inner))
}

/// Screw dislocation along `e₃`: `A = I + ε τ(|x|) β` with
/// `β₃ⱼ = (b/2π)(−x₂, x₁, 0)ⱼ / max(r, r_c)²`, `r` the distance to the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScrewDislocation {
    pub burgers: f64,
    pub core_radius: f64,
    pub strength: f64,
    pub taper_radius: f64,
}

impl ScrewDislocation {
    fn check(&self, domain: &GridDomain) -> Result<()> {
        if domain.n() != 3 {
            return Err(invalid("n", "screw dislocations need n = 3"));
        }
        if self.core_radius < 2.0 * domain.h() * (1.0 - 1e-12) {
            return Err(invalid("core_radius", "must be at least two grid spacings"));
        }
        Ok(())
    }

    pub fn field(&self, domain: &Arc<GridDomain>) -> Result<MatrixField> {
        self.check(domain)?;
        MatrixField::from_fn(domain, |p, e| {
            e.fill(0.0);
            e[0] = 1.0;
            e[4] = 1.0;
            e[8] = 1.0;
            let m2 = (p[0] * p[0] + p[1] * p[1]).max(self.core_radius.powi(2));
            let (t, _) = taper(norm(p), self.taper_radius);
            let c = self.strength * t * self.burgers / (2.0 * PI) / m2;
            e[6] += -c * p[1];
            e[7] += c * p[0];
        })
    }

    /// Analytic Curl as a node density: components `(12, 13, 23)` of row 3.
    pub fn curl(&self, domain: &Arc<GridDomain>) -> Result<MeasureDensity> {
        self.density(domain, true, true)
    }

    /// The core part `ε τ dη` alone, or the return-flux part `ε dτ ∧ η` alone.
    pub fn density(&self, domain: &Arc<GridDomain>, core: bool, taper_part: bool) -> Result<MeasureDensity> {
        self.check(domain)?;
        let rows: Vec<FormField> = (0..3)
            .map(|i| {
                FormField::from_fn(domain, 2, |p, c| {
                    if i == 2 {
                        self.curl_at(p, core, taper_part)[c]
                    } else {
                        0.0
                    }
                })
            })
            .collect::<Result<_>>()?;
        MeasureDensity::new(rows, Vec::new())
    }

    pub fn curl_at(&self, p: &Point, core: bool, taper_part: bool) -> [f64; 3] {
        let (x1, x2, x3) = (p[0], p[1], p[2]);
        let r2 = x1 * x1 + x2 * x2;
        let rc2 = self.core_radius.powi(2);
        let m2 = r2.max(rc2);
        let rho = norm(p);
        let (t, dt) = taper(rho, self.taper_radius);
        let k = self.strength * self.burgers / (2.0 * PI);
        let mut out = [0.0; 3];
        if taper_part && rho > 0.0 && dt != 0.0 {
            let c = k * dt / (rho * m2);
            out[0] += c * r2;
            out[1] += c * x2 * x3;
            out[2] -= c * x1 * x3;
        }
        if core && r2 < rc2 {
            out[0] += k * t * 2.0 / rc2;
        }
        out
    }

    /// Axis segments standing in for the core, one per grid spacing, each
    /// carrying the local flux `ε b τ`.
    pub fn axis_segments(&self, domain: &GridDomain) -> Vec<Segment> {
        let pieces = ((2.0 * self.taper_radius / domain.h()).ceil() as usize).max(1);
        let len = 2.0 * self.taper_radius / pieces as f64;
        (0..pieces)
            .map(|i| {
                let z0 = -self.taper_radius + i as f64 * len;
                let (t, _) = taper((z0 + 0.5 * len).abs(), self.taper_radius);
                let mut weight = vec![0.0; 3 * binomial(3, 2)];
                weight[6] = self.strength * self.burgers * t;
                Segment {
                    start: [0.0, 0.0, z0, 0.0],
                    end: [0.0, 0.0, z0 + len, 0.0],
                    weight,
                }
            })
            .collect()
    }

    /// Return-flux density plus axis segments in place of the core.
    pub fn idealized(&self, domain: &Arc<GridDomain>) -> Result<MeasureDensity> {
        self.density(domain, false, true)?
            .with_segments(self.axis_segments(domain))
    }
}

pub fn gen_screw_dislocation(
    domain: &Arc<GridDomain>,
    burgers: f64,
    core_radius: f64,
    strength: f64,
    taper_radius: f64,
) -> Result<GeneratedField> {
    FamilySpec::ScrewDislocation {
        burgers,
        core_radius,
        strength,
        taper_radius,
    }
    .generate(domain)
}

/// Unit generator of rotations in the plane `(a, b)`.
pub fn plane_generator(n: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, n);
    k[(a, b)] = -1.0;
    k[(b, a)] = 1.0;
    k
}

pub fn gen_rotation_jump(
    domain: &Arc<GridDomain>,
    base: &Rotation,
    axes: [usize; 2],
    angle: f64,
    normal: &[f64],
    width: f64,
    support_radius: Option<f64>,
) -> Result<GeneratedField> {
    let n = domain.n();
    if width < 2.0 * domain.h() * (1.0 - 1e-12) {
        return Err(invalid("width", "must be at least two grid spacings"));
    }
    let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nu: Vec<f64> = normal.iter().map(|v| v / len).collect();
    let k = plane_generator(n, axes[0], axes[1]);
    let r1 = base.matrix().clone();
    let a = MatrixField::from_fn(domain, |p, e| {
        let t: f64 = (0..n).map(|i| p[i] * nu[i]).sum::<f64>() / width + 0.5;
        let (s, _) = smoother_step(t);
        let taper_value = support_radius.map_or(1.0, |r| taper(norm(p), r).0);
        let m = &r1 * expm(&(&k * (s * taper_value * angle)));
        for i in 0..n {
            for j in 0..n {
                e[i * n + j] = m[(i, j)];
            }
        }
    })?;
    let curl = curl_of_matrix(&a)?;
    Ok(GeneratedField { a, curl })
}

/// Continuum `|Curl A|(B)` of the untapered rotation jump on a ball of
/// radius `radius` whose band lies inside it: `area · |θ| · |K(I − ννᵀ)|_F`.
pub fn rotation_jump_curl_mass(n: usize, radius: f64, axes: [usize; 2], angle: f64, normal: &[f64]) -> f64 {
    let len = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k = plane_generator(n, axes[0], axes[1]);
    let nu = nalgebra::DVector::from_iterator(n, normal.iter().map(|v| v / len));
    let proj = DMatrix::identity(n, n) - &nu * nu.transpose();
    let area = crate::grid::unit_ball_volume(n - 1) * radius.powi(n as i32 - 1);
    area * angle.abs() * (k * proj).norm()
}

pub fn gen_perturbed_rotation(
    domain: &Arc<GridDomain>,
    base: &Rotation,
    strength: f64,
    seed: u64,
    modes: usize,
    support_radius: f64,
) -> Result<MatrixField> {
    let n = domain.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    struct Mode {
        plane: usize,
        amp: f64,
        freq: [f64; 4],
        phase: f64,
    }
    let mut list = Vec::new();
    for plane in 0..planes.len() {
        for _ in 0..modes {
            let mut freq = [0.0; 4];
            for f in freq.iter_mut().take(n) {
                *f = rng.gen_range(-3.0..3.0);
            }
            list.push(Mode {
                plane,
                amp: rng.gen_range(-1.0..1.0) / modes as f64,
                freq,
                phase: rng.gen_range(0.0..2.0 * PI),
            });
        }
    }
    let r0 = base.matrix().clone();
    MatrixField::from_fn(domain, |p, e| {
        let (t, _) = taper(norm(p), support_radius);
        let mut w = DMatrix::zeros(n, n);
        if t > 0.0 {
            for m in &list {
                let arg: f64 = (0..n).map(|k| m.freq[k] * p[k]).sum::<f64>() + m.phase;
                let v = strength * t * m.amp * arg.sin();
                let (a, b) = planes[m.plane];
                w[(a, b)] -= v;
                w[(b, a)] += v;
            }
        }
        let r = &r0 * expm(&w);
        for i in 0..n {
            for j in 0..n {
                e[i * n + j] = r[(i, j)];
            }
        }
    })
}

/// Smooth random `degree`-form: each coefficient is
/// `bump(x)·(c + sin(2 a·x + φ))` with parameters drawn from the seed, and
/// `bump = (1 − |x|²/R²)³₊` when a support radius `R` is given.
pub fn random_smooth_form(
    domain: &Arc<GridDomain>,
    degree: usize,
    seed: u64,
    support_radius: Option<f64>,
) -> Result<FormField> {
    let n = domain.n();
    if degree > n {
        return Err(invalid("degree", format!("{degree} exceeds the dimension {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<(f64, [f64; 4], f64)> = (0..binomial(n, degree))
        .map(|_| {
            let c = rng.gen_range(-1.0..1.0);
            let mut a = [0.0; 4];
            for v in a.iter_mut().take(n) {
                *v = rng.gen_range(-1.0..1.0);
            }
            (c, a, rng.gen_range(-1.0..1.0))
        })
        .collect();
    FormField::from_fn(domain, degree, |p, i| {
        let bump = support_radius.map_or(1.0, |r| {
            let t = norm(p).powi(2) / (r * r);
            if t < 1.0 {
                (1.0 - t).powi(3)
            } else {
                0.0
            }
        });
        let (c, a, phase) = &params[i];
        let arg: f64 = 2.0 * (0..n).map(|k| a[k] * p[k]).sum::<f64>() + phase;
        bump * (c + arg.sin())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dist_so, make_domain, total_variation, Region};

    #[test]
    fn constant_rotation_is_curl_free_and_exact() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let r = Rotation::plane(3, 0, 2, 0.4);
        let g = FamilySpec::ConstantRotation { rotation: r.clone() }.generate(&d).unwrap();
        assert!(d.masked_nodes().iter().all(|&i| g.a.at(i) == *r.matrix()));
        assert_eq!(total_variation(&g.curl, Region::Mask), 0.0);
    }

    #[test]
    fn gradient_is_sampled_analytically() {
        let d = make_domain(3, 9, 1.0).unwrap();
        // q = (x₁²x₂, 0, x₃³)
        let terms = vec![
            Monomial { component: 0, coeff: 1.0, powers: vec![2, 1, 0] },
            Monomial { component: 2, coeff: 1.0, powers: vec![0, 0, 3] },
        ];
        let a = gen_gradient(&d, &DMatrix::identity(3, 3), &terms, 0.5).unwrap();
        let node = d.node_at(&[6, 2, 7]);
        let p = d.point(node);
        let m = a.at(node);
        assert!((m[(0, 0)] - (1.0 + p[0] * p[1])).abs() < 1e-14);
        assert!((m[(0, 1)] - 0.5 * p[0] * p[0]).abs() < 1e-14);
        assert!((m[(2, 2)] - (1.0 + 1.5 * p[2] * p[2])).abs() < 1e-14);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let bad = FamilySpec::ScrewDislocation {
            burgers: 1.0,
            core_radius: 0.3,
            strength: 0.1,
            taper_radius: 0.95,
        };
        assert!(bad.generate(&d).is_err());
        let d2 = make_domain(2, 9, 1.0).unwrap();
        let screw = FamilySpec::ScrewDislocation {
            burgers: 1.0,
            core_radius: 0.3,
            strength: 0.1,
            taper_radius: 0.9,
        };
        assert!(screw.generate(&d2).is_err());
    }

    #[test]
    fn screw_field_at_zero_strength_is_identity() {
        let d = make_domain(3, 17, 1.0).unwrap();
        let g = gen_screw_dislocation(&d, 1.0, 0.25, 0.0, 0.9).unwrap();
        assert!(d.masked_nodes().iter().all(|&i| g.a.at(i) == DMatrix::identity(3, 3)));
    }

    #[test]
    fn analytic_screw_curl_matches_differences() {
        let d = make_domain(3, 33, 1.0).unwrap();
        let s = ScrewDislocation { burgers: 1.0, core_radius: 0.25, strength: 0.2, taper_radius: 0.9 };
        let analytic = s.curl(&d).unwrap();
        let discrete = curl_of_matrix(&s.field(&d).unwrap()).unwrap();
        let tv_a = total_variation(&analytic, Region::Mask);
        let tv_d = total_variation(&discrete, Region::Mask);
        assert!((tv_a / tv_d - 1.0).abs() < 0.05, "{tv_a} vs {tv_d}");
    }

    #[test]
    fn jump_is_rotation_valued() {
        let d = make_domain(3, 17, 1.0).unwrap();
        let g = gen_rotation_jump(&d, &Rotation::identity(3), [0, 1], 0.7, &[1.0, 0.0, 0.0], 0.25, None)
            .unwrap();
        assert!(d.masked_nodes().iter().all(|&i| dist_so(&g.a.at(i)) < 1e-10));
        let same = gen_rotation_jump(&d, &Rotation::identity(3), [0, 1], 0.0, &[1.0, 0.0, 0.0], 0.25, None)
            .unwrap();
        assert!(total_variation(&same.curl, Region::Mask) < 1e-12);
    }

    #[test]
    fn perturbed_rotation_is_seeded_and_rotation_valued() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let base = Rotation::plane(3, 1, 2, 0.3);
        let a = gen_perturbed_rotation(&d, &base, 0.3, 7, 4, 0.9).unwrap();
        let b = gen_perturbed_rotation(&d, &base, 0.3, 7, 4, 0.9).unwrap();
        assert_eq!(a, b);
        assert!(d.masked_nodes().iter().all(|&i| dist_so(&a.at(i)) < 1e-10));
        let zero = gen_perturbed_rotation(&d, &base, 0.0, 7, 4, 0.9).unwrap();
        assert!(d.masked_nodes().iter().all(|&i| zero.at(i) == *base.matrix()));
        assert!(a.sup_norm() <= SUP_BOUND);
    }

    #[test]
    fn random_forms_are_seeded_and_supported() {
        let d = make_domain(3, 9, 1.0).unwrap();
        let a = random_smooth_form(&d, 2, 7, Some(0.7)).unwrap();
        let b = random_smooth_form(&d, 2, 7, Some(0.7)).unwrap();
        let c = random_smooth_form(&d, 2, 8, Some(0.7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for node in 0..d.len() {
            if norm(&d.point(node)) >= 0.7 {
                assert!(a.value_at(node).iter().all(|v| *v == 0.0));
            }
        }
        assert!(random_smooth_form(&d, 4, 0, None).is_err());
    }

    #[test]
    fn rescaling_multiplies_strength() {
        let s = FamilySpec::PerturbedRotation {
            base: Rotation::identity(3),
            strength: 0.2,
            seed: 1,
            modes: 4,
            support_radius: 0.9,
        };
        assert_eq!(rescale_family(&s, 1.0), s);
        assert!((rescale_family(&s, 2.5).strength() - 0.5).abs() < 1e-15);
        let json = serde_json::to_string(&s).unwrap();
        let back: FamilySpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
