use std::f64::consts::PI;

use nalgebra::DMatrix;
use rigid_core::fields::{gen_rotation_jump, rotation_jump_curl_mass, taper, ScrewDislocation};
use rigid_core::grid::{dist_so, make_domain, norm, total_variation, weak_lp_norm, FormField, Region};
use rigid_core::{Point, Rotation};

fn screw() -> ScrewDislocation {
    ScrewDislocation {
        burgers: 1.0,
        core_radius: 0.25,
        strength: 0.3,
        taper_radius: 0.9,
    }
}

/// Midpoint rule over `m^3` sub-cubes of [−1, 1]^3 restricted to the ball.
fn ball_integral(m: usize, f: impl Fn(&Point) -> f64) -> f64 {
    let h = 2.0 / m as f64;
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let p = [
                    -1.0 + (i as f64 + 0.5) * h,
                    -1.0 + (j as f64 + 0.5) * h,
                    -1.0 + (k as f64 + 0.5) * h,
                    0.0,
                ];
                if norm(&p) <= 1.0 {
                    sum += f(&p);
                }
            }
        }
    }
    sum * h.powi(3)
}

#[test]
fn screw_curl_mass_matches_fine_quadrature() {
    let s = screw();
    let d = make_domain(3, 33, 1.0).unwrap();
    let tv = total_variation(&s.curl(&d).unwrap(), Region::Mask);
    let fine = ball_integral(160, |p| {
        let c = s.curl_at(p, true, true);
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
    });
    assert!((tv / fine - 1.0).abs() < 0.05, "grid {tv} vs quadrature {fine}");
}

#[test]
fn screw_core_flux_is_the_burgers_line() {
    // Inside the core the density is εbτ/(π r_c²) over a disk of area π r_c²,
    // so its mass is εb∫τ along the axis up to the variation of τ across the core.
    let s = screw();
    let d = make_domain(3, 33, 1.0).unwrap();
    let line: f64 = (0..2000)
        .map(|i| {
            let z = -1.0 + (i as f64 + 0.5) * 0.001;
            taper(z.abs(), s.taper_radius).0 * 0.001
        })
        .sum::<f64>()
        * s.strength
        * s.burgers;
    let fine = ball_integral(200, |p| s.curl_at(p, true, false)[0].abs());
    assert!((fine / line - 1.0).abs() < 0.03, "quadrature {fine} vs line {line}");
    // On the grid the core disk of radius 4h holds 45 nodes against 16π ≈ 50.3.
    let core = total_variation(&s.density(&d, true, false).unwrap(), Region::Mask);
    assert!((core / line - 1.0).abs() < 0.15, "core {core} vs line {line}");
    let ideal = s.idealized(&d).unwrap().singular_only().unwrap();
    let seg = total_variation(&ideal, Region::Mask);
    assert!((seg / line - 1.0).abs() < 0.02, "segments {seg} vs line {line}");
    // The return flux is not small next to the core line.
    let ret = total_variation(&s.density(&d, false, true).unwrap(), Region::Mask);
    assert!(ret > 0.3 * line);
}

#[test]
fn screw_circulation_is_the_burgers_vector() {
    let s = screw();
    let d = make_domain(3, 33, 1.0).unwrap();
    let a = s.field(&d).unwrap();
    let row3: Vec<FormField> = a.rows();
    let m = 800;
    let mut circ = 0.0;
    for i in 0..m {
        let t0 = 2.0 * PI * i as f64 / m as f64;
        let t1 = 2.0 * PI * (i + 1) as f64 / m as f64;
        let tm = 0.5 * (t0 + t1);
        let p = [0.5 * tm.cos(), 0.5 * tm.sin(), 0.0, 0.0];
        let w = row3[2].interpolate(&p);
        let dl = [0.5 * (t1.cos() - t0.cos()), 0.5 * (t1.sin() - t0.sin())];
        circ += w[0] * dl[0] + w[1] * dl[1];
    }
    let want = s.strength * s.burgers * taper(0.5, s.taper_radius).0;
    assert!((circ / want - 1.0).abs() < 0.02, "circulation {circ} vs {want}");
}

#[test]
fn jump_curl_mass_approaches_the_sharp_interface_value() {
    let d = make_domain(3, 33, 1.0).unwrap();
    let nu = [1.0, 0.3, 0.2];
    let want = rotation_jump_curl_mass(3, 1.0, [0, 1], 0.6, &nu);
    for w in [0.25, 0.125] {
        let g = gen_rotation_jump(&d, &Rotation::identity(3), [0, 1], 0.6, &nu, w, None).unwrap();
        let tv = total_variation(&g.curl, Region::Mask);
        assert!((tv / want - 1.0).abs() < 0.15, "width {w}: {tv} vs {want}");
    }
}

/// Minimizes |M − R| over a grid of Euler angles, then refines by coordinate
/// search.
fn brute_force_dist(m: &DMatrix<f64>) -> f64 {
    let rot = |a: f64, b: f64, c: f64| {
        Rotation::plane(3, 0, 1, a).matrix() * Rotation::plane(3, 1, 2, b).matrix() * Rotation::plane(3, 0, 1, c).matrix()
    };
    let f = |v: &[f64; 3]| (m - rot(v[0], v[1], v[2])).norm();
    let steps = 36;
    let mut best = ([0.0; 3], f64::INFINITY);
    for i in 0..steps {
        for j in 0..=steps / 2 {
            for k in 0..steps {
                let v = [
                    2.0 * PI * i as f64 / steps as f64,
                    PI * j as f64 / (steps / 2) as f64,
                    2.0 * PI * k as f64 / steps as f64,
                ];
                let val = f(&v);
                if val < best.1 {
                    best = (v, val);
                }
            }
        }
    }
    let mut step = 0.1;
    while step > 1e-12 {
        let mut moved = false;
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut v = best.0;
                v[axis] += sign * step;
                let val = f(&v);
                if val < best.1 {
                    best = (v, val);
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best.1
}

#[test]
fn distance_to_rotations_agrees_with_brute_force() {
    let two = DMatrix::identity(3, 3) * 2.0;
    assert!((dist_so(&two) - 3f64.sqrt()).abs() < 1e-8);
    assert!((brute_force_dist(&two) - 3f64.sqrt()).abs() < 1e-8);
    let reflect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, -1.0]));
    assert!((dist_so(&reflect) - 2.0).abs() < 1e-8);
    assert!((brute_force_dist(&reflect) - 2.0).abs() < 1e-8);
    let m = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.5, 0.9, 0.1, -0.4, 0.2, 0.7, 1.1]);
    assert!((dist_so(&m) - brute_force_dist(&m)).abs() < 1e-8);
}

#[test]
fn weak_norm_of_an_indicator_is_its_measure_power() {
    let d = make_domain(3, 17, 1.0).unwrap();
    let vals: Vec<f64> = (0..d.len()).map(|i| if d.point(i)[2] > 0.3 { 1.0 } else { 0.0 }).collect();
    let count = d.masked_nodes().iter().filter(|&&i| vals[i] == 1.0).count() as f64;
    let f = FormField::scalar(&d, vals).unwrap();
    for p in [1.5, 2.0, 3.0] {
        let want = (count * d.cell_volume()).powf(1.0 / p);
        assert!((weak_lp_norm(&f, p).unwrap() - want).abs() < 1e-12);
    }
}
