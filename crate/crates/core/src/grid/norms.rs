//! L^p, weak-L^p and dyadic BMO over masked nodes.

use super::{GridDomain, NodeField};
use crate::error::{invalid, Result};
use crate::sum::Accumulator;

/// `(Σ |f|^p · cell_volume)^{1/p}` over masked nodes.
pub fn lp_norm<F: NodeField + ?Sized>(f: &F, p: f64) -> Result<f64> {
    lp_from_magnitudes(&f.masked_magnitudes(), f.domain().cell_volume(), p)
}

/// Weak-L^p quasi-norm of the empirical measure of `f` on the mask.
pub fn weak_lp_norm<F: NodeField + ?Sized>(f: &F, p: f64) -> Result<f64> {
    weak_lp_from_magnitudes(&f.masked_magnitudes(), f.domain().cell_volume(), p)
}

/// L^p norm of given pointwise magnitudes, each carrying `cell_volume`.
pub fn lp_from_magnitudes(mags: &[f64], cell_volume: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(invalid("p", format!("{p} must be a finite number ≥ 1")));
    }
    let mut acc = Accumulator::new();
    for &m in mags {
        acc.add(m.abs().powf(p) * cell_volume);
    }
    Ok(acc.value().powf(1.0 / p))
}

/// `max_k f_(k) · (k · cell_volume)^{1/p}` with magnitudes sorted descending.
pub fn weak_lp_from_magnitudes(mags: &[f64], cell_volume: f64, p: f64) -> Result<f64> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(invalid("p", format!("{p} must be a finite number > 1")));
    }
    let mut sorted: Vec<f64> = mags.iter().map(|m| m.abs()).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, f)| f * ((k + 1) as f64 * cell_volume).powf(1.0 / p))
        .fold(0.0, f64::max))
}

/// Smallest power of two at least `res`: side of the padded dyadic grid.
pub fn padded_side(res: usize) -> usize {
    res.next_power_of_two()
}

/// Dyadic BMO seminorm: the largest mean deviation `⨍_Q |f − f_Q|` over
/// dyadic cubes of the padded index grid with side at least two nodes.
/// Means are taken over the masked nodes of each cube; empty cubes are
/// skipped.
pub fn bmo_seminorm<F: NodeField + ?Sized>(f: &F) -> f64 {
    let d = f.domain();
    let comps = f.num_components();
    let mut best = 0.0f64;
    let mut side = padded_side(d.res());
    while side >= 2 {
        let cubes = cube_bins(d, side);
        let per_axis = padded_side(d.res()) / side;
        let count = per_axis.pow(d.n() as u32);
        let mut sums = vec![Accumulator::new(); count * comps];
        let mut counts = vec![0usize; count];
        for (&node, &cube) in d.masked_nodes().iter().zip(&cubes) {
            counts[cube] += 1;
            for c in 0..comps {
                sums[cube * comps + c].add(f.component(node, c));
            }
        }
        let means: Vec<f64> = sums
            .iter()
            .enumerate()
            .map(|(i, s)| s.value() / counts[i / comps].max(1) as f64)
            .collect();
        let mut dev = vec![Accumulator::new(); count];
        for (&node, &cube) in d.masked_nodes().iter().zip(&cubes) {
            let mut sq = 0.0;
            for c in 0..comps {
                sq += (f.component(node, c) - means[cube * comps + c]).powi(2);
            }
            dev[cube].add(sq.sqrt());
        }
        for (acc, &k) in dev.iter().zip(&counts) {
            if k > 0 {
                best = best.max(acc.value() / k as f64);
            }
        }
        side /= 2;
    }
    best
}

/// Index of the dyadic cube of the given side holding each masked node.
fn cube_bins(d: &GridDomain, side: usize) -> Vec<usize> {
    let per_axis = padded_side(d.res()) / side;
    d.masked_nodes()
        .iter()
        .map(|&node| {
            let m = d.multi_index(node);
            (0..d.n()).fold(0, |acc, k| acc * per_axis + m[k] / side)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_domain, unit_ball_volume, FormField};

    #[test]
    fn constant_field_norms() {
        let d = make_domain(3, 33, 1.0).unwrap();
        let one = FormField::scalar(&d, vec![1.0; d.len()]).unwrap();
        let l2 = lp_norm(&one, 2.0).unwrap();
        assert!((l2 / unit_ball_volume(3).sqrt() - 1.0).abs() < 0.05);
        let m = d.masked_volume();
        assert!((weak_lp_norm(&one, 1.7).unwrap() - m.powf(1.0 / 1.7)).abs() < 1e-12);
        assert_eq!(bmo_seminorm(&one), 0.0);
        assert!(lp_norm(&one, 0.5).is_err());
        assert!(weak_lp_norm(&one, 1.0).is_err());
    }

    fn riesz(d: &std::sync::Arc<GridDomain>) -> FormField {
        let f = (0..d.len())
            .map(|i| {
                let r = crate::grid::norm(&d.point(i));
                if r > 0.0 { r.powi(-2) } else { 0.0 }
            })
            .collect();
        FormField::scalar(d, f).unwrap()
    }

    #[test]
    fn weak_norm_of_riesz_profile_matches_lattice_shells() {
        // The exact supremum over sampled |x|^{-2} is attained on the first
        // lattice shells; enumerate them independently.
        let d = make_domain(3, 17, 1.0).unwrap();
        let got = weak_lp_norm(&riesz(&d), 1.5).unwrap();
        let half = (d.res() / 2) as i64;
        let mut sq: Vec<i64> = Vec::new();
        for i in -half..=half {
            for j in -half..=half {
                for k in -half..=half {
                    let s = i * i + j * j + k * k;
                    if s > 0 && s <= half * half {
                        sq.push(s);
                    }
                }
            }
        }
        sq.sort_unstable();
        let h = d.h();
        let mut oracle = 0.0f64;
        for (idx, &s) in sq.iter().enumerate() {
            if idx + 1 == sq.len() || sq[idx + 1] != s {
                let level = 1.0 / (s as f64 * h * h);
                oracle = oracle.max(level * ((idx + 1) as f64 * h.powi(3)).powf(1.0 / 1.5));
            }
        }
        assert!((got - oracle).abs() < 1e-12 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn riesz_level_sets_match_analytic_volume() {
        // t·|{f > t}|^{2/3} = ω_3^{2/3} for every t ≥ 1 in the continuum.
        let d = make_domain(3, 33, 1.0).unwrap();
        let f = riesz(&d);
        let expected = unit_ball_volume(3).powf(1.0 / 1.5);
        for radius in [0.5f64, 0.7, 0.9] {
            let t = radius.powi(-2);
            let count = f.masked_magnitudes().iter().filter(|&&v| v >= t).count();
            let got = t * (count as f64 * d.cell_volume()).powf(1.0 / 1.5);
            assert!((got / expected - 1.0).abs() < 0.05, "{radius}: {got} vs {expected}");
        }
    }
}
