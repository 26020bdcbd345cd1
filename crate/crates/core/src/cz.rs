//! Calderón–Zygmund decomposition on the node grid and the level-set
//! diagnostics built on it.
//!
//! Cubes are dyadic in the node index grid padded to a power of two. A cube
//! of side `s` nodes has measure `s^n · cell_volume`; nodes outside the mask
//! (and padding) count with `F = 0`, so a child always has exactly `2^{−n}`
//! of its parent's measure.

use serde::Serialize;

use crate::critical_exponent;
use crate::error::{invalid, Error, Result};
use crate::grid::norms::{bmo_seminorm, padded_side};
use crate::grid::{GridDomain, NodeField, MAX_DIM};
use crate::quadrature::adaptive_gk;
use crate::sum::{compensated_sum, Accumulator};

/// Relative slack for re-verifying inequalities that hold exactly in exact
/// arithmetic.
const SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadicCube {
    /// Lowest node index along each axis (may exceed the grid for the
    /// enlarged top cube).
    pub origin: [usize; MAX_DIM],
    /// Side length in nodes.
    pub side: usize,
    pub measure: f64,
    /// Mean of `F` over the cube.
    pub mean: f64,
    /// Masked nodes inside the cube.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzChecks {
    pub disjoint: bool,
    /// `2^{−n}Λ^p < ⨍_Q F ≤ Λ^p` on every cube.
    pub mean_bounds: bool,
    /// `g ≤ 2^{−n}Λ^p` everywhere.
    pub good_bound: bool,
    /// `|∪Q| < 2^n Λ^{−p} ∫F`.
    pub union_bound: bool,
    /// `|⨍_Q f| ≤ Λ` on every cube, when the vector field behind `F = |f|^p`
    /// is known.
    pub jensen: Option<bool>,
}

impl CzChecks {
    pub fn all_hold(&self) -> bool {
        self.disjoint && self.mean_bounds && self.good_bound && self.union_bound && self.jensen != Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzDecomposition {
    pub level: f64,
    pub p: f64,
    pub threshold: f64,
    pub cubes: Vec<DyadicCube>,
    /// `F` off the cubes, zero on them.
    #[serde(skip)]
    pub good: Vec<f64>,
    pub union_measure: f64,
    pub integral: f64,
    pub checks: CzChecks,
}

/// JSON-friendly summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CzSummary {
    pub level: f64,
    pub p: f64,
    pub cube_count: usize,
    pub union_measure: f64,
    pub integral: f64,
    pub checks: CzChecks,
}

impl CzDecomposition {
    pub fn summary(&self) -> CzSummary {
        CzSummary {
            level: self.level,
            p: self.p,
            cube_count: self.cubes.len(),
            union_measure: self.union_measure,
            integral: self.integral,
            checks: self.checks.clone(),
        }
    }
}

/// Decomposes a nonnegative node function `F` at level `Λ`.
pub fn cz_decompose(domain: &GridDomain, f: &[f64], level: f64, p: f64) -> Result<CzDecomposition> {
    if f.len() != domain.len() {
        return Err(invalid("F", "one value per node is required"));
    }
    if !(level > 1.0) || !level.is_finite() {
        return Err(invalid("level", format!("Λ = {level} must exceed 1")));
    }
    if !(p >= 1.0) {
        return Err(invalid("p", format!("{p} must be at least 1")));
    }
    for &node in domain.masked_nodes() {
        if !(f[node] >= 0.0) {
            return Err(invalid("F", format!("negative or non-finite value at node {node}")));
        }
    }
    let n = domain.n();
    let cv = domain.cell_volume();
    let threshold = level.powf(p) / 2f64.powi(n as i32);
    let masked = domain.masked_nodes();
    let integral = compensated_sum(masked.iter().map(|&i| f[i] * cv));
    let top = padded_side(domain.res());

    let mut cubes = Vec::new();
    let cube_measure = |side: usize| (side as f64).powi(n as i32) * cv;
    // Enlarge the top cube until its mean drops to the threshold.
    let mut side = top;
    while integral / cube_measure(side) > threshold {
        side *= 2;
    }
    if side > top {
        let s = side / 2;
        cubes.push(DyadicCube {
            origin: [0; MAX_DIM],
            side: s,
            measure: cube_measure(s),
            mean: integral / cube_measure(s),
            nodes: masked.to_vec(),
        });
    } else {
        let mut stack = vec![([0usize; MAX_DIM], top, masked.to_vec())];
        while let Some((origin, side, nodes)) = stack.pop() {
            if side == 1 {
                continue;
            }
            let half = side / 2;
            let mut children: Vec<Vec<usize>> = vec![Vec::new(); 1 << n];
            for &node in &nodes {
                let m = domain.multi_index(node);
                let c = (0..n).fold(0, |acc, k| acc * 2 + usize::from(m[k] >= origin[k] + half));
                children[c].push(node);
            }
            // Children in reverse so the stack pops them in order.
            for c in (0..1usize << n).rev() {
                let members = std::mem::take(&mut children[c]);
                let mass = compensated_sum(members.iter().map(|&i| f[i] * cv));
                if mass == 0.0 {
                    continue;
                }
                let mut child_origin = origin;
                for k in 0..n {
                    if c >> (n - 1 - k) & 1 == 1 {
                        child_origin[k] += half;
                    }
                }
                let mean = mass / cube_measure(half);
                if mean > threshold {
                    cubes.push(DyadicCube {
                        origin: child_origin,
                        side: half,
                        measure: cube_measure(half),
                        mean,
                        nodes: members,
                    });
                } else {
                    stack.push((child_origin, half, members));
                }
            }
        }
    }
    cubes.sort_by(|a, b| a.origin.cmp(&b.origin).then(a.side.cmp(&b.side)));

    let mut good = f.to_vec();
    for node in 0..domain.len() {
        if !domain.is_masked(node) {
            good[node] = 0.0;
        }
    }
    for cube in &cubes {
        for &node in &cube.nodes {
            good[node] = 0.0;
        }
    }
    let union_measure = compensated_sum(cubes.iter().map(|c| c.measure));
    let checks = verify(domain, f, &good, &cubes, level, p, integral, union_measure);
    Ok(CzDecomposition {
        level,
        p,
        threshold,
        cubes,
        good,
        union_measure,
        integral,
        checks,
    })
}

/// Decomposes `F = |f|^p` and also checks the Jensen bound on the cube
/// means of `f` itself.
pub fn cz_decompose_field<F: NodeField + ?Sized>(field: &F, level: f64, p: f64) -> Result<CzDecomposition> {
    let d = field.domain();
    let mut values = vec![0.0; d.len()];
    for &node in d.masked_nodes() {
        values[node] = field.magnitude(node).powf(p);
    }
    let mut out = cz_decompose(d, &values, level, p)?;
    let comps = field.num_components();
    let jensen = out.cubes.iter().all(|cube| {
        let mut acc = vec![Accumulator::new(); comps];
        for &node in &cube.nodes {
            for (c, a) in acc.iter_mut().enumerate() {
                a.add(field.component(node, c) * d.cell_volume());
            }
        }
        let mean = acc.iter().map(|a| (a.value() / cube.measure).powi(2)).sum::<f64>().sqrt();
        mean <= level * (1.0 + SLACK)
    });
    out.checks.jensen = Some(jensen);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn verify(
    domain: &GridDomain,
    f: &[f64],
    good: &[f64],
    cubes: &[DyadicCube],
    level: f64,
    p: f64,
    integral: f64,
    union_measure: f64,
) -> CzChecks {
    let n = domain.n();
    let threshold = level.powf(p) / 2f64.powi(n as i32);
    let disjoint = cubes.iter().enumerate().all(|(i, a)| {
        cubes[i + 1..].iter().all(|b| {
            (0..n).any(|k| a.origin[k] + a.side <= b.origin[k] || b.origin[k] + b.side <= a.origin[k])
        })
    });
    let mean_bounds = cubes.iter().all(|c| {
        let mass = compensated_sum(c.nodes.iter().map(|&i| f[i] * domain.cell_volume()));
        let mean = mass / c.measure;
        mean > threshold && mean <= level.powf(p) * (1.0 + SLACK)
    });
    let good_bound = domain
        .masked_nodes()
        .iter()
        .all(|&i| good[i] <= threshold * (1.0 + SLACK));
    let bound = 2f64.powi(n as i32) * integral / level.powf(p);
    let union_bound = union_measure < bound || (cubes.is_empty() && union_measure == 0.0);
    CzChecks {
        disjoint,
        mean_bounds,
        good_bound,
        union_bound,
        jensen: None,
    }
}

/// The linear continuation of `t ↦ t^{1*}` beyond `Λ`.
///
/// Continuous, nondecreasing and convex; it lies below `t^{1*}` because the
/// continuation is the tangent line at `Λ`.
pub fn psi(t: f64, level: f64, n: usize) -> f64 {
    let q = critical_exponent(n);
    if t <= level {
        t.powf(q)
    } else {
        q * level.powf(q - 1.0) * t + (1.0 - q) * level.powf(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSplit {
    pub level: f64,
    pub p: f64,
    /// `∫_{|f|>Λ} |f|^p`.
    pub i: f64,
    /// `∫_Λ^∞ p λ^{p−1} |{|f|>λ}| dλ`, the layer-cake remainder.
    pub i_prime: f64,
    /// The same integral without the factor `p`.
    pub i_prime_unscaled: f64,
    /// `∫_{|f|≤Λ} |f|^p`.
    pub ii: f64,
    /// `Λ^p |{|f| > Λ}|`.
    pub level_term: f64,
    /// `|I − (Λ^p|{|f|>Λ}| + I′)| / max(I, tiny)`.
    pub identity_gap: f64,
    pub bmo: f64,
}

/// Splits `∫|f|^p` at level `Λ`.
pub fn split_i_ii<F: NodeField + ?Sized>(field: &F, level: f64, p: f64) -> Result<LevelSplit> {
    if !(level > 1.0) {
        return Err(invalid("level", format!("Λ = {level} must exceed 1")));
    }
    let d = field.domain();
    let cv = d.cell_volume();
    let mags = field.masked_magnitudes();
    let mut i = Accumulator::new();
    let mut ii = Accumulator::new();
    let mut ip = Accumulator::new();
    let mut above = 0usize;
    let lp = level.powf(p);
    for &m in &mags {
        if m > level {
            i.add(m.powf(p) * cv);
            ip.add((m.powf(p) - lp) * cv);
            above += 1;
        } else {
            ii.add(m.powf(p) * cv);
        }
    }
    let level_term = lp * above as f64 * cv;
    let (i, ii, i_prime) = (i.value(), ii.value(), ip.value());
    let identity_gap = (i - level_term - i_prime).abs() / i.max(f64::MIN_POSITIVE);
    Ok(LevelSplit {
        level,
        p,
        i,
        i_prime,
        i_prime_unscaled: i_prime / p,
        ii,
        level_term,
        identity_gap,
        bmo: bmo_seminorm(field),
    })
}

/// `∫_Λ^∞ p λ^{p−1} |{f > λ}| dλ` summed piece by piece over the sorted
/// empirical distribution, where the survival function is constant.
pub fn layer_cake_remainder(mags: &[f64], cell_volume: f64, level: f64, p: f64) -> f64 {
    let mut sorted: Vec<f64> = mags.iter().copied().filter(|&m| m > level).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut acc = Accumulator::new();
    // Between consecutive values v_{k+1} < λ < v_k exactly k+1 samples exceed λ.
    for k in 0..sorted.len() {
        let upper = sorted[k];
        let lower = sorted.get(k + 1).copied().unwrap_or(level);
        acc.add((k + 1) as f64 * cell_volume * (upper.powf(p) - lower.powf(p)));
    }
    acc.value()
}

/// Smallest level (on a doubling-then-bisection search) with
/// `I′ ≤ fraction · ∫|f|^p`.
pub fn find_level<F: NodeField + ?Sized>(field: &F, p: f64, fraction: f64) -> Result<f64> {
    let d = field.domain();
    let mags = field.masked_magnitudes();
    let total = compensated_sum(mags.iter().map(|m| m.powf(p) * d.cell_volume()));
    let ok = |level: f64| {
        let rem = compensated_sum(
            mags.iter()
                .filter(|&&m| m > level)
                .map(|m| (m.powf(p) - level.powf(p)) * d.cell_volume()),
        );
        rem <= fraction * total
    };
    let mut hi = 2.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("no level satisfies the remainder bound".into()));
        }
    }
    let mut lo = 1.0;
    if ok(lo + 1e-12) {
        return Ok(lo + 1e-12);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCheck {
    pub x: f64,
    pub q: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
}

/// `∫_x^∞ λ^q e^{−λ} dλ ≤ e^{−x}(1 + x)` for `q ≤ 1`, `x ≥ 1`.
pub fn tail_integral_check(x: f64, q: f64) -> Result<TailCheck> {
    if !(q <= 1.0) {
        return Err(invalid("q", format!("{q} exceeds 1")));
    }
    if !(x >= 1.0) || !x.is_finite() {
        return Err(invalid("x", format!("{x} is below 1")));
    }
    // λ = x + t/(1−t) maps [0, 1) onto [x, ∞).
    let lhs = adaptive_gk(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let lam = x + t / (1.0 - t);
            lam.powf(q) * (-lam).exp() / (1.0 - t).powi(2)
        },
        0.0,
        1.0,
        1e-15,
    );
    let rhs = (-x).exp() * (1.0 + x);
    if lhs > rhs * (1.0 + SLACK) {
        return Err(Error::Invariant(format!(
            "tail estimate fails at x = {x}, q = {q}: {lhs} > {rhs}"
        )));
    }
    Ok(TailCheck {
        x,
        q,
        lhs,
        rhs,
        margin: rhs - lhs,
    })
}
