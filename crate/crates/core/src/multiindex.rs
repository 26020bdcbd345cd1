//! Increasing multi-indices `α = (α_1 < … < α_r)` labelling the basis
//! `dx^α` of r-forms, enumerated in lexicographic order.

/// Binomial coefficient for the small sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num = 1usize;
    for i in 0..k {
        num = num * (n - i) / (i + 1);
    }
    num
}

/// All increasing multi-indices of length `r` from `0..n`, lexicographic.
pub fn multi_indices(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, r));
    let mut cur = Vec::with_capacity(r);
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    rec(0, n, r, &mut cur, &mut out);
    out
}

/// Position of `alpha` in the lexicographic enumeration of `multi_indices(n, alpha.len())`.
pub fn index_of(n: usize, alpha: &[usize]) -> usize {
    multi_indices(n, alpha.len())
        .iter()
        .position(|a| a.as_slice() == alpha)
        .expect("multi-index must be increasing and in range")
}

/// One term of the interior product `dx^α ⌟ e_axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionTerm {
    /// Component of the input r-form.
    pub input: usize,
    /// Axis contracted against.
    pub axis: usize,
    /// Component of the output (r-1)-form.
    pub output: usize,
    pub sign: f64,
}

/// Table of `(ω ⌟ v)_β = Σ ± v_axis ω_α` for degree `r ≥ 1`.
pub fn contraction_table(n: usize, r: usize) -> Vec<ContractionTerm> {
    assert!(r >= 1 && r <= n);
    let inputs = multi_indices(n, r);
    let outputs = multi_indices(n, r - 1);
    let mut table = Vec::new();
    for (ia, alpha) in inputs.iter().enumerate() {
        for k in 0..r {
            let beta: Vec<usize> = alpha
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &v)| v)
                .collect();
            let ib = outputs.iter().position(|b| *b == beta).unwrap();
            table.push(ContractionTerm {
                input: ia,
                axis: alpha[k],
                output: ib,
                sign: if k % 2 == 0 { 1.0 } else { -1.0 },
            });
        }
    }
    table
}

/// One term of `(dω)_γ = Σ_k (-1)^k ∂_{γ_k} ω_{γ∖γ_k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeTerm {
    pub output: usize,
    pub axis: usize,
    pub input: usize,
    pub sign: f64,
}

/// Table of exterior-derivative terms from degree `r` to `r + 1`.
pub fn derivative_table(n: usize, r: usize) -> Vec<DerivativeTerm> {
    assert!(r < n);
    let outputs = multi_indices(n, r + 1);
    let inputs = multi_indices(n, r);
    let mut table = Vec::new();
    for (ig, gamma) in outputs.iter().enumerate() {
        for k in 0..=r {
            let rest: Vec<usize> = gamma
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &v)| v)
                .collect();
            let ia = inputs.iter().position(|a| *a == rest).unwrap();
            table.push(DerivativeTerm {
                output: ig,
                axis: gamma[k],
                input: ia,
                sign: if k % 2 == 0 { 1.0 } else { -1.0 },
            });
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_binomials() {
        for n in 2..=4 {
            for r in 0..=n {
                assert_eq!(multi_indices(n, r).len(), binomial(n, r));
            }
        }
        assert_eq!(multi_indices(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn two_form_derivative_sign() {
        // a dx^0 + b dx^1 -> (∂_0 b - ∂_1 a) dx^0∧dx^1
        let t = derivative_table(2, 1);
        assert!(t.contains(&DerivativeTerm { output: 0, axis: 0, input: 1, sign: 1.0 }));
        assert!(t.contains(&DerivativeTerm { output: 0, axis: 1, input: 0, sign: -1.0 }));
    }

    #[test]
    fn contraction_of_area_form() {
        // (dx^0∧dx^1) ⌟ v = v_0 dx^1 - v_1 dx^0
        let t = contraction_table(2, 2);
        assert!(t.contains(&ContractionTerm { input: 0, axis: 0, output: 1, sign: 1.0 }));
        assert!(t.contains(&ContractionTerm { input: 0, axis: 1, output: 0, sign: -1.0 }));
    }
}
