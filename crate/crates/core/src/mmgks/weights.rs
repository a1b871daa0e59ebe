//! Majorization weights for the smoothed ℓ_q penalty.

use crate::error::{Error, Result};

/// Assignment of regularizer rows to groups that share one weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    pub group: Vec<usize>,
    pub n_groups: usize,
}

impl Grouping {
    /// Every row in its own group.
    pub fn ungrouped(n_rows: usize) -> Self {
        Self {
            group: (0..n_rows).collect(),
            n_groups: n_rows,
        }
    }

    pub fn new(group: Vec<usize>) -> Result<Self> {
        let n_groups = group.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_groups];
        group.iter().for_each(|&g| seen[g] = true);
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("group ids must be contiguous".into()));
        }
        Ok(Self { group, n_groups })
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    /// Concatenates groupings of stacked operators, renumbering the groups
    /// of later blocks after those of earlier ones.
    pub fn stack(parts: &[Grouping]) -> Self {
        let mut group = Vec::with_capacity(parts.iter().map(Grouping::len).sum());
        let mut offset = 0;
        for p in parts {
            group.extend(p.group.iter().map(|g| g + offset));
            offset += p.n_groups;
        }
        Self {
            group,
            n_groups: offset,
        }
    }

    fn group_squares(&self, z: &[f64]) -> Vec<f64> {
        let mut sq = vec![0.0; self.n_groups];
        for (&g, v) in self.group.iter().zip(z) {
            sq[g] += v * v;
        }
        sq
    }
}

/// Per-row weights `w` such that `Σ w² z²` is a quadratic tangent majorant
/// of the smoothed penalty at the current `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub epsilon: f64,
    pub q: f64,
}

/// `wᵢ = (zᵢ² + ε²)^{(q−2)/4}`, with `zᵢ²` replaced by the squared group
/// norm when a grouping is supplied.
pub fn update_weights(z: &[f64], epsilon: f64, q: f64, groups: Option<&Grouping>) -> WeightVector {
    let e2 = epsilon * epsilon;
    let expo = (q - 2.0) / 4.0;
    let w = if q == 2.0 {
        vec![1.0; z.len()]
    } else {
        match groups {
            None => z.iter().map(|v| (v * v + e2).powf(expo)).collect(),
            Some(g) => {
                let gw: Vec<f64> = g.group_squares(z).iter().map(|s| (s + e2).powf(expo)).collect();
                g.group.iter().map(|&i| gw[i]).collect()
            }
        }
    };
    WeightVector { w, epsilon, q }
}

/// `(2/q) Σ_g (‖z_g‖² + ε²)^{q/2}`, the penalty the weights majorize.
pub fn smoothed_penalty(z: &[f64], epsilon: f64, q: f64, groups: Option<&Grouping>) -> f64 {
    let e2 = epsilon * epsilon;
    let sum: f64 = match groups {
        None => z.iter().map(|v| (v * v + e2).powf(q / 2.0)).sum(),
        Some(g) => g.group_squares(z).iter().map(|s| (s + e2).powf(q / 2.0)).sum(),
    };
    2.0 / q * sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_and_quadratic_case() {
        let w = update_weights(&[0.0, 0.0], 1e-2, 1.0, None);
        assert!(w.w.iter().all(|&v| (v - 1e-2f64.powf(-0.5)).abs() < 1e-9));
        let w = update_weights(&[3.0, -1.0, 0.0], 1e-2, 2.0, None);
        assert_eq!(w.w, vec![1.0; 3]);
    }

    #[test]
    fn grouped_pair_shares_weight() {
        let g = Grouping::new(vec![0, 0]).unwrap();
        let w = update_weights(&[3.0, 4.0], 1e-3, 1.0, Some(&g));
        let expected = (25.0f64 + 1e-6).powf(-0.25);
        assert_eq!(w.w, vec![expected, expected]);
    }

    #[test]
    fn stacking_renumbers() {
        let s = Grouping::stack(&[Grouping::new(vec![0, 0, 1]).unwrap(), Grouping::ungrouped(2)]);
        assert_eq!(s.group, vec![0, 0, 1, 2, 3]);
        assert_eq!(s.n_groups, 4);
        assert!(Grouping::new(vec![0, 2]).is_err());
    }
}
