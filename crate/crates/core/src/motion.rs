//! Linearized motion operators.
//!
//! `M(s)` pulls frame `t+1` back onto frame `t`: row `r` of `M(s) u(t+1)`
//! reads `u(t+1)` at `r + s(r)`. The block operators stack the pairwise
//! residuals `u(t) − M(s(t)) u(t+1)` and `u(t+1) − M(s′(t+1)) u(t)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::operators::{vstack, SparseOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MotionEncoding {
    /// Nearest-pixel permutation with clipping.
    Rounding,
    #[default]
    Bilinear,
}

/// Single unit entry per row at the rounded, clipped displaced pixel.
pub fn motion_matrix_rounding(s: &FlowField) -> SparseOperator {
    let (n_x, n_y) = (s.n_x, s.n_y);
    let rows = (0..n_x * n_y)
        .map(|p| {
            let (x, y) = ((p % n_x) as f64, (p / n_x) as f64);
            let tx = (x + s.s_x[p]).round().clamp(0.0, (n_x - 1) as f64) as usize;
            let ty = (y + s.s_y[p]).round().clamp(0.0, (n_y - 1) as f64) as usize;
            vec![(tx + n_x * ty, 1.0)]
        })
        .collect();
    SparseOperator::from_rows(n_x * n_y, rows)
}

fn axis_weights(pos: f64, n: usize) -> [(usize, f64); 2] {
    if n == 1 {
        return [(0, 1.0), (0, 0.0)];
    }
    let c = pos.clamp(0.0, (n - 1) as f64);
    let i0 = (c.floor() as usize).min(n - 2);
    let f = c - i0 as f64;
    [(i0, 1.0 - f), (i0 + 1, f)]
}

/// Bilinear interpolation weights at `r + s(r)`, coordinates clamped to the
/// grid so the four-point stencil always exists.
pub fn motion_matrix_bilinear(s: &FlowField) -> SparseOperator {
    let (n_x, n_y) = (s.n_x, s.n_y);
    let rows = (0..n_x * n_y)
        .map(|p| {
            let (x, y) = ((p % n_x) as f64, (p / n_x) as f64);
            let wx = axis_weights(x + s.s_x[p], n_x);
            let wy = axis_weights(y + s.s_y[p], n_y);
            let mut row = Vec::with_capacity(4);
            for &(iy, fy) in &wy {
                for &(ix, fx) in &wx {
                    let w = fx * fy;
                    if w > 0.0 {
                        row.push((ix + n_x * iy, w));
                    }
                }
            }
            row
        })
        .collect();
    SparseOperator::from_rows(n_x * n_y, rows)
}

pub fn motion_matrix(s: &FlowField, encoding: MotionEncoding) -> SparseOperator {
    match encoding {
        MotionEncoding::Rounding => motion_matrix_rounding(s),
        MotionEncoding::Bilinear => motion_matrix_bilinear(s),
    }
}

fn check_flows(flows: &[FlowField], n_t: usize) -> Result<usize> {
    if n_t < 2 || flows.len() != n_t - 1 {
        return Err(Error::Shape(format!(
            "{} flows for {n_t} frames (expected n_t − 1)",
            flows.len()
        )));
    }
    let n_s = flows[0].n_x * flows[0].n_y;
    if flows.iter().any(|f| f.n_x * f.n_y != n_s) {
        return Err(Error::Shape("flows of differing size".into()));
    }
    Ok(n_s)
}

/// Assembles a block-bidiagonal operator whose block row `t` holds
/// `left(t)` in column block `t` and `right(t)` in column block `t+1`.
fn bidiagonal(
    n_s: usize,
    n_t: usize,
    blocks: Vec<(SparseOperator, SparseOperator)>,
) -> SparseOperator {
    let mut rows = Vec::with_capacity((n_t - 1) * n_s);
    for (t, (left, right)) in blocks.iter().enumerate() {
        for i in 0..n_s {
            let (lc, lv) = left.row(i);
            let (rc, rv) = right.row(i);
            let mut row = Vec::with_capacity(lc.len() + rc.len());
            row.extend(lc.iter().zip(lv).map(|(&c, &v)| (c + t * n_s, v)));
            row.extend(rc.iter().zip(rv).map(|(&c, &v)| (c + (t + 1) * n_s, v)));
            rows.push(row);
        }
    }
    SparseOperator::from_rows(n_t * n_s, rows)
}

/// `M̄` with block rows `[I, −M(s(t))]`, from the forward flows
/// `s(1..n_t−1)`.
pub fn assemble_mbar(flows: &[FlowField], n_t: usize, encoding: MotionEncoding) -> Result<SparseOperator> {
    let n_s = check_flows(flows, n_t)?;
    let blocks = flows
        .par_iter()
        .map(|s| (SparseOperator::identity(n_s), motion_matrix(s, encoding).scaled(-1.0)))
        .collect();
    Ok(bidiagonal(n_s, n_t, blocks))
}

/// `M̄′` with block rows `[−M(s′(t+1)), I]`, from the reverse flows
/// `s′(2..n_t)`.
pub fn assemble_mbar_prime(
    reverse_flows: &[FlowField],
    n_t: usize,
    encoding: MotionEncoding,
) -> Result<SparseOperator> {
    let n_s = check_flows(reverse_flows, n_t)?;
    let blocks = reverse_flows
        .par_iter()
        .map(|s| (motion_matrix(s, encoding).scaled(-1.0), SparseOperator::identity(n_s)))
        .collect();
    Ok(bidiagonal(n_s, n_t, blocks))
}

/// `M̂ = [M̄; M̄′]`.
pub fn assemble_mhat(mbar: &SparseOperator, mbar_prime: &SparseOperator) -> Result<SparseOperator> {
    vstack(&[mbar.clone(), mbar_prime.clone()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n_x: usize, n_y: usize, sx: f64, sy: f64) -> FlowField {
        FlowField {
            n_x,
            n_y,
            s_x: vec![sx; n_x * n_y],
            s_y: vec![sy; n_x * n_y],
        }
    }

    #[test]
    fn zero_flow_is_identity() {
        let s = FlowField::zeros(4, 3);
        assert_eq!(motion_matrix_rounding(&s), SparseOperator::identity(12));
        assert_eq!(motion_matrix_bilinear(&s), SparseOperator::identity(12));
    }

    #[test]
    fn unit_shift_on_three_by_three() {
        let m = motion_matrix_rounding(&uniform(3, 3, 1.0, 0.0));
        for p in 0..9 {
            let (x, y) = (p % 3, p / 3);
            let target = (x + 1).min(2) + 3 * y;
            assert_eq!(m.row(p), (&[target][..], &[1.0][..]));
        }
    }

    #[test]
    fn half_pixel_weights() {
        let mut s = FlowField::zeros(4, 4);
        let p = 1 + 4 * 1;
        s.s_y[p] = 0.5;
        let m = motion_matrix_bilinear(&s);
        assert_eq!(m.row(p), (&[p, p + 4][..], &[0.5, 0.5][..]));
    }

    #[test]
    fn integer_bilinear_equals_rounding() {
        let mut s = FlowField::zeros(5, 6);
        for p in 0..30 {
            s.s_x[p] = ((p * 7) % 5) as f64 - 2.0;
            s.s_y[p] = ((p * 3) % 4) as f64 - 1.0;
        }
        assert_eq!(motion_matrix_bilinear(&s), motion_matrix_rounding(&s));
    }

    #[test]
    fn mbar_shapes() {
        let s = vec![FlowField::zeros(3, 3)];
        let mbar = assemble_mbar(&s, 2, MotionEncoding::Rounding).unwrap();
        assert_eq!(mbar.shape(), (9, 18));
        let u: Vec<f64> = (0..9).map(f64::from).chain((0..9).map(f64::from)).collect();
        assert!(mbar.multiply(&u).iter().all(|&v| v == 0.0));
        assert!(assemble_mbar(&s, 3, MotionEncoding::Rounding).is_err());
        let flows = vec![FlowField::zeros(3, 3); 3];
        let a = assemble_mbar(&flows, 4, MotionEncoding::Bilinear).unwrap();
        let b = assemble_mbar_prime(&flows, 4, MotionEncoding::Bilinear).unwrap();
        assert_eq!(assemble_mhat(&a, &b).unwrap().shape(), (54, 36));
    }
}
