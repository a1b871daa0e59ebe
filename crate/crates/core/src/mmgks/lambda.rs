//! Reduced regularized solves and automatic choice of λ.
//!
//! Everything here works on the small projected problem
//! `min ‖R_H z − c‖² + λ‖R_Θ z‖²`, where `c = Q_Hᵀ b` and the part of `b`
//! outside `range(Q_H)` contributes a constant to the residual.

use faer::linalg::solvers::SolveLstsq;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

pub const LOG10_LAMBDA_MIN: f64 = -12.0;
pub const LOG10_LAMBDA_MAX: f64 = 12.0;
const GRID_POINTS: usize = 60;

/// `(R_HᵀR_H + λR_ΘᵀR_Θ) z = R_Hᵀ c` through the stacked least-squares form
/// `[R_H; √λ R_Θ] z ≅ [c; 0]`.
pub fn solve_reduced(r_h: MatRef<'_, f64>, r_theta: MatRef<'_, f64>, c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let k = r_h.ncols();
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("λ = {lambda}")));
    }
    if r_theta.ncols() != k || c.len() != r_h.nrows() {
        return Err(Error::Shape("reduced factors disagree in size".into()));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let (mh, mt) = (r_h.nrows(), r_theta.nrows());
    let sl = lambda.sqrt();
    let stacked = Mat::from_fn(mh + mt, k, |i, j| {
        if i < mh {
            r_h[(i, j)]
        } else {
            sl * r_theta[(i - mh, j)]
        }
    });
    let rhs = Mat::from_fn(mh + mt, 1, |i, _| if i < mh { c[i] } else { 0.0 });
    let qr = stacked.qr();
    let r = qr.R();
    let diag_max = (0..k.min(r.nrows())).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if r.nrows() < k || (0..k).any(|i| r[(i, i)].abs() <= 1e-14 * diag_max) || diag_max == 0.0 {
        return Err(Error::NumericalRank("stacked reduced matrix is singular".into()));
    }
    let z = qr.solve_lstsq(&rhs);
    Ok((0..k).map(|i| z[(i, 0)]).collect())
}

/// Generalized eigen-decomposition of the pencil `(R_HᵀR_H, R_ΘᵀR_Θ)`
/// so that residual and influence trace are cheap for any λ.
#[derive(Clone, Debug)]
pub struct LambdaSpectrum {
    shift: f64,
    rho: Vec<f64>,
    d: Vec<f64>,
    /// Part of `c` outside `range(R_H)`.
    unreachable_sq: f64,
    out_of_space_sq: f64,
    rows: usize,
}

impl LambdaSpectrum {
    /// `b_norm_sq` is `‖b‖²` for the full right-hand side.
    pub fn new(r_h: MatRef<'_, f64>, r_theta: MatRef<'_, f64>, c: &[f64], b_norm_sq: f64) -> Result<Self> {
        let k = r_h.ncols();
        if r_theta.ncols() != k || c.len() != r_h.nrows() {
            return Err(Error::Shape("reduced factors disagree in size".into()));
        }
        let a = r_h.transpose() * r_h;
        let b = r_theta.transpose() * r_theta;
        let (ta, tb) = ((0..k).map(|i| a[(i, i)]).sum::<f64>(), (0..k).map(|i| b[(i, i)]).sum::<f64>());
        let shift = if ta > 0.0 && tb > 0.0 { ta / tb } else { 1.0 };
        let mut s = &a + &b * shift;
        let mut jitter = 0.0;
        let t = loop {
            match s.llt(Side::Lower) {
                Ok(llt) => break llt.L().transpose().to_owned(),
                Err(_) => {
                    let tr = (0..k).map(|i| s[(i, i)]).sum::<f64>().max(1.0);
                    jitter = if jitter == 0.0 { 1e-14 * tr } else { jitter * 100.0 };
                    if jitter > 1e-4 * tr {
                        return Err(Error::NumericalRank("regularized pencil is singular".into()));
                    }
                    for i in 0..k {
                        s[(i, i)] += jitter;
                    }
                }
            }
        };
        // M = T⁻ᵀ A T⁻¹
        let mut x = a.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(t.transpose(), x.as_mut(), faer::Par::Seq);
        let mut mt = x.transpose().to_owned();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(t.transpose(), mt.as_mut(), faer::Par::Seq);
        let msym = Mat::from_fn(k, k, |i, j| 0.5 * (mt[(i, j)] + mt[(j, i)]));
        let eig = msym
            .self_adjoint_eigen(Side::Lower)
            .map_err(|_| Error::NumericalRank("eigensolver failed on reduced pencil".into()))?;
        let u = eig.U();
        let rho: Vec<f64> = (0..k).map(|i| eig.S()[i].clamp(0.0, 1.0)).collect();
        let cc = Mat::from_fn(c.len(), 1, |i, _| c[i]);
        let mut e = r_h.transpose() * &cc;
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(t.transpose(), e.as_mut(), faer::Par::Seq);
        let dm = u.transpose() * &e;
        let d: Vec<f64> = (0..k).map(|i| dm[(i, 0)]).collect();
        let c_norm_sq: f64 = c.iter().map(|v| v * v).sum();
        let reachable: f64 = rho.iter().zip(&d).filter(|(r, _)| **r > 0.0).map(|(r, d)| d * d / r).sum();
        Ok(Self {
            shift,
            rho,
            d,
            unreachable_sq: (c_norm_sq - reachable).max(0.0),
            out_of_space_sq: (b_norm_sq - c_norm_sq).max(0.0),
            rows: c.len(),
        })
    }

    /// `‖R_H z(λ) − c‖²`, the residual inside the projected space.
    pub fn projected_residual_sq(&self, lambda: f64) -> f64 {
        let mu = lambda / self.shift;
        let mut r = self.unreachable_sq;
        for (&rho, &d) in self.rho.iter().zip(&self.d) {
            if rho > 0.0 {
                let f = mu * (1.0 - rho) / (rho + mu * (1.0 - rho));
                r += d * d / rho * f * f;
            }
        }
        r
    }

    /// `‖H V z(λ) − b‖²` including the component of `b` outside the space.
    pub fn residual_sq(&self, lambda: f64) -> f64 {
        self.projected_residual_sq(lambda) + self.out_of_space_sq
    }

    /// Trace of the reduced influence matrix.
    pub fn influence_trace(&self, lambda: f64) -> f64 {
        let mu = lambda / self.shift;
        self.rho
            .iter()
            .map(|&rho| {
                let den = rho + mu * (1.0 - rho);
                if den > 0.0 {
                    rho / den
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// GCV functional of the projected problem, with the out-of-space
    /// residual carried as one extra coordinate.
    pub fn gcv(&self, lambda: f64) -> f64 {
        let den = self.rows as f64 + 1.0 - self.influence_trace(lambda);
        self.residual_sq(lambda) / (den * den).max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// DP target not bracketed, or GCV functional flat.
    pub flagged: bool,
}

pub fn log_grid(points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| LOG10_LAMBDA_MIN + (LOG10_LAMBDA_MAX - LOG10_LAMBDA_MIN) * i as f64 / (points - 1) as f64)
        .collect()
}

/// GCV minimizer: grid scan on `log₁₀λ`, golden-section refinement around
/// every local minimum of the grid, lowest value wins.
pub fn select_lambda_gcv(spec: &LambdaSpectrum) -> LambdaChoice {
    let grid = log_grid(GRID_POINTS);
    let vals: Vec<f64> = grid.iter().map(|&l| spec.gcv(10f64.powf(l))).collect();
    let (lo_v, hi_v) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi_v - lo_v > 1e-14 * hi_v.abs().max(f64::MIN_POSITIVE)) {
        return LambdaChoice {
            lambda: 10f64.powf(0.5 * (LOG10_LAMBDA_MIN + LOG10_LAMBDA_MAX)),
            flagged: true,
        };
    }
    let f = |l: f64| spec.gcv(10f64.powf(l));
    let n = vals.len();
    let mut best = (grid[0], f64::INFINITY);
    for i in 0..n {
        let left = i == 0 || vals[i] <= vals[i - 1];
        let right = i + 1 == n || vals[i] <= vals[i + 1];
        if !(left && right) {
            continue;
        }
        let (l, v) = golden_section(&f, grid[i.saturating_sub(1)], grid[(i + 1).min(n - 1)]);
        let (l, v) = if vals[i] < v { (grid[i], vals[i]) } else { (l, v) };
        if v < best.1 {
            best = (l, v);
        }
    }
    LambdaChoice {
        lambda: 10f64.powf(best.0),
        flagged: false,
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-6 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let l = 0.5 * (a + b);
    (l, f(l))
}

/// Discrepancy principle: bisection on `log₁₀λ` until the residual norm is
/// within 1% of `ηδ`.
pub fn select_lambda_dp(spec: &LambdaSpectrum, delta: f64, eta: f64) -> Result<LambdaChoice> {
    if !(delta > 0.0) || !(eta >= 1.0) {
        return Err(Error::InvalidArgument(format!("δ = {delta}, η = {eta}")));
    }
    let target = eta * delta;
    let res = |l: f64| spec.residual_sq(10f64.powf(l)).sqrt();
    let (mut a, mut b) = (LOG10_LAMBDA_MIN, LOG10_LAMBDA_MAX);
    let (ra, rb) = (res(a), res(b));
    if ra >= target {
        return Ok(LambdaChoice {
            lambda: 10f64.powf(a),
            flagged: (ra - target).abs() > 0.01 * target,
        });
    }
    if rb <= target {
        return Ok(LambdaChoice {
            lambda: 10f64.powf(b),
            flagged: (rb - target).abs() > 0.01 * target,
        });
    }
    let mut mid = 0.5 * (a + b);
    for _ in 0..200 {
        mid = 0.5 * (a + b);
        let r = res(mid);
        if (r - target).abs() <= 0.01 * target {
            break;
        }
        if r < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(LambdaChoice {
        lambda: 10f64.powf(mid),
        flagged: false,
    })
}
