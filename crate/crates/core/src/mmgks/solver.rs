//! Majorization–minimization in a generalized Krylov subspace.

use std::io::Write;
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use super::gkb::gkb_seed;
use super::lambda::{select_lambda_dp, select_lambda_gcv, solve_reduced, LambdaChoice, LambdaSpectrum};
use super::weights::{smoothed_penalty, update_weights, Grouping};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::operators::SparseOperator;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaRule {
    Fixed(f64),
    Gcv,
    /// Residual target `η·δ`.
    Discrepancy { delta: f64, eta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothing {
    /// Fraction of the dynamic range of `Θu⁽⁰⁾`.
    Relative(f64),
    Absolute(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmgksConfig {
    /// Initial subspace dimension.
    pub ell: usize,
    /// Regularization exponent.
    pub q: f64,
    /// Data-fidelity exponent.
    pub p: f64,
    pub smoothing: Smoothing,
    pub lambda_rule: LambdaRule,
    pub max_iters: usize,
    pub stagnation_tol: f64,
}

impl Default for MmgksConfig {
    fn default() -> Self {
        Self {
            ell: 10,
            q: 1.0,
            p: 2.0,
            smoothing: Smoothing::Relative(1e-2),
            lambda_rule: LambdaRule::Gcv,
            max_iters: 200,
            stagnation_tol: 1e-6,
        }
    }
}

impl MmgksConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ell == 0 {
            return Err(Error::InvalidArgument("ℓ must be ≥ 1".into()));
        }
        if !(self.q > 0.0 && self.q <= 2.0) || !(self.p > 0.0 && self.p <= 2.0) {
            return Err(Error::InvalidArgument(format!("exponents p = {}, q = {} outside (0, 2]", self.p, self.q)));
        }
        match self.smoothing {
            Smoothing::Relative(v) | Smoothing::Absolute(v) if !(v > 0.0) => {
                return Err(Error::InvalidArgument(format!("smoothing {v} must be > 0")))
            }
            _ => {}
        }
        match self.lambda_rule {
            LambdaRule::Fixed(l) if !(l >= 0.0) => Err(Error::InvalidArgument(format!("λ = {l}"))),
            LambdaRule::Discrepancy { delta, eta } if !(delta > 0.0 && eta >= 1.0) => {
                Err(Error::InvalidArgument(format!("δ = {delta}, η = {eta}")))
            }
            _ => Ok(()),
        }
    }
}

/// Regularization operator `Θ` with optional row grouping.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub op: SparseOperator,
    pub groups: Option<Grouping>,
}

impl Regularizer {
    pub fn new(op: SparseOperator) -> Self {
        Self { op, groups: None }
    }

    pub fn grouped(op: SparseOperator, groups: Grouping) -> Result<Self> {
        if groups.len() != op.n_rows() {
            return Err(Error::Shape(format!(
                "{} group ids for {} regularizer rows",
                groups.len(),
                op.n_rows()
            )));
        }
        Ok(Self { op, groups: Some(groups) })
    }
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: f64,
    pub data_residual: f64,
    /// Smoothed objective at the previous iterate, evaluated with this
    /// iteration's λ and Θ.
    pub objective_before: f64,
    pub smoothed_objective: f64,
    pub basis_dim: usize,
    pub lambda_flagged: bool,
    pub rank_deficient: bool,
}

#[derive(Clone, Debug, Default)]
pub struct MmgksReport {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub epsilon: f64,
}

impl MmgksReport {
    pub fn lambda_history(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.lambda).collect()
    }

    /// `iter,lambda,data_residual,smoothed_objective,basis_dim`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "iter,lambda,data_residual,smoothed_objective,basis_dim").map_err(io)?;
        for r in &self.iterations {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{}",
                r.iter, r.lambda, r.data_residual, r.smoothed_objective, r.basis_dim
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Basis, cached products and the incremental factorization of `HV`.
pub struct KrylovWorkspace {
    n: usize,
    m: usize,
    k: usize,
    v: Vec<f64>,
    hv: Vec<f64>,
    cap: usize,
    theta_rows: usize,
    /// `ΘV` stored row by row with stride `cap`.
    theta_v: Vec<f64>,
    theta: SparseOperator,
    gram_scratch: Vec<f64>,
    q_h: Vec<f64>,
    /// Columns of the upper-triangular `R_H`; column `j` has `j+1` entries.
    r_h: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub lambda_history: Vec<f64>,
    rank_flag: bool,
}

impl KrylovWorkspace {
    fn new(n: usize, m: usize, capacity: usize) -> Self {
        Self {
            n,
            m,
            k: 0,
            v: Vec::with_capacity(n * capacity),
            hv: Vec::with_capacity(m * capacity),
            cap: capacity,
            theta_rows: 0,
            theta_v: Vec::new(),
            theta: SparseOperator::zeros(0, n),
            gram_scratch: Vec::new(),
            q_h: Vec::with_capacity(m * capacity),
            r_h: Vec::with_capacity(capacity),
            z: Vec::new(),
            lambda_history: Vec::new(),
            rank_flag: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn basis(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.v, self.n, self.k)
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.v[j * self.n..(j + 1) * self.n]
    }

    fn q_col(&self, j: usize) -> &[f64] {
        &self.q_h[j * self.m..(j + 1) * self.m]
    }

    pub fn r_h(&self) -> Mat<f64> {
        Mat::from_fn(self.k, self.k, |i, j| if i <= j { self.r_h[j][i] } else { 0.0 })
    }

    pub fn q_h(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.q_h, self.m, self.k)
    }

    /// `‖VᵀV − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.k {
            for j in 0..=i {
                let d = dot(self.column(i), self.column(j)) - if i == j { 1.0 } else { 0.0 };
                err = err.max(d.abs());
            }
        }
        err
    }

    /// Appends a unit column orthogonal to the basis and updates the
    /// cached products and `Q_H R_H` by one Gram–Schmidt step.
    fn push_column(&mut self, v: Vec<f64>, h: &SparseOperator, theta: Option<&SparseOperator>) {
        let hv = h.multiply(&v);
        let mut qcol = hv.clone();
        let mut coeffs = vec![0.0; self.k + 1];
        for _ in 0..2 {
            for j in 0..self.k {
                let qj = &self.q_h[j * self.m..(j + 1) * self.m];
                let c = dot(qj, &qcol);
                coeffs[j] += c;
                axpy(&mut qcol, -c, qj);
            }
        }
        let rho = norm(&qcol);
        if rho <= 1e-10 * norm(&hv) || rho == 0.0 {
            self.rank_flag = true;
            qcol.iter_mut().for_each(|x| *x = 0.0);
            coeffs[self.k] = rho;
        } else {
            qcol.iter_mut().for_each(|x| *x /= rho);
            coeffs[self.k] = rho;
        }
        if let Some(t) = theta {
            let col = t.multiply(&v);
            let (cap, k) = (self.cap, self.k);
            for (r, x) in col.into_iter().enumerate() {
                self.theta_v[r * cap + k] = x;
            }
        }
        self.v.extend_from_slice(&v);
        self.hv.extend_from_slice(&hv);
        self.q_h.extend_from_slice(&qcol);
        self.r_h.push(coeffs);
        self.k += 1;
        self.z.push(0.0);
    }

    /// Removes components along the basis (two passes). Returns the norm
    /// before orthogonalization.
    fn orthogonalize(&self, r: &mut [f64]) -> f64 {
        let before = norm(r);
        for _ in 0..2 {
            for j in 0..self.k {
                let c = dot(self.column(j), r);
                axpy(r, -c, self.column(j));
            }
        }
        before
    }

    fn set_theta(&mut self, theta: &SparseOperator) {
        self.theta_rows = theta.n_rows();
        self.theta = theta.clone();
        self.cap = self.cap.max(self.k + 1);
        self.theta_v.clear();
        self.theta_v.resize(self.theta_rows * self.cap, 0.0);
        for j in 0..self.k {
            let col = theta.multiply(self.column(j));
            for (r, x) in col.into_iter().enumerate() {
                self.theta_v[r * self.cap + j] = x;
            }
        }
    }

    fn combine(cols: &[f64], rows: usize, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rows];
        for (j, &zj) in z.iter().enumerate() {
            if zj != 0.0 {
                axpy(&mut out, zj, &cols[j * rows..(j + 1) * rows]);
            }
        }
        out
    }

    pub fn solution(&self) -> Vec<f64> {
        Self::combine(&self.v, self.n, &self.z)
    }

    /// `R_Θ` with `R_ΘᵀR_Θ = (ΘV)ᵀ diag(w²) (ΘV)`, formed as
    /// `Vᵀ (Θᵀ diag(w²) ΘV)` so the dense product runs over `n` rather than
    /// the row count of `Θ`.
    fn theta_factor(&mut self, w: &[f64]) -> Mat<f64> {
        let (rows, k, cap) = (self.theta_rows, self.k, self.cap);
        let mut y = std::mem::take(&mut self.gram_scratch);
        y.clear();
        y.resize(self.n * k, 0.0);
        for r in 0..rows {
            let c = w[r] * w[r];
            let tr = &self.theta_v[r * cap..r * cap + k];
            let (cols, vals) = self.theta.row(r);
            for (&p, &v) in cols.iter().zip(vals) {
                let f = c * v;
                for (a, b) in y[p * k..(p + 1) * k].iter_mut().zip(tr) {
                    *a += f * b;
                }
            }
        }
        let yt = MatRef::from_column_major_slice(&y, k, self.n);
        let mut g = Mat::<f64>::zeros(k, k);
        matmul(g.as_mut(), Accum::Replace, yt, self.basis(), 1.0, Par::Seq);
        self.gram_scratch = y;
        let gram = Mat::from_fn(k, k, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
        match gram.llt(Side::Lower) {
            Ok(llt) if (0..k).all(|i| llt.L()[(i, i)] > 1e-7 * gram[(i, i)].sqrt().max(f64::MIN_POSITIVE)) => {
                llt.L().transpose().to_owned()
            }
            _ => {
                // ill-conditioned: factor the weighted product directly
                let wtv = Mat::from_fn(rows, k, |i, j| w[i] * self.theta_v[i * cap + j]);
                let qr = wtv.qr();
                let r = qr.R();
                Mat::from_fn(k, k, |i, j| if i <= j && i < r.nrows() { r[(i, j)] } else { 0.0 })
            }
        }
    }
}

/// Stateful solver: owns the workspace and the current regularizer so the
/// caller can swap `Θ` between iterations.
pub struct Mmgks<'a> {
    h: &'a SparseOperator,
    b: &'a [f64],
    config: MmgksConfig,
    ws: KrylovWorkspace,
    reg: Option<Regularizer>,
    epsilon: Option<f64>,
    data_epsilon: f64,
    b_norm: f64,
    iter: usize,
    exhausted: bool,
    report: MmgksReport,
}

impl<'a> Mmgks<'a> {
    /// Seeds the basis with `ℓ` bidiagonalization steps and sets
    /// `u⁽⁰⁾` to the least-squares solution in that space.
    pub fn new(h: &'a SparseOperator, b: &'a [f64], config: MmgksConfig) -> Result<Self> {
        config.validate()?;
        if b.len() != h.n_rows() {
            return Err(Error::Shape(format!("b has {} entries, H has {} rows", b.len(), h.n_rows())));
        }
        let (m, n) = h.shape();
        let capacity = (config.ell + config.max_iters + 1).min(n);
        let mut ws = KrylovWorkspace::new(n, m, capacity);
        let b_norm = norm(b);
        let mut exhausted = false;
        if b_norm == 0.0 || norm(&h.transpose_multiply(b)) == 0.0 {
            exhausted = true;
        } else {
            let ell = config.ell.min(m).min(n);
            for v in gkb_seed(h, b, ell)? {
                ws.push_column(v, h, None);
            }
            let c: Vec<f64> = (0..ws.k).map(|j| dot(ws.q_col(j), b)).collect();
            ws.z = back_substitute(&ws.r_h, &c);
        }
        Ok(Self {
            h,
            b,
            config,
            ws,
            reg: None,
            epsilon: None,
            data_epsilon: 1e-2 * b_norm.max(f64::MIN_POSITIVE) / (m as f64).sqrt(),
            b_norm,
            iter: 0,
            exhausted,
            report: MmgksReport::default(),
        })
    }

    pub fn config(&self) -> &MmgksConfig {
        &self.config
    }

    pub fn workspace(&self) -> &KrylovWorkspace {
        &self.ws
    }

    pub fn report(&self) -> &MmgksReport {
        &self.report
    }

    pub fn into_report(self) -> MmgksReport {
        self.report
    }

    pub fn solution(&self) -> Vec<f64> {
        self.ws.solution()
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    pub fn is_converged(&self) -> bool {
        self.report.converged
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    /// Installs a new `Θ`, recomputing the cached `ΘV` and clearing any
    /// stagnation flag. The smoothing parameter is fixed from the first
    /// regularizer seen.
    pub fn set_regularizer(&mut self, reg: Regularizer) -> Result<()> {
        if reg.op.n_cols() != self.h.n_cols() {
            return Err(Error::Shape(format!(
                "Θ has {} columns, H has {}",
                reg.op.n_cols(),
                self.h.n_cols()
            )));
        }
        self.ws.set_theta(&reg.op);
        if self.epsilon.is_none() {
            self.epsilon = Some(match self.config.smoothing {
                Smoothing::Absolute(e) => e,
                Smoothing::Relative(f) => {
                    let tz = reg.op.multiply(&self.ws.solution());
                    let (lo, hi) = tz.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                    let range = if tz.is_empty() { 0.0 } else { hi - lo };
                    if range > 0.0 {
                        f * range
                    } else {
                        f
                    }
                }
            });
            self.report.epsilon = self.epsilon.unwrap();
        }
        self.reg = Some(reg);
        self.report.converged = false;
        Ok(())
    }

    pub fn set_lambda_rule(&mut self, rule: LambdaRule) {
        self.config.lambda_rule = rule;
    }

    fn data_weights(&self, resid: &[f64]) -> Option<Vec<f64>> {
        (self.config.p != 2.0).then(|| {
            let e2 = self.data_epsilon * self.data_epsilon;
            let expo = (self.config.p - 2.0) / 4.0;
            resid.iter().map(|r| (r * r + e2).powf(expo)).collect()
        })
    }

    fn data_term(&self, resid: &[f64]) -> f64 {
        if self.config.p == 2.0 {
            resid.iter().map(|r| r * r).sum()
        } else {
            smoothed_penalty(resid, self.data_epsilon, self.config.p, None)
        }
    }

    /// One weight-update / factorization / λ-selection / solve / expansion
    /// cycle. Returns `false` once the iteration has stopped.
    pub fn step(&mut self) -> Result<bool> {
        if self.exhausted || self.report.converged {
            return Ok(false);
        }
        let reg = self
            .reg
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no regularizer installed".into()))?;
        let eps = self.epsilon.unwrap();
        let (m, k) = (self.ws.m, self.ws.k);
        let q = self.config.q;

        let theta_u = reg.op.multiply(&self.ws.solution());
        let mut resid = KrylovWorkspace::combine(&self.ws.hv, m, &self.ws.z);
        axpy(&mut resid, -1.0, self.b);
        let weights = update_weights(&theta_u, eps, q, reg.groups.as_ref());
        let dw = self.data_weights(&resid);

        // factors of the data term
        let (r_h, c, bw_norm_sq) = match &dw {
            None => {
                let c: Vec<f64> = (0..k).map(|j| dot(self.ws.q_col(j), self.b)).collect();
                (self.ws.r_h(), c, self.b_norm * self.b_norm)
            }
            Some(dw) => {
                let hv = MatRef::from_column_major_slice(&self.ws.hv, m, k);
                let whv = Mat::from_fn(m, k, |i, j| dw[i] * hv[(i, j)]);
                let qr = whv.qr();
                let qm = qr.compute_thin_Q();
                let r = qr.thin_R().to_owned();
                let bw: Vec<f64> = self.b.iter().zip(dw).map(|(b, w)| b * w).collect();
                let c = (0..r.nrows()).map(|j| (0..m).map(|i| qm[(i, j)] * bw[i]).sum()).collect();
                (r, c, dot(&bw, &bw))
            }
        };
        let r_theta = self.ws.theta_factor(&weights.w);

        let choice = match self.config.lambda_rule {
            LambdaRule::Fixed(l) => LambdaChoice {
                lambda: l,
                flagged: false,
            },
            LambdaRule::Gcv => select_lambda_gcv(&LambdaSpectrum::new(r_h.as_ref(), r_theta.as_ref(), &c, bw_norm_sq)?),
            LambdaRule::Discrepancy { delta, eta } => select_lambda_dp(
                &LambdaSpectrum::new(r_h.as_ref(), r_theta.as_ref(), &c, bw_norm_sq)?,
                delta,
                eta,
            )?,
        };
        let lambda = choice.lambda;
        let z_new = solve_reduced(r_h.as_ref(), r_theta.as_ref(), &c, lambda)?;

        let objective = |resid: &[f64], theta_u: &[f64]| {
            self.data_term(resid) + lambda * smoothed_penalty(theta_u, eps, q, reg.groups.as_ref())
        };
        let objective_before = objective(&resid, &theta_u);
        let theta_u_new = reg.op.multiply(&KrylovWorkspace::combine(&self.ws.v, self.ws.n, &z_new));
        let mut resid_new = KrylovWorkspace::combine(&self.ws.hv, m, &z_new);
        axpy(&mut resid_new, -1.0, self.b);
        let smoothed_objective = objective(&resid_new, &theta_u_new);

        let dz: f64 = z_new.iter().zip(&self.ws.z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let zn = norm(&self.ws.z);
        self.ws.z = z_new;
        self.ws.lambda_history.push(lambda);
        self.iter += 1;

        // normal-equations residual and expansion
        let data_res_w: Vec<f64> = match &dw {
            None => resid_new.clone(),
            Some(dw) => resid_new.iter().zip(dw).map(|(r, w)| r * w * w).collect(),
        };
        let mut r = self.h.transpose_multiply(&data_res_w);
        let wt: Vec<f64> = theta_u_new.iter().zip(&weights.w).map(|(t, w)| t * w * w).collect();
        reg.op.transpose_multiply_add(&wt, lambda, &mut r);
        let before = self.ws.orthogonalize(&mut r);
        let after = norm(&r);
        let mut grew = false;
        if k < self.ws.n && after > 1e-14 * before && after > 0.0 {
            r.iter_mut().for_each(|x| *x /= after);
            self.ws.push_column(r, self.h, Some(&reg.op));
            grew = true;
        }

        let rank_deficient = std::mem::take(&mut self.ws.rank_flag);
        self.report.iterations.push(IterationRecord {
            iter: self.iter,
            lambda,
            data_residual: norm(&resid_new),
            objective_before,
            smoothed_objective,
            basis_dim: self.ws.k,
            lambda_flagged: choice.flagged,
            rank_deficient,
        });
        let stagnated = zn > 0.0 && dz / zn < self.config.stagnation_tol;
        if stagnated || (!grew && k >= self.ws.n) || (!grew && dz == 0.0) {
            self.report.converged = true;
        }
        Ok(!self.report.converged && self.iter < self.config.max_iters)
    }

    /// Iterates until stagnation or `max_iters`.
    pub fn run(&mut self) -> Result<()> {
        while self.iter < self.config.max_iters && self.step()? {}
        Ok(())
    }
}

fn back_substitute(r_cols: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let k = c.len();
    let mut z = c.to_vec();
    for i in (0..k).rev() {
        let d = r_cols[i][i];
        z[i] = if d.abs() > 0.0 { z[i] / d } else { 0.0 };
        for j in 0..i {
            z[j] -= r_cols[i][j] * z[i];
        }
    }
    z
}

#[derive(Clone, Debug)]
pub struct MmgksSolution {
    pub u: Vec<f64>,
    pub report: MmgksReport,
}

/// Runs the solver to completion with a fixed regularizer.
pub fn mmgks(h: &SparseOperator, reg: Regularizer, b: &[f64], config: &MmgksConfig) -> Result<MmgksSolution> {
    let mut solver = Mmgks::new(h, b, config.clone())?;
    solver.set_regularizer(reg)?;
    solver.run()?;
    Ok(MmgksSolution {
        u: solver.solution(),
        report: solver.into_report(),
    })
}
