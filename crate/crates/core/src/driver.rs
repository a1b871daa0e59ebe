//! Reconstruction loop alternating flow estimation with motion-regularized
//! Krylov iterations.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{rescaled_solve_of, reverse_flow, FlowConfig, FlowField};
use crate::metrics;
use crate::mmgks::{Grouping, Mmgks, MmgksConfig, Regularizer};
use crate::motion::{assemble_mbar, assemble_mbar_prime, assemble_mhat, MotionEncoding};
use crate::operators::{block_diagonal, first_difference, kron, spatial_gradient, vstack, SparseOperator};
use crate::sequence::ImageSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseRegularizer {
    /// Spatial gradient per frame.
    M,
    /// Anisotropic space-time total variation.
    D1,
    /// Isotropic spatial total variation plus temporal differences.
    D2,
    /// Spatial gradients with group sparsity across time.
    D3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MethodSpec {
    pub base: BaseRegularizer,
    pub of_enabled: bool,
}

impl MethodSpec {
    pub const fn new(base: BaseRegularizer, of_enabled: bool) -> Self {
        Self { base, of_enabled }
    }

    /// The eight variants in table order: each base without and with flow.
    pub fn all() -> Vec<MethodSpec> {
        [BaseRegularizer::M, BaseRegularizer::D1, BaseRegularizer::D2, BaseRegularizer::D3]
            .into_iter()
            .flat_map(|b| [MethodSpec::new(b, false), MethodSpec::new(b, true)])
            .collect()
    }

    pub fn name(&self) -> String {
        let base = match self.base {
            BaseRegularizer::M => "M",
            BaseRegularizer::D1 => "D1",
            BaseRegularizer::D2 => "D2",
            BaseRegularizer::D3 => "D3",
        };
        if self.of_enabled {
            format!("{base}-OF")
        } else {
            base.to_string()
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        let t = tag.trim().to_ascii_uppercase();
        let (base, of) = match t.strip_suffix("-OF") {
            Some(b) => (b, true),
            None => (t.as_str(), false),
        };
        let base = match base {
            "M" => BaseRegularizer::M,
            "D1" => BaseRegularizer::D1,
            "D2" => BaseRegularizer::D2,
            "D3" => BaseRegularizer::D3,
            _ => return Err(Error::InvalidArgument(format!("unknown method tag '{tag}'"))),
        };
        Ok(Self::new(base, of))
    }
}

/// `Ψ` for a regularizer family together with its row grouping.
pub fn build_regularizer(base: BaseRegularizer, n_x: usize, n_y: usize, n_t: usize) -> Result<Regularizer> {
    if n_t == 0 {
        return Err(Error::InvalidDimension("n_t must be ≥ 1".into()));
    }
    let l = spatial_gradient(n_x, n_y)?;
    let spatial = block_diagonal(&vec![l.clone(); n_t])?;
    let temporal = || -> Result<Option<SparseOperator>> {
        if n_t < 2 {
            return Ok(None);
        }
        Ok(Some(kron(&first_difference(n_t)?, &SparseOperator::identity(n_x * n_y))))
    };
    let with_time = |spatial: SparseOperator| -> Result<SparseOperator> {
        match temporal()? {
            Some(t) => vstack(&[spatial, t]),
            None => Ok(spatial),
        }
    };
    let n_temporal = if n_t > 1 { (n_t - 1) * n_x * n_y } else { 0 };
    match base {
        BaseRegularizer::M => Ok(Regularizer::new(spatial)),
        BaseRegularizer::D1 => Ok(Regularizer::new(with_time(spatial)?)),
        BaseRegularizer::D2 => {
            let per_frame = isotropic_pairs(n_x, n_y);
            let frame_groups = per_frame.n_groups;
            let mut group = Vec::with_capacity(n_t * l.n_rows() + n_temporal);
            for t in 0..n_t {
                group.extend(per_frame.group.iter().map(|g| g + t * frame_groups));
            }
            let spatial_groups = Grouping {
                group,
                n_groups: n_t * frame_groups,
            };
            let groups = Grouping::stack(&[spatial_groups, Grouping::ungrouped(n_temporal)]);
            Regularizer::grouped(with_time(spatial)?, groups)
        }
        BaseRegularizer::D3 => {
            let rows = l.n_rows();
            let group = (0..n_t).flat_map(|_| 0..rows).collect();
            Regularizer::grouped(spatial, Grouping { group, n_groups: rows })
        }
    }
}

/// Groups each vertical difference row with the horizontal difference row
/// based at the same pixel.
fn isotropic_pairs(n_x: usize, n_y: usize) -> Grouping {
    let n_vert = n_y * (n_x - 1);
    let n_horz = (n_y - 1) * n_x;
    let mut group = vec![usize::MAX; n_vert + n_horz];
    let mut next = 0;
    for y in 0..n_y {
        for x in 0..n_x {
            let v = (x + 1 < n_x).then(|| x + (n_x - 1) * y);
            let h = (y + 1 < n_y).then(|| n_vert + x + n_x * y);
            if v.is_none() && h.is_none() {
                continue;
            }
            for r in [v, h].into_iter().flatten() {
                group[r] = next;
            }
            next += 1;
        }
    }
    Grouping { group, n_groups: next }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriverConfig {
    pub solver: MmgksConfig,
    /// Flow update period in iterations.
    pub tau: usize,
    pub flow: FlowConfig,
    /// Flow-solve resolution factor; `None` halves until both dims are
    /// below 50.
    pub rescale: Option<f64>,
    /// Plain spatially-regularized iterations before the first flow solve.
    pub warm_start_iters: usize,
    pub encoding: MotionEncoding,
    /// Forward flows used in place of estimation; reverses are derived.
    pub known_flows: Option<Vec<FlowField>>,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            solver: MmgksConfig::default(),
            tau: 20,
            flow: FlowConfig::default(),
            rescale: None,
            warm_start_iters: 10,
            encoding: MotionEncoding::Bilinear,
            known_flows: None,
        }
    }
}

/// Largest `2^{-j}` that brings both dims below 50.
pub fn auto_rescale(n_x: usize, n_y: usize) -> f64 {
    let mut alpha = 1.0;
    while (n_x.max(n_y) as f64) * alpha >= 50.0 {
        alpha *= 0.5;
    }
    alpha
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationSummary {
    pub iter: usize,
    pub lambda: f64,
    pub data_residual: f64,
    pub objective_before: f64,
    pub smoothed_objective: f64,
    pub rre: Option<f64>,
    pub ssim: Option<f64>,
    pub flow_recomputed: bool,
    pub basis_dim: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ReconstructionReport {
    pub method: String,
    pub iterations: Vec<IterationSummary>,
    pub wall_seconds: f64,
    pub flow_updates: usize,
    pub warm_start_iters: usize,
    pub converged: bool,
    /// Smoothing parameter of the ℓ_q weights.
    pub epsilon: f64,
}

impl ReconstructionReport {
    pub fn final_rre(&self) -> Option<f64> {
        self.iterations.last().and_then(|r| r.rre)
    }

    pub fn final_ssim(&self) -> Option<f64> {
        self.iterations.last().and_then(|r| r.ssim)
    }

    /// Largest relative increase of the smoothed objective within one
    /// iteration (negative when every step decreased it).
    pub fn worst_monotonicity_violation(&self) -> f64 {
        self.iterations
            .iter()
            .map(|r| (r.smoothed_objective - r.objective_before) / r.objective_before.abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub u: ImageSequence,
    pub flows: Vec<FlowField>,
    pub reverse_flows: Vec<FlowField>,
    pub report: ReconstructionReport,
}

/// Grid and optional reference for a reconstruction.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub h: &'a SparseOperator,
    pub b: &'a [f64],
    pub n_x: usize,
    pub n_y: usize,
    pub n_t: usize,
    pub ground_truth: Option<&'a ImageSequence>,
}

impl Problem<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.n_x * self.n_y * self.n_t;
        if self.h.n_cols() != n || self.h.n_rows() != self.b.len() {
            return Err(Error::Shape(format!(
                "H is {}x{}, b has {} entries, grid has {n} unknowns",
                self.h.n_rows(),
                self.h.n_cols(),
                self.b.len()
            )));
        }
        if let Some(t) = self.ground_truth {
            if (t.n_x, t.n_y, t.n_t) != (self.n_x, self.n_y, self.n_t) {
                return Err(Error::Shape("ground truth dims differ from the grid".into()));
            }
        }
        Ok(())
    }

    fn sequence(&self, u: Vec<f64>) -> ImageSequence {
        ImageSequence {
            n_x: self.n_x,
            n_y: self.n_y,
            n_t: self.n_t,
            data: u,
        }
    }

    fn summarize(&self, solver: &Mmgks<'_>, flow_recomputed: bool) -> Result<IterationSummary> {
        let rec = solver
            .report()
            .iterations
            .last()
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("no iteration recorded".into()))?;
        let (rre, ssim) = match self.ground_truth {
            Some(t) => {
                let q = metrics::quality(&self.sequence(solver.solution()), t)?;
                (Some(q.rre), Some(q.ssim))
            }
            None => (None, None),
        };
        Ok(IterationSummary {
            iter: rec.iter,
            lambda: rec.lambda,
            data_residual: rec.data_residual,
            objective_before: rec.objective_before,
            smoothed_objective: rec.smoothed_objective,
            rre,
            ssim,
            flow_recomputed,
            basis_dim: rec.basis_dim,
        })
    }
}

/// Plain Krylov reconstruction with `Ψ` only.
pub fn reconstruct(problem: &Problem<'_>, config: &DriverConfig, base: BaseRegularizer) -> Result<Reconstruction> {
    problem.validate()?;
    let start = Instant::now();
    let mut solver = Mmgks::new(problem.h, problem.b, config.solver.clone())?;
    solver.set_regularizer(build_regularizer(base, problem.n_x, problem.n_y, problem.n_t)?)?;
    let mut report = ReconstructionReport {
        method: MethodSpec::new(base, false).name(),
        ..Default::default()
    };
    for _ in 0..config.solver.max_iters {
        let more = solver.step()?;
        if solver.report().iterations.len() > report.iterations.len() {
            report.iterations.push(problem.summarize(&solver, false)?);
        }
        if !more {
            break;
        }
    }
    report.converged = solver.is_converged();
    report.epsilon = solver.epsilon().unwrap_or(0.0);
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(Reconstruction {
        u: problem.sequence(solver.solution()),
        flows: Vec::new(),
        reverse_flows: Vec::new(),
        report,
    })
}

/// Forward flows between consecutive frames and their approximate reverses.
pub fn estimate_flows(
    u: &ImageSequence,
    alpha: f64,
    cfg: &FlowConfig,
) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let frames = u.frames();
    let flows = (0..u.n_t.saturating_sub(1))
        .into_par_iter()
        .map(|t| rescaled_solve_of(&frames[t], &frames[t + 1], alpha, cfg))
        .collect::<Result<Vec<_>>>()?;
    let reverse = flows.iter().map(reverse_flow).collect();
    Ok((flows, reverse))
}

/// `Θ = [Ψ; M̂]` with the motion rows ungrouped.
pub fn motion_regularizer(
    psi: &Regularizer,
    flows: &[FlowField],
    reverse: &[FlowField],
    n_t: usize,
    encoding: MotionEncoding,
) -> Result<Regularizer> {
    let mhat = assemble_mhat(&assemble_mbar(flows, n_t, encoding)?, &assemble_mbar_prime(reverse, n_t, encoding)?)?;
    let motion_rows = mhat.n_rows();
    let op = vstack(&[psi.op.clone(), mhat])?;
    let groups = match &psi.groups {
        Some(g) => Some(Grouping::stack(&[g.clone(), Grouping::ungrouped(motion_rows)])),
        None => None,
    };
    Ok(Regularizer { op, groups })
}

/// Joint reconstruction: every `τ` iterations the flow is re-estimated
/// from the current iterate and `Θ` rebuilt; the Krylov basis is kept.
pub fn mmgks_of(problem: &Problem<'_>, config: &DriverConfig, method: MethodSpec) -> Result<Reconstruction> {
    if !method.of_enabled {
        return reconstruct(problem, config, method.base);
    }
    if config.tau == 0 {
        return Err(Error::InvalidArgument("flow update period τ must be ≥ 1".into()));
    }
    problem.validate()?;
    if problem.n_t < 2 {
        return Err(Error::InvalidDimension("motion regularization needs n_t ≥ 2".into()));
    }
    let start = Instant::now();
    let alpha = config.rescale.unwrap_or_else(|| auto_rescale(problem.n_x, problem.n_y));
    let mut solver_cfg = config.solver.clone();
    solver_cfg.max_iters = config.solver.max_iters + config.warm_start_iters;
    let mut solver = Mmgks::new(problem.h, problem.b, solver_cfg)?;

    if config.warm_start_iters > 0 {
        solver.set_regularizer(build_regularizer(BaseRegularizer::M, problem.n_x, problem.n_y, problem.n_t)?)?;
        while solver.iterations() < config.warm_start_iters && solver.step()? {}
    }
    let warm = solver.iterations();
    let psi = build_regularizer(method.base, problem.n_x, problem.n_y, problem.n_t)?;
    let mut report = ReconstructionReport {
        method: method.name(),
        warm_start_iters: warm,
        ..Default::default()
    };
    let (mut flows, mut reverse) = (Vec::new(), Vec::new());
    let recorded = solver.report().iterations.len();
    for k in 0..config.solver.max_iters {
        let update = k % config.tau == 0;
        if update {
            (flows, reverse) = match &config.known_flows {
                Some(f) => (f.clone(), f.iter().map(reverse_flow).collect()),
                None => estimate_flows(&problem.sequence(solver.solution()), alpha, &config.flow)?,
            };
            solver.set_regularizer(motion_regularizer(&psi, &flows, &reverse, problem.n_t, config.encoding)?)?;
            report.flow_updates += 1;
        }
        let more = solver.step()?;
        if solver.report().iterations.len() > recorded + report.iterations.len() {
            report.iterations.push(problem.summarize(&solver, update)?);
        }
        if !more {
            break;
        }
    }
    report.converged = solver.is_converged();
    report.epsilon = solver.epsilon().unwrap_or(0.0);
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(Reconstruction {
        u: problem.sequence(solver.solution()),
        flows,
        reverse_flows: reverse,
        report,
    })
}

/// Dispatches to [`reconstruct`] or [`mmgks_of`].
pub fn run_method(problem: &Problem<'_>, config: &DriverConfig, method: MethodSpec) -> Result<Reconstruction> {
    mmgks_of(problem, config, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        let all = MethodSpec::all();
        assert_eq!(all.len(), 8);
        for m in all {
            assert_eq!(MethodSpec::parse(&m.name()).unwrap(), m);
        }
        assert!(MethodSpec::parse("D4").is_err());
    }

    #[test]
    fn m_on_single_frame_is_gradient() {
        let r = build_regularizer(BaseRegularizer::M, 4, 5, 1).unwrap();
        assert_eq!(r.op, spatial_gradient(4, 5).unwrap());
        assert!(r.groups.is_none());
    }

    #[test]
    fn regularizer_row_counts() {
        let (nx, ny, nt) = (4, 3, 3);
        let l_rows = ny * (nx - 1) + (ny - 1) * nx;
        let d1 = build_regularizer(BaseRegularizer::D1, nx, ny, nt).unwrap();
        assert_eq!(d1.op.shape(), (nt * l_rows + (nt - 1) * nx * ny, nx * ny * nt));
        let d2 = build_regularizer(BaseRegularizer::D2, nx, ny, nt).unwrap();
        let g = d2.groups.as_ref().unwrap();
        assert_eq!(g.len(), d2.op.n_rows());
        // every pixel except the far corner anchors one spatial group per frame
        assert_eq!(g.n_groups, nt * (nx * ny - 1) + (nt - 1) * nx * ny);
        let d3 = build_regularizer(BaseRegularizer::D3, nx, ny, nt).unwrap();
        assert_eq!(d3.groups.as_ref().unwrap().n_groups, l_rows);
    }

    #[test]
    fn rescale_factors() {
        assert_eq!(auto_rescale(90, 90), 0.5);
        assert_eq!(auto_rescale(50, 50), 0.5);
        assert_eq!(auto_rescale(200, 120), 0.125);
        assert_eq!(auto_rescale(30, 40), 1.0);
    }
}
