//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs the full desk-scale experiments, so it takes a while.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dynamo::driver::Reconstruction;
use dynamo::flow::{reverse_flow, solve_of, FlowConfig, FlowField};
use dynamo::metrics::{rre, ssim};
use dynamo::mmgks::{
    log_grid, mmgks, select_lambda_dp, select_lambda_gcv, solve_reduced, LambdaRule, LambdaSpectrum, MmgksConfig,
    Regularizer, Smoothing,
};
use dynamo::motion::{assemble_mbar, motion_matrix, MotionEncoding};
use dynamo::operators::{first_difference, SparseOperator};
use dynamo::{Image, ImageSequence};
use dynamo_cli::{Experiment, MethodOutcome};
use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_dense(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Mat<f64> {
    Mat::from_fn(m, n, |_, _| normal(rng))
}

fn to_sparse(a: &Mat<f64>) -> SparseOperator {
    let trips = (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |j| (i, j, a[(i, j)])));
    SparseOperator::from_triplets(a.nrows(), a.ncols(), trips.collect::<Vec<_>>()).unwrap()
}

fn to_dense(s: &SparseOperator) -> Mat<f64> {
    let mut a = Mat::zeros(s.n_rows(), s.n_cols());
    for (i, j, v) in s.triplets() {
        a[(i, j)] += v;
    }
    a
}

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn dense_tikhonov(a: &Mat<f64>, b: &Mat<f64>, c: &[f64], lambda: f64) -> Vec<f64> {
    let lhs = a.transpose() * a + b.transpose() * b * lambda;
    let z = lhs.llt(Side::Lower).unwrap().solve(a.transpose() * column(c));
    (0..z.nrows()).map(|i| z[(i, 0)]).collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

fn upper(rng: &mut ChaCha8Rng, k: usize) -> Mat<f64> {
    Mat::from_fn(k, k, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 2.0 + rng.random::<f64>(),
        std::cmp::Ordering::Less => normal(rng),
        std::cmp::Ordering::Greater => 0.0,
    })
}

struct Instance {
    rh: Mat<f64>,
    rt: Mat<f64>,
    c: Vec<f64>,
    b_norm_sq: f64,
    spec: LambdaSpectrum,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(3..=15);
    let rh = upper(rng, k);
    let rt = random_dense(rng, k + 3, k);
    let c: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
    let b_norm_sq = c.iter().map(|v| v * v).sum::<f64>() + rng.random::<f64>();
    let spec = LambdaSpectrum::new(rh.as_ref(), rt.as_ref(), &c, b_norm_sq).unwrap();
    Instance { rh, rt, c, b_norm_sq, spec }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (m, n) = (60, 40);
    let hd = random_dense(&mut rng, m, n);
    let h = to_sparse(&hd);
    let theta = first_difference(n).unwrap();
    let b: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let cfg = MmgksConfig {
        ell: 5,
        q: 2.0,
        smoothing: Smoothing::Absolute(1e-3),
        lambda_rule: LambdaRule::Fixed(0.5),
        max_iters: 60,
        stagnation_tol: 0.0,
        ..MmgksConfig::default()
    };
    let start = Instant::now();
    let sol = mmgks(&h, Regularizer::new(theta.clone()), &b, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = rel_diff(&sol.u, &dense_tikhonov(&hd, &to_dense(&theta), &b, 0.5));
    outcome(err <= 1e-8 && secs < 1.0, format!("relative error {err:.2e}, {secs:.3} s"))
}

fn reduced_solve() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=25);
        let rows = rng.random_range(k..=2 * k);
        let rh = upper(&mut rng, k);
        let rt = random_dense(&mut rng, rows, k);
        let c: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
        let lambda = 10f64.powf(rng.random_range(-4.0..4.0));
        let z = solve_reduced(rh.as_ref(), rt.as_ref(), &c, lambda).unwrap();
        worst = worst.max(rel_diff(&z, &dense_tikhonov(&rh, &rt, &c, lambda)));
    }
    outcome(worst <= 1e-9, format!("worst relative difference {worst:.2e} over 100 instances"))
}

fn parameter_choice() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut dp_worst: f64 = 0.0;
    for _ in 0..20 {
        let inst = instance(&mut rng);
        let (lo, hi) = (inst.spec.residual_sq(1e-12).sqrt(), inst.spec.residual_sq(1e12).sqrt());
        let eta = 1.01;
        let delta = (lo + rng.random_range(0.1..0.9) * (hi - lo)) / eta;
        let choice = select_lambda_dp(&inst.spec, delta, eta).unwrap();
        let z = dense_tikhonov(&inst.rh, &inst.rt, &inst.c, choice.lambda);
        let r = (&inst.rh * column(&z) - column(&inst.c)).squared_norm_l2();
        let c_sq: f64 = inst.c.iter().map(|v| v * v).sum();
        let res = (r + inst.b_norm_sq - c_sq).sqrt();
        dp_worst = dp_worst.max((res - eta * delta).abs() / (eta * delta));
    }
    let grid = log_grid(600);
    let cell = grid[1] - grid[0];
    let mut gcv_misses = 0;
    for _ in 0..20 {
        let inst = instance(&mut rng);
        let g = |l: f64| inst.spec.gcv(10f64.powf(l));
        let best = grid.iter().copied().min_by(|a, b| g(*a).total_cmp(&g(*b))).unwrap();
        let got = select_lambda_gcv(&inst.spec).lambda.log10();
        if (got - best).abs() > cell {
            gcv_misses += 1;
        }
    }
    outcome(
        dp_worst <= 0.01 && gcv_misses == 0,
        format!("DP worst relative miss {dp_worst:.2e}; GCV {gcv_misses}/20 outside one scan cell"),
    )
}

fn blob(n: usize, cx: f64, cy: f64) -> Image {
    Image::from_fn(n, n, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (-(dx * dx + dy * dy) / 50.0).exp()
    })
}

fn flow_recovery() -> Outcome {
    let n = 64;
    let f0 = blob(n, 30.0, 32.0);
    let s = solve_of(&f0, &blob(n, 31.0, 32.0), &FlowConfig::default()).unwrap();
    let support: Vec<usize> = (0..n * n).filter(|&p| f0.data[p] > 0.1).collect();
    let mean = support.iter().map(|&p| s.s_x[p]).sum::<f64>() / support.len() as f64;
    let mut exact = true;
    for (sx, sy) in [(1, 0), (-2, 1), (0, -1), (2, 2)] {
        let r = reverse_flow(&FlowField::uniform(16, 16, sx as f64, sy as f64));
        for x in 2..14 {
            for y in 2..14 {
                exact &= r.s_x[x + 16 * y] == -(sx as f64) && r.s_y[x + 16 * y] == -(sy as f64);
            }
        }
    }
    outcome(
        (mean - 1.0).abs() <= 0.5 && exact,
        format!("mean s_x over the blob {mean:.3}; reverse of uniform integer fields exact: {exact}"),
    )
}

fn motion_exactness() -> Outcome {
    let (n, n_t, (sx, sy)) = (16, 4, (2i32, -1i32));
    let frame = |k: usize| -> Vec<f64> {
        (0..n * n)
            .map(|p| {
                let x = (p % n) as f64 - (sx * k as i32) as f64;
                let y = (p / n) as f64 - (sy * k as i32) as f64;
                (0.37 * x).sin() + (0.21 * y).cos() + 0.01 * x * y
            })
            .collect()
    };
    let u: Vec<f64> = (0..n_t).flat_map(frame).collect();
    let flows = vec![FlowField::uniform(n, n, sx as f64, sy as f64); n_t - 1];
    let r = assemble_mbar(&flows, n_t, MotionEncoding::Rounding).unwrap().multiply(&u);
    let interior = |p: usize| (2..n - 2).contains(&(p % n)) && (2..n - 2).contains(&(p / n));
    let num = r
        .iter()
        .enumerate()
        .filter(|(i, _)| interior(i % (n * n)))
        .map(|(_, v)| v * v)
        .sum::<f64>()
        .sqrt();
    let ratio = num / u.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let s = FlowField {
        n_x: n,
        n_y: n,
        s_x: (0..n * n).map(|_| 3.0 * normal(&mut rng)).collect(),
        s_y: (0..n * n).map(|_| 3.0 * normal(&mut rng)).collect(),
    };
    let m = motion_matrix(&s, MotionEncoding::Bilinear);
    let row_dev = (0..m.n_rows())
        .map(|i| (m.row(i).1.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        ratio <= 1e-10 && row_dev <= 1e-12,
        format!("interior ‖M̄u‖/‖u‖ {ratio:.2e}; bilinear row sums off by at most {row_dev:.2e}"),
    )
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn out_dir(tag: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{tag}"))
}

fn run(config: &str, methods: Option<&[&str]>, tag: &str) -> (Vec<MethodOutcome>, f64) {
    let _ = std::fs::remove_dir_all(out_dir(tag));
    let mut exp = Experiment::load(configs().join(config), Some(out_dir(tag)), None).unwrap();
    if let Some(m) = methods {
        exp.loaded.config.methods = m.iter().map(|s| s.to_string()).collect();
    }
    let start = Instant::now();
    let out = exp.cmd_reconstruct().unwrap();
    (out, start.elapsed().as_secs_f64())
}

fn find<'a>(out: &'a [MethodOutcome], name: &str) -> &'a Reconstruction {
    &out.iter().find(|o| o.name == name).unwrap().reconstruction
}

fn final_rre(out: &[MethodOutcome], name: &str) -> f64 {
    find(out, name).report.final_rre().unwrap()
}

fn test1(out: &[MethodOutcome], secs: f64) -> Outcome {
    let mut detail = String::new();
    let mut ordered = true;
    for base in ["M", "D1", "D2", "D3"] {
        let (plain, of) = (final_rre(out, base), final_rre(out, &format!("{base}-OF")));
        ordered &= of < plain;
        detail.push_str(&format!("{base} {plain:.4} / {base}-OF {of:.4}; "));
    }
    let (m, m_of) = (final_rre(out, "M"), final_rre(out, "M-OF"));
    detail.push_str(&format!("{secs:.0} s"));
    outcome(ordered && m_of <= 0.30 && m >= 0.40, detail)
}

fn test5(out: &[MethodOutcome], secs: f64) -> Outcome {
    let (m, m_of) = (final_rre(out, "M"), final_rre(out, "M-OF"));
    let m_of_ssim = find(out, "M-OF").report.final_ssim().unwrap();
    outcome(
        m_of <= 0.45 && m >= 0.65 && m_of_ssim >= 0.80 && secs <= 300.0,
        format!("M {m:.4}; M-OF {m_of:.4} (SSIM {m_of_ssim:.4}); {secs:.0} s"),
    )
}

fn monotonicity(runs: &[&[MethodOutcome]]) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for o in runs.iter().flat_map(|r| r.iter()) {
        worst = worst.max(o.reconstruction.report.worst_monotonicity_violation());
        count += 1;
    }
    outcome(worst <= 1e-10, format!("worst relative increase {worst:.2e} over {count} runs"))
}

fn determinism(a: &[MethodOutcome], b: &[MethodOutcome]) -> Outcome {
    let mut same = a.len() == b.len();
    for o in a {
        let csv = |tag: &str| std::fs::read(out_dir(tag).join(format!("convergence/{}.csv", o.name))).unwrap();
        same &= csv("test5") == csv("test5-repeat");
    }
    outcome(same, format!("{} convergence CSVs compared byte for byte", a.len()))
}

fn metric_sanity() -> Outcome {
    let data: Vec<f64> = (0..3 * 20 * 20).map(|i| (i as f64 * 0.07).sin() + 1.5).collect();
    let u = ImageSequence::new(20, 20, 3, data.clone()).unwrap();
    let zero = vec![0.0; data.len()];
    let (a, b, c) = (rre(&data, &data).unwrap(), rre(&zero, &data).unwrap(), ssim(&u, &u).unwrap());
    outcome(a == 0.0 && b == 1.0 && c == 1.0, format!("rre(u,u) = {a}, rre(0,u) = {b}, ssim(u,u) = {c}"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "oracle equivalence", oracle_equivalence()),
        (2, "reduced solve", reduced_solve()),
        (3, "DP and GCV", parameter_choice()),
        (4, "optical flow recovery", flow_recovery()),
        (5, "motion operator exactness", motion_exactness()),
    ];
    let (t1, t1_secs) = run("test1_views3.toml", None, "test1");
    let (t5, t5_secs) = run("test5.toml", Some(&["M", "M-OF"]), "test5");
    let (t5b, _) = run("test5.toml", Some(&["M", "M-OF"]), "test5-repeat");
    results.push((6, "Test 1 moving blocks", test1(&t1, t1_secs)));
    results.push((7, "Test 5 pinball", test5(&t5, t5_secs)));
    results.push((8, "majorization monotonicity", monotonicity(&[&t1, &t5, &t5b])));
    results.push((9, "determinism", determinism(&t5, &t5b)));
    results.push((10, "metric sanity", metric_sanity()));

    let mut failed = 0;
    for (i, name, o) in &results {
        println!("{} criterion {i:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
