//! Optical flow between consecutive frames.
//!
//! The brightness-constancy linearization `u_x s_x + u_y s_y + u_t = 0` is
//! solved per frame pair as a regularized least-squares problem
//! `min ‖Υ s + u_t‖_p^p + γ‖L_flow s‖_q^q` with the Krylov solver.
//! Velocities are in pixels per frame; `s_x` is along rows (down), `s_y`
//! along columns (right).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mmgks::{LambdaRule, Mmgks, MmgksConfig, MmgksReport, Regularizer, Smoothing};
use crate::operators::{block_diagonal, spatial_gradient, SparseOperator};
use crate::sequence::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub n_x: usize,
    pub n_y: usize,
    pub s_x: Vec<f64>,
    pub s_y: Vec<f64>,
}

impl FlowField {
    pub fn zeros(n_x: usize, n_y: usize) -> Self {
        Self {
            n_x,
            n_y,
            s_x: vec![0.0; n_x * n_y],
            s_y: vec![0.0; n_x * n_y],
        }
    }

    pub fn uniform(n_x: usize, n_y: usize, s_x: f64, s_y: f64) -> Self {
        Self {
            n_x,
            n_y,
            s_x: vec![s_x; n_x * n_y],
            s_y: vec![s_y; n_x * n_y],
        }
    }

    /// Splits `[s_x; s_y]`.
    pub fn from_stacked(n_x: usize, n_y: usize, s: &[f64]) -> Result<Self> {
        let n_s = n_x * n_y;
        if s.len() != 2 * n_s {
            return Err(Error::Shape(format!("{} values for a {n_x}x{n_y} flow", s.len())));
        }
        Ok(Self {
            n_x,
            n_y,
            s_x: s[..n_s].to_vec(),
            s_y: s[n_s..].to_vec(),
        })
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.s_x.iter().chain(&self.s_y).copied().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.s_x.iter().chain(&self.s_y).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.s_x.iter().chain(&self.s_y).all(|v| v.is_finite())
    }

    /// `x,y,s_x,s_y`, one line per pixel.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(out, "x,y,s_x,s_y").map_err(io)?;
        for y in 0..self.n_y {
            for x in 0..self.n_x {
                let p = x + self.n_x * y;
                writeln!(out, "{x},{y},{:e},{:e}", self.s_x[p], self.s_y[p]).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    /// Colour-wheel rendering: hue encodes direction, value the magnitude
    /// relative to the largest vector in the field.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mags: Vec<f64> = self.s_x.iter().zip(&self.s_y).map(|(a, b)| a.hypot(*b)).collect();
        let max = mags.iter().fold(0.0f64, |m, &v| m.max(v));
        let mut rgb = Vec::with_capacity(3 * mags.len());
        for x in 0..self.n_x {
            for y in 0..self.n_y {
                let p = x + self.n_x * y;
                // angle measured in image axes: right = 0°, down = 90°
                let hue = self.s_x[p].atan2(self.s_y[p]).to_degrees().rem_euclid(360.0);
                let value = if max > 0.0 { mags[p] / max } else { 0.0 };
                rgb.extend(hsv_to_rgb(hue, 1.0, value));
            }
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.n_y as u32, self.n_x as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let fmt = |e: png::EncodingError| Error::Format(format!("png encoding failed: {e}"));
        let mut writer = enc.write_header().map_err(fmt)?;
        writer.write_image_data(&rgb).map_err(fmt)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientTriple {
    pub n_x: usize,
    pub n_y: usize,
    pub u_x: Vec<f64>,
    pub u_y: Vec<f64>,
    pub u_t: Vec<f64>,
}

/// Half-sample symmetric reflection of an index into `0..n`.
#[inline]
fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Box-averaged derivatives of a frame pair. `u_t` averages the forward
/// difference `u(t+1) − u(t)` over a `(2Δr+1)²` window; `u_x`, `u_y`
/// average central differences with step `max(Δr, 1)` of the mean frame
/// over a `2Δr+1` line. Out-of-range samples are mirrored.
pub fn spatiotemporal_gradients(f0: &Image, f1: &Image, delta_r: usize) -> Result<GradientTriple> {
    if (f0.n_x, f0.n_y) != (f1.n_x, f1.n_y) {
        return Err(Error::Shape(format!(
            "frames {}x{} and {}x{}",
            f0.n_x, f0.n_y, f1.n_x, f1.n_y
        )));
    }
    let (n_x, n_y) = (f0.n_x, f0.n_y);
    let avg: Vec<f64> = f0.data.iter().zip(&f1.data).map(|(a, b)| 0.5 * (a + b)).collect();
    let diff: Vec<f64> = f0.data.iter().zip(&f1.data).map(|(a, b)| b - a).collect();
    let at = |img: &[f64], x: i64, y: i64| img[mirror(x, n_x) + n_x * mirror(y, n_y)];
    let d = delta_r as i64;
    let h = d.max(1);
    let line = (2 * d + 1) as f64;
    let mut g = GradientTriple {
        n_x,
        n_y,
        u_x: vec![0.0; n_x * n_y],
        u_y: vec![0.0; n_x * n_y],
        u_t: vec![0.0; n_x * n_y],
    };
    for y in 0..n_y as i64 {
        for x in 0..n_x as i64 {
            let p = x as usize + n_x * y as usize;
            let mut st = 0.0;
            for j in -d..=d {
                for k in -d..=d {
                    st += at(&diff, x + j, y + k);
                }
            }
            let (mut sx, mut sy) = (0.0, 0.0);
            for j in -d..=d {
                sx += at(&avg, x + h, y + j) - at(&avg, x - h, y + j);
                sy += at(&avg, x + j, y + h) - at(&avg, x + j, y - h);
            }
            g.u_t[p] = st / (line * line);
            g.u_x[p] = sx / (line * 2.0 * h as f64);
            g.u_y[p] = sy / (line * 2.0 * h as f64);
        }
    }
    Ok(g)
}

/// `Υ = [diag(u_x) diag(u_y)]`, shape `n_s × 2n_s`.
pub fn assemble_upsilon(grad: &GradientTriple) -> SparseOperator {
    let n_s = grad.n_x * grad.n_y;
    let rows = (0..n_s).map(|i| vec![(i, grad.u_x[i]), (n_s + i, grad.u_y[i])]).collect();
    SparseOperator::from_rows(2 * n_s, rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlowRegularizer {
    /// `blockdiag(L, L)`: separate gradients of `s_x` and `s_y`.
    #[default]
    BlockDiagonal,
    /// `[L L]`: gradient of `s_x + s_y`.
    Concatenated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub delta_r: usize,
    pub iterations: usize,
    pub ell: usize,
    pub p: f64,
    pub q: f64,
    pub regularizer: FlowRegularizer,
    pub smoothing: Smoothing,
    /// Fixed `γ`; `None` selects it by GCV.
    pub gamma: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            delta_r: 1,
            iterations: 20,
            ell: 10,
            p: 2.0,
            q: 2.0,
            regularizer: FlowRegularizer::BlockDiagonal,
            smoothing: Smoothing::Relative(1e-2),
            gamma: None,
        }
    }
}

pub fn flow_regularizer(n_x: usize, n_y: usize, kind: FlowRegularizer) -> Result<SparseOperator> {
    let l = spatial_gradient(n_x, n_y)?;
    match kind {
        FlowRegularizer::BlockDiagonal => block_diagonal(&[l.clone(), l]),
        FlowRegularizer::Concatenated => {
            let n_s = n_x * n_y;
            let trips: Vec<_> = l.triplets().flat_map(|(r, c, v)| [(r, c, v), (r, c + n_s, v)]).collect();
            SparseOperator::from_triplets(l.n_rows(), 2 * n_s, trips)
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowSolve {
    pub flow: FlowField,
    /// Regularization parameter used in the final iteration.
    pub gamma: f64,
    pub report: MmgksReport,
}

/// Flow from `f0` to `f1` with the full per-iteration record.
pub fn solve_of_detailed(f0: &Image, f1: &Image, cfg: &FlowConfig) -> Result<FlowSolve> {
    let grad = spatiotemporal_gradients(f0, f1, cfg.delta_r)?;
    let (n_x, n_y) = (f0.n_x, f0.n_y);
    let upsilon = assemble_upsilon(&grad);
    let zero = FlowSolve {
        flow: FlowField::zeros(n_x, n_y),
        gamma: 0.0,
        report: MmgksReport::default(),
    };
    if upsilon.nnz() == 0 {
        return Ok(zero);
    }
    let b: Vec<f64> = grad.u_t.iter().map(|v| -v).collect();
    let config = MmgksConfig {
        ell: cfg.ell,
        q: cfg.q,
        p: cfg.p,
        smoothing: cfg.smoothing,
        lambda_rule: cfg.gamma.map_or(LambdaRule::Gcv, LambdaRule::Fixed),
        max_iters: cfg.iterations,
        stagnation_tol: 1e-6,
    };
    let mut solver = Mmgks::new(&upsilon, &b, config)?;
    solver.set_regularizer(Regularizer::new(flow_regularizer(n_x, n_y, cfg.regularizer)?))?;
    solver.run()?;
    let s = solver.solution();
    let gamma = solver.report().iterations.last().map_or(0.0, |r| r.lambda);
    Ok(FlowSolve {
        flow: FlowField::from_stacked(n_x, n_y, &s)?,
        gamma,
        report: solver.into_report(),
    })
}

/// Velocity field carrying `f0` onto `f1`.
pub fn solve_of(f0: &Image, f1: &Image, cfg: &FlowConfig) -> Result<FlowField> {
    Ok(solve_of_detailed(f0, f1, cfg)?.flow)
}

/// Approximate reverse flow: each `−s(r)` is written at the rounded,
/// clipped target `r + s(r)`; later pixels in row-major order overwrite
/// earlier ones and untouched targets stay zero.
pub fn reverse_flow(s: &FlowField) -> FlowField {
    let (n_x, n_y) = (s.n_x, s.n_y);
    let mut out = FlowField::zeros(n_x, n_y);
    for x in 0..n_x {
        for y in 0..n_y {
            let p = x + n_x * y;
            let tx = (x as f64 + s.s_x[p]).round().clamp(0.0, (n_x - 1) as f64) as usize;
            let ty = (y as f64 + s.s_y[p]).round().clamp(0.0, (n_y - 1) as f64) as usize;
            let t = tx + n_x * ty;
            out.s_x[t] = -s.s_x[p];
            out.s_y[t] = -s.s_y[p];
        }
    }
    out
}

/// Solves at reduced resolution `α` and maps the flow back to full size.
pub fn rescaled_solve_of(f0: &Image, f1: &Image, alpha: f64, cfg: &FlowConfig) -> Result<FlowField> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("rescale factor {alpha} outside (0, 1]")));
    }
    if alpha == 1.0 {
        return solve_of(f0, f1, cfg);
    }
    let (n_x, n_y) = (f0.n_x, f0.n_y);
    let (sx, sy) = ((alpha * n_x as f64).round() as usize, (alpha * n_y as f64).round() as usize);
    if sx < 4 || sy < 4 {
        return Err(Error::InvalidArgument(format!(
            "rescaling {n_x}x{n_y} by {alpha} leaves {sx}x{sy} < 4x4"
        )));
    }
    let coarse = solve_of(&f0.resample(sx, sy), &f1.resample(sx, sy), cfg)?;
    Ok(upscale_flow(&coarse, n_x, n_y))
}

/// Bilinear upsampling with velocities rescaled to the new pixel size.
pub fn upscale_flow(s: &FlowField, n_x: usize, n_y: usize) -> FlowField {
    let (kx, ky) = (n_x as f64 / s.n_x as f64, n_y as f64 / s.n_y as f64);
    let up = |v: &[f64], k: f64| {
        let img = Image {
            n_x: s.n_x,
            n_y: s.n_y,
            data: v.to_vec(),
        };
        img.resample(n_x, n_y).data.into_iter().map(|x| x * k).collect::<Vec<_>>()
    };
    FlowField {
        n_x,
        n_y,
        s_x: up(&s.s_x, kx),
        s_y: up(&s.s_y, ky),
    }
}
