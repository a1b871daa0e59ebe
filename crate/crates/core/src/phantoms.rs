//! Synthetic dynamic phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sequence::{Image, ImageSequence};

/// Parameters of the moving-blocks phantom. Blocks `0..n_fast` move at
/// `fast_speed` px/frame, the rest at `slow_speed`.
#[derive(Clone, Debug)]
pub struct BlocksConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_t: usize,
    pub block_size: usize,
    pub intensities: Vec<f64>,
    pub n_fast: usize,
    pub fast_speed: i64,
    pub slow_speed: i64,
    pub seed: u64,
}

impl Default for BlocksConfig {
    fn default() -> Self {
        Self {
            n_x: 90,
            n_y: 90,
            n_t: 12,
            block_size: 12,
            intensities: vec![1.0, 0.8, 0.9, 0.7],
            n_fast: 2,
            fast_speed: 2,
            slow_speed: 1,
            seed: 0,
        }
    }
}

/// Trajectory of one block: top-left corners for every frame.
#[derive(Clone, Debug)]
pub struct BlockTrack {
    pub intensity: f64,
    pub velocity: (i64, i64),
    pub corners: Vec<(i64, i64)>,
}

fn reflect_step(pos: i64, vel: i64, max: i64) -> (i64, i64) {
    let mut p = pos + vel;
    let mut v = vel;
    if p < 0 {
        p = -p;
        v = -v;
    } else if p > max {
        p = 2 * max - p;
        v = -v;
    }
    (p.clamp(0, max), v)
}

fn boxes_overlap(a: (i64, i64), b: (i64, i64), size: i64) -> bool {
    (a.0 - b.0).abs() < size && (a.1 - b.1).abs() < size
}

/// Samples non-overlapping constant-velocity trajectories that reflect off
/// the frame boundary.
pub fn block_tracks(cfg: &BlocksConfig) -> Result<Vec<BlockTrack>> {
    let size = cfg.block_size as i64;
    let max_x = cfg.n_x as i64 - size;
    let max_y = cfg.n_y as i64 - size;
    let max_speed = cfg.fast_speed.abs().max(cfg.slow_speed.abs());
    let n_blocks = cfg.intensities.len();
    if cfg.block_size == 0 || max_x < 2 * max_speed || max_y < 2 * max_speed || n_blocks == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} frame cannot hold {}-pixel blocks moving at {} px/frame",
            cfg.n_x, cfg.n_y, cfg.block_size, max_speed
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    const DIRECTIONS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

    'attempt: for _ in 0..10_000 {
        let mut tracks = Vec::with_capacity(n_blocks);
        for (b, &intensity) in cfg.intensities.iter().enumerate() {
            let speed = if b < cfg.n_fast { cfg.fast_speed } else { cfg.slow_speed };
            let dir = DIRECTIONS[rng.random_range(0..DIRECTIONS.len())];
            let mut vel = (dir.0 * speed, dir.1 * speed);
            let mut pos = (rng.random_range(0..=max_x), rng.random_range(0..=max_y));
            let mut corners = Vec::with_capacity(cfg.n_t);
            let velocity = vel;
            for _ in 0..cfg.n_t {
                corners.push(pos);
                let (px, vx) = reflect_step(pos.0, vel.0, max_x);
                let (py, vy) = reflect_step(pos.1, vel.1, max_y);
                pos = (px, py);
                vel = (vx, vy);
            }
            tracks.push(BlockTrack {
                intensity,
                velocity,
                corners,
            });
        }
        for t in 0..cfg.n_t {
            for i in 0..n_blocks {
                for j in i + 1..n_blocks {
                    if boxes_overlap(tracks[i].corners[t], tracks[j].corners[t], size) {
                        continue 'attempt;
                    }
                }
            }
        }
        return Ok(tracks);
    }
    Err(Error::InvalidArgument(
        "could not place non-overlapping blocks; frame too small".into(),
    ))
}

/// Four rigid blocks of constant intensity on a zero background.
pub fn moving_blocks(cfg: &BlocksConfig) -> Result<ImageSequence> {
    let tracks = block_tracks(cfg)?;
    let size = cfg.block_size;
    let mut frames = Vec::with_capacity(cfg.n_t);
    for t in 0..cfg.n_t {
        let mut img = Image::zeros(cfg.n_x, cfg.n_y);
        for track in &tracks {
            let (cx, cy) = track.corners[t];
            for y in cy as usize..cy as usize + size {
                for x in cx as usize..cx as usize + size {
                    img.set(x, y, track.intensity);
                }
            }
        }
        frames.push(img);
    }
    ImageSequence::from_frames(&frames)
}

/// Stationary ellipse with a disk travelling horizontally through it.
#[derive(Clone, Debug)]
pub struct PinballConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_t: usize,
    /// Semi-axes `(vertical, horizontal)` in pixels.
    pub ellipse_axes: (f64, f64),
    pub ellipse_intensity: f64,
    pub ball_radius: f64,
    pub ball_intensity: f64,
}

impl Default for PinballConfig {
    fn default() -> Self {
        Self {
            n_x: 50,
            n_y: 50,
            n_t: 30,
            ellipse_axes: (14.0, 20.0),
            ellipse_intensity: 0.5,
            ball_radius: 4.0,
            ball_intensity: 1.0,
        }
    }
}

impl PinballConfig {
    fn center(&self) -> (f64, f64) {
        ((self.n_x as f64 - 1.0) / 2.0, (self.n_y as f64 - 1.0) / 2.0)
    }

    /// Horizontal extent of the ball centre: one pixel clear of the
    /// ellipse boundary on either side.
    fn travel(&self) -> f64 {
        self.ellipse_axes.1 - self.ball_radius - 1.0
    }

    /// Ball centre `(x, y)` at frame `t`.
    pub fn ball_center(&self, t: usize) -> (f64, f64) {
        let (cx, cy) = self.center();
        let travel = self.travel();
        let frac = if self.n_t > 1 {
            t as f64 / (self.n_t - 1) as f64
        } else {
            0.0
        };
        (cx, cy - travel + 2.0 * travel * frac)
    }
}

pub fn pinball(cfg: &PinballConfig) -> Result<ImageSequence> {
    let (cx, cy) = cfg.center();
    let (ax, ay) = cfg.ellipse_axes;
    if cfg.travel() <= 0.0
        || cfg.ball_radius >= ax
        || 2.0 * ax > cfg.n_x as f64
        || 2.0 * ay > cfg.n_y as f64
    {
        return Err(Error::InvalidArgument(
            "ball path does not fit inside the ellipse".into(),
        ));
    }
    let r2 = cfg.ball_radius * cfg.ball_radius;
    let frames: Vec<Image> = (0..cfg.n_t)
        .map(|t| {
            let (bx, by) = cfg.ball_center(t);
            Image::from_fn(cfg.n_x, cfg.n_y, |x, y| {
                let (dx, dy) = (x as f64 - bx, y as f64 - by);
                if dx * dx + dy * dy <= r2 {
                    return cfg.ball_intensity;
                }
                let (ex, ey) = ((x as f64 - cx) / ax, (y as f64 - cy) / ay);
                if ex * ex + ey * ey <= 1.0 {
                    cfg.ellipse_intensity
                } else {
                    0.0
                }
            })
        })
        .collect();
    ImageSequence::from_frames(&frames)
}
