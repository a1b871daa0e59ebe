//! Image-quality measures.

use crate::error::{Error, Result};
use crate::sequence::ImageSequence;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct QualityScore {
    pub rre: f64,
    pub ssim: f64,
    pub per_frame_rre: Vec<f64>,
    pub per_frame_ssim: Vec<f64>,
}

/// `‖u − u_true‖ / ‖u_true‖`.
pub fn rre(u: &[f64], u_true: &[f64]) -> Result<f64> {
    if u.len() != u_true.len() {
        return Err(Error::Shape(format!("{} vs {} values", u.len(), u_true.len())));
    }
    let den = crate::linalg::norm(u_true);
    if den == 0.0 {
        return Err(Error::InvalidArgument("zero reference in RRE".into()));
    }
    let num: f64 = u.iter().zip(u_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM of one frame pair over all fully contained windows.
/// Frames smaller than the window use a single window clipped to the frame.
pub fn ssim_frame(a: &[f64], b: &[f64], n_x: usize, n_y: usize, range: f64) -> f64 {
    let g = gaussian_window();
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (wx, wy) = (WINDOW.min(n_x), WINDOW.min(n_y));
    let (ox, oy) = ((WINDOW - wx) / 2, (WINDOW - wy) / 2);
    let norm: f64 = (0..wy).map(|j| g[j + oy]).sum::<f64>() * (0..wx).map(|i| g[i + ox]).sum::<f64>();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=n_y - wy {
        for x0 in 0..=n_x - wx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..wy {
                for i in 0..wx {
                    let w = g[i + ox] * g[j + oy] / norm;
                    let p = (x0 + i) + n_x * (y0 + j);
                    let (va, vb) = (a[p], b[p]);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            let va = (saa - ma * ma).max(0.0);
            let vb = (sbb - mb * mb).max(0.0);
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn pair_range(u: &ImageSequence, v: &ImageSequence) -> f64 {
    let (a0, a1) = u.min_max();
    let (b0, b1) = v.min_max();
    let r = a1.max(b1) - a0.min(b0);
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

fn check_dims(u: &ImageSequence, v: &ImageSequence) -> Result<()> {
    if (u.n_x, u.n_y, u.n_t) != (v.n_x, v.n_y, v.n_t) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            u.n_x, u.n_y, u.n_t, v.n_x, v.n_y, v.n_t
        )));
    }
    Ok(())
}

/// Per-frame SSIM, dynamic range from the union of both sequences.
pub fn ssim_per_frame(u: &ImageSequence, u_true: &ImageSequence) -> Result<Vec<f64>> {
    check_dims(u, u_true)?;
    let range = pair_range(u, u_true);
    Ok((0..u.n_t)
        .map(|t| {
            if u.frame(t) == u_true.frame(t) {
                1.0
            } else {
                ssim_frame(u.frame(t), u_true.frame(t), u.n_x, u.n_y, range)
            }
        })
        .collect())
}

/// Mean over frames of the windowed SSIM.
pub fn ssim(u: &ImageSequence, u_true: &ImageSequence) -> Result<f64> {
    let per = ssim_per_frame(u, u_true)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// RRE per frame and its mean, plus per-frame SSIM and its mean.
pub fn quality(u: &ImageSequence, u_true: &ImageSequence) -> Result<QualityScore> {
    check_dims(u, u_true)?;
    let per_frame_rre = (0..u.n_t)
        .map(|t| rre(u.frame(t), u_true.frame(t)))
        .collect::<Result<Vec<_>>>()?;
    let per_frame_ssim = ssim_per_frame(u, u_true)?;
    let n = u.n_t as f64;
    Ok(QualityScore {
        rre: per_frame_rre.iter().sum::<f64>() / n,
        ssim: per_frame_ssim.iter().sum::<f64>() / n,
        per_frame_rre,
        per_frame_ssim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rre_identities() {
        let u = vec![1.0, -2.0, 3.0];
        assert_eq!(rre(&u, &u).unwrap(), 0.0);
        assert_eq!(rre(&[0.0; 3], &u).unwrap(), 1.0);
        let doubled: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
        assert_eq!(rre(&doubled, &u).unwrap(), 1.0);
        assert!(rre(&u, &[0.0; 3]).is_err());
        assert!(rre(&u, &[1.0]).is_err());
    }

    #[test]
    fn constant_frames_reduce_to_luminance() {
        let a = ImageSequence::new(12, 12, 1, vec![0.2; 144]).unwrap();
        let b = ImageSequence::new(12, 12, 1, vec![0.7; 144]).unwrap();
        let r: f64 = 0.5;
        let c1 = (0.01 * r).powi(2);
        let expected = (2.0 * 0.2 * 0.7 + c1) / (0.04 + 0.49 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn identical_is_one_and_symmetric() {
        let a = ImageSequence::new(16, 14, 2, (0..448).map(|i| ((i * 13) % 17) as f64).collect()).unwrap();
        let b = ImageSequence::new(16, 14, 2, (0..448).map(|i| ((i * 7) % 5) as f64).collect()).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }
}
