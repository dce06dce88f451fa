//! Reconstruction quality: MSE, PSNR and windowed SSIM.

use ndarray::{s, Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Error, Result};

/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP: f64 = 100.0;
/// Side of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 7;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(max²/mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64], max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP))
}

fn window_mean(img: ArrayView2<f64>, r: usize, c: usize) -> f64 {
    img.slice(s![r..r + SSIM_WINDOW, c..c + SSIM_WINDOW]).sum() / (SSIM_WINDOW * SSIM_WINDOW) as f64
}

/// Mean SSIM over all fully contained 7×7 uniform windows, with sample
/// (co)variances and stabilizers `C1 = (0.01·L)²`, `C2 = (0.03·L)²`.
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, data_range: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}")));
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);
    let aa = &a * &a;
    let bb = &b * &b;
    let ab = &a * &b;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let ux = window_mean(a, r, c);
            let uy = window_mean(b, r, c);
            let vx = cov_norm * (window_mean(aa.view(), r, c) - ux * ux);
            let vy = cov_norm * (window_mean(bb.view(), r, c) - uy * uy);
            let vxy = cov_norm * (window_mean(ab.view(), r, c) - ux * uy);
            let num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2);
            let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// [`ssim`] on flattened row-major images of shape `(h, w)`.
pub fn ssim_flat(a: ArrayView1<f64>, b: ArrayView1<f64>, shape: (usize, usize), data_range: f64) -> Result<f64> {
    let to_img = |v: ArrayView1<f64>| -> Result<Array2<f64>> {
        Array2::from_shape_vec(shape, v.to_vec()).map_err(|_| Error::DimensionMismatch {
            expected: shape.0 * shape.1,
            got: v.len(),
        })
    };
    let (ia, ib) = (to_img(a)?, to_img(b)?);
    ssim(ia.view(), ib.view(), data_range)
}
