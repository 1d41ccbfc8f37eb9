//! Windowed SSIM with an analytic gradient. One implementation serves both
//! the quality metric and the D-SSIM loss term; verification against an
//! independently written reference lives in the test suites.
//!
//! Definition: 11x11 Gaussian window (sigma 1.5, weights normalized to sum 1),
//! stabilizers C1 = 0.01^2 and C2 = 0.03^2 for a unit dynamic range, windows
//! restricted to positions fully inside the image (valid-region convolution),
//! per-channel mean averaged across channels.

use thiserror::Error;

use crate::math::{lit, Scalar, V3};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum SsimError {
    #[error("image sides must be at least {WINDOW} px")]
    TooSmall,
    #[error("image dimensions differ")]
    DimensionMismatch,
}

fn window_weights<T: Scalar>() -> [[T; WINDOW]; WINDOW] {
    let mut w = [[0.0f64; WINDOW]; WINDOW];
    let mut sum = 0.0;
    for (r, row) in w.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let du = r as f64 - (WINDOW as f64 - 1.0) / 2.0;
            let dv = c as f64 - (WINDOW as f64 - 1.0) / 2.0;
            *cell = (-(du * du + dv * dv) / (2.0 * SIGMA * SIGMA)).exp();
            sum += *cell;
        }
    }
    let mut out = [[T::zero(); WINDOW]; WINDOW];
    for r in 0..WINDOW {
        for c in 0..WINDOW {
            out[r][c] = lit(w[r][c] / sum);
        }
    }
    out
}

struct WindowMoments<T> {
    mu_x: T,
    mu_y: T,
    var_x: T,
    var_y: T,
    cov: T,
}

fn moments<T: Scalar>(
    x: &[T],
    y: &[T],
    width: usize,
    ox: usize,
    oy: usize,
    weights: &[[T; WINDOW]; WINDOW],
) -> WindowMoments<T> {
    let mut mu_x = T::zero();
    let mut mu_y = T::zero();
    let mut xx = T::zero();
    let mut yy = T::zero();
    let mut xy = T::zero();
    for r in 0..WINDOW {
        let row = (oy + r) * width + ox;
        for c in 0..WINDOW {
            let g = weights[r][c];
            let xv = x[row + c];
            let yv = y[row + c];
            mu_x = mu_x + g * xv;
            mu_y = mu_y + g * yv;
            xx = xx + g * xv * xv;
            yy = yy + g * yv * yv;
            xy = xy + g * xv * yv;
        }
    }
    WindowMoments {
        mu_x,
        mu_y,
        var_x: xx - mu_x * mu_x,
        var_y: yy - mu_y * mu_y,
        cov: xy - mu_x * mu_y,
    }
}

fn window_ssim<T: Scalar>(m: &WindowMoments<T>) -> T {
    let c1 = lit::<T>(C1);
    let c2 = lit::<T>(C2);
    let two = lit::<T>(2.0);
    let a1 = two * m.mu_x * m.mu_y + c1;
    let a2 = two * m.cov + c2;
    let b1 = m.mu_x * m.mu_x + m.mu_y * m.mu_y + c1;
    let b2 = m.var_x + m.var_y + c2;
    (a1 * a2) / (b1 * b2)
}

/// Mean SSIM of one channel plane pair.
pub fn ssim_plane<T: Scalar>(x: &[T], y: &[T], width: usize, height: usize) -> Result<T, SsimError> {
    if x.len() != y.len() || x.len() != width * height {
        return Err(SsimError::DimensionMismatch);
    }
    if width < WINDOW || height < WINDOW {
        return Err(SsimError::TooSmall);
    }
    let weights = window_weights::<T>();
    let mut sum = T::zero();
    let n_win = (width - WINDOW + 1) * (height - WINDOW + 1);
    for oy in 0..=height - WINDOW {
        for ox in 0..=width - WINDOW {
            sum = sum + window_ssim(&moments(x, y, width, ox, oy, &weights));
        }
    }
    Ok(sum / lit(n_win as f64))
}

/// Mean SSIM over RGB planes plus the gradient of that mean with respect to
/// every pixel of `x`.
pub fn ssim_mean_and_grad<T: Scalar>(
    x_planes: &[Vec<T>; 3],
    y_planes: &[Vec<T>; 3],
    width: usize,
    height: usize,
) -> Result<(T, Vec<V3<T>>), SsimError> {
    if width < WINDOW || height < WINDOW {
        return Err(SsimError::TooSmall);
    }
    for ch in 0..3 {
        if x_planes[ch].len() != width * height || y_planes[ch].len() != width * height {
            return Err(SsimError::DimensionMismatch);
        }
    }
    let weights = window_weights::<T>();
    let n_win = (width - WINDOW + 1) * (height - WINDOW + 1);
    let norm = T::one() / (lit::<T>(3.0) * lit::<T>(n_win as f64));
    let two = lit::<T>(2.0);
    let mut mean = T::zero();
    let mut grad = vec![[T::zero(); 3]; width * height];
    for ch in 0..3 {
        let x = &x_planes[ch];
        let y = &y_planes[ch];
        let mut ch_sum = T::zero();
        for oy in 0..=height - WINDOW {
            for ox in 0..=width - WINDOW {
                let m = moments(x, y, width, ox, oy, &weights);
                let c1 = lit::<T>(C1);
                let c2 = lit::<T>(C2);
                let a1 = two * m.mu_x * m.mu_y + c1;
                let a2 = two * m.cov + c2;
                let b1 = m.mu_x * m.mu_x + m.mu_y * m.mu_y + c1;
                let b2 = m.var_x + m.var_y + c2;
                let denom = b1 * b2;
                ch_sum = ch_sum + (a1 * a2) / denom;
                // dS/d{a1,a2,b1,b2}, then chain into each pixel through the
                // weighted moments:
                //   d mu_x / d x_i    = g_i
                //   d var_x / d x_i   = 2 g_i (x_i - mu_x)
                //   d cov / d x_i     = g_i (y_i - mu_y)
                // and A1, A2 carry a factor 2 on their moment terms.
                let d_a1 = a2 / denom;
                let d_a2 = a1 / denom;
                let d_b1 = -(a1 * a2) / (b1 * b1 * b2);
                let d_b2 = -(a1 * a2) / (b1 * b2 * b2);
                let base = d_a1 * two * m.mu_y + d_b1 * two * m.mu_x;
                for r in 0..WINDOW {
                    let row = (oy + r) * width + ox;
                    for c in 0..WINDOW {
                        let i = row + c;
                        let g = weights[r][c];
                        let d = base
                            + d_b2 * two * (x[i] - m.mu_x)
                            + d_a2 * two * (y[i] - m.mu_y);
                        grad[i][ch] = grad[i][ch] + g * d * norm;
                    }
                }
            }
        }
        mean = mean + ch_sum / lit::<T>(n_win as f64);
    }
    Ok((mean / lit::<T>(3.0), grad))
}
