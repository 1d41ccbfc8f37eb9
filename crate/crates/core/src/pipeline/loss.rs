//! Training loss: (1 - lambda) * L1 + lambda * (1 - SSIM), with the exact
//! analytic gradient with respect to every rendered pixel channel.

use crate::math::{lit, Scalar, V3};
use crate::scene::ImageBuffer;
use crate::ssim::{ssim_mean_and_grad, SsimError};

use super::{PipelineError, ResidentTarget};

impl From<SsimError> for PipelineError {
    fn from(e: SsimError) -> Self {
        match e {
            SsimError::TooSmall => PipelineError::TooSmall,
            SsimError::DimensionMismatch => PipelineError::DimensionMismatch,
        }
    }
}

/// L1 subgradient convention: sign(x), with sign(0) = 0.
#[inline]
fn l1_sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Loss and per-pixel gradient against the resident target.
/// `lambda_dssim` = 0 gives pure mean absolute error.
pub fn loss_gradient<T: Scalar>(
    render: &ImageBuffer<T>,
    target: &ResidentTarget<T>,
    lambda_dssim: T,
) -> Result<(T, Vec<V3<T>>), PipelineError> {
    if render.width != target.width || render.height != target.height {
        return Err(PipelineError::DimensionMismatch);
    }
    let n = render.pixels.len();
    let n_channels = lit::<T>(n as f64 * 3.0);
    let one = T::one();
    let l1_weight = (one - lambda_dssim) / n_channels;
    let mut l1_sum = T::zero();
    let mut grad = vec![[T::zero(); 3]; n];
    for i in 0..n {
        for ch in 0..3 {
            let r = render.pixels[i][ch] - target.planes[ch][i];
            l1_sum = l1_sum + r.abs();
            grad[i][ch] = l1_weight * l1_sign(r);
        }
    }
    let mut loss = (one - lambda_dssim) * l1_sum / n_channels;
    if lambda_dssim != T::zero() {
        let render_planes = render.planes();
        let (ssim, ssim_grad) = ssim_mean_and_grad(
            &render_planes,
            &target.planes,
            render.width as usize,
            render.height as usize,
        )?;
        loss = loss + lambda_dssim * (one - ssim);
        for i in 0..n {
            for ch in 0..3 {
                grad[i][ch] = grad[i][ch] - lambda_dssim * ssim_grad[i][ch];
            }
        }
    }
    Ok((loss, grad))
}
