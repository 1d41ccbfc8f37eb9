//! EWA projection of 3D Gaussians to screen space, forward and backward.
//!
//! Forward: camera-space transform, perspective Jacobian, 2D covariance with
//! a low-pass floor, conic (inverse covariance), 3-sigma pixel radius, and
//! tile overlap counts. Backward: exact chain rule through conic inversion,
//! the covariance sandwich, the perspective projection, quaternion
//! normalization, and the exp/sigmoid activations.

use crate::math::{
    add3, lit, m23_mul_m3, m3_mulv, m3_tmulv, m3_transpose, max_eigen_sym2, normalize4,
    quat_rot, quat_rot_partials, sigmoid, Scalar, M23, M3, Sym2, V3, V4,
};
use crate::scene::{Camera, GaussianCloud, TileGrid};

use super::{ParamGrads, PipelineError, PipelineParams, ProjectedSet, RasterGrads};

struct ProjIntermediates<T> {
    t: V3<T>,
    qn: V4<T>,
    q_norm: T,
    rot: M3<T>,
    scale_sq: V3<T>,
    sigma: M3<T>,
    m: M23<T>,
    cov2: Sym2<T>,
    conic: Sym2<T>,
}

/// Shared forward computation up to the conic; `None` when the Gaussian is
/// culled (behind the near plane, degenerate rotation, or a 2D covariance
/// that fails to invert).
fn intermediates<T: Scalar>(
    position: V3<T>,
    log_scale: V3<T>,
    rotation: V4<T>,
    camera: &Camera<T>,
    params: &PipelineParams<T>,
) -> Option<ProjIntermediates<T>> {
    let t = add3(m3_mulv(&camera.rot, position), camera.trans);
    if t[2] <= params.near_plane {
        return None;
    }
    let (qn, q_norm) = normalize4(rotation);
    if q_norm <= lit(1e-12) {
        return None;
    }
    let rot = quat_rot(qn);
    let two = lit::<T>(2.0);
    let scale_sq = [
        (two * log_scale[0]).exp(),
        (two * log_scale[1]).exp(),
        (two * log_scale[2]).exp(),
    ];
    // Sigma = R diag(scale^2) R^T
    let mut rd = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            rd[i][k] = rot[i][k] * scale_sq[k];
        }
    }
    let sigma = crate::math::m3_mul(&rd, &m3_transpose(&rot));
    let tz = t[2];
    let j: M23<T> = [
        [camera.fx / tz, T::zero(), -camera.fx * t[0] / (tz * tz)],
        [T::zero(), camera.fy / tz, -camera.fy * t[1] / (tz * tz)],
    ];
    let m = m23_mul_m3(&j, &camera.rot);
    let mut cov2 = crate::math::sandwich23(&m, &sigma);
    cov2[0] = cov2[0] + params.covariance_floor;
    cov2[2] = cov2[2] + params.covariance_floor;
    let (conic, _det) = crate::math::inv_sym2(cov2)?;
    Some(ProjIntermediates {
        t,
        qn,
        q_norm,
        rot,
        scale_sq,
        sigma,
        m,
        cov2,
        conic,
    })
}

/// Projects every Gaussian to screen space and counts overlapped tiles.
pub fn project_forward<T: Scalar>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    grid: &TileGrid,
    params: &PipelineParams<T>,
) -> Result<ProjectedSet<T>, PipelineError> {
    if !cloud.all_finite() {
        return Err(PipelineError::NonFiniteParameter);
    }
    let n = cloud.len();
    let mut proj = ProjectedSet::with_capacity(n);
    let three = lit::<T>(3.0);
    for i in 0..n {
        let color = cloud.colors[i];
        let opacity = sigmoid(cloud.opacity_logits[i]);
        match intermediates(
            cloud.positions[i],
            cloud.log_scales[i],
            cloud.rotations[i],
            camera,
            params,
        ) {
            None => {
                let t = add3(m3_mulv(&camera.rot, cloud.positions[i]), camera.trans);
                proj.means2d.push([T::zero(); 2]);
                proj.conics.push([T::zero(); 3]);
                proj.depths.push(t[2]);
                proj.radii.push(0);
                proj.tile_counts.push(0);
                proj.colors.push(color);
                proj.opacities.push(opacity);
                proj.visible.push(false);
            }
            Some(inter) => {
                let tz = inter.t[2];
                let mean2d = [
                    camera.fx * inter.t[0] / tz + camera.cx,
                    camera.fy * inter.t[1] / tz + camera.cy,
                ];
                let lambda_max = max_eigen_sym2(inter.cov2);
                let radius = (three * lambda_max.sqrt()).ceil().to_f64().unwrap() as u32;
                let tile_count = grid
                    .overlap_rect(mean2d, radius)
                    .map(|r| (r[1] - r[0]) * (r[3] - r[2]))
                    .unwrap_or(0);
                proj.means2d.push(mean2d);
                proj.conics.push(inter.conic);
                proj.depths.push(tz);
                proj.radii.push(radius);
                proj.tile_counts.push(tile_count);
                proj.colors.push(color);
                proj.opacities.push(opacity);
                proj.visible.push(true);
            }
        }
    }
    Ok(proj)
}

/// Chains screen-space gradients back to the raw Gaussian parameters, and
/// records each Gaussian's screen-space positional gradient norm for
/// densification statistics.
pub fn project_backward<T: Scalar>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    proj: &ProjectedSet<T>,
    raster: &RasterGrads<T>,
    params: &PipelineParams<T>,
) -> ParamGrads<T> {
    let n = cloud.len();
    assert_eq!(proj.len(), n, "projection does not match the cloud");
    assert_eq!(raster.opacities.len(), n, "gradients do not match the cloud");
    let mut grads = ParamGrads::zeros(n);
    let two = lit::<T>(2.0);
    let half = lit::<T>(0.5);
    for i in 0..n {
        if !proj.visible[i] {
            continue;
        }
        let inter = match intermediates(
            cloud.positions[i],
            cloud.log_scales[i],
            cloud.rotations[i],
            camera,
            params,
        ) {
            Some(inter) => inter,
            None => continue,
        };
        // Colors are raw; opacity chains through the sigmoid.
        grads.colors[i] = raster.colors[i];
        let op = proj.opacities[i];
        grads.opacity_logits[i] = raster.opacities[i] * op * (T::one() - op);

        let gu = raster.means2d[i][0];
        let gv = raster.means2d[i][1];
        grads.screen_grad_norms[i] = (gu * gu + gv * gv).sqrt();

        // Conic C = inverse of the floored 2D covariance S: dL/dS = -C G C,
        // where G is the full-matrix gradient assembled from the packed
        // (a, b, c) upstream entries.
        let [ga, gb, gc] = raster.conics[i];
        let g_full = [[ga, gb * half], [gb * half, gc]];
        let c = [
            [inter.conic[0], inter.conic[1]],
            [inter.conic[1], inter.conic[2]],
        ];
        let mut g2 = [[T::zero(); 2]; 2]; // dL/dS (2x2 symmetric)
        for r in 0..2 {
            for s in 0..2 {
                let mut acc = T::zero();
                for a in 0..2 {
                    for b in 0..2 {
                        acc = acc + c[r][a] * g_full[a][b] * c[b][s];
                    }
                }
                g2[r][s] = -acc;
            }
        }
        // The +floor on the diagonal passes gradients through unchanged.

        // S = M Sigma M^T: dL/dSigma = M^T G2 M; dL/dM = 2 G2 M Sigma.
        let m = &inter.m;
        let mut g_sigma = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                let mut acc = T::zero();
                for a in 0..2 {
                    for b in 0..2 {
                        acc = acc + m[a][r] * g2[a][b] * m[b][s];
                    }
                }
                g_sigma[r][s] = acc;
            }
        }
        let mut g2_m_sigma = [[T::zero(); 3]; 2];
        for r in 0..2 {
            for s in 0..3 {
                let mut acc = T::zero();
                for a in 0..2 {
                    for b in 0..3 {
                        acc = acc + g2[r][a] * m[a][b] * inter.sigma[b][s];
                    }
                }
                g2_m_sigma[r][s] = acc;
            }
        }
        let g_m: M23<T> = [
            [
                two * g2_m_sigma[0][0],
                two * g2_m_sigma[0][1],
                two * g2_m_sigma[0][2],
            ],
            [
                two * g2_m_sigma[1][0],
                two * g2_m_sigma[1][1],
                two * g2_m_sigma[1][2],
            ],
        ];
        // M = J W: dL/dJ = dL/dM W^T.
        let w = &camera.rot;
        let mut g_j = [[T::zero(); 3]; 2];
        for r in 0..2 {
            for s in 0..3 {
                let mut acc = T::zero();
                for a in 0..3 {
                    acc = acc + g_m[r][a] * w[s][a];
                }
                g_j[r][s] = acc;
            }
        }
        // Camera-space position gradient: the 2D mean part plus the Jacobian
        // part (J's nonzero entries depend on t).
        let (tx, ty, tz) = (inter.t[0], inter.t[1], inter.t[2]);
        let tz2 = tz * tz;
        let tz3 = tz2 * tz;
        let mut dt = [
            gu * camera.fx / tz,
            gv * camera.fy / tz,
            -gu * camera.fx * tx / tz2 - gv * camera.fy * ty / tz2,
        ];
        dt[0] = dt[0] + g_j[0][2] * (-camera.fx / tz2);
        dt[1] = dt[1] + g_j[1][2] * (-camera.fy / tz2);
        dt[2] = dt[2]
            + g_j[0][0] * (-camera.fx / tz2)
            + g_j[0][2] * (two * camera.fx * tx / tz3)
            + g_j[1][1] * (-camera.fy / tz2)
            + g_j[1][2] * (two * camera.fy * ty / tz3);
        grads.positions[i] = m3_tmulv(w, dt);

        // Sigma = R D R^T with D = diag(exp(2 ls)):
        // dL/dR = 2 GSigma R D; dL/dls_k = (R^T GSigma R)_kk * 2 exp(2 ls_k).
        let r_mat = &inter.rot;
        for k in 0..3 {
            let mut acc = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    acc = acc + r_mat[a][k] * g_sigma[a][b] * r_mat[b][k];
                }
            }
            grads.log_scales[i][k] = acc * two * inter.scale_sq[k];
        }
        let mut g_r = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                let mut acc = T::zero();
                for a in 0..3 {
                    acc = acc + g_sigma[r][a] * r_mat[a][s] * inter.scale_sq[s];
                }
                g_r[r][s] = two * acc;
            }
        }
        // R = R(q_hat), then the normalization Jacobian (I - q q^T)/|q|.
        let partials = quat_rot_partials(inter.qn);
        let mut g_qn = [T::zero(); 4];
        for (c_idx, partial) in partials.iter().enumerate() {
            let mut acc = T::zero();
            for r in 0..3 {
                for s in 0..3 {
                    acc = acc + g_r[r][s] * partial[r][s];
                }
            }
            g_qn[c_idx] = acc;
        }
        let dot = g_qn[0] * inter.qn[0]
            + g_qn[1] * inter.qn[1]
            + g_qn[2] * inter.qn[2]
            + g_qn[3] * inter.qn[3];
        for c_idx in 0..4 {
            grads.rotations[i][c_idx] = (g_qn[c_idx] - inter.qn[c_idx] * dot) / inter.q_norm;
        }
    }
    grads
}
