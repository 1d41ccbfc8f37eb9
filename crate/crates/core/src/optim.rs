//! Adam parameter updates and the two densification strategies: adaptive
//! clone/split/prune ("default") and fixed-budget relocation with positional
//! noise ("MCMC").

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::math::{add3, lit, logit, m3_mulv, normalize4, quat_rot, sigmoid, Scalar, V3, V4};
use crate::pipeline::ParamGrads;
use crate::scene::GaussianCloud;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient or moment arrays do not match the cloud layout")]
    ShapeMismatch,
    #[error("cloud has {count} Gaussians but the fixed budget is {budget}")]
    BudgetViolation { count: usize, budget: usize },
}

/// Adam hyperparameters shared by every parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            beta1: lit(0.9),
            beta2: lit(0.999),
            epsilon: lit(1e-8),
        }
    }
}

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupLrs<T> {
    pub positions: T,
    pub log_scales: T,
    pub rotations: T,
    pub opacity_logits: T,
    pub colors: T,
}

impl<T: Scalar> GroupLrs<T> {
    /// Conventional defaults, scaled for short desk-scale runs (hundreds of
    /// iterations); the position rate additionally scales with the scene
    /// extent.
    pub fn defaults(extent: T) -> Self {
        GroupLrs {
            positions: lit::<T>(2e-3) * extent,
            log_scales: lit(5e-3),
            rotations: lit(1e-3),
            opacity_logits: lit(5e-2),
            colors: lit(1e-2),
        }
    }
}

/// Exponential interpolation from `initial` to `final_value` as `progress`
/// goes 0 -> 1; used for the position learning-rate decay.
pub fn exponential_decay<T: Scalar>(initial: T, final_value: T, progress: T) -> T {
    initial * (final_value / initial).powf(progress.max(T::zero()).min(T::one()))
}

/// First/second moment estimates for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub params: AdamParams<T>,
    pub step_count: u64,
    pub m_positions: Vec<V3<T>>,
    pub v_positions: Vec<V3<T>>,
    pub m_log_scales: Vec<V3<T>>,
    pub v_log_scales: Vec<V3<T>>,
    pub m_rotations: Vec<V4<T>>,
    pub v_rotations: Vec<V4<T>>,
    pub m_opacity: Vec<T>,
    pub v_opacity: Vec<T>,
    pub m_colors: Vec<V3<T>>,
    pub v_colors: Vec<V3<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize, params: AdamParams<T>) -> Self {
        AdamState {
            params,
            step_count: 0,
            m_positions: vec![[T::zero(); 3]; n],
            v_positions: vec![[T::zero(); 3]; n],
            m_log_scales: vec![[T::zero(); 3]; n],
            v_log_scales: vec![[T::zero(); 3]; n],
            m_rotations: vec![[T::zero(); 4]; n],
            v_rotations: vec![[T::zero(); 4]; n],
            m_opacity: vec![T::zero(); n],
            v_opacity: vec![T::zero(); n],
            m_colors: vec![[T::zero(); 3]; n],
            v_colors: vec![[T::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_positions.is_empty()
    }

    /// Appends zero moments for one newly created Gaussian.
    pub fn push_zero(&mut self) {
        self.m_positions.push([T::zero(); 3]);
        self.v_positions.push([T::zero(); 3]);
        self.m_log_scales.push([T::zero(); 3]);
        self.v_log_scales.push([T::zero(); 3]);
        self.m_rotations.push([T::zero(); 4]);
        self.v_rotations.push([T::zero(); 4]);
        self.m_opacity.push(T::zero());
        self.v_opacity.push(T::zero());
        self.m_colors.push([T::zero(); 3]);
        self.v_colors.push([T::zero(); 3]);
    }

    /// Keeps only the entries whose mask is true, in lockstep with
    /// `GaussianCloud::retain_mask`.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let mut idx;
        macro_rules! retain {
            ($field:ident) => {
                idx = 0;
                self.$field.retain(|_| {
                    let k = keep[idx];
                    idx += 1;
                    k
                });
            };
        }
        retain!(m_positions);
        retain!(v_positions);
        retain!(m_log_scales);
        retain!(v_log_scales);
        retain!(m_rotations);
        retain!(v_rotations);
        retain!(m_opacity);
        retain!(v_opacity);
        retain!(m_colors);
        retain!(v_colors);
    }

    /// Zeroes every moment of one Gaussian (used after relocation).
    pub fn zero_entry(&mut self, i: usize) {
        self.m_positions[i] = [T::zero(); 3];
        self.v_positions[i] = [T::zero(); 3];
        self.m_log_scales[i] = [T::zero(); 3];
        self.v_log_scales[i] = [T::zero(); 3];
        self.m_rotations[i] = [T::zero(); 4];
        self.v_rotations[i] = [T::zero(); 4];
        self.m_opacity[i] = T::zero();
        self.v_opacity[i] = T::zero();
        self.m_colors[i] = [T::zero(); 3];
        self.v_colors[i] = [T::zero(); 3];
    }

    /// Zeroes the opacity moments of every Gaussian (used on opacity reset).
    pub fn zero_opacity_moments(&mut self) {
        for m in &mut self.m_opacity {
            *m = T::zero();
        }
        for v in &mut self.v_opacity {
            *v = T::zero();
        }
    }
}

#[inline]
fn adam_update<T: Scalar>(p: &mut T, g: T, m: &mut T, v: &mut T, lr: T, bc1: T, bc2: T, ap: &AdamParams<T>) {
    *m = ap.beta1 * *m + (T::one() - ap.beta1) * g;
    *v = ap.beta2 * *v + (T::one() - ap.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p = *p - lr * m_hat / (v_hat.sqrt() + ap.epsilon);
}

/// One Adam step with bias correction over all five parameter groups;
/// rotations are re-normalized afterwards.
pub fn adam_step<T: Scalar>(
    cloud: &mut GaussianCloud<T>,
    grads: &ParamGrads<T>,
    state: &mut AdamState<T>,
    lrs: &GroupLrs<T>,
) -> Result<(), OptimError> {
    let n = cloud.len();
    if state.len() != n || grads.positions.len() != n {
        return Err(OptimError::ShapeMismatch);
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let ap = state.params;
    let bc1 = T::one() - ap.beta1.powi(t);
    let bc2 = T::one() - ap.beta2.powi(t);
    for i in 0..n {
        for k in 0..3 {
            adam_update(
                &mut cloud.positions[i][k],
                grads.positions[i][k],
                &mut state.m_positions[i][k],
                &mut state.v_positions[i][k],
                lrs.positions,
                bc1,
                bc2,
                &ap,
            );
            adam_update(
                &mut cloud.log_scales[i][k],
                grads.log_scales[i][k],
                &mut state.m_log_scales[i][k],
                &mut state.v_log_scales[i][k],
                lrs.log_scales,
                bc1,
                bc2,
                &ap,
            );
            adam_update(
                &mut cloud.colors[i][k],
                grads.colors[i][k],
                &mut state.m_colors[i][k],
                &mut state.v_colors[i][k],
                lrs.colors,
                bc1,
                bc2,
                &ap,
            );
        }
        for k in 0..4 {
            adam_update(
                &mut cloud.rotations[i][k],
                grads.rotations[i][k],
                &mut state.m_rotations[i][k],
                &mut state.v_rotations[i][k],
                lrs.rotations,
                bc1,
                bc2,
                &ap,
            );
        }
        adam_update(
            &mut cloud.opacity_logits[i],
            grads.opacity_logits[i],
            &mut state.m_opacity[i],
            &mut state.v_opacity[i],
            lrs.opacity_logits,
            bc1,
            bc2,
            &ap,
        );
        let (qn, norm) = normalize4(cloud.rotations[i]);
        if norm > lit(1e-12) {
            cloud.rotations[i] = qn;
        }
    }
    Ok(())
}

/// Accumulated screen-space gradient norms used to pick densification
/// candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyStats<T> {
    pub grad_accum: Vec<T>,
    pub counts: Vec<u32>,
}

impl<T: Scalar> DensifyStats<T> {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_accum: vec![T::zero(); n],
            counts: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    /// Adds this iteration's screen-gradient norms for visible Gaussians.
    pub fn accumulate(&mut self, screen_norms: &[T], visible: &[bool]) {
        assert_eq!(screen_norms.len(), self.len());
        assert_eq!(visible.len(), self.len());
        for i in 0..screen_norms.len() {
            if visible[i] {
                self.grad_accum[i] = self.grad_accum[i] + screen_norms[i];
                self.counts[i] += 1;
            }
        }
    }

    pub fn reset(&mut self, n: usize) {
        self.grad_accum.clear();
        self.grad_accum.resize(n, T::zero());
        self.counts.clear();
        self.counts.resize(n, 0);
    }
}

/// Hyperparameters of the adaptive clone/split/prune strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultDensifyOpts<T> {
    /// Densification event every this many iterations ...
    pub interval: u64,
    /// ... starting here ...
    pub start: u64,
    /// ... and stopping here (inclusive bound on event iterations).
    pub stop: u64,
    /// Mean screen-gradient norm (normalized by half the max image side)
    /// above which a Gaussian is densified.
    pub grad_threshold: T,
    /// Fraction of the scene extent separating clone (below) from split.
    pub size_threshold_rel: T,
    /// Split children get scales divided by this.
    pub split_factor: T,
    /// Gaussians with opacity below this are pruned at events.
    pub prune_opacity: T,
    /// Opacity logits are clamped down every this many iterations.
    pub opacity_reset_interval: u64,
    /// Opacity value the reset clamps to.
    pub reset_opacity_to: T,
}

impl<T: Scalar> DefaultDensifyOpts<T> {
    pub fn defaults(total_iterations: u64) -> Self {
        DefaultDensifyOpts {
            interval: 100,
            start: 500,
            stop: total_iterations / 2,
            grad_threshold: lit(2e-4),
            size_threshold_rel: lit(0.01),
            split_factor: lit(1.6),
            prune_opacity: lit(0.005),
            opacity_reset_interval: 3000,
            reset_opacity_to: lit(0.01),
        }
    }
}

/// What a densification call did, for logging and buffer management.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensifyOutcome {
    pub event: bool,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub opacity_reset: bool,
}

fn standard_normal3<T: Scalar, R: Rng>(rng: &mut R) -> V3<T> {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    [lit(x), lit(y), lit(z)]
}

/// Adaptive densification: at events, clones small high-gradient Gaussians,
/// splits large ones (scales / split_factor, positions sampled from the
/// parent), prunes low-opacity ones; periodically clamps opacities down.
/// Cloud, Adam moments, and stats stay in lockstep.
#[allow(clippy::too_many_arguments)]
pub fn densify_default<T: Scalar, R: Rng>(
    cloud: &mut GaussianCloud<T>,
    state: &mut AdamState<T>,
    stats: &mut DensifyStats<T>,
    iteration: u64,
    extent: T,
    pixel_norm: T,
    opts: &DefaultDensifyOpts<T>,
    rng: &mut R,
) -> Result<DensifyOutcome, OptimError> {
    let n = cloud.len();
    if state.len() != n || stats.len() != n {
        return Err(OptimError::ShapeMismatch);
    }
    let mut outcome = DensifyOutcome::default();
    let in_window = iteration >= opts.start && iteration <= opts.stop;
    if in_window && iteration % opts.interval == 0 {
        outcome.event = true;
        let size_threshold = opts.size_threshold_rel * extent;
        for i in 0..n {
            if stats.counts[i] == 0 {
                continue;
            }
            let mean_norm = stats.grad_accum[i] / lit::<T>(stats.counts[i] as f64) / pixel_norm;
            if mean_norm <= opts.grad_threshold {
                continue;
            }
            let ls = cloud.log_scales[i];
            let max_scale = ls[0].max(ls[1]).max(ls[2]).exp();
            if max_scale < size_threshold {
                // Clone: an identical copy with zero moments.
                cloud.push_copy_of(i);
                state.push_zero();
                outcome.cloned += 1;
            } else {
                // Split: two children at sampled positions with shrunk
                // scales; the first replaces the parent slot.
                let (qn, norm) = normalize4(cloud.rotations[i]);
                if norm <= lit(1e-12) {
                    continue;
                }
                let rot = quat_rot(qn);
                let parent_pos = cloud.positions[i];
                let parent_ls = cloud.log_scales[i];
                let shrink = opts.split_factor.ln();
                let child_ls = [
                    parent_ls[0] - shrink,
                    parent_ls[1] - shrink,
                    parent_ls[2] - shrink,
                ];
                let sample_child_pos = |rng: &mut R| {
                    let xi = standard_normal3::<T, R>(rng);
                    let local = [
                        parent_ls[0].exp() * xi[0],
                        parent_ls[1].exp() * xi[1],
                        parent_ls[2].exp() * xi[2],
                    ];
                    add3(parent_pos, m3_mulv(&rot, local))
                };
                cloud.positions[i] = sample_child_pos(rng);
                cloud.log_scales[i] = child_ls;
                let second_pos = sample_child_pos(rng);
                cloud.push_copy_of(i);
                let last = cloud.len() - 1;
                cloud.positions[last] = second_pos;
                state.push_zero();
                outcome.split += 1;
            }
        }
        // Prune low-opacity Gaussians (including any just-created ones that
        // inherited sub-threshold opacity).
        let keep: Vec<bool> = cloud
            .opacity_logits
            .iter()
            .map(|&l| sigmoid(l) >= opts.prune_opacity)
            .collect();
        outcome.pruned = keep.iter().filter(|&&k| !k).count();
        if outcome.pruned > 0 {
            cloud.retain_mask(&keep);
            state.retain_mask(&keep);
        }
        stats.reset(cloud.len());
    }
    if iteration > 0 && iteration % opts.opacity_reset_interval == 0 {
        outcome.opacity_reset = true;
        let cap = logit(opts.reset_opacity_to);
        for l in &mut cloud.opacity_logits {
            if *l > cap {
                *l = cap;
            }
        }
        state.zero_opacity_moments();
    }
    Ok(outcome)
}

/// Cumulative-weight sampler: draws indices with probability proportional to
/// the given non-negative weights.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    cumulative: Vec<f64>,
}

impl WeightedSampler {
    /// `None` when no weight is positive.
    pub fn new<T: Scalar>(weights: &[T]) -> Option<Self> {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0f64;
        for w in weights {
            let w = w.to_f64().unwrap_or(0.0).max(0.0);
            acc += w;
            cumulative.push(acc);
        }
        if acc > 0.0 {
            Some(WeightedSampler { cumulative })
        } else {
            None
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty weights");
        let u = rng.gen_range(0.0..total);
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Hyperparameters of the fixed-budget relocation strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcOpts<T> {
    /// The fixed Gaussian count; violated input counts are an error.
    pub budget: usize,
    /// Relocation every this many iterations.
    pub interval: u64,
    /// Gaussians below this opacity are dead and get relocated.
    pub dead_opacity: T,
    /// Positional noise strength, in units of the position learning rate.
    pub noise_scale: T,
    /// Relocation jitter relative to the target's per-axis scale.
    pub jitter_scale: T,
    /// Sharpness of the sigmoid gate that confines noise to low opacities.
    pub gate_sharpness: T,
}

impl<T: Scalar> McmcOpts<T> {
    pub fn defaults(budget: usize) -> Self {
        McmcOpts {
            budget,
            interval: 100,
            dead_opacity: lit(0.005),
            noise_scale: lit(100.0),
            jitter_scale: lit(0.01),
            gate_sharpness: lit(100.0),
        }
    }
}

/// Relocates dead Gaussians onto alive ones sampled proportionally to
/// opacity. The dead Gaussian inherits the target's parameters (position
/// jittered by `jitter_scale` of the target's scale) and both end up with
/// opacity 1 - sqrt(1 - o_target), approximately conserving the target's
/// appearance across the resulting pair. Moments of both slots are zeroed.
/// Returns how many Gaussians were relocated.
pub fn mcmc_relocate<T: Scalar, R: Rng>(
    cloud: &mut GaussianCloud<T>,
    state: &mut AdamState<T>,
    opts: &McmcOpts<T>,
    rng: &mut R,
) -> Result<usize, OptimError> {
    let n = cloud.len();
    if n != opts.budget {
        return Err(OptimError::BudgetViolation {
            count: n,
            budget: opts.budget,
        });
    }
    if state.len() != n {
        return Err(OptimError::ShapeMismatch);
    }
    let opacities: Vec<T> = cloud.opacity_logits.iter().map(|&l| sigmoid(l)).collect();
    let dead: Vec<usize> = (0..n)
        .filter(|&i| opacities[i] < opts.dead_opacity)
        .collect();
    if dead.is_empty() {
        return Ok(0);
    }
    let weights: Vec<T> = opacities
        .iter()
        .map(|&o| if o < opts.dead_opacity { T::zero() } else { o })
        .collect();
    let Some(sampler) = WeightedSampler::new(&weights) else {
        return Ok(0); // nothing alive to relocate onto
    };
    let targets: Vec<usize> = dead.iter().map(|_| sampler.sample(rng)).collect();
    for (&d, &a) in dead.iter().zip(&targets) {
        let (qn, norm) = normalize4(cloud.rotations[a]);
        let rot = if norm > lit(1e-12) {
            quat_rot(qn)
        } else {
            [[T::one(), T::zero(), T::zero()], [T::zero(), T::one(), T::zero()], [T::zero(), T::zero(), T::one()]]
        };
        let xi = standard_normal3::<T, R>(rng);
        let ls = cloud.log_scales[a];
        let local = [
            opts.jitter_scale * ls[0].exp() * xi[0],
            opts.jitter_scale * ls[1].exp() * xi[1],
            opts.jitter_scale * ls[2].exp() * xi[2],
        ];
        cloud.positions[d] = add3(cloud.positions[a], m3_mulv(&rot, local));
        cloud.log_scales[d] = cloud.log_scales[a];
        cloud.rotations[d] = cloud.rotations[a];
        cloud.colors[d] = cloud.colors[a];
        let o_new = T::one() - (T::one() - sigmoid(cloud.opacity_logits[a])).sqrt();
        let l_new = logit(o_new.max(lit(1e-6)).min(lit(1.0 - 1e-6)));
        cloud.opacity_logits[d] = l_new;
        cloud.opacity_logits[a] = l_new;
        state.zero_entry(d);
        state.zero_entry(a);
    }
    Ok(dead.len())
}

/// Per-step positional noise: lr_pos * noise_scale * per-axis scale *
/// standard normal, attenuated by a sigmoid gate that opens only for
/// low-opacity Gaussians.
pub fn mcmc_noise<T: Scalar, R: Rng>(
    cloud: &mut GaussianCloud<T>,
    lr_pos: T,
    opts: &McmcOpts<T>,
    rng: &mut R,
) {
    if opts.noise_scale == T::zero() {
        return;
    }
    let n = cloud.len();
    for i in 0..n {
        let o = sigmoid(cloud.opacity_logits[i]);
        let gate = sigmoid(-opts.gate_sharpness * (o - opts.dead_opacity));
        let amp = lr_pos * opts.noise_scale * gate;
        let xi = standard_normal3::<T, R>(rng);
        let ls = cloud.log_scales[i];
        for k in 0..3 {
            cloud.positions[i][k] = cloud.positions[i][k] + amp * ls[k].exp() * xi[k];
        }
    }
}
