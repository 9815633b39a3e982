//! Image completion by latent-space search.
//!
//! Given a corrupted image, find the latent code whose generated image agrees
//! with the visible pixels (contextual loss, L1 on the unmasked region) while
//! scoring well under the critic (perceptual loss). The generator and critic
//! stay frozen; only the latent code moves. The completed image keeps visible
//! pixels from the input and takes hidden ones from the generated image.

use crate::autodiff::{grad, Tensor, Var};
use crate::data::{apply_mask, Mask};
use crate::error::{Error, Result};
use crate::nn::{
    encoder_forward, mlp_forward, AdamConfig, AdamState, GradMap, Mlp, ModelParams,
};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// How the latent search is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZInit {
    /// Posterior mean of a trained encoder applied to the filled image.
    Encoder,
    /// A standard normal draw.
    Prior,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    /// Weight of the perceptual term.
    pub lambda: f64,
    /// Optimization budget per image.
    pub iterations: usize,
    /// Peak Adam step size for the latent code; the step anneals to zero
    /// over the budget on a cosine schedule.
    pub step_size: f64,
    pub z_init: ZInit,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            lambda: 10.0,
            iterations: 2000,
            step_size: 0.05,
            z_init: ZInit::Encoder,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("completion needs at least one iteration"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config(format!(
                "perceptual weight must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One trajectory sample: `(iteration, total, contextual, perceptual)`.
pub type TrajectoryPoint = (usize, f64, f64, f64);

/// Outcome of one latent search.
#[derive(Clone, Debug)]
pub struct CompletionResult {
    pub z_hat: Tensor,
    /// Loss samples at iteration 1, every 100 iterations, and the last one.
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_contextual: f64,
    pub final_perceptual: f64,
    pub iterations: usize,
}

/// L1 distance on visible pixels: `|M * gen_out - M * y|_1`.
pub fn contextual_loss(gen_out: &Var, y: &Tensor, mask: &Mask) -> Result<Var> {
    if gen_out.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "contextual_loss",
            lhs: gen_out.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let grid = Var::constant(mask.grid().clone());
    let target = Var::constant(y.clone());
    Ok(gen_out.sub(&target)?.mul(&grid)?.l1_norm())
}

/// Mean of `-D(G(z))` over the batch: low when the critic likes the samples.
pub fn perceptual_loss(disc: &Mlp, gen_out: &Var) -> Result<Var> {
    let scores = mlp_forward(&disc.params.to_vars(false), &disc.spec, gen_out)?;
    Ok(scores.mean().neg())
}

/// Resolves the starting latent code per the configured policy.
pub fn initial_latent(
    gen: &Mlp,
    encoder: Option<&Mlp>,
    y: &Tensor,
    mask: &Mask,
    cfg: &CompletionConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Tensor> {
    let latent_dim = gen.spec.in_dim();
    match cfg.z_init {
        ZInit::Prior => {
            let data: Vec<f64> = (0..latent_dim)
                .map(|_| StandardNormal.sample(rng))
                .collect();
            Tensor::new(&[1, latent_dim], data)
        }
        ZInit::Encoder => {
            let encoder = encoder.ok_or_else(|| {
                Error::config("encoder initialization requires a trained encoder".to_string())
            })?;
            let filled = apply_mask(y, mask, 0.0)?;
            let x = Var::constant(filled.reshape(&[1, y.numel()])?);
            let enc = encoder_forward(&encoder.params.to_vars(false), &encoder.spec, &x)?;
            let mu = enc.mu.value().clone();
            if mu.shape()[1] != latent_dim {
                return Err(Error::ShapeMismatch {
                    op: "initial_latent",
                    lhs: mu.shape().to_vec(),
                    rhs: vec![1, latent_dim],
                });
            }
            Ok(mu)
        }
    }
}

/// Runs the latent search: `iterations` Adam steps on the latent code alone,
/// minimizing `contextual + lambda * perceptual`. The step size follows a
/// cosine anneal from `step_size` to zero across the budget.
pub fn optimize_latent(
    gen: &Mlp,
    disc: &Mlp,
    y: &Tensor,
    mask: &Mask,
    cfg: &CompletionConfig,
    z0: Tensor,
) -> Result<CompletionResult> {
    cfg.validate()?;
    let latent_dim = gen.spec.in_dim();
    if z0.shape() != [1, latent_dim] {
        return Err(Error::BadShape {
            op: "optimize_latent",
            expected: format!("[1, {latent_dim}] initial latent"),
            got: z0.shape().to_vec(),
        });
    }
    let y_row = y.reshape(&[1, y.numel()])?;
    let gen_vars = gen.params.to_vars(false);

    let mut z_params = ModelParams::new(vec![("z".to_string(), z0)])?;
    let mut adam = AdamState::new(AdamConfig::new(cfg.step_size, 0.9, 0.999));
    let mut trajectory: Vec<TrajectoryPoint> = Vec::new();
    let mut last = (0.0, 0.0, 0.0);

    for iter in 1..=cfg.iterations {
        let z = Var::leaf(z_params.get("z").unwrap().clone());
        let gen_out = mlp_forward(&gen_vars, &gen.spec, &z)?;
        let contextual = contextual_loss(&gen_out, &y_row, mask)?;
        let perceptual = perceptual_loss(disc, &gen_out)?;
        let total = contextual.add(&perceptual.mul_scalar(cfg.lambda))?;

        let total_v = total.value().item()?;
        let contextual_v = contextual.value().item()?;
        let perceptual_v = perceptual.value().item()?;
        if !total_v.is_finite() {
            return Err(Error::NonFinite {
                op: format!("latent search at iteration {iter}"),
            });
        }
        last = (total_v, contextual_v, perceptual_v);
        if iter == 1 || iter % 100 == 0 || iter == cfg.iterations {
            trajectory.push((iter, total_v, contextual_v, perceptual_v));
        }

        let gz = grad(&total, &[&z], false)?;
        let mut grads = GradMap::new();
        grads.insert("z", gz[0].value().clone());
        let progress = (iter - 1) as f64 / cfg.iterations as f64;
        let scale = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.step_scaled(&mut z_params, &grads, scale)?;
    }

    Ok(CompletionResult {
        z_hat: z_params.get("z").unwrap().clone(),
        trajectory,
        final_contextual: last.1,
        final_perceptual: last.2,
        iterations: cfg.iterations,
    })
}

/// Composes the completed image: visible pixels from `y`, hidden pixels from
/// the generated image. Visible pixels are preserved bit-exactly.
pub fn blend(y: &Tensor, mask: &Mask, g_of_z_hat: &Tensor) -> Result<Tensor> {
    if y.numel() != g_of_z_hat.numel() || y.numel() != mask.grid().numel() {
        return Err(Error::ShapeMismatch {
            op: "blend",
            lhs: y.shape().to_vec(),
            rhs: g_of_z_hat.shape().to_vec(),
        });
    }
    let mut out = y.clone();
    let grid = mask.grid().data();
    let gen = g_of_z_hat.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if grid[i] == 0.0 {
            *v = gen[i];
        }
    }
    Ok(out)
}
