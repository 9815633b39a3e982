//! The margin/ranking loss family plus GAN, WGAN and LSGAN baselines.
//!
//! Critic scores enter as flat `[batch]` graph variables. Hinges are applied
//! per paired sample and then averaged; the clamping penalty hinges on batch
//! means, matching margins that are themselves expectations. The
//! sample-agnostic ranking variant ([`rank_hinge_on_means`]) hinges on batch
//! means instead, for use when the two fake batches come from independent
//! latent draws.

use crate::autodiff::{grad, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, MlpSpec, ParamVars};

/// Score levels the clamping penalty pins a stage to: real scores are kept
/// above `high`, previous-stage fake scores below `low`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MarginPair {
    pub high: f64,
    pub low: f64,
}

impl MarginPair {
    /// Builds the pair from computed score statistics. An inverted pair is
    /// legal (a weak critic can rank fakes above reals); it is logged, not
    /// rejected.
    pub fn from_stats(high: f64, low: f64) -> MarginPair {
        if high < low {
            log::warn!("margin pair inverted: high {high} < low {low}");
        }
        MarginPair { high, low }
    }
}

/// Coefficients of the total critic loss and the standalone margin.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub lambda_clamp: f64,
    pub epsilon_margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_gp: 10.0,
            lambda_clamp: 1000.0,
            epsilon_margin: 1.0,
        }
    }
}

fn check_batches(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 1 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Hinge loss requiring real scores to beat fake scores by `epsilon`:
/// `mean([d_fake + epsilon - d_real]_+)`.
pub fn margin_loss(d_fake: &Var, d_real: &Var, epsilon: f64) -> Result<Var> {
    check_batches("margin_loss", d_fake, d_real)?;
    if epsilon < 0.0 {
        return Err(Error::config(format!(
            "margin epsilon must be non-negative, got {epsilon}"
        )));
    }
    Ok(d_fake.sub(d_real)?.add_scalar(epsilon).relu().mean())
}

/// Critic-side ranking hinge: `mean([d_fake_i - d_fake_prev]_+)`. The critic
/// drives current-stage fakes down to the previous stage's level.
pub fn disc_rank_loss(d_fake_i: &Var, d_fake_prev: &Var) -> Result<Var> {
    check_batches("disc_rank_loss", d_fake_i, d_fake_prev)?;
    margin_loss(d_fake_i, d_fake_prev, 0.0)
}

/// Generator-side ranking hinge: `mean([d_real - d_fake_i]_+)`. The generator
/// closes the gap between its samples and the real ones.
pub fn gen_rank_loss(d_real: &Var, d_fake_i: &Var) -> Result<Var> {
    check_batches("gen_rank_loss", d_real, d_fake_i)?;
    margin_loss(d_real, d_fake_i, 0.0)
}

/// Sample-agnostic ranking hinge on batch means: `[mean(a) - mean(b)]_+`.
/// Used when the compared batches come from independent latent draws and
/// per-sample pairing is meaningless.
pub fn rank_hinge_on_means(a: &Var, b: &Var) -> Result<Var> {
    Ok(a.mean().sub(&b.mean())?.relu())
}

/// Gradient penalty `mean((|grad_x D(x_hat)|_2 - 1)^2)` at points interpolated
/// between real and fake samples: `x_hat = u * x_real + (1 - u) * x_fake`,
/// one uniform per sample broadcast across features.
///
/// The inner gradient is taken with graph creation enabled, so the penalty
/// remains differentiable with respect to the critic parameters in
/// `disc_vars`.
pub fn gradient_penalty(
    disc_vars: &ParamVars,
    disc_spec: &MlpSpec,
    x_real: &Tensor,
    x_fake: &Tensor,
    u: &Tensor,
) -> Result<Var> {
    if x_real.shape() != x_fake.shape() || x_real.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "gradient_penalty",
            lhs: x_real.shape().to_vec(),
            rhs: x_fake.shape().to_vec(),
        });
    }
    let batch = x_real.shape()[0];
    if u.shape() != [batch] {
        return Err(Error::BadShape {
            op: "gradient_penalty",
            expected: format!("[{batch}] interpolation weights"),
            got: u.shape().to_vec(),
        });
    }
    if u.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::config(
            "interpolation weights must lie in [0, 1]".to_string(),
        ));
    }

    let u_col = Var::constant(u.reshape(&[batch, 1])?);
    let one_minus_u = u_col.neg().add_scalar(1.0);
    let real = Var::constant(x_real.clone());
    let fake = Var::constant(x_fake.clone());
    let x_hat = Var::leaf(
        u_col
            .mul(&real)?
            .add(&one_minus_u.mul(&fake)?)?
            .value()
            .clone(),
    );

    let scores = mlp_forward(disc_vars, disc_spec, &x_hat)?;
    let summed = scores.sum();
    let grads = grad(&summed, &[&x_hat], true)?;
    let per_sample_norm = grads[0].l2_norm_rows()?;
    Ok(per_sample_norm.add_scalar(-1.0).square().mean())
}

/// Clamping penalty `[high - mean(d_real)]_+ + [mean(d_fake_prev) - low]_+`.
pub fn clamp_loss(d_real: &Var, d_fake_prev: &Var, margins: &MarginPair) -> Result<Var> {
    let real_side = d_real.mean().neg().add_scalar(margins.high).relu();
    let prev_side = d_fake_prev.mean().add_scalar(-margins.low).relu();
    real_side.add(&prev_side)
}

/// Total critic loss: `rank + lambda_gp * gp + lambda_clamp * clamp`.
pub fn disc_total_loss(rank: &Var, gp: &Var, clamp: &Var, weights: &LossWeights) -> Result<Var> {
    for (name, v) in [("rank", rank), ("gp", gp), ("clamp", clamp)] {
        if v.value().numel() != 1 {
            return Err(Error::BadShape {
                op: "disc_total_loss",
                expected: format!("scalar `{name}` component"),
                got: v.shape().to_vec(),
            });
        }
    }
    rank.add(&gp.mul_scalar(weights.lambda_gp))?
        .add(&clamp.mul_scalar(weights.lambda_clamp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Gan,
    Wgan,
    Lsgan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Disc,
    Gen,
}

/// Baseline adversarial losses on raw critic scores.
///
/// - `gan`: sigmoid cross-entropy (the sigmoid is applied internally; the
///   generator uses the non-saturating form).
/// - `wgan`: score difference; unbounded by construction.
/// - `lsgan`: least squares against targets 1 (real) and 0 (fake), with the
///   generator targeting 1.
pub fn baseline_loss(kind: BaselineKind, d_real: &Var, d_fake: &Var, role: Role) -> Result<Var> {
    if role == Role::Disc {
        check_batches("baseline_loss", d_real, d_fake)?;
    }
    match (kind, role) {
        (BaselineKind::Gan, Role::Disc) => {
            let real_term = d_real.sigmoid().ln().mean();
            let fake_term = d_fake.sigmoid().neg().add_scalar(1.0).ln().mean();
            Ok(real_term.add(&fake_term)?.neg())
        }
        (BaselineKind::Gan, Role::Gen) => Ok(d_fake.sigmoid().ln().mean().neg()),
        (BaselineKind::Wgan, Role::Disc) => d_fake.mean().sub(&d_real.mean()),
        (BaselineKind::Wgan, Role::Gen) => Ok(d_fake.mean().neg()),
        (BaselineKind::Lsgan, Role::Disc) => {
            let real_term = d_real.add_scalar(-1.0).square().mean();
            let fake_term = d_fake.square().mean();
            Ok(real_term.add(&fake_term)?.mul_scalar(0.5))
        }
        (BaselineKind::Lsgan, Role::Gen) => {
            Ok(d_fake.add_scalar(-1.0).square().mean().mul_scalar(0.5))
        }
    }
}
