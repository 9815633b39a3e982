//! The stage-wise training engine.
//!
//! Stage zero trains a VAE (encoder plus decoder) and warm-starts the critic
//! for one epoch. Stage one optionally trains that pair adversarially under
//! the margin loss. Every later stage clones and freezes the previous pair,
//! computes clamping margins from the frozen critic's validation scores, and
//! trains with the ranking losses on a 5:1 critic/generator schedule until
//! the score gap stabilizes or the epoch budget runs out.
//!
//! The engine performs no file I/O; artifacts stream through a
//! [`PipelineSink`].

use crate::autodiff::{Tensor, Var};
use crate::data::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::losses::{
    baseline_loss, clamp_loss, disc_rank_loss, disc_total_loss, gen_rank_loss, gradient_penalty,
    margin_loss, rank_hinge_on_means, BaselineKind, LossWeights, MarginPair, Role,
};
use crate::metrics::{mode_coverage, ring8_centers, sliced_wasserstein};
use crate::nn::{
    adam_step, encoder_forward, mlp_forward, sample_latent, vae_loss, AdamConfig, AdamState,
    GradMap, HiddenActivation, Mlp, MlpSpec, OutputActivation,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Critic/generator interleaving and stage termination settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub critic_steps_per_gen: usize,
    pub max_stage_epochs: usize,
    /// Trailing window over which the score gap must hold still.
    pub gap_window: usize,
    /// Absolute stability threshold on the gap's standard deviation; when
    /// absent, 2% of the first epoch's gap magnitude is used.
    pub gap_threshold: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            critic_steps_per_gen: 5,
            max_stage_epochs: 200,
            gap_window: 15,
            gap_threshold: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.critic_steps_per_gen == 0 || self.gap_window == 0 {
            return Err(Error::config(
                "schedule counts must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Whether ranked fakes from consecutive stages share the latent batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    /// Latents come from the frozen encoder on the real batch; both stage
    /// generators see the same draws and hinges pair per sample.
    SampleAware,
    /// Latents are independent standard-normal draws; ranking hinges compare
    /// batch means.
    SampleAgnostic,
}

/// Per-stage adversarial objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StageLossKind {
    /// Margin hinge against real samples; no ranking, no clamping.
    Margin { epsilon: f64 },
    /// Ranking against the frozen previous stage with clamping.
    Ranked,
    /// A baseline objective (used for comparison runs).
    Baseline(BaselineKind),
}

/// Learning rates and batch settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingHyper {
    pub batch_size: usize,
    pub lr_disc: f64,
    pub lr_gen: f64,
    pub lr_enc: f64,
    pub vae_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
}

impl Default for TrainingHyper {
    fn default() -> Self {
        TrainingHyper {
            batch_size: 64,
            lr_disc: 5e-5,
            lr_gen: 5e-5,
            lr_enc: 1e-4,
            vae_epochs: 30,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
        }
    }
}

impl TrainingHyper {
    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig::new(lr, self.adam_beta1, self.adam_beta2)
    }
}

/// Network shapes for the three models.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub latent_dim: usize,
    pub gen_spec: MlpSpec,
    pub disc_spec: MlpSpec,
    pub enc_spec: MlpSpec,
}

impl Architecture {
    /// The default desk-scale shapes: generator `[latent, hidden.., data]`
    /// with a tanh output for image data and identity otherwise, critic
    /// `[data, hidden.., 1]` identity, encoder `[data, enc_hidden.., 2 *
    /// latent]` identity.
    pub fn for_dataset(
        kind: DatasetKind,
        latent_dim: usize,
        gen_hidden: &[usize],
        disc_hidden: &[usize],
        enc_hidden: &[usize],
    ) -> Architecture {
        let data_dim = kind.dim();
        let hidden = HiddenActivation::LeakyRelu(0.2);
        let gen_out = if kind.is_image() {
            OutputActivation::Tanh
        } else {
            OutputActivation::Identity
        };
        let mut gen_widths = vec![latent_dim];
        gen_widths.extend_from_slice(gen_hidden);
        gen_widths.push(data_dim);
        let mut disc_widths = vec![data_dim];
        disc_widths.extend_from_slice(disc_hidden);
        disc_widths.push(1);
        let mut enc_widths = vec![data_dim];
        enc_widths.extend_from_slice(enc_hidden);
        enc_widths.push(2 * latent_dim);
        Architecture {
            latent_dim,
            gen_spec: MlpSpec::new(gen_widths, hidden, gen_out),
            disc_spec: MlpSpec::new(disc_widths, hidden, OutputActivation::Identity),
            enc_spec: MlpSpec::new(enc_widths, hidden, OutputActivation::Identity),
        }
    }

    pub fn default_latent_dim(kind: DatasetKind) -> usize {
        if kind.is_image() {
            8
        } else {
            2
        }
    }
}

/// One history row, exactly as written to the history CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub stage: usize,
    pub epoch: usize,
    pub mean_d_real: f64,
    pub mean_d_fake_i: f64,
    pub mean_d_fake_prev: f64,
    pub loss_disc: f64,
    pub loss_gen: f64,
    pub gp: f64,
    pub clamp: f64,
    /// Reserved column, always 0: real timings would break the byte-identical
    /// determinism contract on the emitted CSVs.
    pub wall_ms: u64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str =
        "stage,epoch,mean_d_real,mean_d_fake_i,mean_d_fake_prev,loss_disc,loss_gen,gp,clamp,wall_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.stage,
            self.epoch,
            self.mean_d_real,
            self.mean_d_fake_i,
            self.mean_d_fake_prev,
            self.loss_disc,
            self.loss_gen,
            self.gp,
            self.clamp,
            self.wall_ms
        )
    }

    pub fn gap(&self) -> f64 {
        self.mean_d_real - self.mean_d_fake_i
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Stable,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Stable => "stable",
            StopReason::MaxEpochs => "max-epochs",
        }
    }
}

/// Instrumentation for the schedule and freeze contracts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub critic_steps: usize,
    pub gen_steps: usize,
    /// Critic steps taken since the last generator step (always below the
    /// schedule ratio).
    pub pending_critic_steps: usize,
    pub margin_computations: usize,
}

/// Mutable state of one training stage.
#[derive(Clone, Debug)]
pub struct StageState {
    pub index: usize,
    pub gen: Mlp,
    pub disc: Mlp,
    pub frozen_gen: Mlp,
    pub frozen_disc: Mlp,
    pub margins: MarginPair,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Decides whether a stage is done: the trailing gap window is stable, or the
/// epoch budget is exhausted, whichever comes first.
pub fn stage_should_terminate(
    history: &[EpochStats],
    schedule: &TrainSchedule,
) -> Option<StopReason> {
    if history.is_empty() {
        return None;
    }
    let threshold = schedule
        .gap_threshold
        .unwrap_or_else(|| 0.02 * history[0].gap().abs());
    if history.len() >= schedule.gap_window {
        let window = &history[history.len() - schedule.gap_window..];
        let gaps: Vec<f64> = window.iter().map(EpochStats::gap).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let std = (gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>()
            / gaps.len() as f64)
            .sqrt();
        if std < threshold {
            return Some(StopReason::Stable);
        }
    }
    if history.len() >= schedule.max_stage_epochs {
        return Some(StopReason::MaxEpochs);
    }
    None
}

/// Expected critic scores over the validation reals and the previous
/// generator's samples: the stage's clamping margins. Both models must be
/// frozen already, and the scores are means over the full sets.
pub fn compute_stage_margins(
    d_prev: &Mlp,
    g_prev: &Mlp,
    x_val: &Tensor,
    z: &Tensor,
) -> Result<MarginPair> {
    if !d_prev.params.frozen() || !g_prev.params.frozen() {
        return Err(Error::config(
            "margins must be computed from frozen previous-stage models".to_string(),
        ));
    }
    if x_val.shape()[0] == 0 {
        return Err(Error::config("empty validation set".to_string()));
    }
    let high = d_prev.score(x_val)?.mean_all();
    let fake_prev = g_prev.forward_t(z)?;
    let low = d_prev.score(&fake_prev)?.mean_all();
    Ok(MarginPair::from_stats(high, low))
}

/// Standard-normal latent batch.
pub fn prior_latents(n: usize, latent_dim: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let data: Vec<f64> = (0..n * latent_dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::new(&[n, latent_dim], data).unwrap()
}

/// Latents for a real batch: reparameterized encoder draws in sample-aware
/// mode, prior draws otherwise.
fn draw_latents(
    mode: EncoderMode,
    encoder: Option<&Mlp>,
    x: &Tensor,
    latent_dim: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Tensor> {
    let n = x.shape()[0];
    match (mode, encoder) {
        (EncoderMode::SampleAware, Some(enc)) => {
            let xv = Var::constant(x.clone());
            let out = encoder_forward(&enc.params.to_vars(false), &enc.spec, &xv)?;
            let noise = prior_latents(n, latent_dim, rng);
            let z = sample_latent(&out, &Var::constant(noise))?;
            Ok(z.value().clone())
        }
        (EncoderMode::SampleAware, None) => Err(Error::config(
            "sample-aware mode requires a trained encoder".to_string(),
        )),
        (EncoderMode::SampleAgnostic, _) => Ok(prior_latents(n, latent_dim, rng)),
    }
}

/// Shuffled complete batches over `n` rows.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks_exact(batch)
        .map(|chunk| chunk.to_vec())
        .collect()
}

fn critic_scores(disc_vars: &crate::nn::ParamVars, spec: &MlpSpec, x: &Tensor) -> Result<Var> {
    let out = mlp_forward(disc_vars, spec, &Var::constant(x.clone()))?;
    let batch = out.shape()[0];
    out.reshape(&[batch])
}

struct CriticStepOutcome {
    loss: f64,
    gp: f64,
    clamp: f64,
}

/// Everything `train_stage` needs besides the mutable stage state.
pub struct StageRunContext<'a> {
    pub dataset: &'a Dataset,
    pub encoder: Option<&'a Mlp>,
    pub mode: EncoderMode,
    pub hyper: &'a TrainingHyper,
    pub schedule: &'a TrainSchedule,
    pub weights: &'a LossWeights,
}

/// Runs one stage to termination. Frozen models are untouched (hash-checked
/// by the caller); history gains one row per epoch; the counters expose the
/// critic/generator interleaving for the schedule contract.
pub fn train_stage(
    state: &mut StageState,
    kind: StageLossKind,
    ctx: &StageRunContext,
    rng_train: &mut ChaCha12Rng,
    rng_eval: &mut ChaCha12Rng,
    mut on_epoch: impl FnMut(&EpochStats) -> Result<()>,
) -> Result<StageCounters> {
    ctx.schedule.validate()?;
    let mut counters = StageCounters::default();
    if ctx.schedule.max_stage_epochs == 0 {
        return Ok(counters);
    }
    let latent_dim = state.gen.spec.in_dim();
    let train_x = ctx.dataset.train_x()?;
    let x_val = ctx.dataset.val_x()?;
    let n_train = train_x.shape()[0];
    if n_train < ctx.hyper.batch_size {
        return Err(Error::config(format!(
            "training split ({n_train}) smaller than one batch ({})",
            ctx.hyper.batch_size
        )));
    }

    // Fixed evaluation latents for the whole stage, so per-epoch statistics
    // are comparable.
    let z_val = draw_latents(ctx.mode, ctx.encoder, &x_val, latent_dim, rng_eval)?;

    let mut adam_d = AdamState::new(ctx.hyper.adam(ctx.hyper.lr_disc));
    let mut adam_g = AdamState::new(ctx.hyper.adam(ctx.hyper.lr_gen));
    let mut k = 0usize; // critic steps since the last generator step

    loop {
        let epoch = state.epoch + 1;
        let mut epoch_disc_loss = 0.0;
        let mut epoch_gen_loss = 0.0;
        let mut epoch_gp = 0.0;
        let mut epoch_clamp = 0.0;
        let mut disc_steps_this_epoch = 0usize;
        let mut gen_steps_this_epoch = 0usize;

        for (step, batch_idx) in epoch_batches(n_train, ctx.hyper.batch_size, rng_train)
            .into_iter()
            .enumerate()
        {
            let x = train_x.gather_rows(&batch_idx)?;
            let z = draw_latents(ctx.mode, ctx.encoder, &x, latent_dim, rng_train)?;
            let outcome =
                critic_step(state, kind, ctx, &x, &z, &mut adam_d, rng_train).map_err(|e| {
                    wrap_numeric(e, state.index, epoch, step)
                })?;
            if !outcome.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: state.index,
                    epoch,
                    step,
                    component: "critic loss".to_string(),
                });
            }
            epoch_disc_loss += outcome.loss;
            epoch_gp += outcome.gp;
            epoch_clamp += outcome.clamp;
            counters.critic_steps += 1;
            disc_steps_this_epoch += 1;
            k += 1;

            if k == ctx.schedule.critic_steps_per_gen {
                let gen_loss = generator_step(state, kind, ctx, &x, &z, &mut adam_g)
                    .map_err(|e| wrap_numeric(e, state.index, epoch, step))?;
                if !gen_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        stage: state.index,
                        epoch,
                        step,
                        component: "generator loss".to_string(),
                    });
                }
                epoch_gen_loss += gen_loss;
                counters.gen_steps += 1;
                gen_steps_this_epoch += 1;
                k = 0;
            }
        }

        state.epoch = epoch;
        let stats = evaluate_epoch(
            state,
            epoch,
            &x_val,
            &z_val,
            epoch_disc_loss / disc_steps_this_epoch.max(1) as f64,
            epoch_gen_loss / gen_steps_this_epoch.max(1) as f64,
            epoch_gp / disc_steps_this_epoch.max(1) as f64,
            epoch_clamp / disc_steps_this_epoch.max(1) as f64,
        )?;
        on_epoch(&stats)?;
        state.history.push(stats);

        if let Some(reason) = stage_should_terminate(&state.history, ctx.schedule) {
            counters.pending_critic_steps = k;
            log::info!(
                "stage {} done after {} epochs ({})",
                state.index,
                state.epoch,
                reason.as_str()
            );
            return Ok(counters);
        }
    }
}

fn wrap_numeric(e: Error, stage: usize, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFiniteLoss {
            stage,
            epoch,
            step,
            component: op,
        },
        other => other,
    }
}

pub(crate) fn critic_step(
    state: &mut StageState,
    kind: StageLossKind,
    ctx: &StageRunContext,
    x: &Tensor,
    z: &Tensor,
    adam_d: &mut AdamState,
    rng: &mut ChaCha12Rng,
) -> Result<CriticStepOutcome> {
    let fake_i = state.gen.forward_t(z)?;
    let disc_vars = state.disc.params.to_vars(true);
    let d_real = critic_scores(&disc_vars, &state.disc.spec, x)?;
    let d_fake_i = critic_scores(&disc_vars, &state.disc.spec, &fake_i)?;

    let batch = x.shape()[0];
    let u = Tensor::vector(
        &(0..batch)
            .map(|_| rng.random_range(0.0..=1.0))
            .collect::<Vec<f64>>(),
    );
    let gp = gradient_penalty(&disc_vars, &state.disc.spec, x, &fake_i, &u)?;

    let (total, gp_v, clamp_v) = match kind {
        StageLossKind::Ranked => {
            let z_prev = match ctx.mode {
                // Same draws feed both stages in sample-aware mode.
                EncoderMode::SampleAware => z.clone(),
                EncoderMode::SampleAgnostic => {
                    prior_latents(batch, state.frozen_gen.spec.in_dim(), rng)
                }
            };
            let fake_prev = state.frozen_gen.forward_t(&z_prev)?;
            let d_fake_prev = critic_scores(&disc_vars, &state.disc.spec, &fake_prev)?;
            let rank = match ctx.mode {
                EncoderMode::SampleAware => disc_rank_loss(&d_fake_i, &d_fake_prev)?,
                EncoderMode::SampleAgnostic => rank_hinge_on_means(&d_fake_i, &d_fake_prev)?,
            };
            let clamp = clamp_loss(&d_real, &d_fake_prev, &state.margins)?;
            let total = disc_total_loss(&rank, &gp, &clamp, ctx.weights)?;
            let clamp_v = clamp.value().item()?;
            (total, gp.value().item()?, clamp_v)
        }
        StageLossKind::Margin { epsilon } => {
            let hinge = margin_loss(&d_fake_i, &d_real, epsilon)?;
            let total = hinge.add(&gp.mul_scalar(ctx.weights.lambda_gp))?;
            (total, gp.value().item()?, 0.0)
        }
        StageLossKind::Baseline(bk) => {
            let base = baseline_loss(bk, &d_real, &d_fake_i, Role::Disc)?;
            let total = match bk {
                // The Wasserstein critic needs its Lipschitz penalty; the
                // sigmoid and least-squares critics are bounded without it.
                BaselineKind::Wgan => base.add(&gp.mul_scalar(ctx.weights.lambda_gp))?,
                BaselineKind::Gan | BaselineKind::Lsgan => base,
            };
            let gp_v = if bk == BaselineKind::Wgan {
                gp.value().item()?
            } else {
                0.0
            };
            (total, gp_v, 0.0)
        }
    };

    let loss_v = total.value().item()?;
    let grads = GradMap::of(&total, &disc_vars)?;
    adam_step(adam_d, &mut state.disc.params, &grads)?;
    Ok(CriticStepOutcome {
        loss: loss_v,
        gp: gp_v,
        clamp: clamp_v,
    })
}

fn generator_step(
    state: &mut StageState,
    kind: StageLossKind,
    ctx: &StageRunContext,
    x: &Tensor,
    z: &Tensor,
    adam_g: &mut AdamState,
) -> Result<f64> {
    let gen_vars = state.gen.params.to_vars(true);
    let fake = mlp_forward(&gen_vars, &state.gen.spec, &Var::constant(z.clone()))?;
    let disc_vars = state.disc.params.to_vars(false);
    let d_fake = mlp_forward(&disc_vars, &state.disc.spec, &fake)?.reshape(&[x.shape()[0]])?;
    let d_real = Var::constant(state.disc.score(x)?);

    let loss = match kind {
        StageLossKind::Ranked | StageLossKind::Margin { .. } => match ctx.mode {
            EncoderMode::SampleAware => gen_rank_loss(&d_real, &d_fake)?,
            EncoderMode::SampleAgnostic => rank_hinge_on_means(&d_real, &d_fake)?,
        },
        StageLossKind::Baseline(bk) => baseline_loss(bk, &d_real, &d_fake, Role::Gen)?,
    };
    let loss_v = loss.value().item()?;
    let grads = GradMap::of(&loss, &gen_vars)?;
    adam_step(adam_g, &mut state.gen.params, &grads)?;
    Ok(loss_v)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_epoch(
    state: &StageState,
    epoch: usize,
    x_val: &Tensor,
    z_val: &Tensor,
    loss_disc: f64,
    loss_gen: f64,
    gp: f64,
    clamp: f64,
) -> Result<EpochStats> {
    let mean_d_real = state.disc.score(x_val)?.mean_all();
    let fake_i = state.gen.forward_t(z_val)?;
    let mean_d_fake_i = state.disc.score(&fake_i)?.mean_all();
    let fake_prev = state.frozen_gen.forward_t(z_val)?;
    let mean_d_fake_prev = state.disc.score(&fake_prev)?.mean_all();
    Ok(EpochStats {
        stage: state.index,
        epoch,
        mean_d_real,
        mean_d_fake_i,
        mean_d_fake_prev,
        loss_disc,
        loss_gen,
        gp,
        clamp,
        wall_ms: 0,
    })
}

/// Result of the zeroth stage: the frozen encoder, the decoder doubling as
/// the first generator, and the warm-started critic.
pub struct StageZero {
    pub encoder: Mlp,
    pub gen: Mlp,
    pub disc: Mlp,
    /// Validation reconstruction MSE before any VAE training.
    pub initial_val_mse: f64,
    /// Validation reconstruction MSE after VAE training.
    pub final_val_mse: f64,
}

fn reconstruction_mse(encoder: &Mlp, decoder: &Mlp, x: &Tensor) -> Result<f64> {
    // Deterministic reconstruction through the posterior mean.
    let xv = Var::constant(x.clone());
    let enc = encoder_forward(&encoder.params.to_vars(false), &encoder.spec, &xv)?;
    let recon = decoder.forward_t(enc.mu.value())?;
    let diff: f64 = recon
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff / x.numel() as f64)
}

/// Trains the VAE (encoder and decoder jointly), freezes the encoder, then
/// warm-starts the critic for one epoch with the Wasserstein loss plus
/// gradient penalty.
pub fn run_stage_zero(
    dataset: &Dataset,
    arch: &Architecture,
    hyper: &TrainingHyper,
    weights: &LossWeights,
    mode: EncoderMode,
    rng_init: &mut ChaCha12Rng,
    rng_train: &mut ChaCha12Rng,
) -> Result<StageZero> {
    let mut encoder = Mlp::init(arch.enc_spec.clone(), rng_init)?;
    let mut decoder = Mlp::init(arch.gen_spec.clone(), rng_init)?;
    let disc = Mlp::init(arch.disc_spec.clone(), rng_init)?;

    let train_x = dataset.train_x()?;
    let x_val = dataset.val_x()?;
    let n_train = train_x.shape()[0];
    let initial_val_mse = reconstruction_mse(&encoder, &decoder, &x_val)?;

    let mut adam_e = AdamState::new(hyper.adam(hyper.lr_enc));
    let mut adam_g = AdamState::new(hyper.adam(hyper.lr_gen));
    for epoch in 1..=hyper.vae_epochs {
        for (step, batch_idx) in epoch_batches(n_train, hyper.batch_size, rng_train)
            .into_iter()
            .enumerate()
        {
            let x = train_x.gather_rows(&batch_idx)?;
            let batch = x.shape()[0];
            let enc_vars = encoder.params.to_vars(true);
            let dec_vars = decoder.params.to_vars(true);
            let xv = Var::constant(x.clone());
            let enc_out = encoder_forward(&enc_vars, &encoder.spec, &xv)?;
            let noise = prior_latents(batch, arch.latent_dim, rng_train);
            let z = sample_latent(&enc_out, &Var::constant(noise))?;
            let recon = mlp_forward(&dec_vars, &decoder.spec, &z)?;
            let loss = vae_loss(&xv, &recon, &enc_out)?;
            let loss_v = loss.value().item()?;
            if !loss_v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: 0,
                    epoch,
                    step,
                    component: "vae loss".to_string(),
                });
            }
            let enc_grads = GradMap::of(&loss, &enc_vars)?;
            let dec_grads = GradMap::of(&loss, &dec_vars)?;
            adam_step(&mut adam_e, &mut encoder.params, &enc_grads)?;
            adam_step(&mut adam_g, &mut decoder.params, &dec_grads)?;
        }
    }
    let final_val_mse = reconstruction_mse(&encoder, &decoder, &x_val)?;
    encoder.freeze();

    // One-epoch critic warm start against the decoder's samples.
    let mut disc = disc;
    let mut adam_d = AdamState::new(hyper.adam(hyper.lr_disc));
    let enc_ref = if mode == EncoderMode::SampleAware {
        Some(&encoder)
    } else {
        None
    };
    for (step, batch_idx) in epoch_batches(n_train, hyper.batch_size, rng_train)
        .into_iter()
        .enumerate()
    {
        let x = train_x.gather_rows(&batch_idx)?;
        let z = draw_latents(mode, enc_ref, &x, arch.latent_dim, rng_train)?;
        let fake = decoder.forward_t(&z)?;
        let disc_vars = disc.params.to_vars(true);
        let d_real = critic_scores(&disc_vars, &disc.spec, &x)?;
        let d_fake = critic_scores(&disc_vars, &disc.spec, &fake)?;
        let base = baseline_loss(BaselineKind::Wgan, &d_real, &d_fake, Role::Disc)?;
        let batch = x.shape()[0];
        let u = Tensor::vector(
            &(0..batch)
                .map(|_| rng_train.random_range(0.0..=1.0))
                .collect::<Vec<f64>>(),
        );
        let gp = gradient_penalty(&disc_vars, &disc.spec, &x, &fake, &u)?;
        let total = base.add(&gp.mul_scalar(weights.lambda_gp))?;
        if !total.value().item()?.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: 0,
                epoch: hyper.vae_epochs + 1,
                step,
                component: "critic warm-start loss".to_string(),
            });
        }
        let grads = GradMap::of(&total, &disc_vars)?;
        adam_step(&mut adam_d, &mut disc.params, &grads)?;
    }

    Ok(StageZero {
        encoder,
        gen: decoder,
        disc,
        initial_val_mse,
        final_val_mse,
    })
}

/// Adversarial objective for the whole pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineLoss {
    /// Full stage-wise ranking; later stages rank against frozen clones.
    Rankgan,
    /// Single margin-loss stage.
    Margin,
    Wgan,
    Lsgan,
    Gan,
}

/// Seeds for the independent random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamSeeds {
    pub init: u64,
    pub training: u64,
    pub eval: u64,
    pub metrics: u64,
}

/// Everything a pipeline run needs.
pub struct PipelineSettings {
    pub dataset: Dataset,
    pub arch: Architecture,
    pub hyper: TrainingHyper,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub mode: EncoderMode,
    pub loss: PipelineLoss,
    pub nstages: usize,
    /// Train stage one adversarially (otherwise its generator stays the VAE
    /// decoder and only the critic warm start runs).
    pub stage1_adversarial: bool,
    pub seeds: StreamSeeds,
    pub metric_samples: usize,
    pub metric_projections: usize,
}

/// One metric CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub stage: usize,
    pub name: String,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub seed: u64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "stage,name,value,n_a,n_b,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.stage, self.name, self.value, self.n_a, self.n_b, self.seed
        )
    }
}

/// Receives artifacts as the pipeline produces them.
pub trait PipelineSink {
    fn on_epoch(&mut self, row: &EpochStats) -> Result<()> {
        let _ = row;
        Ok(())
    }
    /// Called once per stage, right after its margins are computed.
    fn on_margins(&mut self, stage: usize, margins: &MarginPair) -> Result<()> {
        let _ = (stage, margins);
        Ok(())
    }
    fn on_encoder(&mut self, encoder: &Mlp) -> Result<()> {
        let _ = encoder;
        Ok(())
    }
    fn on_stage_complete(&mut self, stage: usize, gen: &Mlp, disc: &Mlp) -> Result<()> {
        let _ = (stage, gen, disc);
        Ok(())
    }
    fn on_metric_rows(&mut self, rows: &[MetricRow]) -> Result<()> {
        let _ = rows;
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl PipelineSink for NullSink {}

/// Per-stage outcome retained in the pipeline report.
pub struct StageReport {
    pub index: usize,
    pub margins: MarginPair,
    pub counters: StageCounters,
    pub stop: StopReason,
    pub frozen_hashes_before: ([u8; 32], [u8; 32]),
    pub frozen_hashes_after: ([u8; 32], [u8; 32]),
    pub gen: Mlp,
    pub disc: Mlp,
    pub final_stats: EpochStats,
}

pub struct PipelineReport {
    pub encoder: Mlp,
    pub stages: Vec<StageReport>,
    pub history: Vec<EpochStats>,
    pub metric_rows: Vec<MetricRow>,
    pub initial_val_mse: f64,
    pub final_val_mse: f64,
}

/// Distribution metrics for one stage's generator: sliced Wasserstein to the
/// real test split (and ring mode coverage) under prior latents, plus
/// encoder latents when available.
#[allow(clippy::too_many_arguments)]
pub fn generator_metrics(
    stage: usize,
    gen: &Mlp,
    encoder: Option<&Mlp>,
    mode: EncoderMode,
    dataset: &Dataset,
    n_samples: usize,
    n_projections: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ stage as u64);
    let real = dataset.test_x()?;
    let latent_dim = gen.spec.in_dim();
    let mut rows = Vec::new();

    let push_for = |tag: &str, z: Tensor, rows: &mut Vec<MetricRow>| -> Result<()> {
        let samples = gen.forward_t(&z)?;
        let sw = sliced_wasserstein(&samples, &real, n_projections, seed)?;
        rows.push(MetricRow {
            stage,
            name: format!("sw_{tag}"),
            value: sw,
            n_a: samples.shape()[0],
            n_b: real.shape()[0],
            seed,
        });
        if dataset.kind == DatasetKind::Ring8 {
            let coverage = mode_coverage(&samples, &ring8_centers(), 0.15)?;
            rows.push(MetricRow {
                stage,
                name: format!("coverage_{tag}"),
                value: coverage,
                n_a: samples.shape()[0],
                n_b: 8,
                seed,
            });
        }
        Ok(())
    };

    let z_prior = prior_latents(n_samples, latent_dim, &mut rng);
    push_for("prior", z_prior, &mut rows)?;

    if mode == EncoderMode::SampleAware && encoder.is_some() {
        let z_enc = draw_latents(mode, encoder, &real, latent_dim, &mut rng)?;
        push_for("encoder", z_enc, &mut rows)?;
    }
    Ok(rows)
}

/// Runs the full pipeline: stage zero, the optional adversarial stage one,
/// and ranked stages up to `nstages`. Checkpoints and CSV rows stream through
/// `sink`; the report keeps every stage's models and counters.
pub fn run_pipeline(
    settings: &PipelineSettings,
    sink: &mut dyn PipelineSink,
) -> Result<PipelineReport> {
    if settings.nstages == 0 {
        return Err(Error::config("a pipeline needs at least one stage".to_string()));
    }
    let mut rng_init = ChaCha12Rng::seed_from_u64(settings.seeds.init);
    let mut rng_train = ChaCha12Rng::seed_from_u64(settings.seeds.training);
    let mut rng_eval = ChaCha12Rng::seed_from_u64(settings.seeds.eval);

    let zero = run_stage_zero(
        &settings.dataset,
        &settings.arch,
        &settings.hyper,
        &settings.weights,
        settings.mode,
        &mut rng_init,
        &mut rng_train,
    )?;
    sink.on_encoder(&zero.encoder)?;

    let stage1_kind = match settings.loss {
        PipelineLoss::Rankgan | PipelineLoss::Margin => StageLossKind::Margin {
            epsilon: settings.weights.epsilon_margin,
        },
        PipelineLoss::Wgan => StageLossKind::Baseline(BaselineKind::Wgan),
        PipelineLoss::Lsgan => StageLossKind::Baseline(BaselineKind::Lsgan),
        PipelineLoss::Gan => StageLossKind::Baseline(BaselineKind::Gan),
    };

    let mut history: Vec<EpochStats> = Vec::new();
    let mut metric_rows: Vec<MetricRow> = Vec::new();
    let mut stages: Vec<StageReport> = Vec::new();

    // Stage one starts from the VAE decoder and the warm critic.
    let mut frozen_gen = zero.gen.clone();
    frozen_gen.freeze();
    let mut frozen_disc = zero.disc.clone();
    frozen_disc.freeze();
    let x_val = settings.dataset.val_x()?;
    let z_margin = draw_latents(
        settings.mode,
        Some(&zero.encoder),
        &x_val,
        settings.arch.latent_dim,
        &mut rng_eval,
    )?;
    let margins = compute_stage_margins(&frozen_disc, &frozen_gen, &x_val, &z_margin)?;
    sink.on_margins(1, &margins)?;

    let mut state = StageState {
        index: 1,
        gen: zero.gen.thawed_clone(),
        disc: zero.disc.thawed_clone(),
        frozen_gen,
        frozen_disc,
        margins,
        epoch: 0,
        history: Vec::new(),
    };

    let encoder_for_ctx = zero.encoder.clone();
    let ctx = StageRunContext {
        dataset: &settings.dataset,
        encoder: Some(&encoder_for_ctx),
        mode: settings.mode,
        hyper: &settings.hyper,
        schedule: &settings.schedule,
        weights: &settings.weights,
    };

    type StageOutcome = (
        StageCounters,
        StopReason,
        ([u8; 32], [u8; 32]),
        ([u8; 32], [u8; 32]),
    );
    let run_one = |state: &mut StageState,
                   kind: StageLossKind,
                   rng_train: &mut ChaCha12Rng,
                   rng_eval: &mut ChaCha12Rng,
                   history: &mut Vec<EpochStats>,
                   sink: &mut dyn PipelineSink|
     -> Result<StageOutcome> {
        let before = (
            state.frozen_gen.params.payload_sha256(),
            state.frozen_disc.params.payload_sha256(),
        );
        let mut counters = StageCounters {
            margin_computations: 1,
            ..Default::default()
        };
        let inner = train_stage(state, kind, &ctx, rng_train, rng_eval, |row| {
            history.push(row.clone());
            sink.on_epoch(row)
        })?;
        counters.critic_steps = inner.critic_steps;
        counters.gen_steps = inner.gen_steps;
        counters.pending_critic_steps = inner.pending_critic_steps;
        let stop = stage_should_terminate(&state.history, ctx.schedule)
            .unwrap_or(StopReason::MaxEpochs);
        let after = (
            state.frozen_gen.params.payload_sha256(),
            state.frozen_disc.params.payload_sha256(),
        );
        Ok((counters, stop, before, after))
    };

    // Stage 1.
    let (counters, stop, before, after) = if settings.stage1_adversarial {
        run_one(
            &mut state,
            stage1_kind,
            &mut rng_train,
            &mut rng_eval,
            &mut history,
            sink,
        )?
    } else {
        let c = StageCounters {
            margin_computations: 1,
            ..Default::default()
        };
        let hashes = (
            state.frozen_gen.params.payload_sha256(),
            state.frozen_disc.params.payload_sha256(),
        );
        (c, StopReason::MaxEpochs, hashes, hashes)
    };
    sink.on_stage_complete(1, &state.gen, &state.disc)?;
    let rows = generator_metrics(
        1,
        &state.gen,
        Some(&encoder_for_ctx),
        settings.mode,
        &settings.dataset,
        settings.metric_samples,
        settings.metric_projections,
        settings.seeds.metrics,
    )?;
    sink.on_metric_rows(&rows)?;
    metric_rows.extend(rows);
    stages.push(StageReport {
        index: 1,
        margins: state.margins,
        counters,
        stop,
        frozen_hashes_before: before,
        frozen_hashes_after: after,
        gen: state.gen.clone(),
        disc: state.disc.clone(),
        final_stats: state
            .history
            .last()
            .cloned()
            .unwrap_or_else(|| empty_stats(1)),
    });

    // Ranked stages.
    let ranked_stages = if settings.loss == PipelineLoss::Rankgan {
        settings.nstages
    } else {
        1
    };
    for i in 2..=ranked_stages {
        let mut frozen_gen = state.gen.clone();
        frozen_gen.freeze();
        let mut frozen_disc = state.disc.clone();
        frozen_disc.freeze();
        let z_margin = draw_latents(
            settings.mode,
            Some(&encoder_for_ctx),
            &x_val,
            settings.arch.latent_dim,
            &mut rng_eval,
        )?;
        let margins = compute_stage_margins(&frozen_disc, &frozen_gen, &x_val, &z_margin)?;
        sink.on_margins(i, &margins)?;
        state = StageState {
            index: i,
            gen: state.gen.thawed_clone(),
            disc: state.disc.thawed_clone(),
            frozen_gen,
            frozen_disc,
            margins,
            epoch: 0,
            history: Vec::new(),
        };
        let (counters, stop, before, after) = run_one(
            &mut state,
            StageLossKind::Ranked,
            &mut rng_train,
            &mut rng_eval,
            &mut history,
            sink,
        )?;
        sink.on_stage_complete(i, &state.gen, &state.disc)?;
        let rows = generator_metrics(
            i,
            &state.gen,
            Some(&encoder_for_ctx),
            settings.mode,
            &settings.dataset,
            settings.metric_samples,
            settings.metric_projections,
            settings.seeds.metrics,
        )?;
        sink.on_metric_rows(&rows)?;
        metric_rows.extend(rows);
        stages.push(StageReport {
            index: i,
            margins: state.margins,
            counters,
            stop,
            frozen_hashes_before: before,
            frozen_hashes_after: after,
            gen: state.gen.clone(),
            disc: state.disc.clone(),
            final_stats: state
                .history
                .last()
                .cloned()
                .unwrap_or_else(|| empty_stats(i)),
        });
    }

    Ok(PipelineReport {
        encoder: zero.encoder,
        stages,
        history,
        metric_rows,
        initial_val_mse: zero.initial_val_mse,
        final_val_mse: zero.final_val_mse,
    })
}

fn empty_stats(stage: usize) -> EpochStats {
    EpochStats {
        stage,
        epoch: 0,
        mean_d_real: 0.0,
        mean_d_fake_i: 0.0,
        mean_d_fake_prev: 0.0,
        loss_disc: 0.0,
        loss_gen: 0.0,
        gp: 0.0,
        clamp: 0.0,
        wall_ms: 0,
    }
}
