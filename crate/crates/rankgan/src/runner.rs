//! Experiment execution: artifacts, CSV logs, exit codes.
//!
//! Every run writes `config.resolved` into the output directory first. CSVs
//! are written with a `.partial` suffix and renamed into place when the run
//! finishes, so an interrupted run is recognizable by its leftovers. Failures
//! produce a machine-readable error record (`error.json` in the output
//! directory when possible, plus one JSON line on stderr) and a conventional
//! exit code: 2 for configuration errors, 3 for numeric blow-ups, 4 for I/O.

use crate::autodiff::Tensor;
use crate::completion::{blend, initial_latent, optimize_latent, TrajectoryPoint, ZInit};
use crate::config::{ExperimentConfig, ExperimentKind, ResolvedConfig};
use crate::data::{apply_mask, Dataset, DatasetKind, Mask, MaskKind, FACE_SIDE};
use crate::error::{Error, Result};
use crate::losses::{baseline_loss, gradient_penalty, margin_loss, BaselineKind, MarginPair, Role};
use crate::metrics::{psnr, ssim};
use crate::nn::{adam_step, checkpoint, AdamState, GradMap, Mlp};
use crate::stagewise::{
    generator_metrics, run_pipeline, Architecture, EpochStats, MetricRow, PipelineReport,
    PipelineSettings, PipelineSink,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Maps `RANKGAN_LOG` ({quiet, info, debug}) onto the logger. Safe to call
/// more than once.
pub fn init_logging() {
    let level = match std::env::var("RANKGAN_LOG").as_deref() {
        Ok("quiet") => "error",
        Ok("debug") => "debug",
        _ => "info",
    };
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

/// Machine-readable failure record.
#[derive(Debug, serde::Serialize)]
pub struct ErrorRecord {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> ErrorRecord {
        let (code, kind, stage, epoch) = match e {
            Error::NonFiniteLoss { stage, epoch, .. } => {
                (EXIT_NUMERIC, "numeric", Some(*stage), Some(*epoch))
            }
            Error::NonFinite { .. } => (EXIT_NUMERIC, "numeric", None, None),
            Error::Io(_) => (EXIT_IO, "io", None, None),
            Error::Checkpoint { .. } | Error::CheckpointVersion { .. } => {
                (EXIT_IO, "io", None, None)
            }
            _ => (EXIT_PARSE, "config", None, None),
        };
        ErrorRecord {
            code,
            kind,
            message: e.to_string(),
            stage,
            epoch,
        }
    }

    fn emit(&self, out_dir: Option<&Path>) {
        let json = serde_json::to_string(self).unwrap_or_else(|_| self.message.clone());
        eprintln!("{json}");
        if let Some(dir) = out_dir {
            let _ = fs::write(dir.join("error.json"), format!("{json}\n"));
        }
    }
}

/// A CSV written as `<name>.partial` and renamed to `<name>` on success.
struct CsvFile {
    partial: PathBuf,
    target: PathBuf,
    writer: BufWriter<fs::File>,
}

impl CsvFile {
    fn create(dir: &Path, name: &str, header: &str) -> Result<CsvFile> {
        let target = dir.join(name);
        let partial = dir.join(format!("{name}.partial"));
        let file = fs::File::create(&partial)?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{header}")?;
        Ok(CsvFile {
            partial,
            target,
            writer,
        })
    }

    fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        Ok(())
    }

    fn finalize(mut self) -> Result<()> {
        self.writer.flush()?;
        drop(self.writer);
        fs::rename(&self.partial, &self.target)?;
        Ok(())
    }
}

/// Streams pipeline artifacts into the output directory.
struct FileSink {
    out_dir: PathBuf,
    history: Option<CsvFile>,
    margins: Option<CsvFile>,
    metric_rows: Vec<MetricRow>,
}

impl FileSink {
    fn create(out_dir: &Path) -> Result<FileSink> {
        Ok(FileSink {
            out_dir: out_dir.to_path_buf(),
            history: Some(CsvFile::create(
                out_dir,
                "history.csv",
                EpochStats::CSV_HEADER,
            )?),
            margins: Some(CsvFile::create(out_dir, "margins.csv", "stage,m_high,m_low")?),
            metric_rows: Vec::new(),
        })
    }

    fn finalize(mut self) -> Result<()> {
        if let Some(history) = self.history.take() {
            history.finalize()?;
        }
        if let Some(margins) = self.margins.take() {
            margins.finalize()?;
        }
        let mut metrics = CsvFile::create(&self.out_dir, "metrics.csv", MetricRow::CSV_HEADER)?;
        for row in &self.metric_rows {
            metrics.row(&row.csv_row())?;
        }
        metrics.finalize()
    }
}

impl PipelineSink for FileSink {
    fn on_epoch(&mut self, row: &EpochStats) -> Result<()> {
        self.history
            .as_mut()
            .expect("history file open")
            .row(&row.csv_row())
    }

    fn on_margins(&mut self, stage: usize, margins: &MarginPair) -> Result<()> {
        self.margins
            .as_mut()
            .expect("margins file open")
            .row(&format!("{},{},{}", stage, margins.high, margins.low))
    }

    fn on_encoder(&mut self, encoder: &Mlp) -> Result<()> {
        checkpoint::save_model(
            self.out_dir.join("encoder.ckpt"),
            &encoder.spec,
            &encoder.params,
        )
    }

    fn on_stage_complete(&mut self, stage: usize, gen: &Mlp, disc: &Mlp) -> Result<()> {
        checkpoint::save_model(
            self.out_dir.join(format!("stage_{stage}_G.ckpt")),
            &gen.spec,
            &gen.params,
        )?;
        checkpoint::save_model(
            self.out_dir.join(format!("stage_{stage}_D.ckpt")),
            &disc.spec,
            &disc.params,
        )
    }

    fn on_metric_rows(&mut self, rows: &[MetricRow]) -> Result<()> {
        self.metric_rows.extend_from_slice(rows);
        Ok(())
    }
}

fn build_dataset(cfg: &ResolvedConfig) -> Result<Dataset> {
    Dataset::generate(
        cfg.raw.dataset.kind,
        cfg.raw.dataset.n_samples,
        cfg.resolved_seeds.data,
    )
}

/// Runs the stage-wise pipeline and writes history, checkpoints and metrics.
pub fn run_pipeline_experiment(cfg: &ResolvedConfig) -> Result<PipelineReport> {
    let dataset = build_dataset(cfg)?;
    if cfg.raw.export_dataset {
        dataset.export(cfg.raw.out_dir.join("dataset.ckpt"))?;
    }
    let settings = PipelineSettings {
        dataset,
        arch: cfg.architecture(),
        hyper: cfg.raw.training.hyper(),
        schedule: cfg.raw.schedule,
        weights: cfg.raw.weights,
        mode: cfg.raw.encoder_mode,
        loss: cfg.raw.loss,
        nstages: cfg.raw.nstages,
        stage1_adversarial: cfg.raw.training.stage1_adversarial,
        seeds: cfg.resolved_seeds.stream_seeds(),
        metric_samples: cfg.raw.metrics.samples,
        metric_projections: cfg.raw.metrics.projections,
    };
    let mut sink = FileSink::create(&cfg.raw.out_dir)?;
    let report = run_pipeline(&settings, &mut sink)?;
    sink.finalize()?;
    Ok(report)
}

/// One row of the score-curve table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreCurveRow {
    pub x: f64,
    pub gan_sigmoid: f64,
    pub wgan: f64,
    pub lsgan: f64,
    pub margin: f64,
}

pub struct ScoreCurveReport {
    pub rows: Vec<ScoreCurveRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CurveCritic {
    Gan,
    Wgan,
    Lsgan,
    Margin,
}

/// Trains one critic to separate the two labeled halves of the 1-d pair
/// dataset under the given objective.
fn train_curve_critic(
    which: CurveCritic,
    real: &Tensor,
    fake: &Tensor,
    cfg: &ResolvedConfig,
    rng_init: &mut ChaCha12Rng,
    rng_train: &mut ChaCha12Rng,
) -> Result<Mlp> {
    let arch = Architecture::for_dataset(
        DatasetKind::Gauss1dPair,
        1,
        &cfg.raw.arch.gen_hidden,
        &cfg.raw.arch.disc_hidden,
        &cfg.raw.arch.enc_hidden,
    );
    let mut disc = Mlp::init(arch.disc_spec.clone(), rng_init)?;
    let hyper = cfg.raw.training.hyper();
    let mut adam = AdamState::new(crate::nn::AdamConfig::new(
        hyper.lr_disc,
        hyper.adam_beta1,
        hyper.adam_beta2,
    ));
    let batch = hyper.batch_size;
    let n = real.shape()[0].min(fake.shape()[0]);
    if n < batch {
        return Err(Error::config(format!(
            "score-curve halves ({n}) smaller than one batch ({batch})"
        )));
    }

    for epoch in 1..=cfg.raw.training.fig2_epochs {
        let mut real_idx: Vec<usize> = (0..real.shape()[0]).collect();
        let mut fake_idx: Vec<usize> = (0..fake.shape()[0]).collect();
        real_idx.shuffle(rng_train);
        fake_idx.shuffle(rng_train);
        let steps = n / batch;
        for step in 0..steps {
            let xr = real.gather_rows(&real_idx[step * batch..(step + 1) * batch])?;
            let xf = fake.gather_rows(&fake_idx[step * batch..(step + 1) * batch])?;
            let vars = disc.params.to_vars(true);
            let score = |x: &Tensor| -> Result<crate::autodiff::Var> {
                let out = crate::nn::mlp_forward(
                    &vars,
                    &disc.spec,
                    &crate::autodiff::Var::constant(x.clone()),
                )?;
                out.reshape(&[batch])
            };
            let d_real = score(&xr)?;
            let d_fake = score(&xf)?;
            let loss = match which {
                CurveCritic::Gan => baseline_loss(BaselineKind::Gan, &d_real, &d_fake, Role::Disc)?,
                CurveCritic::Lsgan => {
                    baseline_loss(BaselineKind::Lsgan, &d_real, &d_fake, Role::Disc)?
                }
                CurveCritic::Wgan | CurveCritic::Margin => {
                    let base = match which {
                        CurveCritic::Wgan => {
                            baseline_loss(BaselineKind::Wgan, &d_real, &d_fake, Role::Disc)?
                        }
                        _ => margin_loss(&d_fake, &d_real, cfg.raw.weights.epsilon_margin)?,
                    };
                    let u = Tensor::vector(
                        &(0..batch)
                            .map(|_| rng_train.random_range(0.0..=1.0))
                            .collect::<Vec<f64>>(),
                    );
                    let gp = gradient_penalty(&vars, &disc.spec, &xr, &xf, &u)?;
                    base.add(&gp.mul_scalar(cfg.raw.weights.lambda_gp))?
                }
            };
            let loss_v = loss.value().item()?;
            if !loss_v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: 0,
                    epoch,
                    step,
                    component: format!("{which:?} score-curve loss"),
                });
            }
            let grads = GradMap::of(&loss, &vars)?;
            adam_step(&mut adam, &mut disc.params, &grads)?;
        }
    }
    Ok(disc)
}

/// Trains the four critics on the two-normal dataset and tabulates their
/// scores over the grid x in [-5, 5], step 0.05 (201 rows). The plain GAN
/// column reports the sigmoid of the score.
pub fn run_score_curves_experiment(cfg: &ResolvedConfig) -> Result<ScoreCurveReport> {
    let n = cfg.raw.dataset.n_samples;
    let samples = crate::data::sample_real(DatasetKind::Gauss1dPair, n, cfg.resolved_seeds.data)?;
    let half = n / 2;
    let fake = samples.gather_rows(&(0..half).collect::<Vec<_>>())?;
    let real = samples.gather_rows(&(half..n).collect::<Vec<_>>())?;

    let mut rng_init = ChaCha12Rng::seed_from_u64(cfg.resolved_seeds.init);
    let mut rng_train = ChaCha12Rng::seed_from_u64(cfg.resolved_seeds.training);
    let gan = train_curve_critic(
        CurveCritic::Gan,
        &real,
        &fake,
        cfg,
        &mut rng_init,
        &mut rng_train,
    )?;
    let wgan = train_curve_critic(
        CurveCritic::Wgan,
        &real,
        &fake,
        cfg,
        &mut rng_init,
        &mut rng_train,
    )?;
    let lsgan = train_curve_critic(
        CurveCritic::Lsgan,
        &real,
        &fake,
        cfg,
        &mut rng_init,
        &mut rng_train,
    )?;
    let margin = train_curve_critic(
        CurveCritic::Margin,
        &real,
        &fake,
        cfg,
        &mut rng_init,
        &mut rng_train,
    )?;

    let mut rows = Vec::with_capacity(201);
    let mut csv = CsvFile::create(
        &cfg.raw.out_dir,
        "scores.csv",
        "x,d_gan_sigmoid,d_wgan,d_lsgan,d_margin",
    )?;
    for i in 0..=200 {
        let x = -5.0 + 0.05 * i as f64;
        let input = Tensor::new(&[1, 1], vec![x])?;
        let score = |m: &Mlp| -> Result<f64> { Ok(m.forward_t(&input)?.data()[0]) };
        let row = ScoreCurveRow {
            x,
            gan_sigmoid: 1.0 / (1.0 + (-score(&gan)?).exp()),
            wgan: score(&wgan)?,
            lsgan: score(&lsgan)?,
            margin: score(&margin)?,
        };
        csv.row(&format!(
            "{},{},{},{},{}",
            row.x, row.gan_sigmoid, row.wgan, row.lsgan, row.margin
        ))?;
        rows.push(row);
    }
    csv.finalize()?;
    Ok(ScoreCurveReport { rows })
}

/// One completed image, as reported in `completion.csv` (plus fields kept
/// only in memory for verification).
#[derive(Clone, Debug)]
pub struct CompletionRow {
    pub image_id: usize,
    pub mask: MaskKind,
    pub stage: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub final_contextual: f64,
    pub final_perceptual: f64,
    pub iterations: usize,
    /// PSNR of the zero-filled corrupted image, for comparison (not a CSV
    /// column).
    pub psnr_corrupted: f64,
    /// Loss samples from the latent search (not a CSV column).
    pub trajectory: Vec<TrajectoryPoint>,
    /// The blended image (not a CSV column).
    pub completed: Tensor,
    /// The corrupted input (not a CSV column).
    pub corrupted: Tensor,
}

pub struct CompletionReport {
    pub rows: Vec<CompletionRow>,
}

fn load_stage_models(dir: &Path, stage: usize) -> Result<(Mlp, Mlp)> {
    let load = |name: String| -> Result<Mlp> {
        let (spec, params) = checkpoint::load_model(dir.join(&name))?;
        Ok(Mlp { spec, params })
    };
    Ok((
        load(format!("stage_{stage}_G.ckpt"))?,
        load(format!("stage_{stage}_D.ckpt"))?,
    ))
}

fn load_encoder(dir: &Path) -> Result<Option<Mlp>> {
    let path = dir.join("encoder.ckpt");
    if !path.exists() {
        return Ok(None);
    }
    let (spec, params) = checkpoint::load_model(path)?;
    Ok(Some(Mlp { spec, params }))
}

/// Completes `n_images` test images with the configured stage's models and
/// writes `completion.csv`.
pub fn run_completion_experiment(cfg: &ResolvedConfig) -> Result<CompletionReport> {
    if !cfg.raw.dataset.kind.is_image() {
        return Err(Error::config(
            "completion requires an image dataset (toy-faces)",
        ));
    }
    let stage = cfg.raw.completion.stage;
    let (gen, disc) = load_stage_models(&cfg.checkpoints_dir, stage)?;
    let encoder = load_encoder(&cfg.checkpoints_dir)?;
    if cfg.raw.completion.config.z_init == ZInit::Encoder && encoder.is_none() {
        return Err(Error::config(format!(
            "z_init = encoder but `{}` has no encoder.ckpt",
            cfg.checkpoints_dir.display()
        )));
    }

    let dataset = build_dataset(cfg)?;
    let n_images = cfg.raw.completion.n_images;
    if dataset.split.test.len() < n_images {
        return Err(Error::config(format!(
            "test split has {} images, need {n_images}",
            dataset.split.test.len()
        )));
    }
    let mask = Mask::new(cfg.raw.completion.mask, FACE_SIDE)?;

    let mut csv = CsvFile::create(
        &cfg.raw.out_dir,
        "completion.csv",
        "image_id,mask_kind,stage,psnr,ssim,final_contextual,final_perceptual,iterations",
    )?;
    let mut rows = Vec::with_capacity(n_images);
    for (job, &row_idx) in dataset.split.test[..n_images].iter().enumerate() {
        let original = dataset.samples.row(row_idx)?;
        let corrupted = apply_mask(&original, &mask, 0.0)?;
        let mut rng = ChaCha12Rng::seed_from_u64(
            cfg.resolved_seeds
                .completion
                .wrapping_add((job as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let z0 = initial_latent(
            &gen,
            encoder.as_ref(),
            &corrupted,
            &mask,
            &cfg.raw.completion.config,
            &mut rng,
        )?;
        let result = optimize_latent(
            &gen,
            &disc,
            &corrupted,
            &mask,
            &cfg.raw.completion.config,
            z0,
        )?;
        let generated = gen
            .forward_t(&result.z_hat)?
            .reshape(&[original.numel()])?;
        let completed = blend(&corrupted, &mask, &generated)?;
        let row = CompletionRow {
            image_id: row_idx,
            mask: cfg.raw.completion.mask,
            stage,
            psnr: psnr(&original, &completed, 2.0)?,
            ssim: ssim(&original, &completed)?,
            final_contextual: result.final_contextual,
            final_perceptual: result.final_perceptual,
            iterations: result.iterations,
            psnr_corrupted: psnr(&original, &corrupted, 2.0)?,
            trajectory: result.trajectory,
            completed,
            corrupted,
        };
        csv.row(&format!(
            "{},{},{},{},{},{},{},{}",
            row.image_id,
            row.mask.name(),
            row.stage,
            row.psnr,
            row.ssim,
            row.final_contextual,
            row.final_perceptual,
            row.iterations
        ))?;
        rows.push(row);
    }
    csv.finalize()?;
    Ok(CompletionReport { rows })
}

/// Evaluates checkpointed generators against freshly regenerated data and
/// writes `metrics.csv`.
pub fn run_metrics_experiment(cfg: &ResolvedConfig) -> Result<Vec<MetricRow>> {
    let dataset = build_dataset(cfg)?;
    let encoder = load_encoder(&cfg.checkpoints_dir)?;
    let mut all_rows = Vec::new();
    let mut csv = CsvFile::create(&cfg.raw.out_dir, "metrics.csv", MetricRow::CSV_HEADER)?;
    for stage in 1..=cfg.raw.nstages {
        let (gen, _disc) = load_stage_models(&cfg.checkpoints_dir, stage)?;
        let rows = generator_metrics(
            stage,
            &gen,
            encoder.as_ref(),
            cfg.raw.encoder_mode,
            &dataset,
            cfg.raw.metrics.samples,
            cfg.raw.metrics.projections,
            cfg.resolved_seeds.metrics,
        )?;
        for row in &rows {
            csv.row(&row.csv_row())?;
        }
        all_rows.extend(rows);
    }
    csv.finalize()?;
    Ok(all_rows)
}

/// What a successful run produced, for callers that want more than files.
pub enum RunArtifacts {
    Pipeline(Box<PipelineReport>),
    ScoreCurves(ScoreCurveReport),
    Completion(CompletionReport),
    Metrics(Vec<MetricRow>),
}

/// Creates the output directory, writes `config.resolved`, and dispatches on
/// the experiment kind.
pub fn run_resolved(cfg: &ResolvedConfig) -> Result<RunArtifacts> {
    fs::create_dir_all(&cfg.raw.out_dir)?;
    fs::write(cfg.raw.out_dir.join("config.resolved"), cfg.to_resolved_json())?;
    match cfg.raw.kind {
        ExperimentKind::Pipeline => Ok(RunArtifacts::Pipeline(Box::new(
            run_pipeline_experiment(cfg)?,
        ))),
        ExperimentKind::Fig2Scores => Ok(RunArtifacts::ScoreCurves(run_score_curves_experiment(cfg)?)),
        ExperimentKind::Completion => Ok(RunArtifacts::Completion(run_completion_experiment(cfg)?)),
        ExperimentKind::MetricsOnly => Ok(RunArtifacts::Metrics(run_metrics_experiment(cfg)?)),
    }
}

/// Command-line overrides applied before resolution.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub stage: Option<usize>,
    pub mask: Option<MaskKind>,
    /// When set, the config's experiment kind must match (the `fig2` and
    /// `complete` subcommands are kind-specific).
    pub expect_kind: Option<ExperimentKind>,
}

/// Loads, resolves and runs one config; returns the process exit code.
pub fn execute_config(path: &Path, overrides: &Overrides) -> i32 {
    let resolved = ExperimentConfig::from_file(path)
        .and_then(|mut cfg| {
            if let Some(expected) = overrides.expect_kind {
                if cfg.kind != expected {
                    return Err(Error::config(format!(
                        "this subcommand expects a {expected:?} config, `{}` has kind {:?}",
                        path.display(),
                        cfg.kind
                    )));
                }
            }
            if let Some(stage) = overrides.stage {
                cfg.completion.stage = stage;
            }
            if let Some(mask) = overrides.mask {
                cfg.completion.mask = mask;
            }
            cfg.resolve(overrides.seed, overrides.out.clone())
        });
    let cfg = match resolved {
        Ok(cfg) => cfg,
        Err(e) => {
            // Parse or validation failure: no artifacts at all.
            ErrorRecord::from_error(&e).emit(None);
            return EXIT_PARSE;
        }
    };
    match run_resolved(&cfg) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            let record = ErrorRecord::from_error(&e);
            record.emit(Some(&cfg.raw.out_dir));
            record.code
        }
    }
}

/// Runs several configs with up to `jobs` worker threads. With an `--out`
/// override and more than one config, each run lands in a subdirectory named
/// after its config file.
pub fn execute_many(paths: &[PathBuf], jobs: usize, overrides: &Overrides) -> i32 {
    if paths.len() == 1 {
        return execute_config(&paths[0], overrides);
    }
    use std::sync::atomic::{AtomicI32, AtomicUsize, Ordering};
    let next = AtomicUsize::new(0);
    let worst = AtomicI32::new(EXIT_OK);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(paths.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= paths.len() {
                    break;
                }
                let mut per_run = overrides.clone();
                if let Some(out) = &overrides.out {
                    let stem = paths[i]
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("run{i}"));
                    per_run.out = Some(out.join(stem));
                }
                let code = execute_config(&paths[i], &per_run);
                worst.fetch_max(code, Ordering::SeqCst);
            });
        }
    });
    worst.load(Ordering::SeqCst)
}

/// Verifies a checkpoint file round-trips byte-exactly.
pub fn execute_verify(path: &Path) -> i32 {
    match checkpoint::verify_roundtrip(path) {
        Ok(summary) => {
            println!(
                "verified: {} checkpoint, {} records, {} bytes",
                summary.kind, summary.records, summary.bytes
            );
            EXIT_OK
        }
        Err(e) => {
            ErrorRecord::from_error(&e).emit(None);
            EXIT_IO
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(json: &str, out: &Path) -> ResolvedConfig {
        ExperimentConfig::from_json(json)
            .unwrap()
            .resolve(None, Some(out.to_path_buf()))
            .unwrap()
    }

    #[test]
    fn pipeline_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resolved(
            r#"{
                "kind": "pipeline",
                "dataset": { "kind": "gauss2d", "n_samples": 300 },
                "nstages": 2,
                "arch": { "gen_hidden": [16], "disc_hidden": [16], "enc_hidden": [16] },
                "training": { "batch_size": 32, "vae_epochs": 1, "lr_disc": 1e-3, "lr_gen": 1e-3, "lr_enc": 1e-3 },
                "schedule": { "max_stage_epochs": 2, "gap_window": 50 },
                "metrics": { "samples": 32, "projections": 16 },
                "export_dataset": true,
                "seed": 0
            }"#,
            dir.path(),
        );
        match run_resolved(&cfg).unwrap() {
            RunArtifacts::Pipeline(report) => assert_eq!(report.stages.len(), 2),
            _ => panic!("expected a pipeline report"),
        }
        for name in [
            "config.resolved",
            "history.csv",
            "margins.csv",
            "metrics.csv",
            "dataset.ckpt",
            "encoder.ckpt",
            "stage_1_G.ckpt",
            "stage_1_D.ckpt",
            "stage_2_G.ckpt",
            "stage_2_D.ckpt",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        // No leftover partials.
        assert!(!dir.path().join("history.csv.partial").exists());
        let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert!(history.starts_with(EpochStats::CSV_HEADER));
        // 2 stages x 2 epochs of rows plus the header.
        assert_eq!(history.lines().count(), 5);
        // The exported dataset replays bit-for-bit.
        let replay = crate::data::Dataset::import(dir.path().join("dataset.ckpt")).unwrap();
        let original = build_dataset(&cfg).unwrap();
        assert_eq!(replay.samples, original.samples);
        assert_eq!(replay.split, original.split);
    }

    #[test]
    fn baseline_losses_run_as_single_stage_pipelines() {
        for loss in ["margin", "wgan", "lsgan", "gan"] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = resolved(
                &format!(
                    r#"{{
                        "kind": "pipeline",
                        "dataset": {{ "kind": "gauss2d", "n_samples": 300 }},
                        "nstages": 3,
                        "loss": "{loss}",
                        "arch": {{ "gen_hidden": [16], "disc_hidden": [16], "enc_hidden": [16] }},
                        "training": {{ "batch_size": 32, "vae_epochs": 1, "lr_disc": 1e-3,
                                      "lr_gen": 1e-3, "lr_enc": 1e-3 }},
                        "schedule": {{ "max_stage_epochs": 2, "gap_window": 50 }},
                        "metrics": {{ "samples": 32, "projections": 16 }},
                        "seed": 0
                    }}"#
                ),
                dir.path(),
            );
            let report = match run_resolved(&cfg).unwrap() {
                RunArtifacts::Pipeline(report) => report,
                _ => unreachable!(),
            };
            // Ranking stages only exist for the staged objective.
            assert_eq!(report.stages.len(), 1, "loss {loss}");
            assert!(dir.path().join("stage_1_G.ckpt").exists());
            assert!(!dir.path().join("stage_2_G.ckpt").exists());
        }
    }

    #[test]
    fn malformed_config_exits_2_without_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("bad.json");
        fs::write(&config_path, r#"{ "kind": "pipeline", "oops": 1 }"#).unwrap();
        let out = dir.path().join("out");
        let code = execute_config(
            &config_path,
            &Overrides {
                out: Some(out.clone()),
                ..Default::default()
            },
        );
        assert_eq!(code, EXIT_PARSE);
        assert!(!out.exists(), "no artifacts on parse failure");
    }

    #[test]
    fn completion_without_checkpoints_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resolved(
            r#"{
                "kind": "completion",
                "dataset": { "kind": "toy-faces", "n_samples": 200 },
                "completion": { "stage": 1, "n_images": 2, "iterations": 5, "z_init": "prior" }
            }"#,
            dir.path(),
        );
        let err = match run_resolved(&cfg) {
            Err(e) => e,
            Ok(_) => panic!("expected a missing-checkpoint failure"),
        };
        let record = ErrorRecord::from_error(&err);
        assert_eq!(record.code, EXIT_IO);
    }

    #[test]
    fn stream_seed_override_changes_only_data_artifacts() {
        // Same init/training seeds, different data seed: the dataset moves
        // while model initialization stays identical.
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let base = r#"{
            "kind": "pipeline",
            "dataset": { "kind": "gauss2d", "n_samples": 200 },
            "nstages": 1,
            "arch": { "gen_hidden": [8], "disc_hidden": [8], "enc_hidden": [8] },
            "training": { "batch_size": 32, "vae_epochs": 0, "stage1_adversarial": false },
            "schedule": { "max_stage_epochs": 1, "gap_window": 50 },
            "metrics": { "samples": 16, "projections": 8 },
            "seed": 3
        }"#;
        let with_data_override = base.replace(
            "\"seed\": 3",
            "\"seeds\": { \"data\": 777 }, \"seed\": 3",
        );
        let cfg_a = resolved(base, dir_a.path());
        let cfg_b = resolved(&with_data_override, dir_b.path());
        let a = match run_resolved(&cfg_a).unwrap() {
            RunArtifacts::Pipeline(r) => r,
            _ => unreachable!(),
        };
        let b = match run_resolved(&cfg_b).unwrap() {
            RunArtifacts::Pipeline(r) => r,
            _ => unreachable!(),
        };
        // Initialization stream untouched: encoders start identical (no VAE
        // epochs, so they remain the raw initialization).
        assert_eq!(
            a.encoder.params.payload_sha256(),
            b.encoder.params.payload_sha256()
        );
        // Data stream moved: metric values differ.
        assert_ne!(a.metric_rows[0].value, b.metric_rows[0].value);
        // With one stage and no adversarial phase, the run is exactly the
        // warm start: no training epochs are recorded.
        assert!(a.history.is_empty());
        assert_eq!(a.stages.len(), 1);
    }
}
