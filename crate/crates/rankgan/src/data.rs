//! Seedable synthetic datasets, train/validation/test splits and occlusion
//! masks.
//!
//! All samplers are pure functions of their seed. Image data lives in
//! `[-1, 1]` so a tanh-output generator covers the full range.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

pub const FACE_SIDE: usize = 8;
pub const FACE_DIM: usize = FACE_SIDE * FACE_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Two 1-d normals, N(-2, 0.5^2) and N(+2, 0.5^2), in labeled halves:
    /// the first half of the samples is the left (fake-side) mode.
    Gauss1dPair,
    /// Two 2-d normals at (-2, 0) and (+2, 0), sigma 0.5, in labeled halves.
    Gauss2d,
    /// Mixture of 8 Gaussians (sigma 0.05) centered on the unit circle.
    Ring8,
    /// 8x8 grayscale procedural faces flattened to 64 values in [-1, 1].
    ToyFaces,
}

impl DatasetKind {
    pub fn dim(&self) -> usize {
        match self {
            DatasetKind::Gauss1dPair => 1,
            DatasetKind::Gauss2d => 2,
            DatasetKind::Ring8 => 2,
            DatasetKind::ToyFaces => FACE_DIM,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, DatasetKind::ToyFaces)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Gauss1dPair => "gauss1d-pair",
            DatasetKind::Gauss2d => "gauss2d",
            DatasetKind::Ring8 => "ring8",
            DatasetKind::ToyFaces => "toy-faces",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss1d-pair" => Ok(DatasetKind::Gauss1dPair),
            "gauss2d" => Ok(DatasetKind::Gauss2d),
            "ring8" => Ok(DatasetKind::Ring8),
            "toy-faces" => Ok(DatasetKind::ToyFaces),
            other => Err(Error::config(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Draws `n` samples of the given kind as an `[n, dim]` tensor.
pub fn sample_real(kind: DatasetKind, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::config("cannot sample an empty dataset".to_string()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dim = kind.dim();
    let mut data = Vec::with_capacity(n * dim);
    match kind {
        DatasetKind::Gauss1dPair => {
            let half = n / 2;
            for i in 0..n {
                let center = if i < half { -2.0 } else { 2.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(center + 0.5 * z);
            }
        }
        DatasetKind::Gauss2d => {
            let half = n / 2;
            for i in 0..n {
                let center = if i < half { -2.0 } else { 2.0 };
                let zx: f64 = StandardNormal.sample(&mut rng);
                let zy: f64 = StandardNormal.sample(&mut rng);
                data.push(center + 0.5 * zx);
                data.push(0.5 * zy);
            }
        }
        DatasetKind::Ring8 => {
            for i in 0..n {
                let angle = std::f64::consts::TAU * (i % 8) as f64 / 8.0;
                let zx: f64 = StandardNormal.sample(&mut rng);
                let zy: f64 = StandardNormal.sample(&mut rng);
                data.push(angle.cos() + 0.05 * zx);
                data.push(angle.sin() + 0.05 * zy);
            }
        }
        DatasetKind::ToyFaces => {
            for _ in 0..n {
                data.extend_from_slice(&toy_face(&mut rng));
            }
        }
    }
    Tensor::new(&[n, dim], data)
}

/// One procedural face: two eye dots and a mouth bar on a dark background.
///
/// The whole face shares three smooth factors: a sub-pixel shift `(dx, dy)`
/// within one pixel of jitter and a feature intensity in [0.5, 1]. Features
/// are splatted bilinearly, so the image family is a smooth manifold and the
/// visible eye band determines the hidden mouth placement, the kind of
/// identity-like structure an encoder can capture.
fn toy_face(rng: &mut ChaCha12Rng) -> [f64; FACE_DIM] {
    let dx: f64 = rng.random_range(-1.0..=1.0);
    let dy: f64 = rng.random_range(-1.0..=1.0);
    let intensity: f64 = rng.random_range(0.5..=1.0);

    let mut weight = [0.0f64; FACE_DIM];
    let splat = |w: &mut [f64; FACE_DIM], row: f64, col: f64, amount: f64| {
        let (r0, c0) = (row.floor() as i32, col.floor() as i32);
        for (r, c) in [(r0, c0), (r0, c0 + 1), (r0 + 1, c0), (r0 + 1, c0 + 1)] {
            if (0..FACE_SIDE as i32).contains(&r) && (0..FACE_SIDE as i32).contains(&c) {
                let wr = 1.0 - (row - r as f64).abs();
                let wc = 1.0 - (col - c as f64).abs();
                let slot = &mut w[(r as usize) * FACE_SIDE + c as usize];
                *slot = slot.max(amount * wr * wc);
            }
        }
    };

    // Eyes sit high so they stay visible under a central occlusion; the
    // mouth bar below moves with the same shift.
    let eye_row = 1.0 + 0.5 * dy;
    splat(&mut weight, eye_row, 2.0 + dx, 1.0);
    splat(&mut weight, eye_row, 5.0 + dx, 1.0);
    let mouth_row = 5.0 + dy;
    for c in 2..=5 {
        splat(&mut weight, mouth_row, c as f64 + dx, 1.0);
    }

    let mut img = [-1.0; FACE_DIM];
    for (pixel, &w) in img.iter_mut().zip(weight.iter()) {
        *pixel = -1.0 + 2.0 * intensity * w;
    }
    img
}

/// Disjoint, exhaustive split indices: 10% test, then 10% of the remaining
/// training pool as validation. For n = 100 that is 81 / 9 / 10.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 3 {
        return Err(Error::config(format!(
            "dataset too small to split three ways: {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (n / 10).max(1);
    let pool = n - n_test;
    let n_val = (pool / 10).max(1);
    let test = order[..n_test].to_vec();
    let val = order[n_test..n_test + n_val].to_vec();
    let train = order[n_test + n_val..].to_vec();
    Ok(SplitIndices { train, val, test })
}

/// A sampled dataset together with its split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub samples: Tensor,
    pub split: SplitIndices,
}

impl Dataset {
    pub fn generate(kind: DatasetKind, n: usize, seed: u64) -> Result<Dataset> {
        let samples = sample_real(kind, n, seed)?;
        // Distinct stream for the shuffle so sampling and splitting can be
        // varied independently.
        let split = split(n, seed ^ 0x5e77).unwrap();
        Ok(Dataset {
            kind,
            samples,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn train_x(&self) -> Result<Tensor> {
        self.samples.gather_rows(&self.split.train)
    }

    pub fn val_x(&self) -> Result<Tensor> {
        self.samples.gather_rows(&self.split.val)
    }

    pub fn test_x(&self) -> Result<Tensor> {
        self.samples.gather_rows(&self.split.test)
    }

    /// Serializes the dataset in the checkpoint record format so a run can be
    /// replayed without regenerating the samples.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let idx = |v: &[usize]| Tensor::vector(&v.iter().map(|&i| i as f64).collect::<Vec<_>>());
        let records = vec![
            ("samples".to_string(), self.samples.clone()),
            ("train_idx".to_string(), idx(&self.split.train)),
            ("val_idx".to_string(), idx(&self.split.val)),
            ("test_idx".to_string(), idx(&self.split.test)),
        ];
        checkpoint::save_dataset_records(path, self.kind.name(), &records)
    }

    pub fn import(path: impl AsRef<Path>) -> Result<Dataset> {
        let path_str = path.as_ref().display().to_string();
        let (tag, records) = checkpoint::load_dataset_records(&path)?;
        let kind: DatasetKind = tag.parse()?;
        let find = |name: &str| -> Result<&Tensor> {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint {
                    path: path_str.clone(),
                    reason: format!("missing record `{name}`"),
                })
        };
        let samples = find("samples")?.clone();
        let to_idx = |t: &Tensor| t.data().iter().map(|&v| v as usize).collect::<Vec<_>>();
        let split = SplitIndices {
            train: to_idx(find("train_idx")?),
            val: to_idx(find("val_idx")?),
            test: to_idx(find("test_idx")?),
        };
        Ok(Dataset {
            kind,
            samples,
            split,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    /// Hides the central 2x2 block.
    CenterSmall,
    /// Hides the central 4x4 block.
    CenterLarge,
    /// Hides everything except the eye band (rows 1-2).
    PeriocularSmall,
    /// Hides everything except rows 0-3.
    PeriocularLarge,
}

impl MaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::CenterSmall => "center-small",
            MaskKind::CenterLarge => "center-large",
            MaskKind::PeriocularSmall => "periocular-small",
            MaskKind::PeriocularLarge => "periocular-large",
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center-small" => Ok(MaskKind::CenterSmall),
            "center-large" => Ok(MaskKind::CenterLarge),
            "periocular-small" => Ok(MaskKind::PeriocularSmall),
            "periocular-large" => Ok(MaskKind::PeriocularLarge),
            other => Err(Error::config(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Binary visibility grid over a square image; 1 marks a visible pixel.
#[derive(Clone, Debug)]
pub struct Mask {
    pub kind: MaskKind,
    pub side: usize,
    grid: Tensor,
}

impl Mask {
    pub fn new(kind: MaskKind, side: usize) -> Result<Mask> {
        let mut grid = vec![1.0; side * side];
        let visible = |r: usize, c: usize| -> f64 {
            match kind {
                MaskKind::CenterSmall => {
                    let lo = side / 2 - 1;
                    let hi = side / 2;
                    if (lo..=hi).contains(&r) && (lo..=hi).contains(&c) {
                        0.0
                    } else {
                        1.0
                    }
                }
                MaskKind::CenterLarge => {
                    let lo = side / 2 - 2;
                    let hi = side / 2 + 1;
                    if (lo..=hi).contains(&r) && (lo..=hi).contains(&c) {
                        0.0
                    } else {
                        1.0
                    }
                }
                MaskKind::PeriocularSmall => {
                    if (1..=2).contains(&r) {
                        1.0
                    } else {
                        0.0
                    }
                }
                MaskKind::PeriocularLarge => {
                    if r <= 3 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        };
        for r in 0..side {
            for c in 0..side {
                grid[r * side + c] = visible(r, c);
            }
        }
        let n_visible = grid.iter().filter(|&&v| v == 1.0).count();
        if n_visible == 0 || n_visible == grid.len() {
            return Err(Error::config(format!(
                "mask {:?} on side {side} must hide and show at least one pixel",
                kind
            )));
        }
        Ok(Mask {
            kind,
            side,
            grid: Tensor::new(&[side * side], grid)?,
        })
    }

    /// A fully custom grid, mostly for tests; values must be 0 or 1 with both
    /// present.
    pub fn from_grid(kind: MaskKind, side: usize, grid: Tensor) -> Result<Mask> {
        if grid.numel() != side * side || grid.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::config("mask grid must be binary".to_string()));
        }
        let n_visible = grid.data().iter().filter(|&&v| v == 1.0).count();
        if n_visible == 0 || n_visible == grid.numel() {
            return Err(Error::config(
                "mask must hide and show at least one pixel".to_string(),
            ));
        }
        Ok(Mask { kind, side, grid })
    }

    pub fn grid(&self) -> &Tensor {
        &self.grid
    }

    pub fn visible_count(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn hidden_count(&self) -> usize {
        self.grid.numel() - self.visible_count()
    }
}

/// Keeps visible pixels, replaces hidden ones with `fill`.
pub fn apply_mask(image: &Tensor, mask: &Mask, fill: f64) -> Result<Tensor> {
    let dim = mask.grid.numel();
    let last = *image.shape().last().unwrap_or(&0);
    if last != dim {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            lhs: image.shape().to_vec(),
            rhs: mask.grid.shape().to_vec(),
        });
    }
    let mut out = image.clone();
    let g = mask.grid.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if g[i % dim] == 0.0 {
            *v = fill;
        }
    }
    Ok(out)
}
