//! Small multilayer perceptrons, parameter management and Adam.
//!
//! Generators, critics and encoders are all plain MLPs described by an
//! [`MlpSpec`]. Critics end in an identity activation: they output an
//! unbounded realism score per sample rather than a probability.

pub mod checkpoint;

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenActivation {
    /// Leaky rectifier with the given negative slope.
    LeakyRelu(f64),
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    Sigmoid,
}

/// Layer widths plus activations; `widths[0]` is the input dimension.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: HiddenActivation,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: HiddenActivation, output: OutputActivation) -> Self {
        MlpSpec {
            widths,
            hidden,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::config(format!(
                "an MLP needs at least 2 widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::config(format!(
                "zero layer width in {:?}",
                self.widths
            )));
        }
        if let HiddenActivation::LeakyRelu(slope) = self.hidden {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::config(format!(
                    "leaky-relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Named, ordered parameter collection. Freezing is enforced: a frozen
/// collection rejects every mutation attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
    frozen: bool,
}

impl ModelParams {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.clone()) {
                return Err(Error::config(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(ModelParams {
            entries,
            frozen: false,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(name.to_string()));
        }
        let entry = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if entry.1.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ModelParams::set",
                lhs: entry.1.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        entry.1 = value;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    /// An unfrozen deep copy, for cloning a stage into the next one.
    pub fn thawed_clone(&self) -> ModelParams {
        ModelParams {
            entries: self.entries.clone(),
            frozen: false,
        }
    }

    /// Lifts every parameter into a graph variable. `trainable` decides
    /// whether gradients will flow into them.
    pub fn to_vars(&self, trainable: bool) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(n, t)| {
                let v = if trainable {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        ParamVars(vars)
    }

    /// SHA-256 over the little-endian payload of every parameter, in order.
    /// Used to assert that frozen models never change.
    pub fn payload_sha256(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, t) in &self.entries {
            hasher.update(name.as_bytes());
            for &d in t.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Parameters lifted into the graph, preserving name and order.
pub struct ParamVars(Vec<(String, Var)>);

impl ParamVars {
    pub fn from_pairs(pairs: Vec<(String, Var)>) -> Self {
        ParamVars(pairs)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn vars(&self) -> Vec<&Var> {
        self.0.iter().map(|(_, v)| v).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(n, _)| n.as_str())
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct GradMap(BTreeMap<String, Tensor>);

impl GradMap {
    pub fn new() -> Self {
        GradMap(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.0.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    /// Gradients of `loss` with respect to every variable in `vars`.
    pub fn of(loss: &Var, vars: &ParamVars) -> Result<GradMap> {
        let refs: Vec<&Var> = vars.vars();
        let grads = crate::autodiff::grad(loss, &refs, false)?;
        let mut map = GradMap::new();
        for ((name, _), g) in vars.0.iter().zip(grads) {
            map.insert(name.clone(), g.value().clone());
        }
        Ok(map)
    }
}

/// Weight names are `w{i}`/`b{i}` per layer, in forward order.
fn layer_names(layer: usize) -> (String, String) {
    (format!("w{layer}"), format!("b{layer}"))
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(spec: &MlpSpec, rng: &mut impl Rng) -> Result<ModelParams> {
    spec.validate()?;
    let mut entries = Vec::new();
    for l in 0..spec.widths.len() - 1 {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::new(
            &[fan_in, fan_out],
            (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        )?;
        let (wn, bn) = layer_names(l);
        entries.push((wn, w));
        entries.push((bn, Tensor::zeros(&[fan_out])));
    }
    ModelParams::new(entries)
}

/// Forward pass through the MLP described by `spec`, differentiable with
/// respect to both `input` and the parameters in `vars`.
pub fn mlp_forward(vars: &ParamVars, spec: &MlpSpec, input: &Var) -> Result<Var> {
    let batch_width = *input.shape().last().unwrap_or(&0);
    if input.shape().len() != 2 || batch_width != spec.in_dim() {
        return Err(Error::BadShape {
            op: "mlp_forward",
            expected: format!("[batch, {}] input", spec.in_dim()),
            got: input.shape().to_vec(),
        });
    }
    let layers = spec.widths.len() - 1;
    let mut h = input.clone();
    for l in 0..layers {
        let (wn, bn) = layer_names(l);
        let w = vars
            .get(&wn)
            .ok_or_else(|| Error::config(format!("missing parameter `{wn}`")))?;
        let b = vars
            .get(&bn)
            .ok_or_else(|| Error::config(format!("missing parameter `{bn}`")))?;
        h = h.matmul(w)?.add(b)?;
        if l + 1 < layers {
            h = match spec.hidden {
                HiddenActivation::LeakyRelu(slope) => h.leaky_relu(slope),
                HiddenActivation::Tanh => h.tanh(),
            };
        } else {
            h = match spec.output {
                OutputActivation::Identity => h,
                OutputActivation::Tanh => h.tanh(),
                OutputActivation::Sigmoid => h.sigmoid(),
            };
        }
    }
    Ok(h)
}

/// An MLP bundled with its parameters.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ModelParams,
}

impl Mlp {
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Result<Mlp> {
        let params = init_mlp(&spec, rng)?;
        Ok(Mlp { spec, params })
    }

    /// Plain forward evaluation without building a differentiable graph.
    pub fn forward_t(&self, input: &Tensor) -> Result<Tensor> {
        let vars = self.params.to_vars(false);
        let x = Var::constant(input.clone());
        Ok(mlp_forward(&vars, &self.spec, &x)?.value().clone())
    }

    /// Critic scores as a flat `[batch]` tensor.
    pub fn score(&self, input: &Tensor) -> Result<Tensor> {
        let out = self.forward_t(input)?;
        let batch = out.shape()[0];
        out.reshape(&[batch])
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    pub fn thawed_clone(&self) -> Mlp {
        Mlp {
            spec: self.spec.clone(),
            params: self.params.thawed_clone(),
        }
    }
}

/// Posterior parameters produced by a variational encoder.
pub struct EncoderOutput {
    pub mu: Var,
    pub logvar: Var,
}

/// Runs the encoder MLP and splits its output into mean and log-variance
/// halves. The log-variance half carries no activation.
pub fn encoder_forward(vars: &ParamVars, spec: &MlpSpec, x: &Var) -> Result<EncoderOutput> {
    let width = spec.out_dim();
    if !width.is_multiple_of(2) {
        return Err(Error::config(format!(
            "encoder output width must be even (mean and log-variance halves), got {width}"
        )));
    }
    let out = mlp_forward(vars, spec, x)?;
    let latent = width / 2;
    let mu = out.narrow(1, 0, latent)?;
    let logvar = out.narrow(1, latent, latent)?;
    Ok(EncoderOutput { mu, logvar })
}

/// Reparameterized draw `z = mu + exp(logvar / 2) * noise`, differentiable
/// with respect to both posterior parameters.
pub fn sample_latent(enc: &EncoderOutput, noise: &Var) -> Result<Var> {
    if noise.shape() != enc.mu.shape() {
        return Err(Error::ShapeMismatch {
            op: "sample_latent",
            lhs: enc.mu.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    let sigma = enc.logvar.mul_scalar(0.5).exp();
    enc.mu.add(&sigma.mul(noise)?)
}

/// Squared reconstruction error plus the KL divergence to a standard normal,
/// both averaged over the batch. Per sample, the reconstruction term sums
/// squared errors over features and the KL term sums
/// `0.5 * (mu^2 + sigma^2 - logvar - 1)` over latent dimensions, so the two
/// terms stay on comparable scales at any data dimension.
pub fn vae_loss(x: &Var, reconstruction: &Var, enc: &EncoderOutput) -> Result<Var> {
    if x.shape() != reconstruction.shape() {
        return Err(Error::ShapeMismatch {
            op: "vae_loss",
            lhs: x.shape().to_vec(),
            rhs: reconstruction.shape().to_vec(),
        });
    }
    let recon = reconstruction.sub(x)?.square().sum_axis(1)?.mean();
    let kl_per_sample = enc
        .mu
        .square()
        .add(&enc.logvar.exp())?
        .sub(&enc.logvar)?
        .add_scalar(-1.0)
        .sum_axis(1)?
        .mul_scalar(0.5);
    recon.add(&kl_per_sample.mean())
}

/// Adam hyperparameters. The stage-wise trainer uses `beta1 = 0`,
/// `beta2 = 0.99`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(alpha: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: step count plus first/second moments per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one Adam update with a scaling factor on the learning rate
    /// (1.0 for the plain step). Errors if `params` is frozen or `grads`
    /// misses any parameter.
    pub fn step_scaled(
        &mut self,
        params: &mut ModelParams,
        grads: &GradMap,
        lr_scale: f64,
    ) -> Result<()> {
        if params.frozen() {
            return Err(Error::Frozen(
                "cannot apply an optimizer step to frozen parameters".to_string(),
            ));
        }
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            if grads.get(name).is_none() {
                return Err(Error::MissingGrad(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powf(t);
        let bias2 = 1.0 - beta2.powf(t);
        for name in &names {
            let g = grads.get(name).unwrap();
            let current = params.get(name).unwrap().clone();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let mut updated = current.clone();
            {
                let md = m.data_mut();
                let vd = v.data_mut();
                let gd = g.data();
                let out = updated.data_mut();
                for i in 0..gd.len() {
                    md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                    vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                    let m_hat = md[i] / bias1;
                    let v_hat = vd[i] / bias2;
                    out[i] -= lr_scale * alpha * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
            params.set(name, updated)?;
        }
        Ok(())
    }
}

/// Standard Adam update with bias correction.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &GradMap) -> Result<()> {
    state.step_scaled(params, grads, 1.0)
}
