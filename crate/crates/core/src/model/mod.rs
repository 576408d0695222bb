//! Variational EEGNet models.
//!
//! `v1` has a single EEGNet encoder and a hidden-layer classifier. `v2` runs
//! several encoder stacks with different temporal kernels in parallel, joins
//! their features, and classifies linearly. Both share the mirrored decoder.

mod config;
mod io;
mod network;
mod params;

pub use config::{ModelConfig, Variant};
pub use io::{model_read, model_write, read_model_from, write_model_to};
pub use network::{bind_params, Mode, Network, Pass};
pub use params::{count_parameters, model_init, Layout, ModelParams, ParamCounts, ParamKind, ParamSpec, Part};

use crate::tensor::{Float, Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Gaussian posterior parameters and the two latent views.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T = f32> {
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
    /// Sample `mu + σ·ε`; unset until [`reparameterize`].
    pub z1: Option<Tensor<T>>,
}

impl<T: Float> LatentCode<T> {
    pub fn variance(&self) -> Tensor<T> {
        self.log_var.map(|v| v.exp())
    }

    /// `[mu, σ²]` concatenated along the feature axis.
    pub fn z2(&self) -> Tensor<T> {
        let (b, d) = (self.mu.shape()[0], self.mu.shape()[1]);
        let var = self.variance();
        let mut data = Vec::with_capacity(2 * b * d);
        for i in 0..b {
            data.extend_from_slice(&self.mu.data()[i * d..(i + 1) * d]);
            data.extend_from_slice(&var.data()[i * d..(i + 1) * d]);
        }
        Tensor::new(&[b, 2 * d], data).expect("z2 shape")
    }
}

/// Runs `f` on a fresh tape with `model`'s parameters bound.
///
/// Training mode writes updated batch-norm statistics back into `model`.
pub fn with_network<T: Float, R>(
    model: &mut ModelParams<T>,
    mode: Mode,
    f: impl FnOnce(&mut Network<'_, T>) -> Result<R>,
) -> Result<R> {
    let tape = Tape::<T>::new();
    let vars = bind_params(&tape, model)?;
    let layout = model.layout();
    let mut net = Network {
        tape: &tape,
        config: &model.config,
        layout: &layout,
        params: &vars,
        stats: &mut model.stats,
        mode,
    };
    f(&mut net)
}

fn encode_impl(model: &mut ModelParams, x: &Tensor, mode: Mode) -> Result<LatentCode> {
    with_network(model, mode, |n| {
        let xv = n.tape.constant(x.clone())?;
        let (mu, lv) = n.encode(xv)?;
        Ok(LatentCode {
            mu: n.tape.value(mu),
            log_var: n.tape.value(lv),
            z1: None,
        })
    })
}

/// Single-branch encoder. Training mode updates the batch-norm statistics.
pub fn encoder_forward(model: &mut ModelParams, x: &Tensor, mode: Mode) -> Result<LatentCode> {
    if model.variant() != Variant::V1 {
        return Err(ModelError::Config("encoder_forward needs a v1 model".into()));
    }
    encode_impl(model, x, mode)
}

/// Parallel-branch encoder of `v2`.
pub fn multibranch_encoder_forward(model: &mut ModelParams, x: &Tensor, mode: Mode) -> Result<LatentCode> {
    if model.variant() != Variant::V2 {
        return Err(ModelError::Config("multibranch_encoder_forward needs a v2 model".into()));
    }
    encode_impl(model, x, mode)
}

/// Encoder of whichever variant `model` is.
pub fn encode(model: &mut ModelParams, x: &Tensor, mode: Mode) -> Result<LatentCode> {
    encode_impl(model, x, mode)
}

/// Fills `z1 = mu + exp(log_var/2) ⊙ ε` with `ε ~ N(0, I)` drawn from `seed`.
pub fn reparameterize(code: &LatentCode, seed: u64) -> Result<LatentCode> {
    let tape = Tape::<f32>::new();
    let mu = tape.constant(code.mu.clone())?;
    let lv = tape.constant(code.log_var.clone())?;
    let eps = Tensor::<f32>::create(
        code.mu.shape(),
        crate::tensor::Init::Gaussian {
            mean: 0.0,
            std: 1.0,
            seed,
        },
    )?;
    let eps = tape.constant(eps)?;
    let z1 = tape.add(mu, tape.mul(tape.exp(tape.scale(lv, 0.5)?)?, eps)?)?;
    Ok(LatentCode {
        z1: Some(tape.value(z1)),
        ..code.clone()
    })
}

/// Standard normal noise `[n, d]` where row `i` depends only on `(seed, trials[i])`.
pub fn trial_noise(latent_dim: usize, trials: &[usize], seed: u64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(trials.len() * latent_dim);
    for &i in trials {
        let row = Tensor::<f32>::create(
            &[latent_dim],
            crate::tensor::Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                seed: crate::tensor::rng::split(seed, i as u64),
            },
        )?;
        data.extend_from_slice(row.data());
    }
    Ok(Tensor::new(&[trials.len(), latent_dim], data)?)
}

/// Inference-mode pass: latent code (with `z1` from `eps`), reconstruction, and log-probabilities.
pub fn infer(model: &mut ModelParams, x: &Tensor, eps: &Tensor) -> Result<(LatentCode, Tensor, Tensor)> {
    with_network(model, Mode::eval(), |n| {
        let xv = n.tape.constant(x.clone())?;
        let (mu, lv) = n.encode(xv)?;
        let z1 = n.reparameterize_with(mu, lv, eps.clone())?;
        let x_hat = n.decode(z1)?;
        let z2 = n.z2(mu, lv)?;
        let log_probs = n.classify(z2)?;
        let code = LatentCode {
            mu: n.tape.value(mu),
            log_var: n.tape.value(lv),
            z1: Some(n.tape.value(z1)),
        };
        Ok((code, n.tape.value(x_hat), n.tape.value(log_probs)))
    })
}

pub fn decoder_forward(model: &mut ModelParams, z1: &Tensor, mode: Mode) -> Result<Tensor> {
    with_network(model, mode, |n| {
        let z = n.tape.constant(z1.clone())?;
        let out = n.decode(z)?;
        Ok(n.tape.value(out))
    })
}

pub fn classifier_forward(model: &mut ModelParams, z2: &Tensor) -> Result<Tensor> {
    with_network(model, Mode::eval(), |n| {
        let z = n.tape.constant(z2.clone())?;
        let out = n.classify(z)?;
        Ok(n.tape.value(out))
    })
}
