use super::{Layout, ModelConfig, ModelParams, Result};
use crate::tensor::rng::{split, split_path};
use crate::tensor::{Conv2dSpec, Float, Init, RunningStats, Tape, Tensor, Var};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const ELU_ALPHA: f64 = 1.0;

/// Dropout and batch-norm behavior plus the seed for every stochastic draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub training: bool,
    pub seed: u64,
}

impl Mode {
    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            seed,
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            seed: 0,
        }
    }
}

/// Dropout sites, used to derive independent mask seeds.
#[derive(Clone, Copy)]
enum Site {
    EncBlock1 = 1,
    EncBlock2 = 2,
    Decoder = 3,
}

/// The model graph bound to one tape.
///
/// `params` holds one tape variable per trainable tensor in canonical order;
/// `stats` is the batch-norm state that training mode updates in place.
pub struct Network<'a, T: Float> {
    pub tape: &'a Tape<T>,
    pub config: &'a ModelConfig,
    pub layout: &'a Layout,
    pub params: &'a [Var],
    pub stats: &'a mut [RunningStats<T>],
    pub mode: Mode,
}

/// Records every tensor of `model` on `tape` as a differentiable leaf.
pub fn bind_params<T: Float>(tape: &Tape<T>, model: &ModelParams<T>) -> Result<Vec<Var>> {
    Ok(model
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<crate::tensor::Result<Vec<_>>>()?)
}

impl<T: Float> Network<'_, T> {
    fn p(&self, name: &str) -> Var {
        self.params[self.layout.param(name)]
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        let i = self.layout.norm(name);
        Ok(self.tape.batch_norm2d(
            x,
            self.p(&format!("{name}.gamma")),
            self.p(&format!("{name}.beta")),
            &mut self.stats[i],
            self.mode.training,
            BN_EPS,
            BN_MOMENTUM,
        )?)
    }

    fn dropout(&self, x: Var, branch: usize, site: Site) -> Result<Var> {
        let seed = split_path(self.mode.seed, &[branch as u64, site as u64]);
        Ok(self.tape.dropout(x, self.config.dropout, self.mode.training, seed)?)
    }

    fn check_input(&self, x: Var) -> Result<()> {
        let s = self.tape.shape(x);
        let c = self.config;
        if s.len() != 4 || s[1] != 1 || s[2] != c.channels || s[3] != c.samples {
            return Err(super::ModelError::Shape(format!(
                "encoder input must be [B, 1, {}, {}], got {s:?}",
                c.channels, c.samples
            )));
        }
        Ok(())
    }

    /// One EEGNet stack, returning its flattened `[B, f2·T]` features.
    fn branch(&mut self, x: Var, i: usize) -> Result<Var> {
        let (t, c) = (self.tape, self.config);
        let f1d = c.f1 * c.depth_mult;
        let kt = c.temporal_kernels[i];
        let p = format!("enc{i}");
        let h = t.conv2d(x, self.p(&format!("{p}.temporal.weight")), Conv2dSpec::same(1, kt))?;
        let h = self.bn(h, &format!("{p}.bn1"))?;
        let h = t.conv2d(
            h,
            self.p(&format!("{p}.spatial.weight")),
            Conv2dSpec::default().with_groups(c.f1),
        )?;
        let h = self.bn(h, &format!("{p}.bn2"))?;
        let h = t.elu(h, ELU_ALPHA)?;
        let h = t.avg_pool2d(h, (1, c.pool1))?;
        let h = self.dropout(h, i, Site::EncBlock1)?;
        let h = t.conv2d(
            h,
            self.p(&format!("{p}.sep_depthwise.weight")),
            Conv2dSpec::same(1, c.separable_kernel).with_groups(f1d),
        )?;
        let h = t.conv2d(h, self.p(&format!("{p}.sep_pointwise.weight")), Conv2dSpec::default())?;
        let h = self.bn(h, &format!("{p}.bn3"))?;
        let h = t.elu(h, ELU_ALPHA)?;
        let h = t.avg_pool2d(h, (1, c.pool2))?;
        let h = self.dropout(h, i, Site::EncBlock2)?;
        let b = t.shape(h)[0];
        Ok(t.reshape(h, &[b, c.flatten_width()])?)
    }

    /// `x: [B,1,C,S]` → `(mu, log_var)`, each `[B, d]`.
    pub fn encode(&mut self, x: Var) -> Result<(Var, Var)> {
        self.check_input(x)?;
        let feats = (0..self.config.branches())
            .map(|i| self.branch(x, i))
            .collect::<Result<Vec<_>>>()?;
        let t = self.tape;
        let flat = if feats.len() == 1 { feats[0] } else { t.concat(&feats, 1)? };
        let out = t.linear(flat, self.p("enc.fc.weight"), self.p("enc.fc.bias"))?;
        let d = self.config.latent_dim;
        Ok((t.narrow(out, 1, 0, d)?, t.narrow(out, 1, d, d)?))
    }

    /// `z1 = mu + exp(log_var / 2) ⊙ ε` with `ε` drawn from `seed`.
    pub fn reparameterize(&self, mu: Var, log_var: Var, seed: u64) -> Result<Var> {
        let eps = Tensor::<T>::create(
            &self.tape.shape(mu),
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                seed,
            },
        )?;
        self.reparameterize_with(mu, log_var, eps)
    }

    /// Same as [`Self::reparameterize`] with caller-supplied noise `eps`.
    pub fn reparameterize_with(&self, mu: Var, log_var: Var, eps: Tensor<T>) -> Result<Var> {
        let t = self.tape;
        let eps = t.constant(eps)?;
        let sigma = t.exp(t.scale(log_var, 0.5)?)?;
        Ok(t.add(mu, t.mul(sigma, eps)?)?)
    }

    /// `z1: [B, d]` → reconstruction `[B,1,C,S]`.
    pub fn decode(&mut self, z1: Var) -> Result<Var> {
        let (t, c) = (self.tape, self.config);
        let s = t.shape(z1);
        if s.len() != 2 || s[1] != c.latent_dim {
            return Err(super::ModelError::Shape(format!(
                "decoder input must be [B, {}], got {s:?}",
                c.latent_dim
            )));
        }
        let b = s[0];
        let f1d = c.f1 * c.depth_mult;
        let h = t.linear(z1, self.p("dec.fc.weight"), self.p("dec.fc.bias"))?;
        let h = t.reshape(h, &[b, c.f2, 1, c.pooled_len()])?;
        let h = t.upsample_nearest(h, (1, c.pool2))?;
        let h = t.conv_transpose2d(h, self.p("dec.sep_pointwise.weight"), Conv2dSpec::default())?;
        let h = t.conv_transpose2d(
            h,
            self.p("dec.sep_depthwise.weight"),
            Conv2dSpec::same(1, c.separable_kernel).with_groups(f1d),
        )?;
        let h = self.bn(h, "dec.bn1")?;
        let h = t.elu(h, ELU_ALPHA)?;
        let h = self.dropout(h, 0, Site::Decoder)?;
        let h = t.upsample_nearest(h, (1, c.pool1))?;
        let h = t.conv_transpose2d(
            h,
            self.p("dec.spatial.weight"),
            Conv2dSpec::default().with_groups(c.f1),
        )?;
        let h = self.bn(h, "dec.bn2")?;
        let h = t.elu(h, ELU_ALPHA)?;
        Ok(t.conv_transpose2d(
            h,
            self.p("dec.temporal.weight"),
            Conv2dSpec::same(1, c.decoder_temporal_kernel),
        )?)
    }

    /// `z2 = [mu, exp(log_var)]`.
    pub fn z2(&self, mu: Var, log_var: Var) -> Result<Var> {
        let t = self.tape;
        Ok(t.concat(&[mu, t.exp(log_var)?], 1)?)
    }

    /// `z2: [B, 2d]` → log-probabilities `[B, n_classes]`.
    pub fn classify(&mut self, z2: Var) -> Result<Var> {
        let (t, c) = (self.tape, self.config);
        let s = t.shape(z2);
        if s.len() != 2 || s[1] != 2 * c.latent_dim {
            return Err(super::ModelError::Shape(format!(
                "classifier input must be [B, {}], got {s:?}",
                2 * c.latent_dim
            )));
        }
        let mut h = z2;
        if c.classifier_hidden.is_some() {
            h = t.linear(h, self.p("clf.hidden.weight"), self.p("clf.hidden.bias"))?;
            h = t.elu(h, ELU_ALPHA)?;
        }
        let logits = t.linear(h, self.p("clf.out.weight"), self.p("clf.out.bias"))?;
        Ok(t.log_softmax(logits, 1)?)
    }
}

/// Outputs of one full pass.
pub struct Pass {
    pub mu: Var,
    pub log_var: Var,
    pub z1: Var,
    pub x_hat: Var,
    pub log_probs: Var,
}

impl<T: Float> Network<'_, T> {
    /// Encoder, sampled decoder path, and classifier on the deterministic code.
    pub fn full(&mut self, x: Var) -> Result<Pass> {
        let (mu, log_var) = self.encode(x)?;
        let z1 = self.reparameterize(mu, log_var, split(self.mode.seed, 0x5a))?;
        let x_hat = self.decode(z1)?;
        let z2 = self.z2(mu, log_var)?;
        let log_probs = self.classify(z2)?;
        Ok(Pass {
            mu,
            log_var,
            z1,
            x_hat,
            log_probs,
        })
    }
}
