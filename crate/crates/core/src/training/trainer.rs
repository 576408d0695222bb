use super::losses::{loss_graph, LossBreakdown};
use super::optim::{adamw_step, AdamHyper, AdamWState, Slot};
use super::{Result, TrainError};
use crate::metrics::{
    band_fidelity, classification_metrics, mean_std, BandFidelity, MetricsError, MetricsReport,
};
use crate::model::{infer, trial_noise, with_network, Layout, Mode, ModelParams, Variant};
use crate::signal::{ChannelRef, EpochedDataset, SynthConfig, EPOCH_SAMPLES};
use crate::tensor::rng::{split, split_path, SeedRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 32,
            seed: 0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Epoch means of every loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_r: f64,
    pub l_kl: f64,
    pub l_clf: f64,
    pub l_total: f64,
}

impl EpochLosses {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("losses serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochLosses>,
    pub warnings: Vec<String>,
}

impl History {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs.iter().map(|e| e.to_json() + "\n").collect()
    }
}

/// Trials as a flat `[n, 1, channels, samples]` array with labels.
pub struct TrialSet<'a> {
    pub data: &'a [f32],
    pub labels: &'a [u8],
    pub channels: usize,
    pub samples: usize,
}

impl<'a> TrialSet<'a> {
    pub fn from_dataset(d: &'a EpochedDataset) -> Self {
        Self {
            data: &d.data,
            labels: &d.labels,
            channels: crate::signal::N_CHANNELS,
            samples: EPOCH_SAMPLES,
        }
    }

    fn trial_len(&self) -> usize {
        self.channels * self.samples
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        let n = self.trial_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        let x = Tensor::new(&[idx.len(), 1, self.channels, self.samples], data)
            .map_err(crate::model::ModelError::from)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }

    fn check(&self, model: &ModelParams) -> Result<()> {
        let c = &model.config;
        if c.channels != self.channels || c.samples != self.samples {
            return Err(TrainError::Config(format!(
                "model expects {}x{} trials, data has {}x{}",
                c.channels, c.samples, self.channels, self.samples
            )));
        }
        if self.labels.is_empty() || self.data.len() != self.labels.len() * self.trial_len() {
            return Err(TrainError::Data("empty or inconsistent trial set".into()));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l as usize >= c.n_classes) {
            return Err(TrainError::Data(format!("label {l} outside 0..{}", c.n_classes)));
        }
        Ok(())
    }
}

/// Joint training on an epoch dataset. See [`train_trials`].
pub fn train(
    model: &mut ModelParams,
    data: &EpochedDataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLosses),
) -> Result<History> {
    let mut warnings = Vec::new();
    if model.variant() == Variant::V2 && !data.is_normalized() {
        warnings.push("training v2 on a dataset that is not min-max normalized".to_string());
    }
    let mut h = train_trials(model, &TrialSet::from_dataset(data), cfg, on_epoch)?;
    h.warnings.splice(0..0, warnings);
    Ok(h)
}

/// Mini-batch AdamW on `L_total`; the step seed for epoch `e`, batch `s` is `split_path(seed, [e, s])`.
pub fn train_trials(
    model: &mut ModelParams,
    set: &TrialSet<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLosses),
) -> Result<History> {
    cfg.validate()?;
    model.config.validate()?;
    set.check(model)?;
    let layout: Layout = model.layout();
    let hyper = cfg.hyper();
    let mut state = AdamWState::new(&model.tensors);
    let mut history = History::default();
    let n = set.labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order = (0..n).collect();
            SeedRng::new(split(cfg.seed, epoch as u64)).shuffle(&mut order);
        }
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = set.batch(idx)?;
            let mode = Mode::train(split_path(cfg.seed, &[epoch as u64, step as u64]));
            let (losses, grads) = with_network(model, mode, |net| {
                let xv = net.tape.constant(x)?;
                let pass = net.full(xv)?;
                let lv = loss_graph(net.tape, xv, pass.x_hat, pass.log_probs, &labels, pass.mu, pass.log_var)
                    .map_err(|e| crate::model::ModelError::Config(e.to_string()))?;
                let losses = lv.read(net.tape);
                let mut g = net.tape.backward(lv.l_total)?;
                let grads = net
                    .params
                    .iter()
                    .map(|&v| g.take(v).ok_or_else(|| crate::model::ModelError::Config("missing gradient".into())))
                    .collect::<crate::model::Result<Vec<_>>>()?;
                Ok((losses, grads))
            })?;
            let mut slots: Vec<Slot<'_>> = model
                .tensors
                .iter_mut()
                .zip(&grads)
                .zip(&layout.params)
                .map(|((param, grad), spec)| Slot {
                    param,
                    grad,
                    name: &spec.name,
                    decay: spec.decays(),
                })
                .collect();
            adamw_step(&mut slots, &mut state, &hyper)?;
            sums[0] += losses.l_r;
            sums[1] += losses.l_kl;
            sums[2] += losses.l_clf;
            batches += 1;
        }
        let k = batches as f64;
        let (l_r, l_kl, l_clf) = (sums[0] / k, sums[1] / k, sums[2] / k);
        let e = EpochLosses {
            epoch: epoch + 1,
            l_r,
            l_kl,
            l_clf,
            l_total: l_r + l_kl + l_clf,
        };
        on_epoch(&e);
        history.epochs.push(e);
    }
    Ok(history)
}

/// Evaluation settings: noise seed, batch size, per-class target channels, and bands.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub batch_size: usize,
    pub targets: [ChannelRef; 4],
    pub bands: Vec<(String, (f64, f64))>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0x0e7a1,
            batch_size: 32,
            targets: SynthConfig::default().target_channels,
            bands: vec![
                ("0.5-4Hz".into(), (0.5, 4.0)),
                ("5-20Hz".into(), (5.0, 20.0)),
            ],
        }
    }
}

/// Per-trial outputs of an inference pass.
pub struct Reconstructions {
    pub x_hat: Vec<f32>,
    pub predictions: Vec<u8>,
}

/// Inference-mode pass over every trial with trial-indexed decoder noise.
pub fn reconstruct_all(model: &mut ModelParams, set: &TrialSet<'_>, opts: &EvalOptions) -> Result<Reconstructions> {
    set.check(model)?;
    let n = set.labels.len();
    let mut x_hat = Vec::with_capacity(set.data.len());
    let mut predictions = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for idx in all.chunks(opts.batch_size.max(1)) {
        let (x, _) = set.batch(idx)?;
        let eps = trial_noise(model.config.latent_dim, idx, opts.seed)?;
        let (_, xh, lp) = infer(model, &x, &eps)?;
        x_hat.extend_from_slice(xh.data());
        let k = lp.shape()[1];
        for row in lp.data().chunks(k) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            predictions.push(best as u8);
        }
    }
    Ok(Reconstructions { x_hat, predictions })
}

/// Accuracy, κ, reconstruction MSE, and band fidelity on each trial's target channel.
///
/// Trials whose band-limited target signal has zero variance are left out of
/// that band's averages; `n_trials` on each band records how many remained.
pub fn evaluate(model: &mut ModelParams, data: &EpochedDataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let set = TrialSet::from_dataset(data);
    let rec = reconstruct_all(model, &set, opts)?;
    let agreement = classification_metrics(&rec.predictions, &data.labels);
    let (accuracy, kappa) = match agreement {
        Ok(a) => (a.accuracy, Some(a.kappa)),
        Err(MetricsError::DegenerateDistribution(_)) => {
            let correct = rec.predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
            (correct as f64 / data.n_trials() as f64, None)
        }
        Err(e) => return Err(e.into()),
    };
    let tl = EpochedDataset::TRIAL_LEN;
    let per_trial_mse: Vec<f64> = (0..data.n_trials())
        .map(|i| {
            let (a, b) = (data.trial(i), &rec.x_hat[i * tl..(i + 1) * tl]);
            a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / tl as f64
        })
        .collect();
    let (mse_avg, mse_std) = mean_std(&per_trial_mse);
    let mut band_fidelity_out = Vec::new();
    for (name, band) in &opts.bands {
        let (mut r, mut e, mut k) = (0.0, 0.0, 0usize);
        for i in 0..data.n_trials() {
            let target = opts.targets[data.labels[i] as usize];
            let x = target.trace(data.trial(i), EPOCH_SAMPLES);
            let y = target.trace(&rec.x_hat[i * tl..(i + 1) * tl], EPOCH_SAMPLES);
            match band_fidelity(&x, &y, *band) {
                Ok(f) => {
                    r += f.pearson_r;
                    e += f.energy_ratio;
                    k += 1;
                }
                Err(MetricsError::DegenerateSignal(_)) => {}
                Err(err) => return Err(err.into()),
            }
        }
        band_fidelity_out.push(BandFidelity {
            band: name.clone(),
            lo: band.0,
            hi: band.1,
            pearson_r: r / k as f64,
            energy_ratio: e / k as f64,
            n_trials: k,
        });
    }
    Ok(MetricsReport {
        n_trials: data.n_trials(),
        accuracy,
        kappa,
        mse_avg,
        mse_std,
        per_trial_mse,
        band_fidelity: band_fidelity_out,
        predictions: rec.predictions,
        config: None,
    })
}

/// Losses of one batch in inference mode with fixed noise, for diagnostics.
pub fn batch_losses(model: &mut ModelParams, x: &Tensor, labels: &[u8], eps: &Tensor) -> Result<LossBreakdown> {
    let (code, x_hat, lp) = infer(model, x, eps)?;
    super::losses::compute_losses(x, &x_hat, &lp, labels, &code)
}
