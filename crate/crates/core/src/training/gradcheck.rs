use super::losses::loss_graph;
use super::Result;
use crate::model::{Mode, ModelParams, Network};
use crate::tensor::{grad_check, Float, GradCheckOptions, GradCheckReport, Init, Tape, Tensor, TensorError, Var};

/// `L_total` of a fixed batch as a function of every model parameter.
///
/// Batch norm runs in training mode on copies of the stored statistics, dropout
/// masks come from `seed`, and the reparameterization noise is fixed.
pub struct LossFn<'a> {
    pub model: &'a ModelParams,
    pub x: Tensor,
    pub eps: Tensor,
    pub labels: Vec<u8>,
    pub seed: u64,
}

impl crate::tensor::ScalarFn for LossFn<'_> {
    fn eval<T: Float>(&self, tape: &Tape<T>, inputs: &[Var]) -> crate::tensor::Result<Var> {
        let wrap = |e: String| TensorError::Usage(e);
        let mut stats = self.model.cast::<T>().stats;
        let layout = self.model.layout();
        let mut net = Network {
            tape,
            config: &self.model.config,
            layout: &layout,
            params: inputs,
            stats: &mut stats,
            mode: Mode::train(self.seed),
        };
        let x = tape.constant(self.x.cast())?;
        let (mu, lv) = net.encode(x).map_err(|e| wrap(e.to_string()))?;
        let z1 = net.reparameterize_with(mu, lv, self.eps.cast()).map_err(|e| wrap(e.to_string()))?;
        let x_hat = net.decode(z1).map_err(|e| wrap(e.to_string()))?;
        let z2 = net.z2(mu, lv).map_err(|e| wrap(e.to_string()))?;
        let lp = net.classify(z2).map_err(|e| wrap(e.to_string()))?;
        let l = loss_graph(tape, x, x_hat, lp, &self.labels, mu, lv).map_err(|e| wrap(e.to_string()))?;
        Ok(l.l_total)
    }
}

/// Checks `∂L_total/∂θ` on a seeded subsample of parameters, using a random
/// batch of `batch` trials shaped for `model`.
pub fn end_to_end_grad_check(
    model: &ModelParams,
    batch: usize,
    fraction: f64,
    min_total: usize,
    tol_rel: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    use crate::tensor::rng::split;
    let c = &model.config;
    let x = Tensor::create(
        &[batch, 1, c.channels, c.samples],
        Init::Uniform {
            low: -1.0,
            high: 1.0,
            seed: split(seed, 1),
        },
    )?;
    let eps = Tensor::create(
        &[batch, c.latent_dim],
        Init::Gaussian {
            mean: 0.0,
            std: 1.0,
            seed: split(seed, 2),
        },
    )?;
    let labels = (0..batch).map(|i| (i % c.n_classes) as u8).collect();
    let f = LossFn {
        model,
        x,
        eps,
        labels,
        seed: split(seed, 3),
    };
    let sizes: Vec<usize> = model.tensors.iter().map(|t| t.len()).collect();
    let opts = GradCheckOptions::default()
        .with_tol(tol_rel)
        .subsample(&sizes, fraction, min_total, split(seed, 4));
    Ok(grad_check(&f, &model.tensors, &opts)?)
}
