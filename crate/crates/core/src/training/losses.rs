use super::{Result, TrainError};
use crate::model::LatentCode;
use crate::tensor::{Float, Tape, Tensor, Var};
use serde::Serialize;

/// Loss values of one evaluation. `l_total` is `(l_r + l_kl) + l_clf` summed in f32.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_kl: f64,
    pub l_clf: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// Re-adds the parts exactly the way the graph does.
    pub fn recompose(&self) -> f64 {
        ((self.l_r as f32 + self.l_kl as f32) + self.l_clf as f32) as f64
    }
}

/// Loss nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_r: Var,
    pub l_kl: Var,
    pub l_clf: Var,
    pub l_total: Var,
}

/// `½ Σ_d (exp(log_var) + mu² − 1 − log_var)`, averaged over the batch.
pub fn kl_graph<T: Float>(tape: &Tape<T>, mu: Var, log_var: Var) -> Result<Var> {
    let b = tape.shape(mu)[0];
    let s = tape.add(tape.exp(log_var)?, tape.mul(mu, mu)?)?;
    let s = tape.add_scalar(tape.sub(s, log_var)?, -1.0)?;
    Ok(tape.scale(tape.sum(s)?, 0.5 / b as f64)?)
}

/// Reconstruction MSE, KL, and negative log-likelihood of the true labels.
#[allow(clippy::too_many_arguments)]
pub fn loss_graph<T: Float>(
    tape: &Tape<T>,
    x: Var,
    x_hat: Var,
    log_probs: Var,
    labels: &[u8],
    mu: Var,
    log_var: Var,
) -> Result<LossVars> {
    if tape.shape(x) != tape.shape(x_hat) {
        return Err(TrainError::Data(format!(
            "reconstruction shape {:?} differs from input {:?}",
            tape.shape(x_hat),
            tape.shape(x)
        )));
    }
    let classes = tape.shape(log_probs)[1];
    if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(TrainError::Data(format!("label {l} outside 0..{classes}")));
    }
    let d = tape.sub(x, x_hat)?;
    let l_r = tape.mean(tape.mul(d, d)?)?;
    let l_kl = kl_graph(tape, mu, log_var)?;
    let idx: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let picked = tape.gather(log_probs, &idx)?;
    let l_clf = tape.scale(tape.mean(picked)?, -1.0)?;
    let l_total = tape.add(tape.add(l_r, l_kl)?, l_clf)?;
    Ok(LossVars {
        l_r,
        l_kl,
        l_clf,
        l_total,
    })
}

impl LossVars {
    pub fn read<T: Float>(&self, tape: &Tape<T>) -> LossBreakdown {
        LossBreakdown {
            l_r: tape.item(self.l_r).as_f64(),
            l_kl: tape.item(self.l_kl).as_f64(),
            l_clf: tape.item(self.l_clf).as_f64(),
            l_total: tape.item(self.l_total).as_f64(),
        }
    }
}

/// Closed-form KL to the standard normal prior, in f64.
pub fn kl_divergence(mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    if mu.shape() != log_var.shape() || mu.shape().len() != 2 {
        return Err(TrainError::Data(format!(
            "mu {:?} and log_var {:?} must be equal [B, d]",
            mu.shape(),
            log_var.shape()
        )));
    }
    let b = mu.shape()[0] as f64;
    let s: f64 = mu
        .data()
        .iter()
        .zip(log_var.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            lv.exp() + m * m - 1.0 - lv
        })
        .sum();
    Ok(0.5 * s / b)
}

/// Evaluates all losses for given model outputs.
pub fn compute_losses(
    x: &Tensor,
    x_hat: &Tensor,
    log_probs: &Tensor,
    labels: &[u8],
    code: &LatentCode,
) -> Result<LossBreakdown> {
    let tape = Tape::<f32>::new();
    let c = |t: &Tensor| tape.constant(t.clone());
    let vars = loss_graph(
        &tape,
        c(x)?,
        c(x_hat)?,
        c(log_probs)?,
        labels,
        c(&code.mu)?,
        c(&code.log_var)?,
    )?;
    Ok(vars.read(&tape))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f32>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_divergence(&t(&[1, 3], vec![0.0; 3]), &t(&[1, 3], vec![0.0; 3])).unwrap(), 0.0);
        assert!((kl_divergence(&t(&[1, 1], vec![1.0]), &t(&[1, 1], vec![0.0])).unwrap() - 0.5).abs() < 1e-12);
        let e = std::f64::consts::E;
        let k = kl_divergence(&t(&[1, 2], vec![0.0, 0.0]), &t(&[1, 2], vec![1.0, 1.0])).unwrap();
        assert!((k - (e - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn breakdown_examples() {
        let x = t(&[2, 1, 1, 3], vec![0.5; 6]);
        let uniform = t(&[2, 4], vec![(0.25f32).ln(); 8]);
        let code = LatentCode {
            mu: t(&[2, 2], vec![0.0; 4]),
            log_var: t(&[2, 2], vec![0.0; 4]),
            z1: None,
        };
        let l = compute_losses(&x, &x, &uniform, &[0, 3], &code).unwrap();
        assert_eq!((l.l_r, l.l_kl), (0.0, 0.0));
        assert!((l.l_clf - 4f64.ln()).abs() < 1e-6);
        assert_eq!(l.l_total, l.recompose());

        let zeros = t(&[2, 1, 1, 3], vec![0.0; 6]);
        let ones = t(&[2, 1, 1, 3], vec![1.0; 6]);
        assert_eq!(compute_losses(&zeros, &ones, &uniform, &[1, 1], &code).unwrap().l_r, 1.0);

        let onehot = t(&[2, 4], vec![0.0, -50.0, -50.0, -50.0, -50.0, -50.0, 0.0, -50.0]);
        assert_eq!(compute_losses(&x, &x, &onehot, &[0, 2], &code).unwrap().l_clf, 0.0);

        assert!(matches!(
            compute_losses(&x, &x, &uniform, &[0, 4], &code),
            Err(TrainError::Data(_))
        ));
    }
}
