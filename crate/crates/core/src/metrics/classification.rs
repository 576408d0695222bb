use super::{MetricsError, Result};

pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub accuracy: f64,
    pub kappa: f64,
}

/// `m[true][pred]` counts.
pub fn confusion_matrix(preds: &[u8], labels: &[u8]) -> Result<[[usize; N_CLASSES]; N_CLASSES]> {
    if preds.len() != labels.len() {
        return Err(MetricsError::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(MetricsError::Data("no trials".into()));
    }
    let mut m = [[0usize; N_CLASSES]; N_CLASSES];
    for (&p, &l) in preds.iter().zip(labels) {
        if p as usize >= N_CLASSES || l as usize >= N_CLASSES {
            return Err(MetricsError::Data(format!("class out of range: pred {p}, label {l}")));
        }
        m[l as usize][p as usize] += 1;
    }
    Ok(m)
}

/// Accuracy and Cohen's κ = (p_o − p_e)/(1 − p_e).
pub fn classification_metrics(preds: &[u8], labels: &[u8]) -> Result<Agreement> {
    let m = confusion_matrix(preds, labels)?;
    let n = preds.len();
    let correct: usize = (0..N_CLASSES).map(|k| m[k][k]).sum();
    let accuracy = correct as f64 / n as f64;
    let p_o = accuracy;
    let nn = (n * n) as f64;
    let p_e: f64 = (0..N_CLASSES)
        .map(|k| {
            let row: usize = m[k].iter().sum();
            let col: usize = m.iter().map(|r| r[k]).sum();
            (row * col) as f64 / nn
        })
        .sum();
    if p_e == 1.0 {
        return Err(MetricsError::DegenerateDistribution(
            "chance agreement is 1 (single class in both predictions and labels)".into(),
        ));
    }
    Ok(Agreement {
        accuracy,
        kappa: (p_o - p_e) / (1.0 - p_e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement() {
        let a = classification_metrics(&[0, 1, 2, 3, 1], &[0, 1, 2, 3, 1]).unwrap();
        assert_eq!(a.accuracy, 1.0);
        assert_eq!(a.kappa, 1.0);
    }

    #[test]
    fn constant_predictor_is_chance() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let a = classification_metrics(&[2; 8], &labels).unwrap();
        assert_eq!(a.accuracy, 0.25);
        assert_eq!(a.kappa, 0.0);
    }

    #[test]
    fn hand_example() {
        let a = classification_metrics(&[0, 0, 1, 1, 1], &[0, 0, 1, 1, 0]).unwrap();
        assert!((a.accuracy - 0.8).abs() < 1e-12);
        assert!((a.kappa - 8.0 / 13.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(classification_metrics(&[], &[]), Err(MetricsError::Data(_))));
        assert!(classification_metrics(&[0], &[0, 1]).is_err());
        assert!(classification_metrics(&[4], &[0]).is_err());
        assert!(matches!(
            classification_metrics(&[2, 2], &[2, 2]),
            Err(MetricsError::DegenerateDistribution(_))
        ));
    }
}
