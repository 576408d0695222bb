use super::{MetricsError, Result};
use serde::Serialize;

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub subject: String,
    pub avg: f64,
    pub std: f64,
}

/// Per-subject rows plus the closing AVG and STD rows.
///
/// The AVG row is the mean of subject averages and the STD row is the mean of
/// subject standard deviations, the layout of the published reconstruction tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseTable {
    pub rows: Vec<MseRow>,
    pub avg: f64,
    pub std: f64,
}

impl MseTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("subject\tAVG\tSTD\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{:.4}\t{:.4}\n", r.subject, r.avg, r.std));
        }
        s.push_str(&format!("AVG\t{:.4}\nSTD\t{:.4}\n", self.avg, self.std));
        s
    }
}

pub fn reconstruction_mse_table(subjects: &[(String, Vec<f64>)]) -> Result<MseTable> {
    if subjects.is_empty() {
        return Err(MetricsError::Data("no subjects".into()));
    }
    let rows = subjects
        .iter()
        .map(|(name, mse)| {
            if mse.is_empty() {
                return Err(MetricsError::Data(format!("subject {name} has no trials")));
            }
            let (avg, std) = mean_std(mse);
            Ok(MseRow {
                subject: name.clone(),
                avg,
                std,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(MseTable {
        avg: rows.iter().map(|r| r.avg).sum::<f64>() / n,
        std: rows.iter().map(|r| r.std).sum::<f64>() / n,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_subject() {
        let t = reconstruction_mse_table(&[("1".into(), vec![1.0, 1.0, 1.0])]).unwrap();
        assert_eq!((t.rows[0].avg, t.rows[0].std), (1.0, 0.0));
    }

    #[test]
    fn grand_average_of_averages() {
        let t = reconstruction_mse_table(&[("a".into(), vec![1.0, 3.0]), ("b".into(), vec![4.0])]).unwrap();
        assert_eq!(t.avg, 3.0);
        assert_eq!(t.std, 0.5);
    }

    #[test]
    fn empty_subject_rejected() {
        assert!(reconstruction_mse_table(&[("a".into(), vec![])]).is_err());
        assert!(reconstruction_mse_table(&[]).is_err());
    }
}
