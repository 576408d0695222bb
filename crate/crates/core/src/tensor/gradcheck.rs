//! Finite-difference verification of tape gradients.
//!
//! The analytic side runs the closure on an `f32` tape and calls backward. The
//! numeric side re-evaluates the same closure on an `f64` tape with central
//! differences `(f(x+h) − f(x−h)) / 2h`, so rounding in the oracle stays far
//! below the tolerance being checked.

use super::rng::SeedRng;
use super::{Float, Result, Tape, Tensor, TensorError, Var};

/// A scalar-valued computation over tape inputs, evaluable at any precision.
pub trait ScalarFn {
    fn eval<T: Float>(&self, tape: &Tape<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol_rel: f64,
    /// Element indices to check per input; `None` checks every element.
    pub elements: Option<Vec<Vec<usize>>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            tol_rel: 1e-3,
            elements: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(mut self, tol_rel: f64) -> Self {
        self.tol_rel = tol_rel;
        self
    }

    /// Checks a seeded random `fraction` of all elements (at least `min_total`),
    /// spread across inputs in proportion to their size.
    pub fn subsample(mut self, sizes: &[usize], fraction: f64, min_total: usize, seed: u64) -> Self {
        let total: usize = sizes.iter().sum();
        let want = ((total as f64 * fraction).ceil() as usize).max(min_total).min(total);
        let mut flat: Vec<usize> = (0..total).collect();
        SeedRng::new(seed).shuffle(&mut flat);
        let mut picked = flat[..want].to_vec();
        picked.sort_unstable();
        let mut elements = vec![Vec::new(); sizes.len()];
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        for p in picked {
            let i = offsets.partition_point(|&o| o <= p) - 1;
            elements[i].push(p - offsets[i]);
        }
        self.elements = Some(elements);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub input: usize,
    pub checked: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol_rel: f64,
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.inputs.iter().all(|r| r.passed)
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn eval_f64<F: ScalarFn>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let tape = Tape::<f64>::new();
    let vars = inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f.eval(&tape, &vars)?;
    if tape.shape(out).iter().product::<usize>() != 1 {
        return Err(TensorError::Usage("grad_check closure must return a scalar".into()));
    }
    Ok(tape.item(out))
}

pub fn grad_check<F: ScalarFn>(
    f: &F,
    inputs: &[Tensor<f32>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let tape = Tape::<f32>::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f.eval(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut wide: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let all: Vec<usize>;
        let picks: &[usize] = match &opts.elements {
            Some(e) => &e[i],
            None => {
                all = (0..inputs[i].len()).collect();
                &all
            }
        };
        let mut report = InputReport {
            input: i,
            checked: picks.len(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
            passed: true,
        };
        for &j in picks {
            let orig = wide[i].data()[j];
            wide[i].data_mut()[j] = orig + opts.h;
            let fp = eval_f64(f, &wide)?;
            wide[i].data_mut()[j] = orig - opts.h;
            let fm = eval_f64(f, &wide)?;
            wide[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic.map_or(0.0, |g| g.data()[j] as f64);
            let err = relative_error(a, numeric);
            if err >= report.rel_error {
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
                report.rel_error = err;
            }
        }
        report.passed = report.rel_error <= opts.tol_rel;
        reports.push(report);
    }
    Ok(GradCheckReport {
        tol_rel: opts.tol_rel,
        inputs: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SumSquares;

    impl ScalarFn for SumSquares {
        fn eval<T: Float>(&self, tape: &Tape<T>, inputs: &[Var]) -> Result<Var> {
            let sq = tape.mul(inputs[0], inputs[0])?;
            tape.sum(sq)
        }
    }

    struct Broken;

    impl ScalarFn for Broken {
        // value is x^3 but the analytic path only sees x^2 on the f32 tape
        fn eval<T: Float>(&self, tape: &Tape<T>, inputs: &[Var]) -> Result<Var> {
            let sq = tape.mul(inputs[0], inputs[0])?;
            if std::mem::size_of::<T>() == 8 {
                let cube = tape.mul(sq, inputs[0])?;
                tape.sum(cube)
            } else {
                tape.sum(sq)
            }
        }
    }

    #[test]
    fn passes_on_correct_gradient() {
        let x = Tensor::new(&[3], vec![0.5f32, -1.0, 2.0]).unwrap();
        let r = grad_check(&SumSquares, &[x], &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.inputs[0].checked, 3);
    }

    #[test]
    fn flags_a_wrong_gradient() {
        let x = Tensor::new(&[2], vec![1.5f32, 2.0]).unwrap();
        let r = grad_check(&Broken, &[x], &GradCheckOptions::default()).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn subsample_respects_sizes() {
        let o = GradCheckOptions::default().subsample(&[10, 1000, 5], 0.01, 4, 3);
        let e = o.elements.unwrap();
        let n: usize = e.iter().map(|v| v.len()).sum();
        assert_eq!(n, 11);
        assert!(e[0].iter().all(|&i| i < 10));
        assert!(e[1].iter().all(|&i| i < 1000));
        assert!(e[2].iter().all(|&i| i < 5));
    }
}
