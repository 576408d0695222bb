//! Finite-difference battery over every differentiable layer primitive.

use super::gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ScalarFn};
use super::rng::split;
use super::{Conv2dSpec, Float, Init, Padding2d, Result, RunningStats, Tape, Tensor, Var};

/// One op evaluated on one input configuration.
#[derive(Debug, Clone)]
pub struct BatteryEntry {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone)]
enum Probe {
    Linear,
    Conv(Conv2dSpec),
    ConvTranspose(Conv2dSpec),
    AvgPool(usize),
    Upsample(usize),
    BatchNorm,
    Dropout { p: f64, seed: u64 },
    Elu,
    LogSoftmax(usize),
    Exp,
    Mul,
    Concat(usize),
    Narrow { axis: usize, start: usize, len: usize },
    Gather(Vec<usize>),
    Mean,
}

/// `Σ probe(inputs) ⊙ r` with a fixed random `r`, so no gradient is trivially zero.
struct Weighted {
    probe: Probe,
    seed: u64,
}

impl ScalarFn for Weighted {
    fn eval<T: Float>(&self, tape: &Tape<T>, x: &[Var]) -> Result<Var> {
        let y = match &self.probe {
            Probe::Linear => tape.linear(x[0], x[1], x[2])?,
            Probe::Conv(s) => tape.conv2d(x[0], x[1], *s)?,
            Probe::ConvTranspose(s) => tape.conv_transpose2d(x[0], x[1], *s)?,
            Probe::AvgPool(k) => tape.avg_pool2d(x[0], (1, *k))?,
            Probe::Upsample(k) => tape.upsample_nearest(x[0], (1, *k))?,
            Probe::BatchNorm => {
                let c = tape.shape(x[0])[1];
                let mut stats = RunningStats::new(c);
                tape.batch_norm2d(x[0], x[1], x[2], &mut stats, true, 1e-5, 0.1)?
            }
            Probe::Dropout { p, seed } => tape.dropout(x[0], *p, true, *seed)?,
            Probe::Elu => tape.elu(x[0], 1.0)?,
            Probe::LogSoftmax(axis) => tape.log_softmax(x[0], *axis)?,
            Probe::Exp => tape.exp(x[0])?,
            Probe::Mul => tape.mul(x[0], x[1])?,
            Probe::Concat(axis) => tape.concat(x, *axis)?,
            Probe::Narrow { axis, start, len } => tape.narrow(x[0], *axis, *start, *len)?,
            Probe::Gather(idx) => tape.gather(x[0], idx)?,
            Probe::Mean => return tape.mean(x[0]),
        };
        let shape = tape.shape(y);
        let r = Tensor::<T>::create(
            &shape,
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                seed: self.seed,
            },
        )?;
        let r = tape.constant(r)?;
        let w = tape.mul(y, r)?;
        tape.sum(w)
    }
}

fn gaussian(shape: &[usize], seed: u64) -> Result<Tensor<f32>> {
    Tensor::create(
        shape,
        Init::Gaussian {
            mean: 0.0,
            std: 1.0,
            seed,
        },
    )
}

/// Gaussian values pushed at least `gap` away from zero.
fn away_from_zero(shape: &[usize], seed: u64, gap: f32) -> Result<Tensor<f32>> {
    Ok(gaussian(shape, seed)?.map(|v| if v >= 0.0 { v + gap } else { v - gap }))
}

struct Case {
    name: String,
    probe: Probe,
    inputs: Vec<Tensor<f32>>,
}

fn cases(seed: u64) -> Result<Vec<Case>> {
    let mut key = 0u64;
    let mut g = |shape: &[usize]| {
        key += 1;
        gaussian(shape, split(seed, key))
    };
    let mut out = Vec::new();
    let mut add = |name: &str, probe: Probe, inputs: Vec<Tensor<f32>>| {
        out.push(Case {
            name: name.to_string(),
            probe,
            inputs,
        })
    };

    for (b, n, m) in [(4, 3, 2), (2, 5, 3), (3, 1, 4)] {
        add(
            &format!("linear x[{b},{n}] w[{n},{m}]"),
            Probe::Linear,
            vec![g(&[b, n])?, g(&[n, m])?, g(&[m])?],
        );
    }

    let conv_cases = [
        ("1x1x5x5 k3x3", [1, 1, 5, 5], [1, 1, 3, 3], Conv2dSpec::default()),
        (
            "grouped stride/pad",
            [2, 4, 4, 6],
            [4, 2, 2, 3],
            Conv2dSpec::default()
                .with_groups(2)
                .with_stride(1, 2)
                .with_padding(Padding2d::symmetric(1, 1)),
        ),
        ("depthwise spatial", [1, 3, 5, 4], [6, 1, 5, 1], Conv2dSpec::default().with_groups(3)),
        ("temporal same", [2, 1, 3, 9], [2, 1, 1, 4], Conv2dSpec::same(1, 4)),
    ];
    for (name, xs, ws, spec) in conv_cases {
        add(&format!("conv2d {name}"), Probe::Conv(spec), vec![g(&xs)?, g(&ws)?]);
    }

    let convt_cases = [
        ("1x1x3x3 k3x3", [1, 1, 3, 3], [1, 1, 3, 3], Conv2dSpec::default()),
        (
            "grouped stride/pad",
            [2, 4, 3, 4],
            [4, 1, 2, 3],
            Conv2dSpec::default()
                .with_groups(2)
                .with_stride(2, 2)
                .with_padding(Padding2d::symmetric(0, 1)),
        ),
        ("spatial groups", [1, 4, 1, 5], [4, 1, 6, 1], Conv2dSpec::default().with_groups(2)),
        ("temporal same", [2, 2, 3, 8], [2, 1, 1, 5], Conv2dSpec::same(1, 5)),
    ];
    for (name, xs, ws, spec) in convt_cases {
        add(
            &format!("conv_transpose2d {name}"),
            Probe::ConvTranspose(spec),
            vec![g(&xs)?, g(&ws)?],
        );
    }

    for (shape, k) in [([1, 1, 2, 8], 2), ([2, 3, 1, 12], 4), ([1, 2, 3, 6], 3)] {
        add(&format!("avg_pool2d {shape:?} k={k}"), Probe::AvgPool(k), vec![g(&shape)?]);
        add(&format!("upsample_nearest {shape:?} k={k}"), Probe::Upsample(k), vec![g(&shape)?]);
    }

    for shape in [[4, 2, 1, 3], [2, 3, 2, 4], [3, 1, 2, 5]] {
        let c = shape[1];
        add(
            &format!("batch_norm2d {shape:?}"),
            Probe::BatchNorm,
            vec![g(&shape)?, g(&[c])?.map(|v| 1.0 + 0.3 * v), g(&[c])?],
        );
    }

    for (i, shape) in [vec![10], vec![3, 7], vec![2, 2, 3, 4]].into_iter().enumerate() {
        add(
            &format!("dropout {shape:?} (frozen mask)"),
            Probe::Dropout {
                p: 0.25,
                seed: split(seed, 1000 + i as u64),
            },
            vec![g(&shape)?],
        );
    }

    for (i, shape) in [vec![12], vec![3, 5], vec![2, 2, 2, 3]].into_iter().enumerate() {
        add(
            &format!("elu {shape:?}"),
            Probe::Elu,
            vec![away_from_zero(&shape, split(seed, 2000 + i as u64), 0.02)?],
        );
        add(&format!("exp {shape:?}"), Probe::Exp, vec![g(&shape)?]);
        add(&format!("mul {shape:?}"), Probe::Mul, vec![g(&shape)?, g(&shape)?]);
    }

    for (shape, axis) in [(vec![3, 4], 1), (vec![5, 2], 0), (vec![2, 3, 4], 1)] {
        add(
            &format!("log_softmax {shape:?} axis={axis}"),
            Probe::LogSoftmax(axis),
            vec![g(&shape)?],
        );
    }

    for (a, b, axis) in [(vec![2, 3], vec![2, 5], 1), (vec![1, 4], vec![3, 4], 0), (vec![2, 2, 3], vec![2, 1, 3], 1)] {
        add(
            &format!("concat {a:?}+{b:?} axis={axis}"),
            Probe::Concat(axis),
            vec![g(&a)?, g(&b)?],
        );
    }

    for (shape, axis, start, len) in [(vec![2, 6], 1, 1, 3), (vec![4, 3], 0, 2, 2), (vec![2, 5, 2], 1, 0, 4)] {
        add(
            &format!("narrow {shape:?} axis={axis}"),
            Probe::Narrow { axis, start, len },
            vec![g(&shape)?],
        );
    }

    for (b, c, idx) in [(3, 4, vec![0, 3, 1]), (2, 2, vec![1, 1]), (4, 3, vec![2, 0, 0, 1])] {
        add(&format!("gather [{b},{c}]"), Probe::Gather(idx), vec![g(&[b, c])?]);
    }

    for shape in [vec![5], vec![2, 3], vec![2, 2, 2]] {
        add(&format!("mean {shape:?}"), Probe::Mean, vec![g(&shape)?]);
    }

    Ok(out)
}

/// Runs every layer case with `h = 1e-3` against `tol_rel`.
pub fn layer_battery(seed: u64, tol_rel: f64) -> Result<Vec<BatteryEntry>> {
    let opts = GradCheckOptions::default().with_tol(tol_rel);
    cases(seed)?
        .into_iter()
        .enumerate()
        .map(|(i, case)| {
            let f = Weighted {
                probe: case.probe,
                seed: split(seed, 9000 + i as u64),
            };
            Ok(BatteryEntry {
                name: case.name,
                report: grad_check(&f, &case.inputs, &opts)?,
            })
        })
        .collect()
}
