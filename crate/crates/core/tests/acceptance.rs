//! Acceptance suite: one PASS/FAIL line per criterion, always exits 0.
//!
//! The desk-scale experiments train five full-size models on one core and
//! take roughly half an hour.

use std::f64::consts::PI;
use std::time::Instant;
use veegnet::metrics::{classification_metrics, reconstruction_mse_table, MetricsReport};
use veegnet::model::{count_parameters, model_init, ModelConfig, Variant};
use veegnet::signal::{minmax_normalize, resample_signal, synth_generate, EpochedDataset, SynthConfig};
use veegnet::tensor::battery::layer_battery;
use veegnet::tensor::rng::{split, SeedRng};
use veegnet::tensor::{Conv2dSpec, Init, Padding2d, Tape, Tensor};
use veegnet::training::{end_to_end_grad_check, evaluate, kl_divergence, train, EvalOptions, TrainConfig};

const EPOCHS: usize = 150;

fn report(name: &str, ok: bool, detail: impl AsRef<str>) {
    println!("{} {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
}

fn parameter_counts() {
    let v1 = count_parameters(&ModelConfig::v1());
    let v2 = count_parameters(&ModelConfig::v2());
    let ok = v1.classifier == 8516 && v2.classifier == 516;
    report(
        "parameter counts",
        ok,
        format!(
            "v1 classifier {} (want 8516), v2 classifier {} (want 516); v1 total {} (reference 61476, delta {:+}), v2 total {} (reference 121853, delta {:+})",
            v1.classifier,
            v2.classifier,
            v1.total,
            v1.total as i64 - 61476,
            v2.total,
            v2.total as i64 - 121853
        ),
    );
}

fn gradient_battery() {
    let t0 = Instant::now();
    let (mut n, mut failed, mut worst) = (0usize, Vec::new(), 0.0f64);
    match layer_battery(1, 1e-3) {
        Ok(entries) => {
            for e in entries {
                n += 1;
                worst = worst.max(e.report.worst_rel_error());
                if !e.report.passed() {
                    failed.push(e.name);
                }
            }
        }
        Err(e) => failed.push(format!("battery error: {e}")),
    }
    let mut e2e_worst = 0.0f64;
    for v in [Variant::V1, Variant::V2] {
        let r = model_init(&ModelConfig::tiny(v), 21)
            .map_err(|e| e.to_string())
            .and_then(|m| end_to_end_grad_check(&m, 4, 0.001, 32, 1e-2, 22).map_err(|e| e.to_string()));
        n += 1;
        match r {
            Ok(r) => {
                e2e_worst = e2e_worst.max(r.worst_rel_error());
                if !r.passed() {
                    failed.push(format!("l_total {v}"));
                }
            }
            Err(e) => failed.push(format!("l_total {v}: {e}")),
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "gradient battery",
        failed.is_empty() && secs < 300.0,
        format!(
            "{n} checks, layer worst rel {worst:.2e} (tol 1e-3), end-to-end worst rel {e2e_worst:.2e} (tol 1e-2), {secs:.1}s, failed {failed:?}"
        ),
    );
}

fn kl_oracle() {
    let t0 = Instant::now();
    let mut rng = SeedRng::new(0x6b1);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let mu: Vec<f32> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect();
        let lv: Vec<f32> = (0..4).map(|_| rng.uniform_in(0.3f64.ln(), 3f64.ln()) as f32).collect();
        let closed = kl_divergence(&Tensor::new(&[1, 4], mu.clone()).unwrap(), &Tensor::new(&[1, 4], lv.clone()).unwrap()).unwrap();
        let mut draws = SeedRng::new(split(0x6b2, case));
        let mut acc = 0.0;
        for _ in 0..1_000_000 {
            for (&m, &l) in mu.iter().zip(&lv) {
                let (m, v) = (m as f64, (l as f64).exp());
                let e = draws.normal();
                let z = m + v.sqrt() * e;
                acc += -0.5 * v.ln() - 0.5 * e * e + 0.5 * z * z;
            }
        }
        let mc = acc / 1e6;
        worst = worst.max((closed - mc).abs() / closed);
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        "KL closed form vs Monte-Carlo",
        worst < 0.01 && secs < 60.0,
        format!("10 cases, d=4, 1e6 draws, worst rel diff {worst:.2e} (tol 1e-2), {secs:.1}s"),
    );
}

fn adjointness() {
    let mut rng = SeedRng::new(0xad1);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < 24 {
        let groups = 1 + rng.below(2);
        let cin = groups * (1 + rng.below(3));
        let cout = groups * (1 + rng.below(3));
        let (kh, kw) = (1 + rng.below(3), 1 + rng.below(4));
        let (sh, sw) = (1 + rng.below(2), 1 + rng.below(2));
        let (ph, pw) = (rng.below(2), rng.below(2));
        let (h, w) = (kh + rng.below(6), kw + rng.below(8));
        let spec = Conv2dSpec::default()
            .with_groups(groups)
            .with_stride(sh, sw)
            .with_padding(Padding2d::symmetric(ph, pw));
        let Ok((ho, wo)) = spec.conv_out(h, w, kh, kw) else { continue };
        // transposed output must land back on the input geometry
        if (ho - 1) * sh + kh != h + 2 * ph || (wo - 1) * sw + kw != w + 2 * pw {
            continue;
        }
        let b = 1 + rng.below(2);
        let mk = |shape: &[usize], seed| {
            Tensor::<f32>::create(shape, Init::Gaussian { mean: 0.0, std: 1.0, seed }).unwrap()
        };
        let x = mk(&[b, cin, h, w], split(0xad2, cases));
        let k = mk(&[cout, cin / groups, kh, kw], split(0xad3, cases));
        let y = mk(&[b, cout, ho, wo], split(0xad4, cases));
        let tape = Tape::<f32>::new();
        let (xv, kv, yv) = (tape.constant(x.clone()).unwrap(), tape.constant(k).unwrap(), tape.constant(y.clone()).unwrap());
        let cx = tape.value(tape.conv2d(xv, kv, spec).unwrap());
        let ty = tape.value(tape.conv_transpose2d(yv, kv, spec).unwrap());
        let (lhs, rhs) = (cx.dot(&y).unwrap(), x.dot(&ty).unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
        cases += 1;
    }
    report(
        "conv / conv-transpose adjointness",
        worst < 1e-4,
        format!("{cases} random cases in f32, worst rel gap {worst:.2e} (tol 1e-4)"),
    );
}

fn determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let cfg = p("run.json");
    std::fs::write(&cfg, r#"{"synth": {"trials_per_class": 2, "seed": 31}, "train": {"batch_size": 4, "seed": 32}}"#).unwrap();
    let run = |args: &[&str]| {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let mut full = vec!["veegnet"];
        full.extend_from_slice(args);
        let code = veegnet::cli::run(full, &mut o, &mut e);
        (code, String::from_utf8_lossy(&e).into_owned())
    };
    let mut outputs = Vec::new();
    let mut errors = Vec::new();
    let (code, e) = run(&["generate", "--config", &cfg, "--out", &p("d.veeg")]);
    if code != 0 {
        errors.push(e);
    }
    for _ in 0..2 {
        let (code, e) = run(&["train", "--config", &cfg, "--data", &p("d.veeg"), "--out", &p("m.vegm"), "--epochs", "5"]);
        if code != 0 {
            errors.push(e);
        }
        outputs.push((std::fs::read(p("m.vegm")).unwrap_or_default(), std::fs::read(p("m.jsonl")).unwrap_or_default()));
    }
    let lines = String::from_utf8_lossy(&outputs[0].1).lines().count();
    let ok = errors.is_empty() && outputs[0] == outputs[1] && !outputs[0].0.is_empty() && lines == 6;
    report(
        "training determinism",
        ok,
        format!(
            "8 trials, 5 epochs, twice: model files identical {}, loss logs identical {} ({} log lines), errors {errors:?}",
            outputs[0].0 == outputs[1].0,
            outputs[0].1 == outputs[1].1,
            lines
        ),
    );
}

struct Split {
    train: EpochedDataset,
    test: EpochedDataset,
}

fn desk_split(seed: u64) -> Split {
    let gen = |n, s| {
        synth_generate(&SynthConfig {
            trials_per_class: n,
            seed: s,
            ..Default::default()
        })
        .unwrap()
    };
    Split {
        train: gen(50, split(0xdd, 2 * seed)),
        test: gen(25, split(0xdd, 2 * seed + 1)),
    }
}

fn fit(variant: Variant, train_set: &EpochedDataset, test_set: &EpochedDataset, seed: u64) -> (MetricsReport, f64) {
    let t0 = Instant::now();
    let mut model = model_init(&ModelConfig::for_variant(variant), split(seed, 0x1417)).unwrap();
    let cfg = TrainConfig {
        epochs: EPOCHS,
        batch_size: 32,
        seed,
        ..Default::default()
    };
    train(&mut model, train_set, &cfg, |_| {}).unwrap();
    let r = evaluate(&mut model, test_set, &EvalOptions::default()).unwrap();
    (r, t0.elapsed().as_secs_f64())
}

fn band(r: &MetricsReport, name: &str) -> (f64, f64) {
    let b = r.band(name).expect("band present");
    (b.pearson_r, b.energy_ratio)
}

fn desk_scale() {
    let mut v1 = Vec::new();
    let mut splits = Vec::new();
    for seed in 0..4 {
        let s = desk_split(seed);
        let (r, secs) = fit(Variant::V1, &s.train, &s.test, seed);
        println!(
            "  v1 seed {seed}: accuracy {:.3} kappa {:.3} low band r {:.3} ratio {:.4} mid band r {:.3} ratio {:.2e} ({secs:.0}s)",
            r.accuracy,
            r.kappa.unwrap_or(f64::NAN),
            band(&r, "0.5-4Hz").0,
            band(&r, "0.5-4Hz").1,
            band(&r, "5-20Hz").0,
            band(&r, "5-20Hz").1
        );
        v1.push((r, secs));
        splits.push(s);
    }
    let passing = v1
        .iter()
        .filter(|(r, s)| r.accuracy >= 0.60 && r.kappa.unwrap_or(f64::NEG_INFINITY) >= 0.40 && *s < 1800.0)
        .count();
    report(
        "desk-scale classification (v1)",
        passing >= 3,
        format!(
            "{passing}/4 seeds with accuracy >= 0.60, kappa >= 0.40 in < 30 min; accuracies {:?}; {EPOCHS} epochs, batch 32, slowest run {:.0}s",
            v1.iter().map(|(r, _)| (r.accuracy * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            v1.iter().map(|(_, s)| *s).fold(0.0, f64::max)
        ),
    );

    let n = v1.len() as f64;
    let low_r = v1.iter().map(|(r, _)| band(r, "0.5-4Hz").0).sum::<f64>() / n;
    let low_e = v1.iter().map(|(r, _)| band(r, "0.5-4Hz").1).sum::<f64>() / n;
    report(
        "low-frequency reconstruction (v1, 0.5-4 Hz)",
        low_r >= 0.5 && low_e >= 0.25,
        format!("mean over 4 seeds of test-trial averages: pearson_r {low_r:.3} (want >= 0.5), energy_ratio {low_e:.4} (want >= 0.25)"),
    );

    let s = &splits[0];
    let norm_train = minmax_normalize(&s.train).unwrap();
    let norm_test = minmax_normalize(&s.test).unwrap();
    let (r2, secs) = fit(Variant::V2, &norm_train, &norm_test, 0);
    let (mid_r2, mid_e2) = band(&r2, "5-20Hz");
    let (_, mid_e1) = band(&v1[0].0, "5-20Hz");
    println!("  v2 seed 0: accuracy {:.3} mid band r {mid_r2:.3} ratio {mid_e2:.2e} ({secs:.0}s)", r2.accuracy);
    report(
        "mid-band contrast (v2 vs v1, 5-20 Hz)",
        mid_e2 >= 2.0 * mid_e1 && mid_r2 >= 0.3,
        format!(
            "v2 energy_ratio {mid_e2:.3e} vs v1 {mid_e1:.3e} (factor {:.2}, want >= 2); v2 pearson_r {mid_r2:.3} (want >= 0.3)",
            mid_e2 / mid_e1
        ),
    );
}

fn dsp_checks() {
    let x: Vec<f32> = (0..1000).map(|i| (2.0 * PI * 10.0 * i as f64 / 250.0).sin() as f32).collect();
    let y = resample_signal(&x, 64, 125).unwrap();
    // amplitude of the best-fit 10 Hz sinusoid over the interior
    let inner = &y[64..y.len() - 64];
    let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in inner.iter().enumerate() {
        let w = 2.0 * PI * 10.0 * (i + 64) as f64 / 128.0;
        let (s, c) = w.sin_cos();
        ss += s * s;
        cc += c * c;
        sc += s * c;
        ys += v as f64 * s;
        yc += v as f64 * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    let amp = a.hypot(b);

    let d = synth_generate(&SynthConfig {
        trials_per_class: 3,
        seed: 41,
        ..Default::default()
    })
    .unwrap();
    let n = minmax_normalize(&d).unwrap();
    let lo = n.data.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = n.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let ok = y.len() == 512 && (amp - 1.0).abs() < 0.01 && lo == -1.0 && hi == 1.0;
    report(
        "DSP checks",
        ok,
        format!("1000 samples at 250 Hz -> {} at 128 Hz; 10 Hz amplitude {amp:.5}; normalized range [{lo}, {hi}]", y.len()),
    );
}

fn metrics_oracles() {
    let a = classification_metrics(&[0, 0, 1, 1, 1], &[0, 0, 1, 1, 0]).unwrap();
    // p_o = 4/5; marginals preds (2/5, 3/5), labels (3/5, 2/5) -> p_e = 12/25
    let kappa_hand = (0.8 - 0.48) / (1.0 - 0.48);
    let subjects = vec![("A".to_string(), vec![1.0, 2.0, 3.0]), ("B".to_string(), vec![2.0, 4.0, 6.0, 8.0])];
    let t = reconstruction_mse_table(&subjects).unwrap();
    let std_a = (2.0f64 / 3.0).sqrt();
    let std_b = 5.0f64.sqrt();
    let ok_table = (t.avg - 3.5).abs() < 1e-12
        && (t.std - (std_a + std_b) / 2.0).abs() < 1e-12
        && (t.rows[0].avg - 2.0).abs() < 1e-12
        && (t.rows[1].std - std_b).abs() < 1e-12;
    let ok = (a.kappa - 8.0 / 13.0).abs() < 1e-9 && (a.kappa - kappa_hand).abs() < 1e-9 && ok_table;
    report(
        "metrics oracles",
        ok,
        format!("kappa {:.12} (want 8/13 = {:.12}); table AVG {} STD {:.6}", a.kappa, 8.0 / 13.0, t.avg, t.std),
    );
}

fn main() {
    parameter_counts();
    gradient_battery();
    kl_oracle();
    adjointness();
    determinism();
    dsp_checks();
    metrics_oracles();
    desk_scale();
}
