use veegnet::model::{
    classifier_forward, count_parameters, decoder_forward, encode, infer, model_init, model_read, model_write,
    multibranch_encoder_forward, reparameterize, trial_noise, LatentCode, Mode, ModelConfig, ModelError,
    ModelParams, Network, Variant,
};
use veegnet::tensor::{grad_check, Float, GradCheckOptions, Init, Tape, Tensor, Var};

fn input(b: usize, cfg: &ModelConfig, seed: u64) -> Tensor {
    Tensor::create(
        &[b, 1, cfg.channels, cfg.samples],
        Init::Gaussian {
            mean: 0.0,
            std: 1.0,
            seed,
        },
    )
    .unwrap()
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn latent_shapes_for_both_variants() {
    for v in [Variant::V1, Variant::V2] {
        let cfg = ModelConfig::for_variant(v);
        let mut m = model_init(&cfg, 1).unwrap();
        for b in [1, 3] {
            let code = encode(&mut m, &input(b, &cfg, 2), Mode::eval()).unwrap();
            assert_eq!(code.mu.shape(), &[b, 64]);
            assert_eq!(code.log_var.shape(), &[b, 64]);
            assert!(code.z1.is_none());
            assert!(code.variance().data().iter().all(|&s| s > 0.0 && s.is_finite()));
        }
    }
}

#[test]
fn flatten_width_is_256() {
    let c = ModelConfig::v1();
    assert_eq!(c.flatten_width(), 256);
    assert_eq!(c.f2 * (c.samples / (c.pool1 * c.pool2)), 256);
}

#[test]
fn zero_input_gives_fc_bias() {
    let cfg = ModelConfig::v1();
    let mut m = model_init(&cfg, 3).unwrap();
    let x = Tensor::zeros(&[1, 1, 22, 512]).unwrap();
    let code = encode(&mut m, &x, Mode::eval()).unwrap();
    // Every conv is bias-free and batch norm starts at (0, 1), so the flatten is
    // exactly zero and the FC output is its bias.
    let bias = m.get("enc.fc.bias").data().to_vec();
    assert_eq!(code.mu.data(), &bias[..64]);
    assert_eq!(code.log_var.data(), &bias[64..]);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let mut m = model_init(&ModelConfig::v1(), 0).unwrap();
    let x = Tensor::zeros(&[1, 1, 21, 512]).unwrap();
    assert!(matches!(encode(&mut m, &x, Mode::eval()), Err(ModelError::Shape(_))));
    let z = Tensor::zeros(&[1, 63]).unwrap();
    assert!(matches!(decoder_forward(&mut m, &z, Mode::eval()), Err(ModelError::Shape(_))));
    let z2 = Tensor::zeros(&[1, 64]).unwrap();
    assert!(matches!(classifier_forward(&mut m, &z2), Err(ModelError::Shape(_))));
}

#[test]
fn encoder_entry_points_check_variant() {
    let cfg = ModelConfig::v1();
    let mut m = model_init(&cfg, 0).unwrap();
    assert!(multibranch_encoder_forward(&mut m, &input(1, &cfg, 0), Mode::eval()).is_err());
}

#[test]
fn v2_branches_are_isolated() {
    let cfg = ModelConfig::v2();
    let mut m = model_init(&cfg, 4).unwrap();
    for i in [1, 2] {
        m.get_mut(&format!("enc{i}.temporal.weight")).data_mut().fill(0.0);
    }
    let x = input(2, &cfg, 5);
    let base = multibranch_encoder_forward(&mut m, &x, Mode::eval()).unwrap();

    let mut dead = m.clone();
    for v in dead.get_mut("enc1.spatial.weight").data_mut() {
        *v += 0.3;
    }
    let after = multibranch_encoder_forward(&mut dead, &x, Mode::eval()).unwrap();
    assert_eq!(bits(&base.mu), bits(&after.mu));

    let mut live = m.clone();
    for v in live.get_mut("enc0.spatial.weight").data_mut() {
        *v += 0.3;
    }
    let after = multibranch_encoder_forward(&mut live, &x, Mode::eval()).unwrap();
    assert_ne!(bits(&base.mu), bits(&after.mu));
}

#[test]
fn reparameterize_degenerate_variance_returns_mu() {
    let mu = Tensor::create(
        &[2, 64],
        Init::Uniform {
            low: -2.0,
            high: 2.0,
            seed: 1,
        },
    )
    .unwrap();
    let code = LatentCode {
        mu: mu.clone(),
        log_var: Tensor::full(&[2, 64], -30.0).unwrap(),
        z1: None,
    };
    let z = reparameterize(&code, 9).unwrap().z1.unwrap();
    for (a, b) in z.data().iter().zip(mu.data()) {
        assert!((a - b).abs() < 1e-5);
    }
    assert_eq!(reparameterize(&code, 9).unwrap().z1, Some(z));
}

#[test]
fn reparameterize_moments() {
    let n = 100_000;
    let d = 4;
    let code = LatentCode {
        mu: Tensor::zeros(&[n, d]).unwrap(),
        log_var: Tensor::zeros(&[n, d]).unwrap(),
        z1: None,
    };
    let z = reparameterize(&code, 17).unwrap().z1.unwrap();
    for j in 0..d {
        let col: Vec<f64> = (0..n).map(|i| z.data()[i * d + j] as f64).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.97..=1.03).contains(&var), "var {var}");
    }
}

#[test]
fn decoder_output_shape_and_determinism() {
    for v in [Variant::V1, Variant::V2] {
        let mut m = model_init(&ModelConfig::for_variant(v), 6).unwrap();
        let z = Tensor::zeros(&[3, 64]).unwrap();
        let a = decoder_forward(&mut m, &z, Mode::eval()).unwrap();
        let b = decoder_forward(&mut m, &z, Mode::eval()).unwrap();
        assert_eq!(a.shape(), &[3, 1, 22, 512]);
        assert!(a.all_finite());
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn classifier_rows_are_distributions() {
    for v in [Variant::V1, Variant::V2] {
        let mut m = model_init(&ModelConfig::for_variant(v), 7).unwrap();
        let z2 = Tensor::create(
            &[5, 128],
            Init::Gaussian {
                mean: 0.0,
                std: 2.0,
                seed: 3,
            },
        )
        .unwrap();
        let lp = classifier_forward(&mut m, &z2).unwrap();
        assert_eq!(lp.shape(), &[5, 4]);
        for row in lp.data().chunks(4) {
            let s: f64 = row.iter().map(|&v| (v as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn classifier_counts_match_hand_arithmetic() {
    assert_eq!(count_parameters(&ModelConfig::v1()).classifier, 128 * 64 + 64 + 64 * 4 + 4);
    assert_eq!(count_parameters(&ModelConfig::v1()).classifier, 8516);
    assert_eq!(count_parameters(&ModelConfig::v2()).classifier, 128 * 4 + 4);
    assert_eq!(count_parameters(&ModelConfig::v2()).classifier, 516);
    let m = model_init(&ModelConfig::v1(), 0).unwrap();
    let c = count_parameters(&m.config);
    assert_eq!(c.total, m.tensors.iter().map(|t| t.len()).sum::<usize>());
    assert_eq!(c.total, c.encoder + c.decoder + c.classifier);
}

/// Reconstruction MSE against a fixed target as a function of `z1`.
struct DecoderMse<'a> {
    model: &'a ModelParams,
    target: Tensor,
}

impl veegnet::tensor::ScalarFn for DecoderMse<'_> {
    fn eval<T: Float>(&self, tape: &Tape<T>, inputs: &[Var]) -> veegnet::tensor::Result<Var> {
        let m = self.model.cast::<T>();
        let params = m
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<veegnet::tensor::Result<Vec<_>>>()?;
        let mut stats = m.stats.clone();
        let layout = m.layout();
        let mut net = Network {
            tape,
            config: &m.config,
            layout: &layout,
            params: &params,
            stats: &mut stats,
            mode: Mode::eval(),
        };
        let x_hat = net
            .decode(inputs[0])
            .map_err(|e| veegnet::tensor::TensorError::Usage(e.to_string()))?;
        let d = tape.sub(x_hat, tape.constant(self.target.cast())?)?;
        tape.mean(tape.mul(d, d)?)
    }
}

#[test]
fn decoder_gradient_wrt_latent() {
    for v in [Variant::V1, Variant::V2] {
        let cfg = ModelConfig::tiny(v);
        let m = model_init(&cfg, 8).unwrap();
        let f = DecoderMse {
            model: &m,
            target: input(2, &cfg, 9),
        };
        let z = Tensor::create(
            &[2, cfg.latent_dim],
            Init::Gaussian {
                mean: 0.0,
                std: 1.0,
                seed: 10,
            },
        )
        .unwrap();
        let r = grad_check(&f, &[z], &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{v}: {r:?}");
    }
}

#[test]
fn model_file_round_trip_preserves_outputs() {
    let cfg = ModelConfig::v2();
    let mut m = model_init(&cfg, 11).unwrap();
    // Move the running statistics away from their initial values first.
    encode(&mut m, &input(4, &cfg, 12), Mode::train(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vegm");
    model_write(&m, &path).unwrap();
    let mut back = model_read(&path).unwrap();
    assert_eq!(back, m);
    let x = input(2, &cfg, 13);
    let eps = trial_noise(64, &[0, 1], 5).unwrap();
    let (a, xa, la) = infer(&mut m, &x, &eps).unwrap();
    let (b, xb, lb) = infer(&mut back, &x, &eps).unwrap();
    assert_eq!(bits(&a.mu), bits(&b.mu));
    assert_eq!(bits(&xa), bits(&xb));
    assert_eq!(bits(&la), bits(&lb));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(model_read(&path), Err(ModelError::Format { .. })));
}

#[test]
fn inference_is_bitwise_repeatable() {
    let cfg = ModelConfig::v1();
    let mut m = model_init(&cfg, 14).unwrap();
    let x = input(3, &cfg, 15);
    let eps = trial_noise(64, &[0, 1, 2], 1).unwrap();
    let (c1, x1, l1) = infer(&mut m, &x, &eps).unwrap();
    let (c2, x2, l2) = infer(&mut m, &x, &eps).unwrap();
    assert_eq!(bits(&c1.log_var), bits(&c2.log_var));
    assert_eq!(bits(&x1), bits(&x2));
    assert_eq!(bits(&l1), bits(&l2));
}

#[test]
fn training_mode_updates_running_stats_only() {
    let cfg = ModelConfig::tiny(Variant::V1);
    let mut m = model_init(&cfg, 16).unwrap();
    let before = m.clone();
    encode(&mut m, &input(4, &cfg, 17), Mode::train(3)).unwrap();
    assert_eq!(m.tensors, before.tensors);
    assert_ne!(m.stats, before.stats);
    encode(&mut m.clone(), &input(4, &cfg, 17), Mode::eval()).unwrap();
}
