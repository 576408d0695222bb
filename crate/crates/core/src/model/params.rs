use super::{ModelConfig, ModelError, Result, Variant};
use crate::tensor::rng::split;
use crate::tensor::{Float, Init, RunningStats, Tensor};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Decoder,
    Classifier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    /// Uniform in `±sqrt(1/fan_in)`.
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub part: Part,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Weight decay applies to weights only.
    pub fn decays(&self) -> bool {
        matches!(self.kind, ParamKind::Weight { .. })
    }
}

/// Canonical ordering of every trainable tensor and batch-norm buffer.
#[derive(Debug, Clone)]
pub struct Layout {
    pub params: Vec<ParamSpec>,
    /// Batch-norm layer names with channel counts, in canonical order.
    pub norms: Vec<(String, usize)>,
    index: HashMap<String, usize>,
    norm_index: HashMap<String, usize>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut b = Builder::default();
        let f1d = cfg.f1 * cfg.depth_mult;
        let (c, sk) = (cfg.channels, cfg.separable_kernel);
        for (i, &kt) in cfg.temporal_kernels.iter().enumerate() {
            let p = format!("enc{i}");
            b.weight(&format!("{p}.temporal.weight"), &[cfg.f1, 1, 1, kt], kt, Part::Encoder);
            b.norm(&format!("{p}.bn1"), cfg.f1, Part::Encoder);
            b.weight(&format!("{p}.spatial.weight"), &[f1d, 1, c, 1], c, Part::Encoder);
            b.norm(&format!("{p}.bn2"), f1d, Part::Encoder);
            b.weight(&format!("{p}.sep_depthwise.weight"), &[f1d, 1, 1, sk], sk, Part::Encoder);
            b.weight(&format!("{p}.sep_pointwise.weight"), &[cfg.f2, f1d, 1, 1], f1d, Part::Encoder);
            b.norm(&format!("{p}.bn3"), cfg.f2, Part::Encoder);
        }
        let flat = cfg.flatten_width();
        b.linear("enc.fc", flat * cfg.branches(), 2 * cfg.latent_dim, Part::Encoder);

        b.linear("dec.fc", cfg.latent_dim, flat, Part::Decoder);
        b.weight("dec.sep_pointwise.weight", &[cfg.f2, f1d, 1, 1], cfg.f2, Part::Decoder);
        b.weight("dec.sep_depthwise.weight", &[f1d, 1, 1, sk], sk, Part::Decoder);
        b.norm("dec.bn1", f1d, Part::Decoder);
        b.weight("dec.spatial.weight", &[f1d, 1, c, 1], cfg.depth_mult * c, Part::Decoder);
        b.norm("dec.bn2", cfg.f1, Part::Decoder);
        let kd = cfg.decoder_temporal_kernel;
        b.weight("dec.temporal.weight", &[cfg.f1, 1, 1, kd], cfg.f1 * kd, Part::Decoder);

        let z2 = 2 * cfg.latent_dim;
        match cfg.classifier_hidden {
            Some(h) => {
                b.linear("clf.hidden", z2, h, Part::Classifier);
                b.linear("clf.out", h, cfg.n_classes, Part::Classifier);
            }
            None => b.linear("clf.out", z2, cfg.n_classes, Part::Classifier),
        }
        b.finish()
    }

    pub fn param(&self, name: &str) -> usize {
        self.index[name]
    }

    pub fn norm(&self, name: &str) -> usize {
        self.norm_index[name]
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(ParamSpec::numel).sum()
    }

    pub fn n_buffer_scalars(&self) -> usize {
        self.norms.iter().map(|(_, c)| 2 * c).sum()
    }
}

#[derive(Default)]
struct Builder {
    params: Vec<ParamSpec>,
    norms: Vec<(String, usize)>,
}

impl Builder {
    fn push(&mut self, name: &str, shape: &[usize], kind: ParamKind, part: Part) {
        self.params.push(ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
            kind,
            part,
        });
    }

    fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize, part: Part) {
        self.push(name, shape, ParamKind::Weight { fan_in }, part);
    }

    fn linear(&mut self, prefix: &str, n: usize, m: usize, part: Part) {
        self.weight(&format!("{prefix}.weight"), &[n, m], n, part);
        self.push(&format!("{prefix}.bias"), &[m], ParamKind::Bias, part);
    }

    fn norm(&mut self, prefix: &str, c: usize, part: Part) {
        self.push(&format!("{prefix}.gamma"), &[c], ParamKind::Gamma, part);
        self.push(&format!("{prefix}.beta"), &[c], ParamKind::Beta, part);
        self.norms.push((prefix.to_string(), c));
    }

    fn finish(self) -> Layout {
        let index = self.params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        let norm_index = self.norms.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Layout {
            params: self.params,
            norms: self.norms,
            index,
            norm_index,
        }
    }
}

/// Trainable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
    pub stats: Vec<RunningStats<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCounts {
    pub encoder: usize,
    pub decoder: usize,
    pub classifier: usize,
    pub total: usize,
}

impl<T: Float> ModelParams<T> {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn cast<U: Float>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            stats: self.stats.iter().map(RunningStats::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
            && self
                .stats
                .iter()
                .all(|s| s.mean.iter().chain(&s.var).all(|v| v.is_finite()))
    }

    /// Trainable scalars in canonical order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Running means then variances per batch-norm layer, in canonical order.
    pub fn flat_buffers(&self) -> Vec<T> {
        self.stats
            .iter()
            .flat_map(|s| s.mean.iter().chain(&s.var).copied())
            .collect()
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self.tensors[self.layout().param(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = self.layout().param(name);
        &mut self.tensors[i]
    }
}

pub fn model_init(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let tensors = layout
        .params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let init = match p.kind {
                ParamKind::Weight { fan_in } => {
                    let s = (1.0 / fan_in as f64).sqrt();
                    Init::Uniform {
                        low: -s,
                        high: s,
                        seed: split(seed, i as u64),
                    }
                }
                ParamKind::Bias | ParamKind::Beta => Init::Zeros,
                ParamKind::Gamma => Init::Constant(1.0),
            };
            Tensor::create(&p.shape, init).map_err(ModelError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = layout.norms.iter().map(|(_, c)| RunningStats::new(*c)).collect();
    Ok(ModelParams {
        config: config.clone(),
        tensors,
        stats,
    })
}

pub fn count_parameters(config: &ModelConfig) -> ParamCounts {
    let mut c = ParamCounts::default();
    for p in Layout::new(config).params {
        let n = p.numel();
        match p.part {
            Part::Encoder => c.encoder += n,
            Part::Decoder => c.decoder += n,
            Part::Classifier => c.classifier += n,
        }
        c.total += n;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifier_counts() {
        assert_eq!(count_parameters(&ModelConfig::v1()).classifier, 128 * 64 + 64 + 64 * 4 + 4);
        assert_eq!(count_parameters(&ModelConfig::v2()).classifier, 128 * 4 + 4);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = ModelConfig::v1();
        let a = model_init(&cfg, 5).unwrap();
        let b = model_init(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, model_init(&cfg, 6).unwrap());
        for (spec, t) in a.layout().params.iter().zip(&a.tensors) {
            match spec.kind {
                ParamKind::Weight { fan_in } => {
                    let s = (1.0 / fan_in as f64).sqrt() as f32;
                    assert!(t.data().iter().all(|v| v.abs() <= s), "{}", spec.name);
                }
                ParamKind::Gamma => assert!(t.data().iter().all(|&v| v == 1.0)),
                ParamKind::Bias | ParamKind::Beta => assert!(t.data().iter().all(|&v| v == 0.0)),
            }
        }
        assert!(a.stats.iter().all(|s| s.mean.iter().all(|&m| m == 0.0) && s.var.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn names_are_unique() {
        let l = Layout::new(&ModelConfig::v2());
        let mut names: Vec<_> = l.params.iter().map(|p| &p.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), l.params.len());
    }
}
