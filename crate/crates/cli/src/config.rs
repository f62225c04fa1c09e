//! Experiment configuration.
//!
//! The file format is one `key = value` pair per line with dotted section
//! keys (`optimizer.lr = 0.01`). `#` starts a comment, blank lines are
//! ignored, and unknown keys are rejected. Relative paths are resolved
//! against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deepbound::diagnostics::{DiagnosticSettings, StructuralWeights};
use deepbound::loss::{EmpiricalTriple, ProfileContext};
use deepbound::model::Variant;
use deepbound::optim::OmegaSpec;
use deepbound::{Activation, Head, InitKind, InitScheme, LossKind, ModelConfig, Norm, NormPower};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    /// Preset family; sets width doubling and skips.
    pub variant: Option<Variant>,
    pub blocks: usize,
    pub width: usize,
    pub activation: Activation,
    pub skip: bool,
    pub dropout: f64,
    pub head: Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSection {
    pub norm: Norm,
    pub order: f64,
    pub scale: f64,
    pub relaxation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: Option<u64>,
    pub epochs: Option<u64>,
    pub adaptive_step: bool,
    pub omega: OmegaSection,
    /// Gradient-correlation measurement stride; 0 disables it.
    pub m_stride: u64,
    /// Checkpoint stride; 0 writes only the final parameters.
    pub checkpoint_stride: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eig_floor: Option<f64>,
    pub stride: u64,
    pub batch_size: usize,
    pub pearson_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    pub subset_n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub depths: Vec<usize>,
    pub seeds: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicSection {
    pub epsilon: Option<f64>,
    pub pass_constant: f64,
    pub checkpoint: Option<PathBuf>,
    pub monte_carlo: bool,
    pub trials: usize,
    pub theta_count: usize,
    pub mf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub init: InitKind,
    pub init_seed: Option<u64>,
    pub loss: LossKind,
    pub convex: Option<EmpiricalTriple>,
    pub smooth: Option<EmpiricalTriple>,
    pub optimizer: OptimizerSection,
    pub diagnostics: DiagnosticsSection,
    pub data: DataSection,
    pub sweep: SweepSection,
    pub gic: GicSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("run"),
            model: ModelSection {
                variant: None,
                blocks: 1,
                width: 32,
                activation: Activation::Relu,
                skip: false,
                dropout: 0.0,
                head: Head::Linear,
            },
            init: InitKind::He,
            init_seed: None,
            loss: LossKind::SoftmaxCe,
            convex: None,
            smooth: None,
            optimizer: OptimizerSection {
                lr: 0.01,
                momentum: 0.9,
                batch_size: 64,
                steps: None,
                epochs: None,
                adaptive_step: false,
                omega: OmegaSection {
                    norm: Norm::L2,
                    order: 2.0,
                    scale: 0.5,
                    relaxation: 0.0,
                },
                m_stride: 10,
                checkpoint_stride: 0,
            },
            diagnostics: DiagnosticsSection {
                alpha: 1.0,
                beta: 1.0,
                gamma: 1.0,
                eig_floor: None,
                stride: 10,
                batch_size: 16,
                pearson_window: 50,
            },
            data: DataSection {
                source: DataSource::Synthetic {
                    classes: 10,
                    per_class: 100,
                    dim: 32,
                    separation: 3.0,
                },
                subset_n: None,
                seed: None,
            },
            sweep: SweepSection {
                depths: vec![0, 2, 4, 8, 12],
                seeds: 20,
            },
            gic: GicSection {
                epsilon: None,
                pass_constant: deepbound::gicstat::DEFAULT_PASS_CONSTANT,
                checkpoint: None,
                monte_carlo: false,
                trials: 200,
                theta_count: 10_000,
                mf: 50,
            },
        }
    }
}

/// Seed streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SAMPLER: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SUBSET: u64 = 5;
    pub const SWEEP: u64 = 6;
    pub const MONTE_CARLO: u64 = 7;
}

fn err<T>(key: &str, line: usize, msg: impl std::fmt::Display) -> CliResult<T> {
    Err(CliError::Config(format!("{key} (line {line}): {msg}")))
}

fn parse_num<T: FromStr>(key: &str, line: usize, v: &str) -> CliResult<T> {
    v.parse().or_else(|_| err(key, line, format!("cannot parse `{v}`")))
}

fn parse_bool(key: &str, line: usize, v: &str) -> CliResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(key, line, format!("expected true or false, got `{v}`")),
    }
}

pub fn parse_activation(v: &str) -> Option<Activation> {
    match v {
        "relu" => Some(Activation::Relu),
        "tanh" => Some(Activation::Tanh),
        "sigmoid" => Some(Activation::Sigmoid),
        _ => None,
    }
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
    }
}

fn parse_norm(key: &str, line: usize, v: &str) -> CliResult<Norm> {
    match v {
        "l1" => Ok(Norm::L1),
        "l2" => Ok(Norm::L2),
        "linf" => Ok(Norm::Linf),
        _ => match v.strip_prefix('l').map(str::parse::<f64>) {
            Some(Ok(p)) => Ok(Norm::Lp(p)),
            _ => err(key, line, format!("expected l1, l2, linf or l<p>, got `{v}`")),
        },
    }
}

#[derive(Default)]
struct RawData {
    source: Option<String>,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    classes: Option<usize>,
    per_class: Option<usize>,
    dim: Option<usize>,
    separation: Option<f64>,
}

#[derive(Default, Clone, Copy)]
struct RawTriple {
    scale: Option<f64>,
    order: Option<f64>,
    relaxation: Option<f64>,
}

impl RawTriple {
    fn finish(self, name: &str) -> CliResult<Option<EmpiricalTriple>> {
        match (self.scale, self.order, self.relaxation) {
            (None, None, None) => Ok(None),
            (a, r, c) => Ok(Some(EmpiricalTriple {
                scale: a.unwrap_or(1.0),
                order: r.ok_or_else(|| CliError::Config(format!("loss.{name}.order is required")))?,
                relaxation: c.unwrap_or(0.0),
            })),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// Parses config text; relative paths are joined onto `base` when given.
    pub fn parse(text: &str, base: Option<&Path>) -> CliResult<Self> {
        let mut c = ExperimentConfig::default();
        let mut raw = RawData::default();
        let mut convex = RawTriple::default();
        let mut smooth = RawTriple::default();
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(CliError::Config(format!("line {line}: expected `key = value`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if v.is_empty() {
                return err(k, line, "missing value");
            }
            let n = |v: &str| parse_num::<f64>(k, line, v);
            let u = |v: &str| parse_num::<usize>(k, line, v);
            let u64_ = |v: &str| parse_num::<u64>(k, line, v);
            let b = |v: &str| parse_bool(k, line, v);
            match k {
                "seed" => c.seed = u64_(v)?,
                "output_dir" => c.output_dir = resolve(v),
                "model.variant" => {
                    c.model.variant = Some(match v {
                        "a" | "A" => Variant::A,
                        "b" | "B" => Variant::B,
                        "c" | "C" => Variant::C,
                        "d" | "D" => Variant::D,
                        _ => return err(k, line, format!("expected a, b, c or d, got `{v}`")),
                    })
                }
                "model.blocks" => c.model.blocks = u(v)?,
                "model.width" => c.model.width = u(v)?,
                "model.activation" => {
                    c.model.activation =
                        parse_activation(v).map_or_else(|| err(k, line, format!("unknown activation `{v}`")), Ok)?
                }
                "model.skip" => c.model.skip = b(v)?,
                "model.dropout" => c.model.dropout = n(v)?,
                "model.head" => {
                    c.model.head = match v {
                        "linear" => Head::Linear,
                        "none" => Head::None,
                        _ => return err(k, line, format!("expected linear or none, got `{v}`")),
                    }
                }
                "init.kind" => {
                    c.init = match v {
                        "he" => InitKind::He,
                        "xavier" => InitKind::Xavier,
                        _ => return err(k, line, format!("expected he or xavier, got `{v}`")),
                    }
                }
                "init.seed" => c.init_seed = Some(u64_(v)?),
                "loss.kind" => {
                    c.loss = v
                        .parse()
                        .map_err(|e| CliError::Config(format!("{k} (line {line}): {e}")))?
                }
                "loss.convex.scale" => convex.scale = Some(n(v)?),
                "loss.convex.order" => convex.order = Some(n(v)?),
                "loss.convex.relaxation" => convex.relaxation = Some(n(v)?),
                "loss.smooth.scale" => smooth.scale = Some(n(v)?),
                "loss.smooth.order" => smooth.order = Some(n(v)?),
                "loss.smooth.relaxation" => smooth.relaxation = Some(n(v)?),
                "optimizer.lr" => c.optimizer.lr = n(v)?,
                "optimizer.momentum" => c.optimizer.momentum = n(v)?,
                "optimizer.batch_size" => c.optimizer.batch_size = u(v)?,
                "optimizer.steps" => c.optimizer.steps = Some(u64_(v)?),
                "optimizer.epochs" => c.optimizer.epochs = Some(u64_(v)?),
                "optimizer.adaptive_step" => c.optimizer.adaptive_step = b(v)?,
                "optimizer.omega.norm" => c.optimizer.omega.norm = parse_norm(k, line, v)?,
                "optimizer.omega.order" => c.optimizer.omega.order = n(v)?,
                "optimizer.omega.scale" => c.optimizer.omega.scale = n(v)?,
                "optimizer.omega.relaxation" => c.optimizer.omega.relaxation = n(v)?,
                "optimizer.m_stride" => c.optimizer.m_stride = u64_(v)?,
                "optimizer.checkpoint_stride" => c.optimizer.checkpoint_stride = u64_(v)?,
                "diagnostics.alpha" => c.diagnostics.alpha = n(v)?,
                "diagnostics.beta" => c.diagnostics.beta = n(v)?,
                "diagnostics.gamma" => c.diagnostics.gamma = n(v)?,
                "diagnostics.eig_floor" => c.diagnostics.eig_floor = Some(n(v)?),
                "diagnostics.stride" => c.diagnostics.stride = u64_(v)?,
                "diagnostics.batch_size" => c.diagnostics.batch_size = u(v)?,
                "diagnostics.pearson_window" => c.diagnostics.pearson_window = u(v)?,
                "data.source" => raw.source = Some(v.to_string()),
                "data.images" => raw.images = Some(resolve(v)),
                "data.labels" => raw.labels = Some(resolve(v)),
                "data.classes" => raw.classes = Some(u(v)?),
                "data.per_class" => raw.per_class = Some(u(v)?),
                "data.dim" => raw.dim = Some(u(v)?),
                "data.separation" => raw.separation = Some(n(v)?),
                "data.subset_n" => c.data.subset_n = Some(u(v)?),
                "data.seed" => c.data.seed = Some(u64_(v)?),
                "sweep.depths" => {
                    c.sweep.depths = v
                        .split(',')
                        .map(|d| parse_num::<usize>(k, line, d.trim()))
                        .collect::<CliResult<_>>()?
                }
                "sweep.seeds" => c.sweep.seeds = u64_(v)?,
                "gic.epsilon" => c.gic.epsilon = Some(n(v)?),
                "gic.pass_constant" => c.gic.pass_constant = n(v)?,
                "gic.checkpoint" => c.gic.checkpoint = Some(resolve(v)),
                "gic.monte_carlo" => c.gic.monte_carlo = b(v)?,
                "gic.trials" => c.gic.trials = u(v)?,
                "gic.theta_count" => c.gic.theta_count = u(v)?,
                "gic.mf" => c.gic.mf = u(v)?,
                _ => return Err(CliError::Config(format!("line {line}: unknown key `{k}`"))),
            }
        }
        c.convex = convex.finish("convex")?;
        c.smooth = smooth.finish("smooth")?;
        c.data.source = match raw.source.as_deref().unwrap_or("synthetic") {
            "synthetic" => {
                if raw.images.is_some() || raw.labels.is_some() {
                    return Err(CliError::Config(
                        "data.images/data.labels need data.source = idx".into(),
                    ));
                }
                let DataSource::Synthetic {
                    classes,
                    per_class,
                    dim,
                    separation,
                } = ExperimentConfig::default().data.source
                else {
                    unreachable!()
                };
                DataSource::Synthetic {
                    classes: raw.classes.unwrap_or(classes),
                    per_class: raw.per_class.unwrap_or(per_class),
                    dim: raw.dim.unwrap_or(dim),
                    separation: raw.separation.unwrap_or(separation),
                }
            }
            "idx" => {
                if raw.per_class.is_some() || raw.dim.is_some() || raw.separation.is_some() {
                    return Err(CliError::Config(
                        "data.per_class/data.dim/data.separation need data.source = synthetic".into(),
                    ));
                }
                DataSource::Idx {
                    images: raw
                        .images
                        .ok_or_else(|| CliError::Config("data.images is required for idx data".into()))?,
                    labels: raw
                        .labels
                        .ok_or_else(|| CliError::Config("data.labels is required for idx data".into()))?,
                    classes: raw.classes.unwrap_or(10),
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "data.source: expected synthetic or idx, got `{other}`"
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optimizer.lr must be positive, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return bad(format!("optimizer.momentum must lie in [0, 1), got {}", o.momentum));
        }
        if o.batch_size == 0 {
            return bad("optimizer.batch_size must be positive".into());
        }
        if o.steps.is_some() && o.epochs.is_some() {
            return bad("set only one of optimizer.steps and optimizer.epochs".into());
        }
        self.omega()
            .map_err(|e| CliError::Config(format!("optimizer.omega: {e}")))?;
        let d = &self.diagnostics;
        if d.stride == 0 {
            return bad("diagnostics.stride must be positive".into());
        }
        if d.batch_size == 0 {
            return bad("diagnostics.batch_size must be positive".into());
        }
        if d.pearson_window < 2 {
            return bad("diagnostics.pearson_window must be at least 2".into());
        }
        if let Some(f) = d.eig_floor {
            if !(f > 0.0) {
                return bad(format!("diagnostics.eig_floor must be positive, got {f}"));
            }
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("model.dropout must lie in [0, 1), got {}", self.model.dropout));
        }
        if let Some(n) = self.data.subset_n {
            if n == 0 {
                return bad("data.subset_n must be positive".into());
            }
        }
        match &self.data.source {
            DataSource::Synthetic {
                classes,
                per_class,
                dim,
                separation,
            } => {
                if *classes == 0 || *per_class == 0 || *dim == 0 {
                    return bad("data.classes, data.per_class and data.dim must be positive".into());
                }
                if !(*separation >= 0.0) {
                    return bad("data.separation must be non-negative".into());
                }
            }
            DataSource::Idx { classes, .. } => {
                if *classes == 0 {
                    return bad("data.classes must be positive".into());
                }
            }
        }
        self.loss
            .validate()
            .map_err(|e| CliError::Config(format!("loss.kind: {e}")))?;
        if self.loss.has_analytic_profile() && (self.convex.is_some() || self.smooth.is_some()) {
            return bad(format!(
                "loss.convex/loss.smooth only apply to empirical losses, not {}",
                self.loss
            ));
        }
        if self.sweep.seeds == 0 {
            return bad("sweep.seeds must be positive".into());
        }
        if !(self.gic.pass_constant >= 0.0) {
            return bad("gic.pass_constant must be non-negative".into());
        }
        Ok(())
    }

    pub fn omega(&self) -> deepbound::Result<OmegaSpec> {
        let w = &self.optimizer.omega;
        OmegaSpec::new(NormPower::new(w.norm, w.order, w.scale)?, w.relaxation)
    }

    /// Model shape for the given data dimensions.
    pub fn model_config(&self, input_dim: usize, output_dim: usize) -> ModelConfig {
        let m = &self.model;
        let mut cfg = match m.variant {
            Some(v) => ModelConfig::variant(v, input_dim, output_dim, m.blocks, m.width),
            None => {
                let mut c = ModelConfig::linear(input_dim, output_dim);
                c.block_count = m.blocks;
                c.hidden_width = m.width;
                c.skip_connections = m.skip;
                c
            }
        };
        cfg.activation = m.activation;
        cfg.dropout_rate = m.dropout;
        cfg.head = m.head;
        cfg
    }

    pub fn init_scheme(&self) -> InitScheme {
        InitScheme {
            kind: self.init,
            seed: self
                .init_seed
                .unwrap_or_else(|| deepbound::rngs::derive_seed(self.seed, streams::INIT)),
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data
            .seed
            .unwrap_or_else(|| deepbound::rngs::derive_seed(self.seed, streams::DATA))
    }

    pub fn diagnostic_settings(&self) -> DiagnosticSettings {
        let d = &self.diagnostics;
        DiagnosticSettings {
            weights: StructuralWeights {
                alpha: d.alpha,
                beta: d.beta,
                gamma: d.gamma,
            },
            floor: d.eig_floor,
            log_base: std::f64::consts::E,
            profile: ProfileContext {
                q_min: None,
                convex: self.convex,
                smooth: self.smooth,
            },
        }
    }
}
