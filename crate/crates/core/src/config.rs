//! Experiment configuration: the axes varied across runs (IPM kind, critic
//! formulation, constraint placement, critic normalization), optimizer
//! defaults, and validation of their combinations.
//!
//! Config files are JSON. Any field of `hyper` may be omitted and is then
//! filled from [`default_hyperparams`] for the chosen IPM and formulation;
//! `placements` may be omitted and is then filled from
//! [`default_placements`]. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmKind {
    WganClip,
    #[serde(rename = "wgan_gp")]
    WganGp,
    Fisher,
    Sobolev,
    FisherSobolev,
}

impl IpmKind {
    pub const ALL: [IpmKind; 5] = [
        IpmKind::WganClip,
        IpmKind::WganGp,
        IpmKind::Fisher,
        IpmKind::Sobolev,
        IpmKind::FisherSobolev,
    ];

    /// The constraints this IPM enforces, one placement each.
    pub fn constraints(self) -> &'static [ConstraintKind] {
        match self {
            IpmKind::WganClip => &[],
            IpmKind::WganGp => &[ConstraintKind::Gp],
            IpmKind::Fisher => &[ConstraintKind::Fisher],
            IpmKind::Sobolev => &[ConstraintKind::Sobolev],
            IpmKind::FisherSobolev => &[ConstraintKind::Fisher, ConstraintKind::Sobolev],
        }
    }
}

impl fmt::Display for IpmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IpmKind::WganClip => "wgan_clip",
            IpmKind::WganGp => "wgan_gp",
            IpmKind::Fisher => "fisher",
            IpmKind::Sobolev => "sobolev",
            IpmKind::FisherSobolev => "fisher_sobolev",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticFormulation {
    /// `f = ⟨v, Φ(x)⟩`; the class head only sees the CE term.
    Plain,
    /// `f = f₊ − f₋` with `f₊ = Σ_y p(y|x)⟨S_y, Φ(x)⟩`.
    KPlusOne,
    /// `f = f₊ᴴ − f₋` with `f₊ᴴ = Σ_y p(y|x) log p(y|x)`.
    KPlusOneEntropy,
}

impl CriticFormulation {
    pub const ALL: [CriticFormulation; 3] = [
        CriticFormulation::Plain,
        CriticFormulation::KPlusOne,
        CriticFormulation::KPlusOneEntropy,
    ];

    pub fn is_k_plus_one(self) -> bool {
        !matches!(self, CriticFormulation::Plain)
    }
}

impl fmt::Display for CriticFormulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriticFormulation::Plain => "plain",
            CriticFormulation::KPlusOne => "k_plus_one",
            CriticFormulation::KPlusOneEntropy => "k_plus_one_entropy",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Fisher,
    Sobolev,
    Gp,
}

impl ConstraintKind {
    /// Whether the estimator involves `∇ₓ h`.
    pub fn uses_input_gradient(self) -> bool {
        matches!(self, ConstraintKind::Sobolev | ConstraintKind::Gp)
    }
}

/// Which part of the critic a constraint is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintTarget {
    /// `f`
    #[serde(alias = "f")]
    FullCritic,
    /// `f₊` (or `f₊ᴴ` under the entropy formulation)
    #[serde(alias = "f_plus")]
    RealPart,
    /// `f₋`
    #[serde(alias = "f_minus")]
    FakePart,
}

impl ConstraintTarget {
    pub const ALL: [ConstraintTarget; 3] = [
        ConstraintTarget::FullCritic,
        ConstraintTarget::RealPart,
        ConstraintTarget::FakePart,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            ConstraintTarget::FullCritic => "f",
            ConstraintTarget::RealPart => "f+",
            ConstraintTarget::FakePart => "f-",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub constraint: ConstraintKind,
    pub target: ConstraintTarget,
}

impl Placement {
    pub fn new(constraint: ConstraintKind, target: ConstraintTarget) -> Self {
        Self { constraint, target }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.constraint {
            ConstraintKind::Fisher => "F",
            ConstraintKind::Sobolev => "S",
            ConstraintKind::Gp => "GP",
        };
        write!(f, "{}({})", c, self.target.symbol())
    }
}

/// Where layer-norm statistics are pooled, per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsScope {
    /// One (μ, σ²) over all C·H·W positions.
    Singleton,
    /// One (μ, σ²) per channel, over H·W.
    PerChannel,
}

/// Shape of the layer-norm affine parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    /// `g, b ∈ ℝ^{C×1×1}`
    PerChannel,
    /// `g, b ∈ ℝ^{1×H×W}`
    PerPixel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NormalizationKind {
    BatchNorm,
    LayerNorm { stats: StatsScope, params: ParamScope },
    NoNorm,
}

impl NormalizationKind {
    /// Batch norm, the four layer-norm variants, and no normalization.
    pub const ALL: [NormalizationKind; 6] = [
        NormalizationKind::BatchNorm,
        NormalizationKind::LayerNorm {
            stats: StatsScope::Singleton,
            params: ParamScope::PerChannel,
        },
        NormalizationKind::LayerNorm {
            stats: StatsScope::Singleton,
            params: ParamScope::PerPixel,
        },
        NormalizationKind::LayerNorm {
            stats: StatsScope::PerChannel,
            params: ParamScope::PerChannel,
        },
        NormalizationKind::LayerNorm {
            stats: StatsScope::PerChannel,
            params: ParamScope::PerPixel,
        },
        NormalizationKind::NoNorm,
    ];
}

impl fmt::Display for NormalizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormalizationKind::BatchNorm => f.write_str("bn"),
            NormalizationKind::NoNorm => f.write_str("none"),
            NormalizationKind::LayerNorm { stats, params } => {
                let s = match stats {
                    StatsScope::Singleton => "111",
                    StatsScope::PerChannel => "c11",
                };
                let p = match params {
                    ParamScope::PerChannel => "c11",
                    ParamScope::PerPixel => "1hw",
                };
                write!(f, "ln_stats{s}_params{p}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub lr_critic: f64,
    pub lr_gen: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lambda_ce: f64,
    pub rho_f: f64,
    pub rho_s: f64,
    pub lambda_gp: f64,
    pub n_critic: usize,
    /// L2 weight decay on Φ_ω and the class head S.
    pub wd_backbone: f64,
    /// L2 weight decay on the fake direction v.
    pub wd_v: f64,
    pub clip_c: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Optimizer and penalty defaults for an (IPM, formulation) pair.
pub fn default_hyperparams(ipm: IpmKind, formulation: CriticFormulation) -> HyperParams {
    let mut h = HyperParams {
        lr_critic: 2e-4,
        lr_gen: 2e-4,
        adam_beta1: 0.5,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        lambda_ce: if formulation.is_k_plus_one() { 1.5 } else { 0.1 },
        rho_f: 1e-7,
        rho_s: 1e-8,
        lambda_gp: 0.0,
        n_critic: 2,
        wd_backbone: 1e-6,
        wd_v: 1e-3,
        clip_c: 0.01,
        epochs: 10,
        batch_size: 64,
    };
    if ipm == IpmKind::WganGp {
        h.lambda_gp = 10.0;
        h.n_critic = 5;
        h.lr_critic = 1e-4;
        h.lr_gen = 1e-4;
    }
    h
}

/// Default constraint placement: everything on the full critic, except that
/// Fisher+Sobolev under a K+1 critic puts Sobolev on `f₋`.
pub fn default_placements(ipm: IpmKind, formulation: CriticFormulation) -> Vec<Placement> {
    ipm.constraints()
        .iter()
        .map(|&c| {
            let target = if ipm == IpmKind::FisherSobolev
                && c == ConstraintKind::Sobolev
                && formulation.is_k_plus_one()
            {
                ConstraintTarget::FakePart
            } else {
                ConstraintTarget::FullCritic
            };
            Placement::new(c, target)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian mixture with class means on a circle of radius 4.
    Synthetic {
        classes: usize,
        n_per_class: usize,
        input_dim: usize,
        #[serde(default)]
        seed: u64,
    },
    /// CIFAR-10 binary version. `path` falls back to `$IPM_SSL_DATA_ROOT/cifar-10-batches-bin`.
    Cifar10 {
        #[serde(default)]
        path: Option<String>,
    },
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::Synthetic { classes, .. } => *classes,
            DatasetSpec::Cifar10 { .. } => 10,
        }
    }

    /// Per-sample shape: `[D]` for vectors, `[C, H, W]` for images.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            DatasetSpec::Synthetic { input_dim, .. } => vec![*input_dim],
            DatasetSpec::Cifar10 { .. } => vec![3, 32, 32],
        }
    }

    pub fn train_size(&self) -> usize {
        match self {
            DatasetSpec::Synthetic {
                classes,
                n_per_class,
                ..
            } => classes * crate::data::split_sizes(*n_per_class).0,
            DatasetSpec::Cifar10 { .. } => 45_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneSpec {
    /// Dense layers; every hidden width and the feature layer get norm + activation.
    Mlp { hidden: Vec<usize>, feature_dim: usize },
    /// 3×3 convolutions (padding 1) with the given channels and strides,
    /// then a dense projection to `feature_dim`.
    Conv {
        channels: Vec<usize>,
        strides: Vec<usize>,
        feature_dim: usize,
    },
}

impl BackboneSpec {
    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneSpec::Mlp { feature_dim, .. } | BackboneSpec::Conv { feature_dim, .. } => {
                *feature_dim
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub backbone: BackboneSpec,
    pub leaky_slope: f64,
    pub noise_dim: usize,
    pub gen_hidden: Vec<usize>,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::Mlp {
                hidden: vec![128, 128],
                feature_dim: 64,
            },
            leaky_slope: 0.2,
            noise_dim: 32,
            gen_hidden: vec![128, 128],
        }
    }
}

/// A fully resolved experiment.
///
/// `ipm = None` describes the purely supervised baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ipm: Option<IpmKind>,
    pub formulation: CriticFormulation,
    pub placements: Vec<Placement>,
    pub norm: NormalizationKind,
    pub hyper: HyperParams,
    pub dataset: DatasetSpec,
    pub n_labeled: usize,
    pub arch: ArchSpec,
    pub seed: u64,
}

/// File form of the config: optional fields are resolved against defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    ipm: Option<IpmKind>,
    formulation: CriticFormulation,
    #[serde(default)]
    placements: Option<Vec<Placement>>,
    #[serde(default = "no_norm")]
    norm: NormalizationKind,
    #[serde(default)]
    hyper: Option<Value>,
    dataset: DatasetSpec,
    n_labeled: usize,
    #[serde(default)]
    arch: Option<ArchSpec>,
    #[serde(default)]
    seed: u64,
}

fn no_norm() -> NormalizationKind {
    NormalizationKind::NoNorm
}

impl ExperimentConfig {
    /// Canonical synthetic setting: Fisher IPM, K+1 critic, no normalization.
    pub fn synthetic(classes: usize, n_per_class: usize, input_dim: usize, n_labeled: usize) -> Self {
        let ipm = IpmKind::Fisher;
        let formulation = CriticFormulation::KPlusOne;
        Self {
            ipm: Some(ipm),
            formulation,
            placements: default_placements(ipm, formulation),
            norm: NormalizationKind::NoNorm,
            hyper: default_hyperparams(ipm, formulation),
            dataset: DatasetSpec::Synthetic {
                classes,
                n_per_class,
                input_dim,
                seed: 0,
            },
            n_labeled,
            arch: ArchSpec::default(),
            seed: 0,
        }
    }

    /// Switches IPM and formulation, resetting hyperparameters and placements
    /// to their defaults for the new pair (epochs and batch size are kept).
    pub fn with_method(mut self, ipm: IpmKind, formulation: CriticFormulation) -> Self {
        let (epochs, batch) = (self.hyper.epochs, self.hyper.batch_size);
        self.ipm = Some(ipm);
        self.formulation = formulation;
        self.hyper = default_hyperparams(ipm, formulation);
        self.hyper.epochs = epochs;
        self.hyper.batch_size = batch;
        self.placements = default_placements(ipm, formulation);
        self
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(s)?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let raw: RawConfig = serde_json::from_value(value)?;
        let defaults_ipm = raw.ipm.unwrap_or(IpmKind::Fisher);
        let mut hyper = serde_json::to_value(default_hyperparams(defaults_ipm, raw.formulation))?;
        if let Some(h) = raw.hyper {
            let Value::Object(given) = h else {
                return Err(Error::Config("`hyper` must be an object".into()));
            };
            let base = hyper.as_object_mut().expect("hyper serializes to an object");
            for (k, v) in given {
                if !base.contains_key(&k) {
                    return Err(Error::Config(format!("unknown key `hyper.{k}`")));
                }
                base.insert(k, v);
            }
        }
        let placements = match (raw.placements, raw.ipm) {
            (Some(p), _) => p,
            (None, Some(ipm)) => default_placements(ipm, raw.formulation),
            (None, None) => Vec::new(),
        };
        Ok(Self {
            ipm: raw.ipm,
            formulation: raw.formulation,
            placements,
            norm: raw.norm,
            hyper: serde_json::from_value(hyper)?,
            dataset: raw.dataset,
            n_labeled: raw.n_labeled,
            arch: raw.arch.unwrap_or_default(),
            seed: raw.seed,
        })
    }

    /// Reads a config file, applying `key=value` overrides (dotted paths into
    /// the JSON document; values are parsed as JSON, falling back to strings).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    pub fn placement_for(&self, c: ConstraintKind) -> Option<ConstraintTarget> {
        self.placements
            .iter()
            .find(|p| p.constraint == c)
            .map(|p| p.target)
    }

    /// Short label for tables.
    pub fn label(&self) -> String {
        let ipm = self.ipm.map_or("supervised".to_string(), |i| i.to_string());
        let places: Vec<String> = self.placements.iter().map(ToString::to_string).collect();
        format!(
            "{}/{}/[{}]/{}",
            ipm,
            self.formulation,
            places.join(","),
            self.norm
        )
    }
}

pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path `{key}` crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub code: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, code: &'static str, message: impl Into<String>) {
        self.errors.push(Issue {
            code,
            message: message.into(),
        });
    }

    fn warn(&mut self, code: &'static str, message: impl Into<String>) {
        self.warnings.push(Issue {
            code,
            message: message.into(),
        });
    }

    pub fn has_error(&self, code: &str) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }

    pub fn has_warning(&self, code: &str) -> bool {
        self.warnings.iter().any(|e| e.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error[{}]: {}", e.code, e.message)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning[{}]: {}", w.code, w.message)?;
        }
        Ok(())
    }
}

/// Checks a config for combinations that cannot be run. Pure.
pub fn validate_config(cfg: &ExperimentConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let h = &cfg.hyper;

    match cfg.ipm {
        Some(ipm) => {
            let mut wanted: Vec<ConstraintKind> = ipm.constraints().to_vec();
            let mut given: Vec<ConstraintKind> = cfg.placements.iter().map(|p| p.constraint).collect();
            wanted.sort_by_key(|c| *c as u8);
            given.sort_by_key(|c| *c as u8);
            if wanted != given {
                r.error(
                    "placements_mismatch",
                    format!(
                        "{ipm} needs exactly one placement for each of {wanted:?}, got {given:?}"
                    ),
                );
            }
        }
        None => {
            if !cfg.placements.is_empty() {
                r.error(
                    "placements_mismatch",
                    "supervised baseline (no ipm) takes no constraint placements",
                );
            }
        }
    }

    if cfg.formulation == CriticFormulation::Plain {
        for p in &cfg.placements {
            if p.target != ConstraintTarget::FullCritic {
                r.error(
                    "plain_target",
                    format!("{p}: the plain critic has no f+/f- split; only f can be constrained"),
                );
            }
        }
    }

    if cfg.norm == NormalizationKind::BatchNorm {
        for p in cfg.placements.iter().filter(|p| p.constraint.uses_input_gradient()) {
            r.error(
                "bn_gradient_norm",
                format!(
                    "BN incompatible with gradient-norm constraint {p}: batch norm couples samples, so per-sample input gradients are ill-defined"
                ),
            );
        }
        if h.batch_size < 2 {
            r.error("bn_batch_size", "batch norm needs batch_size >= 2");
        }
    }

    if let NormalizationKind::LayerNorm {
        stats: StatsScope::PerChannel,
        ..
    } = cfg.norm
    {
        if matches!(cfg.arch.backbone, BackboneSpec::Mlp { .. }) {
            r.error(
                "ln_per_channel_dense",
                "per-channel layer-norm statistics need spatial extent; use a conv backbone",
            );
        }
    }

    if !cfg.placements.is_empty()
        && cfg
            .placements
            .iter()
            .all(|p| p.target == ConstraintTarget::FakePart)
    {
        r.warn(
            "fake_part_only",
            "all constraints on f- only: nothing bounds the real critic f+ except the CE term",
        );
    }

    let k = cfg.num_classes();
    if k < 2 {
        r.error("classes", format!("need at least 2 classes, got {k}"));
    }
    if let DatasetSpec::Synthetic { input_dim, n_per_class, .. } = cfg.dataset {
        if input_dim < 2 {
            r.error("input_dim", "synthetic data needs input_dim >= 2");
        }
        if n_per_class == 0 {
            r.error("n_per_class", "n_per_class must be positive");
        }
    }
    if matches!(cfg.arch.backbone, BackboneSpec::Conv { .. }) && cfg.dataset.sample_shape().len() != 3 {
        r.error("conv_on_vectors", "conv backbone needs image-shaped samples");
    }
    if let BackboneSpec::Conv { channels, strides, .. } = &cfg.arch.backbone {
        if channels.len() != strides.len() || channels.is_empty() {
            r.error("conv_layers", "conv backbone needs one stride per channel entry");
        }
    }
    if cfg.n_labeled < k {
        r.error("n_labeled", format!("n_labeled {} < classes {k}", cfg.n_labeled));
    }
    if cfg.n_labeled > cfg.dataset.train_size() {
        r.error(
            "n_labeled",
            format!(
                "n_labeled {} exceeds the train split ({})",
                cfg.n_labeled,
                cfg.dataset.train_size()
            ),
        );
    }

    let positive = [
        ("lr_critic", h.lr_critic),
        ("lr_gen", h.lr_gen),
        ("adam_eps", h.adam_eps),
        ("clip_c", h.clip_c),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            r.error("hyper_range", format!("{name} must be positive, got {v}"));
        }
    }
    let nonneg = [
        ("lambda_ce", h.lambda_ce),
        ("rho_f", h.rho_f),
        ("rho_s", h.rho_s),
        ("lambda_gp", h.lambda_gp),
        ("wd_backbone", h.wd_backbone),
        ("wd_v", h.wd_v),
    ];
    for (name, v) in nonneg {
        if !(v >= 0.0 && v.is_finite()) {
            r.error("hyper_range", format!("{name} must be nonnegative, got {v}"));
        }
    }
    for (name, v) in [("adam_beta1", h.adam_beta1), ("adam_beta2", h.adam_beta2)] {
        if !(v > 0.0 && v < 1.0) {
            r.error("hyper_range", format!("{name} must lie in (0, 1), got {v}"));
        }
    }
    if h.n_critic == 0 {
        r.error("hyper_range", "n_critic must be positive");
    }
    if h.batch_size == 0 {
        r.error("hyper_range", "batch_size must be positive");
    }
    if cfg.arch.noise_dim == 0 || cfg.arch.backbone.feature_dim() == 0 {
        r.error("arch", "noise_dim and feature_dim must be positive");
    }
    r
}
