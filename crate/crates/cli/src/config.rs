//! Experiment configuration: a single JSON document plus `--set key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use dfm_core::datasets::{make_toy, ToySpec};
use dfm_core::paths::{tempered_source, BetaSchedule, ConditionalPath, Scheduler};
use dfm_core::pmf::{decode, Alphabet, JointPmf, Metric, Pmf};
use dfm_core::posterior::{ExactPosterior, PosteriorModel, TrainConfig, TrainableTabular};
use dfm_core::sampler::SamplerConfig;
use dfm_core::velocity::{FluxChoice, PathVelocity, WeightSpec};

/// Invalid or inconsistent configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphabetConfig {
    pub k: usize,
    #[serde(default)]
    pub mask_token: Option<usize>,
}

/// Target distribution: a toy generator or a JSON file holding a flat `K^D` table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetConfig {
    File { file: PathBuf },
    Toy(ToySpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Mixture,
    Metric,
    KineticOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceConfig {
    Uniform,
    /// `δ_mask`; needs `alphabet.mask_token`.
    Mask,
    /// `softmax(-β0 log stats)` with stats the mean token marginal of the target.
    Tempered { beta0: f64 },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerName {
    Linear,
    Cubic,
    KineticOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricConfig {
    AbsDiff,
    Hamming,
    Table(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub family: Family,
    pub source: SourceConfig,
    pub scheduler: SchedulerName,
    pub metric: MetricConfig,
    /// `β_t = c (t / (1 - t))^a`.
    pub c: f64,
    pub a: f64,
    /// Column label in comparison outputs; defaults to a generated name.
    pub label: Option<String>,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            family: Family::Mixture,
            source: SourceConfig::Uniform,
            scheduler: SchedulerName::Linear,
            metric: MetricConfig::AbsDiff,
            c: 3.0,
            a: 1.0,
            label: None,
        }
    }
}

impl PathConfig {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let src = match &self.source {
            SourceConfig::Uniform => "uniform".to_string(),
            SourceConfig::Mask => "mask".to_string(),
            SourceConfig::Tempered { beta0 } => format!("tempered{beta0}"),
            SourceConfig::Explicit(_) => "explicit".to_string(),
        };
        match self.family {
            Family::Mixture => format!("mixture_{}_{src}", scheduler_name(self.scheduler)),
            Family::Metric => format!("metric_c{}_a{}", self.c, self.a),
            Family::KineticOptimal => format!("kinetic_optimal_{src}"),
        }
    }
}

fn scheduler_name(s: SchedulerName) -> &'static str {
    match s {
        SchedulerName::Linear => "linear",
        SchedulerName::Cubic => "cubic",
        SchedulerName::KineticOptimal => "ko",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxName {
    ClosedForm,
    Stable,
    Indicator,
    TauIndicator,
    Power,
    PowerInf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityConfig {
    pub flux: FluxName,
    /// Exponent of the `power` flux.
    pub alpha: f64,
    /// Overrides `sampler.corrector_strength` when set.
    pub corrector_strength: Option<f64>,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self {
            flux: FluxName::ClosedForm,
            alpha: 2.0,
            corrector_strength: None,
        }
    }
}

impl VelocityConfig {
    pub fn choice(&self) -> FluxChoice {
        match self.flux {
            FluxName::ClosedForm => FluxChoice::ClosedForm,
            FluxName::Stable => FluxChoice::Stable,
            FluxName::Indicator => FluxChoice::Indicator,
            FluxName::TauIndicator => FluxChoice::Weighted(WeightSpec::TauIndicator),
            FluxName::Power => FluxChoice::Weighted(WeightSpec::TauPower(self.alpha)),
            FluxName::PowerInf => FluxChoice::Weighted(WeightSpec::TauPowerInf),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Trajectories per run.
    pub n: usize,
    /// NFE values; each sets `h = t_end / nfe` and adds one TV row per path.
    pub nfe_sweep: Vec<usize>,
    /// Corrector strengths, one marginal report each.
    pub corrector_sweep: Vec<f64>,
    /// Extra paths compared in the NFE sweep.
    pub compare_paths: Vec<PathConfig>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            nfe_sweep: Vec::new(),
            corrector_sweep: Vec::new(),
            compare_paths: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElboSection {
    pub n_samples: usize,
    pub t_cutoff: f64,
    pub use_kappa_cov: bool,
    /// Explicit probes; when absent, `n_probes` draws from the target, or its whole
    /// support if `n_probes` is absent too.
    pub probes: Option<Vec<Vec<usize>>>,
    pub n_probes: Option<usize>,
    pub ode_steps: usize,
    /// Extra paths evaluated on the same probes.
    pub compare_paths: Vec<PathConfig>,
}

impl Default for ElboSection {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            t_cutoff: 1.0 - 1e-3,
            use_kappa_cov: false,
            probes: None,
            n_probes: None,
            ode_steps: 2_000,
            compare_paths: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Further SGD steps to run (on top of a resumed model's).
    pub steps: u64,
    pub lr: f64,
    pub bins: usize,
    pub batch_size: usize,
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            lr: d.lr,
            bins: d.bins,
            batch_size: d.batch_size,
            resume_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorConfig {
    Exact,
    /// Tabular model saved by `train`.
    Model(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Jsonl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json, Format::Jsonl],
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alphabet: AlphabetConfig,
    pub dims: usize,
    pub target: TargetConfig,
    pub path: PathConfig,
    pub velocity: VelocityConfig,
    pub posterior: PosteriorConfig,
    pub sampler: SamplerConfig,
    pub sample: SampleConfig,
    pub elbo: ElboSection,
    pub train: TrainSection,
    pub output: OutputConfig,
    /// Overrides the sampler, ELBO and training seeds when set.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alphabet: AlphabetConfig { k: 3, mask_token: None },
            dims: 2,
            target: TargetConfig::Toy(ToySpec::RandomSparse {
                k: 3,
                dims: 2,
                seed: 0,
                sparsity: 0.5,
            }),
            path: PathConfig::default(),
            velocity: VelocityConfig::default(),
            posterior: PosteriorConfig::Exact,
            sampler: SamplerConfig::default(),
            sample: SampleConfig::default(),
            elbo: ElboSection::default(),
            train: TrainSection::default(),
            output: OutputConfig::default(),
            seed: None,
        }
    }
}

/// Applies `a.b.c=value` to a JSON document; `value` is parsed as JSON when it can
/// be, and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(config_err(format!("empty key segment in `{key}`")));
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads `file` (or starts from the defaults) and applies overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match file {
            Some(f) => {
                let text = std::fs::read_to_string(f)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", f.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| config_err(format!("malformed JSON in {}: {e}", f.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| config_err(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON of everything except the output section.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
        }
        let digest = Sha256::digest(serde_json::to_string(&v).expect("json").as_bytes());
        hex::encode(digest)
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(self.alphabet.k, self.alphabet.mask_token).map_err(|e| config_err(e.to_string()))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let mut s = self.sampler.clone();
        if let Some(c) = self.velocity.corrector_strength {
            s.corrector_strength = c;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    pub fn elbo_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.train.steps,
            lr: self.train.lr,
            bins: self.train.bins,
            batch_size: self.train.batch_size,
            seed: self.seed.unwrap_or(0),
        }
    }

    /// The target on the configured alphabet. A target over the `K - 1` non-mask
    /// tokens is padded with a zero-mass mask column.
    pub fn target(&self) -> Result<JointPmf> {
        let q = match &self.target {
            TargetConfig::Toy(spec) => make_toy(spec).map_err(|e| config_err(format!("target: {e}")))?,
            TargetConfig::File { file } => {
                let text = std::fs::read_to_string(file)
                    .map_err(|e| config_err(format!("cannot read target {}: {e}", file.display())))?;
                let table: Vec<f64> =
                    serde_json::from_str(&text).map_err(|e| config_err(format!("target file: {e}")))?;
                JointPmf::from_table(self.alphabet.k, self.dims, table)
                    .map_err(|e| config_err(format!("target file: {e}")))?
            }
        };
        if q.dims() != self.dims {
            return Err(config_err(format!("target has {} dims, config has {}", q.dims(), self.dims)));
        }
        let (k, mask) = (self.alphabet.k, self.alphabet.mask_token);
        if q.k() == k {
            if let Some(m) = mask {
                if q.support().iter().any(|x| x.contains(&m)) {
                    return Err(config_err("target puts mass on the mask token"));
                }
            }
            return Ok(q);
        }
        if q.k() + 1 == k && mask == Some(k - 1) {
            let table = (0..k.pow(self.dims as u32))
                .map(|idx| {
                    let x = decode(idx, k, self.dims);
                    if x.contains(&(k - 1)) {
                        0.0
                    } else {
                        q.prob(&x)
                    }
                })
                .collect();
            return JointPmf::from_table(k, self.dims, table).map_err(|e| config_err(e.to_string()));
        }
        Err(config_err(format!("target alphabet {} does not match alphabet.k = {k}", q.k())))
    }

    /// Checks cross-field consistency and builds every derived object once.
    pub fn validate(&self) -> Result<()> {
        self.alphabet()?;
        if self.dims == 0 {
            return Err(config_err("dims must be positive"));
        }
        let q = self.target()?;
        self.build_path(&self.path, &q)?;
        for p in self.sample.compare_paths.iter().chain(&self.elbo.compare_paths) {
            self.build_path(p, &q)?;
        }
        self.sampler_config().validate().map_err(|e| config_err(e.to_string()))?;
        if let FluxName::Power = self.velocity.flux {
            if !(self.velocity.alpha >= 1.0) {
                return Err(config_err(format!("power flux needs alpha >= 1, got {}", self.velocity.alpha)));
            }
        }
        if !(self.elbo.t_cutoff > 0.0 && self.elbo.t_cutoff < 1.0) {
            return Err(config_err("elbo.t_cutoff must lie in (0, 1)"));
        }
        if let Some(probes) = &self.elbo.probes {
            let alphabet = self.alphabet()?;
            for x in probes {
                if x.len() != self.dims {
                    return Err(config_err(format!("probe {x:?} has the wrong length")));
                }
                for &v in x {
                    alphabet.check_token(v).map_err(|e| config_err(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn source(&self, src: &SourceConfig, q: &JointPmf) -> Result<Pmf> {
        let k = self.alphabet.k;
        let p = match src {
            SourceConfig::Uniform => Pmf::uniform(k),
            SourceConfig::Mask => {
                let m = self
                    .alphabet
                    .mask_token
                    .ok_or_else(|| config_err("mask source requires alphabet.mask_token"))?;
                Pmf::delta(k, m)
            }
            SourceConfig::Tempered { beta0 } => {
                let stats: Vec<f64> = (0..k)
                    .map(|x| (0..self.dims).map(|i| q.marginal(i)[x]).sum::<f64>() / self.dims as f64)
                    .collect();
                let stats = Pmf::new(stats).map_err(|e| config_err(e.to_string()))?;
                tempered_source(&stats, *beta0).map_err(|e| config_err(format!("tempered source: {e}")))?
            }
            SourceConfig::Explicit(v) => {
                if v.len() != k {
                    return Err(config_err(format!("explicit source has {} entries, K = {k}", v.len())));
                }
                Pmf::new(v.clone()).map_err(|e| config_err(format!("explicit source: {e}")))?
            }
        };
        Ok(p)
    }

    pub fn build_path(&self, pc: &PathConfig, q: &JointPmf) -> Result<ConditionalPath> {
        let k = self.alphabet.k;
        match pc.family {
            Family::Mixture => {
                let src = self.source(&pc.source, q)?;
                let sched = match pc.scheduler {
                    SchedulerName::Linear => Scheduler::Linear,
                    SchedulerName::Cubic => Scheduler::Cubic,
                    SchedulerName::KineticOptimal => Scheduler::kinetic_optimal(&src),
                };
                ConditionalPath::mixture(src, sched).map_err(|e| config_err(e.to_string()))
            }
            Family::KineticOptimal => Ok(ConditionalPath::kinetic_optimal(self.source(&pc.source, q)?)),
            Family::Metric => {
                if pc.source != SourceConfig::Uniform {
                    return Err(config_err("metric paths start from the uniform source"));
                }
                let metric = match &pc.metric {
                    MetricConfig::AbsDiff => Metric::abs_diff(k),
                    MetricConfig::Hamming => Metric::hamming(k),
                    MetricConfig::Table(rows) => {
                        Metric::try_from(rows.clone()).map_err(|e| config_err(format!("metric: {e}")))?
                    }
                };
                if metric.k() != k {
                    return Err(config_err(format!("metric is {}x{0}, K = {k}", metric.k())));
                }
                let beta = BetaSchedule::new(pc.c, pc.a).map_err(|e| config_err(e.to_string()))?;
                Ok(ConditionalPath::metric(metric, beta))
            }
        }
    }

    pub fn velocity(&self, path: ConditionalPath) -> PathVelocity {
        PathVelocity::new(path, self.velocity.choice())
    }

    pub fn posterior(&self, q: &JointPmf, path: &ConditionalPath) -> Result<Box<dyn PosteriorModel>> {
        match &self.posterior {
            PosteriorConfig::Exact => Ok(Box::new(
                ExactPosterior::new(q.clone(), path.clone()).map_err(|e| config_err(e.to_string()))?,
            )),
            PosteriorConfig::Model(file) => Ok(Box::new(load_model(file, self.alphabet.k, self.dims)?)),
        }
    }
}

pub fn load_model(file: &Path, k: usize, dims: usize) -> Result<TrainableTabular> {
    let text = std::fs::read_to_string(file)
        .map_err(|e| config_err(format!("cannot read model {}: {e}", file.display())))?;
    let m: TrainableTabular =
        serde_json::from_str(&text).map_err(|e| config_err(format!("model {}: {e}", file.display())))?;
    if m.k() != k || m.dims() != dims {
        return Err(config_err(format!(
            "model is K = {}, D = {}; config is K = {k}, D = {dims}",
            m.k(),
            m.dims()
        )));
    }
    Ok(m)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
