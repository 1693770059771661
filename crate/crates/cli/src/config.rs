//! Run configuration: a TOML file resolved into models, parameter spaces and
//! datasets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thermocal::model::{m3, m4, BuiltinModel, Hold, ThermalNetwork, ThermalNetworkSpec};
use thermocal::param::{Parameter, ParameterSpace, Prior, Transform};
use thermocal::posterior::{Curvature, OptimizeOptions, Posterior};
use thermocal::sampler::StepSize;
use thermocal::selection::{Combination, WaicForm};
use thermocal::synth::{building_signals, Signal};
use thermocal::{Dataset, Error, FilterOptions, Mode, Result, StateSpaceModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub parameters: Vec<ParameterConfig>,
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub compare: Option<CompareSection>,
    pub profile: Option<ProfileSection>,
    #[serde(default)]
    pub predict: PredictSection,
    pub synth: Option<SynthSection>,
    /// Derived quantities, e.g. `R_w = "R_o + R_i"`.
    #[serde(default)]
    pub combinations: BTreeMap<String, String>,
    /// Output directory used when `--out` is not given.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `M3` or `M4`.
    pub builtin: Option<String>,
    pub network: Option<ThermalNetworkSpec>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterConfig {
    pub name: String,
    /// Initial / nominal value in physical units.
    pub value: Option<f64>,
    pub transform: Option<Transform>,
    pub prior: Option<Prior>,
    #[serde(default)]
    pub fixed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Separate validation record; otherwise `path` is split.
    pub validation_path: Option<PathBuf>,
    pub identification_fraction: Option<f64>,
    pub identification_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalChoice {
    SecondOrder,
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Prior,
    Nominal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepConfig {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl StepConfig {
    pub fn to_step(&self) -> StepSize {
        match self {
            StepConfig::Scalar(v) => StepSize::Scalar(*v),
            StepConfig::Diagonal(v) => StepSize::Diagonal(v.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub iterations: usize,
    pub chains: usize,
    pub step: StepConfig,
    pub burn_in: Option<usize>,
    pub proposal: ProposalChoice,
    /// Random-walk covariance as a multiple of the inverse curvature at the mode.
    pub random_walk_scale: f64,
    pub init: InitChoice,
    pub curvature: CurvatureChoice,
    /// Iterations of step-size warm-up at the start of each chain.
    pub warmup: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            iterations: 8000,
            chains: 4,
            step: StepConfig::Scalar(0.3),
            burn_in: None,
            proposal: ProposalChoice::SecondOrder,
            random_walk_scale: 0.1,
            init: InitChoice::Prior,
            curvature: CurvatureChoice::GaussNewton,
            warmup: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureChoice {
    GaussNewton,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub hold: Hold,
    /// Standard deviation of the initial state prior.
    pub init_sd: f64,
    pub steady_state_tol: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        let f = FilterOptions::default();
        Self { hold: Hold::First, init_sd: 1.0, steady_state_tol: f.steady_state_tol }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Likelihood,
    Posterior,
}

impl Objective {
    pub fn mode(self) -> Mode {
        match self {
            Objective::Likelihood => Mode::Likelihood,
            Objective::Posterior => Mode::Map,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Likelihood => "likelihood",
            Objective::Posterior => "posterior",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub starts: usize,
    pub objective: Objective,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizeOptions::default();
        Self { starts: 6, objective: Objective::Likelihood, max_iter: o.max_iter, grad_tol: o.grad_tol, step_tol: o.step_tol }
    }
}

impl OptimizerSection {
    pub fn options(&self) -> OptimizeOptions {
        OptimizeOptions { max_iter: self.max_iter, grad_tol: self.grad_tol, step_tol: self.step_tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareModel {
    pub name: String,
    /// Config file of the model (relative to this config).
    pub config: PathBuf,
    /// Output directory of a `calibrate` run whose draws give WAIC.
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub models: Vec<CompareModel>,
    /// Pairs `[small, large]` of nested models.
    #[serde(default)]
    pub nested: Vec<[String; 2]>,
    #[serde(default)]
    pub waic_form: WaicForm,
    /// Largest number of posterior draws used for WAIC.
    #[serde(default = "default_waic_draws")]
    pub waic_draws: usize,
}

fn default_waic_draws() -> usize {
    400
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub parameter: String,
    pub from: f64,
    pub to: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Space the grid logarithmically.
    #[serde(default)]
    pub log: bool,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<Objective>,
}

fn default_points() -> usize {
    25
}

fn default_objectives() -> Vec<Objective> {
    vec![Objective::Likelihood, Objective::Posterior]
}

impl ProfileSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.from < self.to) || (self.log && self.from <= 0.0) {
            return Err(Error::Config("profile grid needs from < to, at least 2 points and positive bounds for log spacing".into()));
        }
        let n = self.points - 1;
        Ok((0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                if self.log {
                    (self.from.ln() + t * (self.to.ln() - self.from.ln())).exp()
                } else {
                    self.from + t * (self.to - self.from)
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    /// Output directory of a `calibrate` run (default: the `--out` directory).
    pub traces: Option<PathBuf>,
    /// Keep every `thin`-th draw; default is the rounded-up largest IACT.
    pub thin: Option<usize>,
    /// Largest number of draws simulated.
    pub max_draws: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_steps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Input signals in model input order; defaults to the building excitation.
    pub signals: Option<Vec<Signal>>,
    #[serde(default = "default_fraction")]
    pub identification_fraction: f64,
}

fn default_dt() -> f64 {
    600.0
}

fn default_fraction() -> f64 {
    14.0 / 24.0
}

impl SynthSection {
    pub fn signals(&self) -> Vec<Signal> {
        self.signals.clone().unwrap_or_else(building_signals)
    }
}

/// A configuration together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.config).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Resolves the model; every failure here is a configuration error.
    pub fn build(&self) -> Result<Problem> {
        Problem::new(self).map_err(|e| if e.is_validation() { e } else { Error::Config(e.to_string()) })
    }
}

/// A resolved model with its parameter space and nominal values.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub network: Arc<ThermalNetwork>,
    pub space: ParameterSpace,
    pub nominal: Vec<f64>,
}

impl Problem {
    fn new(loaded: &Loaded) -> Result<Self> {
        let cfg = &loaded.config;
        let (name, network, mut params, mut nominal) = match (&cfg.model.builtin, &cfg.model.network) {
            (Some(b), None) => {
                let BuiltinModel { name, network, space, nominal } = match b.to_ascii_uppercase().as_str() {
                    "M3" => m3(),
                    "M4" => m4(),
                    other => return Err(Error::Config(format!("unknown built-in model `{other}` (expected M3 or M4)"))),
                };
                (name.to_string(), Some(network), space.params().to_vec(), nominal)
            }
            (None, Some(_)) => ("network".to_string(), None, Vec::new(), Vec::new()),
            _ => return Err(Error::Config("model needs exactly one of `builtin` or `network`".into())),
        };
        let name = cfg.model.name.clone().unwrap_or(name);

        if network.is_none() {
            for p in &cfg.parameters {
                let value = p.value.ok_or_else(|| Error::Config(format!("parameter `{}` needs a value", p.name)))?;
                let transform = if p.fixed {
                    Transform::Fixed { value }
                } else {
                    p.transform.ok_or_else(|| Error::Config(format!("parameter `{}` needs a transform", p.name)))?
                };
                params.push(Parameter::new(&p.name, transform, p.prior.unwrap_or(Prior::Flat)));
                nominal.push(value);
            }
        } else {
            for p in &cfg.parameters {
                let i = params
                    .iter()
                    .position(|q| q.name == p.name)
                    .ok_or_else(|| Error::Config(format!("unknown parameter `{}`", p.name)))?;
                if let Some(v) = p.value {
                    nominal[i] = v;
                }
                if let Some(t) = p.transform {
                    params[i].transform = t;
                }
                if let Some(pr) = p.prior {
                    params[i].prior = pr;
                }
                if p.fixed || !params[i].is_free() {
                    params[i].transform = Transform::Fixed { value: nominal[i] };
                }
            }
        }
        let space = ParameterSpace::new(params)?;
        space.to_unconstrained(&nominal)?;
        let network = match network {
            Some(n) => n,
            None => ThermalNetwork::new(cfg.model.network.clone().expect("checked above"), &space.names())?,
        };
        Ok(Self { name, network: Arc::new(network), space, nominal })
    }

    pub fn posterior(&self, loaded: &Loaded, data: Arc<Dataset>) -> Result<Posterior> {
        let mut p = Posterior::new(self.network.clone(), self.space.clone(), data)?;
        let f = &loaded.config.filter;
        p.hold = f.hold;
        p.init_sd = f.init_sd;
        p.filter.steady_state_tol = f.steady_state_tol;
        p.curvature = match loaded.config.sampler.curvature {
            CurvatureChoice::GaussNewton => Curvature::GaussNewton,
            CurvatureChoice::Full => Curvature::Full,
        };
        Ok(p)
    }

    pub fn combinations(&self, loaded: &Loaded) -> Result<Vec<Combination>> {
        loaded.config.combinations.iter().map(|(k, v)| Combination::parse(k, v)).collect()
    }
}

/// Identification and optional validation records.
#[derive(Debug, Clone)]
pub struct Records {
    pub identification: Dataset,
    pub validation: Option<Dataset>,
}

pub fn load_records(loaded: &Loaded, problem: &Problem) -> Result<Records> {
    let data = loaded
        .config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a [data] section".into()))?;
    let inputs = problem.network.input_names().to_vec();
    let outputs = problem.network.output_names().to_vec();
    let full = Dataset::read_csv(loaded.resolve(&data.path), &inputs, &outputs)?;
    if let Some(v) = &data.validation_path {
        let validation = Dataset::read_csv(loaded.resolve(v), &inputs, &outputs)?;
        return Ok(Records { identification: full, validation: Some(validation) });
    }
    let cut = match (data.identification_steps, data.identification_fraction) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either identification_steps or identification_fraction, not both".into()))
        }
        (Some(n), None) => Some(n),
        (None, Some(f)) if f > 0.0 && f < 1.0 => Some((f * full.len() as f64).round() as usize),
        (None, Some(f)) if f == 1.0 => None,
        (None, Some(f)) => return Err(Error::Config(format!("identification_fraction {f} must be in (0, 1]"))),
        (None, None) => None,
    };
    match cut {
        Some(n) => {
            let (identification, validation) = full.split_at(n)?;
            Ok(Records { identification, validation: Some(validation) })
        }
        None => Ok(Records { identification: full, validation: None }),
    }
}
