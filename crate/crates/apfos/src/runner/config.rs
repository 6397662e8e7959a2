//! Run configuration: TOML schema, validation and resolution.
//!
//! The anisotropy strength is carried as a decimal string so that values
//! like "1e-20" echo through manifests unchanged. Per-purpose seeds default
//! to fixed offsets of the global seed: initialization uses the seed
//! itself, collocation seed+1, observation noise seed+2.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::loss::{ForwardWeights, IdentWeights, NonApIdentWeights, NonApWeights};
use crate::network::LayerSpec;
use crate::optim::{AdamParams, LbfgsConfig, OptimizerChoice, StopRule};
use crate::problem::{CaseParams, ProblemInstance, Setup};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Apfos,
    Nonap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Identify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub setup: Setup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Decimal string, e.g. "1e-20"; preserved exactly in echoes.
    pub epsilon: String,
    pub n_interior: usize,
    #[serde(default)]
    pub n_dirichlet: usize,
    #[serde(default)]
    pub n_neumann: usize,
    pub grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collocation_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub neurons: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

/// Optional overrides; anything left out takes the documented default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub beta_d: Option<f64>,
    pub beta_n: Option<f64>,
    pub alpha_d: Option<f64>,
    pub alpha_n: Option<f64>,
    pub beta_e: Option<f64>,
    pub beta_f1: Option<f64>,
    pub beta_f2: Option<f64>,
    pub beta_f3: Option<f64>,
    pub beta_n1: Option<f64>,
    pub beta_n2: Option<f64>,
    pub alpha_e: Option<f64>,
    pub alpha_f: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Lbfgs,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub max_iters: usize,
    #[serde(default)]
    pub tol: f64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub snapshots: Vec<usize>,
    // Adam overrides
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    // L-BFGS overrides
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_line_steps: Option<usize>,
}

fn default_log_every() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    /// Initial guess for eps* (eps = exp(eps*)).
    #[serde(default)]
    pub eps_star0: f64,
    /// Phase-1 iterations (Adam on the coefficient).
    pub iter1: usize,
    /// Phase-2 iterations (joint L-BFGS).
    pub iter2: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam_lr: Option<f64>,
    /// When true, phase 1 also updates the network; default updates the
    /// coefficient alone.
    #[serde(default)]
    pub phase1_update_network: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Emit SVG slice plots alongside the CSVs.
    #[serde(default = "default_true")]
    pub svg: bool,
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identify: Option<IdentifyConfig>,
}

fn default_true() -> bool {
    true
}

/// Resolved quantities derived from the config, echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub epsilon: f64,
    pub layer_sizes: Vec<usize>,
    pub init_seed: u64,
    pub collocation_seed: u64,
    pub observation_seed: u64,
    pub mode: Mode,
}

/// A fully validated run: problem instance, network shape, optimizer and
/// weights with every default applied.
#[derive(Debug, Clone)]
pub struct ValidatedRun {
    pub config: RunConfig,
    pub instance: ProblemInstance,
    pub spec: LayerSpec,
    pub scheme: SchemeKind,
    pub mode: Mode,
    pub resolved: Resolved,
    pub optimizer: OptimizerChoice,
    pub stop: StopRule,
    pub log_every: usize,
    pub snapshots: Vec<usize>,
    pub forward_weights: ForwardWeights,
    pub nonap_weights: NonApWeights,
    pub ident_weights: IdentWeights,
    pub nonap_ident_weights: NonApIdentWeights,
    pub identify: Option<IdentifyConfig>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_toml_str(&text)
    }

    fn case_params(&self) -> Result<CaseParams, ConfigError> {
        match (
            self.problem.case,
            self.problem.theta,
            self.problem.m,
            self.problem.omega,
        ) {
            (Some(c), None, None, None) => {
                CaseParams::preset(c).map_err(|e| invalid(e.to_string()))
            }
            (None, Some(theta), Some(m), Some(omega)) => Ok(CaseParams { theta, m, omega }),
            _ => Err(invalid(
                "give either problem.case or all of problem.{theta, m, omega}",
            )),
        }
    }

    /// Validate against the mode requested by the CLI subcommand.
    pub fn validate(&self, mode: Mode) -> Result<ValidatedRun, ConfigError> {
        if let Some(m) = self.scheme.mode {
            if m != mode {
                return Err(invalid(format!(
                    "config declares scheme.mode {m:?} but the subcommand runs {mode:?}"
                )));
            }
        }
        let epsilon: f64 = self
            .problem
            .epsilon
            .trim()
            .parse()
            .map_err(|e| invalid(format!("problem.epsilon {:?}: {e}", self.problem.epsilon)))?;
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(invalid("problem.epsilon must be finite and >= 0"));
        }
        let case = self.case_params()?;
        let instance = ProblemInstance::new(self.problem.setup, case, epsilon);
        let dim = instance.dim();

        let arity = match self.scheme.kind {
            SchemeKind::Apfos => dim + 1,
            SchemeKind::Nonap => {
                if dim != 2 {
                    return Err(invalid(
                        "scheme.kind = \"nonap\" requires setup = \"2d\" (output arity 1)",
                    ));
                }
                1
            }
        };
        let spec = LayerSpec::uniform(
            dim,
            self.network.hidden_layers,
            self.network.neurons,
            arity,
        )
        .map_err(|e| invalid(format!("network: {e}")))?;

        if self.problem.n_interior == 0 {
            return Err(invalid("problem.n_interior must be >= 1"));
        }
        if self.problem.grid < 2 {
            return Err(invalid("problem.grid must be >= 2"));
        }
        if mode == Mode::Identify && self.identify.is_none() {
            return Err(invalid("identify mode needs an [identify] block"));
        }
        if let Some(id) = &self.identify {
            if id.noise < 0.0 {
                return Err(invalid("identify.noise must be >= 0"));
            }
        }

        let optimizer = match self.optimizer.kind {
            OptimizerKind::Adam => {
                let d = AdamParams::default();
                OptimizerChoice::Adam(AdamParams {
                    lr: self.optimizer.lr.unwrap_or(d.lr),
                    beta1: self.optimizer.beta1.unwrap_or(d.beta1),
                    beta2: self.optimizer.beta2.unwrap_or(d.beta2),
                    eps: self.optimizer.adam_eps.unwrap_or(d.eps),
                })
            }
            OptimizerKind::Lbfgs => {
                let d = LbfgsConfig::default();
                OptimizerChoice::Lbfgs(LbfgsConfig {
                    memory: self.optimizer.memory.unwrap_or(d.memory),
                    c1: self.optimizer.c1.unwrap_or(d.c1),
                    c2: self.optimizer.c2.unwrap_or(d.c2),
                    max_line_steps: self.optimizer.max_line_steps.unwrap_or(d.max_line_steps),
                })
            }
        };

        let w = &self.weights;
        let (n_f, n_d, n_n) = (
            self.problem.n_interior,
            self.problem.n_dirichlet,
            self.problem.n_neumann,
        );
        let fw = ForwardWeights::defaults(n_d);
        let forward_weights = ForwardWeights {
            dirichlet: w.beta_d.unwrap_or(fw.dirichlet),
            neumann: w.beta_n.unwrap_or(fw.neumann),
        };
        let nw = NonApWeights::defaults(n_d);
        let nonap_weights = NonApWeights {
            dirichlet: w.alpha_d.unwrap_or(nw.dirichlet),
            neumann: w.alpha_n.unwrap_or(nw.neumann),
        };
        let iw = IdentWeights::defaults(n_f, n_n);
        let ident_weights = IdentWeights {
            obs: w.beta_e.unwrap_or(iw.obs),
            f1: w.beta_f1.unwrap_or(iw.f1),
            f2: w.beta_f2.unwrap_or(iw.f2),
            f3: w.beta_f3.unwrap_or(iw.f3),
            n1: w.beta_n1.unwrap_or(iw.n1),
            n2: w.beta_n2.unwrap_or(iw.n2),
        };
        let niw = NonApIdentWeights::defaults(n_f, n_n);
        let nonap_ident_weights = NonApIdentWeights {
            obs: w.alpha_e.unwrap_or(niw.obs),
            interior: w.alpha_f.unwrap_or(niw.interior),
            neumann: w.alpha_n.unwrap_or(niw.neumann),
        };

        let resolved = Resolved {
            epsilon,
            layer_sizes: spec.sizes().to_vec(),
            init_seed: self.network.init_seed.unwrap_or(self.seed),
            collocation_seed: self
                .problem
                .collocation_seed
                .unwrap_or(self.seed.wrapping_add(1)),
            observation_seed: self
                .problem
                .observation_seed
                .unwrap_or(self.seed.wrapping_add(2)),
            mode,
        };

        Ok(ValidatedRun {
            config: self.clone(),
            instance,
            spec,
            scheme: self.scheme.kind,
            mode,
            resolved,
            optimizer,
            stop: StopRule {
                tol: self.optimizer.tol,
                max_iters: self.optimizer.max_iters,
            },
            log_every: self.optimizer.log_every,
            snapshots: self.optimizer.snapshots.clone(),
            forward_weights,
            nonap_weights,
            ident_weights,
            nonap_ident_weights,
            identify: self.identify.clone(),
        })
    }
}
