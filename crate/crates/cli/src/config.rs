//! Experiment configuration: a plain-text document of dotted `key = value`
//! lines, and its validated in-memory form.
//!
//! Grammar (documented in the repository README):
//!
//! * one `key = value` pair per line; keys are dotted paths (`model.name`);
//! * `#` starts a comment (full-line or trailing); blank lines are ignored;
//! * lists are comma-separated (`seeds = 1, 2, 3`);
//! * every key is known; unknown keys are configuration errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use sovi_core::optimizer::{C0Choice, Scheme};

/// A configuration problem, always naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Which bundled model family to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ConjugateGaussian,
    BayesLinreg,
    BayesLogreg,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::ConjugateGaussian => "conjugate-gaussian",
            ModelKind::BayesLinreg => "bayes-linreg",
            ModelKind::BayesLogreg => "bayes-logreg",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "conjugate-gaussian" => Some(ModelKind::ConjugateGaussian),
            "bayes-linreg" => Some(ModelKind::BayesLinreg),
            "bayes-logreg" => Some(ModelKind::BayesLogreg),
            _ => None,
        }
    }
}

/// Model section: the family, its parameters, and either a dataset path or
/// the synthetic-data recipe knobs.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dataset: Option<PathBuf>,
    pub data_count: usize,
    pub data_seed: u64,
    pub latent_dim: usize,
    pub data_center: f64,
    pub data_scale: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub noise_var: f64,
    pub prior_precision: f64,
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub schemes: Vec<Scheme>,
    pub grad_samples: usize,
    pub hess_samples: usize,
    pub elbo_samples: Option<usize>,
    pub step_size: Option<f64>,
    pub first_order_step_size: Option<f64>,
    pub damping: f64,
    pub c0: C0Choice,
    pub max_step_norm: f64,
    pub neumann_max_steps: usize,
    pub literal_neumann: bool,
    pub grad_norm_tol: Option<f64>,
    pub param_tol: Option<f64>,
    pub grad_window: usize,
    pub max_iterations: usize,
    pub init_mean: f64,
    pub init_log_scale: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub write_manifest: bool,
    pub real_clock: bool,
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(idx) => &line[..idx],
        None => line,
    }
}

/// Parse the raw document into a key -> value map, rejecting malformed lines
/// and duplicate keys.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::new(
                "syntax",
                format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
            ));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::new(
                "syntax",
                format!("line {}: empty key", lineno + 1),
            ));
        }
        if pairs.insert(key.clone(), value).is_some() {
            return Err(ConfigError::new(&key, "duplicate key"));
        }
    }
    Ok(pairs)
}

struct Fields {
    pairs: BTreeMap<String, String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.pairs.remove(key)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| ConfigError::new(key, format!("not a number: `{v}`"))),
        }
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ConfigError::new(key, format!("not a number: `{v}`"))),
        }
    }

    /// A float tolerance that can be disabled with `none`.
    fn tol_or(&mut self, key: &str, default: Option<f64>) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) if v == "none" => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ConfigError::new(key, format!("not a number or `none`: `{v}`"))),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| ConfigError::new(key, format!("not a non-negative integer: `{v}`"))),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| ConfigError::new(key, format!("not an unsigned integer: `{v}`"))),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError::new(
                key,
                format!("expected true/false, got `{v}`"),
            )),
        }
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut f = Fields {
        pairs: parse_pairs(text)?,
    };

    let kind_raw = f
        .take("model.name")
        .ok_or_else(|| ConfigError::new("model.name", "required"))?;
    let kind = ModelKind::parse(&kind_raw).ok_or_else(|| {
        ConfigError::new(
            "model.name",
            format!(
                "unknown model `{kind_raw}` (expected conjugate-gaussian, bayes-linreg, bayes-logreg)"
            ),
        )
    })?;

    let inv_2pi = 1.0 / std::f64::consts::TAU;
    let model = ModelConfig {
        kind,
        dataset: f.take("model.dataset").map(PathBuf::from),
        data_count: f.usize_or("model.data_count", 20)?,
        data_seed: f.u64_or("model.data_seed", 777)?,
        latent_dim: f.usize_or(
            "model.latent_dim",
            if kind == ModelKind::ConjugateGaussian {
                1
            } else {
                5
            },
        )?,
        data_center: f.f64_or("model.data_center", 0.3)?,
        data_scale: f.f64_or("model.data_scale", 0.05)?,
        prior_mean: f.f64_or("model.prior_mean", 0.0)?,
        prior_var: f.f64_or("model.prior_var", inv_2pi)?,
        noise_var: f.f64_or("model.noise_var", inv_2pi)?,
        prior_precision: f.f64_or("model.prior_precision", std::f64::consts::TAU)?,
    };
    if kind == ModelKind::ConjugateGaussian && model.latent_dim != 1 {
        return Err(ConfigError::new(
            "model.latent_dim",
            "conjugate-gaussian is a 1-d model",
        ));
    }
    if model.latent_dim == 0 {
        return Err(ConfigError::new("model.latent_dim", "must be at least 1"));
    }

    let schemes_raw = f.take("schemes").unwrap_or_else(|| "all".to_string());
    let schemes: Vec<Scheme> = if schemes_raw.trim() == "all" {
        Scheme::ALL.to_vec()
    } else {
        let mut out = Vec::new();
        for part in schemes_raw.split(',') {
            let name = part.trim();
            let scheme = Scheme::parse(name)
                .ok_or_else(|| ConfigError::new("schemes", format!("unknown scheme `{name}`")))?;
            if !out.contains(&scheme) {
                out.push(scheme);
            }
        }
        out
    };
    if schemes.is_empty() {
        return Err(ConfigError::new("schemes", "at least one scheme required"));
    }

    let grad_samples = f.usize_or("estimator.grad_samples", 1000)?;
    let hess_samples = f.usize_or("estimator.hess_samples", grad_samples)?;
    if grad_samples == 0 {
        return Err(ConfigError::new(
            "estimator.grad_samples",
            "must be at least 1",
        ));
    }
    if hess_samples == 0 {
        return Err(ConfigError::new(
            "estimator.hess_samples",
            "must be at least 1",
        ));
    }
    let elbo_samples = match f.take("estimator.elbo_samples") {
        None => None,
        Some(v) => Some(v.parse::<usize>().map_err(|_| {
            ConfigError::new("estimator.elbo_samples", format!("not an integer: `{v}`"))
        })?),
    };
    if elbo_samples == Some(0) {
        return Err(ConfigError::new(
            "estimator.elbo_samples",
            "must be at least 1",
        ));
    }

    let step_size = f.opt_f64("control.step_size")?;
    if let Some(eps) = step_size {
        if eps <= 0.0 {
            return Err(ConfigError::new("control.step_size", "must be positive"));
        }
    }
    let first_order_step_size = f.opt_f64("control.first_order_step_size")?;
    if let Some(eps) = first_order_step_size {
        if eps <= 0.0 {
            return Err(ConfigError::new(
                "control.first_order_step_size",
                "must be positive",
            ));
        }
    }
    if schemes.contains(&Scheme::FirstOrder) && first_order_step_size.or(step_size).is_none() {
        return Err(ConfigError::new(
            "control.first_order_step_size",
            "required when the first-order scheme runs (no natural default exists)",
        ));
    }

    let damping = f.f64_or("control.damping", 0.0)?;
    if damping < 0.0 {
        return Err(ConfigError::new("control.damping", "must be non-negative"));
    }
    let c0 = match f.take("control.c0").as_deref() {
        None => C0Choice::Auto,
        Some("auto") => C0Choice::Auto,
        Some(v) => {
            let num = v.parse::<f64>().map_err(|_| {
                ConfigError::new("control.c0", format!("not `auto` or a number: `{v}`"))
            })?;
            if num <= 0.0 {
                return Err(ConfigError::new("control.c0", "must be positive"));
            }
            C0Choice::Fixed(num)
        }
    };
    let max_step_norm = f.f64_or("control.max_step_norm", 10.0)?;
    if max_step_norm <= 0.0 {
        return Err(ConfigError::new(
            "control.max_step_norm",
            "must be positive",
        ));
    }
    let neumann_max_steps = f.usize_or("control.neumann_max_steps", 200)?;
    if neumann_max_steps == 0 {
        return Err(ConfigError::new(
            "control.neumann_max_steps",
            "must be at least 1",
        ));
    }
    let literal_neumann = f.bool_or("control.literal_neumann", false)?;

    let grad_norm_tol = f.tol_or("criterion.grad_norm_tol", Some(1e-3))?;
    let param_tol = f.tol_or("criterion.param_tol", Some(1e-8))?;
    let grad_window = f.usize_or("criterion.grad_window", 5)?;
    let max_iterations = f.usize_or("criterion.max_iterations", 1000)?;

    let init_mean = f.f64_or("init.mean", 0.0)?;
    let init_log_scale = f.f64_or("init.log_scale", -1.0)?;

    let seeds_raw = f.take("seeds").unwrap_or_else(|| "1".to_string());
    let mut seeds = Vec::new();
    for part in seeds_raw.split(',') {
        let s = part.trim();
        if s.is_empty() {
            continue;
        }
        seeds.push(
            s.parse::<u64>().map_err(|_| {
                ConfigError::new("seeds", format!("not an unsigned integer: `{s}`"))
            })?,
        );
    }
    if seeds.is_empty() {
        return Err(ConfigError::new("seeds", "at least one seed required"));
    }

    let out_dir = PathBuf::from(f.take("output.dir").unwrap_or_else(|| "out".to_string()));
    let write_manifest = f.bool_or("output.manifest", true)?;
    let real_clock = match f.take("clock").as_deref() {
        None | Some("real") => true,
        Some("none") => false,
        Some(v) => {
            return Err(ConfigError::new(
                "clock",
                format!("expected real/none, got `{v}`"),
            ));
        }
    };

    if let Some((key, _)) = f.pairs.iter().next() {
        return Err(ConfigError::new(key, "unknown key"));
    }

    Ok(ExperimentConfig {
        model,
        schemes,
        grad_samples,
        hess_samples,
        elbo_samples,
        step_size,
        first_order_step_size,
        damping,
        c0,
        max_step_norm,
        neumann_max_steps,
        literal_neumann,
        grad_norm_tol,
        param_tol,
        grad_window,
        max_iterations,
        init_mean,
        init_log_scale,
        seeds,
        out_dir,
        write_manifest,
        real_clock,
    })
}
