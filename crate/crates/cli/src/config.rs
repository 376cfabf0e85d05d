//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node,
    Value,
};
use serde::{Deserialize, Serialize};
use strb_core::problem::SeparableSource;
use strb_core::{
    example1_with_final_time, example2_with_final_time, sample_grid, AdmissibleSet, NewtonSettings,
    Parameter, ProblemDefinition,
};

use crate::CliError;

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "STRB_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    RbTrueError,
    RbEstimator,
    RbDeimClassical,
    RbDeimAdaptive,
}

impl Mode {
    pub fn uses_deim(self) -> bool {
        matches!(self, Mode::RbDeimClassical | Mode::RbDeimAdaptive)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::RbTrueError => "rb_true_error",
            Mode::RbEstimator => "rb_estimator",
            Mode::RbDeimClassical => "rb_deim_classical",
            Mode::RbDeimAdaptive => "rb_deim_adaptive",
        }
    }
}

/// User-defined problem. Expressions are evaluated with `evalexpr`; the
/// variables `t`, `x1`, `x2`, `mu1 … mup` and `pi` are available and
/// functions are spelled `math::sin`, `math::sqrt`, `math::abs`, ….
/// Integer literals divide as integers, so write `0.5` rather than `1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub final_time: f64,
    /// Diffusion `c(μ)`.
    pub c: String,
    /// Reaction `a(μ)`.
    pub a: String,
    /// Spatial load factors in `x1`, `x2`.
    pub spatial: Vec<String>,
    /// Parameter factors, one per spatial factor.
    pub beta: Vec<String>,
    /// Temporal factor in `t`.
    pub gamma: String,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Example1,
    Example2,
    Custom(CustomProblem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    /// Subdivisions per direction, `1/h`.
    pub n: usize,
    /// Number of time steps `K`.
    pub steps: usize,
    pub final_time: Option<f64>,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            n: 50,
            steps: 400,
            final_time: None,
        }
    }
}

/// Equidistant grid counts per parameter component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub eps_tol: f64,
    #[serde(default = "default_eps_rb")]
    pub eps_rb: f64,
    #[serde(default = "default_eps_l")]
    pub eps_l: f64,
}

fn default_eps_rb() -> f64 {
    1e-4
}

fn default_eps_l() -> f64 {
    1e-5
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_tol: 1e-3,
            eps_rb: default_eps_rb(),
            eps_l: default_eps_l(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        let d = NewtonSettings::default();
        Self {
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisLimits {
    /// Interpolation size for `rb_deim_classical`.
    pub deim_size: Option<usize>,
    pub max_basis: usize,
    pub max_deim: usize,
}

impl Default for BasisLimits {
    fn default() -> Self {
        Self {
            deim_size: None,
            max_basis: 200,
            max_deim: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seed for randomized checks; training and evaluation are deterministic.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub discretization: Discretization,
    pub sampling: Sampling,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub limits: BasisLimits,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies the output-directory override.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.discretization;
        if d.n < 2 {
            return bad(format!("discretization.n must be at least 2, got {}", d.n));
        }
        if d.steps < 1 {
            return bad("discretization.steps must be positive".into());
        }
        if let Some(t) = d.final_time {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!(
                    "discretization.final_time must be positive, got {t}"
                ));
            }
        }
        let t = &self.tolerances;
        if !(t.eps_tol > 0.0) {
            return bad("tolerances.eps_tol must be positive".into());
        }
        if self.mode == Mode::RbDeimAdaptive {
            if !(t.eps_rb > 0.0 && t.eps_l > 0.0) {
                return bad("tolerances.eps_rb and eps_l must be positive".into());
            }
            if t.eps_tol < t.eps_rb + t.eps_l {
                return bad(format!(
                    "eps_tol = {} is smaller than eps_rb + eps_l = {}",
                    t.eps_tol,
                    t.eps_rb + t.eps_l
                ));
            }
        }
        if self.mode == Mode::RbDeimClassical && !matches!(self.limits.deim_size, Some(l) if l > 0)
        {
            return bad("rb_deim_classical needs limits.deim_size > 0".into());
        }
        self.newton_settings()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let dim = self.parameter_dim();
        for (name, counts) in [
            ("train", &self.sampling.train),
            ("test", &self.sampling.test),
        ] {
            if counts.len() != dim {
                return bad(format!(
                    "sampling.{name} needs {dim} counts, got {}",
                    counts.len()
                ));
            }
        }
        if let ProblemConfig::Custom(c) = &self.problem {
            if c.spatial.is_empty() || c.spatial.len() != c.beta.len() {
                return bad(
                    "custom problem needs matching, non-empty spatial and beta lists".into(),
                );
            }
        }
        Ok(())
    }

    pub fn parameter_dim(&self) -> usize {
        match &self.problem {
            ProblemConfig::Example1 => 1,
            ProblemConfig::Example2 => 2,
            ProblemConfig::Custom(c) => c.lower.len(),
        }
    }

    pub fn newton_settings(&self) -> NewtonSettings {
        NewtonSettings {
            tolerance: self.newton.tolerance,
            max_iterations: self.newton.max_iterations,
        }
    }

    pub fn build_problem(&self) -> Result<ProblemDefinition, CliError> {
        let t = self.discretization.final_time;
        Ok(match &self.problem {
            ProblemConfig::Example1 => example1_with_final_time(t.unwrap_or(20.0)),
            ProblemConfig::Example2 => example2_with_final_time(t.unwrap_or(10.0)),
            ProblemConfig::Custom(c) => {
                let mut p = build_custom(c)?;
                if let Some(t) = t {
                    p.final_time = t;
                }
                p
            }
        })
    }

    pub fn training_set(&self, problem: &ProblemDefinition) -> Result<Vec<Parameter>, CliError> {
        sample_grid(&problem.set, &self.sampling.train).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn test_set(&self, problem: &ProblemDefinition) -> Result<Vec<Parameter>, CliError> {
        sample_grid(&problem.set, &self.sampling.test).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Compiled expression over named scalar variables.
struct Expr {
    node: Node<DefaultNumericTypes>,
    source: String,
}

impl Expr {
    fn compile(source: &str, allowed: &[String]) -> Result<Self, CliError> {
        let node = build_operator_tree::<DefaultNumericTypes>(source)
            .map_err(|e| CliError::Config(format!("cannot parse {source:?}: {e}")))?;
        for var in node.iter_read_variable_identifiers() {
            if var != "pi" && !allowed.iter().any(|a| a == var) {
                return Err(CliError::Config(format!(
                    "unknown variable {var:?} in {source:?}"
                )));
            }
        }
        Ok(Self {
            node,
            source: source.to_string(),
        })
    }

    fn eval(&self, vars: &[(&str, f64)]) -> f64 {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))
            .expect("fresh context");
        for (name, v) in vars {
            ctx.set_value((*name).into(), Value::Float(*v))
                .expect("fresh context");
        }
        match self.node.eval_number_with_context(&ctx) {
            Ok(v) => v,
            Err(e) => panic!("evaluating {:?}: {e}", self.source),
        }
    }

    /// Evaluates once to surface runtime errors such as type mismatches
    /// before the expression is wrapped in an infallible closure.
    fn probe(&self, vars: &[(&str, f64)]) -> Result<(), CliError> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))
            .expect("fresh context");
        for (name, v) in vars {
            ctx.set_value((*name).into(), Value::Float(*v))
                .expect("fresh context");
        }
        self.node
            .eval_number_with_context(&ctx)
            .map(|_| ())
            .map_err(|e| CliError::Config(format!("cannot evaluate {:?}: {e}", self.source)))
    }
}

fn mu_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("mu{i}")).collect()
}

fn mu_vars<'a>(names: &'a [String], mu: &[f64]) -> Vec<(&'a str, f64)> {
    names
        .iter()
        .map(String::as_str)
        .zip(mu.iter().copied())
        .collect()
}

fn build_custom(c: &CustomProblem) -> Result<ProblemDefinition, CliError> {
    let set = AdmissibleSet::new(c.lower.clone(), c.upper.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let names = Arc::new(mu_names(set.dim()));
    let space_names = vec!["x1".to_string(), "x2".to_string()];
    let time_names = vec!["t".to_string()];
    let mid = set.midpoint();

    let coefficient = |src: &str| -> Result<strb_core::problem::CoefficientFn, CliError> {
        let e = Expr::compile(src, &names)?;
        e.probe(&mu_vars(&names, &mid))?;
        let names = Arc::clone(&names);
        Ok(Arc::new(move |mu: &[f64]| e.eval(&mu_vars(&names, mu))))
    };
    let c_fn = coefficient(&c.c)?;
    let a_fn = coefficient(&c.a)?;

    let mut spatial: Vec<strb_core::problem::SpatialFn> = Vec::new();
    for src in &c.spatial {
        let e = Expr::compile(src, &space_names)?;
        e.probe(&[("x1", 0.5), ("x2", 0.5)])?;
        spatial.push(Arc::new(move |x1, x2| e.eval(&[("x1", x1), ("x2", x2)])));
    }
    let beta_exprs = c
        .beta
        .iter()
        .map(|src| {
            let e = Expr::compile(src, &names)?;
            e.probe(&mu_vars(&names, &mid))?;
            Ok(e)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let beta_names = Arc::clone(&names);
    let beta: strb_core::problem::ParameterFactorFn = Arc::new(move |mu: &[f64]| {
        let vars = mu_vars(&beta_names, mu);
        beta_exprs.iter().map(|e| e.eval(&vars)).collect()
    });
    let gamma_expr = Expr::compile(&c.gamma, &time_names)?;
    gamma_expr.probe(&[("t", 0.0)])?;
    let gamma: strb_core::problem::TemporalFn = Arc::new(move |t| gamma_expr.eval(&[("t", t)]));

    let source = SeparableSource {
        spatial,
        beta,
        gamma,
    };
    let mut p = ProblemDefinition::from_separable("custom", set, c_fn, a_fn, source, c.final_time)
        .map_err(|e| CliError::Config(e.to_string()))?;
    p.breakpoints = c.breakpoints.clone();
    Ok(p)
}
