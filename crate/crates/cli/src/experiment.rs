//! Training and evaluation pipelines.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use strb_core::deim::{adaptive_rb_deim, classical_deim_offline, initial_deim, seed_parameter};
use strb_core::estimators::{
    delta_l, delta_masslump, delta_p, delta_rb, delta_rb_l, efficiency, true_errors,
};
use strb_core::solvers::{DeimReducedModel, ReducedModel};
use strb_core::{
    fe_solve, greedy_rb, AdaptiveSettings, AdaptiveTrace, DeimData, Error, EstimateReport,
    GreedyMode, GreedySettings, GreedyTrace, HighFidelityModel, Parameter, RBBasis, Trajectory,
};

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

/// Trained reduced bases.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub basis: RBBasis,
    /// Interpolation data; `None` for plain reduced-basis modes.
    pub deim: Option<DeimData>,
    pub trace: Trace,
    pub offline_deim_seconds: f64,
    pub offline_rb_seconds: f64,
}

#[derive(Debug, Clone)]
pub enum Trace {
    Greedy(GreedyTrace),
    Adaptive(AdaptiveTrace),
    None,
}

impl Trace {
    fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        match self {
            Trace::Greedy(t) => t.write_csv(w),
            Trace::Adaptive(t) => t.write_csv(w),
            Trace::None => {
                let mut w = w;
                writeln!(w, "iteration,mu,delta_max,basis_size,seconds")
            }
        }
    }

    /// `(iteration, quantity maximized over the training set)`.
    fn history(&self) -> Vec<(usize, f64)> {
        match self {
            Trace::Greedy(t) => t
                .records
                .iter()
                .map(|r| (r.iteration, r.delta_max))
                .collect(),
            Trace::Adaptive(t) => t
                .records
                .iter()
                .map(|r| (r.iteration, r.eps_rb + r.eps_deim))
                .collect(),
            Trace::None => Vec::new(),
        }
    }
}

/// Test-set averages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Averages {
    pub speedup: f64,
    pub error: f64,
    pub estimator: f64,
    pub projection_error: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub basis_size: usize,
    pub deim_size: usize,
    pub offline_deim_seconds: f64,
    pub offline_rb_seconds: f64,
    pub averages: Averages,
    pub rows: Vec<EstimateReport>,
    pub trace: Trace,
}

impl RunReport {
    pub fn offline_seconds(&self) -> f64 {
        self.offline_deim_seconds + self.offline_rb_seconds
    }

    pub const CSV_HEADER: &'static str = "mode,n,steps,basis_size,deim_size,offline_seconds,offline_deim_seconds,offline_rb_seconds,avg_speedup,avg_error,avg_estimator,avg_projection_error,avg_efficiency,test_size";

    pub fn csv_row(&self) -> String {
        let a = &self.averages;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config.mode.name(),
            self.config.discretization.n,
            self.config.discretization.steps,
            self.basis_size,
            self.deim_size,
            self.offline_seconds(),
            self.offline_deim_seconds,
            self.offline_rb_seconds,
            a.speedup,
            a.error,
            a.estimator,
            a.projection_error,
            a.efficiency,
            self.rows.len()
        )
    }
}

/// Mean of `t_FE / t_reduced` over the test set.
pub fn metrics_speedup(fe_times: &[f64], reduced_times: &[f64]) -> Result<f64, CliError> {
    if fe_times.len() != reduced_times.len() || fe_times.is_empty() {
        return Err(CliError::Core(Error::DimensionMismatch {
            expected: fe_times.len(),
            found: reduced_times.len(),
        }));
    }
    let mut total = 0.0;
    for (&fe, &red) in fe_times.iter().zip(reduced_times) {
        if !(red > 0.0) || !(fe >= 0.0) {
            return Err(CliError::Core(Error::InvalidArgument(format!(
                "timings must be positive, got {fe} and {red}"
            ))));
        }
        total += fe / red;
    }
    Ok(total / fe_times.len() as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Averages of the per-parameter rows.
pub fn averages(rows: &[EstimateReport]) -> Result<Averages, CliError> {
    let fe: Vec<f64> = rows.iter().map(|r| r.t_fe_seconds).collect();
    let red: Vec<f64> = rows
        .iter()
        .map(|r| r.t_reduced_seconds.max(f64::MIN_POSITIVE))
        .collect();
    Ok(Averages {
        speedup: if rows.is_empty() {
            0.0
        } else {
            metrics_speedup(&fe, &red)?
        },
        error: mean(rows.iter().map(|r| r.err_projected_y)),
        estimator: mean(rows.iter().map(|r| r.online_estimate())),
        projection_error: mean(rows.iter().filter_map(|r| r.delta_p)),
        efficiency: mean(rows.iter().map(|r| r.efficiency)),
    })
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<HighFidelityModel, CliError> {
    build_model_with_steps(cfg, cfg.discretization.steps)
}

fn build_model_with_steps(
    cfg: &ExperimentConfig,
    steps: usize,
) -> Result<HighFidelityModel, CliError> {
    let problem = cfg.build_problem()?;
    let mut samples = cfg.training_set(&problem)?;
    samples.extend(cfg.test_set(&problem)?);
    problem
        .check_coefficients(&samples)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(HighFidelityModel::uniform(
        problem,
        cfg.discretization.n,
        steps,
    )?)
}

/// Runs the offline phase selected by `cfg.mode`.
pub fn train(cfg: &ExperimentConfig, model: &HighFidelityModel) -> Result<TrainedModel, CliError> {
    let train_set = cfg.training_set(&model.problem)?;
    let newton = cfg.newton_settings();
    let greedy = GreedySettings {
        newton,
        max_basis: cfg.limits.max_basis,
    };
    let tol = cfg.tolerances.eps_tol;
    let start = Instant::now();
    let trained = match cfg.mode {
        Mode::RbTrueError | Mode::RbEstimator => {
            let mode = if cfg.mode == Mode::RbTrueError {
                GreedyMode::TrueError
            } else {
                GreedyMode::Estimator
            };
            let (basis, trace) = greedy_rb(model, &train_set, tol, mode, &greedy)?;
            TrainedModel {
                basis,
                deim: None,
                trace: Trace::Greedy(trace),
                offline_deim_seconds: 0.0,
                offline_rb_seconds: start.elapsed().as_secs_f64(),
            }
        }
        Mode::RbDeimClassical => {
            let size = cfg.limits.deim_size.expect("validated");
            let deim = classical_deim_offline(model, &train_set, size, &newton)?;
            let deim_seconds = start.elapsed().as_secs_f64();
            let rb_start = Instant::now();
            let (basis, trace) = greedy_rb(
                model,
                &train_set,
                tol,
                GreedyMode::DeimEstimator(&deim),
                &greedy,
            )?;
            TrainedModel {
                basis,
                deim: Some(deim),
                trace: Trace::Greedy(trace),
                offline_deim_seconds: deim_seconds,
                offline_rb_seconds: rb_start.elapsed().as_secs_f64(),
            }
        }
        Mode::RbDeimAdaptive => {
            let seed = seed_parameter(model, &train_set)?;
            let initial = initial_deim(model, &seed, &newton)?;
            let settings = AdaptiveSettings {
                newton,
                max_basis: cfg.limits.max_basis,
                max_deim: cfg.limits.max_deim,
                ..AdaptiveSettings::default()
            };
            let t = &cfg.tolerances;
            let (basis, deim, trace) = adaptive_rb_deim(
                model, &train_set, t.eps_tol, t.eps_rb, t.eps_l, initial, &settings,
            )?;
            TrainedModel {
                basis,
                deim: Some(deim),
                trace: Trace::Adaptive(trace),
                offline_deim_seconds: 0.0,
                offline_rb_seconds: start.elapsed().as_secs_f64(),
            }
        }
    };
    info!(
        "trained {}: basis {}, interpolation {}",
        cfg.mode.name(),
        trained.basis.dim(),
        trained.deim.as_ref().map_or(0, DeimData::len)
    );
    Ok(trained)
}

enum Online<'a> {
    Rb(ReducedModel<'a>),
    Deim(DeimReducedModel<'a>, &'a DeimData),
}

/// Quantity that is zero when the reduced solution is exact; degenerate
/// validation terms are reported as zero then and omitted otherwise.
fn degenerate_to_option(
    value: strb_core::Result<f64>,
    fe: &Trajectory,
    reduced: &Trajectory,
) -> Result<Option<f64>, CliError> {
    match value {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateError(_)) => Ok((fe == reduced).then_some(0.0)),
        Err(e) => Err(e.into()),
    }
}

/// Evaluates every test parameter against a full-order reference solve.
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &HighFidelityModel,
    basis: &RBBasis,
    deim: Option<&DeimData>,
    test: &[Parameter],
) -> Result<Vec<EstimateReport>, CliError> {
    let newton = cfg.newton_settings();
    let online = match deim {
        Some(d) => Online::Deim(DeimReducedModel::new(model, basis, d)?, d),
        None => Online::Rb(ReducedModel::new(model, basis)),
    };
    let c_p = model.poincare_constant();
    test.par_iter()
        .map(|mu| -> Result<EstimateReport, CliError> {
            let (fe, fe_stats) = fe_solve(model, mu, &newton)?;
            let start = Instant::now();
            let coefficients = match &online {
                Online::Rb(r) => r.solve(mu, &newton)?.0,
                Online::Deim(r, _) => r.solve(mu, &newton)?.0,
            };
            let t_reduced = start.elapsed().as_secs_f64();
            let reduced = coefficients.lift(basis);
            let (estimator, dl, dmass) = match &online {
                Online::Rb(_) => (delta_rb(model, mu, &reduced)?, 0.0, None),
                Online::Deim(_, d) => (
                    delta_rb_l(model, mu, &reduced, d)?,
                    delta_l(model, mu, &reduced, d, c_p),
                    degenerate_to_option(
                        delta_masslump(model, mu, &fe, &reduced, d),
                        &fe,
                        &reduced,
                    )?,
                ),
            };
            let dp = degenerate_to_option(delta_p(model, mu, &fe, &reduced), &fe, &reduced)?;
            let err = true_errors(&model.ops, &fe, &reduced);
            Ok(EstimateReport {
                mu: mu.clone(),
                estimator,
                delta_l: dl,
                delta_p: dp,
                delta_mass: dmass,
                err_projected_y: err.projected_y,
                err_y: err.y,
                efficiency: efficiency(estimator + dl, err.projected_y),
                t_fe_seconds: fe_stats.seconds,
                t_reduced_seconds: t_reduced,
            })
        })
        .collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn mu_string(mu: &Parameter) -> String {
    mu.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn write_rows(dir: &Path, rows: &[EstimateReport], dim: usize) -> Result<(), CliError> {
    let mut w = create(dir, "per_parameter.csv")?;
    let names: Vec<String> = (1..=dim).map(|i| format!("mu{i}")).collect();
    writeln!(w, "{},{}", names.join(","), EstimateReport::CSV_HEADER)?;
    for r in rows {
        let mu: Vec<String> = r.mu.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", mu.join(","), r.csv_fields())?;
    }
    w.flush()?;
    let mut err = create(dir, "plot_error.csv")?;
    let mut est = create(dir, "plot_estimator.csv")?;
    writeln!(err, "mu,error")?;
    writeln!(est, "mu,estimator")?;
    for r in rows {
        writeln!(err, "{},{}", mu_string(&r.mu), r.err_projected_y)?;
        writeln!(est, "{},{}", mu_string(&r.mu), r.online_estimate())?;
    }
    err.flush()?;
    est.flush()?;
    Ok(())
}

fn write_trace(dir: &Path, trace: &Trace) -> Result<(), CliError> {
    let mut w = create(dir, "trace.csv")?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let mut h = create(dir, "plot_history.csv")?;
    writeln!(h, "iteration,delta_max")?;
    for (i, v) in trace.history() {
        writeln!(h, "{i},{v}")?;
    }
    h.flush()?;
    Ok(())
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn finish(
    cfg: &ExperimentConfig,
    model: &HighFidelityModel,
    trained: TrainedModel,
) -> Result<RunReport, CliError> {
    write_trace(&cfg.output_dir, &trained.trace)?;
    let test = cfg.test_set(&model.problem)?;
    let rows = evaluate(cfg, model, &trained.basis, trained.deim.as_ref(), &test)?;
    write_rows(&cfg.output_dir, &rows, cfg.parameter_dim())?;
    let report = RunReport {
        config: cfg.clone(),
        basis_size: trained.basis.dim(),
        deim_size: trained.deim.as_ref().map_or(0, DeimData::len),
        offline_deim_seconds: trained.offline_deim_seconds,
        offline_rb_seconds: trained.offline_rb_seconds,
        averages: averages(&rows)?,
        rows,
        trace: trained.trace,
    };
    let mut w = create(&cfg.output_dir, "report.csv")?;
    writeln!(w, "{}", RunReport::CSV_HEADER)?;
    writeln!(w, "{}", report.csv_row())?;
    w.flush()?;
    info!("averages: {:?}", report.averages);
    Ok(report)
}

/// Full offline/online experiment; writes all output files.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    prepare_output(cfg)?;
    let model = build_model(cfg)?;
    let trained = train(cfg, &model)?;
    finish(cfg, &model, trained)
}

/// Online-only experiment with previously trained bases.
pub fn run_with_bases(
    cfg: &ExperimentConfig,
    basis: RBBasis,
    deim: Option<DeimData>,
) -> Result<RunReport, CliError> {
    prepare_output(cfg)?;
    let model = build_model(cfg)?;
    if basis.n_dofs() != model.n_dofs() {
        return Err(CliError::Config(format!(
            "stored bases have {} unknowns but the mesh has {}",
            basis.n_dofs(),
            model.n_dofs()
        )));
    }
    finish(
        cfg,
        &model,
        TrainedModel {
            basis,
            deim,
            trace: Trace::None,
            offline_deim_seconds: 0.0,
            offline_rb_seconds: 0.0,
        },
    )
}

/// Trains and returns bases in storable form. Plain reduced-basis modes
/// store an empty interpolation block.
pub fn train_for_artifact(cfg: &ExperimentConfig) -> Result<(RBBasis, DeimData), CliError> {
    let model = build_model(cfg)?;
    let trained = train(cfg, &model)?;
    let deim = trained
        .deim
        .unwrap_or_else(|| DeimData::empty(model.n_dofs()));
    Ok((trained.basis, deim))
}

/// Test-set average of `Δ_P^δ` for each number of time steps.
pub fn sweep_projection_error(
    cfg: &ExperimentConfig,
    k_list: &[usize],
    reuse_basis: bool,
) -> Result<Vec<(usize, f64)>, CliError> {
    if k_list.is_empty() || k_list.windows(2).any(|w| w[0] >= w[1]) || k_list[0] == 0 {
        return Err(CliError::Config(
            "K list must be positive and strictly ascending".into(),
        ));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let shared = if reuse_basis {
        let largest = *k_list.last().expect("non-empty");
        let model = build_model_with_steps(cfg, largest)?;
        Some(train(cfg, &model)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &k in k_list {
        let model = build_model_with_steps(cfg, k)?;
        let owned;
        let trained = match &shared {
            Some(t) => t,
            None => {
                owned = train(cfg, &model)?;
                &owned
            }
        };
        let test = cfg.test_set(&model.problem)?;
        let rows = evaluate(cfg, &model, &trained.basis, trained.deim.as_ref(), &test)?;
        let avg = mean(rows.iter().filter_map(|r| r.delta_p));
        info!("K = {k}: average projection estimate {avg:e}");
        out.push((k, avg));
    }
    let mut w = create(&cfg.output_dir, "pdelta_vs_k.csv")?;
    writeln!(w, "K,avg_delta_p")?;
    for (k, v) in &out {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speedup_examples() {
        assert_eq!(metrics_speedup(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(metrics_speedup(&[10.0], &[2.0]).unwrap(), 5.0);
        assert!(metrics_speedup(&[1.0], &[0.0]).is_err());
        assert!(metrics_speedup(&[1.0], &[]).is_err());
    }
}
