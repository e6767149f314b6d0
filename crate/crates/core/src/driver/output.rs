use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunOutcome, TrajectoryRecord};
use crate::aggregator::{self, HedgeBound, STEP_TOLERANCE};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{BOOTSTRAP_STREAM, RNG_ALGORITHM};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPaths {
    pub trajectory: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

impl OutputPaths {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            trajectory: config.trajectory.clone(),
            summary: config.summary.clone(),
            plot: config.plot.clone(),
        }
    }
}

/// Everything needed to replay the random parts of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBundle {
    pub seed: u64,
    pub rng_algorithm: String,
    pub bootstrap_stream: u64,
    pub expert_streams: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub parameter_names: Vec<String>,
    pub theta_star: Vec<f64>,
    pub validation_objective: f64,
    pub steps_run: usize,
    pub converged: bool,
    pub hedge_bound: HedgeBound,
    pub final_mixing: Vec<f64>,
    pub seed_bundle: SeedBundle,
    pub trajectory_columns: Vec<String>,
    /// The run configuration in its `key = value` text form.
    pub config: String,
}

impl Summary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn new(outcome: &RunOutcome, model: &ModelSpec, config: &RunConfig) -> Self {
        Self {
            model: model.name().to_string(),
            parameter_names: model.param_names(),
            theta_star: outcome.theta_star.to_vec(),
            validation_objective: outcome.validation_objective,
            steps_run: outcome.steps_run,
            converged: outcome.converged,
            hedge_bound: outcome.bound,
            final_mixing: outcome.final_mixing.clone(),
            seed_bundle: SeedBundle {
                seed: config.seed,
                rng_algorithm: RNG_ALGORITHM.to_string(),
                bootstrap_stream: BOOTSTRAP_STREAM,
                expert_streams: format!("1..={}", config.experts),
            },
            trajectory_columns: trajectory_columns(
                &model.param_names(),
                config.experts,
                config.record_experts,
            ),
            config: config.to_text(),
        }
    }
}

/// Fixed column order of the trajectory CSV.
///
/// `n, tau, theta_bar_<param>..., pi_<k>..., r_<k>..., L_n, L, bound`,
/// followed by `theta_<k>_<param>...` when expert estimates are recorded.
/// Experts are numbered from 1.
pub fn trajectory_columns(params: &[String], experts: usize, with_experts: bool) -> Vec<String> {
    let mut cols = vec!["n".to_string(), "tau".to_string()];
    cols.extend(params.iter().map(|p| format!("theta_bar_{p}")));
    cols.extend((1..=experts).map(|k| format!("pi_{k}")));
    cols.extend((1..=experts).map(|k| format!("r_{k}")));
    cols.extend(["L_n", "L", "bound"].map(String::from));
    if with_experts {
        for k in 1..=experts {
            cols.extend(params.iter().map(|p| format!("theta_{k}_{p}")));
        }
    }
    cols
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

pub fn write_trajectory_csv(
    path: &Path,
    records: &[TrajectoryRecord],
    params: &[String],
    experts: usize,
) -> Result<()> {
    let with_experts = records.first().is_some_and(|r| r.experts.is_some());
    let mut w = csv_writer(path)?;
    let io = csv_io(path);
    w.write_record(trajectory_columns(params, experts, with_experts))
        .map_err(&io)?;
    for r in records {
        let mut row = vec![r.n.to_string(), r.tau.to_string()];
        row.extend(r.theta_bar.iter().map(f64::to_string));
        row.extend(r.pi.iter().map(f64::to_string));
        row.extend(r.risks.iter().map(f64::to_string));
        row.extend([r.mixture_loss, r.total_loss, r.bound].map(|v| v.to_string()));
        if let Some(ex) = &r.experts {
            row.extend(ex.iter().flatten().map(f64::to_string));
        }
        w.write_record(&row).map_err(&io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `(x..., y_data, y_model)` per original data point, model evaluated at `theta`.
pub fn plot_rows(data: &Dataset, model: &ModelSpec, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    data.view()
        .iter()
        .map(|(x, y)| {
            let mut row = x.to_vec();
            row.push(y);
            row.push(model.predict(theta, x)?);
            Ok(row)
        })
        .collect()
}

pub fn write_plot_csv(path: &Path, data: &Dataset, model: &ModelSpec, theta: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = csv_io(path);
    let mut header: Vec<String> = data.x_names().to_vec();
    header.push(format!("{}_data", data.y_name()));
    header.push(format!("{}_model", data.y_name()));
    w.write_record(&header).map_err(&io)?;
    for row in plot_rows(data, model, theta)? {
        w.write_record(row.iter().map(f64::to_string)).map_err(&io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes whichever of the three outputs have a path.
pub fn emit_outputs(
    outcome: &RunOutcome,
    data: &Dataset,
    model: &ModelSpec,
    config: &RunConfig,
    paths: &OutputPaths,
) -> Result<()> {
    if let Some(p) = &paths.trajectory {
        write_trajectory_csv(p, &outcome.trajectory, &model.param_names(), config.experts)?;
    }
    if let Some(p) = &paths.summary {
        write_summary(p, &Summary::new(outcome, model, config))?;
    }
    if let Some(p) = &paths.plot {
        write_plot_csv(p, data, model, &outcome.theta_star)?;
    }
    Ok(())
}

/// Mixing distributions and risks read back from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub pi: Vec<Vec<f64>>,
    pub risks: Vec<Vec<f64>>,
    pub mixture_loss: Vec<f64>,
    pub total_loss: Vec<f64>,
    pub bound: Vec<f64>,
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryTable> {
    let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(csv_io(path))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_io(path))?
        .iter()
        .map(String::from)
        .collect();
    let pick = |prefix: &str| -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(prefix)?.parse::<usize>().ok().map(|k| (k, i)))
            .collect();
        cols.sort_unstable();
        cols.into_iter().map(|(_, i)| i).collect()
    };
    let pi_cols = pick("pi_");
    let r_cols = pick("r_");
    if pi_cols.is_empty() || pi_cols.len() != r_cols.len() {
        return Err(bad("missing or mismatched pi_<k> / r_<k> columns".into()));
    }
    let named = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (ln_col, l_col, b_col) = (named("L_n")?, named("L")?, named("bound")?);
    let mut table = TrajectoryTable {
        pi: Vec::new(),
        risks: Vec::new(),
        mixture_loss: Vec::new(),
        total_loss: Vec::new(),
        bound: Vec::new(),
    };
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_io(path))?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad(format!("row {}: column {} is not a number", row + 2, c + 1)))
        };
        table.pi.push(pi_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
        table.risks.push(r_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?);
        table.mixture_loss.push(num(ln_col)?);
        table.total_loss.push(num(l_col)?);
        table.bound.push(num(b_col)?);
    }
    Ok(table)
}

/// Independent recomputation of a trajectory's weights and losses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryAudit {
    pub rows: usize,
    /// Largest gap between a recorded `pi_n` and the one implied by the risks.
    pub max_pi_deviation: f64,
    /// Largest gap between recorded and recomputed `L_n`, `L` or bound.
    pub max_loss_deviation: f64,
    pub step_violations: usize,
    pub bound_violations: usize,
    pub final_bound: HedgeBound,
}

impl TrajectoryAudit {
    pub fn passed(&self) -> bool {
        self.step_violations == 0
            && self.bound_violations == 0
            && self.max_pi_deviation <= 1e-9
            && self.max_loss_deviation <= 1e-9
            && self.final_bound.satisfied
    }
}

/// Replays the weight recursion from the recorded risks.
///
/// The first row's mixing distribution is taken as `w_0`, which is exact
/// because the initial weights sum to one.
pub fn verify_trajectory(table: &TrajectoryTable, beta: f64) -> Result<TrajectoryAudit> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
    }
    let log_beta = beta.ln();
    let mut log_w: Vec<f64> = table.pi.first().map_or(Vec::new(), |p| p.iter().map(|v| v.ln()).collect());
    let mut audit = TrajectoryAudit {
        rows: table.pi.len(),
        max_pi_deviation: 0.0,
        max_loss_deviation: 0.0,
        step_violations: 0,
        bound_violations: 0,
        final_bound: HedgeBound::from_log_weight_sum(0.0, 0.0, beta),
    };
    let mut total = 0.0;
    for n in 0..audit.rows {
        let pi = aggregator::mixing_from_log_weights(&log_w)?;
        let dev = pi
            .iter()
            .zip(&table.pi[n])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        audit.max_pi_deviation = audit.max_pi_deviation.max(dev);

        let risks = &table.risks[n];
        let loss = aggregator::mixture_loss(&pi, risks);
        total += loss;
        let ratio: f64 = pi.iter().zip(risks).map(|(p, r)| p * (r * log_beta).exp()).sum();
        if ratio > (1.0 - (1.0 - beta) * loss) * (1.0 + STEP_TOLERANCE) {
            audit.step_violations += 1;
        }
        for (lw, r) in log_w.iter_mut().zip(risks) {
            *lw += r * log_beta;
        }
        let bound = HedgeBound::from_log_weight_sum(total, aggregator::log_sum_exp(&log_w), beta);
        if !bound.satisfied {
            audit.bound_violations += 1;
        }
        for (recorded, fresh) in [
            (table.mixture_loss[n], loss),
            (table.total_loss[n], total),
            (table.bound[n], bound.bound),
        ] {
            let dev = (recorded - fresh).abs() / fresh.abs().max(1.0);
            audit.max_loss_deviation = audit.max_loss_deviation.max(dev);
        }
        audit.final_bound = bound;
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{run, RunConfig};

    fn small() -> (RunConfig, Dataset) {
        let data = Dataset::with_names(
            (0..8).map(|i| (vec![f64::from(i)], 2.0 * 1.6f64.powi(i).min(90.0))).collect(),
            vec!["t".into()],
            "N".into(),
        )
        .unwrap();
        let config = RunConfig {
            experts: 2,
            steps: 3,
            delta: Some(1e-5),
            record_experts: true,
            ..RunConfig::default()
        };
        (config, data)
    }

    #[test]
    fn trajectory_csv_shape() {
        let (config, data) = small();
        let out = run(&config, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&path, &out.trajectory, &ModelSpec::logistic().param_names(), 2).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "n,tau,theta_bar_N0,theta_bar_Ne,theta_bar_r,pi_1,pi_2,r_1,r_2,L_n,L,bound,\
             theta_1_N0,theta_1_Ne,theta_1_r,theta_2_N0,theta_2_Ne,theta_2_r"
        );
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 18));
    }

    #[test]
    fn summary_echoes_config() {
        let (config, data) = small();
        let out = run(&config, &data).unwrap();
        let summary = Summary::new(&out, &ModelSpec::logistic(), &config);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.json");
        write_summary(&path, &summary).unwrap();
        let back: Summary = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, summary);
        assert_eq!(RunConfig::parse_text(&back.config).unwrap(), config);
        assert!(back.hedge_bound.satisfied);
    }

    #[test]
    fn plot_rows_use_logistic_law() {
        let (config, data) = small();
        let out = run(&config, &data).unwrap();
        let params = crate::model::LogisticParams::from_slice(&out.theta_star);
        let rows = plot_rows(&data, &ModelSpec::logistic(), &out.theta_star).unwrap();
        assert_eq!(rows.len(), data.len());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[1], data.y(i));
            assert_eq!(row[2], crate::model::logistic_predict(&params, row[0]).unwrap());
        }
    }

    #[test]
    fn audit_accepts_real_runs_and_flags_tampering() {
        let (config, data) = small();
        let out = run(&RunConfig { steps: 40, ..config.clone() }, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectory_csv(&path, &out.trajectory, &ModelSpec::logistic().param_names(), 2).unwrap();
        let table = read_trajectory(&path).unwrap();
        let audit = verify_trajectory(&table, config.beta).unwrap();
        assert!(audit.passed(), "{audit:?}");
        assert_eq!(audit.rows, 40);

        let mut forged = table.clone();
        forged.bound[10] *= 0.5;
        assert!(!verify_trajectory(&forged, config.beta).unwrap().passed());
        assert!(verify_trajectory(&table, 1.5).is_err());
    }
}
