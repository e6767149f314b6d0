//! End-to-end aggregation loop.
//!
//! Each step `n`:
//! 1. every expert's risk is measured at its current estimate on the
//!    validation subsample,
//! 2. every expert takes one Euler-Maruyama step from the consensus
//!    estimate (or its own, in per-expert mode),
//! 3. weights and mixing distribution are updated from the risks,
//! 4. the new consensus is formed and compared with the old one.
//!
//! The loop ends when the consensus moves by at most `tol` or after the
//! last grid step. Invariants are checked every step and a violation aborts
//! the run.

mod config;
mod output;

pub use config::{load_vector, RunConfig, UpdateMode, CONFIG_KEYS};
pub use output::{
    emit_outputs, plot_rows, read_trajectory, trajectory_columns, verify_trajectory,
    write_plot_csv, write_summary, write_trajectory_csv, OutputPaths, SeedBundle, Summary,
    TrajectoryAudit, TrajectoryTable,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{self, HedgeBound, MixingState};
use crate::dataset::{bootstrap, Column, Dataset, SubsampleSet};
use crate::dynamics::{ExpertState, NoiseSchedule, TimeGrid};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};

/// True iff `||next - prev|| <= tol`.
///
/// # Panics
/// If the vectors differ in length.
pub fn check_convergence(prev: &[f64], next: &[f64], tol: f64) -> bool {
    assert_eq!(prev.len(), next.len(), "convergence check on vectors of different dimension");
    let sq: f64 = prev.iter().zip(next).map(|(a, b)| (a - b) * (a - b)).sum();
    sq.sqrt() <= tol
}

/// One completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub n: usize,
    pub tau: f64,
    /// Consensus estimate at the start of the step.
    pub theta_bar: Vec<f64>,
    /// Expert estimates at the start of the step, when recorded.
    pub experts: Option<Vec<Vec<f64>>>,
    /// Mixing distribution used for this step's loss.
    pub pi: Vec<f64>,
    pub risks: Vec<f64>,
    pub mixture_loss: f64,
    pub total_loss: f64,
    /// Cumulative bound after this step's weight update.
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub theta_star: ParamVector,
    pub steps_run: usize,
    pub converged: bool,
    pub trajectory: Vec<TrajectoryRecord>,
    pub bound: HedgeBound,
    pub final_mixing: Vec<f64>,
    pub final_experts: Vec<ParamVector>,
    /// Objective of `theta_star` on the validation subsample.
    pub validation_objective: f64,
    pub subsamples: SubsampleSet,
}

/// Resumable state of an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub n: usize,
    pub converged: bool,
    pub consensus: ParamVector,
    pub experts: Vec<ExpertState>,
    pub mixing: MixingState,
    pub trajectory: Vec<TrajectoryRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Loads the dataset named by `config.data`.
pub fn load_config_data(config: &RunConfig) -> Result<Dataset> {
    let path = config
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no data file given".into()))?;
    let x_cols = crate::dataset::parse_columns(&config.x_cols);
    let y_col: Column = config.y_col.parse().unwrap();
    crate::dataset::load_csv(path, &x_cols, &y_col)
}

/// Runs the configured model to completion.
pub fn run(config: &RunConfig, data: &Dataset) -> Result<RunOutcome> {
    Runner::new(config.clone(), data)?.run_to_end()
}

/// Step-by-step driver; [`run`] wraps it.
#[derive(Debug)]
pub struct Runner<'a> {
    config: RunConfig,
    data: &'a Dataset,
    model: ModelSpec,
    subsamples: SubsampleSet,
    grid: Option<TimeGrid>,
    schedule: NoiseSchedule,
    experts: Vec<ExpertState>,
    mixing: MixingState,
    consensus: ParamVector,
    n: usize,
    converged: bool,
    trajectory: Vec<TrajectoryRecord>,
}

impl<'a> Runner<'a> {
    /// Runner for the model named in the config; `omega0` is read from its file.
    pub fn new(config: RunConfig, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        let model = ModelSpec::by_name(&config.model)?;
        let omega0 = config.omega0.as_deref().map(load_vector).transpose()?;
        Self::with_model(config, data, model, omega0)
    }

    /// Runner for a caller-supplied model and optional initial weights.
    pub fn with_model(
        config: RunConfig,
        data: &'a Dataset,
        model: ModelSpec,
        omega0: Option<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.experts;
        let m = config.subsample_size.unwrap_or(data.len());
        let subsamples = bootstrap(data, k + 1, m, config.replacement, config.seed)?;
        let theta0 = match &config.theta0 {
            Some(t) => t.clone(),
            None => model.initial_params(data),
        };
        if theta0.len() != model.dim() {
            return Err(Error::Config(format!(
                "theta0 has {} entries but model {} has {} parameters",
                theta0.len(),
                model.name(),
                model.dim()
            )));
        }
        let theta0 = ParamVector::new(theta0)?;
        let mixing = match omega0 {
            Some(w) => {
                if w.len() != k {
                    return Err(Error::Config(format!(
                        "omega0 has {} entries for {k} experts",
                        w.len()
                    )));
                }
                MixingState::with_initial_weights(&w, config.beta, config.gamma)?
            }
            None => MixingState::new(k, config.beta, config.gamma)?,
        };
        let experts = (0..k)
            .map(|id| ExpertState::new(id, theta0.clone(), config.seed))
            .collect();
        Ok(Self {
            grid: config.time_grid()?,
            schedule: NoiseSchedule::new(config.epsilon)?,
            config,
            data,
            model,
            subsamples,
            experts,
            mixing,
            // every expert starts at theta0, so the initial consensus is theta0 itself
            consensus: theta0,
            n: 0,
            converged: false,
            trajectory: Vec::new(),
        })
    }

    /// Restores a runner from a checkpoint; subsamples are redrawn from the seed.
    pub fn resume(checkpoint: Checkpoint, data: &'a Dataset) -> Result<Self> {
        let mut runner = Self::new(checkpoint.config.clone(), data)?;
        runner.restore(checkpoint)?;
        Ok(runner)
    }

    pub fn resume_with_model(
        checkpoint: Checkpoint,
        data: &'a Dataset,
        model: ModelSpec,
    ) -> Result<Self> {
        let mut runner = Self::with_model(checkpoint.config.clone(), data, model, None)?;
        runner.restore(checkpoint)?;
        Ok(runner)
    }

    fn restore(&mut self, c: Checkpoint) -> Result<()> {
        if c.experts.len() != self.config.experts || c.mixing.experts() != self.config.experts {
            return Err(Error::Config("checkpoint does not match the configured expert count".into()));
        }
        self.n = c.n;
        self.converged = c.converged;
        self.consensus = c.consensus;
        self.experts = c.experts;
        self.mixing = c.mixing;
        self.trajectory = c.trajectory;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            n: self.n,
            converged: self.converged,
            consensus: self.consensus.clone(),
            experts: self.experts.clone(),
            mixing: self.mixing.clone(),
            trajectory: self.trajectory.clone(),
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn subsamples(&self) -> &SubsampleSet {
        &self.subsamples
    }

    pub fn experts(&self) -> &[ExpertState] {
        &self.experts
    }

    pub fn mixing(&self) -> &MixingState {
        &self.mixing
    }

    pub fn consensus(&self) -> &ParamVector {
        &self.consensus
    }

    pub fn steps_done(&self) -> usize {
        self.n
    }

    pub fn trajectory(&self) -> &[TrajectoryRecord] {
        &self.trajectory
    }

    pub fn is_finished(&self) -> bool {
        self.converged || self.grid.is_none_or(|g| self.n >= g.steps())
    }

    /// Performs one step; returns `false` once the run is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let grid = self.grid.expect("grid exists while steps remain");
        let n = self.n;
        let fail = |message: String| Error::Invariant { step: n, message };

        let pi_n = self.mixing.mixing().to_vec();
        let bar_n = self.consensus.clone();
        let recorded_experts = self
            .config
            .record_experts
            .then(|| self.experts.iter().map(|e| e.theta().to_vec()).collect());

        let risks = self.expert_risks(n)?;
        if let Some(r) = risks.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(fail(format!("risk {r} outside [0, 1)")));
        }
        self.advance_experts(&bar_n, &grid, n)?;

        let check = self.mixing.update(&risks)?;
        if !check.satisfied {
            return Err(fail(format!(
                "weight sum ratio {} exceeds 1 - (1 - beta) L_n = {}",
                check.weight_ratio, check.ratio_cap
            )));
        }
        self.mixing.check_simplex().map_err(fail)?;
        let (s_now, s_next) = (
            self.schedule.sigma(grid.tau(n)),
            self.schedule.sigma(grid.tau(n + 1)),
        );
        if self.schedule.epsilon() > 0.0 && (s_next.is_nan() || s_next >= s_now) {
            return Err(fail(format!("noise scale did not decrease: {s_now} -> {s_next}")));
        }

        let thetas: Vec<&[f64]> = self.experts.iter().map(|e| e.theta().as_slice()).collect();
        let bar_next = aggregator::consensus(&thetas, self.mixing.mixing())?;
        check_hull(&bar_next, &thetas).map_err(fail)?;

        let bound = self.mixing.hedge_bound();
        self.trajectory.push(TrajectoryRecord {
            n,
            tau: grid.tau(n),
            theta_bar: bar_n.to_vec(),
            experts: recorded_experts,
            pi: pi_n,
            risks,
            mixture_loss: check.mixture_loss,
            total_loss: bound.total_loss,
            bound: bound.bound,
        });
        self.converged = check_convergence(&bar_n, &bar_next, self.config.tol);
        self.consensus = bar_next;
        self.n += 1;
        Ok(true)
    }

    fn expert_risks(&self, n: usize) -> Result<Vec<f64>> {
        let validation = self.subsamples.validation(self.data);
        let risk = |e: &ExpertState| {
            self.mixing
                .risk(&self.model, e.theta(), validation)
                .map_err(|err| match err {
                    Error::Eval(source) => Error::Step {
                        expert: e.id(),
                        step: n,
                        source,
                    },
                    other => other,
                })
        };
        if self.config.parallel {
            self.experts.par_iter().map(risk).collect()
        } else {
            self.experts.iter().map(risk).collect()
        }
    }

    fn advance_experts(&mut self, bar_n: &ParamVector, grid: &TimeGrid, n: usize) -> Result<()> {
        let (model, data, subsamples) = (&self.model, self.data, &self.subsamples);
        let (schedule, mode) = (&self.schedule, self.config.mode);
        let step = |(k, e): (usize, &mut ExpertState)| {
            let sample = subsamples.training(data, k);
            match mode {
                UpdateMode::Consensus => e.consensus_step(bar_n, model, sample, grid, schedule, n),
                UpdateMode::PerExpert => e.expert_step(model, sample, grid, schedule, n),
            }
        };
        if self.config.parallel {
            self.experts.par_iter_mut().enumerate().try_for_each(step)
        } else {
            self.experts.iter_mut().enumerate().try_for_each(step)
        }
    }

    /// Steps until finished or until `limit` total steps have been taken.
    pub fn run_until(&mut self, limit: usize) -> Result<()> {
        while self.n < limit && self.step()? {}
        Ok(())
    }

    pub fn run_to_end(mut self) -> Result<RunOutcome> {
        while self.step()? {}
        self.finish()
    }

    pub fn finish(self) -> Result<RunOutcome> {
        let bound = self.mixing.hedge_bound();
        if !bound.satisfied {
            return Err(Error::Invariant {
                step: self.n,
                message: format!(
                    "cumulative loss {} exceeds bound {}",
                    bound.total_loss, bound.bound
                ),
            });
        }
        let validation_objective = self
            .model
            .objective(&self.consensus, self.subsamples.validation(self.data))?;
        Ok(RunOutcome {
            validation_objective,
            theta_star: self.consensus,
            steps_run: self.n,
            converged: self.converged,
            trajectory: self.trajectory,
            bound,
            final_mixing: self.mixing.mixing().to_vec(),
            final_experts: self.experts.iter().map(|e| e.theta().clone()).collect(),
            subsamples: self.subsamples,
        })
    }
}

fn check_hull(bar: &[f64], thetas: &[&[f64]]) -> std::result::Result<(), String> {
    for (j, &b) in bar.iter().enumerate() {
        let lo = thetas.iter().map(|t| t[j]).fold(f64::INFINITY, f64::min);
        let hi = thetas.iter().map(|t| t[j]).fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        if b < lo - slack || b > hi + slack {
            return Err(format!("consensus coordinate {j} = {b} outside [{lo}, {hi}]"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogisticParams;

    fn quadratic_config(steps: usize, delta: f64) -> RunConfig {
        RunConfig {
            model: "constant".into(),
            experts: 1,
            steps,
            delta: Some(delta),
            epsilon: 0.0,
            tol: 1e-12,
            theta0: Some(vec![0.0]),
            ..RunConfig::default()
        }
    }

    #[test]
    fn convergence_test_values() {
        assert!(check_convergence(&[1.0, 2.0], &[1.0, 2.0], 1e-300));
        assert!(check_convergence(&[0.0, 0.0], &[3.0, 4.0], 5.0));
        assert!(!check_convergence(&[0.0, 0.0], &[3.0, 4.0], 4.999));
    }

    #[test]
    #[should_panic(expected = "different dimension")]
    fn convergence_dimension_mismatch_panics() {
        check_convergence(&[0.0], &[0.0, 1.0], 1.0);
    }

    #[test]
    fn single_quiet_expert_reaches_fixed_point() {
        let data = Dataset::from_pairs(&[(0.0, 2.5)]).unwrap();
        let out = run(&quadratic_config(100_000, 0.1), &data).unwrap();
        assert!(out.converged);
        assert!((out.theta_star[0] - 2.5).abs() < 1e-11);
        assert!(out.bound.satisfied);
    }

    #[test]
    fn zero_steps_returns_start() {
        let data = Dataset::from_pairs(&[(0.0, 2.0), (1.0, 10.0), (2.0, 40.0)]).unwrap();
        let config = RunConfig {
            steps: 0,
            experts: 5,
            theta0: Some(vec![1.5, 50.0, 0.3]),
            ..RunConfig::default()
        };
        let out = run(&config, &data).unwrap();
        assert_eq!(out.theta_star.as_slice(), &[1.5, 50.0, 0.3]);
        assert!(out.trajectory.is_empty());
        assert_eq!(out.steps_run, 0);
        assert_eq!(out.bound.total_loss, 0.0);
    }

    fn small_logistic() -> (RunConfig, Dataset) {
        let truth = LogisticParams::new(2.107, 219.0527, 0.7427);
        let times: Vec<f64> = (0..23).map(f64::from).collect();
        let data = crate::dataset::synthetic_logistic(&truth, &times, 2.0, 5).unwrap();
        let config = RunConfig {
            experts: 4,
            steps: 60,
            delta: Some(1e-5),
            seed: 9,
            record_experts: true,
            ..RunConfig::default()
        };
        (config, data)
    }

    #[test]
    fn trajectory_shape_and_invariants() {
        let (config, data) = small_logistic();
        let out = run(&config, &data).unwrap();
        assert_eq!(out.trajectory.len(), 60);
        for (i, rec) in out.trajectory.iter().enumerate() {
            assert_eq!(rec.n, i);
            assert_eq!(rec.pi.len(), 4);
            assert_eq!(rec.experts.as_ref().unwrap().len(), 4);
            assert!(rec.risks.iter().all(|r| (0.0..1.0).contains(r)));
            assert!(rec.total_loss <= rec.bound + 1e-9);
        }
        assert_eq!(out.trajectory[0].theta_bar, vec![1.0, data.ys().iter().cloned().fold(f64::MIN, f64::max), 0.5]);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (config, data) = small_logistic();
        let seq = run(&config, &data).unwrap();
        let par = run(&RunConfig { parallel: true, ..config }, &data).unwrap();
        assert_eq!(seq.trajectory, par.trajectory);
        assert_eq!(seq.theta_star, par.theta_star);
    }

    #[test]
    fn checkpoint_resume_reproduces_run() {
        let (config, data) = small_logistic();
        let full = run(&config, &data).unwrap();
        let mut first = Runner::new(config.clone(), &data).unwrap();
        first.run_until(23).unwrap();
        let saved = first.checkpoint();
        let text = serde_json::to_string(&saved).unwrap();
        let restored: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(restored, saved);
        let resumed = Runner::resume(restored, &data).unwrap().run_to_end().unwrap();
        assert_eq!(resumed.trajectory, full.trajectory);
        assert_eq!(resumed.theta_star, full.theta_star);
    }

    #[test]
    fn per_expert_mode_differs_from_consensus() {
        let (config, data) = small_logistic();
        let a = run(&config, &data).unwrap();
        let b = run(&RunConfig { mode: UpdateMode::PerExpert, ..config }, &data).unwrap();
        assert_ne!(a.theta_star, b.theta_star);
    }

    #[test]
    fn bad_theta0_dimension_is_a_config_error() {
        let (mut config, data) = small_logistic();
        config.theta0 = Some(vec![1.0]);
        assert!(matches!(Runner::new(config, &data), Err(Error::Config(_))));
    }

    #[test]
    fn custom_initial_weights() {
        let (config, data) = small_logistic();
        let model = ModelSpec::logistic();
        let runner =
            Runner::with_model(config.clone(), &data, model.clone(), Some(vec![0.1, 0.2, 0.3, 0.4]))
                .unwrap();
        assert_eq!(runner.mixing().mixing(), &[0.1, 0.2, 0.3, 0.4]);
        assert!(Runner::with_model(config, &data, model, Some(vec![0.5, 0.5])).is_err());
    }
}
