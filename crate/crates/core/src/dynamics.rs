//! Euler-Maruyama steps of annealed-noise gradient dynamics.
//!
//! One step maps a base point to
//! `base - delta * grad J_k(base) + sigma(tau_{n+1}) * dW`, where
//! `sigma(tau) = epsilon / sqrt(ln(tau + 2))` and `dW ~ N(0, delta I)`.
//! The base point is either the expert's own estimate or the consensus
//! estimate. The feasible box is applied after the noise.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::SampleView;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::rng;

/// Equidistant grid `0 = tau_0 < ... < tau_N = T` with spacing `delta = T / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    delta: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        Ok(Self {
            horizon,
            steps,
            delta: horizon / steps as f64,
        })
    }

    /// Grid of `steps` steps of size `delta`; the horizon is `delta * steps`.
    pub fn from_delta(delta: f64, steps: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        Ok(Self {
            horizon: delta * steps as f64,
            steps,
            delta,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `tau_n = n delta`, with `tau_N` pinned to the horizon.
    pub fn tau(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.delta
        }
    }
}

/// Noise amplitude `sigma(tau) = epsilon / sqrt(ln(tau + 2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    epsilon: f64,
}

impl NoiseSchedule {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sigma(&self, tau: f64) -> f64 {
        self.epsilon / (tau + 2.0).ln().sqrt()
    }

    /// Annealing temperature `sigma(tau)^2`.
    pub fn temperature(&self, tau: f64) -> f64 {
        let s = self.sigma(tau);
        s * s
    }
}

/// One expert's current estimate and its private Wiener stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertState {
    id: usize,
    theta: ParamVector,
    rng: ChaCha8Rng,
}

impl ExpertState {
    /// Expert `id` (zero-based) starting at `theta0`, noise keyed by `(seed, id)`.
    pub fn new(id: usize, theta0: ParamVector, seed: u64) -> Self {
        Self {
            id,
            theta: theta0,
            rng: rng::expert_stream(seed, id),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    /// `p` independent `N(0, delta)` draws from this expert's stream.
    pub fn gaussian_increment(&mut self, delta: f64, p: usize) -> Vec<f64> {
        let scale = delta.sqrt();
        (0..p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                scale * z
            })
            .collect()
    }

    /// Per-expert step from the expert's own estimate.
    pub fn expert_step(
        &mut self,
        model: &ModelSpec,
        data: SampleView<'_>,
        grid: &TimeGrid,
        schedule: &NoiseSchedule,
        n: usize,
    ) -> Result<()> {
        check_step_index(grid, n)?;
        let base = self.theta.clone();
        self.advance(&base, model, data, grid.delta(), schedule.sigma(grid.tau(n + 1)), n)
    }

    /// Step from the consensus estimate instead of the expert's own.
    pub fn consensus_step(
        &mut self,
        consensus: &ParamVector,
        model: &ModelSpec,
        data: SampleView<'_>,
        grid: &TimeGrid,
        schedule: &NoiseSchedule,
        n: usize,
    ) -> Result<()> {
        check_step_index(grid, n)?;
        self.advance(consensus, model, data, grid.delta(), schedule.sigma(grid.tau(n + 1)), n)
    }

    /// Sets the estimate to `base - delta * grad + sigma * dW`, projected.
    ///
    /// With `sigma == 0` the noise stream is not touched.
    pub fn advance(
        &mut self,
        base: &[f64],
        model: &ModelSpec,
        data: SampleView<'_>,
        delta: f64,
        sigma: f64,
        step: usize,
    ) -> Result<()> {
        let id = self.id;
        let fault = |source| Error::Step {
            expert: id,
            step,
            source,
        };
        let grad = model.gradient(base, data).map_err(fault)?;
        let mut next: Vec<f64> = base.iter().zip(&grad).map(|(b, g)| b - delta * g).collect();
        if sigma > 0.0 {
            let dw = self.gaussian_increment(delta, next.len());
            for (v, w) in next.iter_mut().zip(&dw) {
                *v += sigma * w;
            }
        }
        model.project(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(fault(crate::error::EvalFault::new(
                "update produced a non-finite estimate",
                base,
            )));
        }
        self.theta = ParamVector::new(next)?;
        Ok(())
    }
}

fn check_step_index(grid: &TimeGrid, n: usize) -> Result<()> {
    if n >= grid.steps() {
        return Err(Error::InvalidArgument(format!(
            "step index {n} outside grid of {} steps",
            grid.steps()
        )));
    }
    Ok(())
}
