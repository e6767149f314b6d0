//! Multiplicative-weights aggregation of expert estimates.
//!
//! Each expert's validation objective `J` becomes a risk
//! `r = 1 - exp(-gamma J)` in `[0, 1)`. Weights evolve as
//! `w_{n+1}(k) = w_n(k) * beta^{r_n(k)}` and the mixing distribution is
//! `pi_n = w_n / sum(w_n)`. With `sum(w_0) = 1` the cumulative mixture loss
//! obeys `L <= -ln(sum w_N) / (1 - beta)`.
//!
//! Weights are held as logarithms because they decay geometrically and
//! underflow over long runs; `ln sum w` is a log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::dataset::SampleView;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};

/// Allowed negative slack on the cumulative bound.
pub const BOUND_TOLERANCE: f64 = 1e-9;
/// Relative tolerance on the per-step weight-sum inequality.
pub const STEP_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of `sum(pi)` from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;
/// Largest double below one; risks saturate here.
pub const MAX_RISK: f64 = 1.0 - f64::EPSILON / 2.0;

/// `1 - exp(-gamma * objective)`, saturating at [`MAX_RISK`].
pub fn risk_from_objective(objective: f64, gamma: f64) -> f64 {
    (-(-gamma * objective).exp_m1()).min(MAX_RISK)
}

/// Risk of `theta` on the validation sample.
pub fn risk_measure(
    model: &ModelSpec,
    theta: &[f64],
    validation: SampleView<'_>,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let j = model.objective(theta, validation)?;
    Ok(risk_from_objective(j, gamma))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

fn check_risks(risks: &[f64], k: usize) -> Result<()> {
    if risks.len() != k {
        return Err(Error::InvalidArgument(format!(
            "expected {k} risks, got {}",
            risks.len()
        )));
    }
    if let Some(r) = risks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("risk {r} outside [0, 1]")));
    }
    Ok(())
}

/// `w'(k) = w(k) * beta^{r(k)}`.
pub fn update_weights(weights: &[f64], risks: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    check_risks(risks, weights.len())?;
    let log_beta = beta.ln();
    Ok(weights
        .iter()
        .zip(risks)
        .map(|(w, r)| w * (r * log_beta).exp())
        .collect())
}

/// Normalizes nonnegative weights onto the simplex.
pub fn mixing_distribution(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Degenerate("no weights".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument(format!("weight {w} is not a finite nonnegative number")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Simplex from log-weights via a max-shifted softmax.
pub fn mixing_from_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate("all weights are zero".into()));
    }
    let shifted: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|s| s / total).collect())
}

/// `ln(sum exp(values))`, stable for large negative entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `pi`-weighted average of the estimates.
pub fn consensus<T: AsRef<[f64]>>(estimates: &[T], pi: &[f64]) -> Result<ParamVector> {
    if estimates.is_empty() || estimates.len() != pi.len() {
        return Err(Error::InvalidArgument(format!(
            "{} estimates but {} mixing weights",
            estimates.len(),
            pi.len()
        )));
    }
    let p = estimates[0].as_ref().len();
    let mut bar = vec![0.0; p];
    for (est, &w) in estimates.iter().zip(pi) {
        let est = est.as_ref();
        if est.len() != p {
            return Err(Error::InvalidArgument(format!(
                "estimate of dimension {} where {p} was expected",
                est.len()
            )));
        }
        for (b, v) in bar.iter_mut().zip(est) {
            *b += w * v;
        }
    }
    ParamVector::new(bar)
}

/// `L_n = sum_k pi(k) r(k)`.
pub fn mixture_loss(pi: &[f64], risks: &[f64]) -> f64 {
    pi.iter().zip(risks).map(|(p, r)| p * r).sum()
}

/// `L = sum_n L_n`.
pub fn total_loss(ledger: &[f64]) -> f64 {
    ledger.iter().sum()
}

/// Outcome of checking the cumulative mixture-loss bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeBound {
    /// `-ln(sum w_N) / (1 - beta)`.
    pub bound: f64,
    pub total_loss: f64,
    /// `bound - total_loss`.
    pub slack: f64,
    pub satisfied: bool,
}

impl HedgeBound {
    pub fn from_log_weight_sum(total_loss: f64, log_weight_sum: f64, beta: f64) -> Self {
        let bound = -log_weight_sum / (1.0 - beta);
        let slack = bound - total_loss;
        Self {
            bound,
            total_loss,
            slack,
            satisfied: slack >= -BOUND_TOLERANCE,
        }
    }
}

/// Checks `L <= -ln(sum w_N) / (1 - beta)` from linear final weights.
pub fn hedge_bound_check(ledger: &[f64], final_weights: &[f64], beta: f64) -> HedgeBound {
    let log_sum = final_weights.iter().sum::<f64>().ln();
    HedgeBound::from_log_weight_sum(total_loss(ledger), log_sum, beta)
}

/// Per-step weight-sum inequality
/// `sum w_{n+1} <= sum w_n * (1 - (1 - beta) L_n)`, divided through by `sum w_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub mixture_loss: f64,
    /// `sum w_{n+1} / sum w_n = sum_k pi_n(k) beta^{r_n(k)}`.
    pub weight_ratio: f64,
    /// `1 - (1 - beta) L_n`.
    pub ratio_cap: f64,
    pub satisfied: bool,
}

/// Weights, mixing distribution and loss ledger of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingState {
    log_weights: Vec<f64>,
    pi: Vec<f64>,
    beta: f64,
    gamma: f64,
    risk_history: Vec<Vec<f64>>,
    loss_ledger: Vec<f64>,
    total_loss: f64,
}

impl MixingState {
    /// Uniform start `w_0 = pi_0 = 1/K`.
    pub fn new(experts: usize, beta: f64, gamma: f64) -> Result<Self> {
        if experts == 0 {
            return Err(Error::InvalidArgument("need at least one expert".into()));
        }
        Self::with_initial_weights(&vec![1.0 / experts as f64; experts], beta, gamma)
    }

    /// Arbitrary nonnegative start weights summing to one.
    pub fn with_initial_weights(weights: &[f64], beta: f64, gamma: f64) -> Result<Self> {
        check_beta(beta)?;
        check_gamma(gamma)?;
        let pi = mixing_distribution(weights)?;
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "initial weights must sum to one, got {sum}"
            )));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            pi,
            beta,
            gamma,
            risk_history: Vec::new(),
            loss_ledger: Vec::new(),
            total_loss: 0.0,
        })
    }

    pub fn experts(&self) -> usize {
        self.pi.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mixing(&self) -> &[f64] {
        &self.pi
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Linear weights; may underflow to zero on long runs.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn log_weight_sum(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }

    pub fn risk_history(&self) -> &[Vec<f64>] {
        &self.risk_history
    }

    pub fn loss_ledger(&self) -> &[f64] {
        &self.loss_ledger
    }

    pub fn total_loss(&self) -> f64 {
        self.total_loss
    }

    pub fn risk(&self, model: &ModelSpec, theta: &[f64], validation: SampleView<'_>) -> Result<f64> {
        risk_measure(model, theta, validation, self.gamma)
    }

    /// Records `r_n`, charges `L_n` and moves to `w_{n+1}`, `pi_{n+1}`.
    pub fn update(&mut self, risks: &[f64]) -> Result<StepCheck> {
        check_risks(risks, self.experts())?;
        let log_beta = self.beta.ln();
        let loss = mixture_loss(&self.pi, risks);
        let weight_ratio: f64 = self
            .pi
            .iter()
            .zip(risks)
            .map(|(p, r)| p * (r * log_beta).exp())
            .sum();
        let ratio_cap = 1.0 - (1.0 - self.beta) * loss;
        for (lw, r) in self.log_weights.iter_mut().zip(risks) {
            *lw += r * log_beta;
        }
        self.pi = mixing_from_log_weights(&self.log_weights)?;
        self.risk_history.push(risks.to_vec());
        self.loss_ledger.push(loss);
        self.total_loss += loss;
        Ok(StepCheck {
            mixture_loss: loss,
            weight_ratio,
            ratio_cap,
            satisfied: weight_ratio <= ratio_cap * (1.0 + STEP_TOLERANCE),
        })
    }

    pub fn hedge_bound(&self) -> HedgeBound {
        HedgeBound::from_log_weight_sum(self.total_loss, self.log_weight_sum(), self.beta)
    }

    /// Verifies `sum(pi) = 1` and `pi >= 0`; zero entries only where `w_0` was zero.
    pub fn check_simplex(&self) -> std::result::Result<(), String> {
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(format!("mixing distribution sums to {sum}"));
        }
        for (k, (&p, &lw)) in self.pi.iter().zip(&self.log_weights).enumerate() {
            if p < 0.0 || (p == 0.0 && lw.is_finite()) {
                return Err(format!("mixing weight of expert {k} is {p}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;

    #[test]
    fn risk_values() {
        assert_eq!(risk_from_objective(0.0, 0.01), 0.0);
        let r = risk_from_objective(100.0, 0.01);
        assert!((r - 0.632_120_558_828_557_7).abs() < 1e-15, "{r}");
        let big = risk_from_objective(1e12, 0.01);
        assert!(big < 1.0);
        assert!(risk_from_objective(2.0, 0.01) < risk_from_objective(3.0, 0.01));
    }

    #[test]
    fn risk_measure_on_validation_data() {
        let model = ModelSpec::constant();
        let data = Dataset::from_pairs(&[(0.0, 1.0), (0.0, 3.0)]).unwrap();
        // mean of (2 - 1)^2 and (2 - 3)^2 is 1
        let r = risk_measure(&model, &[2.0], data.view(), 0.5).unwrap();
        assert_eq!(r, -(-0.5f64).exp_m1());
        assert!(risk_measure(&model, &[2.0], data.view(), 0.0).is_err());
    }

    #[test]
    fn weight_updates() {
        assert_eq!(update_weights(&[0.5], &[1.0], 0.5).unwrap(), vec![0.25]);
        assert_eq!(update_weights(&[0.3, 0.7], &[0.0, 0.0], 0.5).unwrap(), vec![0.3, 0.7]);
        assert_eq!(update_weights(&[0.5, 0.5], &[0.0, 1.0], 0.5).unwrap(), vec![0.5, 0.25]);
        assert!(update_weights(&[0.5], &[1.5], 0.5).is_err());
        assert!(update_weights(&[0.5], &[-0.1], 0.5).is_err());
        assert!(update_weights(&[0.5], &[0.1], 1.0).is_err());
        assert!(update_weights(&[0.5, 0.5], &[0.1], 0.5).is_err());
    }

    #[test]
    fn mixing_values() {
        assert_eq!(mixing_distribution(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(mixing_distribution(&[0.2; 5]).unwrap(), vec![0.2; 5]);
        let pi = mixing_distribution(&[0.5, 0.25]).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-15 && (pi[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(mixing_distribution(&[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(mixing_distribution(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn log_space_mixing_survives_underflow() {
        let pi = mixing_from_log_weights(&[-5000.0, -5000.0 + 2f64.ln()]).unwrap();
        assert!((pi[0] - 1.0 / 3.0).abs() < 1e-11);
        assert!((log_sum_exp(&[-5000.0, -5000.0]) - (-5000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn consensus_values() {
        assert_eq!(consensus(&[vec![1.5, -2.0]], &[1.0]).unwrap().as_slice(), &[1.5, -2.0]);
        assert_eq!(consensus(&[vec![0.0], vec![2.0]], &[0.5, 0.5]).unwrap().as_slice(), &[1.0]);
        let bar = consensus(&[vec![1.0, 0.0], vec![4.0, 3.0]], &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((bar[0] - 2.0).abs() < 1e-15 && (bar[1] - 1.0).abs() < 1e-15);
        assert!(consensus(&[vec![1.0], vec![1.0, 2.0]], &[0.5, 0.5]).is_err());
        assert!(consensus(&[vec![1.0]], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn mixture_loss_values() {
        assert_eq!(mixture_loss(&[0.5, 0.5], &[0.0, 0.0]), 0.0);
        assert_eq!(mixture_loss(&[0.5, 0.5], &[0.0, 1.0]), 0.5);
        assert!((mixture_loss(&[0.25; 4], &[0.3; 4]) - 0.3).abs() < 1e-15);
        assert_eq!(total_loss(&[0.5, 0.25]), 0.75);
    }

    #[test]
    fn bound_two_experts_one_step() {
        // L = 0.5, sum w_1 = 0.75, bound = -ln(0.75) / 0.5
        let w1 = update_weights(&[0.5, 0.5], &[0.0, 1.0], 0.5).unwrap();
        let check = hedge_bound_check(&[0.5], &w1, 0.5);
        assert!((check.bound - 0.575_364_144_903_561_9).abs() < 1e-15);
        assert!(check.satisfied);
        assert!((check.slack - 0.075_364_144_903_561_9).abs() < 1e-15);

        let mut state = MixingState::new(2, 0.5, 0.01).unwrap();
        let step = state.update(&[0.0, 1.0]).unwrap();
        assert!(step.satisfied);
        assert_eq!(step.mixture_loss, 0.5);
        assert_eq!(state.weights(), vec![0.5, 0.25]);
        let b = state.hedge_bound();
        assert!((b.bound - check.bound).abs() < 1e-15);
    }

    #[test]
    fn bound_is_tight_for_zero_risks() {
        let mut state = MixingState::new(3, 0.3, 0.01).unwrap();
        for _ in 0..20 {
            state.update(&[0.0; 3]).unwrap();
        }
        let b = state.hedge_bound();
        assert_eq!(b.total_loss, 0.0);
        assert!(b.bound.abs() < 1e-15 && b.slack.abs() < 1e-15 && b.satisfied);
    }

    #[test]
    fn initial_weights_must_be_a_distribution() {
        assert!(MixingState::with_initial_weights(&[0.2, 0.8], 0.5, 0.01).is_ok());
        assert!(MixingState::with_initial_weights(&[0.2, 0.2], 0.5, 0.01).is_err());
        assert!(MixingState::with_initial_weights(&[-0.2, 1.2], 0.5, 0.01).is_err());
        assert!(MixingState::new(0, 0.5, 0.01).is_err());
        assert!(MixingState::new(2, 0.0, 0.01).is_err());
        assert!(MixingState::new(2, 0.5, -1.0).is_err());
        let mut s = MixingState::with_initial_weights(&[0.0, 1.0], 0.5, 0.01).unwrap();
        s.update(&[0.5, 0.5]).unwrap();
        assert!(s.check_simplex().is_ok());
        assert_eq!(s.mixing()[0], 0.0);
    }
}
