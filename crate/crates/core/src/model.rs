//! Hypothesis functions, losses and the empirical objective they induce.
//!
//! The empirical objective of a sample is the mean loss of the hypothesis
//! over its points. Gradients are assembled from the hypothesis' own
//! parameter partials and the loss derivative; a central finite-difference
//! gradient is kept alongside as a check.

use std::fmt;
use std::ops::Deref;
use std::sync::{Arc, Once};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SampleView};
use crate::error::{Error, EvalFault, Result};

/// Largest magnitude passed to `exp` before clamping.
pub const EXP_CLAMP: f64 = 700.0;

static EXP_CLAMP_WARNING: Once = Once::new();

/// `exp(arg)` with `arg` clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
pub fn guarded_exp(arg: f64) -> f64 {
    if arg.abs() > EXP_CLAMP {
        EXP_CLAMP_WARNING.call_once(|| {
            log::warn!("exp argument {arg} clamped to ±{EXP_CLAMP}; further clamps are silent");
        });
        arg.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    } else {
        arg.exp()
    }
}

/// A point in parameter space. Never empty; entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("parameter vector must be non-empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "parameter {i} is not finite: {}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// Per-coordinate box constraints; infinite entries leave a side open.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn project(&self, theta: &mut [f64]) {
        for ((v, lo), hi) in theta.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, lo), hi)| v >= lo && v <= hi)
    }
}

/// A parametric hypothesis `h_theta(x)`.
pub trait Hypothesis: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta{i}")).collect()
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<f64, EvalFault>;

    /// Returns the prediction and writes `d h / d theta` into `grad`.
    fn predict_with_gradient(
        &self,
        theta: &[f64],
        x: &[f64],
        grad: &mut [f64],
    ) -> Result<f64, EvalFault>;

    fn default_bounds(&self) -> Option<BoxBounds> {
        None
    }

    /// Starting point chosen from the data.
    fn initial_params(&self, data: &Dataset) -> Vec<f64>;
}

/// A nonnegative loss `l(prediction, target)`.
pub trait Loss: Send + Sync + fmt::Debug {
    fn value(&self, prediction: f64, target: f64) -> f64;

    /// Derivative with respect to the prediction.
    fn derivative(&self, prediction: f64, target: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredError;

impl Loss for SquaredError {
    fn value(&self, prediction: f64, target: f64) -> f64 {
        let r = prediction - target;
        r * r
    }

    fn derivative(&self, prediction: f64, target: f64) -> f64 {
        2.0 * (prediction - target)
    }
}

/// Logistic growth parameters: initial size, equilibrium size, rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub n0: f64,
    pub ne: f64,
    pub r: f64,
}

impl LogisticParams {
    pub fn new(n0: f64, ne: f64, r: f64) -> Self {
        Self { n0, ne, r }
    }

    pub fn from_slice(theta: &[f64]) -> Self {
        Self::new(theta[0], theta[1], theta[2])
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.n0, self.ne, self.r]
    }
}

/// `N(t) = N0 Ne / (N0 + (Ne - N0) exp(-r t))`.
pub fn logistic_predict(params: &LogisticParams, t: f64) -> Result<f64, EvalFault> {
    let LogisticParams { n0, ne, r } = *params;
    let e = guarded_exp(-r * t);
    let denom = n0 + (ne - n0) * e;
    let value = n0 * ne / denom;
    if denom == 0.0 || !value.is_finite() {
        return Err(EvalFault::new(
            format!("logistic denominator {denom} at t = {t}"),
            &[n0, ne, r],
        ));
    }
    Ok(value)
}

/// Logistic law in one scalar input, `theta = (N0, Ne, r)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticGrowth;

impl Hypothesis for LogisticGrowth {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        3
    }

    fn param_names(&self) -> Vec<String> {
        vec!["N0".into(), "Ne".into(), "r".into()]
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> Result<f64, EvalFault> {
        logistic_predict(&LogisticParams::from_slice(theta), x[0])
    }

    // With e = exp(-r t) and D = N0 + (Ne - N0) e:
    //   dN/dN0 = Ne^2 e / D^2
    //   dN/dNe = N0^2 (1 - e) / D^2
    //   dN/dr  = N0 Ne (Ne - N0) t e / D^2
    fn predict_with_gradient(
        &self,
        theta: &[f64],
        x: &[f64],
        grad: &mut [f64],
    ) -> Result<f64, EvalFault> {
        let (n0, ne, r) = (theta[0], theta[1], theta[2]);
        let t = x[0];
        let e = guarded_exp(-r * t);
        let denom = n0 + (ne - n0) * e;
        if denom == 0.0 || !denom.is_finite() {
            return Err(EvalFault::new(
                format!("logistic denominator {denom} at t = {t}"),
                theta,
            ));
        }
        let inv2 = 1.0 / (denom * denom);
        grad[0] = ne * ne * e * inv2;
        grad[1] = n0 * n0 * (1.0 - e) * inv2;
        grad[2] = n0 * ne * (ne - n0) * t * e * inv2;
        let value = n0 * ne / denom;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(EvalFault::new(format!("non-finite logistic value at t = {t}"), theta));
        }
        Ok(value)
    }

    fn default_bounds(&self) -> Option<BoxBounds> {
        Some(BoxBounds {
            lower: vec![1e-9, 1e-9, f64::NEG_INFINITY],
            upper: vec![f64::INFINITY; 3],
        })
    }

    fn initial_params(&self, data: &Dataset) -> Vec<f64> {
        let max_y = data.ys().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vec![1.0, max_y.max(1e-9), 0.5]
    }
}

/// `h_theta(x) = theta_0`; with squared error the objective is `mean (theta - y)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Constant;

impl Hypothesis for Constant {
    fn name(&self) -> &str {
        "constant"
    }

    fn dim(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        vec!["c".into()]
    }

    fn predict(&self, theta: &[f64], _x: &[f64]) -> Result<f64, EvalFault> {
        Ok(theta[0])
    }

    fn predict_with_gradient(
        &self,
        theta: &[f64],
        _x: &[f64],
        grad: &mut [f64],
    ) -> Result<f64, EvalFault> {
        grad[0] = 1.0;
        Ok(theta[0])
    }

    fn initial_params(&self, _data: &Dataset) -> Vec<f64> {
        vec![0.0]
    }
}

/// Names accepted by [`ModelSpec::by_name`].
pub const MODEL_NAMES: &[&str] = &["logistic", "constant"];

/// Hypothesis, loss and feasible box, shared immutably between experts.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    hypothesis: Arc<dyn Hypothesis>,
    loss: Arc<dyn Loss>,
    bounds: Option<BoxBounds>,
}

impl ModelSpec {
    pub fn new(hypothesis: Arc<dyn Hypothesis>, loss: Arc<dyn Loss>) -> Self {
        let bounds = hypothesis.default_bounds();
        Self {
            hypothesis,
            loss,
            bounds,
        }
    }

    pub fn with_bounds(mut self, bounds: Option<BoxBounds>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn logistic() -> Self {
        Self::new(Arc::new(LogisticGrowth), Arc::new(SquaredError))
    }

    pub fn constant() -> Self {
        Self::new(Arc::new(Constant), Arc::new(SquaredError))
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "logistic" => Ok(Self::logistic()),
            "constant" => Ok(Self::constant()),
            other => Err(Error::Config(format!(
                "unknown model {other:?}; known models: {}",
                MODEL_NAMES.join(", ")
            ))),
        }
    }

    pub fn name(&self) -> &str {
        self.hypothesis.name()
    }

    pub fn dim(&self) -> usize {
        self.hypothesis.dim()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.hypothesis.param_names()
    }

    pub fn bounds(&self) -> Option<&BoxBounds> {
        self.bounds.as_ref()
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> Result<f64, EvalFault> {
        self.hypothesis.predict(theta, x)
    }

    pub fn initial_params(&self, data: &Dataset) -> Vec<f64> {
        self.hypothesis.initial_params(data)
    }

    pub fn project(&self, theta: &mut [f64]) {
        if let Some(b) = &self.bounds {
            b.project(theta);
        }
    }

    /// Mean loss over the sample.
    pub fn objective(&self, theta: &[f64], data: SampleView<'_>) -> Result<f64, EvalFault> {
        if data.is_empty() {
            return Err(EvalFault::new("objective of an empty sample", theta));
        }
        let mut sum = 0.0;
        for (x, y) in data.iter() {
            let pred = self.predict(theta, x)?;
            if !pred.is_finite() {
                return Err(EvalFault::new(format!("non-finite prediction at x = {x:?}"), theta));
            }
            sum += self.loss.value(pred, y);
        }
        let value = sum / data.len() as f64;
        if !value.is_finite() {
            return Err(EvalFault::new("objective overflowed", theta));
        }
        Ok(value)
    }

    /// Analytic gradient of [`objective`](Self::objective).
    pub fn gradient(&self, theta: &[f64], data: SampleView<'_>) -> Result<Vec<f64>, EvalFault> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(theta, data, &mut out)?;
        Ok(out)
    }

    pub fn gradient_into(
        &self,
        theta: &[f64],
        data: SampleView<'_>,
        out: &mut [f64],
    ) -> Result<(), EvalFault> {
        if data.is_empty() {
            return Err(EvalFault::new("gradient of an empty sample", theta));
        }
        let p = self.dim();
        debug_assert_eq!(out.len(), p);
        out.iter_mut().for_each(|g| *g = 0.0);
        let mut dh = vec![0.0; p];
        for (x, y) in data.iter() {
            let pred = self.hypothesis.predict_with_gradient(theta, x, &mut dh)?;
            let dl = self.loss.derivative(pred, y);
            for (g, d) in out.iter_mut().zip(&dh) {
                *g += dl * d;
            }
        }
        let m = data.len() as f64;
        for g in out.iter_mut() {
            *g /= m;
        }
        if out.iter().any(|g| !g.is_finite()) {
            return Err(EvalFault::new("non-finite gradient component", theta));
        }
        Ok(())
    }

    /// Central differences with per-coordinate step `step * max(1, |theta_i|)`.
    pub fn finite_difference_gradient(
        &self,
        theta: &[f64],
        data: SampleView<'_>,
        step: f64,
    ) -> Result<Vec<f64>> {
        if step.is_nan() || step <= 0.0 {
            return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
        }
        let mut probe = theta.to_vec();
        let mut grad = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let h = step * theta[i].abs().max(1.0);
            probe[i] = theta[i] + h;
            let up = self.objective(&probe, data)?;
            probe[i] = theta[i] - h;
            let down = self.objective(&probe, data)?;
            probe[i] = theta[i];
            grad.push((up - down) / (2.0 * h));
        }
        Ok(grad)
    }
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Worst analytic-vs-finite-difference relative error over random draws.
///
/// Logistic parameters are drawn from `N0, Ne in [0.5, 300]`,
/// `r in [0.05, 2]`; other models use `[-10, 10]` per coordinate. Each
/// draw uses 1 to 23 points with `x in [0, 22]`, `y in [0, 300]`.
pub fn gradient_check(model: &ModelSpec, draws: usize, seed: u64, step: f64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let theta: Vec<f64> = if model.name() == "logistic" {
            vec![
                rng.random_range(0.5..300.0),
                rng.random_range(0.5..300.0),
                rng.random_range(0.05..2.0),
            ]
        } else {
            (0..model.dim()).map(|_| rng.random_range(-10.0..10.0)).collect()
        };
        let points: Vec<(f64, f64)> = (0..rng.random_range(1..=23))
            .map(|_| (rng.random_range(0.0..22.0), rng.random_range(0.0..300.0)))
            .collect();
        let data = Dataset::from_pairs(&points)?;
        let analytic = model.gradient(&theta, data.view())?;
        let numeric = model.finite_difference_gradient(&theta, data.view(), step)?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    const OPT: LogisticParams = LogisticParams {
        n0: 2.1070,
        ne: 219.0527,
        r: 0.7427,
    };

    fn exact_data(params: &LogisticParams, times: &[f64]) -> Dataset {
        Dataset::from_pairs(
            &times
                .iter()
                .map(|&t| (t, logistic_predict(params, t).unwrap()))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn logistic_at_zero_is_initial_size() {
        assert_eq!(logistic_predict(&OPT, 0.0).unwrap(), 2.1070);
    }

    #[test]
    fn logistic_at_day_24_matches_high_precision() {
        // 50-digit evaluation of the same closed form
        let oracle = 219.052_290_718_580_5;
        let v = logistic_predict(&OPT, 24.0).unwrap();
        assert!((v - oracle).abs() <= 1e-12 * oracle, "{v}");
    }

    #[test]
    fn logistic_asymptote() {
        for p in [OPT, LogisticParams::new(5.0, 40.0, 2.0), LogisticParams::new(80.0, 3.0, 0.1)] {
            let v = logistic_predict(&p, 100.0 / p.r).unwrap();
            assert!((v - p.ne).abs() < 1e-6 * p.ne);
        }
    }

    #[test]
    fn frozen_rate_is_initial_size() {
        // r = 0: N = N0 Ne / (N0 + Ne - N0) = N0
        let m = ModelSpec::logistic();
        let data = Dataset::from_pairs(&[(10.0, 1.0)]).unwrap();
        assert_eq!(m.objective(&[1.0, 3.0, 0.0], data.view()).unwrap(), 0.0);
    }

    #[test]
    fn constant_logistic_has_zero_objective() {
        let m = ModelSpec::logistic();
        let data = Dataset::from_pairs(&[(0.0, 2.0), (5.0, 2.0)]).unwrap();
        assert_eq!(m.objective(&[2.0, 2.0, 1.0], data.view()).unwrap(), 0.0);
    }

    #[test]
    fn objective_vanishes_on_exact_data() {
        let m = ModelSpec::logistic();
        let times: Vec<f64> = (0..23).map(f64::from).collect();
        let data = exact_data(&OPT, &times);
        let j = m.objective(&OPT.to_vec(), data.view()).unwrap();
        let scale: f64 = data.ys().iter().map(|y| y * y).sum::<f64>() / 23.0;
        assert!(j <= 1e-18 * scale, "{j}");
    }

    #[test]
    fn gradient_vanishes_on_exact_data() {
        let m = ModelSpec::logistic();
        let times: Vec<f64> = (0..23).map(f64::from).collect();
        let data = exact_data(&OPT, &times);
        let g = m.gradient(&OPT.to_vec(), data.view()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10), "{g:?}");
        let fd = m.finite_difference_gradient(&OPT.to_vec(), data.view(), 1e-6).unwrap();
        assert!(fd.iter().all(|v| v.abs() < 1e-6), "{fd:?}");
    }

    #[test]
    fn gradient_at_time_zero() {
        // N(0) = N0 so only the N0 partial survives: 2 (N0 - y)
        let m = ModelSpec::logistic();
        let data = Dataset::from_pairs(&[(0.0, 5.0)]).unwrap();
        let g = m.gradient(&[3.0, 50.0, 0.4], data.view()).unwrap();
        assert_eq!(g, vec![2.0 * (3.0 - 5.0), 0.0, 0.0]);
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let m = ModelSpec::constant();
        let c = 3.25;
        let data = Dataset::from_pairs(&[(0.0, c)]).unwrap();
        for theta in [-4.0, 0.0, 1.5, 10.0] {
            let g = m.finite_difference_gradient(&[theta], data.view(), 1e-6).unwrap();
            assert!(close(g[0], 2.0 * (theta - c), 1e-6), "{g:?}");
        }
        assert!(m.finite_difference_gradient(&[0.0], data.view(), 0.0).is_err());
    }

    #[test]
    fn overflow_is_clamped_not_fatal() {
        let m = ModelSpec::logistic();
        let data = Dataset::from_pairs(&[(1e6, 10.0)]).unwrap();
        let j = m.objective(&[1.0, 100.0, -5.0], data.view()).unwrap();
        assert!(j.is_finite());
    }

    #[test]
    fn zero_denominator_is_a_fault() {
        // N0 + (Ne - N0) e = 0 when Ne = 0 and e = 1
        let err = logistic_predict(&LogisticParams::new(0.0, 0.0, 1.0), 0.0).unwrap_err();
        assert_eq!(err.theta, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_sample_is_a_fault() {
        let m = ModelSpec::constant();
        let data = Dataset::from_pairs(&[(0.0, 1.0)]).unwrap();
        assert!(m.objective(&[0.0], data.select(&[])).is_err());
    }

    #[test]
    fn projection_respects_default_bounds() {
        let m = ModelSpec::logistic();
        let mut theta = vec![-3.0, 0.0, -2.0];
        m.project(&mut theta);
        assert_eq!(theta, vec![1e-9, 1e-9, -2.0]);
        assert!(m.bounds().unwrap().contains(&theta));
    }

    #[test]
    fn by_name_lookup() {
        assert_eq!(ModelSpec::by_name("logistic").unwrap().dim(), 3);
        assert_eq!(ModelSpec::by_name("constant").unwrap().dim(), 1);
        assert!(ModelSpec::by_name("spline").is_err());
    }

    #[test]
    fn random_gradient_check() {
        assert!(gradient_check(&ModelSpec::logistic(), 50, 8, 1e-6).unwrap() < 1e-5);
        assert!(gradient_check(&ModelSpec::constant(), 20, 8, 1e-6).unwrap() < 1e-5);
    }

    #[test]
    fn param_vector_rejects_bad_input() {
        assert!(ParamVector::new(vec![]).is_err());
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert_eq!(ParamVector::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }
}
