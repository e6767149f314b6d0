//! Learning with expert advice over bootstrap subsamples.
//!
//! `K` experts each follow Euler-Maruyama steps of annealed-noise gradient
//! dynamics on their own bootstrap subsample. A multiplicative-weights
//! mixing distribution, driven by each expert's risk on a held-back
//! validation subsample, fuses the estimates into a consensus that is fed
//! back as the next common starting point.
//!
//! * [`dataset`]: CSV loading and bootstrap subsampling.
//! * [`model`]: hypotheses, losses, objectives and gradients.
//! * [`dynamics`]: time grid, annealing schedule, expert steps.
//! * [`aggregator`]: risks, weights, mixing distribution, loss bound.
//! * [`driver`]: configuration, the full loop and its outputs.

pub mod aggregator;
pub mod dataset;
pub mod driver;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod rng;

pub use aggregator::{HedgeBound, MixingState, StepCheck};
pub use dataset::{bootstrap, load_csv, Column, Dataset, Replacement, SampleView, SubsampleSet};
pub use driver::{
    check_convergence, run, Checkpoint, RunConfig, RunOutcome, Runner, TrajectoryRecord,
    UpdateMode,
};
pub use dynamics::{ExpertState, NoiseSchedule, TimeGrid};
pub use error::{DataError, Error, EvalFault, Result};
pub use model::{LogisticParams, ModelSpec, ParamVector};
