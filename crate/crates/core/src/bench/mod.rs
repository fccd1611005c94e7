//! Benchmark objectives, the Sobol baseline and the experiment loop.

pub mod objectives;
pub mod runner;
pub mod sobol;
mod sobol_table;

pub use objectives::{
    ackley, make_gp_objective, sample_lengthscales, sphere, ComplexityLevel, GpObjective, ModelSpec, Objective,
    SyntheticKind, SyntheticObjective,
};
pub use runner::{run_experiment, run_seed, Algorithm, Protocol, RunRecord, RunSettings, RunStream, Task};
pub use sobol::{sobol_baseline, SobolSequence};
