//! Multi-agent path finding in high-density grids.
//!
//! Target agents must reach their goals while the grid is packed with
//! goal-less obstructing agents that have to be shuffled out of the way. The
//! crate provides the grid and instance model, a conflict-checking simulator
//! and validator, the two-stage null-agent swapping solver, an exact
//! breadth-first oracle for tiny instances, and a density-sweep harness.

pub mod bench;
pub mod grid;
pub mod instance;
pub mod oracle;
pub mod phans;
pub mod planner;
pub mod sim;

pub use bench::{run_sweep, summarize, SweepConfig, TrialRecord};
pub use grid::{manhattan, GridGraph, Vertex};
pub use instance::{
    generate_random, make_experiment_env, parse_instance, serialize_instance, ExperimentEnv,
    GoalPolicy, Instance, InstanceError, ObstructingAgent, TargetAgent,
};
pub use oracle::{enumerate_small_instances, optimal_makespan, OracleOutcome};
pub use phans::{solve, solve_traced, Failure, FailureReason, SolveRun, SolverLimits};
pub use sim::{validate_solution, AgentId, Move, Solution, ValidationReport, WorldState};
