//! Iterative LQR solver.

pub struct CostSpec;
pub struct Trajectory;
pub struct SolverOptions;
pub struct SolveStats;
