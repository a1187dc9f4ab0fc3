//! Contact-implicit trajectory optimization for planar multibody systems.
//!
//! The crate couples three pieces:
//!
//! - [`multibody`]: planar rigid-body dynamics in manipulator form with a
//!   semi-implicit Euler step, written generically over the scalar type so the
//!   same code path produces both values and derivatives.
//! - [`hydro_contact`]: a pressure-field contact model for planar primitives
//!   (discs and half-planes) with compliant overlap forces, Hunt-Crossley style
//!   dissipation, and regularized Coulomb friction. Forces are smooth in state,
//!   so trajectories through contact stay differentiable.
//! - [`ilqr`]: an iterative LQR solver (backward Riccati-style sweep,
//!   linesearched closed-loop forward pass, local feedback gains) plus a
//!   receding-horizon driver with warm starts.
//!
//! [`diff`] provides the forward-mode dual numbers used to linearize the
//! dynamics, [`scenarios`] ships data-driven task descriptions (a whole-arm
//! ball push and a planar legged walker), and [`cli`] backs the `contact-ilqr`
//! binary (`run`, `check-gradients`, `playback`, `validate`).
//!
//! Start with the runnable examples: `cargo run --release --example ball_push`.

pub mod cli;
pub mod diff;
pub mod hydro_contact;
pub mod ilqr;
pub mod multibody;
pub mod scenarios;

pub use diff::{Dual, Real};
pub use multibody::{ControlInput, GeneralizedState, MultibodyModel};
pub use ilqr::{CostSpec, SolveStats, SolverOptions, Trajectory};
pub use scenarios::ScenarioConfig;
