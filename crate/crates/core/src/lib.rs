//! Offline synthesis and online control for constrained discrete-time
//! Takagi–Sugeno fuzzy Markov jump systems.
//!
//! The crate is `no_std` (with `alloc`). It contains:
//!
//! - [`model`]: the fuzzy jump-system description, membership evaluation and
//!   the single-link robot arm instance;
//! - [`lmi`]: symbolic block LMIs over named decision variables, compiled to
//!   a flat affine form;
//! - [`sdp`]: a deterministic barrier-method solver for small dense SDPs with
//!   log-determinant objective terms;
//! - [`synthesis`]: the three offline stages producing a [`ControllerBundle`];
//! - [`controller`]: the online terminal-set test and perturbation problem;
//! - [`sim`]: seeded closed-loop simulation and Monte-Carlo aggregation.
//!
//! File formats, timing and the command-line tool live in the `dpo-mpc`
//! companion crate.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod controller;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sdp;
pub mod sim;
pub mod synthesis;

pub use controller::{control, in_terminal_set, solve_op5, Branch, ControlDecision, ControlError, Op5Error, Op5Solution};
pub use linalg::{Mat, Vector};
pub use model::{
    blend, nonlinear_arm_step, robot_arm_model, ArmParams, ConstraintSpec, FuzzyMjsModel, Membership,
    MembershipVector, ModelError, PremiseSet,
};
pub use sdp::{check_solution, phase1, solve, SdpSolution, SolveStatus, SolverOptions};
pub use synthesis::{synthesize, ControllerBundle, SynthesisError, SynthesisOptions};
