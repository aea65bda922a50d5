//! The CartPole balancing environment.
//!
//! A pole is hinged to a cart that slides along a frictionless track; the
//! agent pushes the cart left or right with a fixed force and earns one
//! reward point per step until the pole tips past ±12° or the cart leaves
//! the ±2.4 m track. Episodes are also cut off at 500 steps; that cutoff is
//! reported separately from failure so learners can tell a time limit from
//! a genuine terminal state.
//!
//! Dynamics use the classic formulation: the pole's angular acceleration is
//! solved first, the cart's linear acceleration from it, and the state is
//! advanced by one explicit Euler step in which positions are updated with
//! the *pre-step* velocities.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
/// Half the pole length; the moment arm used by the dynamics.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const POLE_MASS_LENGTH: f64 = POLE_MASS * POLE_HALF_LENGTH;
/// Magnitude of the force applied by either action, in newtons.
pub const FORCE_MAGNITUDE: f64 = 10.0;
/// Integration step in seconds.
pub const TIME_STEP: f64 = 0.02;

/// Cart positions beyond ±this fail the episode.
pub const POSITION_LIMIT: f64 = 2.4;
/// Pole angles beyond ±this (12° in radians) fail the episode.
pub const ANGLE_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
/// Episodes are truncated after this many steps.
pub const MAX_EPISODE_STEPS: u32 = 500;
/// Reset draws every state component uniformly from ±this.
pub const RESET_BOUND: f64 = 0.05;

/// Number of available actions (left, right).
pub const ACTION_COUNT: usize = 2;

/// A probability distribution over the two actions, indexed by
/// [`Action::index`].
pub type PolicyVector = [f64; ACTION_COUNT];

/// Full observable state of the cart-pole system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Cart position along the track (m).
    pub position: f64,
    /// Cart velocity (m/s).
    pub velocity: f64,
    /// Pole angle from vertical (rad), positive leaning right.
    pub angle: f64,
    /// Pole angular velocity (rad/s).
    pub angular_velocity: f64,
}

impl EnvState {
    pub const ZERO: EnvState = EnvState {
        position: 0.0,
        velocity: 0.0,
        angle: 0.0,
        angular_velocity: 0.0,
    };

    pub fn to_array(self) -> [f64; 4] {
        [self.position, self.velocity, self.angle, self.angular_velocity]
    }

    pub fn from_array(a: [f64; 4]) -> EnvState {
        EnvState {
            position: a[0],
            velocity: a[1],
            angle: a[2],
            angular_velocity: a[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

/// One of the two pushes the agent can apply to the cart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [Action::Left, Action::Right];

    /// Position of this action in policy vectors and network outputs.
    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Action> {
        match index {
            0 => Some(Action::Left),
            1 => Some(Action::Right),
            _ => None,
        }
    }

    /// Signed force this action applies to the cart.
    pub fn force(self) -> f64 {
        match self {
            Action::Left => -FORCE_MAGNITUDE,
            Action::Right => FORCE_MAGNITUDE,
        }
    }
}

/// What one call to [`CartPole::step`] produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// State after the transition.
    pub state: EnvState,
    /// Always 1.0: one point per surviving step (including the failing
    /// step itself, matching the convention that the terminal transition
    /// still pays out).
    pub reward: f64,
    /// The pole tipped over or the cart left the track.
    pub failed: bool,
    /// The 500-step limit was reached without failure.
    pub truncated: bool,
    /// 1-based count of steps taken this episode, including this one.
    pub step_index: u32,
}

impl StepOutcome {
    /// True when the episode is over for either reason.
    pub fn done(&self) -> bool {
        self.failed || self.truncated
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("episode already finished; call reset() before stepping again")]
    EpisodeFinished,
}

/// One explicit Euler transition of the cart-pole dynamics, with positions
/// advanced using the velocities from *before* this step.
///
/// This is a pure function of (state, action); all episode bookkeeping
/// (step counting, termination) lives in [`CartPole`].
pub fn dynamics(state: EnvState, action: Action) -> EnvState {
    let force = action.force();
    let cos_theta = state.angle.cos();
    let sin_theta = state.angle.sin();

    let temp = (force
        + POLE_MASS_LENGTH * state.angular_velocity * state.angular_velocity * sin_theta)
        / TOTAL_MASS;
    let angular_acc = (GRAVITY * sin_theta - cos_theta * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_theta * cos_theta / TOTAL_MASS));
    let linear_acc = temp - POLE_MASS_LENGTH * angular_acc * cos_theta / TOTAL_MASS;

    EnvState {
        position: state.position + TIME_STEP * state.velocity,
        velocity: state.velocity + TIME_STEP * linear_acc,
        angle: state.angle + TIME_STEP * state.angular_velocity,
        angular_velocity: state.angular_velocity + TIME_STEP * angular_acc,
    }
}

/// True when `state` is outside the survivable region.
pub fn is_failure(state: &EnvState) -> bool {
    state.position.abs() > POSITION_LIMIT || state.angle.abs() > ANGLE_LIMIT
}

/// A cart-pole episode: current state plus step/termination bookkeeping.
///
/// A fresh environment starts in the finished state so that the first
/// [`CartPole::reset`] is mandatory.
#[derive(Debug, Clone)]
pub struct CartPole {
    state: EnvState,
    steps: u32,
    done: bool,
}

impl CartPole {
    pub fn new() -> CartPole {
        CartPole {
            state: EnvState::ZERO,
            steps: 0,
            done: true,
        }
    }

    /// Start a new episode with every state component drawn uniformly from
    /// ±[`RESET_BOUND`], in field order (position, velocity, angle,
    /// angular velocity).
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvState {
        self.state = EnvState {
            position: rng.random_range(-RESET_BOUND..RESET_BOUND),
            velocity: rng.random_range(-RESET_BOUND..RESET_BOUND),
            angle: rng.random_range(-RESET_BOUND..RESET_BOUND),
            angular_velocity: rng.random_range(-RESET_BOUND..RESET_BOUND),
        };
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    /// Steps taken since the last reset.
    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Apply `action` for one time step.
    ///
    /// Stepping a finished episode (terminal, truncated, or never reset) is
    /// an error rather than a silent restart.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.state = dynamics(self.state, action);
        self.steps += 1;

        let failed = is_failure(&self.state);
        let truncated = !failed && self.steps >= MAX_EPISODE_STEPS;
        self.done = failed || truncated;

        Ok(StepOutcome {
            state: self.state,
            reward: 1.0,
            failed,
            truncated,
            step_index: self.steps,
        })
    }
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole::new()
    }
}
