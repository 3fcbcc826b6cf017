//! Fixed-timestep physics for the ball-in-bowl system.
//!
//! The ball is modelled as two decoupled planar pendulums hanging from the
//! bowl (one per horizontal axis). Horizontal motion of the bowl drives the
//! pendulum pivot; the pendulum pushes back on the bowl, and that reaction is
//! what the player feels. The bowl itself is an admittance: a virtual mass
//! with viscous damping in the horizontal plane, resting on a one-sided
//! spring-damper table in z.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Resonant frequency of the simulated ball.
pub const BALL_RESONANCE_HZ: f64 = 1.88;
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Pendulum length whose small-oscillation frequency is `f_res`.
pub fn resonant_length(f_res: f64, gravity: f64) -> Result<f64, SimError> {
    if !(f_res > 0.0) || !f_res.is_finite() {
        return Err(SimError::Domain(format!("resonant frequency must be positive, got {f_res}")));
    }
    if !(gravity > 0.0) || !gravity.is_finite() {
        return Err(SimError::Domain(format!("gravity must be positive, got {gravity}")));
    }
    let w = 2.0 * PI * f_res;
    Ok(gravity / (w * w))
}

/// Small-oscillation frequency (Hz) of a pendulum of the given length.
pub fn natural_frequency(length: f64, gravity: f64) -> f64 {
    (gravity / length).sqrt() / (2.0 * PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub pendulum_length: f64,
    pub gravity: f64,
    /// Effective ball mass used for haptic rendering (kg).
    pub ball_mass: f64,
    pub angular_damping: f64,
    /// Deflection magnitude above which the ball counts as fallen out.
    pub rim_angle: f64,
    /// Deflection magnitude below which a fallen ball counts as back in.
    pub reentry_angle: f64,
    pub virtual_mass: f64,
    pub virtual_damping: f64,
    pub table_height: f64,
    pub table_stiffness: f64,
    pub table_damping: f64,
    /// Height band above the table that still counts as resting.
    pub contact_tolerance: f64,
    /// Downward force rendered while lifted (N).
    pub loading_force: f64,
    pub physics_dt: f64,
    pub record_rate: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        let virtual_mass = 3.0;
        let table_stiffness = 5000.0;
        Self {
            pendulum_length: resonant_length(BALL_RESONANCE_HZ, STANDARD_GRAVITY)
                .expect("positive constants"),
            gravity: STANDARD_GRAVITY,
            ball_mass: 0.5,
            angular_damping: 0.3,
            rim_angle: 1.0,
            reentry_angle: 0.5,
            virtual_mass,
            virtual_damping: 10.0,
            table_height: 0.0,
            table_stiffness,
            // slightly over-critical so a pressed bowl settles without bouncing off
            table_damping: 1.1 * 2.0 * (table_stiffness * virtual_mass).sqrt(),
            contact_tolerance: 0.005,
            loading_force: 0.0,
            physics_dt: 0.001,
            record_rate: 100.0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(m));
        let all = [
            self.pendulum_length,
            self.gravity,
            self.ball_mass,
            self.angular_damping,
            self.rim_angle,
            self.reentry_angle,
            self.virtual_mass,
            self.virtual_damping,
            self.table_height,
            self.table_stiffness,
            self.table_damping,
            self.contact_tolerance,
            self.loading_force,
            self.physics_dt,
            self.record_rate,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if self.pendulum_length <= 0.0 || self.ball_mass <= 0.0 || self.virtual_mass <= 0.0 {
            return bad("pendulum_length, ball_mass and virtual_mass must be positive".into());
        }
        if self.gravity <= 0.0 {
            return bad("gravity must be positive".into());
        }
        if !(0.0 < self.reentry_angle
            && self.reentry_angle < self.rim_angle
            && self.rim_angle < PI / 2.0)
        {
            return bad(format!(
                "need 0 < reentry_angle ({}) < rim_angle ({}) < pi/2",
                self.reentry_angle, self.rim_angle
            ));
        }
        if self.angular_damping < 0.0
            || self.virtual_damping < 0.0
            || self.table_stiffness < 0.0
            || self.table_damping < 0.0
            || self.contact_tolerance < 0.0
            || self.loading_force < 0.0
        {
            return bad("damping, stiffness, tolerance and loading must be non-negative".into());
        }
        if !(self.physics_dt > 0.0 && self.physics_dt <= 0.001 + 1e-12) {
            return bad(format!("physics_dt must be in (0, 1 ms], got {}", self.physics_dt));
        }
        if self.record_rate <= 0.0 {
            return bad("record_rate must be positive".into());
        }
        self.steps_per_record()?;
        Ok(())
    }

    /// Physics steps between recorded samples; errors unless the record
    /// period is an integer multiple of the physics step.
    pub fn steps_per_record(&self) -> Result<usize, SimError> {
        let ratio = 1.0 / (self.physics_dt * self.record_rate);
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
            return Err(SimError::InvalidParams(format!(
                "record_rate {} does not divide physics rate {}",
                self.record_rate,
                1.0 / self.physics_dt
            )));
        }
        Ok(n as usize)
    }

    pub fn natural_frequency(&self) -> f64 {
        natural_frequency(self.pendulum_length, self.gravity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    /// Deflection per horizontal axis (x, y), radians.
    pub theta: [f64; 2],
    pub omega: [f64; 2],
    pub in_bowl: bool,
}

impl Default for BallState {
    fn default() -> Self {
        Self { theta: [0.0; 2], omega: [0.0; 2], in_bowl: true }
    }
}

impl BallState {
    pub fn deflection(&self) -> f64 {
        self.theta[0].hypot(self.theta[1])
    }

    fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.omega.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowlState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub lifted: bool,
}

impl BowlState {
    /// Bowl at rest on the table at the given horizontal location.
    pub fn resting_at(x: f64, y: f64, params: &SimParams) -> Self {
        Self { position: [x, y, params.table_height], velocity: [0.0; 3], lifted: false }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.position[0], self.position[1]]
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }
}

/// One recorded sample of the force the user applies at the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub t: f64,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
}

/// Angular acceleration of one pendulum axis driven by pivot acceleration `pivot_accel`.
#[inline]
pub fn pendulum_accel(theta: f64, omega: f64, pivot_accel: f64, params: &SimParams) -> f64 {
    let l = params.pendulum_length;
    -(params.gravity / l) * theta.sin() - (pivot_accel / l) * theta.cos()
        - params.angular_damping * omega
}

/// Angular acceleration of both axes for the given state and pivot acceleration.
pub fn ball_accel(ball: &BallState, pivot_accel: [f64; 2], params: &SimParams) -> [f64; 2] {
    [
        pendulum_accel(ball.theta[0], ball.omega[0], pivot_accel[0], params),
        pendulum_accel(ball.theta[1], ball.omega[1], pivot_accel[1], params),
    ]
}

/// Advance the ball by one step with classic RK4, holding the pivot
/// acceleration constant over the step, then apply the fall-out hysteresis.
pub fn step_ball(
    ball: &BallState,
    pivot_accel: [f64; 2],
    params: &SimParams,
    dt: f64,
) -> Result<BallState, SimError> {
    if !ball.is_finite() || !pivot_accel.iter().all(|a| a.is_finite()) {
        return Err(SimError::NonFinite { t: f64::NAN, what: "ball input" });
    }
    let mut next = *ball;
    for axis in 0..2 {
        let a = pivot_accel[axis];
        let f = |th: f64, om: f64| (om, pendulum_accel(th, om, a, params));
        let (th, om) = (ball.theta[axis], ball.omega[axis]);
        let (k1t, k1w) = f(th, om);
        let (k2t, k2w) = f(th + 0.5 * dt * k1t, om + 0.5 * dt * k1w);
        let (k3t, k3w) = f(th + 0.5 * dt * k2t, om + 0.5 * dt * k2w);
        let (k4t, k4w) = f(th + dt * k3t, om + dt * k3w);
        next.theta[axis] = th + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        next.omega[axis] = om + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
    }
    if !next.is_finite() {
        return Err(SimError::NonFinite { t: f64::NAN, what: "ball state" });
    }
    next.in_bowl = next_in_bowl(ball.in_bowl, next.deflection(), params);
    Ok(next)
}

/// Fall-out indicator with hysteresis between `reentry_angle` and `rim_angle`.
pub fn next_in_bowl(in_bowl: bool, deflection: f64, params: &SimParams) -> bool {
    if in_bowl {
        deflection <= params.rim_angle
    } else {
        deflection < params.reentry_angle
    }
}

/// Horizontal force the ball exerts on the bowl (and so on the hand).
pub fn ball_reaction_force(ball: &BallState, ball_accel: [f64; 2], params: &SimParams) -> [f64; 2] {
    let ml = params.ball_mass * params.pendulum_length;
    let f = |i: usize| {
        let (th, om) = (ball.theta[i], ball.omega[i]);
        -ml * (ball_accel[i] * th.cos() - om * om * th.sin())
    };
    [f(0), f(1)]
}

/// Mechanical energy of the pendulum (both axes) relative to hanging at rest.
pub fn pendulum_energy(ball: &BallState, params: &SimParams) -> f64 {
    let (m, l, g) = (params.ball_mass, params.pendulum_length, params.gravity);
    (0..2)
        .map(|i| 0.5 * m * l * l * ball.omega[i].powi(2) + m * g * l * (1.0 - ball.theta[i].cos()))
        .sum()
}

/// Spring-damper force from the table; active only below the surface. The
/// damper may pull while penetrating, which keeps a rebounding bowl from
/// leaving the surface.
pub fn table_contact_force(bowl: &BowlState, params: &SimParams) -> f64 {
    let penetration = params.table_height - bowl.position[2];
    if penetration <= 0.0 {
        return 0.0;
    }
    params.table_stiffness * penetration - params.table_damping * bowl.velocity[2]
}

pub fn is_lifted(z: f64, params: &SimParams) -> bool {
    z > params.table_height + params.contact_tolerance
}

/// Net force on the bowl's virtual mass for the given inputs.
pub fn bowl_net_force(
    bowl: &BowlState,
    user_force: [f64; 3],
    ball_force: [f64; 2],
    params: &SimParams,
) -> [f64; 3] {
    let b = params.virtual_damping;
    let load = if bowl.lifted { params.loading_force } else { 0.0 };
    [
        user_force[0] + ball_force[0] - b * bowl.velocity[0],
        user_force[1] + ball_force[1] - b * bowl.velocity[1],
        user_force[2] - load + table_contact_force(bowl, params),
    ]
}

/// Advance the bowl admittance by one step (semi-implicit Euler).
pub fn step_bowl(
    bowl: &BowlState,
    user_force: [f64; 3],
    ball_force: [f64; 2],
    params: &SimParams,
    dt: f64,
) -> Result<BowlState, SimError> {
    if !bowl.is_finite()
        || !user_force.iter().all(|f| f.is_finite())
        || !ball_force.iter().all(|f| f.is_finite())
    {
        return Err(SimError::NonFinite { t: f64::NAN, what: "bowl input" });
    }
    let force = bowl_net_force(bowl, user_force, ball_force, params);
    let mut next = *bowl;
    for i in 0..3 {
        next.velocity[i] += dt * force[i] / params.virtual_mass;
        next.position[i] += dt * next.velocity[i];
    }
    if !next.is_finite() {
        return Err(SimError::NonFinite { t: f64::NAN, what: "bowl state" });
    }
    next.lifted = is_lifted(next.position[2], params);
    Ok(next)
}

/// Ball and bowl advanced together by one physics step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsState {
    pub ball: BallState,
    pub bowl: BowlState,
    /// Reaction force the ball applied to the bowl during the last step.
    pub ball_force: [f64; 2],
}

impl PhysicsState {
    pub fn new(bowl: BowlState) -> Self {
        Self { ball: BallState::default(), bowl, ball_force: [0.0; 2] }
    }

    /// One coupled step: the bowl acceleration for this step drives the
    /// pendulum pivot, and the pendulum's reaction is applied to the bowl.
    pub fn step(&mut self, user_force: [f64; 3], params: &SimParams) -> Result<(), SimError> {
        let dt = params.physics_dt;
        // pivot acceleration from the current net force (ball force from the previous step)
        let force = bowl_net_force(&self.bowl, user_force, self.ball_force, params);
        let pivot = [force[0] / params.virtual_mass, force[1] / params.virtual_mass];
        let ball = step_ball(&self.ball, pivot, params, dt)?;
        let alpha = ball_accel(&ball, pivot, params);
        let ball_force = ball_reaction_force(&ball, alpha, params);
        let bowl = step_bowl(&self.bowl, user_force, self.ball_force, params, dt)?;
        self.ball = ball;
        self.bowl = bowl;
        self.ball_force = ball_force;
        Ok(())
    }
}
