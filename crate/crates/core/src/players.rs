//! Synthetic participants: closed-loop force controllers with sensory dead
//! time, a limited force bandwidth and motor noise.
//!
//! Each player sees the world `onset_delay` seconds late. It predicts the
//! present bowl state with an internal copy of the bowl admittance driven by
//! its own (already issued) forces. The ball gets the same treatment: a
//! linearised pendulum hangs in the model bowl, and the observed deviation
//! from it is swung forward freely over the dead time. A PD law
//! pulls the bowl toward the nearest flag it believes remains; a
//! strategy-specific term handles the ball. The summed command is passed
//! through a second-order low-pass at the effective bandwidth and clipped.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ball_reaction_force, pendulum_accel, step_bowl, BallState, BowlState, SimParams};
use crate::sim::{Controller, Observation};
use crate::task::LoadLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Counteract the ball: oppose its reaction force and damp its swing.
    ResonanceCancel,
    /// Ignore the ball's fast dynamics and keep the bowl circling slowly.
    LowFrequencySwirl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Dead time between a stimulus and the first change in force (s).
    pub onset_delay: f64,
    /// Low-pass corner on the commanded force at 0% load (Hz).
    pub bandwidth: f64,
    pub max_force: f64,
    pub strategy: Strategy,
    /// Change in bandwidth per percent of load (Hz/%), non-positive.
    pub load_bandwidth_slope: f64,
    /// Standard deviation of the motor noise added before filtering (N).
    pub noise_std: f64,
    pub rng_seed: u64,
    /// Closed-loop natural frequency of the reaching law as a fraction of
    /// the unloaded bandwidth. Load acts only through the force filter.
    pub tracking_ratio: f64,
    /// Height above the table the player tries to hold (m).
    pub lift_height: f64,
    /// Gain of the ball-damping term for the resonance-cancel strategy (1/s).
    pub ball_damping_gain: f64,
    /// Amplitude (N) and frequency (Hz) of the swirl bias.
    pub swirl_force: f64,
    pub swirl_frequency: f64,
    /// Distance to the target inside which the swirl bias fades out
    /// linearly, so the bowl can settle on a flag (m).
    pub swirl_radius: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        control_profile()
    }
}

/// Able-bodied profile: mean onset 0.33 s (0.41 / 0.25 s), mean reaction
/// bandwidth 3.2 Hz (2.44 / 4 Hz), no load dependence.
pub fn control_profile() -> ControllerParams {
    ControllerParams {
        onset_delay: 0.33,
        bandwidth: 3.2,
        max_force: 60.0,
        strategy: Strategy::ResonanceCancel,
        load_bandwidth_slope: 0.0,
        noise_std: 2.0,
        rng_seed: 0,
        tracking_ratio: 0.25,
        lift_height: 0.05,
        ball_damping_gain: 4.0,
        swirl_force: 0.0,
        swirl_frequency: 0.4,
        swirl_radius: 0.1,
    }
}

/// Stroke-like profile: mean onset 0.99 s (0.81 / 1.17 s), mean bandwidth
/// 1.04 Hz (1.23 / 0.85 Hz), bandwidth shrinking with load.
pub fn stroke_profile() -> ControllerParams {
    ControllerParams {
        onset_delay: 0.99,
        bandwidth: 1.04,
        strategy: Strategy::LowFrequencySwirl,
        load_bandwidth_slope: -0.01,
        ball_damping_gain: 0.0,
        tracking_ratio: 0.6,
        swirl_force: 0.5,
        ..control_profile()
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), String> {
        let finite = [
            self.onset_delay,
            self.bandwidth,
            self.max_force,
            self.load_bandwidth_slope,
            self.noise_std,
            self.tracking_ratio,
            self.lift_height,
            self.ball_damping_gain,
            self.swirl_force,
            self.swirl_frequency,
            self.swirl_radius,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err("controller parameters must be finite".into());
        }
        if self.onset_delay < 0.0 {
            return Err(format!("onset_delay must be >= 0, got {}", self.onset_delay));
        }
        if self.bandwidth <= 0.0 || self.bandwidth + 50.0 * self.load_bandwidth_slope <= 0.0 {
            return Err("bandwidth must stay positive at every load level".into());
        }
        if self.load_bandwidth_slope > 0.0 {
            return Err("load_bandwidth_slope must be <= 0".into());
        }
        if self.swirl_radius < 0.0 {
            return Err(format!("swirl_radius must be >= 0, got {}", self.swirl_radius));
        }
        if self.max_force <= 0.0 || self.noise_std < 0.0 || self.tracking_ratio <= 0.0 {
            return Err("max_force and tracking_ratio must be positive, noise_std non-negative".into());
        }
        Ok(())
    }

    pub fn effective_bandwidth(&self, load: LoadLevel) -> f64 {
        self.bandwidth + self.load_bandwidth_slope * load.percent() as f64
    }

    /// Frequency whose period equals the onset delay.
    pub fn reaction_frequency(&self) -> f64 {
        1.0 / self.onset_delay
    }
}

/// Critically damped second-order low-pass built from two first-order stages.
#[derive(Debug, Clone, Copy)]
struct LowPass {
    alpha: f64,
    stage1: [f64; 3],
    stage2: [f64; 3],
}

impl LowPass {
    fn new(corner_hz: f64, dt: f64) -> Self {
        Self { alpha: 1.0 - (-2.0 * PI * corner_hz * dt).exp(), stage1: [0.0; 3], stage2: [0.0; 3] }
    }

    fn apply(&mut self, input: [f64; 3]) -> [f64; 3] {
        for i in 0..3 {
            self.stage1[i] += self.alpha * (input[i] - self.stage1[i]);
            self.stage2[i] += self.alpha * (self.stage1[i] - self.stage2[i]);
        }
        self.stage2
    }
}

#[derive(Debug, Clone, Copy)]
struct Snapshot {
    bowl: BowlState,
    ball: BallState,
    /// Bit i set while flag i is still on the table.
    remaining: u64,
    /// Internal-model bowl state at the same instant.
    model: BowlState,
    /// Forced response of a linearised pendulum to the model bowl, `[theta, omega]` per axis.
    model_ball: [[f64; 2]; 2],
}

#[derive(Debug, Clone)]
pub struct SyntheticPlayer {
    params: ControllerParams,
    bandwidth: f64,
    delay_steps: usize,
    history: VecDeque<Snapshot>,
    flags: Vec<[f64; 2]>,
    model: Option<BowlState>,
    model_ball: [[f64; 2]; 2],
    filter: Option<LowPass>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl SyntheticPlayer {
    /// `trial_seed` is mixed into the profile's seed so every trial draws its own noise.
    pub fn new(params: ControllerParams, load: LoadLevel, trial_seed: u64) -> Self {
        let bandwidth = params.effective_bandwidth(load);
        let seed = params.rng_seed ^ trial_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let noise = (params.noise_std > 0.0).then(|| Normal::new(0.0, params.noise_std).expect("finite std"));
        Self {
            bandwidth,
            delay_steps: 0,
            history: VecDeque::new(),
            flags: Vec::new(),
            model: None,
            model_ball: [[0.0; 2]; 2],
            filter: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            params,
        }
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn init(&mut self, obs: &Observation<'_>) {
        let p = obs.params;
        self.delay_steps = (self.params.onset_delay / p.physics_dt).round() as usize;
        self.history = VecDeque::with_capacity(self.delay_steps + 1);
        let max_index = obs.remaining.iter().map(|f| f.index).max().unwrap_or(0);
        self.flags = vec![[0.0; 2]; max_index + 1];
        for f in obs.remaining {
            self.flags[f.index] = f.xy;
        }
        self.model = Some(obs.bowl);
        self.model_ball = [[0.0; 2]; 2];
        self.filter = Some(LowPass::new(self.bandwidth, p.physics_dt));
    }

    /// Compute the force for this physics step.
    pub fn plan_force(&mut self, obs: &Observation<'_>) -> [f64; 3] {
        if self.filter.is_none() {
            self.init(obs);
        }
        let p = obs.params;
        let model_now = self.model.expect("initialized");
        let remaining = obs
            .remaining
            .iter()
            .filter(|f| f.index < 64)
            .fold(0u64, |m, f| m | (1 << f.index));
        self.history.push_back(Snapshot {
            bowl: obs.bowl,
            ball: obs.ball,
            remaining,
            model: model_now,
            model_ball: self.model_ball,
        });
        if self.history.len() > self.delay_steps + 1 {
            self.history.pop_front();
        }
        // before the delay line fills the player still sees the initial state
        let seen = self.history[0];

        let mut predicted = seen.bowl;
        for i in 0..3 {
            predicted.position[i] += model_now.position[i] - seen.model.position[i];
            predicted.velocity[i] += model_now.velocity[i] - seen.model.velocity[i];
        }

        let m = p.virtual_mass;
        let wn = 2.0 * PI * self.params.bandwidth * self.params.tracking_ratio;
        let kp = m * wn * wn;
        let kd_z = 2.0 * m * wn;
        let kd_xy = (kd_z - p.virtual_damping).max(0.0);

        let z_target = p.table_height + self.params.lift_height;
        let fz = p.loading_force + kp * (z_target - predicted.position[2]) - kd_z * predicted.velocity[2];

        let target = self.nearest_known_flag(seen.remaining, predicted.xy());
        let mut command = [0.0, 0.0, fz];
        if let Some(target) = target {
            for i in 0..2 {
                command[i] = kp * (target[i] - predicted.position[i]) - kd_xy * predicted.velocity[i];
            }
            let reach = (target[0] - predicted.position[0]).hypot(target[1] - predicted.position[1]);
            let ball = self.ball_term(&seen, obs.t, reach, p);
            if let Some(noise) = &self.noise {
                for (c, b) in command.iter_mut().zip(ball) {
                    *c += b + noise.sample(&mut self.rng);
                }
            } else {
                command[0] += ball[0];
                command[1] += ball[1];
            }
        }

        let filtered = self.filter.as_mut().expect("initialized").apply(command);
        let out = clip(filtered, self.params.max_force);
        let next = step_bowl(&model_now, out, [0.0; 2], p, p.physics_dt).unwrap_or(model_now);
        let w0sq = p.gravity / p.pendulum_length;
        for i in 0..2 {
            let a = (next.velocity[i] - model_now.velocity[i]) / p.physics_dt;
            let [th, om] = &mut self.model_ball[i];
            *om += p.physics_dt * (-w0sq * *th - p.angular_damping * *om - a / p.pendulum_length);
            *th += p.physics_dt * *om;
        }
        self.model = Some(next);
        out
    }

    fn nearest_known_flag(&self, remaining: u64, xy: [f64; 2]) -> Option<[f64; 2]> {
        self.flags
            .iter()
            .enumerate()
            .filter(|(i, _)| *i < 64 && remaining & (1 << i) != 0)
            .map(|(_, f)| *f)
            .min_by(|a, b| {
                let da = (a[0] - xy[0]).hypot(a[1] - xy[1]);
                let db = (b[0] - xy[0]).hypot(b[1] - xy[1]);
                da.total_cmp(&db)
            })
    }

    /// `reach` is the predicted distance to the target flag.
    fn ball_term(&self, seen: &Snapshot, t: f64, reach: f64, p: &SimParams) -> [f64; 2] {
        match self.params.strategy {
            Strategy::ResonanceCancel => {
                let w0 = (p.gravity / p.pendulum_length).sqrt();
                // free swing of the observed deviation from the model, plus the
                // model's forced response up to now
                let delay = self.history.len().saturating_sub(1) as f64 * p.physics_dt;
                let mut ball = seen.ball;
                for i in 0..2 {
                    let d = free_swing(
                        [seen.ball.theta[i] - seen.model_ball[i][0], seen.ball.omega[i] - seen.model_ball[i][1]],
                        w0,
                        p.angular_damping,
                        delay,
                    );
                    // then over the filter's phase lag at resonance
                    let lag = 2.0 * (w0 / (2.0 * PI * self.bandwidth)).atan() / w0;
                    let now = [d[0] + self.model_ball[i][0], d[1] + self.model_ball[i][1]];
                    let ahead = free_swing(now, w0, p.angular_damping, lag);
                    ball.theta[i] = ahead[0];
                    ball.omega[i] = ahead[1];
                }
                let alpha = [
                    pendulum_accel(ball.theta[0], ball.omega[0], 0.0, p),
                    pendulum_accel(ball.theta[1], ball.omega[1], 0.0, p),
                ];
                let reaction = ball_reaction_force(&ball, alpha, p);
                let k = self.params.ball_damping_gain * p.pendulum_length;
                [0, 1].map(|i| {
                    -reaction[i] + k * (p.virtual_mass * ball.omega[i] + p.virtual_damping * ball.theta[i])
                })
            }
            Strategy::LowFrequencySwirl => {
                let (s, c) = (2.0 * PI * self.params.swirl_frequency * t).sin_cos();
                let r = self.params.swirl_radius;
                let amp = self.params.swirl_force * if reach < r { reach / r } else { 1.0 };
                [amp * c, amp * s]
            }
        }
    }
}

/// Unforced linear pendulum `[theta, omega]` advanced by `h` seconds.
fn free_swing(x: [f64; 2], w0: f64, c: f64, h: f64) -> [f64; 2] {
    let z = c / 2.0;
    let wd = (w0 * w0 - z * z).max(0.0).sqrt();
    let (s, co) = (wd * h).sin_cos();
    let e = (-z * h).exp();
    let [th, om] = x;
    [
        e * (th * co + (om + z * th) / wd * s),
        e * (om * co - (w0 * w0 * th + z * om) / wd * s),
    ]
}

impl Controller for SyntheticPlayer {
    fn command(&mut self, obs: &Observation<'_>) -> [f64; 3] {
        self.plan_force(obs)
    }
}

fn clip(f: [f64; 3], max: f64) -> [f64; 3] {
    let norm = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
    if norm > max {
        let s = max / norm;
        [f[0] * s, f[1] * s, f[2] * s]
    } else {
        f
    }
}
