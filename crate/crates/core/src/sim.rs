//! Trial execution: couples the physics, the task rules and a force source.

use serde::{Deserialize, Serialize};

use crate::dynamics::{BallState, BowlState, ForceSample, PhysicsState, SimParams};
use crate::error::{SimError, TaskError};
use crate::task::{
    accrue_task_time, check_collection, scale_distribution, Flag, FlagDistribution, TrialSpec,
    TrialState, Workspace, TRIAL_TIME_LIMIT,
};

/// What a force source gets to see each physics step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: f64,
    pub ball: BallState,
    pub bowl: BowlState,
    /// Force the ball applied to the bowl on the previous step.
    pub ball_force: [f64; 2],
    pub remaining: &'a [Flag],
    pub params: &'a SimParams,
}

/// Anything that produces a user force each physics step.
pub trait Controller {
    fn command(&mut self, obs: &Observation<'_>) -> [f64; 3];
}

/// Applies no force at all.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullController;

impl Controller for NullController {
    fn command(&mut self, _obs: &Observation<'_>) -> [f64; 3] {
        [0.0; 3]
    }
}

impl<F> Controller for F
where
    F: FnMut(&Observation<'_>) -> [f64; 3],
{
    fn command(&mut self, obs: &Observation<'_>) -> [f64; 3] {
        self(obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Collected { flag: usize },
    Lift,
    Rest,
    FallOut,
    Reentry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub spec: TrialSpec,
    /// Flag positions in workspace coordinates (m).
    pub flags: Vec<[f64; 2]>,
    pub samples: Vec<ForceSample>,
    pub events: Vec<TaskEvent>,
    pub final_state: TrialState,
    pub valid: bool,
    pub fault: Option<String>,
}

impl TrialLog {
    pub fn duration(&self) -> f64 {
        self.final_state.wall_time
    }

    pub fn flags_collected(&self) -> usize {
        self.final_state.collected_count
    }

    pub fn task_time(&self) -> f64 {
        self.final_state.task_time
    }

    pub fn record_rate(&self) -> Option<f64> {
        match self.samples.as_slice() {
            [a, b, ..] => Some(1.0 / (b.t - a.t)),
            _ => None,
        }
    }
}

/// Everything needed to run one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub spec: TrialSpec,
    pub flags: Vec<[f64; 2]>,
    /// Params with `loading_force` set for this trial's load level.
    pub params: SimParams,
    pub tolerance: f64,
    pub start_xy: [f64; 2],
    pub time_limit: f64,
}

impl TrialSetup {
    pub fn new(
        spec: TrialSpec,
        dist: &FlagDistribution,
        workspace: &Workspace,
        base_params: &SimParams,
        max_sabd_force: f64,
        tolerance: f64,
    ) -> Result<Self, TaskError> {
        if dist.id != spec.distribution {
            return Err(TaskError::Config(format!(
                "trial wants distribution {} but got {}",
                spec.distribution, dist.id
            )));
        }
        if !(max_sabd_force > 0.0) {
            return Err(TaskError::Config(format!("max SABD force must be positive, got {max_sabd_force}")));
        }
        let flags = scale_distribution(dist, workspace, tolerance)?;
        let params = SimParams { loading_force: spec.load.fraction() * max_sabd_force, ..base_params.clone() };
        params.validate().map_err(|e| TaskError::Config(e.to_string()))?;
        Ok(Self {
            spec,
            flags,
            params,
            tolerance,
            start_xy: workspace.center(),
            time_limit: TRIAL_TIME_LIMIT,
        })
    }
}

/// A trial in progress. Step it with user forces until `is_finished`.
#[derive(Debug, Clone)]
pub struct Trial {
    setup: TrialSetup,
    physics: PhysicsState,
    state: TrialState,
    steps: u64,
    max_steps: u64,
    steps_per_record: u64,
    samples: Vec<ForceSample>,
    events: Vec<TaskEvent>,
    fault: Option<String>,
    finished: bool,
}

impl Trial {
    pub fn new(setup: TrialSetup) -> Result<Self, SimError> {
        setup.params.validate()?;
        let steps_per_record = setup.params.steps_per_record()? as u64;
        let max_steps = (setup.time_limit / setup.params.physics_dt).round() as u64;
        let bowl = BowlState::resting_at(setup.start_xy[0], setup.start_xy[1], &setup.params);
        let state = TrialState::new(&setup.flags);
        Ok(Self {
            physics: PhysicsState::new(bowl),
            state,
            steps: 0,
            max_steps,
            steps_per_record,
            samples: Vec::with_capacity((max_steps / steps_per_record) as usize + 1),
            events: Vec::new(),
            fault: None,
            finished: false,
            setup,
        })
    }

    pub fn setup(&self) -> &TrialSetup {
        &self.setup
    }

    pub fn physics(&self) -> &PhysicsState {
        &self.physics
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.setup.params.physics_dt
    }

    pub fn time_remaining(&self) -> f64 {
        (self.setup.time_limit - self.time()).max(0.0)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn events(&self) -> &[TaskEvent] {
        &self.events
    }

    pub fn observation(&self) -> Observation<'_> {
        Observation {
            t: self.time(),
            ball: self.physics.ball,
            bowl: self.physics.bowl,
            ball_force: self.physics.ball_force,
            remaining: &self.state.remaining,
            params: &self.setup.params,
        }
    }

    /// Advance one physics step with the given user force. Returns the events
    /// produced by this step. No-op once finished.
    pub fn step(&mut self, user_force: [f64; 3]) -> &[TaskEvent] {
        if self.finished {
            return &[];
        }
        let first_event = self.events.len();
        let t0 = self.time();
        if self.steps % self.steps_per_record == 0 {
            let [fx, fy, fz] = user_force;
            self.samples.push(ForceSample { t: t0, fx, fy, fz });
        }
        let before = self.physics;
        if let Err(e) = self.physics.step(user_force, &self.setup.params) {
            let e = match e {
                SimError::NonFinite { what, .. } => SimError::NonFinite { t: t0, what },
                other => other,
            };
            self.fault = Some(e.to_string());
            self.finished = true;
            return &[];
        }
        self.steps += 1;
        let t = self.time();
        let dt = self.setup.params.physics_dt;
        self.state.wall_time = t;
        accrue_task_time(&mut self.state, &self.physics.bowl, dt);

        let (ball, bowl) = (self.physics.ball, self.physics.bowl);
        if bowl.lifted != before.bowl.lifted {
            let kind = if bowl.lifted { EventKind::Lift } else { EventKind::Rest };
            self.events.push(TaskEvent { t, kind });
        }
        if ball.in_bowl != before.ball.in_bowl {
            let kind = if ball.in_bowl { EventKind::Reentry } else { EventKind::FallOut };
            self.events.push(TaskEvent { t, kind });
        }
        for flag in check_collection(&mut self.state, &bowl, &ball, self.setup.tolerance) {
            self.events.push(TaskEvent { t, kind: EventKind::Collected { flag: flag.index } });
        }
        if self.state.all_collected() || self.steps >= self.max_steps {
            self.finished = true;
        }
        &self.events[first_event..]
    }

    /// Stop early and mark the trial invalid (e.g. the live player disconnected).
    pub fn abort(&mut self, reason: impl Into<String>) {
        self.fault = Some(reason.into());
        self.finished = true;
    }

    pub fn into_log(self) -> TrialLog {
        TrialLog {
            spec: self.setup.spec,
            flags: self.setup.flags,
            samples: self.samples,
            events: self.events,
            final_state: self.state,
            valid: self.fault.is_none(),
            fault: self.fault,
        }
    }
}

/// Run a trial to completion with the given force source.
pub fn run_simulation(setup: TrialSetup, controller: &mut dyn Controller) -> Result<TrialLog, SimError> {
    let mut trial = Trial::new(setup)?;
    while !trial.is_finished() {
        let force = controller.command(&trial.observation());
        trial.step(force);
    }
    Ok(trial.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{builtin_distribution, DistributionId, LoadLevel, DEFAULT_COLLECTION_TOLERANCE};

    fn setup(load: LoadLevel) -> TrialSetup {
        let spec = TrialSpec {
            distribution: DistributionId::B,
            load,
            set_index: 1,
            trial_index: 1,
            rng_seed: 7,
        };
        TrialSetup::new(
            spec,
            &builtin_distribution(DistributionId::B),
            &Workspace::default(),
            &SimParams::default(),
            40.0,
            DEFAULT_COLLECTION_TOLERANCE,
        )
        .unwrap()
    }

    #[test]
    fn null_controller_collects_nothing() {
        let log = run_simulation(setup(LoadLevel::Zero), &mut NullController).unwrap();
        assert!(log.valid);
        assert_eq!(log.flags_collected(), 0);
        assert_eq!(log.task_time(), 0.0);
        assert_eq!(log.samples.len(), 2000);
        assert!((log.duration() - 20.0).abs() < 1e-9);
        assert!(log.events.is_empty());
    }

    #[test]
    fn lift_and_hold_accrues_task_time() {
        // PD on height, holds well above the table
        let mut hold = |obs: &Observation<'_>| {
            let z = obs.bowl.position[2];
            let vz = obs.bowl.velocity[2];
            [0.0, 0.0, obs.params.loading_force + 400.0 * (0.05 - z) - 60.0 * vz]
        };
        let log = run_simulation(setup(LoadLevel::Fifty), &mut hold).unwrap();
        assert!(log.valid);
        assert!(log.task_time() > 19.5, "task time {}", log.task_time());
        assert!(log.task_time() <= log.duration());
        assert_eq!(log.events.first().map(|e| e.kind), Some(EventKind::Lift));
        let collected = log.events.iter().filter(|e| matches!(e.kind, EventKind::Collected { .. })).count();
        assert_eq!(collected, log.flags_collected());
    }

    #[test]
    fn non_finite_force_marks_trial_invalid() {
        let mut bad = |obs: &Observation<'_>| if obs.t > 1.0 { [f64::NAN, 0.0, 0.0] } else { [0.0; 3] };
        let log = run_simulation(setup(LoadLevel::Zero), &mut bad).unwrap();
        assert!(!log.valid);
        assert!(log.fault.as_deref().unwrap().contains("non-finite"));
    }

    #[test]
    fn sample_count_matches_duration() {
        // teleport-like controller: drive straight at each flag with a stiff coupling
        let mut chase = |obs: &Observation<'_>| {
            let target = obs.remaining.first().map(|f| f.xy).unwrap_or(obs.bowl.xy());
            let mut f = [0.0; 3];
            for i in 0..2 {
                f[i] = 300.0 * (target[i] - obs.bowl.position[i]) - 40.0 * obs.bowl.velocity[i];
            }
            f[2] = 400.0 * (0.05 - obs.bowl.position[2]) - 60.0 * obs.bowl.velocity[2];
            f
        };
        let log = run_simulation(setup(LoadLevel::Zero), &mut chase).unwrap();
        let expected = (log.duration() * 100.0 - 1e-9).ceil() as usize;
        assert_eq!(log.samples.len(), expected);
        for w in log.samples.windows(2) {
            assert!((w[1].t - w[0].t - 0.01).abs() < 1e-9);
        }
        assert!(log.events.windows(2).all(|w| w[0].t <= w[1].t));
    }
}
