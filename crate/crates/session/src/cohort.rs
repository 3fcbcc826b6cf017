//! Headless runs of synthetic subjects through the full 45-trial protocol.

use std::path::Path;

use ballbowl_core::anova::Group;
use ballbowl_core::players::{ControllerParams, SyntheticPlayer};
use ballbowl_core::protocol::{generate_protocol, Protocol};
use ballbowl_core::sim::{run_simulation, TrialLog, TrialSetup};
use ballbowl_core::task::{builtin_distribution, TrialSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::archive::{write_manifest, write_trial, ArchivedTrial, Manifest, Source, SubjectEntry};
use crate::config::{ProfileChoice, SessionConfig};
use crate::error::{Result, SessionError};

/// One synthetic participant.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPlan {
    pub subject: String,
    pub group: Group,
    pub profile: ProfileChoice,
    pub controller: ControllerParams,
    pub protocol_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRun {
    pub plan: SubjectPlan,
    pub protocol: Protocol,
    pub logs: Vec<TrialLog>,
}

/// `n` control-like subjects (`c01`..) then `n` stroke-like (`s01`..). All
/// per-subject seeds are drawn from `seed`.
pub fn plan_cohort(config: &SessionConfig, per_group: usize, seed: u64) -> Result<Vec<SubjectPlan>> {
    if per_group == 0 {
        return Err(SessionError::Config("subjects per group must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::with_capacity(2 * per_group);
    for (group, prefix) in [(Group::ControlLike, 'c'), (Group::StrokeLike, 's')] {
        let profile = SessionConfig::profile_for(group);
        let base = config.controller(profile)?;
        for i in 1..=per_group {
            let controller = ControllerParams { rng_seed: rng.random(), ..base.clone() };
            plans.push(SubjectPlan {
                subject: format!("{prefix}{i:02}"),
                group,
                profile,
                controller,
                protocol_seed: rng.random(),
            });
        }
    }
    Ok(plans)
}

/// The configured single subject.
pub fn plan_single(config: &SessionConfig) -> Result<SubjectPlan> {
    if config.profile == ProfileChoice::Human {
        return Err(SessionError::Config(
            "profile \"human\" cannot be simulated; use serve, or choose control/stroke".into(),
        ));
    }
    Ok(SubjectPlan {
        subject: config.subject.clone(),
        group: config.group,
        profile: config.profile,
        controller: config.controller(config.profile)?,
        protocol_seed: config.protocol_seed,
    })
}

pub fn trial_setup(config: &SessionConfig, spec: TrialSpec) -> Result<TrialSetup> {
    let mut setup = TrialSetup::new(
        spec,
        &builtin_distribution(spec.distribution),
        &config.workspace,
        &config.sim,
        config.max_sabd_force,
        config.collection_tolerance,
    )?;
    setup.time_limit = config.time_limit;
    Ok(setup)
}

/// Run one trial. A numerical fault inside the trial yields an invalid log,
/// not an error.
pub fn run_trial(config: &SessionConfig, plan: &SubjectPlan, spec: TrialSpec) -> Result<TrialLog> {
    let setup = trial_setup(config, spec)?;
    let mut player = SyntheticPlayer::new(plan.controller.clone(), spec.load, spec.rng_seed);
    Ok(run_simulation(setup, &mut player)?)
}

pub fn run_subject(config: &SessionConfig, plan: &SubjectPlan) -> Result<SubjectRun> {
    let protocol = generate_protocol(plan.protocol_seed);
    let logs = protocol
        .trials
        .par_iter()
        .map(|spec| run_trial(config, plan, *spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubjectRun { plan: plan.clone(), protocol, logs })
}

pub fn run_cohort(config: &SessionConfig, plans: &[SubjectPlan]) -> Result<Vec<SubjectRun>> {
    plans.par_iter().map(|p| run_subject(config, p)).collect()
}

/// Write runs as an archive under `out` (trial files plus manifest).
pub fn write_runs(out: &Path, config: &SessionConfig, cohort_seed: Option<u64>, runs: &[SubjectRun]) -> Result<Manifest> {
    let mut manifest = Manifest::new(config, cohort_seed);
    for run in runs {
        let trials = run
            .logs
            .par_iter()
            .map(|log| {
                write_trial(
                    out,
                    &ArchivedTrial {
                        subject: run.plan.subject.clone(),
                        group: run.plan.group,
                        source: Source::Simulated,
                        log: log.clone(),
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        manifest.subjects.push(SubjectEntry {
            subject: run.plan.subject.clone(),
            group: run.plan.group,
            profile: run.plan.profile,
            protocol_seed: run.plan.protocol_seed,
            trials,
        });
    }
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Plain-text table of a protocol: header line plus one row per trial.
pub fn protocol_table(protocol: &Protocol) -> String {
    let mut out = format!("# protocol seed {}\ntrial\tset\tload\tdistribution\trng_seed\n", protocol.seed);
    for t in &protocol.trials {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:#018x}\n",
            t.trial_index, t.set_index, t.load, t.distribution, t.rng_seed
        ));
    }
    out
}
