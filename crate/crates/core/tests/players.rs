mod support;

use ballbowl_core::dynamics::*;
use ballbowl_core::players::*;
use ballbowl_core::sim::{run_simulation, Observation, TrialLog, TrialSetup};
use ballbowl_core::spectral::{fft_spectrum, high_low_ratio, Axis};
use ballbowl_core::task::{
    builtin_distribution, DistributionId, Flag, LoadLevel, TrialSpec, Workspace, DEFAULT_COLLECTION_TOLERANCE,
};

use support::naive_dft_power;

fn trial(params: ControllerParams, dist: DistributionId, load: LoadLevel, seed: u64) -> TrialLog {
    let spec = TrialSpec { distribution: dist, load, set_index: 1, trial_index: 1, rng_seed: seed };
    let setup = TrialSetup::new(
        spec,
        &builtin_distribution(dist),
        &Workspace::default(),
        &SimParams::default(),
        40.0,
        DEFAULT_COLLECTION_TOLERANCE,
    )
    .unwrap();
    let mut player = SyntheticPlayer::new(params, load, seed);
    run_simulation(setup, &mut player).unwrap()
}

/// Hold the bowl over one flag with the ball started off-centre; returns fx at 100 Hz.
fn hold_with_swinging_ball(params: ControllerParams) -> Vec<f64> {
    let p = SimParams::default();
    let mut player = SyntheticPlayer::new(params, LoadLevel::Zero, 1);
    let mut phys = PhysicsState::new(BowlState::resting_at(0.0, 0.0, &p));
    phys.ball.theta = [0.3, 0.1];
    let flags = [Flag { index: 0, xy: [0.0, 0.0] }];
    let mut fx = Vec::new();
    for step in 0..20_000 {
        let obs = Observation {
            t: step as f64 * p.physics_dt,
            ball: phys.ball,
            bowl: phys.bowl,
            ball_force: phys.ball_force,
            remaining: &flags,
            params: &p,
        };
        let f = player.plan_force(&obs);
        if step % 10 == 0 {
            fx.push(f[0]);
        }
        phys.step(f, &p).unwrap();
    }
    fx
}

fn dominant_frequency(x: &[f64], rate: f64) -> f64 {
    let power = naive_dft_power(x);
    let k = (1..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
    k as f64 * rate / x.len() as f64
}

#[test]
fn control_player_clears_ring_at_no_load() {
    for seed in 0..5 {
        let log = trial(control_profile(), DistributionId::B, LoadLevel::Zero, seed);
        assert!(log.flags_collected() >= 15, "seed {seed}: {}", log.flags_collected());
    }
}

#[test]
fn resonance_cancel_output_peaks_near_resonance() {
    let fx = hold_with_swinging_ball(control_profile());
    let f = dominant_frequency(&fx, 100.0);
    assert!((f - BALL_RESONANCE_HZ).abs() <= 1.0, "peak at {f} Hz");
}

#[test]
fn narrow_bandwidth_keeps_power_low() {
    let params = ControllerParams { bandwidth: 0.5, ..control_profile() };
    let fx = hold_with_swinging_ball(params);
    let power = naive_dft_power(&fx);
    let n = fx.len() as f64;
    let total: f64 = power[1..].iter().sum();
    let high: f64 = power.iter().enumerate().skip(1).filter(|(k, _)| *k as f64 * 100.0 / n >= 1.0).map(|(_, p)| p).sum();
    assert!(high / total < 0.2, "{}", high / total);
}

#[test]
fn narrower_bandwidth_lowers_high_low_ratio() {
    // Effective bandwidth is varied through the load slope at 50% load, so the
    // reaching gains stay put and only the force filter changes. Single trials
    // are not strictly ordered: every target switch injects a command step
    // whose timing depends on the run. The seed and layout mean must be.
    let slopes = [0.0, -0.004, -0.008, -0.01];
    let mut means = vec![0.0; slopes.len()];
    let (mut ordered, mut steps) = (0, 0);
    for dist in DistributionId::COLLECTION {
        for seed in 0..4 {
            let mut last = f64::INFINITY;
            for (i, slope) in slopes.into_iter().enumerate() {
                let params = ControllerParams { load_bandwidth_slope: slope, ..stroke_profile() };
                let log = trial(params, dist, LoadLevel::Fifty, seed);
                let ratio = high_low_ratio(&fft_spectrum(&log.samples, Axis::X).unwrap(), 1.0).unwrap();
                means[i] += ratio / 20.0;
                if i > 0 {
                    steps += 1;
                    ordered += usize::from(ratio < last);
                }
                last = ratio;
            }
        }
    }
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    assert!(ordered * 10 >= steps * 8, "{ordered}/{steps} single-trial steps ordered");
}

#[test]
fn output_never_exceeds_max_force() {
    for params in [control_profile(), stroke_profile()] {
        for load in LoadLevel::ALL {
            let log = trial(params.clone(), DistributionId::E, load, 4);
            for s in &log.samples {
                let norm = (s.fx * s.fx + s.fy * s.fy + s.fz * s.fz).sqrt();
                assert!(norm <= params.max_force + 1e-9);
            }
        }
    }
}

#[test]
fn response_waits_exactly_the_dead_time() {
    let p = SimParams::default();
    let params = ControllerParams { noise_std: 0.0, ..stroke_profile() };
    let delay_steps = (params.onset_delay / p.physics_dt).round() as usize;
    let flags = [Flag { index: 0, xy: [0.1, 0.05] }];
    let change_at = 500;
    let mut a = SyntheticPlayer::new(params.clone(), LoadLevel::Zero, 1);
    let mut b = SyntheticPlayer::new(params, LoadLevel::Zero, 1);
    let still = BowlState::resting_at(0.0, 0.0, &p);
    let moved = BowlState::resting_at(-0.05, 0.02, &p);
    let obs = |t: usize, bowl: BowlState| Observation {
        t: t as f64 * p.physics_dt,
        ball: BallState::default(),
        bowl,
        ball_force: [0.0; 2],
        remaining: &flags,
        params: &p,
    };
    for step in 0..change_at + delay_steps + 5 {
        let fa = a.plan_force(&obs(step, still));
        let fb = b.plan_force(&obs(step, if step >= change_at { moved } else { still }));
        if step < change_at + delay_steps {
            assert_eq!(fa, fb, "step {step}");
        } else {
            assert_ne!(fa, fb, "step {step}");
        }
    }
}

#[test]
fn stroke_profile_slows_under_load() {
    let params = stroke_profile();
    assert!(params.effective_bandwidth(LoadLevel::Fifty) < params.effective_bandwidth(LoadLevel::Zero));
    let c = control_profile();
    assert_eq!(c.effective_bandwidth(LoadLevel::Fifty), c.effective_bandwidth(LoadLevel::Zero));
}
