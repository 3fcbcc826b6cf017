use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use ballbowl_core::anova::Group;
use ballbowl_session::analysis::{analyze_archive, write_analysis, Design, Metric};
use ballbowl_session::archive::{read_manifest, trial_paths};
use ballbowl_session::cohort::{plan_cohort, plan_single, run_cohort, write_runs};
use ballbowl_session::config::{ProfileChoice, SessionConfig};

const BIN: &str = env!("CARGO_BIN_EXE_ballbowl");

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("run ballbowl")
}

#[test]
fn cli_pipeline_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut snapshots = Vec::new();
    for rep in ["a", "b"] {
        let arc = dir.path().join(format!("arc_{rep}"));
        let ana = dir.path().join(format!("ana_{rep}"));
        let sim = run(&["simulate", "--out", arc.to_str().unwrap(), "--subjects-per-group", "2", "--seed", "11"]);
        assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
        let an = run(&["analyze", "--in", arc.to_str().unwrap(), "--out", ana.to_str().unwrap()]);
        assert!(an.status.success(), "{}", String::from_utf8_lossy(&an.stderr));
        snapshots.push((tree(&arc), tree(&ana)));
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    assert_eq!(a.0.len(), 4 * 45 + 1);
    assert_eq!(a.0, b.0, "archives differ");
    assert_eq!(a.1, b.1, "analysis outputs differ");

    // a different cohort seed changes the data
    let arc = dir.path().join("arc_c");
    assert!(run(&["simulate", "--out", arc.to_str().unwrap(), "--subjects-per-group", "2", "--seed", "12"]).status.success());
    assert_ne!(tree(&arc), a.0);
}

#[test]
fn full_cohort_writes_540_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = SessionConfig::default();
    let plans = plan_cohort(&config, 6, 3).unwrap();
    let runs = run_cohort(&config, &plans).unwrap();
    let manifest = write_runs(dir.path(), &config, Some(3), &runs).unwrap();
    assert_eq!(manifest.trial_count(), 540);
    let back = read_manifest(dir.path()).unwrap();
    assert_eq!(back, manifest);
    let paths = trial_paths(dir.path(), &back);
    assert_eq!(paths.len(), 540);
    assert!(paths.iter().all(|p| p.is_file()));

    let analysis = analyze_archive(dir.path()).unwrap();
    assert_eq!(analysis.rows.len(), 540);
    for metric in Metric::ALL {
        let mixed = analysis.anova(metric, Design::Mixed).expect("mixed table");
        assert_eq!(mixed.subjects, 12);
        for g in [Group::ControlLike, Group::StrokeLike] {
            assert_eq!(analysis.anova(metric, Design::WithinGroup(g)).unwrap().subjects, 6);
        }
    }
    let out = dir.path().join("analysis");
    let files = write_analysis(&out, &analysis).unwrap();
    assert!(files.iter().all(|f| f.is_file()));
    assert!(out.join("anova_time_per_target.csv").is_file());
}

#[test]
fn single_subject_archive_skips_anova_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let config = SessionConfig { profile: ProfileChoice::Stroke, ..SessionConfig::default() };
    let runs = run_cohort(&config, &[plan_single(&config).unwrap()]).unwrap();
    write_runs(dir.path(), &config, None, &runs).unwrap();
    let analysis = analyze_archive(dir.path()).unwrap();
    assert!(analysis.anova.is_empty());
    assert_eq!(analysis.rows.len(), 45);
    assert!(analysis.warnings.iter().any(|w| w.contains("mixed ANOVA skipped")));

    let out = dir.path().join("analysis");
    let an = run(&["analyze", "--in", dir.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(an.status.success());
    assert!(String::from_utf8_lossy(&an.stderr).contains("warning: time_per_target: mixed ANOVA skipped"));
    assert!(out.join("trial_metrics.csv").is_file());
    assert!(!out.join("anova_time_per_target.csv").exists());
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("arc");
    for text in ["max_sabd_force = -3.0", "[sim]\nvirtual_mass = 0.0", "nonsense = true", "time_limit = 25.0"] {
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, text).unwrap();
        let sim = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(sim.status.code(), Some(2), "{text}");
        assert!(!out.exists());
        let serve = run(&["serve", "--config", cfg.to_str().unwrap(), "--port", "0"]);
        assert_eq!(serve.status.code(), Some(2), "{text}");
    }
    // a human profile cannot be simulated headlessly
    let cfg = dir.path().join("human.toml");
    fs::write(&cfg, "profile = \"human\"").unwrap();
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(2));
    // unreadable archive is a runtime error, not a config error
    let an = run(&["analyze", "--in", dir.path().join("missing").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(an.status.code(), Some(1));
}

#[test]
fn sample_config_in_repo_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/session.toml");
    let config = SessionConfig::load(&path).unwrap();
    assert_eq!(config.group, Group::StrokeLike);
}

#[test]
fn protocol_command_prints_45_rows() {
    let out = run(&["protocol", "--seed", "7"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).collect();
    assert_eq!(rows.len(), 45);
    assert_eq!(text, String::from_utf8(run(&["protocol", "--seed", "7"]).stdout).unwrap());
}
