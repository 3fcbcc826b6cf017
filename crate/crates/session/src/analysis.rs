//! Archive analysis: per-trial metrics, group x load averaged spectra and
//! ANOVA tables for the five outcome metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ballbowl_core::anova::{
    mixed_anova, reduce_repeats, rm_anova_2way, AnovaResult, CellData, CellReduction, Group, TrialValue,
};
use ballbowl_core::spectral::{aggregate_spectra, analyze_trial, Axis, Spectrum, TrialMetrics};
use ballbowl_core::task::{LoadLevel, TrialSpec};
use rayon::prelude::*;

use crate::archive::{read_manifest, read_trial, trial_paths, ArchivedTrial};
use crate::error::{Result, SessionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    TimePerTarget,
    PeakNearResonanceX,
    PeakNearResonanceY,
    HighLowRatioX,
    HighLowRatioY,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::TimePerTarget,
        Metric::PeakNearResonanceX,
        Metric::PeakNearResonanceY,
        Metric::HighLowRatioX,
        Metric::HighLowRatioY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TimePerTarget => "time_per_target",
            Metric::PeakNearResonanceX => "peak_near_resonance_x",
            Metric::PeakNearResonanceY => "peak_near_resonance_y",
            Metric::HighLowRatioX => "high_low_ratio_x",
            Metric::HighLowRatioY => "high_low_ratio_y",
        }
    }

    pub fn value(self, m: &TrialMetrics) -> Option<f64> {
        match self {
            Metric::TimePerTarget => m.time_per_target,
            Metric::PeakNearResonanceX => m.peak_near_resonance_x,
            Metric::PeakNearResonanceY => m.peak_near_resonance_y,
            Metric::HighLowRatioX => m.high_low_ratio_x,
            Metric::HighLowRatioY => m.high_low_ratio_y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub subject: String,
    pub group: Group,
    pub spec: TrialSpec,
    pub valid: bool,
    pub duration: f64,
    pub metrics: TrialMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSpectrum {
    pub group: Group,
    pub load: LoadLevel,
    pub trials: usize,
    pub spectrum: Spectrum,
}

/// Which design an ANOVA table comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    Mixed,
    /// Two-way repeated measures within one group.
    WithinGroup(Group),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub metric: Metric,
    pub design: Design,
    pub subjects: usize,
    pub result: AnovaResult,
}

impl AnovaTable {
    pub fn file_name(&self) -> String {
        match self.design {
            Design::Mixed => format!("anova_{}.csv", self.metric.name()),
            Design::WithinGroup(g) => format!("anova_{}_{}.csv", self.metric.name(), g.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub metric: Metric,
    pub dropped_trials: usize,
    pub excluded_subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Analysis {
    pub rows: Vec<TrialRow>,
    pub spectra: Vec<AggregateSpectrum>,
    pub anova: Vec<AnovaTable>,
    pub quality: Vec<QualityRow>,
    /// Analyses that were skipped and why.
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn anova(&self, metric: Metric, design: Design) -> Option<&AnovaTable> {
        self.anova.iter().find(|t| t.metric == metric && t.design == design)
    }

    /// Mean of the defined per-trial values in each group x load cell.
    pub fn cell_means(&self, metric: Metric) -> BTreeMap<(Group, LoadLevel), f64> {
        let mut sums: BTreeMap<(Group, LoadLevel), (f64, usize)> = BTreeMap::new();
        for row in &self.rows {
            if let Some(v) = metric.value(&row.metrics) {
                let e = sums.entry((row.group, row.spec.load)).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }
}

/// Analyze trials already in memory.
pub fn analyze_trials(trials: &[ArchivedTrial], reduction: CellReduction) -> Analysis {
    let analyses: Vec<_> = trials.par_iter().map(|t| analyze_trial(&t.log)).collect();
    let mut out = Analysis::default();

    let mut cells: BTreeMap<(Group, LoadLevel, Axis), Vec<&Spectrum>> = BTreeMap::new();
    for (trial, analysis) in trials.iter().zip(&analyses) {
        for spec in &analysis.spectra {
            cells.entry((trial.group, trial.log.spec.load, spec.axis)).or_default().push(spec);
        }
        out.rows.push(TrialRow {
            subject: trial.subject.clone(),
            group: trial.group,
            spec: trial.log.spec,
            valid: trial.log.valid,
            duration: trial.log.duration(),
            metrics: analysis.metrics.clone(),
        });
    }
    for ((group, load, _), spectra) in cells {
        let owned: Vec<Spectrum> = spectra.into_iter().cloned().collect();
        match aggregate_spectra(&owned) {
            Ok(spectrum) => out.spectra.push(AggregateSpectrum { group, load, trials: owned.len(), spectrum }),
            Err(e) => out.warnings.push(format!("spectrum aggregate {group} {load}: {e}")),
        }
    }

    for metric in Metric::ALL {
        let values: Vec<TrialValue> = out
            .rows
            .iter()
            .map(|r| TrialValue {
                subject: r.subject.clone(),
                group: r.group,
                load: r.spec.load,
                distribution: r.spec.distribution,
                order: r.spec.trial_index,
                value: metric.value(&r.metrics),
            })
            .collect();
        let (cells, report) = reduce_repeats(&values, reduction);
        if !report.excluded_subjects.is_empty() {
            out.warnings.push(format!(
                "{}: subjects without a defined value in every cell were excluded: {}",
                metric.name(),
                report.excluded_subjects.join(", ")
            ));
        }
        out.quality.push(QualityRow {
            metric,
            dropped_trials: report.dropped_trials,
            excluded_subjects: report.excluded_subjects,
        });
        anova_for_metric(metric, &cells, &mut out);
    }
    out
}

fn anova_for_metric(metric: Metric, cells: &[CellData], out: &mut Analysis) {
    let mut per_group: BTreeMap<Group, BTreeSet<&str>> = BTreeMap::new();
    for c in cells {
        per_group.entry(c.group).or_default().insert(&c.subject);
    }
    let ready: Vec<Group> = per_group.iter().filter(|(_, s)| s.len() >= 2).map(|(g, _)| *g).collect();
    let push = |out: &mut Analysis, design: Design, subjects: usize, result: std::result::Result<AnovaResult, _>| {
        match result {
            Ok(result) => out.anova.push(AnovaTable { metric, design, subjects, result }),
            Err(e) => out.warnings.push(format!("{}: {design:?} ANOVA skipped: {e}", metric.name())),
        }
    };
    if ready.len() == 2 {
        let n = per_group.values().map(BTreeSet::len).sum();
        push(out, Design::Mixed, n, mixed_anova(cells));
    } else {
        let counts: Vec<String> = per_group.iter().map(|(g, s)| format!("{g}: {}", s.len())).collect();
        out.warnings.push(format!(
            "{}: mixed ANOVA skipped, needs at least 2 subjects in each of 2 groups (have {})",
            metric.name(),
            if counts.is_empty() { "none".to_string() } else { counts.join(", ") }
        ));
    }
    for group in ready {
        let subset: Vec<_> = cells.iter().filter(|c| c.group == group).cloned().collect();
        let n = per_group[&group].len();
        push(out, Design::WithinGroup(group), n, rm_anova_2way(&subset));
    }
}

/// Read every trial listed in an archive's manifest.
pub fn load_archive(input: &Path) -> Result<(crate::archive::Manifest, Vec<ArchivedTrial>)> {
    let manifest = read_manifest(input)?;
    let trials = trial_paths(input, &manifest)
        .par_iter()
        .map(|p| read_trial(p))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, trials))
}

pub fn analyze_archive(input: &Path) -> Result<Analysis> {
    let (manifest, trials) = load_archive(input)?;
    Ok(analyze_trials(&trials, manifest.config.cell_reduction))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(SessionError::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Write all tables under `out`; returns the files written, in order.
pub fn write_analysis(out: &Path, analysis: &Analysis) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(SessionError::io(out))?;
    let mut written = Vec::new();

    let path = out.join("trial_metrics.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "subject",
        "group",
        "set",
        "trial",
        "load",
        "distribution",
        "valid",
        "duration",
        "flags_collected",
        "task_time",
        "time_per_target",
        "peak_near_resonance_x",
        "peak_near_resonance_y",
        "high_low_ratio_x",
        "high_low_ratio_y",
        "exclusions",
    ])?;
    for r in &analysis.rows {
        let m = &r.metrics;
        w.write_record([
            r.subject.clone(),
            r.group.to_string(),
            r.spec.set_index.to_string(),
            r.spec.trial_index.to_string(),
            r.spec.load.percent().to_string(),
            r.spec.distribution.to_string(),
            r.valid.to_string(),
            num(r.duration),
            m.flags_collected.to_string(),
            num(m.task_time),
            opt(m.time_per_target),
            opt(m.peak_near_resonance_x),
            opt(m.peak_near_resonance_y),
            opt(m.high_low_ratio_x),
            opt(m.high_low_ratio_y),
            m.exclusions.join("; "),
        ])?;
    }
    w.flush().map_err(SessionError::io(&path))?;
    written.push(path);

    let path = out.join("spectra_group_load.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["group", "load", "axis", "trials", "f", "power"])?;
    for a in &analysis.spectra {
        for (f, p) in a.spectrum.frequencies.iter().zip(&a.spectrum.power) {
            w.write_record([
                a.group.to_string(),
                a.load.percent().to_string(),
                a.spectrum.axis.as_str().to_string(),
                a.trials.to_string(),
                num(*f),
                num(*p),
            ])?;
        }
    }
    w.flush().map_err(SessionError::io(&path))?;
    written.push(path);

    let path = out.join("group_load_means.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["metric", "group", "load", "mean"])?;
    for metric in Metric::ALL {
        for ((group, load), mean) in analysis.cell_means(metric) {
            w.write_record([metric.name().to_string(), group.to_string(), load.percent().to_string(), num(mean)])?;
        }
    }
    w.flush().map_err(SessionError::io(&path))?;
    written.push(path);

    for table in &analysis.anova {
        let path = out.join(table.file_name());
        let mut w = csv_writer(&path)?;
        w.write_record(["effect", "F", "df_num", "df_den", "p", "mauchly_W", "mauchly_p", "gg_epsilon", "p_gg"])?;
        for r in &table.result.rows {
            w.write_record([
                r.effect.clone(),
                num(r.f),
                num(r.df_num),
                num(r.df_den),
                num(r.p),
                opt(r.mauchly_w),
                opt(r.mauchly_p),
                opt(r.gg_epsilon),
                opt(r.p_gg),
            ])?;
        }
        w.flush().map_err(SessionError::io(&path))?;
        written.push(path);
    }

    let path = out.join("data_quality.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["metric", "undefined_trials", "excluded_subjects"])?;
    for q in &analysis.quality {
        w.write_record([q.metric.name().to_string(), q.dropped_trials.to_string(), q.excluded_subjects.join(" ")])?;
    }
    w.flush().map_err(SessionError::io(&path))?;
    written.push(path);

    Ok(written)
}
