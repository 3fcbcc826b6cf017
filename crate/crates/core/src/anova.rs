//! Repeated-measures and mixed-design ANOVA for a load x task within-subject
//! design, with Mauchly's sphericity test and the Greenhouse-Geisser
//! correction.
//!
//! Sums of squares are computed from orthonormal contrast scores: each
//! subject's cell vector is projected onto the contrast space of an effect,
//! the effect SS is the (group-weighted) squared norm of the mean score and
//! the error SS is the scatter of scores around their group mean. The same
//! scatter matrix gives the covariance used for the sphericity diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::AnovaError;
use crate::task::{DistributionId, LoadLevel};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    ControlLike,
    StrokeLike,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::ControlLike => "control-like",
            Group::StrokeLike => "stroke-like",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "control-like" | "control" => Some(Group::ControlLike),
            "stroke-like" | "stroke" => Some(Group::StrokeLike),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One subject-level cell value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellData {
    pub subject: String,
    pub group: Group,
    pub load: LoadLevel,
    pub distribution: DistributionId,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WithinFactor {
    Load,
    Task,
    LoadTask,
}

impl WithinFactor {
    pub fn name(self) -> &'static str {
        match self {
            WithinFactor::Load => "load",
            WithinFactor::Task => "task",
            WithinFactor::LoadTask => "load:task",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub effect: String,
    pub f: f64,
    pub df_num: f64,
    pub df_den: f64,
    pub p: f64,
    pub mauchly_w: Option<f64>,
    pub mauchly_p: Option<f64>,
    pub gg_epsilon: Option<f64>,
    pub p_gg: Option<f64>,
}

impl EffectRow {
    pub fn significant(&self) -> bool {
        self.p_gg.unwrap_or(self.p) < ALPHA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub rows: Vec<EffectRow>,
}

impl AnovaResult {
    pub fn effect(&self, name: &str) -> Option<&EffectRow> {
        self.rows.iter().find(|r| r.effect == name)
    }
}

/// Balanced within-subject layout: `cells[s]` is subject s's values,
/// load-major then task.
#[derive(Debug, Clone)]
struct Design {
    groups: Vec<usize>,
    group_count: usize,
    loads: usize,
    tasks: usize,
    cells: Vec<DVector<f64>>,
}

impl Design {
    fn build(data: &[CellData]) -> Result<Self, AnovaError> {
        if data.is_empty() {
            return Err(AnovaError::Design("no data".into()));
        }
        let loads: BTreeSet<LoadLevel> = data.iter().map(|c| c.load).collect();
        let tasks: BTreeSet<DistributionId> = data.iter().map(|c| c.distribution).collect();
        let group_ids: BTreeSet<Group> = data.iter().map(|c| c.group).collect();
        let load_idx: BTreeMap<LoadLevel, usize> = loads.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let task_idx: BTreeMap<DistributionId, usize> = tasks.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let group_idx: BTreeMap<Group, usize> = group_ids.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        let (nl, nt) = (loads.len(), tasks.len());
        if nl < 2 || nt < 2 {
            return Err(AnovaError::Design(format!("need >= 2 levels per within factor, got {nl} loads x {nt} tasks")));
        }

        let mut by_subject: BTreeMap<&str, (Group, Vec<Option<f64>>)> = BTreeMap::new();
        for c in data {
            if !c.value.is_finite() {
                return Err(AnovaError::Design(format!("non-finite value for subject {}", c.subject)));
            }
            let entry = by_subject.entry(&c.subject).or_insert_with(|| (c.group, vec![None; nl * nt]));
            if entry.0 != c.group {
                return Err(AnovaError::Design(format!("subject {} appears in two groups", c.subject)));
            }
            let k = load_idx[&c.load] * nt + task_idx[&c.distribution];
            if entry.1[k].replace(c.value).is_some() {
                return Err(AnovaError::Design(format!(
                    "subject {} has duplicate cell ({}, {})",
                    c.subject, c.load, c.distribution
                )));
            }
        }
        let missing: Vec<&str> = by_subject
            .iter()
            .filter(|(_, (_, v))| v.iter().any(Option::is_none))
            .map(|(s, _)| *s)
            .collect();
        if !missing.is_empty() {
            return Err(AnovaError::Design(format!("unbalanced design; missing cells for subjects {missing:?}")));
        }
        let groups = by_subject.values().map(|(g, _)| group_idx[g]).collect();
        let cells = by_subject
            .values()
            .map(|(_, v)| DVector::from_iterator(nl * nt, v.iter().map(|x| x.unwrap())))
            .collect();
        Ok(Self { groups, group_count: group_ids.len(), loads: nl, tasks: nt, cells })
    }

    fn group_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.group_count];
        for &g in &self.groups {
            n[g] += 1;
        }
        n
    }

    fn check_sizes(&self) -> Result<(), AnovaError> {
        if self.group_sizes().iter().any(|&n| n < 2) {
            return Err(AnovaError::Design("every group needs at least 2 subjects".into()));
        }
        let total: f64 = {
            let all: Vec<f64> = self.cells.iter().flat_map(|c| c.iter().copied()).collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            all.iter().map(|v| (v - mean).powi(2)).sum()
        };
        if !(total > 0.0) {
            return Err(AnovaError::Degenerate("all values are identical".into()));
        }
        Ok(())
    }

    fn contrast(&self, factor: Option<WithinFactor>) -> DMatrix<f64> {
        let (cl, ct) = (helmert(self.loads), helmert(self.tasks));
        let (ml, mt) = (mean_row(self.loads), mean_row(self.tasks));
        match factor {
            None => ml.kronecker(&mt),
            Some(WithinFactor::Load) => cl.kronecker(&mt),
            Some(WithinFactor::Task) => ml.kronecker(&ct),
            Some(WithinFactor::LoadTask) => cl.kronecker(&ct),
        }
    }

    /// Contrast scores per subject for an effect (`None` = subject mean).
    fn scores(&self, factor: Option<WithinFactor>) -> Vec<DVector<f64>> {
        let m = self.contrast(factor);
        self.cells.iter().map(|y| &m * y).collect()
    }
}

/// Orthonormal Helmert contrasts, (k-1) x k.
fn helmert(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k - 1, k);
    for i in 0..k - 1 {
        let norm = (((i + 1) * (i + 2)) as f64).sqrt();
        for j in 0..=i {
            m[(i, j)] = 1.0 / norm;
        }
        m[(i, i + 1)] = -((i + 1) as f64) / norm;
    }
    m
}

/// Normalized averaging row, 1 x k with entries 1/sqrt(k).
fn mean_row(k: usize) -> DMatrix<f64> {
    DMatrix::from_element(1, k, 1.0 / (k as f64).sqrt())
}

/// Sums of squares for one effect from its contrast scores.
struct Partition {
    dims: usize,
    ss_effect: f64,
    ss_group_effect: f64,
    ss_error: f64,
    df_error: f64,
    /// Pooled within-group scatter matrix of the scores.
    scatter: DMatrix<f64>,
}

fn partition(scores: &[DVector<f64>], groups: &[usize], group_count: usize) -> Partition {
    let p = scores[0].len();
    let n = scores.len();
    let grand = scores.iter().fold(DVector::zeros(p), |acc, z| acc + z) / n as f64;
    let mut sizes = vec![0usize; group_count];
    let mut sums = vec![DVector::<f64>::zeros(p); group_count];
    for (z, &g) in scores.iter().zip(groups) {
        sizes[g] += 1;
        sums[g] += z;
    }
    let means: Vec<DVector<f64>> = sums.iter().zip(&sizes).map(|(s, &k)| s / k as f64).collect();
    let mut scatter = DMatrix::zeros(p, p);
    for (z, &g) in scores.iter().zip(groups) {
        let d = z - &means[g];
        scatter += &d * d.transpose();
    }
    let ss_group_effect = means
        .iter()
        .zip(&sizes)
        .map(|(m, &k)| k as f64 * (m - &grand).norm_squared())
        .sum();
    Partition {
        dims: p,
        ss_effect: n as f64 * grand.norm_squared(),
        ss_group_effect,
        ss_error: scatter.trace(),
        df_error: (n - group_count) as f64,
        scatter,
    }
}

fn f_sf(f: f64, df1: f64, df2: f64) -> f64 {
    if f == 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    FisherSnedecor::new(df1, df2).map(|d| d.sf(f)).unwrap_or(f64::NAN).clamp(0.0, 1.0)
}

/// F ratio with the zero-variance conventions: no effect -> 0, an effect
/// against an exactly zero error term -> infinity.
fn f_ratio(ss_effect: f64, df_effect: f64, ss_error: f64, df_error: f64, scale: f64) -> f64 {
    let tiny = 1e-20 * scale;
    if ss_effect <= tiny {
        0.0
    } else if ss_error <= tiny {
        f64::INFINITY
    } else {
        (ss_effect / df_effect) / (ss_error / df_error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphericity {
    pub mauchly_w: Option<f64>,
    pub mauchly_p: Option<f64>,
    pub epsilon: Option<f64>,
}

fn eigenvalues(cov: &DMatrix<f64>) -> Vec<f64> {
    SymmetricEigen::new(cov.clone()).eigenvalues.iter().map(|v| v.max(0.0)).collect()
}

/// Greenhouse-Geisser epsilon from a contrast covariance matrix.
pub fn gg_epsilon_from_covariance(cov: &DMatrix<f64>) -> Result<f64, AnovaError> {
    let p = cov.nrows();
    if p <= 1 {
        return Ok(1.0);
    }
    let lambda = eigenvalues(cov);
    let sum: f64 = lambda.iter().sum();
    let sum_sq: f64 = lambda.iter().map(|l| l * l).sum();
    if !(sum > 0.0) {
        return Err(AnovaError::Degenerate("zero contrast covariance".into()));
    }
    let eps = sum * sum / (p as f64 * sum_sq);
    Ok(eps.clamp(1.0 / p as f64, 1.0))
}

/// Mauchly's W and its chi-square p-value; `error_df` is the residual
/// degrees of freedom of the covariance estimate.
pub fn mauchly_from_covariance(cov: &DMatrix<f64>, error_df: f64) -> Result<(f64, f64), AnovaError> {
    let p = cov.nrows();
    if p <= 1 {
        return Ok((1.0, 1.0));
    }
    let pf = p as f64;
    if error_df < pf {
        return Err(AnovaError::Degenerate(format!(
            "contrast covariance of dimension {p} is singular with {error_df} error df"
        )));
    }
    let lambda = eigenvalues(cov);
    let mean = lambda.iter().sum::<f64>() / pf;
    let max = lambda.iter().cloned().fold(0.0, f64::max);
    if !(mean > 0.0) || lambda.iter().any(|&l| l <= 1e-12 * max) {
        return Err(AnovaError::Degenerate("singular contrast covariance".into()));
    }
    let w = lambda.iter().map(|l| l / mean).product::<f64>().clamp(0.0, 1.0);
    let stat = -(error_df - (2.0 * pf * pf + pf + 2.0) / (6.0 * pf)) * w.ln();
    let df = pf * (pf + 1.0) / 2.0 - 1.0;
    let pval = if stat <= 0.0 {
        1.0
    } else {
        ChiSquared::new(df).map(|d| d.sf(stat)).unwrap_or(f64::NAN)
    };
    Ok((w, pval.clamp(0.0, 1.0)))
}

fn sphericity(part: &Partition) -> Sphericity {
    if part.dims <= 1 {
        return Sphericity { mauchly_w: Some(1.0), mauchly_p: Some(1.0), epsilon: Some(1.0) };
    }
    let cov = &part.scatter / part.df_error;
    let mauchly = mauchly_from_covariance(&cov, part.df_error).ok();
    Sphericity {
        mauchly_w: mauchly.map(|m| m.0),
        mauchly_p: mauchly.map(|m| m.1),
        epsilon: gg_epsilon_from_covariance(&cov).ok(),
    }
}

fn within_row(name: &str, ss: f64, df_num: f64, part: &Partition, sph: &Sphericity, scale: f64) -> EffectRow {
    let df_den = part.df_error * part.dims as f64;
    let f = f_ratio(ss, df_num, part.ss_error, df_den, scale);
    let p = f_sf(f, df_num, df_den);
    let p_gg = sph.epsilon.map(|e| f_sf(f, e * df_num, e * df_den));
    EffectRow {
        effect: name.to_string(),
        f,
        df_num,
        df_den,
        p,
        mauchly_w: sph.mauchly_w,
        mauchly_p: sph.mauchly_p,
        gg_epsilon: sph.epsilon,
        p_gg,
    }
}

fn total_ss(design: &Design) -> f64 {
    let all: Vec<f64> = design.cells.iter().flat_map(|c| c.iter().copied()).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    all.iter().map(|v| (v - mean).powi(2)).sum()
}

fn within_rows(design: &Design, with_group: bool) -> Vec<EffectRow> {
    let scale = total_ss(design);
    let mut rows = Vec::new();
    let mut interactions = Vec::new();
    for factor in [WithinFactor::Load, WithinFactor::Task, WithinFactor::LoadTask] {
        let part = partition(&design.scores(Some(factor)), &design.groups, design.group_count);
        let sph = sphericity(&part);
        let df = part.dims as f64;
        rows.push(within_row(factor.name(), part.ss_effect, df, &part, &sph, scale));
        if with_group {
            let df_g = (design.group_count - 1) as f64 * df;
            let name = format!("group:{}", factor.name());
            interactions.push(within_row(&name, part.ss_group_effect, df_g, &part, &sph, scale));
        }
    }
    rows.extend(interactions);
    rows
}

/// Two-way (load x task) repeated-measures ANOVA for one group of subjects.
pub fn rm_anova_2way(data: &[CellData]) -> Result<AnovaResult, AnovaError> {
    let mut design = Design::build(data)?;
    // a single-group analysis pools every subject regardless of label
    design.groups.iter_mut().for_each(|g| *g = 0);
    design.group_count = 1;
    design.check_sizes()?;
    Ok(AnovaResult { rows: within_rows(&design, false) })
}

/// Mixed-design ANOVA: group between subjects, load and task within.
pub fn mixed_anova(data: &[CellData]) -> Result<AnovaResult, AnovaError> {
    let design = Design::build(data)?;
    if design.group_count < 2 {
        return Err(AnovaError::Design("mixed ANOVA needs at least two groups".into()));
    }
    design.check_sizes()?;
    let scale = total_ss(&design);
    let part = partition(&design.scores(None), &design.groups, design.group_count);
    let df_num = (design.group_count - 1) as f64;
    let df_den = part.df_error;
    let f = f_ratio(part.ss_group_effect, df_num, part.ss_error, df_den, scale);
    let mut rows = vec![EffectRow {
        effect: "group".into(),
        f,
        df_num,
        df_den,
        p: f_sf(f, df_num, df_den),
        mauchly_w: None,
        mauchly_p: None,
        gg_epsilon: None,
        p_gg: None,
    }];
    rows.extend(within_rows(&design, true));
    Ok(AnovaResult { rows })
}

fn factor_partition(data: &[CellData], factor: WithinFactor) -> Result<Partition, AnovaError> {
    let design = Design::build(data)?;
    design.check_sizes()?;
    Ok(partition(&design.scores(Some(factor)), &design.groups, design.group_count))
}

/// Mauchly's sphericity test for one within factor (groups pooled).
pub fn mauchly_test(data: &[CellData], factor: WithinFactor) -> Result<(f64, f64), AnovaError> {
    let part = factor_partition(data, factor)?;
    mauchly_from_covariance(&(&part.scatter / part.df_error), part.df_error)
}

/// Greenhouse-Geisser epsilon for one within factor (groups pooled).
pub fn gg_epsilon(data: &[CellData], factor: WithinFactor) -> Result<f64, AnovaError> {
    let part = factor_partition(data, factor)?;
    gg_epsilon_from_covariance(&(&part.scatter / part.df_error))
}

/// How repeats of a (subject, load, task) cell are reduced to one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellReduction {
    #[default]
    Mean,
    FirstRepeat,
}

/// A per-trial metric value prior to cell reduction; `None` when undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialValue {
    pub subject: String,
    pub group: Group,
    pub load: LoadLevel,
    pub distribution: DistributionId,
    /// Order of the repeat within the session (used by `FirstRepeat`).
    pub order: u32,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReductionReport {
    pub dropped_trials: usize,
    /// Subjects removed because some cell had no valid repeat.
    pub excluded_subjects: Vec<String>,
}

/// Collapse repeats into one value per subject and cell. Undefined trials
/// are skipped; a subject with any empty cell is dropped entirely.
pub fn reduce_repeats(values: &[TrialValue], mode: CellReduction) -> (Vec<CellData>, ReductionReport) {
    type Key<'a> = (&'a str, LoadLevel, DistributionId);
    let mut cells: BTreeMap<Key<'_>, (Group, Vec<(u32, f64)>)> = BTreeMap::new();
    let mut report = ReductionReport::default();
    let all_loads: BTreeSet<LoadLevel> = values.iter().map(|v| v.load).collect();
    let all_tasks: BTreeSet<DistributionId> = values.iter().map(|v| v.distribution).collect();
    let subjects: BTreeMap<&str, Group> = values.iter().map(|v| (v.subject.as_str(), v.group)).collect();
    for v in values {
        let entry = cells
            .entry((v.subject.as_str(), v.load, v.distribution))
            .or_insert_with(|| (v.group, Vec::new()));
        match v.value {
            Some(x) if x.is_finite() => entry.1.push((v.order, x)),
            _ => report.dropped_trials += 1,
        }
    }
    let mut out = Vec::new();
    for (&subject, &group) in &subjects {
        let mut rows = Vec::new();
        let mut complete = true;
        for &load in &all_loads {
            for &distribution in &all_tasks {
                let reps = cells.get(&(subject, load, distribution)).map(|c| c.1.as_slice()).unwrap_or(&[]);
                if reps.is_empty() {
                    complete = false;
                    continue;
                }
                let value = match mode {
                    CellReduction::Mean => reps.iter().map(|r| r.1).sum::<f64>() / reps.len() as f64,
                    CellReduction::FirstRepeat => reps.iter().min_by_key(|r| r.0).unwrap().1,
                };
                rows.push(CellData { subject: subject.to_string(), group, load, distribution, value });
            }
        }
        if complete {
            out.extend(rows);
        } else {
            report.excluded_subjects.push(subject.to_string());
        }
    }
    (out, report)
}
