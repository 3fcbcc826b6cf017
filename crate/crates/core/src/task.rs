//! Flag layouts, workspace scaling and the collection / task-time rules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BallState, BowlState};
use crate::error::TaskError;

pub const FLAGS_PER_DISTRIBUTION: usize = 20;
pub const TRIAL_TIME_LIMIT: f64 = 20.0;
pub const DEFAULT_COLLECTION_TOLERANCE: f64 = 0.015;

/// Smallest spacing between flags of any built-in layout, in unit-square coordinates.
pub const BUILTIN_MIN_SPACING: f64 = 0.09;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workspace {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { x_min: -0.225, x_max: 0.225, y_min: -0.175, y_max: 0.175 }
    }
}

impl Workspace {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, TaskError> {
        let ws = Self { x_min, x_max, y_min, y_max };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(TaskError::Config(format!("degenerate workspace {self:?}")));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistributionId {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl DistributionId {
    pub const COLLECTION: [DistributionId; 5] =
        [DistributionId::B, DistributionId::C, DistributionId::D, DistributionId::E, DistributionId::F];

    pub fn role(self) -> DistributionRole {
        match self {
            DistributionId::A => DistributionRole::Training,
            _ => DistributionRole::Collection,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "A" | "a" => Some(Self::A),
            "B" | "b" => Some(Self::B),
            "C" | "c" => Some(Self::C),
            "D" | "d" => Some(Self::D),
            "E" | "e" => Some(Self::E),
            "F" | "f" => Some(Self::F),
            _ => None,
        }
    }
}

impl fmt::Display for DistributionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistributionRole {
    Training,
    Collection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagDistribution {
    pub id: DistributionId,
    /// Flag locations in unit-square coordinates.
    pub points: Vec<[f64; 2]>,
}

impl FlagDistribution {
    pub fn new(id: DistributionId, points: Vec<[f64; 2]>) -> Result<Self, TaskError> {
        let d = Self { id, points };
        d.validate()?;
        Ok(d)
    }

    pub fn role(&self) -> DistributionRole {
        self.id.role()
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.points.len() != FLAGS_PER_DISTRIBUTION {
            return Err(TaskError::Config(format!(
                "distribution {} has {} flags, expected {FLAGS_PER_DISTRIBUTION}",
                self.id,
                self.points.len()
            )));
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(TaskError::Config(format!(
                "distribution {} has flag {p:?} outside the unit square",
                self.id
            )));
        }
        Ok(())
    }

    pub fn min_spacing(&self) -> f64 {
        min_pairwise_distance(&self.points)
    }
}

pub fn min_pairwise_distance(points: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    best
}

/// Map a unit-square layout into the workspace with a single scale factor
/// (limited by the shorter side), centred in the longer side.
pub fn scale_distribution(
    dist: &FlagDistribution,
    ws: &Workspace,
    tolerance: f64,
) -> Result<Vec<[f64; 2]>, TaskError> {
    ws.validate()?;
    dist.validate()?;
    let scale = ws.width().min(ws.height());
    let [cx, cy] = ws.center();
    let points: Vec<[f64; 2]> = dist
        .points
        .iter()
        .map(|p| [cx + (p[0] - 0.5) * scale, cy + (p[1] - 0.5) * scale])
        .collect();
    let spacing = min_pairwise_distance(&points);
    if spacing < 2.0 * tolerance {
        return Err(TaskError::Config(format!(
            "workspace too small for distribution {}: flag spacing {spacing:.4} m < 2 x tolerance {tolerance} m",
            dist.id
        )));
    }
    Ok(points)
}

/// Fixed approximations of the six task layouts: A is a training grid, B-F
/// are a ring, two clusters, a diagonal band, a cross and a scatter.
pub fn builtin_distributions() -> Vec<FlagDistribution> {
    use DistributionId::*;
    [A, B, C, D, E, F]
        .into_iter()
        .map(|id| FlagDistribution { id, points: builtin_points(id) })
        .collect()
}

pub fn builtin_distribution(id: DistributionId) -> FlagDistribution {
    FlagDistribution { id, points: builtin_points(id) }
}

fn builtin_points(id: DistributionId) -> Vec<[f64; 2]> {
    use std::f64::consts::PI;
    match id {
        DistributionId::A => (0..4)
            .flat_map(|row| (0..5).map(move |col| [0.1 + 0.2 * col as f64, 0.2 + 0.2 * row as f64]))
            .collect(),
        DistributionId::B => (0..20)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 20.0;
                [0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin()]
            })
            .collect(),
        DistributionId::C => {
            // two hexagonal clusters of 3-4-3 flags
            let spacing = 0.12;
            let row_dy = spacing * (3.0f64).sqrt() / 2.0;
            let cluster = |cx: f64, cy: f64| {
                let mut pts = Vec::with_capacity(10);
                for (row, count) in [(-1.0, 3), (0.0, 4), (1.0, 3)] {
                    let x0 = -(count as f64 - 1.0) / 2.0 * spacing;
                    for k in 0..count {
                        pts.push([cx + x0 + k as f64 * spacing, cy + row * row_dy]);
                    }
                }
                pts
            };
            let mut pts = cluster(0.27, 0.3);
            pts.extend(cluster(0.73, 0.7));
            pts
        }
        DistributionId::D => (0..20)
            .map(|i| {
                let t = 0.12 + 0.76 * i as f64 / 19.0;
                let off = if i % 2 == 0 { 0.07 } else { -0.07 } / std::f64::consts::SQRT_2;
                [t - off, t + off]
            })
            .collect(),
        DistributionId::E => {
            let mut pts = Vec::with_capacity(20);
            for k in 1..=5 {
                let d = 0.09 * k as f64;
                pts.push([0.5 + d, 0.5]);
                pts.push([0.5 - d, 0.5]);
                pts.push([0.5, 0.5 + d]);
                pts.push([0.5, 0.5 - d]);
            }
            pts
        }
        DistributionId::F => scatter_points(),
    }
}

/// Halton (2, 3) points in [0.05, 0.95]^2, greedily thinned to a minimum spacing.
fn scatter_points() -> Vec<[f64; 2]> {
    fn halton(mut i: u32, base: u32) -> f64 {
        let (mut f, mut r) = (1.0, 0.0);
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(20);
    let mut i = 1;
    while pts.len() < FLAGS_PER_DISTRIBUTION {
        let p = [0.05 + 0.9 * halton(i, 2), 0.05 + 0.9 * halton(i, 3)];
        if pts.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= 0.12) {
            pts.push(p);
        }
        i += 1;
    }
    pts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum LoadLevel {
    Zero,
    Twenty,
    Fifty,
}

impl LoadLevel {
    pub const ALL: [LoadLevel; 3] = [LoadLevel::Zero, LoadLevel::Twenty, LoadLevel::Fifty];

    pub fn percent(self) -> u8 {
        match self {
            LoadLevel::Zero => 0,
            LoadLevel::Twenty => 20,
            LoadLevel::Fifty => 50,
        }
    }

    pub fn fraction(self) -> f64 {
        self.percent() as f64 / 100.0
    }

    pub fn index(self) -> usize {
        match self {
            LoadLevel::Zero => 0,
            LoadLevel::Twenty => 1,
            LoadLevel::Fifty => 2,
        }
    }
}

impl TryFrom<u8> for LoadLevel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(LoadLevel::Zero),
            20 => Ok(LoadLevel::Twenty),
            50 => Ok(LoadLevel::Fifty),
            other => Err(format!("loading level must be 0, 20 or 50, got {other}")),
        }
    }
}

impl From<LoadLevel> for u8 {
    fn from(l: LoadLevel) -> u8 {
        l.percent()
    }
}

impl fmt::Display for LoadLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.percent())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub distribution: DistributionId,
    pub load: LoadLevel,
    /// 1-based set number (1..=9).
    pub set_index: u32,
    /// 1-based trial number within the session (1..=45).
    pub trial_index: u32,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    /// Position of the flag in its distribution.
    pub index: usize,
    pub xy: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub remaining: Vec<Flag>,
    pub collected_count: usize,
    pub task_time: f64,
    /// Ball in bowl and bowl lifted (the blue square).
    pub eligible: bool,
    pub wall_time: f64,
}

impl TrialState {
    pub fn new(flags: &[[f64; 2]]) -> Self {
        Self {
            remaining: flags.iter().enumerate().map(|(index, &xy)| Flag { index, xy }).collect(),
            collected_count: 0,
            task_time: 0.0,
            eligible: false,
            wall_time: 0.0,
        }
    }

    pub fn all_collected(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn nearest_flag(&self, xy: [f64; 2]) -> Option<&Flag> {
        self.remaining.iter().min_by(|a, b| {
            let da = (a.xy[0] - xy[0]).hypot(a.xy[1] - xy[1]);
            let db = (b.xy[0] - xy[0]).hypot(b.xy[1] - xy[1]);
            da.total_cmp(&db)
        })
    }
}

/// Apply the three collection criteria; returns the flags removed this call.
pub fn check_collection(
    state: &mut TrialState,
    bowl: &BowlState,
    ball: &BallState,
    tolerance: f64,
) -> Vec<Flag> {
    state.eligible = ball.in_bowl && bowl.lifted;
    if !state.eligible {
        return Vec::new();
    }
    let [bx, by] = bowl.xy();
    let mut collected = Vec::new();
    state.remaining.retain(|f| {
        let hit = (f.xy[0] - bx).hypot(f.xy[1] - by) <= tolerance;
        if hit {
            collected.push(*f);
        }
        !hit
    });
    state.collected_count += collected.len();
    collected
}

/// Task time runs only while lifted and until the last flag is collected.
pub fn accrue_task_time(state: &mut TrialState, bowl: &BowlState, dt: f64) {
    if bowl.lifted && !state.all_collected() {
        state.task_time += dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SimParams;

    fn lifted_bowl(x: f64, y: f64) -> BowlState {
        BowlState { position: [x, y, 0.05], velocity: [0.0; 3], lifted: true }
    }

    #[test]
    fn builtin_layouts_are_valid() {
        let all = builtin_distributions();
        assert_eq!(all.len(), 6);
        for d in &all {
            d.validate().unwrap();
            assert!(d.min_spacing() >= BUILTIN_MIN_SPACING - 1e-12, "{} spacing {}", d.id, d.min_spacing());
        }
        assert_eq!(all[0].role(), DistributionRole::Training);
        assert!(all[1..].iter().all(|d| d.role() == DistributionRole::Collection));
        assert_eq!(builtin_distributions(), all);
    }

    #[test]
    fn unit_workspace_is_identity() {
        let d = builtin_distribution(DistributionId::B);
        let ws = Workspace::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let pts = scale_distribution(&d, &ws, 0.01).unwrap();
        for (a, b) in pts.iter().zip(&d.points) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn wide_workspace_is_limited_by_short_side() {
        let d = builtin_distribution(DistributionId::A);
        let ws = Workspace::new(0.0, 2.0, 0.0, 1.0).unwrap();
        let pts = scale_distribution(&d, &ws, 0.01).unwrap();
        for (a, b) in pts.iter().zip(&d.points) {
            assert!((a[0] - (b[0] + 0.5)).abs() < 1e-15);
            assert!((a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_workspace_is_rejected() {
        let d = builtin_distribution(DistributionId::E);
        let ws = Workspace::new(0.0, 0.1, 0.0, 0.1).unwrap();
        assert!(matches!(scale_distribution(&d, &ws, 0.015), Err(TaskError::Config(_))));
        assert!(Workspace::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn default_workspace_fits_all_layouts() {
        for d in builtin_distributions() {
            scale_distribution(&d, &Workspace::default(), DEFAULT_COLLECTION_TOLERANCE).unwrap();
        }
    }

    #[test]
    fn collection_requires_all_three_criteria() {
        let mut state = TrialState::new(&[[0.0, 0.0], [0.1, 0.0]]);
        let ball = BallState::default();
        let got = check_collection(&mut state, &lifted_bowl(0.0, 0.0), &ball, 0.015);
        assert_eq!(got.len(), 1);
        assert_eq!(state.collected_count, 1);
        assert!(state.eligible);

        let out = BallState { in_bowl: false, ..BallState::default() };
        let got = check_collection(&mut state, &lifted_bowl(0.1, 0.0), &out, 0.015);
        assert!(got.is_empty());
        assert!(!state.eligible);

        let resting = BowlState::resting_at(0.1, 0.0, &SimParams::default());
        assert!(check_collection(&mut state, &resting, &ball, 0.015).is_empty());
        assert!(!state.eligible);

        let tol = 0.015;
        let got = check_collection(&mut state, &lifted_bowl(0.1 + tol + 1e-9, 0.0), &ball, tol);
        assert!(got.is_empty());
        assert!(state.eligible);
        assert_eq!(state.collected_count, 1);
    }

    #[test]
    fn collected_flag_cannot_be_collected_twice() {
        let mut state = TrialState::new(&[[0.0, 0.0]]);
        let bowl = lifted_bowl(0.0, 0.0);
        assert_eq!(check_collection(&mut state, &bowl, &BallState::default(), 0.01).len(), 1);
        assert!(check_collection(&mut state, &bowl, &BallState::default(), 0.01).is_empty());
        assert_eq!(state.collected_count, 1);
    }

    #[test]
    fn task_time_rules() {
        let p = SimParams::default();
        let dt = 0.001;
        let mut resting = TrialState::new(&[[0.0, 0.0]]);
        let bowl = BowlState::resting_at(0.0, 0.0, &p);
        for _ in 0..20_000 {
            accrue_task_time(&mut resting, &bowl, dt);
        }
        assert_eq!(resting.task_time, 0.0);

        let mut state = TrialState::new(&[[0.0, 0.0]]);
        let up = lifted_bowl(0.5, 0.5);
        for _ in 0..12_000 {
            accrue_task_time(&mut state, &up, dt);
        }
        check_collection(&mut state, &lifted_bowl(0.0, 0.0), &BallState::default(), 0.01);
        for _ in 0..8_000 {
            accrue_task_time(&mut state, &up, dt);
        }
        assert!((state.task_time - 12.0).abs() < 1e-9);
    }

    #[test]
    fn load_level_parsing() {
        assert_eq!(LoadLevel::try_from(20).unwrap(), LoadLevel::Twenty);
        assert!(LoadLevel::try_from(30).is_err());
        assert_eq!(LoadLevel::Fifty.fraction(), 0.5);
    }
}
