//! Session configuration, read from a TOML file.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Controller profiles are overridden key by key:
//!
//! ```toml
//! subject = "p07"
//! group = "stroke-like"
//! profile = "stroke"
//! max_sabd_force = 35.0
//!
//! [sim]
//! angular_damping = 0.2
//!
//! [profiles.stroke]
//! onset_delay = 1.1
//! ```

use std::path::{Path, PathBuf};

use ballbowl_core::anova::{CellReduction, Group};
use ballbowl_core::dynamics::SimParams;
use ballbowl_core::players::{control_profile, stroke_profile, ControllerParams};
use ballbowl_core::task::{
    builtin_distributions, scale_distribution, Workspace, DEFAULT_COLLECTION_TOLERANCE, TRIAL_TIME_LIMIT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SessionError};

/// Who produces the forces for a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileChoice {
    Control,
    Stroke,
    /// A person at the live server.
    Human,
}

impl ProfileChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileChoice::Control => "control",
            ProfileChoice::Stroke => "stroke",
            ProfileChoice::Human => "human",
        }
    }
}

/// Key-by-key overrides applied on top of the built-in profiles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverrides {
    #[serde(default)]
    pub control: toml::Table,
    #[serde(default)]
    pub stroke: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    /// Snapshot rate streamed to the client (Hz).
    pub snapshot_rate: f64,
    /// Natural frequency of the pointer coupling (Hz).
    pub coupling_frequency: f64,
    /// Bowl height targeted while the lift toggle is on (m).
    pub lift_height: f64,
    /// Where live trial logs go; `serve-archive` next to the config when unset.
    pub archive_dir: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { snapshot_rate: 60.0, coupling_frequency: 4.0, lift_height: 0.05, archive_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub subject: String,
    pub group: Group,
    /// Maximum shoulder-abduction force; loads are fractions of it (N).
    pub max_sabd_force: f64,
    /// Force source for `simulate` without a cohort; `serve` always uses a human.
    pub profile: ProfileChoice,
    pub protocol_seed: u64,
    pub collection_tolerance: f64,
    /// Trial length cap (s).
    pub time_limit: f64,
    pub cell_reduction: CellReduction,
    pub workspace: Workspace,
    pub sim: SimParams,
    pub profiles: ProfileOverrides,
    pub serve: ServeConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            subject: "p01".into(),
            group: Group::ControlLike,
            max_sabd_force: 40.0,
            profile: ProfileChoice::Human,
            protocol_seed: 0,
            collection_tolerance: DEFAULT_COLLECTION_TOLERANCE,
            time_limit: TRIAL_TIME_LIMIT,
            cell_reduction: CellReduction::Mean,
            workspace: Workspace::default(),
            sim: SimParams::default(),
            profiles: ProfileOverrides::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            SessionError::Config(m) => SessionError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = config.serve.archive_dir.as_mut() {
            if dir.is_relative() {
                *dir = path.parent().unwrap_or(Path::new(".")).join(&*dir);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SessionError::Config(m));
        if self.subject.is_empty() || !self.subject.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)) {
            return bad(format!("subject id {:?} must be non-empty [A-Za-z0-9_-]", self.subject));
        }
        if !(self.max_sabd_force > 0.0 && self.max_sabd_force.is_finite()) {
            return bad(format!("max_sabd_force must be positive, got {}", self.max_sabd_force));
        }
        if !(self.collection_tolerance > 0.0) {
            return bad(format!("collection_tolerance must be positive, got {}", self.collection_tolerance));
        }
        if !(self.time_limit > 0.0 && self.time_limit <= TRIAL_TIME_LIMIT) {
            return bad(format!("time_limit must be in (0, {TRIAL_TIME_LIMIT}] s, got {}", self.time_limit));
        }
        self.sim.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        for dist in builtin_distributions() {
            scale_distribution(&dist, &self.workspace, self.collection_tolerance)?;
        }
        for choice in [ProfileChoice::Control, ProfileChoice::Stroke] {
            self.controller(choice)?;
        }
        let s = &self.serve;
        if !(s.snapshot_rate > 0.0 && s.snapshot_rate <= 1.0 / self.sim.physics_dt) {
            return bad(format!("serve.snapshot_rate must be in (0, {}] Hz", 1.0 / self.sim.physics_dt));
        }
        if !(s.coupling_frequency > 0.0) || !(s.lift_height > self.sim.contact_tolerance) {
            return bad("serve.coupling_frequency must be positive and serve.lift_height above the contact tolerance".into());
        }
        Ok(())
    }

    /// Controller parameters for a synthetic profile, overrides applied.
    pub fn controller(&self, choice: ProfileChoice) -> Result<ControllerParams> {
        let (base, overrides) = match choice {
            ProfileChoice::Control => (control_profile(), &self.profiles.control),
            ProfileChoice::Stroke => (stroke_profile(), &self.profiles.stroke),
            ProfileChoice::Human => {
                return Err(SessionError::Config("the human profile has no controller parameters".into()))
            }
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| SessionError::Config(e.to_string()))?;
        for (key, value) in overrides {
            if !table.contains_key(key) {
                return Err(SessionError::Config(format!("profiles.{}: unknown key {key:?}", choice.as_str())));
            }
            table.insert(key.clone(), value.clone());
        }
        let params: ControllerParams = table
            .try_into()
            .map_err(|e| SessionError::Config(format!("profiles.{}: {e}", choice.as_str())))?;
        params
            .validate()
            .map_err(|e| SessionError::Config(format!("profiles.{}: {e}", choice.as_str())))?;
        Ok(params)
    }

    /// Default synthetic profile for a group.
    pub fn profile_for(group: Group) -> ProfileChoice {
        match group {
            Group::ControlLike => ProfileChoice::Control,
            Group::StrokeLike => ProfileChoice::Stroke,
        }
    }
}
