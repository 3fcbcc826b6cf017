//! Ball-in-bowl motor coordination workbench.
//!
//! - [`dynamics`]: pivot-driven pendulum ball, bowl admittance, haptic table.
//! - [`task`] and [`protocol`]: flag layouts, collection rules, session order.
//! - [`sim`]: runs a trial against any [`sim::Controller`].
//! - [`players`]: synthetic control-like and stroke-like participants.
//! - [`spectral`]: normalized force spectra and the per-trial metrics.
//! - [`anova`]: repeated-measures / mixed ANOVA with sphericity corrections.

pub mod anova;
pub mod dynamics;
pub mod error;
pub mod players;
pub mod protocol;
pub mod sim;
pub mod spectral;
pub mod task;

pub use error::{AnalysisError, AnovaError, SimError, TaskError};
