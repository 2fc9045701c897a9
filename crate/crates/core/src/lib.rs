//! Psychophysics harness for image recognition matchers: herding identities
//! by menagerie loss, then measuring item-response curves as stimuli are
//! perturbed.

pub mod error;
pub mod extshepherd;
pub mod identity;
pub mod image;
pub mod io;
pub mod irt;
pub mod matrix;
pub mod menagerie;
pub mod perturb;
pub mod seed;
pub mod shepherd;
pub mod tpe;

pub use error::{Error, Result};
pub use extshepherd::{Endpoint, ExternalShepherd, PeerInfo, ShepherdSession};
pub use identity::{Identity, IdentitySet};
pub use image::ImageBuffer;
pub use irt::{
    chance_normalize, ensemble, irt_curve, irt_point, spearman, CurveEnsemble, ItemResponseCurve, ItemResponsePoint,
    PointOptions,
};
pub use matrix::{symmetrize, SimilarityMatrix, Threshold};
pub use menagerie::{herd, herd_matrix, menagerie_loss, HerdConfig, HerdResult, HerdStatus, Optimizer};
pub use perturb::{LevelSchedule, PerturbationKind, PerturbationSpec};
pub use shepherd::{Matcher, Shepherd};
pub use tpe::TpeConfig;
