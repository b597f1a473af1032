//! Robot descriptions bundled with the crate, addressed as `builtin:<name>`.
//!
//! These are desk-scale approximations of antagonistic arrangements; the
//! routings are illustrative and not taken from any measured robot.

use crate::error::Result;
use crate::model::{parse_robot, MusculoskeletalModel};

const SOURCES: [(&str, &str); 4] = [
    ("elbow-3", include_str!("../../models/elbow-3.toml")),
    ("shoulder-6", include_str!("../../models/shoulder-6.toml")),
    ("scapula-4", include_str!("../../models/scapula-4.toml")),
    ("arm-raise-10", include_str!("../../models/arm-raise-10.toml")),
];

/// Names accepted by [`builtin_robot`].
pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

/// Description text of a bundled robot.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Parses a bundled robot; `None` when no robot has that name.
pub fn builtin_robot(name: &str) -> Option<Result<MusculoskeletalModel>> {
    builtin_source(name).map(|src| parse_robot(src, &format!("builtin:{name}")))
}
