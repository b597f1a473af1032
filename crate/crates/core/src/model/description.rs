//! Robot description files (TOML).
//!
//! ```toml
//! name = "elbow-3"
//!
//! [[link]]                       # first link is the fixed root
//! name = "upper_arm"
//!
//! [[link]]
//! name = "forearm"
//! parent = "upper_arm"
//! xyz = [0.0, 0.0, 0.0]          # m, parent frame -> joint frame
//! rpy = [0.0, 0.0, 0.0]          # deg, roll-pitch-yaw
//! mass = 1.0                     # kg (optional)
//! com = [0.0, -0.12, 0.0]        # m, link frame (optional)
//! joint = { name = "elbow", axis = [0.0, 0.0, 1.0], limits = [-145.0, 5.0] }   # limits in deg
//!
//! [[muscle]]
//! name = "biceps"
//! points = [
//!   { link = "upper_arm", offset = [-0.025, 0.25, 0.0] },
//!   { link = "forearm", offset = [-0.02, -0.05, 0.0] },
//! ]
//!
//! [[pair]]                       # antagonistic pair, diagnostics only
//! muscles = ["biceps", "triceps"]
//! ```
//!
//! Every non-root link carries exactly one revolute joint. Links must be
//! listed after their parent.

use std::ops::Range;
use std::path::Path;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;
use toml::Spanned;

use super::{AttachmentPoint, Joint, KinematicTree, Link, MuscleRoute, MusculoskeletalModel};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    pub name: String,
    #[serde(rename = "link")]
    pub links: Vec<Spanned<LinkSpec>>,
    #[serde(rename = "muscle", default)]
    pub muscles: Vec<Spanned<MuscleSpec>>,
    #[serde(rename = "pair", default)]
    pub pairs: Vec<Spanned<PairSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub parent: Option<String>,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    #[serde(default)]
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    pub joint: Option<Spanned<JointSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleSpec {
    pub name: String,
    pub points: Vec<Spanned<PointSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub link: String,
    pub offset: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub muscles: [String; 2],
}

/// Maps byte offsets in a source text to 1-based line numbers.
pub(crate) struct LineIndex<'a> {
    text: &'a str,
    file: &'a str,
}

impl<'a> LineIndex<'a> {
    pub(crate) fn new(text: &'a str, file: &'a str) -> Self {
        Self { text, file }
    }

    pub(crate) fn line(&self, offset: usize) -> usize {
        let end = offset.min(self.text.len());
        self.text.as_bytes()[..end].iter().filter(|&&b| b == b'\n').count() + 1
    }

    pub(crate) fn error(&self, span: Range<usize>, message: impl Into<String>) -> Error {
        Error::Description {
            file: self.file.to_string(),
            line: self.line(span.start),
            message: message.into(),
        }
    }

    pub(crate) fn parse_error(&self, err: toml::de::Error) -> Error {
        let line = err.span().map(|s| self.line(s.start)).unwrap_or(1);
        Error::Description {
            file: self.file.to_string(),
            line,
            message: err.message().to_string(),
        }
    }
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Parses and validates a robot description. `file` labels error messages.
pub fn parse_robot(text: &str, file: &str) -> Result<MusculoskeletalModel> {
    let idx = LineIndex::new(text, file);
    let desc: RobotDescription = toml::from_str(text).map_err(|e| idx.parse_error(e))?;
    build(&desc, &idx)
}

pub fn load_robot(path: &Path) -> Result<MusculoskeletalModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_robot(&text, &path.display().to_string())
}

fn build(desc: &RobotDescription, idx: &LineIndex<'_>) -> Result<MusculoskeletalModel> {
    if desc.links.is_empty() {
        return Err(idx.error(0..0, "at least one [[link]] is required"));
    }
    let mut links = Vec::with_capacity(desc.links.len());
    let mut joints = Vec::with_capacity(desc.links.len() - 1);
    for (i, spanned) in desc.links.iter().enumerate() {
        let span = spanned.span();
        let spec = spanned.get_ref();
        if desc.links[..i].iter().any(|l| l.get_ref().name == spec.name) {
            return Err(idx.error(span, format!("duplicate link name `{}`", spec.name)));
        }
        if !finite3(&spec.xyz) || !finite3(&spec.rpy) || !finite3(&spec.com) || !spec.mass.is_finite() {
            return Err(idx.error(span, format!("link `{}` has a non-finite value", spec.name)));
        }
        if spec.mass < 0.0 {
            return Err(idx.error(span, format!("link `{}` has negative mass", spec.name)));
        }
        let parent = match (&spec.parent, i) {
            (None, 0) => None,
            (Some(_), 0) => return Err(idx.error(span, "the first link is the root and cannot have a parent")),
            (None, _) => return Err(idx.error(span, format!("link `{}` needs a parent", spec.name))),
            (Some(p), _) => match desc.links[..i].iter().position(|l| &l.get_ref().name == p) {
                Some(pi) => Some(pi),
                None => {
                    return Err(idx.error(
                        span,
                        format!("parent `{p}` of link `{}` must be listed before it", spec.name),
                    ))
                }
            },
        };
        match (&spec.joint, i) {
            (None, 0) => {}
            (Some(j), 0) => return Err(idx.error(j.span(), "the root link cannot carry a joint")),
            (None, _) => return Err(idx.error(span, format!("link `{}` needs a joint", spec.name))),
            (Some(j), _) => {
                let js = j.get_ref();
                let axis = Vector3::from(js.axis);
                if !finite3(&js.axis) || (axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(idx.error(j.span(), format!("joint `{}` axis must have unit norm", js.name)));
                }
                let [lo, hi] = js.limits;
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(idx.error(j.span(), format!("joint `{}` needs finite limits with lower <= upper", js.name)));
                }
                if joints.iter().any(|o: &Joint| o.name == js.name) {
                    return Err(idx.error(j.span(), format!("duplicate joint name `{}`", js.name)));
                }
                joints.push(Joint {
                    name: js.name.clone(),
                    axis: Unit::new_unchecked(axis),
                    lower: lo.to_radians(),
                    upper: hi.to_radians(),
                });
            }
        }
        let [r, p, y] = spec.rpy;
        links.push(Link {
            name: spec.name.clone(),
            parent,
            fixed: Isometry3::from_parts(
                Translation3::new(spec.xyz[0], spec.xyz[1], spec.xyz[2]),
                UnitQuaternion::from_euler_angles(r.to_radians(), p.to_radians(), y.to_radians()),
            ),
            mass: spec.mass,
            com: Vector3::from(spec.com),
        });
    }
    let tree = KinematicTree::new(links, joints).map_err(|e| idx.error(0..0, e.to_string()))?;

    let mut muscles = Vec::with_capacity(desc.muscles.len());
    for (mi, spanned) in desc.muscles.iter().enumerate() {
        let spec = spanned.get_ref();
        let span = spanned.span();
        if desc.muscles[..mi].iter().any(|m| m.get_ref().name == spec.name) {
            return Err(idx.error(span, format!("duplicate muscle name `{}`", spec.name)));
        }
        let mut points = Vec::with_capacity(spec.points.len());
        for p in &spec.points {
            let ps = p.get_ref();
            let link = tree
                .link_index(&ps.link)
                .ok_or_else(|| idx.error(p.span(), format!("unknown link `{}`", ps.link)))?;
            if !finite3(&ps.offset) {
                return Err(idx.error(p.span(), "attachment offset must be finite"));
            }
            points.push(AttachmentPoint {
                link,
                offset: Vector3::from(ps.offset),
            });
        }
        let route = MuscleRoute {
            name: spec.name.clone(),
            points,
        };
        // Route-level invariants, reported at the offending muscle.
        if route.points.len() < 2 {
            return Err(idx.error(span, format!("muscle `{}` needs at least two points", spec.name)));
        }
        for (k, w) in route.points.windows(2).enumerate() {
            if w[0] == w[1] {
                return Err(idx.error(
                    spec.points[k + 1].span(),
                    format!("muscle `{}` has a zero-length segment", spec.name),
                ));
            }
        }
        if route.is_passive() {
            return Err(idx.error(
                span,
                format!("muscle `{}` never spans two links and cannot actuate a joint", spec.name),
            ));
        }
        muscles.push(route);
    }
    if muscles.is_empty() {
        return Err(idx.error(0..0, "at least one [[muscle]] is required"));
    }

    let mut pairs = Vec::with_capacity(desc.pairs.len());
    for spanned in &desc.pairs {
        let [a, b] = &spanned.get_ref().muscles;
        let find = |n: &str| {
            muscles
                .iter()
                .position(|m: &MuscleRoute| m.name == n)
                .ok_or_else(|| idx.error(spanned.span(), format!("pair names unknown muscle `{n}`")))
        };
        let (ia, ib) = (find(a)?, find(b)?);
        if ia == ib {
            return Err(idx.error(spanned.span(), "a pair needs two different muscles"));
        }
        pairs.push((ia, ib));
    }

    MusculoskeletalModel::new(desc.name.clone(), tree, muscles, pairs).map_err(|e| idx.error(0..0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
name = "hinge"

[[link]]
name = "base"

[[link]]
name = "arm"
parent = "base"
xyz = [0.0, 0.0, 0.1]
mass = 0.5
com = [0.1, 0.0, 0.0]
joint = { name = "hinge", axis = [0.0, 0.0, 1.0], limits = [-90.0, 90.0] }

[[muscle]]
name = "flexor"
points = [
  { link = "base", offset = [0.1, 0.02, 0.1] },
  { link = "arm", offset = [0.05, 0.01, 0.0] },
]

[[muscle]]
name = "extensor"
points = [
  { link = "base", offset = [0.1, -0.02, 0.1] },
  { link = "arm", offset = [0.05, -0.01, 0.0] },
]

[[pair]]
muscles = ["flexor", "extensor"]
"#;

    fn line_of(err: Error) -> usize {
        match err {
            Error::Description { line, .. } => line,
            other => panic!("expected a description error, got {other}"),
        }
    }

    #[test]
    fn parses_valid_file() {
        let m = parse_robot(GOOD, "good.toml").unwrap();
        assert_eq!(m.dof(), 1);
        assert_eq!(m.muscle_count(), 2);
        assert_eq!(m.pairs(), &[(0, 1)]);
        let j = &m.tree().joints()[0];
        assert!((j.upper - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(m.tree().links()[1].mass, 0.5);
    }

    #[test]
    fn unknown_link_reports_its_line() {
        let text = GOOD.replace(r#"{ link = "arm", offset = [0.05, -0.01, 0.0] }"#, r#"{ link = "hand", offset = [0.05, -0.01, 0.0] }"#);
        let expected = text.lines().position(|l| l.contains("\"hand\"")).unwrap() + 1;
        assert_eq!(line_of(parse_robot(&text, "x.toml").unwrap_err()), expected);
    }

    #[test]
    fn non_unit_axis_reports_joint_line() {
        let text = GOOD.replace("axis = [0.0, 0.0, 1.0]", "axis = [0.0, 0.0, 2.0]");
        let expected = text.lines().position(|l| l.contains("axis = [0.0, 0.0, 2.0]")).unwrap() + 1;
        assert_eq!(line_of(parse_robot(&text, "x.toml").unwrap_err()), expected);
    }

    #[test]
    fn inverted_limits_rejected() {
        let text = GOOD.replace("limits = [-90.0, 90.0]", "limits = [90.0, -90.0]");
        assert!(parse_robot(&text, "x.toml").is_err());
    }

    #[test]
    fn single_link_muscle_rejected() {
        let text = GOOD.replace(r#"{ link = "arm", offset = [0.05, 0.01, 0.0] }"#, r#"{ link = "base", offset = [0.05, 0.01, 0.0] }"#);
        let err = parse_robot(&text, "x.toml").unwrap_err();
        assert!(err.to_string().contains("cannot actuate"), "{err}");
    }

    #[test]
    fn syntax_error_has_line() {
        let text = GOOD.replace("mass = 0.5", "mass = ");
        let expected = text.lines().position(|l| l.starts_with("mass = ")).unwrap() + 1;
        assert_eq!(line_of(parse_robot(&text, "x.toml").unwrap_err()), expected);
    }

    #[test]
    fn parent_must_precede_child() {
        let text = GOOD.replace(r#"parent = "base""#, r#"parent = "arm""#);
        assert!(parse_robot(&text, "x.toml").is_err());
    }
}
