//! Geometric musculoskeletal model: a tree of revolute joints plus
//! straight-segment muscle routes.
//!
//! Joint `j` always drives link `j + 1`; link 0 is the fixed root.

mod description;
mod jacobian;
pub(crate) mod kinematics;
mod poly;

pub use description::{load_robot, parse_robot, RobotDescription};
pub(crate) use description::LineIndex;
pub use jacobian::{
    detect_involved_joints, jacobian_finite_difference, jacobian_from_polynomials, MuscleJacobian,
    DEFAULT_INVOLVEMENT_TOLERANCE, DEFAULT_PROBE_STEP,
};
pub use kinematics::{forward_kinematics, geometric_jacobian, muscle_lengths, route_length};
pub use poly::{
    fit_length_polynomial, fit_model_polynomials, fit_polynomial, monomial_exponents, FitOptions,
    LengthPolynomial, PolynomialSet,
};

use std::ops::{Deref, DerefMut};

use nalgebra::{DVector, Isometry3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rigid link. The root link has no parent and an identity fixed transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub name: String,
    pub parent: Option<usize>,
    /// Transform from the parent frame to the joint frame, applied before the joint rotation.
    pub fixed: Isometry3<f64>,
    /// Link mass in kg, used only by the plant for gravity torques.
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Rotation axis in the joint frame (parent frame after the fixed transform).
    pub axis: Unit<Vector3<f64>>,
    pub lower: f64,
    pub upper: f64,
}

impl Joint {
    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.lower, self.upper)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicTree {
    links: Vec<Link>,
    joints: Vec<Joint>,
}

impl KinematicTree {
    pub fn new(links: Vec<Link>, joints: Vec<Joint>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::InvalidModel("a tree needs at least the root link".into()));
        }
        if joints.len() + 1 != links.len() {
            return Err(Error::InvalidModel(format!(
                "{} links need exactly {} joints, got {}",
                links.len(),
                links.len() - 1,
                joints.len()
            )));
        }
        if links[0].parent.is_some() {
            return Err(Error::InvalidModel("link 0 must be the root".into()));
        }
        for (i, link) in links.iter().enumerate().skip(1) {
            match link.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::InvalidModel(format!(
                        "link `{}` must have a parent with a smaller index",
                        link.name
                    )))
                }
            }
        }
        for joint in &joints {
            if (joint.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!(
                    "joint `{}` axis is not unit length",
                    joint.name
                )));
            }
            if !(joint.lower <= joint.upper) {
                return Err(Error::InvalidModel(format!(
                    "joint `{}` lower limit exceeds upper limit",
                    joint.name
                )));
            }
        }
        Ok(Self { links, joints })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Index of the joint that moves `link`, if any.
    pub fn joint_of_link(&self, link: usize) -> Option<usize> {
        link.checked_sub(1)
    }

    /// True when `link` is moved by joint `joint`, i.e. the joint's child is
    /// `link` or one of its ancestors.
    pub fn is_moved_by(&self, link: usize, joint: usize) -> bool {
        let child = joint + 1;
        let mut cur = Some(link);
        while let Some(l) = cur {
            if l == child {
                return true;
            }
            if l < child {
                return false;
            }
            cur = self.links[l].parent;
        }
        false
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    /// Clamps every angle into its joint limits; returns true if anything moved.
    pub fn clamp_angles(&self, theta: &mut DVector<f64>) -> bool {
        let mut clamped = false;
        for (t, j) in theta.iter_mut().zip(&self.joints) {
            let c = j.clamp(*t);
            if c != *t {
                clamped = true;
                *t = c;
            }
        }
        clamped
    }

    pub fn within_limits(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.joints)
            .all(|(t, j)| *t >= j.lower && *t <= j.upper)
    }
}

/// A muscle attachment: a point fixed in some link frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttachmentPoint {
    pub link: usize,
    pub offset: Vector3<f64>,
}

/// Ordered attachment points: origin, via points, insertion.
#[derive(Clone, Debug, PartialEq)]
pub struct MuscleRoute {
    pub name: String,
    pub points: Vec<AttachmentPoint>,
}

impl MuscleRoute {
    pub fn origin(&self) -> &AttachmentPoint {
        &self.points[0]
    }

    pub fn insertion(&self) -> &AttachmentPoint {
        self.points.last().expect("validated route has points")
    }

    /// True when every segment lies within a single link, so the length never changes.
    pub fn is_passive(&self) -> bool {
        self.points.windows(2).all(|w| w[0].link == w[1].link)
    }

    fn validate(&self, tree: &KinematicTree, allow_passive: bool) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(format!("muscle `{}`: {msg}", self.name)));
        if self.points.len() < 2 {
            return bad("needs at least an origin and an insertion".into());
        }
        for p in &self.points {
            if p.link >= tree.links().len() {
                return bad(format!("attachment references unknown link {}", p.link));
            }
            if !p.offset.iter().all(|v| v.is_finite()) {
                return bad("attachment offset is not finite".into());
            }
        }
        for w in self.points.windows(2) {
            if w[0].link == w[1].link && w[0].offset == w[1].offset {
                return bad("zero-length segment between identical points".into());
            }
        }
        if !allow_passive && self.is_passive() {
            return bad("no segment spans two links, the muscle cannot actuate a joint".into());
        }
        Ok(())
    }
}

/// Kinematic tree plus muscle routing: the geometric model.
#[derive(Clone, Debug, PartialEq)]
pub struct MusculoskeletalModel {
    pub name: String,
    tree: KinematicTree,
    muscles: Vec<MuscleRoute>,
    /// Registered antagonistic pairs (muscle indices), used for diagnostics and metrics.
    pairs: Vec<(usize, usize)>,
}

impl MusculoskeletalModel {
    pub fn new(
        name: impl Into<String>,
        tree: KinematicTree,
        muscles: Vec<MuscleRoute>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        Self::build(name.into(), tree, muscles, pairs, false)
    }

    /// Like [`new`](Self::new) but also accepts passive routes whose points all
    /// sit on one link. Such routes have constant length; they are useful as
    /// reference cases but cannot actuate anything.
    pub fn new_allow_passive(
        name: impl Into<String>,
        tree: KinematicTree,
        muscles: Vec<MuscleRoute>,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        Self::build(name.into(), tree, muscles, pairs, true)
    }

    fn build(
        name: String,
        tree: KinematicTree,
        muscles: Vec<MuscleRoute>,
        pairs: Vec<(usize, usize)>,
        allow_passive: bool,
    ) -> Result<Self> {
        if muscles.is_empty() {
            return Err(Error::InvalidModel("model has no muscles".into()));
        }
        for m in &muscles {
            m.validate(&tree, allow_passive)?;
        }
        for (i, m) in muscles.iter().enumerate() {
            if muscles[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::InvalidModel(format!("duplicate muscle name `{}`", m.name)));
            }
        }
        for &(a, b) in &pairs {
            if a >= muscles.len() || b >= muscles.len() || a == b {
                return Err(Error::InvalidModel(format!("invalid antagonistic pair ({a}, {b})")));
            }
        }
        Ok(Self {
            name,
            tree,
            muscles,
            pairs,
        })
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn muscles(&self) -> &[MuscleRoute] {
        &self.muscles
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn dof(&self) -> usize {
        self.tree.dof()
    }

    pub fn muscle_count(&self) -> usize {
        self.muscles.len()
    }

    pub fn muscle_index(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m.name == name)
    }

    /// Copy of this model with attachment offsets displaced.
    ///
    /// Each entry is `(muscle, point, offset)` with the offset in the point's
    /// link frame, meters. Returns an error if a displaced route becomes invalid.
    pub fn perturbed(&self, offsets: &[(usize, usize, Vector3<f64>)]) -> Result<Self> {
        let mut muscles = self.muscles.clone();
        for &(m, p, d) in offsets {
            let route = muscles
                .get_mut(m)
                .ok_or_else(|| Error::InvalidInput(format!("perturbation names muscle {m}")))?;
            let point = route.points.get_mut(p).ok_or_else(|| {
                Error::InvalidInput(format!("perturbation names point {p} of muscle {m}"))
            })?;
            point.offset += d;
        }
        let allow_passive = self.muscles.iter().any(MuscleRoute::is_passive);
        Self::build(self.name.clone(), self.tree.clone(), muscles, self.pairs.clone(), allow_passive)
    }
}

macro_rules! vector_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(pub DVector<f64>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(DVector::zeros(n))
            }

            pub fn from_slice(v: &[f64]) -> Self {
                Self(DVector::from_column_slice(v))
            }

            pub fn into_inner(self) -> DVector<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = DVector<f64>;
            fn deref(&self) -> &DVector<f64> {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut DVector<f64> {
                &mut self.0
            }
        }

        impl From<DVector<f64>> for $name {
            fn from(v: DVector<f64>) -> Self {
                Self(v)
            }
        }
    };
}

vector_newtype!(
    /// Joint angles in radians, one per joint.
    JointAngles
);
vector_newtype!(
    /// Muscle path lengths in meters, one per muscle.
    MuscleLengths
);

impl JointAngles {
    pub fn from_degrees(deg: &[f64]) -> Self {
        Self(DVector::from_iterator(deg.len(), deg.iter().map(|d| d.to_radians())))
    }
}
