use nalgebra::{DMatrix, DVector, Isometry3, Point3, UnitQuaternion, Vector3};

use super::{JointAngles, KinematicTree, MuscleLengths, MuscleRoute, MusculoskeletalModel};
use crate::error::{Error, Result};

fn check_angles(tree: &KinematicTree, theta: &[f64]) -> Result<()> {
    if theta.len() != tree.dof() {
        return Err(Error::DimensionMismatch {
            what: "joint angles",
            expected: tree.dof(),
            got: theta.len(),
        });
    }
    if !theta.iter().all(|t| t.is_finite()) {
        return Err(Error::NonFinite("joint angles".into()));
    }
    Ok(())
}

/// World transform of every link. Link 0 is the identity; each child is
/// `parent * fixed * rotation(axis, angle)`.
pub fn forward_kinematics(tree: &KinematicTree, theta: &JointAngles) -> Result<Vec<Isometry3<f64>>> {
    check_angles(tree, theta.as_slice())?;
    Ok(fk_unchecked(tree, theta.as_slice()))
}

pub(crate) fn fk_unchecked(tree: &KinematicTree, theta: &[f64]) -> Vec<Isometry3<f64>> {
    let links = tree.links();
    let mut out = Vec::with_capacity(links.len());
    out.push(Isometry3::identity());
    for (i, link) in links.iter().enumerate().skip(1) {
        let parent = out[link.parent.expect("non-root link has a parent")];
        let joint = &tree.joints()[i - 1];
        let rot = UnitQuaternion::from_axis_angle(&joint.axis, theta[i - 1]);
        out.push(parent * link.fixed * Isometry3::from_parts(Default::default(), rot));
    }
    out
}

fn world_points<'a>(
    route: &'a MuscleRoute,
    frames: &'a [Isometry3<f64>],
) -> impl Iterator<Item = Point3<f64>> + 'a {
    route
        .points
        .iter()
        .map(move |p| frames[p.link] * Point3::from(p.offset))
}

/// Path length of one route given precomputed link frames.
pub fn route_length(route: &MuscleRoute, frames: &[Isometry3<f64>]) -> f64 {
    let pts: Vec<_> = world_points(route, frames).collect();
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Sum of straight-segment distances along every muscle route.
pub fn muscle_lengths(model: &MusculoskeletalModel, theta: &JointAngles) -> Result<MuscleLengths> {
    check_angles(model.tree(), theta.as_slice())?;
    Ok(lengths_unchecked(model, theta.as_slice()))
}

pub(crate) fn lengths_unchecked(model: &MusculoskeletalModel, theta: &[f64]) -> MuscleLengths {
    let frames = fk_unchecked(model.tree(), theta);
    MuscleLengths(DVector::from_iterator(
        model.muscle_count(),
        model.muscles().iter().map(|m| route_length(m, &frames)),
    ))
}

/// Exact `dl/dθ` of the straight-segment routes (l × n).
///
/// Each segment contributes `u · (∂p_b/∂θ_j − ∂p_a/∂θ_j)` where `u` is the
/// segment direction and a point on a link moved by joint `j` has velocity
/// `ω_j × (p − o_j)`.
pub fn geometric_jacobian(model: &MusculoskeletalModel, theta: &JointAngles) -> Result<DMatrix<f64>> {
    check_angles(model.tree(), theta.as_slice())?;
    Ok(geometric_jacobian_unchecked(model, theta.as_slice()))
}

pub(crate) fn geometric_jacobian_unchecked(model: &MusculoskeletalModel, theta: &[f64]) -> DMatrix<f64> {
    let tree = model.tree();
    let frames = fk_unchecked(tree, theta);
    let n = tree.dof();
    // Joint j's axis and origin in world: the child frame's rotation leaves the axis invariant.
    let axes: Vec<(Vector3<f64>, Point3<f64>)> = (0..n)
        .map(|j| {
            let f = &frames[j + 1];
            (f.rotation * tree.joints()[j].axis.into_inner(), Point3::from(f.translation.vector))
        })
        .collect();

    let mut g = DMatrix::zeros(model.muscle_count(), n);
    for (i, route) in model.muscles().iter().enumerate() {
        let pts: Vec<_> = world_points(route, &frames).collect();
        for (s, w) in pts.windows(2).enumerate() {
            let d = w[1] - w[0];
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let u = d / len;
            let (la, lb) = (route.points[s].link, route.points[s + 1].link);
            for (j, (axis, origin)) in axes.iter().enumerate() {
                let va = if tree.is_moved_by(la, j) {
                    axis.cross(&(w[0] - origin))
                } else {
                    Vector3::zeros()
                };
                let vb = if tree.is_moved_by(lb, j) {
                    axis.cross(&(w[1] - origin))
                } else {
                    Vector3::zeros()
                };
                g[(i, j)] += u.dot(&(vb - va));
            }
        }
    }
    g
}
