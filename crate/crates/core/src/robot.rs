//! Robot parameters and kinematics of a 3-DoF point-foot leg.
//!
//! Each leg is a serial chain: abduction about the body x axis, a lateral
//! abduction link, hip pitch about y, thigh along -z, knee pitch about y and
//! shank along -z. Hip-frame positions are measured from the abduction axis
//! and are parallel to the body frame. The inverse kinematics keeps the knee
//! behind the hip (knee angle negative).

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotation::{rotation_derivatives, rotation_matrix};

pub const NUM_LEGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LegIndex {
    FrontRight,
    FrontLeft,
    HindRight,
    HindLeft,
}

impl LegIndex {
    pub const ALL: [LegIndex; NUM_LEGS] = [
        LegIndex::FrontRight,
        LegIndex::FrontLeft,
        LegIndex::HindRight,
        LegIndex::HindLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// +1 for left legs, -1 for right legs.
    pub fn side(self) -> f64 {
        match self {
            LegIndex::FrontLeft | LegIndex::HindLeft => 1.0,
            LegIndex::FrontRight | LegIndex::HindRight => -1.0,
        }
    }

    /// The leg on the other side of the sagittal plane.
    pub fn mirrored(self) -> Self {
        match self {
            LegIndex::FrontRight => LegIndex::FrontLeft,
            LegIndex::FrontLeft => LegIndex::FrontRight,
            LegIndex::HindRight => LegIndex::HindLeft,
            LegIndex::HindLeft => LegIndex::HindRight,
        }
    }
}

impl fmt::Display for LegIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LegIndex::FrontRight => "FR",
            LegIndex::FrontLeft => "FL",
            LegIndex::HindRight => "HR",
            LegIndex::HindLeft => "HL",
        };
        f.write_str(s)
    }
}

/// Abduction, hip pitch and knee pitch (rad).
pub type JointAngles = Vector3<f64>;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing robot parameters: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid robot parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("foot target {target:?} is outside the workspace of leg {leg}")]
pub struct OutOfWorkspace {
    pub leg: LegIndex,
    pub target: [f64; 3],
}

/// On-disk layout of [`RobotParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParamsFile {
    pub name: String,
    pub mass: f64,
    pub inertia: [[f64; 3]; 3],
    pub hip_offsets: [[f64; 3]; 4],
    pub abduction_length: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub default_joint_angles: [[f64; 3]; 4],
    pub friction: f64,
    pub standing_height: f64,
    pub gravity: [f64; 3],
    pub joint_lower: [f64; 3],
    pub joint_upper: [f64; 3],
    pub torque_limit: [f64; 3],
    pub joint_kp: [f64; 3],
    pub joint_kd: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    pub name: String,
    pub mass: f64,
    /// Body-frame rotational inertia.
    pub inertia: Matrix3<f64>,
    pub inertia_inv: Matrix3<f64>,
    pub hip_offsets: [Vector3<f64>; NUM_LEGS],
    pub abduction_length: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub default_joint_angles: [JointAngles; NUM_LEGS],
    pub friction: f64,
    pub standing_height: f64,
    pub gravity: Vector3<f64>,
    pub joint_lower: JointAngles,
    pub joint_upper: JointAngles,
    pub torque_limit: Vector3<f64>,
    /// Swing-leg joint PD gains.
    pub joint_kp: Vector3<f64>,
    pub joint_kd: Vector3<f64>,
}

const A1_TOML: &str = include_str!("../config/robots/a1.toml");
const MINI_CHEETAH_TOML: &str = include_str!("../config/robots/mini_cheetah.toml");

impl RobotParams {
    pub fn a1() -> Self {
        Self::from_toml_str(A1_TOML).expect("bundled A1 parameters are valid")
    }

    pub fn mini_cheetah() -> Self {
        Self::from_toml_str(MINI_CHEETAH_TOML).expect("bundled Mini Cheetah parameters are valid")
    }

    /// Bundled parameter set by name (`a1`, `mini_cheetah`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "a1" => Some(Self::a1()),
            "mini_cheetah" | "mini-cheetah" => Some(Self::mini_cheetah()),
            _ => None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ParamsError> {
        let file: RobotParamsFile = toml::from_str(s)?;
        Self::try_from(file)
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let s = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    /// Total reach of a leg from the abduction axis.
    pub fn max_reach(&self) -> f64 {
        (self.abduction_length.powi(2) + (self.thigh_length + self.shank_length).powi(2)).sqrt()
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity.norm()
    }
}

impl TryFrom<RobotParamsFile> for RobotParams {
    type Error = ParamsError;

    fn try_from(f: RobotParamsFile) -> Result<Self, ParamsError> {
        let invalid = |m: &str| Err(ParamsError::Invalid(m.to_string()));
        if !(f.mass > 0.0) {
            return invalid("mass must be positive");
        }
        let inertia = Matrix3::from_fn(|r, c| f.inertia[r][c]);
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return invalid("inertia must be symmetric");
        }
        if inertia.cholesky().is_none() {
            return invalid("inertia must be positive definite");
        }
        if !(f.abduction_length > 0.0 && f.thigh_length > 0.0 && f.shank_length > 0.0) {
            return invalid("link lengths must be positive");
        }
        if !(f.friction > 0.0) {
            return invalid("friction coefficient must be positive");
        }
        if !(f.standing_height > 0.0) {
            return invalid("standing height must be positive");
        }
        let hip_offsets = f.hip_offsets.map(Vector3::from);
        for leg in [LegIndex::FrontRight, LegIndex::HindRight] {
            let a = hip_offsets[leg.index()];
            let b = hip_offsets[leg.mirrored().index()];
            if (a.x - b.x).abs() > 1e-9 || (a.y + b.y).abs() > 1e-9 || (a.z - b.z).abs() > 1e-9 {
                return invalid("hip offsets must be mirror symmetric about the sagittal plane");
            }
            if a.y > 0.0 {
                return invalid("right hips must have negative y offset");
            }
        }
        let joint_lower = Vector3::from(f.joint_lower);
        let joint_upper = Vector3::from(f.joint_upper);
        if (0..3).any(|i| joint_lower[i] >= joint_upper[i]) {
            return invalid("joint lower limits must be below upper limits");
        }
        if f.torque_limit.iter().any(|&t| !(t > 0.0)) {
            return invalid("torque limits must be positive");
        }
        if f.joint_kp.iter().chain(&f.joint_kd).any(|&g| !(g > 0.0)) {
            return invalid("joint PD gains must be positive");
        }
        Ok(RobotParams {
            name: f.name,
            mass: f.mass,
            inertia_inv: inertia.try_inverse().expect("positive definite"),
            inertia,
            hip_offsets,
            abduction_length: f.abduction_length,
            thigh_length: f.thigh_length,
            shank_length: f.shank_length,
            default_joint_angles: f.default_joint_angles.map(Vector3::from),
            friction: f.friction,
            standing_height: f.standing_height,
            gravity: Vector3::from(f.gravity),
            joint_lower,
            joint_upper,
            torque_limit: Vector3::from(f.torque_limit),
            joint_kp: Vector3::from(f.joint_kp),
            joint_kd: Vector3::from(f.joint_kd),
        })
    }
}

/// Body pose used to place the leg chain in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub position: Vector3<f64>,
    /// ZYX Euler angles `[roll, pitch, yaw]`.
    pub euler: Vector3<f64>,
}

impl BodyPose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            euler: Vector3::zeros(),
        }
    }
}

/// Foot position relative to the abduction axis, in the hip frame.
pub fn foot_position_hip(params: &RobotParams, leg: LegIndex, q: &JointAngles) -> Vector3<f64> {
    let (s1, c1) = q[0].sin_cos();
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let (l0, l1, l2) = (
        leg.side() * params.abduction_length,
        params.thigh_length,
        params.shank_length,
    );
    let planar = l1 * c2 + l2 * c23;
    Vector3::new(
        -l1 * s2 - l2 * s23,
        l0 * c1 + planar * s1,
        l0 * s1 - planar * c1,
    )
}

pub fn foot_position_body(params: &RobotParams, leg: LegIndex, q: &JointAngles) -> Vector3<f64> {
    params.hip_offsets[leg.index()] + foot_position_hip(params, leg, q)
}

pub fn forward_kinematics(
    params: &RobotParams,
    leg: LegIndex,
    q: &JointAngles,
    pose: &BodyPose,
) -> Vector3<f64> {
    pose.position + rotation_matrix(&pose.euler) * foot_position_body(params, leg, q)
}

/// `∂(hip-frame foot position)/∂q`.
pub fn leg_jacobian(params: &RobotParams, leg: LegIndex, q: &JointAngles) -> Matrix3<f64> {
    let (s1, c1) = q[0].sin_cos();
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let (l0, l1, l2) = (
        leg.side() * params.abduction_length,
        params.thigh_length,
        params.shank_length,
    );
    let planar = l1 * c2 + l2 * c23;
    let dplanar_dq2 = -l1 * s2 - l2 * s23;
    let dplanar_dq3 = -l2 * s23;
    Matrix3::new(
        0.0,
        -l1 * c2 - l2 * c23,
        -l2 * c23,
        -l0 * s1 + planar * c1,
        dplanar_dq2 * s1,
        dplanar_dq3 * s1,
        l0 * c1 + planar * s1,
        -dplanar_dq2 * c1,
        -dplanar_dq3 * c1,
    )
}

/// Jacobians of the world-frame foot position with respect to the Euler
/// angles (columns roll, pitch, yaw) and the joint angles. The derivative
/// with respect to the body position is the identity.
pub fn forward_kinematics_jacobians(
    params: &RobotParams,
    leg: LegIndex,
    q: &JointAngles,
    pose: &BodyPose,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let body = foot_position_body(params, leg, q);
    let d = rotation_derivatives(&pose.euler);
    let wrt_euler = Matrix3::from_columns(&[d[0] * body, d[1] * body, d[2] * body]);
    let wrt_q = rotation_matrix(&pose.euler) * leg_jacobian(params, leg, q);
    (wrt_euler, wrt_q)
}

/// Closed-form inverse kinematics on the knee-backward branch.
///
/// Targets within `1e-12` of the workspace boundary are projected onto it.
pub fn inverse_kinematics(
    params: &RobotParams,
    leg: LegIndex,
    target: &Vector3<f64>,
) -> Result<JointAngles, OutOfWorkspace> {
    const EDGE: f64 = 1e-12;
    let out = || OutOfWorkspace {
        leg,
        target: [target.x, target.y, target.z],
    };
    let (x, y, z) = (target.x, target.y, target.z);
    let (l0, l1, l2) = (
        leg.side() * params.abduction_length,
        params.thigh_length,
        params.shank_length,
    );

    let yz2 = y * y + z * z - l0 * l0;
    if yz2 < -EDGE {
        return Err(out());
    }
    // Leg plane coordinate after removing the abduction rotation; the leg
    // points downward.
    let zp = -yz2.max(0.0).sqrt();
    let q1 = z.atan2(y) - zp.atan2(l0);
    let q1 = (q1 + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;

    let d2 = x * x + zp * zp;
    let max2 = (l1 + l2).powi(2);
    let min2 = (l1 - l2).powi(2);
    if d2 > max2 + EDGE || d2 < min2 - EDGE {
        return Err(out());
    }
    let c3 = ((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let q3 = -c3.acos();
    let a = l1 + l2 * q3.cos();
    let b = l2 * q3.sin();
    let q2 = (-x).atan2(-zp) - b.atan2(a);
    Ok(Vector3::new(q1, q2, q3))
}

/// Clamp joint angles to the configured limits. Returns whether any joint
/// was clamped.
pub fn clamp_joint_angles(params: &RobotParams, q: &mut JointAngles) -> bool {
    let mut clamped = false;
    for i in 0..3 {
        let c = q[i].clamp(params.joint_lower[i], params.joint_upper[i]);
        clamped |= c != q[i];
        q[i] = c;
    }
    clamped
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion};
    use proptest::prelude::*;

    /// Homogeneous-transform chain built from nalgebra isometries.
    fn transform_chain(p: &RobotParams, leg: LegIndex, q: &JointAngles) -> Vector3<f64> {
        let x = Vector3::x_axis();
        let y = Vector3::y_axis();
        let chain = Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&x, q[0]))
            * Isometry3::from_parts(
                Translation3::new(0.0, leg.side() * p.abduction_length, 0.0),
                UnitQuaternion::from_axis_angle(&y, q[1]),
            )
            * Isometry3::from_parts(
                Translation3::new(0.0, 0.0, -p.thigh_length),
                UnitQuaternion::from_axis_angle(&y, q[2]),
            )
            * Isometry3::translation(0.0, 0.0, -p.shank_length);
        (chain * Point3::origin()).coords
    }

    #[test]
    fn straight_leg_hangs_below_thigh_joint() {
        let p = RobotParams::a1();
        for leg in LegIndex::ALL {
            let f = foot_position_hip(&p, leg, &Vector3::zeros());
            let expected = Vector3::new(0.0, leg.side() * p.abduction_length, -(p.thigh_length + p.shank_length));
            assert!((f - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn default_pose_matches_transform_chain() {
        for p in [RobotParams::a1(), RobotParams::mini_cheetah()] {
            for leg in LegIndex::ALL {
                let q = p.default_joint_angles[leg.index()];
                let f = foot_position_hip(&p, leg, &q);
                assert!((f - transform_chain(&p, leg, &q)).norm() < 1e-12);
                // Standing pose puts the foot at standing height below the hip.
                assert!((f.z + p.standing_height).abs() < 1e-12);
                assert!(f.x.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_of_default_foot_is_default_pose() {
        let p = RobotParams::a1();
        for leg in LegIndex::ALL {
            let q = p.default_joint_angles[leg.index()];
            let back = inverse_kinematics(&p, leg, &foot_position_hip(&p, leg, &q)).unwrap();
            assert!((back - q).norm() < 1e-12);
        }
    }

    #[test]
    fn unreachable_targets_are_rejected() {
        let p = RobotParams::a1();
        let far = Vector3::new(0.0, 0.0, -(p.abduction_length + p.thigh_length + p.shank_length) - 0.01);
        assert!(inverse_kinematics(&p, LegIndex::FrontLeft, &far).is_err());
        let near = Vector3::new(0.0, -0.05, 0.0);
        assert!(inverse_kinematics(&p, LegIndex::FrontLeft, &near).is_err());
    }

    #[test]
    fn extended_knee_is_singular() {
        let p = RobotParams::a1();
        let j = leg_jacobian(&p, LegIndex::HindLeft, &Vector3::new(0.2, 0.4, 0.0));
        assert!(j.determinant().abs() < 1e-15);
        assert_eq!(j * Vector3::zeros(), Vector3::zeros());
    }

    #[test]
    fn world_jacobians_match_finite_differences() {
        let p = RobotParams::a1();
        let pose = BodyPose { position: Vector3::new(0.1, -0.2, 0.3), euler: Vector3::new(0.1, -0.2, 0.7) };
        let q = Vector3::new(0.1, 0.9, -1.4);
        let (je, jq) = forward_kinematics_jacobians(&p, LegIndex::FrontRight, &q, &pose);
        let h = 1e-6;
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            let dp = BodyPose { euler: pose.euler + e, ..pose };
            let dm = BodyPose { euler: pose.euler - e, ..pose };
            let fd = (forward_kinematics(&p, LegIndex::FrontRight, &q, &dp)
                - forward_kinematics(&p, LegIndex::FrontRight, &q, &dm))
                / (2.0 * h);
            assert!((fd - je.column(i)).norm() < 1e-8);
            let fd = (forward_kinematics(&p, LegIndex::FrontRight, &(q + e), &pose)
                - forward_kinematics(&p, LegIndex::FrontRight, &(q - e), &pose))
                / (2.0 * h);
            assert!((fd - jq.column(i)).norm() < 1e-8);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let base: RobotParamsFile = toml::from_str(A1_TOML).unwrap();
        let mut f = base.clone();
        f.mass = 0.0;
        assert!(RobotParams::try_from(f).is_err());
        let mut f = base.clone();
        f.inertia[0][0] = -1.0;
        assert!(RobotParams::try_from(f).is_err());
        let mut f = base.clone();
        f.hip_offsets[1][1] = 0.05;
        assert!(RobotParams::try_from(f).is_err());
        let mut f = base;
        f.friction = 0.0;
        assert!(RobotParams::try_from(f).is_err());
    }

    fn in_workspace_q() -> impl Strategy<Value = JointAngles> {
        // The inverse kinematics branch keeps the foot below the abduction
        // axis: l1 cos q2 + l2 cos(q2 + q3) > 0.
        (-0.6f64..0.6, -0.5f64..1.8, -2.5f64..-0.3)
            .prop_filter("foot below the abduction axis", |(_, b, c)| b.cos() + (b + c).cos() > 0.05)
            .prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    fn any_leg() -> impl Strategy<Value = LegIndex> {
        (0usize..4).prop_map(|i| LegIndex::from_index(i).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn fk_ik_round_trip(q in in_workspace_q(), leg in any_leg()) {
            let p = RobotParams::a1();
            let target = foot_position_hip(&p, leg, &q);
            let back = inverse_kinematics(&p, leg, &target).unwrap();
            prop_assert!((back - q).norm() < 1e-9);
            prop_assert!((foot_position_hip(&p, leg, &back) - target).norm() < 1e-9);
        }

        #[test]
        fn jacobian_matches_central_differences(q in in_workspace_q(), leg in any_leg()) {
            let p = RobotParams::mini_cheetah();
            let j = leg_jacobian(&p, leg, &q);
            let h = 1e-6;
            for i in 0..3 {
                let mut e = Vector3::zeros();
                e[i] = h;
                let fd = (foot_position_hip(&p, leg, &(q + e)) - foot_position_hip(&p, leg, &(q - e))) / (2.0 * h);
                let col = j.column(i).into_owned();
                prop_assert!((fd - col).norm() <= 1e-6 * col.norm().max(1e-3));
            }
        }

        #[test]
        fn mirrored_leg_mirrors_foot(q in in_workspace_q(), leg in any_leg()) {
            let p = RobotParams::a1();
            let f = foot_position_body(&p, leg, &q);
            let m = foot_position_body(&p, leg.mirrored(), &Vector3::new(-q[0], q[1], q[2]));
            prop_assert!((f - Vector3::new(m.x, -m.y, m.z)).norm() < 1e-14);
        }
    }
}
