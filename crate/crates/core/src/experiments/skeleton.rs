//! A synthetic 15-joint human skeleton.
//!
//! Poses are produced by forward kinematics from a handful of joint angles,
//! so shapes stay articulated (bone lengths fixed) without any motion-capture
//! data. Coordinates: `x` to the subject's left, `y` up, `z` forward; the
//! pelvis sits at the origin before centering.

use nalgebra::{Matrix3, Matrix3xX, Vector3};
use rand::Rng;

use crate::error::Result;
use crate::shape::{Rotation, Shape3D};

pub const NUM_JOINTS: usize = 15;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "thorax",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

/// Parent-child joint pairs.
pub const BONES: [(usize, usize); NUM_JOINTS - 1] = [
    (0, 1),
    (1, 2),
    (1, 3),
    (3, 4),
    (4, 5),
    (1, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (10, 11),
    (0, 12),
    (12, 13),
    (13, 14),
];

const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;
const THIGH: f64 = 0.42;
const SHIN: f64 = 0.40;

/// Joint angles in radians.
///
/// Shoulder/hip pitch swings a limb forward (`+z`), abduction lifts it
/// sideways, elbow flexion bends the forearm further forward and knee flexion
/// bends the shin backward. Torso pitch leans the upper body forward; torso
/// yaw twists it about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseAngles {
    pub shoulder_pitch: [f64; 2],
    pub shoulder_abduction: [f64; 2],
    pub elbow: [f64; 2],
    pub hip_pitch: [f64; 2],
    pub hip_abduction: [f64; 2],
    pub knee: [f64; 2],
    pub torso_pitch: f64,
    pub torso_yaw: f64,
}

impl PoseAngles {
    fn to_array(self) -> [f64; 14] {
        [
            self.shoulder_pitch[0],
            self.shoulder_pitch[1],
            self.shoulder_abduction[0],
            self.shoulder_abduction[1],
            self.elbow[0],
            self.elbow[1],
            self.hip_pitch[0],
            self.hip_pitch[1],
            self.hip_abduction[0],
            self.hip_abduction[1],
            self.knee[0],
            self.knee[1],
            self.torso_pitch,
            self.torso_yaw,
        ]
    }

    fn from_array(a: [f64; 14]) -> Self {
        Self {
            shoulder_pitch: [a[0], a[1]],
            shoulder_abduction: [a[2], a[3]],
            elbow: [a[4], a[5]],
            hip_pitch: [a[6], a[7]],
            hip_abduction: [a[8], a[9]],
            knee: [a[10], a[11]],
            torso_pitch: a[12],
            torso_yaw: a[13],
        }
    }

    /// Component-wise linear interpolation.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        let (a, b) = (self.to_array(), other.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t))
    }
}

/// Motion families with characteristic mean poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    Walk,
    Run,
    Jump,
    Sit,
    Box,
    Dance,
    Climb,
    Basketball,
}

impl Motion {
    pub const ALL: [Motion; 8] = [
        Motion::Walk,
        Motion::Run,
        Motion::Jump,
        Motion::Sit,
        Motion::Box,
        Motion::Dance,
        Motion::Climb,
        Motion::Basketball,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motion::Walk => "walk",
            Motion::Run => "run",
            Motion::Jump => "jump",
            Motion::Sit => "sit",
            Motion::Box => "box",
            Motion::Dance => "dance",
            Motion::Climb => "climb",
            Motion::Basketball => "basketball",
        }
    }

    /// Characteristic pose of the motion.
    pub fn mean_angles(self) -> PoseAngles {
        let sym = |v: f64| [v, v];
        match self {
            Motion::Walk => PoseAngles {
                shoulder_pitch: [0.4, -0.4],
                shoulder_abduction: sym(0.1),
                elbow: sym(0.3),
                hip_pitch: [-0.4, 0.4],
                hip_abduction: sym(0.05),
                knee: [0.2, 0.3],
                ..PoseAngles::default()
            },
            Motion::Run => PoseAngles {
                shoulder_pitch: [0.8, -0.7],
                shoulder_abduction: sym(0.15),
                elbow: sym(1.4),
                hip_pitch: [-0.6, 0.9],
                hip_abduction: sym(0.05),
                knee: [0.9, 0.6],
                torso_pitch: 0.2,
                ..PoseAngles::default()
            },
            Motion::Jump => PoseAngles {
                shoulder_pitch: sym(2.8),
                shoulder_abduction: sym(0.3),
                elbow: sym(0.2),
                hip_pitch: sym(0.3),
                hip_abduction: sym(0.1),
                knee: sym(0.5),
                ..PoseAngles::default()
            },
            Motion::Sit => PoseAngles {
                shoulder_pitch: sym(0.5),
                shoulder_abduction: sym(0.1),
                elbow: sym(1.0),
                hip_pitch: sym(1.5),
                hip_abduction: sym(0.15),
                knee: sym(1.5),
                torso_pitch: -0.1,
                ..PoseAngles::default()
            },
            Motion::Box => PoseAngles {
                shoulder_pitch: [1.3, 0.9],
                shoulder_abduction: sym(0.3),
                elbow: [1.5, 1.9],
                hip_pitch: [0.3, -0.2],
                hip_abduction: sym(0.2),
                knee: sym(0.4),
                torso_pitch: 0.15,
                torso_yaw: 0.3,
            },
            Motion::Dance => PoseAngles {
                shoulder_pitch: [0.2, 1.0],
                shoulder_abduction: [1.4, 1.2],
                elbow: [0.3, 0.9],
                hip_pitch: [0.6, -0.1],
                hip_abduction: [0.4, 0.1],
                knee: [0.8, 0.1],
                torso_pitch: 0.0,
                torso_yaw: -0.5,
            },
            Motion::Climb => PoseAngles {
                shoulder_pitch: [2.8, 1.0],
                shoulder_abduction: [0.2, 0.3],
                elbow: [0.3, 1.2],
                hip_pitch: [1.2, -0.1],
                hip_abduction: sym(0.1),
                knee: [1.6, 0.2],
                torso_pitch: 0.25,
                ..PoseAngles::default()
            },
            Motion::Basketball => PoseAngles {
                shoulder_pitch: [2.0, 2.2],
                shoulder_abduction: sym(0.2),
                elbow: [0.8, 1.0],
                hip_pitch: sym(0.5),
                hip_abduction: sym(0.1),
                knee: sym(0.7),
                torso_pitch: 0.1,
                ..PoseAngles::default()
            },
        }
    }
}

/// Rotation about `x` that swings `-y` toward `+z` by `angle`.
fn pitch(angle: f64) -> Matrix3<f64> {
    *Rotation::about_x(-angle).matrix()
}

/// Direction of a limb segment hanging from a joint on `side` (+1 left,
/// −1 right).
fn limb_direction(pitch_angle: f64, abduction: f64, side: f64) -> Vector3<f64> {
    let hang = Vector3::new(0.0, -1.0, 0.0);
    pitch(pitch_angle) * Rotation::about_z(side * abduction).matrix() * hang
}

/// Forward kinematics; the result is not centralized.
pub fn pose_from_angles(a: &PoseAngles) -> Shape3D {
    let mut j = [Vector3::zeros(); NUM_JOINTS];
    // Upper body in the torso frame, relative to the pelvis.
    j[1] = Vector3::new(0.0, 0.5, 0.0);
    j[2] = Vector3::new(0.0, 0.75, 0.02);
    j[3] = Vector3::new(0.2, 0.45, 0.0);
    j[6] = Vector3::new(-0.2, 0.45, 0.0);
    for (side_idx, (sh, el, wr, side)) in [(3, 4, 5, 1.0), (6, 7, 8, -1.0)].into_iter().enumerate() {
        let upper = limb_direction(a.shoulder_pitch[side_idx], a.shoulder_abduction[side_idx], side);
        let lower = limb_direction(
            a.shoulder_pitch[side_idx] + a.elbow[side_idx],
            a.shoulder_abduction[side_idx],
            side,
        );
        j[el] = j[sh] + upper * UPPER_ARM;
        j[wr] = j[el] + lower * FOREARM;
    }
    let torso = Rotation::about_y(a.torso_yaw).matrix() * Rotation::about_x(a.torso_pitch).matrix();
    for idx in 1..=8 {
        j[idx] = torso * j[idx];
    }
    // Legs, attached to the pelvis.
    j[9] = Vector3::new(0.1, -0.05, 0.0);
    j[12] = Vector3::new(-0.1, -0.05, 0.0);
    for (side_idx, (hip, knee, ankle, side)) in [(9, 10, 11, 1.0), (12, 13, 14, -1.0)].into_iter().enumerate() {
        let thigh = limb_direction(a.hip_pitch[side_idx], a.hip_abduction[side_idx], side);
        let shin = limb_direction(a.hip_pitch[side_idx] - a.knee[side_idx], a.hip_abduction[side_idx], side);
        j[knee] = j[hip] + thigh * THIGH;
        j[ankle] = j[knee] + shin * SHIN;
    }
    Shape3D::new(Matrix3xX::from_columns(&j)).expect("finite joint positions")
}

/// Perturbs every angle of `motion`'s mean pose by `U(−spread, spread)`.
pub fn sample_angles<R: Rng + ?Sized>(rng: &mut R, motion: Motion, spread: f64) -> PoseAngles {
    let mean = motion.mean_angles().to_array();
    PoseAngles::from_array(std::array::from_fn(|i| {
        if spread > 0.0 {
            mean[i] + rng.random_range(-spread..spread)
        } else {
            mean[i]
        }
    }))
}

/// A random pose of the given motion family.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, motion: Motion, spread: f64) -> Shape3D {
    pose_from_angles(&sample_angles(rng, motion, spread))
}

/// A smooth sequence of `frames` poses cycling between two random
/// variations of `motion`.
pub fn motion_sequence<R: Rng + ?Sized>(rng: &mut R, motion: Motion, spread: f64, frames: usize) -> Result<Vec<Shape3D>> {
    let a = sample_angles(rng, motion, spread);
    let b = sample_angles(rng, motion, spread);
    Ok((0..frames)
        .map(|t| {
            let phase = if frames > 1 { t as f64 / frames as f64 } else { 0.0 };
            let w = 0.5 - 0.5 * (std::f64::consts::TAU * phase).cos();
            pose_from_angles(&a.lerp(&b, w))
        })
        .collect())
}
