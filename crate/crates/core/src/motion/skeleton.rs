//! Canonical 15-joint body used by the synthetic generator.

pub const NUM_JOINTS: usize = 15;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "spine",
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

/// Rest offsets from the pelvis in millimeters; y up, body facing +z.
pub const REST_OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, 280.0, 0.0],
    [0.0, 620.0, 20.0],
    [170.0, 480.0, 0.0],
    [200.0, 200.0, 0.0],
    [210.0, -50.0, 20.0],
    [-170.0, 480.0, 0.0],
    [-200.0, 200.0, 0.0],
    [-210.0, -50.0, 20.0],
    [95.0, -60.0, 0.0],
    [105.0, -480.0, 10.0],
    [110.0, -880.0, 0.0],
    [-95.0, -60.0, 0.0],
    [-105.0, -480.0, 10.0],
    [-110.0, -880.0, 0.0],
];

/// Height of the pelvis above the ground plane.
pub const PELVIS_HEIGHT: f64 = 950.0;

/// Forward swing of each joint per unit gait amplitude, and whether it
/// swings in phase with the left leg (+1) or against it (-1).
pub const SWING: [(f64, f64); NUM_JOINTS] = [
    (0.0, 0.0),
    (0.05, 1.0),
    (0.08, 1.0),
    (0.1, -1.0),
    (0.5, -1.0),
    (1.0, -1.0),
    (0.1, 1.0),
    (0.5, 1.0),
    (1.0, 1.0),
    (0.1, 1.0),
    (0.6, 1.0),
    (1.0, 1.0),
    (0.1, -1.0),
    (0.6, -1.0),
    (1.0, -1.0),
];
