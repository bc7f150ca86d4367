//! Procedural multi-person scenes: a root trajectory per person plus a
//! sinusoidal gait applied to a fixed 15-joint skeleton.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::skeleton::{NUM_JOINTS, PELVIS_HEIGHT, REST_OFFSETS, SWING};
use super::{MultiPersonScene, PoseSequence};
use crate::error::{Result, SomoError};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Archetype {
    StraightWalk,
    CircularWalk,
    /// Two consecutive approach-pair persons walk toward each other,
    /// pass with a small lateral gap and separate again.
    ApproachPair,
    StationaryIdle,
}

impl Archetype {
    pub fn name(self) -> &'static str {
        match self {
            Archetype::StraightWalk => "straight-walk",
            Archetype::CircularWalk => "circular-walk",
            Archetype::ApproachPair => "approach-pair",
            Archetype::StationaryIdle => "stationary-idle",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = SomoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight-walk" => Ok(Archetype::StraightWalk),
            "circular-walk" => Ok(Archetype::CircularWalk),
            "approach-pair" => Ok(Archetype::ApproachPair),
            "stationary-idle" => Ok(Archetype::StationaryIdle),
            other => Err(SomoError::Config(format!(
                "unknown motion archetype {other:?} (expected straight-walk, circular-walk, approach-pair or stationary-idle)"
            ))),
        }
    }
}

impl TryFrom<String> for Archetype {
    type Error = SomoError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Archetype> for String {
    fn from(a: Archetype) -> String {
        a.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonSpec {
    pub archetype: Archetype,
    /// Fixed walking speed; drawn from the scene range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_mm_per_s: Option<f64>,
}

impl PersonSpec {
    pub fn new(archetype: Archetype) -> Self {
        PersonSpec {
            archetype,
            speed_mm_per_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub frames: usize,
    pub fps: f64,
    pub persons: Vec<PersonSpec>,
    pub speed_mm_per_s: [f64; 2],
    pub gait_amplitude_mm: [f64; 2],
    pub gait_frequency_hz: [f64; 2],
    pub circle_radius_mm: [f64; 2],
    /// Side length of the square the start positions are drawn from.
    pub area_mm: f64,
    /// Lateral distance between the two walkers of an approach pair.
    pub pass_gap_mm: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            frames: 75,
            fps: 25.0,
            persons: vec![
                PersonSpec::new(Archetype::StraightWalk),
                PersonSpec::new(Archetype::ApproachPair),
                PersonSpec::new(Archetype::ApproachPair),
            ],
            speed_mm_per_s: [800.0, 1400.0],
            gait_amplitude_mm: [80.0, 180.0],
            gait_frequency_hz: [0.8, 1.2],
            circle_radius_mm: [1500.0, 3000.0],
            area_mm: 6000.0,
            pass_gap_mm: 600.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(SomoError::Config("scene needs at least 2 frames".into()));
        }
        if !(self.fps > 0.0) {
            return Err(SomoError::Config(format!("invalid fps {}", self.fps)));
        }
        if self.persons.is_empty() {
            return Err(SomoError::Config("scene spec lists no persons".into()));
        }
        for (name, [lo, hi]) in [
            ("speed_mm_per_s", self.speed_mm_per_s),
            ("gait_amplitude_mm", self.gait_amplitude_mm),
            ("gait_frequency_hz", self.gait_frequency_hz),
            ("circle_radius_mm", self.circle_radius_mm),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(SomoError::Config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if self.circle_radius_mm[0] <= 0.0 {
            return Err(SomoError::Config("circle radius must be positive".into()));
        }
        let pairs = self
            .persons
            .iter()
            .filter(|p| p.archetype == Archetype::ApproachPair)
            .count();
        if pairs % 2 != 0 {
            return Err(SomoError::Config(
                "approach-pair persons must come in pairs".into(),
            ));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    rng.gen_range(lo..=hi)
}

/// Root position and heading as functions of time in seconds.
enum Path {
    Line {
        start: [f64; 2],
        heading: f64,
        speed: f64,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
        phase: f64,
        angular: f64,
    },
    Still {
        at: [f64; 2],
        heading: f64,
    },
}

impl Path {
    /// Ground-plane `(x, z)` and facing angle (0 faces +z).
    fn at(&self, t: f64) -> ([f64; 2], f64) {
        match *self {
            Path::Line {
                start,
                heading,
                speed,
            } => {
                let d = speed * t;
                ([start[0] + d * heading.sin(), start[1] + d * heading.cos()], heading)
            }
            Path::Circle {
                center,
                radius,
                phase,
                angular,
            } => {
                let a = phase + angular * t;
                let pos = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                // velocity ∝ (−sin a, cos a)·sign(angular)
                let (vx, vz) = (-a.sin() * angular.signum(), a.cos() * angular.signum());
                (pos, vx.atan2(vz))
            }
            Path::Still { at, heading } => (at, heading),
        }
    }

    fn moving(&self) -> bool {
        !matches!(self, Path::Still { .. })
    }
}

struct Gait {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

fn render(path: &Path, gait: &Gait, frames: usize, fps: f64) -> Result<PoseSequence> {
    let mut data = Vec::with_capacity(frames * NUM_JOINTS * 3);
    for f in 0..frames {
        let t = f as f64 / fps;
        let ([rx, rz], heading) = path.at(t);
        let (s, c) = heading.sin_cos();
        let cycle = 2.0 * PI * gait.frequency * t + gait.phase;
        for (j, rest) in REST_OFFSETS.iter().enumerate() {
            let (weight, sign) = SWING[j];
            let swing = weight * sign * gait.amplitude * cycle.sin();
            let lift = if j == 0 {
                0.0
            } else {
                0.15 * weight * gait.amplitude * (1.0 + (cycle + sign * PI / 2.0).sin()) / 2.0
            };
            // local frame: x lateral, z forward
            let lx = rest[0];
            let lz = rest[2] + swing;
            data.push(rx + c * lx + s * lz);
            data.push(PELVIS_HEIGHT + rest[1] + lift);
            data.push(rz - s * lx + c * lz);
        }
    }
    PoseSequence::new(Tensor::new(vec![frames, NUM_JOINTS, 3], data)?, fps)
}

/// Deterministic scene for a given `(spec, seed)`.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<MultiPersonScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = spec.area_mm / 2.0;
    let duration = (spec.frames - 1) as f64 / spec.fps;
    let mut persons = Vec::with_capacity(spec.persons.len());
    let mut pending_pair: Option<([f64; 2], f64, f64)> = None;

    for person in &spec.persons {
        let speed = match person.speed_mm_per_s {
            Some(v) => v,
            None => draw(&mut rng, spec.speed_mm_per_s),
        };
        let path = match person.archetype {
            Archetype::StraightWalk => Path::Line {
                start: [rng.gen_range(-half..=half), rng.gen_range(-half..=half)],
                heading: rng.gen_range(-PI..PI),
                speed,
            },
            Archetype::CircularWalk => {
                let radius = draw(&mut rng, spec.circle_radius_mm);
                let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Path::Circle {
                    center: [rng.gen_range(-half..=half), rng.gen_range(-half..=half)],
                    radius,
                    phase: rng.gen_range(-PI..PI),
                    angular: dir * speed / radius,
                }
            }
            Archetype::StationaryIdle => Path::Still {
                at: [rng.gen_range(-half..=half), rng.gen_range(-half..=half)],
                heading: rng.gen_range(-PI..PI),
            },
            Archetype::ApproachPair => {
                let (center, axis, pair_speed) = match pending_pair.take() {
                    None => {
                        let center = [rng.gen_range(-half..=half), rng.gen_range(-half..=half)];
                        let axis = rng.gen_range(-PI..PI);
                        pending_pair = Some((center, axis, speed));
                        (center, axis, speed)
                    }
                    Some((center, axis, s)) => (center, axis + PI, s),
                };
                // Both reach the crossing point halfway through the clip,
                // each offset to its own right by half the gap.
                let reach = pair_speed * duration / 2.0;
                let (s, c) = axis.sin_cos();
                let lateral = spec.pass_gap_mm / 2.0;
                Path::Line {
                    start: [
                        center[0] - reach * s + lateral * c,
                        center[1] - reach * c - lateral * s,
                    ],
                    heading: axis,
                    speed: pair_speed,
                }
            }
        };
        let amplitude_scale = if path.moving() { 1.0 } else { 0.25 };
        let gait = Gait {
            amplitude: amplitude_scale * draw(&mut rng, spec.gait_amplitude_mm),
            frequency: draw(&mut rng, spec.gait_frequency_hz),
            phase: rng.gen_range(0.0..2.0 * PI),
        };
        persons.push(render(&path, &gait, spec.frames, spec.fps)?);
    }
    MultiPersonScene::new(persons)
}
