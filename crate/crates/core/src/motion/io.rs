//! Scene files.
//!
//! JSON: `{"fps": 25, "persons": [{"id": "p1", "frames": [[[x,y,z], ...], ...]}]}`
//! with coordinates in millimeters, written with shortest round-trip
//! float formatting so reloading is exact.
//!
//! Binary: magic `SOMO1`, then little-endian `u32` P, N, J, `f64` fps and
//! `P·N·J·3` `f64` coordinates, person-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MultiPersonScene, PoseSequence};
use crate::error::{Result, SomoError};
use crate::numerics::Tensor;

pub const BINARY_MAGIC: &[u8; 5] = b"SOMO1";

#[derive(Serialize, Deserialize)]
struct SceneFile {
    fps: f64,
    persons: Vec<PersonFile>,
}

#[derive(Serialize, Deserialize)]
struct PersonFile {
    id: String,
    frames: Vec<Vec<[f64; 3]>>,
}

pub fn scene_to_json(scene: &MultiPersonScene) -> String {
    let persons = scene
        .persons()
        .iter()
        .zip(scene.ids())
        .map(|(p, id)| PersonFile {
            id: id.clone(),
            frames: (0..p.num_frames())
                .map(|i| p.frame(i).chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
                .collect(),
        })
        .collect();
    let file = SceneFile {
        fps: scene.fps(),
        persons,
    };
    serde_json::to_string(&file).expect("scene serializes")
}

pub fn scene_from_json(text: &str, origin: &str) -> Result<MultiPersonScene> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| SomoError::Parse {
        path: origin.to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    if file.persons.is_empty() {
        return Err(SomoError::Validation(format!("{origin}: scene has no persons")));
    }
    let mut persons = Vec::with_capacity(file.persons.len());
    let mut ids = Vec::with_capacity(file.persons.len());
    for (pi, person) in file.persons.into_iter().enumerate() {
        let n = person.frames.len();
        let j = person.frames.first().map_or(0, Vec::len);
        if n < 2 || j == 0 {
            return Err(SomoError::Validation(format!(
                "{origin}: person {} ({}) needs at least 2 frames of at least 1 joint, has {n} frames",
                pi, person.id
            )));
        }
        if let Some(fi) = person.frames.iter().position(|f| f.len() != j) {
            return Err(SomoError::Validation(format!(
                "{origin}: person {} frame {fi} has {} joints, expected {j}",
                person.id,
                person.frames[fi].len()
            )));
        }
        let data: Vec<f64> = person.frames.iter().flatten().flatten().copied().collect();
        let seq = PoseSequence::new(Tensor::new(vec![n, j, 3], data)?, file.fps)
            .map_err(|e| SomoError::Validation(format!("{origin}: person {}: {e}", person.id)))?;
        persons.push(seq);
        ids.push(person.id);
    }
    MultiPersonScene::with_ids(persons, ids)
        .map_err(|e| SomoError::Validation(format!("{origin}: {e}")))
}

fn encode_binary(scene: &MultiPersonScene) -> Vec<u8> {
    let t = scene.to_tensor();
    let mut out = Vec::with_capacity(5 + 12 + 8 + t.len() * 8);
    out.extend_from_slice(BINARY_MAGIC);
    for v in [scene.num_persons(), scene.num_frames(), scene.num_joints()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&scene.fps().to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_binary(bytes: &[u8], origin: &str) -> Result<MultiPersonScene> {
    let parse_err = |offset: usize, message: String| SomoError::Parse {
        path: origin.to_string(),
        message: format!("offset {offset}: {message}"),
    };
    let header = 5 + 12 + 8;
    if bytes.len() < header || &bytes[..5] != BINARY_MAGIC {
        return Err(parse_err(0, "missing SOMO1 header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (p, n, j) = (u32_at(5), u32_at(9), u32_at(13));
    let fps = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
    let count = p
        .checked_mul(n)
        .and_then(|v| v.checked_mul(j))
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| parse_err(5, "header sizes overflow".into()))?;
    let expected = header + count * 8;
    if bytes.len() != expected {
        return Err(parse_err(
            bytes.len().min(expected),
            format!("expected {expected} bytes for P={p} N={n} J={j}, found {}", bytes.len()),
        ));
    }
    if p == 0 {
        return Err(SomoError::Validation(format!("{origin}: scene has no persons")));
    }
    let data: Vec<f64> = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let poses = Tensor::new(vec![p, n, j, 3], data)
        .map_err(|e| SomoError::Validation(format!("{origin}: {e}")))?;
    let ids = (1..=p).map(|i| format!("p{i}")).collect();
    MultiPersonScene::from_tensor(&poses, fps, ids)
        .map_err(|e| SomoError::Validation(format!("{origin}: {e}")))
}

/// Reads either format, detected from the leading bytes.
pub fn load_scene(path: impl AsRef<Path>) -> Result<MultiPersonScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SomoError::io(path, e))?;
    let origin = path.display().to_string();
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(&bytes, &origin)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| SomoError::Parse {
            path: origin.clone(),
            message: format!("offset {}: not UTF-8", e.utf8_error().valid_up_to()),
        })?;
        scene_from_json(&text, &origin)
    }
}

pub fn save_scene_json(scene: &MultiPersonScene, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), scene_to_json(scene).as_bytes())
}

pub fn save_scene_binary(scene: &MultiPersonScene, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_binary(scene))
}

/// Binary for `.somo`/`.bin` extensions, JSON otherwise.
pub fn save_scene(scene: &MultiPersonScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("somo" | "bin") => save_scene_binary(scene, path),
        _ => save_scene_json(scene, path),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| SomoError::io(path, e))?;
    f.write_all(bytes).map_err(|e| SomoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{generate_synthetic_scene, SceneSpec};

    fn scene() -> MultiPersonScene {
        let spec = SceneSpec {
            frames: 12,
            ..SceneSpec::default()
        };
        generate_synthetic_scene(&spec, 4).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = scene();
        save_scene(&s, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), s);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.somo");
        let s = scene();
        save_scene(&s, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(BINARY_MAGIC));
        assert_eq!(load_scene(&path).unwrap(), s);
    }

    #[test]
    fn differing_frame_counts_rejected() {
        let text = r#"{"fps":25,"persons":[
            {"id":"a","frames":[[[0,0,0]],[[1,0,0]]]},
            {"id":"b","frames":[[[0,0,0]],[[1,0,0]],[[2,0,0]]]}]}"#;
        assert!(matches!(scene_from_json(text, "t"), Err(SomoError::Validation(_))));
    }

    #[test]
    fn empty_persons_rejected() {
        let text = r#"{"fps":25,"persons":[]}"#;
        assert!(matches!(scene_from_json(text, "t"), Err(SomoError::Validation(_))));
    }

    #[test]
    fn ragged_joints_rejected() {
        let text = r#"{"fps":25,"persons":[{"id":"a","frames":[[[0,0,0],[1,1,1]],[[1,0,0]]]}]}"#;
        assert!(matches!(scene_from_json(text, "t"), Err(SomoError::Validation(_))));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\"fps\": 25,\n \"persons\": [ oops ]}";
        match scene_from_json(text, "bad.json") {
            Err(SomoError::Parse { path, message }) => {
                assert_eq!(path, "bad.json");
                assert!(message.contains("line 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut bytes = encode_binary(&scene());
        bytes.truncate(bytes.len() - 3);
        match decode_binary(&bytes, "x.somo") {
            Err(SomoError::Parse { message, .. }) => assert!(message.contains("offset"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
