//! Pose and displacement sequences, window division and scene containers.

mod io;
pub mod skeleton;
mod synthetic;

pub use io::{load_scene, save_scene, save_scene_binary, save_scene_json, scene_from_json, scene_to_json};
pub use synthetic::{generate_synthetic_scene, Archetype, PersonSpec, SceneSpec};

use crate::error::{Result, SomoError};
use crate::numerics::Tensor;

/// Index of the central-hip joint in every skeleton.
pub const ROOT_JOINT: usize = 0;

/// Absolute joint positions of one person, `N×J×3` in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Tensor,
    fps: f64,
}

impl PoseSequence {
    pub fn new(frames: Tensor, fps: f64) -> Result<Self> {
        match frames.shape() {
            [n, j, 3] if *n >= 2 && *j >= 1 => {}
            s => {
                return Err(SomoError::Input(format!(
                    "pose sequence must be N×J×3 with N ≥ 2, got {s:?}"
                )))
            }
        }
        if !frames.is_finite() {
            return Err(SomoError::Input("non-finite joint coordinate".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(SomoError::Input(format!("invalid fps {fps}")));
        }
        Ok(PoseSequence { frames, fps })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_joints(&self) -> usize {
        self.frames.shape()[1]
    }

    /// Flattened `J·3` coordinates of frame `i`.
    pub fn frame(&self, i: usize) -> &[f64] {
        self.frames.row(i)
    }

    pub fn root(&self, i: usize) -> [f64; 3] {
        let f = self.frame(i);
        let o = ROOT_JOINT * 3;
        [f[o], f[o + 1], f[o + 2]]
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.num_frames() {
            return Err(SomoError::Input(format!(
                "frame range {start}..{end} outside 0..{}",
                self.num_frames()
            )));
        }
        let w = self.frames.cols();
        let data = self.frames.data()[start * w..end * w].to_vec();
        PoseSequence::new(
            Tensor::new(vec![end - start, self.num_joints(), 3], data)?,
            self.fps,
        )
    }
}

/// Frame-to-frame deltas plus the last absolute pose.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSequence {
    pub deltas: Tensor,
    pub anchor: Tensor,
}

impl DisplacementSequence {
    pub fn len(&self) -> usize {
        self.deltas.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_joints(&self) -> usize {
        self.deltas.shape()[1]
    }
}

/// `deltas[i] = frames[i+1] − frames[i]`, anchored at the final frame.
pub fn to_displacements(x: &PoseSequence) -> Result<DisplacementSequence> {
    let n = x.num_frames();
    let j = x.num_joints();
    if n < 2 {
        return Err(SomoError::Input("need at least two frames".into()));
    }
    let w = j * 3;
    let f = x.frames.data();
    let mut deltas = Vec::with_capacity((n - 1) * w);
    for i in 0..n - 1 {
        deltas.extend((0..w).map(|k| f[(i + 1) * w + k] - f[i * w + k]));
    }
    Ok(DisplacementSequence {
        deltas: Tensor::new(vec![n - 1, j, 3], deltas)?,
        anchor: Tensor::new(vec![j, 3], f[(n - 1) * w..].to_vec())?,
    })
}

/// `out[t] = anchor + Σ_{k ≤ t} deltas[k]`.
pub fn from_displacements(anchor: &Tensor, deltas: &Tensor) -> Result<Tensor> {
    let w = anchor.len();
    let ok = match (anchor.shape(), deltas.shape()) {
        ([j, 3], [_, j2, 3]) => j == j2,
        _ => false,
    };
    if !ok {
        return Err(SomoError::dim("from_displacements", anchor.shape(), deltas.shape()));
    }
    let t = deltas.shape()[0];
    let mut out = Vec::with_capacity(t * w);
    let mut current = anchor.data().to_vec();
    for i in 0..t {
        for (c, d) in current.iter_mut().zip(deltas.row(i)) {
            *c += d;
        }
        out.extend_from_slice(&current);
    }
    Tensor::new(deltas.shape().to_vec(), out)
}

/// Start offsets of the length-`m` windows over `num_deltas` displacement
/// frames at the given stride. The last window (the query) always ends at
/// the final displacement even when the stride would skip it.
pub fn window_starts(num_deltas: usize, m: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(SomoError::Config("window stride must be at least 1".into()));
    }
    if m == 0 || m > num_deltas {
        return Err(SomoError::Input(format!(
            "window length {m} does not fit {num_deltas} displacement frames"
        )));
    }
    let last = num_deltas - m;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    if starts.len() < 2 {
        return Err(SomoError::Input(format!(
            "window length {m} over {num_deltas} displacement frames leaves only the query window"
        )));
    }
    Ok(starts)
}

/// Overlapping windows of a displacement sequence. The last window is the
/// query motion; the ones before it are encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSequenceSet {
    /// `W×M×D` with `D = 3J`.
    pub windows: Tensor,
    pub starts: Vec<usize>,
    pub stride: usize,
    pub window_len: usize,
}

impl SubSequenceSet {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    /// Number of encoded windows, `S = W − 1`.
    pub fn num_encoded(&self) -> usize {
        self.count() - 1
    }

    /// Window `i` as an `M×D` matrix.
    pub fn window(&self, i: usize) -> Tensor {
        let m = self.window_len;
        let d = self.windows.shape()[2];
        let w = m * d;
        Tensor::new(vec![m, d], self.windows.data()[i * w..(i + 1) * w].to_vec())
            .expect("window shape")
    }

    pub fn query(&self) -> Tensor {
        self.window(self.count() - 1)
    }
}

pub fn divide_subsequences(y: &DisplacementSequence, m: usize, stride: usize) -> Result<SubSequenceSet> {
    let starts = window_starts(y.len(), m, stride)?;
    let d = y.num_joints() * 3;
    let mut data = Vec::with_capacity(starts.len() * m * d);
    for &s in &starts {
        data.extend_from_slice(&y.deltas.data()[s * d..(s + m) * d]);
    }
    Ok(SubSequenceSet {
        windows: Tensor::new(vec![starts.len(), m, d], data)?,
        starts,
        stride,
        window_len: m,
    })
}

/// `B×P×S×F → B×(P·S)×F`, person-major then time.
pub fn flatten_scene(features: &Tensor) -> Result<Tensor> {
    match features.shape() {
        &[b, p, s, f] => features.clone().reshape(&[b, p * s, f]),
        s => Err(SomoError::dim("flatten_scene", s, &[0, 0, 0, 0])),
    }
}

/// Inverse of [`flatten_scene`].
pub fn unflatten_scene(flat: &Tensor, persons: usize) -> Result<Tensor> {
    match flat.shape() {
        &[b, l, f] if persons > 0 && l % persons == 0 => {
            flat.clone().reshape(&[b, persons, l / persons, f])
        }
        s => Err(SomoError::dim("unflatten_scene", s, &[0, persons, 0])),
    }
}

/// Several people observed over the same frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPersonScene {
    persons: Vec<PoseSequence>,
    ids: Vec<String>,
}

impl MultiPersonScene {
    pub fn new(persons: Vec<PoseSequence>) -> Result<Self> {
        let ids = (1..=persons.len()).map(|i| format!("p{i}")).collect();
        Self::with_ids(persons, ids)
    }

    pub fn with_ids(persons: Vec<PoseSequence>, ids: Vec<String>) -> Result<Self> {
        let first = persons
            .first()
            .ok_or_else(|| SomoError::Validation("scene has no persons".into()))?;
        if ids.len() != persons.len() {
            return Err(SomoError::Validation("one id per person required".into()));
        }
        for (i, p) in persons.iter().enumerate() {
            if p.num_frames() != first.num_frames() {
                return Err(SomoError::Validation(format!(
                    "person {i} has {} frames, person 0 has {}",
                    p.num_frames(),
                    first.num_frames()
                )));
            }
            if p.num_joints() != first.num_joints() {
                return Err(SomoError::Validation(format!(
                    "person {i} has {} joints, person 0 has {}",
                    p.num_joints(),
                    first.num_joints()
                )));
            }
            if p.fps() != first.fps() {
                return Err(SomoError::Validation(format!(
                    "person {i} has fps {}, person 0 has {}",
                    p.fps(),
                    first.fps()
                )));
            }
        }
        Ok(MultiPersonScene { persons, ids })
    }

    pub fn persons(&self) -> &[PoseSequence] {
        &self.persons
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn num_frames(&self) -> usize {
        self.persons[0].num_frames()
    }

    pub fn num_joints(&self) -> usize {
        self.persons[0].num_joints()
    }

    pub fn fps(&self) -> f64 {
        self.persons[0].fps()
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        let persons = self
            .persons
            .iter()
            .map(|p| p.slice(start, end))
            .collect::<Result<_>>()?;
        Self::with_ids(persons, self.ids.clone())
    }

    /// All poses as one `P×N×J×3` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (p, n, j) = (self.num_persons(), self.num_frames(), self.num_joints());
        let data = self
            .persons
            .iter()
            .flat_map(|s| s.frames().data().iter().copied())
            .collect();
        Tensor::new(vec![p, n, j, 3], data).expect("scene shape")
    }

    /// Builds a scene from a `P×N×J×3` tensor.
    pub fn from_tensor(poses: &Tensor, fps: f64, ids: Vec<String>) -> Result<Self> {
        let &[p, n, j, 3] = poses.shape() else {
            return Err(SomoError::dim("scene", poses.shape(), &[0, 0, 0, 3]));
        };
        let w = n * j * 3;
        let persons = (0..p)
            .map(|i| {
                let t = Tensor::new(vec![n, j, 3], poses.data()[i * w..(i + 1) * w].to_vec())?;
                PoseSequence::new(t, fps)
            })
            .collect::<Result<_>>()?;
        Self::with_ids(persons, ids)
    }

    /// Every joint of every frame shifted by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        let persons = self
            .persons
            .iter()
            .map(|p| {
                let mut frames = p.frames().clone();
                for (i, v) in frames.data_mut().iter_mut().enumerate() {
                    *v += offset[i % 3];
                }
                PoseSequence { frames, fps: p.fps }
            })
            .collect();
        MultiPersonScene {
            persons,
            ids: self.ids.clone(),
        }
    }

    /// Reorders persons so that new person `i` is old person `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.num_persons()];
        for &o in order {
            if o >= seen.len() || std::mem::replace(&mut seen[o], true) {
                return Err(SomoError::Input(format!("{order:?} is not a permutation")));
            }
        }
        if order.len() != seen.len() {
            return Err(SomoError::Input(format!("{order:?} is not a permutation")));
        }
        Ok(MultiPersonScene {
            persons: order.iter().map(|&o| self.persons[o].clone()).collect(),
            ids: order.iter().map(|&o| self.ids[o].clone()).collect(),
        })
    }
}

/// Per-person root positions downsampled to one point per encoded window,
/// `P×S×3` in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSequence {
    pub roots: Tensor,
}

impl RootSequence {
    /// Cuts each person's root track into the windows used for the
    /// displacements and averages the `M` positions each window reaches
    /// (frames `start+1 ..= start+M`).
    pub fn from_tracks(tracks: &[Vec<[f64; 3]>], starts: &[usize], m: usize) -> Result<Self> {
        let p = tracks.len();
        let s = starts.len();
        if p == 0 || s == 0 {
            return Err(SomoError::Input("empty root tracks".into()));
        }
        let mut data = Vec::with_capacity(p * s * 3);
        for track in tracks {
            for &start in starts {
                if start + m >= track.len() {
                    return Err(SomoError::Input(format!(
                        "window at {start} of length {m} exceeds root track of {} frames",
                        track.len()
                    )));
                }
                let mut mean = [0.0; 3];
                for r in &track[start + 1..=start + m] {
                    for k in 0..3 {
                        mean[k] += r[k];
                    }
                }
                data.extend(mean.iter().map(|v| v / m as f64));
            }
        }
        Ok(RootSequence {
            roots: Tensor::new(vec![p, s, 3], data)?,
        })
    }

    pub fn num_persons(&self) -> usize {
        self.roots.shape()[0]
    }

    pub fn num_windows(&self) -> usize {
        self.roots.shape()[1]
    }

    /// Person-major `L×3` view.
    pub fn flattened(&self) -> Tensor {
        let l = self.num_persons() * self.num_windows();
        self.roots.clone().reshape(&[l, 3]).expect("root shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_motion(n: usize, j: usize, step: [f64; 3]) -> PoseSequence {
        let mut t = Tensor::zeros(&[n, j, 3]);
        for i in 0..n {
            for k in 0..j {
                for (c, s) in step.iter().enumerate() {
                    t.set(&[i, k, c], k as f64 * 10.0 + c as f64 + s * i as f64);
                }
            }
        }
        PoseSequence::new(t, 25.0).unwrap()
    }

    #[test]
    fn static_pose_has_zero_deltas() {
        let y = to_displacements(&linear_motion(5, 4, [0.0; 3])).unwrap();
        assert_eq!(y.len(), 4);
        assert!(y.deltas.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_linear_motion_gives_constant_delta() {
        let y = to_displacements(&linear_motion(6, 3, [1.0, 0.0, 0.0])).unwrap();
        for i in 0..5 {
            for k in 0..3 {
                assert_eq!(&y.deltas.row(i)[k * 3..k * 3 + 3], &[1.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn displacements_round_trip() {
        let x = linear_motion(7, 2, [3.5, -1.25, 0.5]);
        let y = to_displacements(&x).unwrap();
        let first = Tensor::new(vec![2, 3], x.frame(0).to_vec()).unwrap();
        let rebuilt = from_displacements(&first, &y.deltas).unwrap();
        let tail = x.slice(1, 7).unwrap();
        assert!(rebuilt.max_abs_diff(tail.frames()) < 1e-9);
        assert_eq!(y.anchor.data(), x.frame(6));
    }

    #[test]
    fn from_displacements_simple_cases() {
        let anchor = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let zeros = Tensor::zeros(&[3, 1, 3]);
        let out = from_displacements(&anchor, &zeros).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), anchor.data());
        }
        let d = Tensor::new(vec![1, 1, 3], vec![0.5, 0.5, -1.0]).unwrap();
        assert_eq!(from_displacements(&anchor, &d).unwrap().data(), &[1.5, 2.5, 2.0]);
        assert!(from_displacements(&anchor, &Tensor::zeros(&[2, 2, 3])).is_err());
    }

    #[test]
    fn single_frame_is_rejected() {
        assert!(PoseSequence::new(Tensor::zeros(&[1, 15, 3]), 25.0).is_err());
    }

    #[test]
    fn window_counts() {
        // 50 frames → 49 deltas → 40 windows of 10
        let y = to_displacements(&linear_motion(50, 2, [1.0; 3])).unwrap();
        let set = divide_subsequences(&y, 10, 1).unwrap();
        assert_eq!(set.count(), 40);
        assert_eq!(set.num_encoded(), 39);
        assert_eq!(set.starts, (0..40).collect::<Vec<_>>());

        let y = to_displacements(&linear_motion(12, 2, [1.0; 3])).unwrap();
        assert_eq!(divide_subsequences(&y, 10, 1).unwrap().count(), 2);
        // M = N − 1 leaves only the query
        assert!(divide_subsequences(&y, 11, 1).is_err());
        assert!(divide_subsequences(&y, 12, 1).is_err());
    }

    #[test]
    fn strided_windows_keep_the_query() {
        let starts = window_starts(49, 10, 7).unwrap();
        assert_eq!(starts, vec![0, 7, 14, 21, 28, 35, 39]);
        assert_eq!(window_starts(49, 10, 3).unwrap().last(), Some(&39));
        assert!(window_starts(49, 10, 0).is_err());
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let x = linear_motion(20, 2, [0.0; 3]);
        let mut frames = x.frames().clone();
        for (i, v) in frames.data_mut().iter_mut().enumerate() {
            *v = (i * i) as f64;
        }
        let y = to_displacements(&PoseSequence::new(frames, 25.0).unwrap()).unwrap();
        let set = divide_subsequences(&y, 4, 1).unwrap();
        for (w, &s) in set.starts.iter().enumerate() {
            assert_eq!(set.window(w).data(), &y.deltas.data()[s * 6..(s + 4) * 6]);
        }
        assert_eq!(set.query(), set.window(set.count() - 1));
    }

    #[test]
    fn flatten_is_person_major() {
        // P=2, S=2, F=1: values encode (person, time)
        let x = Tensor::new(vec![1, 2, 2, 1], vec![11.0, 12.0, 21.0, 22.0]).unwrap();
        let flat = flatten_scene(&x).unwrap();
        assert_eq!(flat.shape(), &[1, 4, 1]);
        assert_eq!(flat.data(), &[11.0, 12.0, 21.0, 22.0]);
        assert_eq!(unflatten_scene(&flat, 2).unwrap(), x);
    }

    #[test]
    fn scene_validation() {
        let a = linear_motion(5, 3, [1.0; 3]);
        let b = linear_motion(6, 3, [1.0; 3]);
        assert!(matches!(
            MultiPersonScene::new(vec![a.clone(), b]),
            Err(SomoError::Validation(_))
        ));
        assert!(matches!(MultiPersonScene::new(vec![]), Err(SomoError::Validation(_))));
        assert!(MultiPersonScene::new(vec![a.clone(), a]).is_ok());
    }

    #[test]
    fn translation_leaves_displacements_unchanged() {
        let a = linear_motion(8, 3, [2.0, 0.5, -1.0]);
        let scene = MultiPersonScene::new(vec![a]).unwrap();
        let moved = scene.translated([1234.5, -77.0, 3.25]);
        let y0 = to_displacements(&scene.persons()[0]).unwrap();
        let y1 = to_displacements(&moved.persons()[0]).unwrap();
        // exact for values representable without rounding
        assert_eq!(y0.deltas, y1.deltas);
    }

    #[test]
    fn root_windows_average_reached_positions() {
        let track: Vec<[f64; 3]> = (0..6).map(|i| [i as f64, 0.0, 0.0]).collect();
        let r = RootSequence::from_tracks(&[track], &[0, 2], 2).unwrap();
        // frames 1,2 → 1.5 ; frames 3,4 → 3.5
        assert_eq!(r.roots.data(), &[1.5, 0.0, 0.0, 3.5, 0.0, 0.0]);
    }
}
