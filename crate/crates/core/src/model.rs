//! The full predictor: displacement windows → DSE → SIE → decoder, rolled
//! out recursively until the requested horizon is covered.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::dse::Dse;
use crate::error::{Result, SomoError};
use crate::layers::ForwardCtx;
use crate::motion::{from_displacements, MultiPersonScene, RootSequence, ROOT_JOINT};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::predictor::{attention_csv, Predictor};
use crate::sie::{flattened_timestamps, spatial_encode, Sie};
use crate::spectral::{lowpass_dct_matrix, lowpass_idct_matrix};

/// Longest horizon a single rollout may cover.
pub const MAX_HORIZON: usize = 30;

#[derive(Debug, Clone)]
pub struct MotionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub dse: Dse,
    pub sie: Sie,
    pub predictor: Predictor,
    starts: Vec<usize>,
}

/// Observed history of one scene as the network sees it.
#[derive(Debug, Clone)]
pub struct History {
    /// Per person, `(N−1)×D` displacements in millimeters.
    pub deltas: Vec<Tensor>,
    /// Per person, the `N` observed root positions.
    pub roots: Vec<Vec<[f64; 3]>>,
    /// `P×J×3` last observed pose, the anchor of the predicted stream.
    pub anchor: Vec<Tensor>,
}

impl History {
    /// Uses the last `frames` frames of the scene.
    pub fn from_scene(scene: &MultiPersonScene, frames: usize) -> Result<Self> {
        let n = scene.num_frames();
        if n < frames {
            return Err(SomoError::Input(format!(
                "scene has {n} frames, the model observes {frames}"
            )));
        }
        let observed = scene.slice_frames(n - frames, n)?;
        let j = scene.num_joints();
        let d = 3 * j;
        let mut history = History {
            deltas: Vec::new(),
            roots: Vec::new(),
            anchor: Vec::new(),
        };
        for person in observed.persons() {
            let f = person.frames().data();
            let deltas = (0..frames - 1)
                .flat_map(|i| (0..d).map(move |k| f[(i + 1) * d + k] - f[i * d + k]))
                .collect();
            history.deltas.push(Tensor::new(vec![frames - 1, d], deltas)?);
            history.roots.push((0..frames).map(|i| person.root(i)).collect());
            history.anchor.push(Tensor::new(vec![j, 3], f[(frames - 1) * d..].to_vec())?);
        }
        Ok(history)
    }

    pub fn num_persons(&self) -> usize {
        self.deltas.len()
    }
}

/// Result of a rollout recorded on a tape.
pub struct Rollout {
    /// Per person, `T×D` predicted displacements in millimeters.
    pub deltas: Vec<Var>,
    /// Cross-attention of the first decoder layer in the first pass, `P×L`.
    pub attention: Var,
    pub passes: usize,
}

/// Plain-value prediction.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// `P×T×J×3` absolute poses.
    pub poses: Tensor,
    /// `P×T×J×3` displacements.
    pub deltas: Tensor,
    /// `P×L` first-layer cross-attention of the first pass.
    pub attention: Tensor,
}

impl MotionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let starts = config.window_starts()?;
        let encoded = starts.len() - 1;
        let dse = Dse::new(&mut params, &config, encoded, &mut rng);
        let sie = Sie::new(&mut params, &config, &mut rng);
        let predictor = Predictor::new(&mut params, &config, &mut rng);
        Ok(MotionModel {
            config,
            params,
            dse,
            sie,
            predictor,
            starts,
        })
    }

    /// Rebuilds the architecture for `config` and installs the given values.
    pub fn from_parts(config: ModelConfig, values: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = MotionModel::new(config, 0)?;
        model.params.load_values(values)?;
        Ok(model)
    }

    /// Start offsets of all windows (encoded ones followed by the query).
    pub fn window_starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn encoded_windows(&self) -> usize {
        self.starts.len() - 1
    }

    fn check_history(&self, history: &History) -> Result<()> {
        let n = self.config.observed_frames;
        let d = self.config.input_dim();
        if history.num_persons() == 0 {
            return Err(SomoError::Input("scene has no persons".into()));
        }
        for (deltas, roots) in history.deltas.iter().zip(&history.roots) {
            if deltas.shape() != [n - 1, d] || roots.len() != n {
                return Err(SomoError::dim("history", deltas.shape(), &[n - 1, d]));
            }
        }
        Ok(())
    }

    /// Encodes the history windows into the SIE memory (`L×F`) and
    /// returns it with the per-person query windows.
    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        deltas: &[Var],
        roots: &[Vec<[f64; 3]>],
        dct: Option<Var>,
        ctx: &mut ForwardCtx,
    ) -> Result<(Var, Vec<Var>)> {
        let c = &self.config;
        let m = c.window;
        let s = self.encoded_windows();
        let persons = deltas.len();
        let mut rows = Vec::with_capacity(persons * s);
        let mut query_windows = Vec::with_capacity(persons);
        for &y in deltas {
            for (k, &start) in self.starts.iter().enumerate() {
                let mut w = tape.slice_rows(y, start, m)?;
                if let Some(dct) = dct {
                    w = tape.matmul(dct, w)?;
                }
                if k < s {
                    rows.push(self.dse.encode_window(tape, k, w)?);
                } else {
                    query_windows.push(w);
                }
            }
        }
        let features = tape.concat_rows(&rows)?;
        let root_seq = RootSequence::from_tracks(roots, &self.starts[..s], m)?;
        let relation = spatial_encode(&root_seq, c.alpha, c.beta, c.gamma)?;
        let timestamps = flattened_timestamps(persons, s);
        let memory = self.sie.forward(tape, features, &timestamps, &relation, ctx)?;
        Ok((memory, query_windows))
    }

    /// One encode/decode pass. `deltas` are `(N−1)×D` in model units per
    /// person; returns the next `M×D` window per person in model units and
    /// the first decoder layer's cross-attention.
    pub fn pass(
        &self,
        tape: &mut Tape,
        deltas: &[Var],
        roots: &[Vec<[f64; 3]>],
        ctx: &mut ForwardCtx,
    ) -> Result<(Vec<Var>, Var)> {
        let c = &self.config;
        let m = c.window;
        let dct = c.use_dct.then(|| tape.constant(lowpass_dct_matrix(m, c.dct_keep)));
        let (memory, query_windows) = self.encode_on_tape(tape, deltas, roots, dct, ctx)?;
        let queries = self.predictor.build_queries(tape, &query_windows)?;
        let decoded = self.predictor.decode(tape, queries, memory, ctx)?;
        let mut out = decoded.coefficients;
        if c.use_dct {
            let idct = tape.constant(lowpass_idct_matrix(m, c.dct_keep));
            for w in &mut out {
                *w = tape.matmul(idct, *w)?;
            }
        }
        Ok((out, decoded.first_cross_attention))
    }

    /// Records a `horizon`-frame rollout on `tape`. The observation window
    /// slides forward by `M` frames after each pass, keeping the window
    /// count fixed.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        history: &History,
        horizon: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<Rollout> {
        if horizon == 0 || horizon > MAX_HORIZON {
            return Err(SomoError::Input(format!(
                "horizon {horizon} outside 1..={MAX_HORIZON}"
            )));
        }
        self.check_history(history)?;
        let c = &self.config;
        let m = c.window;
        let scale = c.displacement_scale_mm;
        let n_deltas = c.observed_frames - 1;
        let mut deltas: Vec<Var> = history
            .deltas
            .iter()
            .map(|d| tape.constant(d.map(|v| v / scale)))
            .collect();
        let mut roots = history.roots.clone();
        let mut predicted: Vec<Vec<Var>> = vec![Vec::new(); deltas.len()];
        let mut attention = None;
        let mut passes = 0;
        let mut produced = 0;
        while produced < horizon {
            let (next, attn) = self.pass(tape, &deltas, &roots, ctx)?;
            attention.get_or_insert(attn);
            passes += 1;
            produced += m;
            for p in 0..deltas.len() {
                predicted[p].push(next[p]);
                if produced < horizon {
                    let kept = if m < n_deltas {
                        vec![tape.slice_rows(deltas[p], m, n_deltas - m)?, next[p]]
                    } else {
                        vec![next[p]]
                    };
                    let all = tape.concat_rows(&kept)?;
                    deltas[p] = tape.slice_rows(all, tape.shape(all)[0] - n_deltas, n_deltas)?;
                    advance_roots(&mut roots[p], tape.value(next[p]), scale, c.observed_frames);
                }
            }
        }
        let mut out = Vec::with_capacity(predicted.len());
        for windows in predicted {
            let all = if windows.len() == 1 { windows[0] } else { tape.concat_rows(&windows)? };
            let cut = tape.slice_rows(all, 0, horizon)?;
            out.push(tape.scale(cut, scale));
        }
        Ok(Rollout {
            deltas: out,
            attention: attention.expect("at least one pass"),
            passes,
        })
    }

    /// Predicts `horizon` frames after the last observed frame.
    pub fn predict(&self, scene: &MultiPersonScene, horizon: usize) -> Result<Prediction> {
        let history = History::from_scene(scene, self.config.observed_frames)?;
        self.predict_history(&history, horizon)
    }

    pub fn predict_history(&self, history: &History, horizon: usize) -> Result<Prediction> {
        let mut tape = Tape::with_params(&self.params);
        let mut ctx = ForwardCtx::eval();
        let rollout = self.rollout(&mut tape, history, horizon, &mut ctx)?;
        let j = self.config.joints;
        let persons = history.num_persons();
        let mut poses = Vec::with_capacity(persons * horizon * j * 3);
        let mut deltas = Vec::with_capacity(poses.capacity());
        for (p, &v) in rollout.deltas.iter().enumerate() {
            let d = tape.value(v).clone().reshape(&[horizon, j, 3])?;
            poses.extend_from_slice(from_displacements(&history.anchor[p], &d)?.data());
            deltas.extend_from_slice(d.data());
        }
        let shape = vec![persons, horizon, j, 3];
        Ok(Prediction {
            poses: Tensor::new(shape.clone(), poses)?,
            deltas: Tensor::new(shape, deltas)?,
            attention: tape.value(rollout.attention).clone(),
        })
    }

    /// First decoder layer's cross-attention for `scene` as CSV.
    pub fn export_attention(&self, scene: &MultiPersonScene) -> Result<String> {
        let pred = self.predict(scene, 1)?;
        attention_csv(&pred.attention, scene.ids(), self.encoded_windows())
    }

    /// SIE memory (`L×F`) for the observed part of `scene`.
    pub fn encode(&self, scene: &MultiPersonScene) -> Result<Tensor> {
        let history = History::from_scene(scene, self.config.observed_frames)?;
        self.check_history(&history)?;
        let c = &self.config;
        let mut tape = Tape::with_params(&self.params);
        let deltas: Vec<Var> = history
            .deltas
            .iter()
            .map(|d| tape.constant(d.map(|v| v / c.displacement_scale_mm)))
            .collect();
        let dct = c.use_dct.then(|| tape.constant(lowpass_dct_matrix(c.window, c.dct_keep)));
        let (memory, _) =
            self.encode_on_tape(&mut tape, &deltas, &history.roots, dct, &mut ForwardCtx::eval())?;
        Ok(tape.value(memory).clone())
    }
}

/// Slides a root track forward by the predicted window, keeping `len`
/// positions.
fn advance_roots(track: &mut Vec<[f64; 3]>, window: &Tensor, scale: f64, len: usize) {
    let mut last = *track.last().expect("non-empty root track");
    for row in 0..window.rows() {
        let r = &window.row(row)[ROOT_JOINT * 3..ROOT_JOINT * 3 + 3];
        for k in 0..3 {
            last[k] += r[k] * scale;
        }
        track.push(last);
    }
    let excess = track.len() - len;
    track.drain(..excess);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{generate_synthetic_scene, SceneSpec};

    fn small() -> ModelConfig {
        ModelConfig {
            observed_frames: 20,
            window: 5,
            dct_keep: 5,
            ..ModelConfig::gradcheck()
        }
    }

    fn scene(frames: usize, seed: u64) -> MultiPersonScene {
        let spec = SceneSpec {
            frames,
            ..SceneSpec::default()
        };
        generate_synthetic_scene(&spec, seed).unwrap()
    }

    #[test]
    fn rollout_passes_cover_horizon() {
        let model = MotionModel::new(small(), 1).unwrap();
        let history = History::from_scene(&scene(20, 2), 20).unwrap();
        for (horizon, passes) in [(1, 1), (5, 1), (6, 2), (12, 3), (30, 6)] {
            let mut tape = Tape::with_params(&model.params);
            let r = model.rollout(&mut tape, &history, horizon, &mut ForwardCtx::eval()).unwrap();
            assert_eq!(r.passes, passes);
            assert_eq!(tape.shape(r.deltas[0]), &[horizon, 45]);
        }
    }

    #[test]
    fn horizon_limits() {
        let model = MotionModel::new(small(), 1).unwrap();
        let s = scene(20, 2);
        assert!(model.predict(&s, 0).is_err());
        assert!(model.predict(&s, 31).is_err());
        assert!(model.predict(&scene(19, 2), 5).is_err());
    }

    #[test]
    fn predicted_poses_integrate_deltas_from_last_frame() {
        let model = MotionModel::new(small(), 3).unwrap();
        let s = scene(24, 4);
        let pred = model.predict(&s, 7).unwrap();
        assert_eq!(pred.poses.shape(), &[3, 7, 15, 3]);
        let last = s.persons()[1].frame(23);
        let first_delta = &pred.deltas.data()[7 * 45..8 * 45];
        let first_pose = &pred.poses.data()[7 * 45..8 * 45];
        for k in 0..45 {
            assert_eq!(first_pose[k], last[k] + first_delta[k]);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let model = MotionModel::new(small(), 5).unwrap();
        let pred = model.predict(&scene(20, 6), 5).unwrap();
        let s = model.encoded_windows();
        assert_eq!(pred.attention.shape(), &[3, 3 * s]);
        for p in 0..3 {
            let sum: f64 = pred.attention.row(p).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn roots_slide_with_predictions() {
        let mut track = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let window = Tensor::new(vec![2, 3], vec![0.5, 0.0, 0.0, 0.5, 1.0, 0.0]).unwrap();
        advance_roots(&mut track, &window, 2.0, 3);
        assert_eq!(track, vec![[2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [4.0, 2.0, 0.0]]);
    }
}
