//! Finite-difference verification of the full model's parameter gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{sample_gradients, sample_loss, Sample};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::layers::ForwardCtx;
use crate::model::MotionModel;
use crate::motion::{generate_synthetic_scene, Archetype, PersonSpec, SceneSpec};
use crate::numerics::{relative_error, ParamGroup, ParamId, Tape};

#[derive(Debug, Clone, Serialize)]
pub struct GradientSample {
    pub name: String,
    pub group: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub samples: Vec<GradientSample>,
    /// Largest error per parameter group, in group order.
    pub per_group: Vec<(&'static str, f64)>,
    pub max_error: f64,
    pub worst_group: &'static str,
}

impl GradientReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error < tolerance
    }
}

/// The small configuration used for gradient checks: two persons, 14
/// observed frames, windows of 4, width 8, one layer per stack, no dropout.
pub fn small_gradient_setup(seed: u64) -> Result<(MotionModel, Sample)> {
    let config = ModelConfig::gradcheck();
    let horizon = config.window + 2;
    let spec = SceneSpec {
        frames: config.observed_frames + horizon,
        persons: vec![PersonSpec::new(Archetype::ApproachPair), PersonSpec::new(Archetype::ApproachPair)],
        ..SceneSpec::default()
    };
    let scene = generate_synthetic_scene(&spec, seed)?;
    let sample = Sample::from_scene(&scene, config.observed_frames, horizon)?;
    Ok((MotionModel::new(config, seed)?, sample))
}

/// Compares tape gradients of the sample loss against central differences
/// for `per_group` randomly chosen scalars of every parameter group
/// (all of them when a group is smaller). Dropout is off throughout.
pub fn verify_gradients(
    model: &MotionModel,
    sample: &Sample,
    per_group: usize,
    eps: f64,
    seed: u64,
) -> Result<GradientReport> {
    let (_, grads) = sample_gradients(model, sample, &mut ForwardCtx::eval())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_group: BTreeMap<ParamGroup, Vec<(usize, usize)>> = BTreeMap::new();
    for (id, p) in model.params.iter() {
        let entries = by_group.entry(p.group).or_default();
        entries.extend((0..p.value.len()).map(|k| (id.0, k)));
    }

    let mut probe = model.clone();
    let loss_at = |probe: &MotionModel| -> Result<f64> {
        let mut tape = Tape::with_params(&probe.params);
        let loss = sample_loss(&mut tape, probe, sample, &mut ForwardCtx::eval())?;
        Ok(tape.value(loss).data()[0])
    };

    let mut samples = Vec::new();
    let mut per_group_max = Vec::new();
    for (group, mut entries) in by_group {
        entries.shuffle(&mut rng);
        entries.truncate(per_group);
        entries.sort_unstable();
        let mut worst: f64 = 0.0;
        for (pid, k) in entries {
            let id = ParamId(pid);
            let base = probe.params.value(id).data()[k];
            probe.params.value_mut(id).data_mut()[k] = base + eps;
            let plus = loss_at(&probe)?;
            probe.params.value_mut(id).data_mut()[k] = base - eps;
            let minus = loss_at(&probe)?;
            probe.params.value_mut(id).data_mut()[k] = base;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let error = relative_error(analytic, numeric);
            worst = worst.max(error);
            samples.push(GradientSample {
                name: model.params.get(id).name.clone(),
                group: group.name(),
                index: k,
                analytic,
                numeric,
                error,
            });
        }
        per_group_max.push((group.name(), worst));
    }
    let (worst_group, max_error) = per_group_max
        .iter()
        .copied()
        .fold(("", -1.0), |acc, g| if g.1 > acc.1 { g } else { acc });
    Ok(GradientReport {
        samples,
        per_group: per_group_max,
        max_error,
        worst_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_config_gradients_match() {
        let (model, sample) = small_gradient_setup(0).unwrap();
        let report = verify_gradients(&model, &sample, 6, 1e-6, 1).unwrap();
        assert!(report.samples.len() >= 50);
        assert_eq!(report.per_group.len(), ParamGroup::ALL.len());
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn spatial_value_table_receives_gradient() {
        let (model, sample) = small_gradient_setup(2).unwrap();
        let (_, grads) = sample_gradients(&model, &sample, &mut ForwardCtx::eval()).unwrap();
        let id = model.sie.embeddings.value_table;
        let g = grads.get(id).expect("value table takes part");
        assert!(g.data().iter().any(|v| v.abs() > 0.0));
    }
}
