use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Result, SomoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Coarse family a parameter belongs to, used to make sure gradient
/// verification touches every kind of weight in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    GcnAdjacency,
    GcnWeight,
    DseDownsample,
    SpatialTable,
    AttentionProjection,
    FeedForward,
    LayerNorm,
    QueryMlp,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::GcnAdjacency,
        ParamGroup::GcnWeight,
        ParamGroup::DseDownsample,
        ParamGroup::SpatialTable,
        ParamGroup::AttentionProjection,
        ParamGroup::FeedForward,
        ParamGroup::LayerNorm,
        ParamGroup::QueryMlp,
        ParamGroup::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::GcnAdjacency => "gcn_adjacency",
            ParamGroup::GcnWeight => "gcn_weight",
            ParamGroup::DseDownsample => "dse_downsample",
            ParamGroup::SpatialTable => "spatial_table",
            ParamGroup::AttentionProjection => "attention_projection",
            ParamGroup::FeedForward => "feed_forward",
            ParamGroup::LayerNorm => "layer_norm",
            ParamGroup::QueryMlp => "query_mlp",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Flat registry of every learnable tensor, addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn uniform(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        self.add(name, group, t)
    }

    /// Glorot-uniform `fan_in×fan_out` matrix.
    pub fn glorot(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(name, group, &[fan_in, fan_out], bound, rng)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replace every value from `other`, which must have identical names and shapes.
    pub fn load_values(&mut self, other: Vec<(String, Tensor)>) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(SomoError::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                other.len(),
                self.params.len()
            )));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(other) {
            if p.name != name {
                return Err(SomoError::Checkpoint(format!(
                    "tensor name mismatch: checkpoint has {name}, model expects {}",
                    p.name
                )));
            }
            if p.value.shape() != value.shape() {
                return Err(SomoError::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

/// Gradient per parameter; `None` when the parameter did not take part
/// in the computation.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads {
    pub grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Adds `other` scaled by `weight`.
    pub fn accumulate(&mut self, other: &ParamGrads, weight: f64) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(t) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += weight * b;
                    }
                }
                None => *mine = Some(t.map(|v| weight * v)),
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}
