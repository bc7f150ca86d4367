//! Social interaction encoder: timestamp encoding, bucketed spatial
//! relations between root positions, and attention layers biased by them.

use std::sync::Arc;

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Result, SomoError};
use crate::layers::{Attention, FeedForward, ForwardCtx, LayerNorm, SpatialBias, SpatialEmbeddings};
use crate::motion::RootSequence;
use crate::numerics::{BucketMatrix, ParamStore, Tape, Tensor, Var};

/// Sinusoidal encoding of integer timestamps: row `l`, column `2i` is
/// `sin(t_l / 10000^(2i/F))` and column `2i+1` the matching cosine.
pub fn time_encoding(timestamps: &[usize], dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[timestamps.len(), dim]);
    for (row, &ts) in timestamps.iter().enumerate() {
        let r = t.row_mut(row);
        for pair in 0..dim.div_ceil(2) {
            let rate = 10000f64.powf(-2.0 * pair as f64 / dim as f64);
            let angle = ts as f64 * rate;
            r[2 * pair] = angle.sin();
            if 2 * pair + 1 < dim {
                r[2 * pair + 1] = angle.cos();
            }
        }
    }
    t
}

/// Adds the encoding of each element's timestamp to a `B×L×F` batch.
pub fn time_encode(features: &Tensor, timestamps: &[usize]) -> Result<Tensor> {
    let &[_, l, f] = features.shape() else {
        return Err(SomoError::dim("time_encode", features.shape(), &[0, timestamps.len(), 0]));
    };
    if l != timestamps.len() {
        return Err(SomoError::dim("time_encode", features.shape(), &[timestamps.len()]));
    }
    let enc = time_encoding(timestamps, f);
    let mut out = features.clone();
    for (chunk, _) in out.data_mut().chunks_mut(l * f).zip(0..) {
        for (v, e) in chunk.iter_mut().zip(enc.data()) {
            *v += e;
        }
    }
    Ok(out)
}

/// Timestamps of the person-major flattened sequence: `0..S` repeated per person.
pub fn flattened_timestamps(persons: usize, windows: usize) -> Vec<usize> {
    (0..persons).flat_map(|_| 0..windows).collect()
}

/// Euclidean distances between all rows of an `L×3` matrix.
pub fn root_distance_matrix(roots: &Tensor) -> Result<Tensor> {
    if roots.shape().len() != 2 || roots.cols() != 3 {
        return Err(SomoError::dim("root_distance_matrix", roots.shape(), &[0, 3]));
    }
    let l = roots.rows();
    let mut out = Tensor::zeros(&[l, l]);
    for i in 0..l {
        for j in i + 1..l {
            let (a, b) = (roots.row(i), roots.row(j));
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            out.set(&[i, j], d);
            out.set(&[j, i], d);
        }
    }
    Ok(out)
}

/// Piecewise bucket index: `round(e)` for `|e| ≤ α`, otherwise
/// `sign(e) · min(β, round(α + ln(|e|/α) / ln(γ/α) · (β − α)))`.
pub fn piecewise_index(e: f64, alpha: f64, beta: f64, gamma: f64) -> Result<i64> {
    if !(gamma > alpha && alpha > 0.0 && beta >= alpha) {
        return Err(SomoError::Config(format!(
            "piecewise index needs γ > α > 0 and β ≥ α, got α={alpha} β={beta} γ={gamma}"
        )));
    }
    if !e.is_finite() {
        return Err(SomoError::Input(format!("distance {e} is not finite")));
    }
    let a = e.abs();
    if a <= alpha {
        return Ok(e.round() as i64);
    }
    let log_part = alpha + (a / alpha).ln() / (gamma / alpha).ln() * (beta - alpha);
    Ok((e.signum() * beta.min(log_part.round())) as i64)
}

/// Bucketed pairwise relation over the flattened `L = P·S` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialRelation {
    pub buckets: Arc<BucketMatrix>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SpatialRelation {
    pub fn len(&self) -> usize {
        self.buckets.size
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.size == 0
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.buckets.get(i, j)
    }
}

/// Bucketed distances between the window-averaged roots, measured in meters.
pub fn spatial_encode(roots: &RootSequence, alpha: f64, beta: f64, gamma: f64) -> Result<SpatialRelation> {
    let meters = roots.flattened().map(|v| v / 1000.0);
    let dist = root_distance_matrix(&meters)?;
    let index = dist
        .data()
        .iter()
        .map(|&e| piecewise_index(e, alpha, beta, gamma).map(|b| b as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(SpatialRelation {
        buckets: Arc::new(BucketMatrix {
            size: dist.rows(),
            index,
        }),
        alpha,
        beta,
        gamma,
    })
}

/// One post-norm encoder layer with spatially biased attention.
#[derive(Debug, Clone)]
pub struct SamaLayer {
    pub attention: Attention,
    pub norm_attention: LayerNorm,
    pub feed_forward: FeedForward,
    pub norm_ff: LayerNorm,
}

/// Intermediate values of a [`SamaLayer`] pass.
pub struct SamaTrace {
    pub output: Var,
    pub heads_concat: Var,
    pub weights: Vec<Var>,
}

impl SamaLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.feature_dim;
        SamaLayer {
            attention: Attention::new(store, &format!("{name}.attn"), d, config.heads, config.key_dim, rng),
            norm_attention: LayerNorm::new(store, &format!("{name}.norm_attn"), d, config.layer_norm_eps),
            feed_forward: FeedForward::new(store, &format!("{name}.ff"), d, config.ff_dim, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d, config.layer_norm_eps),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        h: Var,
        spatial: Option<&SpatialBias>,
        ctx: &mut ForwardCtx,
    ) -> Result<SamaTrace> {
        if let Some(s) = spatial {
            if s.buckets.size != tape.shape(h)[0] {
                return Err(SomoError::dim("sama_attention", tape.shape(h), &[s.buckets.size]));
            }
        }
        let attn = self.attention.forward(tape, h, h, spatial, ctx)?;
        let dropped = ctx.dropout(tape, attn.output)?;
        let x = tape.add(h, dropped)?;
        let x = self.norm_attention.forward(tape, x)?;
        let ff = self.feed_forward.forward(tape, x, ctx)?;
        let y = tape.add(x, ff)?;
        let output = self.norm_ff.forward(tape, y)?;
        Ok(SamaTrace {
            output,
            heads_concat: attn.heads_concat,
            weights: attn.weights,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Sie {
    pub embeddings: SpatialEmbeddings,
    pub layers: Vec<SamaLayer>,
    pub key_uses_column: bool,
}

impl Sie {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let embeddings = SpatialEmbeddings::new(store, config.num_buckets(), config.key_dim, rng);
        let layers = (0..config.encoder_layers)
            .map(|i| SamaLayer::new(store, &format!("sie.layer{i}"), config, rng))
            .collect();
        Sie {
            embeddings,
            layers,
            key_uses_column: config.key_bias_uses_column,
        }
    }

    /// `features` is the flattened `L×F` sequence; `timestamps` holds each
    /// row's window index.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: Var,
        timestamps: &[usize],
        relation: &SpatialRelation,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        if shape[0] != relation.len() || shape[0] != timestamps.len() {
            return Err(SomoError::dim("sie_forward", &shape, &[relation.len()]));
        }
        let enc = tape.constant(time_encoding(timestamps, shape[1]));
        let mut h = tape.add(features, enc)?;
        let bias = SpatialBias {
            buckets: &relation.buckets,
            tables: &self.embeddings,
            key_uses_column: self.key_uses_column,
        };
        for layer in &self.layers {
            h = layer.forward(tape, h, Some(&bias), ctx)?.output;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_encoding_at_zero() {
        let e = time_encoding(&[0], 6);
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn equal_timestamps_share_encoding() {
        let ts = flattened_timestamps(2, 3);
        assert_eq!(ts, vec![0, 1, 2, 0, 1, 2]);
        let feats = Tensor::zeros(&[1, 6, 8]);
        let out = time_encode(&feats, &ts).unwrap();
        for s in 0..3 {
            assert_eq!(out.data()[s * 8..(s + 1) * 8], out.data()[(s + 3) * 8..(s + 4) * 8]);
        }
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn distances() {
        let roots = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![3.0, 4.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let d = root_distance_matrix(&roots).unwrap();
        assert_eq!(d.get(&[0, 1]), 5.0);
        assert_eq!(d.get(&[1, 0]), 5.0);
        assert_eq!(d.get(&[0, 2]), 0.0);
        assert_eq!(d.get(&[1, 1]), 0.0);
        let moved = roots.map(|v| v + 17.5);
        assert!(root_distance_matrix(&moved).unwrap().max_abs_diff(&d) < 1e-12);
    }

    #[test]
    fn piecewise_examples() {
        assert_eq!(piecewise_index(0.0, 1.0, 2.0, 4.0).unwrap(), 0);
        assert_eq!(piecewise_index(1.0, 1.0, 2.0, 4.0).unwrap(), 1);
        assert_eq!(piecewise_index(4.0, 1.0, 2.0, 4.0).unwrap(), 2);
        assert_eq!(piecewise_index(1e6, 1.0, 2.0, 4.0).unwrap(), 2);
        assert_eq!(piecewise_index(0.4, 1.0, 2.0, 4.0).unwrap(), 0);
        assert_eq!(piecewise_index(0.6, 1.0, 2.0, 4.0).unwrap(), 1);
        // ln(1.9)/ln(4) ≈ 0.463 → round(1.463) = 1 ; ln(2.1)/ln4 ≈ 0.535 → 2
        assert_eq!(piecewise_index(1.9, 1.0, 2.0, 4.0).unwrap(), 1);
        assert_eq!(piecewise_index(2.1, 1.0, 2.0, 4.0).unwrap(), 2);
        assert_eq!(piecewise_index(-10.0, 1.0, 2.0, 4.0).unwrap(), -2);
        assert!(matches!(piecewise_index(1.0, 2.0, 2.0, 1.5), Err(SomoError::Config(_))));
        assert!(piecewise_index(1.0, 1.0, 0.5, 4.0).is_err());
    }

    fn roots(points: &[[[f64; 3]; 2]]) -> RootSequence {
        // points[s][p]
        let s = points.len();
        let mut data = Vec::new();
        for p in 0..2 {
            for w in points {
                data.extend_from_slice(&w[p]);
            }
        }
        RootSequence {
            roots: Tensor::new(vec![2, s, 3], data).unwrap(),
        }
    }

    #[test]
    fn far_apart_persons_get_beta() {
        let r = roots(&[[[0.0; 3], [10_000.0, 0.0, 0.0]]; 3]);
        let rel = spatial_encode(&r, 1.0, 2.0, 4.0).unwrap();
        assert_eq!(rel.len(), 6);
        for i in 0..3 {
            for j in 3..6 {
                assert_eq!(rel.get(i, j), 2);
                assert_eq!(rel.get(j, i), 2);
            }
            for j in 0..3 {
                assert_eq!(rel.get(i, j), 0);
            }
        }
    }

    #[test]
    fn co_located_persons_are_all_zero() {
        let r = roots(&[[[500.0, 900.0, -20.0]; 2]; 4]);
        let rel = spatial_encode(&r, 1.0, 2.0, 4.0).unwrap();
        assert!(rel.buckets.index.iter().all(|&b| b == 0));
    }

    #[test]
    fn single_person_sees_own_drift() {
        let data: Vec<f64> = (0..5).flat_map(|s| [s as f64 * 700.0, 0.0, 0.0]).collect();
        let r = RootSequence {
            roots: Tensor::new(vec![1, 5, 3], data).unwrap(),
        };
        let rel = spatial_encode(&r, 1.0, 2.0, 4.0).unwrap();
        // 0.7 m → 1, 1.4 m → 1, 2.1 m → 2, 2.8 m → 2
        assert_eq!(rel.get(0, 1), 1);
        assert_eq!(rel.get(0, 2), 1);
        assert_eq!(rel.get(0, 3), 2);
        assert_eq!(rel.get(0, 4), 2);
        assert_eq!(rel.get(3, 3), 0);
    }
}
