//! Parameterized building blocks shared by the encoders and the decoder.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{BucketMatrix, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Per-forward settings: whether dropout is active and where its masks
/// come from.
pub struct ForwardCtx {
    dropout: f64,
    rng: Option<ChaCha8Rng>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(dropout: f64, rng: ChaCha8Rng) -> Self {
        ForwardCtx {
            dropout,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some() && self.dropout > 0.0
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = self.dropout;
        let Some(rng) = self.rng.as_mut().filter(|_| p > 0.0) else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - p);
        let mut mask = Tensor::zeros(tape.shape(x));
        for m in mask.data_mut() {
            *m = if rng.gen::<f64>() < p { 0.0 } else { keep };
        }
        tape.mul_const(x, mask)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            weight: store.glorot(format!("{name}.weight"), group, fan_in, fan_out, rng),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), ParamGroup::LayerNorm, Tensor::full(&[dim], 1.0)),
            shift: store.add(format!("{name}.shift"), ParamGroup::LayerNorm, Tensor::zeros(&[dim])),
            eps,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let s = tape.param(self.shift);
        tape.layer_norm(x, g, s, self.eps)
    }
}

/// `dropout(W₂ · relu(W₁ x + b₁) + b₂)`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), ParamGroup::FeedForward, dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), ParamGroup::FeedForward, hidden, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let h = self.inner.forward(tape, x)?;
        let h = tape.relu(h);
        let y = self.outer.forward(tape, h)?;
        ctx.dropout(tape, y)
    }
}

/// Learned embeddings of the spatial relation buckets, one row per bucket,
/// for the query, key and value terms.
#[derive(Debug, Clone)]
pub struct SpatialEmbeddings {
    pub query_table: ParamId,
    pub key_table: ParamId,
    pub value_table: ParamId,
}

impl SpatialEmbeddings {
    pub fn new(store: &mut ParamStore, buckets: usize, key_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (buckets + key_dim) as f64).sqrt();
        let mut table = |name: &str| {
            store.uniform(
                format!("sie.spatial.{name}"),
                ParamGroup::SpatialTable,
                &[buckets, key_dim],
                bound,
                rng,
            )
        };
        SpatialEmbeddings {
            query_table: table("query"),
            key_table: table("key"),
            value_table: table("value"),
        }
    }
}

/// Bucket matrix plus the embeddings that turn it into attention biases.
pub struct SpatialBias<'a> {
    pub buckets: &'a Arc<BucketMatrix>,
    pub tables: &'a SpatialEmbeddings,
    pub key_uses_column: bool,
}

/// Multi-head attention projections. Query/key/value projections carry no
/// bias; the output projection does.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: Linear,
    pub heads: usize,
    pub key_dim: usize,
}

/// Output of one attention call, with per-head row-stochastic weights.
pub struct AttentionOutput {
    pub output: Var,
    pub heads_concat: Var,
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        heads: usize,
        key_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let inner = heads * key_dim;
        let g = ParamGroup::AttentionProjection;
        Attention {
            query: store.glorot(format!("{name}.w_q"), g, model_dim, inner, rng),
            key: store.glorot(format!("{name}.w_k"), g, model_dim, inner, rng),
            value: store.glorot(format!("{name}.w_v"), g, model_dim, inner, rng),
            output: Linear::new(store, &format!("{name}.out"), g, inner, model_dim, rng),
            heads,
            key_dim,
        }
    }

    /// Attends from the rows of `queries` over the rows of `context`.
    ///
    /// Without `spatial` this is scaled dot-product attention. With it,
    /// for bucket `b = ψ(i,j)`:
    /// `A_ij = (Q_i·K_j + Q_i·Pq[b] + K_i·Pk[b]) / √d_z` (or `K_j·Pk[b]`
    /// when `key_uses_column`), and row `i` of the output is
    /// `Σ_j softmax(A_i)_j (V_j + Pv[b])`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        queries: Var,
        context: Var,
        spatial: Option<&SpatialBias>,
        ctx: &mut ForwardCtx,
    ) -> Result<AttentionOutput> {
        let wq = tape.param(self.query);
        let wk = tape.param(self.key);
        let wv = tape.param(self.value);
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(context, wk)?;
        let v = tape.matmul(context, wv)?;
        let tables = spatial.map(|s| {
            (
                tape.param(s.tables.query_table),
                tape.param(s.tables.key_table),
                tape.param(s.tables.value_table),
            )
        });
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * self.key_dim;
            let qh = tape.slice_cols(q, start, self.key_dim)?;
            let kh = tape.slice_cols(k, start, self.key_dim)?;
            let vh = tape.slice_cols(v, start, self.key_dim)?;
            let mut scores = tape.matmul_nt(qh, kh)?;
            if let (Some(s), Some((pq, pk, _))) = (spatial, tables) {
                let q_terms = tape.matmul_nt(qh, pq)?;
                let q_bias = tape.gather_bucket(q_terms, s.buckets, false)?;
                let k_terms = tape.matmul_nt(kh, pk)?;
                let k_bias = tape.gather_bucket(k_terms, s.buckets, s.key_uses_column)?;
                let bias = tape.add(q_bias, k_bias)?;
                scores = tape.add(scores, bias)?;
            }
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores)?;
            weights.push(attn);
            let attn = ctx.dropout(tape, attn)?;
            let mut out = tape.matmul(attn, vh)?;
            if let (Some(s), Some((_, _, pv))) = (spatial, tables) {
                let buckets = tape.shape(pv)[0];
                let mass = tape.bucket_sum(attn, s.buckets, buckets)?;
                let value_terms = tape.matmul(mass, pv)?;
                out = tape.add(out, value_terms)?;
            }
            heads.push(out);
        }
        let heads_concat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let output = self.output.forward(tape, heads_concat)?;
        Ok(AttentionOutput {
            output,
            heads_concat,
            weights,
        })
    }
}
