//! Transformer decoder that turns each person's latest window into a
//! query, attends over the encoded history and emits the next window.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Result, SomoError};
use crate::layers::{Attention, FeedForward, ForwardCtx, LayerNorm, Linear};
use crate::numerics::{ParamGroup, ParamStore, Tape, Tensor, Var};

/// `M·D → D → F` perceptron applied to the flattened query window.
#[derive(Debug, Clone)]
pub struct QueryMlp {
    pub hidden: Linear,
    pub output: Linear,
    pub leaky_slope: f64,
}

impl QueryMlp {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.input_dim();
        QueryMlp {
            hidden: Linear::new(store, "predictor.query.hidden", ParamGroup::QueryMlp, config.window * d, d, rng),
            output: Linear::new(store, "predictor.query.out", ParamGroup::QueryMlp, d, config.feature_dim, rng),
            leaky_slope: config.leaky_slope,
        }
    }

    /// `M×D` window to a `1×F` query row.
    pub fn forward(&self, tape: &mut Tape, window: Var) -> Result<Var> {
        let n = tape.value(window).len();
        let flat = tape.reshape(window, &[1, n])?;
        let h = self.hidden.forward(tape, flat)?;
        let h = tape.leaky_relu(h, self.leaky_slope);
        self.output.forward(tape, h)
    }
}

/// Post-norm decoder layer: self-attention over the person queries,
/// cross-attention to the encoder memory, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attention: Attention,
    pub norm_self: LayerNorm,
    pub cross_attention: Attention,
    pub norm_cross: LayerNorm,
    pub feed_forward: FeedForward,
    pub norm_ff: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.feature_dim;
        let eps = config.layer_norm_eps;
        DecoderLayer {
            self_attention: Attention::new(store, &format!("{name}.self_attn"), d, config.heads, config.key_dim, rng),
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), d, eps),
            cross_attention: Attention::new(store, &format!("{name}.cross_attn"), d, config.heads, config.key_dim, rng),
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), d, eps),
            feed_forward: FeedForward::new(store, &format!("{name}.ff"), d, config.ff_dim, rng),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d, eps),
        }
    }

    /// Returns the layer output and the head-averaged cross-attention
    /// weights (`P×L`).
    pub fn forward(&self, tape: &mut Tape, queries: Var, memory: Var, ctx: &mut ForwardCtx) -> Result<(Var, Var)> {
        let sa = self.self_attention.forward(tape, queries, queries, None, ctx)?;
        let sa_out = ctx.dropout(tape, sa.output)?;
        let x = tape.add(queries, sa_out)?;
        let x = self.norm_self.forward(tape, x)?;

        let ca = self.cross_attention.forward(tape, x, memory, None, ctx)?;
        let ca_out = ctx.dropout(tape, ca.output)?;
        let y = tape.add(x, ca_out)?;
        let y = self.norm_cross.forward(tape, y)?;

        let ff = self.feed_forward.forward(tape, y, ctx)?;
        let z = tape.add(y, ff)?;
        let z = self.norm_ff.forward(tape, z)?;

        let mut avg = ca.weights[0];
        for &w in &ca.weights[1..] {
            avg = tape.add(avg, w)?;
        }
        let avg = tape.scale(avg, 1.0 / ca.weights.len() as f64);
        Ok((z, avg))
    }
}

/// Two fully connected layers, `F → F → M·D`.
#[derive(Debug, Clone)]
pub struct Head {
    pub hidden: Linear,
    pub output: Linear,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub query: QueryMlp,
    pub layers: Vec<DecoderLayer>,
    pub head: Head,
    pub window: usize,
    pub input_dim: usize,
}

/// Output of one decode pass.
pub struct DecodeOutput {
    /// Per person, `M·D` head outputs reshaped to `M×D` (coefficients
    /// when I/DCT is on).
    pub coefficients: Vec<Var>,
    /// First decoder layer's head-averaged cross-attention, `P×L`.
    pub first_cross_attention: Var,
}

impl Predictor {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let query = QueryMlp::new(store, config, rng);
        let layers = (0..config.decoder_layers)
            .map(|i| DecoderLayer::new(store, &format!("predictor.layer{i}"), config, rng))
            .collect();
        let f = config.feature_dim;
        let out = config.window * config.input_dim();
        let head = Head {
            hidden: Linear::new(store, "predictor.head.hidden", ParamGroup::Head, f, f, rng),
            output: Linear::new(store, "predictor.head.out", ParamGroup::Head, f, out, rng),
            leaky_slope: config.leaky_slope,
        };
        Predictor {
            query,
            layers,
            head,
            window: config.window,
            input_dim: config.input_dim(),
        }
    }

    /// Stacks one query row per person into `P×F`.
    pub fn build_queries(&self, tape: &mut Tape, windows: &[Var]) -> Result<Var> {
        let rows = windows
            .iter()
            .map(|&w| self.query.forward(tape, w))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    pub fn decode(&self, tape: &mut Tape, queries: Var, memory: Var, ctx: &mut ForwardCtx) -> Result<DecodeOutput> {
        let qd = tape.shape(queries)[1];
        let md = tape.shape(memory)[1];
        if qd != md {
            return Err(SomoError::dim("decode_step", tape.shape(queries), tape.shape(memory)));
        }
        let mut x = queries;
        let mut first = None;
        for layer in &self.layers {
            let (y, attn) = layer.forward(tape, x, memory, ctx)?;
            first.get_or_insert(attn);
            x = y;
        }
        let h = self.head.hidden.forward(tape, x)?;
        let h = tape.leaky_relu(h, self.head.leaky_slope);
        let out = self.head.output.forward(tape, h)?;
        let persons = tape.shape(out)[0];
        let coefficients = (0..persons)
            .map(|p| {
                let row = tape.slice_rows(out, p, 1)?;
                tape.reshape(row, &[self.window, self.input_dim])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DecodeOutput {
            coefficients,
            first_cross_attention: first.expect("at least one decoder layer"),
        })
    }
}

/// Cross-attention dump: one row per person, one column per memory entry
/// (`p{person}_t{window}`, 1-based, person-major), 9 significant digits.
pub fn attention_csv(attention: &Tensor, ids: &[String], windows: usize) -> Result<String> {
    let &[p, l] = attention.shape() else {
        return Err(SomoError::dim("attention_csv", attention.shape(), &[ids.len(), 0]));
    };
    if p != ids.len() || windows == 0 || l % windows != 0 {
        return Err(SomoError::dim("attention_csv", attention.shape(), &[ids.len(), windows]));
    }
    let mut out = String::from("person");
    for person in 1..=l / windows {
        for t in 1..=windows {
            out.push_str(&format!(",p{person}_t{t}"));
        }
    }
    out.push('\n');
    for (row, id) in ids.iter().enumerate() {
        out.push_str(id);
        for v in attention.row(row) {
            out.push_str(&format!(",{v:.8e}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses [`attention_csv`] output back into the person labels and the
/// `P×L` weights.
pub fn parse_attention_csv(text: &str) -> Result<(Vec<String>, Tensor)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SomoError::Input("empty attention CSV".into()))?;
    let cols = header.split(',').count() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut fields = line.split(',');
        ids.push(fields.next().unwrap_or_default().to_string());
        let row = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| SomoError::Input(format!("attention CSV line {}: {e}", n + 2)))?;
        if row.len() != cols {
            return Err(SomoError::Input(format!(
                "attention CSV line {} has {} values, header has {cols}",
                n + 2,
                row.len()
            )));
        }
        data.extend(row);
    }
    Ok((ids.clone(), Tensor::new(vec![ids.len(), cols], data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, Predictor, ModelConfig) {
        let config = ModelConfig::gradcheck();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Predictor::new(&mut store, &config, &mut rng);
        (store, p, config)
    }

    #[test]
    fn zero_window_gives_zero_query() {
        let (store, p, config) = setup();
        let mut tape = Tape::with_params(&store);
        let w = tape.constant(Tensor::zeros(&[config.window, config.input_dim()]));
        let q = p.build_queries(&mut tape, &[w, w, w]).unwrap();
        assert_eq!(tape.shape(q), &[3, config.feature_dim]);
        assert!(tape.value(q).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_gives_static_continuation() {
        let (mut store, p, config) = setup();
        for id in [p.head.output.weight, p.head.output.bias] {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(&shape);
        }
        let mut tape = Tape::with_params(&store);
        let q = tape.constant(Tensor::full(&[2, config.feature_dim], 0.3));
        let mem = tape.constant(Tensor::full(&[6, config.feature_dim], -0.1));
        let out = p.decode(&mut tape, q, mem, &mut ForwardCtx::eval()).unwrap();
        for c in out.coefficients {
            assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
        }
        let attn = tape.value(out.first_cross_attention);
        assert_eq!(attn.shape(), &[2, 6]);
        for r in 0..2 {
            assert!((attn.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_width_mismatch_rejected() {
        let (store, p, config) = setup();
        let mut tape = Tape::with_params(&store);
        let q = tape.constant(Tensor::zeros(&[2, config.feature_dim]));
        let mem = tape.constant(Tensor::zeros(&[6, config.feature_dim + 1]));
        assert!(p.decode(&mut tape, q, mem, &mut ForwardCtx::eval()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let attn = Tensor::new(vec![2, 4], vec![0.1, 0.2, 0.3, 0.4, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]).unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        let csv = attention_csv(&attn, &ids, 2).unwrap();
        assert!(csv.starts_with("person,p1_t1,p1_t2,p2_t1,p2_t2\n"));
        let (back_ids, back) = parse_attention_csv(&csv).unwrap();
        assert_eq!(back_ids, ids);
        assert!(back.max_abs_diff(&attn) < 1e-9);
        for r in 0..2 {
            assert!((back.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(attention_csv(&attn, &ids, 3).is_err());
    }
}
