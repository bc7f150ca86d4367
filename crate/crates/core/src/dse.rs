//! Displacement sub-sequence encoder.
//!
//! Each window is a graph over its `M` time steps with a learned `M×M`
//! adjacency; node features start as the `3J` displacement coordinates.
//! A unit runs one input graph convolution, two residual blocks of two
//! convolutions each, and a linear output convolution, then collapses the
//! `M` nodes into one feature vector with a learned weighting.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Result, SomoError};
use crate::numerics::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub adjacency: ParamId,
    pub weight: ParamId,
}

impl GcnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        nodes: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (nodes as f64).sqrt();
        GcnLayer {
            adjacency: store.uniform(
                format!("{name}.adjacency"),
                ParamGroup::GcnAdjacency,
                &[nodes, nodes],
                bound,
                rng,
            ),
            weight: store.glorot(format!("{name}.weight"), ParamGroup::GcnWeight, fan_in, fan_out, rng),
        }
    }

    /// `tanh(adjacency · h · weight)`, or without the `tanh` when
    /// `activate` is false.
    pub fn forward(&self, tape: &mut Tape, h: Var, activate: bool) -> Result<Var> {
        let a = tape.param(self.adjacency);
        let w = tape.param(self.weight);
        let mixed = tape.matmul(a, h)?;
        let out = tape.matmul(mixed, w)?;
        Ok(if activate { tape.tanh(out) } else { out })
    }
}

#[derive(Debug, Clone)]
pub struct GcnUnit {
    pub initial: GcnLayer,
    pub residual: [(GcnLayer, GcnLayer); 2],
    pub end: GcnLayer,
}

impl GcnUnit {
    pub fn new(store: &mut ParamStore, name: &str, nodes: usize, input: usize, features: usize, rng: &mut impl Rng) -> Self {
        let mut layer = |suffix: &str, fan_in: usize| {
            GcnLayer::new(store, &format!("{name}.{suffix}"), nodes, fan_in, features, rng)
        };
        let initial = layer("initial", input);
        let residual = [
            (layer("res0.a", features), layer("res0.b", features)),
            (layer("res1.a", features), layer("res1.b", features)),
        ];
        let end = layer("end", features);
        GcnUnit {
            initial,
            residual,
            end,
        }
    }

    /// `M×in → M×F`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = self.initial.forward(tape, x, true)?;
        for (a, b) in &self.residual {
            let inner = a.forward(tape, h, true)?;
            let inner = b.forward(tape, inner, true)?;
            h = tape.add(h, inner)?;
        }
        self.end.forward(tape, h, false)
    }
}

#[derive(Debug, Clone)]
pub struct Dse {
    pub units: Vec<GcnUnit>,
    /// Length-`M` weighting that collapses the time nodes, stored `1×M`.
    pub downsample_weights: ParamId,
    pub downsample_bias: ParamId,
    pub leaky_slope: f64,
    pub window: usize,
}

impl Dse {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, encoded_windows: usize, rng: &mut impl Rng) -> Self {
        let count = if config.share_gcn_weights { 1 } else { encoded_windows };
        let units = (0..count)
            .map(|s| {
                GcnUnit::new(
                    store,
                    &format!("dse.unit{s}"),
                    config.window,
                    config.input_dim(),
                    config.feature_dim,
                    rng,
                )
            })
            .collect();
        let bound = 1.0 / (config.window as f64).sqrt();
        Dse {
            units,
            downsample_weights: store.uniform(
                "dse.downsample.weight",
                ParamGroup::DseDownsample,
                &[1, config.window],
                bound,
                rng,
            ),
            downsample_bias: store.add(
                "dse.downsample.bias",
                ParamGroup::DseDownsample,
                Tensor::zeros(&[config.feature_dim]),
            ),
            leaky_slope: config.leaky_slope,
            window: config.window,
        }
    }

    pub fn shares_weights(&self) -> bool {
        self.units.len() == 1
    }

    fn unit(&self, position: usize) -> &GcnUnit {
        if self.shares_weights() {
            &self.units[0]
        } else {
            &self.units[position]
        }
    }

    /// Encodes the window at timestamp `position` (`M×D`) to a `1×F` row.
    pub fn encode_window(&self, tape: &mut Tape, position: usize, window: Var) -> Result<Var> {
        if !self.shares_weights() && position >= self.units.len() {
            return Err(SomoError::Config(format!(
                "window position {position} but the encoder has {} units",
                self.units.len()
            )));
        }
        let features = self.unit(position).forward(tape, window)?;
        let w = tape.param(self.downsample_weights);
        let b = tape.param(self.downsample_bias);
        let collapsed = tape.linear(w, features, b)?;
        Ok(tape.leaky_relu(collapsed, self.leaky_slope))
    }

    /// Value-level encoder over a `B×P×S×M×D` batch of (already
    /// transformed) windows, returning `B×P×S×F`.
    pub fn forward_batch(&self, store: &ParamStore, windows: &Tensor) -> Result<Tensor> {
        let &[b, p, s, m, d] = windows.shape() else {
            return Err(SomoError::dim("dse_forward", windows.shape(), &[0, 0, 0, self.window, 0]));
        };
        if !self.shares_weights() && s != self.units.len() {
            return Err(SomoError::Config(format!(
                "input has {s} windows per person, encoder was built for {}",
                self.units.len()
            )));
        }
        let mut out = Vec::new();
        let mut f = 0;
        let block = m * d;
        for (idx, chunk) in windows.data().chunks(block).enumerate() {
            let position = idx % s;
            let mut tape = Tape::with_params(store);
            let x = tape.constant(Tensor::new(vec![m, d], chunk.to_vec())?);
            let y = self.encode_window(&mut tape, position, x)?;
            let v = tape.value(y);
            f = v.len();
            out.extend_from_slice(v.data());
        }
        Tensor::new(vec![b, p, s, f], out)
    }
}
