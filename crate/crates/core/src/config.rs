use serde::{Deserialize, Serialize};

use crate::error::{Result, SomoError};
use crate::motion::window_starts;

/// Architecture and preprocessing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub joints: usize,
    /// Observed frames `N`.
    pub observed_frames: usize,
    /// Window length `M`; also the number of frames one decode pass emits.
    pub window: usize,
    pub stride: usize,
    pub use_dct: bool,
    /// Number of DCT frequencies kept, `C ≤ M`.
    pub dct_keep: usize,
    /// Feature width `F`, shared by the DSE output and the attention stacks.
    pub feature_dim: usize,
    /// Per-head query/key/value width `d_z`.
    pub key_dim: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward sublayers.
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub layer_norm_eps: f64,
    pub share_gcn_weights: bool,
    /// Use `K_j` instead of `K_i` in the key term of the spatial score bias.
    pub key_bias_uses_column: bool,
    /// Millimeters per model unit for displacements entering and leaving
    /// the network.
    pub displacement_scale_mm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 15,
            observed_frames: 50,
            window: 10,
            stride: 1,
            use_dct: true,
            dct_keep: 10,
            feature_dim: 128,
            key_dim: 64,
            heads: 8,
            ff_dim: 1024,
            encoder_layers: 3,
            decoder_layers: 3,
            alpha: 1.0,
            beta: 2.0,
            gamma: 4.0,
            dropout: 0.2,
            leaky_slope: 0.01,
            layer_norm_eps: 1e-5,
            share_gcn_weights: false,
            key_bias_uses_column: false,
            displacement_scale_mm: 10.0,
        }
    }
}

impl ModelConfig {
    /// Widths used by the learning smoke test: `F = 32`, `d_z = 16`, two
    /// layers per stack.
    pub fn toy() -> Self {
        ModelConfig {
            feature_dim: 32,
            key_dim: 16,
            heads: 2,
            ff_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            ..ModelConfig::default()
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn gradcheck() -> Self {
        ModelConfig {
            joints: 15,
            observed_frames: 14,
            window: 4,
            dct_keep: 4,
            feature_dim: 8,
            key_dim: 4,
            heads: 2,
            ff_dim: 16,
            encoder_layers: 1,
            decoder_layers: 1,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        3 * self.joints
    }

    /// Bucket count of the spatial relation, `β + 1`.
    pub fn num_buckets(&self) -> usize {
        self.beta as usize + 1
    }

    pub fn window_starts(&self) -> Result<Vec<usize>> {
        window_starts(self.observed_frames - 1, self.window, self.stride)
    }

    /// Number of encoded windows `S` per person.
    pub fn encoded_windows(&self) -> Result<usize> {
        Ok(self.window_starts()?.len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(SomoError::Config(m));
        if self.joints == 0 {
            return err("joints must be positive".into());
        }
        if self.observed_frames < 3 {
            return err(format!("observed_frames {} < 3", self.observed_frames));
        }
        if self.window == 0 {
            return err("window must be positive".into());
        }
        if self.dct_keep == 0 || self.dct_keep > self.window {
            return err(format!(
                "dct_keep {} outside 1..={}",
                self.dct_keep, self.window
            ));
        }
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("key_dim", self.key_dim),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.feature_dim < 2 {
            return err("feature_dim must be at least 2 for layer normalization".into());
        }
        if !(self.gamma > self.alpha && self.alpha > 0.0 && self.beta >= self.alpha) {
            return err(format!(
                "piecewise index needs γ > α > 0 and β ≥ α, got α={} β={} γ={}",
                self.alpha, self.beta, self.gamma
            ));
        }
        if self.beta.fract() != 0.0 {
            return err(format!("β must be a whole number, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.displacement_scale_mm > 0.0) {
            return err("displacement_scale_mm must be positive".into());
        }
        if !(self.layer_norm_eps >= 0.0) {
            return err("layer_norm_eps must be non-negative".into());
        }
        self.window_starts()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_39_encoded_windows() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.encoded_windows().unwrap(), 39);
        assert_eq!(c.input_dim(), 45);
        assert_eq!(c.num_buckets(), 3);
    }

    #[test]
    fn presets_validate() {
        ModelConfig::toy().validate().unwrap();
        let g = ModelConfig::gradcheck();
        g.validate().unwrap();
        assert_eq!(g.encoded_windows().unwrap(), 9);
    }

    #[test]
    fn rejects_bad_piecewise_parameters() {
        let c = ModelConfig {
            gamma: 0.5,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(SomoError::Config(_))));
    }

    #[test]
    fn rejects_window_that_leaves_no_encoded_windows() {
        let c = ModelConfig {
            observed_frames: 11,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"windw": 3}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"window": 5, "dct_keep": 5}"#).unwrap();
        assert_eq!(c.window, 5);
        assert_eq!(c.feature_dim, 128);
    }
}
