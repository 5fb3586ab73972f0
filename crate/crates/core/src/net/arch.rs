//! Architecture descriptions and their resolution into per-layer shapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::conv::ConvGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn features(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerDef {
    Dense {
        units: usize,
    },
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

/// Network topology. `tap_layers` are 1-based layer numbers whose activations
/// feed the contrastive loss.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input: InputShape,
    pub layers: Vec<LayerDef>,
    pub tap_layers: Vec<usize>,
}

impl ArchSpec {
    /// Dense stack `widths[0] -> widths[1] -> ...`, tapping every hidden layer.
    pub fn mlp(widths: &[usize]) -> Self {
        let layers: Vec<LayerDef> = widths[1..]
            .iter()
            .map(|&units| LayerDef::Dense { units })
            .collect();
        let hidden = layers.len().saturating_sub(1);
        ArchSpec {
            input: InputShape {
                channels: 1,
                height: 1,
                width: widths[0],
            },
            layers,
            tap_layers: (1..=hidden).collect(),
        }
    }

    pub fn with_input(mut self, input: InputShape) -> Self {
        self.input = input;
        self
    }

    pub fn resolve(&self) -> Result<Vec<LayerSpec>> {
        if self.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        if !matches!(self.layers.last(), Some(LayerDef::Dense { .. })) {
            return Err(Error::Config("the output layer must be dense".into()));
        }
        let mut specs = Vec::with_capacity(self.layers.len());
        let (mut c, mut h, mut w) = (self.input.channels, self.input.height, self.input.width);
        let mut flat = false;
        for (i, def) in self.layers.iter().enumerate() {
            match *def {
                LayerDef::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {} has zero units", i + 1)));
                    }
                    specs.push(LayerSpec::Dense {
                        inputs: c * h * w,
                        outputs: units,
                    });
                    (c, h, w) = (units, 1, 1);
                    flat = true;
                }
                LayerDef::Conv {
                    channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if flat {
                        return Err(Error::Config(format!(
                            "conv layer {} follows a dense layer",
                            i + 1
                        )));
                    }
                    if channels == 0 || kernel == 0 || stride == 0 || kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(Error::Config(format!("conv layer {} has invalid geometry", i + 1)));
                    }
                    let g = ConvGeometry {
                        in_channels: c,
                        in_height: h,
                        in_width: w,
                        out_channels: channels,
                        kernel,
                        stride,
                        padding,
                    };
                    (c, h, w) = (channels, g.out_height(), g.out_width());
                    specs.push(LayerSpec::Conv(g));
                }
            }
        }
        let k = specs.len();
        let mut seen = vec![false; k + 1];
        for &t in &self.tap_layers {
            if t == 0 || t > k {
                return Err(Error::Config(format!("tap layer {t} outside 1..={k}")));
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::Config(format!("tap layer {t} listed twice")));
            }
        }
        Ok(specs)
    }

    pub fn n_outputs(&self) -> usize {
        match self.layers.last() {
            Some(LayerDef::Dense { units }) => *units,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv(ConvGeometry),
}

impl LayerSpec {
    pub fn in_features(&self) -> usize {
        match self {
            LayerSpec::Dense { inputs, .. } => *inputs,
            LayerSpec::Conv(g) => g.in_features(),
        }
    }

    pub fn out_features(&self) -> usize {
        match self {
            LayerSpec::Dense { outputs, .. } => *outputs,
            LayerSpec::Conv(g) => g.out_features(),
        }
    }

    /// Channels seen by batch norm and by embedding pooling.
    pub fn out_channels(&self) -> usize {
        match self {
            LayerSpec::Dense { outputs, .. } => *outputs,
            LayerSpec::Conv(g) => g.out_channels,
        }
    }

    /// Spatial positions per channel (1 for dense layers).
    pub fn positions(&self) -> usize {
        match self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Conv(g) => g.positions(),
        }
    }

    /// Weight matrix shape `[rows × fan_in]`.
    pub fn weight_shape(&self) -> [usize; 2] {
        match self {
            LayerSpec::Dense { inputs, outputs } => [*outputs, *inputs],
            LayerSpec::Conv(g) => [g.out_channels, g.fan_in()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_resolves() {
        let arch = ArchSpec::mlp(&[784, 512, 512, 10]);
        let specs = arch.resolve().unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[1], LayerSpec::Dense { inputs: 512, outputs: 512 });
        assert_eq!(arch.tap_layers, vec![1, 2]);
    }

    #[test]
    fn conv_then_dense() {
        let arch = ArchSpec {
            input: InputShape { channels: 3, height: 8, width: 8 },
            layers: vec![
                LayerDef::Conv { channels: 4, kernel: 3, stride: 1, padding: 1 },
                LayerDef::Conv { channels: 6, kernel: 3, stride: 2, padding: 1 },
                LayerDef::Dense { units: 10 },
            ],
            tap_layers: vec![1, 2],
        };
        let specs = arch.resolve().unwrap();
        assert_eq!(specs[1].out_features(), 6 * 4 * 4);
        assert_eq!(specs[2], LayerSpec::Dense { inputs: 96, outputs: 10 });
    }

    #[test]
    fn rejects_bad_taps_and_layouts() {
        let mut arch = ArchSpec::mlp(&[4, 8, 3]);
        arch.tap_layers = vec![3];
        assert!(arch.resolve().is_err());
        arch.tap_layers = vec![1, 1];
        assert!(arch.resolve().is_err());
        let bad = ArchSpec {
            input: InputShape { channels: 1, height: 4, width: 4 },
            layers: vec![LayerDef::Dense { units: 4 }, LayerDef::Conv { channels: 2, kernel: 1, stride: 1, padding: 0 }],
            tap_layers: vec![],
        };
        assert!(bad.resolve().is_err());
    }
}
