use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Conv3x3,
    SoftmaxHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// One layer above the input. Written in configs as `dense:300`,
/// `conv:90`, `head:9`, optionally suffixed with `:linear` or `:relu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(width: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            width,
            activation: Activation::Relu,
        }
    }

    pub fn conv(channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv3x3,
            width: channels,
            activation: Activation::Relu,
        }
    }

    pub fn head(classes: usize) -> Self {
        LayerSpec {
            kind: LayerKind::SoftmaxHead,
            width: classes,
            activation: Activation::None,
        }
    }

    pub fn linear(mut self) -> Self {
        self.activation = Activation::None;
        self
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            LayerKind::Dense => "dense",
            LayerKind::Conv3x3 => "conv",
            LayerKind::SoftmaxHead => return write!(f, "head:{}", self.width),
        };
        write!(f, "{kind}:{}", self.width)?;
        if self.activation == Activation::None {
            write!(f, ":linear")?;
        }
        Ok(())
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Config(format!("layer {s:?}: expected kind:width[:relu|linear]"));
        if parts.len() < 2 || parts.len() > 3 {
            return Err(bad());
        }
        let width: usize = parts[1].parse().map_err(|_| bad())?;
        let mut layer = match parts[0] {
            "dense" | "fc" => LayerSpec::dense(width),
            "conv" | "conv3x3" => LayerSpec::conv(width),
            "head" | "softmax" => LayerSpec::head(width),
            _ => return Err(bad()),
        };
        match parts.get(2) {
            None => {}
            Some(&"relu") if layer.kind != LayerKind::SoftmaxHead => layer.activation = Activation::Relu,
            Some(&"linear") | Some(&"none") => layer.activation = Activation::None,
            Some(_) => return Err(bad()),
        }
        Ok(layer)
    }
}

impl TryFrom<String> for LayerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LayerSpec> for String {
    fn from(l: LayerSpec) -> String {
        l.to_string()
    }
}

/// What the reconstruction cost compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReconTarget {
    /// Both `z` and `ẑ` mapped through the clean batch mean/std of `z`.
    #[default]
    Normalized,
    /// Raw squared distance.
    Raw,
}

/// Full architecture of a ladder network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    /// Per-sample input shape: `[bands]` or `[window, window, bands]`.
    #[serde(default)]
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub noise_std: f64,
    /// Denoising weight per level, index 0 being the input.
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub recon_target: ReconTarget,
}

impl LadderSpec {
    /// Fully-connected ladder on flat spectra.
    pub fn fc(bands: usize, hidden: &[usize], classes: usize, noise_std: f64, lambdas: Vec<f64>) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&w| LayerSpec::dense(w)).collect();
        layers.push(LayerSpec::head(classes));
        LadderSpec {
            input_shape: vec![bands],
            layers,
            noise_std,
            lambdas,
            recon_target: ReconTarget::Normalized,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    /// Per-sample shape of every representation level, input first.
    pub fn level_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape {:?} must be nonempty and positive",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().unwrap();
            let next = match layer.kind {
                LayerKind::Conv3x3 => {
                    if prev.len() != 3 {
                        return Err(Error::Config(format!(
                            "layer {}: conv needs a window input, level shape is {prev:?}",
                            i + 1
                        )));
                    }
                    if prev[0] < 3 || prev[1] < 3 {
                        return Err(Error::Config(format!(
                            "layer {}: 3x3 kernel larger than {}x{} level",
                            i + 1,
                            prev[0],
                            prev[1]
                        )));
                    }
                    vec![prev[0] - 2, prev[1] - 2, layer.width]
                }
                LayerKind::Dense | LayerKind::SoftmaxHead => vec![layer.width],
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("ladder needs at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.width == 0 {
                return Err(Error::Config(format!("layer {} has width 0", i + 1)));
            }
            let last = i + 1 == self.layers.len();
            if last != (l.kind == LayerKind::SoftmaxHead) {
                return Err(Error::Config(
                    "the final layer, and only the final layer, must be a softmax head".into(),
                ));
            }
        }
        if self.num_classes() < 2 {
            return Err(Error::Config("softmax head needs at least 2 classes".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if self.lambdas.len() != self.depth() + 1 {
            return Err(Error::Config(format!(
                "{} lambdas given for {} representation levels",
                self.lambdas.len(),
                self.depth() + 1
            )));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("lambda {l} must be finite and >= 0")));
        }
        self.level_shapes().map(|_| ())
    }

    /// Lowest level whose denoising cost is active, if any.
    pub fn lowest_active_level(&self) -> Option<usize> {
        self.lambdas.iter().position(|&l| l > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_spec() -> LadderSpec {
        LadderSpec {
            input_shape: vec![7, 7, 15],
            layers: vec![
                LayerSpec::conv(90),
                LayerSpec::conv(30),
                LayerSpec::conv(15),
                LayerSpec::dense(30),
                LayerSpec::head(9),
            ],
            noise_std: 0.5,
            lambdas: vec![0., 0., 0., 0., 0., 0.42],
            recon_target: ReconTarget::Normalized,
        }
    }

    #[test]
    fn conv_level_shapes() {
        let s = conv_spec();
        s.validate().unwrap();
        assert_eq!(
            s.level_shapes().unwrap(),
            vec![
                vec![7, 7, 15],
                vec![5, 5, 90],
                vec![3, 3, 30],
                vec![1, 1, 15],
                vec![30],
                vec![9]
            ]
        );
        assert_eq!(s.lowest_active_level(), Some(5));
    }

    #[test]
    fn lambda_count_must_match_levels() {
        let mut s = conv_spec();
        s.lambdas.pop();
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn head_must_be_last() {
        let mut s = LadderSpec::fc(4, &[3], 2, 0.1, vec![1., 1., 1.]);
        s.validate().unwrap();
        s.layers.swap(0, 1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn conv_after_dense_rejected() {
        let mut s = conv_spec();
        s.layers.insert(3, LayerSpec::conv(4));
        s.lambdas.push(0.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn negative_noise_or_lambda_rejected() {
        let mut s = LadderSpec::fc(4, &[3], 2, -0.1, vec![1., 1., 1.]);
        assert!(s.validate().is_err());
        s.noise_std = 0.1;
        s.lambdas[1] = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn layer_strings_round_trip() {
        for s in ["dense:300", "conv:90", "head:9", "dense:10:linear"] {
            let l: LayerSpec = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
        }
        assert!("pool:3".parse::<LayerSpec>().is_err());
        assert!("dense:x".parse::<LayerSpec>().is_err());
    }
}
