use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample shape `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Valid (unpadded) 2-D convolution. Weights are `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Elements of one filter, `in * k * k`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if height < self.kernel || width < self.kernel || self.stride == 0 {
            return None;
        }
        Some((
            (height - self.kernel) / self.stride + 1,
            (width - self.kernel) / self.stride + 1,
        ))
    }
}

/// Fully connected layer. Weights are `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    /// Channel-major flattening: position `c * h * w + y * w + x`.
    Flatten,
    Linear(Linear),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "fc",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(c) => {
                if c.in_channels != input.channels {
                    return Err(Error::invalid(format!(
                        "conv expects {} input channels, producer gives {}",
                        c.in_channels, input.channels
                    )));
                }
                let (h, w) = c.output_hw(input.height, input.width).ok_or_else(|| {
                    Error::invalid(format!(
                        "conv kernel {} does not fit {}x{} input",
                        c.kernel, input.height, input.width
                    ))
                })?;
                Ok(Shape::new(c.out_channels, h, w))
            }
            Layer::Relu => Ok(input),
            Layer::MaxPool { size, stride } => {
                if *size == 0 || *stride == 0 || input.height < *size || input.width < *size {
                    return Err(Error::invalid("pooling window does not fit input"));
                }
                Ok(Shape::new(
                    input.channels,
                    (input.height - size) / stride + 1,
                    (input.width - size) / stride + 1,
                ))
            }
            Layer::Flatten => Ok(Shape::new(input.len(), 1, 1)),
            Layer::Linear(l) => {
                if input.height != 1 || input.width != 1 || input.channels != l.in_features {
                    return Err(Error::invalid(format!(
                        "fc expects {} flat inputs, producer gives {:?}",
                        l.in_features, input
                    )));
                }
                Ok(Shape::new(l.out_features, 1, 1))
            }
        }
    }
}

/// Ordered plain CNN: layers are applied in sequence to an input of fixed
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDef {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl NetworkDef {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input, layers };
        net.validate()?;
        Ok(net)
    }

    /// Checks shape compatibility and parameter buffer sizes.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if c.weight.len() != c.out_channels * c.filter_len()
                        || c.bias.len() != c.out_channels
                    {
                        return Err(Error::invalid(format!(
                            "layer {i}: conv parameter sizes are inconsistent"
                        )));
                    }
                    if c.out_channels == 0 {
                        return Err(Error::invalid(format!("layer {i}: conv has no filters")));
                    }
                }
                Layer::Linear(l)
                    if l.weight.len() != l.in_features * l.out_features
                        || l.bias.len() != l.out_features =>
                {
                    return Err(Error::invalid(format!(
                        "layer {i}: fc parameter sizes are inconsistent"
                    )));
                }
                _ => {}
            }
        }
        self.shapes().map(|_| ())
    }

    /// Input shape of every layer followed by the network output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut shape = self.input;
        shapes.push(shape);
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::invalid(format!("layer {i} ({}): {e}", layer.kind_name())))?;
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("shapes include the input"))
    }

    /// Positions in `layers` of the convolutional layers, in order. The
    /// index into this list is the conv layer id used by the pruner.
    pub fn conv_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| matches!(l, Layer::Conv(_)).then_some(i))
            .collect()
    }

    pub fn conv(&self, conv_id: usize) -> Option<&Conv2d> {
        let pos = *self.conv_positions().get(conv_id)?;
        match &self.layers[pos] {
            Layer::Conv(c) => Some(c),
            _ => None,
        }
    }

    pub fn filter_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c.out_channels),
                _ => None,
            })
            .collect()
    }

    /// Layer whose output is captured for conv `conv_id`: the ReLU right after
    /// the conv when present, else the conv itself.
    pub fn capture_position(&self, conv_id: usize) -> Option<usize> {
        let pos = *self.conv_positions().get(conv_id)?;
        match self.layers.get(pos + 1) {
            Some(Layer::Relu) => Some(pos + 1),
            _ => Some(pos),
        }
    }

    pub fn classes(&self) -> Result<usize> {
        Ok(self.output_shape()?.len())
    }

    /// Total parameter count including biases.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weight.len() + c.bias.len(),
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Kaiming-uniform fan-in initialization with leaky-ReLU slope
    /// `negative_slope`: weights in `±sqrt(6 / ((1 + a^2) fan_in))`, zero
    /// biases. `a = 0` is the plain ReLU gain; [`DEFAULT_NEGATIVE_SLOPE`]
    /// gives `±1/sqrt(fan_in)`.
    pub fn init_kaiming_uniform(&mut self, seed: u64, negative_slope: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain_sq = 2.0 / (1.0 + negative_slope * negative_slope);
        for layer in &mut self.layers {
            let (weight, bias, fan_in) = match layer {
                Layer::Conv(c) => {
                    let fan_in = c.filter_len();
                    (&mut c.weight, &mut c.bias, fan_in)
                }
                Layer::Linear(l) => (&mut l.weight, &mut l.bias, l.in_features),
                _ => continue,
            };
            let bound = (3.0 * gain_sq / fan_in as f64).sqrt();
            for w in weight.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// [`NetworkDef::init_kaiming_uniform`] with [`DEFAULT_NEGATIVE_SLOPE`].
    pub fn init_kaiming(&mut self, seed: u64) {
        self.init_kaiming_uniform(seed, DEFAULT_NEGATIVE_SLOPE);
    }
}

/// `sqrt(5)`.
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 2.236_067_977_499_79;

/// Filter counts of the two LeNet-5 convolutional layers.
pub const LENET5_FILTERS: [usize; 2] = [20, 50];

/// LeNet-5 for 28x28 grayscale input:
/// conv(1→20, 5x5) → ReLU → maxpool 2 → conv(20→50, 5x5) → ReLU → maxpool 2
/// → flatten(800) → fc(800→500) → ReLU → fc(500→10). Weights are zero; call
/// [`NetworkDef::init_kaiming`] to initialize.
pub fn build_lenet5() -> NetworkDef {
    build_lenet5_with(LENET5_FILTERS[0], LENET5_FILTERS[1])
}

/// LeNet-5 with custom conv widths (used for pruned configurations).
pub fn build_lenet5_with(conv1: usize, conv2: usize) -> NetworkDef {
    NetworkDef::new(
        Shape::new(1, 28, 28),
        vec![
            Layer::Conv(Conv2d::zeros(1, conv1, 5)),
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::Conv(Conv2d::zeros(conv1, conv2, 5)),
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::Flatten,
            Layer::Linear(Linear::zeros(conv2 * 16, 500)),
            Layer::Relu,
            Layer::Linear(Linear::zeros(500, 10)),
        ],
    )
    .expect("LeNet-5 definition is shape-consistent")
}
