//! The segmentation generator `G` and the fully-convolutional discriminators.
//!
//! A [`Network`] is a flat list of convolution layers, each optionally
//! preceded by a bilinear resize, followed by an activation, an optional
//! resize of its output and an optional additive skip from an earlier layer.
//! That is enough to express both the encoder–decoder generator and the
//! five-layer discriminators whose one-channel output is resized back to the
//! input resolution.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::optim::Parameter;
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Sigmoid,
}

/// Bilinear resize target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    None,
    /// Spatial size of an earlier layer's output.
    MatchLayer(usize),
    /// Spatial size of the network input.
    MatchInput,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub resize_input: Resample,
    pub activation: Activation,
    pub resize_output: Resample,
    /// Output of this earlier layer is added after activation and resize.
    pub skip_from: Option<usize>,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f64,
    pub upsample_to_input: bool,
}

impl DiscriminatorSpec {
    /// Ground-truth vs generated discriminator.
    pub fn d1() -> Self {
        Self::with_channels(&[64, 64, 128, 128, 1])
    }

    /// Source vs target discriminator.
    pub fn d2() -> Self {
        Self::with_channels(&[48, 48, 96, 96, 1])
    }

    pub fn with_channels(channels: &[usize]) -> Self {
        Self {
            channels: channels.to_vec(),
            kernel: 4,
            stride: 2,
            padding: 1,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            upsample_to_input: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub role: Role,
    pub layers: Vec<LayerSpec>,
    /// Weight then bias for every layer, in layer order.
    pub params: Vec<Parameter>,
}

/// Tape handles for a network's parameters within one graph.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn kaiming(shape: &[usize], fan_in: usize, slope: f64, rng: &mut rng::SeededRng) -> Tensor {
    let std = libm::sqrt(2.0 / ((1.0 + slope * slope) * fan_in as f64));
    Tensor::from_fn(shape, |_| std * rng::normal(rng))
}

impl Network {
    fn from_layers(role: Role, layers: Vec<LayerSpec>, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut params = Vec::with_capacity(layers.len() * 2);
        for layer in &layers {
            let slope = match layer.activation {
                Activation::LeakyRelu(s) => s,
                _ => 1.0,
            };
            let fan_in = layer.in_channels * layer.kernel * layer.kernel;
            let shape = [layer.out_channels, layer.in_channels, layer.kernel, layer.kernel];
            params.push(Parameter::new(
                format!("{}.weight", layer.name),
                kaiming(&shape, fan_in, slope, &mut rng),
            ));
            params.push(Parameter::new(
                format!("{}.bias", layer.name),
                Tensor::zeros(&[layer.out_channels]),
            ));
        }
        Self { role, layers, params }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape`, differentiable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        Binding {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), trainable))
                .collect(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, binding: &Binding, input: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(input).dims4()?;
        if c != self.in_channels() {
            return Err(shape_err(
                "Network::forward",
                format!("input has {c} channels, first layer expects {}", self.in_channels()),
            ));
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            x = resize(tape, x, layer.resize_input, &outputs, (h, w))?;
            x = tape.conv2d(
                x,
                binding.vars[2 * i],
                binding.vars[2 * i + 1],
                layer.stride,
                layer.padding,
            )?;
            x = match layer.activation {
                Activation::Identity => x,
                Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
                Activation::Sigmoid => tape.sigmoid(x),
            };
            x = resize(tape, x, layer.resize_output, &outputs, (h, w))?;
            if let Some(j) = layer.skip_from {
                x = tape.add(x, outputs[j])?;
            }
            outputs.push(x);
        }
        Ok(x)
    }

    /// Forward pass on a throwaway tape with frozen parameters.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &binding, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn accumulate_grads(&mut self, binding: &Binding, grads: &Gradients) -> Result<()> {
        for (param, &var) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.get(var) {
                param.accumulate(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }
}

fn resize(tape: &mut Tape, x: Var, target: Resample, outputs: &[Var], input_hw: (usize, usize)) -> Result<Var> {
    let (th, tw) = match target {
        Resample::None => return Ok(x),
        Resample::MatchInput => input_hw,
        Resample::MatchLayer(j) => {
            let [_, _, h, w] = tape.value(outputs[j]).dims4()?;
            (h, w)
        }
    };
    let [_, _, h, w] = tape.value(x).dims4()?;
    if (h, w) == (th, tw) {
        return Ok(x);
    }
    tape.bilinear_upsample(x, th, tw)
}

/// Three stride-2 encoder stages, three resize+conv decoder stages with
/// additive skips, logits at input resolution.
pub fn build_generator(num_classes: usize, base_width: usize, seed: u64) -> Result<Network> {
    build_generator_with_slope(num_classes, base_width, seed, DEFAULT_LEAKY_SLOPE)
}

pub fn build_generator_with_slope(num_classes: usize, base_width: usize, seed: u64, slope: f64) -> Result<Network> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "generator needs at least 2 classes, got {num_classes}"
        )));
    }
    if base_width < 4 {
        return Err(Error::InvalidArgument(format!(
            "generator base width must be at least 4, got {base_width}"
        )));
    }
    let act = Activation::LeakyRelu(slope);
    let conv = |name, cin, cout, stride, resize_input, activation, skip_from| LayerSpec {
        name,
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride,
        padding: 1,
        resize_input,
        activation,
        resize_output: Resample::None,
        skip_from,
    };
    let (w1, w2, w4) = (base_width, 2 * base_width, 4 * base_width);
    let layers = alloc::vec![
        conv("enc1", 3, w1, 2, Resample::None, act, None),
        conv("enc2", w1, w2, 2, Resample::None, act, None),
        conv("enc3", w2, w4, 2, Resample::None, act, None),
        conv("dec1", w4, w2, 1, Resample::MatchLayer(1), act, Some(1)),
        conv("dec2", w2, w1, 1, Resample::MatchLayer(0), act, Some(0)),
        conv(
            "dec3",
            w1,
            num_classes,
            1,
            Resample::MatchInput,
            Activation::Identity,
            None
        ),
    ];
    Ok(Network::from_layers(Role::Generator, layers, seed))
}

const DISCRIMINATOR_NAMES: [&str; 5] = ["conv1", "conv2", "conv3", "conv4", "conv5"];

/// Five 4×4 stride-2 convolutions, leaky ReLU between, sigmoid at the end,
/// resized back to the input resolution.
pub fn build_discriminator(spec: &DiscriminatorSpec, in_channels: usize, seed: u64) -> Result<Network> {
    if spec.channels.len() != 5 {
        return Err(Error::InvalidArgument(format!(
            "discriminator needs exactly 5 layers, got {}",
            spec.channels.len()
        )));
    }
    if spec.channels[4] != 1 {
        return Err(Error::InvalidArgument(format!(
            "discriminator output must have 1 channel, got {}",
            spec.channels[4]
        )));
    }
    if spec.channels.contains(&0) || in_channels == 0 {
        return Err(Error::InvalidArgument("zero-width discriminator layer".into()));
    }
    let mut cin = in_channels;
    let layers = spec
        .channels
        .iter()
        .enumerate()
        .map(|(i, &cout)| {
            let last = i == 4;
            let layer = LayerSpec {
                name: DISCRIMINATOR_NAMES[i],
                in_channels: cin,
                out_channels: cout,
                kernel: spec.kernel,
                stride: spec.stride,
                padding: spec.padding,
                resize_input: Resample::None,
                activation: if last {
                    Activation::Sigmoid
                } else {
                    Activation::LeakyRelu(spec.leaky_slope)
                },
                resize_output: if last && spec.upsample_to_input {
                    Resample::MatchInput
                } else {
                    Resample::None
                },
                skip_from: None,
            };
            cin = cout;
            layer
        })
        .collect();
    Ok(Network::from_layers(Role::Discriminator, layers, seed))
}
