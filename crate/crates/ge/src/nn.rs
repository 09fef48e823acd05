//! Layer primitives and network constructors.
//!
//! Networks are flat lists of layer specs plus named parameter tensors.
//! Constructors implement the d/f/m naming rule: encoder layer n has
//! n*f filters (GE1) or ceil(n/3)*f filters (GE0).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeError, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Act {
    Elu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    UpsampleNearest {
        factor: usize,
    },
    AvgPool {
        factor: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Activation {
        act: Act,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub label: String,
    /// Either `[n]` (latent/measurement input) or `[c, h, w]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// For autoencoder-shaped networks: number of leading layers that
    /// form the encoding half.
    pub bottleneck_split: Option<usize>,
}

impl NetworkSpec {
    /// Compose the shape rules of all layers. Errors on any
    /// inconsistency before parameters exist.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_out_shape(layer, &shape).map_err(|e| {
                GeError::Shape(format!("{} layer {i}: {e}", self.label))
            })?;
        }
        Ok(shape)
    }

    /// Parameter shapes in layer order: (name, shape, fan_in, fan_out).
    fn param_plan(&self) -> Result<Vec<(String, Vec<usize>, usize, usize)>> {
        let mut plan = Vec::new();
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv {
                    filters, kernel, ..
                } => {
                    let c = shape[0];
                    let fan_in = c * kernel * kernel;
                    let fan_out = filters * kernel * kernel;
                    plan.push((
                        format!("l{i}.w"),
                        vec![*filters, c, *kernel, *kernel],
                        fan_in,
                        fan_out,
                    ));
                    plan.push((format!("l{i}.b"), vec![*filters], 0, 0));
                }
                LayerSpec::ConvTranspose {
                    filters, kernel, ..
                } => {
                    let f = shape[0];
                    let fan_in = f * kernel * kernel;
                    let fan_out = filters * kernel * kernel;
                    plan.push((
                        format!("l{i}.w"),
                        vec![f, *filters, *kernel, *kernel],
                        fan_in,
                        fan_out,
                    ));
                    plan.push((format!("l{i}.b"), vec![*filters], 0, 0));
                }
                LayerSpec::Dense { inputs, outputs } => {
                    plan.push((
                        format!("l{i}.w"),
                        vec![*inputs, *outputs],
                        *inputs,
                        *outputs,
                    ));
                    plan.push((format!("l{i}.b"), vec![*outputs], 0, 0));
                }
                _ => {}
            }
            shape = layer_out_shape(layer, &shape)
                .map_err(|e| GeError::Shape(format!("{} layer {i}: {e}", self.label)))?;
        }
        Ok(plan)
    }
}

fn layer_out_shape(layer: &LayerSpec, shape: &[usize]) -> Result<Vec<usize>> {
    match layer {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => {
            if shape.len() != 3 {
                return Err(GeError::Shape(format!(
                    "conv expects [C,H,W], got {shape:?}"
                )));
            }
            let (ho, wo) =
                crate::tensor::conv_out_size(shape[1], shape[2], *kernel, *stride, *padding)?;
            Ok(vec![*filters, ho, wo])
        }
        LayerSpec::ConvTranspose {
            filters,
            kernel,
            stride,
            padding,
        } => {
            if shape.len() != 3 {
                return Err(GeError::Shape(format!(
                    "conv_transpose expects [C,H,W], got {shape:?}"
                )));
            }
            let (ho, wo) = crate::tensor::conv_transpose_out_size(
                shape[1], shape[2], *kernel, *stride, *padding,
            )?;
            Ok(vec![*filters, ho, wo])
        }
        LayerSpec::UpsampleNearest { factor } => {
            if shape.len() != 3 {
                return Err(GeError::Shape("upsample expects [C,H,W]".into()));
            }
            Ok(vec![shape[0], shape[1] * factor, shape[2] * factor])
        }
        LayerSpec::AvgPool { factor } => {
            if shape.len() != 3 {
                return Err(GeError::Shape("avgpool expects [C,H,W]".into()));
            }
            if shape[1] % factor != 0 || shape[2] % factor != 0 {
                return Err(GeError::Shape(format!(
                    "avgpool dims {}x{} not divisible by {factor}",
                    shape[1], shape[2]
                )));
            }
            Ok(vec![shape[0], shape[1] / factor, shape[2] / factor])
        }
        LayerSpec::Dense { inputs, outputs } => {
            let n: usize = shape.iter().product();
            if n != *inputs {
                return Err(GeError::Shape(format!(
                    "dense expects {inputs} inputs, got shape {shape:?}"
                )));
            }
            Ok(vec![*outputs])
        }
        LayerSpec::Reshape { shape: target } => {
            let n: usize = shape.iter().product();
            let m: usize = target.iter().product();
            if n != m {
                return Err(GeError::Shape(format!(
                    "cannot reshape {shape:?} into {target:?}"
                )));
            }
            Ok(target.clone())
        }
        LayerSpec::Activation { .. } => Ok(shape.to_vec()),
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// A network: spec plus parameter tensors. Frozen networks refuse
/// parameter updates and register their parameters as constants.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Param>,
    pub frozen: bool,
}

impl Network {
    /// Allocate parameters for `spec`: weights uniform(-s, s) with
    /// s = sqrt(6 / (fan_in + fan_out)), biases zero, fully seeded.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.output_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, shape, fan_in, fan_out) in spec.param_plan()? {
            let n: usize = shape.iter().product();
            let value = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..n).map(|_| rng.gen_range(-s..s)).collect();
                Tensor::new(shape, data)?
            };
            params.push(Param {
                name,
                value,
                trainable: true,
            });
        }
        Ok(Network {
            spec,
            params,
            frozen: false,
        })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.spec.output_shape()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Register all parameters on a tape, returning leaf handles in
    /// `self.params` order. Frozen networks register constants.
    pub fn register(&self, tape: &mut Tape) -> Vec<Tensor> {
        self.register_as(tape, !self.frozen)
    }

    /// Register with an explicit trainability override (e.g. the
    /// discriminator held constant during a generator step).
    pub fn register_as(&self, tape: &mut Tape, trainable: bool) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| tape.leaf(&p.value, p.trainable && trainable))
            .collect()
    }

    /// Forward pass using previously registered parameter handles.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        handles: &[Tensor],
        input: &Tensor,
    ) -> Result<Tensor> {
        if input.shape != self.spec.input_shape {
            return Err(GeError::Shape(format!(
                "{}: input shape {:?} does not match spec {:?}",
                self.spec.label, input.shape, self.spec.input_shape
            )));
        }
        self.forward_layers(tape, handles, input, 0..self.spec.layers.len())
    }

    /// One-shot forward: registers parameters and applies all layers.
    pub fn forward(&self, tape: &mut Tape, input: &Tensor) -> Result<Tensor> {
        let handles = self.register(tape);
        self.forward_with(tape, &handles, input)
    }

    fn forward_layers(
        &self,
        tape: &mut Tape,
        handles: &[Tensor],
        input: &Tensor,
        range: std::ops::Range<usize>,
    ) -> Result<Tensor> {
        let mut x = input.clone();
        let mut pi = self
            .spec
            .layers
            .iter()
            .take(range.start)
            .map(layer_param_count)
            .sum::<usize>();
        for layer in &self.spec.layers[range] {
            x = match layer {
                LayerSpec::Conv {
                    stride, padding, ..
                } => {
                    let out =
                        tape.conv2d(&x, &handles[pi], &handles[pi + 1], *stride, *padding)?;
                    pi += 2;
                    out
                }
                LayerSpec::ConvTranspose {
                    stride, padding, ..
                } => {
                    let out = tape.conv2d_transpose(
                        &x,
                        &handles[pi],
                        &handles[pi + 1],
                        *stride,
                        *padding,
                    )?;
                    pi += 2;
                    out
                }
                LayerSpec::UpsampleNearest { factor } => tape.upsample_nearest(&x, *factor)?,
                LayerSpec::AvgPool { factor } => tape.avgpool(&x, *factor)?,
                LayerSpec::Dense { inputs, outputs } => {
                    let row = tape.reshape(&x, vec![1, *inputs])?;
                    let prod = tape.matmul(&row, &handles[pi])?;
                    let flat = tape.reshape(&prod, vec![*outputs])?;
                    let out = tape.add(&flat, &handles[pi + 1])?;
                    pi += 2;
                    out
                }
                LayerSpec::Reshape { shape } => tape.reshape(&x, shape.clone())?,
                LayerSpec::Activation { act } => match act {
                    Act::Elu => tape.elu(&x)?,
                    Act::Tanh => tape.tanh(&x)?,
                    Act::Sigmoid => tape.sigmoid(&x)?,
                },
            };
        }
        Ok(x)
    }

    /// Forward through the encoding half of an autoencoder-shaped network.
    pub fn forward_encoding_half(&self, tape: &mut Tape, input: &Tensor) -> Result<Tensor> {
        let split = self.spec.bottleneck_split.ok_or_else(|| {
            GeError::Contract(format!("{} has no bottleneck split", self.spec.label))
        })?;
        let handles = self.register(tape);
        self.forward_layers(tape, &handles, input, 0..split)
    }
}

fn layer_param_count(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } | LayerSpec::Dense { .. } => 2,
        _ => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderVariant {
    Ge0,
    Ge1,
}

/// Filter count of the n-th (1-based) encoder conv layer.
pub fn encoder_filters(variant: EncoderVariant, n: usize, f: usize) -> usize {
    match variant {
        EncoderVariant::Ge1 => n * f,
        EncoderVariant::Ge0 => n.div_ceil(3) * f,
    }
}

fn encoder_layers(
    variant: EncoderVariant,
    d: usize,
    f: usize,
    m: usize,
    input_shape: &[usize],
) -> Result<Vec<LayerSpec>> {
    if d < 1 || f < 1 || m < 1 {
        return Err(GeError::Contract("encoder needs d, f, m >= 1".into()));
    }
    if input_shape.len() != 3 {
        return Err(GeError::Shape(format!(
            "encoder input must be [C,H,W], got {input_shape:?}"
        )));
    }
    let (mut h, mut w) = (input_shape[1], input_shape[2]);
    let mut layers = Vec::new();
    let mut filters = input_shape[0];
    for n in 1..=d {
        filters = encoder_filters(variant, n, f);
        layers.push(LayerSpec::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: 1,
        });
        layers.push(LayerSpec::Activation { act: Act::Elu });
        // downsample after every second conv
        if n % 2 == 0 {
            if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
                return Err(GeError::Shape(format!(
                    "input {:?} too small for {} downsamplings",
                    input_shape,
                    d / 2
                )));
            }
            layers.push(LayerSpec::AvgPool { factor: 2 });
            h /= 2;
            w /= 2;
        }
    }
    let flat = filters * h * w;
    layers.push(LayerSpec::Reshape { shape: vec![flat] });
    layers.push(LayerSpec::Dense {
        inputs: flat,
        outputs: m,
    });
    Ok(layers)
}

/// Encoder with d conv layers following the variant's filter rule and a
/// final linear map to an m-vector. Deterministic in its arguments.
pub fn build_encoder(
    variant: EncoderVariant,
    d: usize,
    f: usize,
    m: usize,
    input_shape: (usize, usize, usize),
    seed: u64,
) -> Result<Network> {
    let input_shape = vec![input_shape.0, input_shape.1, input_shape.2];
    let layers = encoder_layers(variant, d, f, m, &input_shape)?;
    let label = match variant {
        EncoderVariant::Ge0 => format!("ge0_encoder(d={d},f={f},m={m})"),
        EncoderVariant::Ge1 => format!("ge1_encoder(d={d},f={f},m={m})"),
    };
    Network::init(
        NetworkSpec {
            label,
            input_shape,
            layers,
            bottleneck_split: None,
        },
        seed,
    )
}

fn generator_layers(
    latent_dim: usize,
    conv_layers: usize,
    base_filters: usize,
    output_shape: (usize, usize, usize),
) -> Result<(Vec<LayerSpec>, Vec<usize>)> {
    let (c, h, w) = output_shape;
    if latent_dim < 1 || conv_layers < 1 || base_filters < 1 {
        return Err(GeError::Contract(
            "generator needs latent_dim, conv_layers, base_filters >= 1".into(),
        ));
    }
    let ups = conv_layers / 2;
    let div = 1usize << ups;
    if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
        return Err(GeError::Shape(format!(
            "output {h}x{w} not reachable with {ups} doublings"
        )));
    }
    let (ih, iw) = (h / div, w / div);
    let mut layers = vec![
        LayerSpec::Dense {
            inputs: latent_dim,
            outputs: base_filters * ih * iw,
        },
        LayerSpec::Reshape {
            shape: vec![base_filters, ih, iw],
        },
        LayerSpec::Activation { act: Act::Elu },
    ];
    // one upsampling every two convolutions, all before the output conv
    let mut done = 0;
    for i in 1..conv_layers {
        layers.push(LayerSpec::Conv {
            filters: base_filters,
            kernel: 3,
            stride: 1,
            padding: 1,
        });
        layers.push(LayerSpec::Activation { act: Act::Elu });
        if i % 2 == 0 && done < ups {
            layers.push(LayerSpec::UpsampleNearest { factor: 2 });
            done += 1;
        }
    }
    while done < ups {
        layers.push(LayerSpec::UpsampleNearest { factor: 2 });
        done += 1;
    }
    layers.push(LayerSpec::Conv {
        filters: c,
        kernel: 3,
        stride: 1,
        padding: 1,
    });
    layers.push(LayerSpec::Activation { act: Act::Tanh });
    Ok((layers, vec![latent_dim]))
}

/// Generator: dense from latent to an initial feature map, conv stack
/// with one upsampling per two convolutions, tanh output in [-1, 1].
pub fn build_generator(
    latent_dim: usize,
    conv_layers: usize,
    base_filters: usize,
    output_shape: (usize, usize, usize),
    seed: u64,
) -> Result<Network> {
    let (layers, input_shape) =
        generator_layers(latent_dim, conv_layers, base_filters, output_shape)?;
    Network::init(
        NetworkSpec {
            label: format!("generator(k={latent_dim})"),
            input_shape,
            layers,
            bottleneck_split: None,
        },
        seed,
    )
}

/// Decoder: same construction as the generator with the measurement
/// width m as input. Kept deliberately weaker than the encoder.
pub fn build_decoder(
    m: usize,
    conv_layers: usize,
    base_filters: usize,
    output_shape: (usize, usize, usize),
    seed: u64,
) -> Result<Network> {
    let (layers, input_shape) = generator_layers(m, conv_layers, base_filters, output_shape)?;
    Network::init(
        NetworkSpec {
            label: format!("decoder(m={m})"),
            input_shape,
            layers,
            bottleneck_split: None,
        },
        seed,
    )
}

/// BEGAN discriminator: a GE0-rule encoder to an m-dim bottleneck
/// followed by a decoder back to the image, with the split recorded.
pub fn build_discriminator(
    d: usize,
    f: usize,
    m: usize,
    dec_layers: usize,
    dec_filters: usize,
    image_shape: (usize, usize, usize),
    seed: u64,
) -> Result<Network> {
    let input_shape = vec![image_shape.0, image_shape.1, image_shape.2];
    let mut layers = encoder_layers(EncoderVariant::Ge0, d, f, m, &input_shape)?;
    let split = layers.len();
    let (dec, _) = generator_layers(m, dec_layers, dec_filters, image_shape)?;
    layers.extend(dec);
    Network::init(
        NetworkSpec {
            label: format!("discriminator(d={d},f={f},m={m})"),
            input_shape,
            layers,
            bottleneck_split: Some(split),
        },
        seed,
    )
}

/// Split off the frozen encoding half of an autoencoder-shaped network.
pub fn extract_encoder(d: &Network) -> Result<Network> {
    let split = d.spec.bottleneck_split.ok_or_else(|| {
        GeError::Contract(format!(
            "{} is not autoencoder-shaped (no bottleneck split)",
            d.spec.label
        ))
    })?;
    let layers: Vec<LayerSpec> = d.spec.layers[..split].to_vec();
    let n_params: usize = layers.iter().map(layer_param_count).sum();
    let spec = NetworkSpec {
        label: format!("{}::encoder", d.spec.label),
        input_shape: d.spec.input_shape.clone(),
        layers,
        bottleneck_split: None,
    };
    spec.output_shape()?;
    Ok(Network {
        spec,
        params: d.params[..n_params].to_vec(),
        frozen: true,
    })
}
