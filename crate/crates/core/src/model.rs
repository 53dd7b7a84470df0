//! Network description, shape inference and weight binding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conv_map::output_dims;
use crate::error::{Error, Result};
use crate::io::weights::WeightStore;
use crate::reference::{Activation, BnParams, Dense, DEFAULT_BN_EPS};
use crate::tensor::Tensor;

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_eps() -> f64 {
    DEFAULT_BN_EPS
}

/// One layer of a [`NetworkSpec`]. Parameterized layers name their weight
/// tensors `<name>.<param>` in the weight store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    DepthwiseConv {
        name: String,
        channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    PointwiseConv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Batchnorm {
        name: String,
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Relu {},
    HardSigmoid {},
    HardSwish {},
    Gap {},
    Fc {
        name: String,
        in_features: usize,
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    SeBlock {
        name: String,
        channels: usize,
        squeeze: usize,
    },
    /// Adds the tensor that entered layer `from` to the current tensor.
    ResidualAdd {
        from: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::DepthwiseConv { .. } => "depthwise_conv",
            LayerSpec::PointwiseConv { .. } => "pointwise_conv",
            LayerSpec::Batchnorm { .. } => "batchnorm",
            LayerSpec::Relu {} => "relu",
            LayerSpec::HardSigmoid {} => "hard_sigmoid",
            LayerSpec::HardSwish {} => "hard_swish",
            LayerSpec::Gap {} => "gap",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::SeBlock { .. } => "se_block",
            LayerSpec::ResidualAdd { .. } => "residual_add",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv { name, .. }
            | LayerSpec::DepthwiseConv { name, .. }
            | LayerSpec::PointwiseConv { name, .. }
            | LayerSpec::Batchnorm { name, .. }
            | LayerSpec::Fc { name, .. }
            | LayerSpec::SeBlock { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            LayerSpec::Relu {} => Some(Activation::Relu),
            LayerSpec::HardSigmoid {} => Some(Activation::HardSigmoid),
            LayerSpec::HardSwish {} => Some(Activation::HardSwish),
            _ => None,
        }
    }

    /// Weight tensors this layer reads, with their expected shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        match self {
            LayerSpec::Conv {
                name,
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                out.push((
                    format!("{name}.weight"),
                    vec![*out_channels, *in_channels, kernel[0], kernel[1]],
                ));
                if *bias {
                    out.push((format!("{name}.bias"), vec![*out_channels]));
                }
            }
            LayerSpec::DepthwiseConv {
                name,
                channels,
                kernel,
                bias,
                ..
            } => {
                out.push((
                    format!("{name}.weight"),
                    vec![*channels, kernel[0], kernel[1]],
                ));
                if *bias {
                    out.push((format!("{name}.bias"), vec![*channels]));
                }
            }
            LayerSpec::PointwiseConv {
                name,
                in_channels,
                out_channels,
                bias,
            } => {
                out.push((
                    format!("{name}.weight"),
                    vec![*out_channels, *in_channels, 1, 1],
                ));
                if *bias {
                    out.push((format!("{name}.bias"), vec![*out_channels]));
                }
            }
            LayerSpec::Batchnorm { name, channels, .. } => {
                for p in ["mean", "var", "gamma", "beta"] {
                    out.push((format!("{name}.{p}"), vec![*channels]));
                }
            }
            LayerSpec::Fc {
                name,
                in_features,
                out_features,
                bias,
            } => {
                out.push((format!("{name}.weight"), vec![*out_features, *in_features]));
                if *bias {
                    out.push((format!("{name}.bias"), vec![*out_features]));
                }
            }
            LayerSpec::SeBlock {
                name,
                channels,
                squeeze,
            } => {
                out.push((format!("{name}.fc1.weight"), vec![*squeeze, *channels]));
                out.push((format!("{name}.fc1.bias"), vec![*squeeze]));
                out.push((format!("{name}.fc2.weight"), vec![*channels, *squeeze]));
                out.push((format!("{name}.fc2.bias"), vec![*channels]));
            }
            _ => {}
        }
        out
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(name) => write!(f, "{} `{name}`", self.kind()),
            None => f.write_str(self.kind()),
        }
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Chw(c, h, w) => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }

    fn channels(&self) -> usize {
        match *self {
            Shape::Chw(c, _, _) | Shape::Flat(c) => c,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Chw(c, h, w) => write!(f, "({c}, {h}, {w})"),
            Shape::Flat(n) => write!(f, "({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn input(&self) -> Shape {
        let [c, h, w] = self.input_shape;
        Shape::Chw(c, h, w)
    }

    /// Shapes entering each layer, followed by the network output shape.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        if self.layers.is_empty() {
            return Err(Error::Config("no layers".into()));
        }
        if self.class_count == 0 {
            return Err(Error::Config("class_count must be positive".into()));
        }
        let mut shapes = vec![self.input()];
        for (idx, layer) in self.layers.iter().enumerate() {
            let cur = shapes[idx];
            let mismatch = |expected: String| {
                let producer = match idx {
                    0 => "the network input".to_string(),
                    _ => format!("layer {} ({})", idx - 1, self.layers[idx - 1]),
                };
                Error::Geometry(format!(
                    "layer {idx} ({layer}) expects {expected} but {producer} produces {cur}"
                ))
            };
            let conv_out =
                |f: [usize; 2], s: usize, p: usize, h: usize, w: usize| -> Result<(usize, usize)> {
                    if f[0] == 0 || f[1] == 0 || s == 0 {
                        return Err(Error::Geometry(format!(
                            "layer {idx} ({layer}) needs kernel >= 1 and stride >= 1"
                        )));
                    }
                    let o_r = output_dims(h, f[0], p, s)
                        .map_err(|e| Error::Geometry(format!("layer {idx} ({layer}): {e}")))?;
                    let o_c = output_dims(w, f[1], p, s)
                        .map_err(|e| Error::Geometry(format!("layer {idx} ({layer}): {e}")))?;
                    Ok((o_r, o_c))
                };
            let next = match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => match cur {
                    Shape::Chw(c, h, w) if c == in_channels => {
                        let (o_r, o_c) = conv_out(kernel, stride, padding, h, w)?;
                        Shape::Chw(out_channels, o_r, o_c)
                    }
                    _ => return Err(mismatch(format!("{in_channels} input channels"))),
                },
                LayerSpec::DepthwiseConv {
                    channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => match cur {
                    Shape::Chw(c, h, w) if c == channels => {
                        let (o_r, o_c) = conv_out(kernel, stride, padding, h, w)?;
                        Shape::Chw(channels, o_r, o_c)
                    }
                    _ => return Err(mismatch(format!("{channels} input channels"))),
                },
                LayerSpec::PointwiseConv {
                    in_channels,
                    out_channels,
                    ..
                } => match cur {
                    Shape::Chw(c, h, w) if c == in_channels => Shape::Chw(out_channels, h, w),
                    _ => return Err(mismatch(format!("{in_channels} input channels"))),
                },
                LayerSpec::Batchnorm { channels, eps, .. } => {
                    if eps.is_nan() || eps <= 0.0 {
                        return Err(Error::Parameter(format!(
                            "layer {idx} ({layer}): eps must be positive"
                        )));
                    }
                    if cur.channels() != channels {
                        return Err(mismatch(format!("{channels} channels")));
                    }
                    cur
                }
                LayerSpec::Relu {} | LayerSpec::HardSigmoid {} | LayerSpec::HardSwish {} => cur,
                LayerSpec::Gap {} => match cur {
                    Shape::Chw(c, h, w) if h * w > 0 => Shape::Flat(c),
                    _ => return Err(mismatch("a (C, H, W) map".into())),
                },
                LayerSpec::Fc {
                    in_features,
                    out_features,
                    ..
                } => {
                    if cur.numel() != in_features {
                        return Err(mismatch(format!("{in_features} features")));
                    }
                    Shape::Flat(out_features)
                }
                LayerSpec::SeBlock { channels, .. } => match cur {
                    Shape::Chw(c, _, _) if c == channels => cur,
                    _ => return Err(mismatch(format!("a ({channels}, H, W) map"))),
                },
                LayerSpec::ResidualAdd { from } => {
                    if from >= idx {
                        return Err(Error::Geometry(format!(
                            "layer {idx} ({layer}) references layer {from}, which is not earlier"
                        )));
                    }
                    if shapes[from] != cur {
                        return Err(Error::Geometry(format!(
                            "layer {idx} ({layer}) joins {cur} with {} entering layer {from} ({})",
                            shapes[from], self.layers[from]
                        )));
                    }
                    cur
                }
            };
            shapes.push(next);
        }
        let out = *shapes.last().expect("non-empty");
        if out.numel() != self.class_count {
            return Err(Error::Geometry(format!(
                "network produces {out} but class_count is {}",
                self.class_count
            )));
        }
        Ok(shapes)
    }

    /// Every weight tensor the network reads, in layer order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        self.layers.iter().flat_map(LayerSpec::tensors).collect()
    }
}

/// A layer with its weights bound.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `weight` is `(C_out, C_in, F_r, F_c)`; pointwise layers land here with a 1x1 kernel.
    Conv {
        name: String,
        weight: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    },
    /// `weight` is `(C, F_r, F_c)`.
    Depthwise {
        name: String,
        weight: Tensor,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        name: String,
        params: Vec<BnParams>,
    },
    Activation(Activation),
    Se {
        name: String,
        fc1: Dense,
        fc2: Dense,
    },
    Gap,
    Fc {
        name: String,
        dense: Dense,
    },
    Residual {
        from: usize,
    },
}

/// A network specification bound to concrete weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    /// `shapes[k]` enters layer `k`; the last entry is the output.
    pub shapes: Vec<Shape>,
}

fn fetch(store: &WeightStore, name: &str, shape: &[usize]) -> Result<Tensor> {
    let entry = store
        .get(name)
        .ok_or_else(|| Error::MissingTensor(name.to_owned()))?;
    let t = Tensor::new(shape.to_vec(), entry.values.clone()).map_err(|_| {
        Error::Geometry(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            entry.shape
        ))
    })?;
    if entry.shape.as_slice() != shape {
        return Err(Error::Geometry(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            entry.shape
        )));
    }
    if !t.is_finite() {
        return Err(Error::Parameter(format!(
            "tensor `{name}` contains non-finite values"
        )));
    }
    Ok(t)
}

fn fetch_bias(store: &WeightStore, name: &str, present: bool, n: usize) -> Result<Vec<f64>> {
    if present {
        Ok(fetch(store, &format!("{name}.bias"), &[n])?.into_data())
    } else {
        Ok(vec![0.0; n])
    }
}

impl Model {
    pub fn bind(spec: NetworkSpec, store: &WeightStore) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let bound = match layer {
                LayerSpec::Conv {
                    name,
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => Layer::Conv {
                    weight: fetch(
                        store,
                        &format!("{name}.weight"),
                        &[*out_channels, *in_channels, kernel[0], kernel[1]],
                    )?,
                    bias: fetch_bias(store, name, *bias, *out_channels)?,
                    name: name.clone(),
                    stride: *stride,
                    padding: *padding,
                },
                LayerSpec::DepthwiseConv {
                    name,
                    channels,
                    kernel,
                    stride,
                    padding,
                    bias,
                } => Layer::Depthwise {
                    weight: fetch(
                        store,
                        &format!("{name}.weight"),
                        &[*channels, kernel[0], kernel[1]],
                    )?,
                    bias: fetch_bias(store, name, *bias, *channels)?,
                    name: name.clone(),
                    stride: *stride,
                    padding: *padding,
                },
                LayerSpec::PointwiseConv {
                    name,
                    in_channels,
                    out_channels,
                    bias,
                } => Layer::Conv {
                    weight: fetch(
                        store,
                        &format!("{name}.weight"),
                        &[*out_channels, *in_channels, 1, 1],
                    )?,
                    bias: fetch_bias(store, name, *bias, *out_channels)?,
                    name: name.clone(),
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::Batchnorm {
                    name,
                    channels,
                    eps,
                } => {
                    let get = |p: &str| fetch(store, &format!("{name}.{p}"), &[*channels]);
                    let (mean, var, gamma, beta) =
                        (get("mean")?, get("var")?, get("gamma")?, get("beta")?);
                    let params = (0..*channels)
                        .map(|c| BnParams {
                            mean: mean.data()[c],
                            var: var.data()[c],
                            gamma: gamma.data()[c],
                            beta: beta.data()[c],
                            eps: *eps,
                        })
                        .collect::<Vec<_>>();
                    for p in &params {
                        p.validate()
                            .map_err(|e| Error::Parameter(format!("{layer}: {e}")))?;
                    }
                    Layer::BatchNorm {
                        name: name.clone(),
                        params,
                    }
                }
                LayerSpec::Relu {} | LayerSpec::HardSigmoid {} | LayerSpec::HardSwish {} => {
                    Layer::Activation(layer.activation().expect("activation layer"))
                }
                LayerSpec::Gap {} => Layer::Gap,
                LayerSpec::Fc {
                    name,
                    in_features,
                    out_features,
                    bias,
                } => Layer::Fc {
                    dense: Dense::new(
                        fetch(
                            store,
                            &format!("{name}.weight"),
                            &[*out_features, *in_features],
                        )?,
                        fetch_bias(store, name, *bias, *out_features)?,
                    )?,
                    name: name.clone(),
                },
                LayerSpec::SeBlock {
                    name,
                    channels,
                    squeeze,
                } => {
                    let dense = |sub: &str, out: usize, inp: usize| -> Result<Dense> {
                        Dense::new(
                            fetch(store, &format!("{name}.{sub}.weight"), &[out, inp])?,
                            fetch(store, &format!("{name}.{sub}.bias"), &[out])?.into_data(),
                        )
                    };
                    Layer::Se {
                        fc1: dense("fc1", *squeeze, *channels)?,
                        fc2: dense("fc2", *channels, *squeeze)?,
                        name: name.clone(),
                    }
                }
                LayerSpec::ResidualAdd { from } => Layer::Residual { from: *from },
            };
            layers.push(bound);
        }
        Ok(Model {
            spec,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    /// Checks an image against the input shape, accepting a flat buffer of the right size.
    pub fn shape_image(&self, image: &Tensor) -> Result<Tensor> {
        let dims = self.input_shape().dims();
        if image.shape() == dims.as_slice() {
            return Ok(image.clone());
        }
        if image.len() == self.input_shape().numel() && image.shape().len() == 1 {
            return image.clone().reshape(dims);
        }
        Err(Error::Input(format!(
            "image shape {:?} does not match network input {}",
            image.shape(),
            self.input_shape()
        )))
    }
}
