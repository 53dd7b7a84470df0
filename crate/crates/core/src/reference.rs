//! Digital floating-point reference for every layer type.
//!
//! These functions are the ground truth that the analog pipeline is checked
//! against. They are written directly from the layer definitions and share no
//! code with the crossbar mappers apart from the output-size formula.

use serde::{Deserialize, Serialize};

use crate::conv_map::output_dims;
use crate::error::{Error, Result};
use crate::model::{Layer, Model};
use crate::tensor::Tensor;

/// Batch-norm epsilon used when a config does not set one.
pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    HardSigmoid,
    HardSwish,
}

/// Per-channel batch normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnParams {
    pub mean: f64,
    pub var: f64,
    pub gamma: f64,
    pub beta: f64,
    pub eps: f64,
}

impl BnParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mean, self.var, self.gamma, self.beta, self.eps];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite batch-norm parameter in {self:?}"
            )));
        }
        if self.var < 0.0 {
            return Err(Error::Parameter(format!("negative variance {}", self.var)));
        }
        if self.eps <= 0.0 {
            return Err(Error::Parameter(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Fully connected weights, `weight` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        match *weight.shape() {
            [out, _] if out == bias.len() => Ok(Dense { weight, bias }),
            [out, _] => Err(Error::Geometry(format!(
                "fc weight has {out} rows but bias has {} entries",
                bias.len()
            ))),
            _ => Err(Error::Geometry(format!(
                "fc weight must be 2-D, got shape {:?}",
                weight.shape()
            ))),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

fn conv_out(
    h: usize,
    w: usize,
    fr: usize,
    fc: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    Ok((
        output_dims(h, fr, padding, stride)?,
        output_dims(w, fc, padding, stride)?,
    ))
}

/// Zero-padded padded-input lookup.
#[inline]
fn padded_at(plane: &[f64], h: usize, w: usize, padding: usize, r: usize, c: usize) -> f64 {
    if r < padding || c < padding || r - padding >= h || c - padding >= w {
        0.0
    } else {
        plane[(r - padding) * w + (c - padding)]
    }
}

/// Standard convolution. `kernel` is `(C_out, C_in, F_r, F_c)`, `input` is `(C_in, H, W)`.
pub fn conv2d_ref(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let &[c_out, k_in, fr, fc] = kernel.shape() else {
        return Err(Error::Geometry(format!(
            "conv kernel must be (C_out, C_in, F_r, F_c), got {:?}",
            kernel.shape()
        )));
    };
    if k_in != c_in {
        return Err(Error::Geometry(format!(
            "kernel expects {k_in} input channels, input has {c_in}"
        )));
    }
    if bias.len() != c_out {
        return Err(Error::Geometry(format!(
            "{c_out} output channels but {} biases",
            bias.len()
        )));
    }
    let (or, oc) = conv_out(h, w, fr, fc, stride, padding)?;
    let k = kernel.data();
    let mut out = Vec::with_capacity(c_out * or * oc);
    for (co, b) in bias.iter().enumerate() {
        for y in 0..or {
            for x in 0..oc {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    let plane = input.channel(ci);
                    let kbase = (co * c_in + ci) * fr * fc;
                    for r in 0..fr {
                        for c in 0..fc {
                            let v = padded_at(plane, h, w, padding, y * stride + r, x * stride + c);
                            acc += v * k[kbase + r * fc + c];
                        }
                    }
                }
                out.push(acc + b);
            }
        }
    }
    Tensor::new(vec![c_out, or, oc], out)
}

/// Per-channel convolution without cross-channel summation. `kernel` is `(C, F_r, F_c)`.
pub fn depthwise_conv_ref(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let &[kc, fr, fc] = kernel.shape() else {
        return Err(Error::Geometry(format!(
            "depthwise kernel must be (C, F_r, F_c), got {:?}",
            kernel.shape()
        )));
    };
    if kc != c || bias.len() != c {
        return Err(Error::Geometry(format!(
            "depthwise channel mismatch: input {c}, kernel {kc}, bias {}",
            bias.len()
        )));
    }
    let (or, oc) = conv_out(h, w, fr, fc, stride, padding)?;
    let k = kernel.data();
    let mut out = Vec::with_capacity(c * or * oc);
    for ch in 0..c {
        let plane = input.channel(ch);
        let kslice = &k[ch * fr * fc..(ch + 1) * fr * fc];
        for y in 0..or {
            for x in 0..oc {
                let mut acc = 0.0;
                for r in 0..fr {
                    for col in 0..fc {
                        acc += padded_at(plane, h, w, padding, y * stride + r, x * stride + col)
                            * kslice[r * fc + col];
                    }
                }
                out.push(acc + bias[ch]);
            }
        }
    }
    Tensor::new(vec![c, or, oc], out)
}

/// Scalar batch normalization: `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn batchnorm_scalar(x: f64, p: &BnParams) -> f64 {
    (x - p.mean) / (p.var + p.eps).sqrt() * p.gamma + p.beta
}

/// Batch normalization applied per channel. Accepts `(C, H, W)` or a flat `(C)` vector.
pub fn batchnorm_ref(x: &Tensor, params: &[BnParams]) -> Result<Tensor> {
    for p in params {
        p.validate()?;
    }
    let channels = x.shape()[0];
    if channels != params.len() {
        return Err(Error::Geometry(format!(
            "batch norm has {} channels, input has {channels}",
            params.len()
        )));
    }
    let plane = x.len() / channels.max(1);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| batchnorm_scalar(v, &params[i / plane]))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `clamp(x + 3, 0, 6) / 6`
pub fn hard_sigmoid(x: f64) -> f64 {
    (x + 3.0).clamp(0.0, 6.0) / 6.0
}

pub fn hard_swish(x: f64) -> f64 {
    x * hard_sigmoid(x)
}

pub fn activation_scalar(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => relu(x),
        Activation::HardSigmoid => hard_sigmoid(x),
        Activation::HardSwish => hard_swish(x),
    }
}

pub fn activation_ref(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| activation_scalar(kind, v))
}

/// Spatial mean per channel of a `(C, H, W)` tensor.
pub fn gap_ref(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if h * w == 0 {
        return Err(Error::Geometry(
            "global average pool over empty spatial dims".into(),
        ));
    }
    let n = (h * w) as f64;
    Ok(Tensor::vector(
        (0..c)
            .map(|ch| input.channel(ch).iter().sum::<f64>() / n)
            .collect(),
    ))
}

/// `W x + b`.
pub fn fc_ref(x: &[f64], dense: &Dense) -> Result<Vec<f64>> {
    let (out, inp) = (dense.out_features(), dense.in_features());
    if x.len() != inp {
        return Err(Error::Geometry(format!(
            "fc expects {inp} inputs, got {}",
            x.len()
        )));
    }
    let w = dense.weight.data();
    Ok((0..out)
        .map(|j| {
            w[j * inp..(j + 1) * inp]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + dense.bias[j]
        })
        .collect())
}

/// Squeeze-and-excitation: channel gates `hsig(fc2(relu(fc1(gap(x)))))` scale each channel.
pub fn se_block_ref(input: &Tensor, fc1: &Dense, fc2: &Dense) -> Result<Tensor> {
    let (c, _, _) = input.chw()?;
    if fc1.in_features() != c || fc2.out_features() != c {
        return Err(Error::Geometry(format!(
            "SE block on {c} channels has fc1 in {} and fc2 out {}",
            fc1.in_features(),
            fc2.out_features()
        )));
    }
    let pooled = gap_ref(input)?;
    let hidden: Vec<f64> = fc_ref(pooled.data(), fc1)?.into_iter().map(relu).collect();
    let gates: Vec<f64> = fc_ref(&hidden, fc2)?
        .into_iter()
        .map(hard_sigmoid)
        .collect();
    let plane = input.len() / c;
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * gates[i / plane])
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn add_ref(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Geometry(format!(
            "residual add of shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}

/// Runs the digital reference network and returns the flattened class scores.
pub fn forward_ref(model: &Model, image: &Tensor) -> Result<Vec<f64>> {
    let mut x = model.shape_image(image)?;
    let mut entering: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        entering.push(x.clone());
        x = match layer {
            Layer::Conv {
                weight,
                bias,
                stride,
                padding,
                ..
            } => conv2d_ref(&x, weight, bias, *stride, *padding)?,
            Layer::Depthwise {
                weight,
                bias,
                stride,
                padding,
                ..
            } => depthwise_conv_ref(&x, weight, bias, *stride, *padding)?,
            Layer::BatchNorm { params, .. } => batchnorm_ref(&x, params)?,
            Layer::Activation(kind) => activation_ref(&x, *kind),
            Layer::Se { fc1, fc2, .. } => se_block_ref(&x, fc1, fc2)?,
            Layer::Gap => gap_ref(&x)?,
            Layer::Fc { dense, .. } => Tensor::vector(fc_ref(x.data(), dense)?),
            Layer::Residual { from } => add_ref(&x, &entering[*from])?,
        };
    }
    Ok(x.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(c: usize, h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![c, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let x = t3(1, 3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Tensor::new(vec![1, 1, 2, 2], vec![1., 0., 0., -1.]).unwrap();
        let y = conv2d_ref(&x, &k, &[0.0], 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[-4., -4., -4., -4.]);
    }

    #[test]
    fn conv_zero_kernel_and_identity() {
        let x = t3(1, 3, 3, &[1., -2., 3., 4., 5., 6., 7., 8., 9.]);
        let zero = Tensor::zeros(vec![1, 1, 2, 2]);
        assert!(conv2d_ref(&x, &zero, &[0.0], 1, 0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let one = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d_ref(&x, &one, &[0.0], 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_rejects_non_integral_geometry() {
        let x = Tensor::zeros(vec![1, 4, 4]);
        let k = Tensor::zeros(vec![1, 1, 2, 2]);
        let err = conv2d_ref(&x, &k, &[0.0], 3, 0).unwrap_err().to_string();
        assert!(err.contains("W=4") && err.contains("S=3"), "{err}");
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(vec![2, 3, 3]);
        let k = Tensor::zeros(vec![1, 1, 1, 1]);
        assert!(matches!(
            conv2d_ref(&x, &k, &[0.0], 1, 0),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn depthwise_scales_each_channel() {
        let x = t3(2, 2, 2, &[1., 2., 3., 4., 1., 2., 3., 4.]);
        let k = Tensor::new(vec![2, 1, 1], vec![2.0, 3.0]).unwrap();
        let y = depthwise_conv_ref(&x, &k, &[0.0, 0.0], 1, 0).unwrap();
        assert_eq!(y.data(), &[2., 4., 6., 8., 3., 6., 9., 12.]);
        let ones = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(depthwise_conv_ref(&x, &ones, &[0.0, 0.0], 1, 0).unwrap(), x);
    }

    #[test]
    fn depthwise_single_channel_matches_conv() {
        let x = t3(1, 3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let kd = Tensor::new(vec![1, 2, 2], vec![0.5, -1., 2., 0.25]).unwrap();
        let kc = kd.clone().reshape(vec![1, 1, 2, 2]).unwrap();
        assert_eq!(
            depthwise_conv_ref(&x, &kd, &[0.3], 1, 1).unwrap(),
            conv2d_ref(&x, &kc, &[0.3], 1, 1).unwrap()
        );
    }

    #[test]
    fn batchnorm_examples() {
        let p = BnParams {
            mean: 1.0,
            var: 4.0 - 1e-5,
            gamma: 2.0,
            beta: 0.5,
            eps: 1e-5,
        };
        assert!((batchnorm_scalar(3.0, &p) - 2.5).abs() < 1e-12);
        let centered = BnParams {
            mean: 7.0,
            var: 1.0,
            gamma: 1.0,
            beta: 0.0,
            eps: 1e-5,
        };
        assert_eq!(batchnorm_scalar(7.0, &centered), 0.0);
        let flat = BnParams {
            gamma: 0.0,
            beta: 0.75,
            ..centered
        };
        assert_eq!(batchnorm_scalar(-123.0, &flat), 0.75);
    }

    #[test]
    fn batchnorm_rejects_negative_variance() {
        let x = Tensor::vector(vec![1.0]);
        let p = BnParams {
            mean: 0.0,
            var: -1.0,
            gamma: 1.0,
            beta: 0.0,
            eps: 1e-5,
        };
        assert!(matches!(batchnorm_ref(&x, &[p]), Err(Error::Parameter(_))));
    }

    #[test]
    fn activation_points() {
        assert_eq!(hard_sigmoid(-3.0), 0.0);
        assert_eq!(hard_sigmoid(0.0), 0.5);
        assert_eq!(hard_sigmoid(3.0), 1.0);
        assert_eq!(hard_swish(-3.0), 0.0);
        assert_eq!(hard_swish(3.0), 3.0);
        assert!((hard_swish(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu(2.0), 2.0);
    }

    #[test]
    fn gap_examples() {
        let x = t3(1, 2, 2, &[1., 2., 3., 4.]);
        assert_eq!(gap_ref(&x).unwrap().data(), &[2.5]);
        let c = t3(2, 1, 1, &[7., -1.]);
        assert_eq!(gap_ref(&c).unwrap().data(), &[7., -1.]);
        assert!(gap_ref(&Tensor::zeros(vec![1, 0, 3])).is_err());
    }

    #[test]
    fn fc_examples() {
        let d = Dense::new(
            Tensor::matrix(&[&[1., -2.], &[0., 3.]]).unwrap(),
            vec![0., 0.],
        )
        .unwrap();
        assert_eq!(fc_ref(&[1., 1.], &d).unwrap(), vec![-1., 3.]);
        let d = Dense::new(
            Tensor::matrix(&[&[1., -2.], &[0., 3.]]).unwrap(),
            vec![4., 5.],
        )
        .unwrap();
        assert_eq!(fc_ref(&[0., 0.], &d).unwrap(), vec![4., 5.]);
        assert!(fc_ref(&[1.], &d).is_err());
    }

    #[test]
    fn se_hand_chain() {
        let x = t3(1, 1, 2, &[1.0, 3.0]);
        let one = || Dense::new(Tensor::matrix(&[&[1.0]]).unwrap(), vec![0.0]).unwrap();
        let y = se_block_ref(&x, &one(), &one()).unwrap();
        let s = 5.0 / 6.0;
        assert!((y.data()[0] - s).abs() < 1e-15 && (y.data()[1] - 3.0 * s).abs() < 1e-15);
    }

    #[test]
    fn se_saturated_gates() {
        let x = t3(2, 1, 2, &[1.0, -2.0, 3.0, 4.0]);
        let fc1 = Dense::new(Tensor::zeros(vec![1, 2]), vec![0.0]).unwrap();
        let open = Dense::new(Tensor::zeros(vec![2, 1]), vec![3.0, 10.0]).unwrap();
        assert_eq!(se_block_ref(&x, &fc1, &open).unwrap(), x);
        let shut = Dense::new(Tensor::zeros(vec![2, 1]), vec![-3.0, -5.0]).unwrap();
        assert!(se_block_ref(&x, &fc1, &shut)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
