//! Whole-network lowering and analog inference.
//!
//! Each layer becomes one stage. Crossbar stages are run as
//! encode -> evaluate -> decode, so signals between stages are in activation
//! units (ideal buffering between arrays).

use std::collections::BTreeSet;

use crate::bn_map::{compile_bn, evaluate_bn_circuit, BnCircuit};
use crate::conv_map::{
    compile_depthwise, compile_multichannel_conv, decode_output, encode_channels, ConvGeometry,
};
use crate::crossbar::{CrossbarProgram, DeviceParams};
use crate::error::{Error, Result};
use crate::functional::{
    activation_circuit, analog_add, analog_mul, hard_sigmoid_circuit, relu_circuit,
};
use crate::io::weights::WeightStore;
use crate::model::{Layer, Model, NetworkSpec, Shape};
use crate::par::{self, Exec};
use crate::pool_fc::{compile_fc, compile_gap, FcProgram, GapProgram};
use crate::reference::{Activation, BnParams};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Stage {
    /// One channel-stacked program per output channel.
    Conv {
        name: String,
        geom: ConvGeometry,
        in_channels: usize,
        programs: Vec<CrossbarProgram>,
    },
    /// One single-channel program per channel.
    Depthwise {
        name: String,
        geom: ConvGeometry,
        programs: Vec<CrossbarProgram>,
    },
    BatchNorm {
        name: String,
        circuits: Vec<BnCircuit>,
        params: Vec<BnParams>,
    },
    Activation {
        kind: Activation,
        elements: usize,
    },
    Se {
        name: String,
        gap: GapProgram,
        fc1: FcProgram,
        fc2: FcProgram,
        elements: usize,
    },
    Residual {
        from: usize,
        elements: usize,
    },
    Gap {
        label: String,
        gap: GapProgram,
    },
    Fc {
        name: String,
        fc: FcProgram,
    },
}

impl Stage {
    pub fn kind(&self) -> &'static str {
        match self {
            Stage::Conv { .. } => "conv",
            Stage::Depthwise { .. } => "depthwise_conv",
            Stage::BatchNorm { .. } => "batchnorm",
            Stage::Activation {
                kind: Activation::Relu,
                ..
            } => "relu",
            Stage::Activation {
                kind: Activation::HardSigmoid,
                ..
            } => "hard_sigmoid",
            Stage::Activation {
                kind: Activation::HardSwish,
                ..
            } => "hard_swish",
            Stage::Se { .. } => "se_block",
            Stage::Residual { .. } => "residual_add",
            Stage::Gap { .. } => "gap",
            Stage::Fc { .. } => "fc",
        }
    }

    pub fn label(&self) -> String {
        match self {
            Stage::Conv { name, .. }
            | Stage::Depthwise { name, .. }
            | Stage::BatchNorm { name, .. }
            | Stage::Se { name, .. }
            | Stage::Fc { name, .. } => name.clone(),
            Stage::Gap { label, .. } => label.clone(),
            other => other.kind().to_owned(),
        }
    }

    /// Every crossbar program in the stage, in evaluation order.
    pub fn programs(&self) -> Vec<&CrossbarProgram> {
        match self {
            Stage::Conv { programs, .. } | Stage::Depthwise { programs, .. } => {
                programs.iter().collect()
            }
            Stage::BatchNorm { circuits, .. } => circuits
                .iter()
                .flat_map(|c| [&c.stage1, &c.stage2])
                .collect(),
            Stage::Se { gap, fc1, fc2, .. } => vec![&gap.program, &fc1.program, &fc2.program],
            Stage::Gap { gap, .. } => vec![&gap.program],
            Stage::Fc { fc, .. } => vec![&fc.program],
            Stage::Activation { .. } | Stage::Residual { .. } => Vec::new(),
        }
    }

    /// Sequential analog steps a signal passes through in this stage.
    pub fn depth(&self) -> usize {
        match self {
            Stage::BatchNorm { .. } => 2,
            // pool, fc1, relu, fc2, hard sigmoid, multiplier
            Stage::Se { .. } => 6,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledNetwork {
    pub spec: NetworkSpec,
    pub dp: DeviceParams,
    pub stages: Vec<Stage>,
    /// `shapes[k]` enters stage `k`; the last entry is the output.
    pub shapes: Vec<Shape>,
    /// Stage indices whose input tensor a residual junction reads.
    residual_sources: BTreeSet<usize>,
}

fn relabel(prog: CrossbarProgram, label: String) -> Result<CrossbarProgram> {
    prog.with_label(label)
        .map_err(|e| Error::Config(format!("layer names must be single tokens: {e}")))
}

fn compile_stage(idx: usize, layer: &Layer, input: Shape, dp: &DeviceParams) -> Result<Stage> {
    let chw = || match input {
        Shape::Chw(c, h, w) => Ok((c, h, w)),
        Shape::Flat(_) => Err(Error::Geometry(format!(
            "stage {idx} needs a (C, H, W) input, got {input}"
        ))),
    };
    Ok(match layer {
        Layer::Conv {
            name,
            weight,
            bias,
            stride,
            padding,
        } => {
            let (c, h, w) = chw()?;
            let shape = weight.shape();
            let geom = ConvGeometry::new(h, w, shape[2], shape[3], *padding, *stride)?;
            let programs = compile_multichannel_conv(weight, bias, &geom, dp)?
                .into_iter()
                .enumerate()
                .map(|(co, (p, _))| relabel(p, format!("{name}.oc{co}")))
                .collect::<Result<Vec<_>>>()?;
            Stage::Conv {
                name: name.clone(),
                geom,
                in_channels: c,
                programs,
            }
        }
        Layer::Depthwise {
            name,
            weight,
            bias,
            stride,
            padding,
        } => {
            let (_, h, w) = chw()?;
            let shape = weight.shape();
            let geom = ConvGeometry::new(h, w, shape[1], shape[2], *padding, *stride)?;
            let programs = compile_depthwise(weight, bias, &geom, dp)?
                .into_iter()
                .enumerate()
                .map(|(ch, (p, _))| relabel(p, format!("{name}.c{ch}")))
                .collect::<Result<Vec<_>>>()?;
            Stage::Depthwise {
                name: name.clone(),
                geom,
                programs,
            }
        }
        Layer::BatchNorm { name, params } => {
            let circuits = params
                .iter()
                .enumerate()
                .map(|(ch, p)| {
                    let mut c = compile_bn(p, dp)?;
                    c.stage1 = relabel(c.stage1, format!("{name}.c{ch}.s1"))?;
                    c.stage2 = relabel(c.stage2, format!("{name}.c{ch}.s2"))?;
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            Stage::BatchNorm {
                name: name.clone(),
                circuits,
                params: params.clone(),
            }
        }
        Layer::Activation(kind) => Stage::Activation {
            kind: *kind,
            elements: input.numel(),
        },
        Layer::Se { name, fc1, fc2 } => {
            let (c, h, w) = chw()?;
            let mut gap = compile_gap(h * w, c, dp)?;
            gap.program = relabel(gap.program, format!("{name}.gap"))?;
            let mut f1 = compile_fc(fc1, dp)?;
            f1.program = relabel(f1.program, format!("{name}.fc1"))?;
            let mut f2 = compile_fc(fc2, dp)?;
            f2.program = relabel(f2.program, format!("{name}.fc2"))?;
            Stage::Se {
                name: name.clone(),
                gap,
                fc1: f1,
                fc2: f2,
                elements: input.numel(),
            }
        }
        Layer::Gap => {
            let (c, h, w) = chw()?;
            let label = format!("gap{idx}");
            let mut gap = compile_gap(h * w, c, dp)?;
            gap.program = relabel(gap.program, label.clone())?;
            Stage::Gap { label, gap }
        }
        Layer::Fc { name, dense } => {
            let mut fc = compile_fc(dense, dp)?;
            fc.program = relabel(fc.program, name.clone())?;
            Stage::Fc {
                name: name.clone(),
                fc,
            }
        }
        Layer::Residual { from } => Stage::Residual {
            from: *from,
            elements: input.numel(),
        },
    })
}

/// Lowers a bound model onto crossbars and functional blocks.
pub fn compile_model(model: &Model, dp: &DeviceParams) -> Result<CompiledNetwork> {
    dp.validate()?;
    let stages = par::map_range(model.layers.len(), |i| {
        compile_stage(i, &model.layers[i], model.shapes[i], dp)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let residual_sources = stages
        .iter()
        .filter_map(|s| match s {
            Stage::Residual { from, .. } => Some(*from),
            _ => None,
        })
        .collect();
    Ok(CompiledNetwork {
        spec: model.spec.clone(),
        dp: *dp,
        stages,
        shapes: model.shapes.clone(),
        residual_sources,
    })
}

/// Binds `weights` to `spec` and compiles the result.
pub fn compile_network(
    spec: &NetworkSpec,
    weights: &WeightStore,
    dp: &DeviceParams,
) -> Result<CompiledNetwork> {
    let model = Model::bind(spec.clone(), weights)?;
    compile_model(&model, dp)
}

impl CompiledNetwork {
    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    /// `(stage index, program)` for every crossbar in the network.
    pub fn programs(&self) -> Vec<(usize, &CrossbarProgram)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.programs().into_iter().map(move |p| (i, p)))
            .collect()
    }

    pub fn memristor_count(&self) -> usize {
        self.programs()
            .iter()
            .map(|(_, p)| p.memristor_count())
            .sum()
    }

    /// Sequential analog depth of the whole pipeline.
    pub fn depth(&self) -> usize {
        self.stages.iter().map(Stage::depth).sum()
    }

    fn run_stage(&self, stage: &Stage, x: Tensor, entering: &[Option<Tensor>]) -> Result<Tensor> {
        let dp = &self.dp;
        match stage {
            Stage::Conv { geom, programs, .. } => {
                let v = encode_channels(&x, geom, dp)?;
                let planes = par::map_range(programs.len(), |co| {
                    decode_output(&programs[co].evaluate(&v.voltages)?, geom, dp)
                });
                stack_planes(planes, geom)
            }
            Stage::Depthwise { geom, programs, .. } => {
                let (c, h, w) = x.chw()?;
                if c != programs.len() {
                    return Err(Error::Geometry(format!(
                        "depthwise stage has {} channels, input has {c}",
                        programs.len()
                    )));
                }
                let planes = par::map_range(c, |ch| {
                    let plane = Tensor::new(vec![1, h, w], x.channel(ch).to_vec())?;
                    let v = encode_channels(&plane, geom, dp)?;
                    decode_output(&programs[ch].evaluate(&v.voltages)?, geom, dp)
                });
                stack_planes(planes, geom)
            }
            Stage::BatchNorm {
                circuits, params, ..
            } => {
                let c = circuits.len();
                if x.shape()[0] != c {
                    return Err(Error::Geometry(format!(
                        "batch-norm stage has {c} channels, input shape {:?}",
                        x.shape()
                    )));
                }
                let plane = x.len() / c;
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        evaluate_bn_circuit(&circuits[i / plane], v, &params[i / plane], dp)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Tensor::new(x.shape().to_vec(), data)
            }
            Stage::Activation { kind, .. } => Ok(x.map(|v| activation_circuit(*kind, v))),
            Stage::Se { gap, fc1, fc2, .. } => {
                let pooled = gap.run(&x, dp)?;
                let hidden: Vec<f64> = fc1
                    .run(&pooled, dp)?
                    .into_iter()
                    .map(relu_circuit)
                    .collect();
                let gates: Vec<f64> = fc2
                    .run(&hidden, dp)?
                    .into_iter()
                    .map(hard_sigmoid_circuit)
                    .collect();
                analog_mul(&x, &gates)
            }
            Stage::Residual { from, .. } => {
                let skip = entering[*from].as_ref().ok_or_else(|| {
                    Error::InvalidProgram(format!("residual source {from} was not retained"))
                })?;
                if skip.shape() != x.shape() {
                    return Err(Error::Geometry(format!(
                        "residual joins {:?} with {:?}",
                        x.shape(),
                        skip.shape()
                    )));
                }
                Tensor::new(x.shape().to_vec(), analog_add(x.data(), skip.data())?)
            }
            Stage::Gap { gap, .. } => Ok(Tensor::vector(gap.run(&x, dp)?)),
            Stage::Fc { fc, .. } => Ok(Tensor::vector(fc.run(x.data(), dp)?)),
        }
    }
}

fn stack_planes(planes: Vec<Result<Tensor>>, geom: &ConvGeometry) -> Result<Tensor> {
    let c = planes.len();
    let mut data = Vec::with_capacity(c * geom.outputs());
    for p in planes {
        data.extend_from_slice(p?.data());
    }
    Tensor::new(vec![c, geom.o_r, geom.o_c], data)
}

fn shape_image(net: &CompiledNetwork, image: &Tensor) -> Result<Tensor> {
    let dims = net.input_shape().dims();
    if image.shape() == dims.as_slice() {
        Ok(image.clone())
    } else if image.shape().len() == 1 && image.len() == net.input_shape().numel() {
        image.clone().reshape(dims)
    } else {
        Err(Error::Input(format!(
            "image shape {:?} does not match network input {}",
            image.shape(),
            net.input_shape()
        )))
    }
}

/// Runs one image through the analog pipeline and returns the decoded class scores.
pub fn forward_analog(net: &CompiledNetwork, image: &Tensor) -> Result<Vec<f64>> {
    let mut x = shape_image(net, image)?;
    let mut entering: Vec<Option<Tensor>> = vec![None; net.stages.len()];
    for (i, stage) in net.stages.iter().enumerate() {
        if net.residual_sources.contains(&i) {
            entering[i] = Some(x.clone());
        }
        x = net.run_stage(stage, x, &entering)?;
    }
    Ok(x.into_data())
}

/// Index of the highest score, lowest index on ties.
pub fn predict(net: &CompiledNetwork, image: &Tensor) -> Result<usize> {
    let scores = forward_analog(net, image)?;
    argmax(&scores).ok_or_else(|| Error::InvalidProgram("network produced no scores".into()))
}

/// Independent forward passes over a batch; results are in input order.
pub fn forward_batch(
    net: &CompiledNetwork,
    images: &[Tensor],
    exec: Exec,
) -> Vec<Result<Vec<f64>>> {
    par::map_slice_with(exec, images, |img| forward_analog(net, img))
}
