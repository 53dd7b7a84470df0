#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xbar_core::model::{LayerSpec, NetworkSpec, Shape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(f, p, s)` choices that keep the output size integral and non-empty for width `w`.
pub fn valid_kernels(w: usize, max_f: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for f in 1..=max_f.min(w + 4) {
        for p in 0..=2 {
            for s in 1..=3 {
                if w + 2 * p >= f && (w + 2 * p - f).is_multiple_of(s) {
                    out.push((f, p, s));
                }
            }
        }
    }
    out
}

/// Input-size-first index of the im2col matrix: crossbar row of kernel cell `(r, c)`
/// for output `(orow, ocol)`, channel block `ci`, in a stack of `c_in` blocks.
pub fn im2col_row(
    weight: f64,
    (orow, ocol): (usize, usize),
    (r, c): (usize, usize),
    ci: usize,
    c_in: usize,
    (padded_h, padded_w): (usize, usize),
    s: usize,
) -> usize {
    let block = padded_h * padded_w;
    let within = (orow * s + r) * padded_w + ocol * s + c;
    let negated = if weight > 0.0 { c_in * block } else { 0 };
    negated + ci * block + within
}

/// Dense `y = G^T v` scaled by `-rf`, straight from the conductance matrix.
pub fn dense_crossbar(g: &[Vec<f64>], v: &[f64], rf: f64) -> Vec<f64> {
    let cols = g.first().map_or(0, Vec::len);
    (0..cols)
        .map(|j| -rf * g.iter().zip(v).map(|(row, vi)| row[j] * vi).sum::<f64>())
        .collect()
}

struct Builder {
    rng: ChaCha8Rng,
    layers: Vec<LayerSpec>,
    /// Shape entering each layer.
    entering: Vec<Shape>,
    cur: Shape,
    n: usize,
}

impl Builder {
    fn push(&mut self, layer: LayerSpec, out: Shape) {
        self.entering.push(self.cur);
        self.layers.push(layer);
        self.cur = out;
        self.n += 1;
    }

    fn name(&self, stem: &str) -> String {
        format!("{stem}{}", self.n)
    }

    fn bias(&mut self) -> bool {
        self.rng.random_bool(0.7)
    }

    fn conv(&mut self) {
        let Shape::Chw(c, h, w) = self.cur else {
            return;
        };
        let opts: Vec<(usize, usize, usize)> = valid_kernels(h, 3)
            .into_iter()
            .filter(|(f, p, s)| w + 2 * p >= *f && (w + 2 * p - f).is_multiple_of(*s))
            .collect();
        let &(f, p, s) = opts.choose(&mut self.rng).expect("1x1 fits");
        let co = self.rng.random_range(1..=4);
        let out = Shape::Chw(co, (h + 2 * p - f) / s + 1, (w + 2 * p - f) / s + 1);
        let layer = LayerSpec::Conv {
            name: self.name("conv"),
            in_channels: c,
            out_channels: co,
            kernel: [f, f],
            stride: s,
            padding: p,
            bias: self.bias(),
        };
        self.push(layer, out);
    }

    fn depthwise(&mut self) {
        let Shape::Chw(c, h, w) = self.cur else {
            return;
        };
        let opts: Vec<(usize, usize, usize)> = valid_kernels(h, 3)
            .into_iter()
            .filter(|(f, p, s)| w + 2 * p >= *f && (w + 2 * p - f).is_multiple_of(*s))
            .collect();
        let &(f, p, s) = opts.choose(&mut self.rng).expect("1x1 fits");
        let out = Shape::Chw(c, (h + 2 * p - f) / s + 1, (w + 2 * p - f) / s + 1);
        let layer = LayerSpec::DepthwiseConv {
            name: self.name("dw"),
            channels: c,
            kernel: [f, f],
            stride: s,
            padding: p,
            bias: self.bias(),
        };
        self.push(layer, out);
    }

    fn pointwise(&mut self) {
        let Shape::Chw(c, h, w) = self.cur else {
            return;
        };
        let co = self.rng.random_range(1..=4);
        let layer = LayerSpec::PointwiseConv {
            name: self.name("pw"),
            in_channels: c,
            out_channels: co,
            bias: self.bias(),
        };
        self.push(layer, Shape::Chw(co, h, w));
    }

    fn batchnorm(&mut self) {
        let Shape::Chw(c, ..) = self.cur else { return };
        let layer = LayerSpec::Batchnorm {
            name: self.name("bn"),
            channels: c,
            eps: 1e-5,
        };
        let cur = self.cur;
        self.push(layer, cur);
    }

    fn activation(&mut self) {
        let layer = match self.rng.random_range(0..3) {
            0 => LayerSpec::Relu {},
            1 => LayerSpec::HardSigmoid {},
            _ => LayerSpec::HardSwish {},
        };
        let cur = self.cur;
        self.push(layer, cur);
    }

    fn se(&mut self) {
        let Shape::Chw(c, ..) = self.cur else { return };
        let squeeze = self.rng.random_range(1..=c.max(2));
        let layer = LayerSpec::SeBlock {
            name: self.name("se"),
            channels: c,
            squeeze,
        };
        let cur = self.cur;
        self.push(layer, cur);
    }

    fn residual(&mut self) {
        let sources: Vec<usize> = (0..self.entering.len())
            .filter(|&k| self.entering[k] == self.cur)
            .collect();
        if let Some(&from) = sources.choose(&mut self.rng) {
            let cur = self.cur;
            self.push(LayerSpec::ResidualAdd { from }, cur);
        }
    }
}

/// A random, shape-consistent network ending in GAP and an FC head.
pub fn random_spec(seed: u64) -> NetworkSpec {
    let mut r = rng(seed);
    let c = r.random_range(1..=3);
    let hw = r.random_range(3..=8);
    let classes = r.random_range(2..=6);
    let input = [c, hw, hw];
    let body = r.random_range(2..=7);
    let mut b = Builder {
        rng: r,
        layers: Vec::new(),
        entering: Vec::new(),
        cur: Shape::Chw(c, hw, hw),
        n: 0,
    };
    for _ in 0..body {
        match b.rng.random_range(0..7) {
            0 => b.conv(),
            1 => b.depthwise(),
            2 => b.pointwise(),
            3 => b.batchnorm(),
            4 => b.activation(),
            5 => b.se(),
            _ => b.residual(),
        }
    }
    let Shape::Chw(ch, ..) = b.cur else {
        unreachable!("body keeps CHW")
    };
    b.push(LayerSpec::Gap {}, Shape::Flat(ch));
    if b.rng.random_bool(0.5) {
        let hidden = b.rng.random_range(1..=6);
        let layer = LayerSpec::Fc {
            name: b.name("fc"),
            in_features: ch,
            out_features: hidden,
            bias: true,
        };
        b.push(layer, Shape::Flat(hidden));
        b.activation();
    }
    let Shape::Flat(n) = b.cur else {
        unreachable!()
    };
    let bias = b.bias();
    let layer = LayerSpec::Fc {
        name: b.name("head"),
        in_features: n,
        out_features: classes,
        bias,
    };
    b.push(layer, Shape::Flat(classes));
    NetworkSpec {
        input_shape: input,
        class_count: classes,
        layers: b.layers,
    }
}

/// Memristor count expected from the weights alone: every nonzero entry of each
/// layer's unrolled weight matrix, plus one bias cell per column with a nonzero bias.
pub fn expected_memristors(spec: &NetworkSpec, store: &xbar_core::WeightStore) -> usize {
    let shapes = spec.infer_shapes().unwrap();
    let vals = |name: &str| {
        store
            .get(name)
            .map(|e| e.values.clone())
            .unwrap_or_default()
    };
    let nnz = |v: &[f64]| v.iter().filter(|&&x| x != 0.0).count();
    let mut total = 0;
    for (k, layer) in spec.layers.iter().enumerate() {
        let spatial_out = match shapes[k + 1] {
            Shape::Chw(_, h, w) => h * w,
            Shape::Flat(_) => 1,
        };
        let spatial_in = match shapes[k] {
            Shape::Chw(_, h, w) => h * w,
            Shape::Flat(_) => 1,
        };
        total += match layer {
            LayerSpec::Conv { name, .. }
            | LayerSpec::DepthwiseConv { name, .. }
            | LayerSpec::PointwiseConv { name, .. } => {
                (nnz(&vals(&format!("{name}.weight"))) + nnz(&vals(&format!("{name}.bias"))))
                    * spatial_out
            }
            LayerSpec::Fc { name, .. } => {
                nnz(&vals(&format!("{name}.weight"))) + nnz(&vals(&format!("{name}.bias")))
            }
            LayerSpec::Batchnorm { name, .. } => {
                let gamma = vals(&format!("{name}.gamma"));
                let beta = vals(&format!("{name}.beta"));
                2 * gamma.len() + nnz(&gamma) + nnz(&beta)
            }
            LayerSpec::Gap {} => shapes[k].numel(),
            LayerSpec::SeBlock { name, channels, .. } => {
                channels * spatial_in
                    + ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
                        .iter()
                        .map(|t| nnz(&vals(&format!("{name}.{t}"))))
                        .sum::<usize>()
            }
            _ => 0,
        };
    }
    total
}

/// A MobileNetV3-style network: stem, 1..=4 inverted-residual blocks, GAP and an FC head.
/// Channel counts stay at or below 8.
pub fn random_bottleneck_spec(seed: u64) -> NetworkSpec {
    let mut r = rng(seed);
    let hw = r.random_range(4..=9);
    let classes = r.random_range(2..=10);
    let stem_c = r.random_range(2..=8);
    let mut b = Builder {
        rng: r,
        layers: Vec::new(),
        entering: Vec::new(),
        cur: Shape::Chw(3, hw, hw),
        n: 0,
    };
    let opts: Vec<(usize, usize, usize)> = valid_kernels(hw, 3)
        .into_iter()
        .filter(|&(f, _, s)| f == 3 && s <= 2)
        .collect();
    let &(f, p, s) = opts.choose(&mut b.rng).expect("3x3 pad 1 stride 1 fits");
    let stem_hw = (hw + 2 * p - f) / s + 1;
    let layer = LayerSpec::Conv {
        name: "stem".into(),
        in_channels: 3,
        out_channels: stem_c,
        kernel: [f, f],
        stride: s,
        padding: p,
        bias: false,
    };
    b.push(layer, Shape::Chw(stem_c, stem_hw, stem_hw));
    b.batchnorm();
    b.push(LayerSpec::HardSwish {}, b.cur);

    for _ in 0..b.rng.random_range(1..=4) {
        let Shape::Chw(c_in, h, _) = b.cur else {
            unreachable!()
        };
        let block_start = b.layers.len();
        let entering = b.cur;
        let expand = b.rng.random_range(c_in..=8);
        let out_c = if b.rng.random_bool(0.5) {
            c_in
        } else {
            b.rng.random_range(1..=8)
        };
        let act = |b: &mut Builder| {
            let layer = if b.rng.random_bool(0.5) {
                LayerSpec::Relu {}
            } else {
                LayerSpec::HardSwish {}
            };
            b.push(layer, b.cur);
        };
        let name = b.name("exp");
        b.push(
            LayerSpec::PointwiseConv {
                name,
                in_channels: c_in,
                out_channels: expand,
                bias: false,
            },
            Shape::Chw(expand, h, h),
        );
        b.batchnorm();
        act(&mut b);
        let dw: Vec<(usize, usize, usize)> = valid_kernels(h, 5)
            .into_iter()
            .filter(|&(f, p, s)| f % 2 == 1 && p == f / 2 && s <= 2 && f <= h.max(1))
            .collect();
        let &(f, p, s) = dw.choose(&mut b.rng).unwrap_or(&(1, 0, 1));
        let oh = (h + 2 * p - f) / s + 1;
        let name = b.name("dw");
        b.push(
            LayerSpec::DepthwiseConv {
                name,
                channels: expand,
                kernel: [f, f],
                stride: s,
                padding: p,
                bias: false,
            },
            Shape::Chw(expand, oh, oh),
        );
        b.batchnorm();
        act(&mut b);
        if b.rng.random_bool(0.5) {
            let squeeze = b.rng.random_range(1..=expand.max(2) / 2);
            let name = b.name("se");
            b.push(
                LayerSpec::SeBlock {
                    name,
                    channels: expand,
                    squeeze,
                },
                b.cur,
            );
        }
        let name = b.name("proj");
        b.push(
            LayerSpec::PointwiseConv {
                name,
                in_channels: expand,
                out_channels: out_c,
                bias: false,
            },
            Shape::Chw(out_c, oh, oh),
        );
        b.batchnorm();
        if b.cur == entering {
            b.push(LayerSpec::ResidualAdd { from: block_start }, b.cur);
        }
    }
    let Shape::Chw(ch, ..) = b.cur else {
        unreachable!()
    };
    b.push(LayerSpec::Gap {}, Shape::Flat(ch));
    let hidden = b.rng.random_range(4..=8);
    let name = b.name("fc");
    b.push(
        LayerSpec::Fc {
            name,
            in_features: ch,
            out_features: hidden,
            bias: true,
        },
        Shape::Flat(hidden),
    );
    b.push(LayerSpec::HardSwish {}, b.cur);
    let name = b.name("head");
    b.push(
        LayerSpec::Fc {
            name,
            in_features: hidden,
            out_features: classes,
            bias: true,
        },
        Shape::Flat(classes),
    );
    NetworkSpec {
        input_shape: [3, hw, hw],
        class_count: classes,
        layers: b.layers,
    }
}
