//! Declarative network descriptions.
//!
//! Every layer writes one named value, named after the layer itself. Layer
//! inputs refer to graph inputs or to earlier layers. Weights are declared
//! once and may be referenced by several layers (shared convolutions).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{ConvParams, DeformParams};
use crate::tensor::Shape;

/// Spatial resolution a layer's output lives at relative to the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    Full,
    /// Half of each edge.
    Quarter,
}

impl Resolution {
    pub fn divisor(self) -> usize {
        match self {
            Resolution::Full => 1,
            Resolution::Quarter => 2,
        }
    }
}

/// How a weight is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Uniform in `+-gain * sqrt(3 / fan_in)` with the leaky-ReLU gain.
    HeUniform,
    Zeros,
    Const(f32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        params: ConvParams,
        weight: String,
        bias: Option<String>,
    },
    /// Inputs: features, offsets, mask.
    DeformConv {
        params: DeformParams,
        weight: String,
        bias: Option<String>,
    },
    LeakyRelu {
        slope: f32,
    },
    Relu,
    Sigmoid,
    Concat,
    Add,
    Mul,
    Upsample2x,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::DeformConv { .. } => "deform_conv",
            LayerKind::LeakyRelu { .. } => "leaky_relu",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
            LayerKind::Mul => "mul",
            LayerKind::Upsample2x => "upsample2x",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            LayerKind::Conv { .. }
            | LayerKind::LeakyRelu { .. }
            | LayerKind::Relu
            | LayerKind::Sigmoid
            | LayerKind::Upsample2x => Some(1),
            LayerKind::DeformConv { .. } => Some(3),
            LayerKind::Add | LayerKind::Mul => Some(2),
            LayerKind::Concat => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub resolution: Resolution,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub name: String,
    pub inputs: Vec<InputSpec>,
    pub weights: Vec<WeightSpec>,
    pub layers: Vec<LayerSpec>,
    pub output: String,
}

/// Inferred (channels, height, width) of a value for unit batch.
pub type ValueShape = (usize, usize, usize);

impl GraphSpec {
    pub fn weight(&self, name: &str) -> Option<&WeightSpec> {
        self.weights.iter().find(|w| w.name == name)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Checks naming, ordering, arity and weight declarations.
    pub fn validate(&self) -> Result<()> {
        let mut defined: HashSet<&str> = HashSet::new();
        for i in &self.inputs {
            if !defined.insert(&i.name) {
                return Err(Error::InvalidArgument(format!("duplicate input `{}`", i.name)));
            }
        }
        let mut wnames = HashSet::new();
        for w in &self.weights {
            if !wnames.insert(w.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate weight `{}`", w.name)));
            }
        }
        for l in &self.layers {
            if let Some(n) = l.kind.arity() {
                if l.inputs.len() != n {
                    return Err(Error::shape(
                        format!("layer {}", l.name),
                        format!("{} takes {n} inputs, got {}", l.kind.label(), l.inputs.len()),
                    ));
                }
            } else if l.inputs.is_empty() {
                return Err(Error::shape(format!("layer {}", l.name), "concat of nothing"));
            }
            for i in &l.inputs {
                if !defined.contains(i.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "layer `{}` reads `{i}` before it is defined",
                        l.name
                    )));
                }
            }
            let check_w = |name: &str, shape: Shape| -> Result<()> {
                match self.weight(name) {
                    None => Err(Error::MissingWeight(format!("{name} (layer {})", l.name))),
                    Some(w) if w.shape != shape => Err(Error::shape(
                        format!("layer {}", l.name),
                        format!("weight {name} declared {} but needs {shape}", w.shape),
                    )),
                    Some(_) => Ok(()),
                }
            };
            match &l.kind {
                LayerKind::Conv { params, weight, bias } => {
                    check_w(weight, params.weight_shape())?;
                    check_bias(l, params, bias.as_deref(), check_w)?;
                }
                LayerKind::DeformConv { params, weight, bias } => {
                    check_w(weight, params.base.weight_shape())?;
                    check_bias(l, &params.base, bias.as_deref(), check_w)?;
                }
                _ => {}
            }
            if !defined.insert(&l.name) {
                return Err(Error::InvalidArgument(format!("duplicate layer `{}`", l.name)));
            }
        }
        if !defined.contains(self.output.as_str()) {
            return Err(Error::InvalidArgument(format!("output `{}` is never produced", self.output)));
        }
        Ok(())
    }

    /// Shapes of every value for an input of `h x w`, checking channel
    /// agreement and resolution tags along the way.
    pub fn infer_shapes(&self, h: usize, w: usize) -> Result<BTreeMap<String, ValueShape>> {
        self.validate()?;
        let mut shapes: BTreeMap<String, ValueShape> = BTreeMap::new();
        for i in &self.inputs {
            shapes.insert(i.name.clone(), (i.channels, h, w));
        }
        for l in &self.layers {
            let ins: Vec<ValueShape> = l.inputs.iter().map(|i| shapes[i]).collect();
            let ctx = || format!("layer {}", l.name);
            let out = match &l.kind {
                LayerKind::Conv { params, .. } => conv_shape(params, ins[0], &ctx)?,
                LayerKind::DeformConv { params, .. } => {
                    let out = conv_shape(&params.base, ins[0], &ctx)?;
                    if params.base.in_channels % params.groups != 0 {
                        return Err(Error::shape(ctx(), "channels not divisible by groups"));
                    }
                    let want_off = (params.offset_channels(), out.1, out.2);
                    let want_mask = (params.mask_channels(), out.1, out.2);
                    if ins[1] != want_off || ins[2] != want_mask {
                        return Err(Error::shape(
                            ctx(),
                            format!("offsets {:?} / mask {:?}, need {want_off:?} / {want_mask:?}", ins[1], ins[2]),
                        ));
                    }
                    out
                }
                LayerKind::LeakyRelu { .. } | LayerKind::Relu | LayerKind::Sigmoid => ins[0],
                LayerKind::Add | LayerKind::Mul => {
                    if ins[0] != ins[1] {
                        return Err(Error::shape(ctx(), format!("{:?} vs {:?}", ins[0], ins[1])));
                    }
                    ins[0]
                }
                LayerKind::Concat => {
                    let (_, hh, ww) = ins[0];
                    if ins.iter().any(|s| s.1 != hh || s.2 != ww) {
                        return Err(Error::shape(ctx(), format!("spatial mismatch {ins:?}")));
                    }
                    (ins.iter().map(|s| s.0).sum(), hh, ww)
                }
                LayerKind::Upsample2x => (ins[0].0, 2 * ins[0].1, 2 * ins[0].2),
            };
            let d = l.resolution.divisor();
            if out.1 * d != h || out.2 * d != w {
                return Err(Error::shape(
                    ctx(),
                    format!(
                        "tagged {:?} but produces {}x{} from a {h}x{w} input",
                        l.resolution, out.1, out.2
                    ),
                ));
            }
            shapes.insert(l.name.clone(), out);
        }
        Ok(shapes)
    }

    /// Aligned one-line-per-layer text listing.
    pub fn describe(&self) -> String {
        let mut s = format!("graph {}\n", self.name);
        for i in &self.inputs {
            let _ = writeln!(s, "  input  {:<28} channels={}", i.name, i.channels);
        }
        for l in &self.layers {
            let detail = match &l.kind {
                LayerKind::Conv { params: p, .. } => conv_detail(p),
                LayerKind::DeformConv { params: p, .. } => {
                    format!("{} groups={}", conv_detail(&p.base), p.groups)
                }
                LayerKind::LeakyRelu { slope } => format!("slope={slope}"),
                _ => String::new(),
            };
            let res = match l.resolution {
                Resolution::Full => "full",
                Resolution::Quarter => "quarter",
            };
            let _ = writeln!(
                s,
                "  {:<11} {:<28} {:<7} <- {:<40} {}",
                l.kind.label(),
                l.name,
                res,
                l.inputs.join(","),
                detail
            );
        }
        let _ = writeln!(s, "  output {}", self.output);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: GraphSpec = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }
}

fn check_bias(
    l: &LayerSpec,
    p: &ConvParams,
    bias: Option<&str>,
    check_w: impl Fn(&str, Shape) -> Result<()>,
) -> Result<()> {
    match (p.has_bias, bias) {
        (true, Some(b)) => check_w(b, p.bias_shape()),
        (false, None) => Ok(()),
        _ => Err(Error::shape(
            format!("layer {}", l.name),
            "bias declaration disagrees with has_bias",
        )),
    }
}

fn conv_shape(p: &ConvParams, x: ValueShape, ctx: &dyn Fn() -> String) -> Result<ValueShape> {
    if x.0 != p.in_channels {
        return Err(Error::shape(
            ctx(),
            format!("expects {} input channels, got {}", p.in_channels, x.0),
        ));
    }
    let (oh, ow) = p.output_size(x.1, x.2).map_err(|e| e.context(ctx()))?;
    Ok((p.out_channels, oh, ow))
}

fn conv_detail(p: &ConvParams) -> String {
    format!(
        "{}->{} k={}x{} s={} d={}{}",
        p.in_channels,
        p.out_channels,
        p.kernel.0,
        p.kernel.1,
        p.stride.0,
        p.dilation.0,
        if p.has_bias { "" } else { " nobias" }
    )
}
