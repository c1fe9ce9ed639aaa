//! Runs a [`GraphSpec`] on a tape.

use std::collections::{BTreeMap, HashMap};

use super::init::Weights;
use super::spec::{GraphSpec, LayerKind};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Checks every declared weight is present with its declared shape.
pub fn check_weights(graph: &GraphSpec, weights: &Weights) -> Result<()> {
    for w in &graph.weights {
        match weights.get(&w.name) {
            None => return Err(Error::MissingWeight(w.name.clone())),
            Some(t) if t.shape() != w.shape => {
                return Err(Error::shape(
                    format!("weight {}", w.name),
                    format!("expected {} got {}", w.shape, t.shape()),
                ))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

fn check_inputs(graph: &GraphSpec, shapes: &[Shape]) -> Result<(usize, usize, usize)> {
    if shapes.len() != graph.inputs.len() {
        return Err(Error::shape(
            "graph inputs",
            format!("{} tensors for {} inputs", shapes.len(), graph.inputs.len()),
        ));
    }
    let s0 = shapes[0];
    for (spec, s) in graph.inputs.iter().zip(shapes) {
        if s.c != spec.channels || s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(Error::shape(
                format!("input {}", spec.name),
                format!("got {s}, expected ({}, {}, {}, {})", s0.n, spec.channels, s0.h, s0.w),
            ));
        }
    }
    if s0.h % 2 != 0 || s0.w % 2 != 0 {
        return Err(Error::shape(
            "graph inputs",
            format!("height and width must be even, got {}x{}", s0.h, s0.w),
        ));
    }
    Ok((s0.n, s0.h, s0.w))
}

/// Records the graph on `tape` with weights and inputs already bound to
/// variables. Returns the output variable.
///
/// On a non-recording tape intermediate values are released as soon as
/// their last consumer has run.
pub fn forward_on_tape(
    tape: &mut Tape,
    graph: &GraphSpec,
    weights: &BTreeMap<String, Var>,
    inputs: &[Var],
) -> Result<Var> {
    let in_shapes = inputs.iter().map(|&v| tape.shape(v)).collect::<Result<Vec<_>>>()?;
    let (_, h, w) = check_inputs(graph, &in_shapes)?;

    let mut last_use: HashMap<&str, usize> = HashMap::new();
    for (i, l) in graph.layers.iter().enumerate() {
        for name in &l.inputs {
            last_use.insert(name.as_str(), i);
        }
    }
    let mut values: HashMap<&str, Var> = HashMap::new();
    for (spec, &v) in graph.inputs.iter().zip(inputs) {
        values.insert(spec.name.as_str(), v);
    }
    let weight = |name: &str| -> Result<Var> {
        weights
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    };

    for (i, l) in graph.layers.iter().enumerate() {
        let ins: Vec<Var> = l
            .inputs
            .iter()
            .map(|n| {
                values.get(n.as_str()).copied().ok_or_else(|| {
                    Error::InvalidArgument(format!("layer `{}` reads undefined `{n}`", l.name))
                })
            })
            .collect::<Result<_>>()?;
        let run = |tape: &mut Tape| -> Result<Var> {
            match &l.kind {
                LayerKind::Conv { params, weight: wn, bias } => {
                    let wv = weight(wn)?;
                    let bv = bias.as_deref().map(weight).transpose()?;
                    tape.conv2d(ins[0], wv, bv, params)
                }
                LayerKind::DeformConv { params, weight: wn, bias } => {
                    let wv = weight(wn)?;
                    let bv = bias.as_deref().map(weight).transpose()?;
                    tape.deform_conv2d(ins[0], ins[1], ins[2], wv, bv, params)
                }
                LayerKind::LeakyRelu { slope } => tape.leaky_relu(ins[0], *slope),
                LayerKind::Relu => tape.relu(ins[0]),
                LayerKind::Sigmoid => tape.sigmoid(ins[0]),
                LayerKind::Concat => tape.concat(&ins),
                LayerKind::Add => tape.add(ins[0], ins[1]),
                LayerKind::Mul => tape.mul(ins[0], ins[1]),
                LayerKind::Upsample2x => tape.upsample2x(ins[0]),
            }
        };
        let out = run(tape).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: format!("layer {}", l.name),
            },
            other => other.context(format!("layer {}", l.name)),
        })?;
        let s = tape.shape(out)?;
        let d = l.resolution.divisor();
        if s.h * d != h || s.w * d != w {
            return Err(Error::shape(
                format!("layer {}", l.name),
                format!("tagged {:?} but produced {}x{} from {h}x{w}", l.resolution, s.h, s.w),
            ));
        }
        values.insert(l.name.as_str(), out);
        if !tape.is_recording() {
            for name in &l.inputs {
                if last_use.get(name.as_str()) == Some(&i) && name != &graph.output {
                    if let Some(v) = values.remove(name.as_str()) {
                        if !graph.inputs.iter().any(|s| &s.name == name) {
                            tape.release(v)?;
                        }
                    }
                }
            }
        }
    }
    values
        .get(graph.output.as_str())
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("output `{}` never produced", graph.output)))
}

/// Binds every weight as a trainable leaf.
pub fn bind_params(tape: &mut Tape, weights: &Weights) -> BTreeMap<String, Var> {
    weights
        .iter()
        .map(|(k, t)| (k.clone(), tape.param(t.clone())))
        .collect()
}

/// Inference-only evaluation.
pub fn forward_eval(graph: &GraphSpec, weights: &Weights, inputs: &[Tensor]) -> Result<Tensor> {
    check_weights(graph, weights)?;
    let mut tape = Tape::inference();
    let wv: BTreeMap<String, Var> = weights
        .iter()
        .filter(|(k, _)| graph.weight(k).is_some())
        .map(|(k, t)| (k.clone(), tape.constant(t.clone())))
        .collect();
    let iv: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = forward_on_tape(&mut tape, graph, &wv, &iv)?;
    tape.take_value(out)
}
