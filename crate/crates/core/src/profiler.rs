//! Symbolic weight and multiply-accumulate counts over a [`GraphSpec`].
//!
//! Nothing is executed: shapes come from [`GraphSpec::infer_shapes`] and all
//! counting is in `u64`. What a MAC is for operations other than the
//! convolution inner product is a convention, collected in [`MacConvention`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, LayerKind, Resolution};
use crate::ops::ConvParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacConvention {
    pub name: &'static str,
    /// Count one MAC per output value for the bias add.
    pub bias: bool,
    /// MACs per output value of elementwise add and multiply.
    pub elementwise: u64,
    /// MACs per output value of bilinear upsampling.
    pub upsample: u64,
    /// MACs per bilinear sample in deformable convolution.
    pub deform_sample: u64,
}

impl MacConvention {
    /// Kernel products only, plus interpolation and elementwise arithmetic.
    pub const STANDARD: MacConvention = MacConvention {
        name: "standard",
        bias: false,
        elementwise: 1,
        upsample: 4,
        deform_sample: 4,
    };

    /// Every weight and bias value times the number of outputs it touches;
    /// parameter-free operations are free.
    pub const WEIGHT_APPLICATIONS: MacConvention = MacConvention {
        name: "weight-applications",
        bias: true,
        elementwise: 0,
        upsample: 0,
        deform_sample: 0,
    };

    pub fn parse(s: &str) -> Option<MacConvention> {
        [MacConvention::STANDARD, MacConvention::WEIGHT_APPLICATIONS]
            .into_iter()
            .find(|c| c.name == s)
    }

    fn conv(&self, p: &ConvParams, oh: usize, ow: usize) -> u64 {
        let pix = (oh * ow) as u64;
        let mut m = pix * (p.out_channels * p.in_channels * p.taps()) as u64;
        if self.bias && p.has_bias {
            m += pix * p.out_channels as u64;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub kind: &'static str,
    pub resolution: Resolution,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub graph: String,
    pub height: usize,
    pub width: usize,
    pub convention: &'static str,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
}

impl CostReport {
    pub fn gmacs(&self) -> f64 {
        self.total_macs as f64 / 1e9
    }

    /// Weight totals of layers tagged full and quarter resolution.
    pub fn params_by_resolution(&self) -> (u64, u64) {
        let mut full = 0;
        let mut quarter = 0;
        for r in &self.rows {
            match r.resolution {
                Resolution::Full => full += r.params,
                Resolution::Quarter => quarter += r.params,
            }
        }
        (full, quarter)
    }

    /// Sum of rows whose name starts with `prefix`: (params, macs).
    pub fn subtotal(&self, prefix: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.macs))
    }

    /// Human-readable table; zero-cost rows are omitted.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} at {}x{} ({} MACs)",
            self.graph, self.height, self.width, self.convention
        );
        let _ = writeln!(s, "{:<32} {:<12} {:<8} {:>12} {:>18}", "layer", "op", "res", "params", "MACs");
        for r in self.rows.iter().filter(|r| r.params > 0 || r.macs > 0) {
            let res = match r.resolution {
                Resolution::Full => "full",
                Resolution::Quarter => "quarter",
            };
            let _ = writeln!(s, "{:<32} {:<12} {:<8} {:>12} {:>18}", r.name, r.kind, res, r.params, r.macs);
        }
        let _ = writeln!(
            s,
            "{:<32} {:<12} {:<8} {:>12} {:>18}  ({:.2} GMACs)",
            "total",
            "",
            "",
            self.total_params,
            self.total_macs,
            self.gmacs()
        );
        s
    }

    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        v["gmacs"] = serde_json::json!((self.gmacs() * 100.0).round() / 100.0);
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Distinct weight values declared by the graph; shared weights count once.
pub fn count_params(graph: &GraphSpec) -> u64 {
    graph.weights.iter().map(|w| w.shape.numel() as u64).sum()
}

/// Per-layer costs of one forward pass at `h x w`.
pub fn count_macs(graph: &GraphSpec, h: usize, w: usize, conv: MacConvention) -> Result<CostReport> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "profile resolution must be even and non-zero, got {h}x{w}"
        )));
    }
    let shapes = graph.infer_shapes(h, w)?;
    let mut counted = std::collections::HashSet::new();
    let mut own = |name: &Option<String>, weight: &str| -> u64 {
        let mut p = 0;
        for n in std::iter::once(weight).chain(name.as_deref()) {
            if counted.insert(n.to_string()) {
                p += graph.weight(n).map_or(0, |w| w.shape.numel() as u64);
            }
        }
        p
    };
    let mut rows = Vec::with_capacity(graph.layers.len());
    for l in &graph.layers {
        let (oc, oh, ow) = shapes[&l.name];
        let out_elems = (oc * oh * ow) as u64;
        let (params, macs) = match &l.kind {
            LayerKind::Conv { params, weight, bias } => (own(bias, weight), conv.conv(params, oh, ow)),
            LayerKind::DeformConv { params, weight, bias } => {
                let samples = (oh * ow * params.base.in_channels * params.base.taps()) as u64;
                (
                    own(bias, weight),
                    conv.conv(&params.base, oh, ow) + conv.deform_sample * samples,
                )
            }
            LayerKind::Add | LayerKind::Mul => (0, conv.elementwise * out_elems),
            LayerKind::Upsample2x => (0, conv.upsample * out_elems),
            LayerKind::LeakyRelu { .. } | LayerKind::Relu | LayerKind::Sigmoid | LayerKind::Concat => (0, 0),
        };
        rows.push(CostRow {
            name: l.name.clone(),
            kind: l.kind.label(),
            resolution: l.resolution,
            params,
            macs,
        });
    }
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_macs = rows.iter().map(|r| r.macs).sum();
    Ok(CostReport {
        graph: graph.name.clone(),
        height: h,
        width: w,
        convention: conv.name,
        rows,
        total_params,
        total_macs,
    })
}
