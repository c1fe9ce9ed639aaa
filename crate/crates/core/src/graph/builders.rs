//! Network constructors: the dual-branch model, its variants and the
//! single-branch attention baseline.

use serde::{Deserialize, Serialize};

use super::spec::{GraphSpec, Init, InputSpec, LayerKind, LayerSpec, Resolution, WeightSpec};
use crate::ops::{ConvParams, DeformParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Drhdr,
    Ahdr,
    VariantA,
    VariantB,
    OursStar,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Drhdr,
        Variant::Ahdr,
        Variant::VariantA,
        Variant::VariantB,
        Variant::OursStar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Drhdr => "drhdr",
            Variant::Ahdr => "ahdr",
            Variant::VariantA => "variant-a",
            Variant::VariantB => "variant-b",
            Variant::OursStar => "ours-star",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// How the reference features rejoin before the output head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipStyle {
    Add,
    Concat,
}

/// Attention conv widths: `2ch -> ch -> ch` or `2ch -> 2ch -> ch`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionWidth {
    Narrow,
    Wide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub ch: usize,
    pub drdb_full: usize,
    pub drdb_low: usize,
    pub drdb_growth: usize,
    pub drdb_depth: usize,
    pub drdb_dilation: usize,
    pub deform_groups: usize,
    pub guidance_depth: usize,
    pub leaky_slope: f32,
    pub skip: SkipStyle,
    pub attention: AttentionWidth,
}

impl NetworkConfig {
    /// Full-size dual-branch model. DRDB depth 4 and 7 deformable groups are
    /// the knob settings that bring the weight and MAC totals closest to the
    /// target complexity figures (see `docs/reconciliation.md`).
    pub fn paper() -> Self {
        NetworkConfig {
            variant: Variant::Drhdr,
            ch: 42,
            drdb_full: 5,
            drdb_low: 5,
            drdb_growth: 21,
            drdb_depth: 4,
            drdb_dilation: 2,
            deform_groups: 7,
            guidance_depth: 2,
            leaky_slope: 0.1,
            skip: SkipStyle::Add,
            attention: AttentionWidth::Narrow,
        }
    }

    /// Desk-scale model used for CPU training runs.
    pub fn tiny() -> Self {
        NetworkConfig {
            ch: 8,
            drdb_full: 1,
            drdb_low: 1,
            drdb_growth: 4,
            deform_groups: 1,
            ..NetworkConfig::paper()
        }
    }

    pub fn ahdr() -> Self {
        NetworkConfig {
            variant: Variant::Ahdr,
            ch: 64,
            drdb_full: 3,
            drdb_low: 0,
            drdb_growth: 32,
            drdb_depth: 6,
            deform_groups: 1,
            attention: AttentionWidth::Wide,
            ..NetworkConfig::paper()
        }
    }

    pub fn variant_a() -> Self {
        NetworkConfig {
            variant: Variant::VariantA,
            ch: 36,
            drdb_full: 6,
            drdb_low: 6,
            drdb_growth: 36,
            deform_groups: 1,
            ..NetworkConfig::paper()
        }
    }

    pub fn variant_b() -> Self {
        NetworkConfig {
            variant: Variant::VariantB,
            ch: 36,
            drdb_full: 3,
            drdb_low: 6,
            drdb_growth: 36,
            deform_groups: 1,
            ..NetworkConfig::paper()
        }
    }

    pub fn ours_star() -> Self {
        NetworkConfig {
            variant: Variant::OursStar,
            ..NetworkConfig::paper()
        }
    }

    /// Full-size preset for a variant.
    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Drhdr => NetworkConfig::paper(),
            Variant::Ahdr => NetworkConfig::ahdr(),
            Variant::VariantA => NetworkConfig::variant_a(),
            Variant::VariantB => NetworkConfig::variant_b(),
            Variant::OursStar => NetworkConfig::ours_star(),
        }
    }

    /// Same variant shrunk to the desk-scale widths.
    pub fn tiny_for_variant(v: Variant) -> Self {
        let t = NetworkConfig::tiny();
        match v {
            Variant::Ahdr => NetworkConfig {
                drdb_full: 1,
                ..NetworkConfig { variant: v, attention: AttentionWidth::Wide, ..t }
            },
            _ => NetworkConfig { variant: v, ..t },
        }
    }

    pub fn build(&self) -> GraphSpec {
        match self.variant {
            Variant::Ahdr => build_ahdr(self),
            _ => build_dual_branch(self),
        }
    }
}

/// Input names of every graph built here.
pub const INPUTS: [&str; 3] = ["in1", "in2", "in3"];
pub const INPUT_CHANNELS: usize = 6;

struct Builder {
    g: GraphSpec,
    res: Resolution,
    slope: f32,
}

impl Builder {
    fn new(name: &str, slope: f32) -> Self {
        let inputs = INPUTS
            .iter()
            .map(|n| InputSpec {
                name: n.to_string(),
                channels: INPUT_CHANNELS,
            })
            .collect();
        Builder {
            g: GraphSpec {
                name: name.to_string(),
                inputs,
                ..GraphSpec::default()
            },
            res: Resolution::Full,
            slope,
        }
    }

    fn layer(&mut self, name: String, kind: LayerKind, inputs: &[&str]) -> String {
        self.g.layers.push(LayerSpec {
            name: name.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            resolution: self.res,
        });
        name
    }

    /// Declares `prefix.w` / `prefix.b` unless already declared (shared weights).
    fn declare(&mut self, prefix: &str, p: &ConvParams, w_init: Init, b_init: Init) -> (String, Option<String>) {
        let w = format!("{prefix}.w");
        let b = p.has_bias.then(|| format!("{prefix}.b"));
        if self.g.weight(&w).is_none() {
            self.g.weights.push(WeightSpec {
                name: w.clone(),
                shape: p.weight_shape(),
                init: w_init,
            });
            if let Some(b) = &b {
                self.g.weights.push(WeightSpec {
                    name: b.clone(),
                    shape: p.bias_shape(),
                    init: b_init,
                });
            }
        }
        (w, b)
    }

    fn conv_with(&mut self, name: &str, weights: &str, input: &str, p: ConvParams, w_init: Init, b_init: Init) -> String {
        let (weight, bias) = self.declare(weights, &p, w_init, b_init);
        self.layer(
            name.to_string(),
            LayerKind::Conv {
                params: p,
                weight,
                bias,
            },
            &[input],
        )
    }

    fn conv(&mut self, name: &str, input: &str, p: ConvParams) -> String {
        self.conv_with(name, name, input, p, Init::HeUniform, Init::Zeros)
    }

    fn lrelu(&mut self, input: &str) -> String {
        let slope = self.slope;
        self.layer(format!("{input}.act"), LayerKind::LeakyRelu { slope }, &[input])
    }

    fn conv_lrelu(&mut self, name: &str, input: &str, p: ConvParams) -> String {
        let c = self.conv(name, input, p);
        self.lrelu(&c)
    }

    /// Shared-weight convolution + activation applied under a new layer name.
    fn shared_conv_lrelu(&mut self, name: &str, weights: &str, input: &str, p: ConvParams) -> String {
        let c = self.conv_with(name, weights, input, p, Init::HeUniform, Init::Zeros);
        self.lrelu(&c)
    }

    fn concat(&mut self, name: &str, inputs: &[&str]) -> String {
        if inputs.len() == 1 {
            return inputs[0].to_string();
        }
        self.layer(name.to_string(), LayerKind::Concat, inputs)
    }

    fn add(&mut self, name: &str, a: &str, b: &str) -> String {
        self.layer(name.to_string(), LayerKind::Add, &[a, b])
    }

    /// Dense dilated block: `depth` growth layers, 1x1 fusion, residual add.
    fn drdb(&mut self, prefix: &str, input: &str, cfg: &NetworkConfig) -> String {
        let (ch, g) = (cfg.ch, cfg.drdb_growth);
        let mut feats = vec![input.to_string()];
        for l in 0..cfg.drdb_depth {
            let refs: Vec<&str> = feats.iter().map(String::as_str).collect();
            let cat = self.concat(&format!("{prefix}.cat{l}"), &refs);
            let p = ConvParams::same3x3(ch + g * l, g).with_dilation(cfg.drdb_dilation);
            let out = self.conv_lrelu(&format!("{prefix}.dense{l}"), &cat, p);
            feats.push(out);
        }
        let refs: Vec<&str> = feats.iter().map(String::as_str).collect();
        let cat = self.concat(&format!("{prefix}.cat"), &refs);
        let fused = self.conv(
            &format!("{prefix}.fuse"),
            &cat,
            ConvParams::pointwise(ch + g * cfg.drdb_depth, ch),
        );
        self.add(&format!("{prefix}.res"), &fused, input)
    }

    fn drdb_stack(&mut self, prefix: &str, input: &str, n: usize, cfg: &NetworkConfig) -> String {
        let mut x = input.to_string();
        for i in 0..n {
            x = self.drdb(&format!("{prefix}{}", i + 1), &x, cfg);
        }
        x
    }

    /// Gate `x` by `sigmoid(conv(lrelu(conv([x, reference]))))`.
    fn attention(&mut self, prefix: &str, x: &str, reference: &str, cfg: &NetworkConfig) -> String {
        let ch = cfg.ch;
        let mid = match cfg.attention {
            AttentionWidth::Narrow => ch,
            AttentionWidth::Wide => 2 * ch,
        };
        let cat = self.concat(&format!("{prefix}.cat"), &[x, reference]);
        let h = self.conv_lrelu(&format!("{prefix}.conv0"), &cat, ConvParams::same3x3(2 * ch, mid));
        let a = self.conv(&format!("{prefix}.conv1"), &h, ConvParams::same3x3(mid, ch));
        let a = self.layer(format!("{prefix}.map"), LayerKind::Sigmoid, &[&a]);
        self.layer(format!("{prefix}.out"), LayerKind::Mul, &[&a, x])
    }

    /// Align `x` to `reference` with a modulated deformable convolution whose
    /// offsets and mask come from a small guidance stack.
    fn deformable(&mut self, prefix: &str, x: &str, reference: &str, cfg: &NetworkConfig) -> String {
        let ch = cfg.ch;
        let cat = self.concat(&format!("{prefix}.cat"), &[x, reference]);
        let mut h = cat;
        for i in 0..cfg.guidance_depth {
            let cin = if i == 0 { 2 * ch } else { ch };
            h = self.conv_lrelu(&format!("{prefix}.guide{i}"), &h, ConvParams::same3x3(cin, ch));
        }
        let dp = DeformParams::new(ConvParams::same3x3(ch, ch), cfg.deform_groups);
        let off = self.conv_with(
            &format!("{prefix}.offset"),
            &format!("{prefix}.offset"),
            &h,
            ConvParams::same3x3(ch, dp.offset_channels()),
            Init::Zeros,
            Init::Zeros,
        );
        let m = self.conv_with(
            &format!("{prefix}.mask"),
            &format!("{prefix}.mask"),
            &h,
            ConvParams::same3x3(ch, dp.mask_channels()),
            Init::Zeros,
            Init::Zeros,
        );
        let m = self.layer(format!("{prefix}.mask.act"), LayerKind::Sigmoid, &[&m]);
        let (weight, bias) = self.declare(&format!("{prefix}.dcn"), &dp.base, Init::HeUniform, Init::Zeros);
        self.layer(
            format!("{prefix}.dcn"),
            LayerKind::DeformConv {
                params: dp,
                weight,
                bias,
            },
            &[x, &off, &m],
        )
    }

    fn head(&mut self, features: &str, reference: &str, cfg: &NetworkConfig) -> String {
        let ch = cfg.ch;
        let (skip, cin) = match cfg.skip {
            SkipStyle::Add => (self.add("skip", features, reference), ch),
            SkipStyle::Concat => (self.concat("skip", &[features, reference]), 2 * ch),
        };
        let h = self.conv_lrelu("head", &skip, ConvParams::same3x3(cin, ch));
        let out = self.conv_with("out", "out", &h, ConvParams::same3x3(ch, 3), Init::HeUniform, Init::Const(0.01));
        self.layer("out.act".into(), LayerKind::Relu, &[&out])
    }

    fn finish(mut self, output: String) -> GraphSpec {
        self.g.output = output;
        self.g
    }
}

/// A graph holding one dense dilated block on a `cfg.ch`-channel input `x`.
pub fn drdb_graph(cfg: &NetworkConfig) -> GraphSpec {
    let mut b = Builder::new("drdb", cfg.slope());
    b.g.inputs = vec![InputSpec {
        name: "x".into(),
        channels: cfg.ch,
    }];
    let out = b.drdb("drdb", "x", cfg);
    b.finish(out)
}

/// Dual-branch graphs: the main model, both ablation variants, and the
/// full-resolution-only variant.
fn build_dual_branch(cfg: &NetworkConfig) -> GraphSpec {
    let ch = cfg.ch;
    let mut b = Builder::new(cfg.variant.as_str(), cfg.slope());
    let enc = ConvParams::same3x3(INPUT_CHANNELS, ch);
    let z0: Vec<String> = (0..3)
        .map(|i| b.shared_conv_lrelu(&format!("enc{}", i + 1), "enc", INPUTS[i], enc))
        .collect();

    // Full-resolution branch.
    let full_aligned: Vec<String> = [0, 2]
        .iter()
        .map(|&i| {
            let prefix = format!("full.align{}", i + 1);
            match cfg.variant {
                Variant::VariantA => b.attention(&prefix, &z0[i], &z0[1], cfg),
                _ => b.deformable(&prefix, &z0[i], &z0[1], cfg),
            }
        })
        .collect();
    let cat = b.concat("full.cat", &[&full_aligned[0], &z0[1], &full_aligned[1]]);
    let f = b.conv_lrelu("full.fuse", &cat, ConvParams::same3x3(3 * ch, ch));
    let full_out = b.drdb_stack("full.drdb", &f, cfg.drdb_full, cfg);

    // Low-resolution branch.
    let (stride, low_res) = match cfg.variant {
        Variant::OursStar => (1, Resolution::Full),
        _ => (2, Resolution::Quarter),
    };
    b.res = low_res;
    let down = ConvParams::same3x3(ch, ch).with_stride(stride);
    let z1: Vec<String> = (0..3)
        .map(|i| b.shared_conv_lrelu(&format!("down{}", i + 1), "down", &z0[i], down))
        .collect();
    let low_aligned: Vec<String> = [0, 2]
        .iter()
        .map(|&i| b.attention(&format!("low.att{}", i + 1), &z1[i], &z1[1], cfg))
        .collect();
    let cat = b.concat("low.cat", &[&low_aligned[0], &z1[1], &low_aligned[1]]);
    let f = b.conv_lrelu("low.fuse", &cat, ConvParams::same3x3(3 * ch, ch));
    let low_out = b.drdb_stack("low.drdb", &f, cfg.drdb_low, cfg);

    // Branch fusion back at full resolution.
    b.res = Resolution::Full;
    let up = if stride == 2 {
        b.layer("dbf.up".into(), LayerKind::Upsample2x, &[&low_out])
    } else {
        low_out
    };
    let cat = b.concat("dbf.cat", &[&full_out, &up]);
    let fused = b.conv_lrelu("dbf", &cat, ConvParams::same3x3(2 * ch, ch));
    let out = b.head(&fused, &z0[1], cfg);
    b.finish(out)
}

/// Single full-resolution branch: shared encoder, attention on the two
/// non-reference brackets, dense blocks with global feature fusion.
fn build_ahdr(cfg: &NetworkConfig) -> GraphSpec {
    let ch = cfg.ch;
    let mut b = Builder::new("ahdr", cfg.slope());
    let enc = ConvParams::same3x3(INPUT_CHANNELS, ch);
    let z: Vec<String> = (0..3)
        .map(|i| b.shared_conv_lrelu(&format!("enc{}", i + 1), "enc", INPUTS[i], enc))
        .collect();
    let a1 = b.attention("att1", &z[0], &z[1], cfg);
    let a3 = b.attention("att3", &z[2], &z[1], cfg);
    let cat = b.concat("merge.cat", &[&a1, &z[1], &a3]);
    let mut x = b.conv("merge", &cat, ConvParams::same3x3(3 * ch, ch));
    let mut blocks = Vec::new();
    for i in 0..cfg.drdb_full {
        x = b.drdb(&format!("drdb{}", i + 1), &x, cfg);
        blocks.push(x.clone());
    }
    let refs: Vec<&str> = blocks.iter().map(String::as_str).collect();
    let cat = b.concat("gff.cat", &refs);
    let g = b.conv("gff.pw", &cat, ConvParams::pointwise(ch * cfg.drdb_full, ch));
    let g = b.conv("gff", &g, ConvParams::same3x3(ch, ch));
    let g = b.add("gff.res", &g, &z[1]);
    let u = b.conv("up", &g, ConvParams::same3x3(ch, ch));
    let out = b.conv("out", &u, ConvParams::same3x3(ch, 3));
    let out = b.layer("out.act".into(), LayerKind::Sigmoid, &[&out]);
    b.finish(out)
}

impl NetworkConfig {
    fn slope(&self) -> f32 {
        self.leaky_slope
    }
}
