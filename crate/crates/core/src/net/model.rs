//! Full network assembly: input embedding, encoder stacks with strided-conv
//! downsampling, bottleneck, nested conv nodes, projecting decoder stacks,
//! output projection, and the global residual `x̂ = y + r`.

use std::collections::BTreeMap;

use crate::block::WtStack;
use crate::error::{Error, Result};
use crate::net::config::NetConfig;
use crate::net::graph::{node_graph, EdgeKind, NodeGraph, NodeId, NodeRole};
use crate::ops::ConvSpec;
use crate::params::{lookup, Init, ParamDecl, ParamStore, VarMap};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// 3×3 conv from the single input channel to `C`.
#[derive(Clone, Copy, Debug)]
pub struct InputEmbed {
    pub channels: usize,
}

impl InputEmbed {
    fn spec(&self) -> ConvSpec {
        ConvSpec::new(1, self.channels, 3, 1, 1)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        out.push(ParamDecl::new(format!("{prefix}.w"), &self.spec().weight_dims(), Init::FanIn(9)));
        out.push(ParamDecl::new(format!("{prefix}.b"), &[self.channels], Init::Zeros));
    }

    pub fn param_count(&self) -> usize {
        self.channels * 9 + self.channels
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, y: &Var<T>) -> Result<Var<T>> {
        match *y.dims() {
            [_, 1, _, _] => {}
            ref d => return Err(Error::shape("input_embed", format!("expected N,1,H,W input, got {d:?}"))),
        }
        conv(tape, vars, prefix, y, self.spec())
    }
}

fn conv<T: Real>(tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>, spec: ConvSpec) -> Result<Var<T>> {
    tape.conv2d(
        x,
        lookup(vars, &format!("{prefix}.w"))?,
        Some(lookup(vars, &format!("{prefix}.b"))?),
        spec,
    )
}

/// 4×4 stride-2 conv that halves the extent and doubles the channels.
#[derive(Clone, Copy, Debug)]
pub struct Downsample {
    pub in_channels: usize,
}

impl Downsample {
    fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.in_channels, 2 * self.in_channels, 4, 2, 1)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let s = self.spec();
        out.push(ParamDecl::new(format!("{prefix}.w"), &s.weight_dims(), Init::FanIn(self.in_channels * 16)));
        out.push(ParamDecl::new(format!("{prefix}.b"), &[s.out_channels], Init::Zeros));
    }

    pub fn param_count(&self) -> usize {
        2 * self.in_channels * self.in_channels * 16 + 2 * self.in_channels
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        let d = x.dims();
        if d.len() != 4 || !d[2].is_multiple_of(2) || !d[3].is_multiple_of(2) {
            return Err(Error::Precondition(format!("downsample needs even spatial extents, got {d:?}")));
        }
        conv(tape, vars, prefix, x, self.spec())
    }
}

/// 2×2 stride-2 transposed conv that doubles the extent and halves the
/// channels.
#[derive(Clone, Copy, Debug)]
pub struct Upsample {
    pub in_channels: usize,
}

impl Upsample {
    pub fn new(in_channels: usize) -> Result<Self> {
        if in_channels < 2 || !in_channels.is_multiple_of(2) {
            return Err(Error::Config(format!("upsample needs an even channel count, got {in_channels}")));
        }
        Ok(Self { in_channels })
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let c = self.in_channels;
        out.push(ParamDecl::new(format!("{prefix}.w"), &[c, c / 2, 2, 2], Init::FanIn(c)));
        out.push(ParamDecl::new(format!("{prefix}.b"), &[c / 2], Init::Zeros));
    }

    pub fn param_count(&self) -> usize {
        let c = self.in_channels;
        c * (c / 2) * 4 + c / 2
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        if x.dims().get(1) != Some(&self.in_channels) {
            return Err(Error::shape(
                "upsample",
                format!("expected {} channels, got {:?}", self.in_channels, x.dims()),
            ));
        }
        tape.conv_transpose2d(
            x,
            lookup(vars, &format!("{prefix}.w"))?,
            Some(lookup(vars, &format!("{prefix}.b"))?),
            2,
        )
    }
}

/// Dense conv block of an intermediate node: concat → 3×3 conv → GELU →
/// 3×3 conv, back to the level width.
#[derive(Clone, Copy, Debug)]
pub struct NestedNode {
    pub channels: usize,
    /// Number of concatenated inputs (`v + 1`).
    pub inputs: usize,
}

impl NestedNode {
    fn specs(&self) -> (ConvSpec, ConvSpec) {
        let c = self.channels;
        (ConvSpec::new(self.inputs * c, c, 3, 1, 1), ConvSpec::new(c, c, 3, 1, 1))
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let (a, b) = self.specs();
        out.push(ParamDecl::new(format!("{prefix}.conv1.w"), &a.weight_dims(), Init::FanIn(a.in_channels * 9)));
        out.push(ParamDecl::new(format!("{prefix}.conv1.b"), &[a.out_channels], Init::Zeros));
        out.push(ParamDecl::new(format!("{prefix}.conv2.w"), &b.weight_dims(), Init::FanIn(b.in_channels * 9)));
        out.push(ParamDecl::new(format!("{prefix}.conv2.b"), &[b.out_channels], Init::Zeros));
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        (self.inputs * c * c * 9 + c) + (c * c * 9 + c)
    }

    /// `skips` are the same-level node outputs `x[k][0..v]`, `upsampled` the
    /// upsampled output of the node below-left.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &VarMap<T>,
        prefix: &str,
        skips: &[&Var<T>],
        upsampled: &Var<T>,
    ) -> Result<Var<T>> {
        if skips.len() + 1 != self.inputs {
            return Err(Error::shape(
                "intermediate_node",
                format!("expected {} inputs, got {}", self.inputs, skips.len() + 1),
            ));
        }
        let mut all: Vec<&Var<T>> = skips.to_vec();
        all.push(upsampled);
        if let Some(bad) = all.iter().find(|v| v.dims() != upsampled.dims()) {
            return Err(Error::shape(
                "intermediate_node",
                format!("input {:?} does not match {:?}", bad.dims(), upsampled.dims()),
            ));
        }
        let cat = tape.concat(&all, 1)?;
        let (a, b) = self.specs();
        let h = conv(tape, vars, &format!("{prefix}.conv1"), &cat, a)?;
        let h = tape.gelu(&h);
        conv(tape, vars, &format!("{prefix}.conv2"), &h, b)
    }
}

/// Per-node record from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTrace {
    pub node: NodeId,
    pub role: NodeRole,
    /// Number of tensors feeding the node.
    pub inputs: usize,
    /// Channel width entering the node (after concatenation).
    pub in_channels: usize,
    pub out_dims: Vec<usize>,
}

pub struct ForwardOutput<T: Real> {
    pub output: Var<T>,
    pub trace: Vec<NodeTrace>,
}

/// What a node computes.
#[derive(Clone, Debug)]
enum NodeOp {
    Stack(WtStack),
    Nested(NestedNode),
}

/// Structure of the network for one [`NetConfig`].
#[derive(Clone, Debug)]
pub struct WiTUnet {
    pub cfg: NetConfig,
    pub graph: NodeGraph,
    embed: InputEmbed,
    nodes: BTreeMap<NodeId, NodeOp>,
}

impl WiTUnet {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = node_graph(&cfg);
        let d = cfg.depth;
        let ffn = cfg.feed_forward();
        let mut nodes = BTreeMap::new();
        for &n in &graph.nodes {
            let c = cfg.channels_at(n.k);
            let op = match n.role(d) {
                NodeRole::Encoder | NodeRole::Bottleneck => NodeOp::Stack(WtStack::plain(
                    cfg.blocks_per_level,
                    c,
                    cfg.head_dim,
                    cfg.window,
                    ffn,
                    cfg.shared_bias_table,
                )?),
                NodeRole::Decoder => NodeOp::Stack(WtStack::projecting(
                    cfg.blocks_per_level,
                    graph.in_degree(n) * c,
                    c,
                    cfg.head_dim,
                    cfg.window,
                    ffn,
                    cfg.shared_bias_table,
                    cfg.projection_after,
                )?),
                NodeRole::Intermediate => NodeOp::Nested(NestedNode {
                    channels: c,
                    inputs: graph.in_degree(n),
                }),
            };
            nodes.insert(n, op);
        }
        Ok(Self {
            embed: InputEmbed {
                channels: cfg.base_channels,
            },
            cfg,
            graph,
            nodes,
        })
    }

    fn node_prefix(&self, n: NodeId) -> String {
        match n.role(self.cfg.depth) {
            NodeRole::Encoder => format!("enc.k{}", n.k),
            NodeRole::Bottleneck => "bottleneck".to_string(),
            NodeRole::Intermediate => format!("nest.k{}.v{}", n.k, n.v),
            NodeRole::Decoder => format!("dec.k{}", n.k),
        }
    }

    fn down(&self, k: usize) -> Downsample {
        Downsample {
            in_channels: self.cfg.channels_at(k),
        }
    }

    fn up(&self, target: NodeId) -> Upsample {
        Upsample {
            in_channels: self.cfg.channels_at(target.k + 1),
        }
    }

    fn out_spec(&self) -> ConvSpec {
        ConvSpec::new(self.cfg.base_channels, 1, 3, 1, 1)
    }

    /// Every parameter, in a fixed order.
    pub fn declare(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        self.embed.declare("embed", &mut out);
        for &n in &self.graph.nodes {
            match n.role(self.cfg.depth) {
                NodeRole::Encoder => self.down(n.k).declare(&format!("down.k{}", n.k), &mut out),
                NodeRole::Intermediate | NodeRole::Decoder => {
                    self.up(n).declare(&format!("up.k{}.v{}", n.k, n.v), &mut out)
                }
                NodeRole::Bottleneck => {}
            }
            let prefix = self.node_prefix(n);
            match &self.nodes[&n] {
                NodeOp::Stack(s) => s.declare(&prefix, &mut out),
                NodeOp::Nested(nn) => nn.declare(&prefix, &mut out),
            }
        }
        // Zero-initialized so the untrained network is the identity map.
        out.push(ParamDecl::new("out.w", &self.out_spec().weight_dims(), Init::Zeros));
        out.push(ParamDecl::new("out.b", &[1], Init::Zeros));
        out
    }

    /// Freshly initialized parameters.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        ParamStore::from_decls(&self.declare(), seed)
    }

    /// Closed-form parameter total, summed per component.
    pub fn param_count(&self) -> usize {
        let d = self.cfg.depth;
        let mut total = self.embed.param_count() + (self.cfg.base_channels * 9 + 1);
        for &n in &self.graph.nodes {
            total += match n.role(d) {
                NodeRole::Encoder => self.down(n.k).param_count(),
                NodeRole::Intermediate | NodeRole::Decoder => self.up(n).param_count(),
                NodeRole::Bottleneck => 0,
            };
            total += match &self.nodes[&n] {
                NodeOp::Stack(s) => s.param_count(),
                NodeOp::Nested(nn) => nn.param_count(),
            };
        }
        total
    }

    /// Runs the network on `y: [N, 1, H, W]`. Extents that are not multiples
    /// of `2^D` are zero-padded on the bottom/right and the residual is
    /// cropped back before adding it to `y`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, y: &Var<T>) -> Result<ForwardOutput<T>> {
        let (h, w) = match *y.dims() {
            [_, 1, h, w] => (h, w),
            ref d => return Err(Error::shape("forward", format!("expected N,1,H,W input, got {d:?}"))),
        };
        if !y.value().is_finite() {
            return Err(Error::Precondition("input contains non-finite values".into()));
        }
        let mult = self.cfg.spatial_multiple();
        let (ph, pw) = (h.div_ceil(mult) * mult, w.div_ceil(mult) * mult);
        let padded = tape.pad_bottom_right(y, ph, pw)?;
        let d = self.cfg.depth;

        let mut outs: BTreeMap<NodeId, Var<T>> = BTreeMap::new();
        let mut trace = Vec::with_capacity(self.graph.nodes.len());
        for &n in &self.graph.nodes {
            let prefix = self.node_prefix(n);
            let edges = self.graph.inputs(n);
            let (input, inputs, in_channels) = match &self.nodes[&n] {
                NodeOp::Stack(stack) => {
                    let x = if n.v == 0 {
                        if n.k == 0 {
                            self.embed.forward(tape, vars, "embed", &padded)?
                        } else {
                            let src = &outs[&NodeId::new(n.k - 1, 0)];
                            self.down(n.k - 1).forward(tape, vars, &format!("down.k{}", n.k - 1), src)?
                        }
                    } else {
                        self.gather_inputs(tape, vars, n, &edges, &outs)?
                    };
                    let c_in = x.dims()[1];
                    let y = stack.forward(tape, vars, &prefix, &x)?;
                    (y, edges.len().max(1), c_in)
                }
                NodeOp::Nested(node) => {
                    let skips: Vec<&Var<T>> = edges
                        .iter()
                        .filter(|e| e.kind == EdgeKind::Skip)
                        .map(|e| &outs[&e.from])
                        .collect();
                    let up_edge = edges.iter().find(|e| e.kind == EdgeKind::Up).expect("nested node has an up edge");
                    let up = self.up(n).forward(
                        tape,
                        vars,
                        &format!("up.k{}.v{}", n.k, n.v),
                        &outs[&up_edge.from],
                    )?;
                    let y = node.forward(tape, vars, &prefix, &skips, &up)?;
                    (y, edges.len(), node.inputs * node.channels)
                }
            };
            trace.push(NodeTrace {
                node: n,
                role: n.role(d),
                inputs,
                in_channels,
                out_dims: input.dims().to_vec(),
            });
            outs.insert(n, input);
        }

        let last = &outs[&self.graph.decoder(0)];
        let r = conv(tape, vars, "out", last, self.out_spec())?;
        let r = tape.crop_top_left(&r, h, w)?;
        let output = tape.add(y, &r)?;
        Ok(ForwardOutput { output, trace })
    }

    /// Concatenated decoder input: skips then the upsampled lower node.
    fn gather_inputs<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &VarMap<T>,
        n: NodeId,
        edges: &[crate::net::graph::Edge],
        outs: &BTreeMap<NodeId, Var<T>>,
    ) -> Result<Var<T>> {
        let mut parts: Vec<Var<T>> = Vec::with_capacity(edges.len());
        for e in edges {
            match e.kind {
                EdgeKind::Skip => parts.push(outs[&e.from].clone()),
                EdgeKind::Up => parts.push(self.up(n).forward(
                    tape,
                    vars,
                    &format!("up.k{}.v{}", n.k, n.v),
                    &outs[&e.from],
                )?),
                EdgeKind::Down => unreachable!("decoders have no down edges"),
            }
        }
        let refs: Vec<&Var<T>> = parts.iter().collect();
        tape.concat(&refs, 1)
    }

    /// Convenience: denoise a batch with a read-only parameter store.
    pub fn denoise<T: Real>(&self, params: &ParamStore<T>, y: &crate::tensor::Tensor<T>) -> Result<crate::tensor::Tensor<T>> {
        let mut tape = Tape::inference();
        let vars = params.register(&mut tape);
        let input = tape.constant(y.clone());
        let out = self.forward(&mut tape, &vars, &input)?;
        Ok(out.output.value().clone())
    }
}
