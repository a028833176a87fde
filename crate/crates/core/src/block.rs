//! Window transformer block: `x* = x + W-MSA(LN(x))`, then
//! `out = x* + LiPe(LN(x*))`, plus the convolutional feed-forward and the
//! decoder's channel projection.

use crate::error::{Error, Result};
use crate::ops::{ConvSpec, DEFAULT_LN_EPS};
use crate::params::{lookup, Init, ParamDecl, VarMap};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::window::WindowAttention;

const TO_NHWC: [usize; 4] = [0, 2, 3, 1];
const TO_NCHW: [usize; 4] = [0, 3, 1, 2];

/// Feed-forward sublayer of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedForward {
    /// Expand → GELU → 3×3 conv → GELU → restore.
    LiPe { expansion: usize, depthwise: bool },
    /// Expand → GELU → restore, the plain transformer MLP.
    Mlp { expansion: usize },
}

impl FeedForward {
    fn hidden(&self, c: usize) -> usize {
        match *self {
            FeedForward::LiPe { expansion, .. } | FeedForward::Mlp { expansion } => expansion * c,
        }
    }

    fn conv_spec(&self, c: usize) -> Option<ConvSpec> {
        match *self {
            FeedForward::LiPe { depthwise, .. } => {
                let e = self.hidden(c);
                let spec = ConvSpec::new(e, e, 3, 1, 1);
                Some(if depthwise { spec.with_groups(e) } else { spec })
            }
            FeedForward::Mlp { .. } => None,
        }
    }

    pub fn declare(&self, c: usize, prefix: &str, out: &mut Vec<ParamDecl>) {
        let e = self.hidden(c);
        out.push(ParamDecl::new(format!("{prefix}.expand.w"), &[e, c], Init::FanIn(c)));
        out.push(ParamDecl::new(format!("{prefix}.expand.b"), &[e], Init::Zeros));
        if let Some(spec) = self.conv_spec(c) {
            let wd = spec.weight_dims();
            out.push(ParamDecl::new(format!("{prefix}.conv.w"), &wd, Init::FanIn(wd[1] * 9)));
            out.push(ParamDecl::new(format!("{prefix}.conv.b"), &[e], Init::Zeros));
        }
        out.push(ParamDecl::new(format!("{prefix}.restore.w"), &[c, e], Init::FanIn(e)));
        out.push(ParamDecl::new(format!("{prefix}.restore.b"), &[c], Init::Zeros));
    }

    pub fn param_count(&self, c: usize) -> usize {
        let e = self.hidden(c);
        let conv = self
            .conv_spec(c)
            .map(|s| s.weight_dims().iter().product::<usize>() + e)
            .unwrap_or(0);
        (e * c + e) + conv + (c * e + c)
    }

    /// Applies the sublayer to channel-last tokens `[N, H, W, C]`.
    pub fn forward_nhwc<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        let c = x.value().last_dim();
        let p = |n: &str| format!("{prefix}.{n}");
        let h = tape.linear(x, lookup(vars, &p("expand.w"))?, Some(lookup(vars, &p("expand.b"))?))?;
        let mut h = tape.gelu(&h);
        if let Some(spec) = self.conv_spec(c) {
            let m = tape.permute(&h, &TO_NCHW)?;
            let m = tape.conv2d(&m, lookup(vars, &p("conv.w"))?, Some(lookup(vars, &p("conv.b"))?), spec)?;
            let m = tape.gelu(&m);
            h = tape.permute(&m, &TO_NHWC)?;
        }
        tape.linear(&h, lookup(vars, &p("restore.w"))?, Some(lookup(vars, &p("restore.b"))?))
    }

    /// Applies the sublayer to a feature map `[N, C, H, W]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        if x.value().ndim() != 4 {
            return Err(Error::shape("lipe", format!("expected N,C,H,W, got {:?}", x.dims())));
        }
        let t = tape.permute(x, &TO_NHWC)?;
        let y = self.forward_nhwc(tape, vars, prefix, &t)?;
        tape.permute(&y, &TO_NCHW)
    }
}

/// One window transformer block at a fixed channel width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WtBlock {
    pub channels: usize,
    pub attention: WindowAttention,
    pub ffn: FeedForward,
}

impl WtBlock {
    pub fn new(channels: usize, head_dim: usize, window: usize, ffn: FeedForward) -> Result<Self> {
        if head_dim == 0 || !channels.is_multiple_of(head_dim) {
            return Err(Error::Config(format!(
                "head dim {head_dim} does not divide {channels} channels"
            )));
        }
        Ok(Self {
            channels,
            attention: WindowAttention::new(channels, channels / head_dim, window)?,
            ffn,
        })
    }

    pub fn with_shared_bias(mut self, shared: bool) -> Self {
        self.attention.shared_bias = shared;
        self
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let c = self.channels;
        out.push(ParamDecl::new(format!("{prefix}.ln1.g"), &[c], Init::Ones));
        out.push(ParamDecl::new(format!("{prefix}.ln1.b"), &[c], Init::Zeros));
        self.attention.declare(&format!("{prefix}.attn"), out);
        out.push(ParamDecl::new(format!("{prefix}.ln2.g"), &[c], Init::Ones));
        out.push(ParamDecl::new(format!("{prefix}.ln2.b"), &[c], Init::Zeros));
        self.ffn.declare(c, &format!("{prefix}.ffn"), out);
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels + self.attention.param_count() + self.ffn.param_count(self.channels)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        match *x.dims() {
            [_, c, _, _] if c == self.channels => {}
            ref d => {
                return Err(Error::shape(
                    "wt_block",
                    format!("expected N,{},H,W input, got {d:?}", self.channels),
                ))
            }
        }
        let p = |n: &str| format!("{prefix}.{n}");
        let (g1, b1) = (lookup(vars, &p("ln1.g"))?, lookup(vars, &p("ln1.b"))?);
        let attn = self.attention.forward_map(tape, vars, &p("attn"), x, |tape, tokens| {
            tape.layer_norm(tokens, g1, b1, DEFAULT_LN_EPS)
        })?;
        let x1 = tape.add(x, &attn)?;

        let t = tape.permute(&x1, &TO_NHWC)?;
        let t = tape.layer_norm(&t, lookup(vars, &p("ln2.g"))?, lookup(vars, &p("ln2.b"))?, DEFAULT_LN_EPS)?;
        let f = self.ffn.forward_nhwc(tape, vars, &p("ffn"), &t)?;
        let f = tape.permute(&f, &TO_NCHW)?;
        tape.add(&x1, &f)
    }
}

/// Pointwise (1×1) channel map used where a decoder level narrows its
/// concatenated input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelProjection {
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ChannelProjection {
    pub fn new(in_channels: usize, out_channels: usize) -> Result<Self> {
        if out_channels == 0 || in_channels < out_channels {
            return Err(Error::Config(format!(
                "channel projection must narrow: {in_channels} → {out_channels}"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
        })
    }

    fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.in_channels, self.out_channels, 1, 1, 0)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        out.push(ParamDecl::new(
            format!("{prefix}.w"),
            &self.spec().weight_dims(),
            Init::FanIn(self.in_channels),
        ));
        out.push(ParamDecl::new(format!("{prefix}.b"), &[self.out_channels], Init::Zeros));
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * self.out_channels + self.out_channels
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        tape.conv2d(
            x,
            lookup(vars, &format!("{prefix}.w"))?,
            Some(lookup(vars, &format!("{prefix}.b"))?),
            self.spec(),
        )
    }
}

/// Sequence of blocks, optionally with a channel projection before or after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WtStack {
    pub blocks: Vec<WtBlock>,
    pub projection: Option<ChannelProjection>,
    pub projection_after: bool,
}

impl WtStack {
    /// Stack of `n` blocks at width `channels` with no projection.
    pub fn plain(n: usize, channels: usize, head_dim: usize, window: usize, ffn: FeedForward, shared_bias: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("a block stack needs at least one block".into()));
        }
        let blk = WtBlock::new(channels, head_dim, window, ffn)?.with_shared_bias(shared_bias);
        Ok(Self {
            blocks: vec![blk; n],
            projection: None,
            projection_after: false,
        })
    }

    /// Decoder stack: projects `in_channels → out_channels` then runs the
    /// blocks at `out_channels`, or (with `projection_after`) runs the
    /// blocks at `in_channels` and projects last.
    #[allow(clippy::too_many_arguments)]
    pub fn projecting(
        n: usize,
        in_channels: usize,
        out_channels: usize,
        head_dim: usize,
        window: usize,
        ffn: FeedForward,
        shared_bias: bool,
        projection_after: bool,
    ) -> Result<Self> {
        let width = if projection_after { in_channels } else { out_channels };
        let mut s = Self::plain(n, width, head_dim, window, ffn, shared_bias)?;
        s.projection = Some(ChannelProjection::new(in_channels, out_channels)?);
        s.projection_after = projection_after;
        Ok(s)
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        if let Some(p) = &self.projection {
            p.declare(&format!("{prefix}.proj"), out);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.declare(&format!("{prefix}.blk{i}"), out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.projection.map_or(0, |p| p.param_count()) + self.blocks.iter().map(WtBlock::param_count).sum::<usize>()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, vars: &VarMap<T>, prefix: &str, x: &Var<T>) -> Result<Var<T>> {
        let proj_name = format!("{prefix}.proj");
        let mut h = x.clone();
        if let (Some(p), false) = (&self.projection, self.projection_after) {
            h = p.forward(tape, vars, &proj_name, &h)?;
        }
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(tape, vars, &format!("{prefix}.blk{i}"), &h)?;
        }
        if let (Some(p), true) = (&self.projection, self.projection_after) {
            h = p.forward(tape, vars, &proj_name, &h)?;
        }
        Ok(h)
    }
}
