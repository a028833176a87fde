//! Non-overlapping window partitioning and windowed multi-head
//! self-attention with a learnable relative position bias.
//!
//! Tokens inside a window are ordered row-major; windows are ordered
//! row-major over the grid. Maps whose extents are not multiples of the
//! window are zero-padded on the bottom/right, padded tokens are excluded as
//! attention keys, and the padding is cropped after merging.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{lookup, Init, ParamDecl, VarMap};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Additive logit applied to padded key tokens.
const MASKED_LOGIT: f64 = -1e9;

/// Window layout over an `h × w` map with side `window`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub window: usize,
    pub rows: usize,
    pub cols: usize,
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window size must be positive".into()));
        }
        if !h.is_multiple_of(window) || !w.is_multiple_of(window) {
            return Err(Error::Precondition(format!(
                "{h}x{w} map is not divisible by window {window}; zero-pad bottom/right to a multiple first"
            )));
        }
        Ok(Self {
            window,
            rows: h / window,
            cols: w / window,
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    /// Top-left pixel of window `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        ((index / self.cols) * self.window, (index % self.cols) * self.window)
    }
}

/// Window side actually used on an `h × w` map for a configured window
/// `m`: maps that fit inside one window use a single window of side
/// `max(h, w)`; everything else uses `m` with padding.
pub fn effective_window(h: usize, w: usize, m: usize) -> usize {
    if h <= m && w <= m {
        h.max(w)
    } else {
        m
    }
}

fn nchw(x: &[usize]) -> Result<[usize; 4]> {
    match *x {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref d => Err(Error::shape("window_partition", format!("expected N,C,H,W, got {d:?}"))),
    }
}

/// `[N, C, H, W] → [N·nw, M², C]`.
pub fn window_partition<T: Real>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let v = tape.constant(x.clone());
    Ok(partition_var(&mut tape, &v, m)?.value().clone())
}

/// Inverse of [`window_partition`].
pub fn window_merge<T: Real>(tokens: &Tensor<T>, m: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let v = tape.constant(tokens.clone());
    Ok(merge_var(&mut tape, &v, m, h, w)?.value().clone())
}

pub fn partition_var<T: Real>(tape: &mut Tape<T>, x: &Var<T>, m: usize) -> Result<Var<T>> {
    let [n, c, h, w] = nchw(x.dims())?;
    let g = WindowGrid::new(h, w, m)?;
    let t = tape.reshape(x, &[n, c, g.rows, m, g.cols, m])?;
    // → [n, rows, cols, m, m, c]
    let t = tape.permute(&t, &[0, 2, 4, 3, 5, 1])?;
    tape.reshape(&t, &[n * g.count(), m * m, c])
}

pub fn merge_var<T: Real>(tape: &mut Tape<T>, tokens: &Var<T>, m: usize, h: usize, w: usize) -> Result<Var<T>> {
    let g = WindowGrid::new(h, w, m)?;
    let (b, t, c) = match *tokens.dims() {
        [b, t, c] => (b, t, c),
        ref d => return Err(Error::shape("window_merge", format!("expected [B, M², C], got {d:?}"))),
    };
    if t != m * m || b % g.count() != 0 {
        return Err(Error::shape(
            "window_merge",
            format!("{b} windows of {t} tokens do not tile a {h}x{w} map with window {m}"),
        ));
    }
    let n = b / g.count();
    let v = tape.reshape(tokens, &[n, g.rows, g.cols, m, m, c])?;
    // → [n, c, rows, m, cols, m]
    let v = tape.permute(&v, &[0, 5, 1, 3, 2, 4])?;
    tape.reshape(&v, &[n, c, h, w])
}

/// Bias-table coordinates for every token pair `(i, j)` of an `m × m`
/// window, row-major over `i·m² + j`, against a table of side `2·table_m − 1`.
pub fn relative_position_index_in(m: usize, table_m: usize) -> Vec<(usize, usize)> {
    assert!(m >= 1 && m <= table_m, "window {m} exceeds bias table window {table_m}");
    let t = m * m;
    let mut out = Vec::with_capacity(t * t);
    for i in 0..t {
        let (ri, ci) = (i / m, i % m);
        for j in 0..t {
            let (rj, cj) = (j / m, j % m);
            out.push((ri + table_m - 1 - rj, ci + table_m - 1 - cj));
        }
    }
    out
}

/// `(row_i − row_j + M − 1, col_i − col_j + M − 1)` for all M²×M² pairs.
pub fn relative_position_index(m: usize) -> Vec<(usize, usize)> {
    relative_position_index_in(m, m)
}

/// Multiplication counts of the two attention products (scores and
/// value application), windowed and global: `2·M²·H·W·C` and `2·(H·W)²·C`.
pub fn attention_flops(h: usize, w: usize, c: usize, m: usize) -> (u128, u128) {
    let (h, w, c, m) = (h as u128, w as u128, c as u128, m as u128);
    (2 * m * m * h * w * c, 2 * h * h * w * w * c)
}

/// Hyperparameters of one windowed attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowAttention {
    pub channels: usize,
    pub heads: usize,
    /// Configured window side; sets the bias table to `(2M−1)²`.
    pub window: usize,
    /// One bias table shared by all heads instead of one per head.
    pub shared_bias: bool,
}

impl WindowAttention {
    pub fn new(channels: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {heads} heads"
            )));
        }
        if window == 0 {
            return Err(Error::Config("window size must be positive".into()));
        }
        Ok(Self {
            channels,
            heads,
            window,
            shared_bias: false,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn table_side(&self) -> usize {
        2 * self.window - 1
    }

    pub fn bias_tables(&self) -> usize {
        if self.shared_bias {
            1
        } else {
            self.heads
        }
    }

    pub fn declare(&self, prefix: &str, out: &mut Vec<ParamDecl>) {
        let c = self.channels;
        let l = self.table_side();
        for p in ["wq", "wk", "wv"] {
            out.push(ParamDecl::new(format!("{prefix}.{p}"), &[c, c], Init::FanIn(c)));
        }
        out.push(ParamDecl::new(format!("{prefix}.proj.w"), &[c, c], Init::FanIn(c)));
        out.push(ParamDecl::new(format!("{prefix}.proj.b"), &[c], Init::Zeros));
        out.push(ParamDecl::new(format!("{prefix}.rel_bias"), &[self.bias_tables(), l, l], Init::Zeros));
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        4 * c * c + c + self.bias_tables() * self.table_side() * self.table_side()
    }

    /// `[B, T, C] → [B·heads, T, d_k]`
    fn split_heads<T: Real>(&self, tape: &mut Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let (b, t) = (x.dims()[0], x.dims()[1]);
        let dk = self.head_dim();
        let v = tape.reshape(x, &[b, t, self.heads, dk])?;
        let v = tape.permute(&v, &[0, 2, 1, 3])?;
        tape.reshape(&v, &[b * self.heads, t, dk])
    }

    /// Attention over windows of tokens `x: [B, M², C]` where `m` is the
    /// side of each window (at most the configured window). `key_mask`,
    /// when given, holds one flag per (window, token): `true` marks a padded
    /// token that must not be attended to.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &VarMap<T>,
        prefix: &str,
        x: &Var<T>,
        m: usize,
        key_mask: Option<&[bool]>,
    ) -> Result<Var<T>> {
        let (b, t, c) = match *x.dims() {
            [b, t, c] => (b, t, c),
            ref d => return Err(Error::shape("w_msa", format!("expected [B, M², C], got {d:?}"))),
        };
        if c != self.channels {
            return Err(Error::shape(
                "w_msa",
                format!("token width {c} does not match {} channels", self.channels),
            ));
        }
        if m == 0 || m > self.window || t != m * m {
            return Err(Error::shape(
                "w_msa",
                format!("{t} tokens per window do not form a window of side {m} ≤ {}", self.window),
            ));
        }
        let p = |n: &str| format!("{prefix}.{n}");
        let q = tape.linear(x, lookup(vars, &p("wq"))?, None)?;
        let k = tape.linear(x, lookup(vars, &p("wk"))?, None)?;
        let v = tape.linear(x, lookup(vars, &p("wv"))?, None)?;
        let q = self.split_heads(tape, &q)?;
        let k = self.split_heads(tape, &k)?;
        let v = self.split_heads(tape, &v)?;

        let scores = tape.bmm(&q, &k, true)?;
        let scores = tape.scale(&scores, T::of(1.0 / (self.head_dim() as f64).sqrt()));

        let table = lookup(vars, &p("rel_bias"))?;
        let index = Rc::new(relative_position_index_in(m, self.window));
        let bias = tape.gather_pairs(table, index, &[t, t])?;
        let scores = if self.shared_bias {
            let bias = tape.reshape(&bias, &[t, t])?;
            tape.add_broadcast(&scores, &bias)?
        } else {
            let s = tape.reshape(&scores, &[b, self.heads, t, t])?;
            let s = tape.add_broadcast(&s, &bias)?;
            tape.reshape(&s, &[b * self.heads, t, t])?
        };
        let scores = match key_mask {
            Some(mask) => {
                if mask.len() != b * t {
                    return Err(Error::shape("w_msa", "key mask must hold one flag per window token"));
                }
                let masked = T::of(MASKED_LOGIT);
                let mut logits = Tensor::zeros(&[b * self.heads, t, t]);
                for (bh, block) in logits.data_mut().chunks_mut(t * t).enumerate() {
                    let keys = &mask[(bh / self.heads) * t..][..t];
                    for row in block.chunks_mut(t) {
                        for (l, &pad) in row.iter_mut().zip(keys) {
                            if pad {
                                *l = masked;
                            }
                        }
                    }
                }
                let logits = tape.constant(logits);
                tape.add(&scores, &logits)?
            }
            None => scores,
        };
        let attn = tape.softmax(&scores);
        let out = tape.bmm(&attn, &v, false)?;
        let out = tape.reshape(&out, &[b, self.heads, t, self.head_dim()])?;
        let out = tape.permute(&out, &[0, 2, 1, 3])?;
        let out = tape.reshape(&out, &[b, t, c])?;
        tape.linear(&out, lookup(vars, &p("proj.w"))?, Some(lookup(vars, &p("proj.b"))?))
    }

    /// Windowed attention applied to a feature map `x: [N, C, H, W]`,
    /// with `pre` applied to the window tokens first (e.g. layer norm).
    /// Handles padding and cropping for extents that are not window
    /// multiples.
    pub fn forward_map<T: Real>(
        &self,
        tape: &mut Tape<T>,
        vars: &VarMap<T>,
        prefix: &str,
        x: &Var<T>,
        pre: impl FnOnce(&mut Tape<T>, &Var<T>) -> Result<Var<T>>,
    ) -> Result<Var<T>> {
        let [n, _, h, w] = nchw(x.dims())?;
        let m = effective_window(h, w, self.window);
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = tape.pad_bottom_right(x, ph, pw)?;
        let tokens = partition_var(tape, &padded, m)?;
        let tokens = pre(tape, &tokens)?;
        let mask = (ph != h || pw != w).then(|| padding_mask(n, h, w, ph, pw, m));
        let out = self.forward(tape, vars, prefix, &tokens, m, mask.as_deref())?;
        let merged = merge_var(tape, &out, m, ph, pw)?;
        tape.crop_top_left(&merged, h, w)
    }
}

/// Per-(window, token) padding flags for an `h × w` map padded to
/// `ph × pw`, in partition order.
fn padding_mask(n: usize, h: usize, w: usize, ph: usize, pw: usize, m: usize) -> Vec<bool> {
    let g = WindowGrid::new(ph, pw, m).expect("padded extents are window multiples");
    let mut mask = Vec::with_capacity(n * g.count() * m * m);
    for _ in 0..n {
        for wi in 0..g.count() {
            let (r0, c0) = g.origin(wi);
            for t in 0..m * m {
                mask.push(r0 + t / m >= h || c0 + t % m >= w);
            }
        }
    }
    mask
}
