//! Layout and indexing ops: permute, concat, pad/crop, batched matmul,
//! broadcast add, and table gathers.

use super::matmul::matmul;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::shape("permute", format!("{perm:?} is not a permutation of {nd} axes")));
    }
    let in_strides = strides(x.dims());
    let out_dims: Vec<usize> = perm.iter().map(|&p| x.dims()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let inner = out_dims[nd - 1];
    let inner_stride = src_strides[nd - 1];
    let mut idx = vec![0usize; nd - 1];
    let src = x.data();
    loop {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        // odometer over the outer axes
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return Tensor::from_vec(&out_dims, out);
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    let nd = first.ndim();
    if axis >= nd {
        return Err(Error::shape("concat", format!("axis {axis} out of range for rank {nd}")));
    }
    for p in parts {
        let ok = p.ndim() == nd
            && p.dims().iter().zip(first.dims()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(
                "concat",
                format!("dims {:?} incompatible with {:?} along axis {axis}", p.dims(), first.dims()),
            ));
        }
    }
    let outer: usize = first.dims()[..axis].iter().product();
    let inner: usize = first.dims()[axis + 1..].iter().product();
    let mut dims = first.dims().to_vec();
    dims[axis] = parts.iter().map(|p| p.dims()[axis]).sum();
    let mut out = Vec::with_capacity(dims.iter().product());
    for o in 0..outer {
        for p in parts {
            let len = p.dims()[axis] * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    Tensor::from_vec(&dims, out)
}

/// Splits a gradient along `axis` into pieces of the given extents.
pub fn split<T: Real>(x: &Tensor<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if sizes.iter().sum::<usize>() != x.dims()[axis] {
        return Err(Error::shape("split", format!("sizes {sizes:?} do not sum to axis extent")));
    }
    let outer: usize = x.dims()[..axis].iter().product();
    let inner: usize = x.dims()[axis + 1..].iter().product();
    let row = x.dims()[axis] * inner;
    let mut offset = 0;
    let mut outs = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let mut dims = x.dims().to_vec();
        dims[axis] = s;
        let mut buf = Vec::with_capacity(outer * s * inner);
        for o in 0..outer {
            buf.extend_from_slice(&x.data()[o * row + offset..o * row + offset + s * inner]);
        }
        outs.push(Tensor::from_vec(&dims, buf)?);
        offset += s * inner;
    }
    Ok(outs)
}

/// Zero-pads the last two axes on the bottom/right to `(h, w)`.
pub fn pad_bottom_right<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let nd = x.ndim();
    if nd < 2 {
        return Err(Error::shape("pad", "need at least two axes"));
    }
    let (ih, iw) = (x.dims()[nd - 2], x.dims()[nd - 1]);
    if h < ih || w < iw {
        return Err(Error::shape("pad", format!("target {h}x{w} smaller than {ih}x{iw}")));
    }
    let mut dims = x.dims().to_vec();
    dims[nd - 2] = h;
    dims[nd - 1] = w;
    let mut out = Tensor::zeros(&dims);
    for (src, dst) in x.data().chunks(ih * iw).zip(out.data_mut().chunks_mut(h * w)) {
        for r in 0..ih {
            dst[r * w..r * w + iw].copy_from_slice(&src[r * iw..(r + 1) * iw]);
        }
    }
    Ok(out)
}

/// Keeps the top-left `(h, w)` of the last two axes.
pub fn crop_top_left<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let nd = x.ndim();
    let (ih, iw) = (x.dims()[nd - 2], x.dims()[nd - 1]);
    if h > ih || w > iw || h == 0 || w == 0 {
        return Err(Error::shape("crop", format!("target {h}x{w} not inside {ih}x{iw}")));
    }
    let mut dims = x.dims().to_vec();
    dims[nd - 2] = h;
    dims[nd - 1] = w;
    let mut out = Vec::with_capacity(x.numel() / (ih * iw) * h * w);
    for src in x.data().chunks(ih * iw) {
        for r in 0..h {
            out.extend_from_slice(&src[r * iw..r * iw + w]);
        }
    }
    Tensor::from_vec(&dims, out)
}

fn bmm_dims<T: Real>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<(usize, usize, usize, usize)> {
    let (ba, m, k) = match *a.dims() {
        [x, y, z] => (x, y, z),
        ref d => return Err(Error::shape("bmm", format!("lhs must be rank 3, got {d:?}"))),
    };
    let (bb, r, c) = match *b.dims() {
        [x, y, z] => (x, y, z),
        ref d => return Err(Error::shape("bmm", format!("rhs must be rank 3, got {d:?}"))),
    };
    let (kb, n) = if trans_b { (c, r) } else { (r, c) };
    if ba != bb || k != kb {
        return Err(Error::shape(
            "bmm",
            format!("{:?} x {:?}{} incompatible", a.dims(), b.dims(), if trans_b { "ᵀ" } else { "" }),
        ));
    }
    Ok((ba, m, k, n))
}

/// Batched `a · b` (or `a · bᵀ`) over the leading axis.
pub fn bmm<T: Real>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let (batch, m, k, n) = bmm_dims(a, b, trans_b)?;
    let mut out = Tensor::zeros(&[batch, m, n]);
    for i in 0..batch {
        matmul(
            &a.data()[i * m * k..(i + 1) * m * k],
            false,
            &b.data()[i * k * n..(i + 1) * k * n],
            trans_b,
            &mut out.data_mut()[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
            false,
        );
    }
    Ok(out)
}

pub fn bmm_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_b: bool,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (batch, m, k, n) = bmm_dims(a, b, trans_b)?;
    let mut da = Tensor::zeros(a.dims());
    let mut db = Tensor::zeros(b.dims());
    for i in 0..batch {
        let g = &dy.data()[i * m * n..(i + 1) * m * n];
        let av = &a.data()[i * m * k..(i + 1) * m * k];
        let bv = &b.data()[i * k * n..(i + 1) * k * n];
        let da_i = &mut da.data_mut()[i * m * k..(i + 1) * m * k];
        // dA = dY · op(B)ᵀ
        matmul(g, false, bv, !trans_b, da_i, m, n, k, false);
        let db_i = &mut db.data_mut()[i * k * n..(i + 1) * k * n];
        if trans_b {
            // B is n×k: dB = dYᵀ · A
            matmul(g, true, av, false, db_i, n, m, k, false);
        } else {
            // B is k×n: dB = Aᵀ · dY
            matmul(av, true, g, false, db_i, k, m, n, false);
        }
    }
    Ok((da, db))
}

/// `a + b` where `b`'s dims equal a trailing suffix of `a`'s dims.
pub fn add_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let nb = b.ndim();
    if nb > a.ndim() || a.dims()[a.ndim() - nb..] != *b.dims() {
        return Err(Error::shape(
            "add",
            format!("{:?} does not broadcast onto {:?}", b.dims(), a.dims()),
        ));
    }
    let mut out = a.clone();
    for chunk in out.data_mut().chunks_mut(b.numel()) {
        for (v, &w) in chunk.iter_mut().zip(b.data()) {
            *v += w;
        }
    }
    Ok(out)
}

/// Reduces a broadcast gradient back to the suffix shape `dims`.
pub fn reduce_to_suffix<T: Real>(dy: &Tensor<T>, dims: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(dims);
    let n = out.numel();
    for chunk in dy.data().chunks(n) {
        for (acc, &g) in out.data_mut().iter_mut().zip(chunk) {
            *acc += g;
        }
    }
    out
}

/// Gathers `table[h, r, c]` into `[heads, pairs]` for a list of `(r, c)`
/// coordinates; output dims are `[heads] ++ out_tail`.
pub fn gather_pairs<T: Real>(
    table: &Tensor<T>,
    index: &[(usize, usize)],
    out_tail: &[usize],
) -> Result<Tensor<T>> {
    let (heads, rows, cols) = match *table.dims() {
        [h, r, c] => (h, r, c),
        ref d => return Err(Error::shape("gather", format!("table must be rank 3, got {d:?}"))),
    };
    if out_tail.iter().product::<usize>() != index.len() {
        return Err(Error::shape("gather", "index count does not match output shape"));
    }
    if let Some(&(r, c)) = index.iter().find(|&&(r, c)| r >= rows || c >= cols) {
        return Err(Error::shape("gather", format!("index ({r},{c}) outside {rows}x{cols} table")));
    }
    let mut data = Vec::with_capacity(heads * index.len());
    for h in 0..heads {
        let t = &table.data()[h * rows * cols..(h + 1) * rows * cols];
        data.extend(index.iter().map(|&(r, c)| t[r * cols + c]));
    }
    let mut dims = vec![heads];
    dims.extend_from_slice(out_tail);
    Tensor::from_vec(&dims, data)
}

pub fn gather_pairs_backward<T: Real>(
    table_dims: &[usize],
    index: &[(usize, usize)],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (rows, cols) = (table_dims[1], table_dims[2]);
    let mut dt = Tensor::zeros(table_dims);
    for (h, g) in dy.data().chunks(index.len()).enumerate() {
        let t = &mut dt.data_mut()[h * rows * cols..(h + 1) * rows * cols];
        for (&(r, c), &v) in index.iter().zip(g) {
            t[r * cols + c] += v;
        }
    }
    dt
}
