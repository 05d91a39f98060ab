//! Slice-level compute kernels for the tape operators. Layout is HWC for
//! feature maps and `[k, k, cin, cout]` for convolution kernels.

use crate::tensor::Real;

#[inline]
fn shifted(pos: usize, offset: usize, pad: usize, extent: usize) -> Option<usize> {
    let p = pos + offset;
    if p < pad || p - pad >= extent {
        None
    } else {
        Some(p - pad)
    }
}

pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        (self.k - 1) / 2
    }
}

pub(crate) fn conv2d_same<T: Real>(g: &ConvGeom, input: &[T], kernel: &[T], bias: &[T]) -> Vec<T> {
    let ConvGeom { h, w, cin, cout, k } = *g;
    let pad = g.pad();
    let mut out = vec![T::zero(); h * w * cout];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..][..cout];
            o.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = shifted(y, ky, pad, h) else { continue };
                for kx in 0..k {
                    let Some(ix) = shifted(x, kx, pad, w) else { continue };
                    let inp = &input[(iy * w + ix) * cin..][..cin];
                    let kb = &kernel[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (ci, &a) in inp.iter().enumerate() {
                        let row = &kb[ci * cout..][..cout];
                        for (ov, &kv) in o.iter_mut().zip(row) {
                            *ov += a * kv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates adjoints of a same-padded convolution. Any of the output
/// buffers may be `None` when that operand does not need a gradient.
pub(crate) fn conv2d_same_backward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    upstream: &[T],
    mut d_input: Option<&mut [T]>,
    mut d_kernel: Option<&mut [T]>,
    d_bias: Option<&mut [T]>,
) {
    let ConvGeom { h, w, cin, cout, k } = *g;
    let pad = g.pad();
    if let Some(db) = d_bias {
        for px in upstream.chunks_exact(cout) {
            for (b, &u) in db.iter_mut().zip(px) {
                *b += u;
            }
        }
    }
    if d_input.is_none() && d_kernel.is_none() {
        return;
    }
    for y in 0..h {
        for x in 0..w {
            let up = &upstream[(y * w + x) * cout..][..cout];
            for ky in 0..k {
                let Some(iy) = shifted(y, ky, pad, h) else { continue };
                for kx in 0..k {
                    let Some(ix) = shifted(x, kx, pad, w) else { continue };
                    let base = (iy * w + ix) * cin;
                    let kbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let row = kbase + ci * cout;
                        if let Some(di) = d_input.as_deref_mut() {
                            let mut acc = T::zero();
                            for (&kv, &u) in kernel[row..row + cout].iter().zip(up) {
                                acc += kv * u;
                            }
                            di[base + ci] += acc;
                        }
                        if let Some(dk) = d_kernel.as_deref_mut() {
                            let a = input[base + ci];
                            for (dkv, &u) in dk[row..row + cout].iter_mut().zip(up) {
                                *dkv += a * u;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 max pooling with ceil semantics. Returns the pooled values and, per
/// output element, the flat input index of the first maximum in row-major
/// window order.
pub(crate) fn maxpool_2x2<T: Real>(input: &[T], h: usize, w: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = input[best_idx];
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = (y * w + x) * c + ch;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}

/// `weight[m, n] * input[n] + bias[m]`.
pub(crate) fn matvec<T: Real>(weight: &[T], input: &[T], bias: Option<&[T]>) -> Vec<T> {
    let n = input.len();
    weight
        .chunks_exact(n)
        .enumerate()
        .map(|(m, row)| {
            let mut acc = bias.map_or(T::zero(), |b| b[m]);
            for (&wv, &xv) in row.iter().zip(input) {
                acc += wv * xv;
            }
            acc
        })
        .collect()
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
