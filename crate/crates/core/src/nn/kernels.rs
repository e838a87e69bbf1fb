//! Forward/backward numerics for the autograd ops, on plain buffers.

use super::tensor::{Real, Tensor};

const NORM_EPS: f64 = 1e-5;

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: ConvGeom, col: &mut [T]) {
    let ConvGeom {
        c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
    } = g;
    let hw_out = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: ConvGeom, dx: &mut [T]) {
    let ConvGeom {
        c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
    } = g;
    let hw_out = ho * wo;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> (usize, usize, ConvGeom) {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, ci, k) = (ws[0], ws[1], ws[2]);
    assert_eq!(c, ci, "conv2d: input has {c} channels, kernel expects {ci}");
    let ho = conv_out_size(h, k, stride, pad).expect("conv2d: kernel larger than padded input");
    let wo = conv_out_size(w, k, stride, pad).expect("conv2d: kernel larger than padded input");
    (
        n,
        co,
        ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho,
            wo,
        },
    )
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let (n, co, g) = geometry(x.shape(), weight.shape(), stride, pad);
    let kk = g.c * g.k * g.k;
    let hw = g.ho * g.wo;
    let mut out = Tensor::zeros(&[n, co, g.ho, g.wo]);
    let mut col = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * hw]
    };
    for s in 0..n {
        let xs = x.sample(s);
        let cols: &[T] = if g.pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        let dst = &mut out.data_mut()[s * co * hw..(s + 1) * co * hw];
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(hw).enumerate() {
                chunk.fill(b.data()[o]);
            }
        }
        T::gemm(co, kk, hw, weight.data(), false, cols, false, T::one(), dst);
    }
    out
}

type Grads3<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> Grads3<T> {
    let (n, co, g) = geometry(x.shape(), weight.shape(), stride, pad);
    let kk = g.c * g.k * g.k;
    let hw = g.ho * g.wo;
    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_b.then(|| Tensor::zeros(&[co]));
    let mut col = vec![T::zero(); if g.pointwise() { 0 } else { kk * hw }];
    let mut dcol = vec![T::zero(); if need_x { kk * hw } else { 0 }];
    for s in 0..n {
        let gs = gout.sample(s);
        if let Some(dw) = dw.as_mut() {
            let cols: &[T] = if g.pointwise() {
                x.sample(s)
            } else {
                im2col(x.sample(s), g, &mut col);
                &col
            };
            T::gemm(co, hw, kk, gs, false, cols, true, T::one(), dw.data_mut());
        }
        if let Some(db) = db.as_mut() {
            for (o, chunk) in gs.chunks(hw).enumerate() {
                db.data_mut()[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let per = g.c * g.h * g.w;
            let dxs = &mut dx.data_mut()[s * per..(s + 1) * per];
            if g.pointwise() {
                T::gemm(kk, co, hw, weight.data(), true, gs, false, T::zero(), dxs);
            } else {
                T::gemm(kk, co, hw, weight.data(), true, gs, false, T::zero(), &mut dcol);
                col2im(&dcol, g, dxs);
            }
        }
    }
    (dx, dw, db)
}

/// Visits normalization groups: per (sample, channel) plane, or per channel
/// across the batch. Each group is a list of contiguous spans.
fn norm_groups(shape: &[usize], per_sample: bool) -> Vec<(usize, Vec<std::ops::Range<usize>>)> {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    if per_sample {
        (0..n * c)
            .map(|g| (g % c, vec![g * hw..(g + 1) * hw]))
            .collect()
    } else {
        (0..c)
            .map(|ch| {
                let spans = (0..n)
                    .map(|s| {
                        let start = (s * c + ch) * hw;
                        start..start + hw
                    })
                    .collect();
                (ch, spans)
            })
            .collect()
    }
}

/// Returns the output and per-group `(mean, 1/std)`.
pub fn norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    per_sample: bool,
) -> (Tensor<T>, Vec<(T, T)>) {
    let eps = T::lit(NORM_EPS);
    let mut out = Tensor::zeros(x.shape());
    let groups = norm_groups(x.shape(), per_sample);
    let mut stats = Vec::with_capacity(groups.len());
    for (ch, spans) in groups {
        let m = T::from_usize(spans.iter().map(|r| r.len()).sum()).unwrap();
        let mean = spans
            .iter()
            .flat_map(|r| x.data()[r.clone()].iter().copied())
            .sum::<T>()
            / m;
        let var = spans
            .iter()
            .flat_map(|r| x.data()[r.clone()].iter())
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / m;
        let inv = T::one() / (var + eps).sqrt();
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for r in spans {
            for i in r {
                out.data_mut()[i] = g * (x.data()[i] - mean) * inv + b;
            }
        }
        stats.push((mean, inv));
    }
    (out, stats)
}

pub fn norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    gout: &Tensor<T>,
    stats: &[(T, T)],
    per_sample: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(gamma.shape());
    let mut dbeta = Tensor::zeros(gamma.shape());
    for ((ch, spans), &(mean, inv)) in norm_groups(x.shape(), per_sample).into_iter().zip(stats) {
        let m = T::from_usize(spans.iter().map(|r| r.len()).sum()).unwrap();
        let g = gamma.data()[ch];
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for r in &spans {
            for i in r.clone() {
                let xhat = (x.data()[i] - mean) * inv;
                sum_dy += gout.data()[i];
                sum_dy_xhat += gout.data()[i] * xhat;
            }
        }
        dgamma.data_mut()[ch] += sum_dy_xhat;
        dbeta.data_mut()[ch] += sum_dy;
        let k = g * inv / m;
        for r in spans {
            for i in r {
                let xhat = (x.data()[i] - mean) * inv;
                dx.data_mut()[i] = k * (m * gout.data()[i] - sum_dy - xhat * sum_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn channel_bias_forward<T: Real>(x: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    assert_eq!(bias.shape(), &[n, c], "channel bias must be [N, C]");
    let mut out = x.clone();
    for (p, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        let b = bias.data()[p];
        plane.iter_mut().for_each(|v| *v += b);
    }
    out
}

pub fn channel_bias_backward<T: Real>(g: &Tensor<T>, bias_shape: &[usize]) -> Tensor<T> {
    let hw = g.shape()[2] * g.shape()[3];
    let data = g.data().chunks(hw).map(|p| p.iter().copied().sum()).collect();
    Tensor::new(bias_shape, data).expect("bias shape")
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (sa, sb) = (a.shape(), b.shape());
    assert!(
        sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
        "concat: {sa:?} vs {sb:?}"
    );
    let hw = sa[2] * sa[3];
    let (ca, cb) = (sa[1] * hw, sb[1] * hw);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..sa[0] {
        data.extend_from_slice(&a.data()[s * ca..(s + 1) * ca]);
        data.extend_from_slice(&b.data()[s * cb..(s + 1) * cb]);
    }
    Tensor::new(&[sa[0], sa[1] + sb[1], sa[2], sa[3]], data).unwrap()
}

pub fn split_channels<T: Real>(g: &Tensor<T>, split: usize) -> (Tensor<T>, Tensor<T>) {
    let s = g.shape();
    let hw = s[2] * s[3];
    let (ca, cb) = (split * hw, (s[1] - split) * hw);
    let mut a = Vec::with_capacity(s[0] * ca);
    let mut b = Vec::with_capacity(s[0] * cb);
    for chunk in g.data().chunks(ca + cb) {
        a.extend_from_slice(&chunk[..ca]);
        b.extend_from_slice(&chunk[ca..]);
    }
    (
        Tensor::new(&[s[0], split, s[2], s[3]], a).unwrap(),
        Tensor::new(&[s[0], s[1] - split, s[2], s[3]], b).unwrap(),
    )
}

pub fn upsample2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let mut out = Tensor::zeros(&[s[0], s[1], 2 * h, 2 * w]);
    for (src, dst) in x
        .data()
        .chunks(h * w)
        .zip(out.data_mut().chunks_mut(4 * h * w))
    {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let (h, w) = (s[2] / 2, s[3] / 2);
    let mut out = Tensor::zeros(&[s[0], s[1], h, w]);
    for (src, dst) in g
        .data()
        .chunks(4 * h * w)
        .zip(out.data_mut().chunks_mut(h * w))
    {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
            }
        }
    }
    out
}

pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    assert_eq!(w.shape()[1], f, "linear: feature mismatch");
    let mut out = Tensor::zeros(&[n, o]);
    for row in out.data_mut().chunks_mut(o) {
        row.copy_from_slice(b.data());
    }
    T::gemm(n, f, o, x.data(), false, w.data(), true, T::one(), out.data_mut());
    out
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut dx = Tensor::zeros(x.shape());
    T::gemm(n, o, f, g.data(), false, w.data(), false, T::zero(), dx.data_mut());
    let mut dw = Tensor::zeros(w.shape());
    T::gemm(o, n, f, g.data(), true, x.data(), false, T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[o]);
    for row in g.data().chunks(o) {
        for (d, &v) in db.data_mut().iter_mut().zip(row) {
            *d += v;
        }
    }
    (dx, dw, db)
}
