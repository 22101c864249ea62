//! Volumetric convolution and its transpose via per-slice im2col and GEMM.
//!
//! Output cell `o` of a convolution with kernel `k`, stride `s` reads input
//! cells `o·s − lo + t` for taps `t < k`, with `lo = (k − 1) / 2` and zero
//! padding. Weights are `[k, k, k, Cin, Cout]`.

use std::sync::Arc;

use rayon::prelude::*;

use super::graph::{Graph, Var};
use super::{matmul, Mat, Real, Tensor};
use crate::error::{Result, VolrigError};

pub(crate) const KERNEL_SIZES: [usize; 4] = [1, 2, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub inp: [usize; 3],
    pub out: [usize; 3],
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub lo: usize,
}

impl ConvGeom {
    pub fn new(inp: [usize; 3], cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        if !KERNEL_SIZES.contains(&k) {
            return Err(VolrigError::Shape(format!("unsupported kernel size {k}")));
        }
        let out = match stride {
            1 => inp,
            2 => {
                if inp.iter().any(|d| d % 2 != 0) {
                    return Err(VolrigError::Shape(format!("stride 2 needs even dims, got {inp:?}")));
                }
                inp.map(|d| d / 2)
            }
            s => return Err(VolrigError::Shape(format!("unsupported stride {s}"))),
        };
        Ok(ConvGeom {
            inp,
            out,
            cin,
            cout,
            k,
            stride,
            lo: (k - 1) / 2,
        })
    }

    fn taps(&self) -> usize {
        self.k * self.k * self.k
    }

    fn kdim(&self) -> usize {
        self.taps() * self.cin
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn in_index(&self, o: usize, t: usize, axis: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.lo as isize;
        (i >= 0 && (i as usize) < self.inp[axis]).then_some(i as usize)
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, oz: usize, col: &mut [T]) {
    col.fill(T::zero());
    let [_, h, w] = g.inp;
    let [_, ho, wo] = g.out;
    let (k, cin, kd) = (g.k, g.cin, g.kdim());
    for dz in 0..k {
        let Some(iz) = g.in_index(oz, dz, 0) else { continue };
        for oy in 0..ho {
            for dy in 0..k {
                let Some(iy) = g.in_index(oy, dy, 1) else { continue };
                for ox in 0..wo {
                    let row = (oy * wo + ox) * kd;
                    for dx in 0..k {
                        let Some(ix) = g.in_index(ox, dx, 2) else { continue };
                        let t = (dz * k + dy) * k + dx;
                        let src = ((iz * h + iy) * w + ix) * cin;
                        let dst = row + t * cin;
                        col[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn bias_grad<T: Real>(dy: &[T], cout: usize) -> Vec<T> {
    let mut b = vec![T::zero(); cout];
    for row in dy.chunks_exact(cout) {
        for (acc, v) in b.iter_mut().zip(row) {
            *acc += *v;
        }
    }
    b
}

fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += *v;
        }
    }
    acc
}

pub(crate) fn conv_forward<T: Real>(x: &[T], g: &ConvGeom, w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let plane = g.out[1] * g.out[2];
    let n_out = g.out[0] * plane;
    debug_assert_eq!(out.len(), n_out * g.cout);
    if g.pointwise() {
        matmul(Mat::new(x, n_out, g.cin), Mat::new(w, g.cin, g.cout), out, false);
        if let Some(b) = bias {
            add_bias(out, b);
        }
        return;
    }
    let kd = g.kdim();
    out.par_chunks_mut(plane * g.cout)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); plane * kd],
            |col, (oz, o)| {
                im2col(x, g, oz, col);
                matmul(Mat::new(col, plane, kd), Mat::new(w, kd, g.cout), o, false);
                if let Some(b) = bias {
                    add_bias(o, b);
                }
            },
        );
}

pub(crate) fn conv_weight_grad<T: Real>(x: &[T], g: &ConvGeom, dy: &[T]) -> Vec<T> {
    let plane = g.out[1] * g.out[2];
    let kd = g.kdim();
    if g.pointwise() {
        let n = g.out[0] * plane;
        let mut dw = vec![T::zero(); kd * g.cout];
        matmul(Mat::t(x, n, g.cin), Mat::new(dy, n, g.cout), &mut dw, false);
        return dw;
    }
    let parts: Vec<Vec<T>> = (0..g.out[0])
        .into_par_iter()
        .map_init(
            || vec![T::zero(); plane * kd],
            |col, oz| {
                im2col(x, g, oz, col);
                let mut p = vec![T::zero(); kd * g.cout];
                let d = &dy[oz * plane * g.cout..(oz + 1) * plane * g.cout];
                matmul(Mat::t(col, plane, kd), Mat::new(d, plane, g.cout), &mut p, false);
                p
            },
        )
        .collect();
    sum_in_order(parts, kd * g.cout)
}

pub(crate) fn conv_input_grad<T: Real>(dy: &[T], g: &ConvGeom, w: &[T]) -> Vec<T> {
    let [d, h, wd] = g.inp;
    let mut dx = vec![T::zero(); d * h * wd * g.cin];
    if g.pointwise() {
        let n = d * h * wd;
        matmul(Mat::new(dy, n, g.cout), Mat::t(w, g.cin, g.cout), &mut dx, false);
        return dx;
    }
    let (k, cin, cout) = (g.k, g.cin, g.cout);
    if g.stride == 1 {
        // correlation with the flipped, channel-transposed kernel
        let taps = g.taps();
        let mut wt = vec![T::zero(); taps * cout * cin];
        for t in 0..taps {
            for ci in 0..cin {
                for co in 0..cout {
                    wt[((taps - 1 - t) * cout + co) * cin + ci] = w[(t * cin + ci) * cout + co];
                }
            }
        }
        let g2 = ConvGeom {
            inp: g.out,
            out: g.inp,
            cin: cout,
            cout: cin,
            k,
            stride: 1,
            lo: k - 1 - g.lo,
        };
        conv_forward(dy, &g2, &wt, None, &mut dx);
        return dx;
    }
    let [_, ho, wo] = g.out;
    let s = g.stride as isize;
    let source = |i: usize, t: usize, axis: usize| -> Option<usize> {
        let o = i as isize + g.lo as isize - t as isize;
        (o >= 0 && o % s == 0 && ((o / s) as usize) < g.out[axis]).then(|| (o / s) as usize)
    };
    dx.par_chunks_mut(h * wd * cin).enumerate().for_each(|(iz, slice)| {
        for dz in 0..k {
            let Some(oz) = source(iz, dz, 0) else { continue };
            for iy in 0..h {
                for dyy in 0..k {
                    let Some(oy) = source(iy, dyy, 1) else { continue };
                    for ix in 0..wd {
                        for dxx in 0..k {
                            let Some(ox) = source(ix, dxx, 2) else { continue };
                            let t = (dz * k + dyy) * k + dxx;
                            let src = &dy[((oz * ho + oy) * wo + ox) * cout..][..cout];
                            let dst = &mut slice[(iy * wd + ix) * cin..][..cin];
                            for (ci, v) in dst.iter_mut().enumerate() {
                                let wrow = &w[(t * cin + ci) * cout..][..cout];
                                let mut acc = T::zero();
                                for (a, b) in src.iter().zip(wrow) {
                                    acc += *a * *b;
                                }
                                *v += acc;
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Geometry of the 2×2×2, stride-2 transpose convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UpGeom {
    pub inp: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl UpGeom {
    fn out(&self) -> [usize; 3] {
        self.inp.map(|d| 2 * d)
    }

    /// Offset of output cell `(2y+ty, 2x+tx)` within the pair of output
    /// slices fed by one input slice.
    fn out_offset(&self, t: usize, y: usize, x: usize) -> usize {
        let [_, ho, wo] = self.out();
        let (tz, ty, tx) = (t >> 2, (t >> 1) & 1, t & 1);
        ((tz * ho + 2 * y + ty) * wo + 2 * x + tx) * self.cout
    }
}

fn gather_tap<T: Real>(g: &UpGeom, dy_pair: &[T], t: usize, buf: &mut [T]) {
    let [_, h, w] = g.inp;
    for y in 0..h {
        for x in 0..w {
            let src = g.out_offset(t, y, x);
            buf[(y * w + x) * g.cout..][..g.cout].copy_from_slice(&dy_pair[src..src + g.cout]);
        }
    }
}

pub(crate) fn up_forward<T: Real>(x: &[T], g: &UpGeom, w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let [_, h, wd] = g.inp;
    let plane_in = h * wd * g.cin;
    let [_, ho, wo] = g.out();
    out.par_chunks_mut(2 * ho * wo * g.cout)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); h * wd * g.cout],
            |tmp, (iz, o)| {
                let xin = &x[iz * plane_in..(iz + 1) * plane_in];
                for t in 0..8 {
                    let wt = &w[t * g.cin * g.cout..(t + 1) * g.cin * g.cout];
                    matmul(Mat::new(xin, h * wd, g.cin), Mat::new(wt, g.cin, g.cout), tmp, false);
                    for y in 0..h {
                        for xx in 0..wd {
                            let dst = g.out_offset(t, y, xx);
                            o[dst..dst + g.cout].copy_from_slice(&tmp[(y * wd + xx) * g.cout..][..g.cout]);
                        }
                    }
                }
                if let Some(b) = bias {
                    add_bias(o, b);
                }
            },
        );
}

pub(crate) fn up_input_grad<T: Real>(dy: &[T], g: &UpGeom, w: &[T]) -> Vec<T> {
    let [d, h, wd] = g.inp;
    let [_, ho, wo] = g.out();
    let pair = 2 * ho * wo * g.cout;
    let mut dx = vec![T::zero(); d * h * wd * g.cin];
    dx.par_chunks_mut(h * wd * g.cin)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); h * wd * g.cout],
            |buf, (iz, slice)| {
                let dyp = &dy[iz * pair..(iz + 1) * pair];
                for t in 0..8 {
                    gather_tap(g, dyp, t, buf);
                    let wt = &w[t * g.cin * g.cout..(t + 1) * g.cin * g.cout];
                    matmul(Mat::new(buf, h * wd, g.cout), Mat::t(wt, g.cin, g.cout), slice, t > 0);
                }
            },
        );
    dx
}

pub(crate) fn up_weight_grad<T: Real>(x: &[T], g: &UpGeom, dy: &[T]) -> Vec<T> {
    let [d, h, wd] = g.inp;
    let [_, ho, wo] = g.out();
    let pair = 2 * ho * wo * g.cout;
    let plane_in = h * wd * g.cin;
    let block = g.cin * g.cout;
    let parts: Vec<Vec<T>> = (0..d)
        .into_par_iter()
        .map_init(
            || vec![T::zero(); h * wd * g.cout],
            |buf, iz| {
                let xin = &x[iz * plane_in..(iz + 1) * plane_in];
                let dyp = &dy[iz * pair..(iz + 1) * pair];
                let mut p = vec![T::zero(); 8 * block];
                for t in 0..8 {
                    gather_tap(g, dyp, t, buf);
                    matmul(
                        Mat::t(xin, h * wd, g.cin),
                        Mat::new(buf, h * wd, g.cout),
                        &mut p[t * block..(t + 1) * block],
                        false,
                    );
                }
                p
            },
        )
        .collect();
    sum_in_order(parts, 8 * block)
}

fn check_bias<T: Real>(b: Option<&Var<T>>, cout: usize) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(VolrigError::Shape(format!("bias shape {:?}, expected [{cout}]", b.shape())));
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// Zero-padded 3D cross-correlation; stride 1 keeps the spatial size and
    /// stride 2 halves it.
    pub fn conv3d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>, stride: usize) -> Result<Var<T>> {
        let inp = x.value.spatial()?;
        let (k, cin, cout) = match w.shape() {
            [k, k2, k3, ci, co] if k == k2 && k == k3 => (*k, *ci, *co),
            s => return Err(VolrigError::Shape(format!("conv weight shape {s:?}"))),
        };
        if x.value.channels() != cin {
            return Err(VolrigError::Shape(format!(
                "conv expects {cin} input channels, got {}",
                x.value.channels()
            )));
        }
        check_bias(b, cout)?;
        let g = ConvGeom::new(inp, cin, cout, k, stride)?;
        let [d, h, wd] = g.out;
        let mut out = vec![T::zero(); d * h * wd * cout];
        conv_forward(x.value.data(), &g, w.value.data(), b.map(|b| b.value.data()), &mut out);
        let value = Tensor::new(vec![d, h, wd, cout], out)?;
        let (xv, wv) = (Arc::clone(&x.value), Arc::clone(&w.value));
        let has_bias = b.is_some();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.op("conv3d", value, &inputs, move |gy, need| {
            let dy = gy.data();
            let mut grads = vec![
                need[0].then(|| {
                    Tensor::new(xv.shape().to_vec(), conv_input_grad(dy, &g, wv.data())).expect("shape")
                }),
                need[1].then(|| {
                    Tensor::new(wv.shape().to_vec(), conv_weight_grad(xv.data(), &g, dy)).expect("shape")
                }),
            ];
            if has_bias {
                grads.push(need[2].then(|| Tensor::new(vec![cout], bias_grad(dy, cout)).expect("shape")));
            }
            grads
        })
    }

    /// 2×2×2 transpose convolution with stride 2; doubles every spatial dim.
    pub fn conv_transpose3d(&self, x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
        let inp = x.value.spatial()?;
        let (cin, cout) = match w.shape() {
            [2, 2, 2, ci, co] => (*ci, *co),
            s => return Err(VolrigError::Shape(format!("transpose conv weight shape {s:?}"))),
        };
        if x.value.channels() != cin {
            return Err(VolrigError::Shape(format!(
                "transpose conv expects {cin} input channels, got {}",
                x.value.channels()
            )));
        }
        check_bias(b, cout)?;
        let g = UpGeom { inp, cin, cout };
        let [d, h, wd] = g.out();
        let mut out = vec![T::zero(); d * h * wd * cout];
        up_forward(x.value.data(), &g, w.value.data(), b.map(|b| b.value.data()), &mut out);
        let value = Tensor::new(vec![d, h, wd, cout], out)?;
        let (xv, wv) = (Arc::clone(&x.value), Arc::clone(&w.value));
        let has_bias = b.is_some();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.op("conv_transpose3d", value, &inputs, move |gy, need| {
            let dy = gy.data();
            let mut grads = vec![
                need[0].then(|| Tensor::new(xv.shape().to_vec(), up_input_grad(dy, &g, wv.data())).expect("shape")),
                need[1].then(|| Tensor::new(wv.shape().to_vec(), up_weight_grad(xv.data(), &g, dy)).expect("shape")),
            ];
            if has_bias {
                grads.push(need[2].then(|| Tensor::new(vec![cout], bias_grad(dy, cout)).expect("shape")));
            }
            grads
        })
    }
}
