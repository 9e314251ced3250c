//! im2col convolution kernels. Batch items are processed in parallel; weight
//! gradients are reduced over fixed-size item groups in a fixed order, so
//! results do not depend on the worker count.

use rayon::prelude::*;

use super::{Element, Shape4};

/// Items per weight-gradient partial sum.
const GRAD_GROUP: usize = 4;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: Shape4, c_out: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let oh = out_dim(x.h, k, stride, pad)?;
        let ow = out_dim(x.w, k, stride, pad)?;
        Some(ConvGeom {
            c_in: x.c,
            h: x.h,
            w: x.w,
            c_out,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1, stride 1, no padding: the input item already is its column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `floor((size + 2·pad − k) / stride) + 1`, or `None` when the window does not fit.
pub(crate) fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn im2col<T: Element>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * s) as isize - p + ky as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s) as isize - p + kx as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.out_plane();
    for ci in 0..g.c_in {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * s) as isize - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * s) as isize - p + kx as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(
    g: &ConvGeom,
    n: usize,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * g.out_plane();
    let mut out = vec![T::zero(); n * out_item];
    out.par_chunks_mut(out_item.max(1))
        .zip(x.par_chunks(in_item.max(1)))
        .for_each(|(y, xi)| {
            if let Some(b) = bias {
                for (co, plane) in y.chunks_mut(g.out_plane()).enumerate() {
                    plane.fill(b[co]);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            if g.is_pointwise() {
                T::gemm(g.c_out, g.c_in, g.out_plane(), weight, false, xi, false, beta, y);
            } else {
                let mut cols = vec![T::zero(); g.patch() * g.out_plane()];
                im2col(g, xi, &mut cols);
                T::gemm(g.c_out, g.patch(), g.out_plane(), weight, false, &cols, false, beta, y);
            }
        });
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn backward<T: Element>(
    g: &ConvGeom,
    n: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * g.out_plane();
    let w_len = g.c_out * g.patch();
    let plane = g.out_plane();

    let mut dx = if need_dx {
        vec![T::zero(); n * in_item]
    } else {
        Vec::new()
    };

    let groups: Vec<usize> = (0..n.div_ceil(GRAD_GROUP)).collect();
    let mut dx_chunks: Vec<&mut [T]> = if need_dx {
        dx.chunks_mut(GRAD_GROUP * in_item.max(1)).collect()
    } else {
        Vec::new()
    };
    let partials: Vec<Vec<T>> = if need_dx {
        groups
            .par_iter()
            .zip(dx_chunks.par_iter_mut())
            .map(|(&gi, dxg)| group_backward(g, gi, n, x, weight, dy, Some(dxg)))
            .collect()
    } else {
        groups
            .par_iter()
            .map(|&gi| group_backward(g, gi, n, x, weight, dy, None))
            .collect()
    };

    let mut dw = vec![T::zero(); w_len];
    for part in &partials {
        for (a, &b) in dw.iter_mut().zip(part) {
            *a = *a + b;
        }
    }

    let mut db = vec![T::zero(); g.c_out];
    for item in dy.chunks(out_item.max(1)).take(n) {
        for (co, d) in db.iter_mut().enumerate() {
            *d = *d + item[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
    }

    ConvGrads {
        dx: need_dx.then_some(dx),
        dw,
        db,
    }
}

fn group_backward<T: Element>(
    g: &ConvGeom,
    group: usize,
    n: usize,
    x: &[T],
    weight: &[T],
    dy: &[T],
    mut dx: Option<&mut &mut [T]>,
) -> Vec<T> {
    let in_item = g.c_in * g.h * g.w;
    let out_item = g.c_out * g.out_plane();
    let plane = g.out_plane();
    let patch = g.patch();
    let mut dw = vec![T::zero(); g.c_out * patch];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    let mut dcols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };

    let start = group * GRAD_GROUP;
    let end = (start + GRAD_GROUP).min(n);
    for (local, i) in (start..end).enumerate() {
        let xi = &x[i * in_item..(i + 1) * in_item];
        let dyi = &dy[i * out_item..(i + 1) * out_item];
        if g.is_pointwise() {
            T::gemm(g.c_out, plane, patch, dyi, false, xi, true, T::one(), &mut dw);
            if let Some(dxg) = dx.as_deref_mut() {
                let dxi = &mut dxg[local * in_item..(local + 1) * in_item];
                T::gemm(patch, g.c_out, plane, weight, true, dyi, false, T::zero(), dxi);
            }
        } else {
            im2col(g, xi, &mut cols);
            T::gemm(g.c_out, plane, patch, dyi, false, &cols, true, T::one(), &mut dw);
            if let Some(dxg) = dx.as_deref_mut() {
                T::gemm(patch, g.c_out, plane, weight, true, dyi, false, T::zero(), &mut dcols);
                let dxi = &mut dxg[local * in_item..(local + 1) * in_item];
                col2im(g, &dcols, dxi);
            }
        }
    }
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_arithmetic() {
        assert_eq!(out_dim(224, 7, 2, 3), Some(112));
        assert_eq!(out_dim(112, 3, 2, 1), Some(56));
        assert_eq!(out_dim(5, 3, 1, 0), Some(3));
        assert_eq!(out_dim(2, 3, 1, 0), None);
        assert_eq!(out_dim(7, 3, 2, 1), Some(4));
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for any x, c.
        let g = ConvGeom::new(Shape4::new(1, 2, 5, 4), 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..g.patch() * g.out_plane())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
