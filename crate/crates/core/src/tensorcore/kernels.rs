//! Raw convolution and pooling kernels on NCHW buffers.

use super::tensor::Element;
use crate::error::{Error, Result};

/// Which loop structure computes a full convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    /// Plain seven-deep loop nest.
    Direct,
    /// Unfold patches into columns and multiply with a GEMM.
    #[default]
    Im2col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub hout: usize,
    pub wout: usize,
}

/// `floor((size + 2 pad - k) / stride) + 1`, or an error when no output
/// position fits.
pub fn conv_out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

impl ConvGeom {
    pub fn new(
        x_shape: (usize, usize, usize, usize),
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (n, cin, h, w) = x_shape;
        if k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
        }
        let hout = conv_out_extent(h, k, stride, pad)?;
        let wout = conv_out_extent(w, k, stride, pad)?;
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            hout,
            wout,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.hout * self.wout
    }

    /// Input coordinate hit by output position `o` and kernel tap `t`.
    #[inline]
    fn src(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<E: Element>(g: &ConvGeom, x: &[E], cols: &mut [E]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ci * g.k + kh) * g.k + kw;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.hout {
                    let ih = g.src(oh, kh, g.h);
                    for ow in 0..g.wout {
                        dst[oh * g.wout + ow] = match (ih, g.src(ow, kw, g.w)) {
                            (Some(ih), Some(iw)) => xc[ih * g.w + iw],
                            _ => E::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<E: Element>(g: &ConvGeom, cols: &[E], dx: &mut [E]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (ci * g.k + kh) * g.k + kw;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.hout {
                    let Some(ih) = g.src(oh, kh, g.h) else { continue };
                    for ow in 0..g.wout {
                        if let Some(iw) = g.src(ow, kw, g.w) {
                            dxc[ih * g.w + iw] = dxc[ih * g.w + iw] + src[oh * g.wout + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<E: Element>(g: &ConvGeom, x: &[E], w: &[E], algo: ConvAlgo) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.cout * g.out_plane()];
    match algo {
        ConvAlgo::Direct => conv2d_direct(g, x, w, &mut out),
        ConvAlgo::Im2col => {
            let plane = g.out_plane();
            let mut cols = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![E::zero(); g.patch_len() * plane]
            };
            for n in 0..g.n {
                let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
                let on = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
                let cols_ref: &[E] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(g, xn, &mut cols);
                    &cols
                };
                E::gemm(g.cout, g.patch_len(), plane, w, false, cols_ref, false, on, false);
            }
        }
    }
    out
}

fn conv2d_direct<E: Element>(g: &ConvGeom, x: &[E], w: &[E], out: &mut [E]) {
    for n in 0..g.n {
        for co in 0..g.cout {
            for oh in 0..g.hout {
                for ow in 0..g.wout {
                    let mut acc = E::zero();
                    for ci in 0..g.cin {
                        for kh in 0..g.k {
                            let Some(ih) = g.src(oh, kh, g.h) else { continue };
                            for kw in 0..g.k {
                                let Some(iw) = g.src(ow, kw, g.w) else { continue };
                                let xv = x[((n * g.cin + ci) * g.h + ih) * g.w + iw];
                                let wv = w[((co * g.cin + ci) * g.k + kh) * g.k + kw];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((n * g.cout + co) * g.hout + oh) * g.wout + ow] = acc;
                }
            }
        }
    }
}

/// Gradients of a full convolution: `(dx, dw)`.
pub fn conv2d_backward<E: Element>(
    g: &ConvGeom,
    x: &[E],
    w: &[E],
    dy: &[E],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>) {
    let plane = g.out_plane();
    let in_len = g.cin * g.h * g.w;
    let mut dx = need_dx.then(|| vec![E::zero(); g.n * in_len]);
    let mut dw = need_dw.then(|| vec![E::zero(); g.cout * g.patch_len()]);
    let mut cols = vec![E::zero(); if g.is_pointwise() { 0 } else { g.patch_len() * plane }];
    let mut dcols = vec![E::zero(); if need_dx { g.patch_len() * plane } else { 0 }];
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let dyn_ = &dy[n * g.cout * plane..(n + 1) * g.cout * plane];
        if let Some(dw) = dw.as_mut() {
            let cols_ref: &[E] = if g.is_pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            E::gemm(g.cout, plane, g.patch_len(), dyn_, false, cols_ref, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                E::gemm(g.cin, g.cout, plane, w, true, dyn_, false, dxn, true);
            } else {
                E::gemm(g.patch_len(), g.cout, plane, w, true, dyn_, false, &mut dcols, false);
                col2im_add(g, &dcols, dxn);
            }
        }
    }
    (dx, dw)
}

/// Channel-wise convolution; `w` has shape `[C, 1, k, k]` and `g.cin == g.cout`.
pub fn depthwise_forward<E: Element>(g: &ConvGeom, x: &[E], w: &[E]) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.cout * g.out_plane()];
    for n in 0..g.n {
        for c in 0..g.cin {
            let xc = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let wc = &w[c * g.k * g.k..][..g.k * g.k];
            let oc = &mut out[(n * g.cin + c) * g.out_plane()..][..g.out_plane()];
            for oh in 0..g.hout {
                for ow in 0..g.wout {
                    let mut acc = E::zero();
                    for kh in 0..g.k {
                        let Some(ih) = g.src(oh, kh, g.h) else { continue };
                        for kw in 0..g.k {
                            let Some(iw) = g.src(ow, kw, g.w) else { continue };
                            acc = acc + xc[ih * g.w + iw] * wc[kh * g.k + kw];
                        }
                    }
                    oc[oh * g.wout + ow] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise_backward<E: Element>(
    g: &ConvGeom,
    x: &[E],
    w: &[E],
    dy: &[E],
) -> (Vec<E>, Vec<E>) {
    let mut dx = vec![E::zero(); x.len()];
    let mut dw = vec![E::zero(); w.len()];
    for n in 0..g.n {
        for c in 0..g.cin {
            let base_in = (n * g.cin + c) * g.h * g.w;
            let base_out = (n * g.cin + c) * g.out_plane();
            for oh in 0..g.hout {
                for ow in 0..g.wout {
                    let d = dy[base_out + oh * g.wout + ow];
                    if d == E::zero() {
                        continue;
                    }
                    for kh in 0..g.k {
                        let Some(ih) = g.src(oh, kh, g.h) else { continue };
                        for kw in 0..g.k {
                            let Some(iw) = g.src(ow, kw, g.w) else { continue };
                            let xi = base_in + ih * g.w + iw;
                            let wi = c * g.k * g.k + kh * g.k + kw;
                            dw[wi] = dw[wi] + d * x[xi];
                            dx[xi] = dx[xi] + d * w[wi];
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize, cin: usize, hw: usize, cout: usize, k: usize, s: usize, p: usize) -> ConvGeom {
        ConvGeom::new((n, cin, hw, hw), cout, k, s, p).unwrap()
    }

    #[test]
    fn out_extent_floors() {
        assert_eq!(conv_out_extent(224, 3, 2, 1).unwrap(), 112);
        assert_eq!(conv_out_extent(4, 3, 2, 1).unwrap(), 2);
        assert_eq!(conv_out_extent(1, 5, 2, 2).unwrap(), 1);
        assert!(conv_out_extent(1, 5, 1, 0).is_err());
        assert!(conv_out_extent(4, 3, 0, 1).is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvGeom::new((1, 1, 4, 4), 1, 2, 1, 0).is_err());
    }

    #[test]
    fn im2col_matches_direct() {
        let g = geom(2, 3, 5, 4, 3, 2, 1);
        let x: Vec<f64> = (0..2 * 3 * 25).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let w: Vec<f64> = (0..4 * 27).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.5).collect();
        let a = conv2d_forward(&g, &x, &w, ConvAlgo::Direct);
        let b = conv2d_forward(&g, &x, &w, ConvAlgo::Im2col);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_identity_kernel() {
        let g = geom(1, 2, 4, 2, 3, 1, 1);
        let x: Vec<f32> = (0..32).map(|i| i as f32).collect();
        let mut w = vec![0.0f32; 18];
        w[4] = 1.0;
        w[13] = 1.0;
        assert_eq!(depthwise_forward(&g, &x, &w), x);
    }
}
