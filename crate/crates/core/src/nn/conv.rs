use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::{Param, Parameters};

/// 2-D convolution over `[channels, height, width]` maps, lowered to a
/// matrix product through an im2col buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    kernel: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    input_dims: (usize, usize, usize),
}

impl Conv2d {
    /// He-uniform initialization scaled by `gain`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        Self {
            weight: Param::uniform(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                bound,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
            kernel,
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        let rows = self.out_channels();
        ArrayView2::from_shape((rows, self.weight.len() / rows), self.weight.data())
            .expect("conv weight shape")
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let mut cols = Array2::<f64>::zeros((c * k * k, oh * ow));
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let out = cols.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut out[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xs[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, dims: (usize, usize, usize)) -> Array3<f64> {
        let (c, h, w) = dims;
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let mut x = Array3::<f64>::zeros((c, h, w));
        let xs = x.as_slice_mut().expect("standard layout");
        let src = cols.as_slice().expect("standard layout");
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let s = &src[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                xs[base + ix as usize] += s[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channel mismatch");
        let (oh, ow) = self.output_size(h, w);
        let cols = self.im2col(x);
        let mut out = Array2::<f64>::zeros((self.out_channels(), oh * ow));
        general_mat_mul(1.0, &self.weight_matrix(), &cols, 0.0, &mut out);
        for (mut row, b) in out.rows_mut().into_iter().zip(self.bias.data()) {
            row += *b;
        }
        let out = out
            .into_shape_with_order((self.out_channels(), oh, ow))
            .expect("conv output shape");
        (
            out,
            ConvCache {
                cols,
                input_dims: (c, h, w),
            },
        )
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Array3<f64>,
        grads: &mut Conv2d,
        want_input_grad: bool,
    ) -> Option<Array3<f64>> {
        let (oc, oh, ow) = grad_out.dim();
        let g = grad_out.as_standard_layout();
        let g = g
            .view()
            .into_shape_with_order((oc, oh * ow))
            .expect("grad shape");
        let rows = oc;
        let cols_n = grads.weight.len() / rows;
        {
            let mut gw = ArrayViewMut2::from_shape((rows, cols_n), grads.weight.data_mut())
                .expect("conv weight shape");
            general_mat_mul(1.0, &g, &cache.cols.t(), 1.0, &mut gw);
        }
        for (gb, row) in grads.bias.data_mut().iter_mut().zip(g.rows()) {
            *gb += row.sum();
        }
        if !want_input_grad {
            return None;
        }
        let mut dcols = Array2::<f64>::zeros(cache.cols.dim());
        general_mat_mul(1.0, &self.weight_matrix().t(), &g, 0.0, &mut dcols);
        Some(self.col2im(&dcols, cache.input_dims))
    }
}

impl Parameters for Conv2d {
    fn collect<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Max pooling with square window; padded cells never win.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<usize>,
    input_dims: (usize, usize, usize),
}

impl MaxPool2d {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, PoolCache) {
        let (c, h, w) = x.dim();
        let (oh, ow) = self.output_size(h, w);
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let mut out = Array3::<f64>::zeros((c, oh, ow));
        let mut argmax = vec![0; c * oh * ow];
        let o = out.as_slice_mut().expect("standard layout");
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = (ci * h + iy as usize) * w + ix as usize;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oi = (ci * oh + oy) * ow + ox;
                    o[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
        (
            out,
            PoolCache {
                argmax,
                input_dims: (c, h, w),
            },
        )
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Array3<f64>) -> Array3<f64> {
        let mut gx = Array3::<f64>::zeros(cache.input_dims);
        let gs = gx.as_slice_mut().expect("standard layout");
        for (g, &idx) in grad_out.iter().zip(&cache.argmax) {
            gs[idx] += g;
        }
        gx
    }
}

pub(crate) fn relu_inplace(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Masks `grad` by the post-activation map `out > 0`.
pub(crate) fn relu_backward(out: &Array3<f64>, grad: &mut Array3<f64>) {
    grad.zip_mut_with(out, |g, o| {
        if *o <= 0.0 {
            *g = 0.0;
        }
    });
}
