use ndarray::{Array2, ArrayD, Ix2, IxDyn};

use crate::{Graph, Op, Tensor, Var};

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Self { kernel, stride, pad }
    }

    pub fn output_len(&self, input: usize) -> usize {
        (input + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected NHWC tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// Unfolds NHWC patches into rows ordered (ky, kx, c).
fn im2col(x: &Tensor, spec: ConvSpec) -> Array2<f64> {
    let (n, h, w, c) = dims4(x);
    let (ho, wo) = (spec.output_len(h), spec.output_len(w));
    let k = spec.kernel;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let row_len = k * k * c;
    let mut cols = vec![0.0; n * ho * wo * row_len];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        let dst = row + (ky * k + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((n * ho * wo, row_len), cols).unwrap()
}

fn col2im(cols: &Array2<f64>, input_shape: &[usize], spec: ConvSpec) -> Tensor {
    let (n, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (ho, wo) = (spec.output_len(h), spec.output_len(w));
    let k = spec.kernel;
    let row_len = k * k * c;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * h * w * c];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * row_len;
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                        let src = row + (ky * k + kx) * c;
                        for (o, v) in out[dst..dst + c].iter_mut().zip(&cs[src..src + c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, h, w, c]), out).unwrap()
}

fn depthwise_forward(x: &Tensor, w: &Tensor, spec: ConvSpec) -> Tensor {
    let (n, h, wd, c) = dims4(x);
    let (ho, wo) = (spec.output_len(h), spec.output_len(wd));
    let k = spec.kernel;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w = w.as_standard_layout();
    let ws = w.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * ho * wo * c];
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = ((b * ho + oy) * wo + ox) * c;
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * wd + ix as usize) * c;
                        let wk = (ky * k + kx) * c;
                        let o = &mut out[dst..dst + c];
                        for ((o, xv), wv) in o.iter_mut().zip(&xs[src..src + c]).zip(&ws[wk..wk + c]) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, ho, wo, c]), out).unwrap()
}

fn depthwise_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    spec: ConvSpec,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, h, wd, c) = dims4(x);
    let (ho, wo) = (spec.output_len(h), spec.output_len(wd));
    let k = spec.kernel;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let w = w.as_standard_layout();
    let ws = w.as_slice().expect("standard layout");
    let g = g.as_standard_layout();
    let gs = g.as_slice().unwrap();
    let mut dx = if need_dx { vec![0.0; xs.len()] } else { Vec::new() };
    let mut dw = if need_dw { vec![0.0; ws.len()] } else { Vec::new() };
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let go = ((b * ho + oy) * wo + ox) * c;
                let gsl = &gs[go..go + c];
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let src = ((b * h + iy as usize) * wd + ix as usize) * c;
                        let wk = (ky * k + kx) * c;
                        if need_dx {
                            for ((d, gv), wv) in dx[src..src + c].iter_mut().zip(gsl).zip(&ws[wk..wk + c]) {
                                *d += gv * wv;
                            }
                        }
                        if need_dw {
                            for ((d, gv), xv) in dw[wk..wk + c].iter_mut().zip(gsl).zip(&xs[src..src + c]) {
                                *d += gv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    let dx = need_dx.then(|| ArrayD::from_shape_vec(x.raw_dim(), dx).unwrap());
    let dw = need_dw.then(|| ArrayD::from_shape_vec(w.raw_dim(), dw).unwrap());
    (dx, dw)
}

impl Graph {
    /// Dense 2-D convolution, `x: [N,H,W,Cin]`, `w: [k,k,Cin,Cout]`, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Var {
        let xv = self.value(x).as_standard_layout().into_owned();
        let (n, h, wd, cin) = dims4(&xv);
        let ws = self.shape(w).to_vec();
        assert_eq!(ws, vec![spec.kernel, spec.kernel, cin, ws[3]], "conv2d kernel shape");
        let cout = ws[3];
        let (ho, wo) = (spec.output_len(h), spec.output_len(wd));
        let cols = im2col(&xv, spec);
        let wm = self
            .value(w)
            .view()
            .into_shape_with_order((spec.kernel * spec.kernel * cin, cout))
            .unwrap();
        let y = cols.dot(&wm);
        let y = y.into_shape_with_order(IxDyn(&[n, ho, wo, cout])).unwrap();
        let rg = self.any_grad(&[x, w]);
        self.push(
            y,
            Op::Conv2d {
                x,
                w,
                spec,
                cols: cols.into_dyn(),
            },
            rg,
        )
    }

    /// Per-channel 2-D convolution, `x: [N,H,W,C]`, `w: [k,k,C]`, no bias.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Var {
        let xv = self.value(x).as_standard_layout().into_owned();
        let c = dims4(&xv).3;
        assert_eq!(self.shape(w), &[spec.kernel, spec.kernel, c], "depthwise kernel shape");
        let wv = self.value(w).as_standard_layout().into_owned();
        let y = depthwise_forward(&xv, &wv, spec);
        let rg = self.any_grad(&[x, w]);
        self.push(y, Op::Depthwise { x, w, spec }, rg)
    }

    pub(crate) fn backprop_conv(&self, op: &Op, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Conv2d { x, w, spec, cols } => {
                let ws = self.shape(*w);
                let (kk, cout) = (ws[0] * ws[1] * ws[2], ws[3]);
                let gm = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((g.len() / cout, cout))
                    .unwrap();
                let cols = cols.view().into_dimensionality::<Ix2>().unwrap();
                if self.requires_grad(*w) {
                    let dw = cols.t().dot(&gm);
                    let dw = dw.into_shape_with_order(IxDyn(ws)).unwrap();
                    self.accumulate(grads, *w, dw);
                }
                if self.requires_grad(*x) {
                    let wm = self.value(*w).view().into_shape_with_order((kk, cout)).unwrap();
                    let dcols = gm.dot(&wm.t());
                    let dx = col2im(&dcols, self.shape(*x), *spec);
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Depthwise { x, w, spec } => {
                let xv = self.value(*x).as_standard_layout().into_owned();
                let wv = self.value(*w).as_standard_layout().into_owned();
                let (dx, dw) = depthwise_backward(&xv, &wv, g, *spec, self.requires_grad(*x), self.requires_grad(*w));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            _ => unreachable!("not a convolution op"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_len_halves_even_inputs_with_stride_two() {
        let spec = ConvSpec::new(3, 2, 1);
        assert_eq!(spec.output_len(64), 32);
        assert_eq!(spec.output_len(224), 112);
        assert_eq!(spec.output_len(7), 4);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let spec = ConvSpec::new(3, 2, 1);
        let x = ArrayD::from_shape_fn(IxDyn(&[2, 5, 4, 3]), |ix| {
            (ix[0] * 7 + ix[1] * 5 + ix[2] * 3 + ix[3]) as f64 * 0.1 - 1.0
        });
        let cols = im2col(&x, spec);
        let c = Array2::from_shape_fn(cols.raw_dim(), |(i, j)| ((i * 13 + j * 7) % 11) as f64 - 5.0);
        let lhs: f64 = (&cols * &c).sum();
        let back = col2im(&c, x.shape(), spec);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn depthwise_matches_direct_sum() {
        let spec = ConvSpec::new(3, 1, 1);
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 3, 3, 2]), |ix| {
            (ix[1] * 3 + ix[2]) as f64 + ix[3] as f64 * 10.0
        });
        let w = ArrayD::from_shape_fn(IxDyn(&[3, 3, 2]), |ix| if ix[2] == 0 { 1.0 } else { 0.5 });
        let y = depthwise_forward(&x, &w, spec);
        // centre output sees the full 3x3 window: channel 0 sums 0..9 = 36
        assert_eq!(y[[0, 1, 1, 0]], 36.0);
        assert_eq!(y[[0, 1, 1, 1]], 0.5 * (36.0 + 90.0));
        // corner sees a 2x2 window: values 0,1,3,4
        assert_eq!(y[[0, 0, 0, 0]], 8.0);
    }
}
