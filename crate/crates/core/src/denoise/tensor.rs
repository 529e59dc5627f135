//! CHW feature maps and the layer kernels used by the network, each with its
//! reverse-mode counterpart.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Tensor { c, h, w, data }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// 3x3 depthwise convolution, zero padding 1, stride 1 or 2.
/// `weight` is `[c, 3, 3]`, `bias` is `[c]`.
pub fn depthwise_forward(x: &Tensor, weight: &[f64], bias: &[f64], stride: usize) -> Tensor {
    let (oh, ow) = (x.h / stride, x.w / stride);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let k = &weight[c * 9..c * 9 + 9];
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        dst.iter_mut().for_each(|v| *v = bias[c]);
        for ki in 0..3 {
            for kj in 0..3 {
                let kv = k[ki * 3 + kj];
                for i in 0..oh {
                    let si = (i * stride + ki) as isize - 1;
                    if si < 0 || si >= x.h as isize {
                        continue;
                    }
                    let srow = &src[si as usize * x.w..(si as usize + 1) * x.w];
                    let drow = &mut dst[i * ow..(i + 1) * ow];
                    if stride == 1 {
                        // j + kj - 1 in [0, w)
                        let j_lo = if kj == 0 { 1 } else { 0 };
                        let j_hi = if kj == 2 { ow - 1 } else { ow };
                        for j in j_lo..j_hi {
                            drow[j] += kv * srow[j + kj - 1];
                        }
                    } else {
                        for (j, d) in drow.iter_mut().enumerate() {
                            let sj = (j * stride + kj) as isize - 1;
                            if sj >= 0 && (sj as usize) < x.w {
                                *d += kv * srow[sj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`depthwise_forward`]: accumulates into `dweight`/`dbias` and
/// returns the input gradient.
pub fn depthwise_backward(
    x: &Tensor,
    weight: &[f64],
    dout: &Tensor,
    stride: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor {
    let (oh, ow) = (dout.h, dout.w);
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        let k = &weight[c * 9..c * 9 + 9];
        let src = x.plane(c);
        let g = dout.plane(c);
        dbias[c] += g.iter().sum::<f64>();
        let dsrc = dx.plane_mut(c);
        for ki in 0..3 {
            for kj in 0..3 {
                let kv = k[ki * 3 + kj];
                let mut dk = 0.0;
                for i in 0..oh {
                    let si = (i * stride + ki) as isize - 1;
                    if si < 0 || si >= x.h as isize {
                        continue;
                    }
                    let base = si as usize * x.w;
                    let grow = &g[i * ow..(i + 1) * ow];
                    if stride == 1 {
                        let j_lo = if kj == 0 { 1 } else { 0 };
                        let j_hi = if kj == 2 { ow - 1 } else { ow };
                        for j in j_lo..j_hi {
                            let s = base + j + kj - 1;
                            dk += grow[j] * src[s];
                            dsrc[s] += grow[j] * kv;
                        }
                    } else {
                        for (j, &gv) in grow.iter().enumerate() {
                            let sj = (j * stride + kj) as isize - 1;
                            if sj >= 0 && (sj as usize) < x.w {
                                let s = base + sj as usize;
                                dk += gv * src[s];
                                dsrc[s] += gv * kv;
                            }
                        }
                    }
                }
                dweight[c * 9 + ki * 3 + kj] += dk;
            }
        }
    }
    dx
}

/// 1x1 convolution: `weight` is `[cout, cin]`, `bias` is `[cout]`.
pub fn pointwise_forward(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize) -> Tensor {
    let mut out = Tensor::zeros(cout, x.h, x.w);
    for o in 0..cout {
        let dst = out.plane_mut(o);
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for ci in 0..x.c {
            let wv = weight[o * x.c + ci];
            for (d, s) in dst.iter_mut().zip(x.plane(ci)) {
                *d += wv * s;
            }
        }
    }
    out
}

pub fn pointwise_backward(x: &Tensor, weight: &[f64], dout: &Tensor, dweight: &mut [f64], dbias: &mut [f64]) -> Tensor {
    let cout = dout.c;
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    for o in 0..cout {
        let g = dout.plane(o);
        dbias[o] += g.iter().sum::<f64>();
        for ci in 0..x.c {
            let s = x.plane(ci);
            dweight[o * x.c + ci] += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
            let wv = weight[o * x.c + ci];
            for (d, gv) in dx.plane_mut(ci).iter_mut().zip(g) {
                *d += wv * gv;
            }
        }
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: &Tensor, dout: &Tensor) -> Tensor {
    Tensor {
        data: pre
            .data
            .iter()
            .zip(&dout.data)
            .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
            .collect(),
        ..*pre
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.c, x.h * 2, x.w * 2);
    let ow = x.w * 2;
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for i in 0..x.h * 2 {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * x.w + j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, h, w);
    for c in 0..dout.c {
        let g = dout.plane(c);
        let d = dx.plane_mut(c);
        for i in 0..dout.h {
            for j in 0..dout.w {
                d[(i / 2) * w + j / 2] += g[i * dout.w + j];
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

/// Split a concatenation gradient back into its two parts.
pub fn split(d: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let n = d.h * d.w;
    let a = Tensor::from_vec(ca, d.h, d.w, d.data[..ca * n].to_vec());
    let b = Tensor::from_vec(d.c - ca, d.h, d.w, d.data[ca * n..].to_vec());
    (a, b)
}
