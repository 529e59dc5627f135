//! Depthwise-separable encoder/decoder with a residual image head and a
//! logistic rain-mask head.
//!
//! Block layout for `channels = [c0, .., c{d-1}]`:
//!
//! | block              | input channels          | output | stride |
//! |--------------------|-------------------------|--------|--------|
//! | `stem`             | 1                       | c0     | 1      |
//! | `enc{i}`, i = 1..d | c{i-1}                  | c{i}   | 2      |
//! | `bottleneck.down`  | c{d-1}                  | c{d-1} | 2      |
//! | `bottleneck.conv`  | c{d-1}                  | c{d-1} | 1      |
//! | `dec{i}`, i = d-1..0 | up(prev) + skip c{i}  | c{i}   | 1      |
//! | `image_head`       | c0 (1x1 conv)           | 1      |        |
//! | `mask_head`        | c0 (1x1 conv)           | 1      |        |
//!
//! Every block is a 3x3 depthwise conv, ReLU, 1x1 pointwise conv, ReLU.
//! A block holds `10 * cin + cout * cin + cout` parameters; a head `c0 + 1`.
//! Decoders upsample 2x (nearest) and concatenate `[upsampled, skip]`.

use serde::{Deserialize, Serialize};

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkArch {
    pub depth: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub activation: Activation,
}

impl Default for NetworkArch {
    fn default() -> Self {
        Self {
            depth: 3,
            channels: vec![8, 16, 32],
            kernel: 3,
            activation: Activation::Relu,
        }
    }
}

impl NetworkArch {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.channels.len() != self.depth {
            return Err(Error::invalid(format!(
                "depth {} does not match {} channel widths",
                self.depth,
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::invalid("channel widths must be >= 1"));
        }
        if self.kernel != 3 {
            return Err(Error::invalid("only 3x3 depthwise kernels are supported"));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn stride_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Fan-in used by the initializer.
    fn fan_in(&self) -> usize {
        match self.shape.as_slice() {
            [_, kh, kw] => kh * kw,
            [_, cin] => *cin,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockSpec {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    /// Index into the layout of the depthwise weight; bias, pointwise weight
    /// and pointwise bias follow.
    pub first: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub params: Vec<ParamSpec>,
    pub stem: BlockSpec,
    pub enc: Vec<BlockSpec>,
    pub bottleneck: [BlockSpec; 2],
    /// Decoders in forward order (deepest first).
    pub dec: Vec<BlockSpec>,
    pub image_head: usize,
    pub mask_head: usize,
    pub total: usize,
}

fn build_layout(arch: &NetworkArch) -> Layout {
    let mut params: Vec<ParamSpec> = Vec::new();
    let mut offset = 0;
    let mut push = |params: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        params.push(ParamSpec { name, shape, offset });
        offset += n;
        params.len() - 1
    };
    let mut block = |params: &mut Vec<ParamSpec>, name: &str, cin, cout, stride| {
        let first = push(params, format!("{name}.dw.weight"), vec![cin, 3, 3]);
        push(params, format!("{name}.dw.bias"), vec![cin]);
        push(params, format!("{name}.pw.weight"), vec![cout, cin]);
        push(params, format!("{name}.pw.bias"), vec![cout]);
        BlockSpec {
            cin,
            cout,
            stride,
            first,
        }
    };
    let ch = &arch.channels;
    let d = arch.depth;
    let stem = block(&mut params, "stem", 1, ch[0], 1);
    let enc: Vec<BlockSpec> = (1..d)
        .map(|i| block(&mut params, &format!("enc{i}"), ch[i - 1], ch[i], 2))
        .collect();
    let deep = ch[d - 1];
    let bottleneck = [
        block(&mut params, "bottleneck.down", deep, deep, 2),
        block(&mut params, "bottleneck.conv", deep, deep, 1),
    ];
    let mut dec = Vec::with_capacity(d);
    let mut prev = deep;
    for i in (0..d).rev() {
        dec.push(block(&mut params, &format!("dec{i}"), prev + ch[i], ch[i], 1));
        prev = ch[i];
    }
    let image_head = push(&mut params, "image_head.weight".into(), vec![1, ch[0]]);
    push(&mut params, "image_head.bias".into(), vec![1]);
    let mask_head = push(&mut params, "mask_head.weight".into(), vec![1, ch[0]]);
    push(&mut params, "mask_head.bias".into(), vec![1]);
    let total = params.last().map(|p| p.offset + p.len()).unwrap_or(0);
    Layout {
        params,
        stem,
        enc,
        bottleneck,
        dec,
        image_head,
        mask_head,
        total,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct InitOptions {
    /// Zero the image head so the network starts as the identity map.
    pub zero_image_head: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: NetworkArch,
    pub(crate) layout: Layout,
    pub params: Vec<f64>,
}

/// One sample's forward results.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub restored: GrayImage,
    pub mask_logits: Vec<f64>,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    input: Tensor,
    dw_pre: Tensor,
    dw_act: Tensor,
    pw_pre: Tensor,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    noisy: Vec<f64>,
    stem: BlockCache,
    enc: Vec<BlockCache>,
    bottleneck: [BlockCache; 2],
    dec: Vec<BlockCache>,
    last: Tensor,
    restored_pre: Vec<f64>,
    pub restored: Vec<f64>,
    pub mask_logits: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

impl Trace {
    /// Hash of every piecewise-linear branch taken (ReLU signs, output clamp).
    pub fn branch_signature(&self) -> u64 {
        let mut hsh: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: bool| {
            hsh ^= v as u64 + 1;
            hsh = hsh.wrapping_mul(0x0000_0100_0000_01B3);
        };
        let caches = std::iter::once(&self.stem)
            .chain(self.enc.iter())
            .chain(self.bottleneck.iter())
            .chain(self.dec.iter());
        for c in caches {
            c.dw_pre.data.iter().for_each(|&v| feed(v > 0.0));
            c.pw_pre.data.iter().for_each(|&v| feed(v > 0.0));
        }
        self.restored_pre.iter().for_each(|&v| feed((0.0..=1.0).contains(&v)));
        hsh
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Network {
    pub fn init(arch: &NetworkArch, seed: u64) -> Result<Self> {
        Self::init_with(arch, seed, InitOptions::default())
    }

    /// Weights uniform in `+-sqrt(6 / fan_in)` (fan-in = 9 for depthwise
    /// kernels, input channels for 1x1 kernels); biases zero. Values are
    /// rounded to f32.
    pub fn init_with(arch: &NetworkArch, seed: u64, opts: InitOptions) -> Result<Self> {
        arch.validate()?;
        let layout = build_layout(arch);
        let mut params = vec![0.0; layout.total];
        let mut r = rng::rng_from_seed(seed);
        for spec in &layout.params {
            if spec.name.ends_with(".bias") {
                continue;
            }
            if opts.zero_image_head && spec.name.starts_with("image_head") {
                continue;
            }
            let bound = Self::init_bound(spec);
            for v in &mut params[spec.range()] {
                *v = rng::uniform(&mut r, -bound, bound) as f32 as f64;
            }
        }
        Ok(Network {
            arch: arch.clone(),
            layout,
            params,
        })
    }

    pub fn init_bound(spec: &ParamSpec) -> f64 {
        (6.0 / spec.fan_in() as f64).sqrt()
    }

    pub fn from_params(arch: &NetworkArch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = build_layout(arch);
        if params.len() != layout.total {
            return Err(Error::Dimension(format!(
                "architecture needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite parameter".into()));
        }
        Ok(Network {
            arch: arch.clone(),
            layout,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.layout.params
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &self.params[p.range()])
    }

    pub fn zero_image_head(&mut self) {
        let w = &self.layout.params[self.layout.image_head];
        let b = &self.layout.params[self.layout.image_head + 1];
        let (rw, rb) = (w.range(), b.range());
        self.params[rw].iter_mut().for_each(|v| *v = 0.0);
        self.params[rb].iter_mut().for_each(|v| *v = 0.0);
    }

    fn slice(&self, idx: usize) -> &[f64] {
        &self.params[self.layout.params[idx].range()]
    }

    fn block_forward(&self, b: &BlockSpec, x: Tensor) -> (Tensor, BlockCache) {
        let dw_pre = tensor::depthwise_forward(&x, self.slice(b.first), self.slice(b.first + 1), b.stride);
        let dw_act = tensor::relu(&dw_pre);
        let pw_pre = tensor::pointwise_forward(&dw_act, self.slice(b.first + 2), self.slice(b.first + 3), b.cout);
        let out = tensor::relu(&pw_pre);
        (
            out,
            BlockCache {
                input: x,
                dw_pre,
                dw_act,
                pw_pre,
            },
        )
    }

    fn check_dims(&self, w: usize, h: usize) -> Result<()> {
        let m = self.arch.stride_multiple();
        if !w.is_multiple_of(m) || !h.is_multiple_of(m) || w == 0 || h == 0 {
            return Err(Error::Dimension(format!(
                "{w}x{h} input is not a multiple of {m} in both directions"
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_raw(&self, noisy: &[f64], w: usize, h: usize) -> Result<Trace> {
        self.check_dims(w, h)?;
        let x = Tensor::from_vec(1, h, w, noisy.to_vec());
        let (mut t, stem) = self.block_forward(&self.layout.stem, x);
        let mut skips = vec![t.clone()];
        let mut enc = Vec::with_capacity(self.layout.enc.len());
        for b in &self.layout.enc {
            let (o, c) = self.block_forward(b, t);
            enc.push(c);
            skips.push(o.clone());
            t = o;
        }
        let (o, b0) = self.block_forward(&self.layout.bottleneck[0], t);
        let (mut t, b1) = self.block_forward(&self.layout.bottleneck[1], o);
        let mut dec = Vec::with_capacity(self.layout.dec.len());
        for b in &self.layout.dec {
            let skip = skips.pop().expect("one skip per decoder");
            let cat = tensor::concat(&tensor::upsample2(&t), &skip);
            let (o, c) = self.block_forward(b, cat);
            dec.push(c);
            t = o;
        }
        let ih = self.layout.image_head;
        let mh = self.layout.mask_head;
        let residual = tensor::pointwise_forward(&t, self.slice(ih), self.slice(ih + 1), 1);
        let logits = tensor::pointwise_forward(&t, self.slice(mh), self.slice(mh + 1), 1);
        let restored_pre: Vec<f64> = noisy.iter().zip(&residual.data).map(|(a, r)| a + r).collect();
        if restored_pre.iter().chain(&logits.data).any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite activations in forward pass".into()));
        }
        let restored = restored_pre.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Trace {
            noisy: noisy.to_vec(),
            stem,
            enc,
            bottleneck: [b0, b1],
            dec,
            last: t,
            restored_pre,
            restored,
            mask_logits: logits.data,
            h,
            w,
        })
    }

    pub fn forward_one(&self, noisy: &GrayImage) -> Result<ForwardOutput> {
        let tr = self.forward_raw(noisy.data(), noisy.width(), noisy.height())?;
        let mask = tr.mask_logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardOutput {
            restored: GrayImage::new(tr.w, tr.h, tr.restored)?,
            mask_logits: tr.mask_logits,
            mask,
        })
    }

    /// Restored image, mask logits and mask probabilities per input.
    pub fn forward(&self, batch: &[GrayImage]) -> Result<Vec<ForwardOutput>> {
        batch.iter().map(|x| self.forward_one(x)).collect()
    }

    fn block_backward(&self, b: &BlockSpec, c: &BlockCache, dout: &Tensor, grads: &mut [f64]) -> Tensor {
        let p = &self.layout.params;
        let d_pw_pre = tensor::relu_backward(&c.pw_pre, dout);
        let mut dpw_w = vec![0.0; p[b.first + 2].len()];
        let mut dpw_b = vec![0.0; p[b.first + 3].len()];
        let d_dw_act =
            tensor::pointwise_backward(&c.dw_act, self.slice(b.first + 2), &d_pw_pre, &mut dpw_w, &mut dpw_b);
        let d_dw_pre = tensor::relu_backward(&c.dw_pre, &d_dw_act);
        let mut ddw_w = vec![0.0; p[b.first].len()];
        let mut ddw_b = vec![0.0; p[b.first + 1].len()];
        let dx = tensor::depthwise_backward(
            &c.input,
            self.slice(b.first),
            &d_dw_pre,
            b.stride,
            &mut ddw_w,
            &mut ddw_b,
        );
        for (k, g) in [
            (b.first, ddw_w),
            (b.first + 1, ddw_b),
            (b.first + 2, dpw_w),
            (b.first + 3, dpw_b),
        ] {
            for (dst, v) in grads[p[k].range()].iter_mut().zip(g) {
                *dst += v;
            }
        }
        dx
    }

    /// Accumulate parameter gradients given dL/d(restored) and dL/d(mask logits).
    pub(crate) fn backward(&self, tr: &Trace, d_restored: &[f64], d_logits: &[f64], grads: &mut [f64]) {
        let p = &self.layout.params;
        let (h, w) = (tr.h, tr.w);
        let d_res: Vec<f64> = tr
            .restored_pre
            .iter()
            .zip(d_restored)
            .map(|(&v, &g)| if (0.0..=1.0).contains(&v) { g } else { 0.0 })
            .collect();
        let d_res = Tensor::from_vec(1, h, w, d_res);
        let d_log = Tensor::from_vec(1, h, w, d_logits.to_vec());
        let mut dt = Tensor::zeros(tr.last.c, h, w);
        for (head, d) in [(self.layout.image_head, &d_res), (self.layout.mask_head, &d_log)] {
            let mut gw = vec![0.0; p[head].len()];
            let mut gb = vec![0.0; 1];
            let dx = tensor::pointwise_backward(&tr.last, self.slice(head), d, &mut gw, &mut gb);
            for (a, b) in dt.data.iter_mut().zip(dx.data) {
                *a += b;
            }
            for (dst, v) in grads[p[head].range()].iter_mut().zip(gw) {
                *dst += v;
            }
            grads[p[head + 1].offset] += gb[0];
        }
        // decoders, shallowest first
        let depth = self.layout.dec.len();
        let mut d_skips: Vec<Option<Tensor>> = vec![None; depth];
        for (k, (b, c)) in self.layout.dec.iter().zip(&tr.dec).enumerate().rev() {
            let d_cat = self.block_backward(b, c, &dt, grads);
            let up_c = d_cat.c - self.arch.channels[depth - 1 - k];
            let (d_up, d_skip) = tensor::split(&d_cat, up_c);
            d_skips[depth - 1 - k] = Some(d_skip);
            dt = tensor::upsample2_backward(&d_up);
        }
        let dt = self.block_backward(&self.layout.bottleneck[1], &tr.bottleneck[1], &dt, grads);
        let mut dt = self.block_backward(&self.layout.bottleneck[0], &tr.bottleneck[0], &dt, grads);
        for level in (1..depth).rev() {
            let skip = d_skips[level].take().expect("skip gradient");
            for (a, b) in dt.data.iter_mut().zip(skip.data) {
                *a += b;
            }
            dt = self.block_backward(&self.layout.enc[level - 1], &tr.enc[level - 1], &dt, grads);
        }
        let skip = d_skips[0].take().expect("skip gradient");
        for (a, b) in dt.data.iter_mut().zip(skip.data) {
            *a += b;
        }
        let _ = self.block_backward(&self.layout.stem, &tr.stem, &dt, grads);
        let _ = &tr.noisy;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_count(cin: usize, cout: usize) -> usize {
        10 * cin + cout * cin + cout
    }

    #[test]
    fn default_parameter_count_matches_closed_form() {
        let net = Network::init(&NetworkArch::default(), 0).unwrap();
        let expected = block_count(1, 8)
            + block_count(8, 16)
            + block_count(16, 32)
            + 2 * block_count(32, 32)
            + block_count(64, 32)
            + block_count(48, 16)
            + block_count(24, 8)
            + 2 * (8 + 1);
        assert_eq!(expected, 8148);
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = NetworkArch::default();
        let a = Network::init(&arch, 42).unwrap();
        let b = Network::init(&arch, 42).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, Network::init(&arch, 43).unwrap().params);
        for spec in a.param_specs() {
            let bound = Network::init_bound(spec);
            for &v in &a.params[spec.range()] {
                // f32 rounding may move a draw by half an ulp
                assert!(v.abs() <= bound * (1.0 + 1e-7));
                if spec.name.ends_with(".bias") {
                    assert_eq!(v, 0.0);
                }
                assert_eq!(v, v as f32 as f64);
            }
        }
    }

    #[test]
    fn layout_order_is_canonical() {
        let net = Network::init(&NetworkArch::default(), 0).unwrap();
        let names: Vec<&str> = net.param_specs().iter().map(|p| p.name.as_str()).collect();
        let blocks = [
            "stem",
            "enc1",
            "enc2",
            "bottleneck.down",
            "bottleneck.conv",
            "dec2",
            "dec1",
            "dec0",
        ];
        let mut expected = Vec::new();
        for b in blocks {
            for t in ["dw.weight", "dw.bias", "pw.weight", "pw.bias"] {
                expected.push(format!("{b}.{t}"));
            }
        }
        for h in ["image_head", "mask_head"] {
            expected.push(format!("{h}.weight"));
            expected.push(format!("{h}.bias"));
        }
        assert_eq!(names, expected);
        let mut off = 0;
        for p in net.param_specs() {
            assert_eq!(p.offset, off);
            off += p.len();
        }
    }

    #[test]
    fn bad_arch_is_rejected() {
        let arch = NetworkArch {
            depth: 2,
            channels: vec![4, 8, 16],
            ..NetworkArch::default()
        };
        assert!(Network::init(&arch, 0).is_err());
        let arch = NetworkArch {
            channels: vec![4, 0, 16],
            ..NetworkArch::default()
        };
        assert!(Network::init(&arch, 0).is_err());
    }

    #[test]
    fn zeroed_image_head_is_identity_and_shapes_hold() {
        let net = Network::init_with(&NetworkArch::default(), 3, InitOptions { zero_image_head: true }).unwrap();
        let mut r = rng::rng_from_seed(5);
        for (w, h) in [(64, 64), (128, 64)] {
            let img = GrayImage::from_fn(w, h, |_, _| rng::unit(&mut r)).unwrap();
            let out = net.forward_one(&img).unwrap();
            assert_eq!(out.restored, img);
            assert_eq!(out.mask.len(), w * h);
            assert!(out.mask.iter().all(|&m| m > 0.0 && m < 1.0));
        }
        let odd = GrayImage::filled(60, 64, 0.5).unwrap();
        assert!(matches!(net.forward_one(&odd), Err(Error::Dimension(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::init(&NetworkArch::default(), 9).unwrap();
        let img = GrayImage::from_fn(32, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        let a = net.forward(std::slice::from_ref(&img)).unwrap();
        let b = net.forward(&[img]).unwrap();
        assert_eq!(a, b);
    }
}
