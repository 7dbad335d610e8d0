use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::param::{Module, Param};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::exec;

/// Geometry of a 2-D convolution; pairs are (frequency, time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: (usize, usize)) -> Self {
        Self { in_ch, out_ch, kernel, stride: (1, 1), dilation: (1, 1), padding: (0, 0) }
    }

    pub fn stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    /// Padding that keeps a stride-1 axis at its input length.
    pub fn same_padding(kernel: usize, dilation: usize) -> usize {
        (kernel - 1) * dilation / 2
    }

    fn out_dim(input: usize, k: usize, s: usize, d: usize, p: usize) -> Option<usize> {
        let span = d * (k - 1) + 1;
        (input + 2 * p).checked_sub(span).map(|v| v / s + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = Self::out_dim(h, self.kernel.0, self.stride.0, self.dilation.0, self.padding.0);
        let ow = Self::out_dim(w, self.kernel.1, self.stride.1, self.dilation.1, self.padding.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!("input {h}x{w} smaller than the padded kernel extent of {self:?}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let ok = self.in_ch > 0
            && self.out_ch > 0
            && kh > 0
            && kw > 0
            && self.stride.0 > 0
            && self.stride.1 > 0
            && self.dilation.0 > 0
            && self.dilation.1 > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("degenerate convolution {self:?}")))
        }
    }
}

struct Cache {
    input: Tensor4,
    weight: Vec<f64>,
    norms: Vec<f64>,
}

/// Weight-normalised 2-D cross-correlation, `w = g · v / ‖v‖` per output channel.
pub struct Conv2d {
    spec: ConvSpec,
    v: Param,
    g: Param,
    bias: Param,
    cache: Option<Cache>,
}

/// Output columns `j` whose input column `j·s − p + off` lies in `[0, w)`.
fn valid_range(out_w: usize, in_w: usize, s: usize, p: usize, off: usize) -> (usize, usize) {
    // need j·s + off >= p and j·s + off < in_w + p
    let lo = if off >= p { 0 } else { (p - off).div_ceil(s) };
    let hi = if in_w + p > off { (in_w + p - off).div_ceil(s).min(out_w) } else { 0 };
    if hi <= lo {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// Output rows per im2col chunk, keeping the column buffer cache-sized.
fn chunk_rows(fan: usize, oh: usize, ow: usize) -> usize {
    ((1 << 14) / (fan * ow).max(1)).clamp(1, oh.max(1))
}

/// Column matrix `[fan, (i1−i0)·ow]` of item `bi` for output rows `i0..i1`.
fn im2col(s: &ConvSpec, x: &Tensor4, bi: usize, i0: usize, i1: usize, ow: usize, col: &mut Vec<f64>) {
    let [_, c, h, w] = x.shape();
    let (kh, kw) = s.kernel;
    let n = (i1 - i0) * ow;
    col.clear();
    col.resize(c * kh * kw * n, 0.0);
    for ci in 0..c {
        let src = x.plane(bi, ci);
        for p in 0..kh {
            for q in 0..kw {
                let dst = &mut col[((ci * kh + p) * kw + q) * n..][..n];
                let (j0, j1) = valid_range(ow, w, s.stride.1, s.padding.1, q * s.dilation.1);
                if j0 == j1 {
                    continue;
                }
                let off = (q * s.dilation.1) as isize - s.padding.1 as isize;
                for i in i0..i1 {
                    let ii = (i * s.stride.0 + p * s.dilation.0) as isize - s.padding.0 as isize;
                    if ii < 0 || ii as usize >= h {
                        continue;
                    }
                    let row = &src[ii as usize * w..(ii as usize + 1) * w];
                    let drow = &mut dst[(i - i0) * ow..(i - i0 + 1) * ow];
                    if s.stride.1 == 1 {
                        let start = (j0 as isize + off) as usize;
                        drow[j0..j1].copy_from_slice(&row[start..start + j1 - j0]);
                    } else {
                        for j in j0..j1 {
                            drow[j] = row[(j as isize * s.stride.1 as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of [`im2col`] into one item's `[c, h, w]` gradient.
fn col2im(s: &ConvSpec, [c, h, w]: [usize; 3], i0: usize, i1: usize, ow: usize, dcol: &[f64], dx: &mut [f64]) {
    let (kh, kw) = s.kernel;
    let n = (i1 - i0) * ow;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for p in 0..kh {
            for q in 0..kw {
                let src = &dcol[((ci * kh + p) * kw + q) * n..][..n];
                let (j0, j1) = valid_range(ow, w, s.stride.1, s.padding.1, q * s.dilation.1);
                if j0 == j1 {
                    continue;
                }
                let off = (q * s.dilation.1) as isize - s.padding.1 as isize;
                for i in i0..i1 {
                    let ii = (i * s.stride.0 + p * s.dilation.0) as isize - s.padding.0 as isize;
                    if ii < 0 || ii as usize >= h {
                        continue;
                    }
                    let drow = &mut dst[ii as usize * w..(ii as usize + 1) * w];
                    let grow = &src[(i - i0) * ow..(i - i0 + 1) * ow];
                    if s.stride.1 == 1 {
                        let start = (j0 as isize + off) as usize;
                        for (d, g) in drow[start..start + j1 - j0].iter_mut().zip(&grow[j0..j1]) {
                            *d += g;
                        }
                    } else {
                        for j in j0..j1 {
                            drow[(j as isize * s.stride.1 as isize + off) as usize] += grow[j];
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    /// Direction drawn from `N(0, init_std²)`, `g = ‖v‖`, zero bias.
    pub fn new(spec: ConvSpec, init_std: f64, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let (kh, kw) = spec.kernel;
        let n = spec.out_ch * spec.in_ch * kh * kw;
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::domain(e.to_string()))?;
        let v: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        let fan = spec.in_ch * kh * kw;
        let g: Vec<f64> = v.chunks(fan).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        Ok(Self {
            spec,
            v: Param::new(vec![spec.out_ch, spec.in_ch, kh, kw], v)?,
            g: Param::new(vec![spec.out_ch], g)?,
            bias: Param::zeros(vec![spec.out_ch]),
            cache: None,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn v(&self) -> &Param {
        &self.v
    }

    pub fn g(&self) -> &Param {
        &self.g
    }

    pub fn bias(&self) -> &Param {
        &self.bias
    }

    pub fn v_mut(&mut self) -> &mut Param {
        &mut self.v
    }

    pub fn g_mut(&mut self) -> &mut Param {
        &mut self.g
    }

    pub fn bias_mut(&mut self) -> &mut Param {
        &mut self.bias
    }

    fn fan_in(&self) -> usize {
        self.spec.in_ch * self.spec.kernel.0 * self.spec.kernel.1
    }

    /// Effective weight and per-channel direction norms.
    fn weight_and_norms(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let fan = self.fan_in();
        let mut w = Vec::with_capacity(self.v.len());
        let mut norms = Vec::with_capacity(self.spec.out_ch);
        for (o, chunk) in self.v.value.chunks(fan).enumerate() {
            let n = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::Numeric(format!("direction of output channel {o} has zero norm")));
            }
            let scale = self.g.value[o] / n;
            w.extend(chunk.iter().map(|x| x * scale));
            norms.push(n);
        }
        Ok((w, norms))
    }

    pub fn effective_weight(&self) -> Result<Vec<f64>> {
        Ok(self.weight_and_norms()?.0)
    }

    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (weight, norms) = self.weight_and_norms()?;
        let y = self.apply(x, &weight)?;
        self.cache = Some(Cache { input: x.clone(), weight, norms });
        Ok(y)
    }

    /// Forward pass without recording state for backward.
    pub fn forward_detached(&self, x: &Tensor4) -> Result<Tensor4> {
        let weight = self.effective_weight()?;
        self.apply(x, &weight)
    }

    fn apply(&self, x: &Tensor4, weight: &[f64]) -> Result<Tensor4> {
        let s = &self.spec;
        let [b, c, h, w] = x.shape();
        if c != s.in_ch {
            return Err(Error::shape(format!("conv expects {} input channels, got {c}", s.in_ch)));
        }
        let (oh, ow) = s.output_hw(h, w)?;
        let plane = oh * ow;
        let k = self.fan_in();
        let rows = chunk_rows(k, oh, ow);
        let mut out = vec![0.0; b * s.out_ch * plane];
        exec::for_each_chunk_mut(&mut out, s.out_ch * plane, |bi, dst| {
            for o in 0..s.out_ch {
                dst[o * plane..(o + 1) * plane].fill(self.bias.value[o]);
            }
            let mut col = Vec::new();
            for i0 in (0..oh).step_by(rows) {
                let i1 = (i0 + rows).min(oh);
                let n = (i1 - i0) * ow;
                im2col(s, x, bi, i0, i1, ow, &mut col);
                // out[o, chunk] += W[o, :] · col
                unsafe {
                    matrixmultiply::dgemm(
                        s.out_ch,
                        k,
                        n,
                        1.0,
                        weight.as_ptr(),
                        k as isize,
                        1,
                        col.as_ptr(),
                        n as isize,
                        1,
                        1.0,
                        dst[i0 * ow..].as_mut_ptr(),
                        plane as isize,
                        1,
                    );
                }
            }
        });
        let y = Tensor4::new([b, s.out_ch, oh, ow], out)?;
        y.check_finite("conv2d")?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, grad_out: &Tensor4) -> Result<Tensor4> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::State("conv2d backward called before forward".into()))?;
        let s = self.spec;
        let x = &cache.input;
        let [b, c, h, w] = x.shape();
        let (oh, ow) = s.output_hw(h, w)?;
        grad_out.expect_shape([b, s.out_ch, oh, ow])?;
        let fan = self.fan_in();

        for o in 0..s.out_ch {
            self.bias.grad[o] += (0..b).map(|bi| grad_out.plane(bi, o).iter().sum::<f64>()).sum::<f64>();
        }

        // One task per item; ∂L/∂w partials are summed in item order.
        let plane = oh * ow;
        let rows = chunk_rows(fan, oh, ow);
        let weight = &cache.weight;
        let per_item = exec::map_range(b, |bi| {
            let go = &grad_out.data()[bi * s.out_ch * plane..(bi + 1) * s.out_ch * plane];
            let mut dx = vec![0.0; c * h * w];
            let mut dw = vec![0.0; s.out_ch * fan];
            let (mut col, mut dcol) = (Vec::new(), Vec::new());
            for i0 in (0..oh).step_by(rows) {
                let i1 = (i0 + rows).min(oh);
                let n = (i1 - i0) * ow;
                im2col(&s, x, bi, i0, i1, ow, &mut col);
                dcol.clear();
                dcol.resize(fan * n, 0.0);
                unsafe {
                    // dW[o, k] += gO[o, chunk] · col[k, chunk]ᵀ
                    matrixmultiply::dgemm(
                        s.out_ch,
                        n,
                        fan,
                        1.0,
                        go[i0 * ow..].as_ptr(),
                        plane as isize,
                        1,
                        col.as_ptr(),
                        1,
                        n as isize,
                        1.0,
                        dw.as_mut_ptr(),
                        fan as isize,
                        1,
                    );
                    // dcol = Wᵀ · gO[:, chunk]
                    matrixmultiply::dgemm(
                        fan,
                        s.out_ch,
                        n,
                        1.0,
                        weight.as_ptr(),
                        1,
                        fan as isize,
                        go[i0 * ow..].as_ptr(),
                        plane as isize,
                        1,
                        0.0,
                        dcol.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
                col2im(&s, [c, h, w], i0, i1, ow, &dcol, &mut dx);
            }
            (dx, dw)
        });
        let mut dx = Vec::with_capacity(b * c * h * w);
        let mut dw = vec![0.0; s.out_ch * fan];
        for (dxi, dwi) in per_item {
            dx.extend(dxi);
            dw.iter_mut().zip(dwi).for_each(|(a, v)| *a += v);
        }

        // Through the weight normalisation.
        for o in 0..s.out_ch {
            let n = cache.norms[o];
            let g = self.g.value[o];
            let v = &self.v.value[o * fan..(o + 1) * fan];
            let dwo = &dw[o * fan..(o + 1) * fan];
            let dot: f64 = dwo.iter().zip(v).map(|(a, b)| a * b).sum();
            self.g.grad[o] += dot / n;
            for (k, (dv, vv)) in self.v.grad[o * fan..(o + 1) * fan].iter_mut().zip(v).enumerate() {
                *dv += g / n * dwo[k] - g * dot / (n * n * n) * vv;
            }
        }
        Tensor4::new([b, c, h, w], dx)
    }

    /// Drop the recorded input.
    pub fn clear(&mut self) {
        self.cache = None;
    }
}

impl Module for Conv2d {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("v", &self.v);
        f("g", &self.g);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("v", &mut self.v);
        f("g", &mut self.g);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::new(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct six-loop reference with explicit bounds checks.
    fn naive(spec: &ConvSpec, w: &[f64], bias: &[f64], x: &Tensor4) -> Tensor4 {
        let [b, c, h, wd] = x.shape();
        let (oh, ow) = spec.output_hw(h, wd).unwrap();
        let (kh, kw) = spec.kernel;
        let mut y = Tensor4::zeros([b, spec.out_ch, oh, ow]);
        for bi in 0..b {
            for o in 0..spec.out_ch {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[o];
                        for ci in 0..c {
                            for p in 0..kh {
                                for q in 0..kw {
                                    let ii = (i * spec.stride.0 + p * spec.dilation.0) as i64 - spec.padding.0 as i64;
                                    let jj = (j * spec.stride.1 + q * spec.dilation.1) as i64 - spec.padding.1 as i64;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < wd {
                                        acc += w[((o * c + ci) * kh + p) * kw + q]
                                            * x.get(bi, ci, ii as usize, jj as usize);
                                    }
                                }
                            }
                        }
                        let off = y.offset(bi, o, i, j);
                        y.data_mut()[off] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = [
            ConvSpec::new(2, 3, (3, 8)).padding(1, 3).dilation(1, 2).stride(2, 1),
            ConvSpec::new(2, 4, (1, 16)).stride(1, 8).padding(0, 8),
            ConvSpec::new(3, 2, (3, 3)).padding(1, 1),
            ConvSpec::new(2, 2, (3, 8)).padding(1, 14).dilation(1, 4).stride(2, 1),
        ];
        for (n, spec) in specs.iter().enumerate() {
            for wd in [40, 9] {
                let mut conv = Conv2d::new(*spec, 0.5, &mut rng).unwrap();
                conv.bias_mut().value.iter_mut().for_each(|b| *b = 0.3);
                let x = random_tensor([2, spec.in_ch, 7, wd], n as u64);
                let y = conv.forward(&x).unwrap();
                let r = naive(spec, &conv.effective_weight().unwrap(), &conv.bias().value, &x);
                assert_eq!(y.shape(), r.shape());
                assert!(y.data().iter().zip(r.data()).all(|(a, b)| (a - b).abs() < 1e-12));
                // a narrow input leaves most taps outside the signal
                conv.backward(&y).unwrap();
            }
        }
    }

    #[test]
    fn sbp_shape_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(ConvSpec::new(2, 32, (3, 9)).padding(1, 4), 0.01, &mut rng).unwrap();
        let y = conv.forward(&Tensor4::zeros([1, 2, 24, 10])).unwrap();
        assert_eq!(y.shape(), [1, 32, 24, 10]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(ConvSpec::new(2, 2, (1, 1)), 0.01, &mut rng).unwrap();
        conv.v_mut().value = vec![1.0, 0.0, 0.0, 1.0];
        conv.g_mut().value = vec![1.0, 1.0];
        let x = random_tensor([1, 2, 3, 5], 3);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn weight_norm_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv2d::new(ConvSpec::new(3, 4, (3, 3)), 0.2, &mut rng).unwrap();
        // g = ‖v‖ at init, so w = v.
        let w = conv.effective_weight().unwrap();
        assert!(w.iter().zip(&conv.v().value).all(|(a, b)| (a - b).abs() < 1e-12));
        conv.g_mut().value = vec![0.5, 1.0, 2.0, 3.0];
        let before = conv.effective_weight().unwrap();
        conv.v_mut().value.iter_mut().for_each(|v| *v *= 10.0);
        let after = conv.effective_weight().unwrap();
        assert!(before.iter().zip(&after).all(|(a, b)| (a - b).abs() < 1e-12));
        for (o, chunk) in after.chunks(27).enumerate() {
            let n = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - conv.g().value[o]).abs() < 1e-9);
        }
        conv.v_mut().value[..27].iter_mut().for_each(|v| *v = 0.0);
        assert!(matches!(conv.effective_weight(), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_requires_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new(ConvSpec::new(1, 1, (1, 1)), 0.1, &mut rng).unwrap();
        assert!(matches!(conv.backward(&Tensor4::zeros([1, 1, 1, 1])), Err(Error::State(_))));
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut conv = Conv2d::new(ConvSpec::new(2, 1, (1, 1)), 0.1, &mut rng).unwrap();
        assert!(matches!(conv.forward(&Tensor4::zeros([1, 3, 2, 2])), Err(Error::Shape(_))));
    }

    #[test]
    fn pointwise_backward_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut conv = Conv2d::new(ConvSpec::new(3, 2, (1, 1)), 0.5, &mut rng).unwrap();
        let x = random_tensor([1, 3, 2, 4], 8);
        conv.forward(&x).unwrap();
        let go = random_tensor([1, 2, 2, 4], 9);
        let gi = conv.backward(&go).unwrap();
        let w = conv.effective_weight().unwrap();
        for ci in 0..3 {
            for k in 0..8 {
                let expect: f64 = (0..2).map(|o| w[o * 3 + ci] * go.plane(0, o)[k]).sum();
                assert!((gi.plane(0, ci)[k] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut conv = Conv2d::new(ConvSpec::new(2, 2, (3, 3)).padding(1, 1), 0.5, &mut rng).unwrap();
        let x = random_tensor([1, 2, 4, 4], 11);
        conv.forward(&x).unwrap();
        let gi = conv.backward(&Tensor4::zeros([1, 2, 4, 4])).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        conv.visit_params(&mut |_, p| assert!(p.grad.iter().all(|&g| g == 0.0)));
    }
}
