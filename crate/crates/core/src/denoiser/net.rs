//! Small residual convolutional denoiser with hand-written reverse-mode
//! gradients.
//!
//! Layout: the input stack `[x_t, y]` passes through `depth` 3x3 "same"
//! convolutions (`2 -> hidden -> ... -> hidden -> 1`) with SiLU between them.
//! A sinusoidal embedding of the noise level, projected to `hidden` channels,
//! is added to the first pre-activation. The network output is
//! `x_t + correction`.
//!
//! Flat parameter order: for each conv layer its weights
//! `[out][in][ky][kx]` then biases, followed by the embedding projection
//! `[hidden][embed_dim]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Noise levels are embedded through `u = ln(noise_level + EMBED_OFFSET)`.
const EMBED_OFFSET: f64 = 1e-3;
const EMBED_BASE_FREQ: f64 = 0.25;
const EMBED_FREQ_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub hidden: usize,
    pub depth: usize,
    pub kernel: usize,
    pub embed_dim: usize,
}

impl Default for LayerSpec {
    fn default() -> Self {
        LayerSpec {
            in_channels: 2,
            hidden: 16,
            depth: 4,
            kernel: 3,
            embed_dim: 16,
        }
    }
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 2 {
            return Err(Error::invalid("denoiser takes exactly two input channels (x_t, y)"));
        }
        if self.depth < 2 || self.hidden == 0 {
            return Err(Error::invalid("denoiser needs depth >= 2 and hidden >= 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::invalid("embedding dimension must be even and positive"));
        }
        Ok(())
    }

    fn conv_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let cin = if l == 0 { self.in_channels } else { self.hidden };
                let cout = if l + 1 == self.depth { 1 } else { self.hidden };
                (cin, cout)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let convs: usize = self
            .conv_channels()
            .iter()
            .map(|&(cin, cout)| cout * cin * k2 + cout)
            .sum();
        convs + self.hidden * self.embed_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            kernel,
            weight: vec![0.0; out_ch * in_ch * kernel * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    pub fn w(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((co * self.in_ch + ci) * self.kernel + ky) * self.kernel + kx]
    }
}

/// Bias-free linear map, `weight` is `[out_dim][in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    spec: LayerSpec,
    pub convs: Vec<ConvLayer>,
    pub embed: Linear,
}

impl DenoiserParams {
    pub fn zeros(spec: LayerSpec) -> Result<Self> {
        spec.validate()?;
        let convs = spec
            .conv_channels()
            .into_iter()
            .map(|(cin, cout)| ConvLayer::zeros(cin, cout, spec.kernel))
            .collect();
        Ok(DenoiserParams {
            spec,
            convs,
            embed: Linear {
                in_dim: spec.embed_dim,
                out_dim: spec.hidden,
                weight: vec![0.0; spec.hidden * spec.embed_dim],
            },
        })
    }

    /// He-normal hidden layers, a zeroed output layer (so the network starts
    /// as the identity on `x_t`) and a `N(0, 1/embed_dim)` projection.
    pub fn init(spec: LayerSpec, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let last = p.convs.len() - 1;
        for layer in &mut p.convs[..last] {
            let fan_in = (layer.in_ch * layer.kernel * layer.kernel) as f64;
            let scale = (2.0 / fan_in).sqrt();
            for w in &mut layer.weight {
                *w = scale * rng.standard_normal();
            }
        }
        let scale = (1.0 / spec.embed_dim as f64).sqrt();
        for w in &mut p.embed.weight {
            *w = scale * rng.standard_normal();
        }
        Ok(p)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.param_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len());
        for layer in &self.convs {
            flat.extend_from_slice(&layer.weight);
            flat.extend_from_slice(&layer.bias);
        }
        flat.extend_from_slice(&self.embed.weight);
        flat
    }

    pub fn unflatten(spec: LayerSpec, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        p.assign(flat)?;
        Ok(p)
    }

    /// Overwrite every parameter from a flat vector in [`flatten`](Self::flatten) order.
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "in parameter vector".into(),
            });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in &mut self.convs {
            take(&mut layer.weight);
            take(&mut layer.bias);
        }
        take(&mut self.embed.weight);
        Ok(())
    }
}

/// Sinusoidal features of `ln(noise_level + 1e-3)` at frequencies
/// `0.25 * 1.5^k`, interleaved as `[sin, cos, sin, cos, ...]`.
pub fn noise_embedding(noise_level: f64, dim: usize) -> Vec<f64> {
    let u = (noise_level + EMBED_OFFSET).ln();
    let mut out = Vec::with_capacity(dim);
    let mut freq = EMBED_BASE_FREQ;
    for _ in 0..dim / 2 {
        out.push((freq * u).sin());
        out.push((freq * u).cos());
        freq *= EMBED_FREQ_GROWTH;
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Layout of the zero-padded feature planes.
///
/// Each channel is stored as an `(h + 2p) x (w + 2p)` plane with a zero
/// border (plus `2p` slack values). Convolution outputs use a strided layout
/// of `h` rows of `w + 2p` values whose last `2p` columns carry junk and are
/// never read back, so every kernel tap becomes one contiguous pass.
#[derive(Debug, Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    pad: usize,
    stride: usize,
    plane: usize,
    span: usize,
}

impl Geom {
    fn new(h: usize, w: usize, kernel: usize) -> Self {
        let pad = kernel / 2;
        let stride = w + 2 * pad;
        Geom {
            h,
            w,
            pad,
            stride,
            plane: (h + 2 * pad) * stride + 2 * pad,
            span: h * stride,
        }
    }

    #[inline]
    fn padded(&self, r: usize, c: usize) -> usize {
        (r + self.pad) * self.stride + c + self.pad
    }

    #[inline]
    fn strided(&self, r: usize, c: usize) -> usize {
        r * self.stride + c
    }

    /// Valid part of row `r` of a strided map.
    #[inline]
    fn row<'a>(&self, z: &'a [f64], r: usize) -> &'a [f64] {
        let s = self.strided(r, 0);
        &z[s..s + self.w]
    }

    fn tap(&self, ky: usize, kx: usize) -> usize {
        ky * self.stride + kx
    }

    /// Offset of the first interior value within a padded plane.
    fn margin(&self) -> usize {
        self.pad * self.stride + self.pad
    }

    /// Strided map between zero margins, as consumed by the gradient gather.
    fn margin_plane(&self) -> usize {
        self.span + 2 * self.margin()
    }
}

const TILE: usize = 16;

/// Multi-tap accumulation shared by the forward and input-gradient passes:
/// `out[o][q] = bias[o] + sum_j wts[o][j] * src[offs[j] + q]` for
/// `q < span`, with `j` summed in increasing order.
#[inline(always)]
fn tap_conv_body(wts: &[f64], bias: &[f64], offs: &[usize], src: &[f64], span: usize, out: &mut [f64]) {
    let nj = offs.len();
    let n_out = bias.len();
    let full = span / TILE * TILE;
    let mut o = 0;
    while o < n_out {
        let pair = o + 1 < n_out;
        let w0 = &wts[o * nj..(o + 1) * nj];
        let w1 = if pair { &wts[(o + 1) * nj..(o + 2) * nj] } else { w0 };
        let b1 = if pair { bias[o + 1] } else { 0.0 };
        for q in (0..full).step_by(TILE) {
            let mut a0 = [bias[o]; TILE];
            let mut a1 = [b1; TILE];
            for j in 0..nj {
                let x: &[f64; TILE] = src[offs[j] + q..offs[j] + q + TILE].try_into().unwrap();
                let (c0, c1) = (w0[j], w1[j]);
                for i in 0..TILE {
                    a0[i] += c0 * x[i];
                    a1[i] += c1 * x[i];
                }
            }
            out[o * span + q..o * span + q + TILE].copy_from_slice(&a0);
            if pair {
                out[(o + 1) * span + q..(o + 1) * span + q + TILE].copy_from_slice(&a1);
            }
        }
        for q in full..span {
            let (mut a0, mut a1) = (bias[o], b1);
            for j in 0..nj {
                let x = src[offs[j] + q];
                a0 += w0[j] * x;
                a1 += w1[j] * x;
            }
            out[o * span + q] = a0;
            if pair {
                out[(o + 1) * span + q] = a1;
            }
        }
        o += if pair { 2 } else { 1 };
    }
}

/// `[a0.b0, a0.b1, a1.b0, a1.b1]`, each summed with four interleaved
/// partial sums in a fixed order. A missing operand stands in for its
/// sibling; callers discard those entries.
#[inline(always)]
fn dot4_body(a0: &[f64], a1: Option<&[f64]>, b0: &[f64], b1: Option<&[f64]>) -> [f64; 4] {
    let a1 = a1.unwrap_or(a0);
    let b1 = b1.unwrap_or(b0);
    let n = a0.len().min(a1.len()).min(b0.len()).min(b1.len());
    let full = n / 4 * 4;
    let mut acc = [[0.0f64; 4]; 4];
    for q in (0..full).step_by(4) {
        let x0: &[f64; 4] = a0[q..q + 4].try_into().unwrap();
        let x1: &[f64; 4] = a1[q..q + 4].try_into().unwrap();
        let y0: &[f64; 4] = b0[q..q + 4].try_into().unwrap();
        let y1: &[f64; 4] = b1[q..q + 4].try_into().unwrap();
        for i in 0..4 {
            acc[0][i] += x0[i] * y0[i];
            acc[1][i] += x0[i] * y1[i];
            acc[2][i] += x1[i] * y0[i];
            acc[3][i] += x1[i] * y1[i];
        }
    }
    let pairs = [(a0, b0), (a0, b1), (a1, b0), (a1, b1)];
    let mut out = [0.0; 4];
    for (k, (x, y)) in pairs.iter().enumerate() {
        let tail: f64 = x[full..n].iter().zip(&y[full..n]).map(|(p, q)| p * q).sum();
        let a = acc[k];
        out[k] = (a[0] + a[1]) + (a[2] + a[3]) + tail;
    }
    out
}

// The AVX variants compile the same element-wise operations with wider
// registers. No FMA is enabled, so results are bit-identical to the
// baseline build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn tap_conv_avx(wts: &[f64], bias: &[f64], offs: &[usize], src: &[f64], span: usize, out: &mut [f64]) {
    tap_conv_body(wts, bias, offs, src, span, out)
}

fn tap_conv(wts: &[f64], bias: &[f64], offs: &[usize], src: &[f64], span: usize, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX, checked just above.
        return unsafe { tap_conv_avx(wts, bias, offs, src, span, out) };
    }
    tap_conv_body(wts, bias, offs, src, span, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn dot4_avx(a0: &[f64], a1: Option<&[f64]>, b0: &[f64], b1: Option<&[f64]>) -> [f64; 4] {
    dot4_body(a0, a1, b0, b1)
}

fn dot4(a0: &[f64], a1: Option<&[f64]>, b0: &[f64], b1: Option<&[f64]>) -> [f64; 4] {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX, checked just above.
        return unsafe { dot4_avx(a0, a1, b0, b1) };
    }
    dot4_body(a0, a1, b0, b1)
}

/// `input`: `in_ch` padded planes. `out`: `out_ch` strided maps.
fn conv_forward(layer: &ConvLayer, input: &[f64], g: &Geom, out: &mut [f64]) {
    let k = layer.kernel;
    let offs: Vec<usize> = (0..layer.in_ch)
        .flat_map(|ci| (0..k * k).map(move |t| ci * g.plane + g.tap(t / k, t % k)))
        .collect();
    tap_conv(&layer.weight, &layer.bias, &offs, input, g.span, out);
}

/// Accumulates weight and bias gradients and, if requested, returns the
/// gradient with respect to the layer input in strided layout.
///
/// `grad_out` holds `out_ch` planes of `g.margin_plane()` values: the
/// strided gradient (zero in the junk columns) between zero margins.
fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    g: &Geom,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let k = layer.kernel;
    let kk = k * k;
    let m = g.margin();
    let mp = g.margin_plane();
    let nj = layer.in_ch * kk;
    let offs: Vec<usize> = (0..layer.in_ch)
        .flat_map(|ci| (0..kk).map(move |t| ci * g.plane + g.tap(t / k, t % k)))
        .collect();
    let rows: Vec<&[f64]> = (0..layer.out_ch)
        .map(|co| &grad_out[co * mp + m..co * mp + m + g.span])
        .collect();
    for (co, go) in rows.iter().enumerate() {
        grad_b[co] += go.iter().sum::<f64>();
    }
    let cols: Vec<&[f64]> = offs.iter().map(|&o| &input[o..o + g.span]).collect();
    let mut block = |co: usize, j: usize| {
        let r1 = rows.get(co + 1).copied();
        let c1 = cols.get(j + 1).copied();
        let d = dot4(rows[co], r1, cols[j], c1);
        grad_w[co * nj + j] += d[0];
        if c1.is_some() {
            grad_w[co * nj + j + 1] += d[1];
        }
        if r1.is_some() {
            grad_w[(co + 1) * nj + j] += d[2];
            if c1.is_some() {
                grad_w[(co + 1) * nj + j + 1] += d[3];
            }
        }
    };
    for co in (0..layer.out_ch).step_by(2) {
        for j in (0..nj).step_by(2) {
            block(co, j);
        }
    }
    if !want_input_grad {
        return None;
    }
    // Transposed convolution as a gather: input channels become outputs and
    // taps are mirrored through the margin.
    let mut wt = vec![0.0; layer.in_ch * layer.out_ch * kk];
    for co in 0..layer.out_ch {
        for ci in 0..layer.in_ch {
            for t in 0..kk {
                wt[(ci * layer.out_ch + co) * kk + t] = layer.weight[(co * layer.in_ch + ci) * kk + t];
            }
        }
    }
    let offs: Vec<usize> = (0..layer.out_ch)
        .flat_map(|co| (0..kk).map(move |t| co * mp + 2 * m - g.tap(t / k, t % k)))
        .collect();
    let mut gin = vec![0.0; layer.in_ch * g.span];
    tap_conv(&wt, &vec![0.0; layer.in_ch], &offs, grad_out, g.span, &mut gin);
    Some(gin)
}

/// Intermediate values kept for the backward pass.
struct Trace {
    geom: Geom,
    emb: Vec<f64>,
    /// Padded input planes of each conv layer.
    inputs: Vec<Vec<f64>>,
    /// Strided pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Row-major `h x w` output of the last layer.
    correction: Vec<f64>,
}

fn run_forward(params: &DenoiserParams, x_t: &Image, y: &Image, noise_level: f64) -> Result<Trace> {
    x_t.ensure_same_shape(y)?;
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::invalid(format!("noise level must be finite and >= 0, got {noise_level}")));
    }
    let (h, w) = x_t.shape();
    let spec = params.spec;
    let g = Geom::new(h, w, spec.kernel);
    let emb = noise_embedding(noise_level, spec.embed_dim);
    let cond: Vec<f64> = (0..spec.hidden)
        .map(|c| {
            params.embed.weight[c * spec.embed_dim..(c + 1) * spec.embed_dim]
                .iter()
                .zip(&emb)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();

    let mut input = vec![0.0; 2 * g.plane];
    for (ch, img) in [x_t, y].into_iter().enumerate() {
        let plane = &mut input[ch * g.plane..(ch + 1) * g.plane];
        for r in 0..h {
            let dst = g.padded(r, 0);
            plane[dst..dst + w].copy_from_slice(&img.data()[r * w..(r + 1) * w]);
        }
    }

    let depth = params.convs.len();
    let mut inputs = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth - 1);
    let mut correction = Vec::new();
    for (l, layer) in params.convs.iter().enumerate() {
        let mut z = vec![0.0; layer.out_ch * g.span];
        conv_forward(layer, &input, &g, &mut z);
        if l == 0 {
            for (chunk, b) in z.chunks_exact_mut(g.span).zip(&cond) {
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        inputs.push(input);
        if l + 1 == depth {
            correction = (0..h).flat_map(|r| g.row(&z, r).iter().copied()).collect();
            if correction.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            input = Vec::new();
        } else {
            let mut act = vec![0.0; layer.out_ch * g.plane];
            for (zc, ac) in z.chunks_exact(g.span).zip(act.chunks_exact_mut(g.plane)) {
                for r in 0..h {
                    let dst = g.padded(r, 0);
                    for (a, &v) in ac[dst..dst + w].iter_mut().zip(g.row(zc, r)) {
                        *a = silu(v);
                    }
                }
            }
            if act.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            pre.push(z);
            input = act;
        }
    }
    Ok(Trace {
        geom: g,
        emb,
        inputs,
        pre,
        correction,
    })
}

/// Network output `x_t + correction(x_t, y, noise_level)`.
pub fn forward(params: &DenoiserParams, x_t: &Image, y: &Image, noise_level: f64) -> Result<Image> {
    let trace = run_forward(params, x_t, y, noise_level)?;
    let data = x_t
        .data()
        .iter()
        .zip(&trace.correction)
        .map(|(a, b)| a + b)
        .collect();
    Ok(Image::new(trace.geom.h, trace.geom.w, data)?.with_spacing(x_t.spacing))
}

/// Backpropagates `d loss / d output` into a flat gradient vector.
fn backward(params: &DenoiserParams, trace: &Trace, grad_output: &[f64]) -> Vec<f64> {
    let g = trace.geom;
    let (h, w) = (g.h, g.w);
    let mut grads: Vec<ConvLayer> = params
        .convs
        .iter()
        .map(|l| ConvLayer::zeros(l.in_ch, l.out_ch, l.kernel))
        .collect();
    let mut embed_grad = vec![0.0; params.embed.weight.len()];

    let (m, mp) = (g.margin(), g.margin_plane());
    let mut go = vec![0.0; mp];
    for r in 0..h {
        let s = m + g.strided(r, 0);
        go[s..s + w].copy_from_slice(&grad_output[r * w..(r + 1) * w]);
    }
    let depth = params.convs.len();
    for l in (0..depth).rev() {
        let layer = &params.convs[l];
        let gl = &mut grads[l];
        let gin = conv_backward(layer, &trace.inputs[l], &g, &go, &mut gl.weight, &mut gl.bias, l > 0);
        if let Some(gin) = gin {
            let mut next = vec![0.0; layer.in_ch * mp];
            for ((nc, gc), zc) in next
                .chunks_exact_mut(mp)
                .zip(gin.chunks_exact(g.span))
                .zip(trace.pre[l - 1].chunks_exact(g.span))
            {
                for r in 0..h {
                    let s = g.strided(r, 0);
                    for c in s..s + w {
                        nc[m + c] = gc[c] * silu_grad(zc[c]);
                    }
                }
            }
            go = next;
        } else {
            let ed = params.spec.embed_dim;
            for (c, chunk) in go.chunks_exact(mp).enumerate() {
                let s: f64 = chunk.iter().sum();
                for (j, e) in trace.emb.iter().enumerate() {
                    embed_grad[c * ed + j] += s * e;
                }
            }
        }
    }
    let mut flat = Vec::with_capacity(params.len());
    for gl in grads {
        flat.extend(gl.weight);
        flat.extend(gl.bias);
    }
    flat.extend(embed_grad);
    flat
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    L2,
    L1L2,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossMode::L2),
            "l1l2" => Ok(LossMode::L1L2),
            other => Err(Error::invalid(format!("unknown loss mode {other:?} (expected l2 or l1l2)"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::L2 => "l2",
            LossMode::L1L2 => "l1l2",
        })
    }
}

/// One training example: clean target, corrupted image, diffused state and
/// its noise level.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub x: &'a Image,
    pub y: &'a Image,
    pub x_t: &'a Image,
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    /// Objective that `grad` differentiates.
    pub loss: f64,
    /// Batch mean of the squared l2 error.
    pub l2: f64,
    /// Batch mean of the l1 error.
    pub l1: f64,
    pub grad: Vec<f64>,
}

struct ItemResult {
    l2: f64,
    l1: f64,
    grad: Vec<f64>,
}

fn item_loss_and_grad(params: &DenoiserParams, item: &BatchItem, mode: LossMode, scale: f64) -> Result<ItemResult> {
    item.x.ensure_same_shape(item.x_t)?;
    let trace = run_forward(params, item.x_t, item.y, item.noise_level)?;
    let mut l2 = 0.0;
    let mut l1 = 0.0;
    let mut grad_out = Vec::with_capacity(trace.correction.len());
    for ((&xt, &corr), &x) in item.x_t.data().iter().zip(&trace.correction).zip(item.x.data()) {
        let e = xt + corr - x;
        l2 += e * e;
        l1 += e.abs();
        let sign = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        let d = match mode {
            LossMode::L2 => 2.0 * e,
            LossMode::L1L2 => 2.0 * e + sign,
        };
        grad_out.push(scale * d);
    }
    Ok(ItemResult {
        l2,
        l1,
        grad: backward(params, &trace, &grad_out),
    })
}

/// Batch-mean loss `||f - x||_2^2 (+ ||f - x||_1)` and its gradient.
///
/// Items are evaluated in parallel on the current rayon pool; per-item
/// gradients are summed in batch order, so the result does not depend on
/// the number of threads. The l1 subgradient at zero is taken as 0.
pub fn loss_and_grad(params: &DenoiserParams, batch: &[BatchItem], mode: LossMode) -> Result<LossAndGrad> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let items: Vec<ItemResult> = batch
        .par_iter()
        .map(|item| item_loss_and_grad(params, item, mode, scale))
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; params.len()];
    let (mut l2, mut l1) = (0.0, 0.0);
    for item in &items {
        l2 += item.l2;
        l1 += item.l1;
        for (g, v) in grad.iter_mut().zip(&item.grad) {
            *g += v;
        }
    }
    l2 *= scale;
    l1 *= scale;
    let loss = match mode {
        LossMode::L2 => l2,
        LossMode::L1L2 => l2 + l1,
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: format!("loss {loss}"),
        });
    }
    Ok(LossAndGrad { loss, l2, l1, grad })
}

/// The built-in network as a [`Denoiser`].
#[derive(Debug, Clone)]
pub struct ConvDenoiser {
    pub params: DenoiserParams,
}

impl ConvDenoiser {
    pub fn new(params: DenoiserParams) -> Self {
        ConvDenoiser { params }
    }
}

impl Denoiser for ConvDenoiser {
    fn denoise(&self, x_t: &Image, y: &Image, noise_level: f64) -> Result<Image> {
        forward(&self.params, x_t, y, noise_level)
    }
}
